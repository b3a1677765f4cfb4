"""Batch experiment runner.

Runs benchmark x workload x variant x tasklets cells, repeats each cell and
reports throughput, abort rate, phase breakdown and memory traffic per
committed transaction as CSV or JSON.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import statistics
import sys
import warnings
from dataclasses import asdict, dataclass, field
from time import perf_counter_ns

from .bench import DEFAULT_WORKLOAD, make_workload, multi_dpu_kmeans, multi_dpu_labyrinth, run_workload
from .bench.labyrinth import Labyrinth
from .core import ALL_VARIANTS, STAT_PHASES, ConfigInvalid, RetryLimitExceeded, Stats, StmConfig, Variant
from .dpu import MAX_TASKLETS, MRAM, TIER_NAMES, WRAM, TaskletError, tier_from_name
from .oracle import HistoryLog, check_serializable

BENCHES = ("arraybench", "linkedlist", "kmeans", "labyrinth")
WORKLOAD_TAGS = {"arraybench": ("A", "B"), "linkedlist": ("LC", "HC"), "kmeans": ("LC", "HC"), "labyrinth": ("S", "M", "L")}
CSV_KEYS = ("bench", "workload", "variant", "placement", "tasklets")
CSV_FIELDS = (
    "throughput_mean", "throughput_std", "abort_rate",
    "t_start", "t_read", "t_write", "t_validate", "t_commit", "t_wasted", "t_other",
    "mram_per_commit", "wram_per_commit",
)
_PHASE_COLUMNS = dict(zip(("t_start", "t_read", "t_write", "t_validate", "t_commit", "t_wasted", "t_other"), STAT_PHASES))
# serializability is checked when a run is this small
SMALL_SCALE = 30
SMALL_ADDRS = 8
COUNTING_NOTE = (
    "every 32-bit load/store issued for a tasklet is counted by tier; set membership "
    "lookups use an uncounted index, entry reads and writes are counted; phase times are "
    "per-tasklet CPU time; throughput is simulation-relative wall-clock"
)


class OracleViolation(Exception):
    """A run broke a benchmark invariant, read a doomed snapshot or left locks held."""


@dataclass(frozen=True)
class RunSpec:
    bench: str = "arraybench"
    workload: str | None = None
    variants: tuple[Variant, ...] = ALL_VARIANTS
    placement: int = MRAM
    tasklets: tuple[int, ...] = tuple(range(1, 12))
    dpus: int = 1
    runs: int = 10
    seed: int = 0
    output: str = "csv"
    oracle: bool = False
    retry_cap: int = 10**6
    broken: bool = False
    lock_table_entries: int | None = None
    overrides: dict = field(default_factory=dict)
    labyrinth_file: str | None = None

    def __post_init__(self):
        if self.bench not in BENCHES:
            raise ConfigInvalid(f"unknown benchmark {self.bench!r}")
        tag = (self.workload or DEFAULT_WORKLOAD[self.bench]).upper()
        if self.labyrinth_file is None and tag not in WORKLOAD_TAGS[self.bench]:
            raise ConfigInvalid(f"workload {tag!r} is not one of {WORKLOAD_TAGS[self.bench]} for {self.bench}")
        object.__setattr__(self, "workload", tag)
        object.__setattr__(self, "variants", tuple(Variant(v) for v in self.variants))
        object.__setattr__(self, "placement", tier_from_name(self.placement))
        if self.runs < 1:
            raise ConfigInvalid("runs must be at least 1")
        if self.dpus < 1:
            raise ConfigInvalid("dpus must be at least 1")
        if not self.tasklets or any(not 1 <= t <= MAX_TASKLETS for t in self.tasklets):
            raise ConfigInvalid(f"tasklet counts must be in 1..{MAX_TASKLETS}")
        if self.output not in ("csv", "json"):
            raise ConfigInvalid("output must be csv or json")
        if self.bench == "labyrinth" and self.placement == WRAM:
            warnings.warn("labyrinth read/write sets do not fit in WRAM; using MRAM metadata", stacklevel=2)
            object.__setattr__(self, "placement", MRAM)


@dataclass
class Cell:
    bench: str
    workload: str
    variant: str
    placement: str
    tasklets: int
    committed: list = field(default_factory=list)
    aborted: list = field(default_factory=list)
    elapsed_ns: list = field(default_factory=list)
    phase_ns: dict = field(default_factory=lambda: dict.fromkeys(STAT_PHASES, 0))
    mram_accesses: int = 0
    wram_accesses: int = 0
    retries: dict = field(default_factory=dict)
    violations: int = 0
    doomed: int = 0
    residue: int = 0
    serializable: list = field(default_factory=list)
    problems: list = field(default_factory=list)

    def add(self, stats: Stats, violations=(), doomed: int = 0, residue=()) -> None:
        self.committed.append(stats.committed)
        self.aborted.append(stats.aborted)
        self.elapsed_ns.append(stats.elapsed_ns)
        for k, v in stats.phase_ns.items():
            self.phase_ns[k] += v
        if stats.accesses:
            self.mram_accesses += stats.tier_accesses("mram")
            self.wram_accesses += stats.tier_accesses("wram")
        for r, n in stats.retries.items():
            self.retries[r] = self.retries.get(r, 0) + n
        self.violations += len(violations)
        self.problems.extend(violations)
        self.doomed += doomed
        self.residue += len(residue)

    @property
    def throughputs(self) -> list[float]:
        return [c / (ns / 1e9) if ns else 0.0 for c, ns in zip(self.committed, self.elapsed_ns)]

    def row(self) -> dict:
        tps = self.throughputs
        total_commits = sum(self.committed)
        attempts = total_commits + sum(self.aborted)
        phase_total = sum(self.phase_ns.values())
        row = {
            "bench": self.bench,
            "workload": self.workload,
            "variant": self.variant,
            "placement": self.placement,
            "tasklets": self.tasklets,
            "throughput_mean": math.fsum(tps) / len(tps) if tps else 0.0,
            "throughput_std": statistics.stdev(tps) if len(tps) > 1 else 0.0,
            "abort_rate": sum(self.aborted) / attempts if attempts else 0.0,
        }
        for col, phase in _PHASE_COLUMNS.items():
            row[col] = self.phase_ns[phase] / phase_total if phase_total else 0.0
        row["mram_per_commit"] = self.mram_accesses / total_commits if total_commits else 0.0
        row["wram_per_commit"] = self.wram_accesses / total_commits if total_commits else 0.0
        return row

    def as_dict(self) -> dict:
        d = self.row()
        for k in CSV_KEYS:
            d.pop(k)
        d.update(
            runs=[{"committed": c, "aborted": a, "elapsed_ns": ns}
                  for c, a, ns in zip(self.committed, self.aborted, self.elapsed_ns)],
            retries={str(k): v for k, v in sorted(self.retries.items())},
            violations=self.violations,
            doomed_snapshots=self.doomed,
            held_locks=self.residue,
        )
        if self.serializable:
            d["serializable"] = self.serializable
        return d


@dataclass
class RunReport:
    spec: RunSpec | None = None
    cells: list[Cell] = field(default_factory=list)

    @property
    def violations(self) -> int:
        return sum(c.violations + c.doomed + c.residue for c in self.cells)


def _stm_config(spec: RunSpec, variant: Variant, tasklets: int, seed: int) -> StmConfig:
    kw = dict(variant=variant, placement=spec.placement, tasklets=tasklets, seed=seed,
              retry_cap=spec.retry_cap, broken=spec.broken)
    if spec.lock_table_entries:
        kw["lock_table_entries"] = spec.lock_table_entries
    return StmConfig(**kw)


def _workload(spec: RunSpec, seed: int):
    if spec.labyrinth_file:
        return Labyrinth.from_file(spec.labyrinth_file, seed=seed)
    return make_workload(spec.bench, spec.workload, seed=seed, **spec.overrides)


def _run_once(spec: RunSpec, cell: Cell, variant: Variant, tasklets: int, seed: int) -> None:
    cfg = _stm_config(spec, variant, tasklets, seed)
    if spec.dpus > 1 and spec.bench == "kmeans":
        wl = _workload(spec, seed)
        res = multi_dpu_kmeans(spec.dpus, wl.cfg, cfg, seed=seed, tasklets=tasklets)
        cell.add(res.stats, res.violations)
        return
    if spec.dpus > 1 and spec.bench == "labyrinth" and not spec.labyrinth_file:
        res = multi_dpu_labyrinth(spec.dpus, spec.workload, cfg, seed=seed, tasklets=tasklets)
        cell.add(res.stats, [p for r in res.instances for p in r.violations],
                 sum(r.doomed for r in res.instances), [x for r in res.instances for x in r.residue])
        return
    total = Stats(tasklets=tasklets)
    violations, doomed, residue = [], 0, []
    elapsed = 0
    for d in range(spec.dpus):
        log = HistoryLog() if spec.oracle else None
        try:
            r = run_workload(_workload(spec, seed + d), cfg, tasklets=tasklets, oracle=spec.oracle, recorder=log)
        except TaskletError as exc:
            # A body that crashed on an inconsistent snapshot is an opacity failure.
            if not spec.oracle or isinstance(exc.exc, (RetryLimitExceeded, ConfigInvalid)):
                raise
            cell.add(Stats(tasklets=tasklets), [f"tasklet crashed: {exc.exc!r}"])
            return
        total.merge(r.stats)
        if not total.accesses:
            total.accesses = r.stats.accesses
        else:
            _add_accesses(total.accesses, r.stats.accesses)
        elapsed = max(elapsed, r.stats.elapsed_ns)
        violations += r.violations
        doomed += r.doomed
        residue += r.residue
        addrs = {e.addr for e in log.events if e.addr >= 0} if log is not None else set()
        if log is not None and r.stats.committed <= SMALL_SCALE and len(addrs) <= SMALL_ADDRS:
            img = r.initial_image
            initial = {a: int.from_bytes(img[a : a + 4], "little") for a in addrs}
            verdict = check_serializable(log, initial)
            cell.serializable.append(bool(verdict))
            if not verdict:
                violations.append(f"history not serializable: {verdict.reason}")
    total.elapsed_ns = elapsed
    cell.add(total, violations, doomed, residue)


def _add_accesses(into: dict, more: dict) -> None:
    for phase, tiers in more.items():
        for tier, kinds in tiers.items():
            for kind, n in kinds.items():
                into[phase][tier][kind] += n


def run(spec: RunSpec, progress=None) -> RunReport:
    """Execute every cell of ``spec``; raise :class:`OracleViolation` if the oracle is on and a check fails."""
    report = RunReport(spec)
    for variant in spec.variants:
        for t in spec.tasklets:
            cell = Cell(spec.bench, spec.workload, variant.value, TIER_NAMES[spec.placement], t)
            for r in range(spec.runs):
                _run_once(spec, cell, variant, t, spec.seed + r)
            report.cells.append(cell)
            if progress:
                progress(cell)
            if spec.oracle and (cell.violations or cell.doomed or cell.residue):
                detail = "; ".join(cell.problems[:3])
                raise OracleViolation(
                    f"{spec.bench}/{spec.workload} {variant.value} x{t}: {cell.violations} invariant violations, "
                    f"{cell.doomed} doomed snapshots, {cell.residue} held locks" + (f" ({detail})" if detail else "")
                )
    return report


def emit(report: RunReport, fmt: str = "csv") -> bytes:
    if fmt == "csv":
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=CSV_KEYS + CSV_FIELDS, lineterminator="\n")
        w.writeheader()
        for c in report.cells:
            w.writerow(c.row())
        return buf.getvalue().encode()
    if fmt == "json":
        tree: dict = {}
        for c in report.cells:
            node = tree.setdefault(c.bench, {}).setdefault(c.workload, {}).setdefault(c.variant, {})
            node.setdefault(c.placement, {})[str(c.tasklets)] = c.as_dict()
        doc = {"counting_convention": COUNTING_NOTE, "results": tree}
        if report.spec is not None:
            spec = asdict(report.spec)
            spec["variants"] = [v.value for v in report.spec.variants]
            spec["placement"] = TIER_NAMES[report.spec.placement]
            doc["spec"] = spec
        return (json.dumps(doc, indent=2) + "\n").encode()
    raise ValueError(f"unknown format {fmt!r}")


def parse_tasklets(text: str) -> tuple[int, ...]:
    """``"1-11"``, ``"1,4,11"`` or a mix such as ``"1,2,8-11"``."""
    out: list[int] = []
    for part in text.split(","):
        part = part.strip()
        if "-" in part:
            lo, hi = part.split("-", 1)
            out.extend(range(int(lo), int(hi) + 1))
        elif part:
            out.append(int(part))
    return tuple(out)


def parse_variants(text: str) -> tuple[Variant, ...]:
    if text.strip().lower() == "all":
        return ALL_VARIANTS
    return tuple(Variant(v.strip().lower()) for v in text.split(",") if v.strip())


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pimstm", description=__doc__.splitlines()[0])
    p.add_argument("--bench", choices=BENCHES, default="arraybench")
    p.add_argument("--workload", help="A/B, LC/HC or S/M/L (default: first tag of the benchmark)")
    p.add_argument("--stm", default="all", help="variant name, comma list, or 'all'")
    p.add_argument("--placement", choices=("wram", "mram"), default="mram")
    p.add_argument("--tasklets", default="1-11", help="e.g. 1-11 or 1,4,11")
    p.add_argument("--dpus", type=int, default=1)
    p.add_argument("--runs", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.add_argument("--out", help="output file (default: stdout)")
    p.add_argument("--oracle", action="store_true", help="check invariants and doomed snapshots; fail on violations")
    p.add_argument("--retry-cap", type=int, default=10**6)
    p.add_argument("--broken", action="store_true", help="run the deliberately unsafe mutant of each variant")
    p.add_argument("--lock-table", type=int, help="lock-table entries (power of two)")
    p.add_argument("--txns", type=int, help="ArrayBench transactions per tasklet")
    p.add_argument("--ops", type=int, help="Linked-List operations per tasklet")
    p.add_argument("--points", type=int, help="KMeans points (per DPU)")
    p.add_argument("--rounds", type=int, help="KMeans rounds")
    p.add_argument("--labyrinth-file", help="grid+jobs file for the labyrinth benchmark")
    p.add_argument("-q", "--quiet", action="store_true")
    return p


def spec_from_args(args) -> RunSpec:
    overrides = {}
    if args.txns is not None:
        overrides["txns_per_tasklet"] = args.txns
    if args.ops is not None:
        overrides["ops_per_tasklet"] = args.ops
    if args.points is not None:
        overrides["points"] = args.points
    if args.rounds is not None:
        overrides["rounds"] = args.rounds
    return RunSpec(
        bench=args.bench,
        workload=args.workload,
        variants=parse_variants(args.stm),
        placement=args.placement,
        tasklets=parse_tasklets(args.tasklets),
        dpus=args.dpus,
        runs=args.runs,
        seed=args.seed,
        output=args.format,
        oracle=args.oracle,
        retry_cap=args.retry_cap,
        broken=args.broken,
        lock_table_entries=args.lock_table,
        overrides=overrides,
        labyrinth_file=args.labyrinth_file,
    )


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        spec = spec_from_args(args)
    except (ConfigInvalid, ValueError) as exc:
        parser.error(str(exc))

    def progress(cell):
        if not args.quiet:
            print(f"{cell.bench}/{cell.workload} {cell.variant} {cell.placement} x{cell.tasklets}: "
                  f"{sum(cell.committed)} commits, {sum(cell.aborted)} aborts", file=sys.stderr)

    t0 = perf_counter_ns()
    try:
        report = run(spec, progress)
    except OracleViolation as exc:
        print(f"oracle violation: {exc}", file=sys.stderr)
        return 3
    except ConfigInvalid as exc:
        print(f"invalid configuration: {exc}", file=sys.stderr)
        return 2
    data = emit(report, spec.output)
    if args.out:
        with open(args.out, "wb") as fh:
            fh.write(data)
    else:
        sys.stdout.write(data.decode())
    if not args.quiet:
        print(f"done in {(perf_counter_ns() - t0) / 1e9:.1f}s", file=sys.stderr)
    return 0


if __name__ == "__main__":
    sys.exit(main())
