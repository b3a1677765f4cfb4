"""Benchmarks: ArrayBench, Linked-List, KMeans, Labyrinth and the multi-DPU harness."""

from .arraybench import ArrayBench, ArrayBenchConfig, arraybench_txn
from .common import RunResult, Workload, run_workload, tasklet_rng
from .kmeans import KMeans, KMeansConfig, kmeans_assign_and_update, kmeans_reference
from .labyrinth import Labyrinth, LabyrinthConfig, NoPathExists, bfs_path, labyrinth_route, load_instance
from .linkedlist import LinkedList, LinkedListConfig, list_op, mram_accesses_per_load
from .multidpu import multi_dpu_kmeans, multi_dpu_labyrinth, sequential_merge_oracle

BENCHMARKS = {
    "arraybench": ArrayBench,
    "linkedlist": LinkedList,
    "kmeans": KMeans,
    "labyrinth": Labyrinth,
}

DEFAULT_WORKLOAD = {"arraybench": "A", "linkedlist": "LC", "kmeans": "LC", "labyrinth": "S"}


def make_workload(bench: str, tag: str | None = None, seed: int = 0, **overrides) -> Workload:
    try:
        cls = BENCHMARKS[bench]
    except KeyError:
        raise ValueError(f"unknown benchmark {bench!r}") from None
    return cls(tag or DEFAULT_WORKLOAD[bench], seed=seed, **overrides)


__all__ = [
    "ArrayBench", "ArrayBenchConfig", "arraybench_txn",
    "LinkedList", "LinkedListConfig", "list_op", "mram_accesses_per_load",
    "KMeans", "KMeansConfig", "kmeans_assign_and_update", "kmeans_reference",
    "Labyrinth", "LabyrinthConfig", "NoPathExists", "bfs_path", "labyrinth_route", "load_instance",
    "multi_dpu_kmeans", "multi_dpu_labyrinth", "sequential_merge_oracle",
    "RunResult", "Workload", "run_workload", "tasklet_rng",
    "BENCHMARKS", "DEFAULT_WORKLOAD", "make_workload",
]
