"""Four DPUs cluster their shards; the host merges accumulators every round."""

from pimstm import StmConfig
from pimstm.bench import multi_dpu_kmeans, sequential_merge_oracle
from pimstm.bench.kmeans import KMeansConfig

cfg = KMeansConfig(k=15, points=1000)
res = multi_dpu_kmeans(4, cfg, StmConfig(variant="norec"), seed=11, tasklets=4)
ref, _ = sequential_merge_oracle(cfg, 4, seed=11)
print("points counted:", res.total_count, "aborts:", res.stats.aborted)
print("matches host oracle:", bool((res.centroids == ref).all()))
print(res.centroids[:3])
