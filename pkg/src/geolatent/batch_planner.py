"""Cluster samples by token count so padding waste stays within budget.

Samples are clustered on the real line with DBSCAN, using the padding
budget as the neighborhood radius; the cluster count falls out of the
data. Because density chaining can stretch a cluster's range past the
budget, an optional post-split (on by default) re-partitions any
oversized cluster so that max - min <= max_pad holds everywhere.

The post-split and the test oracle share one objective: fewest clusters
first, then least padding waste. Plain waste minimization is degenerate
(singletons always reach zero waste), and fewer clusters means fewer,
better-packed batches.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInputError


@dataclass(frozen=True)
class PlannerConfig:
    max_pad: int                      # padding-token budget per cluster
    min_pts: int = 1                  # DBSCAN core threshold; 1 means no noise
    enforce_budget: bool = True
    max_cluster_size: int | None = None

    def __post_init__(self):
        if self.max_pad < 0:
            raise InvalidInputError("max_pad must be non-negative")
        if self.min_pts < 1:
            raise InvalidInputError("min_pts must be positive")
        if self.max_cluster_size is not None and self.max_cluster_size < 1:
            raise InvalidInputError("max_cluster_size must be positive")


@dataclass
class Cluster:
    indices: list
    target_len: int
    waste: int


@dataclass
class BatchPlan:
    clusters: list = field(default_factory=list)
    total_waste: int = 0
    padding_ratio: float = 0.0

    @property
    def n_batches(self) -> int:
        return len(self.clusters)


def dbscan_1d(counts, eps: float, min_pts: int = 1) -> np.ndarray:
    """DBSCAN on scalars with |a - b| <= eps neighborhoods.

    Returns one label per input, -1 for noise (impossible when min_pts=1,
    since every point is then its own core). Deterministic given input
    order: the lowest unvisited index seeds each new cluster.
    """
    counts = np.asarray(counts, dtype=np.float64)
    if counts.size == 0:
        raise InvalidInputError("counts must be non-empty")
    n = counts.size
    labels = np.full(n, -2, dtype=np.int64)  # -2 unvisited, -1 noise
    order = np.argsort(counts, kind="stable")
    sorted_vals = counts[order]

    def neighbors(i):
        lo = np.searchsorted(sorted_vals, counts[i] - eps, side="left")
        hi = np.searchsorted(sorted_vals, counts[i] + eps, side="right")
        return order[lo:hi]

    cluster = 0
    for i in range(n):
        if labels[i] != -2:
            continue
        seed_neighbors = neighbors(i)
        if seed_neighbors.size < min_pts:
            labels[i] = -1
            continue
        labels[i] = cluster
        queue = [j for j in seed_neighbors if j != i]
        pos = 0
        while pos < len(queue):
            j = queue[pos]
            pos += 1
            if labels[j] == -1:
                labels[j] = cluster  # border point adopted by the cluster
                continue
            if labels[j] != -2:
                continue
            labels[j] = cluster
            j_neighbors = neighbors(j)
            if j_neighbors.size >= min_pts:
                queue.extend(int(t) for t in j_neighbors if labels[t] in (-2, -1))
        cluster += 1
    return labels


def _run_waste(sorted_counts: np.ndarray, j: int, i: int, prefix: np.ndarray) -> int:
    """Waste of grouping sorted_counts[j:i] at target sorted_counts[i-1]."""
    return int((i - j) * sorted_counts[i - 1] - (prefix[i] - prefix[j]))


def _best_contiguous_partition(sorted_counts: np.ndarray, max_pad: int):
    """Fewest clusters, then least waste, over contiguous runs of sorted counts.

    Dynamic program, O(n^2). Returns (boundaries, n_clusters, waste) where
    boundaries are the split points of the sorted array.
    """
    n = sorted_counts.size
    prefix = np.concatenate([[0], np.cumsum(sorted_counts)])
    best = [(0, 0, -1)] + [None] * n  # (clusters, waste, prev_split)
    for i in range(1, n + 1):
        cand = None
        for j in range(i - 1, -1, -1):
            if sorted_counts[i - 1] - sorted_counts[j] > max_pad:
                break
            c_prev, w_prev, _ = best[j]
            key = (c_prev + 1, w_prev + _run_waste(sorted_counts, j, i, prefix))
            if cand is None or key < (cand[0], cand[1]):
                cand = (key[0], key[1], j)
        best[i] = cand
    bounds = []
    i = n
    while i > 0:
        j = best[i][2]
        bounds.append((j, i))
        i = j
    bounds.reverse()
    return bounds, best[n][0], best[n][1]


def optimal_partition_oracle(counts, max_pad: int) -> BatchPlan:
    """Reference partition: fewest clusters, then minimal waste (DP on sorted counts).

    For this objective the optimum over all partitions is attained by a
    contiguous partition of the sorted counts, so the O(n^2) program is exact.
    """
    counts = np.asarray(counts, dtype=np.int64)
    if counts.size == 0:
        raise InvalidInputError("counts must be non-empty")
    if counts.size > 1000:
        raise InvalidInputError("oracle is limited to 1000 counts")
    order = np.argsort(counts, kind="stable")
    sorted_counts = counts[order]
    bounds, _, _ = _best_contiguous_partition(sorted_counts, max_pad)
    clusters = []
    for j, i in bounds:
        idx = [int(t) for t in order[j:i]]
        target = int(sorted_counts[i - 1])
        waste = sum(target - int(counts[t]) for t in idx)
        clusters.append(Cluster(indices=idx, target_len=target, waste=waste))
    return _finalize(clusters)


def _finalize(clusters) -> BatchPlan:
    total = sum(c.waste for c in clusters)
    denom = sum(c.target_len * len(c.indices) for c in clusters)
    ratio = total / denom if denom > 0 else 0.0
    return BatchPlan(clusters=clusters, total_waste=total, padding_ratio=ratio)


def plan_batches(counts, config: PlannerConfig) -> BatchPlan:
    """DBSCAN with eps = max_pad, then split any over-budget cluster.

    Oversized clusters (range > max_pad, possible through density chaining)
    are re-partitioned by the same fewest-clusters/least-waste program the
    oracle uses; within-budget clusters are kept whole. Noise points
    (min_pts > 1 only) become singleton clusters.
    """
    counts = np.asarray(counts, dtype=np.int64)
    if counts.size == 0:
        raise InvalidInputError("counts must be non-empty")
    labels = dbscan_1d(counts, eps=float(config.max_pad), min_pts=config.min_pts)
    groups: dict[int, list] = {}
    next_noise = labels.max() + 1 if labels.size else 0
    for i, lab in enumerate(labels):
        if lab == -1:
            groups[next_noise] = [i]
            next_noise += 1
        else:
            groups.setdefault(int(lab), []).append(i)

    clusters = []
    for _, idx in sorted(groups.items()):
        vals = counts[idx]
        if config.enforce_budget and vals.max() - vals.min() > config.max_pad:
            sub_order = np.argsort(vals, kind="stable")
            sorted_vals = vals[sub_order]
            bounds, _, _ = _best_contiguous_partition(sorted_vals, config.max_pad)
            for j, i in bounds:
                members = [idx[int(t)] for t in sub_order[j:i]]
                clusters.append(_make_cluster(members, counts))
        else:
            clusters.append(_make_cluster(idx, counts))

    if config.max_cluster_size is not None:
        limited = []
        for c in clusters:
            members = sorted(c.indices, key=lambda t: (counts[t], t))
            for s in range(0, len(members), config.max_cluster_size):
                limited.append(_make_cluster(members[s:s + config.max_cluster_size], counts))
        clusters = limited
    return _finalize(clusters)


def _make_cluster(indices, counts) -> Cluster:
    indices = [int(i) for i in indices]
    target = max(int(counts[i]) for i in indices)
    waste = sum(target - int(counts[i]) for i in indices)
    return Cluster(indices=indices, target_len=target, waste=waste)


def waste_report(plan: BatchPlan, counts) -> dict:
    """Check a plan against its counts and summarize padding overhead."""
    counts = np.asarray(counts, dtype=np.int64)
    seen = sorted(i for c in plan.clusters for i in c.indices)
    if seen != list(range(counts.size)):
        raise InvalidInputError("plan does not partition the sample indices exactly")
    per_cluster = []
    total = 0
    denom = 0
    for c in plan.clusters:
        member_max = max(int(counts[i]) for i in c.indices)
        if c.target_len < member_max:
            raise InvalidInputError(
                f"cluster target {c.target_len} below member count {member_max}")
        waste = sum(c.target_len - int(counts[i]) for i in c.indices)
        if waste != c.waste:
            raise InvalidInputError("cluster waste inconsistent with counts")
        per_cluster.append({
            "size": len(c.indices),
            "target_len": c.target_len,
            "waste": waste,
        })
        total += waste
        denom += c.target_len * len(c.indices)
    return {
        "n_batches": len(plan.clusters),
        "clusters": per_cluster,
        "total_waste": total,
        "padding_ratio": total / denom if denom > 0 else 0.0,
    }
