"""Cluster formation, new/missing detection, and optimal cluster matching.

Matching one map against another proceeds per polarity:

1. group coronal holes into clusters by transitive set-distance proximity,
2. gate cross-map cluster pairs with a Mahalanobis distance over
   (|log area ratio|, set distance); clusters with no admissible partner
   are declared new (model side) or missing (reference side),
3. merge clusters on the larger side, closest pair first, until both sides
   hold equally many clusters,
4. solve the minimum-cost perfect matching exactly, with pair costs equal
   to the cluster set distance (zero for overlapping clusters).

Costs are converted to integer micro-arcs (1e-6 of a unit-radius arc)
before the assignment so optimality checks against brute force are exact.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import GridSpec, SpherePoint, pixels_area, pixels_centroid, set_distance
from .maps import SegmentationMask, extract_holes

# 99th percentile of the chi-square(2) distribution is 9.21034;
# in distance units (square root) that is 3.034854.
CHI2_2_99_DISTANCE = 3.034854

MICROARC = 1e6


@dataclass(frozen=True, eq=False)
class Cluster:
    """A group of same-polarity coronal holes treated as one object."""

    holes: tuple
    pixels: np.ndarray
    polarity: int
    image_area: int
    physical_area: float
    centroid: SpherePoint

    @classmethod
    def from_holes(cls, holes, grid: GridSpec) -> "Cluster":
        if not holes:
            raise ValueError("a cluster needs at least one hole")
        polarity = holes[0].polarity
        if any(h.polarity != polarity for h in holes):
            raise ValueError("clusters cannot mix polarities")
        pixels = np.concatenate([h.pixels for h in holes], axis=0)
        order = np.lexsort((pixels[:, 1], pixels[:, 0]))
        pixels = pixels[order]
        return cls(
            holes=tuple(holes),
            pixels=pixels,
            polarity=polarity,
            image_area=int(pixels.shape[0]),
            physical_area=pixels_area(pixels, grid),
            centroid=pixels_centroid(pixels, grid),
        )

    def sort_key(self):
        return (int(self.pixels[0, 0]), int(self.pixels[0, 1]))


def merge_clusters(a: Cluster, b: Cluster, grid: GridSpec) -> Cluster:
    if a.polarity != b.polarity:
        raise ValueError("cannot merge clusters of opposite polarity")
    return Cluster.from_holes(list(a.holes) + list(b.holes), grid)


@dataclass(frozen=True)
class MahalanobisModel:
    """Gaussian gate over (|log area ratio|, set distance) pair features."""

    mean: np.ndarray = field(default_factory=lambda: np.zeros(2))
    covariance: np.ndarray = field(
        default_factory=lambda: np.diag([0.5**2, 0.05**2])
    )
    threshold: float = CHI2_2_99_DISTANCE

    def __post_init__(self):
        cov = np.asarray(self.covariance, dtype=float)
        if cov.shape != (2, 2) or not np.allclose(cov, cov.T):
            raise ValueError("covariance must be symmetric 2x2")
        eigvals = np.linalg.eigvalsh(cov)
        if eigvals.min() <= 0:
            raise ValueError("covariance must be positive definite")
        if not (self.threshold > 0):
            raise ValueError("threshold must be positive")
        object.__setattr__(self, "mean", np.asarray(self.mean, dtype=float))
        object.__setattr__(self, "covariance", cov)
        object.__setattr__(self, "_inv", np.linalg.inv(cov))

    def distance(self, v: np.ndarray) -> float:
        d = np.asarray(v, dtype=float) - self.mean
        return float(np.sqrt(d @ self._inv @ d))

    def is_candidate(self, v: np.ndarray) -> bool:
        return self.distance(v) <= self.threshold

    @classmethod
    def fit(
        cls, features: np.ndarray, threshold: float = CHI2_2_99_DISTANCE
    ) -> "MahalanobisModel":
        """Estimate mean and covariance from matched-pair feature rows."""
        features = np.asarray(features, dtype=float).reshape(-1, 2)
        if features.shape[0] < 3:
            raise ValueError("need at least 3 pairs to fit the gate")
        mean = features.mean(axis=0)
        cov = np.cov(features, rowvar=False)
        if np.linalg.eigvalsh(cov).min() <= 0:
            raise ValueError("singular covariance: pair features are degenerate")
        return cls(mean=mean, covariance=cov, threshold=threshold)


def pair_features(ref: Cluster, model: Cluster, grid: GridSpec) -> np.ndarray:
    """(|log area ratio|, set distance) for one cross-map cluster pair."""
    ratio = abs(float(np.log(ref.physical_area / model.physical_area)))
    return np.array([ratio, set_distance(ref.pixels, model.pixels, grid)])


# ---------------------------------------------------------------------------
# Clustering
# ---------------------------------------------------------------------------


def cluster_by_distance(holes: list, threshold_arc: float, grid: GridSpec) -> list[Cluster]:
    """Transitive closure of the "closer than threshold" relation.

    Holes joined by a chain of set distances strictly below the threshold
    form one cluster.  The result is independent of input order; clusters
    are sorted by their smallest pixel.
    """
    if threshold_arc < 0:
        raise ValueError("threshold must be >= 0")
    if not holes:
        return []
    if any(h.polarity != holes[0].polarity for h in holes):
        raise ValueError("cluster_by_distance expects a single-polarity hole list")
    holes = sorted(holes, key=lambda h: (int(h.pixels[0, 0]), int(h.pixels[0, 1])))
    n = len(holes)
    parent = list(range(n))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for i in range(n):
        for j in range(i + 1, n):
            if find(i) == find(j):
                continue
            if set_distance(holes[i].pixels, holes[j].pixels, grid) < threshold_arc:
                parent[find(j)] = find(i)
    groups: dict[int, list] = {}
    for i in range(n):
        groups.setdefault(find(i), []).append(holes[i])
    clusters = [Cluster.from_holes(g, grid) for g in groups.values()]
    clusters.sort(key=Cluster.sort_key)
    return clusters


def detect_new_missing(
    ref_clusters: list[Cluster],
    model_clusters: list[Cluster],
    mm: MahalanobisModel,
    grid: GridSpec,
) -> tuple[list[Cluster], list[Cluster], list[Cluster], list[Cluster]]:
    """Split clusters into matchable and new/missing via the Mahalanobis gate.

    Returns (matchable_ref, matchable_model, new, missing): a cluster with
    no admissible partner on the other map is "new" when it exists only in
    the model map and "missing" when it exists only in the reference map.
    """
    ref_ok = [False] * len(ref_clusters)
    model_ok = [False] * len(model_clusters)
    for i, rc in enumerate(ref_clusters):
        for j, mc in enumerate(model_clusters):
            if rc.polarity != mc.polarity:
                raise ValueError("detect_new_missing expects single-polarity input")
            if mm.is_candidate(pair_features(rc, mc, grid)):
                ref_ok[i] = True
                model_ok[j] = True
    matchable_ref = [c for c, ok in zip(ref_clusters, ref_ok) if ok]
    matchable_model = [c for c, ok in zip(model_clusters, model_ok) if ok]
    missing = [c for c, ok in zip(ref_clusters, ref_ok) if not ok]
    new = [c for c, ok in zip(model_clusters, model_ok) if not ok]
    return matchable_ref, matchable_model, new, missing


def recluster_equal(
    ref_clusters: list[Cluster], model_clusters: list[Cluster], grid: GridSpec
) -> tuple[list[Cluster], list[Cluster]]:
    """Merge closest pairs on the larger side until the counts match.

    Tie-breaking among equal-distance pairs prefers the smaller combined
    spherical area, then the lower pair indices, which makes the greedy
    merge deterministic.
    """
    if not ref_clusters or not model_clusters:
        raise ValueError("recluster_equal requires non-empty cluster lists")

    def reduce(side: list[Cluster], target: int) -> list[Cluster]:
        side = list(side)
        while len(side) > target:
            best = None
            for i in range(len(side)):
                for j in range(i + 1, len(side)):
                    d = set_distance(side[i].pixels, side[j].pixels, grid)
                    key = (d, side[i].physical_area + side[j].physical_area, i, j)
                    if best is None or key < best[0]:
                        best = (key, i, j)
            _, i, j = best
            merged = merge_clusters(side[i], side[j], grid)
            side = [c for k, c in enumerate(side) if k not in (i, j)] + [merged]
            side.sort(key=Cluster.sort_key)
        return side

    n = min(len(ref_clusters), len(model_clusters))
    return reduce(ref_clusters, n), reduce(model_clusters, n)


# ---------------------------------------------------------------------------
# Assignment
# ---------------------------------------------------------------------------


def solve_assignment(cost: np.ndarray) -> tuple[list[int], int]:
    """Exact minimum-cost perfect matching on a square matrix.

    Shortest-augmenting-path implementation with dual potentials (the
    classic O(n^3) Hungarian variant).  Returns (column of each row, total
    cost).  Exact for integer costs.
    """
    cost = np.asarray(cost)
    n = cost.shape[0]
    if cost.shape != (n, n) or n < 1:
        raise ValueError("cost matrix must be square and non-empty")
    INF = float("inf")
    u = [0.0] * (n + 1)
    v = [0.0] * (n + 1)
    p = [0] * (n + 1)  # p[j]: row matched to column j (1-based)
    way = [0] * (n + 1)
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        minv = [INF] * (n + 1)
        used = [False] * (n + 1)
        while True:
            used[j0] = True
            i0 = p[j0]
            delta = INF
            j1 = -1
            for j in range(1, n + 1):
                if used[j]:
                    continue
                cur = cost[i0 - 1, j - 1] - u[i0] - v[j]
                if cur < minv[j]:
                    minv[j] = cur
                    way[j] = j0
                if minv[j] < delta:
                    delta = minv[j]
                    j1 = j
            for j in range(n + 1):
                if used[j]:
                    u[p[j]] += delta
                    v[j] -= delta
                else:
                    minv[j] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1
    col_of_row = [0] * n
    for j in range(1, n + 1):
        col_of_row[p[j] - 1] = j - 1
    total = int(sum(cost[i, col_of_row[i]] for i in range(n)))
    return col_of_row, total


def match_assign(
    ref_clusters: list[Cluster], model_clusters: list[Cluster], grid: GridSpec
) -> tuple[list[tuple[int, int, int]], int]:
    """Optimal pairing of equally many clusters by set-distance cost.

    Costs are integer micro-arcs.  Returns the pair list (ref index, model
    index, cost) sorted by ref index, and the optimal total cost.
    """
    n = len(ref_clusters)
    if n == 0 or len(model_clusters) != n:
        raise ValueError("match_assign requires equal non-zero cluster counts")
    cost = np.zeros((n, n), dtype=np.int64)
    for i, rc in enumerate(ref_clusters):
        for j, mc in enumerate(model_clusters):
            d = set_distance(rc.pixels, mc.pixels, grid)
            cost[i, j] = int(round(d * MICROARC))
    col_of_row, total = solve_assignment(cost)
    pairs = [(i, col_of_row[i], int(cost[i, col_of_row[i]])) for i in range(n)]
    return pairs, total


# ---------------------------------------------------------------------------
# Full per-model matching
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class MatchedPair:
    ref: Cluster
    model: Cluster
    cost_microarc: int
    overlap_pixels: int
    overlap_area: float


@dataclass(frozen=True, eq=False)
class MatchResult:
    """Matching outcome for one model map against the reference map."""

    matched: tuple
    new_clusters: tuple
    missing_clusters: tuple

    @property
    def ref_clusters(self) -> list[Cluster]:
        return [pair.ref for pair in self.matched] + list(self.missing_clusters)

    @property
    def model_clusters(self) -> list[Cluster]:
        return [pair.model for pair in self.matched] + list(self.new_clusters)


@dataclass(frozen=True)
class MatchingConfig:
    threshold_arc: float = 0.1
    mahalanobis: MahalanobisModel = field(default_factory=MahalanobisModel)

    def __post_init__(self):
        if self.threshold_arc < 0:
            raise ValueError("clustering threshold must be >= 0")


def _overlap(a: Cluster, b: Cluster, grid: GridSpec) -> tuple[int, float]:
    field_a = np.zeros(grid.shape, dtype=bool)
    field_a[a.pixels[:, 0], a.pixels[:, 1]] = True
    inter = field_a[b.pixels[:, 0], b.pixels[:, 1]]
    count = int(inter.sum())
    if count == 0:
        return 0, 0.0
    common = b.pixels[inter]
    return count, pixels_area(common, grid)


def match_one_model(
    ref_mask: SegmentationMask, model_mask: SegmentationMask, cfg: MatchingConfig
) -> MatchResult:
    """Cluster, gate, re-cluster, and assign one model map; merge polarities."""
    if ref_mask.grid != model_mask.grid:
        raise ValueError("reference and model masks must share a grid")
    grid = ref_mask.grid
    ref_holes = extract_holes(ref_mask)
    model_holes = extract_holes(model_mask)
    matched: list[MatchedPair] = []
    new: list[Cluster] = []
    missing: list[Cluster] = []
    for polarity in (1, -1):
        ref_clusters = cluster_by_distance(
            [h for h in ref_holes if h.polarity == polarity], cfg.threshold_arc, grid
        )
        model_clusters = cluster_by_distance(
            [h for h in model_holes if h.polarity == polarity], cfg.threshold_arc, grid
        )
        m_ref, m_model, p_new, p_missing = detect_new_missing(
            ref_clusters, model_clusters, cfg.mahalanobis, grid
        )
        new.extend(p_new)
        missing.extend(p_missing)
        if not m_ref or not m_model:
            continue
        ref_eq, model_eq = recluster_equal(m_ref, m_model, grid)
        pairs, _ = match_assign(ref_eq, model_eq, grid)
        for i, j, cost in pairs:
            count, area = _overlap(ref_eq[i], model_eq[j], grid)
            matched.append(
                MatchedPair(
                    ref=ref_eq[i],
                    model=model_eq[j],
                    cost_microarc=cost,
                    overlap_pixels=count,
                    overlap_area=area,
                )
            )
    return MatchResult(
        matched=tuple(matched), new_clusters=tuple(new), missing_clusters=tuple(missing)
    )


def run_matching(
    ref_mask: SegmentationMask,
    model_masks: list[SegmentationMask],
    cfg: MatchingConfig | None = None,
) -> list[MatchResult]:
    """Match every (pre-processed) model mask against the reference mask."""
    cfg = cfg or MatchingConfig()
    return [match_one_model(ref_mask, m, cfg) for m in model_masks]
