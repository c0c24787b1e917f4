"""Rule checks encoding the manual clustering and matching protocols.

These functions validate that a clustering or a set of matched pairs obeys
the hand-curation conventions the automated pipeline was trained to mimic.
They are consistency checks used on synthetic ground truth in tests, not a
production matcher.  Each check returns a list of human-readable violation
strings (empty list = rule satisfied).

Rule summary (with the tunable parameters used here):

* polar clustering: all same-polarity holes touching a polar band belong
  to a single cluster per pole;
* nearby clustering: two distinct clusters of one polarity may not lie
  within ``close_arc`` of each other (they should have been merged);
* large-small absorption: a small cluster may not sit close to a much
  larger one (it belongs inside it);
* no large-large merging: two large holes may share a cluster only when
  some pair of their pixels is extremely close;
* match overlap: matched cluster pairs must overlap enough for their
  latitude class (polar/polar 70%, polar/mid 15%, mid/mid 30% or good
  localization).
"""

from __future__ import annotations

from .geometry import GridSpec, row_latitudes, set_distance
from .matchcluster import Cluster, MatchedPair


def _touches_polar_band(cluster: Cluster, grid: GridSpec, polar_lat: float, north: bool) -> bool:
    lats = row_latitudes(grid)[cluster.pixels[:, 0]]
    return bool((lats >= polar_lat).any() if north else (lats <= -polar_lat).any())


def check_polar_clustering(
    clusters: list[Cluster], grid: GridSpec, polar_lat: float = 60.0
) -> list[str]:
    """Holes in or crossing a polar band must form one cluster per pole."""
    violations = []
    for polarity in (1, -1):
        for north in (True, False):
            touching = [
                i
                for i, c in enumerate(clusters)
                if c.polarity == polarity and _touches_polar_band(c, grid, polar_lat, north)
            ]
            if len(touching) > 1:
                pole = "north" if north else "south"
                violations.append(
                    f"{pole} polar band (polarity {polarity:+d}) split across "
                    f"clusters {touching}"
                )
    return violations


def check_nearby_clustering(
    clusters: list[Cluster], grid: GridSpec, close_arc: float = 0.03
) -> list[str]:
    """No two distinct same-polarity clusters may be nearly touching."""
    violations = []
    for i in range(len(clusters)):
        for j in range(i + 1, len(clusters)):
            if clusters[i].polarity != clusters[j].polarity:
                continue
            d = set_distance(clusters[i].pixels, clusters[j].pixels, grid)
            if d < close_arc:
                violations.append(
                    f"clusters {i} and {j} are {d:.4f} arc apart (< {close_arc})"
                )
    return violations


def check_large_small_absorption(
    clusters: list[Cluster],
    grid: GridSpec,
    area_ratio: float = 5.0,
    close_arc: float = 0.06,
) -> list[str]:
    """A small cluster close to a much larger one should be part of it."""
    violations = []
    for i in range(len(clusters)):
        for j in range(len(clusters)):
            if i == j or clusters[i].polarity != clusters[j].polarity:
                continue
            small, large = clusters[i], clusters[j]
            if large.physical_area < area_ratio * small.physical_area:
                continue
            d = set_distance(small.pixels, large.pixels, grid)
            if d < close_arc:
                violations.append(
                    f"small cluster {i} sits {d:.4f} arc from large cluster {j}"
                )
    return violations


def check_no_large_large(
    clusters: list[Cluster],
    grid: GridSpec,
    large_area: float,
    close_arc: float = 0.03,
) -> list[str]:
    """Two large holes may share a cluster only if they are extremely close."""
    violations = []
    for idx, cluster in enumerate(clusters):
        big = [h for h in cluster.holes if h.physical_area >= large_area]
        for i in range(len(big)):
            for j in range(i + 1, len(big)):
                d = set_distance(big[i].pixels, big[j].pixels, grid)
                if d >= close_arc:
                    violations.append(
                        f"cluster {idx} merges two large holes {d:.4f} arc apart"
                    )
    return violations


def _is_polar(cluster: Cluster, grid: GridSpec, polar_lat: float) -> bool:
    return _touches_polar_band(cluster, grid, polar_lat, True) or _touches_polar_band(
        cluster, grid, polar_lat, False
    )


def overlap_fraction(pair: MatchedPair) -> float:
    """Shared pixels relative to the smaller cluster of the pair."""
    smaller = min(pair.ref.image_area, pair.model.image_area)
    return pair.overlap_pixels / smaller if smaller else 0.0


def check_match_overlaps(
    pairs: list[MatchedPair],
    grid: GridSpec,
    polar_lat: float = 60.0,
    polar_polar_min: float = 0.7,
    polar_mid_min: float = 0.15,
    mid_mid_min: float = 0.3,
    localization_arc: float = 0.05,
) -> list[str]:
    """Matched pairs must overlap enough for their latitude class."""
    violations = []
    for k, pair in enumerate(pairs):
        frac = overlap_fraction(pair)
        ref_polar = _is_polar(pair.ref, grid, polar_lat)
        model_polar = _is_polar(pair.model, grid, polar_lat)
        if ref_polar and model_polar:
            if frac < polar_polar_min:
                violations.append(
                    f"pair {k}: polar-polar overlap {frac:.2f} < {polar_polar_min}"
                )
        elif ref_polar or model_polar:
            if frac < polar_mid_min:
                violations.append(
                    f"pair {k}: polar-mid overlap {frac:.2f} < {polar_mid_min}"
                )
        else:
            localized = pair.cost_microarc <= localization_arc * 1e6
            if frac < mid_mid_min and not localized:
                violations.append(
                    f"pair {k}: mid-mid overlap {frac:.2f} < {mid_mid_min} "
                    "and localization is poor"
                )
    return violations
