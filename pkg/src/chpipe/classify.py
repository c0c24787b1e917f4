"""Per-model match features and the good/bad map decision.

Six summary numbers describe how one model map compared to the reference:
counts and areas of new and missing clusters, the model's area excess over
the overlap within matched pairs, and the total matched overlap area.  A
random forest trained on labeled examples turns the six numbers into a
good/bad forecastability call.

Area conventions: new/missing cluster areas default to image areas (pixel
counts) while the matched-pair excess and overlap are spherical areas;
``spherical_areas=True`` switches everything to spherical.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .forest import TrainedForest
from .geometry import GridSpec
from .matchcluster import MatchResult

FEATURE_NAMES = ("newN", "newA", "missN", "missA", "overA", "sameA")

GOOD, BAD = "good", "bad"


@dataclass(frozen=True)
class MapFeatures:
    new_count: int
    new_area: float
    missing_count: int
    missing_area: float
    over_area: float
    same_area: float

    def as_array(self, include_same_area: bool = True) -> np.ndarray:
        values = [
            float(self.new_count),
            self.new_area,
            float(self.missing_count),
            self.missing_area,
            self.over_area,
        ]
        if include_same_area:
            values.append(self.same_area)
        return np.array(values)


def extract_features(
    m: MatchResult, grid: GridSpec, spherical_areas: bool = False
) -> MapFeatures:
    """Summarize one MatchResult into the six classifier features."""

    def cluster_area(c):
        return c.physical_area if spherical_areas else float(c.image_area)

    new_area = sum(cluster_area(c) for c in m.new_clusters)
    missing_area = sum(cluster_area(c) for c in m.missing_clusters)
    over_area = 0.0
    same_area = 0.0
    for pair in m.matched:
        over_area += max(0.0, pair.model.physical_area - pair.overlap_area)
        same_area += pair.overlap_area
    return MapFeatures(
        new_count=len(m.new_clusters),
        new_area=float(new_area),
        missing_count=len(m.missing_clusters),
        missing_area=float(missing_area),
        over_area=float(over_area),
        same_area=float(same_area),
    )


def classify_map(
    f: MapFeatures, model: TrainedForest, include_same_area: bool = True
) -> tuple[str, float]:
    """Forest vote over the feature vector; ties resolve per model config."""
    label, frac = model.predict(f.as_array(include_same_area))
    return (GOOD if label == 1 else BAD), frac
