"""Initial segmentation stage: candidate holes, features, selection, union.

The boundary-refinement stage needs a starting mask.  This module provides
a simplified two-rule darkness/unipolarity initializer, per-hole appearance
features (intensity and flux histograms plus the pixel count) for the
random-forest hole selector, the selector itself, and the union of the
selected per-method masks.  Externally produced masks enter through the
file formats of :mod:`chpipe.maps`; once loaded they take the same
selection and union path as the built-in initializer.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .forest import TrainedForest
from .maps import CoronalHole, Label, SegmentationMask, SynopticMap, label_components, extract_holes

EUV_BINS = 255
FLUX_BINS = 40
FEATURE_DIM = EUV_BINS + FLUX_BINS + 1


@dataclass(frozen=True)
class HoleFeatureVector:
    """Appearance features of one candidate hole.

    ``euv_hist``: 255 uniform bins spanning the map's observed intensity
    range.  ``flux_hist``: 40 uniform bins spanning [-F, +F] where F is the
    largest absolute observed flux, so unipolarity shows up as one-sided
    mass.  Both are L1-normalized; the pixel count is appended.
    """

    euv_hist: np.ndarray
    flux_hist: np.ndarray
    area: int

    def as_array(self) -> np.ndarray:
        return np.concatenate([self.euv_hist, self.flux_hist, [float(self.area)]])


class SelectionResult(NamedTuple):
    kept: list
    rejected: list  # (hole, vote_fraction) pairs, for diagnostics


def unipolarity(flux_values: np.ndarray) -> float:
    """|mean flux| / mean |flux|; 0 when the field has no net signal."""
    mean_abs = float(np.mean(np.abs(flux_values)))
    if mean_abs == 0.0:
        return 0.0
    return abs(float(np.mean(flux_values))) / mean_abs


def henney_harvey_init(
    euv: SynopticMap,
    mag: SynopticMap,
    dark_quantile: float = 0.25,
    unipolarity_min: float = 0.6,
) -> SegmentationMask:
    """Simplified darkness + unipolarity initializer.

    Pixels strictly darker than the given quantile of the observed EUV
    intensities form candidate components; a component is kept iff its
    unipolarity statistic reaches ``unipolarity_min``, and is labeled by the
    sign of its mean flux.  Components with exactly zero mean flux are
    dropped as non-unipolar.
    """
    if euv.grid != mag.grid:
        raise ValueError("EUV and magnetic maps must share a grid")
    if not np.array_equal(euv.observed, mag.observed):
        raise ValueError("EUV and magnetic maps must share an observation mask")
    if not (0.0 < dark_quantile < 1.0):
        raise ValueError("dark_quantile must lie in (0, 1)")
    observed = euv.observed
    labels = np.full(euv.grid.shape, Label.BACKGROUND, dtype=np.uint8)
    labels[~observed] = Label.NO_OBSERVATION
    if not observed.any():
        return SegmentationMask(grid=euv.grid, labels=labels)
    threshold = np.quantile(euv.values[observed], dark_quantile)
    candidates = observed & (euv.values < threshold)
    comp, n = label_components(candidates)
    for comp_id in range(1, n + 1):
        member = comp == comp_id
        flux = mag.values[member]
        if unipolarity(flux) < unipolarity_min:
            continue
        mean_flux = float(np.mean(flux))
        if mean_flux == 0.0:
            continue
        labels[member] = Label.POSITIVE if mean_flux > 0 else Label.NEGATIVE
    return SegmentationMask(grid=euv.grid, labels=labels)


def hole_features(
    h: CoronalHole, euv: SynopticMap, mag: SynopticMap
) -> HoleFeatureVector:
    """Intensity/flux histogram features of one hole (see class docstring)."""
    rows, cols = h.pixels[:, 0], h.pixels[:, 1]
    if not euv.observed[rows, cols].all():
        raise ValueError("hole pixels must all be observed")
    obs_euv = euv.values[euv.observed]
    lo, hi = float(obs_euv.min()), float(obs_euv.max())
    if hi <= lo:
        hi = lo + 1.0
    euv_hist, _ = np.histogram(euv.values[rows, cols], bins=EUV_BINS, range=(lo, hi))
    flux_limit = float(np.abs(mag.values[mag.observed]).max()) if mag.observed.any() else 0.0
    if flux_limit == 0.0:
        flux_limit = 1.0
    flux_hist, _ = np.histogram(
        mag.values[rows, cols], bins=FLUX_BINS, range=(-flux_limit, flux_limit)
    )
    return HoleFeatureVector(
        euv_hist=euv_hist / euv_hist.sum(),
        flux_hist=flux_hist / flux_hist.sum(),
        area=int(h.image_area),
    )


def select_candidates(
    holes: list, features: list, model: TrainedForest
) -> SelectionResult:
    """Keep holes the forest votes valid; report rejections with vote share."""
    if len(holes) != len(features):
        raise ValueError("need one feature vector per hole")
    kept, rejected = [], []
    for hole, fv in zip(holes, features):
        vec = fv.as_array()
        if vec.size != model.n_features:
            raise ValueError(
                f"feature dimension {vec.size} does not match model ({model.n_features})"
            )
        label, frac = model.predict(vec)
        if label == 1:
            kept.append(hole)
        else:
            rejected.append((hole, frac))
    return SelectionResult(kept=kept, rejected=rejected)


def union_masks(
    masks: list[SegmentationMask], mag: SynopticMap | None = None
) -> SegmentationMask:
    """Pixelwise union of segmentation masks.

    A pixel is a hole iff any input labels it a hole.  When inputs disagree
    on polarity the sign of the magnetic map decides (zero counts as
    positive); a magnetic map is required only if conflicts occur.
    No-observation wins over background, holes win over everything.
    """
    if not masks:
        raise ValueError("union of zero masks")
    grid = masks[0].grid
    for m in masks[1:]:
        if m.grid != grid:
            raise ValueError("all masks must share one grid")
    pos = np.zeros(grid.shape, dtype=bool)
    neg = np.zeros(grid.shape, dtype=bool)
    noobs = np.zeros(grid.shape, dtype=bool)
    for m in masks:
        pos |= m.labels == Label.POSITIVE
        neg |= m.labels == Label.NEGATIVE
        noobs |= m.labels == Label.NO_OBSERVATION
    conflict = pos & neg
    labels = np.full(grid.shape, Label.BACKGROUND, dtype=np.uint8)
    labels[noobs] = Label.NO_OBSERVATION
    labels[pos] = Label.POSITIVE
    labels[neg & ~pos] = Label.NEGATIVE
    if conflict.any():
        if mag is None:
            raise ValueError("polarity conflict in union requires a magnetic map")
        if mag.grid != grid:
            raise ValueError("magnetic map grid does not match masks")
        sign_pos = mag.values >= 0
        labels[conflict & sign_pos] = Label.POSITIVE
        labels[conflict & ~sign_pos] = Label.NEGATIVE
    return SegmentationMask(grid=grid, labels=labels)


def candidate_holes(mask: SegmentationMask) -> list:
    """Connected-component holes of an initializer mask, ready for selection."""
    return extract_holes(mask)
