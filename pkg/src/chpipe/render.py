"""Overlay-map rendering.

Color conventions follow the rest of the tooling: red for positive
polarity, blue for negative, black for missing observations.  Reference
clusters are drawn as solid fills, model clusters as hollow boundary
outlines in lighter shades.  PNG output carries no timestamps, so reruns
are byte-identical.
"""

from __future__ import annotations

import numpy as np
from PIL import Image

from .maps import Label, SegmentationMask, SynopticMap

POS_SOLID = (220, 40, 40)
NEG_SOLID = (50, 80, 230)
POS_LIGHT = (255, 150, 150)
NEG_LIGHT = (140, 180, 255)
RESULT_OUTLINE = (250, 220, 40)


def boundary(indicator: np.ndarray) -> np.ndarray:
    """4-connected outer boundary pixels of a boolean field, wrap-aware."""
    indicator = np.asarray(indicator, dtype=bool)
    north = np.zeros_like(indicator)
    north[1:, :] = indicator[:-1, :]
    south = np.zeros_like(indicator)
    south[:-1, :] = indicator[1:, :]
    east = np.roll(indicator, -1, axis=1)
    west = np.roll(indicator, 1, axis=1)
    interior = indicator & north & south & east & west
    return indicator & ~interior


def euv_to_rgb(euv: SynopticMap) -> np.ndarray:
    """Grayscale rendering of an EUV map; unobserved pixels are black."""
    vals = euv.values
    observed = euv.observed
    if observed.any():
        lo = float(vals[observed].min())
        hi = float(vals[observed].max())
        span = hi - lo if hi > lo else 1.0
        gray = np.clip((vals - lo) / span * 255.0, 0, 255).astype(np.uint8)
    else:
        gray = np.zeros(vals.shape, dtype=np.uint8)
    gray[~observed] = 0
    return np.stack([gray, gray, gray], axis=2)


def save_rgb(rgb: np.ndarray, path) -> None:
    Image.fromarray(rgb.astype(np.uint8), mode="RGB").save(path)


def render_segmentation_overlay(euv: SynopticMap, mask: SegmentationMask, path) -> None:
    """Result hole boundaries drawn over the EUV image."""
    rgb = euv_to_rgb(euv)
    for code, color in ((Label.POSITIVE, POS_SOLID), (Label.NEGATIVE, NEG_SOLID)):
        edge = boundary(mask.labels == code)
        rgb[edge] = color
    rgb[boundary(mask.hole_mask())] = RESULT_OUTLINE
    save_rgb(rgb, path)


def render_matching_overlay(
    ref_mask: SegmentationMask, model_mask: SegmentationMask, path
) -> None:
    """Solid reference clusters with hollow model outlines on white."""
    shape = ref_mask.grid.shape
    rgb = np.full((*shape, 3), 255, dtype=np.uint8)
    rgb[ref_mask.labels == Label.NO_OBSERVATION] = (0, 0, 0)
    rgb[ref_mask.labels == Label.POSITIVE] = POS_SOLID
    rgb[ref_mask.labels == Label.NEGATIVE] = NEG_SOLID
    for code, color in ((Label.POSITIVE, POS_LIGHT), (Label.NEGATIVE, NEG_LIGHT)):
        edge = boundary(model_mask.labels == code)
        rgb[edge] = color
    save_rgb(rgb, path)
