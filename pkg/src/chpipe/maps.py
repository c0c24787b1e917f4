"""Data model and file I/O for synoptic maps and segmentation masks.

Two pixel field types cover every map the pipeline touches:

* :class:`SynopticMap` -- a scalar field (EUV intensity or signed magnetic
  flux) plus a boolean ``observed`` mask.  Unobserved pixels hold 0.0 in
  memory and are written as ``nan`` on disk.
* :class:`SegmentationMask` -- a per-pixel label field with codes
  0=background, 1=positive hole, 2=negative hole, 3=no observation.

File formats (documented in the README):

* Scalar map CSV: a header line ``cols,rows,kind`` followed by ``rows``
  lines of ``cols`` comma-separated floats, row 0 = north.  ``nan`` marks
  unobserved pixels.
* Mask CSV: same header, integer label codes.
* Mask PNG: 8-bit paletted image whose pixel indices are the label codes.

Connectivity convention: 8-connectivity with longitudinal wrap-around and
no wrap across the poles.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import IntEnum
from pathlib import Path

import numpy as np
from PIL import Image
from scipy import ndimage

from .errors import MapIOError
from .geometry import GridSpec, SpherePoint, pixels_area, pixels_centroid, row_latitudes

MAP_KINDS = ("euv", "magnetic", "mask", "model")

# Palette for mask PNGs: white background, red positive, blue negative,
# black no-observation.
_MASK_PALETTE = [255, 255, 255, 220, 40, 40, 50, 80, 230, 0, 0, 0]


class Label(IntEnum):
    BACKGROUND = 0
    POSITIVE = 1
    NEGATIVE = 2
    NO_OBSERVATION = 3


@dataclass(frozen=True, eq=False)
class SynopticMap:
    """Scalar field over an equirectangular grid with an observation mask."""

    grid: GridSpec
    values: np.ndarray
    observed: np.ndarray
    kind: str = "euv"

    def __post_init__(self):
        if self.values.shape != self.grid.shape or self.observed.shape != self.grid.shape:
            raise ValueError(
                f"field shape {self.values.shape} does not match grid {self.grid.shape}"
            )
        if self.kind not in ("euv", "magnetic"):
            raise ValueError(f"unknown scalar map kind: {self.kind}")
        if self.kind == "euv" and np.any(self.values[self.observed] < 0):
            raise ValueError("EUV intensities must be non-negative where observed")


@dataclass(frozen=True, eq=False)
class SegmentationMask:
    """Per-pixel label field; see :class:`Label` for codes."""

    grid: GridSpec
    labels: np.ndarray

    def __post_init__(self):
        if self.labels.shape != self.grid.shape:
            raise ValueError(
                f"label shape {self.labels.shape} does not match grid {self.grid.shape}"
            )
        if not np.isin(self.labels, list(Label)).all():
            raise ValueError("mask contains label codes outside {0,1,2,3}")

    def hole_mask(self, polarity: int | None = None) -> np.ndarray:
        """Boolean field of hole pixels; restrict to +1/-1 polarity if given."""
        if polarity is None:
            return (self.labels == Label.POSITIVE) | (self.labels == Label.NEGATIVE)
        return self.labels == (Label.POSITIVE if polarity > 0 else Label.NEGATIVE)

    def observed_mask(self) -> np.ndarray:
        return self.labels != Label.NO_OBSERVATION


@dataclass(frozen=True, eq=False)
class CoronalHole:
    """One 8-connected, single-polarity pixel component."""

    pixels: np.ndarray
    polarity: int
    image_area: int
    physical_area: float
    centroid: SpherePoint

    @classmethod
    def from_pixels(cls, pixels: np.ndarray, polarity: int, grid: GridSpec) -> "CoronalHole":
        pixels = np.asarray(pixels, dtype=np.int64).reshape(-1, 2)
        if pixels.shape[0] == 0:
            raise ValueError("a coronal hole needs at least one pixel")
        if polarity not in (1, -1):
            raise ValueError(f"polarity must be +1 or -1, got {polarity}")
        order = np.lexsort((pixels[:, 1], pixels[:, 0]))
        pixels = pixels[order]
        return cls(
            pixels=pixels,
            polarity=polarity,
            image_area=int(pixels.shape[0]),
            physical_area=pixels_area(pixels, grid),
            centroid=pixels_centroid(pixels, grid),
        )


# ---------------------------------------------------------------------------
# CSV / PNG I/O
# ---------------------------------------------------------------------------


def _parse_header(line: str, path) -> tuple[int, int, str]:
    parts = [p.strip() for p in line.strip().split(",")]
    if len(parts) != 3:
        raise MapIOError(f"{path}: header must be 'cols,rows,kind', got {line!r}")
    try:
        n_cols, n_rows = int(parts[0]), int(parts[1])
    except ValueError as exc:
        raise MapIOError(f"{path}: non-integer dimensions in header") from exc
    return n_cols, n_rows, parts[2]


def load_map(path, kind: str, radius: float = 1.0) -> SynopticMap | SegmentationMask:
    """Load a map file of the given kind.

    ``euv`` and ``magnetic`` yield a :class:`SynopticMap`; ``mask`` and
    ``model`` yield a :class:`SegmentationMask`.  Model masks keep their
    native grid (no resizing here).
    """
    path = Path(path)
    if kind not in MAP_KINDS:
        raise MapIOError(f"unknown map kind {kind!r}; expected one of {MAP_KINDS}")
    if not path.exists():
        raise MapIOError(f"{path}: no such file")
    if path.suffix.lower() == ".png":
        if kind not in ("mask", "model"):
            raise MapIOError(f"{path}: PNG input is only supported for masks")
        return _load_mask_png(path, radius)

    with open(path, "r") as fh:
        header = fh.readline()
        n_cols, n_rows, file_kind = _parse_header(header, path)
        if file_kind != kind:
            raise MapIOError(f"{path}: file kind {file_kind!r} does not match requested {kind!r}")
        try:
            data = np.loadtxt(fh, delimiter=",", ndmin=2)
        except ValueError as exc:
            raise MapIOError(f"{path}: could not parse field rows: {exc}") from exc
    if data.shape != (n_rows, n_cols):
        raise MapIOError(
            f"{path}: header says {n_cols}x{n_rows} but file holds {data.shape[1]}x{data.shape[0]}"
        )
    grid = GridSpec(n_cols=n_cols, n_rows=n_rows, radius=radius)
    if kind in ("euv", "magnetic"):
        observed = np.isfinite(data)
        values = np.where(observed, data, 0.0)
        return SynopticMap(grid=grid, values=values, observed=observed, kind=kind)
    labels = data.astype(np.uint8)
    if not np.array_equal(labels, data):
        raise MapIOError(f"{path}: mask file holds non-integer label codes")
    if not np.isin(labels, list(Label)).all():
        raise MapIOError(f"{path}: mask file holds label codes outside {{0,1,2,3}}")
    return SegmentationMask(grid=grid, labels=labels)


def save_map(obj: SynopticMap | SegmentationMask, path, kind: str | None = None) -> None:
    """Write a map as CSV (or PNG for masks when the path ends in .png)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if isinstance(obj, SegmentationMask) and path.suffix.lower() == ".png":
        _save_mask_png(obj, path)
        return
    if isinstance(obj, SynopticMap):
        kind = kind or obj.kind
        field = np.where(obj.observed, obj.values, np.nan)
        fmt = "%.17g"
    else:
        kind = kind or "mask"
        field = obj.labels
        fmt = "%d"
    with open(path, "w") as fh:
        fh.write(f"{obj.grid.n_cols},{obj.grid.n_rows},{kind}\n")
        np.savetxt(fh, field, fmt=fmt, delimiter=",")


def _save_mask_png(mask: SegmentationMask, path) -> None:
    img = Image.fromarray(mask.labels.astype(np.uint8), mode="P")
    img.putpalette(_MASK_PALETTE + [0] * (768 - len(_MASK_PALETTE)))
    img.save(path)


def _load_mask_png(path, radius: float) -> SegmentationMask:
    try:
        img = Image.open(path)
        if img.mode not in ("P", "L"):
            raise MapIOError(
                f"{path}: PNG mask must be paletted or grayscale, got mode {img.mode}"
            )
        labels = np.asarray(img, dtype=np.uint8)
    except MapIOError:
        raise
    except Exception as exc:
        raise MapIOError(f"{path}: cannot read PNG mask: {exc}") from exc
    if labels.ndim != 2 or not np.isin(labels, list(Label)).all():
        raise MapIOError(f"{path}: PNG mask must hold label codes 0..3")
    grid = GridSpec(n_cols=labels.shape[1], n_rows=labels.shape[0], radius=radius)
    return SegmentationMask(grid=grid, labels=labels)


# ---------------------------------------------------------------------------
# Resampling
# ---------------------------------------------------------------------------


def _src_coords(n_target: int, n_source: int) -> np.ndarray:
    """Source coordinates of target pixel centers (half-pixel convention)."""
    return (np.arange(n_target) + 0.5) * n_source / n_target - 0.5


def _bilinear(field: np.ndarray, target_shape: tuple[int, int]) -> np.ndarray:
    """Bilinear resample with edge clamping on both axes."""
    n_rows, n_cols = field.shape
    ys = np.clip(_src_coords(target_shape[0], n_rows), 0, n_rows - 1)
    xs = np.clip(_src_coords(target_shape[1], n_cols), 0, n_cols - 1)
    y0 = np.clip(np.floor(ys).astype(int), 0, n_rows - 2)
    x0 = np.clip(np.floor(xs).astype(int), 0, n_cols - 2)
    ty = (ys - y0)[:, None]
    tx = (xs - x0)[None, :]
    f00 = field[np.ix_(y0, x0)]
    f01 = field[np.ix_(y0, x0 + 1)]
    f10 = field[np.ix_(y0 + 1, x0)]
    f11 = field[np.ix_(y0 + 1, x0 + 1)]
    return (
        f00 * (1 - ty) * (1 - tx)
        + f01 * (1 - ty) * tx
        + f10 * ty * (1 - tx)
        + f11 * ty * tx
    )


def _nearest(field: np.ndarray, target_shape: tuple[int, int]) -> np.ndarray:
    n_rows, n_cols = field.shape
    ys = np.clip(np.rint(_src_coords(target_shape[0], n_rows)).astype(int), 0, n_rows - 1)
    xs = np.clip(np.rint(_src_coords(target_shape[1], n_cols)).astype(int), 0, n_cols - 1)
    return field[np.ix_(ys, xs)]


def resize_bilinear(obj, target: GridSpec):
    """Resample a map or mask onto a new grid.

    Scalar fields are bilinearly interpolated and the observation mask is
    resampled nearest-neighbor.  Label masks are resampled by interpolating
    each polarity indicator and re-thresholding at 0.5; exact 0.5 counts as
    hole, erring toward over-segmentation.  No-observation pixels are
    resampled nearest-neighbor and take precedence.
    """
    if isinstance(obj, SynopticMap):
        values = _bilinear(obj.values, target.shape)
        observed = _nearest(obj.observed, target.shape)
        if obj.kind == "euv":
            values = np.maximum(values, 0.0)
        values = np.where(observed, values, 0.0)
        return SynopticMap(grid=target, values=values, observed=observed, kind=obj.kind)
    if isinstance(obj, SegmentationMask):
        pos = _bilinear((obj.labels == Label.POSITIVE).astype(float), target.shape)
        neg = _bilinear((obj.labels == Label.NEGATIVE).astype(float), target.shape)
        noobs = _nearest(obj.labels == Label.NO_OBSERVATION, target.shape)
        labels = np.full(target.shape, Label.BACKGROUND, dtype=np.uint8)
        labels[(neg >= 0.5) & (neg > pos)] = Label.NEGATIVE
        # Ties between the two polarities resolve to positive.
        labels[(pos >= 0.5) & (pos >= neg)] = Label.POSITIVE
        labels[noobs] = Label.NO_OBSERVATION
        return SegmentationMask(grid=target, labels=labels)
    raise TypeError(f"cannot resize object of type {type(obj).__name__}")


# ---------------------------------------------------------------------------
# Morphology and region filtering
# ---------------------------------------------------------------------------


def _disc_structure(radius: int) -> np.ndarray:
    span = np.arange(-radius, radius + 1)
    dy, dx = np.meshgrid(span, span, indexing="ij")
    return (dy**2 + dx**2) <= radius**2


def binary_close(mask: np.ndarray, radius: int) -> np.ndarray:
    """Morphological closing with a disc, wrap-aware in longitude.

    Dilation followed by erosion; gaps strictly narrower than the disc are
    filled and the result always contains the input.  The grid behaves as a
    cylinder: columns wrap, rows beyond the poles count as background.
    """
    if radius < 0:
        raise ValueError("structuring radius must be >= 0")
    mask = np.asarray(mask, dtype=bool)
    if radius == 0:
        return mask.copy()
    pad = 2 * radius
    work = np.pad(mask, ((pad, pad), (0, 0)), mode="constant")
    work = np.pad(work, ((0, 0), (pad, pad)), mode="wrap")
    structure = _disc_structure(radius)
    work = ndimage.binary_dilation(work, structure=structure)
    work = ndimage.binary_erosion(work, structure=structure)
    return work[pad:-pad, pad:-pad]


def remove_regions(
    mask: SegmentationMask,
    polar_lat: float = 60.0,
    observed: np.ndarray | None = None,
) -> SegmentationMask:
    """Blank out polar bands and unobserved regions.

    Hole pixels with |latitude| > ``polar_lat`` (co-latitude within 30
    degrees of either pole at the default) become background.  If an
    ``observed`` mask is supplied, pixels outside it become no-observation.
    """
    labels = mask.labels.copy()
    lats = row_latitudes(mask.grid)
    polar_rows = np.abs(lats) > polar_lat
    hole = (labels == Label.POSITIVE) | (labels == Label.NEGATIVE)
    labels[polar_rows[:, None] & hole] = Label.BACKGROUND
    if observed is not None:
        if observed.shape != mask.grid.shape:
            raise ValueError("observed mask shape does not match grid")
        labels[~observed] = Label.NO_OBSERVATION
    return SegmentationMask(grid=mask.grid, labels=labels)


# ---------------------------------------------------------------------------
# Connected components
# ---------------------------------------------------------------------------

_STRUCT8 = np.ones((3, 3), dtype=bool)


def label_components(indicator: np.ndarray) -> tuple[np.ndarray, int]:
    """8-connected component labels with longitudinal wrap-around.

    Returns (label_field, n_components) with labels 1..n like
    ``scipy.ndimage.label``; components touching across the longitude seam
    share one label.
    """
    indicator = np.asarray(indicator, dtype=bool)
    labeled, n = ndimage.label(indicator, structure=_STRUCT8)
    if n == 0 or indicator.shape[1] < 2:
        return labeled, n
    # Union labels that touch across the seam (8-neighborhood: straight and
    # diagonal contacts between the last and first columns).
    parent = np.arange(n + 1)

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    def union(i, j):
        ri, rj = find(i), find(j)
        if ri != rj:
            parent[max(ri, rj)] = min(ri, rj)

    left = labeled[:, 0]
    right = labeled[:, -1]
    n_rows = indicator.shape[0]
    for r in range(n_rows):
        if right[r] == 0:
            continue
        for rr in (r - 1, r, r + 1):
            if 0 <= rr < n_rows and left[rr] != 0:
                union(int(right[r]), int(left[rr]))
    roots = np.array([find(i) for i in range(n + 1)])
    # Compact the label ids to 1..m preserving first-appearance order.
    unique_roots = [r for r in np.unique(roots[1:])]
    remap = np.zeros(n + 1, dtype=labeled.dtype)
    for new_id, root in enumerate(unique_roots, start=1):
        remap[roots == root] = new_id
    return remap[labeled], len(unique_roots)


def extract_holes(mask: SegmentationMask) -> list[CoronalHole]:
    """Decompose a mask into per-polarity 8-connected coronal holes.

    Positive holes are returned before negative ones; within a polarity,
    holes are ordered by their lexicographically smallest pixel.
    """
    holes: list[CoronalHole] = []
    for polarity, code in ((1, Label.POSITIVE), (-1, Label.NEGATIVE)):
        labeled, n = label_components(mask.labels == code)
        polarity_holes = []
        for comp_id in range(1, n + 1):
            rr, cc = np.nonzero(labeled == comp_id)
            pixels = np.stack([rr, cc], axis=1)
            polarity_holes.append(CoronalHole.from_pixels(pixels, polarity, mask.grid))
        polarity_holes.sort(key=lambda h: (int(h.pixels[0, 0]), int(h.pixels[0, 1])))
        holes.extend(polarity_holes)
    return holes


def preprocess_mask(
    mask: SegmentationMask,
    target: GridSpec,
    close_radius: int = 1,
    polar_lat: float = 60.0,
    observed: np.ndarray | None = None,
) -> SegmentationMask:
    """Prepare a raw mask for cluster matching.

    Close small gaps per polarity at the native resolution, resample to the
    working grid, then drop polar bands and unobserved regions.
    """
    labels = mask.labels.copy()
    pos = binary_close(mask.labels == Label.POSITIVE, close_radius)
    neg = binary_close(mask.labels == Label.NEGATIVE, close_radius)
    labels[neg & (labels != Label.NO_OBSERVATION)] = Label.NEGATIVE
    labels[pos & (labels != Label.NO_OBSERVATION)] = Label.POSITIVE
    closed = SegmentationMask(grid=mask.grid, labels=labels)
    if target.shape != mask.grid.shape:
        closed = resize_bilinear(closed, target)
    return remove_regions(closed, polar_lat=polar_lat, observed=observed)
