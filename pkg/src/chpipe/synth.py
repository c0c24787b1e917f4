"""Synthetic dataset generator.

Produces, for each date, the file inventory the pipeline consumes: an EUV
intensity map with darkened hole interiors, a signed flux map with unipolar
patches under each hole, a consensus segmentation (the ground truth), one
extra initializer-style mask (an over-dilated consensus with junk blobs,
standing in for an external segmentation method), and a family of model
masks derived from the consensus by seeded perturbations.

Model maps come in two perturbation levels per date.  Low-level models
jitter cluster positions slightly, scale areas mildly, and only rarely add
or remove anything large; high-level models shift, rescale, drop, and
invent clusters freely.  A model's good/bad label follows a documented
severity score of its perturbation level, so labels are decided by
construction.  Ground truth for matching is written as a per-model
provenance field: pixels of a perturbed copy carry the source hole id,
pixels of an invented blob carry 1000 + its index.

Everything is reproducible: all randomness derives from one seed.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from .geometry import GridSpec, row_latitudes, col_longitudes
from .levelset import gaussian_smooth
from .maps import Label, SegmentationMask, SynopticMap, save_map

NEW_BLOB_ID_BASE = 1000


@dataclass(frozen=True)
class SynthSpec:
    n_dates: int = 20
    n_cols: int = 360
    n_rows: int = 180
    model_cols: int | None = None  # default 144 on the 360x180 grid, else n_cols
    model_rows: int | None = None  # default 172 on the 360x180 grid, else n_rows
    n_models: int = 12
    holes_min: int = 4
    holes_max: int = 7
    radius_lon: tuple[float, float] = (9.0, 20.0)  # ellipse semi-axes, degrees
    radius_lat: tuple[float, float] = (6.0, 14.0)
    pair_probability: float = 0.35
    polar_hole_probability: float = 0.4
    euv_base: float = 160.0
    euv_ripple: float = 2.0
    euv_depth: float = 0.65
    euv_noise: float = 3.0
    flux_amplitude: float = 40.0
    flux_background: float = 5.0
    flux_noise: float = 1.0
    noobs_probability: float = 0.6
    junk_blobs: int = 2
    good_jitter_arc: float = 0.02
    bad_jitter_arc: float = 0.14
    good_area_scale: tuple[float, float] = (0.92, 1.12)
    bad_area_scale: tuple[float, float] = (0.6, 1.7)
    good_p_add: float = 0.12
    bad_p_add: float = 0.6
    good_p_remove: float = 0.06
    bad_p_remove: float = 0.4
    severity_threshold: float = 1.5
    seed: int = 0

    def __post_init__(self):
        for p in (
            self.pair_probability,
            self.polar_hole_probability,
            self.noobs_probability,
            self.good_p_add,
            self.bad_p_add,
            self.good_p_remove,
            self.bad_p_remove,
        ):
            if not (0.0 <= p <= 1.0):
                raise ValueError(f"probability {p} outside [0, 1]")
        if self.n_dates < 1 or self.n_models < 1:
            raise ValueError("need at least one date and one model")
        if self.holes_min < 1 or self.holes_max < self.holes_min:
            raise ValueError("bad holes_min/holes_max range")

    @property
    def grid(self) -> GridSpec:
        return GridSpec(n_cols=self.n_cols, n_rows=self.n_rows)

    @property
    def model_grid(self) -> GridSpec:
        if self.model_cols and self.model_rows:
            return GridSpec(n_cols=self.model_cols, n_rows=self.model_rows)
        if (self.n_cols, self.n_rows) == (360, 180):
            return GridSpec(n_cols=144, n_rows=172)
        return self.grid


def perturbation_severity(jitter_arc: float, area_scale: float, p_add: float, p_remove: float) -> float:
    """Scalar size of a perturbation level; labels are good iff below threshold."""
    return jitter_arc / 0.05 + abs(np.log2(area_scale)) + p_add + p_remove


@dataclass
class _Ellipse:
    lat: float
    lon: float
    a_lon: float  # semi-axis along longitude, degrees
    a_lat: float
    theta: float
    polarity: int
    hole_id: int
    cluster_id: int


def _rasterize(ellipses, grid: GridSpec) -> np.ndarray:
    """Hole-id field (0 = none) from ellipse parameters, wrap-aware."""
    ids = np.zeros(grid.shape, dtype=np.int32)
    lats = row_latitudes(grid)[:, None]
    lons = col_longitudes(grid)[None, :]
    for e in ellipses:
        dlon = (lons - e.lon + 180.0) % 360.0 - 180.0
        dlat = lats - e.lat
        u = dlon * np.cos(e.theta) + dlat * np.sin(e.theta)
        v = -dlon * np.sin(e.theta) + dlat * np.cos(e.theta)
        inside = (u / e.a_lon) ** 2 + (v / e.a_lat) ** 2 <= 1.0
        ids[inside] = e.hole_id
    return ids


def _labels_from_ids(ids: np.ndarray, polarity_of: dict[int, int]) -> np.ndarray:
    labels = np.full(ids.shape, Label.BACKGROUND, dtype=np.uint8)
    for hole_id, polarity in polarity_of.items():
        labels[ids == hole_id] = Label.POSITIVE if polarity > 0 else Label.NEGATIVE
    return labels


def _angular_gap(e1: _Ellipse, e2: _Ellipse) -> float:
    """Rough center separation minus summed radii, degrees."""
    dlon = abs((e1.lon - e2.lon + 180.0) % 360.0 - 180.0)
    dlat = abs(e1.lat - e2.lat)
    center = float(np.hypot(dlon * np.cos(np.deg2rad((e1.lat + e2.lat) / 2)), dlat))
    return center - max(e1.a_lon, e1.a_lat) - max(e2.a_lon, e2.a_lat)


def _plant_consensus(rng, spec: SynthSpec) -> list[_Ellipse]:
    ellipses: list[_Ellipse] = []
    next_hole = 1
    next_cluster = 1
    n_clusters = int(rng.integers(spec.holes_min, spec.holes_max + 1))
    attempts = 0
    while next_cluster <= n_clusters and attempts < 400:
        attempts += 1
        polarity = 1 if rng.random() < 0.5 else -1
        e = _Ellipse(
            lat=float(rng.uniform(-50, 50)),
            lon=float(rng.uniform(0, 360)),
            a_lon=float(rng.uniform(*spec.radius_lon)),
            a_lat=float(rng.uniform(*spec.radius_lat)),
            theta=float(rng.uniform(0, np.pi)),
            polarity=polarity,
            hole_id=next_hole,
            cluster_id=next_cluster,
        )
        # Same-polarity clusters stay far apart so cluster ground truth is
        # unambiguous; opposite polarities just avoid direct contact.
        min_gap = min(
            (
                _angular_gap(e, o)
                for o in ellipses
                if o.polarity == polarity
            ),
            default=np.inf,
        )
        min_gap_opp = min(
            (_angular_gap(e, o) for o in ellipses if o.polarity != polarity),
            default=np.inf,
        )
        if min_gap < 16.0 or min_gap_opp < 6.0:
            continue
        ellipses.append(e)
        next_hole += 1
        if rng.random() < spec.pair_probability:
            # companion hole close enough to cluster with its parent
            side = 1 if rng.random() < 0.5 else -1
            companion = _Ellipse(
                lat=float(np.clip(e.lat + rng.uniform(-3, 3), -55, 55)),
                lon=(e.lon + side * (e.a_lon + rng.uniform(3.0, 5.0))) % 360.0,
                a_lon=float(rng.uniform(3.0, 6.0)),
                a_lat=float(rng.uniform(2.5, 5.0)),
                theta=float(rng.uniform(0, np.pi)),
                polarity=polarity,
                hole_id=next_hole,
                cluster_id=next_cluster,
            )
            ellipses.append(companion)
            next_hole += 1
        next_cluster += 1
    if rng.random() < spec.polar_hole_probability:
        pole = 1 if rng.random() < 0.5 else -1
        ellipses.append(
            _Ellipse(
                lat=float(pole * rng.uniform(66, 76)),
                lon=float(rng.uniform(0, 360)),
                a_lon=float(rng.uniform(25, 50)),
                a_lat=float(rng.uniform(5, 9)),
                theta=0.0,
                polarity=1 if rng.random() < 0.5 else -1,
                hole_id=next_hole,
                cluster_id=next_cluster,
            )
        )
    return ellipses


def _observed_mask(rng, spec: SynthSpec, grid: GridSpec) -> np.ndarray:
    observed = np.ones(grid.shape, dtype=bool)
    lats = row_latitudes(grid)
    if rng.random() < 0.5:
        observed[np.abs(lats) > 80.0, :] = False
    if rng.random() < spec.noobs_probability:
        for _ in range(int(rng.integers(1, 3))):
            lon0 = int(rng.integers(0, grid.n_cols))
            width = int(rng.integers(grid.n_cols // 24, grid.n_cols // 12) + 1)
            lat_lo = float(rng.uniform(-55, 25))
            rows = np.nonzero((lats <= lat_lo + 30) & (lats >= lat_lo))[0]
            cols = (lon0 + np.arange(width)) % grid.n_cols
            observed[np.ix_(rows, cols)] = False
    return observed


def _fields_from_holes(rng, spec: SynthSpec, grid: GridSpec, ids: np.ndarray, polarity_of):
    """EUV and flux fields consistent with the planted holes."""
    lons = col_longitudes(grid)[None, :]
    hole = ids > 0
    darkening = gaussian_smooth(hole.astype(float), 1.5, 15)
    phase = rng.uniform(0, 2 * np.pi)
    base = spec.euv_base + spec.euv_ripple * np.sin(np.deg2rad(lons) + phase)
    euv = base * (1.0 - spec.euv_depth * darkening) + rng.normal(
        0, spec.euv_noise, grid.shape
    )
    euv = np.maximum(euv, 0.0)

    signed = np.zeros(grid.shape)
    for hole_id, polarity in polarity_of.items():
        signed += polarity * (ids == hole_id)
    patches = gaussian_smooth(signed, 1.0, 15) * spec.flux_amplitude
    flux_phase = rng.uniform(0, 2 * np.pi)
    background = spec.flux_background * np.sin(np.deg2rad(lons) + flux_phase)
    flux = patches + background * np.ones(grid.shape) + rng.normal(
        0, spec.flux_noise, grid.shape
    )
    return euv, flux


def _ext_method_mask(rng, spec, grid, labels, polarity_of, ellipses) -> np.ndarray:
    """A second initializer: dilated consensus plus junk blobs."""
    ext = labels.copy()
    for code in (Label.POSITIVE, Label.NEGATIVE):
        indicator = ext == code
        pad = 4
        work = np.pad(indicator, ((pad, pad), (0, 0)), mode="constant")
        work = np.pad(work, ((0, 0), (pad, pad)), mode="wrap")
        work = ndimage.binary_dilation(work, structure=np.ones((5, 5), bool))
        grown = work[pad:-pad, pad:-pad]
        ext[grown & (ext == Label.BACKGROUND)] = code
    # junk blobs on quiet regions; the selector should reject these
    lats = row_latitudes(grid)[:, None]
    lons = col_longitudes(grid)[None, :]
    for _ in range(int(rng.integers(1, spec.junk_blobs + 1))):
        for _attempt in range(50):
            lat0 = float(rng.uniform(-55, 55))
            lon0 = float(rng.uniform(0, 360))
            a = float(rng.uniform(3, 7))
            b = float(rng.uniform(2.5, 5))
            dlon = (lons - lon0 + 180.0) % 360.0 - 180.0
            blob = (dlon / a) ** 2 + ((lats - lat0) / b) ** 2 <= 1.0
            if not (blob & (labels != Label.BACKGROUND)).any():
                code = Label.POSITIVE if rng.random() < 0.5 else Label.NEGATIVE
                ext[blob] = code
                break
    return ext


def _perturb_model(rng, spec, ellipses, level: str):
    """Perturbed ellipse list, removed cluster ids, and level parameters."""
    jitter_max = spec.good_jitter_arc if level == "good" else spec.bad_jitter_arc
    scale_range = spec.good_area_scale if level == "good" else spec.bad_area_scale
    p_add = spec.good_p_add if level == "good" else spec.bad_p_add
    p_remove = spec.good_p_remove if level == "good" else spec.bad_p_remove

    area_scale = float(rng.uniform(*scale_range))
    axis_scale = float(np.sqrt(area_scale))
    cluster_ids = sorted({e.cluster_id for e in ellipses})
    removed: list[int] = []
    keep_guard = max(1, len(cluster_ids) - 1)  # never remove every cluster
    shifts = {}
    for cid in cluster_ids:
        if len(removed) < keep_guard and rng.random() < p_remove:
            removed.append(cid)
            continue
        angle = rng.uniform(0, 2 * np.pi)
        magnitude = np.rad2deg(rng.uniform(0, jitter_max))
        shifts[cid] = (magnitude * np.sin(angle), magnitude * np.cos(angle))
    out = []
    for e in ellipses:
        if e.cluster_id in removed:
            continue
        dlat, dlon = shifts[e.cluster_id]
        out.append(
            _Ellipse(
                lat=float(np.clip(e.lat + dlat, -89, 89)),
                lon=(e.lon + dlon) % 360.0,
                a_lon=e.a_lon * axis_scale,
                a_lat=e.a_lat * axis_scale,
                theta=e.theta,
                polarity=e.polarity,
                hole_id=e.hole_id,
                cluster_id=e.cluster_id,
            )
        )
    # invented blobs, far from every consensus hole of the same polarity
    added = 0
    n_add = 0
    if rng.random() < p_add:
        n_add = 1 if level == "good" else int(rng.integers(1, 4))
    for j in range(n_add):
        for _attempt in range(60):
            polarity = 1 if rng.random() < 0.5 else -1
            if level == "good":
                a, b = float(rng.uniform(2.0, 4.0)), float(rng.uniform(1.5, 3.0))
            else:
                a, b = float(rng.uniform(6.0, 12.0)), float(rng.uniform(4.0, 9.0))
            cand = _Ellipse(
                lat=float(rng.uniform(-50, 50)),
                lon=float(rng.uniform(0, 360)),
                a_lon=a,
                a_lat=b,
                theta=float(rng.uniform(0, np.pi)),
                polarity=polarity,
                hole_id=NEW_BLOB_ID_BASE + added,
                cluster_id=-1,
            )
            far = all(
                _angular_gap(cand, o) > 22.0
                for o in ellipses
                if o.polarity == polarity
            )
            if far:
                out.append(cand)
                added += 1
                break
    params = {
        "level": level,
        "jitter_arc": float(jitter_max),
        "area_scale": area_scale,
        "p_add": float(p_add),
        "p_remove": float(p_remove),
    }
    return out, removed, added, params


def _severity_label(spec: SynthSpec, params) -> str:
    severity = perturbation_severity(
        params["jitter_arc"], params["area_scale"], params["p_add"], params["p_remove"]
    )
    return "good" if severity <= spec.severity_threshold else "bad"


def save_int_field(field: np.ndarray, path, kind: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        fh.write(f"{field.shape[1]},{field.shape[0]},{kind}\n")
        np.savetxt(fh, field, fmt="%d", delimiter=",")


def load_int_field(path) -> np.ndarray:
    with open(path) as fh:
        fh.readline()
        return np.loadtxt(fh, delimiter=",", dtype=np.int64, ndmin=2)


def date_ids(n_dates: int) -> list[str]:
    return [f"d{i + 1:03d}" for i in range(n_dates)]


def generate_dataset(spec: SynthSpec, out_dir) -> list[str]:
    """Write the full synthetic dataset; returns the generated date ids."""
    out_dir = Path(out_dir)
    grid = spec.grid
    model_grid = spec.model_grid
    dates = date_ids(spec.n_dates)
    date_seeds = np.random.SeedSequence(spec.seed).spawn(spec.n_dates)
    for date, seed_seq in zip(dates, date_seeds):
        rng = np.random.default_rng(seed_seq)
        ddir = out_dir / date
        ellipses = _plant_consensus(rng, spec)
        polarity_of = {e.hole_id: e.polarity for e in ellipses}
        ids = _rasterize(ellipses, grid)
        observed = _observed_mask(rng, spec, grid)
        euv_vals, flux_vals = _fields_from_holes(rng, spec, grid, ids, polarity_of)

        labels = _labels_from_ids(ids, polarity_of)
        labels[~observed] = Label.NO_OBSERVATION
        consensus = SegmentationMask(grid=grid, labels=labels)
        ids_clipped = np.where(observed, ids, 0)

        euv = SynopticMap(
            grid=grid, values=np.where(observed, euv_vals, 0.0), observed=observed, kind="euv"
        )
        mag = SynopticMap(
            grid=grid,
            values=np.where(observed, flux_vals, 0.0),
            observed=observed,
            kind="magnetic",
        )
        save_map(euv, ddir / "euv.csv")
        save_map(mag, ddir / "mag.csv")
        save_map(consensus, ddir / "consensus.csv")
        save_int_field(ids_clipped, ddir / "consensus_ids.csv", "ids")

        ext_labels = _ext_method_mask(rng, spec, grid, labels, polarity_of, ellipses)
        ext_labels[~observed] = Label.NO_OBSERVATION
        save_map(SegmentationMask(grid=grid, labels=ext_labels), ddir / "ext_method.csv")

        # good/bad group sizes: occasionally all-good or all-bad days,
        # otherwise a mixed split scaled to the model count (4..8 of 12)
        roll = rng.random()
        if roll < 0.15:
            n_good = spec.n_models
        elif roll < 0.30:
            n_good = 0
        else:
            lo = max(1, spec.n_models // 3)
            hi = max(lo + 1, (2 * spec.n_models) // 3)
            n_good = int(rng.integers(lo, hi + 1))
        good_set = set(rng.permutation(spec.n_models)[:n_good].tolist())

        for m in range(spec.n_models):
            level = "good" if m in good_set else "bad"
            model_ellipses, removed, added, params = _perturb_model(
                rng, spec, ellipses, level
            )
            m_polarity = {e.hole_id: e.polarity for e in model_ellipses}
            model_ids_native = _rasterize(model_ellipses, model_grid)
            model_labels = _labels_from_ids(model_ids_native, m_polarity)
            model_name = f"m{m + 1:02d}"
            save_map(
                SegmentationMask(grid=model_grid, labels=model_labels),
                ddir / "models" / f"{model_name}.csv",
                kind="model",
            )
            prov = _rasterize(model_ellipses, grid)
            save_int_field(prov, ddir / "truth" / f"{model_name}_prov.csv", "prov")
            label = _severity_label(spec, params)
            truth = {
                "label": label,
                "level": level,
                "removed_cluster_ids": removed,
                "added_blobs": added,
                "params": params,
                "severity": perturbation_severity(
                    params["jitter_arc"],
                    params["area_scale"],
                    params["p_add"],
                    params["p_remove"],
                ),
            }
            tpath = ddir / "truth" / f"{model_name}.json"
            tpath.parent.mkdir(parents=True, exist_ok=True)
            with open(tpath, "w") as fh:
                json.dump(truth, fh, sort_keys=True, indent=1)

        # map hole ids to intended cluster ids for matching ground truth
        cluster_of_hole = {e.hole_id: e.cluster_id for e in ellipses}
        meta = {
            "date": date,
            "hole_clusters": {str(k): v for k, v in cluster_of_hole.items()},
            "hole_polarity": {str(k): v for k, v in polarity_of.items()},
        }
        with open(ddir / "meta.json", "w") as fh:
            json.dump(meta, fh, sort_keys=True, indent=1)

    manifest = {
        "dates": dates,
        "n_models": spec.n_models,
        "grid": {"n_cols": grid.n_cols, "n_rows": grid.n_rows},
        "model_grid": {"n_cols": model_grid.n_cols, "n_rows": model_grid.n_rows},
        "spec": asdict(spec),
    }
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "manifest.json", "w") as fh:
        json.dump(manifest, fh, sort_keys=True, indent=1)
    return dates
