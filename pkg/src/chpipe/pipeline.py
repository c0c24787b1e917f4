"""Pipeline stages behind the CLI commands.

Every stage reads files produced by earlier stages (never in-memory state),
writes its outputs atomically (temp file + rename), and derives all of its
randomness from the run seed, so a full rerun with the same config and seed
reproduces every artifact byte for byte.

Output tree under the run directory:

    data/                    synthetic dataset (stage: synth)
    seg/                     selector models, per-date masks, metrics.csv
    match/                   Mahalanobis gate, per-date per-model JSON + PNG
    classifier/              forest model, predictions, confusion, OOB surface
    report/                  consolidated tables and report.md
    tuned.json               level-set parameter search result
"""

from __future__ import annotations

import json
import os
import tempfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from .classify import FEATURE_NAMES, extract_features
from .config import PipelineConfig
from .errors import MissingInputError, PipelineError
from .forest import ForestConfig, TrainedForest, load_forest, save_forest, train, tune_oob
from .geometry import GridSpec
from .initseg import (
    henney_harvey_init,
    hole_features,
    select_candidates,
    union_masks,
)
from .levelset import segment, sens_spec, tune
from .maps import (
    Label,
    SegmentationMask,
    extract_holes,
    load_map,
    preprocess_mask,
    save_map,
)
from .matchcluster import MahalanobisModel, MatchingConfig, match_one_model
from .render import render_matching_overlay, render_segmentation_overlay
from .synth import NEW_BLOB_ID_BASE, generate_dataset, load_int_field

# stage tags for seed derivation
_SEED_SELECTOR = 11
_SEED_SPLIT = 21
_SEED_FOREST = 22
_SEED_OOB = 23


def derived_seed(seed: int, tag: int) -> int:
    return int(np.random.SeedSequence([seed, tag]).generate_state(1)[0])


def _atomic_write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".tmp-", suffix=path.suffix)
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _write_json(path: Path, payload) -> None:
    _atomic_write(Path(path), json.dumps(payload, sort_keys=True, indent=1) + "\n")


def data_dir_of(cfg: PipelineConfig, out_dir) -> Path:
    if cfg.paths.data_dir:
        return Path(cfg.paths.data_dir)
    return Path(out_dir) / "data"


def load_manifest(data_dir: Path) -> dict:
    path = Path(data_dir) / "manifest.json"
    if not path.exists():
        raise MissingInputError(f"dataset manifest not found: {path} (run synth first)")
    with open(path) as fh:
        return json.load(fh)


def select_dates(all_dates: list[str], dates_arg: str | None) -> list[str]:
    """Subset by a 1-based inclusive index range 'FROM:TO' (or one index)."""
    if not dates_arg:
        return list(all_dates)
    parts = dates_arg.split(":")
    try:
        if len(parts) == 1:
            lo = hi = int(parts[0])
        elif len(parts) == 2:
            lo, hi = int(parts[0]), int(parts[1])
        else:
            raise ValueError
    except ValueError:
        raise MissingInputError(f"bad --dates value {dates_arg!r}; expected FROM:TO")
    lo = max(1, lo)
    hi = min(len(all_dates), hi)
    if lo > hi:
        raise MissingInputError(f"--dates {dates_arg!r} selects nothing")
    return all_dates[lo - 1 : hi]


def train_prefix(dates: list[str], fraction: float) -> list[str]:
    n = max(1, int(np.ceil(fraction * len(dates))))
    return dates[:n]


# ---------------------------------------------------------------------------
# synth
# ---------------------------------------------------------------------------


def stage_synth(cfg: PipelineConfig, out_dir, seed: int | None = None) -> dict:
    spec = cfg.synth if seed is None else replace(cfg.synth, seed=seed)
    dates = generate_dataset(spec, data_dir_of(cfg, out_dir))
    return {"dates": dates, "data_dir": str(data_dir_of(cfg, out_dir))}


# ---------------------------------------------------------------------------
# segment
# ---------------------------------------------------------------------------


def _load_date_inputs(data_dir: Path, date: str, ext_names):
    ddir = data_dir / date
    euv = load_map(ddir / "euv.csv", "euv")
    mag = load_map(ddir / "mag.csv", "magnetic")
    consensus_path = ddir / "consensus.csv"
    consensus = load_map(consensus_path, "mask") if consensus_path.exists() else None
    ext = {}
    for name in ext_names:
        csv_path = ddir / f"{name}.csv"
        png_path = ddir / f"{name}.png"
        if csv_path.exists():
            ext[name] = load_map(csv_path, "mask")
        elif png_path.exists():
            ext[name] = load_map(png_path, "mask")
        else:
            raise MissingInputError(
                f"external initializer mask missing: {csv_path} (or .png)"
            )
    return euv, mag, consensus, ext


def mask_from_holes(holes, grid: GridSpec, observed: np.ndarray) -> SegmentationMask:
    labels = np.full(grid.shape, Label.BACKGROUND, dtype=np.uint8)
    labels[~observed] = Label.NO_OBSERVATION
    for h in holes:
        labels[h.pixels[:, 0], h.pixels[:, 1]] = (
            Label.POSITIVE if h.polarity > 0 else Label.NEGATIVE
        )
    return SegmentationMask(grid=grid, labels=labels)


def _init_sources(cfg: PipelineConfig, euv, mag, ext_masks) -> dict[str, SegmentationMask]:
    sources = {
        "hh": henney_harvey_init(
            euv, mag, cfg.init.dark_quantile, cfg.init.unipolarity_min
        )
    }
    sources.update(ext_masks)
    return sources


def _candidate_rows(mask: SegmentationMask, euv, mag, consensus, overlap_valid=0.3):
    """(holes, feature vectors, labels) for selector training/selection.

    A candidate is labeled valid when at least ``overlap_valid`` of its
    pixels fall inside consensus holes; over-dilated but genuine candidates
    stay valid while junk blobs sit near zero overlap.
    """
    holes = extract_holes(mask)
    feats = [hole_features(h, euv, mag) for h in holes]
    labels = None
    if consensus is not None:
        truth_holes = consensus.hole_mask()
        labels = []
        for h in holes:
            inside = truth_holes[h.pixels[:, 0], h.pixels[:, 1]].mean()
            labels.append(1 if inside >= overlap_valid else 0)
    return holes, feats, labels


def train_selectors(cfg: PipelineConfig, data_dir: Path, dates: list[str], seed: int):
    """One hole-selector forest per initializer source, trained on the date prefix."""
    sources_cfg = {"hh": (cfg.init.hh_trees, cfg.init.hh_splits)}
    for name in cfg.init.external_masks:
        sources_cfg[name] = (cfg.init.ext_trees, cfg.init.ext_splits)
    rows: dict[str, list] = {name: [] for name in sources_cfg}
    labels: dict[str, list] = {name: [] for name in sources_cfg}
    for date in dates:
        euv, mag, consensus, ext = _load_date_inputs(data_dir, date, cfg.init.external_masks)
        if consensus is None:
            continue
        for name, mask in _init_sources(cfg, euv, mag, ext).items():
            _, feats, y = _candidate_rows(mask, euv, mag, consensus, cfg.init.overlap_valid)
            rows[name].extend(f.as_array() for f in feats)
            labels[name].extend(y)
    selectors: dict[str, TrainedForest | None] = {}
    for idx, (name, (n_trees, n_splits)) in enumerate(sorted(sources_cfg.items())):
        X, y = np.array(rows[name]), np.array(labels[name])
        if y.size < 4 or len(np.unique(y)) < 2:
            selectors[name] = None  # nothing to reject; keep every candidate
            continue
        fc = ForestConfig(
            n_trees=n_trees,
            max_depth=64,
            max_splits=n_splits,
            tie_label=1,
            seed=derived_seed(seed, _SEED_SELECTOR + idx),
        )
        selectors[name] = train(X, y, fc)
    return selectors


def _segment_one_date(cfg, data_dir, seg_dir, date, selectors):
    euv, mag, consensus, ext = _load_date_inputs(data_dir, date, cfg.init.external_masks)
    grid = euv.grid
    selected_masks = []
    for name, mask in _init_sources(cfg, euv, mag, ext).items():
        holes, feats, _ = _candidate_rows(mask, euv, mag, None)
        model = selectors.get(name) if cfg.init.selector else None
        if model is not None and holes:
            kept = select_candidates(holes, feats, model).kept
        else:
            kept = holes
        selected_masks.append(mask_from_holes(kept, grid, euv.observed))
    init_mask = union_masks(selected_masks, mag=mag)
    final = segment(euv, mag, init_mask, cfg.levelset)

    ddir = seg_dir / date
    save_map(init_mask, ddir / "init.csv")
    save_map(final, ddir / "final.csv")
    render_segmentation_overlay(euv, final, _prepared(ddir / "overlay.png"))

    rows = []
    for stage, mask in (("init", init_mask), ("final", final)):
        if consensus is None:
            rows.append((date, stage, "", "", "", "no-consensus"))
            continue
        try:
            sens, spec, dist = sens_spec(mask, consensus)
            rows.append((date, stage, f"{sens:.6f}", f"{spec:.6f}", f"{dist:.6f}", "ok"))
        except ValueError:
            rows.append((date, stage, "", "", "", "sens-undefined"))
    return rows


def _prepared(path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    return path


def _preflight(required: list[Path], hint: str) -> None:
    """Fail with every missing input named before any work starts."""
    missing = [str(p) for p in required if not p.exists()]
    if missing:
        shown = "; ".join(missing[:10])
        more = f" (+{len(missing) - 10} more)" if len(missing) > 10 else ""
        raise MissingInputError(f"{hint}: {shown}{more}")


def stage_segment(
    cfg: PipelineConfig, out_dir, dates_arg: str | None = None, jobs: int = 1, seed: int = 0
) -> dict:
    out_dir = Path(out_dir)
    data_dir = data_dir_of(cfg, out_dir)
    manifest = load_manifest(data_dir)
    dates = select_dates(manifest["dates"], dates_arg)
    seg_dir = out_dir / "seg"

    prefix = train_prefix(manifest["dates"], cfg.init.train_fraction)
    needed_dates = sorted(set(dates) | (set(prefix) if cfg.init.selector else set()))
    required = []
    for date in needed_dates:
        required += [data_dir / date / "euv.csv", data_dir / date / "mag.csv"]
        for name in cfg.init.external_masks:
            if not (data_dir / date / f"{name}.png").exists():
                required.append(data_dir / date / f"{name}.csv")
    _preflight(required, "segment inputs missing")

    selectors: dict[str, TrainedForest | None] = {}
    if cfg.init.selector:
        selectors = train_selectors(cfg, data_dir, prefix, seed)
        for name, model in sorted(selectors.items()):
            if model is not None:
                save_forest(model, seg_dir / f"selector_{name}.json")

    all_rows = []
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            futures = [
                pool.submit(_segment_one_date, cfg, data_dir, seg_dir, d, selectors)
                for d in dates
            ]
            for f in futures:
                all_rows.extend(f.result())
    else:
        for d in dates:
            all_rows.extend(_segment_one_date(cfg, data_dir, seg_dir, d, selectors))

    all_rows.sort(key=lambda r: (r[0], r[1]))
    lines = ["date,stage,sens,spec,distance,status"]
    lines += [",".join(r) for r in all_rows]
    _atomic_write(seg_dir / "metrics.csv", "\n".join(lines) + "\n")
    return {"dates": dates, "metrics": str(seg_dir / "metrics.csv")}


# ---------------------------------------------------------------------------
# match
# ---------------------------------------------------------------------------


def _model_names(manifest) -> list[str]:
    return [f"m{i + 1:02d}" for i in range(manifest["n_models"])]


def _load_reference(cfg, out_dir, data_dir, date) -> tuple[SegmentationMask, np.ndarray]:
    euv = load_map(data_dir / date / "euv.csv", "euv")
    if cfg.matching.reference == "consensus":
        ref = load_map(data_dir / date / "consensus.csv", "mask")
    else:
        path = Path(out_dir) / "seg" / date / "final.csv"
        if not path.exists():
            raise MissingInputError(
                f"segmentation output missing for {date}: {path} (run segment first)"
            )
        ref = load_map(path, "mask")
    return ref, euv.observed


def _cluster_truth_category_model(cluster, prov: np.ndarray) -> str | None:
    vals = prov[cluster.pixels[:, 0], cluster.pixels[:, 1]]
    vals = vals[vals > 0]
    if vals.size == 0:
        return None
    new_frac = (vals >= NEW_BLOB_ID_BASE).mean()
    return "new" if new_frac > 0.5 else "matched"


def _cluster_truth_category_ref(cluster, ids: np.ndarray, hole_clusters, removed) -> str | None:
    vals = ids[cluster.pixels[:, 0], cluster.pixels[:, 1]]
    vals = vals[vals > 0]
    if vals.size == 0:
        return None
    removed_set = set(removed)
    removed_frac = np.mean(
        [hole_clusters.get(str(int(v)), -1) in removed_set for v in vals]
    )
    return "missing" if removed_frac > 0.5 else "matched"


def _cluster_desc(cluster, truth: str | None) -> dict:
    desc = {
        "polarity": "+" if cluster.polarity > 0 else "-",
        "n_holes": len(cluster.holes),
        "image_area": cluster.image_area,
        "spherical_area": cluster.physical_area,
        "centroid_lat": cluster.centroid.lat,
        "centroid_lon": cluster.centroid.lon,
    }
    if truth is not None:
        desc["truth"] = truth
    return desc


def fit_mahalanobis_gate(cfg, data_dir, dates, grid) -> tuple[MahalanobisModel, dict]:
    """Estimate the pair-feature gate from ground-truth matched pairs."""
    from .matchcluster import cluster_by_distance, pair_features

    threshold = cfg.matching.mahalanobis_threshold
    features = []
    manifest = load_manifest(data_dir)
    for date in dates:
        ddir = data_dir / date
        consensus = load_map(ddir / "consensus.csv", "mask")
        euv = load_map(ddir / "euv.csv", "euv")
        ids = load_int_field(ddir / "consensus_ids.csv")
        ref_pre = preprocess_mask(
            consensus, grid, cfg.matching.close_radius, cfg.matching.polar_lat, euv.observed
        )
        ref_holes = extract_holes(ref_pre)
        for model_name in _model_names(manifest):
            prov_path = ddir / "truth" / f"{model_name}_prov.csv"
            if not prov_path.exists():
                continue
            prov = load_int_field(prov_path)
            model_mask = load_map(ddir / "models" / f"{model_name}.csv", "model")
            model_pre = preprocess_mask(
                model_mask, grid, cfg.matching.close_radius, cfg.matching.polar_lat, euv.observed
            )
            model_holes = extract_holes(model_pre)
            for polarity in (1, -1):
                ref_clusters = cluster_by_distance(
                    [h for h in ref_holes if h.polarity == polarity],
                    cfg.matching.threshold_arc,
                    grid,
                )
                model_clusters = cluster_by_distance(
                    [h for h in model_holes if h.polarity == polarity],
                    cfg.matching.threshold_arc,
                    grid,
                )
                for mc in model_clusters:
                    vals = prov[mc.pixels[:, 0], mc.pixels[:, 1]]
                    vals = vals[(vals > 0) & (vals < NEW_BLOB_ID_BASE)]
                    if vals.size == 0:
                        continue
                    sources = set(int(v) for v in np.unique(vals))
                    best, best_count = None, 0
                    for rc in ref_clusters:
                        rvals = ids[rc.pixels[:, 0], rc.pixels[:, 1]]
                        count = int(np.isin(rvals, list(sources)).sum())
                        if count > best_count:
                            best, best_count = rc, count
                    if best is not None:
                        features.append(pair_features(best, mc, grid))
    if len(features) >= 3:
        try:
            gate = MahalanobisModel.fit(np.array(features), threshold=threshold)
            info = {"method": "fit", "n_pairs": len(features)}
        except ValueError:
            gate = MahalanobisModel(threshold=threshold)
            info = {"method": "default", "n_pairs": len(features), "note": "degenerate fit"}
    else:
        gate = MahalanobisModel(threshold=threshold)
        info = {"method": "default", "n_pairs": len(features)}
    info.update(
        {
            "mean": [float(v) for v in gate.mean],
            "covariance": [[float(v) for v in row] for row in gate.covariance],
            "threshold": gate.threshold,
        }
    )
    return gate, info


def _match_one_date(cfg, out_dir, data_dir, match_dir, date, manifest, gate):
    grid = GridSpec(**{k: manifest["grid"][k] for k in ("n_cols", "n_rows")})
    ref, observed = _load_reference(cfg, out_dir, data_dir, date)
    ref_pre = preprocess_mask(
        ref, grid, cfg.matching.close_radius, cfg.matching.polar_lat, observed
    )
    ddir = data_dir / date
    ids_path = ddir / "consensus_ids.csv"
    ids = load_int_field(ids_path) if ids_path.exists() else None
    meta_path = ddir / "meta.json"
    meta = json.loads(meta_path.read_text()) if meta_path.exists() else None
    mcfg = MatchingConfig(threshold_arc=cfg.matching.threshold_arc, mahalanobis=gate)

    for model_name in _model_names(manifest):
        model_path = ddir / "models" / f"{model_name}.csv"
        if not model_path.exists():
            raise MissingInputError(f"model mask missing: {model_path}")
        model_mask = load_map(model_path, "model")
        model_pre = preprocess_mask(
            model_mask, grid, cfg.matching.close_radius, cfg.matching.polar_lat, observed
        )
        result = match_one_model(ref_pre, model_pre, mcfg)

        prov = None
        truth_meta = None
        prov_path = ddir / "truth" / f"{model_name}_prov.csv"
        if prov_path.exists() and ids is not None and meta is not None:
            prov = load_int_field(prov_path)
            truth_meta = json.loads((ddir / "truth" / f"{model_name}.json").read_text())

        def model_truth(cluster):
            return _cluster_truth_category_model(cluster, prov) if prov is not None else None

        def ref_truth(cluster):
            if prov is None:
                return None
            return _cluster_truth_category_ref(
                cluster, ids, meta["hole_clusters"], truth_meta["removed_cluster_ids"]
            )

        features = extract_features(result, grid, cfg.forest.spherical_areas)
        payload = {
            "date": date,
            "model": model_name,
            "matched": [
                {
                    "ref": _cluster_desc(p.ref, ref_truth(p.ref)),
                    "model": _cluster_desc(p.model, model_truth(p.model)),
                    "cost_microarc": p.cost_microarc,
                    "cost_arc": p.cost_microarc / 1e6,
                    "overlap_pixels": p.overlap_pixels,
                    "overlap_area": p.overlap_area,
                }
                for p in result.matched
            ],
            "new": [_cluster_desc(c, model_truth(c)) for c in result.new_clusters],
            "missing": [_cluster_desc(c, ref_truth(c)) for c in result.missing_clusters],
            "counts": {
                "matched": len(result.matched),
                "new": len(result.new_clusters),
                "missing": len(result.missing_clusters),
            },
            "total_cost_microarc": sum(p.cost_microarc for p in result.matched),
            "features": {
                "newN": features.new_count,
                "newA": features.new_area,
                "missN": features.missing_count,
                "missA": features.missing_area,
                "overA": features.over_area,
                "sameA": features.same_area,
            },
        }
        _write_json(match_dir / date / f"{model_name}.json", payload)
        render_matching_overlay(
            ref_pre, model_pre, _prepared(match_dir / date / f"{model_name}_overlay.png")
        )


def stage_match(
    cfg: PipelineConfig, out_dir, dates_arg: str | None = None, jobs: int = 1, seed: int = 0
) -> dict:
    out_dir = Path(out_dir)
    data_dir = data_dir_of(cfg, out_dir)
    manifest = load_manifest(data_dir)
    dates = select_dates(manifest["dates"], dates_arg)
    match_dir = out_dir / "match"
    grid = GridSpec(**{k: manifest["grid"][k] for k in ("n_cols", "n_rows")})
    if not _model_names(manifest):
        print("warning: dataset declares no model maps; nothing to match")
        return {"dates": [], "match_dir": str(match_dir)}

    required = []
    for date in dates:
        required.append(data_dir / date / "euv.csv")
        required += [
            data_dir / date / "models" / f"{name}.csv" for name in _model_names(manifest)
        ]
        if cfg.matching.reference == "consensus":
            required.append(data_dir / date / "consensus.csv")
        else:
            required.append(out_dir / "seg" / date / "final.csv")
    _preflight(required, "match inputs missing")

    if cfg.matching.fit_mahalanobis:
        prefix = train_prefix(manifest["dates"], cfg.init.train_fraction)
        gate, info = fit_mahalanobis_gate(cfg, data_dir, prefix, grid)
    else:
        gate = MahalanobisModel(threshold=cfg.matching.mahalanobis_threshold)
        info = {
            "method": "default",
            "mean": [float(v) for v in gate.mean],
            "covariance": [[float(v) for v in row] for row in gate.covariance],
            "threshold": gate.threshold,
        }
    _write_json(match_dir / "mahalanobis.json", info)

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            futures = [
                pool.submit(
                    _match_one_date, cfg, out_dir, data_dir, match_dir, d, manifest, gate
                )
                for d in dates
            ]
            for f in futures:
                f.result()
    else:
        for d in dates:
            _match_one_date(cfg, out_dir, data_dir, match_dir, d, manifest, gate)
    return {"dates": dates, "match_dir": str(match_dir)}


# ---------------------------------------------------------------------------
# classifier
# ---------------------------------------------------------------------------


def _gather_feature_rows(cfg, out_dir, data_dir, manifest):
    rows = []
    include_same = cfg.forest.include_same_area
    for date in manifest["dates"]:
        for model_name in _model_names(manifest):
            jpath = Path(out_dir) / "match" / date / f"{model_name}.json"
            if not jpath.exists():
                raise MissingInputError(f"match result missing: {jpath} (run match first)")
            payload = json.loads(jpath.read_text())
            f = payload["features"]
            vec = [f["newN"], f["newA"], f["missN"], f["missA"], f["overA"]]
            if include_same:
                vec.append(f["sameA"])
            truth_path = data_dir / date / "truth" / f"{model_name}.json"
            label = None
            if truth_path.exists():
                label = 1 if json.loads(truth_path.read_text())["label"] == "good" else 0
            rows.append((date, model_name, np.array(vec, dtype=float), label))
    return rows


def stage_train_classifier(cfg: PipelineConfig, out_dir, seed: int = 0) -> dict:
    out_dir = Path(out_dir)
    data_dir = data_dir_of(cfg, out_dir)
    manifest = load_manifest(data_dir)
    rows = _gather_feature_rows(cfg, out_dir, data_dir, manifest)
    labeled = [r for r in rows if r[3] is not None]
    if len({r[3] for r in labeled}) < 2:
        raise PipelineError("classifier training needs both good and bad labels")
    X = np.array([r[2] for r in labeled])
    y = np.array([r[3] for r in labeled])

    rng = np.random.default_rng(derived_seed(seed, _SEED_SPLIT))
    perm = rng.permutation(len(labeled))
    n_train = int(round(cfg.forest.train_fraction * len(labeled)))
    train_idx = np.sort(perm[:n_train])
    test_idx = np.sort(perm[n_train:])

    fc = ForestConfig(
        n_trees=cfg.forest.n_trees,
        max_depth=cfg.forest.max_depth,
        min_leaf=cfg.forest.min_leaf,
        tie_label=0,
        seed=derived_seed(seed, _SEED_FOREST),
    )
    model = train(X[train_idx], y[train_idx], fc)
    cdir = out_dir / "classifier"
    save_forest(model, _prepared(cdir / "model.json"))

    grid_points = [(t, d) for t in cfg.forest.oob_trees for d in cfg.forest.oob_depths]
    base = ForestConfig(tie_label=0, min_leaf=cfg.forest.min_leaf, seed=derived_seed(seed, _SEED_OOB))
    _, surface = tune_oob(X[train_idx], y[train_idx], grid_points, base)
    surf_lines = ["n_trees,max_depth,oob_error"]
    surf_lines += [f"{t},{d},{e:.17g}" for t, d, e in surface]
    _atomic_write(cdir / "oob_surface.csv", "\n".join(surf_lines) + "\n")

    split_of = {}
    for k in train_idx:
        split_of[k] = "train"
    for k in test_idx:
        split_of[k] = "test"
    pred_lines = ["date,model,split,truth,predicted,vote_fraction"]
    confusion = {("good", "good"): 0, ("good", "bad"): 0, ("bad", "good"): 0, ("bad", "bad"): 0}
    for k, (date, model_name, vec, label) in enumerate(labeled):
        pred, frac = model.predict(vec)
        truth_s = "good" if label == 1 else "bad"
        pred_s = "good" if pred == 1 else "bad"
        pred_lines.append(
            f"{date},{model_name},{split_of[k]},{truth_s},{pred_s},{frac:.6f}"
        )
        if split_of[k] == "test":
            confusion[(truth_s, pred_s)] += 1
    _atomic_write(cdir / "predictions.csv", "\n".join(pred_lines) + "\n")

    n_test = len(test_idx)
    correct = confusion[("good", "good")] + confusion[("bad", "bad")]
    accuracy = correct / n_test if n_test else float("nan")
    conf_lines = [
        "truth,predicted_bad,predicted_good",
        f"bad,{confusion[('bad', 'bad')]},{confusion[('bad', 'good')]}",
        f"good,{confusion[('good', 'bad')]},{confusion[('good', 'good')]}",
        f"# held-out accuracy,{accuracy:.6f},n={n_test}",
    ]
    _atomic_write(cdir / "confusion.csv", "\n".join(conf_lines) + "\n")

    names = FEATURE_NAMES if cfg.forest.include_same_area else FEATURE_NAMES[:5]
    imp_lines = ["feature,importance"]
    imp_lines += [f"{n},{v:.17g}" for n, v in zip(names, model.importances)]
    _atomic_write(cdir / "importances.csv", "\n".join(imp_lines) + "\n")
    return {"accuracy": accuracy, "oob_error": model.oob_error, "n_test": n_test}


def stage_classify(cfg: PipelineConfig, out_dir) -> dict:
    out_dir = Path(out_dir)
    data_dir = data_dir_of(cfg, out_dir)
    manifest = load_manifest(data_dir)
    model_path = out_dir / "classifier" / "model.json"
    if not model_path.exists():
        raise MissingInputError(f"classifier model missing: {model_path} (train first)")
    model = load_forest(model_path)
    rows = _gather_feature_rows(cfg, out_dir, data_dir, manifest)
    lines = ["date,model,predicted,vote_fraction,truth"]
    for date, model_name, vec, label in rows:
        pred, frac = model.predict(vec)
        truth_s = "" if label is None else ("good" if label == 1 else "bad")
        pred_s = "good" if pred == 1 else "bad"
        lines.append(f"{date},{model_name},{pred_s},{frac:.6f},{truth_s}")
    path = out_dir / "classifier" / "classify_predictions.csv"
    _atomic_write(path, "\n".join(lines) + "\n")
    return {"predictions": str(path)}


# ---------------------------------------------------------------------------
# tune
# ---------------------------------------------------------------------------


def stage_tune(
    cfg: PipelineConfig, out_dir, seed: int = 0, max_images: int = 6, max_evals: int = 50
) -> dict:
    out_dir = Path(out_dir)
    data_dir = data_dir_of(cfg, out_dir)
    manifest = load_manifest(data_dir)
    dates = train_prefix(manifest["dates"], cfg.init.train_fraction)[:max_images]
    selectors = (
        train_selectors(cfg, data_dir, dates, seed) if cfg.init.selector else {}
    )
    train_set = []
    for date in dates:
        euv, mag, consensus, ext = _load_date_inputs(data_dir, date, cfg.init.external_masks)
        if consensus is None or not consensus.hole_mask().any():
            continue
        selected = []
        for name, mask in _init_sources(cfg, euv, mag, ext).items():
            holes, feats, _ = _candidate_rows(mask, euv, mag, None)
            model = selectors.get(name)
            kept = (
                select_candidates(holes, feats, model).kept
                if (model is not None and holes)
                else holes
            )
            selected.append(mask_from_holes(kept, euv.grid, euv.observed))
        train_set.append((euv, mag, union_masks(selected, mag=mag), consensus))
    if not train_set:
        raise MissingInputError("no usable training images for tuning")
    result = tune(train_set, params=cfg.levelset, max_evals=max_evals)
    payload = {
        "alpha": result.alpha,
        "sigma": result.sigma,
        "warning": result.warning,
        "per_image": [
            {
                "alpha": r.alpha,
                "sigma": r.sigma,
                "objective": r.objective,
                "initial_objective": r.initial_objective,
                "evaluations": r.evaluations,
                "converged": r.converged,
            }
            for r in result.per_image
        ],
    }
    _write_json(out_dir / "tuned.json", payload)
    return payload


# ---------------------------------------------------------------------------
# eval
# ---------------------------------------------------------------------------


def _quartiles(values):
    arr = np.array(values, dtype=float)
    return (
        float(arr.min()),
        float(np.percentile(arr, 25)),
        float(np.median(arr)),
        float(np.percentile(arr, 75)),
        float(arr.max()),
    )


def stage_eval(cfg: PipelineConfig, out_dir) -> dict:
    out_dir = Path(out_dir)
    data_dir = data_dir_of(cfg, out_dir)
    manifest = load_manifest(data_dir)
    report_dir = out_dir / "report"

    missing_stages = []
    metrics_path = out_dir / "seg" / "metrics.csv"
    if not metrics_path.exists():
        missing_stages.append(f"segment ({metrics_path})")
    match_dir = out_dir / "match"
    if not match_dir.exists():
        missing_stages.append(f"match ({match_dir})")
    cls_dir = out_dir / "classifier"
    if not (cls_dir / "confusion.csv").exists():
        missing_stages.append(f"train-classifier ({cls_dir / 'confusion.csv'})")
    if missing_stages:
        raise MissingInputError("missing pipeline stages: " + "; ".join(missing_stages))

    # segmentation distance table
    seg_rows = metrics_path.read_text().strip().splitlines()[1:]
    by_stage: dict[str, list[float]] = {"init": [], "final": []}
    flagged = 0
    for line in seg_rows:
        date, stage, sens, spec, dist, status = line.split(",")
        if status == "ok":
            by_stage.setdefault(stage, []).append(float(dist))
        else:
            flagged += 1
    seg_lines = ["stage,min,q25,median,q75,max,n"]
    seg_summary = {}
    for stage in ("init", "final"):
        vals = by_stage.get(stage, [])
        if vals:
            q = _quartiles(vals)
            seg_summary[stage] = q
            seg_lines.append(
                f"{stage},{q[0]:.6f},{q[1]:.6f},{q[2]:.6f},{q[3]:.6f},{q[4]:.6f},{len(vals)}"
            )
    _atomic_write(report_dir / "segmentation_quartiles.csv", "\n".join(seg_lines) + "\n")

    # matching confusion over per-cluster truth labels
    categories = ("matched", "new", "missing")
    confusion = {(t, p): 0 for t in categories for p in categories}
    n_clusters = 0
    for date in manifest["dates"]:
        for model_name in _model_names(manifest):
            jpath = match_dir / date / f"{model_name}.json"
            if not jpath.exists():
                continue
            payload = json.loads(jpath.read_text())
            for pair in payload["matched"]:
                for side in ("ref", "model"):
                    truth = pair[side].get("truth")
                    if truth:
                        confusion[(truth, "matched")] += 1
                        n_clusters += 1
            for desc in payload["new"]:
                truth = desc.get("truth")
                if truth:
                    confusion[(truth, "new")] += 1
                    n_clusters += 1
            for desc in payload["missing"]:
                truth = desc.get("truth")
                if truth:
                    confusion[(truth, "missing")] += 1
                    n_clusters += 1
    match_lines = ["truth\\predicted," + ",".join(categories)]
    for t in categories:
        match_lines.append(t + "," + ",".join(str(confusion[(t, p)]) for p in categories))
    correct = sum(confusion[(c, c)] for c in categories)
    match_accuracy = correct / n_clusters if n_clusters else float("nan")
    match_lines.append(f"# per-cluster accuracy,{match_accuracy:.6f},n={n_clusters}")
    _atomic_write(report_dir / "matching_confusion.csv", "\n".join(match_lines) + "\n")

    # classification artifacts are copied verbatim into the report
    class_conf = (cls_dir / "confusion.csv").read_text()
    _atomic_write(report_dir / "classification_confusion.csv", class_conf)
    oob = (cls_dir / "oob_surface.csv").read_text()
    _atomic_write(report_dir / "oob_surface.csv", oob)
    importances = (cls_dir / "importances.csv").read_text()
    _atomic_write(report_dir / "importances.csv", importances)

    lines = ["# Pipeline evaluation report", ""]
    lines.append("## Segmentation distance from ideal (sens, spec) = (1, 1)")
    lines.append("")
    lines.append("| stage | min | 25% | median | 75% | max |")
    lines.append("|---|---|---|---|---|---|")
    for stage in ("init", "final"):
        if stage in seg_summary:
            q = seg_summary[stage]
            lines.append(
                f"| {stage} | {q[0]:.4f} | {q[1]:.4f} | {q[2]:.4f} | {q[3]:.4f} | {q[4]:.4f} |"
            )
    if flagged:
        lines.append("")
        lines.append(f"{flagged} metric rows were flagged (no consensus or empty truth).")
    lines.append("")
    lines.append("## Cluster matching confusion (per-cluster truth)")
    lines.append("")
    lines.append("| truth \\ predicted | matched | new | missing |")
    lines.append("|---|---|---|---|")
    for t in categories:
        lines.append(
            f"| {t} | {confusion[(t, 'matched')]} | {confusion[(t, 'new')]} | {confusion[(t, 'missing')]} |"
        )
    lines.append("")
    lines.append(f"Per-cluster label accuracy: {match_accuracy:.4f} over {n_clusters} clusters.")
    lines.append("")
    lines.append("## Map classification (held-out)")
    lines.append("")
    lines.append("```")
    lines.append(class_conf.strip())
    lines.append("```")
    lines.append("")
    lines.append("## Random-forest OOB tuning surface")
    lines.append("")
    lines.append("```")
    lines.append(oob.strip())
    lines.append("```")
    lines.append("")
    lines.append("## Feature importances")
    lines.append("")
    lines.append("```")
    lines.append(importances.strip())
    lines.append("```")
    _atomic_write(report_dir / "report.md", "\n".join(lines) + "\n")
    return {
        "segmentation": seg_summary,
        "matching_accuracy": match_accuracy,
        "report": str(report_dir / "report.md"),
    }
