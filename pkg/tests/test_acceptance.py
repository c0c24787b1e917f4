"""Acceptance suite: every release criterion at its stated tolerance.

Each test prints one ``[PASS]``/``[FAIL]`` line (run pytest with ``-s`` to
see them all).  Criteria 4-6 share one full pipeline run over the default
synthetic corpus (20 dates at 360x180, 12 model maps per date).
"""

import itertools
import json
import time
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

from chpipe.config import PipelineConfig
from chpipe import pipeline
from chpipe.forest import ForestConfig, save_forest, train
from chpipe.geometry import (
    GridSpec,
    SpherePoint,
    geodesic_distance,
    row_areas,
    set_distance,
)
from chpipe.levelset import (
    LevelSetParams,
    gaussian_smooth,
    neutral_line_mask,
    segment,
    tune,
)
from chpipe.maps import (
    Label,
    SegmentationMask,
    SynopticMap,
    binary_close,
    label_components,
)
from chpipe.matchcluster import solve_assignment
from chpipe.initseg import union_masks


def _criterion(name: str, ok: bool, detail: str = ""):
    print(f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}")
    assert ok, f"{name}: {detail}"


@pytest.fixture(scope="module")
def default_run(tmp_path_factory):
    """synth -> segment -> match -> train-classifier -> eval, default corpus."""
    out = tmp_path_factory.mktemp("acceptance_run")
    cfg = PipelineConfig()
    timings = {}
    t0 = time.monotonic()
    pipeline.stage_synth(cfg, out, seed=0)
    timings["synth"] = time.monotonic() - t0
    t0 = time.monotonic()
    pipeline.stage_segment(cfg, out, jobs=1, seed=0)
    timings["segment"] = time.monotonic() - t0
    t0 = time.monotonic()
    pipeline.stage_match(cfg, out, jobs=1, seed=0)
    timings["match"] = time.monotonic() - t0
    t0 = time.monotonic()
    train_summary = pipeline.stage_train_classifier(cfg, out, seed=0)
    timings["train"] = time.monotonic() - t0
    eval_summary = pipeline.stage_eval(cfg, out)
    return {
        "out": Path(out),
        "cfg": cfg,
        "timings": timings,
        "train": train_summary,
        "eval": eval_summary,
    }


def test_criterion_1_assignment_optimality():
    """1000 random integer cost matrices per size 2..6, exact optimum, <10 s."""
    rng = np.random.default_rng(2024)
    t0 = time.monotonic()
    checked = 0
    for n in range(2, 7):
        perms = np.array(list(itertools.permutations(range(n))))
        for _ in range(1000):
            cost = rng.integers(0, 1_000_000, size=(n, n))
            _, total = solve_assignment(cost)
            brute = cost[np.arange(n)[None, :], perms].sum(axis=1).min()
            assert total == brute
            checked += 1
    elapsed = time.monotonic() - t0
    _criterion(
        "criterion 1 (assignment optimality)",
        checked == 5000 and elapsed < 10.0,
        f"{checked} instances exact, {elapsed:.1f}s",
    )


def test_criterion_2_sphere_area_conservation():
    """Grid pixel areas must sum to the full sphere area 4*pi*R^2."""
    grid = GridSpec(n_cols=360, n_rows=180)
    total = grid.n_cols * row_areas(grid).sum()
    rel_err = abs(total - 4 * np.pi) / (4 * np.pi)
    # documented midpoint-rule alternative stays within its looser bound
    lats = np.deg2rad(90 - (np.arange(180) + 0.5))
    midpoint = 360 * (2 * np.pi / 360) * (np.pi / 180) * np.cos(lats).sum()
    mid_err = abs(midpoint - 4 * np.pi) / (4 * np.pi)
    _criterion(
        "criterion 2 (sphere area conservation)",
        rel_err <= 1e-12 and mid_err <= 1e-3,
        f"sine-difference rel err {rel_err:.2e}, midpoint rel err {mid_err:.2e}",
    )


def test_criterion_3_neutral_line_barrier():
    """Expanding fronts never cross the neutral line on 50 seeded fixtures."""
    grid = GridSpec(n_cols=120, n_rows=60)
    rr, cc = np.mgrid[0:60, 0:120]
    violations = 0
    for seed in range(50):
        rng = np.random.default_rng(seed)
        r0 = int(rng.integers(20, 40))
        c0 = int(rng.integers(0, 120))
        ring_radius = int(rng.integers(10, 16))
        amp = float(rng.uniform(30, 60))
        dc = (cc - c0 + 60) % 120 - 60
        region = (rr - r0) ** 2 + dc**2 <= ring_radius**2
        flux = np.where(region, amp, -amp / 2)
        observed = np.ones(grid.shape, bool)
        mag = SynopticMap(grid=grid, values=flux, observed=observed, kind="magnetic")
        euv = SynopticMap(
            grid=grid, values=np.full(grid.shape, 100.0), observed=observed, kind="euv"
        )
        seed_disc = (rr - r0) ** 2 + dc**2 <= int(rng.integers(4, 7)) ** 2
        init = SegmentationMask(
            grid=grid,
            labels=np.where(seed_disc, np.uint8(Label.POSITIVE), np.uint8(Label.BACKGROUND)),
        )
        params = LevelSetParams(alpha=-1.5, n_iters=250)
        out = segment(euv, mag, init, params)
        hole = out.hole_mask()
        p = neutral_line_mask(mag)
        comp, _ = label_components(~p)
        inside_ids = np.unique(comp[seed_disc & ~p])
        allowed = np.isin(comp, inside_ids[inside_ids > 0]) | p
        if (hole & ~allowed).any():
            violations += 1
    _criterion(
        "criterion 3 (neutral-line barrier)",
        violations == 0,
        f"0 expected, {violations} fixtures crossed the barrier",
    )


def test_criterion_4_segmentation_quality(default_run):
    """Default corpus: median final distance <= 0.15, better than the init."""
    out = default_run["out"]
    rows = (out / "seg" / "metrics.csv").read_text().strip().splitlines()[1:]
    dists = {"init": [], "final": []}
    for line in rows:
        _, stage, _, _, dist, status = line.split(",")
        if status == "ok":
            dists[stage].append(float(dist))
    med_init = float(np.median(dists["init"]))
    med_final = float(np.median(dists["final"]))
    runtime = default_run["timings"]["synth"] + default_run["timings"]["segment"]
    ok = med_final <= 0.15 and med_final < med_init and runtime < 300.0
    _criterion(
        "criterion 4 (segmentation quality proxy)",
        ok,
        f"median final {med_final:.4f} (<=0.15), init {med_init:.4f}, "
        f"runtime {runtime:.0f}s (<300)",
    )


def test_criterion_5_matching_accuracy(default_run):
    """Per-cluster matched/new/missing accuracy >= 90% plus conservation."""
    out = default_run["out"]
    accuracy = default_run["eval"]["matching_accuracy"]
    conserved = True
    n_results = 0
    for jpath in sorted((out / "match").rglob("m*.json")):
        payload = json.loads(jpath.read_text())
        if "counts" not in payload:
            continue
        n_results += 1
        c = payload["counts"]
        if c["matched"] != len(payload["matched"]):
            conserved = False
        if c["new"] != len(payload["new"]) or c["missing"] != len(payload["missing"]):
            conserved = False
        for pair in payload["matched"]:
            if pair["ref"]["polarity"] != pair["model"]["polarity"]:
                conserved = False
    _criterion(
        "criterion 5 (matching accuracy proxy)",
        accuracy >= 0.90 and conserved and n_results == 240,
        f"per-cluster accuracy {accuracy:.4f} (>=0.90), "
        f"conservation on {n_results} results: {conserved}",
    )


def test_criterion_6_classification(default_run):
    """Held-out accuracy >= 90%, reproducible OOB surface, importances."""
    out = default_run["out"]
    cfg = default_run["cfg"]
    accuracy = default_run["train"]["accuracy"]

    surface_before = (out / "classifier" / "oob_surface.csv").read_bytes()
    pipeline.stage_train_classifier(cfg, out, seed=0)
    surface_after = (out / "classifier" / "oob_surface.csv").read_bytes()
    reproducible = surface_before == surface_after

    importances = {}
    for line in (out / "classifier" / "importances.csv").read_text().strip().splitlines()[1:]:
        name, value = line.split(",")
        importances[name] = float(value)
    total = sum(importances.values())
    area_rank = max(importances["missA"], importances["overA"]) > max(
        importances["newN"], importances["missN"]
    )
    ok = (
        accuracy >= 0.90
        and reproducible
        and abs(total - 1.0) <= 1e-9
        and area_rank
    )
    _criterion(
        "criterion 6 (classification proxy)",
        ok,
        f"held-out accuracy {accuracy:.4f} (>=0.90), OOB surface bit-identical: "
        f"{reproducible}, importance sum {total:.12f}, area-feature rank: {area_rank}",
    )


def test_criterion_7_pattern_search_contract():
    """Tuned objective never exceeds the initial objective; bounds respected."""
    small = GridSpec(n_cols=64, n_rows=48)
    rr, cc = np.mgrid[0:48, 0:64]
    train_set = []
    for seed in range(3):
        rng = np.random.default_rng(seed)
        blob = (rr - 24) ** 2 + (cc - 20 * (seed + 1) % 50 - 8) ** 2 <= 9**2
        euv_vals = (
            160.0
            - 100.0 * gaussian_smooth(blob.astype(float), 1.5, 15)
            + rng.normal(0, 0.5, small.shape)
        )
        euv = SynopticMap(
            grid=small, values=np.abs(euv_vals), observed=np.ones(small.shape, bool), kind="euv"
        )
        flux = np.where(blob, 40.0, -5.0) + rng.normal(0, 0.5, small.shape)
        mag = SynopticMap(
            grid=small, values=flux, observed=np.ones(small.shape, bool), kind="magnetic"
        )
        over = gaussian_smooth(blob.astype(float), 2.0, 15) > 0.05
        init = SegmentationMask(
            grid=small,
            labels=np.where(over, np.uint8(Label.POSITIVE), np.uint8(Label.BACKGROUND)),
        )
        consensus = SegmentationMask(
            grid=small,
            labels=np.where(blob, np.uint8(Label.POSITIVE), np.uint8(Label.BACKGROUND)),
        )
        train_set.append((euv, mag, init, consensus))
    result = tune(train_set, params=LevelSetParams(n_iters=40), max_evals=40)
    monotone = all(r.objective <= r.initial_objective for r in result.per_image)
    in_bounds = -3.0 <= result.alpha <= 3.0 and 0.2 <= result.sigma <= 1.0
    per_image_bounds = all(
        -3.0 <= r.alpha <= 3.0 and 0.2 <= r.sigma <= 1.0 for r in result.per_image
    )
    _criterion(
        "criterion 7 (pattern-search contract)",
        monotone and in_bounds and per_image_bounds,
        f"{len(result.per_image)}/{len(result.per_image)} images monotone, "
        f"alpha={result.alpha:.3f}, sigma={result.sigma:.3f}",
    )


def test_criterion_8_determinism(tmp_path):
    """Identical config+seed produce byte-identical artifact trees."""
    cfg = PipelineConfig()
    cfg = replace(
        cfg,
        synth=replace(cfg.synth, n_dates=5, n_cols=180, n_rows=90, n_models=6, seed=11),
        levelset=replace(cfg.levelset, n_iters=120),
    )

    def run(out):
        pipeline.stage_synth(cfg, out, seed=11)
        pipeline.stage_segment(cfg, out, jobs=1, seed=11)
        pipeline.stage_match(cfg, out, jobs=1, seed=11)
        pipeline.stage_train_classifier(cfg, out, seed=11)
        pipeline.stage_eval(cfg, out)

    out_a = tmp_path / "a"
    out_b = tmp_path / "b"
    run(out_a)
    run(out_b)

    def tree(root):
        return {
            str(p.relative_to(root)): p.read_bytes()
            for p in sorted(root.rglob("*"))
            if p.is_file()
        }

    ta, tb = tree(out_a), tree(out_b)
    same_names = ta.keys() == tb.keys()
    diffs = [k for k in ta if same_names and ta[k] != tb[k]]
    _criterion(
        "criterion 8 (end-to-end determinism)",
        same_names and not diffs,
        f"{len(ta)} files compared, differing: {diffs[:5]}",
    )


def test_criterion_9_invariant_suites():
    """Compact re-assertion of the per-module invariant properties."""
    rng = np.random.default_rng(99)
    grid = GridSpec(n_cols=90, n_rows=45)

    # geometry: symmetry, triangle inequality, wrap invariance
    for _ in range(20):
        pts = [
            SpherePoint(lat=float(rng.uniform(-89, 89)), lon=float(rng.uniform(0, 360)))
            for _ in range(3)
        ]
        ab = geodesic_distance(pts[0], pts[1])
        ba = geodesic_distance(pts[1], pts[0])
        assert abs(ab - ba) <= 1e-12
        ac = geodesic_distance(pts[0], pts[2])
        bc = geodesic_distance(pts[1], pts[2])
        assert ac <= ab + bc + 1e-9
    base_a = np.array([[20, 85], [20, 86], [21, 85]])
    base_b = np.array([[30, 5], [30, 6]])
    d0 = set_distance(base_a, base_b, grid)
    for shift in (7, 40, 88):
        a2 = np.column_stack([base_a[:, 0], (base_a[:, 1] + shift) % 90])
        b2 = np.column_stack([base_b[:, 0], (base_b[:, 1] + shift) % 90])
        assert abs(set_distance(a2, b2, grid) - d0) <= 1e-9

    # morphology idempotence
    for _ in range(5):
        mask = rng.random((20, 30)) > 0.7
        closed = binary_close(mask, 1)
        np.testing.assert_array_equal(binary_close(closed, 1), closed)
        assert (closed | mask == closed).all()

    # union algebra on random masks
    mag = SynopticMap(
        grid=grid,
        values=np.tile(np.where(np.arange(90) < 45, 2.0, -2.0), (45, 1)),
        observed=np.ones(grid.shape, bool),
        kind="magnetic",
    )
    for _ in range(3):
        ms = [
            SegmentationMask(
                grid=grid, labels=rng.integers(0, 4, grid.shape).astype(np.uint8)
            )
            for _ in range(3)
        ]
        u = lambda *xs: union_masks(list(xs), mag=mag)
        np.testing.assert_array_equal(u(ms[0], ms[1]).labels, u(ms[1], ms[0]).labels)
        np.testing.assert_array_equal(
            u(u(ms[0], ms[1]), ms[2]).labels, u(ms[0], u(ms[1], ms[2])).labels
        )
        np.testing.assert_array_equal(u(ms[0], ms[0]).labels, ms[0].labels)

    # forest determinism and monotone-transform invariance
    X = rng.normal(size=(120, 3))
    y = (X[:, 0] + 0.5 * X[:, 1] > 0).astype(int)
    cfg = ForestConfig(n_trees=8, max_depth=6, seed=5)
    m1, m2 = train(X, y, cfg), train(X, y, cfg)
    np.testing.assert_array_equal(m1.predict_rows(X), m2.predict_rows(X))
    assert m1.oob_error == m2.oob_error
    np.testing.assert_array_equal(m1.importances, m2.importances)
    X3 = X.copy()
    X3[:, 2] = X3[:, 2] ** 3
    m3 = train(X3, y, cfg)
    np.testing.assert_array_equal(m1.predict_rows(X), m3.predict_rows(X3))

    # feature additivity across polarities
    from chpipe.classify import extract_features
    from chpipe.matchcluster import MatchingConfig, match_one_model

    big = GridSpec(n_cols=360, n_rows=180)

    def disc_mask(discs):
        labels = np.zeros(big.shape, dtype=np.uint8)
        rr, cc = np.mgrid[0:180, 0:360]
        for r0, c0, rad, pol in discs:
            inside = (rr - r0) ** 2 + (cc - c0) ** 2 <= rad**2
            labels[inside] = Label.POSITIVE if pol > 0 else Label.NEGATIVE
        return SegmentationMask(grid=big, labels=labels)

    ref = disc_mask([(60, 40, 5, 1), (100, 200, 6, -1), (140, 300, 4, -1)])
    model = disc_mask([(60, 44, 5, 1), (100, 205, 5, -1)])
    whole = match_one_model(ref, model, MatchingConfig())
    f_whole = extract_features(whole, big)
    from chpipe.matchcluster import MatchResult

    parts = []
    for polarity in (1, -1):
        parts.append(
            extract_features(
                MatchResult(
                    matched=tuple(p for p in whole.matched if p.ref.polarity == polarity),
                    new_clusters=tuple(
                        c for c in whole.new_clusters if c.polarity == polarity
                    ),
                    missing_clusters=tuple(
                        c for c in whole.missing_clusters if c.polarity == polarity
                    ),
                ),
                big,
            )
        )
    assert f_whole.new_count == sum(p.new_count for p in parts)
    assert f_whole.missing_count == sum(p.missing_count for p in parts)
    assert abs(f_whole.same_area - sum(p.same_area for p in parts)) <= 1e-9
    assert abs(f_whole.over_area - sum(p.over_area for p in parts)) <= 1e-9

    _criterion(
        "criterion 9 (invariant suites)",
        True,
        "geometry, morphology, union algebra, forest, feature additivity",
    )
