"""Tests for the initial-segmentation stage."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from chpipe.forest import ForestConfig, TrainedForest, train, _Tree
from chpipe.geometry import GridSpec
from chpipe.initseg import (
    FEATURE_DIM,
    HoleFeatureVector,
    henney_harvey_init,
    hole_features,
    select_candidates,
    union_masks,
    unipolarity,
)
from chpipe.maps import CoronalHole, Label, SegmentationMask, SynopticMap, extract_holes

GRID = GridSpec(n_cols=48, n_rows=24)


def make_maps(euv_values, mag_values, observed=None, grid=GRID):
    observed = (
        np.ones(grid.shape, bool) if observed is None else np.asarray(observed, bool)
    )
    euv = SynopticMap(
        grid=grid, values=np.where(observed, euv_values, 0.0), observed=observed, kind="euv"
    )
    mag = SynopticMap(
        grid=grid,
        values=np.where(observed, mag_values, 0.0),
        observed=observed,
        kind="magnetic",
    )
    return euv, mag


def blob_box(top, left, h, w):
    box = np.zeros(GRID.shape, bool)
    box[top : top + h, left : left + w] = True
    return box


def constant_vote_forest(label):
    tree = _Tree()
    tree.add_node()
    tree.counts[0] = [1, 0] if label == 0 else [0, 1]
    return TrainedForest(
        trees=[tree],
        n_features=FEATURE_DIM,
        config=ForestConfig(n_trees=1, seed=0),
        oob_error=0.0,
        importances=np.zeros(FEATURE_DIM),
    )


class TestHenneyHarveyInit:
    def test_dark_unipolar_blob_detected(self):
        blob = blob_box(10, 10, 5, 8)
        euv = np.full(GRID.shape, 100.0)
        euv[blob] = 10.0
        mag = np.full(GRID.shape, 0.5)
        mag[blob] = 40.0
        euv_m, mag_m = make_maps(euv, mag)
        out = henney_harvey_init(euv_m, mag_m)
        np.testing.assert_array_equal(out.labels == Label.POSITIVE, blob)
        assert (out.labels == Label.NEGATIVE).sum() == 0

    def test_negative_polarity_label(self):
        blob = blob_box(8, 20, 4, 6)
        euv = np.full(GRID.shape, 100.0)
        euv[blob] = 5.0
        mag = np.full(GRID.shape, 1.0)
        mag[blob] = -30.0
        euv_m, mag_m = make_maps(euv, mag)
        out = henney_harvey_init(euv_m, mag_m)
        np.testing.assert_array_equal(out.labels == Label.NEGATIVE, blob)

    def test_mixed_polarity_blob_rejected(self):
        blob = blob_box(10, 10, 4, 10)
        euv = np.full(GRID.shape, 100.0)
        euv[blob] = 10.0
        mag = np.full(GRID.shape, 0.5)
        mag[10:14, 10:15] = 40.0
        mag[10:14, 15:20] = -40.0  # perfectly balanced: unipolarity 0
        euv_m, mag_m = make_maps(euv, mag)
        out = henney_harvey_init(euv_m, mag_m)
        assert not out.hole_mask().any()

    def test_uniform_image_yields_empty_mask(self):
        euv_m, mag_m = make_maps(np.full(GRID.shape, 80.0), np.full(GRID.shape, 5.0))
        out = henney_harvey_init(euv_m, mag_m)
        assert not out.hole_mask().any()

    def test_mismatched_grids_rejected(self):
        euv_m, _ = make_maps(np.full(GRID.shape, 80.0), np.zeros(GRID.shape))
        other = GridSpec(n_cols=24, n_rows=12)
        mag_m = SynopticMap(
            grid=other,
            values=np.zeros(other.shape),
            observed=np.ones(other.shape, bool),
            kind="magnetic",
        )
        with pytest.raises(ValueError):
            henney_harvey_init(euv_m, mag_m)

    def test_noobs_propagates(self):
        observed = np.ones(GRID.shape, bool)
        observed[:, :5] = False
        euv_m, mag_m = make_maps(
            np.full(GRID.shape, 80.0), np.zeros(GRID.shape), observed
        )
        out = henney_harvey_init(euv_m, mag_m)
        np.testing.assert_array_equal(out.labels == Label.NO_OBSERVATION, ~observed)

    def test_outputs_pass_unipolarity_threshold(self):
        rng = np.random.default_rng(17)
        for trial in range(5):
            euv = 100.0 + rng.normal(0, 3, GRID.shape)
            mag = rng.normal(0, 5, GRID.shape)
            blob = blob_box(
                int(rng.integers(4, 16)), int(rng.integers(0, 40)), 5, 7
            )
            euv[blob] -= 70
            mag[blob] = rng.choice([-1, 1]) * 35.0
            euv_m, mag_m = make_maps(np.abs(euv), mag)
            out = henney_harvey_init(euv_m, mag_m, unipolarity_min=0.6)
            for h in extract_holes(out):
                flux = mag_m.values[h.pixels[:, 0], h.pixels[:, 1]]
                assert unipolarity(flux) >= 0.6


class TestHoleFeatures:
    def test_single_pixel_hole_is_one_hot(self):
        euv = np.full(GRID.shape, 50.0)
        euv[12, 13] = 20.0
        mag = np.full(GRID.shape, 1.0)
        mag[12, 13] = 25.0
        euv_m, mag_m = make_maps(euv, mag)
        hole = CoronalHole.from_pixels(np.array([[12, 13]]), 1, GRID)
        fv = hole_features(hole, euv_m, mag_m)
        assert (fv.euv_hist == 1.0).sum() == 1 and fv.euv_hist.sum() == 1.0
        assert (fv.flux_hist == 1.0).sum() == 1 and fv.flux_hist.sum() == 1.0
        assert fv.area == 1

    def test_negative_flux_mass_below_center(self):
        blob = blob_box(10, 10, 3, 5)
        euv = np.full(GRID.shape, 50.0)
        mag = np.where(blob, -10.0, 2.0)
        euv_m, mag_m = make_maps(euv, mag)
        hole = CoronalHole.from_pixels(np.stack(np.nonzero(blob), axis=1), -1, GRID)
        fv = hole_features(hole, euv_m, mag_m)
        assert fv.flux_hist[: 40 // 2].sum() == pytest.approx(1.0)

    def test_matches_brute_force_binning(self):
        # Oracle: direct counting loop over the pixel list.
        rng = np.random.default_rng(3)
        euv = rng.uniform(10, 200, GRID.shape)
        mag = rng.uniform(-30, 30, GRID.shape)
        euv_m, mag_m = make_maps(euv, mag)
        blob = blob_box(5, 7, 6, 9)
        pixels = np.stack(np.nonzero(blob), axis=1)
        hole = CoronalHole.from_pixels(pixels, 1, GRID)
        fv = hole_features(hole, euv_m, mag_m)

        lo, hi = euv.min(), euv.max()
        counts = np.zeros(255)
        for r, c in pixels:
            b = int((euv[r, c] - lo) / (hi - lo) * 255)
            counts[min(b, 254)] += 1
        np.testing.assert_allclose(fv.euv_hist, counts / counts.sum(), atol=1e-12)

        flim = np.abs(mag).max()
        fcounts = np.zeros(40)
        for r, c in pixels:
            b = int((mag[r, c] + flim) / (2 * flim) * 40)
            fcounts[min(b, 39)] += 1
        np.testing.assert_allclose(fv.flux_hist, fcounts / fcounts.sum(), atol=1e-12)
        assert fv.area == pixels.shape[0]

    def test_histograms_sum_to_one(self):
        rng = np.random.default_rng(5)
        euv = rng.uniform(0, 255, GRID.shape)
        mag = rng.normal(0, 10, GRID.shape)
        euv_m, mag_m = make_maps(euv, mag)
        blob = blob_box(3, 30, 4, 4)
        hole = CoronalHole.from_pixels(np.stack(np.nonzero(blob), axis=1), 1, GRID)
        fv = hole_features(hole, euv_m, mag_m)
        assert fv.euv_hist.sum() == pytest.approx(1.0, abs=1e-9)
        assert fv.flux_hist.sum() == pytest.approx(1.0, abs=1e-9)
        assert fv.as_array().size == FEATURE_DIM

    def test_unobserved_pixels_rejected(self):
        observed = np.ones(GRID.shape, bool)
        observed[12, 13] = False
        euv_m, mag_m = make_maps(
            np.full(GRID.shape, 50.0), np.zeros(GRID.shape), observed
        )
        hole = CoronalHole.from_pixels(np.array([[12, 13]]), 1, GRID)
        with pytest.raises(ValueError):
            hole_features(hole, euv_m, mag_m)


class TestSelectCandidates:
    def _holes_and_features(self, n=4):
        euv = np.full(GRID.shape, 100.0)
        mag = np.full(GRID.shape, 1.0)
        holes, features = [], []
        for i in range(n):
            blob = blob_box(2 + 4 * (i % 5), 3 + 9 * i, 3, 4)
            euv[blob] = 20.0 + i
            mag[blob] = 30.0
        euv_m, mag_m = make_maps(euv, mag)
        for i in range(n):
            blob = blob_box(2 + 4 * (i % 5), 3 + 9 * i, 3, 4)
            hole = CoronalHole.from_pixels(np.stack(np.nonzero(blob), axis=1), 1, GRID)
            holes.append(hole)
            features.append(hole_features(hole, euv_m, mag_m))
        return holes, features

    def test_always_valid_model_keeps_all(self):
        holes, features = self._holes_and_features()
        result = select_candidates(holes, features, constant_vote_forest(1))
        assert result.kept == holes
        assert result.rejected == []

    def test_always_invalid_model_rejects_all(self):
        holes, features = self._holes_and_features()
        result = select_candidates(holes, features, constant_vote_forest(0))
        assert result.kept == []
        assert len(result.rejected) == len(holes)
        assert all(0.5 <= frac <= 1.0 for _, frac in result.rejected)

    def test_output_is_subset_of_input(self):
        holes, features = self._holes_and_features()
        result = select_candidates(holes, features, constant_vote_forest(1))
        assert all(h in holes for h in result.kept)

    def test_dimension_mismatch_rejected(self):
        holes, features = self._holes_and_features(1)
        bad = HoleFeatureVector(
            euv_hist=np.zeros(10), flux_hist=np.zeros(4), area=1
        )
        with pytest.raises(ValueError):
            select_candidates(holes, [bad], constant_vote_forest(1))

    def test_synthetic_fakes_rejected(self):
        # Dark unipolar trues vs barely-dim mixed-polarity fakes; the
        # selector must reject at least 90% of held-out fakes.
        rng = np.random.default_rng(23)
        samples, labels = [], []
        for i in range(60):
            true_hole = i % 2 == 0
            euv = 100.0 + rng.normal(0, 3, GRID.shape)
            mag = rng.normal(0, 2, GRID.shape)
            blob = blob_box(int(rng.integers(3, 18)), int(rng.integers(0, 40)), 4, 6)
            if true_hole:
                euv[blob] = rng.uniform(15, 30)
                mag[blob] = rng.choice([-1, 1]) * rng.uniform(25, 45)
            else:
                euv[blob] = rng.uniform(80, 95)
                mag[blob] = rng.normal(0, 25, int(blob.sum()))
            euv_m, mag_m = make_maps(np.abs(euv), mag)
            hole = CoronalHole.from_pixels(np.stack(np.nonzero(blob), axis=1), 1, GRID)
            samples.append(hole_features(hole, euv_m, mag_m).as_array())
            labels.append(1 if true_hole else 0)
        X = np.array(samples)
        y = np.array(labels)
        model = train(
            X[:40], y[:40], ForestConfig(n_trees=50, max_splits=50, tie_label=1, seed=2)
        )
        held_X, held_y = X[40:], y[40:]
        fake_rows = held_X[held_y == 0]
        rejected = sum(1 for x in fake_rows if model.predict(x)[0] == 0)
        assert rejected / len(fake_rows) >= 0.9


MAG_FIXTURE = SynopticMap(
    grid=GRID,
    values=np.tile(np.where(np.arange(GRID.n_cols) < 24, 3.0, -3.0), (GRID.n_rows, 1)),
    observed=np.ones(GRID.shape, bool),
    kind="magnetic",
)

label_arrays = hnp.arrays(
    np.uint8, GRID.shape, elements=st.sampled_from([0, 1, 2, 3])
)


class TestUnionMasks:
    def test_single_input_identity(self):
        labels = np.zeros(GRID.shape, dtype=np.uint8)
        labels[4:6, 4:6] = Label.POSITIVE
        m = SegmentationMask(grid=GRID, labels=labels)
        np.testing.assert_array_equal(union_masks([m]).labels, labels)

    def test_empty_is_identity_element(self):
        labels = np.zeros(GRID.shape, dtype=np.uint8)
        labels[4:6, 4:6] = Label.NEGATIVE
        m = SegmentationMask(grid=GRID, labels=labels)
        empty = SegmentationMask(grid=GRID, labels=np.zeros(GRID.shape, np.uint8))
        np.testing.assert_array_equal(union_masks([m, empty]).labels, labels)

    def test_disjoint_masks_or_together(self):
        a = np.zeros(GRID.shape, dtype=np.uint8)
        a[2:4, 2:4] = Label.POSITIVE
        b = np.zeros(GRID.shape, dtype=np.uint8)
        b[10:12, 10:12] = Label.NEGATIVE
        out = union_masks(
            [SegmentationMask(grid=GRID, labels=a), SegmentationMask(grid=GRID, labels=b)]
        )
        assert (out.labels[2:4, 2:4] == Label.POSITIVE).all()
        assert (out.labels[10:12, 10:12] == Label.NEGATIVE).all()

    def test_conflict_resolved_by_flux_sign(self):
        a = np.zeros(GRID.shape, dtype=np.uint8)
        a[5, 5] = Label.POSITIVE
        a[5, 40] = Label.POSITIVE
        b = np.zeros(GRID.shape, dtype=np.uint8)
        b[5, 5] = Label.NEGATIVE
        b[5, 40] = Label.NEGATIVE
        out = union_masks(
            [SegmentationMask(grid=GRID, labels=a), SegmentationMask(grid=GRID, labels=b)],
            mag=MAG_FIXTURE,
        )
        assert out.labels[5, 5] == Label.POSITIVE  # flux +3 there
        assert out.labels[5, 40] == Label.NEGATIVE  # flux -3 there

    def test_conflict_without_mag_raises(self):
        a = np.zeros(GRID.shape, dtype=np.uint8)
        a[5, 5] = Label.POSITIVE
        b = np.zeros(GRID.shape, dtype=np.uint8)
        b[5, 5] = Label.NEGATIVE
        with pytest.raises(ValueError):
            union_masks(
                [SegmentationMask(grid=GRID, labels=a), SegmentationMask(grid=GRID, labels=b)]
            )

    @settings(max_examples=25, deadline=None)
    @given(a=label_arrays, b=label_arrays, c=label_arrays)
    def test_union_algebra(self, a, b, c):
        ma = SegmentationMask(grid=GRID, labels=a)
        mb = SegmentationMask(grid=GRID, labels=b)
        mc = SegmentationMask(grid=GRID, labels=c)
        u = lambda *ms: union_masks(list(ms), mag=MAG_FIXTURE)
        # commutative, associative, idempotent
        np.testing.assert_array_equal(u(ma, mb).labels, u(mb, ma).labels)
        np.testing.assert_array_equal(
            u(u(ma, mb), mc).labels, u(ma, u(mb, mc)).labels
        )
        np.testing.assert_array_equal(u(ma, ma).labels, a)
