"""Tests for the synthetic dataset generator."""

import json
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

from chpipe.geometry import GridSpec
from chpipe.maps import Label, load_map, extract_holes
from chpipe.matchcluster import cluster_by_distance
from chpipe.protocol import check_nearby_clustering
from chpipe.synth import (
    SynthSpec,
    generate_dataset,
    load_int_field,
    perturbation_severity,
)

SMALL = SynthSpec(
    n_dates=3,
    n_cols=180,
    n_rows=90,
    n_models=4,
    seed=42,
)


def tree_bytes(root: Path) -> dict[str, bytes]:
    return {
        str(p.relative_to(root)): p.read_bytes()
        for p in sorted(root.rglob("*"))
        if p.is_file()
    }


class TestGeneration:
    def test_inventory_complete(self, tmp_path):
        dates = generate_dataset(SMALL, tmp_path)
        assert dates == ["d001", "d002", "d003"]
        for date in dates:
            ddir = tmp_path / date
            for name in ("euv.csv", "mag.csv", "consensus.csv", "consensus_ids.csv",
                         "ext_method.csv", "meta.json"):
                assert (ddir / name).exists(), name
            for m in range(1, 5):
                assert (ddir / "models" / f"m{m:02d}.csv").exists()
                assert (ddir / "truth" / f"m{m:02d}.json").exists()
                assert (ddir / "truth" / f"m{m:02d}_prov.csv").exists()
        manifest = json.loads((tmp_path / "manifest.json").read_text())
        assert manifest["dates"] == dates
        assert manifest["n_models"] == 4

    def test_deterministic_by_seed(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        generate_dataset(SMALL, a)
        generate_dataset(SMALL, b)
        ta, tb = tree_bytes(a), tree_bytes(b)
        assert ta.keys() == tb.keys()
        for name in ta:
            assert ta[name] == tb[name], name

    def test_different_seed_differs(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        generate_dataset(SMALL, a)
        generate_dataset(replace(SMALL, seed=43), b)
        assert tree_bytes(a) != tree_bytes(b)

    def test_maps_are_consistent(self, tmp_path):
        generate_dataset(SMALL, tmp_path)
        euv = load_map(tmp_path / "d001" / "euv.csv", "euv")
        mag = load_map(tmp_path / "d001" / "mag.csv", "magnetic")
        consensus = load_map(tmp_path / "d001" / "consensus.csv", "mask")
        assert euv.grid == mag.grid == consensus.grid
        np.testing.assert_array_equal(euv.observed, mag.observed)
        hole = consensus.hole_mask()
        assert hole.sum() > 0
        # holes are dark and unipolar by construction
        assert euv.values[hole].mean() < euv.values[euv.observed & ~hole].mean() * 0.7
        np.testing.assert_array_equal(
            consensus.labels == Label.NO_OBSERVATION, ~euv.observed
        )

    def test_consensus_ids_partition_holes(self, tmp_path):
        generate_dataset(SMALL, tmp_path)
        consensus = load_map(tmp_path / "d002" / "consensus.csv", "mask")
        ids = load_int_field(tmp_path / "d002" / "consensus_ids.csv")
        hole = consensus.hole_mask()
        assert (ids[hole] > 0).all()
        assert (ids[~hole] == 0).all()

    def test_intended_clusters_recovered(self, tmp_path):
        spec = replace(SMALL, polar_hole_probability=0.0)
        generate_dataset(spec, tmp_path)
        for date in ("d001", "d002", "d003"):
            consensus = load_map(tmp_path / date / "consensus.csv", "mask")
            ids = load_int_field(tmp_path / date / "consensus_ids.csv")
            meta = json.loads((tmp_path / date / "meta.json").read_text())
            holes = extract_holes(consensus)
            grid = consensus.grid
            for polarity in (1, -1):
                subset = [h for h in holes if h.polarity == polarity]
                if not subset:
                    continue
                clusters = cluster_by_distance(subset, 0.1, grid)
                for cluster in clusters:
                    intended = set()
                    for h in cluster.holes:
                        vals = ids[h.pixels[:, 0], h.pixels[:, 1]]
                        vals = vals[vals > 0]
                        for v in np.unique(vals):
                            intended.add(meta["hole_clusters"][str(int(v))])
                    assert len(intended) == 1, f"{date}: cluster mixes {intended}"

    def test_produced_clusters_pass_nearby_rule(self, tmp_path):
        spec = replace(SMALL, polar_hole_probability=0.0)
        generate_dataset(spec, tmp_path)
        consensus = load_map(tmp_path / "d001" / "consensus.csv", "mask")
        holes = extract_holes(consensus)
        for polarity in (1, -1):
            subset = [h for h in holes if h.polarity == polarity]
            if subset:
                clusters = cluster_by_distance(subset, 0.1, consensus.grid)
                assert check_nearby_clustering(clusters, consensus.grid, 0.03) == []


class TestModelPerturbations:
    def test_zero_perturbation_equals_consensus(self, tmp_path):
        spec = replace(
            SMALL,
            n_models=2,
            good_jitter_arc=0.0,
            good_area_scale=(1.0, 1.0),
            good_p_add=0.0,
            good_p_remove=0.0,
            model_cols=180,
            model_rows=90,
            polar_hole_probability=0.0,
            noobs_probability=0.0,
        )
        generate_dataset(spec, tmp_path)
        for date in ("d001", "d002", "d003"):
            consensus = load_map(tmp_path / date / "consensus.csv", "mask")
            for m in (1, 2):
                truth = json.loads(
                    (tmp_path / date / "truth" / f"m{m:02d}.json").read_text()
                )
                if truth["level"] != "good":
                    continue
                assert truth["label"] == "good"
                model = load_map(tmp_path / date / "models" / f"m{m:02d}.csv", "model")
                observed = consensus.labels != Label.NO_OBSERVATION
                np.testing.assert_array_equal(
                    model.labels[observed], consensus.labels[observed]
                )

    def test_heavy_perturbation_labeled_bad(self, tmp_path):
        spec = replace(
            SMALL,
            good_jitter_arc=0.15,
            good_p_add=1.0,
            good_p_remove=0.5,
            bad_jitter_arc=0.15,
            bad_p_add=1.0,
            bad_p_remove=0.5,
        )
        generate_dataset(spec, tmp_path)
        for date in ("d001", "d002", "d003"):
            for m in range(1, 5):
                truth = json.loads(
                    (tmp_path / date / "truth" / f"m{m:02d}.json").read_text()
                )
                assert truth["label"] == "bad"

    def test_severity_rule(self):
        assert perturbation_severity(0.0, 1.0, 0.0, 0.0) == 0.0
        assert perturbation_severity(0.15, 1.0, 1.0, 0.0) > 1.5
        assert perturbation_severity(0.02, 1.05, 0.1, 0.05) < 1.5

    def test_provenance_marks_added_blobs(self, tmp_path):
        spec = replace(SMALL, bad_p_add=1.0, seed=7)
        generate_dataset(spec, tmp_path)
        found_new = False
        for date in ("d001", "d002", "d003"):
            for m in range(1, 5):
                prov = load_int_field(tmp_path / date / "truth" / f"m{m:02d}_prov.csv")
                if (prov >= 1000).any():
                    found_new = True
        assert found_new

    def test_model_grid_default_for_canonical_size(self):
        spec = SynthSpec(n_cols=360, n_rows=180)
        assert spec.model_grid == GridSpec(n_cols=144, n_rows=172)
        small = SynthSpec(n_cols=180, n_rows=90)
        assert small.model_grid == GridSpec(n_cols=180, n_rows=90)


class TestValidation:
    def test_bad_probability_rejected(self):
        with pytest.raises(ValueError):
            SynthSpec(good_p_add=1.5)

    def test_bad_hole_range_rejected(self):
        with pytest.raises(ValueError):
            SynthSpec(holes_min=5, holes_max=3)
