import numpy as np
import pytest

from ftl import evaluation as ev
from ftl.errors import ConfigInvalid, EmptyGallery, InsufficientData

from oracles import nearest_center_oracle


class TestNnIdentify:
    def test_probes_at_centers(self, rng):
        centers = rng.standard_normal((4, 3))
        labels = np.array([0, 1, 2, 3])
        reg, ur = ev.nn_identify(centers, centers, labels, np.array([0, 1]), np.array([2, 3]))
        assert reg == 1.0
        assert ur == 1.0

    def test_tie_goes_to_lowest_class_id(self):
        centers = np.array([[1.0, 0.0], [-1.0, 0.0]])
        probes = np.array([[0.0, 0.0]])
        reg, ur = ev.nn_identify(centers, probes, np.array([0]), np.array([0]), np.array([1]))
        assert reg == 1.0  # assigned to class 0, the lower id

    def test_three_class_hand_table(self, rng):
        centers = np.array([[0.0, 0.0], [4.0, 0.0], [0.0, 4.0]])
        probes = rng.standard_normal((60, 2)) * 2.0
        labels = rng.integers(0, 3, 60)
        assigned = nearest_center_oracle(probes, centers)
        expected_reg = float((assigned[labels <= 1] == labels[labels <= 1]).mean())
        expected_ur = float((assigned[labels == 2] == labels[labels == 2]).mean())
        reg, ur = ev.nn_identify(centers, probes, labels, np.array([0, 1]), np.array([2]))
        assert reg == expected_reg
        assert ur == expected_ur

    def test_isometry_invariance(self, rng):
        centers = rng.standard_normal((5, 4))
        probes = rng.standard_normal((50, 4))
        labels = rng.integers(0, 5, 50)
        reg_ids, ur_ids = np.array([0, 1, 2]), np.array([3, 4])
        q, r = np.linalg.qr(rng.standard_normal((4, 4)))
        q *= np.sign(np.diag(r))
        base = ev.nn_identify(centers, probes, labels, reg_ids, ur_ids)
        rotated = ev.nn_identify(centers @ q.T, probes @ q.T, labels, reg_ids, ur_ids)
        assert base == rotated

    def test_empty_gallery(self):
        with pytest.raises(EmptyGallery):
            ev.nn_identify(np.zeros((1, 2)), np.zeros((1, 2)), np.array([0]), np.array([0]), np.array([]))


class TestWeightNormStats:
    def test_equal_rows_zero_cv(self):
        w = np.tile(np.array([1.0, 2.0]), (5, 1))
        stats = ev.weight_norm_stats(w)
        assert stats["cv"] == 0.0

    def test_norms_three_four(self):
        w = np.array([[3.0, 0.0], [0.0, 4.0]])
        stats = ev.weight_norm_stats(w)
        assert stats["per_class"] == [3.0, 4.0]
        assert stats["mean"] == 3.5
        assert stats["cv"] == pytest.approx(0.5 / 3.5)

    def test_scale_invariance(self, rng):
        w = rng.standard_normal((7, 5))
        a = ev.weight_norm_stats(w)["cv"]
        b = ev.weight_norm_stats(3.7 * w)["cv"]
        assert abs(a - b) <= 1e-12

    def test_zero_matrix(self):
        stats = ev.weight_norm_stats(np.zeros((3, 2)))
        assert stats["cv"] == 0.0


class TestVarianceProfile:
    def test_singleton_class(self):
        prof = ev.variance_profile(np.array([[1.0, 2.0]]), np.array([0]))
        assert prof[0] == (0.0, 0.0, 0.0)

    def test_symmetric_pair(self):
        feats = np.array([[1.0, 0.0], [-1.0, 0.0]])
        prof = ev.variance_profile(feats, np.array([0, 0]))
        assert prof[0] == (1.0, 1.0, 1.0)

    def test_matches_direct_recomputation(self, rng):
        feats = rng.standard_normal((30, 4))
        labels = rng.integers(0, 3, 30)
        prof = ev.variance_profile(feats, labels)
        for cls in range(3):
            pts = feats[labels == cls]
            dists = np.linalg.norm(pts - pts.mean(axis=0), axis=1)
            assert abs(prof[cls][0] - dists.min()) < 1e-12
            assert abs(prof[cls][1] - dists.mean()) < 1e-12
            assert abs(prof[cls][2] - dists.max()) < 1e-12


class TestCenterErrorStudy:
    def test_full_subset_avgall_error_zero(self, small_dataset):
        m = len(small_dataset.class_indices(int(small_dataset.regular_ids[0])))
        study = ev.center_error_study(small_dataset, subset_sizes=(m,), n_reps=3, seed=1)
        assert study["errors"]["AvgAll"][m] <= 1e-12

    def test_pickone_size_one_equals_avgall(self, small_dataset):
        study = ev.center_error_study(small_dataset, subset_sizes=(1, 5), n_reps=5, seed=2)
        assert study["errors"]["PickOne"][1] == pytest.approx(study["errors"]["AvgAll"][1])

    def test_avgall_monotone_with_slack(self, small_dataset):
        study = ev.center_error_study(small_dataset, subset_sizes=(1, 5, 10, 20), n_reps=100, seed=3)
        row = study["errors"]["AvgAll"]
        for small, big in zip((1, 5, 10), (5, 10, 20)):
            assert row[big] <= row[small] * 1.02

    def test_jobs_do_not_change_results(self, small_dataset):
        a = ev.center_error_study(small_dataset, subset_sizes=(1, 5), n_reps=6, seed=4, jobs=1)
        b = ev.center_error_study(small_dataset, subset_sizes=(1, 5), n_reps=6, seed=4, jobs=2)
        assert a["errors"] == b["errors"]

    def test_insufficient_data(self, small_dataset):
        with pytest.raises(InsufficientData):
            ev.center_error_study(small_dataset, subset_sizes=(1000,), n_reps=2, seed=0)

    def test_unknown_method(self, small_dataset):
        with pytest.raises(ConfigInvalid):
            ev.center_error_study(small_dataset, methods=("Bogus",), n_reps=2, seed=0)

    def test_normalization_metadata(self, small_dataset):
        study = ev.center_error_study(small_dataset, subset_sizes=(1,), n_reps=2, seed=0)
        assert study["normalizer"] > 0
        assert "inter" in study["normalization"] or "pairwise" in study["normalization"]
