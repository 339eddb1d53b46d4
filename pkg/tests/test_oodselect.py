import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ctxdg.datagen import EnvironmentDataset
from ctxdg.errors import ConfigurationError, RejectedInputError
from ctxdg.modelzoo import build
from ctxdg.oodselect import (DetectorState, SelectionPolicy, auroc, fit_detector, is_novel,
                             novel_mask, sample_summaries, score, scores, select_predict)


def detector(refs, k, tau=0.0, q=0.95):
    return DetectorState(np.asarray(refs, dtype=float).reshape(len(refs), -1), k, tau, q)


class TestScore:
    def test_nearest(self):
        assert score(detector([0, 10], 1), [1.0]) == 1.0

    def test_mean_of_k(self):
        assert score(detector([0, 10], 2), [1.0]) == 5.0

    def test_collocated(self):
        assert score(detector([[2, 3]] * 5, 5), [2.0, 3.0]) == 0.0

    def test_dimension_mismatch(self):
        with pytest.raises(RejectedInputError):
            score(detector([[0, 0]] * 5, 5), [1.0, 2.0, 3.0])

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2 ** 31), st.integers(1, 5))
    def test_translation_invariant(self, seed, d):
        rng = np.random.default_rng(seed)
        refs, q = rng.normal(size=(30, d)), rng.normal(size=(10, d))
        shift = rng.normal(size=d) * 10
        a = scores(detector(refs, 5), q)
        b = scores(detector(refs + shift, 5), q + shift)
        assert np.max(np.abs(a - b)) <= 1e-9

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2 ** 31))
    def test_nonnegative(self, seed):
        rng = np.random.default_rng(seed)
        assert np.all(scores(detector(rng.normal(size=(8, 2)), 3), rng.normal(size=(5, 2))) >= 0)


class TestFit:
    def test_threshold_is_percentile(self):
        rng = np.random.default_rng(0)
        tr, va = rng.normal(size=(200, 3)), rng.normal(size=(101, 3))
        det = fit_detector(tr, va, 5, 0.95)
        d = np.linalg.norm(va[:, None] - tr[None], axis=2)
        ref = np.sort(np.sort(d, axis=1)[:, :5].mean(axis=1))
        # linear interpolation at rank 0.95 * 100 = 95
        assert det.threshold == pytest.approx(ref[95], abs=1e-12)

    def test_identical_summaries(self):
        det = fit_detector(np.ones((10, 2)), np.ones((4, 2)))
        assert det.threshold == 0.0
        assert not is_novel(det, [1.0, 1.0])

    def test_val_equals_train(self):
        x = np.random.default_rng(1).normal(size=(20, 2))
        det = fit_detector(x, x)
        assert np.isfinite(det.threshold)

    def test_too_few_references(self):
        with pytest.raises(ConfigurationError):
            fit_detector(np.zeros((3, 2)), np.zeros((1, 2)), k_neighbors=5)

    @pytest.mark.parametrize("q", [0.0, 1.5, -0.1])
    def test_bad_q(self, q):
        with pytest.raises(ConfigurationError):
            fit_detector(np.zeros((10, 2)), np.zeros((1, 2)), q=q)

    def test_json_round_trip(self, tmp_path):
        det = fit_detector(np.random.default_rng(2).normal(size=(10, 2)), np.zeros((3, 2)))
        det.save(tmp_path / "d.json")
        import json
        back = DetectorState.from_dict(json.loads((tmp_path / "d.json").read_text()))
        assert back.threshold == det.threshold
        assert back.references.tobytes() == det.references.tobytes()


class TestNovelty:
    def test_strict_boundary(self):
        det = detector([0, 10], 1, tau=1.0)
        assert not is_novel(det, [1.0])
        assert is_novel(det, [1.0 + 1e-12])

    def test_q_one_flags_nothing(self):
        rng = np.random.default_rng(3)
        det = fit_detector(rng.normal(size=(50, 2)), rng.normal(size=(50, 2)), q=1.0)
        assert not novel_mask(det, rng.normal(size=(500, 2)) * 3).any()

    def test_calibration(self):
        rng = np.random.default_rng(4)
        det = fit_detector(rng.normal(size=(1000, 3)), rng.normal(size=(4000, 3)), 5, 0.95)
        rate = novel_mask(det, rng.normal(size=(500, 3))).mean()
        assert abs(rate - 0.05) <= 0.03

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2 ** 31), st.floats(0.05, 0.95), st.floats(0.0, 0.04))
    def test_monotone_in_q(self, seed, q, dq):
        rng = np.random.default_rng(seed)
        tr, va, ev = (rng.normal(size=(m, 2)) for m in (40, 60, 80))
        low = novel_mask(fit_detector(tr, va, 5, q), ev).sum()
        high = novel_mask(fit_detector(tr, va, 5, q + dq), ev).sum()
        assert high <= low


class TestAuroc:
    @pytest.mark.parametrize("a,b,expect", [([0.1, 0.2], [0.3, 0.4], 1.0), ([1, 2], [1, 2], 0.5),
                                            ([1, 3], [2, 4], 0.75), ([5], [1], 0.0)])
    def test_examples(self, a, b, expect):
        assert auroc(a, b) == expect

    def test_empty(self):
        with pytest.raises(RejectedInputError):
            auroc([], [1.0])

    @settings(max_examples=60, deadline=None)
    @given(st.lists(st.integers(0, 6), min_size=1, max_size=30),
           st.lists(st.integers(0, 6), min_size=1, max_size=30))
    def test_brute_force_and_symmetry(self, a, b):
        wins = sum((y > x) + 0.5 * (y == x) for x in a for y in b)
        assert auroc(a, b) == pytest.approx(wins / (len(a) * len(b)), abs=1e-12)
        assert abs(auroc(a, b) + auroc(b, a) - 1) <= 1e-12


class TestSelection:
    def models(self):
        dims = {"d_x": 2, "d_y": 1}
        id_model = build("Y_given_X", dims, {"seed": 1})
        ood_model = build("invariant", dims, {"seed": 2, "mask": [0]})
        return id_model, ood_model

    def test_branches(self):
        id_model, ood_model = self.models()
        det = fit_detector(np.zeros((10, 2)), np.zeros((5, 2)))
        policy = SelectionPolicy(id_model, ood_model, det, lambda s: s.mean(axis=1))
        x = np.random.default_rng(0).normal(size=(4, 2))
        pred, flags = select_predict(policy, x, np.zeros((8, 2)))
        assert not flags.any() and np.array_equal(pred, id_model.predict(x))
        pred, flags = select_predict(policy, x, np.full((8, 2), 5.0))
        assert flags.all() and np.array_equal(pred, ood_model.predict(x))

    def test_per_row_contexts(self):
        id_model, ood_model = self.models()
        det = fit_detector(np.zeros((10, 2)), np.zeros((5, 2)))
        policy = SelectionPolicy(id_model, ood_model, det, lambda s: s.mean(axis=1))
        ctx = np.zeros((2, 4, 2))
        ctx[1] += 3
        _, flags = select_predict(policy, np.zeros((2, 2)), ctx)
        assert flags.tolist() == [False, True]

    def test_min_context(self):
        id_model, ood_model = self.models()
        det = fit_detector(np.zeros((10, 2)), np.zeros((5, 2)))
        policy = SelectionPolicy(id_model, ood_model, det, lambda s: s.mean(axis=1), min_context=16)
        with pytest.raises(ConfigurationError):
            select_predict(policy, np.zeros((1, 2)), np.zeros((4, 2)))

    def test_dimension_contract(self):
        a = build("Y_given_X", {"d_x": 2, "d_y": 1})
        b = build("Y_given_X", {"d_x": 3, "d_y": 1})
        with pytest.raises(ConfigurationError):
            SelectionPolicy(a, b, fit_detector(np.zeros((5, 2)), np.zeros((1, 2))), None)


class TestSampleSummaries:
    def test_sets_from_one_env(self):
        env = np.repeat([0, 1], 50)
        x = np.where(env == 0, -1.0, 1.0)[:, None]
        data = EnvironmentDataset(x, np.zeros(100), env)
        summ, labels = sample_summaries(lambda s: s.mean(axis=1), data, 20, 8, seed=0)
        assert summ.shape == (40, 1)
        assert np.all(summ[labels == 0] == -1.0) and np.all(summ[labels == 1] == 1.0)

    def test_deterministic(self):
        rng = np.random.default_rng(0)
        data = EnvironmentDataset(rng.normal(size=(60, 2)), np.zeros(60), np.repeat([0, 1, 2], 20))
        a, _ = sample_summaries(lambda s: s.mean(axis=1), data, 5, 4, seed=3)
        b, _ = sample_summaries(lambda s: s.mean(axis=1), data, 5, 4, seed=3)
        assert a.tobytes() == b.tobytes()
