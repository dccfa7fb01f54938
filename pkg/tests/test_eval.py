import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from segqc.evaluation import (CVResult, FoldSplit, Metrics, confusion_metrics,
                              cross_validate, roc_auc, stratified_kfold,
                              summarize, threshold_sweep, write_fold_csv,
                              write_summary_json)
from segqc.seeding import rng_for, subseed
from conftest import concordance_auc


def tie_heavy_instance(rng, n):
    """Scores drawn from a coarse grid so tied pairs are common."""
    scores = rng.integers(0, 6, size=n) / 5.0
    labels = rng.integers(0, 2, size=n)
    labels[0], labels[1] = 0, 1  # ensure both classes
    return scores, labels


class TestRocAuc:
    def test_four_point_example(self):
        curve = roc_auc([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1])
        assert curve.auc == 0.75

    def test_perfect_separation(self):
        assert roc_auc([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1]).auc == 1.0

    def test_reversed_ranking(self):
        assert roc_auc([0.9, 0.8, 0.2, 0.1], [0, 0, 1, 1]).auc == 0.0

    def test_all_tied_is_half(self):
        assert roc_auc([0.5, 0.5, 0.5, 0.5], [0, 1, 0, 1]).auc == 0.5

    def test_equals_brute_force_on_100_instances(self):
        rng = np.random.default_rng(77)
        for _ in range(100):
            n = int(rng.integers(2, 201))
            scores, labels = tie_heavy_instance(rng, n)
            assert roc_auc(scores, labels).auc == concordance_auc(scores, labels)

    @given(st.lists(st.integers(0, 5), min_size=2, max_size=40),
           st.randoms(use_true_random=False))
    def test_equals_brute_force_property(self, grid_scores, rnd):
        labels = [rnd.randint(0, 1) for _ in grid_scores]
        labels[0], labels[-1] = 0, 1
        scores = [g / 5.0 for g in grid_scores]
        assert roc_auc(scores, labels).auc == concordance_auc(scores, labels)

    def test_invariant_under_monotone_transforms(self):
        rng = np.random.default_rng(5)
        scores, labels = tie_heavy_instance(rng, 60)
        base = roc_auc(scores, labels).auc
        assert roc_auc(2.0 * scores + 1.0, labels).auc == base
        assert roc_auc(np.exp(scores), labels).auc == base

    def test_curve_endpoints_and_monotonicity(self):
        rng = np.random.default_rng(6)
        scores, labels = tie_heavy_instance(rng, 50)
        curve = roc_auc(scores, labels)
        assert curve.points[0] == (0.0, 0.0)
        assert curve.points[-1] == (1.0, 1.0)
        xs = [p[0] for p in curve.points]
        ys = [p[1] for p in curve.points]
        assert all(a <= b for a, b in zip(xs, xs[1:]))
        assert all(a <= b for a, b in zip(ys, ys[1:]))

    def test_one_step_per_distinct_score(self):
        scores = [0.1, 0.1, 0.5, 0.5, 0.9]
        curve = roc_auc(scores, [0, 1, 0, 1, 1])
        assert len(curve.points) == 3 + 1

    def test_trapezoid_reintegration_matches(self):
        rng = np.random.default_rng(7)
        scores, labels = tie_heavy_instance(rng, 80)
        curve = roc_auc(scores, labels)
        area = sum((x1 - x0) * (y0 + y1) / 2.0
                   for (x0, y0), (x1, y1) in zip(curve.points, curve.points[1:]))
        assert abs(area - curve.auc) < 1e-12

    def test_single_class_rejected(self):
        with pytest.raises(ValueError, match="both classes"):
            roc_auc([0.2, 0.8], [1, 1])

    def test_bad_inputs_rejected(self):
        with pytest.raises(ValueError):
            roc_auc([0.2, 0.8], [0])
        with pytest.raises(ValueError):
            roc_auc([], [])
        with pytest.raises(ValueError):
            roc_auc([0.2, np.nan], [0, 1])
        with pytest.raises(ValueError):
            roc_auc([0.2, 0.8], [0, 2])


class TestConfusion:
    def test_hand_enumerated_counts(self):
        m = confusion_metrics([0.2, 0.4, 0.6], [0, 1, 1], 0.4)
        assert (m.tp, m.fp, m.tn, m.fn) == (2, 0, 1, 0)
        assert m.accuracy == 1.0
        assert m.precision == 1.0
        assert m.recall == 1.0

    def test_threshold_boundary_is_inclusive(self):
        m = confusion_metrics([0.4, 0.39], [1, 0], 0.4)
        assert (m.tp, m.fp, m.tn, m.fn) == (1, 0, 1, 0)

    def test_precision_none_without_positive_predictions(self):
        m = confusion_metrics([0.1, 0.2], [1, 0], 0.5)
        assert m.precision is None
        assert m.recall == 0.0

    def test_recall_none_without_positive_labels(self):
        m = confusion_metrics([0.6, 0.2], [0, 0], 0.5)
        assert m.recall is None
        assert m.precision == 0.0
        assert m.accuracy == 0.5

    def test_counts_match_loop_oracle(self):
        rng = np.random.default_rng(8)
        scores = rng.random(120)
        labels = rng.integers(0, 2, size=120)
        m = confusion_metrics(scores, labels, 0.35)
        tp = fp = tn = fn = 0
        for s, lab in zip(scores, labels):
            pred = 1 if s >= 0.35 else 0
            if pred and lab:
                tp += 1
            elif pred and not lab:
                fp += 1
            elif not pred and not lab:
                tn += 1
            else:
                fn += 1
        assert (m.tp, m.fp, m.tn, m.fn) == (tp, fp, tn, fn)
        assert m.total == 120

    def test_sweep_monotonic_in_threshold(self):
        rng = np.random.default_rng(9)
        scores = rng.random(100)
        labels = rng.integers(0, 2, size=100)
        rows = threshold_sweep(scores, labels, [0.2, 0.3, 0.4, 0.5])
        assert [t for t, _ in rows] == [0.2, 0.3, 0.4, 0.5]
        recalls = [m.recall for _, m in rows]
        fps = [m.fp for _, m in rows]
        assert all(a >= b for a, b in zip(recalls, recalls[1:]))
        assert all(a >= b for a, b in zip(fps, fps[1:]))

    def test_empty_grid_rejected(self):
        with pytest.raises(ValueError):
            threshold_sweep([0.5, 0.5], [0, 1], [])


class TestStratifiedKfold:
    def test_six_four_two_folds(self):
        labels = [0] * 6 + [1] * 4
        split = stratified_kfold(labels, k=2, seed=0)
        sizes = [len(f) for f in split.folds]
        assert sizes == [5, 5]
        for fold in split.folds:
            assert sum(1 for i in fold if labels[i] == 1) == 2
            assert sum(1 for i in fold if labels[i] == 0) == 3

    def test_balanced_600_ten_folds(self):
        labels = [0] * 300 + [1] * 300
        split = stratified_kfold(labels, k=10, seed=1)
        for fold in split.folds:
            assert len(fold) == 60
            assert sum(1 for i in fold if labels[i] == 1) == 30

    @pytest.mark.parametrize("k", [2, 5, 10])
    def test_partition_and_balance_invariants(self, k):
        rng = np.random.default_rng(10 + k)
        labels = rng.integers(0, 2, size=137)
        while min(np.bincount(labels)) < k:
            labels = rng.integers(0, 2, size=137)
        split = stratified_kfold(labels, k=k, seed=3)
        split.validate(137)
        sizes = [len(f) for f in split.folds]
        # each class balances to within 1, so totals spread by at most 2
        assert max(sizes) - min(sizes) <= 2
        for cls in (0, 1):
            counts = [sum(1 for i in f if labels[i] == cls) for f in split.folds]
            assert max(counts) - min(counts) <= 1
        for fold in split.folds:
            assert list(fold) == sorted(fold)

    def test_deterministic_in_seed(self):
        labels = [0, 1] * 20
        a = stratified_kfold(labels, k=4, seed=9)
        b = stratified_kfold(labels, k=4, seed=9)
        c = stratified_kfold(labels, k=4, seed=10)
        assert a.folds == b.folds
        assert a.folds != c.folds

    def test_stratification_record(self):
        labels = [0] * 6 + [1] * 4
        split = stratified_kfold(labels, k=2, seed=0)
        assert split.stratification["k"] == 2
        assert split.stratification["class_counts"] == {"0": 6, "1": 4}
        assert split.stratification["per_fold"] == [{"0": 3, "1": 2}] * 2

    def test_small_class_rejected(self):
        with pytest.raises(ValueError, match="fewer than k"):
            stratified_kfold([0, 0, 0, 1], k=2, seed=0)

    def test_k_below_two_rejected(self):
        with pytest.raises(ValueError):
            stratified_kfold([0, 1, 0, 1], k=1, seed=0)

    def test_validate_detects_bad_partition(self):
        split = FoldSplit(folds=((0, 1), (3,)), stratification={})
        with pytest.raises(ValueError, match="partition"):
            split.validate(4)


class TestCrossValidate:
    def test_perfect_model_scores_one(self):
        labels = np.array([0] * 10 + [1] * 10)

        def fit_predict(train_idx, test_idx, fold_seed):
            return labels[test_idx].astype(np.float64)

        result = cross_validate(labels, k=5, fit_predict=fit_predict, seed=4)
        assert result.fold_aucs == [1.0] * 5
        assert result.pooled_auc == 1.0
        assert result.pooled_metrics.accuracy == 1.0

    def test_fold_seeds_are_derived_subseeds(self):
        labels = np.array([0] * 6 + [1] * 6)
        seen = []

        def fit_predict(train_idx, test_idx, fold_seed):
            seen.append(fold_seed)
            return np.zeros(test_idx.size) + 0.5

        cross_validate(labels, k=3, fit_predict=fit_predict, seed=5)
        assert seen == [subseed(5, 100 + f) for f in range(3)]

    def test_deterministic_given_deterministic_model(self):
        labels = np.array([0, 1] * 12)

        def fit_predict(train_idx, test_idx, fold_seed):
            rng = rng_for(fold_seed)
            return rng.random(test_idx.size)

        a = cross_validate(labels, k=4, fit_predict=fit_predict, seed=6)
        b = cross_validate(labels, k=4, fit_predict=fit_predict, seed=6)
        assert a.pooled_scores.tobytes() == b.pooled_scores.tobytes()
        assert a.fold_aucs == b.fold_aucs

    def test_wrong_score_shape_rejected(self):
        labels = np.array([0, 1] * 6)

        def fit_predict(train_idx, test_idx, fold_seed):
            return np.zeros(test_idx.size + 2)

        with pytest.raises(ValueError, match="fit_predict returned"):
            cross_validate(labels, k=2, fit_predict=fit_predict, seed=0)

    def test_every_sample_scored_exactly_once(self):
        labels = np.array([0] * 9 + [1] * 9)
        calls = []

        def fit_predict(train_idx, test_idx, fold_seed):
            calls.append(list(test_idx))
            return labels[test_idx].astype(np.float64) * 0.5 + 0.25

        result = cross_validate(labels, k=3, fit_predict=fit_predict, seed=7)
        flat = sorted(i for c in calls for i in c)
        assert flat == list(range(18))
        assert not np.isnan(result.pooled_scores).any()


class TestWriters:
    def make_result(self):
        labels = np.array([0] * 6 + [1] * 6)

        def fit_predict(train_idx, test_idx, fold_seed):
            return labels[test_idx] * 0.6 + 0.2  # 0.2 for good, 0.8 for bad

        return cross_validate(labels, k=3, fit_predict=fit_predict, seed=8)

    def test_fold_csv_exact_text(self, tmp_path):
        result = self.make_result()
        path = tmp_path / "folds.csv"
        write_fold_csv(result, path)
        text = path.read_text()
        lines = text.split("\n")
        assert lines[0] == "fold,auc,accuracy,precision,recall"
        assert lines[1] == "0,1.0,1.0,1.0,1.0"
        assert len(lines) == 5 and lines[-1] == ""

    def test_none_becomes_empty_cell(self, tmp_path):
        labels = np.array([0] * 4 + [1] * 4)

        def fit_predict(train_idx, test_idx, fold_seed):
            # scores below any threshold: no positive predictions
            return labels[test_idx] * 0.2 + 0.1

        result = cross_validate(labels, k=2, fit_predict=fit_predict, seed=9,
                                threshold=0.9)
        path = tmp_path / "folds.csv"
        write_fold_csv(result, path)
        for line in path.read_text().strip().split("\n")[1:]:
            fold, auc, acc, prec, rec = line.split(",")
            assert prec == ""
            assert rec == "0.0"

    def test_summary_structure(self):
        result = self.make_result()
        summary = summarize(result)
        assert summary["k"] == 3
        assert summary["threshold"] == 0.4
        assert len(summary["folds"]) == 3
        assert summary["mean"]["auc"] == 1.0
        assert summary["std"]["auc"] == 0.0
        assert summary["pooled"]["auc"] == 1.0
        assert summary["pooled"]["tp"] == 6

    def test_std_is_population_std(self):
        result = self.make_result()
        result.fold_aucs = [1.0, 0.5, 0.75]
        summary = summarize(result)
        assert summary["std"]["auc"] == pytest.approx(
            float(np.std([1.0, 0.5, 0.75])))

    def test_mean_skips_none(self):
        result = self.make_result()
        result.fold_metrics = [
            Metrics(tp=0, fp=0, tn=4, fn=0, threshold=0.4),
            result.fold_metrics[1],
            result.fold_metrics[2],
        ]
        summary = summarize(result)
        assert summary["mean"]["precision"] == 1.0  # None fold dropped

    def test_summary_json_round_trip_and_determinism(self, tmp_path):
        result = self.make_result()
        p1, p2 = tmp_path / "a.json", tmp_path / "b.json"
        write_summary_json(result, p1)
        write_summary_json(result, p2)
        assert p1.read_bytes() == p2.read_bytes()
        loaded = json.loads(p1.read_text())
        assert loaded["pooled"]["auc"] == 1.0
