import numpy as np
import pytest

from activedc.evaluation import (
    BenchmarkReport,
    ProbeConfig,
    ProbeModel,
    SyntheticSpec,
    benchmark,
    budget_for_ratio,
    evaluate,
    gen_synthetic,
    parse_method,
    probe_loss_and_grad,
    train_probe,
)
from activedc.features import LabelFile

from oracles import central_difference, relative_error, softmax_regression_loss

SMALL = SyntheticSpec(classes=4, dim=16, per_class=100, concentration=5.0, seed=1)


class TestSynthetic:
    def test_shapes_and_norms(self):
        train, truth, test, test_truth = gen_synthetic(SMALL)
        assert (train.count, train.dim) == (320, 16)
        assert test.count == 80
        assert train.normalized and test.normalized
        np.testing.assert_allclose(np.linalg.norm(train.data, axis=1), 1.0, atol=1e-6)
        assert np.bincount(truth.labels).tolist() == [80] * 4
        assert np.bincount(test_truth.labels).tolist() == [20] * 4

    def test_default_size(self):
        train, _, test, _ = gen_synthetic(SyntheticSpec())
        assert (train.count, train.dim, test.count) == (10_000, 64, 2_500)

    def test_deterministic(self):
        a, b = gen_synthetic(SMALL), gen_synthetic(SMALL)
        assert a[0].data.tobytes() == b[0].data.tobytes()
        assert a[1].entries == b[1].entries

    def test_classes_are_separable(self):
        train, truth, _, _ = gen_synthetic(SyntheticSpec(concentration=10.0, per_class=200))
        y = truth.labels
        means = np.array([train.data[y == k].mean(0) for k in range(10)])
        assert (np.argmax(train.data @ means.T, axis=1) == y).mean() > 0.95

    def test_impossible_spacing(self):
        with pytest.raises(RuntimeError, match="class means"):
            gen_synthetic(SyntheticSpec(classes=5, dim=1, per_class=2))

    def test_invalid_spec(self):
        with pytest.raises(ValueError):
            SyntheticSpec(classes=1)


class TestProbe:
    @pytest.mark.parametrize("seed", range(10))
    def test_gradient_against_oracle(self, seed):
        rng = np.random.default_rng(seed)
        n, d, k = int(rng.integers(5, 30)), int(rng.integers(2, 8)), int(rng.integers(2, 5))
        x = rng.standard_normal((n, d))
        y = rng.integers(0, k, n)
        w, b = rng.standard_normal((k, d)), rng.standard_normal(k)
        loss, gw, gb = probe_loss_and_grad(w, b, x, y, 1e-2)
        assert loss == pytest.approx(softmax_regression_loss(w, b, x, y, 1e-2), rel=1e-10)
        fd_w = central_difference(lambda v: softmax_regression_loss(v, b, x, y, 1e-2), w)
        fd_b = central_difference(lambda v: softmax_regression_loss(w, v, x, y, 1e-2), b)
        assert relative_error(gw, fd_w) < 1e-4
        assert relative_error(gb, fd_b) < 1e-4

    def test_separable_toy(self):
        x = np.array([[1.0, 0.0], [0.9, 0.1], [0.0, 1.0], [0.1, 0.9]])
        probe = train_probe(x, (np.arange(4), np.array([0, 0, 1, 1])))
        assert probe.predict(x).tolist() == [0, 0, 1, 1]

    def test_loss_non_increasing(self):
        train, truth, _, _ = gen_synthetic(SMALL)
        idx = np.arange(100)
        probe = train_probe(train, (idx, truth.lookup(idx)), ProbeConfig(learning_rate=0.1))
        trace = probe.loss_trace
        assert all(b <= a + 1e-12 for a, b in zip(trace, trace[1:]))

    def test_single_class_rejected(self):
        with pytest.raises(ValueError, match="2 classes"):
            train_probe(np.eye(3), (np.arange(3), np.zeros(3, dtype=int)))

    def test_full_data_accuracy(self):
        train, truth, test, test_truth = gen_synthetic(SMALL)
        probe = train_probe(train, (truth.indices, truth.labels))
        assert evaluate(probe, test, test_truth) > 0.95


class TestEvaluate:
    def test_class_means_as_probe(self):
        train, truth, test, test_truth = gen_synthetic(SMALL)
        means = np.array([train.data[truth.labels == k].mean(0) for k in range(4)])
        probe = ProbeModel(means, np.zeros(4))
        expected = (np.argmax(test.data @ means.T, axis=1) == test_truth.labels).mean()
        assert evaluate(probe, test, test_truth) == expected

    def test_random_probe_near_chance(self):
        train, _, test, test_truth = gen_synthetic(SyntheticSpec(classes=10, per_class=500, seed=2))
        rng = np.random.default_rng(0)
        accs = [evaluate(ProbeModel(rng.standard_normal((10, 64)), np.zeros(10)), test, test_truth)
                for _ in range(20)]
        assert abs(np.mean(accs) - 0.1) < 0.05

    def test_permutation_invariant(self):
        _, _, test, test_truth = gen_synthetic(SMALL)
        rng = np.random.default_rng(0)
        probe = ProbeModel(rng.standard_normal((4, 16)), rng.standard_normal(4))
        perm = rng.permutation(test.count)
        base = evaluate(probe, test, test_truth)
        assert evaluate(probe, test.data[perm], test_truth.labels[perm]) == base

    def test_empty_and_mismatch(self):
        probe = ProbeModel(np.zeros((2, 3)), np.zeros(2))
        with pytest.raises(ValueError, match="empty"):
            evaluate(probe, np.zeros((0, 3)), np.zeros(0, dtype=int))
        with pytest.raises(ValueError, match="dimension"):
            evaluate(probe, np.zeros((2, 4)), np.zeros(2, dtype=int))


def test_parse_method():
    assert parse_method("kmeans+dc") == ("kmeans", True)
    assert parse_method("parametric") == ("parametric", False)
    with pytest.raises(ValueError):
        parse_method("nope")
    with pytest.raises(ValueError):
        parse_method("random+xx")


def test_budget_for_ratio():
    assert budget_for_ratio(1, 10_000) == 100
    assert budget_for_ratio(0.5, 10_000) == 50
    assert budget_for_ratio(0.001, 100) == 1


class TestBenchmark:
    def run(self):
        return benchmark(["random", "random+dc", "kcenter"], [5, 10], [0, 1], spec=SMALL,
                         calibration_kw={"kmeans_restarts": 2}, selection_kw={"max_iters": 20})

    def test_shape(self):
        report = self.run()
        assert isinstance(report, BenchmarkReport)
        assert len(report.rows) == 3 * 2 * 2
        assert len(report.summary) == 3 * 2
        accs = [r["accuracy"] for r in report.rows if r["method"] == "random" and r["ratio"] == 5]
        cell = report.cell("random", 5)
        assert cell["mean"] == pytest.approx(np.mean(accs))
        assert cell["std"] == pytest.approx(np.std(accs, ddof=1))
        lines = report.rows_csv().splitlines()
        assert lines[0] == "method,ratio,seed,accuracy" and len(lines) == 13

    def test_deterministic(self):
        assert self.run().rows_csv() == self.run().rows_csv()

    def test_empty_grid(self):
        with pytest.raises(ValueError):
            benchmark([], [1], [0], spec=SMALL)

    def test_labels_type(self):
        _, truth, _, _ = gen_synthetic(SMALL)
        assert isinstance(truth, LabelFile)
