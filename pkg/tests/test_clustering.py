import numpy as np
import pytest

from activedc.clustering import _repair_empty, assign_pseudo_labels, dump_assignments, kmeans

from conftest import random_pool


def blobs(rng, n=200):
    centers = np.array([[-1.0, 0.0], [1.0, 0.0]])
    x = np.concatenate([c + 0.05 * rng.standard_normal((n, 2)) for c in centers])
    return x, centers


def test_two_blobs(rng):
    x, centers = blobs(rng)
    model = kmeans(x, 2, seed=0)
    found = model.centroids[np.argsort(model.centroids[:, 0])]
    assert np.abs(found - centers).max() < 0.1


def test_k_equals_n_zero_inertia(rng):
    x = rng.standard_normal((15, 3))
    assert kmeans(x, 15, seed=2).inertia == pytest.approx(0.0, abs=1e-20)


def test_inertia_non_increasing(rng):
    model = kmeans(random_pool(rng, 500, 8), 12, seed=1)
    trace = model.inertia_trace
    assert all(b <= a * (1 + 1e-12) for a, b in zip(trace, trace[1:]))


def test_converged_assignments_are_nearest(rng):
    x = random_pool(rng, 400, 6).data
    model = kmeans(x, 7, seed=4)
    d = ((x[:, None, :] - model.centroids[None]) ** 2).sum(-1)
    assert np.array_equal(np.argmin(d, axis=1), model.assign)


def test_deterministic_and_restarts(rng):
    x = random_pool(rng, 300, 5).data
    a, b = kmeans(x, 6, seed=8, n_init=3), kmeans(x, 6, seed=8, n_init=3)
    assert a.assign.tolist() == b.assign.tolist()
    assert a.inertia <= kmeans(x, 6, seed=8, n_init=1).inertia + 1e-12


def test_empty_cluster_steals_farthest_point():
    x = np.array([[0.0, 0.0], [0.1, 0.0], [3.0, 0.0], [10.0, 0.0], [10.5, 0.0]])
    centroids = np.array([[0.0, 0.0], [10.0, 0.0], [50.0, 0.0]])
    assign = np.array([0, 0, 0, 1, 1])
    dist = ((x - centroids[assign]) ** 2).sum(1)
    counts = np.bincount(assign, minlength=3)
    _repair_empty(x, assign, dist, centroids, counts)
    assert assign.tolist() == [0, 0, 2, 1, 1]
    assert counts.tolist() == [2, 2, 1]
    np.testing.assert_array_equal(centroids[2], x[2])


def test_k_too_large():
    with pytest.raises(ValueError):
        kmeans(np.zeros((3, 2)), 4)


def _three_cluster_model():
    x = np.array([[1.0, 0.0], [0.99, 0.1], [0.98, -0.1], [0.0, 1.0], [0.1, 0.99], [-1.0, 0.0], [-0.99, 0.1]])
    model = kmeans(x, 3, seed=0, n_init=5)
    return x, model


def test_majority_vote_and_tie():
    x, model = _three_cluster_model()
    c_right, c_up, c_left = model.assign[0], model.assign[3], model.assign[5]
    assert len({c_right, c_up, c_left}) == 3
    labeled = assign_pseudo_labels(model, [0, 1, 2, 3, 4], [3, 3, 7, 9, 2], x)
    assert labeled.label_map[c_right] == 3
    assert labeled.label_map[c_up] == 2  # tie between 9 and 2


def test_orphan_cluster_takes_nearest_labeled():
    x, model = _three_cluster_model()
    c_left = model.assign[5]
    # the left cluster has no labeled members; the up-cluster sample (class 4)
    # is closer in angle to it than the right one
    labeled = assign_pseudo_labels(model, [0, 4], [1, 4], x)
    assert labeled.label_map[c_left] == 4
    assert (labeled.label_map >= 0).all()


def test_pseudo_labels_empty_labeled_set():
    x, model = _three_cluster_model()
    with pytest.raises(ValueError):
        assign_pseudo_labels(model, [], [], x)


def test_dump(tmp_path):
    x, model = _three_cluster_model()
    model = assign_pseudo_labels(model, [0, 3, 5], [0, 1, 2], x)
    path = tmp_path / "c.csv"
    dump_assignments(model, path)
    lines = path.read_text().splitlines()
    assert len(lines) == 7
    i, c, y = map(int, lines[5].split(","))
    assert (i, c, y) == (5, model.assign[5], 2)
