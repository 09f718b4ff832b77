import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from oracles import grid_simplex_project, line_search_weights
from scenehmm.ensemble import (
    fuse,
    objective,
    one_hot,
    read_scores_csv,
    simplex_project,
    solve_weights,
    stack_scores,
    weights_from_json,
    weights_to_json,
    write_scores_csv,
)
from scenehmm.errors import AlignmentError, DimensionError, ParameterError


def random_instance(rng, C, N, m):
    S = rng.dirichlet(np.ones(m), size=(C, N))
    labels = rng.integers(0, m, N)
    return S, one_hot(labels, m), labels


# -- projection ---------------------------------------------------------------


def test_project_examples():
    assert np.allclose(simplex_project([0.6, 0.6]), [0.5, 0.5])
    assert np.allclose(simplex_project([1.2, -0.2]), [1.0, 0.0])
    assert np.allclose(grid_simplex_project([1.2, -0.2]), [1.0, 0.0], atol=1e-4)


def test_project_idempotent_on_simplex():
    v = np.array([0.2, 0.3, 0.5])
    assert np.abs(simplex_project(v) - v).max() <= 1e-12


def test_project_rejects_non_finite():
    with pytest.raises(ParameterError):
        simplex_project([np.nan, 1.0])


@pytest.mark.parametrize("seed", range(6))
def test_project_matches_grid(seed):
    rng = np.random.default_rng(seed)
    v = rng.normal(0, 1.5, 2 + seed % 2)
    assert np.abs(simplex_project(v) - grid_simplex_project(v)).max() < 1e-3


@settings(max_examples=60)
@given(arrays(np.float64, st.integers(1, 12), elements=st.floats(-1e3, 1e3)))
def test_project_feasible_and_optimal(v):
    w = simplex_project(v)
    assert np.all(w >= 0) and abs(w.sum() - 1) <= 1e-9
    # variational inequality: (v - w) . (u - w) <= 0 for every vertex u
    for i in range(v.size):
        u = np.zeros(v.size)
        u[i] = 1.0
        assert (v - w) @ (u - w) <= 1e-6 * (1 + np.abs(v).max())


# -- objective ----------------------------------------------------------------


def test_objective_examples():
    D = one_hot([1, 0, 2], 3)
    assert objective([1.0], D[None], D) == 0.0
    S = np.array([[[0.5, 0.5]]])
    assert objective([1.0], S, one_hot([1], 2)) == pytest.approx(0.70711, abs=1e-5)


def test_objective_dimension_mismatch():
    with pytest.raises(DimensionError):
        objective([1.0], np.zeros((1, 3, 2)), np.zeros((3, 3)))
    with pytest.raises(DimensionError):
        objective([0.5, 0.5], np.zeros((1, 3, 2)), np.zeros((3, 2)))


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 4), st.integers(0, 10**6))
def test_objective_convex(C, seed):
    rng = np.random.default_rng(seed)
    S, D, _ = random_instance(rng, C, 10, 3)
    w1, w2 = rng.dirichlet(np.ones(C)), rng.dirichlet(np.ones(C))
    mid = objective((w1 + w2) / 2, S, D)
    assert mid <= (objective(w1, S, D) + objective(w2, S, D)) / 2 + 1e-12


def test_objective_class_permutation_invariant():
    rng = np.random.default_rng(1)
    S, D, _ = random_instance(rng, 3, 15, 4)
    w = rng.dirichlet(np.ones(3))
    perm = [2, 0, 3, 1]
    assert objective(w, S[..., perm], D[:, perm]) == pytest.approx(objective(w, S, D), abs=1e-12)


# -- solve_weights ------------------------------------------------------------


def test_solve_single_classifier():
    rng = np.random.default_rng(2)
    S, D, _ = random_instance(rng, 1, 8, 3)
    sol = solve_weights(S, D)
    assert sol.w.tolist() == [1.0]


def test_solve_perfect_plus_random():
    rng = np.random.default_rng(3)
    _, D, _ = random_instance(rng, 1, 30, 4)
    S = np.stack([D, rng.dirichlet(np.ones(4), size=30)])
    sol = solve_weights(S, D, iters=500)
    assert np.allclose(sol.w, [1.0, 0.0], atol=1e-3)
    assert sol.objective <= 1e-3


@pytest.mark.parametrize("seed", range(5))
def test_solve_matches_line_search(seed):
    rng = np.random.default_rng(10 + seed)
    S, D, _ = random_instance(rng, 2, 20, 3)
    sol = solve_weights(S, D, iters=2000)
    assert sol.objective <= line_search_weights(S, D) + 1e-3


@settings(max_examples=15, deadline=None)
@given(st.integers(1, 5), st.integers(5, 25), st.integers(2, 5), st.booleans(),
       st.integers(0, 10**6))
def test_solve_feasible_and_sandwiched(C, N, m, squared, seed):
    rng = np.random.default_rng(seed)
    S, D, _ = random_instance(rng, C, N, m)
    sol = solve_weights(S, D, iters=200, squared=squared)
    assert np.all(sol.w >= 0) and abs(sol.w.sum() - 1) <= 1e-9
    assert sol.objective == pytest.approx(objective(sol.w, S, D, squared), abs=1e-12)
    for i in range(C):
        assert sol.objective <= sol.baselines[f"vertex_{i}"] + 1e-6
    assert sol.objective <= sol.baselines["uniform"] + 1e-6


def test_solve_classifier_permutation():
    rng = np.random.default_rng(4)
    S, D, _ = random_instance(rng, 3, 20, 3)
    a = solve_weights(S, D, iters=1000)
    b = solve_weights(S[[2, 0, 1]], D, iters=1000)
    assert abs(a.objective - b.objective) < 1e-3


def test_solve_deterministic():
    rng = np.random.default_rng(5)
    S, D, _ = random_instance(rng, 3, 12, 3)
    assert np.array_equal(solve_weights(S, D, 300).w, solve_weights(S, D, 300).w)


def test_solve_bad_iters():
    with pytest.raises(ParameterError):
        solve_weights(np.zeros((1, 2, 2)), np.zeros((2, 2)), iters=0)


# -- fuse ---------------------------------------------------------------------


def test_fuse_examples():
    P = np.array([[0.8, 0.2], [0.2, 0.8]])
    fused, label = fuse(P, [0.5, 0.5])
    assert np.allclose(fused, [0.5, 0.5]) and label == 0
    fused, label = fuse(P, [0.0, 1.0])
    assert np.array_equal(fused, P[1]) and label == 1


@settings(max_examples=30)
@given(st.integers(1, 4), st.integers(2, 6), st.integers(0, 10**6))
def test_fuse_shared_argmax_and_distribution(C, m, seed):
    rng = np.random.default_rng(seed)
    P = rng.dirichlet(np.ones(m), size=C)
    top = rng.integers(m)
    P[:, top] += 2.0
    P /= P.sum(1, keepdims=True)
    fused, label = fuse(P, rng.dirichlet(np.ones(C)))
    assert label == top
    assert abs(fused.sum() - 1) < 1e-9 and np.all(fused >= 0)


def test_fuse_batched():
    rng = np.random.default_rng(6)
    S, _, _ = random_instance(rng, 2, 5, 3)
    fused, labels = fuse(S, [0.3, 0.7])
    assert fused.shape == (5, 3) and labels.shape == (5,)
    assert np.allclose(fused, 0.3 * S[0] + 0.7 * S[1])


def test_fuse_mismatch():
    with pytest.raises(DimensionError):
        fuse(np.zeros((2, 3)), [1.0])


# -- persistence --------------------------------------------------------------


def test_scores_csv_round_trip(tmp_path):
    rng = np.random.default_rng(7)
    P = rng.dirichlet(np.ones(3), size=4)
    ids = ["a/1.pgm", "a/2.pgm", "b/1.pgm", "b/2.pgm"]
    write_scores_csv(tmp_path / "s.csv", ids, P)
    assert (tmp_path / "s.csv").read_text().splitlines()[0] == "image_id,class_0,class_1,class_2"
    back_ids, back = read_scores_csv(tmp_path / "s.csv")
    assert back_ids == ids and np.array_equal(back, P)


def test_stack_scores_alignment():
    P = np.eye(2)
    names, ids, S = stack_scores({"sift": (["x", "y"], P), "gist": (["x", "y"], P)})
    assert names == ["sift", "gist"] and S.shape == (2, 2, 2)
    with pytest.raises(AlignmentError):
        stack_scores({"sift": (["x", "y"], P), "gist": (["y", "x"], P)})


def test_weights_json_round_trip():
    text = weights_to_json(["sift", "gist"], np.array([0.25, 0.75]), objective=1.5)
    names, w = weights_from_json(text)
    assert names == ["sift", "gist"] and w.tolist() == [0.25, 0.75]
