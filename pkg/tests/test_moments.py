import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from ragicl.config import derive_stream
from ragicl.moments import (
    closed_form_result,
    fourth_moment_design,
    fourth_moment_vec,
    isserlis_sixth_oracle,
    matching_count,
    mc_moment,
    mixed_fourth_moments,
    pairing_oracle_result,
    perfect_matchings,
    scalar_fourth_moment,
    sixth_moment,
    within_stderr,
)

from conftest import assert_within


def test_fourth_vec_identity():
    assert np.allclose(fourth_moment_vec(np.eye(3)), 5 * np.eye(3))
    assert np.array_equal(fourth_moment_vec(np.zeros((2, 2))), np.zeros((2, 2)))


def test_fourth_vec_mc(rng):
    W = rng.standard_normal((2, 2))
    est = mc_moment("fourth_vec", {"W": W}, 10**6, derive_stream(1, 1))
    assert_within(est, fourth_moment_vec(W))


def test_fourth_design_reductions(rng):
    W = rng.standard_normal((3, 3))
    assert np.allclose(fourth_moment_design(W, 1), fourth_moment_vec(W))
    assert np.allclose(fourth_moment_design(np.eye(2), 3), 18 * np.eye(2))


def test_fourth_design_mc(rng):
    W = rng.standard_normal((3, 3))
    est = mc_moment("fourth_design", {"W": W, "m": 4}, 200_000, derive_stream(1, 2))
    assert_within(est, fourth_moment_design(W, 4))


def test_scalar_fourth():
    for d in (1, 2, 5):
        I = np.eye(d)
        assert scalar_fourth_moment(I, I) == pytest.approx(d * d + 2 * d)
    e1, e2 = np.diag([1.0, 0.0]), np.diag([0.0, 1.0])
    assert scalar_fourth_moment(e1, e2) == pytest.approx(1.0)


def test_scalar_fourth_mc(rng):
    A, B = rng.standard_normal((2, 3, 3))
    est = mc_moment("scalar_fourth", {"A": A, "B": B}, 10**6, derive_stream(1, 3))
    assert_within(est, scalar_fourth_moment(A, B))


def test_mixed_zero_offsets(rng):
    W = rng.standard_normal((3, 3))
    assert all(np.array_equal(k, np.zeros((3, 3))) for k in mixed_fourth_moments(W, 0.0))


def test_mixed_first_kernel_identity():
    assert np.allclose(mixed_fourth_moments(np.eye(2), 1.0)[0], 4 * np.eye(2))


@pytest.mark.parametrize("i", range(5))
def test_mixed_mc(i):
    rng = derive_stream(2, 0)
    W = rng.standard_normal((3, 3))
    target = mixed_fourth_moments(W, 0.3)[i]
    est = mc_moment(f"mixed{i + 1}", {"W": W, "delta2": 0.3}, 400_000, derive_stream(2, 10 + i))
    assert_within(est, target)


def test_sixth_identity():
    for d in range(1, 5):
        I = np.eye(d)
        assert np.allclose(sixth_moment(I, I), (d + 2) * (d + 4) * I)
        assert np.allclose(isserlis_sixth_oracle(I, I), (d + 2) * (d + 4) * I)
    assert np.array_equal(sixth_moment(np.zeros((3, 3)), np.eye(3)), np.zeros((3, 3)))
    assert isserlis_sixth_oracle(np.eye(1), np.eye(1))[0, 0] == pytest.approx(15.0)


def test_sixth_of_w_and_transpose(rng):
    W = rng.standard_normal((3, 3))
    Wt, tr = W.T, np.trace(W)
    expected = 2 * (W @ W + Wt @ Wt + Wt @ W + W @ Wt + tr * (W + Wt)) + (
        tr * tr + np.trace(W @ W) + np.trace(Wt @ W)) * np.eye(3)
    assert np.allclose(sixth_moment(W, Wt), expected)
    assert np.allclose(isserlis_sixth_oracle(W, Wt), expected)


def test_matchings():
    assert matching_count(6) == 15
    assert matching_count(4) == 3
    pairs = list(perfect_matchings(range(6)))
    assert len(pairs) == len({tuple(sorted(p)) for p in pairs}) == 15
    assert all(sorted(i for pr in p for i in pr) == list(range(6)) for p in pairs)


def test_oracle_dimension_cap():
    with pytest.raises(ValueError):
        isserlis_sixth_oracle(np.eye(9), np.eye(9))


def test_sixth_mc_brackets_closed_form(rng):
    A, B = rng.standard_normal((2, 2, 2))
    est = mc_moment("sixth", {"A": A, "B": B}, 10**6, derive_stream(1, 4))
    assert within_stderr(est, sixth_moment(A, B))


def test_mc_known_target():
    est = mc_moment("fourth_vec", {"W": np.eye(3)}, 10**6, derive_stream(1, 5))
    assert_within(est, 5 * np.eye(3))


def test_mc_degenerate_and_errors():
    est = mc_moment("fourth_vec", {"W": np.eye(2)}, 1, derive_stream(1, 6))
    assert est.degenerate
    assert not mc_moment("fourth_vec", {"W": np.eye(2)}, 10, derive_stream(1, 6)).degenerate
    with pytest.raises(ValueError):
        mc_moment("eighth", {"W": np.eye(2)}, 10, derive_stream(1, 6))
    with pytest.raises(ValueError):
        sixth_moment(np.eye(2), np.eye(3))


def test_mc_is_reproducible():
    a = mc_moment("sixth", {"A": np.eye(2), "B": np.eye(2)}, 5000, derive_stream(3, 0), chunk=700)
    b = mc_moment("sixth", {"A": np.eye(2), "B": np.eye(2)}, 5000, derive_stream(3, 0), chunk=700)
    assert np.array_equal(a.value, b.value)


def test_result_sources(rng):
    A, B = rng.standard_normal((2, 2, 2))
    assert np.allclose(pairing_oracle_result(A, B).value, closed_form_result(A, B).value)
    assert closed_form_result(A, B).order == 6


square = st.integers(1, 4).flatmap(
    lambda d: st.tuples(*[arrays(np.float64, (d, d), elements=st.floats(-3, 3)) for _ in range(2)]))


@settings(max_examples=80, deadline=None)
@given(square)
def test_sixth_matches_pairings(ab):
    A, B = ab
    assert np.allclose(sixth_moment(A, B), isserlis_sixth_oracle(A, B), atol=1e-9)


@settings(max_examples=60, deadline=None)
@given(square, st.floats(-2, 2))
def test_sixth_is_bilinear(ab, c):
    A, B = ab
    assert np.allclose(sixth_moment(c * A, B), c * sixth_moment(A, B), atol=1e-9)
    assert np.allclose(sixth_moment(A, A + B), sixth_moment(A, A) + sixth_moment(A, B), atol=1e-9)


@settings(max_examples=60, deadline=None)
@given(square)
def test_scalar_fourth_symmetries(ab):
    # E[x^T A x x^T B x] is symmetric in A and B
    A, B = ab
    assert scalar_fourth_moment(A, B) == pytest.approx(scalar_fourth_moment(B, A), abs=1e-9)
    assert scalar_fourth_moment(A, B) == pytest.approx(scalar_fourth_moment(A.T, B), abs=1e-9)
