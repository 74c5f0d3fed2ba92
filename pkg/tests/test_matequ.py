import numpy as np
import pytest
from hypothesis import given, strategies as st

from foovb import matequ
from foovb.errors import GsvdFailure, IllConditioned, IndefiniteMatrix, NonSymmetric


def pd_matrix(seed, n, shift=1e-2):
    rng = np.random.default_rng(seed)
    w = rng.standard_normal((n, n))
    return w @ w.T + shift * np.eye(n), rng


def scalar_root(v, e):
    """Positive root x of x^2 + v^2 e x - v^2 = 0 by the quadratic formula."""
    b = v * v * e
    return (-b + np.sqrt(b * b + 4 * v * v)) / 2


# -- sym_sqrt ---------------------------------------------------------------------

def test_sym_sqrt_identity_and_diagonal():
    assert np.allclose(matequ.sym_sqrt(np.eye(4)), np.eye(4), atol=1e-15)
    assert np.allclose(matequ.sym_sqrt(np.diag([4.0, 9.0])), np.diag([2.0, 3.0]), atol=1e-14)


@given(st.integers(0, 10_000), st.integers(1, 10))
def test_sym_sqrt_squares_back(seed, n):
    m, _ = pd_matrix(seed, n, shift=0.0)
    d = matequ.sym_sqrt(m)
    assert np.array_equal(d, d.T)
    assert np.linalg.norm(d @ d - m) <= 1e-9 * max(np.linalg.norm(m), 1e-300)
    assert np.linalg.eigvalsh(d).min() >= -1e-10 * np.linalg.norm(d)


def test_sym_sqrt_rejects_asymmetric_and_indefinite():
    with pytest.raises(NonSymmetric):
        matequ.sym_sqrt(np.array([[1.0, 2.0], [0.0, 1.0]]))
    with pytest.raises(IndefiniteMatrix):
        matequ.sym_sqrt(np.diag([1.0, -0.5]))


def test_sym_sqrt_clamps_roundoff_negatives():
    m = np.diag([1.0, -1e-13])
    assert np.allclose(matequ.sym_sqrt(m), np.diag([1.0, 0.0]))


# -- svd_thin ---------------------------------------------------------------------

def test_svd_thin_trivial_cases():
    left, s, right = matequ.svd_thin(np.eye(3))
    assert np.allclose(s, 1.0)
    assert np.allclose(left @ right.T, np.eye(3))
    _, s, _ = matequ.svd_thin(np.diag([3.0, -2.0]))
    assert np.allclose(s, [3.0, 2.0])


@given(st.integers(0, 10_000), st.integers(1, 8))
def test_svd_thin_reconstructs_with_sign_convention(seed, n):
    a = np.random.default_rng(seed).standard_normal((n, n))
    left, s, right = matequ.svd_thin(a)
    assert np.linalg.norm(left * s @ right.T - a) <= 1e-10 * np.linalg.norm(a)
    assert np.all(np.diff(s) <= 0)
    idx = np.argmax(np.abs(left), axis=0)
    assert np.all(left[idx, np.arange(n)] > 0)


def test_svd_thin_is_byte_deterministic():
    a = np.random.default_rng(3).standard_normal((6, 6))
    first = matequ.svd_thin(a.copy())
    second = matequ.svd_thin(a.copy())
    for x, y in zip(first, second):
        assert x.tobytes() == y.tobytes()


# -- positive definite solver ------------------------------------------------

def test_pd_zero_t_gives_square_root():
    assert np.allclose(matequ.solve_quadratic_pd(np.eye(3), np.zeros((3, 3))), np.eye(3))
    m, _ = pd_matrix(1, 5)
    x = matequ.solve_quadratic_pd(m, np.zeros((5, 5)))
    assert np.linalg.norm(x @ x.T - m) <= 1e-9 * np.linalg.norm(m)


@pytest.mark.parametrize("m,t", [(1.0, 2.0), (4.0, 1.0), (1.0, -1.0), (2.5, 0.0)])
def test_pd_scalar_matches_quadratic_formula(m, t):
    x = matequ.solve_quadratic_pd(np.array([[m]]), np.array([[t]]))
    assert x[0, 0] == pytest.approx(scalar_root(np.sqrt(m), t), rel=1e-13)


def test_pd_scalar_reference_values():
    assert matequ.solve_quadratic_pd([[1.0]], [[2.0]])[0, 0] == pytest.approx(np.sqrt(2) - 1)
    assert matequ.solve_quadratic_psd(np.array([[4.0]]), np.array([[1.0]]))[0, 0] == \
        pytest.approx(2 * np.sqrt(2) - 2)


@given(st.integers(0, 100_000), st.integers(2, 16))
def test_pd_residual_bound(seed, n):
    m, rng = pd_matrix(seed, n, shift=1e-3)
    t = rng.standard_normal((n, n))
    x = matequ.solve_quadratic_pd(m, t)
    assert matequ.quadratic_residual(x, m, t) <= 1e-8 * np.linalg.norm(m)


@given(st.integers(0, 100_000), st.integers(1, 8))
def test_diagonal_inputs_reproduce_scalar_update(seed, n):
    rng = np.random.default_rng(seed)
    v = rng.uniform(0.05, 3.0, n)
    e = rng.uniform(-4.0, 4.0, n)
    expected = v * np.sqrt(1 + (0.5 * v * e) ** 2) - 0.5 * v * v * e
    for solver in (matequ.solve_quadratic_pd, matequ.solve_quadratic_psd):
        x = solver(np.diag(v * v), np.diag(e))
        assert np.allclose(x, np.diag(expected), rtol=1e-10, atol=1e-12)


def test_polar_option_keeps_plain_polar_factor():
    # m = 1, t = -1: K = D^{-1} m t is negative, so the polar factor is -1
    x = matequ.solve_quadratic_pd([[1.0]], [[-1.0]], polar=True)
    assert x[0, 0] == pytest.approx(-(np.sqrt(1.25) - 0.5), rel=1e-13)
    aligned = matequ.solve_quadratic_pd([[1.0]], [[-1.0]])
    assert aligned[0, 0] == pytest.approx(np.sqrt(1.25) + 0.5, rel=1e-13)


@given(st.integers(0, 100_000), st.integers(2, 8))
def test_solution_is_equivariant_to_reference_orientation(seed, n):
    # rotating the prior factor by R rotates the statistic by R; the solution must follow
    rng = np.random.default_rng(seed)
    a = rng.standard_normal((n, n)) + 2 * np.eye(n)
    r, _ = np.linalg.qr(rng.standard_normal((n, n)))
    m = a @ a.T
    t = rng.standard_normal((n, n))
    x1 = matequ.solve_quadratic_pd(m, t, a)
    x2 = matequ.solve_quadratic_pd(m, t @ r, a @ r)
    assert np.linalg.norm(x2 - x1 @ r) <= 1e-8 * np.linalg.norm(x1)


def test_negative_reference_keeps_sign_and_shrinks():
    # scalar prior a = -2 with a positive-curvature statistic of matching orientation
    a, h = -2.0, 0.3
    e2 = a * h  # E[g eps] for theta = mu + a eps and curvature h
    x = matequ.solve_quadratic_pd([[a * a]], [[e2]], [[a]])[0, 0]
    assert x < 0 and abs(x) < abs(a)
    assert x * x + a * a * e2 * x - a * a == pytest.approx(0.0, abs=1e-12)


def test_pd_raises_ill_conditioned_for_singular():
    m = np.diag([1.0, 0.0])
    with pytest.raises(IllConditioned):
        matequ.solve_quadratic_pd(m, np.zeros((2, 2)))


# -- semidefinite solver -----------------------------------------------------

def test_psd_zero_matrix_gives_zero():
    x = matequ.solve_quadratic_psd(np.zeros((3, 3)), np.random.default_rng(0).standard_normal((3, 3)))
    assert np.allclose(x, 0.0)


@given(st.integers(0, 100_000), st.integers(2, 12), st.data())
def test_psd_residual_bound_rank_deficient(seed, n, data):
    rank = data.draw(st.integers(0, n))
    rng = np.random.default_rng(seed)
    w = rng.standard_normal((n, rank))
    m = w @ w.T
    t = rng.standard_normal((n, n))
    x = matequ.solve_quadratic_psd(m, t)
    assert matequ.quadratic_residual(x, m, t) <= 1e-7 * (np.linalg.norm(m) + 1)


@given(st.integers(0, 100_000), st.integers(2, 10))
def test_psd_and_pd_paths_both_solve_pd_problems(seed, n):
    m, rng = pd_matrix(seed, n)
    t = rng.standard_normal((n, n))
    bound = 1e-8 * np.linalg.norm(m)
    assert matequ.quadratic_residual(matequ.solve_quadratic_pd(m, t), m, t) <= bound
    assert matequ.quadratic_residual(matequ.solve_quadratic_psd(m, t), m, t) <= bound


# -- GSVD ----------------------------------------------------------------------

def _check_gsvd(a, b, u, z):
    assert np.allclose(u.T @ u, np.eye(len(u)), atol=1e-12)
    assert np.allclose(z.T @ z, np.eye(len(z)), atol=1e-12)
    # U^T a and Z^T b must be diagonal scalings of one common right factor
    ua, zb = u.T @ a, z.T @ b
    stacked = np.vstack([ua, zb])
    n = a.shape[0]
    for i in range(n):
        pair = np.vstack([ua[i], zb[i]])
        assert np.linalg.matrix_rank(pair, tol=1e-8 * (np.linalg.norm(stacked) + 1)) <= 1


def test_gsvd_identity_pair():
    u, z = matequ.gsvd_left(np.eye(3), np.eye(3))
    assert np.allclose(np.abs(u), np.abs(z))
    _check_gsvd(np.eye(3), np.eye(3), u, z)


def test_gsvd_diagonal_pair_gives_signed_permutations():
    a, b = np.diag([2.0, 3.0]), np.diag([5.0, 7.0])
    u, z = matequ.gsvd_left(a, b)
    for f in (u, z):
        assert np.allclose(np.abs(f) @ np.ones(2), 1.0)
        assert np.allclose(np.abs(f).max(axis=0), 1.0)
    _check_gsvd(a, b, u, z)


@given(st.integers(0, 10_000), st.integers(1, 7))
def test_gsvd_reconstruction(seed, n):
    rng = np.random.default_rng(seed)
    a, b = rng.standard_normal((n, n)), rng.standard_normal((n, n))
    u, z, c, s, wt = matequ.gsvd(a, b)
    scale = np.linalg.norm(a) + np.linalg.norm(b)
    assert np.linalg.norm(u * c @ wt - a) <= 1e-8 * scale
    assert np.linalg.norm(z * s @ wt - b) <= 1e-8 * scale
    assert np.allclose(c * c + s * s, 1.0)


def test_gsvd_rejects_mismatched_shapes():
    with pytest.raises(Exception):
        matequ.gsvd(np.eye(2), np.eye(3))


def test_gsvd_failure_is_a_typed_error():
    assert issubclass(GsvdFailure, ArithmeticError)
