"""Dense kernels for the quadratic matrix equation ``X X^T + M T X^T - M = 0``.

All routines work in float64 and are pure functions of their inputs.

The equation has many solutions: any ``X = D Q - M T / 2`` with ``D = B^{1/2}``,
``B = M + M T T^T M / 4`` and an orthogonal ``Q`` such that ``K Q^T`` is
symmetric (``K = D^{-1} M T``) solves it. The SVD ``K = S diag(s) W^T`` gives
the candidates ``Q = S J W^T`` for any diagonal sign matrix ``J``. The
solvers here pick ``J`` so that ``Q`` lines up with a reference orientation
(the identity by default, or the orthogonal polar factor of the prior
factor ``A`` when one is passed). With diagonal inputs this reproduces the
positive scalar root ``v sqrt(1 + (v t / 2)^2) - v^2 t / 2`` entrywise.
"""

import numpy as np
import scipy.linalg

from .errors import (
    ConvergenceFailure,
    GsvdFailure,
    IllConditioned,
    IndefiniteMatrix,
    NonSymmetric,
    ShapeMismatch,
)

SYM_TOL = 1e-10
PSD_TOL = 1e-10
PD_FLOOR = 1e-12
COND_THRESHOLD = 1e12


def _as_square(a, name="matrix"):
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ShapeMismatch(f"{name} must be square, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} has non-finite entries")
    return a


def _symmetrized(m, tol=SYM_TOL):
    norm = np.linalg.norm(m)
    if np.linalg.norm(m - m.T) > tol * norm:
        raise NonSymmetric(
            f"asymmetry {np.linalg.norm(m - m.T):.3e} exceeds {tol:g} * |m|_F"
        )
    return 0.5 * (m + m.T)


def sym_eig(m, tol=PSD_TOL):
    """Eigendecomposition of a symmetric PSD matrix with small negatives clamped.

    Returns ``(w, v)`` with ascending, nonnegative ``w``.
    """
    m = _symmetrized(_as_square(m))
    try:
        w, v = np.linalg.eigh(m)
    except np.linalg.LinAlgError as exc:
        raise ConvergenceFailure(str(exc)) from exc
    lam_max = max(w[-1], 0.0) if w.size else 0.0
    if w.size and w[0] < -tol * lam_max:
        raise IndefiniteMatrix(f"eigenvalue {w[0]:.3e} below -{tol:g} * {lam_max:.3e}")
    return np.clip(w, 0.0, None), v


def sym_sqrt(m):
    """Symmetric PSD square root ``D`` with ``D @ D == m``."""
    w, v = sym_eig(m)
    d = (v * np.sqrt(w)) @ v.T
    return 0.5 * (d + d.T)


def svd_thin(a):
    """SVD ``a = left @ diag(s) @ right.T`` with a fixed sign convention.

    Singular values come back in descending order. Each left singular vector
    is flipped so that its largest-magnitude entry (first one on ties) is
    positive, and the matching right vector is flipped with it.
    """
    a = _as_square(a)
    try:
        u, s, vt = np.linalg.svd(a)
    except np.linalg.LinAlgError as exc:
        raise ConvergenceFailure(str(exc)) from exc
    v = vt.T
    idx = np.argmax(np.abs(u), axis=0)
    signs = np.where(u[idx, np.arange(u.shape[1])] < 0, -1.0, 1.0)
    return u * signs, s, v * signs


def orientation(reference):
    """Orthogonal polar factor of ``reference`` (``U V^T`` of its SVD)."""
    if reference is None:
        return None
    left, _, right = svd_thin(reference)
    return left @ right.T


def _align_signs(left, right, q_ref):
    # Per pair j, choose the sign making left_j right_j^T agree with q_ref.
    if q_ref is None:
        score = np.einsum("ij,ij->j", left, right)
    else:
        score = np.einsum("ij,ij->j", left, q_ref @ right)
    return np.where(score < 0, -1.0, 1.0)


def quadratic_residual(x, m, t):
    """Frobenius norm of ``x x^T + m t x^T - m``."""
    return np.linalg.norm(x @ x.T + m @ t @ x.T - m)


def _gram(m, t):
    mt = m @ t
    b = m + 0.25 * mt @ mt.T
    return mt, 0.5 * (b + b.T)


def solve_quadratic_pd(m, t, reference=None, *, polar=False,
                       cond_threshold=COND_THRESHOLD):
    """Solve ``X X^T + m t X^T - m = 0`` for strictly positive definite ``m``.

    ``reference`` is an optional factor with ``reference @ reference.T == m``
    whose orientation the solution should follow. With ``polar=True`` the
    sign selection is skipped and ``Q = S W^T`` is the plain polar factor of
    ``D^{-1} m t``; that root always shrinks ``X X^T`` below ``B``.

    Raises IllConditioned when ``cond(B) > cond_threshold``; the caller is
    expected to fall back to :func:`solve_quadratic_psd`.
    """
    m = _symmetrized(_as_square(m, "m"))
    t = _as_square(t, "t")
    if t.shape != m.shape:
        raise ShapeMismatch(f"t has shape {t.shape}, m has {m.shape}")
    mt, b = _gram(m, t)
    w, v = sym_eig(b)
    if w[-1] <= 0.0 or w[0] < w[-1] / cond_threshold:
        cond = np.inf if w[0] <= 0.0 else w[-1] / w[0]
        raise IllConditioned(f"cond(B) = {cond:.3e} exceeds {cond_threshold:g}")
    root = np.sqrt(w)
    d = (v * root) @ v.T
    d = 0.5 * (d + d.T)
    k = (v / root) @ (v.T @ mt)
    q_ref = orientation(reference)
    if not np.any(k):
        q = np.eye(m.shape[0]) if q_ref is None else q_ref
    else:
        left, _, right = svd_thin(k)
        if polar:
            q = left @ right.T
        else:
            q = (left * _align_signs(left, right, q_ref)) @ right.T
    return d @ q - 0.5 * mt


def gsvd(a, b):
    """Generalized SVD of a square pair sharing a right factor.

    Returns ``(u, z, c, s, wt)`` with orthogonal ``u``, ``z``, nonnegative
    ``c``, ``s`` (``c**2 + s**2 == 1``) and ``a = u diag(c) wt``,
    ``b = z diag(s) wt``. Built from a QR of the stacked pair followed by a
    CS decomposition of the orthogonal factor.
    """
    a = _as_square(a, "a")
    b = _as_square(b, "b")
    if a.shape != b.shape:
        raise ShapeMismatch(f"pair shapes differ: {a.shape} vs {b.shape}")
    n = a.shape[0]
    try:
        qf, r = scipy.linalg.qr(np.vstack([a, b]))
        (u, z), theta, (v1h, _) = scipy.linalg.cossin(qf, p=n, q=n, separate=True)
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise GsvdFailure(str(exc)) from exc
    c, s = np.cos(theta), np.sin(theta)
    wt = v1h @ r[:n]
    scale = np.linalg.norm(a) + np.linalg.norm(b) + 1.0
    err = max(np.linalg.norm(a - (u * c) @ wt), np.linalg.norm(b - (z * s) @ wt))
    if not np.isfinite(err) or err > 1e-8 * scale:
        raise GsvdFailure(f"reconstruction error {err:.3e}")
    return u, z, c, s, wt


def gsvd_left(a, b):
    """Left factors ``(u, z)`` of the generalized SVD of ``(a, b)``."""
    u, z, _, _, _ = gsvd(a, b)
    return u, z


def solve_quadratic_psd(m, t, reference=None):
    """Solve ``X X^T + m t X^T - m = 0`` for positive semidefinite ``m``.

    ``Q = U J Z^T`` where ``U``, ``Z`` are the left GSVD factors of
    ``(D^T, t^T m)`` and ``J`` is the sign alignment described in the module
    docstring. No inverse of ``D`` is formed, so singular ``m`` is fine.
    """
    m = _symmetrized(_as_square(m, "m"))
    t = _as_square(t, "t")
    if t.shape != m.shape:
        raise ShapeMismatch(f"t has shape {t.shape}, m has {m.shape}")
    mt, b = _gram(m, t)
    d = sym_sqrt(b)
    u, z, _, _, _ = gsvd(d.T, mt.T)
    q = (u * _align_signs(u, z, orientation(reference))) @ z.T
    return d @ q - 0.5 * mt
