"""Self-contained numerical property suites behind ``foovb verify``.

Each suite draws its own seeded instances, checks one property, and returns
a :class:`SuiteResult` with summary statistics of the observed errors.
"""

from dataclasses import dataclass, field

import numpy as np

from . import matequ
from . import posterior as pst
from .model import Architecture, Batch, NetworkParams, loss_and_grad


@dataclass
class SuiteResult:
    name: str
    passed: bool
    count: int
    stats: dict = field(default_factory=dict)

    def line(self):
        status = "PASS" if self.passed else "FAIL"
        parts = " ".join(f"{k}={v:.3e}" for k, v in self.stats.items())
        return f"{self.name:<13} {status}  n={self.count} {parts}"


def _summary(errors, bound):
    errors = np.asarray(errors, dtype=np.float64)
    return {"max": float(errors.max()), "median": float(np.median(errors)), "bound": bound}


def random_pd(rng, n, shift=1e-3):
    w = rng.standard_normal((n, n))
    return w @ w.T + shift * np.eye(n)


def random_psd(rng, n, rank):
    w = rng.standard_normal((n, rank))
    return w @ w.T


def suite_pd_residual(seed=0, count=1000, tol=1e-8):
    rng = np.random.default_rng(seed)
    errs = []
    for _ in range(count):
        n = int(rng.integers(2, 17))
        m = random_pd(rng, n)
        t = rng.standard_normal((n, n))
        x = matequ.solve_quadratic_pd(m, t)
        errs.append(matequ.quadratic_residual(x, m, t) / np.linalg.norm(m))
    return SuiteResult("lemma1", max(errs) <= tol, count, _summary(errs, tol))


def suite_psd_residual(seed=1, count=500, tol=1e-7):
    rng = np.random.default_rng(seed)
    errs = []
    for i in range(count):
        n = int(rng.integers(2, 17))
        rank = n if i % 4 == 0 else int(rng.integers(0, n))
        m = random_psd(rng, n, rank)
        t = rng.standard_normal((n, n))
        x = matequ.solve_quadratic_psd(m, t)
        errs.append(matequ.quadratic_residual(x, m, t) / (np.linalg.norm(m) + 1.0))
    return SuiteResult("lemma2", max(errs) <= tol, count, _summary(errs, tol))


def suite_diag_full(seed=2, count=200, tol=1e-10):
    rng = np.random.default_rng(seed)
    errs = []
    for _ in range(count):
        d = int(rng.integers(1, 12))
        mu = rng.standard_normal(d)
        sigma = rng.uniform(0.01, 2.0, d)
        e1, e2 = rng.standard_normal(d), 3.0 * rng.standard_normal(d)
        diag = pst.update_diagonal(pst.DiagonalPosterior(mu, sigma),
                                   pst.ExpectationEstimates(e1, e2))
        full = pst.update_full(pst.FullPosterior(mu, np.diag(sigma)),
                               pst.ExpectationEstimates(e1, np.diag(e2)))
        err = max(np.max(np.abs(full.mu - diag.mu)),
                  np.max(np.abs(full.a_factor - np.diag(diag.sigma))))
        errs.append(err)
    return SuiteResult("diag-full", max(errs) <= tol, count, _summary(errs, tol))


def stationarity_full(a_new, v, e2):
    """Relative first-order residual ``|-A'^{-T} + V^{-1} A' + E2| / |V^{-1}|``."""
    v_inv = np.linalg.inv(v)
    res = -np.linalg.inv(a_new).T + v_inv @ a_new + e2
    return np.linalg.norm(res) / np.linalg.norm(v_inv)


def suite_stationarity(seed=3, count=200, tol_full=1e-6, tol_mv=1e-7):
    rng = np.random.default_rng(seed)
    full_errs, mv_errs = [], []
    for _ in range(count):
        a = rng.standard_normal((4, 4)) + 2.0 * np.eye(4)
        post = pst.FullPosterior(rng.standard_normal(4), a)
        e2 = rng.standard_normal((4, 4))
        new = pst.update_full(post, pst.ExpectationEstimates(np.zeros(4), e2))
        full_errs.append(stationarity_full(new.a_factor, a @ a.T, e2))

        d1, d2 = 2, 3
        mv = pst.MatrixVariatePosterior(rng.standard_normal((d2, d1)),
                                        rng.standard_normal((d1, d1)) + 2.0 * np.eye(d1),
                                        rng.standard_normal((d2, d2)) + 2.0 * np.eye(d2))
        est = pst.ExpectationEstimates(rng.standard_normal((d2, d1)),
                                       rng.standard_normal((d1, d1)),
                                       rng.standard_normal((d2, d2)))
        out = pst.update_matrix_variate(mv, est)
        v1 = mv.a_factor @ mv.a_factor.T
        v2 = mv.b_factor @ mv.b_factor.T
        mean_res = np.linalg.norm(out.mean - mv.mean + v2 @ est.e1 @ v1) / (
            np.linalg.norm(mv.mean) + 1.0)
        mv_errs.append(max(stationarity_full(out.a_factor, v1, est.e2),
                           stationarity_full(out.b_factor, v2, est.e3), mean_res))
    passed = max(full_errs) <= tol_full and max(mv_errs) <= tol_mv
    stats = {"full_max": float(max(full_errs)), "matrix_max": float(max(mv_errs))}
    return SuiteResult("stationarity", passed, 2 * count, stats)


def suite_sigma_monotone(seed=4, steps=200):
    rng = np.random.default_rng(seed)
    worst_dec, worst_inc = -np.inf, np.inf
    ok = True
    for m in (0.1, 1.0, 10.0):
        for sign in (1.0, -1.0):
            mu = rng.standard_normal(16)
            sigma = rng.uniform(0.005, 0.02, 16)
            post = pst.DiagonalPosterior(mu, sigma)
            for _ in range(steps):
                # loss sign * m/2 |theta|^2: E[g] = sign m mu, E[g eps] = sign m sigma
                est = pst.ExpectationEstimates(sign * m * post.mu, sign * m * post.sigma)
                new = pst.update_diagonal(post, est)
                ratio = new.sigma / post.sigma
                if sign > 0:
                    worst_dec = max(worst_dec, float(ratio.max()))
                    ok &= bool(np.all(ratio < 1.0))
                else:
                    worst_inc = min(worst_inc, float(ratio.min()))
                    ok &= bool(np.all(ratio > 1.0))
                post = new
    stats = {"min_shrink": 1.0 - worst_dec, "min_growth": worst_inc - 1.0}
    return SuiteResult("theorem1", ok, 6 * steps, stats)


def suite_taylor(seed=5, k=10_000, dim=8, sigma=1e-2, n_se=3.0):
    rng = np.random.default_rng(seed)
    h = rng.uniform(-5.0, 5.0, dim)
    mu = rng.standard_normal(dim)
    eps = pst.sample_noise((k, dim), rng)
    theta = mu + sigma * eps
    grads = theta * h
    est = pst.estimate_diagonal(pst.MCBatch(eps, grads))
    se = np.std(grads * eps, axis=0, ddof=1) / np.sqrt(k)
    z = np.abs(est.e2 - h * sigma) / se
    return SuiteResult("taylor", bool(np.all(z <= n_se)), dim,
                       {"max_z": float(z.max()), "bound": n_se})


def central_difference(fun, x, step=1e-5):
    out = np.empty_like(x)
    for i in range(x.size):
        xp, xm = x.copy(), x.copy()
        xp[i] += step
        xm[i] -= step
        out[i] = (fun(xp) - fun(xm)) / (2 * step)
    return out


def relative_error(a, b, floor=1e-4):
    """Elementwise relative error; entries smaller than ``floor`` compare absolutely.

    Central differences with step 1e-5 carry roundoff near ``eps * |L| / h``
    (about 1e-10 here), so relative error is only meaningful well above that.
    """
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)


def suite_gradcheck(seed=6, trials=5, tol=1e-5):
    rng = np.random.default_rng(seed)
    arch = Architecture((6, 4, 3))
    worst = 0.0
    for _ in range(trials):
        theta = rng.standard_normal(arch.num_params)
        batch = Batch(rng.uniform(size=(7, 6)), rng.integers(0, 3, size=7))
        _, g = loss_and_grad(NetworkParams.from_flat(arch, theta), batch)
        fd = central_difference(
            lambda th: loss_and_grad(NetworkParams.from_flat(arch, th), batch)[0], theta)
        worst = max(worst, float(relative_error(g.flatten(), fd).max()))
    return SuiteResult("gradcheck", worst < tol, trials, {"max_rel": worst, "bound": tol})


def kron_oracles(post, eps, grads):
    """Brute-force Kronecker forms of the transform and the factor statistics."""
    a, b = post.a_factor, post.b_factor
    d2, d1 = post.mean.shape
    kron = np.kron(a, b)
    w = [pst.unvec(pst.vec(post.mean) + kron @ pst.vec(e), d2, d1) for e in eps]
    e2 = np.zeros((d1, d1))
    e3 = np.zeros((d2, d2))
    for e, g in zip(eps, grads):
        ve, vg = pst.vec(e), pst.vec(g)
        for i in range(d1):
            for j in range(d1):
                basis = np.zeros((d1, d1))
                basis[i, j] = 1.0
                e2[i, j] += vg @ np.kron(basis, b) @ ve
        for i in range(d2):
            for j in range(d2):
                basis = np.zeros((d2, d2))
                basis[i, j] = 1.0
                e3[i, j] += vg @ np.kron(a, basis) @ ve
    k = len(eps)
    return w, e2 / (k * d2), e3 / (k * d1)


def suite_kron(seed=7, count=100, tol=1e-12):
    rng = np.random.default_rng(seed)
    errs = []
    for _ in range(count):
        d1, d2, k = (int(v) for v in rng.integers(1, 5, size=3))
        post = pst.MatrixVariatePosterior(rng.standard_normal((d2, d1)),
                                          rng.standard_normal((d1, d1)),
                                          rng.standard_normal((d2, d2)))
        eps = rng.standard_normal((k, d2, d1))
        grads = rng.standard_normal((k, d2, d1))
        w_ref, e2_ref, e3_ref = kron_oracles(post, eps, grads)
        est = pst.estimate_matrix_variate(pst.MCBatch(eps, grads), post)
        err = max(max(np.max(np.abs(pst.transform_matrix_variate(post, e) - w))
                      for e, w in zip(eps, w_ref)),
                  np.max(np.abs(est.e2 - e2_ref)), np.max(np.abs(est.e3 - e3_ref)))
        errs.append(err)
    return SuiteResult("kron", max(errs) <= tol, count, _summary(errs, tol))


SUITES = {
    "lemma1": suite_pd_residual,
    "lemma2": suite_psd_residual,
    "diag-full": suite_diag_full,
    "stationarity": suite_stationarity,
    "theorem1": suite_sigma_monotone,
    "taylor": suite_taylor,
    "gradcheck": suite_gradcheck,
    "kron": suite_kron,
}


def run_suites(names=None):
    names = list(SUITES) if names is None else names
    return [SUITES[n]() for n in names]
