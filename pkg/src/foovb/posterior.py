"""Gaussian weight posteriors and their fixed-point online VB updates.

Three parameterizations are supported:

* diagonal: ``theta = mu + sigma * eps``
* matrix-variate: ``W = M + B Phi A^T``, i.e. ``vec(W) = vec(M) + (A kron B) vec(Phi)``
  with column-major ``vec``
* full: ``theta = mu + A eps``

Every update reads only prior values; expectation estimates are reduced in
ascending sample order so results are bit-reproducible for a fixed seed.
"""

import io
import json
import logging
from dataclasses import dataclass, field

import numpy as np

from . import matequ
from .errors import (
    DimensionTooLarge,
    EmptyBatch,
    GsvdFailure,
    IllConditioned,
    NonFinite,
    ShapeMismatch,
    SingularPrior,
    WrongVariant,
)
from .model import Architecture, NetworkParams

log = logging.getLogger(__name__)

VARIANTS = ("diagonal", "matrix_variate", "full")
MAX_FULL_DIM = 64
CHECKPOINT_VERSION = 1


def vec(mat):
    """Column-major vectorization."""
    return np.asarray(mat).reshape(-1, order="F")


def unvec(v, rows, cols):
    return np.asarray(v).reshape(rows, cols, order="F")


@dataclass
class DiagonalPosterior:
    mu: np.ndarray
    sigma: np.ndarray

    def __post_init__(self):
        self.mu = np.asarray(self.mu, dtype=np.float64)
        self.sigma = np.asarray(self.sigma, dtype=np.float64)
        if self.mu.shape != self.sigma.shape or self.mu.ndim != 1:
            raise ShapeMismatch(f"mu {self.mu.shape} vs sigma {self.sigma.shape}")
        if not (np.all(np.isfinite(self.mu)) and np.all(np.isfinite(self.sigma))):
            raise NonFinite("diagonal posterior has non-finite entries")
        if np.any(self.sigma <= 0):
            raise ValueError("sigma must be strictly positive")


@dataclass
class MatrixVariatePosterior:
    """Mean ``M`` (d2 x d1), among-column factor ``A`` (d1 x d1), among-row ``B`` (d2 x d2)."""

    mean: np.ndarray
    a_factor: np.ndarray
    b_factor: np.ndarray

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64)
        self.a_factor = np.asarray(self.a_factor, dtype=np.float64)
        self.b_factor = np.asarray(self.b_factor, dtype=np.float64)
        d2, d1 = self.mean.shape
        if self.a_factor.shape != (d1, d1) or self.b_factor.shape != (d2, d2):
            raise ShapeMismatch(
                f"M {self.mean.shape}, A {self.a_factor.shape}, B {self.b_factor.shape}"
            )
        for name in ("mean", "a_factor", "b_factor"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise NonFinite(f"matrix-variate {name} has non-finite entries")
        if not (np.any(self.a_factor) and np.any(self.b_factor)):
            raise ValueError("A A^T and B B^T must have positive trace")

    @property
    def d1(self):
        return self.mean.shape[1]

    @property
    def d2(self):
        return self.mean.shape[0]


@dataclass
class FullPosterior:
    mu: np.ndarray
    a_factor: np.ndarray
    max_full_dim: int = MAX_FULL_DIM

    def __post_init__(self):
        self.mu = np.asarray(self.mu, dtype=np.float64)
        self.a_factor = np.asarray(self.a_factor, dtype=np.float64)
        d = self.mu.shape[0]
        if self.mu.ndim != 1 or self.a_factor.shape != (d, d):
            raise ShapeMismatch(f"mu {self.mu.shape} vs A {self.a_factor.shape}")
        if d > self.max_full_dim:
            raise DimensionTooLarge(
                f"full covariance over {d} weights exceeds max_full_dim={self.max_full_dim}"
            )
        if not (np.all(np.isfinite(self.mu)) and np.all(np.isfinite(self.a_factor))):
            raise NonFinite("full posterior has non-finite entries")


@dataclass
class MCBatch:
    """K paired noise/gradient samples, stacked along axis 0."""

    eps: np.ndarray
    grads: np.ndarray

    def __post_init__(self):
        self.eps = np.asarray(self.eps, dtype=np.float64)
        self.grads = np.asarray(self.grads, dtype=np.float64)
        if self.eps.shape[0] == 0:
            raise EmptyBatch("MC batch needs at least one sample")
        if self.eps.shape != self.grads.shape:
            raise ShapeMismatch(f"eps {self.eps.shape} vs grads {self.grads.shape}")

    @property
    def k(self):
        return self.eps.shape[0]


@dataclass
class ExpectationEstimates:
    e1: np.ndarray
    e2: np.ndarray
    e3: np.ndarray = None


def sample_noise(shape, rng):
    """I.i.d. standard normals, laid out row-major in ``shape``."""
    return rng.standard_normal(shape)


# -- transforms ------------------------------------------------------------

def transform_diagonal(post, eps):
    eps = np.asarray(eps, dtype=np.float64)
    if eps.shape != post.mu.shape:
        raise ShapeMismatch(f"eps {eps.shape} vs mu {post.mu.shape}")
    return post.mu + post.sigma * eps


def transform_matrix_variate(post, phi):
    phi = np.asarray(phi, dtype=np.float64)
    if phi.shape != post.mean.shape:
        raise ShapeMismatch(f"phi {phi.shape} vs M {post.mean.shape}")
    return post.mean + post.b_factor @ phi @ post.a_factor.T


def transform_full(post, eps):
    eps = np.asarray(eps, dtype=np.float64)
    if eps.shape != post.mu.shape:
        raise ShapeMismatch(f"eps {eps.shape} vs mu {post.mu.shape}")
    return post.mu + post.a_factor @ eps


# -- expectation estimates ---------------------------------------------------

def _ordered_mean(terms, k):
    acc = None
    for term in terms:
        acc = term.copy() if acc is None else acc + term
    return acc / k


def estimate_diagonal(batch):
    if batch.eps.ndim != 2:
        raise ShapeMismatch("diagonal samples must be stacked vectors")
    e1 = _ordered_mean((batch.grads[k] for k in range(batch.k)), batch.k)
    e2 = _ordered_mean((batch.grads[k] * batch.eps[k] for k in range(batch.k)), batch.k)
    return ExpectationEstimates(e1, e2)


def estimate_matrix_variate(batch, post):
    """Mean gradient plus the two Kronecker-factor statistics.

    ``e2 = mean_k Psi_k^T B Phi_k / d2`` (d1 x d1) and
    ``e3 = mean_k Psi_k A Phi_k^T / d1`` (d2 x d2).
    """
    if batch.eps.shape[1:] != post.mean.shape:
        raise ShapeMismatch(f"samples {batch.eps.shape[1:]} vs M {post.mean.shape}")
    a, b = post.a_factor, post.b_factor
    d2, d1 = post.mean.shape
    rng_k = range(batch.k)
    e1 = _ordered_mean((batch.grads[k] for k in rng_k), batch.k)
    e2 = _ordered_mean((batch.grads[k].T @ b @ batch.eps[k] for k in rng_k), batch.k) / d2
    e3 = _ordered_mean((batch.grads[k] @ a @ batch.eps[k].T for k in rng_k), batch.k) / d1
    return ExpectationEstimates(e1, e2, e3)


def estimate_full(batch):
    if batch.eps.ndim != 2:
        raise ShapeMismatch("full samples must be stacked vectors")
    e1 = _ordered_mean((batch.grads[k] for k in range(batch.k)), batch.k)
    e2 = _ordered_mean((np.outer(batch.grads[k], batch.eps[k]) for k in range(batch.k)),
                       batch.k)
    return ExpectationEstimates(e1, e2)


# -- fixed-point updates ----------------------------------------------------

def sigma_update(sigma, e2):
    """Positive root of ``s^2 + sigma^2 e2 s - sigma^2 = 0``."""
    half = 0.5 * sigma * e2
    root = np.hypot(1.0, half)
    # sqrt(1+h^2) - h == 1 / (sqrt(1+h^2) + h); the second form has no cancellation for h > 0
    with np.errstate(divide="ignore"):
        factor = np.where(half > 0, 1.0 / (root + np.abs(half)), root - half)
    return sigma * factor


def update_diagonal(post, est, sigma_min=0.0):
    e1 = np.asarray(est.e1, dtype=np.float64)
    e2 = np.asarray(est.e2, dtype=np.float64)
    if e1.shape != post.mu.shape or e2.shape != post.mu.shape:
        raise ShapeMismatch("estimate shapes do not match the posterior")
    var = post.sigma * post.sigma
    mu = post.mu - var * e1
    sigma = sigma_update(post.sigma, e2)
    if sigma_min > 0:
        sigma = np.maximum(sigma, sigma_min)
    if not (np.all(np.isfinite(mu)) and np.all(np.isfinite(sigma))):
        raise NonFinite("diagonal update produced non-finite values")
    return DiagonalPosterior(mu, sigma)


def solve_factor(m, t, reference=None):
    """Positive definite solve with the PSD and jitter fallbacks used during training."""
    try:
        return matequ.solve_quadratic_pd(m, t, reference)
    except IllConditioned:
        log.debug("ill-conditioned Gram matrix, switching to the GSVD path")
    try:
        return matequ.solve_quadratic_psd(m, t, reference)
    except GsvdFailure:
        jitter = 1e-10 * np.trace(m) / m.shape[0]
        log.warning("GSVD path failed, retrying with jitter %.3e", jitter)
        return matequ.solve_quadratic_pd(m + jitter * np.eye(m.shape[0]), t, reference)


def update_matrix_variate(post, est):
    a, b = post.a_factor, post.b_factor
    sig1 = a @ a.T
    sig2 = b @ b.T
    mean = post.mean - sig2 @ est.e1 @ sig1
    a_new = solve_factor(sig1, est.e2, a)
    b_new = solve_factor(sig2, est.e3, b)
    for name, val in (("M", mean), ("A", a_new), ("B", b_new)):
        if not np.all(np.isfinite(val)):
            raise NonFinite(f"matrix-variate update produced non-finite {name}")
    return MatrixVariatePosterior(mean, a_new, b_new)


def update_full(post, est):
    a = post.a_factor
    cov = a @ a.T
    mu = post.mu - cov @ est.e1
    a_new = solve_factor(cov, est.e2, a)
    if not (np.all(np.isfinite(mu)) and np.all(np.isfinite(a_new))):
        raise NonFinite("full update produced non-finite values")
    return FullPosterior(mu, a_new, post.max_full_dim)


# -- KL divergence ----------------------------------------------------------

def _kl_gauss(mu_q, cov_q, mu_p, cov_p):
    n = mu_q.shape[0]
    try:
        chol = np.linalg.cholesky(cov_p)
    except np.linalg.LinAlgError as exc:
        raise SingularPrior("prior covariance is not positive definite") from exc
    sign_q, logdet_q = np.linalg.slogdet(cov_q)
    if sign_q <= 0:
        raise SingularPrior("posterior covariance is singular")
    logdet_p = 2.0 * np.sum(np.log(np.diag(chol)))
    diff = mu_p - mu_q
    sol = np.linalg.solve(cov_p, np.column_stack([cov_q, diff]))
    trace = np.trace(sol[:, :n])
    maha = diff @ sol[:, n]
    return max(0.0, 0.5 * (logdet_p - logdet_q - n + trace + maha))


def kl_full(q, p):
    """KL(q || p) between two full-covariance Gaussians."""
    if q.mu.shape != p.mu.shape:
        raise ShapeMismatch("dimension mismatch")
    return _kl_gauss(q.mu, q.a_factor @ q.a_factor.T, p.mu, p.a_factor @ p.a_factor.T)


def kl_diagonal(q, p):
    if q.mu.shape != p.mu.shape:
        raise ShapeMismatch("dimension mismatch")
    vq, vp = q.sigma ** 2, p.sigma ** 2
    if np.any(vp <= 0):
        raise SingularPrior("prior variance must be positive")
    terms = np.log(vp / vq) - 1.0 + vq / vp + (p.mu - q.mu) ** 2 / vp
    return max(0.0, 0.5 * float(np.sum(terms)))


def kl_matrix_variate(q, p):
    """KL with the Kronecker determinant and trace identities applied per factor."""
    if q.mean.shape != p.mean.shape:
        raise ShapeMismatch("dimension mismatch")
    d2, d1 = q.mean.shape
    s1, s2 = q.a_factor @ q.a_factor.T, q.b_factor @ q.b_factor.T
    v1, v2 = p.a_factor @ p.a_factor.T, p.b_factor @ p.b_factor.T
    try:
        c1, c2 = np.linalg.cholesky(v1), np.linalg.cholesky(v2)
    except np.linalg.LinAlgError as exc:
        raise SingularPrior("prior factor covariance is not positive definite") from exc
    logdet_v = d2 * 2 * np.sum(np.log(np.diag(c1))) + d1 * 2 * np.sum(np.log(np.diag(c2)))
    sq1, ld1 = np.linalg.slogdet(s1)
    sq2, ld2 = np.linalg.slogdet(s2)
    if sq1 <= 0 or sq2 <= 0:
        raise SingularPrior("posterior factor covariance is singular")
    logdet_s = d2 * ld1 + d1 * ld2
    trace = np.trace(np.linalg.solve(v1, s1)) * np.trace(np.linalg.solve(v2, s2))
    diff = p.mean - q.mean
    # vec(D)^T (V1 kron V2)^{-1} vec(D) = tr(V2^{-1} D V1^{-1} D^T)
    maha = np.trace(np.linalg.solve(v2, diff) @ np.linalg.solve(v1, diff.T))
    return max(0.0, 0.5 * (logdet_v - logdet_s - d1 * d2 + trace + maha))


# -- initialization -----------------------------------------------------------

def init_diagonal(layer_shapes, sigma_init, rng):
    """Mean ~ N(0, 2/(n_in + n_out)) per layer (weights and biases), constant sigma.

    ``layer_shapes`` is a list of (out, in) pairs; the flat layout matches
    :meth:`NetworkParams.flatten`.
    """
    if sigma_init <= 0:
        raise ValueError("sigma_init must be positive")
    parts = []
    for out, inp in layer_shapes:
        std = np.sqrt(2.0 / (inp + out))
        parts.append(std * rng.standard_normal(out * inp))
        parts.append(std * rng.standard_normal(out))
    mu = np.concatenate(parts)
    return DiagonalPosterior(mu, np.full_like(mu, float(sigma_init)))


def init_matrix_variate(d1, d2, alpha, rng, n_input=None):
    """M ~ N(0, 2 alpha/(n+2)); diagonal A, B with entry variance sqrt(2(1-alpha)/(n+2)).

    ``n_input`` defaults to ``d1``.
    """
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0, 1)")
    n = d1 if n_input is None else n_input
    mean = np.sqrt(2.0 * alpha / (n + 2)) * rng.standard_normal((d2, d1))
    factor_std = (2.0 * (1.0 - alpha) / (n + 2)) ** 0.25
    a = np.diag(factor_std * rng.standard_normal(d1))
    b = np.diag(factor_std * rng.standard_normal(d2))
    return MatrixVariatePosterior(mean, a, b)


def init_full(d, sigma_init, rng, n_in, n_out, max_full_dim=MAX_FULL_DIM):
    if d > max_full_dim:
        raise DimensionTooLarge(f"full covariance over {d} weights exceeds {max_full_dim}")
    mu = np.sqrt(2.0 / (n_in + n_out)) * rng.standard_normal(d)
    return FullPosterior(mu, sigma_init * np.eye(d), max_full_dim)


# -- whole-network posterior --------------------------------------------------

@dataclass
class NetworkPosterior:
    """Posterior over every layer of an MLP.

    The diagonal variant keeps one flat posterior over ``NetworkParams.flatten``;
    the other two keep one posterior per layer over the augmented ``[W | b]``
    matrix (the bias is an extra input column). Full-variant layers use the
    column-major ``vec`` of that matrix.
    """

    variant: str
    layer_sizes: tuple
    parts: list = field(default_factory=list)

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise WrongVariant(f"unknown variant {self.variant!r}")
        self.layer_sizes = tuple(int(s) for s in self.layer_sizes)

    @property
    def architecture(self):
        return Architecture(self.layer_sizes)


def init_network(variant, layer_sizes, rng, sigma_init=0.047, alpha=0.5,
                 max_full_dim=MAX_FULL_DIM):
    arch = Architecture(tuple(layer_sizes))
    if variant == "diagonal":
        parts = [init_diagonal(arch.shapes, sigma_init, rng)]
    elif variant == "matrix_variate":
        parts = [init_matrix_variate(inp + 1, out, alpha, rng, n_input=inp)
                 for out, inp in arch.shapes]
    elif variant == "full":
        parts = [init_full(out * (inp + 1), sigma_init, rng, inp, out, max_full_dim)
                 for out, inp in arch.shapes]
    else:
        raise WrongVariant(f"unknown variant {variant!r}")
    return NetworkPosterior(variant, arch.layer_sizes, parts)


def mean_params(net):
    arch = net.architecture
    if net.variant == "diagonal":
        return NetworkParams.from_flat(arch, net.parts[0].mu)
    if net.variant == "matrix_variate":
        return NetworkParams.from_augmented([p.mean for p in net.parts])
    return NetworkParams.from_augmented(
        [unvec(p.mu, o, i + 1) for p, (o, i) in zip(net.parts, arch.shapes)]
    )


def draw_noise(net, rng):
    """One noise sample for the whole network, as a list with one array per part."""
    if net.variant == "diagonal":
        return [sample_noise(net.parts[0].mu.shape, rng)]
    if net.variant == "matrix_variate":
        return [sample_noise(p.mean.shape, rng) for p in net.parts]
    return [sample_noise(p.mu.shape, rng) for p in net.parts]


def transform_network(net, noise):
    arch = net.architecture
    if net.variant == "diagonal":
        return NetworkParams.from_flat(arch, transform_diagonal(net.parts[0], noise[0]))
    if net.variant == "matrix_variate":
        return NetworkParams.from_augmented(
            [transform_matrix_variate(p, e) for p, e in zip(net.parts, noise)]
        )
    return NetworkParams.from_augmented(
        [unvec(transform_full(p, e), o, i + 1)
         for p, e, (o, i) in zip(net.parts, noise, arch.shapes)]
    )


def gradient_parts(net, grad):
    """Split a NetworkParams-shaped gradient the same way as the noise."""
    if net.variant == "diagonal":
        return [grad.flatten()]
    if net.variant == "matrix_variate":
        return grad.augmented()
    return [vec(g) for g in grad.augmented()]


def update_network(net, noises, grads, sigma_min=0.0):
    """Apply the variant's fixed-point update given K noise/gradient part lists."""
    new_parts = []
    for j, part in enumerate(net.parts):
        batch = MCBatch(np.stack([n[j] for n in noises]), np.stack([g[j] for g in grads]))
        try:
            if net.variant == "diagonal":
                new_parts.append(update_diagonal(part, estimate_diagonal(batch), sigma_min))
            elif net.variant == "matrix_variate":
                new_parts.append(update_matrix_variate(part, estimate_matrix_variate(batch, part)))
            else:
                new_parts.append(update_full(part, estimate_full(batch)))
        except NonFinite as exc:
            raise NonFinite(f"layer {j}: {exc}") from exc
    return NetworkPosterior(net.variant, net.layer_sizes, new_parts)


# -- checkpoints ---------------------------------------------------------------

_PART_FIELDS = {
    "diagonal": ("mu", "sigma"),
    "matrix_variate": ("mean", "a_factor", "b_factor"),
    "full": ("mu", "a_factor"),
}


def save_checkpoint(net, path):
    """Write an ``.npz`` archive: a JSON header plus little-endian float64 arrays.

    Header keys: ``format_version``, ``variant``, ``layer_sizes``, ``num_parts``.
    Arrays are named ``part{j}.{field}``.
    """
    header = {
        "format_version": CHECKPOINT_VERSION,
        "variant": net.variant,
        "layer_sizes": list(net.layer_sizes),
        "num_parts": len(net.parts),
    }
    arrays = {"header": np.frombuffer(json.dumps(header).encode(), dtype=np.uint8)}
    for j, part in enumerate(net.parts):
        for name in _PART_FIELDS[net.variant]:
            arrays[f"part{j}.{name}"] = np.asarray(getattr(part, name), dtype="<f8")
    buf = io.BytesIO()
    np.savez(buf, **arrays)
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


def load_checkpoint(path):
    with np.load(path) as data:
        header = json.loads(bytes(data["header"]).decode())
        if header.get("format_version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {header.get('format_version')}")
        variant = header["variant"]
        cls = {"diagonal": DiagonalPosterior, "matrix_variate": MatrixVariatePosterior,
               "full": FullPosterior}[variant]
        parts = []
        for j in range(header["num_parts"]):
            kwargs = {name: data[f"part{j}.{name}"].astype(np.float64)
                      for name in _PART_FIELDS[variant]}
            if variant == "full":
                kwargs["max_full_dim"] = max(MAX_FULL_DIM, kwargs["mu"].shape[0])
            parts.append(cls(**kwargs))
    return NetworkPosterior(variant, tuple(header["layer_sizes"]), parts)
