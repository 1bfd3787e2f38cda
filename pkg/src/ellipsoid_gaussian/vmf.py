"""von Mises-Fisher distribution on the unit sphere S^{k-1}.

Densities are taken with respect to the uniform *probability* measure on the
sphere, so ``exp(vmf_log_density)`` integrates to one against uniform draws.
"""

from dataclasses import dataclass

import numpy as np

from .special import log_vmf_const

__all__ = [
    "VMFParams",
    "vmf_log_density",
    "vmf_sample",
    "vmf_limit_residuals",
    "uniform_sphere",
    "householder_to",
]


@dataclass(frozen=True)
class VMFParams:
    """Mean direction ``mu`` (unit k-vector) and concentration ``tau >= 0``."""

    mu: np.ndarray
    tau: float

    def __post_init__(self):
        mu = np.asarray(self.mu, dtype=float).reshape(-1)
        if mu.size < 2:
            raise ValueError("mean direction needs at least two components")
        if abs(np.linalg.norm(mu) - 1.0) > 1e-12:
            raise ValueError(f"mean direction must be unit norm, got |mu|={np.linalg.norm(mu)}")
        if not np.isfinite(self.tau) or self.tau < 0:
            raise ValueError(f"concentration must be finite and >= 0, got {self.tau}")
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "tau", float(self.tau))

    @property
    def k(self):
        return self.mu.size


def vmf_log_density(z, params):
    """``log C_k(tau) + tau mu^T z`` for unit vector(s) ``z`` (last axis of length k)."""
    z = np.asarray(z, dtype=float)
    norms = np.linalg.norm(z, axis=-1)
    if np.any(np.abs(norms - 1.0) > 1e-8):
        raise ValueError("vmf_log_density requires unit-norm input")
    return log_vmf_const(params.k, params.tau) + params.tau * (z @ params.mu)


def uniform_sphere(n, k, rng):
    """n points uniform on S^{k-1}."""
    g = rng.standard_normal((n, k))
    return g / np.linalg.norm(g, axis=1, keepdims=True)


def householder_to(mu):
    """Unit vector ``u`` such that ``I - 2 u u^T`` swaps ``e_1`` and ``mu``.

    Returns ``None`` when ``mu`` already equals ``e_1``.
    """
    e1 = np.zeros_like(mu)
    e1[0] = 1.0
    diff = e1 - mu
    nrm = np.linalg.norm(diff)
    if nrm < 1e-15:
        return None
    return diff / nrm


def _sample_cosines(k, tau, n, rng):
    """Draw ``w = mu^T eta`` and ``1 - w`` by Wood's envelope rejection.

    Returning ``1 - w`` separately keeps the tangent radius accurate when
    ``tau`` is large and ``w`` rounds to 1.
    """
    m = k - 1.0
    b = m / (2.0 * tau + np.sqrt(4.0 * tau * tau + m * m))
    x0 = (1.0 - b) / (1.0 + b)
    c = tau * x0 + m * np.log1p(-x0 * x0)
    w_out = np.empty(n)
    one_minus_w = np.empty(n)
    filled = 0
    while filled < n:
        need = n - filled
        batch = int(need * 1.25) + 16
        z = rng.beta(0.5 * m, 0.5 * m, size=batch)
        u = rng.uniform(size=batch)
        denom = 1.0 - (1.0 - b) * z
        w = (1.0 - (1.0 + b) * z) / denom
        omw = 2.0 * b * z / denom
        accept = tau * w + m * np.log1p(-x0 * w) - c >= np.log(u)
        idx = np.flatnonzero(accept)[:need]
        w_out[filled:filled + idx.size] = w[idx]
        one_minus_w[filled:filled + idx.size] = omw[idx]
        filled += idx.size
    return w_out, one_minus_w


def _sample_frame(params, n, rng):
    """Samples expressed relative to the north pole: (w, 1-w, tangent unit part)."""
    k = params.k
    w, omw = _sample_cosines(k, params.tau, n, rng)
    v = uniform_sphere(n, k - 1, rng) if k > 2 else rng.choice([-1.0, 1.0], size=(n, 1))
    radius = np.sqrt(omw * (2.0 - omw))
    return w, omw, radius[:, None] * v


def _reflect(points, u):
    if u is None:
        return points
    return points - 2.0 * np.outer(points @ u, u)


def vmf_sample(params, n, rng):
    """
    Exact vMF draws.

    The cosine to the mean direction comes from Wood's (1994) rejection sampler,
    the orthogonal part is uniform on S^{k-2}, and a Householder reflection maps
    the north pole onto ``mu``.

    Returns
    -------
    ndarray, shape (n, k)
        Unit-norm rows.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    w, _, tangent = _sample_frame(params, n, rng)
    pts = np.column_stack([w, tangent])
    pts /= np.linalg.norm(pts, axis=1, keepdims=True)
    return _reflect(pts, householder_to(params.mu))


def vmf_limit_residuals(params, n, rng):
    """``sqrt(tau) * (eta - mu)`` for n fresh draws; tends to N(0, I - mu mu^T)."""
    if params.tau <= 0:
        raise ValueError("the Gaussian limit needs tau > 0")
    _, omw, tangent = _sample_frame(params, n, rng)
    # eta - mu in the pole frame is (w - 1, tangent); the reflection is linear
    diff = np.column_stack([-omw, tangent])
    return np.sqrt(params.tau) * _reflect(diff, householder_to(params.mu))
