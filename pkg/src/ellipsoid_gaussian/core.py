"""
The Ellipsoid-Gaussian distribution.

A point is generated as ``x = c + U diag(s) eta + eps`` with
``eta ~ vMF(mu, tau)`` on S^{k-1} and ``eps ~ N(0, diag(sigma2))``. The loadings
are stored as the axis frame ``U`` (orthonormal columns) and semi-axis lengths
``s``; the right singular factor of a general loadings matrix is absorbed
into ``mu`` because only ``Lambda Gamma^T`` and ``Gamma mu`` jointly are
identified.

Marginalising ``eta`` gives

    log f(x) = log C_k(tau) - p/2 log(2 pi) - sum(log sigma_j)
               - (x - c)^T Sigma^-1 (x - c) / 2
               + log sigma_FB(tau mu + Lambda^T Sigma^-1 (x - c), Lambda^T Sigma^-1 Lambda / 2)

where ``sigma_FB`` is the Fisher-Bingham constant of
:mod:`ellipsoid_gaussian.fisher_bingham`.
"""

import json
import math
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .fisher_bingham import FisherBinghamA, FisherBinghamError
from .special import bessel_ratio, log_vmf_const
from .vmf import VMFParams, vmf_sample

__all__ = [
    "EGParams",
    "Dataset",
    "Standardization",
    "EGGradient",
    "GaussianFactorModel",
    "eg_sample",
    "eg_log_density",
    "eg_marginal",
    "eg_mean",
    "eg_cov",
    "eg_log_mgf",
    "eg_log_density_grad",
    "eg_limit_construction",
    "gaussian_limit",
    "project_stiefel",
    "project_sphere",
]


def project_sphere(mu, v):
    """Component of ``v`` tangent to the unit sphere at ``mu``."""
    return v - (mu @ v) * mu


def project_stiefel(U, Z):
    """Project ``Z`` onto the tangent space of the Stiefel manifold at ``U``."""
    UtZ = U.T @ Z
    return Z - U @ (0.5 * (UtZ + UtZ.T))


def _as_vector(a, name, length=None):
    a = np.asarray(a, dtype=float).reshape(-1)
    if length is not None and a.size != length:
        raise ValueError(f"{name} has length {a.size}, expected {length}")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} must be finite")
    return a


@dataclass(frozen=True)
class EGParams:
    """
    Parameters ``(c, U, s, mu, tau, sigma2)`` of an Ellipsoid-Gaussian on R^p.

    ``U`` is p x k with orthonormal columns. A marginal on fewer than ``k``
    coordinates (see :func:`eg_marginal`) keeps ``k`` latent dimensions; its
    trailing ``k - p`` columns of ``U`` are zero and the matching lengths are 0.
    """

    c: np.ndarray
    U: np.ndarray
    s: np.ndarray
    mu: np.ndarray
    tau: float
    sigma2: np.ndarray

    def __post_init__(self):
        U = np.atleast_2d(np.asarray(self.U, dtype=float))
        p, k = U.shape
        if k < 2:
            raise ValueError("the latent sphere needs k >= 2")
        c = _as_vector(self.c, "c", p)
        s = _as_vector(self.s, "s", k)
        mu = _as_vector(self.mu, "mu", k)
        sigma2 = _as_vector(self.sigma2, "sigma2", p)
        tau = float(self.tau)
        if not np.all(np.isfinite(U)):
            raise ValueError("U must be finite")
        if np.any(s < 0):
            raise ValueError("semi-axis lengths must be non-negative")
        if abs(np.linalg.norm(mu) - 1.0) > 1e-12:
            raise ValueError(f"mu must be a unit vector (|mu| = {np.linalg.norm(mu)!r})")
        if not math.isfinite(tau) or tau < 0:
            raise ValueError("tau must be finite and non-negative")
        if np.any(sigma2 <= 0):
            raise ValueError("noise variances must be positive")
        r = min(p, k)
        gram = U[:, :r].T @ U[:, :r]
        if np.max(np.abs(gram - np.eye(r))) > 1e-10:
            raise ValueError("U must have orthonormal columns")
        if k > p and (np.any(U[:, p:] != 0) or np.any(s[p:] != 0)):
            raise ValueError("with k > p the trailing axes must be degenerate")
        for name, val in (("c", c), ("U", U), ("s", s), ("mu", mu), ("sigma2", sigma2)):
            val.setflags(write=False)
            object.__setattr__(self, name, val)
        object.__setattr__(self, "tau", tau)

    @property
    def p(self):
        return self.U.shape[0]

    @property
    def k(self):
        return self.U.shape[1]

    @property
    def loadings(self):
        """``Lambda = U diag(s)``."""
        return self.U * self.s

    @classmethod
    def from_loadings(cls, c, loadings, mu, tau, sigma2):
        """Build from a general p x k loadings matrix, absorbing its right factor into ``mu``."""
        L = np.atleast_2d(np.asarray(loadings, dtype=float))
        p, k = L.shape
        if k > p:
            raise ValueError("from_loadings requires k <= p")
        U, s, Vt = np.linalg.svd(L, full_matrices=False)
        mu = np.asarray(mu, dtype=float)
        mu_new = Vt @ mu
        mu_new /= np.linalg.norm(mu_new)
        return cls(c=c, U=U, s=s, mu=mu_new, tau=tau, sigma2=sigma2)

    def replace(self, **changes):
        return replace(self, **changes)

    def to_dict(self):
        """Flat JSON-shaped record; ``U`` is flattened column-major."""
        return {
            "p": self.p,
            "k": self.k,
            "c": self.c.tolist(),
            "U": self.U.flatten(order="F").tolist(),
            "s": self.s.tolist(),
            "mu": self.mu.tolist(),
            "tau": self.tau,
            "sigma2": self.sigma2.tolist(),
        }

    @classmethod
    def from_dict(cls, d):
        p, k = int(d["p"]), int(d["k"])
        U = np.asarray(d["U"], dtype=float)
        if U.size != p * k:
            raise ValueError(f"U has {U.size} entries, expected p*k = {p * k}")
        return cls(
            c=d["c"],
            U=U.reshape((p, k), order="F"),
            s=d["s"],
            mu=d["mu"],
            tau=d["tau"],
            sigma2=d["sigma2"],
        )

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True)
class Standardization:
    """Per-column affine map ``z = (x - mean) / sd``."""

    mean: np.ndarray
    sd: np.ndarray

    def __post_init__(self):
        mean = _as_vector(self.mean, "mean")
        sd = _as_vector(self.sd, "sd", mean.size)
        if np.any(sd <= 0):
            raise ValueError("standardization sd must be positive")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "sd", sd)

    @classmethod
    def fit(cls, X):
        X = np.asarray(X, dtype=float)
        return cls(mean=X.mean(axis=0), sd=X.std(axis=0, ddof=1))

    def apply(self, X):
        return (np.asarray(X, dtype=float) - self.mean) / self.sd

    def invert(self, Z):
        return np.asarray(Z, dtype=float) * self.sd + self.mean

    def log_jacobian(self):
        """``log |dz/dx|``; add to a density in z-units to get raw units' density."""
        return -float(np.sum(np.log(self.sd)))

    def to_dict(self):
        return {"mean": self.mean.tolist(), "sd": self.sd.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(mean=d["mean"], sd=d["sd"])


@dataclass(frozen=True)
class Dataset:
    """n x p data matrix with column labels and an optional standardization record."""

    values: np.ndarray
    column_names: Sequence[str] = ()
    standardization: Optional[Standardization] = None

    def __post_init__(self):
        X = np.asarray(self.values, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        if X.ndim != 2:
            raise ValueError("dataset values must be a 2-d array")
        if not np.all(np.isfinite(X)):
            raise ValueError("dataset contains non-finite entries")
        names = tuple(self.column_names) or tuple(f"x{j + 1}" for j in range(X.shape[1]))
        if len(names) != X.shape[1]:
            raise ValueError(f"{len(names)} column names for {X.shape[1]} columns")
        if self.standardization is not None and self.standardization.mean.size != X.shape[1]:
            raise ValueError("standardization record does not match the number of columns")
        object.__setattr__(self, "values", X)
        object.__setattr__(self, "column_names", names)

    @property
    def n(self):
        return self.values.shape[0]

    @property
    def p(self):
        return self.values.shape[1]

    def standardized(self):
        """Return a standardized copy; raw data can be recovered from the record."""
        if self.standardization is not None:
            raise ValueError("dataset is already standardized")
        rec = Standardization.fit(self.values)
        return Dataset(rec.apply(self.values), self.column_names, rec)

    def with_standardization(self, rec):
        """Apply an existing record (e.g. the training one) to raw values."""
        return Dataset(rec.apply(self.values), self.column_names, rec)

    def raw_values(self):
        if self.standardization is None:
            return self.values
        return self.standardization.invert(self.values)

    def column_index(self, col):
        if isinstance(col, (int, np.integer)):
            if not 0 <= col < self.p:
                raise IndexError(f"column {col} out of range for p={self.p}")
            return int(col)
        try:
            return self.column_names.index(col)
        except ValueError:
            raise KeyError(f"no column named {col!r}") from None


# -- sampling and moments ------------------------------------------------------


def eg_sample(params, n, rng, return_latent=False):
    """Draw ``n`` points; optionally also return the n x k latent sphere points."""
    eta = vmf_sample(VMFParams(params.mu, params.tau), n, rng)
    eps = rng.standard_normal((n, params.p)) * np.sqrt(params.sigma2)
    X = params.c + eta @ params.loadings.T + eps
    data = Dataset(X)
    return (data, eta) if return_latent else data


def eg_mean(params):
    """``c + rho_k(tau) Lambda mu``."""
    return params.c + bessel_ratio(params.k, params.tau) * (params.loadings @ params.mu)


def eg_cov(params):
    """
    Covariance ``rho/tau Lambda Lambda^T + (1 - k rho/tau - rho^2) m m^T + Sigma``
    with ``m = Lambda mu``; at ``tau = 0`` the analytic limit ``Lambda Lambda^T / k + Sigma``.
    """
    k, tau = params.k, params.tau
    L = params.loadings
    if tau == 0.0:
        return L @ L.T / k + np.diag(params.sigma2)
    rho = bessel_ratio(k, tau)
    m = L @ params.mu
    return (rho / tau) * (L @ L.T) + (1.0 - k * rho / tau - rho * rho) * np.outer(m, m) + np.diag(params.sigma2)


def eg_log_mgf(t, params):
    """``t^T c + t^T Sigma t / 2 + log C_k(tau) - log C_k(|Lambda^T t + tau mu|)``."""
    t = _as_vector(t, "t", params.p)
    kappa = float(np.linalg.norm(params.loadings.T @ t + params.tau * params.mu))
    return (
        float(t @ params.c)
        + 0.5 * float(t @ (params.sigma2 * t))
        + log_vmf_const(params.k, params.tau)
        - log_vmf_const(params.k, kappa)
    )


# -- density -------------------------------------------------------------------


def _fb_inputs(X, params):
    D = 1.0 / params.sigma2
    L = params.loadings
    R = X - params.c
    gamma = params.tau * params.mu + (R * D) @ L
    A = 0.5 * (L.T @ (L * D[:, None]))
    return R, D, L, gamma, A


def _gaussian_part(R, D, params):
    return (
        log_vmf_const(params.k, params.tau)
        - 0.5 * params.p * math.log(2.0 * math.pi)
        - 0.5 * float(np.sum(np.log(params.sigma2)))
        - 0.5 * np.einsum("ij,ij->i", R * D, R)
    )


def _rows(x, p):
    X = np.asarray(x, dtype=float)
    single = X.ndim == 1
    X = np.atleast_2d(X)
    if X.shape[1] != p:
        raise ValueError(f"points have dimension {X.shape[1]}, parameters have p={p}")
    return single, X


def eg_log_density(x, params, order="corrected"):
    """
    Log density at one point (p-vector) or at every row of an (n, p) array.

    All rows share one factorisation of the Fisher-Bingham quadratic term.

    Raises
    ------
    FisherBinghamError
        If the saddlepoint fails; ``err.points`` holds the offending rows.
    """
    single, X = _rows(x, params.p)
    R, D, L, gamma, A = _fb_inputs(X, params)
    fb = FisherBinghamA(A, order=order)
    try:
        lc = fb.log_const(gamma)
    except FisherBinghamError as err:
        err.points = X[err.rows] if err.rows is not None else X
        raise
    out = _gaussian_part(R, D, params) + lc
    return float(out[0]) if single else out


@dataclass
class EGGradient:
    """
    Gradient of the log density (summed over rows for batched input).

    ``U`` and ``mu`` are Riemannian gradients, i.e. Euclidean gradients
    projected onto the Stiefel and sphere tangent spaces; the raw Euclidean
    versions are kept in ``U_euclid`` and ``mu_euclid``. ``log_sigma2`` is the
    derivative with respect to ``log sigma_j^2``.
    """

    c: np.ndarray
    U: np.ndarray
    s: np.ndarray
    mu: np.ndarray
    tau: float
    log_sigma2: np.ndarray
    U_euclid: np.ndarray = field(repr=False)
    mu_euclid: np.ndarray = field(repr=False)
    value: float = 0.0


def loglik_grad(X, params, order="corrected", weights=None):
    """Per-row log densities and the weighted sum of their gradients."""
    R, D, L, gamma, A = _fb_inputs(X, params)
    fb = FisherBinghamA(A, order=order)
    lc, G, H = fb.log_const_grad(gamma)
    logf = _gaussian_part(R, D, params) + lc
    w = np.ones(X.shape[0]) if weights is None else np.asarray(weights, dtype=float)
    Gw = G * w[:, None]
    Hs = np.einsum("n,nab->ab", w, H)
    RD = R * D
    # d/dc: D r - D Lambda G
    g_c = (RD * w[:, None]).sum(axis=0) - D * (L @ Gw.sum(axis=0))
    # d/dLambda: D r G^T + D Lambda H (H symmetric, summed)
    g_L = RD.T @ Gw + (D[:, None] * L) @ Hs
    g_U = g_L * params.s
    g_s = np.einsum("ij,ij->j", params.U, g_L)
    g_mu = params.tau * Gw.sum(axis=0)
    g_tau = -bessel_ratio(params.k, params.tau) * w.sum() + float(params.mu @ Gw.sum(axis=0))
    # d/dlog sigma_j^2
    g_ls = (
        -0.5 * w.sum()
        + 0.5 * D * (R * R * w[:, None]).sum(axis=0)
        - D * np.einsum("nj,jb,nb->j", R, L, Gw)
        - 0.5 * D * np.einsum("ja,ab,jb->j", L, Hs, L)
    )
    grad = EGGradient(
        c=g_c,
        U=project_stiefel(params.U, g_U) if params.k <= params.p else g_U,
        s=g_s,
        mu=project_sphere(params.mu, g_mu),
        tau=g_tau,
        log_sigma2=g_ls,
        U_euclid=g_U,
        mu_euclid=g_mu,
        value=float(np.sum(w * logf)),
    )
    return logf, grad


def eg_log_density_grad(x, params, order="corrected"):
    """
    Exact gradient of :func:`eg_log_density` in every parameter block.

    The Fisher-Bingham term is differentiated through the saddlepoint
    solution by the implicit function theorem. For an (n, p) array the
    gradients are summed over rows.
    """
    _, X = _rows(x, params.p)
    return loglik_grad(X, params, order=order)[1]


# -- marginals and limits --------------------------------------------------------


def eg_marginal(params, index_set):
    """EG parameters of the sub-vector ``x[index_set]`` (0-based indices)."""
    idx = np.asarray(list(index_set), dtype=int).reshape(-1)
    if idx.size == 0:
        raise ValueError("index set must be non-empty")
    if np.any(idx < 0) or np.any(idx >= params.p) or np.unique(idx).size != idx.size:
        raise ValueError(f"index set {idx.tolist()} invalid for p={params.p}")
    L = params.loadings[idx]
    q, k = L.shape
    U_full, s_full, Vt = np.linalg.svd(L, full_matrices=True)
    # Lambda_I V = [U_r diag(s_r), 0]; rotate the latent sphere by V^T
    r = min(q, k)
    U = np.zeros((q, k))
    U[:, :r] = U_full[:, :r]
    s = np.zeros(k)
    s[:r] = s_full[:r]
    mu = Vt @ params.mu
    mu /= np.linalg.norm(mu)
    return EGParams(c=params.c[idx], U=U, s=s, mu=mu, tau=params.tau, sigma2=params.sigma2[idx])


def eg_limit_construction(U, s, c, sigma2, tau):
    """
    Member of the sequence whose ``tau -> infinity`` limit is a Gaussian factor
    model: lengths ``sqrt(tau) * (s_1, ..., s_{k-1}, 0)`` and ``mu = e_k``.
    """
    if tau <= 0:
        raise ValueError("tau must be positive")
    s = np.asarray(s, dtype=float).copy()
    s[-1] = 0.0
    k = s.size
    mu = np.zeros(k)
    mu[-1] = 1.0
    return EGParams(c=c, U=U, s=math.sqrt(tau) * s, mu=mu, tau=tau, sigma2=sigma2)


@dataclass(frozen=True)
class GaussianFactorModel:
    """``x = c + loadings @ eta + eps`` with standard normal ``eta``."""

    c: np.ndarray
    loadings: np.ndarray
    sigma2: np.ndarray

    def cov(self):
        return self.loadings @ self.loadings.T + np.diag(self.sigma2)

    def log_density(self, x):
        from scipy.stats import multivariate_normal

        return multivariate_normal(mean=self.c, cov=self.cov()).logpdf(x)

    def sample(self, n, rng):
        eta = rng.standard_normal((n, self.loadings.shape[1]))
        eps = rng.standard_normal((n, self.c.size)) * np.sqrt(self.sigma2)
        return self.c + eta @ self.loadings.T + eps


def gaussian_limit(U, s, c, sigma2):
    """Limit of :func:`eg_limit_construction`: loadings ``U_{-k} diag(s_{-k})``."""
    U = np.asarray(U, dtype=float)
    s = np.asarray(s, dtype=float)
    return GaussianFactorModel(
        c=np.asarray(c, dtype=float), loadings=U[:, :-1] * s[:-1], sigma2=np.asarray(sigma2, dtype=float)
    )
