"""
Cayley-transform ellipsoid fitting (CTEF).

The data are first projected onto their top-k principal subspace. Inside it
the ellipsoid ``{y : |diag(1/a) R^T (y - c)| = 1}`` is fitted by minimising the
algebraic loss

    J(c, W, a) = sum_i (|diag(1/a) R(W)^T (y_i - c)|^2 - 1)^2,

where ``R(W) = (I - W)(I + W)^-1`` is the Cayley transform of a skew-symmetric
``W``. The parameterisation is unconstrained, so BFGS applies directly.

``J`` decreases without bound along ever larger ellipsoids that pass near
the data, which wins over the true ellipsoid once the data cover only part
of it. Each start is therefore polished with the Sampson-normalised loss
``sum_i e_i^2 / |grad_y e_i|^2`` (a first-order geometric distance), and
starts are ranked by it. The fit seeds every block of the EG parameters,
not only the center.
"""

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from .core import Dataset, EGParams
from .special import inverse_bessel_ratio

__all__ = ["EllipsoidFit", "ctef_fit", "cayley"]

log = logging.getLogger(__name__)

# mean resultant length above which the data cover too little of the ellipsoid
# for the fit to be trusted
ARC_WARN_RESULTANT = 0.8
_MAX_TAU = 1e6
# The algebraic loss tends to 0 along ever larger ellipsoids passing near the
# data, so semi-axes (in units of the rms data radius) are squashed smoothly
# into (e^-12, 20).
_LOG_A_LO, _LOG_A_HI = -12.0, float(np.log(20.0))
_LOG_A_MID, _LOG_A_HALF = 0.5 * (_LOG_A_LO + _LOG_A_HI), 0.5 * (_LOG_A_HI - _LOG_A_LO)


def cayley(W):
    """``(I - W)(I + W)^-1``; orthogonal with determinant +1 for skew ``W``."""
    eye = np.eye(W.shape[0])
    return np.linalg.solve((eye + W).T, (eye - W).T).T


@dataclass
class EllipsoidFit:
    """Fitted ellipsoid plus the latent and noise summaries used to start MCMC."""

    center: np.ndarray
    axes: np.ndarray
    lengths: np.ndarray
    residual_sd: np.ndarray
    latent_mean_dir: np.ndarray
    latent_concentration: float
    loss: float
    converged: bool
    warnings: list = field(default_factory=list)

    def to_params(self, min_sd=0.0):
        """EG parameters implied by the fit; noise sd is floored at ``min_sd``."""
        sd = np.maximum(self.residual_sd, min_sd)
        return EGParams(
            c=self.center,
            U=self.axes,
            s=self.lengths,
            mu=self.latent_mean_dir,
            tau=self.latent_concentration,
            sigma2=sd * sd,
        )

    def implicit(self, X):
        """Algebraic distance ``|diag(1/a) axes^T (x - c)|^2 - 1`` of each row."""
        Z = ((np.atleast_2d(X) - self.center) @ self.axes) / self.lengths
        return np.sum(Z * Z, axis=1) - 1.0


def _skew(w, k):
    W = np.zeros((k, k))
    iu = np.triu_indices(k, 1)
    W[iu] = w
    W.T[iu] = -w
    return W


def _unpack(theta, k):
    nw = k * (k - 1) // 2
    log_a = _LOG_A_MID + _LOG_A_HALF * np.tanh((theta[k + nw :] - _LOG_A_MID) / _LOG_A_HALF)
    return theta[:k], _skew(theta[k : k + nw], k), log_a


def _pack_log_a(log_a):
    u = np.clip((log_a - _LOG_A_MID) / _LOG_A_HALF, -1 + 1e-9, 1 - 1e-9)
    return _LOG_A_MID + _LOG_A_HALF * np.arctanh(u)


def _loss_grad(theta, Y, sampson=False):
    n, k = Y.shape
    c, W, log_a = _unpack(theta, k)
    a = np.exp(log_a)
    eye = np.eye(k)
    inv = np.linalg.inv(eye + W)
    R = (eye - W) @ inv
    D = Y - c
    Z = (D @ R) / a
    e = np.sum(Z * Z, axis=1) - 1.0
    if sampson:
        V = Z / a
        g = 4.0 * np.sum(V * V, axis=1)
        J = float(np.sum(e * e / g))
        w = 8.0 * (e / g) ** 2
        dZ = (4.0 * e / g)[:, None] * Z - w[:, None] * V / a
        g_la = -np.sum(dZ * Z, axis=0) + np.sum(w[:, None] * V * V, axis=0)
    else:
        J = float(e @ e)
        dZ = 4.0 * e[:, None] * Z
        g_la = -np.sum(dZ * Z, axis=0)
    g_la = g_la * (1.0 - ((log_a - _LOG_A_MID) / _LOG_A_HALF) ** 2)
    g_c = -(dZ / a).sum(axis=0) @ R.T
    G_R = D.T @ (dZ / a)
    G_W = -(eye + R).T @ G_R @ inv.T
    iu = np.triu_indices(k, 1)
    g_w = G_W[iu] - G_W.T[iu]
    return J, np.concatenate([g_c, g_w, g_la])


def _inverse_cayley(Q):
    """Skew ``W`` with ``cayley(W) = Q``, after sign flips that keep ``I + Q`` invertible."""
    Q = Q * np.where(np.diag(Q) < 0, -1.0, 1.0)
    if np.linalg.det(Q) < 0:
        j = int(np.argmin(np.abs(np.diag(Q))))
        Q[:, j] = -Q[:, j]
    eye = np.eye(Q.shape[0])
    if np.linalg.cond(eye + Q) > 1e8:
        return None
    W = np.linalg.solve((eye + Q).T, (eye - Q).T).T
    return 0.5 * (W - W.T)


def _algebraic_init(Y):
    """Direct least-squares quadric ``y^T M y + b^T y = 1``; ``None`` if not an ellipsoid."""
    n, k = Y.shape
    iu = np.triu_indices(k)
    quad = Y[:, iu[0]] * Y[:, iu[1]]
    design = np.hstack([quad, Y])
    coef, *_ = np.linalg.lstsq(design, np.ones(n), rcond=None)
    M = np.zeros((k, k))
    M[iu] = coef[: len(iu[0])]
    M = 0.5 * (M + M.T)
    b = coef[len(iu[0]) :]
    try:
        c = -0.5 * np.linalg.solve(M, b)
    except np.linalg.LinAlgError:
        return None
    scale = 1.0 + c @ M @ c
    if not np.isfinite(scale) or scale <= 0:
        return None
    evals, evecs = np.linalg.eigh(M / scale)
    if np.any(evals <= 0):
        return None
    W = _inverse_cayley(evecs)
    if W is None:
        return None
    iu1 = np.triu_indices(k, 1)
    return np.concatenate([c, W[iu1], _pack_log_a(-0.5 * np.log(evals))])


def _pca_basis(Xc, k):
    _, sv, Vt = np.linalg.svd(Xc, full_matrices=False)
    if sv.size < k or sv[k - 1] <= 1e-10 * sv[0]:
        raise ValueError(f"data span fewer than k={k} dimensions")
    B = Vt[:k].T
    # sign convention tied to the scores, which rotations of the data leave alone
    scores = Xc @ B
    flip = np.sign(scores[np.argmax(np.abs(scores), axis=0), np.arange(k)])
    return B * flip


def ctef_fit(data, k, max_iter=500, tol=1e-8, restarts=5, rng=None):
    """
    Fit a k-dimensional ellipsoid to the rows of ``data``.

    Parameters
    ----------
    data : Dataset or array_like
        n x p observations with ``n > p >= k >= 2``.
    k : int
        Latent dimension.
    max_iter, tol : int, float
        BFGS iteration cap and gradient-norm tolerance per start.
    restarts : int
        Number of randomly perturbed starts, in addition to the algebraic
        quadric fit and the moment-matched start.
    rng : numpy.random.Generator, optional

    Returns
    -------
    EllipsoidFit
        The minimum-loss fit. ``warnings`` is non-empty when no start
        converged or the data cover only a short arc of the ellipsoid.
    """
    X = data.values if isinstance(data, Dataset) else np.asarray(data, dtype=float)
    n, p = X.shape
    if not (n > p >= k >= 2):
        raise ValueError(f"ctef_fit needs n > p >= k >= 2, got n={n}, p={p}, k={k}")
    rng = np.random.default_rng() if rng is None else rng

    mean = X.mean(axis=0)
    Xc = X - mean
    B = _pca_basis(Xc, k)
    scale = float(np.sqrt(np.mean(np.sum(Xc * Xc, axis=1))))
    Y = (Xc @ B) / scale

    nw = k * (k - 1) // 2
    moment = np.concatenate([np.zeros(k + nw), _pack_log_a(np.log(np.sqrt(k) * Y.std(axis=0)))])
    starts = []
    alg = _algebraic_init(Y)
    if alg is not None:
        starts.append(alg)
    starts.append(moment)
    for _ in range(restarts):
        jitter = np.concatenate(
            [0.3 * rng.standard_normal(k), rng.standard_normal(nw), 0.3 * rng.standard_normal(k)]
        )
        starts.append(moment + jitter)

    def run(theta0, sampson):
        return minimize(
            _loss_grad, theta0, args=(Y, sampson), jac=True, method="BFGS",
            options={"maxiter": max_iter, "gtol": tol},
        )

    best = None
    any_converged = False
    for theta0 in starts:
        res = run(run(theta0, False).x, True)
        ok = res.success or np.linalg.norm(res.jac) <= 1e-6 * max(1.0, res.fun)
        any_converged |= ok
        # strict comparison keeps the earliest start on ties
        if best is None or res.fun < best.fun:
            best = res

    warnings = []
    if not any_converged:
        warnings.append("no start converged; returning the best iterate")
    c_t, W, log_a = _unpack(best.x, k)
    R = cayley(W)
    a = np.exp(log_a)
    order = np.argsort(-a, kind="stable")
    a, R = a[order], R[:, order]

    Z = ((Y - c_t) @ R) / a
    norms = np.linalg.norm(Z, axis=1)
    eta = Z / np.where(norms > 0, norms, 1.0)[:, None]
    m_z = Z.mean(axis=0)
    mu = m_z / np.linalg.norm(m_z) if np.linalg.norm(m_z) > 0 else np.eye(k)[0]
    rbar = float(np.linalg.norm(eta.mean(axis=0)))
    if rbar > ARC_WARN_RESULTANT:
        warnings.append(f"data cover a short arc (mean resultant length {rbar:.3f})")
    tau = min(inverse_bessel_ratio(k, min(rbar, 1.0 - 1e-12)), _MAX_TAU)

    center = mean + scale * (B @ c_t)
    axes = B @ R
    lengths = scale * a
    fitted = center + (eta * lengths) @ axes.T
    resid = X - fitted
    residual_sd = np.maximum(np.sqrt(np.mean(resid * resid, axis=0)), 1e-12 * scale)

    for w in warnings:
        log.warning("ctef_fit: %s", w)
    return EllipsoidFit(
        center=center,
        axes=axes,
        lengths=lengths,
        residual_sd=residual_sd,
        latent_mean_dir=mu,
        latent_concentration=float(tau),
        loss=float(best.fun),
        converged=bool(any_converged),
        warnings=warnings,
    )
