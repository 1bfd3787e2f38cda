"""
Fisher-Bingham normalizing constant on the unit sphere S^{k-1}.

    sigma(gamma, A) = E_unif[ exp(gamma^T y - y^T A y) ]

with the expectation taken under the uniform probability measure, so that
``sigma(0, 0) = 1`` and ``sigma(gamma, 0) = 1 / C_k(|gamma|)``.

The saddlepoint approximation follows Kume & Wood (2005). Writing
``d_i = lambda_i - t`` for the eigenvalues ``lambda_i`` of ``A`` and ``g = Q^T gamma``
for ``gamma`` in the eigenbasis, the cumulant generating function of the
induced sum of noncentral squares has derivatives

    K^(j)(t) = sum_i (j-1)!/2 d_i^-j + j!/4 g_i^2 d_i^-(j+1),

the saddlepoint solves ``K'(t) = 1`` with ``t < min(lambda)``, and

    log C1 = log(2)/2 + (k-1)/2 log(pi) - log(K'')/2 - sum(log d)/2 - t + sum(g^2/d)/4
    log C3 = log C1 + rho4/8 - 5 rho3^2/24,   rho_j = K^(j) / K''^(j/2).

Everything depends on ``A`` only through ``A - t I``, so a shift ``A + cI``
moves ``t`` by ``c`` and the result by exactly ``-c``; no explicit eigenvalue
shift is needed. When ``A`` is a multiple of the identity the constant is
known in closed form through the vMF constant and that branch is used.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln, logsumexp

from .special import bessel_ratio, log_vmf_const
from .vmf import uniform_sphere

__all__ = [
    "FisherBinghamError",
    "FBArgs",
    "FisherBinghamA",
    "fb_log_const",
    "fb_log_const_mc",
    "ORDERS",
]

ORDERS = ("first_order", "corrected")
_MAX_ITER = 200
_ISOTROPIC_RTOL = 1e-12


class FisherBinghamError(ArithmeticError):
    """Saddlepoint root could not be bracketed or did not converge."""

    def __init__(self, message, rows=None):
        super().__init__(message)
        self.rows = rows


@dataclass(frozen=True)
class FBArgs:
    gamma: np.ndarray
    A: np.ndarray

    def __post_init__(self):
        gamma = np.asarray(self.gamma, dtype=float).reshape(-1)
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        if A.shape != (gamma.size, gamma.size):
            raise ValueError(f"A has shape {A.shape}, expected {(gamma.size, gamma.size)}")
        if not np.all(np.isfinite(gamma)) or not np.all(np.isfinite(A)):
            raise ValueError("Fisher-Bingham arguments must be finite")
        if np.max(np.abs(A - A.T), initial=0.0) > 1e-10 * max(1.0, np.max(np.abs(A))):
            raise ValueError("A must be symmetric")
        object.__setattr__(self, "gamma", gamma)
        object.__setattr__(self, "A", 0.5 * (A + A.T))


def _log_sphere_area(k):
    return math.log(2.0) + 0.5 * k * math.log(math.pi) - math.lgamma(0.5 * k)


class FisherBinghamA:
    """
    Saddlepoint evaluator with the quadratic part ``A`` factored once.

    Within one EG likelihood the matrix ``A = Lambda^T Sigma^-1 Lambda / 2`` is
    shared by every observation and only ``gamma`` varies, so the
    eigendecomposition is done here and reused for all rows. Instances are
    immutable and may be shared between threads.

    Parameters
    ----------
    A : array_like, shape (k, k)
        Symmetric matrix.
    order : {"first_order", "corrected"}
        Saddlepoint order; ``corrected`` applies the exp(T) higher-order term.
    """

    def __init__(self, A, order="corrected"):
        if order not in ORDERS:
            raise ValueError(f"unknown saddlepoint order {order!r}; expected one of {ORDERS}")
        A = np.atleast_2d(np.asarray(A, dtype=float))
        if A.ndim != 2 or A.shape[0] != A.shape[1] or A.shape[0] < 2:
            raise ValueError("A must be a square matrix with k >= 2")
        A = 0.5 * (A + A.T)
        self.k = A.shape[0]
        self.order = order
        self.A = A
        lam, Q = np.linalg.eigh(A)
        self.eigvals = lam
        self.eigvecs = Q
        self.lam_min = float(lam[0])
        self._gaps = lam - lam[0]
        scale = max(1.0, float(np.max(np.abs(lam))))
        self.isotropic = bool(lam[-1] - lam[0] <= _ISOTROPIC_RTOL * scale)
        self._const = 0.5 * math.log(2.0) + 0.5 * (self.k - 1) * math.log(math.pi) - _log_sphere_area(self.k)

    # -- saddlepoint root ------------------------------------------------

    def _solve(self, g2):
        """Return u = lam_min - t_hat per row (shape (n,)) for squared rotated gammas."""
        k = self.k
        gaps = self._gaps
        n = g2.shape[0]
        # K'(t) >= 1/(2u) + g_min^2/(4u^2) gives the upper end of the t-bracket
        u_lo = np.maximum(0.5, np.sqrt(g2[:, 0]) / 2.0)
        # K'(t) <= k/(2u) + |g|^2/(4u^2) gives the lower end
        u_hi = k / 4.0 + np.sqrt(k * k / 16.0 + g2.sum(axis=1) / 4.0)
        u_hi = np.maximum(u_hi, u_lo)
        u = u_lo.copy()
        active = np.ones(n, dtype=bool)
        for _ in range(_MAX_ITER):
            idx = np.flatnonzero(active)
            if idx.size == 0:
                return u
            d = gaps[None, :] + u[idx, None]
            inv = 1.0 / d
            f = np.sum(0.5 * inv + 0.25 * g2[idx] * inv * inv, axis=1) - 1.0
            fp = np.sum(0.5 * inv * inv + 0.5 * g2[idx] * inv ** 3, axis=1)  # -dK'/du
            # f decreases in u; keep a valid bracket for the bisection fallback
            lo = np.where(f > 0, u[idx], u_lo[idx])
            hi = np.where(f <= 0, u[idx], u_hi[idx])
            u_lo[idx], u_hi[idx] = lo, hi
            converged = np.abs(f) <= 1e-15
            new = u[idx] + f / fp
            bad = ~np.isfinite(new) | (new < lo) | (new > hi)
            new = np.where(bad, 0.5 * (lo + hi), new)
            new = np.where(converged, u[idx], new)
            done = converged | (~bad & (np.abs(new - u[idx]) <= 2e-16 * new))
            u[idx] = new
            active[idx[done]] = False
        bad_rows = np.flatnonzero(active)
        raise FisherBinghamError(
            f"saddlepoint equation did not converge in {_MAX_ITER} iterations", rows=bad_rows
        )

    # -- evaluation --------------------------------------------------------

    def _rotate(self, gamma):
        gamma = np.asarray(gamma, dtype=float)
        single = gamma.ndim == 1
        G = np.atleast_2d(gamma)
        if G.shape[1] != self.k:
            raise ValueError(f"gamma has {G.shape[1]} components, expected {self.k}")
        if not np.all(np.isfinite(G)):
            raise FisherBinghamError("non-finite linear term", rows=np.flatnonzero(~np.all(np.isfinite(G), axis=1)))
        return single, G, G @ self.eigvecs

    def _isotropic(self, G, want_grad):
        kappa = np.linalg.norm(G, axis=1)
        lam = float(np.mean(self.eigvals))
        val = np.array([-lam - log_vmf_const(self.k, kv) for kv in kappa])
        if not want_grad:
            return val, None, None
        rho = np.array([bessel_ratio(self.k, kv) for kv in kappa])
        n, k = G.shape
        with np.errstate(invalid="ignore", divide="ignore"):
            theta = np.where(kappa[:, None] > 0, G / kappa[:, None], 0.0)
            # rho/kappa -> 1/k as kappa -> 0
            r_over_k = np.where(kappa > 0, rho / np.where(kappa > 0, kappa, 1.0), 1.0 / k)
        grad_gamma = rho[:, None] * theta
        second = r_over_k[:, None, None] * np.eye(k)[None] + (1.0 - k * r_over_k)[:, None, None] * (
            theta[:, :, None] * theta[:, None, :]
        )
        return val, grad_gamma, -second

    def _evaluate(self, gamma, want_grad):
        single, G, g = self._rotate(gamma)
        if self.isotropic:
            val, gg, gA = self._isotropic(G, want_grad)
        else:
            val, gg, gA = self._saddlepoint(g, want_grad)
        return single, val, gg, gA

    def _saddlepoint(self, g, want_grad):
        corr = 1.0 if self.order == "corrected" else 0.0
        g2 = g * g
        u = self._solve(g2)
        t = self.lam_min - u
        d = self._gaps[None, :] + u[:, None]
        inv = 1.0 / d
        pw = [np.ones_like(inv), inv]
        for _ in range(5):
            pw.append(pw[-1] * inv)
        S = {j: pw[j].sum(axis=1) for j in range(1, 5)}
        Qf = {j: (g2 * pw[j]).sum(axis=1) for j in range(1, 6)}
        K2 = 0.5 * S[2] + 0.5 * Qf[3]
        K3 = S[3] + 1.5 * Qf[4]
        K4 = 3.0 * S[4] + 6.0 * Qf[5]
        logdet = np.log(d).sum(axis=1)
        T = K4 / (8.0 * K2 ** 2) - 5.0 * K3 ** 2 / (24.0 * K2 ** 3)
        val = self._const - 0.5 * np.log(K2) - 0.5 * logdet - t + 0.25 * Qf[1] + corr * T
        if not np.all(np.isfinite(val)):
            raise FisherBinghamError("non-finite saddlepoint value", rows=np.flatnonzero(~np.isfinite(val)))
        if not want_grad:
            return val, None, None

        La = -0.5 / K2 + corr * (-K4 / (4.0 * K2 ** 3) + 5.0 * K3 ** 2 / (8.0 * K2 ** 4))
        Lb = -corr * 5.0 * K3 / (12.0 * K2 ** 3)
        Lc = corr / (8.0 * K2 ** 2)
        cS = {2: 0.5 * La, 3: Lb, 4: 3.0 * Lc}
        cQ = {1: np.full_like(La, 0.25), 3: 0.5 * La, 4: 1.5 * Lb, 5: 6.0 * Lc}
        # explicit t-derivative at fixed (gamma, A)
        Lt = -1.0 + 0.5 * S[1]
        for j, cj in cS.items():
            Lt = Lt + cj * j * (pw[j + 1].sum(axis=1))
        for j, cj in cQ.items():
            Lt = Lt + cj * j * (g2 * pw[j + 1]).sum(axis=1)

        n, k = g.shape
        # partial derivatives at fixed t, eigenbasis
        dg = np.zeros_like(g)
        for j, cj in cQ.items():
            dg += 2.0 * cj[:, None] * g * pw[j]
        dA_diag = -0.5 * inv
        for j, cj in cS.items():
            dA_diag = dA_diag - cj[:, None] * j * pw[j + 1]
        dA = np.zeros((n, k, k))
        idx = np.arange(k)
        dA[:, idx, idx] = dA_diag
        w = [None] + [g * pw[l] for l in range(1, 6)]
        for j, cj in cQ.items():
            acc = np.zeros((n, k, k))
            for l in range(1, j + 1):
                acc += w[l][:, :, None] * w[j + 1 - l][:, None, :]
            dA -= cj[:, None, None] * acc
        # implicit dependence through K'(t_hat) = 1
        dKp_g = g * pw[2] / 2.0
        dKp_A = -(w[1][:, :, None] * w[2][:, None, :] + w[2][:, :, None] * w[1][:, None, :]) / 4.0
        dKp_A[:, idx, idx] -= 0.5 * pw[2]
        coef = -Lt / K2
        dg = dg + coef[:, None] * dKp_g
        dA = dA + coef[:, None, None] * dKp_A
        Q = self.eigvecs
        grad_gamma = dg @ Q.T
        grad_A = np.einsum("ia,nab,jb->nij", Q, dA, Q)
        grad_A = 0.5 * (grad_A + np.swapaxes(grad_A, 1, 2))
        return val, grad_gamma, grad_A

    def log_const(self, gamma):
        """log sigma(gamma, A) for one k-vector or each row of an (n, k) array."""
        single, val, _, _ = self._evaluate(gamma, want_grad=False)
        return float(val[0]) if single else val

    def log_const_grad(self, gamma):
        """
        Value and gradients of ``log sigma``.

        Returns ``(value, d/dgamma, d/dA)``; the ``A``-gradient is the symmetric
        matrix ``H`` with ``d log sigma = tr(H dA)`` for symmetric perturbations.
        Leading row axis is dropped for a single ``gamma``.
        """
        single, val, gg, gA = self._evaluate(gamma, want_grad=True)
        if single:
            return float(val[0]), gg[0], gA[0]
        return val, gg, gA


def fb_log_const(args, order="corrected"):
    """Saddlepoint estimate of ``log sigma(gamma, A)`` for a single ``FBArgs``."""
    return FisherBinghamA(args.A, order=order).log_const(args.gamma)


def fb_log_const_mc(args, n, rng, chunk=1_000_000):
    """
    Plain Monte Carlo estimate of ``log sigma(gamma, A)`` from ``n`` uniform
    sphere draws, accumulated chunk by chunk with log-sum-exp.
    """
    if n < 10_000:
        raise ValueError("use at least 10^4 draws for the Monte Carlo constant")
    k = args.gamma.size
    if not np.any(args.gamma) and not np.any(args.A):
        return 0.0
    running = -np.inf
    done = 0
    while done < n:
        m = min(chunk, n - done)
        y = uniform_sphere(m, k, rng)
        e = y @ args.gamma - np.einsum("ni,ij,nj->n", y, args.A, y)
        running = np.logaddexp(running, logsumexp(e))
        done += m
    return float(running - math.log(n))
