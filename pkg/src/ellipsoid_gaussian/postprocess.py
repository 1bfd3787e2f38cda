"""
Post-processing of posterior draws: loadings alignment, posterior predictive
draws, held-out log predictive density, conditional-mean curves and
convergence diagnostics.
"""

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.integrate import quad_vec

from .core import Dataset, eg_cov, eg_log_density, eg_mean, eg_sample
from .fisher_bingham import FisherBinghamError
from .sampler import sample_columns

__all__ = [
    "AlignedLoadings",
    "match_align",
    "posterior_predictive",
    "LppdResult",
    "lppd",
    "ConditionalCurve",
    "conditional_curve",
    "effective_sample_size",
    "DiagnosticsReport",
    "diagnostics",
    "log_density_masked",
]

_PIVOT_SUBSAMPLE = 200


# -- MatchAlign ------------------------------------------------------------------


@dataclass
class AlignedLoadings:
    """
    Aligned loadings draws. Column ``j`` of aligned draw ``m`` is
    ``signs[m, j] * raw[m][:, perms[m, j]]``.
    """

    draws: np.ndarray
    pivot: int
    perms: np.ndarray
    signs: np.ndarray

    def apply(self, raw):
        """Re-apply the stored permutations and signs to raw (M, p, k) loadings."""
        raw = np.asarray(raw)
        idx = np.arange(raw.shape[0])[:, None]
        return raw.transpose(0, 2, 1)[idx, self.perms].transpose(0, 2, 1) * self.signs[:, None, :]


def _cosine(A, B):
    na = np.linalg.norm(A, axis=0)
    nb = np.linalg.norm(B, axis=0)
    C = A.T @ B
    denom = np.outer(na, nb)
    return np.divide(C, denom, out=np.zeros_like(C), where=denom > 0)


def match_align(samples):
    """
    Resolve column permutation and sign switching across loadings draws.

    The pivot minimises the summed Frobenius distance to the other draws in
    an evenly spaced subsample of at most 200 draws. Every draw's columns are
    then matched greedily to the pivot's by largest absolute cosine
    similarity, without replacement, and flipped to agree in sign.
    """
    L = samples.loadings() if hasattr(samples, "loadings") else np.asarray(samples, dtype=float)
    M, p, k = L.shape
    if M < 2:
        raise ValueError("match_align needs at least 2 draws")
    sub = np.unique(np.linspace(0, M - 1, min(M, _PIVOT_SUBSAMPLE)).round().astype(int))
    flat = L[sub].reshape(len(sub), -1)
    sq = np.sum(flat * flat, axis=1)
    dist = np.sqrt(np.maximum(sq[:, None] + sq[None, :] - 2.0 * flat @ flat.T, 0.0))
    pivot = int(sub[np.argmin(dist.sum(axis=1))])
    P = L[pivot]

    perms = np.empty((M, k), dtype=int)
    signs = np.empty((M, k))
    for m in range(M):
        C = _cosine(P, L[m])  # rows: pivot columns, cols: draw columns
        absC = np.abs(C)
        free_rows, free_cols = list(range(k)), list(range(k))
        for _ in range(k):
            sub_c = absC[np.ix_(free_rows, free_cols)]
            i, j = np.unravel_index(np.argmax(sub_c), sub_c.shape)
            r, c = free_rows.pop(i), free_cols.pop(j)
            perms[m, r] = c
            signs[m, r] = -1.0 if C[r, c] < 0 else 1.0
    out = AlignedLoadings(draws=np.empty_like(L), pivot=pivot, perms=perms, signs=signs)
    out.draws = out.apply(L)
    return out


# -- predictive ------------------------------------------------------------------


def posterior_predictive(samples, n_draws, rng):
    """
    One EG draw per predictive point, each under a posterior draw picked
    uniformly with replacement. Values are in the units the chain was fitted
    in; the training standardization record rides along.
    """
    M = len(samples)
    if M == 0:
        raise ValueError("no posterior draws")
    pick = rng.integers(M, size=n_draws)
    out = np.empty((n_draws, samples.p))
    for m in np.unique(pick):
        rows = np.flatnonzero(pick == m)
        out[rows] = eg_sample(samples.draw(m), rows.size, rng).values
    return Dataset(out, samples.column_names or (), samples.standardization)


def log_density_masked(X, params, order="corrected"):
    """``eg_log_density`` per row with ``nan`` where the saddlepoint fails."""
    X = np.atleast_2d(X)
    try:
        return eg_log_density(X, params, order=order)
    except FisherBinghamError as err:
        bad = np.zeros(X.shape[0], dtype=bool)
        if err.rows is None:
            bad[:] = True
        else:
            bad[err.rows] = True
        out = np.full(X.shape[0], np.nan)
        if (~bad).any():
            out[~bad] = log_density_masked(X[~bad], params, order)
        return out


def _matching_units(samples, data):
    rec_s, rec_d = samples.standardization, data.standardization
    if data.p != samples.p:
        raise ValueError(f"test data have shape {data.values.shape}, draws have p={samples.p}")
    if rec_s is None and rec_d is None:
        return data.values
    if rec_d is None:
        return rec_s.apply(data.values)
    if rec_s is None or not (np.array_equal(rec_s.mean, rec_d.mean) and np.array_equal(rec_s.sd, rec_d.sd)):
        raise ValueError("test data standardization does not match the training record")
    return data.values


@dataclass
class LppdResult:
    """``total`` sums the per-point averages; failed (point, draw) pairs are excluded."""

    total: float
    per_obs: float
    per_point: np.ndarray
    n_failed: int
    n_pairs: int


def lppd(samples, test, raw_units=False):
    """
    Held-out score ``sum_i mean_m log f(x_i; theta_m)``.

    The average over draws is of log densities, not the log of averaged
    densities. ``test`` in raw units is standardized with the training record
    when the draws carry one. ``raw_units`` adds the standardization Jacobian
    so the score is a density in the original units.
    """
    if not isinstance(test, Dataset):
        test = Dataset(test)
    if test.n == 0:
        raise ValueError("test set is empty")
    X = _matching_units(samples, test)
    M = len(samples)
    acc = np.zeros(X.shape[0])
    cnt = np.zeros(X.shape[0])
    for m in range(M):
        v = log_density_masked(X, samples.draw(m), samples.config.order)
        ok = np.isfinite(v)
        acc[ok] += v[ok]
        cnt += ok
    per_point = np.divide(acc, cnt, out=np.full_like(acc, np.nan), where=cnt > 0)
    if raw_units and samples.standardization is not None:
        per_point = per_point + samples.standardization.log_jacobian()
    good = np.isfinite(per_point)
    total = float(np.sum(per_point[good]))
    return LppdResult(
        total=total,
        per_obs=total / max(int(good.sum()), 1),
        per_point=per_point,
        n_failed=int(M * X.shape[0] - cnt.sum()),
        n_pairs=M * X.shape[0],
    )


# -- conditional curves ------------------------------------------------------------


@dataclass
class ConditionalCurve:
    """Posterior mean and 95% band of ``E[response | predictor = grid, rest at means]``."""

    grid: np.ndarray
    mean: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    flagged: np.ndarray
    per_draw: np.ndarray = field(repr=False)

    def to_csv(self, path, header_names=("grid", "mean", "lower", "upper", "flagged")):
        table = np.column_stack([self.grid, self.mean, self.lower, self.upper, self.flagged.astype(int)])
        np.savetxt(path, table, delimiter=",", header=",".join(header_names), comments="",
                   fmt=["%.17g"] * 4 + ["%d"])


def _curve_one_draw(params, base, r, q, grid, order, n_scan=401, tol=1e-8):
    m = eg_mean(params)[r]
    sd = math.sqrt(eg_cov(params)[r, r])
    a, b = m - 10.0 * sd, m + 10.0 * sd
    G = grid.size

    def rows(y):
        X = np.repeat(base[None, :], G, axis=0)
        X[:, q] = grid
        X[:, r] = y
        return X

    ys = np.linspace(a, b, n_scan)
    scan = np.stack([log_density_masked(rows(y), params, order) for y in ys])  # (n_scan, G)
    bad = ~np.isfinite(scan).any(axis=0)
    shift = np.where(bad, 0.0, np.nanmax(np.where(np.isfinite(scan), scan, -np.inf), axis=0))
    peaks = np.unique(ys[np.nanargmax(np.where(np.isfinite(scan), scan, -np.inf), axis=0)])
    failed = np.zeros(G, dtype=bool)

    def integrand(y):
        v = log_density_masked(rows(y), params, order)
        nf = ~np.isfinite(v)
        failed[nf] = True
        f = np.where(nf, 0.0, np.exp(np.where(nf, 0.0, v) - shift))
        return np.concatenate([f, y * f])

    brk = np.unique(np.concatenate([peaks, np.linspace(a, b, 17)[1:-1]]))
    brk = brk[(brk > a) & (brk < b)]
    # each zeroth-moment integrand peaks at 1 after the shift, so one
    # max-norm tolerance suits every component
    res, err, info = quad_vec(
        integrand, a, b, epsabs=0.0, epsrel=tol, norm="max", points=brk, full_output=True, limit=4000
    )
    z0, z1 = res[:G], res[G:]
    value = np.divide(z1, z0, out=np.full(G, np.nan), where=z0 > 0)
    unconverged = (not info.success) or err > 1e-6 * np.max(np.abs(res))
    return value, failed | bad | unconverged | ~np.isfinite(value)


def conditional_curve(samples, data, response, predictor, grid, max_draws=200, raw_units=False):
    """
    Conditional mean of one coordinate as another varies, the rest held at
    their sample means in ``data``.

    For each posterior draw (an evenly spaced subset of at most ``max_draws``)
    and grid value, ``E[x_r | x]`` is the ratio of first- and zeroth-moment
    integrals of the joint density over ``x_r``, done by adaptive quadrature on
    the response's marginal mean +- 10 sd. Points whose quadrature does not
    converge are flagged and kept.

    ``response`` and ``predictor`` are column indices or names. With
    ``raw_units`` the grid is given, and the curve returned, in the original
    units of a standardized fit.
    """
    if not isinstance(data, Dataset):
        data = Dataset(data)
    if data.p != samples.p:
        raise ValueError(f"data have shape {data.values.shape}, draws have p={samples.p}")
    r, q = data.column_index(response), data.column_index(predictor)
    if r == q:
        raise ValueError("response and predictor must differ")
    grid = np.asarray(grid, dtype=float).reshape(-1)
    rec = samples.standardization if raw_units else None
    g_fit = (grid - rec.mean[q]) / rec.sd[q] if rec is not None else grid
    lo, hi = data.values[:, q].min(), data.values[:, q].max()
    span = 1e-9 * max(1.0, hi - lo)
    if grid.size == 0 or g_fit.min() < lo - span or g_fit.max() > hi + span:
        raise ValueError(f"grid must lie within the observed predictor range [{lo:g}, {hi:g}] (fit units)")
    base = data.values.mean(axis=0)
    M = len(samples)
    pick = np.unique(np.linspace(0, M - 1, min(M, max_draws)).round().astype(int))
    vals = np.empty((pick.size, grid.size))
    flags = np.zeros(grid.size, dtype=bool)
    for i, m in enumerate(pick):
        vals[i], f = _curve_one_draw(samples.draw(m), base, r, q, g_fit, samples.config.order)
        flags |= f
    if rec is not None:
        vals = rec.mean[r] + rec.sd[r] * vals
    with np.errstate(all="ignore"):
        mean = np.nanmean(vals, axis=0)
        lower, upper = np.nanquantile(vals, [0.025, 0.975], axis=0)
    return ConditionalCurve(grid=grid, mean=mean, lower=lower, upper=upper, flagged=flags, per_draw=vals)


# -- diagnostics -----------------------------------------------------------------


def effective_sample_size(x):
    """
    Effective sample size by Geyer's initial monotone sequence estimator.

    A constant series has no defined autocorrelation; its ESS is reported as 1.
    """
    x = np.asarray(x, dtype=float)
    n = x.size
    if n < 2:
        return float(n)
    xc = x - x.mean()
    gamma0 = float(xc @ xc) / n
    # constant up to rounding
    if gamma0 <= (1e-12 * float(np.max(np.abs(x)))) ** 2:
        return 1.0
    nfft = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(xc, nfft)
    acov = np.fft.irfft(f * np.conj(f), nfft)[:n] / n
    rho = acov / acov[0]
    npair = n // 2
    pairs = rho[0 : 2 * npair : 2] + rho[1 : 2 * npair : 2]
    positive = pairs > 0
    K = npair if positive.all() else int(np.argmin(positive))
    pairs = np.minimum.accumulate(pairs[:K]) if K else pairs[:0]
    tau = -1.0 + 2.0 * float(np.sum(pairs))
    return float(n / max(tau, 1e-12))


@dataclass
class DiagnosticsReport:
    ess: dict
    ram_acceptance: float
    ram_acceptance_last_window: float
    fb_failures: int
    fb_evaluations: int
    n_draws: int

    def to_text(self):
        lines = [
            f"n_draws={self.n_draws}",
            f"ram_acceptance={self.ram_acceptance:.6g}",
            f"ram_acceptance_last_window={self.ram_acceptance_last_window:.6g}",
            f"fb_failures={self.fb_failures}",
            f"fb_evaluations={self.fb_evaluations}",
        ]
        lines += [f"ess.{name}={val:.6g}" for name, val in self.ess.items()]
        return "\n".join(lines) + "\n"


def diagnostics(samples, traces_path=None):
    """
    ESS for every stored scalar, RAM acceptance and saddlepoint failure counts.

    With ``traces_path`` the draws are also written there as a headered CSV
    (one row per stored draw) for plotting.
    """
    A = samples.to_matrix()
    names = sample_columns(samples.p, samples.k)
    ess = {name: effective_sample_size(A[:, j]) for j, name in enumerate(names)}
    if samples.log_post.size:
        ess["log_post"] = effective_sample_size(samples.log_post[samples.config.burn_in :])
    if traces_path is not None:
        Path(traces_path).parent.mkdir(parents=True, exist_ok=True)
        table = np.column_stack([np.arange(1, A.shape[0] + 1), A])
        np.savetxt(traces_path, table, delimiter=",", header=",".join(["draw"] + names), comments="",
                   fmt=["%d"] + ["%.17g"] * A.shape[1])
    return DiagnosticsReport(
        ess=ess,
        ram_acceptance=samples.acceptance_rate(),
        ram_acceptance_last_window=samples.acceptance_rate(2000),
        fb_failures=samples.fb_failures,
        fb_evaluations=samples.fb_evaluations,
        n_draws=len(samples),
    )
