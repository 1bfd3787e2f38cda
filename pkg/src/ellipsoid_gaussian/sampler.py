"""
Posterior sampling for EG parameters.

Each iteration runs two kernels:

1. A geodesic stochastic-gradient Nose-Hoover thermostat (SGNHT) step on
   ``(U, log s, mu)`` and optionally ``c``, driven by a minibatch gradient of
   the log posterior. Momenta live in the tangent spaces; ``mu`` follows exact
   great circles and ``U`` a QR retraction. Each block carries its own
   thermostat.
2. A robust adaptive Metropolis (RAM) step on ``(log sigma2, log tau)`` using
   the full-data log posterior.

``step_size`` is the integration time step ``h``: momenta have unit
stationary variance per tangent dimension and positions move by ``h * v``.
One iteration is the symmetric splitting B A D O D A B (half kick, half flow,
half thermostat update, exact Ornstein-Uhlenbeck friction and noise, half
thermostat, half flow, half kick). The closing kick's gradient is reused by
the next iteration.
"""

import json
import math
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional

import numpy as np
from scipy.special import gammaln, multigammaln

from .core import Dataset, EGParams, Standardization, eg_log_density, loglik_grad, project_stiefel
from .ctef import EllipsoidFit, ctef_fit
from .fisher_bingham import FisherBinghamError

__all__ = [
    "Prior",
    "FitConfig",
    "ChainState",
    "PosteriorSamples",
    "SamplerAbort",
    "log_prior",
    "log_posterior",
    "fit",
    "gaussian_limit_init",
    "sample_columns",
]

_RAM_WINDOW = 2000
_MIN_CHECK = 200


class SamplerAbort(RuntimeError):
    """Too many Fisher-Bingham failures; ``report`` holds the counts."""

    def __init__(self, message, report):
        super().__init__(message)
        self.report = report


@dataclass
class Prior:
    """
    Prior hyperparameters.

    ``c ~ N(center_mean, center_sd^2)`` and ``log s ~ N(log_s_mean, log_s_sd^2)``
    per coordinate (omitted when the mean is ``None``); ``U`` Haar; ``mu``
    uniform; ``tau ~ Gamma(tau_shape, rate=tau_rate)``;
    ``sigma2_j ~ InvGamma(sigma2_shape, sigma2_scale_j)``.

    With ``sigma2_relative`` set, :meth:`centered_on` multiplies
    ``sigma2_scale`` by each coordinate's sample variance; otherwise the scale
    is absolute. An inverse-Gamma scale of 1 would add ``-1/sigma2`` nats per
    coordinate, which overwhelms the likelihood once noise variances are
    below about 0.05 of a standardized coordinate.
    """

    center_mean: Optional[np.ndarray] = None
    center_sd: Optional[np.ndarray] = None
    log_s_mean: Optional[np.ndarray] = None
    log_s_sd: float = 1.0
    tau_shape: float = 1.0
    tau_rate: float = 0.1
    sigma2_shape: float = 1.0
    sigma2_scale: object = 0.01
    sigma2_relative: bool = True
    center_sd_factor: float = 2.0

    def centered_on(self, init, data):
        """Copy whose ``c`` and ``log s`` priors are centred on an initial point."""
        sd = data.values.std(axis=0, ddof=1) if data.n > 1 else np.ones(data.p)
        scale = self.sigma2_scale * sd * sd if self.sigma2_relative else self.sigma2_scale
        return Prior(
            center_mean=np.array(init.c, dtype=float),
            center_sd=self.center_sd_factor * sd,
            log_s_mean=np.log(np.maximum(init.s, 1e-12)),
            log_s_sd=self.log_s_sd,
            tau_shape=self.tau_shape,
            tau_rate=self.tau_rate,
            sigma2_shape=self.sigma2_shape,
            sigma2_scale=scale,
            sigma2_relative=False,
            center_sd_factor=self.center_sd_factor,
        )

    def to_dict(self):
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            if v is None or isinstance(v, bool):
                out[f.name] = v
            else:
                out[f.name] = np.asarray(v).tolist() if np.ndim(v) else float(v)
        return out

    @classmethod
    def from_dict(cls, d):
        kw = {}
        for f in fields(cls):
            if f.name in d:
                v = d[f.name]
                kw[f.name] = np.asarray(v, dtype=float) if isinstance(v, list) else v
        return cls(**kw)


def _normal_logpdf(x, mean, sd):
    z = (x - mean) / sd
    return float(np.sum(-0.5 * z * z - np.log(sd) - 0.5 * math.log(2.0 * math.pi)))


def log_prior(params, prior):
    """
    Log prior density in the sampler's coordinates
    ``(c, log s, U, mu, log tau, log sigma2)``.

    The Haar and uniform-sphere terms are normalised with respect to
    Riemannian volume; the ``log tau`` and ``log sigma2`` Jacobians are included.
    """
    p, k = params.p, params.k
    lp = 0.0
    if prior.center_mean is not None:
        lp += _normal_logpdf(params.c, prior.center_mean, prior.center_sd)
    if prior.log_s_mean is not None:
        lp += _normal_logpdf(np.log(params.s), prior.log_s_mean, prior.log_s_sd)
    # Stiefel volume 2^k pi^(pk/2) / Gamma_k(p/2); sphere area 2 pi^(k/2) / Gamma(k/2)
    lp -= k * math.log(2.0) + 0.5 * p * k * math.log(math.pi) - multigammaln(0.5 * p, k)
    lp -= math.log(2.0) + 0.5 * k * math.log(math.pi) - gammaln(0.5 * k)
    a, b = prior.tau_shape, prior.tau_rate
    if params.tau <= 0:
        return -math.inf
    lp += a * math.log(b) - gammaln(a) + a * math.log(params.tau) - b * params.tau
    al, be = prior.sigma2_shape, prior.sigma2_scale
    s2 = params.sigma2
    be = np.broadcast_to(np.asarray(be, dtype=float), s2.shape)
    lp += float(np.sum(al * np.log(be) - gammaln(al) - al * np.log(s2) - be / s2))
    return lp


def log_posterior(params, data, subset=None, prior=None, order="corrected"):
    """
    Log likelihood over ``subset`` (scaled by ``n / |subset|``) plus the log prior.

    ``data`` may be ``None`` or empty, giving the log prior alone. With
    ``prior=None`` the default :class:`Prior` is used.
    """
    prior = Prior() if prior is None else prior
    lp = log_prior(params, prior)
    if data is None:
        return lp
    X = data.values if isinstance(data, Dataset) else np.atleast_2d(np.asarray(data, dtype=float))
    n = X.shape[0]
    if n == 0:
        return lp
    if subset is None:
        return lp + float(np.sum(eg_log_density(X, params, order=order)))
    idx = np.asarray(subset, dtype=int)
    if idx.size == 0:
        raise ValueError("subset must be non-empty")
    ll = float(np.sum(eg_log_density(X[idx], params, order=order)))
    return lp + ll * n / idx.size


@dataclass
class FitConfig:
    """Sampler settings; ``burn_in=None`` means half of ``n_iter``."""

    k: int = 2
    n_iter: int = 10_000
    burn_in: Optional[int] = None
    step_size: float = 1e-5
    minibatch: int = 50
    update_center: bool = False
    thermostat_diffusion: float = 1.0
    ram_target_accept: float = 0.234
    ram_init_scale: float = 0.1
    seed: int = 0
    thin: int = 1
    order: str = "corrected"
    max_failure_rate: float = 0.01
    prior: Prior = field(default_factory=Prior)

    def __post_init__(self):
        if self.burn_in is None:
            self.burn_in = self.n_iter // 2
        if self.k < 2:
            raise ValueError("k must be at least 2")
        if self.n_iter < 1 or not 0 <= self.burn_in < self.n_iter:
            raise ValueError("need n_iter >= 1 and 0 <= burn_in < n_iter")
        if not self.step_size > 0:
            raise ValueError("step_size must be positive")
        if self.minibatch < 1:
            raise ValueError("minibatch must be positive")
        if self.thin < 1:
            raise ValueError("thin must be positive")
        if not 0 < self.ram_target_accept < 1:
            raise ValueError("ram_target_accept must lie in (0, 1)")
        if self.thermostat_diffusion < 0:
            raise ValueError("thermostat_diffusion must be non-negative")

    def to_dict(self):
        d = asdict(self)
        d["prior"] = self.prior.to_dict()
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        prior = Prior.from_dict(d.pop("prior", {}) or {})
        return cls(prior=prior, **d)


@dataclass
class ChainState:
    """Position, tangent momenta, thermostats and the RAM factor of one chain."""

    position: EGParams
    momenta: dict
    thermostat: dict
    ram_factor: np.ndarray
    iteration: int = 0


def sample_columns(p, k):
    """Column names of the draws file (1-based; ``U`` column-major)."""
    names = [f"c.{i + 1}" for i in range(p)]
    names += [f"U.{i + 1}.{j + 1}" for j in range(k) for i in range(p)]
    names += [f"s.{j + 1}" for j in range(k)]
    names += [f"mu.{j + 1}" for j in range(k)]
    names += ["tau"]
    names += [f"sigma2.{i + 1}" for i in range(p)]
    return names


@dataclass
class PosteriorSamples:
    """
    Post burn-in draws stored as stacked arrays, plus chain diagnostics.

    ``log_post`` is the full-data log posterior after every iteration
    (including burn-in). ``elapsed`` is kept in memory only so that written
    output is reproducible byte for byte.
    """

    c: np.ndarray
    U: np.ndarray
    s: np.ndarray
    mu: np.ndarray
    tau: np.ndarray
    sigma2: np.ndarray
    log_post: np.ndarray
    accept: np.ndarray
    fb_failures: int
    fb_evaluations: int
    config: FitConfig
    seed: int
    prior: Prior
    standardization: Optional[Standardization] = None
    column_names: tuple = ()
    elapsed: float = 0.0

    def __len__(self):
        return self.tau.shape[0]

    @property
    def p(self):
        return self.c.shape[1]

    @property
    def k(self):
        return self.s.shape[1]

    def draw(self, m):
        return EGParams(
            c=self.c[m], U=self.U[m], s=self.s[m], mu=self.mu[m], tau=self.tau[m], sigma2=self.sigma2[m]
        )

    def draws(self):
        return [self.draw(m) for m in range(len(self))]

    def loadings(self):
        """(M, p, k) stack of ``U diag(s)``."""
        return self.U * self.s[:, None, :]

    def acceptance_rate(self, last=None):
        a = self.accept if last is None else self.accept[-last:]
        return float(np.mean(a)) if a.size else float("nan")

    @classmethod
    def from_draws(cls, draws, config=None, seed=0, prior=None, standardization=None, column_names=()):
        """Wrap a list of parameters, e.g. true values used as point-mass "samples"."""
        if not draws:
            raise ValueError("need at least one draw")
        stack = lambda name: np.stack([np.asarray(getattr(d, name)) for d in draws])
        return cls(
            c=stack("c"), U=stack("U"), s=stack("s"), mu=stack("mu"),
            tau=np.array([d.tau for d in draws]), sigma2=stack("sigma2"),
            log_post=np.empty(0), accept=np.empty(0, dtype=bool),
            fb_failures=0, fb_evaluations=0,
            config=config or FitConfig(k=draws[0].k, n_iter=1, burn_in=0),
            seed=seed, prior=prior or Prior(), standardization=standardization,
            column_names=tuple(column_names),
        )

    def to_matrix(self):
        M = len(self)
        return np.hstack([
            self.c, self.U.transpose(0, 2, 1).reshape(M, -1), self.s, self.mu,
            self.tau[:, None], self.sigma2,
        ])

    def metadata(self):
        return {
            "p": self.p,
            "k": self.k,
            "n_draws": len(self),
            "seed": self.seed,
            "config": self.config.to_dict(),
            "prior": self.prior.to_dict(),
            "ram_acceptance": self.acceptance_rate(),
            "ram_acceptance_last_window": self.acceptance_rate(_RAM_WINDOW),
            "fb_failures": self.fb_failures,
            "fb_evaluations": self.fb_evaluations,
            "standardization": None if self.standardization is None else self.standardization.to_dict(),
            "column_names": list(self.column_names),
        }

    def save(self, directory):
        """Write ``samples.csv``, ``trace.csv`` and ``metadata.json`` into ``directory``."""
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        header = ",".join(sample_columns(self.p, self.k))
        np.savetxt(d / "samples.csv", self.to_matrix(), delimiter=",", header=header, comments="", fmt="%.17g")
        trace = np.column_stack([np.arange(1, self.log_post.size + 1), self.log_post, self.accept.astype(int)])
        np.savetxt(d / "trace.csv", trace, delimiter=",", header="iteration,log_post,ram_accept",
                   comments="", fmt=["%d", "%.17g", "%d"])
        (d / "metadata.json").write_text(json.dumps(self.metadata(), indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, directory):
        d = Path(directory)
        meta_path, samples_path = d / "metadata.json", d / "samples.csv"
        for path in (meta_path, samples_path):
            if not path.exists():
                raise FileNotFoundError(f"missing {path}")
        meta = json.loads(meta_path.read_text())
        p, k = meta["p"], meta["k"]
        header = samples_path.read_text().split("\n", 1)[0].strip().split(",")
        if header != sample_columns(p, k):
            raise ValueError(f"{samples_path}: header does not match p={p}, k={k}")
        A = np.loadtxt(samples_path, delimiter=",", skiprows=1, ndmin=2)
        if A.shape[1] != len(header):
            raise ValueError(f"{samples_path}: {A.shape[1]} columns, expected {len(header)}")
        M = A.shape[0]
        cuts = np.cumsum([p, p * k, k, k, 1])
        c, Uf, s, mu, tau, sigma2 = np.split(A, cuts, axis=1)
        trace_path = d / "trace.csv"
        if trace_path.exists():
            T = np.loadtxt(trace_path, delimiter=",", skiprows=1, ndmin=2)
            log_post, accept = T[:, 1], T[:, 2].astype(bool)
        else:
            log_post, accept = np.empty(0), np.empty(0, dtype=bool)
        std = meta.get("standardization")
        return cls(
            c=c, U=Uf.reshape(M, k, p).transpose(0, 2, 1), s=s, mu=mu, tau=tau[:, 0], sigma2=sigma2,
            log_post=log_post, accept=accept,
            fb_failures=meta["fb_failures"], fb_evaluations=meta["fb_evaluations"],
            config=FitConfig.from_dict(meta["config"]), seed=meta["seed"],
            prior=Prior.from_dict(meta["prior"]),
            standardization=None if std is None else Standardization.from_dict(std),
            column_names=tuple(meta.get("column_names", ())),
        )


# -- initialisation ----------------------------------------------------------------


def gaussian_limit_init(data, k, tau=50.0):
    """
    Start near the Gaussian-factor limit: the top ``k-1`` principal axes carry
    lengths ``sqrt(tau * (lambda_j - noise))`` and ``mu`` points along a short
    k-th axis, so the EG is close to a factor model with ``k-1`` factors.
    """
    X = data.values
    n, p = X.shape
    mean = X.mean(axis=0)
    evals, evecs = np.linalg.eigh(np.cov(X, rowvar=False))
    evals, evecs = evals[::-1], evecs[:, ::-1]
    noise = float(np.mean(evals[k - 1 :])) if k - 1 < p else float(evals[-1])
    noise = max(noise, 1e-6 * evals[0])
    s = np.sqrt(tau * np.maximum(evals[: k - 1] - noise, noise))
    s = np.append(s, math.sqrt(noise))
    mu = np.zeros(k)
    mu[-1] = 1.0
    U = evecs[:, :k]
    c = mean - U[:, -1] * s[-1]
    resid = np.maximum(np.var(X, axis=0, ddof=1) - np.sum((U[:, :-1] * s[:-1]) ** 2, axis=1) / tau, noise)
    return EGParams(c=c, U=U, s=s, mu=mu, tau=tau, sigma2=resid)


def _initial_params(data, config, init, rng):
    sd = data.values.std(axis=0, ddof=1)
    if init is None:
        init = ctef_fit(data, config.k, rng=rng)
    if isinstance(init, EllipsoidFit):
        init = init.to_params(min_sd=0.1 * sd)
    if init.p != data.p or init.k != config.k:
        raise ValueError(f"initial parameters have (p, k) = ({init.p}, {init.k}), expected ({data.p}, {config.k})")
    return init


# -- geometry ------------------------------------------------------------------


def _qf(M):
    Q, R = np.linalg.qr(M)
    return Q * np.where(np.diag(R) < 0, -1.0, 1.0)


def _sphere_flow(mu, v, t):
    nv = np.linalg.norm(v)
    if nv == 0.0:
        return mu, v
    a = t * nv
    mu_new = mu * math.cos(a) + v * (math.sin(a) / nv)
    v_new = v * math.cos(a) - mu * (nv * math.sin(a))
    mu_new /= np.linalg.norm(mu_new)
    return mu_new, v_new - (mu_new @ v_new) * mu_new


def _tangent_noise(block, point, rng, shape):
    z = rng.standard_normal(shape)
    if block == "U":
        return project_stiefel(point, z)
    if block == "mu":
        return z - (point @ z) * point
    return z


# -- the chain -----------------------------------------------------------------


class _Chain:
    def __init__(self, data, config, init, rng):
        self.X = data.values
        self.n, self.p = self.X.shape
        self.k = config.k
        self.cfg = config
        self.rng = rng
        self.prior = config.prior.centered_on(init, data)
        self.blocks = ["U", "log_s", "mu"] + (["c"] if config.update_center else [])
        self.dims = {
            "U": self.p * self.k - self.k * (self.k + 1) // 2,
            "log_s": self.k,
            "mu": self.k - 1,
            "c": self.p,
        }
        self.failures = 0
        self.evaluations = 0
        pos = {"U": init.U.copy(), "log_s": np.log(init.s), "mu": init.mu.copy(), "c": init.c.copy()}
        mom = {b: _tangent_noise(b, pos[b], rng, np.shape(pos[b])) for b in self.blocks}
        d = len(init.sigma2) + 1
        self.state = ChainState(
            position=init,
            momenta=mom,
            thermostat={b: config.thermostat_diffusion for b in self.blocks},
            ram_factor=config.ram_init_scale * np.eye(d),
        )
        self.pos = pos
        self.tau = init.tau
        self.sigma2 = init.sigma2.copy()
        self.grad = None

    def params(self, pos=None, tau=None, sigma2=None):
        pos = self.pos if pos is None else pos
        return EGParams(
            c=pos["c"], U=pos["U"], s=np.exp(pos["log_s"]), mu=pos["mu"],
            tau=self.tau if tau is None else tau,
            sigma2=self.sigma2 if sigma2 is None else sigma2,
        )

    # gradient of the (minibatch-estimated) log posterior in the SGNHT blocks
    def block_grad(self, pos):
        n, b = self.n, min(self.cfg.minibatch, self.n)
        idx = self.rng.choice(n, size=b, replace=False) if b < n else np.arange(n)
        params = self.params(pos)
        self.evaluations += 1
        _, g = loglik_grad(self.X[idx], params, order=self.cfg.order, weights=np.full(b, n / b))
        pr = self.prior
        out = {
            "U": g.U,
            "log_s": g.s * params.s - (pos["log_s"] - pr.log_s_mean) / pr.log_s_sd**2,
            "mu": g.mu,
            "c": g.c - (pos["c"] - pr.center_mean) / pr.center_sd**2,
        }
        if not all(np.all(np.isfinite(out[b])) for b in self.blocks):
            raise FisherBinghamError("non-finite gradient")
        return out

    def flow(self, pos, mom, t):
        for b in self.blocks:
            v = mom[b]
            if b == "mu":
                pos[b], mom[b] = _sphere_flow(pos[b], v, t)
            elif b == "U":
                pos[b] = _qf(pos[b] + t * v)
                mom[b] = project_stiefel(pos[b], v)
            else:
                pos[b] = pos[b] + t * v

    def project(self, pos, mom):
        mom["U"] = project_stiefel(pos["U"], mom["U"])
        mom["mu"] = mom["mu"] - (pos["mu"] @ mom["mu"]) * pos["mu"]

    def sgnht_step(self):
        h, A = self.cfg.step_size, self.cfg.thermostat_diffusion
        pos = {k: np.copy(v) for k, v in self.pos.items()}
        mom = {k: np.copy(v) for k, v in self.state.momenta.items()}
        xi = dict(self.state.thermostat)
        try:
            g = self.grad if self.grad is not None else self.block_grad(pos)
            for b in self.blocks:
                mom[b] = mom[b] + 0.5 * h * g[b]
            self.project(pos, mom)
            self.flow(pos, mom, 0.5 * h)
            for b in self.blocks:
                xi[b] += 0.5 * h * (float(np.sum(mom[b] ** 2)) / self.dims[b] - 1.0)
                x = xi[b] * h
                # exact OU over time h: dv = -xi v dt + sqrt(2 A) dW
                var = A * h * (-math.expm1(-2.0 * x) / x if abs(x) > 1e-12 else 2.0)
                mom[b] = math.exp(-x) * mom[b] + math.sqrt(var) * _tangent_noise(b, pos[b], self.rng, np.shape(mom[b]))
                xi[b] += 0.5 * h * (float(np.sum(mom[b] ** 2)) / self.dims[b] - 1.0)
            self.flow(pos, mom, 0.5 * h)
            g = self.block_grad(pos)
            for b in self.blocks:
                mom[b] = mom[b] + 0.5 * h * g[b]
            self.project(pos, mom)
            if not all(np.all(np.isfinite(v)) for v in mom.values()):
                raise FisherBinghamError("non-finite momentum")
        except FisherBinghamError:
            self.failures += 1
            self.grad = None
            return False
        self.pos, self.grad = pos, g
        self.state.momenta, self.state.thermostat = mom, xi
        return True

    def full_log_post(self, tau, sigma2):
        self.evaluations += 1
        params = self.params(tau=tau, sigma2=sigma2)
        return log_posterior(params, self.X, prior=self.prior, order=self.cfg.order)

    def ram_step(self, it):
        cfg = self.cfg
        S = self.state.ram_factor
        d = S.shape[0]
        r = np.append(np.log(self.sigma2), math.log(self.tau))
        try:
            cur = self.full_log_post(self.tau, self.sigma2)
        except FisherBinghamError:
            self.failures += 1
            return False, math.nan
        u = self.rng.standard_normal(d)
        prop = r + S @ u
        try:
            new = self.full_log_post(math.exp(prop[-1]), np.exp(prop[:-1]))
        except (FisherBinghamError, ValueError):
            self.failures += 1
            new = -math.inf
        if not math.isfinite(new):
            new = -math.inf
        alpha = math.exp(min(0.0, new - cur)) if new > -math.inf else 0.0
        accepted = self.rng.random() < alpha
        if accepted:
            self.sigma2, self.tau, cur = np.exp(prop[:-1]), math.exp(prop[-1]), new
        eta = min(1.0, d * (it + 1) ** (-2.0 / 3.0))
        M = S @ (np.eye(d) + eta * (alpha - cfg.ram_target_accept) * np.outer(u, u) / (u @ u)) @ S.T
        try:
            self.state.ram_factor = np.linalg.cholesky(0.5 * (M + M.T))
        except np.linalg.LinAlgError:
            pass
        return accepted, cur


def fit(data, config, init=None, rng=None):
    """
    Run one chain and return the post burn-in, thinned draws.

    Parameters
    ----------
    data : Dataset
    config : FitConfig
    init : EllipsoidFit or EGParams, optional
        Starting point. A CTEF fit (computed here when absent) is compared
        with a Gaussian-limit start and the one with the higher log
        posterior is used; explicit ``EGParams`` are used as given.
    rng : numpy.random.Generator, optional
        Defaults to ``default_rng(config.seed)``.

    Raises
    ------
    SamplerAbort
        If more than ``config.max_failure_rate`` of the density evaluations fail.
    """
    if not isinstance(data, Dataset):
        data = Dataset(data)
    if config.minibatch > data.n:
        raise ValueError(f"minibatch {config.minibatch} exceeds n={data.n}")
    if data.p < config.k:
        raise ValueError(f"k={config.k} exceeds the data dimension p={data.p}")
    rng = np.random.default_rng(config.seed) if rng is None else rng
    t0 = time.perf_counter()
    start = _initial_params(data, config, init, rng)
    if not isinstance(init, EGParams):
        alt = gaussian_limit_init(data, config.k)
        try:
            lp_alt = log_posterior(alt, data, prior=config.prior.centered_on(alt, data))
            if lp_alt > log_posterior(start, data, prior=config.prior.centered_on(start, data)):
                start = alt
        except FisherBinghamError:
            pass
    chain = _Chain(data, config, start, rng)

    keep = range(config.burn_in, config.n_iter, config.thin)
    M = len(keep)
    p, k = data.p, config.k
    out = {
        "c": np.empty((M, p)), "U": np.empty((M, p, k)), "s": np.empty((M, k)),
        "mu": np.empty((M, k)), "tau": np.empty(M), "sigma2": np.empty((M, p)),
    }
    log_post = np.empty(config.n_iter)
    accept = np.zeros(config.n_iter, dtype=bool)
    m = 0
    for it in range(config.n_iter):
        chain.sgnht_step()
        accept[it], log_post[it] = chain.ram_step(it)
        chain.state.iteration = it + 1
        if it + 1 >= _MIN_CHECK and chain.failures > config.max_failure_rate * chain.evaluations:
            report = {"iteration": it + 1, "failures": chain.failures, "evaluations": chain.evaluations}
            raise SamplerAbort(
                f"Fisher-Bingham failure rate {chain.failures}/{chain.evaluations} exceeds "
                f"{config.max_failure_rate:.2%}", report,
            )
        if it >= config.burn_in and (it - config.burn_in) % config.thin == 0:
            pr = chain.params()
            out["c"][m], out["U"][m], out["s"][m] = pr.c, pr.U, pr.s
            out["mu"][m], out["tau"][m], out["sigma2"][m] = pr.mu, pr.tau, pr.sigma2
            m += 1
    chain.state.position = chain.params()
    samples = PosteriorSamples(
        **out, log_post=log_post, accept=accept,
        fb_failures=chain.failures, fb_evaluations=chain.evaluations,
        config=config, seed=config.seed, prior=chain.prior,
        standardization=data.standardization, column_names=data.column_names,
        elapsed=time.perf_counter() - t0,
    )
    samples.final_state = chain.state
    return samples
