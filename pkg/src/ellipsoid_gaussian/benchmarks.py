"""
Simulated benchmark settings and the hybrid Rosenbrock density.

The loadings of the EG settings are fixtures stored in
``data/settings.json``. Each was drawn once from :func:`build_fixture` with
the recorded seed; the test-suite checks the committed file against a fresh
rebuild.
"""

import json
from dataclasses import dataclass
from importlib import resources
from typing import Optional

import numpy as np
from scipy.stats import ortho_group

from .core import Dataset, EGParams, GaussianFactorModel, Standardization, eg_sample

__all__ = [
    "SETTINGS",
    "SimResult",
    "HybridRosenbrockParams",
    "gen_setting",
    "load_fixture",
    "build_fixture",
    "standardize_params",
    "hybrid_rosenbrock_log_density",
    "hybrid_rosenbrock_sample",
]

# name -> (kind, p, k, seed, lengths, tau, noise variance, standardize)
_RECIPES = {
    "very_curved_8d": ("eg", 8, 4, 20240801, (4.0, 3.0, 2.0, 1.5), 3.0, 0.01, False),
    "approx_gaussian_6d": ("eg", 6, 2, 20240802, (3.0, 2.0), 30.0, 0.4, True),
    "gaussian_factor_6d": ("factor", 6, 3, 20240803, (3.0, 2.0, 1.0), None, 0.01, True),
    "hybrid_rosenbrock_3d": ("rosenbrock", 3, None, None, None, None, None, True),
}
SETTINGS = tuple(_RECIPES)


def build_fixture(name):
    """Regenerate the committed fixture record for an EG or factor setting."""
    kind, p, k, seed, lengths, tau, noise, _ = _RECIPES[name]
    if kind == "rosenbrock":
        raise ValueError(f"{name} has no loadings fixture")
    rng = np.random.default_rng(seed)
    U = ortho_group.rvs(p, random_state=rng)[:, :k]
    # every setting is centered at the origin: x = Lambda eta + eps
    c = np.zeros(p)
    mu = rng.standard_normal(k)
    mu /= np.linalg.norm(mu)
    rec = {
        "kind": kind,
        "seed": seed,
        "p": p,
        "k": k,
        "c": c.tolist(),
        "U": U.flatten(order="F").tolist(),
        "s": list(lengths),
        "sigma2": [noise] * p,
    }
    if kind == "eg":
        rec.update(mu=mu.tolist(), tau=tau)
    return rec


def load_fixture(name):
    """Committed fixture record (see :func:`build_fixture`)."""
    if name not in _RECIPES or _RECIPES[name][0] == "rosenbrock":
        raise ValueError(f"no loadings fixture for setting {name!r}")
    text = resources.files(__package__).joinpath("data/settings.json").read_text()
    return json.loads(text)[name]


def _fixture_model(name):
    rec = load_fixture(name)
    if rec["kind"] == "eg":
        return EGParams.from_dict(rec)
    p, k = rec["p"], rec["k"]
    U = np.asarray(rec["U"]).reshape((p, k), order="F")
    return GaussianFactorModel(
        c=np.asarray(rec["c"]), loadings=U * np.asarray(rec["s"]), sigma2=np.asarray(rec["sigma2"])
    )


def standardize_params(params, rec):
    """
    Push parameters through ``z = (x - mean) / sd``.

    EG parameters stay EG: the scaled loadings are re-factored and their
    right singular factor is absorbed into ``mu``.
    """
    inv = 1.0 / rec.sd
    if isinstance(params, GaussianFactorModel):
        return GaussianFactorModel(
            c=(params.c - rec.mean) * inv,
            loadings=params.loadings * inv[:, None],
            sigma2=params.sigma2 * inv * inv,
        )
    return EGParams.from_loadings(
        c=(params.c - rec.mean) * inv,
        loadings=params.loadings * inv[:, None],
        mu=params.mu,
        tau=params.tau,
        sigma2=params.sigma2 * inv * inv,
    )


@dataclass(frozen=True)
class HybridRosenbrockParams:
    """
    Hybrid Rosenbrock constants: one root coordinate ``x_1`` and ``n2`` chains
    of length ``n1`` that share it, so ``dim = 1 + n2 (n1 - 1)``.

    ``b`` has shape ``(n2, n1 - 1)``; ``b[j, i - 2]`` couples ``x_{j,i}`` to
    ``x_{j,i-1}`` for ``i = 2..n1`` (``x_{j,1}`` is ``x_1``).
    """

    a: float
    b: np.ndarray
    nu: float
    n1: int
    n2: int

    def __post_init__(self):
        b = np.asarray(self.b, dtype=float)
        if b.ndim == 0:
            b = np.full((self.n2, self.n1 - 1), float(b))
        if self.n1 < 2 or self.n2 < 1:
            raise ValueError("need n1 >= 2 and n2 >= 1")
        if b.shape != (self.n2, self.n1 - 1):
            raise ValueError(f"b has shape {b.shape}, expected {(self.n2, self.n1 - 1)}")
        if self.a <= 0 or np.any(b <= 0):
            raise ValueError("a and b must be positive")
        object.__setattr__(self, "b", b)

    @property
    def dim(self):
        return 1 + self.n2 * (self.n1 - 1)

    @classmethod
    def default_3d(cls):
        return cls(a=0.2, b=0.05, nu=1.0, n1=3, n2=1)


def _chains(X, params):
    """Reshape (n, dim) points into (n, n2, n1) chains with x_1 prepended."""
    n = X.shape[0]
    body = X[:, 1:].reshape(n, params.n2, params.n1 - 1)
    root = np.broadcast_to(X[:, :1, None], (n, params.n2, 1))
    return np.concatenate([root, body], axis=2)


def hybrid_rosenbrock_log_density(x, params):
    """Unnormalised log density at one point or at each row of an array."""
    X = np.asarray(x, dtype=float)
    single = X.ndim == 1
    X = np.atleast_2d(X)
    if X.shape[1] != params.dim:
        raise ValueError(f"point has dimension {X.shape[1]}, expected {params.dim}")
    ch = _chains(X, params)
    ridge = ch[:, :, 1:] - ch[:, :, :-1] ** 2
    out = -params.a * (X[:, 0] - params.nu) ** 2 - np.einsum("ji,nji->n", params.b, ridge * ridge)
    return float(out[0]) if single else out


def hybrid_rosenbrock_sample(params, n, rng):
    """Exact ancestral draws: ``x_1`` first, then each chain in order."""
    x1 = params.nu + rng.standard_normal(n) / np.sqrt(2.0 * params.a)
    cols = [x1]
    for j in range(params.n2):
        prev = x1
        for i in range(params.n1 - 1):
            prev = prev * prev + rng.standard_normal(n) / np.sqrt(2.0 * params.b[j, i])
            cols.append(prev)
    names = ["x1"] + [f"x{j + 1}.{i + 2}" for j in range(params.n2) for i in range(params.n1 - 1)]
    return Dataset(np.column_stack(cols), names)


@dataclass(frozen=True)
class SimResult:
    """
    Simulated data plus the generating model.

    ``params`` is in the units of ``data.values`` (standardized when the
    setting is); ``raw_params`` is in the original units.
    """

    data: Dataset
    params: Optional[object]
    raw_params: Optional[object]


def gen_setting(name, n, rng):
    """Draw ``n`` points from a named benchmark setting."""
    if name not in _RECIPES:
        raise ValueError(f"unknown setting {name!r}; choose from {', '.join(SETTINGS)}")
    if n < 1:
        raise ValueError("n must be at least 1")
    kind, *_, standardize = _RECIPES[name]
    if kind == "rosenbrock":
        model = HybridRosenbrockParams.default_3d()
        raw = hybrid_rosenbrock_sample(model, n, rng)
    else:
        model = _fixture_model(name)
        if kind == "eg":
            raw = eg_sample(model, n, rng)
        else:
            raw = Dataset(model.sample(n, rng))
    if not standardize:
        return SimResult(raw, model, model)
    if n < 2:
        raise ValueError(f"setting {name!r} is standardized and needs n >= 2")
    rec = Standardization.fit(raw.values)
    data = raw.with_standardization(rec)
    params = model if kind == "rosenbrock" else standardize_params(model, rec)
    return SimResult(data, params, model)
