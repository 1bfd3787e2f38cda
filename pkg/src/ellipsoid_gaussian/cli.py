"""
Command-line interface.

Every subcommand reads and writes headered CSV or JSON. Exit status is 0 on
success, 1 on invalid input and 2 on a numerical failure. Randomised
subcommands require ``--seed``; the same arguments and seed reproduce every
output file byte for byte.
"""

import argparse
import configparser
import csv
import json
import logging
import math
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .benchmarks import SETTINGS, gen_setting
from .core import Dataset, EGParams, GaussianFactorModel, Standardization, eg_log_density, eg_sample
from .ctef import ctef_fit
from .fisher_bingham import FisherBinghamError
from .postprocess import conditional_curve, diagnostics, lppd, match_align, posterior_predictive
from .sampler import FitConfig, PosteriorSamples, Prior, SamplerAbort, fit

__all__ = ["main", "read_csv", "write_csv"]

log = logging.getLogger("ellipsoid_gaussian")

OUTPUT_ENV = "EG_OUTPUT_DIR"
EXIT_OK, EXIT_INVALID, EXIT_NUMERICAL = 0, 1, 2


class InputError(ValueError):
    pass


def read_csv(path):
    """Read a numeric CSV with a header row; errors name the offending line."""
    path = Path(path)
    if not path.exists():
        raise InputError(f"{path}: no such file")
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise InputError(f"{path}: empty file, expected a header row") from None
        header = [h.strip() for h in header]
        if not header or any(h == "" for h in header):
            raise InputError(f"{path}:1: header has empty column names")
        rows = []
        for row in reader:
            line = reader.line_num
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise InputError(f"{path}:{line}: {len(row)} fields, header has {len(header)}")
            try:
                vals = [float(c) for c in row]
            except ValueError:
                bad = next(c for c in row if not _is_float(c))
                raise InputError(f"{path}:{line}: non-numeric value {bad.strip()!r}") from None
            if not all(math.isfinite(v) for v in vals):
                raise InputError(f"{path}:{line}: non-finite value")
            rows.append(vals)
    values = np.array(rows, dtype=float).reshape(len(rows), len(header))
    return Dataset(values, header)


def _is_float(s):
    try:
        float(s)
        return True
    except ValueError:
        return False


def write_csv(path, values, header, fmt="%.17g"):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    np.savetxt(path, np.atleast_2d(values).reshape(-1, len(header)), delimiter=",",
               header=",".join(header), comments="", fmt=fmt)


def _write_json(path, obj):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _out_path(args, default_name):
    if args.out:
        return Path(args.out)
    return Path(os.environ.get(OUTPUT_ENV, ".")) / default_name


def _load_params(path):
    path = Path(path)
    if not path.exists():
        raise InputError(f"{path}: no such file")
    d = json.loads(path.read_text())
    return EGParams.from_dict(d.get("params", d))


def _load_samples(path):
    try:
        return PosteriorSamples.load(path)
    except FileNotFoundError as err:
        raise InputError(str(err)) from None


def _check_dim(data, p, what, where):
    if data.p != p:
        raise InputError(f"{where} has shape {data.values.shape} but {what} has p={p}")


# -- subcommands -----------------------------------------------------------------


def cmd_simdata(args):
    res = gen_setting(args.setting, args.n, np.random.default_rng(args.seed))
    out = _out_path(args, f"{args.setting}.csv")
    write_csv(out, res.data.values, res.data.column_names)
    side = {"setting": args.setting, "n": args.n, "seed": args.seed}
    if isinstance(res.params, EGParams):
        side["params"] = res.params.to_dict()
        side["raw_params"] = res.raw_params.to_dict()
    elif isinstance(res.params, GaussianFactorModel):
        side["factor_model"] = {k: np.asarray(v).tolist() for k, v in vars(res.params).items()}
    else:
        side["rosenbrock"] = {"a": res.params.a, "b": res.params.b.tolist(), "nu": res.params.nu,
                              "n1": res.params.n1, "n2": res.params.n2}
    if res.data.standardization is not None:
        side["standardization"] = res.data.standardization.to_dict()
    _write_json(out.with_suffix(".params.json"), side)
    print(f"wrote {out} ({res.data.n} x {res.data.p})")
    return EXIT_OK


_CONFIG_TYPES = {
    "k": int, "n_iter": int, "burn_in": int, "step_size": float, "minibatch": int, "seed": int,
    "thin": int, "thermostat_diffusion": float, "ram_target_accept": float, "ram_init_scale": float,
    "order": str, "max_failure_rate": float,
}
_BOOL_KEYS = ("update_center",)
_PRIOR_TYPES = {"log_s_sd": float, "tau_shape": float, "tau_rate": float, "sigma2_shape": float,
                "sigma2_scale": float, "sigma2_relative": bool, "center_sd_factor": float}


def _read_config(path):
    """Flat ``key = value`` settings from the ``[fit]`` and ``[prior]`` sections."""
    cp = configparser.ConfigParser()
    if not cp.read(path):
        raise InputError(f"{path}: cannot read config file")
    fit_kw, prior_kw = {}, {}
    if cp.has_section("fit"):
        for key, raw in cp.items("fit"):
            if key in _BOOL_KEYS:
                fit_kw[key] = cp.getboolean("fit", key)
            elif key in _CONFIG_TYPES:
                fit_kw[key] = _CONFIG_TYPES[key](raw)
            else:
                raise InputError(f"{path}: unknown [fit] key {key!r}")
    if cp.has_section("prior"):
        for key, raw in cp.items("prior"):
            if key not in _PRIOR_TYPES:
                raise InputError(f"{path}: unknown [prior] key {key!r}")
            prior_kw[key] = cp.getboolean("prior", key) if _PRIOR_TYPES[key] is bool else float(raw)
    unknown = set(cp.sections()) - {"fit", "prior"}
    if unknown:
        raise InputError(f"{path}: unknown sections {sorted(unknown)}")
    return fit_kw, prior_kw


def _fit_config(args):
    fit_kw, prior_kw = _read_config(args.config) if args.config else ({}, {})
    flags = {
        "k": args.k, "n_iter": args.iters, "burn_in": args.burn_in, "step_size": args.step,
        "minibatch": args.batch, "seed": args.seed, "thin": args.thin,
        "thermostat_diffusion": args.diffusion, "ram_target_accept": args.target_accept,
        "order": args.order,
    }
    fit_kw.update({k: v for k, v in flags.items() if v is not None})
    if args.update_center:
        fit_kw["update_center"] = True
    for req in ("k", "seed"):
        if req not in fit_kw:
            raise InputError(f"--{req} is required (flag or config file)")
    return FitConfig(prior=Prior(**prior_kw), **fit_kw)


def _run_chain(job):
    data, config, out = job
    rng = np.random.default_rng(config.seed)
    init = ctef_fit(data, config.k, rng=rng)
    samples = fit(data, config, init=init, rng=rng)
    samples.save(out)
    _write_json(Path(out) / "ctef.json", {
        "params": init.to_params().to_dict(), "loss": init.loss,
        "converged": bool(init.converged), "warnings": list(init.warnings),
    })
    return out, len(samples), samples.elapsed, samples.acceptance_rate(), samples.fb_failures


def cmd_fit(args):
    data = read_csv(args.input)
    if args.standardize:
        data = data.standardized()
    config = _fit_config(args)
    if data.n <= data.p:
        raise InputError(f"need more rows than columns, got {data.values.shape}")
    out = _out_path(args, "posterior")
    if args.chains < 1:
        raise InputError("--chains must be positive")
    if args.chains == 1:
        jobs = [(data, config, out)]
    else:
        jobs = []
        for i in range(args.chains):
            cfg = FitConfig.from_dict({**config.to_dict(), "seed": config.seed + i})
            jobs.append((data, cfg, out / f"chain_{i + 1}"))
    if len(jobs) == 1:
        results = [_run_chain(jobs[0])]
    else:
        with ProcessPoolExecutor(max_workers=min(len(jobs), os.cpu_count() or 1)) as pool:
            results = list(pool.map(_run_chain, jobs))
    for path, n_draws, elapsed, acc, fails in results:
        print(f"wrote {path} draws={n_draws} ram_acceptance={acc:.4f} fb_failures={fails}")
        print(f"elapsed_seconds={elapsed:.2f}", file=sys.stderr)
    return EXIT_OK


def cmd_sample(args):
    params = _load_params(args.params)
    data = eg_sample(params, args.n, np.random.default_rng(args.seed))
    out = _out_path(args, "sample.csv")
    write_csv(out, data.values, [f"x{j + 1}" for j in range(params.p)])
    print(f"wrote {out} ({args.n} x {params.p})")
    return EXIT_OK


def cmd_density(args):
    params = _load_params(args.params)
    data = read_csv(args.input)
    _check_dim(data, params.p, "the parameters", args.input)
    if data.n == 0:
        raise InputError(f"{args.input}: no data rows")
    vals = eg_log_density(data.values, params, order=args.order)
    out = _out_path(args, "density.csv")
    write_csv(out, vals[:, None], ["log_density"])
    print(f"wrote {out} ({data.n} rows)")
    return EXIT_OK


def cmd_predict(args):
    samples = _load_samples(args.post)
    pred = posterior_predictive(samples, args.n, np.random.default_rng(args.seed))
    values = pred.raw_values() if args.raw_units else pred.values
    names = list(samples.column_names) or [f"x{j + 1}" for j in range(samples.p)]
    out = _out_path(args, "predictive.csv")
    write_csv(out, values, names)
    print(f"wrote {out} ({args.n} x {samples.p})")
    return EXIT_OK


def cmd_lppd(args):
    samples = _load_samples(args.post)
    test = read_csv(args.test)
    _check_dim(test, samples.p, "the posterior draws", args.test)
    if test.n == 0:
        raise InputError(f"{args.test}: no data rows")
    res = lppd(samples, test, raw_units=args.raw_units)
    lines = [
        f"lppd={res.total:.10g}",
        f"lppd_per_obs={res.per_obs:.10g}",
        f"n_test={test.n}",
        f"n_draws={len(samples)}",
        f"failed_pairs={res.n_failed}",
    ]
    print("\n".join(lines))
    if args.out:
        write_csv(args.out, res.per_point[:, None], ["mean_log_density"])
    return EXIT_OK


def cmd_align(args):
    samples = _load_samples(args.post)
    al = match_align(samples)
    M, p, k = al.draws.shape
    out = _out_path(args, "aligned_loadings.csv")
    names = [f"L.{i + 1}.{j + 1}" for j in range(k) for i in range(p)]
    write_csv(out, al.draws.transpose(0, 2, 1).reshape(M, -1), names)
    rec = np.hstack([al.perms + 1, al.signs.astype(int)])
    rec_names = [f"perm.{j + 1}" for j in range(k)] + [f"sign.{j + 1}" for j in range(k)]
    write_csv(out.with_name(out.stem + "_record.csv"), rec, rec_names, fmt="%d")
    print(f"wrote {out} pivot={al.pivot + 1}")
    return EXIT_OK


def _parse_grid(spec):
    if ":" in spec:
        parts = spec.split(":")
        if len(parts) != 3:
            raise InputError(f"grid {spec!r} must be start:stop:count")
        a, b, n = float(parts[0]), float(parts[1]), int(parts[2])
        if n < 1:
            raise InputError("grid count must be positive")
        return np.linspace(a, b, n)
    try:
        return np.array([float(v) for v in spec.split(",")])
    except ValueError:
        raise InputError(f"cannot parse grid {spec!r}") from None


def _column(spec):
    """Column name, or 1-based index when all digits."""
    return int(spec) - 1 if spec.isdigit() else spec


def cmd_curve(args):
    samples = _load_samples(args.post)
    data = read_csv(args.data)
    _check_dim(data, samples.p, "the posterior draws", args.data)
    if samples.standardization is not None:
        data = data.with_standardization(samples.standardization)
    grid = _parse_grid(args.grid)
    try:
        cur = conditional_curve(
            samples, data, _column(args.response), _column(args.predictor), grid,
            max_draws=args.max_draws, raw_units=args.raw_units,
        )
    except (KeyError, IndexError) as err:
        raise InputError(str(err).strip("'\"")) from None
    out = _out_path(args, "curve.csv")
    out.parent.mkdir(parents=True, exist_ok=True)
    cur.to_csv(out)
    print(f"wrote {out} ({grid.size} points, {int(cur.flagged.sum())} flagged)")
    return EXIT_OK


def cmd_diagnose(args):
    samples = _load_samples(args.post)
    out = _out_path(args, "diagnostics.txt")
    traces = Path(args.traces) if args.traces else out.with_name("traces.csv")
    rep = diagnostics(samples, traces_path=traces)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(rep.to_text())
    print(f"wrote {out} and {traces}")
    return EXIT_OK


# -- parser --------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    """Usage errors are invalid input (exit 1); argparse's own code 2 is reserved."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INVALID, f"{self.prog}: error: {message}\n")


def build_parser():
    ap = _Parser(prog="eg", description="Ellipsoid-Gaussian modelling tools.")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add(name, func, help_):
        p = sub.add_parser(name, help=help_)
        p.set_defaults(func=func)
        p.add_argument("--out", help=f"output path (default: ${OUTPUT_ENV} or the working directory)")
        return p

    p = add("simdata", cmd_simdata, "simulate a benchmark setting")
    p.add_argument("--setting", required=True, choices=SETTINGS)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, required=True)

    p = add("fit", cmd_fit, "fit EG by MCMC (CTEF start, SGNHT + RAM)")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--k", type=int)
    p.add_argument("--iters", type=int)
    p.add_argument("--burn-in", type=int)
    p.add_argument("--step", type=float)
    p.add_argument("--batch", type=int)
    p.add_argument("--thin", type=int)
    p.add_argument("--diffusion", type=float)
    p.add_argument("--target-accept", type=float)
    p.add_argument("--order", choices=("first_order", "corrected"))
    p.add_argument("--update-center", action="store_true")
    p.add_argument("--standardize", action="store_true")
    p.add_argument("--chains", type=int, default=1)
    p.add_argument("--config", help="INI file with [fit] and [prior] sections; flags override it")
    p.add_argument("--seed", type=int)

    p = add("sample", cmd_sample, "draw from EG parameters")
    p.add_argument("--params", required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, required=True)

    p = add("density", cmd_density, "log density of each row")
    p.add_argument("--params", required=True)
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--order", choices=("first_order", "corrected"), default="corrected")

    p = add("predict", cmd_predict, "posterior predictive draws")
    p.add_argument("--post", required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--raw-units", action="store_true")

    p = add("lppd", cmd_lppd, "held-out log posterior predictive density")
    p.add_argument("--post", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--raw-units", action="store_true")

    p = add("align", cmd_align, "align loadings draws by column matching and sign flips")
    p.add_argument("--post", required=True)

    p = add("curve", cmd_curve, "conditional-mean curve with 95%% band")
    p.add_argument("--post", required=True)
    p.add_argument("--data", required=True, help="training CSV (for the held-at sample means)")
    p.add_argument("--response", required=True)
    p.add_argument("--predictor", required=True)
    p.add_argument("--grid", required=True, help="start:stop:count or comma-separated values (use --grid=... for negative starts)")
    p.add_argument("--max-draws", type=int, default=200)
    p.add_argument("--raw-units", action="store_true")

    p = add("diagnose", cmd_diagnose, "ESS, acceptance and failure report")
    p.add_argument("--post", required=True)
    p.add_argument("--traces")
    return ap


def main(argv=None):
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (FisherBinghamError, SamplerAbort, ArithmeticError, np.linalg.LinAlgError) as err:
        print(f"numerical error: {err}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (ValueError, KeyError, IndexError, FileNotFoundError, json.JSONDecodeError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
