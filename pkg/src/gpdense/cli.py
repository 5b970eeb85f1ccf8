"""Command-line interface: fit, eval, generate, compare.

Config files are flat ``key = value`` lines with ``#`` comments and
dotted namespaces. All commands require a seed (the GPDENSE_SEED
environment variable overrides it). Exit codes: 0 success, 1 usage or
config error, 2 numerical failure, 3 flagged-result guard.
"""

import argparse
import json
import os
import sys
import time

import numpy as np

from .base_measure import (
    Dataset,
    DiagonalGaussian,
    GaussianMixtureMeasure,
    StandardNormal,
    Whitening,
    fit_gmm,
    whiten,
)
from .baselines import GMMModel, KDEModel, fit_gmm_cv, fit_kde_cv
from .density import (
    FlaggedEstimateError,
    log_expected_test_likelihood,
    posterior_density_samples,
)
from .diagnostics import MethodResult, compare_report, format_table
from .gibbs import GibbsChain, GibbsConfig, GibbsSnapshot, run_chain
from .kernel_gp import CholeskyError, KernelParams
from .synthgen import AcceptanceStallError, generate_dataset
from .variational import SparseVBState, VBConfig, run_vb

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_NUMERICAL = 2
EXIT_FLAGGED = 3


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------------------
# CSV and config ingestion
# ---------------------------------------------------------------------------

def ingest_csv(path) -> Dataset:
    """Read an N x d CSV with an optional single header row."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            lines = fh.readlines()
    except OSError as err:
        raise ConfigError(f"cannot read {path}: {err}") from err
    rows = []
    width = None
    start_line = 0
    for lineno, raw in enumerate(lines, start=1):
        text = raw.strip()
        if not text:
            continue
        cells = [c.strip() for c in text.split(",")]
        try:
            values = [float(c) for c in cells]
        except ValueError:
            if lineno == start_line + 1 and not rows:
                continue  # header row
            raise ConfigError(
                f"{path}:{lineno}: non-numeric cell in row"
            ) from None
        if width is None:
            width = len(values)
        elif len(values) != width:
            raise ConfigError(
                f"{path}:{lineno}: expected {width} fields, got {len(values)}"
            )
        rows.append(values)
    if not rows:
        raise ConfigError(f"{path}: no data rows")
    return Dataset(points=np.asarray(rows))


def parse_config(path):
    """Flat key = value config with # comments and dotted keys."""
    cfg = {}
    try:
        with open(path, "r", encoding="utf-8") as fh:
            lines = fh.readlines()
    except OSError as err:
        raise ConfigError(f"cannot read {path}: {err}") from err
    for lineno, raw in enumerate(lines, start=1):
        text = raw.split("#", 1)[0].strip()
        if not text:
            continue
        if "=" not in text:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
        key, value = text.split("=", 1)
        cfg[key.strip()] = value.strip()
    return cfg


def _get(cfg, key, default=None, cast=str, required=False):
    if key not in cfg:
        if required:
            raise ConfigError(f"missing required config key: {key}")
        return default
    raw = cfg[key]
    if cast is bool:
        if raw.lower() in ("true", "1", "yes"):
            return True
        if raw.lower() in ("false", "0", "no"):
            return False
        raise ConfigError(f"bad boolean for {key}: {raw}")
    try:
        return cast(raw)
    except ValueError as err:
        raise ConfigError(f"bad value for {key}: {raw}") from err


def _floats(raw):
    return [float(v) for v in raw.split(",")]


def resolve_seed(cfg_seed):
    env = os.environ.get("GPDENSE_SEED")
    if env is not None:
        try:
            return int(env)
        except ValueError as err:
            raise ConfigError(f"bad GPDENSE_SEED: {env}") from err
    if cfg_seed is None:
        raise ConfigError("seed is required (config key 'seed' or "
                          "GPDENSE_SEED)")
    return int(cfg_seed)


# ---------------------------------------------------------------------------
# JSON serialization helpers
# ---------------------------------------------------------------------------

def _np(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    raise TypeError(f"not serializable: {type(obj)!r}")


def _dump_json(payload, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, default=_np)
        fh.write("\n")


def _serialize_base(base):
    if isinstance(base, StandardNormal):
        return {"kind": "standard_normal", "dim": base.dim}
    if isinstance(base, DiagonalGaussian):
        return {"kind": "diagonal_gaussian", "mean": base.mean,
                "scales": base.scales}
    if isinstance(base, GaussianMixtureMeasure):
        return {"kind": "gmm", "weights": base.weights, "means": base.means,
                "covariances": base.covariances}
    raise TypeError(f"unknown base measure: {type(base)!r}")


def _deserialize_base(spec):
    kind = spec["kind"]
    if kind == "standard_normal":
        return StandardNormal(spec["dim"])
    if kind == "diagonal_gaussian":
        return DiagonalGaussian(np.asarray(spec["mean"], float),
                                np.asarray(spec["scales"], float))
    if kind == "gmm":
        return GaussianMixtureMeasure(
            np.asarray(spec["weights"], float),
            np.asarray(spec["means"], float),
            np.asarray(spec["covariances"], float),
        )
    raise ConfigError(f"unknown base measure kind: {kind}")


def _serialize_whitening(w):
    if w is None:
        return None
    return {"mean": w.mean, "transform": w.transform, "inverse": w.inverse}


def _deserialize_whitening(spec):
    if spec is None:
        return None
    return Whitening(
        mean=np.asarray(spec["mean"], float),
        transform=np.asarray(spec["transform"], float),
        inverse=np.asarray(spec["inverse"], float),
    )


def serialize_model(method, model, train_data: Dataset):
    out = {"method": method,
           "whitening": _serialize_whitening(train_data.whitening)}
    if method == "gibbs":
        out["train_points"] = train_data.points
        out["base"] = _serialize_base(model.base)
        out["snapshots"] = [
            {"latent": s.latent_locations, "g": s.g_vals, "lambda": s.lam,
             "kernel": s.kernel_vector, "mu0": s.mu0,
             "base_params": s.base_params}
            for s in model.snapshots
        ]
    elif method == "vb":
        st = model
        out.update({
            "inducing": st.inducing, "mu2s": st.mu2s, "sigma2s": st.sigma2s,
            "alpha2": st.alpha2, "kernel": st.kernel.as_vector(),
            "mu0": st.mu0, "base": _serialize_base(st.base),
        })
    elif method == "kde":
        out.update({"bandwidth": model.bandwidth,
                    "train_points": model.training_points})
    elif method == "gmm":
        out.update({"n_components": model.n_components,
                    "base": _serialize_base(model.measure)})
    else:
        raise ConfigError(f"unknown method: {method}")
    return out


def deserialize_model(payload):
    method = payload["method"]
    whitening = _deserialize_whitening(payload.get("whitening"))
    if method == "gibbs":
        data = Dataset(points=np.asarray(payload["train_points"], float),
                       whitening=whitening)
        base = _deserialize_base(payload["base"])
        snapshots = [
            GibbsSnapshot(
                latent_locations=np.asarray(s["latent"], float).reshape(
                    -1, data.dim),
                g_vals=np.asarray(s["g"], float),
                lam=float(s["lambda"]),
                kernel_vector=np.asarray(s["kernel"], float),
                mu0=float(s["mu0"]),
                base_params=np.asarray(s["base_params"], float),
            )
            for s in payload["snapshots"]
        ]
        chain = GibbsChain(data=data, base=base, snapshots=snapshots,
                           config=GibbsConfig(), mh_accept_rate=0.0,
                           runtime_seconds=0.0)
        return method, chain, whitening
    if method == "vb":
        state = SparseVBState(
            inducing=np.asarray(payload["inducing"], float),
            mu2s=np.asarray(payload["mu2s"], float),
            sigma2s=np.asarray(payload["sigma2s"], float),
            alpha2=float(payload["alpha2"]),
            kernel=KernelParams.from_vector(
                np.asarray(payload["kernel"], float)),
            mu0=float(payload["mu0"]),
            base=_deserialize_base(payload["base"]),
            integ_points=np.empty((0, 1)),
        )
        return method, state, whitening
    if method == "kde":
        model = KDEModel(bandwidth=float(payload["bandwidth"]),
                         training_points=np.asarray(
                             payload["train_points"], float))
        return method, model, whitening
    if method == "gmm":
        measure = _deserialize_base(payload["base"])
        model = GMMModel(measure=measure,
                         n_components=int(payload["n_components"]))
        return method, model, whitening
    raise ConfigError(f"unknown model type in file: {method}")


# ---------------------------------------------------------------------------
# Fitting
# ---------------------------------------------------------------------------

def _build_base(cfg, data: Dataset, rng):
    kind = _get(cfg, "base.kind", default="standard_normal")
    if kind == "standard_normal":
        return StandardNormal(data.dim)
    if kind == "diagonal_gaussian":
        mean = _get(cfg, "base.mean", default=None, cast=_floats)
        scales = _get(cfg, "base.scales", default=None, cast=_floats)
        mean = np.zeros(data.dim) if mean is None else np.asarray(mean)
        scales = np.ones(data.dim) if scales is None else np.asarray(scales)
        return DiagonalGaussian(mean, scales)
    if kind == "gmm":
        k = _get(cfg, "base.components", default=5, cast=int)
        restarts = _get(cfg, "base.restarts", default=10, cast=int)
        measure, _ = fit_gmm(data, k, restarts=restarts, rng=rng)
        return measure
    raise ConfigError(f"unknown base.kind: {kind}")


def _build_kernel(cfg, dim):
    amplitude = _get(cfg, "kernel.amplitude", default=1.0, cast=float)
    ls = _get(cfg, "kernel.lengthscales", default=None, cast=_floats)
    if ls is None:
        ls = [0.5] * dim
    if len(ls) == 1 and dim > 1:
        ls = ls * dim
    if len(ls) != dim:
        raise ConfigError("kernel.lengthscales length does not match data")
    return KernelParams.create(amplitude, ls)


def _density_grid(method, model, data: Dataset, rng, n_samples,
                  n_normalizer, resolution):
    """Posterior-mean density on a 1D/2D grid in the original space."""
    if data.dim > 2:
        return None
    w = data.whitening
    orig = data.points if w is None else w.invert(data.points)
    lo = orig.min(axis=0)
    hi = orig.max(axis=0)
    pad = 0.5 * (hi - lo + 1e-12)
    lo -= pad
    hi += pad
    if data.dim == 1:
        axes = [np.linspace(lo[0], hi[0], resolution)]
        grid = axes[0][:, None]
    else:
        res2 = min(resolution, 60)
        axes = [np.linspace(lo[i], hi[i], res2) for i in range(2)]
        xx, yy = np.meshgrid(axes[0], axes[1], indexing="ij")
        grid = np.column_stack([xx.ravel(), yy.ravel()])
    gridw = grid if w is None else w.apply(grid)
    log_jac = 0.0 if w is None else w.log_det
    if method in ("gibbs", "vb"):
        est = posterior_density_samples(
            model, gridw, rng, n_samples=n_samples,
            n_normalizer=n_normalizer, log_jacobian=log_jac,
        )
        values = est.mean_density()
    else:
        values = np.exp(model.logpdf(gridw) + log_jac)
    return {"axes": [a for a in axes], "values": values,
            "layout": "row-major"}


def cmd_fit(cfg, cfg_path):
    seed = resolve_seed(_get(cfg, "seed", cast=int))
    rng = np.random.default_rng(seed)
    method = _get(cfg, "method", required=True)
    data_path = _get(cfg, "data", required=True)
    out_path = _get(cfg, "out", default="fit.json")
    raw = ingest_csv(data_path)
    do_whiten = _get(cfg, "data.whiten", default=True, cast=bool)
    data = whiten(raw) if do_whiten else raw

    t0 = time.perf_counter()
    trace = {}
    if method == "gibbs":
        base = _build_base(cfg, data, rng)
        kernel = _build_kernel(cfg, data.dim)
        mu0 = _get(cfg, "mean", default=0.0, cast=float)
        gc = GibbsConfig(
            n_samples=_get(cfg, "gibbs.n_samples", default=5000, cast=int),
            burn_in=_get(cfg, "gibbs.burn_in", default=2000, cast=int),
            hyper_interval=_get(cfg, "gibbs.hyper_interval", default=10,
                                cast=int),
            mh_step=_get(cfg, "gibbs.mh_step", default=0.1, cast=float),
            sample_hyper=_get(cfg, "gibbs.sample_hyper", default=True,
                              cast=bool),
            memory_cap=_get(cfg, "gibbs.memory_cap", default=5000, cast=int),
        )
        model = run_chain(data, gc, kernel, mu0, base, rng)
        trace = {
            "lambda": [s.lam for s in model.snapshots],
            "latent_count": [len(s.latent_locations)
                             for s in model.snapshots],
            "mh_accept_rate": model.mh_accept_rate,
        }
    elif method == "vb":
        base = _build_base(cfg, data, rng)
        kernel = _build_kernel(cfg, data.dim)
        mu0 = _get(cfg, "mean", default=0.0, cast=float)
        vc = VBConfig(
            n_inducing=_get(cfg, "vb.inducing", default=200, cast=int),
            n_integration=_get(cfg, "vb.integration", default=5000,
                               cast=int),
            tol=_get(cfg, "vb.tol", default=1e-5, cast=float),
            max_iters=_get(cfg, "vb.max_iters", default=200, cast=int),
            adam_lr=_get(cfg, "vb.learning_rate", default=0.02, cast=float),
            hyper_update_interval=_get(cfg, "vb.hyper_interval", default=1,
                                       cast=int),
            update_hyper=_get(cfg, "vb.update_hyper", default=True,
                              cast=bool),
        )
        result = run_vb(data, vc, kernel, mu0, base, rng)
        model = result.state
        trace = {"elbo": result.elbo_trace, "converged": result.converged,
                 "iterations": result.iterations}
    elif method == "kde":
        grid = _get(cfg, "kde.bandwidth_grid", default=None, cast=_floats)
        folds = _get(cfg, "kde.folds", default=10, cast=int)
        model = fit_kde_cv(data, bandwidth_grid=grid, folds=folds, rng=rng)
        trace = {"bandwidth": model.bandwidth}
    elif method == "gmm":
        k_max = _get(cfg, "gmm.k_max", default=10, cast=int)
        folds = _get(cfg, "gmm.folds", default=10, cast=int)
        restarts = _get(cfg, "gmm.restarts", default=10, cast=int)
        model = fit_gmm_cv(data, k_grid=range(1, k_max + 1), folds=folds,
                           restarts=restarts, rng=rng)
        trace = {"n_components": model.n_components}
    else:
        raise ConfigError(f"unknown method: {method}")
    runtime = time.perf_counter() - t0

    grid_rng = np.random.default_rng(seed + 1_000_003)
    grid_samples = _get(cfg, "grid.samples", default=100, cast=int)
    grid_norm = _get(cfg, "grid.normalizer", default=2000, cast=int)
    resolution = _get(cfg, "grid.points", default=200, cast=int)
    density_grid = _density_grid(method, model, data, grid_rng,
                                 grid_samples, grid_norm, resolution)

    payload = {
        "meta": {"created": time.strftime("%Y-%m-%dT%H:%M:%S"),
                 "runtime_seconds": runtime},
        "config_echo": dict(cfg),
        "trace": trace,
        "model": serialize_model(method, model, data),
        "density_grid": density_grid,
        "metrics": {"n_train": data.n, "dim": data.dim, "seed": seed},
    }
    _dump_json(payload, out_path)
    print(f"fit written to {out_path} ({method}, N={data.n}, d={data.dim}, "
          f"{runtime:.2f}s)")
    return EXIT_OK


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------

def evaluate_model(method, model, whitening, test_points, seed,
                   n_samples=None, n_normalizer=5000):
    """l_test for a fitted model on test points in the original space."""
    rng = np.random.default_rng(seed)
    pts = test_points if whitening is None else whitening.apply(test_points)
    log_jac = 0.0 if whitening is None else whitening.log_det
    if method in ("gibbs", "vb"):
        est = posterior_density_samples(
            model, pts, rng, n_samples=n_samples,
            n_normalizer=n_normalizer, log_jacobian=log_jac,
        )
        ltest = log_expected_test_likelihood(est)
        return ltest, {"normalizer_rel_std_max": float(est.z_rel_std.max()),
                       "n_samples": est.n_samples}
    ltest = float(np.sum(model.logpdf(pts) + log_jac))
    return ltest, {}


def cmd_eval(args):
    with open(args.model, "r", encoding="utf-8") as fh:
        payload = json.load(fh)
    method, model, whitening = deserialize_model(payload["model"])
    test = ingest_csv(args.test)
    seed = resolve_seed(args.seed)
    try:
        ltest, stats = evaluate_model(
            method, model, whitening, test.points, seed,
            n_samples=args.samples, n_normalizer=args.normalizer,
        )
    except FlaggedEstimateError as err:
        print(f"flagged: {err}", file=sys.stderr)
        return EXIT_FLAGGED
    result = {"log_test_likelihood": ltest, "n_test": test.n,
              "seed": seed, **stats}
    print(json.dumps(result, default=_np))
    if args.out:
        _dump_json({"meta": {"created": time.strftime("%Y-%m-%dT%H:%M:%S")},
                    "metrics": result}, args.out)
    return EXIT_OK


# ---------------------------------------------------------------------------
# Generation
# ---------------------------------------------------------------------------

def circle_dataset(n, rng, radius=1.5, noise=0.2):
    """Points uniform on a circle plus isotropic Gaussian noise."""
    angles = rng.random(n) * 2.0 * np.pi
    pts = radius * np.column_stack([np.cos(angles), np.sin(angles)])
    return pts + noise * rng.standard_normal((n, 2))


def cmd_generate(args):
    if args.n < 1:
        raise ConfigError("n must be >= 1")
    seed = resolve_seed(args.seed)
    rng = np.random.default_rng(seed)
    if args.recipe == "circle":
        pts = circle_dataset(args.n, rng, radius=args.radius,
                             noise=args.noise)
        truth = {"recipe": "circle", "radius": args.radius,
                 "noise": args.noise, "n": args.n, "seed": seed}
    else:
        dim = args.dim
        ls = args.lengthscales or [0.5] * dim
        if len(ls) == 1 and dim > 1:
            ls = ls * dim
        kernel = KernelParams.create(args.amplitude, ls)
        base = StandardNormal(dim)
        data, gp = generate_dataset(kernel, args.mean, base, args.n, rng)
        pts = data.points
        truth = {
            "recipe": "gp-model", "kernel": kernel.as_vector(),
            "mu0": args.mean, "n": args.n, "seed": seed,
            "conditioning_points": gp.x, "conditioning_values": gp.g,
        }
    np.savetxt(args.out, pts, delimiter=",", fmt="%.17g")
    if args.truth:
        _dump_json(truth, args.truth)
    print(f"wrote {pts.shape[0]} x {pts.shape[1]} dataset to {args.out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# Comparison
# ---------------------------------------------------------------------------

def cmd_compare(args):
    if len(args.configs) < 2:
        raise ConfigError("compare needs at least 2 configs")
    test = ingest_csv(args.test)
    master_seed = resolve_seed(args.seed)
    results = []
    for i, cfg_path in enumerate(args.configs):
        cfg = parse_config(cfg_path)
        method = _get(cfg, "method", required=True)
        sub_seed = master_seed + 10_000 * (i + 1)
        cfg["seed"] = str(sub_seed)
        out_path = _get(cfg, "out", default=f"compare_fit_{i}.json")
        cfg["out"] = out_path
        t0 = time.perf_counter()
        try:
            cmd_fit(cfg, cfg_path)
            with open(out_path, "r", encoding="utf-8") as fh:
                payload = json.load(fh)
            method_l, model, whitening = deserialize_model(payload["model"])
            ltest, stats = evaluate_model(
                method_l, model, whitening, test.points, sub_seed + 1,
                n_samples=args.samples, n_normalizer=args.normalizer,
            )
            results.append(MethodResult(
                method=method, log_test_likelihood=ltest,
                runtime_seconds=time.perf_counter() - t0, extra=stats,
            ))
        except FlaggedEstimateError as err:
            results.append(MethodResult(
                method=method, log_test_likelihood=None,
                runtime_seconds=time.perf_counter() - t0,
                flags=[f"flagged: {err}"],
            ))
        except (ConfigError, CholeskyError, FloatingPointError,
                np.linalg.LinAlgError, AcceptanceStallError) as err:
            results.append(MethodResult(
                method=method, log_test_likelihood=None,
                runtime_seconds=time.perf_counter() - t0,
                flags=[f"failed: {err}"],
            ))
    report = compare_report(results)
    print(format_table(report))
    if args.out:
        _dump_json({"meta": {"created": time.strftime("%Y-%m-%dT%H:%M:%S")},
                    "report": report}, args.out)
    return EXIT_OK


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------

def build_parser():
    parser = argparse.ArgumentParser(
        prog="gpdense",
        description="GP density model: fitting, evaluation, generation",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_fit = sub.add_parser("fit", help="fit a model from a config file")
    p_fit.add_argument("config")

    p_eval = sub.add_parser("eval", help="expected test likelihood")
    p_eval.add_argument("model")
    p_eval.add_argument("test")
    p_eval.add_argument("--samples", type=int, default=None)
    p_eval.add_argument("--normalizer", type=int, default=5000)
    p_eval.add_argument("--seed", type=int, default=None)
    p_eval.add_argument("--out", default=None)

    p_gen = sub.add_parser("generate", help="sample a synthetic dataset")
    p_gen.add_argument("--n", type=int, required=True)
    p_gen.add_argument("--dim", type=int, default=1)
    p_gen.add_argument("--amplitude", type=float, default=1.0)
    p_gen.add_argument("--lengthscales", type=_floats, default=None)
    p_gen.add_argument("--mean", type=float, default=0.0)
    p_gen.add_argument("--recipe", choices=["gp-model", "circle"],
                       default="gp-model")
    p_gen.add_argument("--radius", type=float, default=1.5)
    p_gen.add_argument("--noise", type=float, default=0.2)
    p_gen.add_argument("--seed", type=int, default=None)
    p_gen.add_argument("--out", required=True)
    p_gen.add_argument("--truth", default=None)

    p_cmp = sub.add_parser("compare", help="run several methods on one "
                                           "test set")
    p_cmp.add_argument("configs", nargs="+")
    p_cmp.add_argument("--test", required=True)
    p_cmp.add_argument("--samples", type=int, default=None)
    p_cmp.add_argument("--normalizer", type=int, default=5000)
    p_cmp.add_argument("--seed", type=int, default=None)
    p_cmp.add_argument("--out", default=None)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as err:
        return EXIT_USAGE if err.code not in (0, None) else EXIT_OK
    try:
        if args.command == "fit":
            cfg = parse_config(args.config)
            return cmd_fit(cfg, args.config)
        if args.command == "eval":
            return cmd_eval(args)
        if args.command == "generate":
            return cmd_generate(args)
        if args.command == "compare":
            return cmd_compare(args)
        return EXIT_USAGE
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_USAGE
    except FlaggedEstimateError as err:
        print(f"flagged: {err}", file=sys.stderr)
        return EXIT_FLAGGED
    except (CholeskyError, FloatingPointError, np.linalg.LinAlgError,
            AcceptanceStallError) as err:
        print(f"numerical failure: {err}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
