"""Batch front-end: generate data, run samplers, report KL against the oracle.

Subcommands
-----------
``gen``   writes a synthetic train/test split plus a metadata file.
``run``   runs one of the six samplers on a generated dataset and writes the
          thinned chain, a log-loss trace for classifiers, and a manifest with
          the fully resolved configuration (enough to reproduce the run
          byte-for-byte).
``kl``    moment-matches a gaussian-model chain and prints its KL divergence
          to the analytic posterior, with the run's wall clock from the
          manifest.

Exit codes: 0 success, 2 configuration error, 3 numerical divergence,
4 I/O or file-format error.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .data import Dataset, Rng, load_csv_columns, save_csv_columns
from .diagnostics import RunningMean, log_loss_binary, log_loss_multiclass, moment_match, kl_diag_gaussian
from .errors import (
    ConfigError,
    CsvFormatError,
    DegenerateChain,
    DomainError,
    GradmcError,
    NumericalDivergence,
    ShapeError,
    UnknownVariable,
    UnsupportedForKL,
)
from .models import FAMILIES, gaussian_posterior, nn_forward, gen_synth
from .samplers import SamplerConfig, run_chain

TEST_FUNCTIONS = ("full-chain", "log-loss", "running-mean")


# ---------------------------------------------------------------------------
# gen
# ---------------------------------------------------------------------------

def _hyper_from_args(family_name, args) -> dict:
    hyper = dict(FAMILIES[family_name].hyper_defaults)
    overrides = {
        "d": args.d,
        "hidden": args.hidden,
        "classes": args.classes,
        "input_dim": args.d if family_name == "bayes_nn" else None,
        "prior_variance": args.prior_variance,
    }
    for key, value in overrides.items():
        if key in hyper and value is not None:
            hyper[key] = value
    return hyper


def cmd_gen(args) -> int:
    if args.model not in FAMILIES:
        raise ConfigError(f"unknown model {args.model!r}; choose from {sorted(FAMILIES)}")
    hyper = _hyper_from_args(args.model, args)
    n_test = args.n_test if args.n_test is not None else max(2, args.n // 5)
    generated = gen_synth(args.model, args.n, Rng(args.seed), n_test=n_test, **hyper)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_csv_columns(out / "train.csv", dict(generated.train.entries))
    save_csv_columns(out / "test.csv", dict(generated.test.entries))
    meta = {
        "model": args.model,
        "n": args.n,
        "n_test": n_test,
        "seed": args.seed,
        "hyper": hyper,
        "true_params": generated.true_params,
    }
    with open(out / "meta.json", "w") as handle:
        json.dump(meta, handle, indent=2, sort_keys=True)
        handle.write("\n")
    print(f"wrote {out / 'train.csv'} ({generated.train.n} rows), "
          f"{out / 'test.csv'} ({generated.test.n} rows)")
    return 0


# ---------------------------------------------------------------------------
# run
# ---------------------------------------------------------------------------

def _load_meta(data_dir: Path) -> dict:
    meta_path = data_dir / "meta.json"
    if not meta_path.exists():
        raise ConfigError(f"no meta.json under {data_dir}")
    with open(meta_path) as handle:
        return json.load(handle)


def _parse_stepsize(entries) -> float | dict:
    if entries is None:
        raise ConfigError("--stepsize is required")
    scalars = []
    named = {}
    for entry in entries:
        for part in str(entry).split(","):
            part = part.strip()
            if not part:
                continue
            if "=" in part:
                name, _, value = part.partition("=")
                named[name.strip()] = float(value)
            else:
                scalars.append(float(part))
    if named and scalars:
        raise ConfigError("mix of scalar and per-parameter stepsizes")
    if named:
        return named
    if len(scalars) != 1:
        raise ConfigError("exactly one scalar stepsize expected")
    return scalars[0]


def _resolve_burnin(args_burnin, algorithm, n_iters) -> int:
    # Plain kernels discard an initial stretch; CV kernels replace burn-in
    # with the mode-search phase and keep the whole chain.
    if args_burnin is not None:
        burnin = int(args_burnin)
    elif algorithm.endswith("cv"):
        burnin = 0
    else:
        burnin = 10_000
    return min(max(burnin, 0), n_iters)


def _chain_layout(model):
    layout = []
    for name in model.param_names:
        size = int(np.prod(model.param_shapes[name])) if model.param_shapes[name] else 1
        layout.append((name, size))
    return layout


def _write_chain_csv(path, layout, start_params, samples, n_iters, burnin, thin):
    header = ["iter"]
    for name, size in layout:
        header.extend(f"{name}.{j}" for j in range(size))
    rows = [0] + [t for t in range(1, n_iters + 1) if t > burnin and t % thin == 0]
    with open(path, "w", newline="") as handle:
        handle.write("# parameter columns are row-major flattened: <name>.<flat-index>\n")
        handle.write(",".join(header) + "\n")
        for t in rows:
            fields = [str(t)]
            for name, size in layout:
                value = start_params[name] if t == 0 else samples[name][t - 1]
                fields.extend(f"{v:.17g}" for v in np.ravel(value))
            handle.write(",".join(fields) + "\n")


def _read_chain_csv(path):
    iters = []
    columns = None
    values = []
    with open(path) as handle:
        lineno = 0
        for line in handle:
            lineno += 1
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            fields = line.split(",")
            if columns is None:
                if fields[0] != "iter":
                    raise CsvFormatError(f"{path}:{lineno}: first column must be 'iter'")
                columns = fields[1:]
                continue
            if len(fields) != len(columns) + 1:
                raise CsvFormatError(
                    f"{path}:{lineno}: expected {len(columns) + 1} fields, got {len(fields)}"
                )
            try:
                iters.append(int(float(fields[0])))
                values.append([float(f) for f in fields[1:]])
            except ValueError as exc:
                raise CsvFormatError(f"{path}:{lineno}: {exc}") from None
    if columns is None:
        raise CsvFormatError(f"{path}:1: empty chain file")
    return np.asarray(iters), columns, np.asarray(values, dtype=np.float64)


def _log_loss_fn(meta, model, test: Dataset):
    kind = FAMILIES[meta["model"]].label_kind
    if kind == "binary":
        return lambda params: log_loss_binary(params["bias"], params["beta"], test["X"], test["y"])
    if kind == "multiclass":
        return lambda params: log_loss_multiclass(
            params, test["X"], test["y"], lambda p, x: nn_forward(model, p, x)
        )
    return None


def _run_one_chain(model, train, init_params, config, rng, test_function, log_loss):
    if test_function == "running-mean":
        return run_chain(model, train, init_params, config, hook=RunningMean(), rng=rng)
    if test_function == "log-loss":
        return run_chain(model, train, init_params, config, hook=log_loss, rng=rng)
    return run_chain(model, train, init_params, config, rng=rng)


def cmd_run(args) -> int:
    started = time.perf_counter()
    for field in ("data", "out", "algorithm"):
        if getattr(args, field) in (None, ""):
            raise ConfigError(f"--{field} is required (flag or config file)")
    data_dir = Path(args.data)
    meta = _load_meta(data_dir)
    family = FAMILIES[meta["model"]]
    model = family.build(**meta["hyper"])
    train = Dataset(load_csv_columns(data_dir / "train.csv"))
    test_path = data_dir / "test.csv"
    test = Dataset(load_csv_columns(test_path)) if test_path.exists() else None

    stepsize = _parse_stepsize(args.stepsize)
    config = SamplerConfig(
        algorithm=args.algorithm,
        stepsize=stepsize,
        minibatch_size=args.minibatch_size,
        n_iters=args.n_iters,
        seed=args.seed,
        friction=args.friction,
        diffusion=args.diffusion,
        trajectory_length=args.trajectory_length,
        opt_stepsize=args.opt_stepsize,
        opt_iters=args.opt_iters,
    )
    config.validate(model.param_names)
    burnin = _resolve_burnin(args.burnin, args.algorithm, args.n_iters)
    thin = int(args.thin)
    if thin < 1:
        raise ConfigError("thinning interval must be at least 1")
    if args.test_function not in TEST_FUNCTIONS:
        raise ConfigError(f"test function must be one of {TEST_FUNCTIONS}")
    n_chains = int(args.chains)
    if n_chains < 1:
        raise ConfigError("--chains must be at least 1")

    log_loss = _log_loss_fn(meta, model, test) if test is not None else None
    if args.test_function == "log-loss" and log_loss is None:
        raise ConfigError("log-loss test function needs a classification model and a test split")

    root = Rng(config.seed)
    init_params = family.init_params(model, root)
    chain_rngs = [root] if n_chains == 1 else root.spawn(n_chains)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    def run_one(rng):
        return _run_one_chain(model, train, init_params, config, rng, args.test_function, log_loss)

    if n_chains == 1:
        outputs = [run_one(chain_rngs[0])]
    else:
        with ThreadPoolExecutor(max_workers=n_chains) as pool:
            outputs = list(pool.map(run_one, chain_rngs))

    layout = _chain_layout(model)
    files = {}
    for i, output in enumerate(outputs):
        suffix = "" if n_chains == 1 else f".{i}"
        if args.test_function == "full-chain":
            chain_path = out / f"chain{suffix}.csv"
            _write_chain_csv(
                chain_path, layout, output.start_params, output.samples,
                config.n_iters, burnin, thin,
            )
            files[f"chain{suffix}"] = chain_path.name
            if log_loss is not None:
                trace_path = out / f"logloss{suffix}.csv"
                with open(trace_path, "w", newline="") as handle:
                    handle.write("iter,log_loss\n")
                    for t in [0] + [t for t in range(1, config.n_iters + 1) if t % thin == 0]:
                        params = (
                            output.start_params
                            if t == 0
                            else {name: output.samples[name][t - 1] for name, _ in layout}
                        )
                        handle.write(f"{t},{log_loss(params):.17g}\n")
                files[f"logloss{suffix}"] = trace_path.name
        elif args.test_function == "log-loss":
            trace_path = out / f"logloss{suffix}.csv"
            with open(trace_path, "w", newline="") as handle:
                handle.write("iter,log_loss\n")
                handle.write(f"0,{log_loss(output.start_params):.17g}\n")
                for t in range(1, config.n_iters + 1):
                    if t % thin == 0:
                        handle.write(f"{t},{output.hook_values[t - 1]:.17g}\n")
            files[f"logloss{suffix}"] = trace_path.name
        else:  # running-mean
            mean_path = out / f"running_mean{suffix}.csv"
            header = ["iter"]
            for name, size in layout:
                header.extend(f"{name}.{j}" for j in range(size))
            rows = [t for t in range(1, config.n_iters + 1) if t % thin == 0]
            if config.n_iters >= 1 and config.n_iters not in rows:
                rows.append(config.n_iters)
            with open(mean_path, "w", newline="") as handle:
                handle.write("# running posterior means; columns <name>.<flat-index>\n")
                handle.write(",".join(header) + "\n")
                for t in rows:
                    means = output.hook_values[t - 1]
                    fields = [str(t)]
                    for name, _ in layout:
                        fields.extend(f"{v:.17g}" for v in np.ravel(means[name]))
                    handle.write(",".join(fields) + "\n")
            files[f"running_mean{suffix}"] = mean_path.name

    elapsed = time.perf_counter() - started
    manifest = {
        "command": "run",
        "package_version": __version__,
        "numpy_version": np.__version__,
        "data_dir": str(data_dir),
        "model": meta["model"],
        "hyper": meta["hyper"],
        "algorithm": config.algorithm,
        "stepsize": config.resolved_stepsizes(model.param_names),
        "minibatch_size": config.minibatch_size,
        "n_iters": config.n_iters,
        "burnin": burnin,
        "thin": thin,
        "seed": config.seed,
        "friction": config.friction,
        "diffusion": config.diffusion,
        "trajectory_length": config.trajectory_length,
        "opt_stepsize": config.opt_stepsize,
        "opt_iters": config.opt_iters,
        "test_function": args.test_function,
        "chains": n_chains,
        "elapsed_seconds": elapsed,
        "files": files,
    }
    with open(out / "manifest.json", "w") as handle:
        json.dump(manifest, handle, indent=2, sort_keys=True)
        handle.write("\n")
    print(f"completed {config.n_iters} iterations x {n_chains} chain(s) in {elapsed:.2f}s -> {out}")
    return 0


# ---------------------------------------------------------------------------
# kl
# ---------------------------------------------------------------------------

def cmd_kl(args) -> int:
    chain_path = Path(args.chain)
    data_dir = Path(args.data)
    meta = _load_meta(data_dir)
    if meta["model"] != "gaussian":
        raise UnsupportedForKL(
            f"KL reporting needs the gaussian model's analytic posterior, got {meta['model']!r}"
        )
    iters, columns, values = _read_chain_csv(chain_path)
    theta_cols = [i for i, c in enumerate(columns) if c.split(".")[0] == "theta"]
    if not theta_cols:
        raise CsvFormatError(f"{chain_path}: no theta columns found")
    keep = iters > 0
    draws = values[keep][:, theta_cols]
    if draws.shape[0] < 2:
        raise DomainError("need at least 2 post-initial chain rows for moment matching")
    fit = moment_match(draws)
    train = load_csv_columns(data_dir / "train.csv")
    posterior = gaussian_posterior(meta["hyper"]["prior_variance"], train["x"])
    kl = kl_diag_gaussian(fit, posterior)
    manifest_path = Path(args.manifest) if args.manifest else chain_path.parent / "manifest.json"
    wall = None
    if manifest_path.exists():
        with open(manifest_path) as handle:
            wall = json.load(handle).get("elapsed_seconds")
    line = f"kl={kl:.8g} n_draws={draws.shape[0]}"
    if wall is not None:
        line += f" wall_clock_seconds={wall:.4g}"
    print(line)
    return 0


# ---------------------------------------------------------------------------
# argument plumbing
# ---------------------------------------------------------------------------

def _load_config_file(path) -> dict:
    values = {}
    with open(path) as handle:
        for lineno, raw in enumerate(handle, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key = value")
            key, _, value = line.partition("=")
            values[key.strip().replace("-", "_")] = value.strip()
    return values


_FILE_KEY_TYPES = {
    "algorithm": str,
    "stepsize": lambda v: [v],
    "minibatch_size": float,
    "n_iters": int,
    "burnin": int,
    "seed": int,
    "friction": float,
    "diffusion": float,
    "trajectory_length": int,
    "opt_stepsize": float,
    "opt_iters": int,
    "test_function": str,
    "thin": int,
    "chains": int,
    "data": str,
    "out": str,
}


def build_parser() -> tuple[argparse.ArgumentParser, argparse.ArgumentParser]:
    parser = argparse.ArgumentParser(
        prog="gradmc",
        description="Minibatch-gradient MCMC: generate data, run chains, report KL.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen", help="generate a synthetic dataset")
    gen.add_argument("model", help=f"one of {sorted(FAMILIES)}")
    gen.add_argument("--n", type=int, required=True, help="training observations")
    gen.add_argument("--seed", type=int, default=1)
    gen.add_argument("--out", required=True, help="output directory")
    gen.add_argument("--n-test", type=int, default=None, help="held-out rows (default n/5)")
    gen.add_argument("--d", type=int, default=None, help="feature/input dimension")
    gen.add_argument("--hidden", type=int, default=None, help="hidden width (bayes_nn)")
    gen.add_argument("--classes", type=int, default=None, help="class count (bayes_nn)")
    gen.add_argument("--prior-variance", type=float, default=None)
    gen.set_defaults(func=cmd_gen)

    run = sub.add_parser("run", help="run a sampler on a generated dataset")
    run.add_argument("--config", default=None, help="key = value file; flags override it")
    run.add_argument("--data", help="directory produced by gen")
    run.add_argument("--out", help="output directory")
    run.add_argument("--algorithm", choices=("sgld", "sghmc", "sgnht", "sgldcv", "sghmccv", "sgnhtcv"))
    run.add_argument(
        "--stepsize",
        action="append",
        help="scalar, or repeated name=value entries for per-parameter stepsizes",
    )
    run.add_argument("--minibatch-size", type=float, default=0.01,
                     help="proportion below 1, absolute count at 1 or above")
    run.add_argument("--n-iters", type=int, default=10_000)
    run.add_argument("--burnin", type=int, default=None,
                     help="iterations discarded at write time (default 10000, 0 for cv kernels)")
    run.add_argument("--seed", type=int, default=1)
    run.add_argument("--friction", type=float, default=0.01, help="sghmc momentum decay")
    run.add_argument("--diffusion", type=float, default=0.01, help="sgnht noise scale")
    run.add_argument("--trajectory-length", type=int, default=5, help="sghmc inner updates")
    run.add_argument("--opt-stepsize", type=float, default=None, help="mode-search stepsize (cv)")
    run.add_argument("--opt-iters", type=int, default=None, help="mode-search iterations (cv)")
    run.add_argument("--test-function", choices=TEST_FUNCTIONS, default="full-chain")
    run.add_argument("--thin", type=int, default=10)
    run.add_argument("--chains", type=int, default=1, help="independent parallel chains")
    run.set_defaults(func=cmd_run)

    kl = sub.add_parser("kl", help="KL of a gaussian-model chain vs the analytic posterior")
    kl.add_argument("--chain", required=True, help="chain CSV from run")
    kl.add_argument("--data", required=True, help="directory produced by gen")
    kl.add_argument("--manifest", default=None, help="manifest path (default: next to chain)")
    kl.set_defaults(func=cmd_kl)
    return parser, run


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser, run_parser = build_parser()

    # A config file provides defaults; explicit flags override them.
    if argv[:1] == ["run"] and "--config" in argv:
        idx = argv.index("--config")
        try:
            path = argv[idx + 1]
        except IndexError:
            print("error: --config needs a path", file=sys.stderr)
            return 2
        try:
            raw = _load_config_file(path)
        except OSError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return 4
        except ConfigError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return 2
        defaults = {}
        for key, value in raw.items():
            if key not in _FILE_KEY_TYPES:
                print(f"error: unknown config key {key!r} in {path}", file=sys.stderr)
                return 2
            defaults[key] = _FILE_KEY_TYPES[key](value)
        run_parser.set_defaults(**defaults)

    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except NumericalDivergence as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except (OSError, CsvFormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4
    except (ConfigError, DomainError, ShapeError, UnknownVariable,
            UnsupportedForKL, DegenerateChain, GradmcError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
