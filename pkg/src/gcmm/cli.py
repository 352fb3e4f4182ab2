"""Command-line interface: ``gcmm <subcommand> ...``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .data import (
    DataError,
    FitConfig,
    deserialize_gmm,
    deserialize_model,
    load_sync_csv,
    load_unsync_dir,
    serialize_gmm,
    serialize_model,
    write_sync_csv,
    SyncDataset,
    UnsyncDataset,
)
from .em import NumericalError, fit
from .evaluation import aic, gcmm_aic, ks_two_sample, sample_gcmm, select_k, sum_dimension
from .experiment import BenchmarkSizes, GeneratorSpec, export_plot_data, run_benchmark
from .gmm import fit_gmm, sample_gmm

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _threads(args) -> int:
    if args.threads is not None:
        return max(1, args.threads)
    env = os.environ.get("GCMM_THREADS")
    try:
        return max(1, int(env)) if env else 1
    except ValueError:
        raise UsageError(f"GCMM_THREADS must be an integer, got {env!r}") from None


def _config(args, **overrides) -> FitConfig:
    kw = {"seed": args.seed}
    for name in ("tol", "max_iters", "ridge", "weight_floor"):
        v = getattr(args, name, None)
        if v is not None:
            kw[name] = v
    kw.update(overrides)
    try:
        return FitConfig(**kw)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _emit(args, payload: dict, text: str):
    if args.json:
        print(json.dumps(payload, indent=1, sort_keys=True))
    else:
        print(text)


def _load_unsync(args, data: SyncDataset):
    if getattr(args, "unsync_dir", None):
        return load_unsync_dir(args.unsync_dir, data.dimension_names)
    return None


def _cmd_fit(args):
    data = load_sync_csv(args.data)
    unsync = _load_unsync(args, data)
    if args.use_unsync and unsync is None:
        raise UsageError("--use-unsync requires --unsync-dir")
    cfg = _config(args, K=args.k, use_unsync=args.use_unsync)
    model, trace = fit(data, unsync, cfg)
    Path(args.model_out).write_bytes(serialize_model(model))
    a = gcmm_aic(model, trace.final_log_likelihood, args.marginal_param_cost)
    payload = {
        "model": str(args.model_out), "K": model.K, "D": model.D,
        "weights": [float(w) for w in model.weights],
        "log_likelihood": trace.final_log_likelihood, "aic": a.aic,
        "iterations": trace.iterations_run, "converged": trace.converged,
        "log_likelihood_trace": trace.log_likelihoods,
    }
    text = (f"GCMM K={model.K} D={model.D}  log-likelihood {trace.final_log_likelihood:.6f}  "
            f"AIC {a.aic:.6f}\niterations {trace.iterations_run} converged {trace.converged}\n"
            f"weights {' '.join(f'{w:.6f}' for w in model.weights)}\nmodel written to {args.model_out}")
    _emit(args, payload, text)


def _cmd_fit_gmm(args):
    data = load_sync_csv(args.data)
    cfg = _config(args, K=args.k)
    model, trace = fit_gmm(data, cfg)
    Path(args.model_out).write_bytes(serialize_gmm(model))
    a = aic(trace.final_log_likelihood, model.K, model.D, "gmm")
    payload = {
        "model": str(args.model_out), "K": model.K, "D": model.D,
        "weights": [float(w) for w in model.weights],
        "log_likelihood": trace.final_log_likelihood, "aic": a.aic,
        "iterations": trace.iterations_run, "converged": trace.converged,
    }
    text = (f"GMM K={model.K} D={model.D}  log-likelihood {trace.final_log_likelihood:.6f}  "
            f"AIC {a.aic:.6f}\niterations {trace.iterations_run} converged {trace.converged}\n"
            f"model written to {args.model_out}")
    _emit(args, payload, text)


def _parse_cost(text):
    if text == "edf":
        return "edf"
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError("expected a number or 'edf'") from None
    if v < 0:
        raise argparse.ArgumentTypeError("marginal parameter cost must be nonnegative")
    return v


def _cmd_select_k(args):
    data = load_sync_csv(args.data)
    unsync = _load_unsync(args, data)
    if args.k_min < 1 or args.k_max < args.k_min:
        raise UsageError("need 1 <= --k-min <= --k-max")
    cfg = _config(args, use_unsync=bool(args.use_unsync))
    if args.use_unsync and unsync is None:
        raise UsageError("--use-unsync requires --unsync-dir")
    res = select_k(data, unsync if args.use_unsync else None, range(args.k_min, args.k_max + 1),
                   cfg, model_kind=args.model_kind, marginal_param_cost=args.marginal_param_cost,
                   threads=_threads(args))
    _emit(args, res.to_dict(), res.to_text())


def _load_any_model(path):
    raw = Path(path).read_bytes()
    try:
        schema = json.loads(raw).get("schema")
    except (json.JSONDecodeError, AttributeError):
        raise DataError(f"{path}: not a model JSON document") from None
    if schema == "gmm-v1":
        return "gmm", deserialize_gmm(raw)
    return "gcmm", deserialize_model(raw)


def _cmd_sample(args):
    if args.n < 2:
        raise UsageError("--n must be at least 2")
    kind, model = _load_any_model(args.model)
    rng = np.random.default_rng(args.seed)
    names = tuple(args.names.split(",")) if args.names else ()
    if kind == "gmm":
        draws = SyncDataset(sample_gmm(model, rng, args.n), names)
    else:
        draws = sample_gcmm(model, args.n, rng, names)
    write_sync_csv(args.out, draws)
    _emit(args, {"out": str(args.out), "n": draws.N, "D": draws.D, "model_kind": kind},
          f"wrote {draws.N} x {draws.D} samples to {args.out}")


def _ks_column(path, column):
    data = load_sync_csv(path)
    if column is not None:
        if column not in data.dimension_names:
            raise DataError(f"{path}: no column named {column!r}")
        return data.values[:, data.dimension_names.index(column)]
    if data.D == 1:
        return data.values[:, 0]
    return sum_dimension(data)


def _cmd_ks(args):
    a = _ks_column(args.a, args.column)
    b = _ks_column(args.b, args.column)
    try:
        res = ks_two_sample(a, b)
    except ValueError as exc:
        raise DataError(str(exc)) from None
    _emit(args, {"statistic": res.statistic, "p_value": res.p_value, "n1": res.n1, "n2": res.n2},
          f"statistic {res.statistic:.6g}\np {res.p_value:.6g}\nn1 {res.n1} n2 {res.n2}")


def _parse_seeds(text):
    text = text.strip()
    try:
        if "," in text:
            return [int(s) for s in text.split(",") if s.strip()]
        if "-" in text:
            lo, hi = text.split("-", 1)
            return list(range(int(lo), int(hi) + 1))
        return list(range(int(text)))
    except ValueError:
        raise argparse.ArgumentTypeError("seeds: a count, a range a-b, or a comma list") from None


def _cmd_benchmark(args):
    if args.spec:
        try:
            spec = GeneratorSpec.from_dict(json.loads(Path(args.spec).read_text()))
        except (KeyError, TypeError, ValueError) as exc:
            raise DataError(f"invalid generator spec: {exc}") from None
    else:
        spec = GeneratorSpec.default()
    base = BenchmarkSizes.large() if args.large else BenchmarkSizes()
    given = {f: getattr(args, f) for f in ("n_train", "keep_fraction", "n_resample", "n_holdout")
             if getattr(args, f) is not None}
    try:
        sizes = replace(base, **given)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    cfg = _config(args)
    report = run_benchmark(spec, args.seeds, cfg, sizes, k=args.k,
                           k_range=range(args.k_min, args.k_max + 1),
                           marginal_param_cost=args.marginal_param_cost, threads=_threads(args))
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.json").write_text(report.to_json() + "\n")
        (out / "report.txt").write_text(report.to_text() + "\n")
        (out / "spec.json").write_text(json.dumps(spec.to_dict(), indent=1) + "\n")
    _emit(args, report.to_dict(), report.to_text())


def _cmd_export_plots(args):
    kind, model = _load_any_model(args.model)
    if kind != "gcmm":
        raise DataError("export-plots needs a GCMM model")
    data = load_sync_csv(args.data)
    if data.D != model.D:
        raise DataError(f"model has D={model.D}, data has D={data.D}")
    paths = export_plot_data(model, data, args.out_dir, np.random.default_rng(args.seed),
                             n_sample=args.n_sample, bins=args.bins)
    _emit(args, {"files": [str(p) for p in paths]}, "\n".join(str(p) for p in paths))


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--seed", type=int, default=0, help="random seed (default 0)")
    common.add_argument("--json", action="store_true", help="machine-readable JSON on stdout")
    common.add_argument("--threads", type=int, default=None,
                        help="worker cap (falls back to GCMM_THREADS, then 1)")

    fitopts = _Parser(add_help=False)
    fitopts.add_argument("--tol", type=float, default=None)
    fitopts.add_argument("--max-iters", dest="max_iters", type=int, default=None)
    fitopts.add_argument("--ridge", type=float, default=None)
    fitopts.add_argument("--weight-floor", dest="weight_floor", type=float, default=None)

    p = _Parser(prog="gcmm", description="Gaussian copula mixture models")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("fit", parents=[common, fitopts], help="fit a GCMM")
    s.add_argument("--data", required=True)
    s.add_argument("--unsync-dir", default=None, help="directory of <dimension>.csv files")
    s.add_argument("--k", type=int, required=True)
    s.add_argument("--model-out", required=True)
    s.add_argument("--use-unsync", action="store_true")
    s.add_argument("--marginal-param-cost", type=_parse_cost, default="edf",
                   help="parameters charged per marginal in the reported AIC")
    s.set_defaults(func=_cmd_fit)

    s = sub.add_parser("fit-gmm", parents=[common, fitopts], help="fit the GMM baseline")
    s.add_argument("--data", required=True)
    s.add_argument("--k", type=int, required=True)
    s.add_argument("--model-out", required=True)
    s.set_defaults(func=_cmd_fit_gmm)

    s = sub.add_parser("select-k", parents=[common, fitopts], help="AIC table over a K range")
    s.add_argument("--data", required=True)
    s.add_argument("--unsync-dir", default=None)
    s.add_argument("--use-unsync", action="store_true")
    s.add_argument("--k-min", type=int, default=1)
    s.add_argument("--k-max", type=int, default=6)
    s.add_argument("--model-kind", choices=("gcmm", "gmm"), default="gcmm")
    s.add_argument("--marginal-param-cost", type=_parse_cost, default="edf",
                   help="parameters charged per GCMM marginal: a number or 'edf' (default)")
    s.set_defaults(func=_cmd_select_k)

    s = sub.add_parser("sample", parents=[common], help="draw samples from a model")
    s.add_argument("--model", required=True)
    s.add_argument("--n", type=int, required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--names", default=None, help="comma-separated column names")
    s.set_defaults(func=_cmd_sample)

    s = sub.add_parser("ks", parents=[common], help="two-sample KS test")
    s.add_argument("--a", required=True)
    s.add_argument("--b", required=True)
    s.add_argument("--column", default=None,
                   help="column to compare (default: the only column, else the row sum)")
    s.set_defaults(func=_cmd_ks)

    s = sub.add_parser("benchmark", parents=[common, fitopts], help="simulation benchmark")
    s.add_argument("--spec", default=None, help="generator spec JSON (default: built-in)")
    s.add_argument("--seeds", type=_parse_seeds, default=list(range(20)))
    s.add_argument("--out", default=None, help="output directory")
    s.add_argument("--k", type=int, default=None, help="fixed K (default: AIC selection)")
    s.add_argument("--k-min", type=int, default=1)
    s.add_argument("--k-max", type=int, default=6)
    s.add_argument("--large", action="store_true",
                   help="20000-point training, resample and holdout sets instead of 3000/1000/1000")
    s.add_argument("--n-train", type=int, default=None)
    s.add_argument("--keep-fraction", type=float, default=None)
    s.add_argument("--n-resample", type=int, default=None)
    s.add_argument("--n-holdout", type=int, default=None)
    s.add_argument("--marginal-param-cost", type=_parse_cost, default="edf")
    s.set_defaults(func=_cmd_benchmark)

    s = sub.add_parser("export-plots", parents=[common], help="histogram and QQ tables")
    s.add_argument("--model", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--out-dir", required=True)
    s.add_argument("--n-sample", type=int, default=10_000)
    s.add_argument("--bins", type=int, default=50)
    s.set_defaults(func=_cmd_export_plots)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        args.func(args)
    except UsageError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:
        # --help exits 0; anything else from argparse is a usage error
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    except (DataError, FileNotFoundError, IsADirectoryError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
