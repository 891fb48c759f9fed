"""``snfgp`` command line: gen-data | train | sample | eval | infer.

Exit codes: 0 success, 2 input or configuration error, 3 numerical or
training failure. With ``--json-errors`` the error is also written to stderr
as one JSON object.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from pathlib import Path

import numpy as np

from .archive import load_model, save_model
from .config import RunConfig, apply_overrides, config_schema, load_config
from .data import default_synthetic_spec, generate_synthetic, read_dataset, split_dataset, write_dataset
from .errors import InputError, NumericalError, TrainingError
from .evaluate import evaluate_model
from .inverse import infer_mle
from .model import sample_conditional, train

EXIT_OK, EXIT_INPUT, EXIT_NUMERICAL = 0, 2, 3
SEED_ENV = "SNFGP_SEED"


def resolve_seed(flag, cfg: RunConfig) -> int:
    """``--seed`` wins, then the config file, then ``$SNFGP_SEED``, then 0."""
    if flag is not None:
        return flag
    if cfg.seed is not None:
        return cfg.seed
    env = os.environ.get(SEED_ENV)
    if env not in (None, ""):
        try:
            return int(env)
        except ValueError:
            raise InputError(f"{SEED_ENV} must be an integer, got {env!r}") from None
    return 0


def _need_file(path, what):
    p = Path(path)
    if not p.is_file():
        raise InputError(f"{what} not found: {p}")
    return p


def _out_path(path):
    p = Path(path)
    parent = p.parent if str(p.parent) else Path(".")
    if not parent.is_dir():
        raise InputError(f"output directory does not exist: {parent}")
    if not os.access(parent, os.W_OK):
        raise InputError(f"output directory is not writable: {parent}")
    if p.is_dir():
        raise InputError(f"output path is a directory: {p}")
    return p


def _sibling(path: Path, suffix: str) -> Path:
    return path.with_name(path.stem + suffix)


def _write_matrix(path, rows, header):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([format(v, ".17g") for v in row])


def read_spectrum(path, row: int = 0) -> np.ndarray:
    """One spectrum from a CSV of numbers; a non-numeric first line is taken as a header."""
    with open(path, newline="") as fh:
        lines = [r for r in csv.reader(fh) if r]
    if not lines:
        raise InputError(f"spectrum file is empty: {path}")
    try:
        [float(v) for v in lines[0]]
    except ValueError:
        lines = lines[1:]
    if len(lines) > 1 and all(len(r) == 1 for r in lines):
        lines = [[r[0] for r in lines]]  # one value per line
    if not 0 <= row < len(lines):
        raise InputError(f"row {row} out of range: {path} has {len(lines)} spectra")
    try:
        return np.array([float(v) for v in lines[row]])
    except ValueError as exc:
        raise InputError(f"{path}: row {row} is not numeric ({exc})") from None


def cmd_gen_data(args, cfg: RunConfig, seed: int):
    out = _out_path(args.out)
    cfg = apply_overrides(cfg, "data", n_materials=args.n_materials, P=args.P, noise_scale=args.noise_scale,
                          fractions=args.fractions)
    d = cfg.data
    spec = default_synthetic_spec(d.P, d.noise_scale, d.replicates_per_material, d.baseline)
    gen_ss, split_ss = np.random.SeedSequence(seed).spawn(2)
    ds = generate_synthetic(spec, d.n_materials, np.random.default_rng(gen_ss))
    ds = split_dataset(ds, d.fractions, d.extrap_train_cutoff, d.extrap_test_cutoff, np.random.default_rng(split_ss))
    write_dataset(ds, out)
    counts = ds.counts()
    print(f"{len(ds):,} spectra of {d.n_materials:,} materials, P={ds.P}, written to {out}")
    for name, (n_spec, n_mat) in counts.items():
        print(f"  {name:<12} {n_spec:>6,} spectra  {n_mat:>5,} materials")
    return EXIT_OK


def cmd_train(args, cfg: RunConfig, seed: int):
    data = _need_file(args.data, "data file")
    out = _out_path(args.out)
    trace_path = _out_path(args.trace if args.trace else _sibling(out, "_trace.csv"))
    cfg = apply_overrides(cfg, "train", K=args.k, batch_size=args.batch_size, learning_rate=args.lr,
                          epochs=args.epochs)
    if args.no_wall_time:
        cfg = apply_overrides(cfg, "train", record_wall_time=False)
    ds = read_dataset(data)
    tc = cfg.train.to_train_config(seed)
    timing = cfg.train.record_wall_time

    def progress(rec):
        if args.verbose:
            print(f"epoch {rec.epoch:4d}  train {rec.train_objective:.6g}  val {rec.val_objective:.6g}",
                  file=sys.stderr)

    try:
        model, trace = train(ds, tc, progress=progress)
    except TrainingError as exc:
        if exc.trace is not None:
            exc.trace.write_csv(trace_path, timing)
        raise
    save_model(model, out)
    trace.write_csv(trace_path, timing)
    objs = trace.train_objectives()
    if objs.size:
        print(f"trained K={tc.K} on {model.train_X.shape[0]} spectra for {tc.epochs} epochs: "
              f"objective {objs[0]:.6g} -> {objs[-1]:.6g} per spectrum")
    else:
        print(f"initialized K={tc.K} model on {model.train_X.shape[0]} spectra (0 epochs)")
    print(f"model: {out}\ntrace: {trace_path}")
    return EXIT_OK


def _parse_x(text: str, D: int) -> np.ndarray:
    try:
        x = np.array([float(v) for v in text.split(",")])
    except ValueError:
        raise InputError(f"--x must be comma-separated numbers, got {text!r}") from None
    if x.size != D:
        raise InputError(f"--x has {x.size} values, model expects D={D}")
    return x


def cmd_sample(args, cfg: RunConfig, seed: int):
    model_path = _need_file(args.model, "model file")
    out = _out_path(args.out)
    if args.n < 1:
        raise InputError("--n must be at least 1")
    model = load_model(model_path)
    x = _parse_x(args.x, model.D)
    if np.any((x < 0) | (x > 1)):
        print(f"warning: x={args.x} lies outside [0, 1]; extrapolating", file=sys.stderr)
    samples = sample_conditional(x, model, args.n, seed)
    _write_matrix(out, samples, [f"y_{p}" for p in range(model.P)])
    print(f"{args.n} samples at x={args.x} written to {out}")
    return EXIT_OK


def cmd_eval(args, cfg: RunConfig, seed: int):
    model_path = _need_file(args.model, "model file")
    data = _need_file(args.data, "data file")
    out = _out_path(args.out)
    summary = _out_path(_sibling(out, ".json"))
    cfg = apply_overrides(cfg, "eval", alpha=args.alpha, n_samples=args.n_samples)
    model = load_model(model_path)
    ds = read_dataset(data)
    report = evaluate_model(model, ds, cfg.eval.n_samples, cfg.eval.alpha, seed)
    report.write_csv(out)
    report.write_json(summary)
    if report.insufficient_samples:
        print(f"warning: {report.n_samples} samples per spectrum is below 20; quantiles are unstable",
              file=sys.stderr)
    for regime, agg in report.aggregates.items():
        cells = []
        for metric in ("rmse", "r2", "coverage"):
            m = agg[metric]
            cells.append(f"{metric} {m['mean']:.4g}" if m["mean"] is not None else f"{metric} n/a")
        print(f"{regime:<14} n={agg['n_spectra']:<4} " + "  ".join(cells))
    print(f"report: {out}\nsummary: {summary}")
    return EXIT_OK


def cmd_infer(args, cfg: RunConfig, seed: int):
    model_path = _need_file(args.model, "model file")
    spectrum = _need_file(args.spectrum, "spectrum file")
    out = _out_path(args.out)
    profile = _out_path(args.profile) if args.profile else _sibling(out, "_profile.csv")
    cfg = apply_overrides(cfg, "infer", grid_min=args.grid_min, grid_max=args.grid_max,
                          grid_points=args.grid_points, confidence=args.confidence)
    model = load_model(model_path)
    y = read_spectrum(spectrum, args.row)
    if y.size != model.P:
        raise InputError(f"spectrum has {y.size} values, model expects P={model.P}")
    res = infer_mle(y, model, cfg.infer.grid(), cfg.infer.confidence)
    res.write_json(out)
    res.write_profile_csv(profile)
    flag = " (clipped at grid bound)" if res.clipped else ""
    print(f"x_mle {res.x_mle[0]:.6g}  {100 * res.confidence:g}% interval "
          f"[{res.interval_low:.6g}, {res.interval_high:.6g}]{flag}")
    if res.extra_components:
        print(f"note: {res.extra_components} other grid region(s) pass the threshold")
    print(f"result: {out}\nprofile: {profile}")
    return EXIT_OK


def cmd_schema(args, cfg: RunConfig, seed: int):
    print(json.dumps(config_schema(), indent=2))
    return EXIT_OK


def _fractions(text):
    try:
        parts = tuple(float(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError("fractions must be three comma-separated numbers") from None
    if len(parts) != 3:
        raise argparse.ArgumentTypeError("fractions must be three comma-separated numbers")
    return parts


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="snfgp", description=__doc__.splitlines()[0])
    parser.add_argument("--config", help="JSON run configuration")
    parser.add_argument("--seed", type=int, help=f"random seed (fallback: config, then ${SEED_ENV}, then 0)")
    parser.add_argument("--json-errors", action="store_true", help="also report errors as JSON on stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic dataset")
    p.add_argument("--out", required=True, help="dataset CSV (layout goes to OUT.json)")
    p.add_argument("--n-materials", type=int)
    p.add_argument("--P", type=int)
    p.add_argument("--noise-scale", type=float)
    p.add_argument("--fractions", type=_fractions, help="train,val,test_interp shares")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="fit a model")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="model archive")
    p.add_argument("--trace", help="trace CSV (default: <out>_trace.csv)")
    p.add_argument("--k", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--no-wall-time", action="store_true", help="write wall_ms as 0 for reproducible traces")
    p.add_argument("--verbose", action="store_true", help="per-epoch progress on stderr")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sample", help="draw spectra conditional on an input")
    p.add_argument("--model", required=True)
    p.add_argument("--x", required=True, help="input value(s), comma-separated")
    p.add_argument("--n", type=int, default=50)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("eval", help="score test spectra")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--alpha", type=float)
    p.add_argument("--n-samples", type=int)
    p.add_argument("--out", required=True, help="per-spectrum CSV (aggregates go to the .json sibling)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("infer", help="infer the input of a spectrum")
    p.add_argument("--model", required=True)
    p.add_argument("--spectrum", required=True, help="CSV holding the spectrum")
    p.add_argument("--row", type=int, default=0, help="which spectrum in the file (default 0)")
    p.add_argument("--grid-min", type=float)
    p.add_argument("--grid-max", type=float)
    p.add_argument("--grid-points", type=int)
    p.add_argument("--confidence", type=float)
    p.add_argument("--out", required=True, help="result JSON")
    p.add_argument("--profile", help="profile CSV (default: <out>_profile.csv)")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("schema", help="print the config JSON schema")
    p.set_defaults(func=cmd_schema)
    return parser


def _fail(args, exc, code):
    print(f"error: {exc}", file=sys.stderr)
    if getattr(args, "json_errors", False):
        payload = {"error": type(exc).__name__, "message": str(exc), "exit_code": code}
        for attr in ("field", "epoch", "batch", "line"):
            if getattr(exc, attr, None) is not None:
                payload[attr] = getattr(exc, attr)
        if getattr(exc, "path", None) is not None:
            payload["path"] = str(exc.path)
        print(json.dumps(payload), file=sys.stderr)
    return code


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config)
        seed = resolve_seed(args.seed, cfg)
        return args.func(args, cfg, seed)
    except (InputError, OSError) as exc:
        return _fail(args, exc, EXIT_INPUT)
    except NumericalError as exc:
        return _fail(args, exc, EXIT_NUMERICAL)


if __name__ == "__main__":
    sys.exit(main())
