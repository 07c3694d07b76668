"""Command-line entry point: ``tailchains <subcommand> ...``."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .admissible import adjoint, is_admissible
from .config import bundled_config_path, load_config, resolve_model, validate_config
from .diagnostics import energy_test, ks_two_sample
from .errors import ConfigError, TailChainError
from .experiment import path_header, read_trajectory, run_experiment, window_header, write_trajectory
from .markov_engine import extract_windows, percentile_threshold, simulate
from .measures import AtomMeasure
from .models import model_from_dict
from .tailchain import default_battery, family_agrees, sample_bftc_parallel, timechange_family

FMT = "%.17g"


def _emit(text: str, out: str | None):
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def _csv(rows: np.ndarray, header: str) -> str:
    import io

    buf = io.StringIO()
    np.savetxt(buf, rows, fmt=FMT, delimiter=",", header=header, comments="")
    return buf.getvalue()


def _model(args) -> dict:
    ref = getattr(args, "spec_file", None) or args.model
    if ref is None:
        raise ConfigError("give --model (bundled name or JSON file) or --spec-file")
    model = dict(resolve_model(ref))
    if getattr(args, "alpha", None) is not None:
        model["alpha"] = args.alpha
    return model


def cmd_simulate(args) -> int:
    model = _model(args)
    spec = model_from_dict(model)
    traj = simulate(spec.model_spec(), args.n, args.burn_in, np.random.default_rng(args.seed))
    write_trajectory(Path(args.out), traj, args.seed, model)
    return 0


def cmd_windows(args) -> int:
    traj, _ = read_trajectory(args.input)
    x = percentile_threshold(traj, args.threshold_percentile)
    ws = extract_windows(traj, x, args.s, args.t)
    _emit(_csv(ws.to_rows(), window_header(traj.shape[1], args.s, args.t)), args.out)
    return 0


def cmd_adjoint(args) -> int:
    P = AtomMeasure.from_json(Path(args.input).read_text())
    report = is_admissible(P, args.alpha)
    doc = {"report": report.to_dict(), "adjoint": adjoint(P, args.alpha).to_dict() if report.admissible else None}
    _emit(json.dumps(doc, indent=2, sort_keys=True) + "\n", args.out)
    return 0 if report.admissible else 1


def cmd_bftc(args) -> int:
    spec = model_from_dict(_model(args))
    bftc = spec.bftc_spec()
    if not args.check_timechange:
        paths = sample_bftc_parallel(bftc, args.s, args.t, args.n, args.seed)
        _emit(_csv(paths.flat(), path_header(spec.d, args.s, args.t)), args.out)
        return 0
    battery = {f.name: f for f in default_battery()}
    f = battery[args.functional]
    paths = sample_bftc_parallel(bftc, args.s, args.t + args.s, args.n, args.seed)
    fam = timechange_family(f, bftc, args.s, args.t, args.n, paths=paths)
    text = "i,estimate,ci\n" + "".join(f"{m.i},{float(m.estimate)!r},{float(m.ci)!r}\n" for m in fam)
    _emit(text, args.out)
    return 0 if family_agrees(fam) else 1


def _load_sample(path: str) -> np.ndarray:
    p = Path(path)
    if p.suffix == ".bin":
        return read_trajectory(p)[0]
    return np.atleast_2d(np.loadtxt(p, delimiter=",", skiprows=1, ndmin=2))


def cmd_compare(args) -> int:
    X, Y = _load_sample(args.x), _load_sample(args.y)
    if args.columns:
        cols = [int(c) for c in args.columns.split(",")]
        X, Y = X[:, cols], Y[:, cols]
    if args.test == "ks":
        res = ks_two_sample(X[:, 0], Y[:, 0])
    else:
        res = energy_test(X, Y, n_perm=args.n_perm, stream=np.random.default_rng(args.seed))
    _emit(res.to_json(args.test, args.seed) + "\n", args.out)
    return 0


def cmd_run(args) -> int:
    path = Path(args.config)
    cfg = load_config(path if path.exists() else bundled_config_path(args.config))
    report = run_experiment(cfg, args.out_dir)
    sys.stdout.write((report.out_dir / "summary.txt").read_text())
    return 0 if report.ok else 1


def cmd_validate(args) -> int:
    problems = validate_config(args.config)
    for p in problems:
        print(p)
    return 1 if problems else 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="tailchains", description="Tail chains of heavy-tailed Markov models.")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="simulate a model trajectory")
    p.add_argument("--model", help="bundled config name or model JSON file")
    p.add_argument("--spec-file", help="model JSON file")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--burn-in", type=int, default=None)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True, help="binary output; sidecar written to <out>.json")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("windows", help="extract extreme windows from a trajectory")
    p.add_argument("--input", required=True, help="trajectory written by simulate")
    p.add_argument("--threshold-percentile", type=float, required=True)
    p.add_argument("-s", type=int, default=1)
    p.add_argument("-t", type=int, default=1)
    p.add_argument("--out")
    p.set_defaults(func=cmd_windows)

    p = sub.add_parser("adjoint", help="adjoint of an atomic measure")
    p.add_argument("input", help="AtomMeasure JSON file")
    p.add_argument("--alpha", type=float, required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_adjoint)

    p = sub.add_parser("bftc", help="sample a back-and-forth tail chain")
    p.add_argument("--model", help="bundled config name or model JSON file")
    p.add_argument("--spec-file")
    p.add_argument("--alpha", type=float, default=None)
    p.add_argument("-s", type=int, default=1)
    p.add_argument("-t", type=int, default=1)
    p.add_argument("-n", type=int, default=10_000)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--check-timechange", action="store_true")
    p.add_argument("--functional", default="nonzero_start", choices=[f.name for f in default_battery()])
    p.add_argument("--out")
    p.set_defaults(func=cmd_bftc)

    p = sub.add_parser("compare", help="two-sample test between CSV or trajectory files")
    p.add_argument("x")
    p.add_argument("y")
    p.add_argument("--test", choices=["energy", "ks"], default="energy")
    p.add_argument("--columns", help="comma-separated column indices")
    p.add_argument("--n-perm", type=int, default=999)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("run", help="run a full experiment from a config")
    p.add_argument("config", help="config file or bundled config name")
    p.add_argument("--out-dir")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("validate", help="validate an experiment config")
    p.add_argument("config")
    p.set_defaults(func=cmd_validate)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except TailChainError as exc:
        print(f"error [{exc.module}]: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error [io]: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
