"""End-to-end experiment: simulate, extract windows, sample the BFTC, compare.

All randomness flows from ``config.seed``: the master seed is split into
named child streams in a fixed order (see :data:`STREAMS`), so reruns produce
byte-identical data files. Only ``summary.txt`` carries a timestamp.
"""

from __future__ import annotations

import datetime as _dt
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import ExperimentConfig
from .diagnostics import binomial_ci, energy_test, ks_one_sample
from .markov_engine import extract_windows, hill_alpha, norms, percentile_threshold, simulate, stationarity_check
from .models import (
    Ar1Spec,
    KestenOrthogonalSpec,
    ar1_backward_zero_prob,
    ar1_tail_decomposition,
    kesten_backward_increment,
    kesten_spectral_fixedpoint_gap,
    model_from_dict,
)
from .tailchain import default_battery, family_agrees, sample_bftc_parallel, timechange_family

STREAMS = ("simulate", "bftc", "windows", "tests", "model")
FMT = "%.17g"


@dataclass
class Check:
    name: str
    value: float
    p_value: float | None = None
    gated: bool = False
    passed: bool = True
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "value": self.value,
            "p_value": self.p_value,
            "gated": self.gated,
            "passed": self.passed,
            **self.extra,
        }


@dataclass
class Report:
    out_dir: Path
    checks: list[Check]
    files: list[str]

    @property
    def ok(self) -> bool:
        return all(c.passed for c in self.checks if c.gated)


def write_trajectory(path: Path, traj: np.ndarray, seed, model: dict) -> Path:
    """Little-endian float64 matrix plus a ``.json`` sidecar ``{d, n, seed, model}``."""
    path = Path(path)
    np.ascontiguousarray(traj, dtype="<f8").tofile(path)
    side = path.with_name(path.name + ".json")
    side.write_text(json.dumps({"d": int(traj.shape[1]), "n": int(traj.shape[0]), "seed": seed, "model": model},
                               sort_keys=True, indent=2) + "\n")
    return side


def read_trajectory(path) -> tuple[np.ndarray, dict]:
    path = Path(path)
    meta = json.loads(path.with_name(path.name + ".json").read_text())
    data = np.fromfile(path, dtype="<f8").reshape(meta["n"], meta["d"])
    return data, meta


def window_header(d: int, s: int, t: int) -> str:
    cols = ["y"] + [f"x{k:+d}_{j}" for k in range(-s, t + 1) for j in range(d)]
    return ",".join(cols)


def path_header(d: int, s: int, t: int) -> str:
    return ",".join(f"m{k:+d}_{j}" for k in range(-s, t + 1) for j in range(d))


def _save_csv(path: Path, rows: np.ndarray, header: str):
    np.savetxt(path, rows, fmt=FMT, delimiter=",", header=header, comments="")


def run_experiment(config: ExperimentConfig, out_dir=None, workers: int | None = None) -> Report:
    out = Path(out_dir or config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    seeds = dict(zip(STREAMS, np.random.SeedSequence(config.seed).spawn(len(STREAMS))))
    spec = model_from_dict(config.model)
    model = spec.model_spec()
    s, t, lvl = config.s, config.t, config.gate_level
    checks: list[Check] = []
    files: list[str] = []

    # (a) simulation
    traj = simulate(model, config.n, config.burn_in, np.random.default_rng(seeds["simulate"]))
    write_trajectory(out / "simulation.bin", traj, config.seed, config.model)
    files += ["simulation.bin", "simulation.bin.json"]
    r = norms(traj)
    k = max(10, min(2000, config.n // 500))
    checks.append(Check("hill_alpha", hill_alpha(r, k), extra={"k": k, "alpha": spec.alpha}))
    stat = stationarity_check(traj)
    checks.append(Check("stationarity_gap", stat["max_relative_gap"], passed=stat["ok"]))

    # (c) BFTC sample
    bftc = spec.bftc_spec()
    paths = sample_bftc_parallel(bftc, s, t, config.bftc_n, seeds["bftc"], workers)
    _save_csv(out / "bftc_paths.csv", paths.flat(), path_header(spec.d, s, t))
    files.append("bftc_paths.csv")

    # (b) windows and (d) comparison against the BFTC law
    win_rng = np.random.default_rng(seeds["windows"])
    test_seeds = seeds["tests"].spawn(len(config.thresholds) + 1)
    top = max(config.thresholds)
    for q, ts in zip(config.thresholds, test_seeds):
        x = percentile_threshold(traj, q)
        ws = extract_windows(traj, x, s, t)
        fname = f"windows_p{q:g}.csv"
        _save_csv(out / fname, ws.to_rows(), window_header(spec.d, s, t))
        files.append(fname)
        m = min(len(ws), config.windows_per_threshold)
        pick = np.sort(win_rng.choice(len(ws), m, replace=False))
        emp = ws.normalized[pick].reshape(m, -1)
        ref = paths.flat()[:m]
        res = energy_test(emp, ref, n_perm=config.n_perm, stream=np.random.default_rng(ts), n_projections=16)
        checks.append(Check(f"windows_vs_bftc_p{q:g}", res.statistic, res.p_value, gated=(q == top),
                            passed=res.p_value >= lvl, extra={"n1": res.n1, "n2": res.n2, "threshold": x}))

    # time-change family
    tc_rng = np.random.default_rng(test_seeds[-1])
    tc_paths = sample_bftc_parallel(bftc, s, t + s, config.bftc_n, tc_rng.integers(2**63), workers)
    for f in default_battery():
        fam = timechange_family(f, bftc, s, t, config.bftc_n, paths=tc_paths)
        spread = max(m.estimate for m in fam) - min(m.estimate for m in fam)
        checks.append(Check(f"timechange_{f.name}", spread, gated=True, passed=family_agrees(fam),
                            extra={"estimates": [m.estimate for m in fam], "ci": [m.ci for m in fam]}))

    # model-specific closed forms
    mrng = np.random.default_rng(seeds["model"])
    if isinstance(spec, Ar1Spec):
        dec = ar1_tail_decomposition(spec)
        exact = None
        if bftc.is_atomic:
            law = bftc.m0_law
            exact = float(sum(w * ar1_backward_zero_prob(spec, dec, u) for u, w in zip(law.points, law.weights)))
        zeros = int(np.sum(~np.any(paths.at(-1) != 0, axis=1))) if s >= 1 else 0
        lo, hi = binomial_ci(zeros, len(paths), 0.99)
        checks.append(Check("backward_extinction", zeros / len(paths), gated=exact is not None,
                            passed=exact is None or lo <= exact <= hi,
                            extra={"closed_form": exact, "ci": [lo, hi], "p0": float(dec.p[0])}))
    elif isinstance(spec, KestenOrthogonalSpec):
        back = kesten_backward_increment(spec)
        sample = back.radial.sample(100_000, mrng)
        ks = ks_one_sample(sample, back.radial.cdf)
        checks.append(Check("rstar_ks", ks.statistic, ks.p_value, gated=True, passed=ks.p_value >= lvl,
                            extra={"integral": back.radial.integral}))
        gap = kesten_spectral_fixedpoint_gap(spec, 100_000, mrng)
        checks.append(Check("spectral_fixedpoint_gap", gap.gap, extra={"ci": gap.ci}))

    report = Report(out, checks, files)
    diag = {"config": config.raw, "checks": [c.to_dict() for c in checks], "ok": report.ok}
    (out / "diagnostics.json").write_text(json.dumps(diag, sort_keys=True, indent=2) + "\n")
    files.append("diagnostics.json")
    (out / "summary.txt").write_text(summary_table(report, config))
    files.append("summary.txt")
    return report


def summary_table(report: Report, config: ExperimentConfig) -> str:
    stamp = _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")
    lines = [f"experiment {config.name}  seed {config.seed}  generated {stamp}", ""]
    lines.append(f"{'check':<32}{'value':>14}{'p-value':>12}  {'gated':<6}{'result':<6}")
    for c in report.checks:
        p = "" if c.p_value is None else f"{c.p_value:.4g}"
        lines.append(f"{c.name:<32}{c.value:>14.6g}{p:>12}  {'yes' if c.gated else 'no':<6}"
                     f"{'pass' if c.passed else 'FAIL':<6}")
        if c.name == "backward_extinction" and c.extra.get("closed_form") is not None:
            lines.append(f"{'  closed form':<32}{c.extra['closed_form']:>14.6g}")
    lines += ["", f"overall: {'PASS' if report.ok else 'FAIL'}", ""]
    return "\n".join(lines)
