"""Command-line experiment runner.

Verbs:

* ``run``     -- execute one experiment, write a metrics CSV and a manifest
* ``verify``  -- run the numerical property suites (estimators | potential |
  timing | all) and report measured vs expected values
* ``compare`` -- run several methods on the same seed/problem/budget and
  emit a comparison CSV aligned on simulated time

Configuration comes from a preset, an optional ``key=value`` config file,
and flags, in increasing priority.  Artifacts go to --out, or the directory
named by the ASYNCFL_ARTIFACTS environment variable, or the working
directory.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .errors import ConfigError
from .metrics import (
    check_potential_contraction,
    metrics_to_csv_text,
    potential,
    run_manifest,
)
from .problems import QuadraticProblem
from .reweighting import (
    DETERMINISTIC,
    MODES,
    STOCHASTIC,
    clipped_geometric,
    stopped_sum_mean_var,
    theorem_step_size,
)
from .rng import substream
from .simulate import (
    METHODS,
    ClockLedger,
    RunConfig,
    SpeedModel,
    round_duration,
    run_experiment,
)

PRESETS: dict[str, dict] = {
    "quadratic-smoke": dict(
        method="favano", n=10, s=3, max_steps=5, eta=0.05,
        problem="quadratic", dim=5, time_budget=700.0, rounds=None,
    ),
    "quadratic-bench": dict(
        method="favano", n=10, s=3, max_steps=2, eta=None,
        reweight=DETERMINISTIC, problem="quadratic", dim=5, noise_sigma=0.1,
        fast_fraction=1.0, rounds=2000, time_budget=None,
        step_count_mode="direct",
    ),
    "logistic-noniid": dict(
        method="favano", n=100, s=20, max_steps=20, eta=0.5,
        problem="logistic", dim=20, num_classes=10, examples_per_class=120,
        noise_sigma=3.0, fast_fraction=1.0 / 9.0, time_budget=500.0,
        rounds=None, split_mode="two-class-non-iid", eval_stride=10,
    ),
    "mnist-noniid-slowmajority": dict(
        method="favano", n=100, s=20, max_steps=20, eta=0.5,
        problem="mnist", fast_fraction=1.0 / 9.0, time_budget=5000.0,
        rounds=None, split_mode="two-class-non-iid", eval_stride=25,
    ),
}

_EXIT_OK = 0
_EXIT_FAIL = 1
_EXIT_CONFIG = 2


def parse_config_file(path) -> dict:
    """Line-delimited key=value text; '#' starts a comment."""
    values: dict[str, str] = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError("config-file", f"{path}:{lineno}: expected key=value")
        key, value = line.split("=", 1)
        values[key.strip()] = value.strip()
    return values


_FIELD_TYPES = {f.name: f.type for f in dataclasses.fields(RunConfig)}


def _coerce(name: str, raw: str):
    """Parse a raw config-file/flag string into the RunConfig field type."""
    if name not in _FIELD_TYPES:
        raise ConfigError(name, "unknown configuration key")
    if raw.lower() in ("none", ""):
        return None
    t = _FIELD_TYPES[name]
    if t in ("int", "int | None"):
        return int(raw)
    if t in ("float", "float | None"):
        return float(raw)
    if t == "bool":
        return raw.lower() in ("1", "true", "yes", "on")
    return raw


def build_config(preset: str | None, config_path, overrides: dict) -> RunConfig:
    """Merge preset, config file, and flag overrides into a RunConfig."""
    values: dict = {}
    if preset is not None:
        if preset not in PRESETS:
            raise ConfigError("preset", f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
        values.update(PRESETS[preset])
    if config_path is not None:
        for key, raw in parse_config_file(config_path).items():
            values[key] = _coerce(key, raw)
    values.update({k: v for k, v in overrides.items() if v is not None})
    has_eta = "eta" in values
    eta = values.pop("eta", None)
    config = RunConfig(**values)
    if has_eta:
        config.eta = resolve_step_size(config) if eta in (None, "auto") else float(eta)
    return config.validate()


def resolve_step_size(config: RunConfig) -> float:
    """Step size from the rate-bound constraint, for problems with known L."""
    if config.problem != "quadratic":
        raise ConfigError("eta", "automatic step size needs a quadratic problem")
    lam = 0.5 if config.fast_fraction >= 1.0 else 1.0 / 16.0
    dists = [clipped_geometric(lam, config.max_steps)]
    if 0.0 < config.fast_fraction < 1.0:
        dists.append(clipped_geometric(0.5, config.max_steps))
    return theorem_step_size(
        config.reweight, dists, config.max_steps, smoothness=1.0, s=config.s
    )


def artifact_dir(out: str | None) -> Path:
    base = out or os.environ.get("ASYNCFL_ARTIFACTS") or "."
    path = Path(base)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _write_run_artifacts(run, out_dir: Path, tag: str) -> Path:
    csv_path = out_dir / f"{tag}.csv"
    csv_path.write_text(metrics_to_csv_text(run.records))
    manifest_path = out_dir / f"{tag}.manifest.json"
    manifest_path.write_text(run_manifest(run.config, __version__))
    return csv_path


def cmd_run(args) -> int:
    overrides = _config_overrides(args)
    try:
        config = build_config(args.preset, args.config, overrides)
    except ConfigError as exc:
        print(f"config error [{exc.field}]: {exc.message}", file=sys.stderr)
        return _EXIT_CONFIG
    run = run_experiment(config)
    tag = args.tag or f"{args.preset or config.problem}-{config.method}-seed{config.seed}"
    csv_path = _write_run_artifacts(run, artifact_dir(args.out), tag)
    final = run.records[-1]
    summary = f"rounds={final.t} sim_time={final.sim_time:g} f_mu={final.f_mu:.6g}"
    if final.test_acc is not None:
        summary += f" test_acc={final.test_acc:.4f}"
    print(f"{csv_path}: {summary}")
    return _EXIT_OK


def cmd_compare(args) -> int:
    methods = args.methods
    if len(methods) < 2:
        print("compare needs at least two methods", file=sys.stderr)
        return _EXIT_CONFIG
    overrides = _config_overrides(args)
    runs = {}
    for method in methods:
        overrides["method"] = method
        try:
            config = build_config(args.preset, args.config, dict(overrides))
        except ConfigError as exc:
            print(f"config error [{exc.field}]: {exc.message}", file=sys.stderr)
            return _EXIT_CONFIG
        runs[method] = run_experiment(config)
    out_dir = artifact_dir(args.out)
    tag = args.tag or f"compare-{'-'.join(methods)}-seed{runs[methods[0]].config.seed}"
    path = out_dir / f"{tag}.csv"
    _write_comparison(path, runs)
    for method, run in runs.items():
        final = run.records[-1]
        acc = "" if final.test_acc is None else f" test_acc={final.test_acc:.4f}"
        print(f"{method}: rounds={final.t} f_mu={final.f_mu:.6g}{acc}")
    print(f"wrote {path}")
    return _EXIT_OK


def _write_comparison(path, runs: dict) -> None:
    """Aligned comparison: union of evaluation times, last value carried
    forward per method (methods advance the clock at different rates)."""
    grid = sorted({rec.sim_time for run in runs.values() for rec in run.records})
    fields = ("f_mu", "grad_norm_sq", "test_acc")
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        header = ["sim_time"]
        for method in runs:
            header.extend(f"{method}_{name}" for name in fields)
        writer.writerow(header)
        cursors = {m: 0 for m in runs}
        last = {m: None for m in runs}
        for t in grid:
            row = ["%.10g" % t]
            for method, run in runs.items():
                while (
                    cursors[method] < len(run.records)
                    and run.records[cursors[method]].sim_time <= t
                ):
                    last[method] = run.records[cursors[method]]
                    cursors[method] += 1
                rec = last[method]
                for name in fields:
                    value = None if rec is None else getattr(rec, name)
                    row.append("" if value is None else "%.10g" % value)
            writer.writerow(row)


class _Report:
    """Collects pass/fail lines for the verification suites."""

    def __init__(self):
        self.failures = 0

    def check(self, name: str, ok: bool, measured, expected) -> None:
        status = "PASS" if ok else "FAIL"
        if not ok:
            self.failures += 1
        print(f"[{status}] {name}: measured={measured} expected={expected}")


def _verify_estimators(report: _Report, seed: int) -> None:
    dist = clipped_geometric(1.0 / 16.0, 20)
    trials = 20000
    y_mean, y_var = 1.0, 4.0
    for mode in MODES:
        rng = substream(seed, "verify-est", mode)
        total = np.empty(trials)
        for j in range(trials):
            e = int(dist.sample(rng))
            y = rng.normal(y_mean, np.sqrt(y_var), size=e)
            if mode == STOCHASTIC:
                total[j] = 0.0 if e == 0 else y.sum() / (dist.p_pos * e)
            else:
                total[j] = y.sum() / dist.m1
        se = total.std(ddof=1) / np.sqrt(trials)
        measured = total.mean()
        report.check(
            f"estimator-mean-{mode}", abs(measured - y_mean) <= 4 * se,
            f"{measured:.4f} (se {se:.4f})", y_mean,
        )
    uniform = np.array([1 / 3, 1 / 3, 1 / 3])
    from .reweighting import StepCountDistribution

    d3 = StepCountDistribution(uniform)
    for mode, expected in ((DETERMINISTIC, 2.0 / 3.0), (STOCHASTIC, 0.5)):
        _, var = stopped_sum_mean_var(mode, d3, 1.0, 0.0)
        report.check(
            f"variance-uniform012-{mode}", abs(var - expected) < 1e-12, var, expected
        )


def _verify_potential(report: _Report, seed: int) -> None:
    report.check("potential-consensus", potential(np.ones(3), np.ones((4, 3))) == 0.0,
                 potential(np.ones(3), np.ones((4, 3))), 0.0)
    val = potential(np.array([0.0]), np.array([[2.0]]))
    report.check("potential-two-point", abs(val - 2.0) < 1e-14, val, 2.0)
    rng = substream(seed, "verify-pot")
    n, s, dim = 6, 2, 3
    problem = QuadraticProblem.heterogeneous(n, dim, rng, noise_sigma=0.1)
    dists = [clipped_geometric(0.5, 5) for _ in range(n)]
    server_w = rng.standard_normal(dim)
    client_ws = server_w + 0.3 * rng.standard_normal((n, dim))
    rep = check_potential_contraction(
        server_w, client_ws, dists, DETERMINISTIC, s, eta=1e-3,
        problem=problem, trials=10000, rng=rng,
    )
    report.check(
        "potential-contraction", rep.holds(3.0),
        f"{rep.lhs_mean:.6f} (se {rep.lhs_stderr:.6f})", f"<= {rep.rhs:.6f}",
    )


def _verify_timing(report: _Report, seed: int) -> None:
    ledger = ClockLedger()
    rng = substream(seed, "verify-time")
    favano = round_duration("favano", ledger, [], rng)
    report.check("favano-round-duration", favano == 7.0, favano, 7.0)
    quafl = round_duration("quafl", ledger, [], rng)
    report.check("quafl-round-duration", quafl == 7.0, quafl, 7.0)
    trials = 20000
    fast = SpeedModel.fast()
    durations = np.array(
        [round_duration("fedavg", ledger, [fast], rng, max_steps=20) for _ in range(trials)]
    )
    measured = durations.mean()
    report.check(
        "fedavg-all-fast-mean-duration", abs(measured - 43.0) / 43.0 < 0.02,
        f"{measured:.3f}", 43.0,
    )


def cmd_verify(args) -> int:
    suites = {
        "estimators": _verify_estimators,
        "potential": _verify_potential,
        "timing": _verify_timing,
    }
    if args.suite == "all":
        names = list(suites)
    elif args.suite in suites:
        names = [args.suite]
    else:
        print(f"unknown suite {args.suite!r}; choose from {sorted(suites)} or 'all'",
              file=sys.stderr)
        return _EXIT_CONFIG
    report = _Report()
    for name in names:
        suites[name](report, args.seed if args.seed is not None else 0)
    if report.failures:
        print(f"{report.failures} check(s) failed")
        return _EXIT_FAIL
    print("all checks passed")
    return _EXIT_OK


_CONFIG_FLAGS = [
    f.name for f in dataclasses.fields(RunConfig) if f.name not in ("method", "eta")
]


def _add_config_flags(parser: argparse.ArgumentParser, with_method: bool = True) -> None:
    if with_method:
        parser.add_argument("--method", choices=METHODS)
    parser.add_argument("--eta", help="step size, or 'auto' for the rate-bound value")
    for name in _CONFIG_FLAGS:
        parser.add_argument(f"--{name.replace('_', '-')}", dest=name, type=str)


def _config_overrides(args) -> dict:
    overrides = {}
    if getattr(args, "method", None) is not None:
        overrides["method"] = args.method
    if args.eta is not None:
        overrides["eta"] = args.eta if args.eta == "auto" else float(args.eta)
    for name in _CONFIG_FLAGS:
        raw = getattr(args, name, None)
        if raw is not None:
            overrides[name] = _coerce(name, raw)
    return overrides


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="asyncfl",
        description="Asynchronous federated learning simulator and verification suites.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute one experiment")
    p_run.add_argument("--preset", choices=sorted(PRESETS))
    p_run.add_argument("--config", help="key=value config file")
    p_run.add_argument("--out", help="artifact directory")
    p_run.add_argument("--tag", help="artifact base name")
    _add_config_flags(p_run)
    p_run.set_defaults(func=cmd_run)

    p_verify = sub.add_parser("verify", help="run numerical property suites")
    p_verify.add_argument("suite", nargs="?", default="all")
    p_verify.add_argument("--seed", type=int, default=0)
    p_verify.set_defaults(func=cmd_verify)

    p_cmp = sub.add_parser("compare", help="run several methods on one setup")
    p_cmp.add_argument("methods", nargs="+", choices=METHODS)
    p_cmp.add_argument("--preset", choices=sorted(PRESETS))
    p_cmp.add_argument("--config", help="key=value config file")
    p_cmp.add_argument("--out", help="artifact directory")
    p_cmp.add_argument("--tag", help="artifact base name")
    _add_config_flags(p_cmp, with_method=False)
    p_cmp.set_defaults(func=cmd_compare)
    return parser


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    raise SystemExit(main())
