"""Command-line entry point.

Subcommands: ``simulate``, ``estimate``, ``sweep``, ``radon-demo``,
``theory`` and ``audit-stability``.  Settings come from built-in defaults,
then an optional TOML file (``--config``; top-level keys plus a table named
after the subcommand), then command-line flags.  The default output
directory is read from ``PDEREG_OUTPUT_DIR``.

Exit codes: 0 on success, 1 on invalid input, 2 on numerical failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import io
import json
import os
import sys
from typing import Optional

import numpy as np

from .errors import CapacityError, DomainError, NumericalError
from .estimator import estimate, lambda_schedule
from .experiments import (Context, Problem, fingerprint, preset_problem, rate_sweep,
                          report_stem, stability_audit, write_report)
from .noise import Observation, synthesize
from .theory import TARGETS, make_profile, rate_exponent

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

OUTPUT_ENV = "PDEREG_OUTPUT_DIR"
SUBCOMMANDS = ("simulate", "estimate", "sweep", "radon-demo", "theory", "audit-stability")
PROBLEM_KEYS = tuple(f.name for f in dataclasses.fields(Problem))
DEFAULT_EPS_GRID = [2.0**-k for k in range(3, 10)]

DEFAULTS = {
    "simulate": {"kind": "schrodinger", "eps": 0.01, "seed": 0},
    "estimate": {"lam": None, "seed": 0},
    "sweep": {"kind": "schrodinger", "eps_grid": DEFAULT_EPS_GRID, "reps": 20, "seed": 0, "jobs": 1},
    "radon-demo": {"kind": "radon", "eps": 0.01, "seed": 0, "n": 31},
    "theory": {"alpha": None, "kappa": None, "gamma": 0.0, "d": None, "beta": [0.0]},
    "audit-stability": {"kind": "divergence", "pairs": 50, "R": 1.0, "seed": 0},
}


class UsageError(Exception):
    """Invalid command line; carries the usage text."""

    def __init__(self, message: str, usage: str):
        super().__init__(message)
        self.usage = usage


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message, self.format_usage())


@dataclasses.dataclass
class RunConfig:
    """Merged settings of one invocation."""

    subcommand: str
    values: dict

    def get(self, key, default=None):
        v = self.values.get(key)
        return default if v is None else v

    def problem(self, base: Optional[dict] = None) -> Problem:
        """Problem from ``base`` (or the kind preset) with configured overrides."""
        kind = self.values.get("kind") or (base or {}).get("kind")
        if kind is None:
            raise DomainError("kind: a problem kind is required")
        over = {k: self.values[k] for k in PROBLEM_KEYS if self.values.get(k) is not None}
        if base is not None:
            return Problem.from_dict({**base, **over})
        over.pop("kind", None)
        return preset_problem(kind, **over)

    def output_dir(self) -> str:
        return self.get("output_dir") or os.environ.get(OUTPUT_ENV) or "pdereg-output"

    def describe(self) -> dict:
        return {"subcommand": self.subcommand,
                **{k: v for k, v in sorted(self.values.items()) if k not in ("config", "output_dir", "jobs")}}


def _floats(text: str):
    return [float(t) for t in text.split(",") if t.strip()]


def _add_problem_flags(p: argparse.ArgumentParser) -> None:
    S = argparse.SUPPRESS
    p.add_argument("--kind", choices=("divergence", "schrodinger", "radon"), default=S)
    p.add_argument("--d", type=int, default=S)
    p.add_argument("--n", type=int, default=S)
    p.add_argument("--alpha", type=int, default=S)
    p.add_argument("--shape", choices=("interval", "square", "disc"), default=S)
    p.add_argument("--link", default=S)
    p.add_argument("--k-min", dest="k_min", type=float, default=S)
    p.add_argument("--schedule", default=S)
    p.add_argument("--g", type=float, default=S, help="source (divergence) or boundary value (schrodinger)")
    p.add_argument("--truth", choices=("sine", "bump"), default=S)
    p.add_argument("--amplitude", type=float, default=S)
    p.add_argument("--betas", type=_floats, default=S, help="comma-separated loss orders")
    p.add_argument("--method", default=S)
    p.add_argument("--gtol-factor", dest="gtol_factor", type=float, default=S)
    p.add_argument("--max-iter", dest="max_iter", type=int, default=S)


def build_parser() -> argparse.ArgumentParser:
    S = argparse.SUPPRESS
    parser = _Parser(prog="pdereg", description="Penalised regression for PDE coefficients.")
    sub = parser.add_subparsers(dest="subcommand", parser_class=_Parser, required=True)

    def common(p, jobs=False):
        p.add_argument("--config", default=S, help="TOML settings file")
        p.add_argument("--output-dir", dest="output_dir", default=S)
        p.add_argument("--seed", type=int, default=S)
        if jobs:
            p.add_argument("--jobs", type=int, default=S)

    p = sub.add_parser("simulate", help="draw a noisy observation of a preset problem")
    _add_problem_flags(p)
    common(p)
    p.add_argument("--eps", type=float, default=S)

    p = sub.add_parser("estimate", help="fit an observation file")
    _add_problem_flags(p)
    common(p)
    p.add_argument("--obs", default=S, help="observation JSON written by simulate")
    p.add_argument("--lam", type=float, default=S)

    p = sub.add_parser("sweep", help="Monte Carlo rate sweep")
    _add_problem_flags(p)
    common(p, jobs=True)
    p.add_argument("--eps-grid", dest="eps_grid", type=_floats, default=S)
    p.add_argument("--reps", type=int, default=S)

    p = sub.add_parser("radon-demo", help="single Radon ridge reconstruction")
    _add_problem_flags(p)
    common(p)
    p.add_argument("--eps", type=float, default=S)

    p = sub.add_parser("theory", help="table of rate exponents")
    p.add_argument("--config", default=S)
    p.add_argument("--output-dir", dest="output_dir", default=S)
    p.add_argument("--alpha", type=int, default=S)
    p.add_argument("--kappa", type=float, default=S)
    p.add_argument("--gamma", type=float, default=S)
    p.add_argument("--d", type=int, default=S)
    p.add_argument("--beta", type=_floats, default=S)

    p = sub.add_parser("audit-stability", help="pairwise stability ratios")
    _add_problem_flags(p)
    common(p)
    p.add_argument("--pairs", type=int, default=S)
    p.add_argument("--R", type=float, default=S)
    return parser


def _read_config(path: str, subcommand: str) -> dict:
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except OSError as exc:
        raise DomainError(f"config: cannot read {path}: {exc}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise DomainError(f"config: {path} is not valid TOML: {exc}") from exc
    flat = {k: v for k, v in data.items() if not isinstance(v, dict)}
    section = data.get(subcommand, {})
    if not isinstance(section, dict):
        raise DomainError(f"config: [{subcommand}] must be a table")
    flat.update(section)
    return {k.replace("-", "_"): v for k, v in flat.items()}


def resolve(argv) -> RunConfig:
    """Parse ``argv`` and merge defaults, the config file and flags."""
    parser = build_parser()
    ns = vars(parser.parse_args(argv))
    cmd = ns.pop("subcommand")
    values = dict(DEFAULTS[cmd])
    if "config" in ns:
        from_file = _read_config(ns["config"], cmd)
        allowed = set(PROBLEM_KEYS) | set(DEFAULTS[cmd]) | {"output_dir", "jobs", "obs", "lam",
                                                             "eps", "eps_grid", "reps", "seed"}
        unknown = sorted(set(from_file) - allowed)
        if unknown:
            raise DomainError(f"config: unknown keys {unknown}")
        values.update(from_file)
    values.update(ns)
    return RunConfig(cmd, values)


# -- subcommands ------------------------------------------------------------

def _write(path: str, text: str) -> str:
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text)
    return path


def _stem(problem: Problem) -> str:
    return report_stem(problem.kind, problem.d, problem.alpha)


def cmd_simulate(cfg: RunConfig, out) -> int:
    problem = cfg.problem()
    ctx = Context(problem)
    eps, seed = float(cfg.get("eps")), int(cfg.get("seed"))
    meta = {"problem": problem.to_dict(), "config": cfg.describe()}
    meta["fingerprint"] = fingerprint(meta["config"])
    obs = synthesize(ctx.u0, eps, seed, ctx.weight, stream=(0, 0), space=ctx.model.descriptor(), meta=meta)
    path = _write(os.path.join(cfg.output_dir(), _stem(problem) + "-obs.json"), obs.to_json())
    print(path, file=out)
    return 0


def cmd_estimate(cfg: RunConfig, out) -> int:
    path = cfg.get("obs")
    if path is None:
        raise DomainError("obs: an observation file is required")
    try:
        with open(path, encoding="utf-8") as fh:
            obs = Observation.from_json(fh.read())
    except OSError as exc:
        raise DomainError(f"obs: cannot read {path}: {exc}") from exc
    except (ValueError, KeyError) as exc:
        raise DomainError(f"obs: {path} is not an observation file: {exc}") from exc
    problem = cfg.problem(obs.meta.get("problem"))
    ctx = Context(problem)
    if obs.values.size != ctx.u0.size:
        raise DomainError(f"obs: {obs.values.size} values do not match the problem's {ctx.u0.size} outputs")
    lam = cfg.get("lam") or lambda_schedule(problem.schedule_name, obs.epsilon, problem.alpha, problem.d)
    res = estimate(obs, ctx.model, ctx.link, ctx.metric, ctx.config(float(lam), int(cfg.get("seed"))))
    config = {"subcommand": "estimate", "problem": problem.to_dict(), "lam": float(lam),
              "observation": obs.meta.get("fingerprint"), "epsilon": obs.epsilon, "seed": obs.seed}
    payload = {"config": config, "fingerprint": fingerprint(config), "result": res.to_dict()}
    target = _write(os.path.join(cfg.output_dir(), _stem(problem) + "-estimate.json"),
                    json.dumps(payload, sort_keys=True))
    print(target, file=out)
    print(f"converged={str(res.converged).lower()} objective={res.objective:.10g} "
          f"grad_norm={res.grad_norm:.3e} iterations={res.iterations}", file=out)
    return 0


def cmd_sweep(cfg: RunConfig, out) -> int:
    problem = cfg.problem()
    report = rate_sweep(problem, cfg.get("eps_grid"), int(cfg.get("reps")), int(cfg.get("seed")),
                        jobs=int(cfg.get("jobs")))
    for p in write_report(report, cfg.output_dir(), _stem(problem)):
        print(p, file=out)
    print(report.summary(), file=out)
    return 0


def cmd_radon_demo(cfg: RunConfig, out) -> int:
    problem = cfg.problem()
    if problem.kind != "radon":
        raise DomainError("kind: radon-demo needs kind 'radon'")
    ctx = Context(problem)
    eps, seed = float(cfg.get("eps")), int(cfg.get("seed"))
    lam = ctx.lam(eps)
    obs = synthesize(ctx.u0, eps, seed, ctx.weight, stream=(0, 0))
    res = estimate(obs, ctx.model, None, ctx.metric, ctx.config(lam, seed))
    err = float(np.sqrt(ctx.domain.cell_volume * np.sum((res.F.values - ctx.F0) ** 2)))
    config = {"subcommand": "radon-demo", "problem": problem.to_dict(), "eps": eps, "seed": seed}
    payload = {"config": config, "fingerprint": fingerprint(config), "lam": lam, "error_F": err,
               "result": res.to_dict()}
    stem = os.path.join(cfg.output_dir(), _stem(problem))
    _write(stem + "-radon.json", json.dumps(payload, sort_keys=True))
    _write(stem + "-sinogram.csv", ctx.geom.sinogram(obs.values).to_csv())
    print(stem + "-radon.json", file=out)
    print(f"lam={lam:.6g} error_F={err:.6g} converged={str(res.converged).lower()}", file=out)
    return 0


def theory_table(alpha, kappa, gamma, d, betas) -> str:
    """CSV table of every rate exponent for one profile."""
    for name, v in (("alpha", alpha), ("kappa", kappa), ("d", d)):
        if v is None:
            raise DomainError(f"{name}: required")
    prof = make_profile(alpha, kappa, gamma, d)
    buf = io.StringIO()
    buf.write("target,beta,exponent,value\n")
    for b in betas:
        e = rate_exponent(prof, "prediction", b)
        buf.write(f"prediction,{b:g},{e},{float(e)!r}\n")
    for t in TARGETS[1:]:
        e = rate_exponent(prof, t)
        buf.write(f"{t},,{e},{float(e)!r}\n")
    return buf.getvalue()


def cmd_theory(cfg: RunConfig, out) -> int:
    text = theory_table(cfg.get("alpha"), cfg.get("kappa"), cfg.get("gamma"), cfg.get("d"),
                        cfg.get("beta"))
    out.write(text)
    if cfg.get("output_dir") or os.environ.get(OUTPUT_ENV):
        _write(os.path.join(cfg.output_dir(), f"theory-{cfg.get('d')}d-a{cfg.get('alpha')}.csv"), text)
    return 0


def cmd_audit(cfg: RunConfig, out) -> int:
    kind = cfg.get("kind")
    over = {k: cfg.values[k] for k in PROBLEM_KEYS if cfg.values.get(k) is not None}
    base = {"kind": kind, "d": 1, "n": 63, "alpha": 2, "g": 1.0}
    problem = Problem.from_dict({**base, **over})
    report = stability_audit(kind, int(cfg.get("pairs")), float(cfg.get("R")), int(cfg.get("seed")), problem)
    stem = report_stem(kind, problem.d, problem.alpha) + "-stability"
    for p in write_report(report, cfg.output_dir(), stem):
        print(p, file=out)
    print(f"constant={report.constant:.6g} median={report.median:.6g} spread={report.spread:.4g} "
          f"stable={str(report.stable).lower()} skipped={report.skipped}", file=out)
    return 0


COMMANDS = {"simulate": cmd_simulate, "estimate": cmd_estimate, "sweep": cmd_sweep,
            "radon-demo": cmd_radon_demo, "theory": cmd_theory, "audit-stability": cmd_audit}


def run(argv=None, out=None, err=None) -> int:
    """Execute a command line and return its exit code."""
    out = out or sys.stdout
    err = err or sys.stderr
    try:
        cfg = resolve(sys.argv[1:] if argv is None else list(argv))
        return COMMANDS[cfg.subcommand](cfg, out)
    except UsageError as exc:
        err.write(exc.usage)
        print(f"error: {exc}", file=err)
        return 1
    except (DomainError, CapacityError) as exc:
        print(f"error: {exc}", file=err)
        return 1
    except NumericalError as exc:
        print(f"numerical failure: {type(exc).__name__}: {exc}", file=err)
        return 2
    except (TypeError, ValueError) as exc:
        print(f"error: invalid setting: {exc}", file=err)
        return 1


def main() -> None:
    sys.exit(run())
