"""Monte Carlo harnesses: rate sweeps, stability audits and concentration probes.

Every harness takes an explicit seed.  Replicate ``r`` at noise index ``i``
draws its noise from the stream ``(i, r)`` of that seed, so results do not
depend on how replicates are scheduled.  Work can be spread over a process
pool; results are merged in replicate-index order.

Reports serialise to JSON with sorted keys and no timestamps in the content,
so equal configurations and seeds give byte-identical files.  Each report
embeds its configuration and a SHA-256 fingerprint of it.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from typing import Optional

import numpy as np
from scipy.stats import linregress

from .errors import DegeneracyError, DomainError
from .estimator import EstimatorConfig, estimate, lambda_schedule
from .forward import KINDS, REGULARITY, make_model, recover_potential
from .grid import GridFunction, c1_norm, make_domain
from .linkfn import make_link
from .noise import rng_for, synthesize
from .radon import RadonGeometry, RadonModel
from .sobolev import build_metric
from .theory import make_profile, rate_exponent

INVALID_FRACTION = 0.2
MIN_PROBE_REPS = 200
LIPSCHITZ_SPREAD = 3.0


def fingerprint(config: dict) -> str:
    """SHA-256 of the canonical JSON form of ``config``."""
    return hashlib.sha256(json.dumps(config, sort_keys=True).encode()).hexdigest()


def _dump(payload: dict) -> str:
    return json.dumps(payload, sort_keys=True, indent=1)


# -- problems ---------------------------------------------------------------

@dataclass(frozen=True)
class Problem:
    """A fixed estimation problem with a documented ground truth.

    The truth ``sine`` is ``F0 = amplitude * prod_i sin(pi x_i)`` on the
    interval or square.  The truth ``bump`` is
    ``F0 = amplitude * (1 - |x|**2)**3 * (1 + x/2 - 3y/10 + 2xy/5)`` on the disc.
    ``g`` is the interior source of the divergence form or the constant
    boundary value of the Schroedinger equation.  The gradient tolerance of
    each fit is ``gtol_factor * lam``.
    """

    kind: str
    d: int = 1
    n: int = 63
    alpha: int = 4
    shape: Optional[str] = None
    link: str = "regular-softplus"
    k_min: float = 0.5
    schedule: Optional[str] = None
    g: float = 1.0
    truth: str = "sine"
    amplitude: float = 0.5
    betas: tuple = (0.0,)
    method: str = "newton-cg"
    gtol_factor: float = 1e-3
    max_iter: int = 200
    cg_rtol: float = 1e-6
    cg_maxiter: int = 100
    restarts: int = 1
    n_theta: Optional[int] = None
    n_s: Optional[int] = None

    def __post_init__(self):
        if self.kind not in KINDS + ("radon",):
            raise DomainError(f"kind: unknown problem kind {self.kind!r}")
        if self.kind == "radon" and self.d != 2:
            raise DomainError("d: the Radon problem lives in two dimensions")
        if self.kind == "radon" and self.truth != "bump":
            raise DomainError("truth: the Radon problem uses the 'bump' truth")
        if self.truth not in ("sine", "bump"):
            raise DomainError(f"truth: unknown ground truth {self.truth!r}")
        object.__setattr__(self, "betas", tuple(float(b) for b in self.betas))
        if self.kind == "radon" and self.betas != (0.0,):
            raise DomainError("betas: the Radon output loss is the sinogram L2 norm only")

    @property
    def domain_shape(self) -> str:
        if self.shape is not None:
            return self.shape
        if self.kind == "radon":
            return "disc"
        return "interval" if self.d == 1 else "square"

    @property
    def schedule_name(self) -> str:
        return self.schedule or self.kind

    def to_dict(self) -> dict:
        out = asdict(self)
        out["betas"] = list(self.betas)
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "Problem":
        known = {f.name for f in fields(cls)}
        extra = set(data) - known
        if extra:
            raise DomainError(f"problem: unknown fields {sorted(extra)}")
        data = dict(data)
        if "betas" in data:
            data["betas"] = tuple(data["betas"])
        return cls(**data)


def preset_problem(kind: str, **overrides) -> Problem:
    """Default problem of each kind, as used by the acceptance sweeps."""
    base = {
        "schrodinger": dict(kind="schrodinger", d=1, n=127, alpha=4, g=1e4, amplitude=0.5),
        "divergence": dict(kind="divergence", d=1, n=63, alpha=3, g=1e4, amplitude=0.5),
        "radon": dict(kind="radon", d=2, n=64, alpha=2, truth="bump", amplitude=0.05),
    }
    if kind not in base:
        raise DomainError(f"kind: unknown problem kind {kind!r}")
    return Problem(**{**base[kind], **{k: v for k, v in overrides.items() if v is not None}})


class Context:
    """Assembled domain, metric, model and truth of a problem."""

    def __init__(self, problem: Problem):
        p = problem
        self.problem = p
        self.domain = make_domain(p.d, p.n, p.domain_shape)
        self.metric = build_metric(self.domain, p.alpha)
        X = self.domain.points
        if p.truth == "sine":
            if not self.domain.is_tensor:
                raise DomainError("truth: 'sine' needs an interval or square domain")
            F0 = p.amplitude * np.prod(np.sin(np.pi * X), axis=1)
        else:
            if self.domain.shape != "disc":
                raise DomainError("truth: 'bump' needs a disc domain")
            x, y = X[:, 0], X[:, 1]
            F0 = p.amplitude * (1 - x * x - y * y) ** 3 * (1 + 0.5 * x - 0.3 * y + 0.4 * x * y)
        self.F0 = F0
        if p.kind == "radon":
            self.link = None
            self.geom = RadonGeometry(self.domain, p.n_theta or p.n, p.n_s or p.n)
            self.model = RadonModel(self.geom)
            self.f0 = F0
            self.u0 = self.geom.forward(F0)
        else:
            self.link = make_link(p.link, p.k_min)
            self.model = make_model(p.kind, self.domain, g=p.g)
            self.f0 = self.link.forward(F0)
            self.u0 = self.model.solve(self.f0)
        self.weight = self.model.output_weight

    def lam(self, eps: float) -> float:
        return lambda_schedule(self.problem.schedule_name, eps, self.problem.alpha, self.domain.d)

    def config(self, lam: float, seed: int) -> EstimatorConfig:
        p = self.problem
        return EstimatorConfig(lam=lam, gtol=p.gtol_factor * lam, max_iter=p.max_iter,
                               method=p.method, cg_rtol=p.cg_rtol, cg_maxiter=p.cg_maxiter,
                               restarts=p.restarts, seed=seed)

    def theory_profile(self):
        kappa, gamma = REGULARITY[self.problem.kind]
        return make_profile(self.problem.alpha, kappa, gamma, self.domain.d)

    def theory(self) -> dict:
        prof = self.theory_profile()
        target = {"divergence": "div_f", "schrodinger": "schr_f", "radon": "radon_f"}
        out = {f"u_b{b:g}": rate_exponent(prof, "prediction", b) for b in self.problem.betas}
        out["f"] = rate_exponent(prof, target[self.problem.kind])
        out["tau2"] = 2 * rate_exponent(prof, "generic")
        return {k: str(v) for k, v in out.items()}


# -- process-pool plumbing --------------------------------------------------

_WORKER = {}


def _init_worker(problem: Problem) -> None:
    _WORKER["ctx"] = Context(problem)


def _run_tasks(fn, problem: Problem, tasks: list, jobs: int, ctx: Optional[Context] = None) -> list:
    """Apply ``fn(ctx, task)`` to every task; results keep the task order."""
    if jobs <= 1 or len(tasks) <= 1:
        ctx = ctx or Context(problem)
        return [fn(ctx, t) for t in tasks]
    chunk = max(1, len(tasks) // (4 * jobs))
    with ProcessPoolExecutor(jobs, initializer=_init_worker, initargs=(problem,)) as pool:
        return list(pool.map(_apply, [fn] * len(tasks), tasks, chunksize=chunk))


def _apply(fn, task):
    return fn(_WORKER["ctx"], task)


# -- rate sweeps ------------------------------------------------------------

def _sweep_task(ctx: Context, task) -> dict:
    i, eps, rep, seed = task
    dom, metric = ctx.domain, ctx.metric
    lam = ctx.lam(eps)
    obs = synthesize(ctx.u0, eps, seed, ctx.weight, stream=(i, rep))
    res = estimate(obs, ctx.model, ctx.link, metric, ctx.config(lam, seed))
    du = np.asarray(res.u) - ctx.u0
    rec = {"eps_index": i, "epsilon": eps, "rep": rep, "lam": lam,
           "converged": bool(res.converged), "grad_norm": res.grad_norm,
           "iterations": res.iterations}
    if ctx.problem.kind == "radon":
        rec["u_b0"] = float(np.sqrt(np.sum(ctx.weight * du * du)))
        fhat = res.F.values
    else:
        for b in ctx.problem.betas:
            rec[f"u_b{b:g}"] = metric.norm_values(du, b)
        fhat = res.f.values
    df = fhat - ctx.f0
    rec["f"] = float(np.sqrt(dom.cell_volume * np.sum(df * df)))
    rec["tau2"] = float(np.sum(ctx.weight * du * du)
                        + lam**2 * metric.norm_values(res.F.values, metric.alpha) ** 2)
    return rec


def fit_slope(eps, values) -> dict:
    """Least-squares slope of ``log values`` on ``log eps`` with its standard error."""
    fit = linregress(np.log(eps), np.log(values))
    return {"slope": float(fit.slope), "stderr": float(fit.stderr), "intercept": float(fit.intercept)}


@dataclass
class RateReport:
    """Outcome of a rate sweep.  See :func:`rate_sweep`."""

    config: dict
    records: list
    mean_errors: dict
    converged_fraction: list
    slopes: dict
    invalid: bool
    fingerprint: str = ""

    def to_dict(self) -> dict:
        return {"config": self.config, "fingerprint": self.fingerprint, "records": self.records,
                "mean_errors": self.mean_errors, "converged_fraction": self.converged_fraction,
                "slopes": self.slopes, "invalid": self.invalid}

    def to_json(self) -> str:
        return _dump(self.to_dict())

    def to_csv(self) -> str:
        return _records_csv(self.records)

    def summary(self) -> str:
        lines = [f"{'error':>8} {'slope':>9} {'stderr':>8} {'theory':>9} {'gap':>8}"]
        for k, s in sorted(self.slopes.items()):
            lines.append(f"{k:>8} {s['slope']:9.4f} {s['stderr']:8.4f} {s['theory_value']:9.4f} "
                         f"{s['gap']:8.4f}")
        if self.invalid:
            lines.append("report flagged invalid: too many non-converged replicates")
        return "\n".join(lines)


def _records_csv(records: list) -> str:
    if not records:
        return ""
    buf = io.StringIO()
    cols = list(records[0].keys())
    w = csv.DictWriter(buf, fieldnames=cols, lineterminator="\n")
    w.writeheader()
    for r in records:
        w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in r.items()})
    return buf.getvalue()


def rate_sweep(problem: Problem, eps_grid, reps: int, seed: int, jobs: int = 1) -> RateReport:
    """Monte Carlo convergence-rate sweep.

    For every noise level and replicate an observation of the true solution
    is drawn and the estimator is fitted.  Slopes of the log mean error
    against ``log eps`` are fitted over converged replicates and reported
    with the theoretical exponent and the absolute gap.

    Parameters
    ----------
    problem : Problem
    eps_grid : sequence of float
        At least 3 noise levels spanning at least 1.5 decades.
    reps : int
        Replicates per noise level, at least 10.
    seed : int
    jobs : int
        Worker processes.
    """
    eps = sorted((float(e) for e in eps_grid), reverse=True)
    if len(eps) < 3 or min(eps) <= 0 or np.log10(eps[0] / eps[-1]) < 1.5 - 1e-12:
        raise DomainError("eps_grid: need at least 3 positive levels spanning 1.5 decades")
    if len(set(eps)) != len(eps):
        raise DomainError("eps_grid: noise levels must be distinct")
    if reps < 10:
        raise DomainError(f"reps: need at least 10 replicates, got {reps}")
    ctx = Context(problem)
    theory = ctx.theory()
    config = {"operation": "rate_sweep", "problem": problem.to_dict(), "eps": eps,
              "reps": int(reps), "seed": int(seed)}
    tasks = [(i, e, r, int(seed)) for i, e in enumerate(eps) for r in range(reps)]
    records = _run_tasks(_sweep_task, problem, tasks, jobs, ctx)

    keys = [k for k in records[0] if k.startswith("u_b")] + ["f", "tau2"]
    frac, means = [], {k: [] for k in keys}
    for i in range(len(eps)):
        rows = [r for r in records if r["eps_index"] == i]
        ok = [r for r in rows if r["converged"]]
        frac.append(len(ok) / len(rows))
        for k in keys:
            means[k].append(float(np.mean([r[k] for r in ok])) if ok else float("nan"))
    slopes = {}
    usable = [i for i in range(len(eps)) if frac[i] > 0]
    for k in keys:
        if len(usable) >= 2:
            fit = fit_slope([eps[i] for i in usable], [means[k][i] for i in usable])
        else:
            fit = {"slope": float("nan"), "stderr": float("nan"), "intercept": float("nan")}
        th = theory[k]
        num, _, den = th.partition("/")
        val = float(num) / float(den or 1)
        fit.update(theory=th, theory_value=val, gap=abs(fit["slope"] - val))
        slopes[k] = fit
    invalid = any(f < 1.0 - INVALID_FRACTION for f in frac)
    return RateReport(config, records, means, frac, slopes, invalid, fingerprint(config))


# -- stability audits -------------------------------------------------------

def _spectral_draw(ctx: Context, rng, R: float, modes: int) -> np.ndarray:
    """Smooth random parameter with ``||F||_{H^alpha} = R * U``, ``U`` uniform."""
    metric = ctx.metric
    c = np.zeros(metric.mu.size)
    low = metric.order[:modes]
    c[low] = rng.standard_normal(modes) * metric.weights(-metric.alpha / 2.0)[low]
    F = metric.synthesize(c)
    return F * (R * rng.uniform(0.25, 1.0) / metric.norm_values(F, metric.alpha))


@dataclass
class StabilityReport:
    """Pairwise stability ratios.  See :func:`stability_audit`."""

    config: dict
    pairs: list
    skipped: int
    constant: float
    median: float
    spread: float
    stable: bool
    recovery_error: Optional[float] = None
    fingerprint: str = ""

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in
                ("config", "fingerprint", "pairs", "skipped", "constant", "median", "spread",
                 "stable", "recovery_error")}

    def to_json(self) -> str:
        return _dump(self.to_dict())

    def to_csv(self) -> str:
        return _records_csv(self.pairs)


def stability_audit(kind: str, pairs: int, R: float, seed: int, problem: Optional[Problem] = None,
                    modes: int = 6) -> StabilityReport:
    """Empirical stability constants of the coefficient-to-solution map.

    Random pairs ``f = Phi(F)`` are drawn with ``F`` a combination of the
    ``modes`` lowest eigenfunctions and ``||F||_{H^alpha} <= R``.  For the
    divergence form each ratio is
    ``||f1 - f2|| / (||f2||_{C^1} ||u1 - u2||_{H^2})``; for the Schroedinger
    equation the ``C^1`` factor is dropped.  The fitted constant is the
    largest ratio and the audit is flagged unstable when the largest ratio
    exceeds three times the median.  Pairs with identical solutions are
    skipped and counted.
    """
    if kind not in KINDS:
        raise DomainError(f"kind: stability audits need an elliptic kind, got {kind!r}")
    if pairs < 1 or not R > 0:
        raise DomainError("pairs, R: need at least one pair and a positive radius")
    problem = problem or Problem(kind, d=1, n=63, alpha=2, g=1.0)
    if problem.kind != kind:
        raise DomainError("problem: kind does not match")
    ctx = Context(problem)
    metric, dom = ctx.metric, ctx.domain
    h2 = build_metric(dom, max(2, problem.alpha))
    rng = rng_for(seed, 104729)
    trace = float(ctx.link.forward(np.zeros(1))[0])
    records, skipped = [], 0
    for k in range(pairs):
        f1 = ctx.link.forward(_spectral_draw(ctx, rng, R, modes))
        f2 = ctx.link.forward(_spectral_draw(ctx, rng, R, modes))
        u1, u2 = ctx.model.solve(f1), ctx.model.solve(f2)
        du = h2.norm_values(u1 - u2, 2.0)
        df = float(np.sqrt(dom.cell_volume * np.sum((f1 - f2) ** 2)))
        c1 = c1_norm(GridFunction(dom, f2, trace))
        if du == 0.0 or df == 0.0:
            skipped += 1
            continue
        ratio = df / (c1 * du) if kind == "divergence" else df / du
        records.append({"pair": k, "f_diff": df, "u_diff_h2": du, "c1": c1, "ratio": ratio})
    ratios = np.array([r["ratio"] for r in records])
    if ratios.size == 0:
        raise DomainError("pairs: every pair was degenerate")
    C, med = float(ratios.max()), float(np.median(ratios))
    recovery = None
    if kind == "schrodinger":
        recovery = _recovery_error(ctx, f2, u2)
    config = {"operation": "stability_audit", "kind": kind, "pairs": int(pairs), "R": float(R),
              "seed": int(seed), "modes": int(modes), "problem": problem.to_dict()}
    return StabilityReport(config, records, skipped, C, med, C / med,
                           bool(np.all(np.isfinite(ratios)) and C / med <= LIPSCHITZ_SPREAD),
                           recovery, fingerprint(config))


def _recovery_error(ctx: Context, f: np.ndarray, u: np.ndarray) -> float:
    """Largest error of the pointwise potential recovered from a noiseless solution."""
    gf = GridFunction(ctx.domain, u, ctx.model.g.trace)
    try:
        fr = recover_potential(gf)
    except DegeneracyError:
        return float("inf")
    return float(np.abs(fr.values - f).max())


# -- concentration probes ---------------------------------------------------

@dataclass
class ConcentrationReport:
    """Tail table of the combined metric.  See :func:`concentration_probe`."""

    config: dict
    radii: list
    tail: list
    threshold: list
    decay: float
    envelope_intercept: float
    ratio_to_theory: float
    monotone: bool
    fingerprint: str = ""

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in
                ("config", "fingerprint", "radii", "tail", "threshold", "decay",
                 "envelope_intercept", "ratio_to_theory", "monotone")}

    def to_json(self) -> str:
        return _dump(self.to_dict())

    def to_csv(self) -> str:
        rows = [{"R": r, "threshold": t, "p_hat": p}
                for r, t, p in zip(self.radii, self.threshold, self.tail)]
        return _records_csv(rows)


def _probe_task(ctx: Context, task) -> float:
    eps, rep, seed, lam = task
    obs = synthesize(ctx.u0, eps, seed, ctx.weight, stream=(0, rep))
    F = ctx.geom.ridge_solve_values(ctx.metric, obs.values, lam)
    d = ctx.geom.forward(F) - ctx.u0
    return float(np.sum(ctx.weight * d * d) + lam**2 * ctx.metric.norm_values(F, ctx.metric.alpha) ** 2)


def concentration_probe(problem: Problem, eps: float, radii=None, reps: int = 500, seed: int = 0,
                        jobs: int = 1, points: int = 24) -> ConcentrationReport:
    """Empirical tail of the combined metric for a linear problem.

    With ``F_* = F0`` the event is
    ``tau**2(F_hat, F0) >= 2 (lam**2 ||F0||**2 + R**2)``.  The decay rate is
    the negative least-squares slope of ``log p_hat`` on ``R**2`` over radii
    with ``0 < p_hat < 1``; the envelope intercept lifts that line above
    every such point.  ``ratio_to_theory`` is the decay times ``eps**2``.

    Parameters
    ----------
    radii : sequence of float, optional
        Radii to tabulate; by default ``points`` radii up to just beyond the
        largest observed exceedance.
    """
    if problem.kind != "radon":
        raise DomainError("problem: the concentration probe needs the linear Radon model")
    if reps < MIN_PROBE_REPS:
        raise DomainError(f"reps: need at least {MIN_PROBE_REPS} replicates, got {reps}")
    if not eps > 0:
        raise DomainError(f"eps: must be positive, got {eps}")
    ctx = Context(problem)
    lam = ctx.lam(eps)
    tasks = [(float(eps), r, int(seed), lam) for r in range(reps)]
    tau2 = np.array(_run_tasks(_probe_task, problem, tasks, jobs, ctx))
    base = lam**2 * ctx.metric.norm_values(ctx.F0, problem.alpha) ** 2
    if radii is None:
        top = tau2.max() / 2.0 - base
        if top <= 0.0:
            top = tau2.max() / 2.0
        radii = np.sqrt(top) * np.linspace(0.0, 1.05, points)
    radii = np.asarray(sorted(float(r) for r in radii))
    thr = 2.0 * (base + radii**2)
    tail = np.array([np.mean(tau2 >= t) for t in thr])
    monotone = bool(np.all(np.diff(tail) <= 0))
    mid = (tail > 0) & (tail < 1)
    if mid.sum() >= 2:
        slope = float(np.polyfit(radii[mid] ** 2, np.log(tail[mid]), 1)[0])
        icpt = float(np.max(np.log(tail[mid]) - slope * radii[mid] ** 2))
    else:
        slope, icpt = float("nan"), float("nan")
    decay = -slope
    config = {"operation": "concentration_probe", "problem": problem.to_dict(), "eps": float(eps),
              "reps": int(reps), "seed": int(seed), "radii": radii.tolist()}
    return ConcentrationReport(config, radii.tolist(), tail.tolist(), thr.tolist(), decay, icpt,
                               decay * eps**2, monotone, fingerprint(config))


# -- output -----------------------------------------------------------------

def report_stem(kind: str, d: int, alpha, timestamp: Optional[str] = None) -> str:
    ts = timestamp or time.strftime("%Y%m%dT%H%M%S")
    return f"{kind}-{d}d-a{alpha}-{ts}"


def write_report(report, outdir: str, stem: str) -> list:
    """Write ``stem.json`` and ``stem.csv`` into ``outdir``; return the paths."""
    os.makedirs(outdir, exist_ok=True)
    paths = []
    for ext, text in (("json", report.to_json()), ("csv", report.to_csv())):
        path = os.path.join(outdir, f"{stem}.{ext}")
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text)
        paths.append(path)
    return paths


def replay(path: str, jobs: int = 1):
    """Re-run the harness recorded in a report JSON file."""
    with open(path, encoding="utf-8") as fh:
        cfg = json.load(fh)["config"]
    op = cfg.get("operation")
    if op == "rate_sweep":
        return rate_sweep(Problem.from_dict(cfg["problem"]), cfg["eps"], cfg["reps"], cfg["seed"], jobs)
    if op == "stability_audit":
        return stability_audit(cfg["kind"], cfg["pairs"], cfg["R"], cfg["seed"],
                               Problem.from_dict(cfg["problem"]), cfg["modes"])
    if op == "concentration_probe":
        return concentration_probe(Problem.from_dict(cfg["problem"]), cfg["eps"], cfg["radii"],
                                   cfg["reps"], cfg["seed"], jobs)
    raise DomainError(f"report: unknown operation {op!r}")
