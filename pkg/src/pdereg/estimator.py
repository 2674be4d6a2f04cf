"""Tikhonov-penalised least-squares estimation.

The estimator maximises

    J(F) = 2 <Y, G(F)> - ||G(F)||**2 - lam**2 ||F||_{H^alpha}**2

over zero-boundary grid functions ``F``.  For the elliptic models
``G(F) = u_{Phi(F)}``; for the Radon model ``G(F) = RF`` and the maximiser is
available in closed form.

Optimisation runs in whitened spectral coordinates ``c`` with
``F = sum_k c_k (1 + mu_k)**(-alpha/2) e_k``, where the penalty becomes
``lam**2 |c|**2``.  The Euclidean gradient norm in these coordinates equals
the ``H^{-alpha}`` norm of the gradient of ``J``, and this is the quantity
reported and tested against the tolerance.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.sparse.linalg as spla

from .errors import DomainError, NumericalError, OptimizationError
from .grid import GridFunction
from .linkfn import LinkFunction
from .noise import Observation, rng_for
from .radon import RadonModel
from .sobolev import SobolevMetric

SCHEDULES = ("divergence", "schrodinger", "radon", "map")
METHODS = ("lbfgs", "newton-cg", "gauss-newton", "gradient")


def lambda_schedule(name: str, epsilon: float, alpha: int, d: int) -> float:
    """Regularisation level for a named schedule.

    ``divergence``: ``eps**(2(a+1)/(2(a+1)+d))``; ``schrodinger``:
    ``eps**(2(a+2)/(2(a+2)+d))``; ``radon``: ``eps**((2a+1)/(2a+3))``;
    ``map``: ``eps``.
    """
    if not epsilon > 0:
        raise DomainError(f"epsilon: must be positive, got {epsilon}")
    a = alpha
    if name == "divergence":
        p = 2 * (a + 1) / (2 * (a + 1) + d)
    elif name == "schrodinger":
        p = 2 * (a + 2) / (2 * (a + 2) + d)
    elif name == "radon":
        p = (2 * a + 1) / (2 * a + 3)
    elif name == "map":
        p = 1.0
    else:
        raise DomainError(f"schedule: unknown schedule {name!r}, expected one of {SCHEDULES}")
    return float(epsilon**p)


@dataclass
class EstimatorConfig:
    """Optimizer settings.

    ``method`` selects the ascent direction: limited-memory quasi-Newton
    with ``memory`` curvature pairs (plain gradient when ``memory`` is
    zero), truncated Newton or Gauss-Newton solved by conjugate gradients
    to relative tolerance ``cg_rtol``, or the plain gradient.  ``gtol`` bounds the Euclidean
    gradient norm in whitened coordinates, i.e. the ``H^{-alpha}`` norm of
    the gradient of ``J``.
    """

    lam: float
    init: str = "zero"
    init_values: Optional[np.ndarray] = None
    init_scale: float = 0.1
    restarts: int = 1
    max_iter: int = 500
    gtol: float = 1e-8
    step0: float = 1.0
    backtrack: float = 0.5
    armijo: float = 1e-4
    max_backtracks: int = 60
    memory: int = 10
    method: str = "lbfgs"
    cg_rtol: float = 1e-4
    cg_maxiter: int = 200
    seed: int = 0
    workers: int = 1
    allow_irregular: bool = False

    def __post_init__(self):
        if not self.lam > 0:
            raise DomainError(f"lam: must be positive, got {self.lam}")
        if self.restarts < 1:
            raise DomainError(f"restarts: need at least one, got {self.restarts}")
        if not (self.gtol > 0 and self.step0 > 0 and self.init_scale >= 0):
            raise DomainError("gtol, step0: must be positive")
        if not 0 < self.backtrack < 1 or not 0 < self.armijo < 1:
            raise DomainError("backtrack, armijo: must lie in (0, 1)")
        if self.init not in ("zero", "given", "random"):
            raise DomainError(f"init: unknown initialisation {self.init!r}")
        if self.init == "given" and self.init_values is None:
            raise DomainError("init_values: required when init='given'")
        if self.memory < 0 or self.max_iter < 1:
            raise DomainError("memory, max_iter: out of range")
        if self.method not in METHODS:
            raise DomainError(f"method: unknown method {self.method!r}, expected one of {METHODS}")


@dataclass
class EstimateResult:
    F: GridFunction
    f: Optional[GridFunction]
    u: np.ndarray
    objective: float
    grad_norm: float
    iterations: int
    restart_index: int
    converged: bool
    restarts: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "F": self.F.values.tolist(),
            "f": None if self.f is None else self.f.values.tolist(),
            "u": np.asarray(self.u).tolist(),
            "objective": self.objective,
            "grad_norm": self.grad_norm,
            "iterations": self.iterations,
            "restart_index": self.restart_index,
            "converged": self.converged,
            "restarts": self.restarts,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


# -- model plumbing ---------------------------------------------------------

def _is_linear(model) -> bool:
    return isinstance(model, RadonModel)


def _check_link(model, link: Optional[LinkFunction], allow_irregular: bool = False) -> None:
    if _is_linear(model):
        return
    if link is None:
        raise DomainError("link: the elliptic models need a link function")
    if not link.regular and not allow_irregular:
        raise DomainError(f"link: {link.name!r} is not regular; set allow_irregular to use it")
    if model.kind == "divergence" and link.k_min <= 0:
        raise DomainError("link: the divergence form needs k_min > 0")


def forward_map(model, link: Optional[LinkFunction], F: np.ndarray) -> np.ndarray:
    """``G(F)`` as a flat array on the output space."""
    if _is_linear(model):
        return model.geom.forward(F)
    f = link.forward(F)
    if not np.all(f > link.k_min):
        raise NumericalError("coefficient reached the link lower bound")
    return model.solve(f)


def pullback(model, link: Optional[LinkFunction], F: np.ndarray, r: np.ndarray) -> np.ndarray:
    """Gradient of ``F -> <r, G(F)>`` in the weighted grid inner product."""
    if _is_linear(model):
        return model.geom.adjoint(r)
    f = link.forward(F)
    return link.derivative(F) * model.adjoint(f, r)


def _values(F) -> np.ndarray:
    return F.values if isinstance(F, GridFunction) else np.asarray(F, dtype=float)


def objective(F, obs: Observation, model, link, metric: SobolevMetric, lam: float) -> float:
    """Penalised functional ``2<Y,G(F)> - ||G(F)||**2 - lam**2 ||F||_alpha**2``."""
    Fv = _values(F)
    if isinstance(F, GridFunction) and not F.zero_boundary:
        raise DomainError("F: parameter must have a zero boundary trace")
    G = forward_map(model, link, Fv)
    pen = metric.norm_values(Fv, metric.alpha) ** 2
    return obs.inner(2.0 * obs.values - G, G) - lam**2 * pen


def residual_objective(F, obs: Observation, model, link, metric: SobolevMetric, lam: float) -> float:
    """Equivalent form ``||Y||**2 - ||Y - G(F)||**2 - lam**2 ||F||_alpha**2``."""
    Fv = _values(F)
    G = forward_map(model, link, Fv)
    r = obs.values - G
    pen = metric.norm_values(Fv, metric.alpha) ** 2
    return obs.inner(obs.values, obs.values) - obs.inner(r, r) - lam**2 * pen


def objective_gradient(F, obs: Observation, model, link, metric: SobolevMetric, lam: float) -> GridFunction:
    """Gradient of :func:`objective` in the weighted inner product."""
    Fv = _values(F)
    G = forward_map(model, link, Fv)
    g = 2.0 * pullback(model, link, Fv, obs.values - G)
    g -= 2.0 * lam**2 * metric.apply_power(Fv, metric.alpha)
    return GridFunction(metric.domain, g)


def tau_metric(F1, F2, model, metric: SobolevMetric, lam: float, link=None) -> float:
    """``tau**2 = ||G(F1) - G(F2)||**2 + lam**2 ||F1||_alpha**2`` (returns the square)."""
    a, b = _values(F1), _values(F2)
    diff = forward_map(model, link, a) - forward_map(model, link, b)
    w = model.output_weight
    return float(np.sum(w * diff * diff) + lam**2 * metric.norm_values(a, metric.alpha) ** 2)


def mu_metric(f1, f2, model, metric: SobolevMetric, lam: float, link: LinkFunction) -> float:
    """Coefficient-space counterpart of :func:`tau_metric` (squared)."""
    a, b = _values(f1), _values(f2)
    diff = model.solve(a) - model.solve(b)
    F1 = link.inverse(a)
    return float(np.sum(model.output_weight * diff * diff)
                 + lam**2 * metric.norm_values(F1, metric.alpha) ** 2)


# -- optimiser --------------------------------------------------------------

class _Whitened:
    """Objective and gradient in whitened spectral coordinates.

    Values are ``J - ||Y||**2``; adding ``offset`` recovers ``J``.
    """

    def __init__(self, obs, model, link, metric, lam):
        self.obs, self.model, self.link, self.metric, self.lam = obs, model, link, metric, lam
        self.scale = metric.weights(-metric.alpha / 2.0)
        self.offset = obs.inner(obs.values, obs.values)

    def to_F(self, c):
        return self.metric.synthesize(self.scale * c)

    def to_c(self, F):
        return self.metric.coefficients(F) / self.scale

    def evaluate(self, c):
        """Return ``(J, grad)`` or ``None`` if the point is not admissible."""
        F = self.to_F(c)
        try:
            G = forward_map(self.model, self.link, F)
            data = 2.0 * pullback(self.model, self.link, F, self.obs.values - G)
        except NumericalError:
            return None
        # residual form: J minus the constant ||Y||**2, free of cancellation
        r = self.obs.values - G
        J = -self.obs.inner(r, r) - self.lam**2 * np.dot(c, c)
        if not np.isfinite(J):
            return None
        grad = self.scale * self.metric.coefficients(data) - 2.0 * self.lam**2 * c
        return float(J), grad

    def jvp(self, F, v):
        """Derivative of ``c -> G(F(c))`` applied to ``v``."""
        dF = self.to_F(v)
        if _is_linear(self.model):
            return self.model.geom.forward(dF)
        f = self.link.forward(F)
        return self.model.frechet(f, self.link.derivative(F) * dF)

    def vjp(self, F, w):
        """Adjoint of :meth:`jvp` between the output and Euclidean inner products."""
        return self.scale * self.metric.coefficients(pullback(self.model, self.link, F, w))

    def newton(self, c, g, rtol, maxiter):
        """Truncated conjugate gradients on ``-Hess J p = g``.

        Hessian-vector products are central differences of the gradient.
        The iteration stops at the first direction of non-positive
        curvature and falls back to ``g`` if that happens immediately.
        """
        cn = max(1.0, float(np.linalg.norm(c)))

        def hess(v):
            tau = 1e-6 * cn / np.linalg.norm(v)
            plus, minus = self.evaluate(c + tau * v), self.evaluate(c - tau * v)
            if plus is None or minus is None:
                return None
            return -(plus[1] - minus[1]) / (2.0 * tau)

        p = np.zeros_like(g)
        r = g.copy()
        d = r.copy()
        rr = float(np.dot(r, r))
        target = rtol * np.sqrt(rr)
        for k in range(maxiter):
            Hd = hess(d)
            curv = None if Hd is None else float(np.dot(d, Hd))
            if curv is None or curv <= 0.0:
                return p if k > 0 else g.copy()
            a = rr / curv
            p += a * d
            r -= a * Hd
            rr_new = float(np.dot(r, r))
            if np.sqrt(rr_new) <= target:
                break
            d = r + (rr_new / rr) * d
            rr = rr_new
        return p

    def gauss_newton(self, c, g, rtol, maxiter):
        """Solve ``(J^T J + lam**2) p = g / 2`` by conjugate gradients."""
        F = self.to_F(c)
        lam2 = self.lam**2
        n = c.size

        def matvec(v):
            return self.vjp(F, self.jvp(F, v)) + lam2 * v

        op = spla.LinearOperator((n, n), matvec=matvec, dtype=float)
        p, _ = spla.cg(op, 0.5 * g, rtol=rtol, atol=0.0, maxiter=maxiter)
        return p


def _ascend(prob: _Whitened, c0: np.ndarray, cfg: EstimatorConfig) -> dict:
    """Monotone ascent with Armijo backtracking from ``c0``."""
    ev = prob.evaluate(c0)
    if ev is None:
        return {"status": "invalid-start", "objective": float("nan"), "c": c0,
                "grad_norm": float("nan"), "iterations": 0, "converged": False}
    J, g = ev
    c = c0.copy()
    method = "gradient" if cfg.memory == 0 and cfg.method == "lbfgs" else cfg.method
    S, Y = [], []
    step = cfg.step0
    status = "max-iter"
    it = 0
    for it in range(1, cfg.max_iter + 1):
        gn = float(np.linalg.norm(g))
        if gn <= cfg.gtol:
            it -= 1
            break
        t = 1.0
        steepest = False
        if method == "gauss-newton":
            p = prob.gauss_newton(c, g, cfg.cg_rtol, cfg.cg_maxiter)
        elif method == "newton-cg":
            p = prob.newton(c, g, cfg.cg_rtol, cfg.cg_maxiter)
        elif method == "lbfgs" and S:
            p = _two_loop(g, S, Y)
        else:
            p, t, steepest = g / gn, step, True
        slope = float(np.dot(g, p))
        if not slope > 0.0:
            S.clear(), Y.clear()
            p, t, steepest = g / gn, step, True
            slope = gn
        accepted = None
        for _ in range(cfg.max_backtracks):
            trial = prob.evaluate(c + t * p)
            if trial is not None and trial[0] >= J + cfg.armijo * t * slope:
                accepted = trial
                break
            t *= cfg.backtrack
        if accepted is None:
            status = "line-search"
            break
        J_new, g_new = accepted
        if not J_new >= J:
            raise OptimizationError(f"ascent violated: {J_new!r} < {J!r}")
        if J_new == J:
            # no representable gain left: the objective's rounding floor
            status = "stalled"
            break
        s_vec = t * p
        y_vec = g - g_new  # gradient change of -J
        if method == "lbfgs" and np.dot(s_vec, y_vec) > 1e-12 * np.linalg.norm(s_vec) * np.linalg.norm(y_vec):
            S.append(s_vec)
            Y.append(y_vec)
            if len(S) > cfg.memory:
                S.pop(0), Y.pop(0)
        if steepest:
            step = 2.0 * t
        c = c + s_vec
        J, g = J_new, g_new
    gn = float(np.linalg.norm(g))
    conv = gn <= cfg.gtol
    return {"status": "converged" if conv else status, "objective": J, "c": c,
            "grad_norm": gn, "iterations": it, "converged": bool(conv)}


def _two_loop(g, S, Y):
    """L-BFGS two-loop recursion; returns an ascent direction for ``J``."""
    q = g.copy()
    coef = []
    for s, y in zip(reversed(S), reversed(Y)):
        rho = 1.0 / np.dot(y, s)
        a = rho * np.dot(s, q)
        coef.append((rho, a))
        q -= a * y
    q *= np.dot(S[-1], Y[-1]) / np.dot(Y[-1], Y[-1])
    for (s, y), (rho, a) in zip(zip(S, Y), reversed(coef)):
        q += (a - rho * np.dot(y, q)) * s
    return q


def _start_points(prob: _Whitened, cfg: EstimatorConfig) -> list:
    n = prob.scale.size
    starts = []
    rng = rng_for(cfg.seed, 7919)
    for r in range(cfg.restarts):
        if r == 0 and cfg.init == "zero":
            starts.append(np.zeros(n))
        elif r == 0 and cfg.init == "given":
            starts.append(prob.to_c(np.asarray(cfg.init_values, dtype=float)))
        else:
            starts.append(cfg.init_scale * rng.standard_normal(n))
    return starts


def estimate(obs: Observation, model, link: Optional[LinkFunction], metric: SobolevMetric,
             config: EstimatorConfig) -> EstimateResult:
    """Maximise the penalised functional with multi-start ascent.

    Linear models use the closed-form ridge solution.
    """
    _check_link(model, link, config.allow_irregular)
    if not metric.domain.same_as(model.domain):
        raise DomainError("metric: lives on a different domain from the model")
    lam = config.lam
    prob = _Whitened(obs, model, link, metric, lam)

    if _is_linear(model):
        F = model.geom.ridge_solve_values(metric, obs.values, lam)
        J, g = prob.evaluate(prob.to_c(F))
        gn = float(np.linalg.norm(g))
        conv = gn <= config.gtol
        J += prob.offset
        rec = {"status": "closed-form", "objective": J, "grad_norm": gn,
               "iterations": 1, "converged": bool(conv)}
        return EstimateResult(GridFunction(metric.domain, F), None, model.geom.forward(F),
                              J, gn, 1, 0, bool(conv), [rec])

    starts = _start_points(prob, config)
    if config.workers > 1 and len(starts) > 1:
        with ThreadPoolExecutor(config.workers) as pool:
            runs = list(pool.map(lambda c0: _ascend(prob, c0, config), starts))
    else:
        runs = [_ascend(prob, c0, config) for c0 in starts]

    best = None
    for i, run in enumerate(runs):
        J = run["objective"]
        if not math.isfinite(J):
            continue
        if best is None or J > runs[best]["objective"] + 1e-12 * max(1.0, abs(J)):
            best = i
    for run in runs:
        run["objective"] += prob.offset
    trace = [{k: v for k, v in run.items() if k != "c"} for run in runs]
    if best is None:
        raise OptimizationError("every restart diverged", trace)
    win = runs[best]
    F = prob.to_F(win["c"])
    f = link.forward(F)
    if not np.all(f > link.k_min):
        raise OptimizationError("estimate violates the coefficient lower bound", trace)
    u = model.solve(f)
    return EstimateResult(GridFunction(metric.domain, F), GridFunction(metric.domain, f), u,
                          win["objective"], win["grad_norm"], win["iterations"], best,
                          win["converged"], trace)
