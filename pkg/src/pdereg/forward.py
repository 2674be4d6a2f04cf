"""Forward maps for the divergence-form and Schroedinger equations.

Both PDEs are discretised with the same edge-based stencil.  For the
divergence form the face coefficient is the arithmetic mean of the nodal
values,

    (L_f u)_i = h**-2 * sum_{j~i} (f_i + f_j) / 2 * (u_j - u_i),

and the Schroedinger operator is ``Delta_h - 2 diag(f)``.  ``V_f`` denotes the
zero-boundary inverse of either operator.  One sparse factorisation per
coefficient is cached and shared by the forward solve, the Frechet
derivative and the adjoint gradient.
"""

from __future__ import annotations

import threading
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import DegeneracyError, DomainError, SolverError
from .grid import Domain, GridFunction, laplacian_apply, stencil_matrices

KINDS = ("divergence", "schrodinger")
# regularity metadata (kappa, gamma) of each forward map
REGULARITY = {"divergence": (1.0, 4.0), "schrodinger": (2.0, 4.0), "radon": (0.5, 0.0)}


class _Factor:
    """Solver for ``-A x = b`` with ``A`` the (negative definite) operator."""

    def __init__(self, A: sp.csc_matrix, tol: float, iterative: bool, maxiter: int):
        self.A = A
        self.tol = tol
        self.maxiter = maxiter
        self.iterative = iterative
        if iterative:
            diag = -A.diagonal()
            self._precond = spla.LinearOperator(A.shape, matvec=lambda x: x / diag)
            self._neg = (-A).tocsr()
        else:
            try:
                self._lu = spla.splu(-A, permc_spec="MMD_AT_PLUS_A")
            except RuntimeError as exc:
                raise SolverError(f"sparse factorisation failed: {exc}") from exc

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        """Solve ``A x = rhs`` and verify the relative residual."""
        rhs = np.asarray(rhs, dtype=float)
        bnorm = np.linalg.norm(rhs)
        if bnorm == 0.0:
            return np.zeros_like(rhs)
        if self.iterative:
            x, info = spla.cg(self._neg, -rhs, rtol=0.1 * self.tol, atol=0.0,
                              maxiter=self.maxiter, M=self._precond)
            if info != 0:
                raise SolverError(f"conjugate gradients did not converge (info={info})")
        else:
            x = -self._lu.solve(rhs)
        res = np.linalg.norm(self.A @ x - rhs) / bnorm
        if not np.isfinite(res) or res > self.tol:
            raise SolverError(f"linear solve residual {res:.3e} exceeds tolerance {self.tol:.1e}")
        return x


@dataclass(eq=False)
class ForwardModel:
    """Forward map of one of the two elliptic problems.

    Parameters
    ----------
    kind : {"divergence", "schrodinger"}
    domain : Domain
    g : GridFunction
        Interior source for the divergence form; for the Schroedinger
        equation only its boundary trace is used.
    f_trace : float or ndarray
        Boundary values of the conductivity (divergence form only).
    tol : float
        Relative residual tolerance of every linear solve.
    direct_limit : int
        Largest interior node count solved with a sparse LU factorisation;
        larger systems use Jacobi-preconditioned conjugate gradients.
    """

    kind: str
    domain: Domain
    g: GridFunction
    f_trace: object = 1.0
    tol: float = 1e-10
    direct_limit: int = 40000
    maxiter: int = 20000
    cache_size: int = 8
    kappa: float = field(init=False)
    gamma: float = field(init=False)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise DomainError(f"kind: unknown forward model {self.kind!r}, expected {KINDS}")
        if not self.domain.same_as(self.g.domain):
            raise DomainError("g: data lives on a different domain")
        if self.kind == "schrodinger" and self.g.boundary is None:
            raise DomainError("g: the Schroedinger problem needs a boundary trace")
        self.kappa, self.gamma = REGULARITY[self.kind]
        self._trace = np.broadcast_to(
            np.asarray(self.f_trace, dtype=float), (self.domain.boundary_size,)
        ).copy()
        self._cache: "OrderedDict[bytes, tuple]" = OrderedDict()
        self._lock = threading.Lock()
        h2 = self.domain.h**2
        self._unit_A, self._unit_B = stencil_matrices(
            self.domain, np.ones(self.domain.edges.shape[0]) / h2
        )

    def __getstate__(self):
        state = self.__dict__.copy()
        state.update(_lock=None, _cache=OrderedDict())
        return state

    def __setstate__(self, state):
        self.__dict__.update(state)
        self._lock = threading.Lock()

    @property
    def output_weight(self) -> float:
        return self.domain.cell_volume

    # -- assembly ---------------------------------------------------------
    def _face_weights(self, f: np.ndarray, trace: Optional[np.ndarray] = None) -> np.ndarray:
        full = np.concatenate([f, self._trace if trace is None else trace])
        e = self.domain.edges
        return 0.5 * (full[e[:, 0]] + full[e[:, 1]]) / self.domain.h**2

    def operator(self, f: np.ndarray):
        """Return ``(A, B)``: interior operator and boundary coupling."""
        if self.kind == "divergence":
            return stencil_matrices(self.domain, self._face_weights(f))
        A = (self._unit_A - sp.diags(2.0 * f)).tocsc()
        return A, self._unit_B

    def _validate_f(self, f: np.ndarray) -> None:
        if f.shape != (self.domain.size,):
            raise DomainError(f"f: expected {self.domain.size} values, got {f.shape}")
        if not np.all(np.isfinite(f)):
            raise DomainError("f: non-finite coefficient")
        if self.kind == "divergence" and f.min() <= 0.0:
            raise DomainError(f"f: conductivity must be positive, min is {f.min():.3e}")
        if self.kind == "schrodinger" and f.min() < 0.0:
            raise DomainError(f"f: potential must be non-negative, min is {f.min():.3e}")

    def _state(self, f: np.ndarray):
        """Cached ``(factor, u_f)`` for coefficient values ``f``."""
        f = np.ascontiguousarray(f, dtype=float)
        key = f.tobytes()
        with self._lock:
            hit = self._cache.get(key)
            if hit is not None:
                self._cache.move_to_end(key)
                return hit
        self._validate_f(f)
        A, B = self.operator(f)
        fac = _Factor(A, self.tol, self.domain.size > self.direct_limit, self.maxiter)
        if self.kind == "divergence":
            u = fac.solve(self.g.values)
        else:
            u = fac.solve(-(B @ self.g.trace))
        state = (fac, u)
        with self._lock:
            self._cache[key] = state
            while len(self._cache) > self.cache_size:
                self._cache.popitem(last=False)
        return state

    # -- public maps ------------------------------------------------------
    def solve(self, f: np.ndarray) -> np.ndarray:
        """Interior values of ``u_f``."""
        return self._state(f)[1].copy()

    def apply_V(self, f: np.ndarray, psi: np.ndarray) -> np.ndarray:
        return self._state(f)[0].solve(psi)

    def frechet(self, f: np.ndarray, df: np.ndarray) -> np.ndarray:
        """Directional derivative of ``f -> u_f`` along zero-boundary ``df``."""
        fac, u = self._state(f)
        if self.kind == "divergence":
            w = self._face_weights(df, np.zeros(self.domain.boundary_size))
            L, _ = stencil_matrices(self.domain, w)
            return -fac.solve(L @ u)
        return fac.solve(2.0 * df * u)

    def adjoint(self, f: np.ndarray, r: np.ndarray) -> np.ndarray:
        """Gradient ``g`` with ``<g, df>_h = <r, frechet(f, df)>_h``."""
        fac, u = self._state(f)
        w = fac.solve(r)
        if self.kind == "schrodinger":
            return 2.0 * u * w
        m = self.domain.size
        e = self.domain.edges
        uf = np.concatenate([u, np.zeros(self.domain.boundary_size)])
        wf = np.concatenate([w, np.zeros(self.domain.boundary_size)])
        prod = 0.5 * (wf[e[:, 1]] - wf[e[:, 0]]) * (uf[e[:, 1]] - uf[e[:, 0]]) / self.domain.h**2
        grad = np.bincount(e[:, 0], weights=prod, minlength=m)
        inner = e[:, 1] < m
        grad += np.bincount(e[inner, 1], weights=prod[inner], minlength=m)
        return grad

    def descriptor(self) -> dict:
        return {"kind": self.kind, "domain": self.domain.descriptor(),
                "kappa": self.kappa, "gamma": self.gamma}


def make_model(kind: str, domain: Domain, g=1.0, f_trace=1.0, **kwargs) -> ForwardModel:
    """Convenience constructor with constant or callable problem data.

    For the divergence form ``g`` is the interior source; for the
    Schroedinger equation it is the boundary value.
    """
    if isinstance(g, GridFunction):
        gf = g
    elif kind == "schrodinger":
        gb = g(domain.boundary_points) if callable(g) else np.full(domain.boundary_size, float(g))
        gf = GridFunction(domain, np.zeros(domain.size), gb)
    else:
        gi = g(domain.points) if callable(g) else np.full(domain.size, float(g))
        gf = GridFunction(domain, gi)
    return ForwardModel(kind, domain, gf, f_trace=f_trace, **kwargs)


def _values(f) -> np.ndarray:
    return f.values if isinstance(f, GridFunction) else np.asarray(f, dtype=float)


def solve_divergence(f: GridFunction, g: GridFunction, domain: Domain, tol: float = 1e-10) -> GridFunction:
    """Solve ``div(f grad u) = g`` with ``u = 0`` on the boundary.

    The trace of ``f`` is used on boundary faces, defaulting to 1.
    """
    trace = 1.0 if f.boundary is None else f.boundary
    model = ForwardModel("divergence", domain, g, f_trace=trace, tol=tol)
    return GridFunction(domain, model.solve(f.values))


def solve_schrodinger(f: GridFunction, g: GridFunction, domain: Domain, tol: float = 1e-10) -> GridFunction:
    """Solve ``Delta u - 2 f u = 0`` with ``u = g`` on the boundary.

    ``g`` must carry a boundary trace.  The returned function carries it too.
    """
    model = ForwardModel("schrodinger", domain, g, tol=tol)
    return GridFunction(domain, model.solve(f.values), g.trace)


def apply_Vf(kind: str, f: GridFunction, psi: GridFunction) -> GridFunction:
    """Zero-boundary inverse of the operator of ``kind`` applied to ``psi``."""
    dom = f.domain
    g = GridFunction(dom, np.zeros(dom.size), np.zeros(dom.boundary_size))
    trace = 1.0 if f.boundary is None else f.boundary
    model = ForwardModel(kind, dom, g, f_trace=trace)
    return GridFunction(dom, model.apply_V(f.values, psi.values))


def frechet_derivative(model: ForwardModel, f: GridFunction, df: GridFunction) -> GridFunction:
    return GridFunction(model.domain, model.frechet(_values(f), _values(df)))


def adjoint_gradient(model: ForwardModel, f: GridFunction, residual: GridFunction) -> GridFunction:
    return GridFunction(model.domain, model.adjoint(_values(f), _values(residual)))


def recover_potential(u: GridFunction, floor: float = 1e-8) -> GridFunction:
    """Pointwise potential ``Delta_h u / (2 u)`` of a Schroedinger solution.

    Raises
    ------
    DegeneracyError
        If ``|u| < floor`` at any interior node.
    """
    bad = np.flatnonzero(np.abs(u.values) < floor)
    if bad.size:
        raise DegeneracyError(
            f"u: |u| below floor {floor:g} at {bad.size} nodes, first {bad[:10].tolist()}",
            nodes=bad.tolist(),
        )
    lap = laplacian_apply(u)
    return GridFunction(u.domain, lap.values / (2.0 * u.values))
