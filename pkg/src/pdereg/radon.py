"""Discrete parallel-beam Radon transform on the unit disc.

Rays are indexed by an angle ``theta_i = pi * i / n_theta`` (``i = 1..n_theta``)
and an offset ``s_j`` at the midpoints of a uniform partition of ``(-1, 1)``.
Each line integral is a composite midpoint rule, with step at most ``h/2``,
applied to the bilinear interpolant of the image, extended by its boundary
trace (zero unless given).  Since the
transform is even under ``(theta, s) -> (theta + pi, -s)`` only half the
angles are traced and the quadrature weight is doubled, so sinogram inner
products approximate the integral over ``(0, 2 pi] x (-1, 1)``.

The transform is assembled once as a sparse matrix.  The ridge solve works
in the eigenbasis of the disc Laplacian, where the penalty is diagonal, and
uses a dense Cholesky factorisation cached per ``lambda``.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.sparse as sp

from .errors import DomainError, SolverError
from .grid import Domain, GridFunction
from .sobolev import SobolevMetric


@dataclass(frozen=True)
class Sinogram:
    """Values on the ray lattice together with their quadrature weights."""

    theta: np.ndarray
    s: np.ndarray
    values: np.ndarray
    weight: float

    def inner(self, other: "Sinogram") -> float:
        return float(self.weight * np.dot(self.values.ravel(), other.values.ravel()))

    def norm(self) -> float:
        return float(np.sqrt(self.inner(self)))

    def to_csv(self) -> str:
        lines = ["theta,s,value,weight"]
        for i, t in enumerate(self.theta):
            for j, s in enumerate(self.s):
                lines.append(f"{t!r},{s!r},{self.values[i, j]!r},{self.weight!r}")
        return "\n".join(lines) + "\n"


class RadonGeometry:
    """Parallel-beam geometry over a disc domain.

    Parameters
    ----------
    domain : Domain
        A disc domain.
    n_theta, n_s : int
        Number of angles in ``(0, pi]`` and offsets in ``(-1, 1)``, each at least 4.
    step : float, optional
        Ray quadrature step, at most ``h / 2`` (the default).
    """

    def __init__(self, domain: Domain, n_theta: int, n_s: int, step: float | None = None):
        if domain.shape != "disc":
            raise DomainError(f"domain: Radon geometry needs a disc, got {domain.shape}")
        if n_theta < 4 or n_s < 4:
            raise DomainError(f"n_theta, n_s: need at least 4 angles and offsets, got {n_theta}, {n_s}")
        step = domain.h / 2.0 if step is None else float(step)
        if not 0.0 < step <= domain.h / 2.0:
            raise DomainError(f"step: must lie in (0, h/2], got {step}")
        self.domain = domain
        self.n_theta = int(n_theta)
        self.n_s = int(n_s)
        self.step = step
        self.theta = np.pi * np.arange(1, n_theta + 1) / n_theta
        self.s = -1.0 + (np.arange(n_s) + 0.5) * (2.0 / n_s)
        self.weight = 2.0 * (np.pi / n_theta) * (2.0 / n_s)
        self.matrix = self._assemble()
        self._gram = None
        self._factors = {}
        self.max_factors = 2
        self._lock = threading.Lock()

    def __getstate__(self):
        state = self.__dict__.copy()
        state.update(_lock=None, _gram=None, _factors={})
        return state

    def __setstate__(self, state):
        self.__dict__.update(state)
        self._lock = threading.Lock()

    @property
    def n_rays(self) -> int:
        return self.n_theta * self.n_s

    def descriptor(self) -> dict:
        return {"domain": self.domain.descriptor(), "n_theta": self.n_theta,
                "n_s": self.n_s, "step": self.step}

    def _assemble(self) -> sp.csr_matrix:
        dom = self.domain
        h, n = dom.h, dom.n
        number = -np.ones((n + 2, n + 2), dtype=np.int64)
        number[dom.mask] = np.arange(dom.size)
        bi = dom.boundary_index
        number[bi[:, 0], bi[:, 1]] = dom.size + np.arange(dom.boundary_size)
        rows, cols, vals = [], [], []
        for i, th in enumerate(self.theta):
            c, s_ = np.cos(th), np.sin(th)
            for j, s in enumerate(self.s):
                half = np.sqrt(max(1.0 - s * s, 0.0))
                nseg = max(1, int(np.ceil(2.0 * half / self.step)))
                dt = 2.0 * half / nseg
                t = -half + (np.arange(nseg) + 0.5) * dt
                px = s * c - t * s_
                py = s * s_ + t * c
                gx = (px + 1.0) / h
                gy = (py + 1.0) / h
                ix = np.floor(gx).astype(np.int64)
                iy = np.floor(gy).astype(np.int64)
                fx = gx - ix
                fy = gy - iy
                idx, wts = [], []
                for ox, oy, w in ((0, 0, (1 - fx) * (1 - fy)), (1, 0, fx * (1 - fy)),
                                  (0, 1, (1 - fx) * fy), (1, 1, fx * fy)):
                    kx = np.clip(ix + ox, 0, n + 1)
                    ky = np.clip(iy + oy, 0, n + 1)
                    node = number[kx, ky]
                    ok = node >= 0
                    idx.append(node[ok])
                    wts.append(w[ok] * dt)
                idx = np.concatenate(idx)
                wts = np.concatenate(wts)
                row = i * self.n_s + j
                rows.append(np.full(idx.size, row))
                cols.append(idx)
                vals.append(wts)
        R = sp.csr_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(self.n_rays, dom.size + dom.boundary_size),
        )
        R.sum_duplicates()
        # columns of the boundary ring only act on an explicit trace
        self.boundary_matrix = R[:, dom.size:].tocsr()
        return R[:, :dom.size].tocsr()

    # -- linear algebra ---------------------------------------------------
    def forward(self, F: np.ndarray) -> np.ndarray:
        return self.matrix @ np.asarray(F, dtype=float)

    def adjoint(self, S: np.ndarray) -> np.ndarray:
        """Adjoint with respect to the sinogram and grid inner products."""
        return self.matrix.T @ (self.weight * np.asarray(S, dtype=float).ravel()) / self.domain.cell_volume

    def sinogram(self, values: np.ndarray) -> Sinogram:
        return Sinogram(self.theta, self.s, np.asarray(values, dtype=float).reshape(self.n_theta, self.n_s),
                        self.weight)

    def _spectral_gram(self, metric: SobolevMetric):
        """``M.T W M`` with ``M`` the transform in metric coordinates."""
        if self._gram is None or self._gram[0] is not metric:
            if metric.domain is not self.domain and not metric.domain.same_as(self.domain):
                raise DomainError("metric: lives on a different domain")
            basis = metric._Q / metric._scale
            M = np.asarray(self.matrix @ basis)
            G = self.weight * (M.T @ M)
            self._gram = (metric, M, 0.5 * (G + G.T))
            self._factors = {}
        return self._gram

    def ridge_solve_values(self, metric: SobolevMetric, y: np.ndarray, lam: float) -> np.ndarray:
        if not lam > 0:
            raise DomainError(f"lambda: must be positive, got {lam}")
        y = np.asarray(y, dtype=float).ravel()
        with self._lock:
            _, M, G = self._spectral_gram(metric)
            pen = lam**2 * metric.weights(metric.alpha)
            key = float(lam)
            fac = self._factors.get(key)
            if fac is None:
                try:
                    fac = scipy.linalg.cho_factor(G + np.diag(pen), lower=False)
                except np.linalg.LinAlgError as exc:
                    raise SolverError(f"ridge system is not positive definite: {exc}") from exc
                # dense factors are large; keep only the most recent ones
                while len(self._factors) >= self.max_factors:
                    self._factors.pop(next(iter(self._factors)))
                self._factors[key] = fac
        rhs = self.weight * (M.T @ y)
        if not np.any(rhs):
            return np.zeros(self.domain.size)
        c = scipy.linalg.cho_solve(fac, rhs)
        res = np.linalg.norm(G @ c + pen * c - rhs) / np.linalg.norm(rhs)
        if res > 1e-8:
            raise SolverError(f"ridge solve residual {res:.3e} exceeds 1e-8")
        return metric.synthesize(c)


def radon_forward(F: GridFunction, geom: RadonGeometry) -> Sinogram:
    """Line integrals of the bilinear interpolant of ``F``.

    Nodes outside the disc read the boundary trace of ``F`` when present
    and zero otherwise.
    """
    if not F.domain.same_as(geom.domain):
        raise DomainError("F: grid function and geometry use different domains")
    vals = geom.forward(F.values)
    if F.boundary is not None:
        vals = vals + geom.boundary_matrix @ F.boundary
    return geom.sinogram(vals)


def radon_adjoint(S: Sinogram, geom: RadonGeometry) -> GridFunction:
    """Back-projection, the exact adjoint of :func:`radon_forward`."""
    if S.values.shape != (geom.n_theta, geom.n_s):
        raise DomainError(f"S: expected shape {(geom.n_theta, geom.n_s)}, got {S.values.shape}")
    return GridFunction(geom.domain, geom.adjoint(S.values))


def ridge_solve(geom: RadonGeometry, metric: SobolevMetric, y: Sinogram, lam: float) -> GridFunction:
    """Maximiser of ``2<y, RF> - ||RF||**2 - lam**2 ||F||_{H^alpha}**2``."""
    return GridFunction(geom.domain, geom.ridge_solve_values(metric, y.values, lam))


@dataclass(eq=False)
class RadonModel:
    """Linear forward map ``F -> RF`` in the estimator's model protocol."""

    geom: RadonGeometry
    kind: str = field(default="radon", init=False)
    kappa: float = field(default=0.5, init=False)
    gamma: float = field(default=0.0, init=False)

    @property
    def domain(self) -> Domain:
        return self.geom.domain

    @property
    def output_weight(self) -> float:
        return self.geom.weight

    def descriptor(self) -> dict:
        return {"kind": "radon", **self.geom.descriptor(), "kappa": 0.5, "gamma": 0.0}
