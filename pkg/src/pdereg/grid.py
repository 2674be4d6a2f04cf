"""Lattice domains, grid functions and the discrete Dirichlet Laplacian.

Three domains are supported: the unit interval, the unit square and the
open unit disc.  The disc is obtained by masking the lattice of the
bounding box ``[-1, 1]^2``.  Every domain carries an edge list that couples
interior nodes to each other and to the first ring of boundary nodes, so
all stencil operators in the package share one assembly path.

Node values are indexed in a fixed order: interior nodes first (row-major
over lattice indices), then boundary nodes.  Inner products use the cell
volume ``h**d`` as quadrature weight.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.sparse as sp

from .errors import DomainError

SHAPES = ("interval", "square", "disc")


@dataclass(frozen=True, eq=False)
class Domain:
    """Immutable lattice domain.

    Attributes
    ----------
    d, n, shape
        Dimension, nodes per axis and shape name.
    h : float
        Lattice spacing.
    index : ndarray, shape (m, d)
        Lattice indices of interior nodes.
    boundary_index : ndarray, shape (b, d)
        Lattice indices of boundary nodes.
    points, boundary_points : ndarray
        Physical coordinates of interior and boundary nodes.
    edges : ndarray, shape (E, 2)
        Undirected stencil edges in combined numbering.  The first column
        is always an interior node.
    mask : ndarray of bool
        Interior mask over the full lattice ``(n + 2)**d``.
    """

    d: int
    n: int
    shape: str
    h: float
    index: np.ndarray = field(repr=False)
    boundary_index: np.ndarray = field(repr=False)
    points: np.ndarray = field(repr=False)
    boundary_points: np.ndarray = field(repr=False)
    edges: np.ndarray = field(repr=False)
    mask: np.ndarray = field(repr=False)

    @property
    def size(self) -> int:
        """Number of interior nodes."""
        return self.index.shape[0]

    @property
    def boundary_size(self) -> int:
        return self.boundary_index.shape[0]

    @property
    def cell_volume(self) -> float:
        return self.h**self.d

    @property
    def origin(self) -> float:
        """Coordinate of lattice index 0 along every axis."""
        return -1.0 if self.shape == "disc" else 0.0

    @property
    def is_tensor(self) -> bool:
        return self.shape != "disc"

    def descriptor(self) -> dict:
        return {"d": self.d, "n": self.n, "shape": self.shape}

    def same_as(self, other: "Domain") -> bool:
        return self is other or self.descriptor() == other.descriptor()

    def laplacian_matrices(self):
        """Return ``(A, B)`` with ``Delta_h u = A u_int + B u_bdy``."""
        cached = getattr(self, "_lap_cache", None)
        if cached is None:
            cached = stencil_matrices(self, np.ones(self.edges.shape[0]) / self.h**2)
            object.__setattr__(self, "_lap_cache", cached)
        return cached

    def grid_function(self, values, boundary=None) -> "GridFunction":
        return GridFunction(self, values, boundary)

    def evaluate(self, func, boundary: bool = False) -> "GridFunction":
        """Sample ``func(x)`` (``x`` of shape ``(k, d)``) on the nodes."""
        vals = np.asarray(func(self.points), dtype=float)
        bvals = None
        if boundary:
            bvals = np.asarray(func(self.boundary_points), dtype=float)
        return GridFunction(self, vals, bvals)


def make_domain(d: int, n: int, shape: str) -> Domain:
    """Build a lattice domain.

    Parameters
    ----------
    d : {1, 2}
        Spatial dimension.
    n : int
        Interior nodes per axis (bounding box for the disc), at least 3.
    shape : {"interval", "square", "disc"}

    Returns
    -------
    Domain
    """
    if shape not in SHAPES:
        raise DomainError(f"shape: unknown shape {shape!r}, expected one of {SHAPES}")
    if int(n) != n or n < 3:
        raise DomainError(f"n: need an integer n >= 3, got {n!r}")
    n = int(n)
    if (shape == "interval") != (d == 1) or d not in (1, 2):
        raise DomainError(f"d: dimension {d!r} is inconsistent with shape {shape!r}")

    if shape == "disc":
        h = 2.0 / (n + 1)
        origin = -1.0
    else:
        h = 1.0 / (n + 1)
        origin = 0.0

    full = (n + 2,) * d
    coords = [origin + h * np.arange(n + 2)] * d
    grids = np.meshgrid(*coords, indexing="ij")
    if shape == "disc":
        r2 = sum(g**2 for g in grids)
        mask = r2 < 1.0
    else:
        mask = np.zeros(full, dtype=bool)
        mask[(slice(1, n + 1),) * d] = True
    if not mask.any():
        raise DomainError("n: disc mask is empty")

    index = np.argwhere(mask)
    number = -np.ones(full, dtype=np.int64)
    number[mask] = np.arange(index.shape[0])

    # boundary ring: lattice neighbours of interior nodes outside the mask
    ring = np.zeros(full, dtype=bool)
    for ax in range(d):
        for step in (-1, 1):
            shifted = np.roll(mask, step, axis=ax)
            ring |= shifted & ~mask
    bindex = np.argwhere(ring)
    number[ring] = index.shape[0] + np.arange(bindex.shape[0])

    edges = []
    for ax in range(d):
        a = np.argwhere(mask)
        b = a.copy()
        b[:, ax] += 1
        nb = number[tuple(b.T)]
        na = number[tuple(a.T)]
        keep = nb >= 0
        edges.append(np.column_stack([na[keep], nb[keep]]))
        # edges from a boundary node (lower side) into the interior
        c = a.copy()
        c[:, ax] -= 1
        nc = number[tuple(c.T)]
        low = nc >= index.shape[0]
        edges.append(np.column_stack([na[low], nc[low]]))
    edges = np.concatenate(edges, axis=0)
    edges = edges[np.lexsort((edges[:, 1], edges[:, 0]))]

    return Domain(
        d=d,
        n=n,
        shape=shape,
        h=h,
        index=index,
        boundary_index=bindex,
        points=origin + h * index.astype(float),
        boundary_points=origin + h * bindex.astype(float),
        edges=edges,
        mask=mask,
    )


def stencil_matrices(domain: Domain, weights: np.ndarray):
    """Assemble the weighted graph Laplacian split into interior/boundary parts.

    ``(A u + B ub)_i = sum_{j~i} w_ij (u_j - u_i)``.
    """
    m, nb = domain.size, domain.boundary_size
    a, b = domain.edges[:, 0], domain.edges[:, 1]
    inner = b < m
    wi = weights[inner]
    rows = np.concatenate([a[inner], b[inner], a, b[inner]])
    cols = np.concatenate([b[inner], a[inner], a, b[inner]])
    vals = np.concatenate([wi, wi, -weights, -wi])
    A = sp.csc_matrix((vals, (rows, cols)), shape=(m, m))
    bo = ~inner
    B = sp.csr_matrix((weights[bo], (a[bo], b[bo] - m)), shape=(m, nb))
    return A, B


class GridFunction:
    """Real function on the interior nodes of a domain, with optional trace.

    Parameters
    ----------
    domain : Domain
    values : array_like, shape (m,)
    boundary : array_like, shape (b,), optional
        Values on the boundary ring.  ``None`` means zero extension.
    """

    __slots__ = ("domain", "values", "boundary")

    def __init__(self, domain: Domain, values, boundary=None):
        vals = np.array(values, dtype=float).reshape(-1)
        if vals.shape[0] != domain.size:
            raise DomainError(
                f"values: expected {domain.size} interior values, got {vals.shape[0]}"
            )
        if not np.all(np.isfinite(vals)):
            raise DomainError("values: grid function has non-finite entries")
        if boundary is not None:
            bvals = np.array(boundary, dtype=float).reshape(-1)
            if np.ndim(boundary) == 0:
                bvals = np.full(domain.boundary_size, float(boundary))
            if bvals.shape[0] != domain.boundary_size:
                raise DomainError(
                    f"boundary: expected {domain.boundary_size} trace values, "
                    f"got {bvals.shape[0]}"
                )
            if not np.all(np.isfinite(bvals)):
                raise DomainError("boundary: trace has non-finite entries")
            boundary = bvals
        vals.setflags(write=False)
        if boundary is not None:
            boundary.setflags(write=False)
        self.domain = domain
        self.values = vals
        self.boundary = boundary

    def __repr__(self):
        return f"GridFunction({self.domain.shape}, n={self.domain.n}, m={self.values.size})"

    @property
    def trace(self) -> np.ndarray:
        """Boundary values, zeros when no trace is attached."""
        if self.boundary is None:
            return np.zeros(self.domain.boundary_size)
        return self.boundary

    @property
    def zero_boundary(self) -> bool:
        return self.boundary is None or not np.any(self.boundary)

    def with_values(self, values, boundary=None) -> "GridFunction":
        return GridFunction(self.domain, values, boundary)

    def __add__(self, other):
        _check_same(self, other)
        return GridFunction(self.domain, self.values + other.values)

    def __sub__(self, other):
        _check_same(self, other)
        return GridFunction(self.domain, self.values - other.values)

    def __mul__(self, scalar):
        return GridFunction(self.domain, self.values * float(scalar))

    __rmul__ = __mul__

    def to_json(self) -> str:
        payload = {"domain": self.domain.descriptor(), "values": self.values.tolist()}
        if self.boundary is not None:
            payload["boundary"] = self.boundary.tolist()
        return json.dumps(payload, sort_keys=True)

    @classmethod
    def from_json(cls, text: str, domain: Optional[Domain] = None) -> "GridFunction":
        payload = json.loads(text)
        desc = payload["domain"]
        if domain is None:
            domain = make_domain(desc["d"], desc["n"], desc["shape"])
        elif domain.descriptor() != desc:
            raise DomainError(f"domain: file describes {desc}, got {domain.descriptor()}")
        return cls(domain, payload["values"], payload.get("boundary"))

    def to_csv(self) -> str:
        cols = ["index"] + [f"x{k + 1}" for k in range(self.domain.d)] + ["value"]
        lines = [",".join(cols)]
        for i, (p, v) in enumerate(zip(self.domain.points, self.values)):
            lines.append(",".join([str(i)] + [repr(float(c)) for c in p] + [repr(float(v))]))
        return "\n".join(lines) + "\n"


def _check_same(u: GridFunction, v: GridFunction) -> None:
    if not u.domain.same_as(v.domain):
        raise DomainError(
            f"domain: mismatch {u.domain.descriptor()} vs {v.domain.descriptor()}"
        )


def inner_product(u: GridFunction, v: GridFunction) -> float:
    """Quadrature inner product ``h**d * sum(u * v)`` over interior nodes."""
    _check_same(u, v)
    return float(u.domain.cell_volume * np.dot(u.values, v.values))


def norm(u: GridFunction) -> float:
    return float(np.sqrt(inner_product(u, u)))


def laplacian_apply(u: GridFunction) -> GridFunction:
    """Five-point (three-point in 1D) Laplacian, reading the trace if present."""
    A, B = u.domain.laplacian_matrices()
    out = A @ u.values
    if u.boundary is not None:
        out = out + B @ u.boundary
    return GridFunction(u.domain, out)


def c1_norm(f: GridFunction) -> float:
    """Discrete C^1 surrogate: max |f| plus the largest edge difference quotient.

    The trace is used on boundary edges when present, otherwise zero.
    """
    dom = f.domain
    full = np.concatenate([f.values, f.trace])
    a, b = dom.edges[:, 0], dom.edges[:, 1]
    grad = np.abs(full[b] - full[a]).max() / dom.h
    return float(np.abs(f.values).max() + grad)
