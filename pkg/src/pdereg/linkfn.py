"""Link functions mapping an unconstrained parameter to a positive coefficient.

The regular link is a rescaled softplus,

    Phi(x) = K + (1 - K) * log(1 + exp(x)) / log(2),

which satisfies ``Phi(0) = 1``, is strictly increasing with range
``(K, inf)`` and has bounded derivatives of every order ``k >= 1``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.special import expit

from .errors import DomainError
from .grid import GridFunction

LOG2 = np.log(2.0)
LINK_NAMES = ("regular-softplus", "exp")


@dataclass(frozen=True)
class LinkFunction:
    """Triple ``(Phi, Phi', Phi^{-1})`` with lower bound ``k_min``."""

    name: str
    k_min: float
    forward: Callable[[np.ndarray], np.ndarray]
    derivative: Callable[[np.ndarray], np.ndarray]
    inverse: Callable[[np.ndarray], np.ndarray]
    regular: bool = True

    def __call__(self, x):
        return self.forward(x)

    def descriptor(self) -> dict:
        return {"name": self.name, "k_min": self.k_min}


def make_regular_link(k_min: float = 0.5) -> LinkFunction:
    """Softplus link with range ``(k_min, inf)``.

    Raises
    ------
    DomainError
        If ``k_min >= 1``.
    """
    k_min = float(k_min)
    if not k_min < 1.0:
        raise DomainError(f"k_min: must be below 1, got {k_min}")
    span = 1.0 - k_min

    def forward(x):
        return k_min + span * np.logaddexp(0.0, x) / LOG2

    def derivative(x):
        return span * expit(x) / LOG2

    def inverse(y):
        y = np.asarray(y, dtype=float)
        z = (y - k_min) / span * LOG2
        # log(exp(z) - 1) = z + log(1 - exp(-z))
        with np.errstate(divide="ignore", invalid="ignore"):
            return z + np.log(-np.expm1(-z))

    return LinkFunction("regular-softplus", k_min, forward, derivative, inverse, True)


def make_exp_link() -> LinkFunction:
    """Exponential link; not regular since its derivatives are unbounded."""
    return LinkFunction("exp", 0.0, np.exp, np.exp, np.log, regular=False)


def make_link(name: str, k_min: float = 0.5) -> LinkFunction:
    if name == "regular-softplus":
        return make_regular_link(k_min)
    if name == "exp":
        return make_exp_link()
    raise DomainError(f"link: unknown link {name!r}, expected one of {LINK_NAMES}")


def link_eval(link: LinkFunction, F: GridFunction, mode: str = "forward") -> GridFunction:
    """Apply the link pointwise.

    ``mode`` is one of ``forward``, ``derivative`` or ``inverse``.  The
    boundary trace is mapped too when present.
    """
    if mode == "forward":
        fn = link.forward
    elif mode == "derivative":
        fn = link.derivative
    elif mode == "inverse":
        bad = np.flatnonzero(F.values <= link.k_min)
        if bad.size:
            raise DomainError(
                f"F: inverse link needs values above {link.k_min}; "
                f"offending nodes {bad[:10].tolist()}"
            )
        if F.boundary is not None and np.any(F.boundary <= link.k_min):
            raise DomainError("F: boundary trace not above the link lower bound")
        fn = link.inverse
    else:
        raise DomainError(f"mode: unknown mode {mode!r}")
    bnd = None if F.boundary is None else fn(F.boundary)
    return GridFunction(F.domain, fn(F.values), bnd)


def regularity_probe(link: LinkFunction, k: int, interval=(-50.0, 50.0)):
    """Estimate ``sup |Phi^(k)|`` on an interval by nested finite differences.

    The sampling lattice has spacing ``min(1e-3, (b - a) / 1e4)`` and is
    anchored at integer multiples of that spacing, so nested intervals
    share their sample points.  ``Phi'`` is evaluated in closed form and
    differentiated ``k - 1`` times with central differences.

    Returns
    -------
    (sup, location) : tuple of float
    """
    if k not in (1, 2, 3, 4):
        raise DomainError(f"k: derivative order must be in 1..4, got {k}")
    a, b = map(float, interval)
    if not b > a:
        raise DomainError("interval: need a < b")
    dx = min(1e-3, (b - a) / 1e4)
    lo, hi = int(np.ceil(a / dx)), int(np.floor(b / dx))
    x = np.arange(lo, hi + 1) * dx
    j = k - 1
    # each central-difference pass drops one sample per side
    vals = link.derivative(np.arange(lo - j, hi + j + 1) * dx)
    for _ in range(j):
        vals = (vals[2:] - vals[:-2]) / (2.0 * dx)
    i = int(np.argmax(np.abs(vals)))
    return float(np.abs(vals[i])), float(x[i])
