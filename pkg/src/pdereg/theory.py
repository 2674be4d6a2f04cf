"""Closed-form rate exponents, entropy bounds and the critical radius.

A regularity profile ``(alpha, kappa, gamma, d)`` describes a forward map
that is Lipschitz from the negative Sobolev norm of order ``kappa`` with a
constant growing like the ``gamma``-th power of the ``H^alpha`` norm.  The
effective smoothness is ``s = (alpha + kappa) / d``.  Exponents are exact
fractions; absolute constants are explicit arguments defaulting to 1.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np
from scipy.optimize import bisect

from .errors import DomainError, NumericalError

TARGETS = ("prediction", "generic", "div_f", "div_lower", "schr_f", "radon_f")


def _frac(x) -> Fraction:
    if isinstance(x, Fraction):
        return x
    if isinstance(x, int):
        return Fraction(x)
    return Fraction(str(x)).limit_denominator(10**6)


@dataclass(frozen=True)
class RegularityProfile:
    alpha: int
    kappa: Fraction
    gamma: Fraction
    d: int

    @property
    def s(self) -> Fraction:
        return (self.alpha + self.kappa) / self.d

    def as_tuple(self):
        return (self.alpha, float(self.kappa), float(self.gamma), self.d)


def make_profile(alpha: int, kappa, gamma, d: int) -> RegularityProfile:
    """Validated regularity profile.

    Requires ``alpha > max(d/2 - kappa, gamma d / 2 - kappa)``.
    """
    if int(alpha) != alpha or alpha < 1:
        raise DomainError(f"alpha: need a positive integer, got {alpha!r}")
    if d not in (1, 2):
        raise DomainError(f"d: need 1 or 2, got {d!r}")
    k, g = _frac(kappa), _frac(gamma)
    if k < 0 or g < 0:
        raise DomainError("kappa, gamma: must be non-negative")
    bound = max(Fraction(d, 2) - k, g * d / 2 - k)
    if not alpha > bound:
        raise DomainError(f"alpha: need alpha > {bound}, got {alpha}")
    return RegularityProfile(int(alpha), k, g, int(d))


def rate_exponent(profile: RegularityProfile, target: str = "prediction", beta=0) -> Fraction:
    """Exact convergence-rate exponent.

    Parameters
    ----------
    target : str
        ``prediction`` (``H^beta`` loss on the solution, using the profile's
        ``kappa``), ``generic``, ``div_f``, ``div_lower``, ``schr_f`` or
        ``radon_f``.
    beta : real, optional
        Loss order for ``prediction``, in ``[0, alpha + kappa]``.
    """
    a, k, d = profile.alpha, profile.kappa, profile.d
    if target == "prediction":
        b = _frac(beta)
        if not 0 <= b <= a + k:
            raise DomainError(f"beta: must lie in [0, {a + k}], got {beta}")
        return 2 * (a + k - b) / (2 * (a + k) + d)
    if target == "generic":
        return 2 * (a + k) / (2 * (a + k) + d)
    if target in ("div_f", "div_lower"):
        return Fraction(2 * (a - 1), 2 * (a + 1) + d)
    if target == "schr_f":
        return Fraction(2 * a, 2 * (a + 2) + d)
    if target == "radon_f":
        return Fraction(2 * a, 2 * a + 3)
    raise DomainError(f"target: unknown target {target!r}, expected one of {TARGETS}")


def entropy_bound(rho: float, R: float, lam: float, profile: RegularityProfile, C: float = 1.0) -> float:
    """Metric entropy bound ``(R m / (lam rho))**(1/s)``, ``m = C (1 + (R/lam)**gamma)``."""
    for name, v in (("rho", rho), ("R", R), ("lam", lam), ("C", C)):
        if not v > 0:
            raise DomainError(f"{name}: must be positive, got {v}")
    s = float(profile.s)
    m = C * (1.0 + (R / lam) ** float(profile.gamma))
    return float((R * m / (lam * rho)) ** (1.0 / s))


def dudley_majorant(lam: float, R: float, profile: RegularityProfile, c: float = 1.0) -> float:
    """``R + c R lam**(-1/(2s)) (1 + (R/lam)**(gamma/(2s)))``."""
    if not (lam > 0 and R > 0 and c >= 0):
        raise DomainError("lam, R: must be positive and c non-negative")
    s = float(profile.s)
    g = float(profile.gamma)
    return float(R + c * R * lam ** (-1.0 / (2 * s)) * (1.0 + (R / lam) ** (g / (2 * s))))


def critical_gap(delta: float, eps: float, lam: float, profile: RegularityProfile, c1: float = 1.0) -> float:
    """Left minus right side of the critical-radius inequality."""
    s = float(profile.s)
    g = float(profile.gamma)
    rhs = c1 * (1.0 + lam ** (-1.0 / (2 * s)) * (1.0 + (delta / lam) ** (g / (2 * s))))
    return delta / eps - rhs


def critical_delta(eps: float, lam: float, profile: RegularityProfile, c1: float = 1.0,
                   max_doublings: int = 200) -> float:
    """Smallest ``delta`` with ``delta/eps >= c1 (1 + lam**(-1/(2s)) (1 + (delta/lam)**(gamma/(2s))))``.

    A bracket is grown by doubling and then bisected until the bracket is
    at the limit of double precision, which is far below the required
    relative width of ``1e-9``.

    Raises
    ------
    NumericalError
        If no finite solution is found within the doubling budget.
    """
    for name, v in (("eps", eps), ("lam", lam), ("c1", c1)):
        if not v > 0:
            raise DomainError(f"{name}: must be positive, got {v}")
    s = float(profile.s)

    def gap(dl):
        return critical_gap(dl, eps, lam, profile, c1)

    # the gamma = 0 solution is a lower bound for every gamma
    lo = c1 * eps * (1.0 + lam ** (-1.0 / (2 * s)))
    if gap(lo) >= 0.0:
        return lo
    hi = 2.0 * lo
    for _ in range(max_doublings):
        if gap(hi) >= 0.0:
            break
        lo, hi = hi, 2.0 * hi
    else:
        raise NumericalError("critical_delta: no finite solution within the bracket budget")
    root = bisect(gap, lo, hi, xtol=1e-300, rtol=4 * np.finfo(float).eps, maxiter=2000)
    # return the side of the root where the inequality holds
    while gap(root) < 0.0:
        root = np.nextafter(root, np.inf)
    return float(root)


def fitted_slope(x, y) -> float:
    """Least-squares slope of ``log y`` against ``log x``."""
    return float(np.polyfit(np.log(x), np.log(y), 1)[0])


def delta_slope(profile: RegularityProfile, eps_grid=None, c1: float = 1.0) -> float:
    """Slope of ``log critical_delta`` vs ``log eps`` under the rate schedule of ``lambda``."""
    if eps_grid is None:
        eps_grid = np.logspace(-4, -1, 13)
    p = float(rate_exponent(profile, "generic"))
    deltas = [critical_delta(e, e**p, profile, c1) for e in eps_grid]
    return fitted_slope(eps_grid, deltas)
