"""Spectral Sobolev norms built on the eigenbasis of the discrete Laplacian.

For a zero-boundary grid function ``u`` the squared norm of order ``s`` is

    sum_k (1 + mu_k)**s <u, e_k>_h**2,

where ``(mu_k, e_k)`` are the eigenpairs of ``-Delta_h`` normalised in the
weighted inner product.  On the interval and the square the eigenvectors
are tensor sines and all transforms go through the orthonormal type-I DST.
On the disc the eigenpairs come from a dense symmetric eigensolver.

Internally coefficients live in the Euclidean-orthonormal basis:
``c = h**(d/2) * Q.T @ u`` so that ``<u, e_k>_h = c_k``.
"""

from __future__ import annotations

import numpy as np
import scipy.fft
import scipy.linalg

from .errors import CapacityError, DomainError
from .grid import Domain, GridFunction

DEFAULT_DENSE_BUDGET = 6000


class SobolevMetric:
    """Spectral representation of ``-Delta_h`` on a domain.

    Parameters
    ----------
    domain : Domain
    alpha : int
        Penalty order, at least 1.
    dense_budget : int
        Largest interior node count accepted for a dense eigendecomposition.
    """

    def __init__(self, domain: Domain, alpha: int, dense_budget: int = DEFAULT_DENSE_BUDGET):
        if int(alpha) != alpha or alpha < 1:
            raise DomainError(f"alpha: need a positive integer, got {alpha!r}")
        self.domain = domain
        self.alpha = int(alpha)
        h, d, n = domain.h, domain.d, domain.n
        self._scale = h ** (d / 2.0)
        if domain.is_tensor:
            k = np.arange(1, n + 1)
            mu1 = (4.0 / h**2) * np.sin(k * np.pi * h / 2.0) ** 2
            if d == 1:
                mu = mu1
            else:
                mu = (mu1[:, None] + mu1[None, :]).reshape(-1)
            self._Q = None
        else:
            m = domain.size
            if m > dense_budget:
                raise CapacityError(
                    f"n: disc with {m} interior nodes exceeds the dense "
                    f"eigendecomposition budget of {dense_budget}"
                )
            A, _ = domain.laplacian_matrices()
            mu, Q = scipy.linalg.eigh(-A.toarray())
            # deterministic sign: largest-magnitude entry positive
            piv = np.argmax(np.abs(Q), axis=0)
            Q = Q * np.sign(Q[piv, np.arange(m)])
            self._Q = Q
        self.mu = np.asarray(mu, dtype=float)
        self.mu.setflags(write=False)
        self.order = np.argsort(self.mu, kind="stable")
        self._weights = {}

    # -- transforms -------------------------------------------------------
    def coefficients(self, values: np.ndarray) -> np.ndarray:
        """Spectral coefficients ``<u, e_k>_h`` in the natural mode order."""
        values = np.asarray(values, dtype=float)
        if self._Q is None:
            n = self.domain.n
            grid = values.reshape((n,) * self.domain.d)
            return self._scale * scipy.fft.dstn(grid, type=1, norm="ortho").reshape(-1)
        return self._scale * (self._Q.T @ values)

    def synthesize(self, coeffs: np.ndarray) -> np.ndarray:
        """Inverse of :meth:`coefficients`."""
        coeffs = np.asarray(coeffs, dtype=float)
        if self._Q is None:
            n = self.domain.n
            grid = coeffs.reshape((n,) * self.domain.d)
            return scipy.fft.idstn(grid, type=1, norm="ortho").reshape(-1) / self._scale
        return (self._Q @ coeffs) / self._scale

    def weights(self, s: float) -> np.ndarray:
        """Spectral weights ``(1 + mu_k)**s``."""
        s = float(s)
        w = self._weights.get(s)
        if w is None:
            w = (1.0 + self.mu) ** s
            self._weights[s] = w
        return w

    def eigenvector(self, k: int) -> GridFunction:
        """Eigenvector of the ``k``-th smallest eigenvalue (``k`` starts at 1)."""
        if not 1 <= k <= self.mu.size:
            raise DomainError(f"k: mode index must lie in [1, {self.mu.size}], got {k}")
        c = np.zeros(self.mu.size)
        c[self.order[k - 1]] = 1.0
        return GridFunction(self.domain, self.synthesize(c))

    def eigenvalue(self, k: int) -> float:
        return float(self.mu[self.order[k - 1]])

    def apply_power(self, values: np.ndarray, s: float) -> np.ndarray:
        """``Lambda_s u = sum_k (1 + mu_k)**s <u, e_k>_h e_k``."""
        return self.synthesize(self.weights(s) * self.coefficients(values))

    def check_order(self, s: float) -> None:
        if not -2.0 <= s <= self.alpha:
            raise DomainError(f"s: order must lie in [-2, {self.alpha}], got {s}")

    def norm_values(self, values: np.ndarray, s: float) -> float:
        c = self.coefficients(values)
        return float(np.sqrt(np.dot(self.weights(s), c * c)))

    def to_json(self) -> dict:
        return {"domain": self.domain.descriptor(), "alpha": self.alpha, "mu": self.mu.tolist()}


def build_metric(domain: Domain, alpha: int, dense_budget: int = DEFAULT_DENSE_BUDGET) -> SobolevMetric:
    """Construct the spectral metric of ``domain`` for penalty order ``alpha``."""
    return SobolevMetric(domain, alpha, dense_budget)


def _check(metric: SobolevMetric, u: GridFunction) -> None:
    if not metric.domain.same_as(u.domain):
        raise DomainError("domain: grid function and metric live on different domains")


def sobolev_norm(metric: SobolevMetric, u: GridFunction, s: float) -> float:
    """Spectral Sobolev norm of order ``s`` in ``[-2, alpha]``.

    Positive orders require a zero boundary trace.
    """
    _check(metric, u)
    metric.check_order(s)
    if s > 0 and not u.zero_boundary:
        raise DomainError("u: positive-order norms need a zero boundary trace")
    return metric.norm_values(u.values, s)


def penalty_gradient(metric: SobolevMetric, F: GridFunction, lam: float) -> GridFunction:
    """Gradient of ``lam**2 * ||F||_{H^alpha}**2`` in the weighted inner product."""
    _check(metric, F)
    return GridFunction(F.domain, 2.0 * lam**2 * metric.apply_power(F.values, metric.alpha))


def interpolation_check(metric: SobolevMetric, u: GridFunction, beta1: float,
                        beta2: float, theta: float) -> float:
    """Ratio of the interpolated norm to the Hoelder product bound.

    Returns ``||u||_{theta b1 + (1 - theta) b2} / (||u||_b1**theta ||u||_b2**(1 - theta))``,
    which is at most one for the spectral norms; ``u = 0`` gives 1.
    """
    _check(metric, u)
    for name, b in (("beta1", beta1), ("beta2", beta2)):
        if not 0.0 <= b <= metric.alpha:
            raise DomainError(f"{name}: must lie in [0, {metric.alpha}], got {b}")
    if not 0.0 <= theta <= 1.0:
        raise DomainError(f"theta: must lie in [0, 1], got {theta}")
    c = metric.coefficients(u.values)
    c2 = c * c
    if not np.any(c2):
        return 1.0

    def nrm(s):
        return np.sqrt(np.dot(metric.weights(s), c2))

    mid = theta * beta1 + (1.0 - theta) * beta2
    return float(nrm(mid) / (nrm(beta1) ** theta * nrm(beta2) ** (1.0 - theta)))
