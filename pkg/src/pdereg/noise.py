"""Discrete white-noise observations ``Y = u + eps * W``.

Each output coordinate carries a quadrature weight ``w`` (``h**d`` on grids,
the sinogram cell measure for the Radon transform).  Drawing
``Y_i = u_i + eps * z_i / sqrt(w_i)`` with i.i.d. standard normal ``z`` gives
``<Y, psi>`` mean ``<u, psi>`` and variance ``eps**2 ||psi||**2`` for every
``psi``, which is the defining property of the white-noise model.

Randomness comes from the counter-based Philox generator.  A replicate
index is folded into the seed through ``SeedSequence.spawn_key``, so each
replicate has its own stream regardless of scheduling order.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import DomainError


def rng_for(seed: int, *stream: int) -> np.random.Generator:
    """Philox generator for ``seed`` and an optional stream path."""
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(s) for s in stream))
    return np.random.Generator(np.random.Philox(ss))


@dataclass(frozen=True)
class Observation:
    """Noisy data on an output space.

    Attributes
    ----------
    values : ndarray
        Observed data, flattened.
    weight : float or ndarray
        Quadrature weight(s) of the output inner product.
    epsilon : float
        Noise level.
    seed : int or None
    stream : tuple of int
    space : dict
        Descriptor of the output space.
    meta : dict
        Free-form generation metadata such as the true coefficient.
    """

    values: np.ndarray
    weight: object
    epsilon: float
    seed: Optional[int] = None
    stream: tuple = ()
    space: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    def inner(self, a: np.ndarray, b: np.ndarray) -> float:
        return float(np.sum(self.weight * a * b))

    def to_json(self) -> str:
        w = self.weight
        payload = {
            "epsilon": self.epsilon,
            "seed": self.seed,
            "stream": list(self.stream),
            "space": self.space,
            "meta": self.meta,
            "weight": w.tolist() if isinstance(w, np.ndarray) else float(w),
            "values": self.values.tolist(),
        }
        return json.dumps(payload, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "Observation":
        p = json.loads(text)
        w = p["weight"]
        w = np.asarray(w, dtype=float) if isinstance(w, list) else float(w)
        return cls(np.asarray(p["values"], dtype=float), w, float(p["epsilon"]), p.get("seed"),
                   tuple(p.get("stream", ())), p.get("space", {}), p.get("meta", {}))


def synthesize(u: np.ndarray, epsilon: float, seed: int, weight=1.0, stream=(),
               space: Optional[dict] = None, meta: Optional[dict] = None) -> Observation:
    """Draw a white-noise observation of ``u``.

    Parameters
    ----------
    u : ndarray
        Noise-free output values.
    epsilon : float
        Noise level, strictly positive.
    seed : int
    weight : float or ndarray
        Quadrature weight of each output coordinate.
    stream : tuple of int
        Replicate path appended to the seed.
    """
    if not epsilon > 0:
        raise DomainError(f"epsilon: noise level must be positive, got {epsilon}")
    u = np.asarray(u, dtype=float).ravel()
    z = rng_for(seed, *stream).standard_normal(u.size)
    y = u + epsilon * z / np.sqrt(weight)
    return Observation(y, weight, float(epsilon), int(seed), tuple(int(s) for s in stream),
                       dict(space or {}), dict(meta or {}))


def pairing(obs: Observation, psi: np.ndarray) -> float:
    """Weighted inner product ``<Y, psi>``."""
    psi = np.asarray(psi, dtype=float).ravel()
    if psi.shape != obs.values.shape:
        raise DomainError(f"psi: expected {obs.values.size} values, got {psi.size}")
    return obs.inner(obs.values, psi)
