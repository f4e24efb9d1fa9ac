"""Synthetic systems with known channels, and closed-form error curves.

Geometric channels put secrets ``1..w`` on the object line ``1..w'`` through
``g(s) = s * w' / w`` and add two-sided exponential noise of rate ``nu``.
Objects keep their 1-based index as coordinate so that ``|g(s) - o|`` is the
distance the nearest-neighbor rules see.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Tuple

import numpy as np

from .core import System, uniform_prior

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class GeometricSpec:
    n_secrets: int
    n_objects: int
    nu: float

    def __post_init__(self):
        if self.n_secrets < 1 or self.n_objects < 1:
            raise ValueError("geometric sizes must be at least 1")
        if not math.isfinite(self.nu):
            raise ValueError("nu must be finite")
        if self.nu < 0:
            raise ValueError("nu must be nonnegative")


def _lambdas(n_objects: int, nu: float) -> np.ndarray:
    e = math.exp(nu)
    lam = np.full(n_objects, (e - 1.0) / (e + 1.0))
    lam[0] = lam[-1] = e / (e + 1.0)
    return lam


def geometric_channel(spec: GeometricSpec) -> Tuple[np.ndarray, float]:
    """Row-normalized geometric channel and the largest pre-normalization
    deviation of a row sum from 1.

    The textbook normalizer ``lambda`` only makes rows sum to exactly 1 when
    ``g(s)`` is an interior integer, so rows are rescaled afterwards.
    """
    w, wp, nu = spec.n_secrets, spec.n_objects, spec.nu
    if w > wp:
        base, residual = geometric_channel(GeometricSpec(wp, wp, nu))
        return base[np.arange(w) % wp], residual
    g = np.arange(1, w + 1) * (wp / w)
    o = np.arange(1, wp + 1, dtype=float)
    C = np.exp(-nu * np.abs(g[:, None] - o[None, :]))
    C *= _lambdas(wp, nu)
    sums = C.sum(axis=1)
    residual = float(np.max(np.abs(sums - 1.0)))
    C /= sums[:, None]
    return C, residual


def geometric_system(spec: GeometricSpec, prior=None) -> System:
    """Geometric system (repeated rows ``s mod |O|`` when ``|S| > |O|``)."""
    C, residual = geometric_channel(spec)
    log.debug("geometric %s: max row-sum residual before normalization %.3g", spec, residual)
    prior = uniform_prior(spec.n_secrets) if prior is None else prior
    return System(prior, C, np.arange(1, spec.n_objects + 1, dtype=float))


def multimodal_system(spec: GeometricSpec, shift: int = 5, weights=(0.5, 0.5),
                      boundary: str = "truncate", prior=None) -> System:
    """Mixture ``w1 * C[s] + w2 * C[s + 2*shift]`` of two geometric rows.

    Parameters
    ----------
    shift : int
        Half the secret offset of the second mode.
    boundary : {"truncate", "wrap"}
        What to do when ``s + 2*shift`` is not a secret.  ``truncate`` keeps
        the single geometric row ``C[s]``; ``wrap`` takes the offset modulo
        ``|S|``.
    """
    w1, w2 = (float(x) for x in weights)
    if w1 < 0 or w2 < 0 or abs(w1 + w2 - 1.0) > 1e-12:
        raise ValueError("mixture weights must be nonnegative and sum to 1")
    if shift < 0:
        raise ValueError("shift must be nonnegative")
    C, _ = geometric_channel(spec)
    S = spec.n_secrets
    target = np.arange(S) + 2 * shift
    if boundary == "wrap":
        M = w1 * C + w2 * C[target % S]
    elif boundary == "truncate":
        M = C.copy()
        inside = target < S
        M[inside] = w1 * C[inside] + w2 * C[target[inside]]
    else:
        raise ValueError(f"unknown boundary mode {boundary!r}")
    prior = uniform_prior(S) if prior is None else prior
    return System(prior, M, np.arange(1, spec.n_objects + 1, dtype=float))


def spiky_system(q: int) -> System:
    """Two secrets on a ring of ``q`` objects: secret 0 emits the even
    objects and secret 1 the odd ones, each uniformly.

    Objects sit at coordinates ``0..q-1``; estimate with ``Metric(period=q)``.
    """
    if q < 2 or q % 2:
        raise ValueError("spiky systems need an even q >= 2")
    C = np.zeros((2, q))
    C[0, 0::2] = 2.0 / q
    C[1, 1::2] = 2.0 / q
    return System(uniform_prior(2), C, np.arange(q, dtype=float))


def random_system(n_secrets: int, n_objects: int, seed) -> System:
    """Uniform(0, 1) entries with rows normalized; uniform prior."""
    if n_secrets < 1 or n_objects < 1:
        raise ValueError("sizes must be at least 1")
    rng = np.random.default_rng(seed)
    C = rng.random((n_secrets, n_objects))
    C /= C.sum(axis=1, keepdims=True)
    return System(uniform_prior(n_secrets), C)


def uniform_system(n_secrets: int, n_objects: int) -> System:
    if n_secrets < 1 or n_objects < 1:
        raise ValueError("sizes must be at least 1")
    return System(uniform_prior(n_secrets), np.full((n_secrets, n_objects), 1.0 / n_objects))


# --- closed forms ------------------------------------------------------------

def spiky_nn_error(x: float, q: int) -> float:
    """Approximate expected NN error on the spiky system after ``n = x*q``
    examples.  At ``x = 0`` (no training data) the error is 1/2."""
    if x < 0:
        raise ValueError("x must be nonnegative")
    if x == 0:
        return 0.5
    e = math.exp(-x)
    return 2 * e * (-math.expm1(-q * x)) / ((1 + e * e) * (1 + e))


def spiky_freq_error(x: float) -> float:
    """Expected frequentist error on the spiky system after ``n = x*q``
    examples: half the mass of the still unseen objects."""
    if x < 0:
        raise ValueError("x must be nonnegative")
    return 0.5 * math.exp(-x)


def frequentist_approximation(r_star: float, r_pi: float, n_objects: int, n) -> np.ndarray:
    """Interpolation between ``R^pi`` and ``R*`` weighted by the chance
    ``(1 - 1/|O|)^n`` that a given object is still unseen."""
    if n_objects < 1:
        raise ValueError("n_objects must be at least 1")
    unseen = (1.0 - 1.0 / n_objects) ** np.asarray(n, dtype=float)
    out = r_star * (1.0 - unseen) + r_pi * unseen
    return float(out) if np.ndim(out) == 0 else out


def frequentist_crossover(n_objects: int) -> float:
    """Sample size after which the approximation is closer to ``R*`` than
    to ``R^pi``: ``-ln 2 / ln(1 - 1/|O|)``."""
    if n_objects < 2:
        return 0.0
    return -math.log(2.0) / math.log1p(-1.0 / n_objects)
