"""Exact leakage quantities for known systems, and measures derived from risks.

All risks use the 0-1 loss.  Column sums go through numpy's pairwise
summation, which keeps the error small for object spaces of 1e5 columns.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from .core import System, check_system

_CHUNK_ROWS = 64


class LeakageError(ValueError):
    """Raised when a leakage measure is undefined for the given risks."""


def _column_max_joint(system: System) -> np.ndarray:
    # Row chunks keep peak memory at a few copies of one chunk, not of mu.
    prior, channel = system.prior, system.channel
    best = np.zeros(channel.shape[1])
    for start in range(0, channel.shape[0], _CHUNK_ROWS):
        block = channel[start:start + _CHUNK_ROWS] * prior[start:start + _CHUNK_ROWS, None]
        np.maximum(best, block.max(axis=0), out=best)
    return best


def bayes_risk(system: System) -> float:
    """``1 - sum_o max_s C[s, o] * prior[s]``."""
    check_system(system)
    risk = 1.0 - _column_max_joint(system).sum()
    return float(min(max(risk, 0.0), 1.0))


def bayes_classifier(system: System) -> np.ndarray:
    """Bayes-optimal prediction for each column (smallest id on ties)."""
    check_system(system)
    return np.argmax(system.joint(), axis=0)


def random_guessing_error(prior) -> float:
    """Error of guessing the most likely secret: ``1 - max_s prior[s]``."""
    prior = np.asarray(prior, dtype=float)
    if prior.ndim != 1 or prior.size == 0 or np.any(prior < 0):
        raise ValueError("prior must be a non-empty nonnegative vector")
    return float(1.0 - prior.max())


def expected_error(classifier, system: System) -> float:
    """Expected 0-1 error of a classifier defined on every column.

    Parameters
    ----------
    classifier : sequence of int or mapping
        ``classifier[o]`` is the secret predicted for column ``o``.
    system : System
    """
    check_system(system)
    n_o = system.n_objects
    if isinstance(classifier, dict):
        missing = [o for o in range(n_o) if o not in classifier]
        if missing:
            raise ValueError(f"classifier undefined on columns {missing[:5]}")
        preds = np.array([classifier[o] for o in range(n_o)])
    else:
        preds = np.asarray(classifier)
        if preds.shape != (n_o,):
            raise ValueError(
                f"classifier must give one secret per column ({n_o}), got {preds.shape}")
    preds = preds.astype(np.int64)
    if preds.size and (preds.min() < 0 or preds.max() >= system.n_secrets):
        raise ValueError("classifier predicts secrets outside [0, |S|)")
    cols = np.arange(n_o)
    correct = system.channel[preds, cols] * system.prior[preds]
    return float(min(max(1.0 - correct.sum(), 0.0), 1.0))


def min_entropy_leakage(random_guessing: float, bayes_risk: float) -> float:
    """Min-entropy leakage in bits, ``log2(1 - R*) - log2(1 - R^pi)``."""
    _check_risk(random_guessing, "random_guessing")
    _check_risk(bayes_risk, "bayes_risk")
    if bayes_risk >= 1.0:
        raise LeakageError("min-entropy leakage is undefined when the Bayes risk is 1")
    if random_guessing >= 1.0:
        raise LeakageError("min-entropy leakage is undefined when R^pi is 1")
    return -math.log2(1.0 - random_guessing) + math.log2(1.0 - bayes_risk)


def derived_leakages(random_guessing: float, bayes_risk: float):
    """Multiplicative and additive leakage.

    These are the usual vulnerability ratio and difference of quantitative
    information flow (min-vulnerability is ``1 - risk``): multiplicative
    ``(1 - R*) / (1 - R^pi)`` and additive ``R^pi - R*``.

    Returns
    -------
    (float, float)
    """
    _check_risk(random_guessing, "random_guessing")
    _check_risk(bayes_risk, "bayes_risk")
    if random_guessing >= 1.0:
        raise LeakageError("multiplicative leakage is undefined when R^pi is 1")
    return (1.0 - bayes_risk) / (1.0 - random_guessing), random_guessing - bayes_risk


def nn_lower_bound(nn_error: float, n_secrets: int, tol: float = 1e-12) -> float:
    """Lower bound on the Bayes risk from an (asymptotic) NN error.

    ``(S-1)/S * (1 - sqrt(1 - S/(S-1) * R_NN))``; the radicand is clamped at 0
    when it is negative by less than `tol`.
    """
    if n_secrets < 2:
        raise ValueError("the NN bound needs at least two secrets")
    if not 0.0 <= nn_error <= 1.0:
        raise ValueError("nn_error must be a probability")
    ratio = (n_secrets - 1) / n_secrets
    radicand = 1.0 - nn_error / ratio
    if radicand < -tol:
        raise LeakageError(
            f"NN error {nn_error} exceeds the maximum {ratio:.6g} for {n_secrets} secrets")
    return ratio * (1.0 - math.sqrt(max(radicand, 0.0)))


def _check_risk(value, name):
    if not 0.0 <= value <= 1.0:
        raise ValueError(f"{name} must lie in [0, 1], got {value}")


@dataclass(frozen=True)
class LeakageReport:
    bayes_risk: float
    random_guessing: float
    min_entropy_leakage: float
    multiplicative_leakage: float
    additive_leakage: float

    @classmethod
    def from_risks(cls, random_guessing: float, bayes_risk: float) -> "LeakageReport":
        mult, add = derived_leakages(random_guessing, bayes_risk)
        return cls(bayes_risk, random_guessing,
                   min_entropy_leakage(random_guessing, bayes_risk), mult, add)

    @classmethod
    def for_system(cls, system: System) -> "LeakageReport":
        return cls.from_risks(random_guessing_error(system.prior), bayes_risk(system))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["min_entropy_leakage_bits"] = d.pop("min_entropy_leakage")
        return {k: d[k] for k in ("bayes_risk", "random_guessing",
                                  "min_entropy_leakage_bits",
                                  "multiplicative_leakage", "additive_leakage")}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def empirical_prior(secrets: Sequence[int], n_secrets: int) -> np.ndarray:
    counts = np.bincount(np.asarray(secrets, dtype=np.int64), minlength=n_secrets)
    return counts / counts.sum()
