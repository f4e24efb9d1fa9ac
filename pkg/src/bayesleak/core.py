"""Systems, datasets, sampling and the on-disk formats they use.

A *system* is a prior over secrets together with a row-stochastic channel
matrix ``C[s, o] = P(o | s)``.  Observations are always stored as real
vectors: discrete systems embed each column as a coordinate taken from
``object_values`` (column index by default), so the same estimators work on
discrete channels and on continuous mechanisms.
"""

from __future__ import annotations

import io
import os
from dataclasses import dataclass, field
from typing import Iterator, List, Optional, Tuple

import numpy as np

ROW_SUM_TOL = 1e-9


class ValidationError(ValueError):
    """Raised when a system or dataset violates its invariants."""


class FormatError(ValueError):
    """Raised on malformed dataset or channel files."""


@dataclass(frozen=True, eq=False)
class System:
    """A prior over secrets and a channel matrix.

    Parameters
    ----------
    prior : ndarray, shape (S,)
    channel : ndarray, shape (S, O)
    object_values : ndarray, shape (O, d), optional
        Coordinates of each column in observation space.  Defaults to the
        column index as a 1-d coordinate.
    """

    prior: np.ndarray
    channel: np.ndarray
    object_values: Optional[np.ndarray] = None

    def __post_init__(self):
        prior = np.asarray(self.prior, dtype=float)
        channel = np.atleast_2d(np.asarray(self.channel, dtype=float))
        values = self.object_values
        if values is None:
            values = np.arange(channel.shape[1], dtype=float)
        values = np.asarray(values, dtype=float)
        if values.ndim == 1:
            values = values[:, None]
        for arr in (prior, channel, values):
            arr.setflags(write=False)
        object.__setattr__(self, "prior", prior)
        object.__setattr__(self, "channel", channel)
        object.__setattr__(self, "object_values", values)

    @property
    def n_secrets(self) -> int:
        return self.channel.shape[0]

    @property
    def n_objects(self) -> int:
        return self.channel.shape[1]

    def joint(self) -> np.ndarray:
        """The joint distribution ``mu[s, o] = prior[s] * C[s, o]``."""
        return self.prior[:, None] * self.channel

    def with_prior(self, prior) -> "System":
        return System(prior, self.channel, self.object_values)


def uniform_prior(n_secrets: int) -> np.ndarray:
    return np.full(n_secrets, 1.0 / n_secrets)


def validate(system: System) -> List[str]:
    """Report every invariant violation of `system`; never raises."""
    problems = []
    prior, channel = system.prior, system.channel
    if prior.ndim != 1 or prior.size < 1:
        problems.append(f"prior: expected a non-empty vector, got shape {prior.shape}")
        return problems
    if not np.all(np.isfinite(prior)):
        problems.append("prior: non-finite entries")
    for s in np.flatnonzero(prior < 0):
        problems.append(f"prior[{s}]: negative entry {prior[s]:.3g}")
    total = prior.sum()
    if abs(total - 1.0) > ROW_SUM_TOL:
        problems.append(f"prior: sums to {total:.12g} (off by {total - 1.0:.3g})")
    if channel.ndim != 2:
        problems.append(f"channel: expected a matrix, got shape {channel.shape}")
        return problems
    if channel.shape[0] != prior.size:
        problems.append(
            f"channel: {channel.shape[0]} rows but prior has {prior.size} entries")
    if not np.all(np.isfinite(channel)):
        problems.append("channel: non-finite entries")
    rows, cols = np.nonzero(channel < 0)
    for s, o in zip(rows, cols):
        problems.append(f"channel[{s}, {o}]: negative entry {channel[s, o]:.3g}")
    sums = channel.sum(axis=1)
    for s in np.flatnonzero(np.abs(sums - 1.0) > ROW_SUM_TOL):
        problems.append(
            f"channel row {s}: sums to {sums[s]:.12g} (off by {sums[s] - 1.0:.3g})")
    if system.object_values.shape[0] != channel.shape[1]:
        problems.append(
            f"object_values: {system.object_values.shape[0]} entries for "
            f"{channel.shape[1]} channel columns")
    return problems


def check_system(system: System) -> System:
    problems = validate(system)
    if problems:
        head = "; ".join(problems[:5])
        more = f" (+{len(problems) - 5} more)" if len(problems) > 5 else ""
        raise ValidationError(f"invalid system: {head}{more}")
    return system


@dataclass(eq=False)
class Dataset:
    """An ordered multiset of (secret, observation) examples.

    ``secrets`` has shape (n,) and ``observations`` shape (n, d).
    """

    secrets: np.ndarray
    observations: np.ndarray
    source: str = ""
    seed: Optional[int] = None
    n_secrets: Optional[int] = field(default=None)

    def __post_init__(self):
        self.secrets = np.asarray(self.secrets, dtype=np.int64).reshape(-1)
        obs = np.asarray(self.observations, dtype=float)
        if obs.ndim == 1:
            obs = obs[:, None]
        if obs.shape[0] != self.secrets.shape[0]:
            raise ValidationError(
                f"{self.secrets.shape[0]} secrets but {obs.shape[0]} observations")
        self.observations = obs
        if self.secrets.size and self.secrets.min() < 0:
            raise ValidationError("secret ids must be nonnegative")
        if self.n_secrets is not None and self.secrets.size:
            if self.secrets.max() >= self.n_secrets:
                raise ValidationError(
                    f"secret id {self.secrets.max()} out of range [0, {self.n_secrets})")

    def __len__(self) -> int:
        return self.secrets.shape[0]

    def __iter__(self) -> Iterator[Tuple[int, np.ndarray]]:
        for s, o in zip(self.secrets, self.observations):
            yield int(s), o

    @property
    def dim(self) -> int:
        return self.observations.shape[1]

    def subset(self, idx) -> "Dataset":
        return Dataset(self.secrets[idx], self.observations[idx], self.source,
                       self.seed, self.n_secrets)

    def head(self, n: int) -> "Dataset":
        return self.subset(slice(0, n))

    def secret_count(self) -> int:
        """Number of secrets: declared, or inferred as max id + 1."""
        if self.n_secrets is not None:
            return self.n_secrets
        return int(self.secrets.max()) + 1 if len(self) else 0


def _rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def sample(system: System, n: int, seed) -> Dataset:
    """Draw `n` examples from the joint distribution of `system`.

    Secrets come from the prior and observations from the secret's channel
    row, both by inverse CDF over cumulative sums.  The observation of an
    example is the coordinate of its column in ``object_values``.
    """
    check_system(system)
    if n < 0:
        raise ValueError("n must be nonnegative")
    rng = _rng(seed)
    d = system.object_values.shape[1]
    if n == 0:
        return Dataset(np.zeros(0, np.int64), np.zeros((0, d)),
                       source="sample", seed=_seed_of(seed), n_secrets=system.n_secrets)
    prior_cdf = np.cumsum(system.prior)
    prior_cdf[-1] = 1.0
    secrets = np.searchsorted(prior_cdf, rng.random(n), side="right")
    np.minimum(secrets, system.n_secrets - 1, out=secrets)
    u = rng.random(n)
    columns = np.empty(n, dtype=np.int64)
    for s in np.unique(secrets):
        where = np.flatnonzero(secrets == s)
        row_cdf = np.cumsum(system.channel[s])
        row_cdf /= row_cdf[-1]
        cols = np.searchsorted(row_cdf, u[where], side="right")
        columns[where] = np.minimum(cols, system.n_objects - 1)
    return Dataset(secrets, system.object_values[columns], source="sample",
                   seed=_seed_of(seed), n_secrets=system.n_secrets)


def _seed_of(seed):
    return seed if isinstance(seed, (int, np.integer)) else None


def split(dataset: Dataset, train_fraction: float, seed) -> Tuple[Dataset, Dataset]:
    """Randomly partition `dataset` into (train, holdout).

    The training part gets ``round(train_fraction * n)`` examples, clamped so
    that both parts are non-empty whenever ``n >= 2``.
    """
    if not 0 < train_fraction < 1:
        raise ValueError("train_fraction must lie strictly between 0 and 1")
    n = len(dataset)
    if n == 0:
        raise ValueError("cannot split an empty dataset")
    n_train = int(round(train_fraction * n))
    if n >= 2:
        n_train = min(max(n_train, 1), n - 1)
    perm = _rng(seed).permutation(n)
    return dataset.subset(perm[:n_train]), dataset.subset(perm[n_train:])


# --- file formats ---------------------------------------------------------

def _fmt(x: float) -> str:
    return repr(float(x))


def write_dataset(dataset: Dataset, path) -> None:
    """Write ``secret,x1,...,xd`` lines, no header, ``\\n`` endings."""
    lines = []
    for s, o in zip(dataset.secrets.tolist(), dataset.observations.tolist()):
        lines.append(",".join([str(s)] + [_fmt(x) for x in o]))
    text = "\n".join(lines) + ("\n" if lines else "")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def read_dataset(path, n_secrets: Optional[int] = None) -> Dataset:
    secrets, obs = [], []
    dim = None
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) < 2:
                raise FormatError(f"{path}:{lineno}: expected secret,x1,...")
            if dim is None:
                dim = len(parts) - 1
            elif len(parts) - 1 != dim:
                raise FormatError(
                    f"{path}:{lineno}: observation has dimension {len(parts) - 1}, "
                    f"expected {dim}")
            if not parts[0].isdigit():
                raise FormatError(f"{path}:{lineno}: bad secret id {parts[0]!r}")
            try:
                obs.append([float(x) for x in parts[1:]])
            except ValueError as exc:
                raise FormatError(f"{path}:{lineno}: {exc}") from None
            secrets.append(int(parts[0]))
    obs_arr = np.array(obs, dtype=float).reshape(len(obs), dim or 1)
    return Dataset(np.array(secrets, dtype=np.int64), obs_arr,
                   source=os.fspath(path), n_secrets=n_secrets)


def write_channel(system: System, path, include_prior: bool = True) -> None:
    """Write ``|S| |O|`` then one row per secret, then an optional prior line."""
    buf = io.StringIO()
    buf.write(f"{system.n_secrets} {system.n_objects}\n")
    for row in system.channel.tolist():
        buf.write(" ".join(_fmt(x) for x in row))
        buf.write("\n")
    if include_prior:
        buf.write("prior: " + " ".join(_fmt(x) for x in system.prior.tolist()) + "\n")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(buf.getvalue())


def read_channel(path) -> System:
    """Read a channel file; the prior defaults to uniform when absent."""
    with open(path, encoding="utf-8") as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    if not lines:
        raise FormatError(f"{path}: empty channel file")
    try:
        n_s, n_o = (int(x) for x in lines[0].split())
    except ValueError:
        raise FormatError(f"{path}: first line must be '|S| |O|'") from None
    rows, prior = [], None
    for line in lines[1:]:
        if line.startswith("prior:"):
            prior = [float(x) for x in line[len("prior:"):].split()]
            continue
        rows.append([float(x) for x in line.split()])
    if len(rows) != n_s or any(len(r) != n_o for r in rows):
        raise FormatError(f"{path}: expected {n_s} rows of {n_o} values")
    if prior is None:
        prior = uniform_prior(n_s)
    elif len(prior) != n_s:
        raise FormatError(f"{path}: prior has {len(prior)} entries, expected {n_s}")
    return System(np.array(prior), np.array(rows))
