"""Training-example storage and exact neighbor search.

Examples are bucketed by their exact observation coordinates; each bucket
keeps per-secret counts.  Distances are compared through *keys* that
preserve order and ties exactly (squared Euclidean distance, or the ring
distance for circular 1-d spaces), so equidistant neighbors are recognised
as ties rather than split by rounding.

Shell queries (the k nearest examples plus every example tied with the
k-th) go through ``scipy.spatial.cKDTree`` for up to three dimensions and a
linear scan above that.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.sparse import csr_matrix
from scipy.spatial import cKDTree

KD_TREE_MAX_DIM = 3


@dataclass(frozen=True)
class Metric:
    """Euclidean distance, optionally wrapped on a ring of length `period`.

    A ring is only meaningful for 1-d observations lying in ``[0, period)``.
    """

    period: Optional[float] = None

    @property
    def is_ring(self) -> bool:
        return self.period is not None

    def keys(self, points: np.ndarray, x) -> np.ndarray:
        """Order-preserving distance keys from every row of `points` to `x`."""
        diff = points - np.asarray(x, dtype=float)
        if self.period is not None:
            a = np.abs(diff[:, 0])
            return np.minimum(a, self.period - a)
        if diff.shape[1] == 1:
            return diff[:, 0] * diff[:, 0]
        return np.einsum("ij,ij->i", diff, diff)

    def distances(self, points: np.ndarray, x) -> np.ndarray:
        k = self.keys(points, x)
        return k if self.period is not None else np.sqrt(k)

    def check(self, dim: int) -> None:
        if self.period is not None and dim != 1:
            raise ValueError("ring topology requires 1-dimensional observations")


EUCLIDEAN = Metric()


def vote(secrets, preferred: Optional[int] = None) -> int:
    """Most frequent secret; ties go to `preferred` if tied, else smallest id."""
    counts = Counter(int(s) for s in secrets)
    top = max(counts.values())
    tied = [s for s, c in counts.items() if c == top]
    if preferred is not None and preferred in tied:
        return int(preferred)
    return min(tied)


class NeighborIndex:
    """Growing store of training examples with exact-coordinate buckets.

    Parameters
    ----------
    dim : int
        Observation dimension.
    n_secrets : int
    metric : Metric
    """

    def __init__(self, dim: int, n_secrets: int, metric: Metric = EUCLIDEAN):
        metric.check(dim)
        self.dim = dim
        self.n_secrets = n_secrets
        self.metric = metric
        self._bucket_of = {}
        self._points = np.empty((16, dim))
        self._n_buckets = 0
        self._ex_bucket = np.empty(16, dtype=np.int64)
        self._ex_secret = np.empty(16, dtype=np.int64)
        self._n = 0
        self.secret_counts = np.zeros(n_secrets, dtype=np.int64)
        self._tree = None
        self._csr = None

    def __len__(self) -> int:
        return self._n

    @property
    def n_buckets(self) -> int:
        return self._n_buckets

    @property
    def points(self) -> np.ndarray:
        """Distinct observations, one row per bucket."""
        return self._points[:self._n_buckets]

    @property
    def secrets(self) -> np.ndarray:
        return self._ex_secret[:self._n]

    @property
    def observations(self) -> np.ndarray:
        return self.points[self._ex_bucket[:self._n]]

    def add(self, observation, secret: int) -> int:
        """Add one example; returns its bucket id."""
        if not 0 <= secret < self.n_secrets:
            raise ValueError(f"secret {secret} outside [0, {self.n_secrets})")
        obs = np.asarray(observation, dtype=float).reshape(-1)
        if obs.shape[0] != self.dim:
            raise ValueError(f"observation has dimension {obs.shape[0]}, expected {self.dim}")
        key = tuple(obs.tolist())
        b = self._bucket_of.get(key)
        if b is None:
            b = self._n_buckets
            if b == self._points.shape[0]:
                self._points = np.concatenate([self._points, np.empty_like(self._points)])
            self._points[b] = obs
            self._bucket_of[key] = b
            self._n_buckets += 1
        if self._n == self._ex_bucket.shape[0]:
            self._ex_bucket = np.concatenate([self._ex_bucket, np.empty_like(self._ex_bucket)])
            self._ex_secret = np.concatenate([self._ex_secret, np.empty_like(self._ex_secret)])
        self._ex_bucket[self._n] = b
        self._ex_secret[self._n] = secret
        self._n += 1
        self.secret_counts[secret] += 1
        self._tree = None
        self._csr = None
        return b

    def add_many(self, secrets, observations) -> None:
        obs = np.asarray(observations, dtype=float).reshape(len(secrets), -1)
        for s, o in zip(np.asarray(secrets).tolist(), obs):
            self.add(o, s)

    @classmethod
    def from_dataset(cls, dataset, n_secrets=None, metric: Metric = EUCLIDEAN):
        idx = cls(dataset.dim, n_secrets or dataset.secret_count(), metric)
        idx.add_many(dataset.secrets, dataset.observations)
        return idx

    def bucket(self, observation) -> Optional[int]:
        key = tuple(np.asarray(observation, dtype=float).reshape(-1).tolist())
        return self._bucket_of.get(key)

    def counts(self) -> csr_matrix:
        """Bucket-by-secret count matrix."""
        if self._csr is None:
            n = self._n
            self._csr = csr_matrix(
                (np.ones(n, dtype=np.int64), (self._ex_bucket[:n], self._ex_secret[:n])),
                shape=(self._n_buckets, self.n_secrets))
            self._csr.sum_duplicates()
        return self._csr

    def bucket_counts(self, b: int) -> np.ndarray:
        csr = self.counts()
        row = np.zeros(self.n_secrets, dtype=np.int64)
        lo, hi = csr.indptr[b], csr.indptr[b + 1]
        row[csr.indices[lo:hi]] = csr.data[lo:hi]
        return row

    def prior_argmax(self) -> int:
        return int(np.argmax(self.secret_counts))

    # --- shell queries ---------------------------------------------------

    def _kdtree(self) -> cKDTree:
        if self._tree is None:
            pts = self.points
            if self.metric.is_ring:
                pts = np.mod(pts, self.metric.period)
                self._tree = cKDTree(pts, boxsize=self.metric.period)
            else:
                self._tree = cKDTree(pts)
        return self._tree

    def _candidates(self, queries: np.ndarray, k: int):
        """Per query, bucket ids that certainly include the k nearest examples
        and every example tied with the k-th."""
        n_b = self._n_buckets
        if self.dim > KD_TREE_MAX_DIM or n_b <= k:
            every = np.arange(n_b)
            return [every] * len(queries)
        tree = self._kdtree()
        q = np.mod(queries, self.metric.period) if self.metric.is_ring else queries
        dist, _ = tree.query(q, k=k)
        dist = dist.reshape(len(queries), -1)
        # k buckets hold at least k examples, so the k-th example is no
        # farther than the k-th bucket; widen slightly so exact ties survive.
        radius = dist[:, -1] * (1 + 1e-9) + 1e-9
        return [np.asarray(c, dtype=np.int64)
                for c in tree.query_ball_point(q, radius)]

    def shells(self, queries, k: int):
        """Neighbor structure of each query for a k-NN vote.

        Returns
        -------
        prefix : (rows, keys, secrets)
            Every example strictly closer than the k-th nearest, flattened.
        shell_key : ndarray, shape (m,)
            Distance key of the k-th nearest example.
        shell : (rows, secrets, counts)
            Per-secret counts of all examples at exactly ``shell_key``.
        """
        if self._n == 0:
            raise ValueError("no training examples")
        if k < 1:
            raise ValueError("k must be positive")
        queries = np.asarray(queries, dtype=float).reshape(-1, self.dim)
        k_eff = min(k, self._n)
        csr = self.counts()
        totals = np.asarray(csr.sum(axis=1)).ravel()
        pts = self.points
        p_rows, p_keys, p_secs = [], [], []
        s_rows, s_secs, s_cnts = [], [], []
        shell_key = np.empty(len(queries))
        cands = self._candidates(queries, k_eff)
        for i, (q, cand) in enumerate(zip(queries, cands)):
            keys = self.metric.keys(pts[cand], q)
            order = np.argsort(keys, kind="stable")
            cand, keys = cand[order], keys[order]
            cum = np.cumsum(totals[cand])
            j = int(np.searchsorted(cum, k_eff))
            dk = keys[j]
            shell_key[i] = dk
            for b, key in zip(cand.tolist(), keys.tolist()):
                if key > dk:
                    break
                lo, hi = csr.indptr[b], csr.indptr[b + 1]
                secs, cnts = csr.indices[lo:hi], csr.data[lo:hi]
                if key < dk:
                    for s_, c_ in zip(secs.tolist(), cnts.tolist()):
                        p_rows.extend([i] * c_)
                        p_keys.extend([key] * c_)
                        p_secs.extend([s_] * c_)
                else:
                    s_rows.extend([i] * len(secs))
                    s_secs.extend(secs.tolist())
                    s_cnts.extend(cnts.tolist())
        prefix = (np.array(p_rows, dtype=np.int64), np.array(p_keys, dtype=float),
                  np.array(p_secs, dtype=np.int64))
        shell = (np.array(s_rows, dtype=np.int64), np.array(s_secs, dtype=np.int64),
                 np.array(s_cnts, dtype=np.int64))
        return prefix, shell_key, shell


# --- single-query classifiers ------------------------------------------------
#
# Straightforward scans over every stored example.  They are the reference
# semantics of each rule and are used to check the incremental evaluators.

def _require(index: NeighborIndex):
    if len(index) == 0:
        raise ValueError("classifier has no training examples")


def frequentist_predict(index: NeighborIndex, o) -> int:
    """Most frequent secret among training examples equal to `o`, or the
    most frequent secret overall when `o` was never observed."""
    _require(index)
    b = index.bucket(o)
    if b is None:
        return vote_counts(index.secret_counts)
    return vote_counts(index.bucket_counts(b))


def vote_counts(counts) -> int:
    counts = np.asarray(counts)
    return int(np.flatnonzero(counts == counts.max())[0])


def _sorted_neighbors(index: NeighborIndex, o):
    keys = index.metric.keys(index.observations, o)
    order = np.argsort(keys, kind="stable")
    return keys[order], index.secrets[order]


def nn_predict(index: NeighborIndex, o) -> int:
    """Majority secret among all training examples at minimal distance."""
    _require(index)
    keys, secs = _sorted_neighbors(index, o)
    return vote(secs[keys == keys[0]])


def knn_predict(index: NeighborIndex, o, k: int) -> int:
    """k-NN vote with tie blocks resolved towards the closest neighbors.

    When the neighbors tied with the k-th one extend past position k, the
    block is replaced by copies of its own majority secret, appended after
    the strictly closer neighbors and truncated to k votes.
    """
    _require(index)
    if k < 1:
        raise ValueError("k must be at least 1")
    keys, secs = _sorted_neighbors(index, o)
    n = len(keys)
    if n <= k or keys[k - 1] != keys[k]:
        return vote(secs[:k])
    start = int(np.searchsorted(keys, keys[k - 1], side="left"))
    stop = int(np.searchsorted(keys, keys[k - 1], side="right"))
    block_winner = vote(secs[start:stop])
    ballot = list(secs[:start]) + [block_winner] * (k - start)
    return vote(ballot, preferred=block_winner)
