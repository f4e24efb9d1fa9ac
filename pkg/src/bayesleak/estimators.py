"""Black-box Bayes-risk estimators.

Each estimator is the error of a learning rule trained on the first ``n``
examples, tracked for every ``n``.  The error is measured either exactly,
over every column of a known finite system, or on a hold-out set.  Both are
the same computation: a set of evaluation points ``Q`` with a gain table
``G[q, s]`` (probability mass, or hold-out count, of secret ``s`` at ``q``),
and ``error = (total - sum_q G[q, pred(q)]) / total``.

Training is incremental.  Adding an example only touches the evaluation
points whose neighbor structure it enters, and only their predictions and
gains are recomputed.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Callable, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .core import Dataset, System, check_system
from .measures import expected_error
from .neighbors import EUCLIDEAN, Metric, NeighborIndex


class EstimatorKind(str, enum.Enum):
    FREQUENTIST = "frequentist"
    NN = "nn"
    KNN_LN = "knn-ln"
    KNN_LOG10 = "knn-log10"

    def __str__(self) -> str:
        return self.value


ALL_KINDS = tuple(EstimatorKind)


def kn_schedule(n: int, variant: str) -> int:
    """Neighbor count for n examples: ``max(1, floor(log(n)))``.

    `variant` is ``"ln"`` (natural log) or ``"log10"``.
    """
    if n < 1:
        raise ValueError("the k_n schedule needs n >= 1")
    if variant == "ln":
        k = math.floor(math.log(n))
    elif variant == "log10":
        k = math.floor(math.log10(n))
    else:
        raise ValueError(f"unknown schedule variant {variant!r}")
    return max(1, k)


def schedule_for(kind: EstimatorKind) -> Callable[[int], int]:
    kind = EstimatorKind(kind)
    if kind is EstimatorKind.NN:
        return lambda n: 1
    if kind is EstimatorKind.KNN_LN:
        return lambda n: kn_schedule(n, "ln")
    if kind is EstimatorKind.KNN_LOG10:
        return lambda n: kn_schedule(n, "log10")
    raise ValueError(f"{kind} is not a neighbor rule")


@dataclass
class EstimateTrace:
    """Estimates ``(n, R_n)`` of one estimator, n strictly increasing."""

    kind: EstimatorKind
    n: np.ndarray
    estimates: np.ndarray

    def __post_init__(self):
        self.kind = EstimatorKind(self.kind)
        self.n = np.asarray(self.n, dtype=np.int64)
        self.estimates = np.asarray(self.estimates, dtype=float)
        if self.n.shape != self.estimates.shape:
            raise ValueError("n and estimates must have the same length")
        if self.n.size > 1 and np.any(np.diff(self.n) <= 0):
            raise ValueError("trace n values must be strictly increasing")

    def __len__(self) -> int:
        return self.n.size

    @property
    def final(self) -> float:
        return float(self.estimates[-1])

    def at(self, n: int) -> float:
        i = int(np.searchsorted(self.n, n))
        if i == self.n.size or self.n[i] != n:
            raise KeyError(n)
        return float(self.estimates[i])

    def to_csv(self, path) -> None:
        lines = ["n,estimate"]
        lines += [f"{n},{e!r}" for n, e in zip(self.n.tolist(), self.estimates.tolist())]
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("\n".join(lines) + "\n")

    @classmethod
    def from_csv(cls, path, kind=None) -> "EstimateTrace":
        import os
        ns, es = [], []
        with open(path, encoding="utf-8") as fh:
            header = fh.readline().strip()
            if header != "n,estimate":
                raise ValueError(f"{path}: expected header 'n,estimate'")
            for line in fh:
                if line.strip():
                    a, b = line.strip().split(",")
                    ns.append(int(a))
                    es.append(float(b))
        if kind is None:
            kind = os.path.splitext(os.path.basename(path))[0]
        return cls(EstimatorKind(kind), ns, es)


# --- incremental evaluators -------------------------------------------------

class _FrequentistTracker:
    def __init__(self, points, gains, total, n_secrets):
        self.gains = gains
        self.total = total
        self.n_secrets = n_secrets
        # several evaluation points may share coordinates
        self._lookup = {}
        for i, q in enumerate(points.tolist()):
            self._lookup.setdefault(tuple(q), []).append(i)
        self._counts = {}
        self.seen_pred = np.full(len(points), -1, dtype=np.int64)
        self.seen_correct = gains.dtype.type(0)
        self.unseen_gain = gains.sum(axis=0)
        self.secret_counts = np.zeros(n_secrets, dtype=np.int64)
        self.prior_best = -1

    def add(self, x, s: int) -> None:
        sc = self.secret_counts
        sc[s] += 1
        best = self.prior_best
        if best < 0 or sc[s] > sc[best] or (sc[s] == sc[best] and s < best):
            self.prior_best = s
        rows = self._lookup.get(tuple(x.tolist()))
        if rows is None:
            return
        key = rows[0]
        c = self._counts.get(key)
        if c is None:
            c = self._counts[key] = np.zeros(self.n_secrets, dtype=np.int64)
            self.unseen_gain = self.unseen_gain - self.gains[rows].sum(axis=0)
        c[s] += 1
        old = self.seen_pred[key]
        if old < 0 or c[s] > c[old] or (c[s] == c[old] and s < old):
            for i in rows:
                gain_old = self.gains[i, old] if old >= 0 else 0
                self.seen_correct += self.gains[i, s] - gain_old
                self.seen_pred[i] = s

    def error(self) -> float:
        correct = self.seen_correct + self.unseen_gain[self.prior_best]
        return float((self.total - correct) / self.total)

    def predictions(self) -> np.ndarray:
        return np.where(self.seen_pred >= 0, self.seen_pred, self.prior_best)


class _NeighborTracker:
    """Per evaluation point, the neighbors that decide a k-NN vote.

    For each point we keep the examples strictly closer than the k-th
    nearest (the *prefix*, fewer than k of them) and the per-secret counts of
    the examples tied at the k-th distance (the *shell*), so that
    ``plen < k <= plen + msh`` once at least k examples exist.  Shell counts
    live in a dense table whose rows are invalidated by a generation stamp
    instead of being cleared.
    """

    def __init__(self, points, gains, total, n_secrets, metric, schedule, k_max):
        m = len(points)
        kmax = max(1, int(k_max))
        self.points = points
        self.gains = gains
        self.total = total
        self.S = n_secrets
        self.metric = metric
        self.schedule = schedule
        self.kmax = kmax
        self.index = NeighborIndex(points.shape[1], n_secrets, metric)
        self.k = 1
        self.pd = np.full((m, kmax), np.inf)
        self.ps = np.full((m, kmax), -1, dtype=np.int64)
        self.plen = np.zeros(m, dtype=np.int64)
        self.sk = np.full(m, np.inf)
        self.msh = np.zeros(m, dtype=np.int64)
        self.sl = np.full((m, kmax), -1, dtype=np.int64)
        self.sbest = np.full(m, -1, dtype=np.int64)
        self.sbestc = np.zeros(m, dtype=np.int64)
        self.gen = np.zeros(m, dtype=np.int32)
        self.sc = np.zeros((m, n_secrets), dtype=np.int32)
        self.scgen = np.full((m, n_secrets), -1, dtype=np.int32)
        self.pred = np.full(m, -1, dtype=np.int64)
        self.correct = gains.dtype.type(0)
        self._rows = np.arange(m)

    # shell bookkeeping

    def _shell_reset(self, rows):
        self.gen[rows] += 1
        self.msh[rows] = 0
        self.sbest[rows] = -1
        self.sbestc[rows] = 0
        self.sl[rows] = -1

    def _shell_set(self, rows, secrets, counts):
        """Load aggregated (row, secret, count) triples into freshly reset shells."""
        if rows.size == 0:
            return
        S = self.S
        key = rows * S + secrets
        uniq, inv = np.unique(key, return_inverse=True)
        cnt = np.bincount(inv, weights=counts).astype(np.int64)
        r, s = uniq // S, uniq % S
        self.sc[r, s] = cnt
        self.scgen[r, s] = self.gen[r]
        np.add.at(self.msh, r, cnt)
        order = np.lexsort((s, -cnt, r))
        r_o, s_o, c_o = r[order], s[order], cnt[order]
        first = np.ones(r_o.size, dtype=bool)
        first[1:] = r_o[1:] != r_o[:-1]
        self.sbest[r_o[first]] = s_o[first]
        self.sbestc[r_o[first]] = c_o[first]
        # member list, truncated at kmax entries per row
        c_cap = np.minimum(cnt, self.kmax)
        members_r = np.repeat(r, c_cap)
        members_s = np.repeat(s, c_cap)
        order = np.argsort(members_r, kind="stable")
        members_r, members_s = members_r[order], members_s[order]
        start = np.searchsorted(members_r, members_r, side="left")
        pos = np.arange(members_r.size) - start
        keep = pos < self.kmax
        self.sl[members_r[keep], pos[keep]] = members_s[keep]

    def _shell_add(self, rows, s):
        g = self.gen[rows]
        cur = np.where(self.scgen[rows, s] == g, self.sc[rows, s], 0) + 1
        self.sc[rows, s] = cur
        self.scgen[rows, s] = g
        self.msh[rows] += 1
        m = self.msh[rows]
        ok = m <= self.kmax
        self.sl[rows[ok], m[ok] - 1] = s
        best = self.sbest[rows]
        better = (cur > self.sbestc[rows]) | ((cur == self.sbestc[rows]) & (s < best))
        self.sbest[rows[better]] = s
        self.sbestc[rows[better]] = cur[better]

    def _pop_shell(self, rows):
        """Rows whose prefix reached k: its farthest entries become the shell."""
        pd = self.pd[rows]
        valid = np.isfinite(pd)
        dmax = np.where(valid, pd, -np.inf).max(axis=1)
        ismax = valid & (pd == dmax[:, None])
        rr, cc = np.nonzero(ismax)
        secs = self.ps[rows][rr, cc]
        self._shell_reset(rows)
        self.sk[rows] = dmax
        self._shell_set(rows[rr], secs, np.ones(rr.size, dtype=np.int64))
        pd[ismax] = np.inf
        ps = self.ps[rows]
        ps[ismax] = -1
        order = np.argsort(pd, axis=1, kind="stable")
        self.pd[rows] = np.take_along_axis(pd, order, axis=1)
        self.ps[rows] = np.take_along_axis(ps, order, axis=1)
        self.plen[rows] -= ismax.sum(axis=1)

    def _insert(self, d, s, k):
        rows = np.flatnonzero(d <= self.sk)
        if rows.size == 0:
            return rows
        eq = d[rows] == self.sk[rows]
        if eq.any():
            self._shell_add(rows[eq], s)
        lt = rows[~eq]
        if lt.size:
            pos = self.plen[lt]
            self.pd[lt, pos] = d[lt]
            self.ps[lt, pos] = s
            self.plen[lt] += 1
            full = lt[self.plen[lt] >= k]
            if full.size:
                self._pop_shell(full)
        return rows

    def _rebuild(self, rows):
        """Recompute prefix and shell of `rows` from the stored examples."""
        prefix, shell_key, shell = self.index.shells(self.points[rows], self.k)
        self.pd[rows] = np.inf
        self.ps[rows] = -1
        p_rows, p_keys, p_secs = prefix
        order = np.lexsort((p_keys, p_rows))
        p_rows, p_keys, p_secs = p_rows[order], p_keys[order], p_secs[order]
        start = np.searchsorted(p_rows, p_rows, side="left")
        pos = np.arange(p_rows.size) - start
        self.pd[rows[p_rows], pos] = p_keys
        self.ps[rows[p_rows], pos] = p_secs
        self.plen[rows] = np.bincount(p_rows, minlength=rows.size)
        self._shell_reset(rows)
        self.sk[rows] = shell_key
        s_rows, s_secs, s_cnts = shell
        self._shell_set(rows[s_rows], s_secs, s_cnts)

    def _revote(self, rows):
        if rows.size == 0:
            return
        k, S = self.k, self.S
        plen = self.plen[rows]
        exact = plen + self.msh[rows] == k
        shat = self.sbest[rows]
        if k == 1:
            winner = shat
        else:
            cols = np.arange(k)
            fill = cols[None, :] >= plen[:, None]
            idx = np.clip(cols[None, :] - plen[:, None], 0, self.kmax - 1)
            from_shell = np.take_along_axis(self.sl[rows], idx, axis=1)
            ballot = np.where(fill, np.where(exact[:, None], from_shell, shat[:, None]),
                              self.ps[rows, :k])
            tally = (ballot[:, :, None] == ballot[:, None, :]).sum(axis=2)
            bonus = np.where(~exact[:, None] & (ballot == shat[:, None]), S + 1, 0)
            score = tally * (2 * S + 2) + bonus + (S - ballot)
            winner = ballot[np.arange(rows.size), np.argmax(score, axis=1)]
        old = self.pred[rows]
        g = self.gains
        gain_old = np.where(old >= 0, g[rows, np.maximum(old, 0)], 0)
        self.correct += (g[rows, winner] - gain_old).sum()
        self.pred[rows] = winner

    def add(self, x, s: int) -> None:
        self.index.add(x, s)
        d = self.metric.keys(self.points, x)
        touched = self._insert(d, s, self.k)
        k_new = min(self.schedule(len(self.index)), self.kmax)
        if k_new > self.k:
            self.k = k_new
            stale = np.flatnonzero(self.plen + self.msh < k_new)
            if stale.size:
                self._rebuild(stale)
            self._revote(self._rows)
        else:
            self._revote(touched)

    def load(self, dataset_secrets, dataset_obs) -> None:
        """Train on a whole batch at once and vote every point."""
        self.index.add_many(dataset_secrets, dataset_obs)
        self.k = min(self.schedule(len(self.index)), self.kmax)
        self._rebuild(self._rows)
        self._revote(self._rows)

    def error(self) -> float:
        return float((self.total - self.correct) / self.total)

    def predictions(self) -> np.ndarray:
        return self.pred.copy()


def _make_tracker(kind, points, gains, total, n_secrets, metric, n_max):
    kind = EstimatorKind(kind)
    if kind is EstimatorKind.FREQUENTIST:
        return _FrequentistTracker(points, gains, total, n_secrets)
    sched = schedule_for(kind)
    return _NeighborTracker(points, gains, total, n_secrets, metric, sched,
                            sched(max(n_max, 1)))


def _run(tracker, train: Dataset) -> EstimateTrace:
    n = len(train)
    out = np.empty(n)
    for i, (s, x) in enumerate(zip(train.secrets.tolist(), train.observations)):
        tracker.add(x, s)
        out[i] = tracker.error()
    return out


def _holdout_table(holdout: Dataset, n_secrets: int):
    uniq, inv = np.unique(holdout.observations, axis=0, return_inverse=True)
    inv = np.asarray(inv).reshape(-1)
    gains = np.zeros((uniq.shape[0], n_secrets), dtype=np.int64)
    np.add.at(gains, (inv, holdout.secrets), 1)
    return uniq, gains


def _n_secrets(*datasets, system: Optional[System] = None) -> int:
    if system is not None:
        return system.n_secrets
    return max(d.secret_count() for d in datasets)


def _check_dims(train: Dataset, other_dim: int, metric: Metric):
    if len(train) and train.dim != other_dim:
        raise ValueError(
            f"training observations have dimension {train.dim}, evaluation points {other_dim}")
    metric.check(other_dim)


def forward_estimate(train: Dataset, holdout: Dataset, kind,
                     metric: Metric = EUCLIDEAN, n_secrets: Optional[int] = None
                     ) -> EstimateTrace:
    """Hold-out error of a rule trained on the first n examples, n = 1..|train|."""
    if len(holdout) == 0:
        raise ValueError("hold-out set is empty")
    _check_dims(train, holdout.dim, metric)
    S = n_secrets or _n_secrets(train, holdout)
    points, gains = _holdout_table(holdout, S)
    tracker = _make_tracker(kind, points, gains, len(holdout), S, metric, len(train))
    est = _run(tracker, train)
    return EstimateTrace(kind, np.arange(1, len(train) + 1), est)


def _exact_table(system: System):
    check_system(system)
    return system.object_values, np.ascontiguousarray(system.joint().T)


def exact_trace(system: System, train: Dataset, kind, metric: Metric = EUCLIDEAN
                ) -> EstimateTrace:
    """Exact expected error over every column of `system`, n = 1..|train|."""
    points, gains = _exact_table(system)
    _check_dims(train, points.shape[1], metric)
    tracker = _make_tracker(kind, points, gains, 1.0, system.n_secrets, metric, len(train))
    est = _run(tracker, train)
    return EstimateTrace(kind, np.arange(1, len(train) + 1), est)


def predict_all(train: Dataset, points, kind, n_secrets: int,
                metric: Metric = EUCLIDEAN) -> np.ndarray:
    """Predictions of the rule trained on all of `train` at every point."""
    if len(train) == 0:
        raise ValueError("classifier has no training examples")
    points = np.asarray(points, dtype=float).reshape(-1, train.dim)
    dummy = np.zeros((points.shape[0], n_secrets))
    kind = EstimatorKind(kind)
    if kind is EstimatorKind.FREQUENTIST:
        tr = _FrequentistTracker(points, dummy, 1.0, n_secrets)
        for s, x in zip(train.secrets.tolist(), train.observations):
            tr.add(x, s)
        return tr.predictions()
    tr = _make_tracker(kind, points, dummy, 1.0, n_secrets, metric, len(train))
    tr.load(train.secrets, train.observations)
    return tr.predictions()


def exact_estimate(system: System, train: Dataset, kind,
                   metric: Metric = EUCLIDEAN) -> float:
    """Expected error, over the whole finite object space, of the classifier
    the rule selects from `train`."""
    if system.n_objects == 0:
        raise ValueError("exact evaluation needs a finite object space")
    preds = predict_all(train, system.object_values, kind, system.n_secrets, metric)
    return expected_error(preds, system)


def holdout_estimate(train: Dataset, holdout: Dataset, kind,
                     metric: Metric = EUCLIDEAN, n_secrets: Optional[int] = None) -> float:
    """Hold-out error of the rule trained on all of `train` (no trace)."""
    if len(holdout) == 0:
        raise ValueError("hold-out set is empty")
    _check_dims(train, holdout.dim, metric)
    S = n_secrets or _n_secrets(train, holdout)
    points, gains = _holdout_table(holdout, S)
    preds = predict_all(train, points, kind, S, metric)
    correct = gains[np.arange(points.shape[0]), preds].sum()
    return float((len(holdout) - correct) / len(holdout))


# --- convergence and selection ---------------------------------------------

def delta_convergence(trace: EstimateTrace, target: float, delta: float,
                      mode: str = "relative") -> Optional[int]:
    """First n from which the estimate stays within `delta` of `target`.

    ``relative`` compares ``|R_n - target| / target``, ``absolute`` compares
    ``|R_n - target|``.  Returns None when the last point is outside.
    """
    if delta <= 0:
        raise ValueError("delta must be positive")
    err = np.abs(trace.estimates - target)
    if mode == "relative":
        if target <= 0:
            raise ValueError("relative convergence is undefined for a zero target")
        err = err / target
    elif mode != "absolute":
        raise ValueError(f"unknown mode {mode!r}")
    outside = np.flatnonzero(~(err < delta))
    if outside.size == 0:
        return int(trace.n[0]) if len(trace) else None
    last = outside[-1]
    if last == len(trace) - 1:
        return None
    return int(trace.n[last + 1])


def smoothing_window(final_n: int) -> int:
    return max(1, int(final_n) // 100)


def select_estimate(traces: Sequence[EstimateTrace]) -> Tuple[EstimatorKind, float]:
    """Pick the estimator with the smallest smoothed final estimate.

    Every estimate approximates the Bayes risk from above, so the smallest
    one is the closest to convergence.  Smoothing averages the last
    ``max(1, final_n // 100)`` points; ties keep the earlier trace.
    """
    traces = list(traces)
    if not traces:
        raise ValueError("no traces to select from")
    final_ns = {int(t.n[-1]) for t in traces}
    if len(final_ns) != 1:
        raise ValueError("traces end at different n")
    w = smoothing_window(final_ns.pop())
    best = None
    for t in traces:
        value = float(np.mean(t.estimates[-w:]))
        if best is None or value < best[1]:
            best = (t.kind, value)
    return best
