"""Survival random forest with log-rank splitting.

Predictions use the forest as an adaptive nearest-neighbour kernel: the
weight of training point ``j`` for a query ``x`` is the average over trees of
``I(j in leaf(x)) / |leaf(x)|``; the conditional hazard is the weighted
Nelson-Aalen estimator and survival its product limit.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numba
import numpy as np

from .core import EPS, Dataset, StepCurves
from .exceptions import DataValidationError, FitError

__all__ = ["ForestParams", "SurvivalForest", "fit_forest", "forest_weights",
           "forest_predict_curves", "logrank_statistic"]


@dataclass(frozen=True)
class ForestParams:
    num_trees: int = 500
    mtry: int | None = None
    min_node_size: int = 15
    sample_fraction: float = 0.5
    seed: int | None = None


@numba.njit(cache=True)
def _grow_tree(X, rank, status, sample, rand, mtry_base, mtry_frac, min_node,
               feature, threshold, left, right, start, size, members):
    """Grow one tree on ``sample``; leaves partition ``members``.

    ``rand[k]`` holds the uniforms used at node ``k``: ``rand[k, :d]`` order
    the candidate covariates, ``rand[k, d]`` draws the extra ``mtry``.
    Returns the number of nodes.
    """
    d = X.shape[1]
    m_all = sample.shape[0]
    for i in range(m_all):
        members[i] = sample[i]
    n_nodes = 1
    start[0] = 0
    size[0] = m_all
    stack = np.empty(rand.shape[0], dtype=np.int64)
    stack[0] = 0
    top = 1
    max_rank = rank.max() + 1
    count_d = np.zeros(max_rank, dtype=np.int64)
    count_all = np.zeros(max_rank, dtype=np.int64)
    while top > 0:
        top -= 1
        node = stack[top]
        s0 = start[node]
        m = size[node]
        feature[node] = -1
        if m < 2 * min_node or n_nodes + 2 > rand.shape[0]:
            continue
        idx = members[s0:s0 + m].copy()
        # node event times (as ranks) and risk-set counts
        for j in range(m):
            r = rank[idx[j]]
            count_all[r] += 1
            if status[idx[j]] > 0:
                count_d[r] += 1
        q = 0
        for r in range(max_rank):
            if count_d[r] > 0:
                q += 1
        if q == 0:
            for j in range(m):
                count_all[rank[idx[j]]] = 0
            continue
        ev = np.empty(q, dtype=np.int64)
        dk = np.empty(q)
        yk = np.empty(q)
        k = 0
        for r in range(max_rank):
            if count_d[r] > 0:
                ev[k] = r
                dk[k] = count_d[r]
                k += 1
        # at-risk counts: members with rank >= ev[k]
        cum = 0.0
        kk = q - 1
        for r in range(max_rank - 1, -1, -1):
            cum += count_all[r]
            if kk >= 0 and ev[kk] == r:
                yk[kk] = cum
                kk -= 1
        for j in range(m):
            count_all[rank[idx[j]]] = 0
            count_d[rank[idx[j]]] = 0
        p1 = np.zeros(q + 1)
        pa = np.zeros(q + 1)
        bk = np.zeros(q)
        for k in range(q):
            w = 0.0
            if yk[k] > 1:
                w = dk[k] * (yk[k] - dk[k]) / (yk[k] - 1.0)
            p1[k + 1] = p1[k] + dk[k] / yk[k]
            pa[k + 1] = pa[k] + w / yk[k]
            bk[k] = w / (yk[k] * yk[k])
        pos = np.searchsorted(ev, rank[idx], side="right")
        # candidate covariates for this node
        mt = mtry_base
        if rand[node, d] < mtry_frac:
            mt += 1
        if mt > d:
            mt = d
        order_f = np.argsort(rand[node, :d])
        best_stat = -1.0
        best_f = -1
        best_thr = 0.0
        best_i = -1
        best_order = np.empty(m, dtype=np.int64)
        yl = np.zeros(q)
        for fi in range(mt):
            f = order_f[fi]
            xs = X[idx, f]
            o = np.argsort(xs, kind="mergesort")
            for k in range(q):
                yl[k] = 0.0
            num = 0.0
            vlin = 0.0
            vquad = 0.0
            for i in range(m - 1):
                j = o[i]
                pj = pos[j]
                num += status[idx[j]] - p1[pj]
                vlin += pa[pj]
                for k in range(pj):
                    vquad += (2.0 * yl[k] + 1.0) * bk[k]
                    yl[k] += 1.0
                nl = i + 1
                if nl < min_node or m - nl < min_node:
                    continue
                x_lo = xs[o[i]]
                x_hi = xs[o[i + 1]]
                if not x_lo < x_hi:
                    continue
                v = vlin - vquad
                if v <= 1e-12:
                    continue
                stat = num * num / v
                if stat > best_stat:
                    best_stat = stat
                    best_f = f
                    best_thr = 0.5 * (x_lo + x_hi)
                    best_i = nl
                    for t in range(m):
                        best_order[t] = idx[o[t]]
        if best_f < 0:
            continue
        feature[node] = best_f
        threshold[node] = best_thr
        lc = n_nodes
        rc = n_nodes + 1
        n_nodes += 2
        left[node] = lc
        right[node] = rc
        for t in range(m):
            members[s0 + t] = best_order[t]
        start[lc] = s0
        size[lc] = best_i
        start[rc] = s0 + best_i
        size[rc] = m - best_i
        feature[lc] = -1
        feature[rc] = -1
        stack[top] = lc
        stack[top + 1] = rc
        top += 2
    return n_nodes


@numba.njit(cache=True)
def _weights(Xq, feature, threshold, left, right, start, size, members, used, inbag, oob_rows,
             n_train):
    nq = Xq.shape[0]
    W = np.zeros((nq, n_train))
    cnt = np.zeros(nq)
    n_trees = feature.shape[0]
    for t in range(n_trees):
        if not used[t]:
            continue
        for qi in range(nq):
            r = oob_rows[qi]
            if r >= 0 and inbag[t, r]:
                continue
            node = 0
            while feature[t, node] >= 0:
                if Xq[qi, feature[t, node]] <= threshold[t, node]:
                    node = left[t, node]
                else:
                    node = right[t, node]
            s = start[t, node]
            m = size[t, node]
            inv = 1.0 / m
            for k in range(s, s + m):
                W[qi, members[t, k]] += inv
            cnt[qi] += 1.0
    return W, cnt


@dataclass(frozen=True, eq=False)
class SurvivalForest:
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    start: np.ndarray
    size: np.ndarray
    members: np.ndarray
    inbag: np.ndarray
    used: np.ndarray
    n_nodes: np.ndarray
    time: np.ndarray
    status: np.ndarray
    X: np.ndarray
    params: ForestParams
    response: str = "event"
    convention: str = "product"

    @property
    def num_trees(self):
        return int(self.used.sum())

    @property
    def n_train(self):
        return len(self.time)

    def weights(self, X, oob_rows=None) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        rows = (np.full(len(X), -1, dtype=np.int64) if oob_rows is None
                else np.asarray(oob_rows, dtype=np.int64))
        W, cnt = _weights(X, self.feature, self.threshold, self.left, self.right, self.start,
                          self.size, self.members, self.used, self.inbag, rows, self.n_train)
        missing = cnt == 0
        if np.any(missing):
            # never out of bag: fall back to every tree
            W2, cnt2 = _weights(X[missing], self.feature, self.threshold, self.left, self.right,
                                self.start, self.size, self.members, self.used, self.inbag,
                                np.full(int(missing.sum()), -1, dtype=np.int64), self.n_train)
            W[missing], cnt[missing] = W2, cnt2
        return W / cnt[:, None]

    def curves(self, X) -> StepCurves:
        return forest_predict_curves(self, X)

    def training_curves(self) -> StepCurves:
        """Out-of-bag predictions for the training rows."""
        return forest_predict_curves(self, self.X, oob_rows=np.arange(self.n_train))


def _mtry_rule(d, mtry):
    if mtry is not None:
        return int(min(max(mtry, 1), d)), 0.0
    r = math.sqrt(d)
    return min(math.ceil(r), d), r % 1.0


def fit_forest(data: Dataset, response="event", params: ForestParams = ForestParams()):
    """Grow ``params.num_trees`` log-rank trees on subsamples drawn without replacement."""
    status = data.event.astype(float) if response == "event" else 1.0 - data.event
    return fit_forest_arrays(data.time, status, data.X, params, response)


def fit_forest_arrays(time, status, X, params: ForestParams = ForestParams(), response="event"):
    time = np.asarray(time, dtype=float)
    status = np.asarray(status, dtype=float)
    X = np.ascontiguousarray(np.atleast_2d(np.asarray(X, dtype=float).T).T)
    n, d = X.shape
    if n < 2 * params.min_node_size and params.min_node_size < n:
        raise DataValidationError("need n >= 2 * min_node_size")
    n_sub = max(1, min(n, int(round(params.sample_fraction * n))))
    max_nodes = 2 * (n_sub // max(params.min_node_size, 1) + 1) + 1
    rank = np.unique(time, return_inverse=True)[1].astype(np.int64)
    mtry_base, mtry_frac = _mtry_rule(d, params.mtry)
    T = params.num_trees
    shape = (T, max_nodes)
    feature = np.full(shape, -1, dtype=np.int64)
    threshold = np.zeros(shape)
    left = np.zeros(shape, dtype=np.int64)
    right = np.zeros(shape, dtype=np.int64)
    start = np.zeros(shape, dtype=np.int64)
    size = np.zeros(shape, dtype=np.int64)
    members = np.zeros((T, n_sub), dtype=np.int64)
    inbag = np.zeros((T, n), dtype=np.bool_)
    used = np.zeros(T, dtype=np.bool_)
    n_nodes = np.zeros(T, dtype=np.int64)
    streams = np.random.SeedSequence(params.seed).spawn(T)
    skipped = 0
    for t, ss in enumerate(streams):
        rng = np.random.default_rng(ss)
        sample = np.sort(rng.choice(n, size=n_sub, replace=False)) if n_sub < n else np.arange(n)
        rand = rng.random((max_nodes, d + 1))
        if not np.any(status[sample] > 0):
            skipped += 1
            continue
        inbag[t, sample] = True
        used[t] = True
        n_nodes[t] = _grow_tree(X, rank, status, sample.astype(np.int64), rand, mtry_base,
                                mtry_frac, params.min_node_size, feature[t], threshold[t], left[t],
                                right[t], start[t], size[t], members[t])
    if skipped:
        warnings.warn(f"{skipped} tree(s) skipped: subsample had no {response} events")
    if not used.any():
        raise FitError("every tree was skipped; no events in any subsample")
    return SurvivalForest(feature, threshold, left, right, start, size, members, inbag, used,
                          n_nodes, time, status, X, params, response)


def forest_weights(forest: SurvivalForest, x) -> np.ndarray:
    """Kernel weights over training rows for one query (or a batch of queries)."""
    x = np.asarray(x, dtype=float)
    W = forest.weights(np.atleast_2d(x))
    return W[0] if x.ndim == 1 else W


def forest_predict_curves(forest: SurvivalForest, X, oob_rows=None) -> StepCurves:
    """Weighted Nelson-Aalen hazards on the training event times.

    Where the weighted risk set falls below ``EPS`` the hazard is set to 0
    from that point on and ``truncated`` is recorded on the returned curves.
    """
    W = forest.weights(X, oob_rows)
    knots = np.unique(forest.time[forest.status > 0])
    dN = (forest.time[:, None] == knots[None, :]) * forest.status[:, None]
    R = (forest.time[:, None] >= knots[None, :]).astype(float)
    num = W @ dN
    den = W @ R
    ok = den >= EPS
    dead = np.cumsum(~ok, axis=1) > 0
    inc = np.where(dead, 0.0, num / np.maximum(den, EPS))
    curves = StepCurves(knots, np.minimum(inc, 1.0), "product")
    object.__setattr__(curves, "truncated", bool(dead.any()))
    return curves


def logrank_statistic(time, status, in_left) -> float:
    """Variance-standardised two-sample log-rank chi-square (reference implementation)."""
    time = np.asarray(time, float)
    status = np.asarray(status, float)
    in_left = np.asarray(in_left, bool)
    num = 0.0
    var = 0.0
    for u in np.unique(time[status > 0]):
        at = time >= u
        y = at.sum()
        yl = (at & in_left).sum()
        dd = ((time == u) & (status > 0)).sum()
        dl = ((time == u) & (status > 0) & in_left).sum()
        num += dl - yl * dd / y
        if y > 1:
            var += (yl / y) * (1 - yl / y) * dd * (y - dd) / (y - 1)
    return num * num / var if var > 0 else 0.0
