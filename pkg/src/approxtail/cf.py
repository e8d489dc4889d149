"""User-based collaborative filtering on top of a component's synopsis state.

Predictions are carried as mergeable accumulators: for every target item a
weighted residual sum and a weight mass.  Components, aggregated users and
original users all contribute by addition, so partial results from different
components (or different refinement stages) combine by summing arrays.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .dataset import sorted_ids
from .synopsis import AggregatedUser, SynopsisState

_VAR_EPS = 1e-12


@dataclass(frozen=True)
class CfConfig:
    scale: tuple[float, float] = (1.0, 5.0)
    min_overlap: int = 2
    # "centered": active mean + weighted mean-centered residuals; "raw": plain weighted average
    mode: str = "centered"
    # scale an aggregated user's contribution on item i by the number of members who rated i
    count_weighted: bool = False

    def __post_init__(self):
        if self.mode not in ("centered", "raw"):
            raise ValueError(f"unknown CF mode {self.mode!r}")


@dataclass(frozen=True)
class CfRequest:
    known: Mapping[str, float]
    targets: tuple[str, ...]
    request_id: str = ""

    def __post_init__(self):
        if not self.known:
            raise ValueError("a CF request needs at least one known rating")
        overlap = set(self.targets) & set(self.known)
        if overlap:
            raise ValueError(f"target items already rated: {sorted(overlap)}")

    @property
    def active_mean(self) -> float:
        return math.fsum(self.known.values()) / len(self.known)


@dataclass(frozen=True)
class CfResult:
    """Accumulators aligned with ``targets``: column 0 weighted sum, column 1 weight mass."""

    targets: tuple[str, ...]
    acc: np.ndarray = field(repr=False)

    @classmethod
    def empty(cls, targets) -> "CfResult":
        return cls(tuple(targets), np.zeros((len(targets), 2)))

    def __add__(self, other: "CfResult") -> "CfResult":
        return CfResult(self.targets, self.acc + other.acc)


def pearson(a: Mapping[str, float], b: Mapping[str, float], min_overlap: int = 2) -> float:
    """Pearson correlation over co-rated items; 0 when undefined."""
    common = [i for i in a if i in b]
    n = len(common)
    if n < max(min_overlap, 1):
        return 0.0
    xa = [a[i] for i in common]
    xb = [b[i] for i in common]
    ma = math.fsum(xa) / n
    mb = math.fsum(xb) / n
    da = [x - ma for x in xa]
    db = [x - mb for x in xb]
    va = math.fsum(x * x for x in da)
    vb = math.fsum(x * x for x in db)
    if va <= _VAR_EPS or vb <= _VAR_EPS:
        return 0.0
    r = math.fsum(x * y for x, y in zip(da, db)) / math.sqrt(va * vb)
    return max(-1.0, min(1.0, r))


def pearson_rows(active: np.ndarray, R: np.ndarray, min_overlap: int = 2) -> np.ndarray:
    """Pearson of one rating vector against every row of ``R`` (NaN = unrated)."""
    mask = ~np.isnan(R) & ~np.isnan(active)[None, :]
    n = mask.sum(axis=1)
    ok = n >= max(min_overlap, 1)
    safe_n = np.where(n > 0, n, 1)
    A = np.where(mask, active[None, :], 0.0)
    B = np.where(mask, R, 0.0)
    ma = A.sum(axis=1) / safe_n
    mb = B.sum(axis=1) / safe_n
    da = np.where(mask, A - ma[:, None], 0.0)
    db = np.where(mask, B - mb[:, None], 0.0)
    va = (da * da).sum(axis=1)
    vb = (db * db).sum(axis=1)
    ok &= (va > _VAR_EPS) & (vb > _VAR_EPS)
    denom = np.sqrt(np.where(ok, va * vb, 1.0))
    w = np.where(ok, (da * db).sum(axis=1) / denom, 0.0)
    return np.clip(w, -1.0, 1.0)


def predict_contribution(
    request: CfRequest,
    neighbor: Mapping[str, float] | AggregatedUser,
    weight: float,
    cfg: CfConfig = CfConfig(),
) -> CfResult:
    """One neighbor's additive contribution to every target prediction."""
    out = np.zeros((len(request.targets), 2))
    if weight == 0:
        return CfResult(request.targets, out)
    counts = None
    if isinstance(neighbor, AggregatedUser):
        counts = {i: c for i, (_, c) in neighbor.items.items()}
        ratings = neighbor.rating_map()
    else:
        ratings = dict(neighbor)
    mean = math.fsum(ratings.values()) / len(ratings) if ratings else 0.0
    for t, item in enumerate(request.targets):
        if item not in ratings:
            continue
        r = ratings[item] - mean if cfg.mode == "centered" else ratings[item]
        scale = counts[item] if (cfg.count_weighted and counts is not None) else 1
        out[t, 0] = weight * r * scale
        out[t, 1] = abs(weight) * scale
    return CfResult(request.targets, out)


def finalize(result: CfResult, active_mean: float, cfg: CfConfig = CfConfig()) -> dict[str, float]:
    lo, hi = cfg.scale
    preds = {}
    for t, item in enumerate(result.targets):
        ws, mass = result.acc[t]
        if mass > 0:
            p = active_mean + ws / mass if cfg.mode == "centered" else ws / mass
        else:
            p = active_mean
        preds[item] = min(hi, max(lo, p))
    return preds


def rmse(predictions: Mapping[str, float], actuals: Mapping[str, float]) -> float:
    if not actuals:
        raise ValueError("empty test set")
    missing = [i for i in actuals if i not in predictions]
    if missing:
        raise KeyError(f"no prediction for {missing[:5]}")
    return math.sqrt(math.fsum((predictions[i] - r) ** 2 for i, r in actuals.items()) / len(actuals))


def accuracy_loss_cf(rmse_approx: float, rmse_exact: float) -> float:
    """Relative RMSE increase in percent, floored at 0."""
    if rmse_exact == 0:
        return 0.0 if rmse_approx == 0 else 100.0
    return max(0.0, 100.0 * (rmse_approx - rmse_exact) / rmse_exact)


class CfComponent:
    """Dense view of one component's ratings plus its aggregated users.

    Original users become rows of ``R`` (NaN for unrated items); aggregated
    users become rows of ``A`` with rater counts in ``C``.
    """

    def __init__(self, state: SynopsisState, cfg: CfConfig = CfConfig()):
        self.state = state
        self.cfg = cfg
        self.component_id = state.component_id
        rows = state.subset.points
        self.user_ids = state.subset.ids
        self.items = sorted_ids({i for r in rows.values() for i in r})
        self.item_pos = {it: k for k, it in enumerate(self.items)}
        self.R = np.full((len(self.user_ids), len(self.items)), np.nan)
        for u, uid in enumerate(self.user_ids):
            for it, r in rows[uid].items():
                self.R[u, self.item_pos[it]] = r
        self.user_means = np.array([math.fsum(rows[uid].values()) / len(rows[uid]) for uid in self.user_ids])
        self.agg_ids = state.synopsis.ids
        self.A = np.full((len(self.agg_ids), len(self.items)), np.nan)
        self.C = np.zeros((len(self.agg_ids), len(self.items)))
        agg_means = []
        for a, agg in enumerate(self.agg_ids):
            payload = state.synopsis.points[agg].payload
            for it, (mean, cnt) in payload.items.items():
                self.A[a, self.item_pos[it]] = mean
                self.C[a, self.item_pos[it]] = cnt
            agg_means.append(math.fsum(m for m, _ in payload.items.values()) / len(payload.items))
        self.agg_means = np.array(agg_means)
        user_pos = {uid: u for u, uid in enumerate(self.user_ids)}
        self.member_rows = [np.array(sorted(user_pos[x] for x in state.index.mapping[agg]), dtype=np.int64) for agg in self.agg_ids]

    @property
    def m(self) -> int:
        return len(self.agg_ids)

    @property
    def n_points(self) -> int:
        return len(self.user_ids)

    def active_vector(self, request: CfRequest) -> np.ndarray:
        vec = np.full(len(self.items), np.nan)
        for it, r in request.known.items():
            k = self.item_pos.get(it)
            if k is not None:
                vec[k] = r
        return vec

    def _target_cols(self, request: CfRequest) -> tuple[np.ndarray, np.ndarray]:
        present = [(t, self.item_pos[it]) for t, it in enumerate(request.targets) if it in self.item_pos]
        return np.array([t for t, _ in present], dtype=np.int64), np.array([k for _, k in present], dtype=np.int64)

    def _contrib(self, w, ratings, means, request, counts=None) -> np.ndarray:
        """Sum of contributions from a block of neighbors with weights ``w``."""
        out = np.zeros((len(request.targets), 2))
        t_idx, cols = self._target_cols(request)
        if not len(cols) or not len(w):
            return out
        sub = ratings[:, cols]
        has = ~np.isnan(sub) & (w != 0)[:, None]
        resid = sub - means[:, None] if self.cfg.mode == "centered" else sub
        scale = counts[:, cols] if counts is not None else 1.0
        ws = np.where(has, w[:, None] * np.where(has, resid, 0.0) * scale, 0.0)
        mass = np.where(has, np.abs(w)[:, None] * scale, 0.0)
        out[t_idx, 0] = ws.sum(axis=0)
        out[t_idx, 1] = mass.sum(axis=0)
        return out

    def user_weights(self, request: CfRequest, rows: np.ndarray | None = None) -> np.ndarray:
        R = self.R if rows is None else self.R[rows]
        return pearson_rows(self.active_vector(request), R, self.cfg.min_overlap)

    def exact(self, request: CfRequest) -> CfResult:
        w = self.user_weights(request)
        return CfResult(request.targets, self._contrib(w, self.R, self.user_means, request))

    def prepare(self, request: CfRequest) -> "CfPrepared":
        return CfPrepared(self, request)


class CfPrepared:
    """Synopsis pass for one request; refined sets are computed on first use and cached."""

    def __init__(self, comp: CfComponent, request: CfRequest):
        self.comp = comp
        self.request = request
        self.agg_ids = comp.agg_ids
        active = comp.active_vector(request)
        w = pearson_rows(active, comp.A, comp.cfg.min_overlap)
        self.agg_weights = w
        self.correlations = np.abs(w)
        counts = comp.C if comp.cfg.count_weighted else None
        self.agg_acc = np.stack([
            comp._contrib(w[a:a + 1], comp.A[a:a + 1], comp.agg_means[a:a + 1], request,
                          None if counts is None else counts[a:a + 1])
            for a in range(comp.m)
        ]) if comp.m else np.zeros((0, len(request.targets), 2))
        self._member_acc: dict[int, np.ndarray] = {}

    @property
    def m(self) -> int:
        return self.comp.m

    def set_size(self, pos: int) -> int:
        return len(self.comp.member_rows[pos])

    def member_acc(self, pos: int) -> np.ndarray:
        acc = self._member_acc.get(pos)
        if acc is None:
            comp = self.comp
            rows = comp.member_rows[pos]
            w = comp.user_weights(self.request, rows)
            acc = comp._contrib(w, comp.R[rows], comp.user_means[rows], self.request)
            self._member_acc[pos] = acc
        return acc

    def initial(self) -> np.ndarray:
        return self.agg_acc.sum(axis=0)

    def improve(self, ar: np.ndarray, pos: int) -> np.ndarray:
        # swap the aggregated stand-in for its members' exact contributions
        return ar - self.agg_acc[pos] + self.member_acc(pos)

    def result(self, ar: np.ndarray) -> CfResult:
        return CfResult(self.request.targets, ar)


def merge_results(results: Sequence[CfResult], targets) -> CfResult:
    total = CfResult.empty(targets)
    for r in results:
        total = total + r
    return total
