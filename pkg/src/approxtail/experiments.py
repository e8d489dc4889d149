"""Experiment drivers shared by the CLI and the acceptance tests."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import stats as sps

from . import engine, simulator as sim
from .cf import CfComponent
from .search import SearchComponent
from .synopsis import ChangeSet, SynopsisState, update

N_SECTIONS = 10
HIGH_WEIGHT = 0.8


@dataclass(frozen=True)
class SectionProfile:
    """Per-section share of highly related originals, section 1 = best ranked."""

    fractions: tuple[float, ...]
    hits: tuple[float, ...]
    totals: tuple[float, ...]

    @property
    def spearman(self) -> float:
        return float(sps.spearmanr(np.arange(1, len(self.fractions) + 1), self.fractions).statistic)


def _sections(order: Sequence[int], n: int = N_SECTIONS) -> list[np.ndarray]:
    return np.array_split(np.asarray(order, dtype=np.int64), n)


def cf_rank_profile(components: Sequence[CfComponent], requests, n_sections: int = N_SECTIONS) -> SectionProfile:
    """Share of original users with |weight| > 0.8 among the members of each ranked section."""
    hits = np.zeros(n_sections)
    totals = np.zeros(n_sections)
    for comp in components:
        for req in requests:
            prepared = comp.prepare(req)
            strong = np.abs(comp.user_weights(req)) > HIGH_WEIGHT
            order = engine.rank(prepared.correlations, prepared.agg_ids)
            for k, chunk in enumerate(_sections(order, n_sections)):
                for pos in chunk:
                    rows = comp.member_rows[pos]
                    hits[k] += strong[rows].sum()
                    totals[k] += len(rows)
    fr = tuple(float(h / t) if t else 0.0 for h, t in zip(hits, totals))
    return SectionProfile(fr, tuple(hits), tuple(totals))


def search_rank_profile(components: Sequence[SearchComponent], requests, n_sections: int = N_SECTIONS) -> SectionProfile:
    """Share of each component's exact top-k found in each ranked section."""
    hits = np.zeros(n_sections)
    for comp in components:
        for q in requests:
            prepared = comp.prepare(q)
            top = set(comp.exact(q).doc_ids)
            if not top:
                continue
            order = engine.rank(prepared.correlations, prepared.agg_ids)
            for k, chunk in enumerate(_sections(order, n_sections)):
                for pos in chunk:
                    hits[k] += len(top.intersection(comp.members[pos]))
    total = hits.sum()
    fr = tuple(float(h / total) if total else 0.0 for h in hits)
    return SectionProfile(fr, tuple(hits), (float(total),) * n_sections)


# -- update sweep ---------------------------------------------------------------------


@dataclass(frozen=True)
class UpdateRun:
    category: str
    percent: float
    changed: int
    recomputed: int
    m: int
    seconds: float
    state: SynopsisState


def make_changes(state: SynopsisState, category: str, percent: float, rng: np.random.Generator) -> ChangeSet:
    """``percent``% new points (copies of random existing content) or modified existing points."""
    ids = state.subset.ids
    count = int(round(len(ids) * percent / 100.0))
    if count == 0:
        return ChangeSet()
    picks = [ids[int(k)] for k in rng.choice(len(ids), size=count, replace=False)]
    points = state.subset.points
    if category == "add":
        fresh = (f"v{state.version + 1}n{k}" for k in range(len(ids) + count + 1))
        names = [x for x in fresh if x not in points][:count]
        return ChangeSet(added={name: _perturb(state, points[p], rng) for name, p in zip(names, picks)})
    if category == "modify":
        return ChangeSet(modified={p: _perturb(state, points[p], rng) for p in picks})
    raise ValueError(f"unknown change category {category!r}")


def _perturb(state: SynopsisState, content, rng) -> dict:
    out = dict(content)
    key = sorted(out)[int(rng.integers(len(out)))]
    if state.kind == "numeric":
        lo, hi = state.subset.scale
        out[key] = float(min(hi, max(lo, out[key] + (1 if rng.random() < 0.5 else -1))))
    else:
        out[key] = int(out[key]) + 1
    return out


def update_sweep(state: SynopsisState, percents: Sequence[float], seed: int = 0) -> list[UpdateRun]:
    runs = []
    for category in ("add", "modify"):
        for pct in percents:
            rng = np.random.default_rng([seed, int(round(pct * 1000)), 0 if category == "add" else 1])
            changes = make_changes(state, category, pct, rng)
            t0 = time.perf_counter()
            new = update(state, changes)
            dt = time.perf_counter() - t0
            runs.append(UpdateRun(category, pct, len(changes), len(new.recomputed), new.synopsis.m, dt, new))
    return runs


# -- benchmark sweep ---------------------------------------------------------------------


@dataclass(frozen=True)
class BenchRow:
    rate_factor: float
    rate_rps: float
    strategy: str
    p999_ms: float
    mean_loss_pct: float
    requests: int
    reissues: int
    metrics: sim.Metrics


def saturation_rps(cost: sim.CostModel, mean_points: float) -> float:
    """Arrival rate at which an uninterfered full scan keeps one component exactly busy."""
    return 1000.0 / (cost.fixed_ms + cost.original_point_ms * mean_points)


def bench_sweep(service, base: sim.ScenarioConfig, strategies: Sequence[sim.Strategy], rate_factors: Sequence[float],
                n_requests: int, payload_seed: int = 0) -> list[BenchRow]:
    mean_points = sum(service.sizes) / service.n
    sat = saturation_rps(base.cost, mean_points)
    rows = []
    for f in rate_factors:
        rate = f * sat
        arrivals = sim.constant_rate(rate, service.request_ids(), n_requests=n_requests, seed=payload_seed)
        for strat in strategies:
            scen = sim.ScenarioConfig(base.n_components, strat, base.cost, base.interference, base.stragglers,
                                      base.seed, base.window_ms)
            m = sim.run(scen, service, arrivals)
            rows.append(BenchRow(f, rate, strat.name, m.p999(), m.mean_loss(), len(m.records), m.reissues, m))
    return rows


def fmt(x: float) -> str:
    return "nan" if math.isnan(x) else f"{x:.6f}"
