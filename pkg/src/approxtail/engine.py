"""Deadline-bounded approximate processing on one component.

A workload's ``prepare(request)`` runs the synopsis pass and returns an object
exposing ``m``, ``agg_ids``, ``correlations``, ``set_size(pos)``,
``initial()``, ``improve(ar, pos)`` and ``result(ar)``.  The engine only
decides which ranked sets get refined before the deadline.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass
from typing import Any, Protocol, Sequence

import numpy as np

SYNOPSIS = "synopsis"
ORIGINAL = "original"


class Clock(Protocol):
    def elapsed(self) -> float:
        """Milliseconds since the request was submitted (queueing included)."""

    def charge(self, kind: str, points: int) -> None:
        """Account for processing ``points`` synopsis or original points."""


class WallClock:
    def __init__(self, submitted: float | None = None):
        self.submitted = time.perf_counter() if submitted is None else submitted

    def elapsed(self) -> float:
        return (time.perf_counter() - self.submitted) * 1000.0

    def charge(self, kind: str, points: int) -> None:
        pass


class ManualClock:
    """Elapsed time advanced by fixed per-point costs; handy for tests."""

    def __init__(self, start: float = 0.0, synopsis_cost: float = 0.0, original_cost: float = 0.0):
        self.now = start
        self.costs = {SYNOPSIS: synopsis_cost, ORIGINAL: original_cost}

    def elapsed(self) -> float:
        return self.now

    def charge(self, kind: str, points: int) -> None:
        self.now += self.costs[kind] * points


@dataclass(frozen=True)
class EngineParams:
    l_spe: float = math.inf
    # cap on refined sets; None means all m
    i_max: int | None = None

    def __post_init__(self):
        if not self.l_spe > 0:
            raise ValueError("l_spe must be > 0")
        if self.i_max is not None and self.i_max < 0:
            raise ValueError("i_max must be >= 0")

    def limit(self, m: int) -> int:
        return m if self.i_max is None else min(self.i_max, m)


@dataclass(frozen=True)
class ComponentOutcome:
    result: Any
    sets_processed: int
    synopsis_only: bool
    elapsed: float
    # aggregated ids of the refined sets, in processing order
    order: tuple[int, ...] = ()


def rank(correlations: Sequence[float], agg_ids: Sequence[int] | None = None) -> list[int]:
    """Positions sorted by descending correlation, ties by ascending aggregated id."""
    c = np.asarray(correlations, dtype=np.float64)
    ids = np.arange(len(c)) if agg_ids is None else np.asarray(agg_ids)
    return [int(p) for p in np.lexsort((ids, -c))]


def process(prepared, params: EngineParams, clock: Clock, trace: list | None = None) -> ComponentOutcome:
    """Run the refinement loop for one prepared request.

    ``i_max`` is read as the maximum number of sets refined.  The deadline is
    tested before each set and a started set always completes.  When
    ``trace`` is a list, the working result after every step is appended.
    """
    m = prepared.m
    clock.charge(SYNOPSIS, m)
    ar = prepared.initial()
    if trace is not None:
        trace.append(prepared.result(ar))
    order = rank(prepared.correlations, prepared.agg_ids)
    limit = params.limit(m)
    i = 0
    while i < limit and clock.elapsed() < params.l_spe:
        pos = order[i]
        clock.charge(ORIGINAL, prepared.set_size(pos))
        ar = prepared.improve(ar, pos)
        i += 1
        if trace is not None:
            trace.append(prepared.result(ar))
    refined = tuple(int(prepared.agg_ids[p]) for p in order[:i])
    return ComponentOutcome(prepared.result(ar), i, i == 0, clock.elapsed(), refined)


def outcome_rows(request_id: str, component_id: int, strategy: str, outcome: ComponentOutcome) -> list[str]:
    return [request_id, str(component_id), strategy, f"{outcome.elapsed:.6f}",
            str(outcome.sets_processed), str(int(outcome.synopsis_only))]


OUTCOME_HEADER = "request_id,component_id,strategy,elapsed_ms,sets_processed,synopsis_only"
