"""Discrete-event simulation of a fan-out service on a virtual clock.

Every request fans out to all components.  Each component is a single
non-preemptive FIFO server whose service time is linear in the points it
touches, scaled by a per-component interference multiplier sampled when the
job starts.
"""

from __future__ import annotations

import bisect
import csv
import heapq
import math
from collections import deque
from dataclasses import dataclass, field
from decimal import ROUND_CEILING, Decimal
from pathlib import Path
from typing import Protocol, Sequence, Union

import numpy as np

from . import engine
from .dataset import DataError

# -- latency statistics ---------------------------------------------------------


def percentile(samples: Sequence[float], p: float) -> float:
    """Nearest-rank percentile: the ceil(p/100 * N)-th smallest sample (1-based)."""
    if not samples:
        raise ValueError("percentile of an empty sample")
    if not 0 < p <= 100:
        raise ValueError("p must be in (0, 100]")
    n = len(samples)
    # Decimal keeps e.g. 99.9/100*1000 from rounding up to 1000.0000000001
    rank = int((Decimal(str(p)) / 100 * n).to_integral_value(rounding=ROUND_CEILING))
    rank = min(max(rank, 1), n)
    return sorted(samples)[rank - 1]


# -- strategies -------------------------------------------------------------------


@dataclass(frozen=True)
class Basic:
    name: str = "basic"


@dataclass(frozen=True)
class Reissue:
    percentile: float = 95.0
    min_samples: int = 100
    window: int = 1000
    name: str = "reissue"


@dataclass(frozen=True)
class Partial:
    deadline_ms: float = 100.0
    name: str = "partial"


@dataclass(frozen=True)
class AccuracyAware:
    l_spe_ms: float = 100.0
    # absolute cap on refined sets per component; overrides i_max_fraction
    i_max: int | None = None
    # cap as a fraction of each component's synopsis size; None with i_max None means all
    i_max_fraction: float | None = None
    name: str = "accuracy_aware"

    def params_for(self, m: int) -> engine.EngineParams:
        if self.i_max is not None:
            cap = self.i_max
        elif self.i_max_fraction is not None:
            cap = int(math.ceil(self.i_max_fraction * m))
        else:
            cap = None
        return engine.EngineParams(self.l_spe_ms, cap)


Strategy = Union[Basic, Reissue, Partial, AccuracyAware]
STRATEGY_NAMES = ("basic", "reissue", "partial", "accuracy_aware")


# -- models -----------------------------------------------------------------------


@dataclass(frozen=True)
class CostModel:
    fixed_ms: float = 2.0
    synopsis_point_ms: float = 0.18
    original_point_ms: float = 0.18

    def __post_init__(self):
        if min(self.fixed_ms, self.synopsis_point_ms, self.original_point_ms) < 0:
            raise ValueError("costs must be >= 0")

    @classmethod
    def calibrated(cls, mean_points: float, full_scan_ms: float = 75.0, fixed_ms: float = 2.0,
                   synopsis_factor: float = 1.0) -> "CostModel":
        """Costs such that an uninterfered full scan of ``mean_points`` takes ``full_scan_ms``."""
        per = (full_scan_ms - fixed_ms) / mean_points
        return cls(fixed_ms, per * synopsis_factor, per)


@dataclass(frozen=True)
class InterferenceConfig:
    enabled: bool = True
    median: float = 1.5
    sigma: float = 0.3
    on_mean_ms: float = 1000.0
    off_mean_ms: float = 3000.0


class InterferenceModel:
    """Per-component alternating OFF/ON slowdown, generated lazily in time."""

    def __init__(self, n: int, cfg: InterferenceConfig, seed: int = 0, straggler: dict[int, float] | None = None):
        self.cfg = cfg
        self.straggler = dict(straggler or {})
        self._rngs = [np.random.default_rng([seed, 17, c]) for c in range(n)]
        self._ends: list[list[float]] = [[] for _ in range(n)]
        self._mults: list[list[float]] = [[] for _ in range(n)]
        self._on = [False] * n

    def _extend(self, c: int, t: float) -> None:
        rng, ends, mults = self._rngs[c], self._ends[c], self._mults[c]
        while not ends or ends[-1] <= t:
            start = ends[-1] if ends else 0.0
            on = self._on[c]
            if on:
                dur = rng.exponential(self.cfg.on_mean_ms)
                mult = max(1.0, self.cfg.median * math.exp(self.cfg.sigma * rng.standard_normal()))
            else:
                dur = rng.exponential(self.cfg.off_mean_ms)
                mult = 1.0
            ends.append(start + dur)
            mults.append(mult)
            self._on[c] = not on

    def multiplier(self, c: int, t: float) -> float:
        base = 1.0
        if self.cfg.enabled:
            self._extend(c, t)
            base = self._mults[c][bisect.bisect_right(self._ends[c], t)]
        return base * self.straggler.get(c, 1.0)


# -- arrivals -----------------------------------------------------------------------


@dataclass(frozen=True)
class Arrival:
    time_ms: float
    request_id: str


def constant_rate(rate_rps: float, request_ids: Sequence[str], n_requests: int | None = None,
                  duration_s: float | None = None, seed: int | None = None) -> list[Arrival]:
    """Evenly spaced arrivals; payloads cycle through ``request_ids`` (shuffled when seeded)."""
    if not rate_rps > 0:
        raise ValueError("rate must be > 0")
    if not request_ids:
        raise ValueError("no request payloads")
    if n_requests is None:
        if duration_s is None:
            raise ValueError("need n_requests or duration_s")
        n_requests = int(round(rate_rps * duration_s))
    gap = 1000.0 / rate_rps
    return [Arrival(k * gap, rid) for k, rid in enumerate(_payload_cycle(request_ids, n_requests, seed))]


def _payload_cycle(request_ids: Sequence[str], n: int, seed: int | None) -> list[str]:
    if seed is None:
        return [request_ids[k % len(request_ids)] for k in range(n)]
    rng = np.random.default_rng([seed, 3])
    return [request_ids[int(k)] for k in rng.integers(len(request_ids), size=n)]


def diurnal(bucket_rates: Sequence[float], request_ids: Sequence[str], bucket_ms: float = 3_600_000.0,
            seed: int | None = None) -> list[Arrival]:
    """One evenly spaced block of arrivals per bucket at that bucket's rate (req/s)."""
    times = []
    for b, rate in enumerate(bucket_rates):
        if rate < 0:
            raise ValueError("bucket rates must be >= 0")
        count = int(round(rate * bucket_ms / 1000.0))
        times.extend(b * bucket_ms + k * bucket_ms / count for k in range(count))
    return [Arrival(t, rid) for t, rid in zip(times, _payload_cycle(request_ids, len(times), seed))]


def load_rates(path) -> list[float]:
    """A rate file: one req/s value per line (24 lines for a day); '#' starts a comment."""
    rates = []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        try:
            rates.append(float(line))
        except ValueError:
            raise DataError(f"{path}:{lineno}: bad rate {line!r}") from None
    return rates


def load_trace(path) -> list[Arrival]:
    """``submit_time_ms,request_id`` rows (optional header), returned sorted by time."""
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        for lineno, row in enumerate(csv.reader(fh), 1):
            if not row or not "".join(row).strip():
                continue
            if lineno == 1 and row[0].strip() == "submit_time_ms":
                continue
            if len(row) != 2:
                raise DataError(f"{path}:{lineno}: expected submit_time_ms,request_id")
            try:
                t = float(row[0])
            except ValueError:
                raise DataError(f"{path}:{lineno}: bad time {row[0]!r}") from None
            if not math.isfinite(t) or t < 0:
                raise DataError(f"{path}:{lineno}: bad time {row[0]!r}")
            out.append(Arrival(t, row[1].strip()))
    out.sort(key=lambda a: a.time_ms)
    return out


def write_trace(arrivals: Sequence[Arrival], path) -> None:
    lines = ["submit_time_ms,request_id"] + [f"{a.time_ms!r},{a.request_id}" for a in arrivals]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


# -- services ------------------------------------------------------------------------


class Service(Protocol):
    """What the simulator needs from a workload."""

    n: int
    sizes: Sequence[int]

    def request_ids(self) -> list[str]: ...

    def prepared(self, request_id: str, comp: int): ...

    def exact_part(self, request_id: str, comp: int): ...

    def loss(self, request_id: str, parts: dict) -> float: ...


class UniformService:
    """Fixed-size subsets and no accuracy model; useful for pure queueing studies."""

    def __init__(self, n: int, points: int, request_ids: Sequence[str] = ("r0",)):
        self.n = n
        self.sizes = [points] * n
        self._ids = list(request_ids)

    def request_ids(self) -> list[str]:
        return list(self._ids)

    def prepared(self, request_id, comp):
        raise TypeError("UniformService has no synopsis")

    def exact_part(self, request_id, comp):
        return None

    def loss(self, request_id, parts) -> float:
        return 0.0


# -- scenario & metrics ------------------------------------------------------------------


@dataclass(frozen=True)
class ScenarioConfig:
    n_components: int = 8
    strategy: Strategy = Basic()
    cost: CostModel = CostModel()
    interference: InterferenceConfig = InterferenceConfig()
    # component -> extra constant slowdown factor
    stragglers: tuple[tuple[int, float], ...] = ()
    seed: int = 0
    window_ms: float = 60_000.0

    def __post_init__(self):
        if self.n_components < 1:
            raise ValueError("n_components must be >= 1")
        if not self.window_ms > 0:
            raise ValueError("window_ms must be > 0")
        for c, f in self.stragglers:
            if not 0 <= c < self.n_components or f < 1:
                raise ValueError(f"bad straggler ({c}, {f})")


@dataclass(frozen=True)
class RequestRecord:
    request_id: str
    submit_ms: float
    latencies: tuple[float, ...]
    loss: float
    # per component refined sets (accuracy-aware only)
    sets: tuple[int, ...] = ()
    reissued: int = 0

    @property
    def sets_processed(self) -> int:
        return sum(self.sets)


@dataclass
class Metrics:
    strategy: str
    records: list[RequestRecord] = field(default_factory=list)

    @property
    def latencies(self) -> list[float]:
        return [x for r in self.records for x in r.latencies]

    def p999(self) -> float:
        lat = self.latencies
        return percentile(lat, 99.9) if lat else math.nan

    def mean_loss(self) -> float:
        return math.fsum(r.loss for r in self.records) / len(self.records) if self.records else math.nan

    @property
    def reissues(self) -> int:
        return sum(r.reissued for r in self.records)

    def windows(self, window_ms: float) -> list[tuple[float, float, float, int]]:
        groups: dict[int, list[RequestRecord]] = {}
        for r in self.records:
            groups.setdefault(int(r.submit_ms // window_ms), []).append(r)
        rows = []
        for w in sorted(groups):
            recs = groups[w]
            lat = [x for r in recs for x in r.latencies]
            rows.append((w * window_ms, percentile(lat, 99.9), math.fsum(r.loss for r in recs) / len(recs), len(recs)))
        return rows


METRICS_HEADER = "window_start_ms,strategy,p999_latency_ms,mean_accuracy_loss_pct,request_count"


def metrics_rows(m: Metrics, window_ms: float) -> list[str]:
    return [f"{w:.3f},{m.strategy},{p:.6f},{loss:.6f},{n}" for w, p, loss, n in m.windows(window_ms)]


# -- event loop ------------------------------------------------------------------------

_COMPLETE, _ARRIVE, _CHECK = 0, 1, 2


class _Job:
    __slots__ = ("req", "subset", "comp", "enqueued", "cancelled", "started")

    def __init__(self, req: int, subset: int, comp: int, enqueued: float):
        self.req = req
        self.subset = subset
        self.comp = comp
        self.enqueued = enqueued
        self.cancelled = False
        self.started = False


class _Req:
    __slots__ = ("rid", "submit", "latency", "parts", "copies", "reissued", "sets")

    def __init__(self, rid: str, submit: float, n: int):
        self.rid = rid
        self.submit = submit
        self.latency = [math.nan] * n
        self.parts: dict = {}
        self.copies: list[list[_Job]] = [[] for _ in range(n)]
        self.reissued = 0
        self.sets = [0] * n


class _SimClock:
    """Engine clock for one job: elapsed is measured from the request's submission."""

    def __init__(self, submit: float, start: float, mult: float, cost: CostModel):
        self.submit = submit
        self.mult = mult
        self.unit = {engine.SYNOPSIS: cost.synopsis_point_ms, engine.ORIGINAL: cost.original_point_ms}
        self.now = start + cost.fixed_ms * mult

    def elapsed(self) -> float:
        return self.now - self.submit

    def charge(self, kind: str, points: int) -> None:
        self.now += self.unit[kind] * points * self.mult


def run(scenario: ScenarioConfig, service: Service, arrivals: Sequence[Arrival]) -> Metrics:
    n = scenario.n_components
    if service.n != n:
        raise ValueError(f"service has {service.n} components, scenario {n}")
    known = set(service.request_ids())
    for a in arrivals:
        if a.request_id not in known:
            raise DataError(f"trace refers to unknown request {a.request_id!r}")
    strat = scenario.strategy
    cost = scenario.cost
    interference = InterferenceModel(n, scenario.interference, scenario.seed, dict(scenario.stragglers))
    queues: list[deque] = [deque() for _ in range(n)]
    busy = [False] * n
    reqs: list[_Req] = []
    history: deque = deque(maxlen=strat.window if isinstance(strat, Reissue) else 1)
    events: list = []
    seq = 0

    def push(t, prio, payload):
        nonlocal seq
        heapq.heappush(events, (t, prio, seq, payload))
        seq += 1

    def start(job: _Job, t: float) -> None:
        busy[job.comp] = True
        job.started = True
        mult = interference.multiplier(job.comp, t)
        req = reqs[job.req]
        if isinstance(strat, AccuracyAware):
            prepared = service.prepared(req.rid, job.subset)
            clock = _SimClock(req.submit, t, mult, cost)
            out = engine.process(prepared, strat.params_for(prepared.m), clock)
            req.parts[job.subset] = out.result
            req.sets[job.subset] = out.sets_processed
            end = clock.now
        else:
            end = t + (cost.fixed_ms + cost.original_point_ms * service.sizes[job.subset]) * mult
        push(end, _COMPLETE, job)

    def enqueue(job: _Job, t: float) -> None:
        reqs[job.req].copies[job.subset].append(job)
        if busy[job.comp]:
            queues[job.comp].append(job)
        else:
            start(job, t)

    def next_job(c: int, t: float) -> None:
        q = queues[c]
        while q:
            job = q.popleft()
            if not job.cancelled:
                start(job, t)
                return
        busy[c] = False

    for k, a in enumerate(arrivals):
        push(a.time_ms, _ARRIVE, k)

    while events:
        t, kind, _, payload = heapq.heappop(events)
        if kind == _ARRIVE:
            a = arrivals[payload]
            req = _Req(a.request_id, t, n)
            reqs.append(req)
            idx = len(reqs) - 1
            for s in range(n):
                enqueue(_Job(idx, s, s, t), t)
            if isinstance(strat, Reissue) and n > 1 and len(history) >= strat.min_samples:
                threshold = percentile(list(history), strat.percentile)
                for s in range(n):
                    push(t + threshold, _CHECK, (idx, s))
        elif kind == _COMPLETE:
            job = payload
            req = reqs[job.req]
            if isinstance(strat, Reissue):
                history.append(t - job.enqueued)
            if math.isnan(req.latency[job.subset]):
                req.latency[job.subset] = t - req.submit
                for other in req.copies[job.subset]:
                    if other is not job and not other.started:
                        other.cancelled = True
            next_job(job.comp, t)
        else:
            idx, s = payload
            req = reqs[idx]
            if math.isnan(req.latency[s]) and len(req.copies[s]) == 1:
                req.reissued += 1
                enqueue(_Job(idx, s, (s + 1) % n, t), t)

    metrics = Metrics(strat.name)
    for req in reqs:
        lat = list(req.latency)
        if isinstance(strat, AccuracyAware):
            parts = req.parts
        elif isinstance(strat, Partial):
            parts = {s: service.exact_part(req.rid, s) for s in range(n) if lat[s] <= strat.deadline_ms}
            lat = [min(x, strat.deadline_ms) for x in lat]
        else:
            parts = {s: service.exact_part(req.rid, s) for s in range(n)}
        sets = tuple(req.sets) if isinstance(strat, AccuracyAware) else ()
        metrics.records.append(RequestRecord(req.rid, req.submit, tuple(lat), service.loss(req.rid, parts),
                                             sets, req.reissued))
    return metrics
