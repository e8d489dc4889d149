"""Fan-out services: a workload's components plus a request pool, with result merging and loss."""

from __future__ import annotations

from typing import Sequence

from . import cf, search
from .synopsis import SynopsisState
from .synth import CfQuery


class _Memo:
    def __init__(self):
        self._prepared: dict = {}
        self._exact: dict = {}

    def prepared(self, request_id: str, comp: int):
        key = (request_id, comp)
        p = self._prepared.get(key)
        if p is None:
            p = self._prepared[key] = self.components[comp].prepare(self.requests[request_id])
        return p

    def exact_part(self, request_id: str, comp: int):
        key = (request_id, comp)
        r = self._exact.get(key)
        if r is None:
            r = self._exact[key] = self.components[comp].exact(self.requests[request_id])
        return r

    def request_ids(self) -> list[str]:
        return list(self.requests)

    @property
    def n(self) -> int:
        return len(self.components)

    @property
    def sizes(self) -> list[int]:
        return [c.n_points for c in self.components]

    @property
    def synopsis_sizes(self) -> list[int]:
        return [c.m for c in self.components]


class CfService(_Memo):
    def __init__(self, states: Sequence[SynopsisState], queries: Sequence[CfQuery], cfg: cf.CfConfig = cf.CfConfig()):
        super().__init__()
        self.cfg = cfg
        self.components = [cf.CfComponent(s, cfg) for s in states]
        self.requests = {q.request.request_id: q.request for q in queries}
        self.actuals = {q.request.request_id: q.actuals for q in queries}
        self._exact_rmse: dict[str, float] = {}

    def predictions(self, request_id: str, parts: dict) -> dict[str, float]:
        req = self.requests[request_id]
        merged = cf.merge_results([parts[s] for s in sorted(parts)], req.targets)
        return cf.finalize(merged, req.active_mean, self.cfg)

    def exact_predictions(self, request_id: str) -> dict[str, float]:
        return self.predictions(request_id, {s: self.exact_part(request_id, s) for s in range(self.n)})

    def exact_rmse(self, request_id: str) -> float:
        v = self._exact_rmse.get(request_id)
        if v is None:
            v = self._exact_rmse[request_id] = cf.rmse(self.exact_predictions(request_id), self.actuals[request_id])
        return v

    def loss(self, request_id: str, parts: dict) -> float:
        approx = cf.rmse(self.predictions(request_id, parts), self.actuals[request_id])
        return cf.accuracy_loss_cf(approx, self.exact_rmse(request_id))


class SearchService(_Memo):
    def __init__(self, states: Sequence[SynopsisState], queries: Sequence[search.SearchRequest],
                 stats: search.CorpusStats | None = None):
        super().__init__()
        self.components = [search.SearchComponent(s, stats) for s in states]
        self.requests = {q.request_id: q for q in queries}
        self._exact_top: dict[str, search.SearchResult] = {}

    def merged(self, request_id: str, parts: dict) -> search.SearchResult:
        return search.merge_topk([parts[s] for s in sorted(parts)], self.requests[request_id].k)

    def exact_top(self, request_id: str) -> search.SearchResult:
        r = self._exact_top.get(request_id)
        if r is None:
            r = self._exact_top[request_id] = self.merged(
                request_id, {s: self.exact_part(request_id, s) for s in range(self.n)})
        return r

    def loss(self, request_id: str, parts: dict) -> float:
        return search.accuracy_loss_search(self.merged(request_id, parts), self.exact_top(request_id))
