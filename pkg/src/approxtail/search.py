"""Inverted-index search: tf-idf cosine scoring, top-k ranking and overlap accuracy."""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from .dataset import id_key, sorted_ids
from .synopsis import AggregatedPage, SynopsisState


@dataclass(frozen=True)
class SearchRequest:
    terms: tuple[str, ...]
    k: int = 10
    request_id: str = ""

    def __post_init__(self):
        if not self.terms:
            raise ValueError("a query needs at least one term")
        if self.k < 1:
            raise ValueError("k must be >= 1")


@dataclass(frozen=True)
class Hit:
    doc_id: str
    score: float
    # stand-in for an aggregated page whose members have not been scored yet
    placeholder: bool = False


def hit_key(h: Hit):
    return (-h.score, id_key(h.doc_id))


@dataclass(frozen=True)
class SearchResult:
    hits: tuple[Hit, ...]

    @property
    def doc_ids(self) -> list[str]:
        return [h.doc_id for h in self.hits if not h.placeholder]

    def __len__(self) -> int:
        return len(self.hits)


def top_k(hits: Iterable[Hit], k: int) -> SearchResult:
    return SearchResult(tuple(heapq.nsmallest(k, hits, key=hit_key)))


@dataclass(frozen=True)
class CorpusStats:
    n_docs: int
    df: Mapping[str, int]

    @classmethod
    def from_docs(cls, docs: Mapping[str, Mapping[str, int]]) -> "CorpusStats":
        df: dict[str, int] = {}
        for tf in docs.values():
            for t in tf:
                df[t] = df.get(t, 0) + 1
        return cls(len(docs), df)

    def idf(self, term: str) -> float:
        d = self.df.get(term, 0)
        return math.log1p(self.n_docs / d) if d else 0.0


def doc_norm(tf: Mapping[str, int], stats: CorpusStats) -> float:
    return math.sqrt(math.fsum((c * stats.idf(t)) ** 2 for t, c in tf.items()))


def score(tf: Mapping[str, int], q: SearchRequest, stats: CorpusStats, norm: float | None = None) -> float:
    """tf-idf cosine of a document against the query terms."""
    if norm is None:
        norm = doc_norm(tf, stats)
    if norm == 0:
        return 0.0
    num = math.fsum(tf.get(t, 0) * stats.idf(t) for t in q.terms)
    return num / norm


def score_aggregated(page: AggregatedPage, q: SearchRequest, stats: CorpusStats) -> float:
    return score(page.terms, q, stats)


class InvertedIndex:
    """term -> postings of (doc id, count), sorted by doc id."""

    def __init__(self, docs: Mapping[str, Mapping[str, int]], stats: CorpusStats | None = None):
        self.docs = docs
        self.stats = stats or CorpusStats.from_docs(docs)
        self.doc_lengths = {d: sum(tf.values()) for d, tf in docs.items()}
        self.norms = {d: doc_norm(tf, self.stats) for d, tf in docs.items()}
        postings: dict[str, list[tuple[str, int]]] = {}
        for d in sorted_ids(docs):
            for t, c in docs[d].items():
                postings.setdefault(t, []).append((d, c))
        self.postings = postings

    @property
    def n_docs(self) -> int:
        return len(self.docs)

    def doc_score(self, doc_id: str, q: SearchRequest) -> float:
        return score(self.docs[doc_id], q, self.stats, self.norms[doc_id])


def search_exact(index: InvertedIndex, q: SearchRequest) -> SearchResult:
    matched = {d for t in set(q.terms) for d, _ in index.postings.get(t, ())}
    hits = (Hit(d, index.doc_score(d, q)) for d in matched)
    return top_k((h for h in hits if h.score > 0), q.k)


def merge_topk(results: Sequence[SearchResult], k: int) -> SearchResult:
    return top_k((h for r in results for h in r.hits), k)


def accuracy_search(retrieved: SearchResult, actual: SearchResult) -> float:
    """Share of the actual top-k documents present in the retrieved list."""
    truth = set(actual.doc_ids)
    if not truth:
        return 1.0
    return len(truth & set(retrieved.doc_ids)) / len(truth)


def accuracy_loss_search(retrieved: SearchResult, actual: SearchResult) -> float:
    return 100.0 * (1.0 - accuracy_search(retrieved, actual))


class SearchComponent:
    """One component's pages, inverted index and aggregated pages."""

    def __init__(self, state: SynopsisState, stats: CorpusStats | None = None):
        self.state = state
        self.component_id = state.component_id
        self.index = InvertedIndex(state.subset.points, stats)
        self.stats = self.index.stats
        self.agg_ids = state.synopsis.ids
        self.members = [sorted_ids(state.index.mapping[a]) for a in self.agg_ids]
        syn = state.synopsis.points
        self.agg_norms = [doc_norm(syn[a].payload.terms, self.stats) for a in self.agg_ids]

    @property
    def m(self) -> int:
        return len(self.agg_ids)

    @property
    def n_points(self) -> int:
        return self.index.n_docs

    def exact(self, q: SearchRequest) -> SearchResult:
        return search_exact(self.index, q)

    def prepare(self, q: SearchRequest) -> "SearchPrepared":
        return SearchPrepared(self, q)


class SearchPrepared:
    """Aggregated-page scores for one query; member scoring is cached per set."""

    def __init__(self, comp: SearchComponent, q: SearchRequest):
        self.comp = comp
        self.request = q
        self.agg_ids = comp.agg_ids
        syn = comp.state.synopsis.points
        self.correlations = np.array([
            score(syn[a].payload.terms, q, comp.stats, norm) for a, norm in zip(comp.agg_ids, comp.agg_norms)
        ])
        self.placeholders = [
            Hit(f"~agg{comp.component_id}.{a}", float(c), True)
            for a, c in zip(comp.agg_ids, self.correlations)
        ]
        self._set_hits: dict[int, SearchResult] = {}

    @property
    def m(self) -> int:
        return self.comp.m

    def set_size(self, pos: int) -> int:
        return len(self.comp.members[pos])

    def set_hits(self, pos: int) -> SearchResult:
        res = self._set_hits.get(pos)
        if res is None:
            hits = (Hit(d, self.comp.index.doc_score(d, self.request)) for d in self.comp.members[pos])
            res = top_k((h for h in hits if h.score > 0), self.request.k)
            self._set_hits[pos] = res
        return res

    # working result: (top-k over refined members, positions refined so far)
    def initial(self):
        return (SearchResult(()), frozenset())

    def improve(self, ar, pos: int):
        refined, done = ar
        return (merge_topk([refined, self.set_hits(pos)], self.request.k), done | {pos})

    def result(self, ar) -> SearchResult:
        refined, done = ar
        pending = (p for i, p in enumerate(self.placeholders) if i not in done and p.score > 0)
        return top_k(list(refined.hits) + list(pending), self.request.k)
