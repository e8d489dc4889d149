"""Seeded synthetic workloads: clustered ratings with held-out active users, and topical text."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .cf import CfRequest
from .dataset import Corpus, DataError, RatingMatrix, format_doc, sorted_ids, tokenize
from .search import SearchRequest


@dataclass(frozen=True)
class CfQuery:
    request: CfRequest
    actuals: Mapping[str, float]


@dataclass(frozen=True)
class RatingModel:
    n_items: int = 200
    n_clusters: int = 10
    density: float = 0.25
    # spread of a user's latent position around its cluster centre
    user_noise: float = 0.35
    # std of the per-item offset shared by everyone
    item_bias: float = 1.0
    # weight of the cluster-specific taste term
    taste: float = 0.5
    rating_noise: float = 0.35
    mean: float = 3.0


def _rating_model_draws(model: RatingModel, rng: np.random.Generator):
    angles = 2 * np.pi * np.arange(model.n_clusters) / model.n_clusters
    centres = np.stack([np.cos(angles), np.sin(angles)], axis=1)
    item_vecs = rng.normal(size=(model.n_items, 2))
    bias = rng.normal(scale=model.item_bias, size=model.n_items)
    return centres, item_vecs, bias


def _draw_user(model, centres, item_vecs, bias, rng, scale) -> dict[str, float]:
    c = rng.integers(model.n_clusters)
    pos = centres[c] + rng.normal(scale=model.user_noise, size=2)
    n_rated = max(5, rng.binomial(model.n_items, model.density))
    items = np.sort(rng.choice(model.n_items, size=n_rated, replace=False))
    raw = model.mean + bias[items] + model.taste * (item_vecs[items] @ pos)
    raw = raw + rng.normal(scale=model.rating_noise, size=n_rated)
    lo, hi = scale
    vals = np.clip(np.rint(raw), lo, hi)
    return {str(i): float(v) for i, v in zip(items, vals)}


def generate_cf(
    n_users: int,
    n_active: int,
    model: RatingModel = RatingModel(),
    known_fraction: float = 0.8,
    seed: int = 0,
    scale: tuple[float, float] = (1.0, 5.0),
) -> tuple[RatingMatrix, list[CfQuery]]:
    """Training ratings plus held-out active users split into known/target items."""
    rng = np.random.default_rng(seed)
    centres, item_vecs, bias = _rating_model_draws(model, rng)
    rows = {str(u): _draw_user(model, centres, item_vecs, bias, rng, scale) for u in range(n_users)}
    queries = []
    for q in range(n_active):
        ratings = _draw_user(model, centres, item_vecs, bias, rng, scale)
        items = list(ratings)
        perm = rng.permutation(len(items))
        n_known = max(2, int(round(known_fraction * len(items))))
        known = {items[k]: ratings[items[k]] for k in sorted(perm[:n_known])}
        targets = tuple(sorted_ids(items[k] for k in perm[n_known:]))
        if not targets:
            continue
        queries.append(CfQuery(CfRequest(known, targets, f"a{q}"), {t: ratings[t] for t in targets}))
    return RatingMatrix(rows, scale), queries


@dataclass(frozen=True)
class TextModel:
    """Topical words sit on a circular vocabulary; topic t favours words near angle 2*pi*t/n_topics."""

    n_topics: int = 10
    ring_terms: int = 400
    # von Mises concentration of a topic's word distribution around its centre
    kappa: float = 8.0
    # std (radians) of a document's centre around its topic's centre
    doc_jitter: float = 0.1
    n_common: int = 200
    doc_length: int = 60
    # share of a document's tokens drawn from the ring (the rest from common words)
    topical_share: float = 0.7
    zipf: float = 1.1


def _zipf_weights(n: int, s: float) -> np.ndarray:
    w = 1.0 / np.arange(1, n + 1) ** s
    return w / w.sum()


def _ring_weights(model: TextModel, centre: float) -> np.ndarray:
    angles = 2 * np.pi * np.arange(model.ring_terms) / model.ring_terms
    w = np.exp(model.kappa * (np.cos(angles - centre) - 1.0))
    return w / w.sum()


def _topic_centre(model: TextModel, t: int) -> float:
    return 2 * np.pi * t / model.n_topics


def generate_corpus(n_docs: int, model: TextModel = TextModel(), seed: int = 0) -> Corpus:
    rng = np.random.default_rng(seed)
    ring = [f"w{k}" for k in range(model.ring_terms)]
    common = [f"c{k}" for k in range(model.n_common)]
    cw = _zipf_weights(model.n_common, model.zipf)
    docs = {}
    for d in range(n_docs):
        t = rng.integers(model.n_topics)
        centre = _topic_centre(model, t) + rng.normal(scale=model.doc_jitter)
        length = max(5, rng.poisson(model.doc_length))
        n_top = rng.binomial(length, model.topical_share)
        words = [ring[k] for k in rng.choice(model.ring_terms, size=n_top, p=_ring_weights(model, centre))]
        words += [common[k] for k in rng.choice(model.n_common, size=length - n_top, p=cw)]
        docs[f"d{d}"] = dict(Counter(words))
    return Corpus(docs)


def generate_queries(n_queries: int, model: TextModel = TextModel(), terms: tuple[int, int] = (2, 3),
                     k: int = 10, seed: int = 0, core: int = 8) -> list[SearchRequest]:
    """Short queries drawn from the ``2*core+1`` ring words around one topic's centre."""
    rng = np.random.default_rng(seed)
    out = []
    for q in range(n_queries):
        t = rng.integers(model.n_topics)
        mid = int(round(t * model.ring_terms / model.n_topics))
        n = rng.integers(terms[0], terms[1] + 1)
        offsets = rng.choice(np.arange(-core, core + 1), size=n, replace=False)
        words = sorted({f"w{(mid + int(o)) % model.ring_terms}" for o in offsets})
        out.append(SearchRequest(tuple(words), k, f"q{q}"))
    return out


# -- request files -------------------------------------------------------------


def write_cf_queries(queries: Sequence[CfQuery], active_path, testset_path) -> None:
    """Known ratings as ``user_id,item_id,rating``; held-out targets as ``user_id,item_id,actual_rating``."""
    known, held = [], []
    for q in queries:
        rid = q.request.request_id
        known += [f"{rid},{item},{q.request.known[item]!r}" for item in sorted_ids(q.request.known)]
        held += [f"{rid},{item},{q.actuals[item]!r}" for item in q.request.targets]
    Path(active_path).write_text("".join(x + "\n" for x in known), encoding="utf-8")
    Path(testset_path).write_text("".join(x + "\n" for x in held), encoding="utf-8")


def _read_triples(path) -> dict[str, dict[str, float]]:
    out: dict[str, dict[str, float]] = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        parts = [p.strip() for p in line.split(",")]
        if len(parts) != 3 or not parts[0] or not parts[1]:
            raise DataError(f"{path}:{lineno}: expected user_id,item_id,rating")
        try:
            value = float(parts[2])
        except ValueError:
            raise DataError(f"{path}:{lineno}: bad rating {parts[2]!r}") from None
        row = out.setdefault(parts[0], {})
        if parts[1] in row:
            raise DataError(f"{path}:{lineno}: duplicate rating for ({parts[0]},{parts[1]})")
        row[parts[1]] = value
    return out


def load_cf_queries(active_path, testset_path=None) -> list[CfQuery]:
    """Active users' known ratings plus (optionally) their held-out test items."""
    known = _read_triples(active_path)
    held = _read_triples(testset_path) if testset_path else {}
    stray = set(held) - set(known)
    if stray:
        raise DataError(f"test set users without known ratings: {sorted_ids(stray)[:5]}")
    out = []
    for rid in sorted_ids(known):
        targets = held.get(rid, {})
        try:
            req = CfRequest(known[rid], tuple(sorted_ids(targets)), rid)
        except ValueError as exc:
            raise DataError(f"request {rid!r}: {exc}") from None
        out.append(CfQuery(req, targets))
    return out


def write_search_queries(queries: Sequence[SearchRequest], path) -> None:
    Path(path).write_text("".join(f"{q.request_id}\t{' '.join(q.terms)}\n" for q in queries), encoding="utf-8")


def load_search_queries(path, k: int = 10) -> list[SearchRequest]:
    out = []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        rid, sep, body = line.partition("\t")
        terms = tuple(tokenize(body))
        if not sep or not rid.strip() or not terms:
            raise DataError(f"{path}:{lineno}: expected query_id<TAB>terms")
        out.append(SearchRequest(terms, k, rid.strip()))
    return out


def write_docs(docs: Mapping[str, Mapping[str, int]], path) -> None:
    Path(path).write_text("".join(format_doc(d, docs[d]) + "\n" for d in sorted_ids(docs)), encoding="utf-8")
