"""Synopsis creation, aggregation and incremental updating for one component."""

from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping, Union

from . import rtree as rt
from .dataset import (
    NUMERIC,
    TEXT,
    DataError,
    Subset,
    format_doc,
    id_key,
    parse_corpus,
    parse_ratings,
    sorted_ids,
    vectorize,
)
from .dimred import FeatureMatrix, SvdConfig, reduce

log = logging.getLogger(__name__)

STATE_FORMAT_VERSION = 1


@dataclass(frozen=True)
class AggregatedUser:
    """item -> (mean rating over the members who rated it, number of such raters)."""

    items: Mapping[str, tuple[float, int]]

    def rating_map(self) -> dict[str, float]:
        return {i: mc[0] for i, mc in self.items.items()}


@dataclass(frozen=True)
class AggregatedPage:
    """Merged term counts of the member pages."""

    terms: Mapping[str, int]
    pages: int


Payload = Union[AggregatedUser, AggregatedPage]


@dataclass(frozen=True)
class AggregatedPoint:
    id: int
    payload: Payload


@dataclass(frozen=True)
class Synopsis:
    points: Mapping[int, AggregatedPoint]
    component_id: int
    version: int = 0

    @property
    def m(self) -> int:
        return len(self.points)

    @property
    def ids(self) -> list[int]:
        return sorted(self.points)


@dataclass(frozen=True)
class SynopsisConfig:
    svd: SvdConfig = SvdConfig()
    compression_ratio: float = 100.0
    min_entries: int = 2
    max_entries: int = 8
    # advisory lower bound on synopsis size; the compression bound takes precedence
    min_synopsis_size: int = 2
    # re-run the full reduction on every update instead of projecting changed points
    full_reduce_on_update: bool = False

    def __post_init__(self):
        if not self.compression_ratio > 1:
            raise ValueError("compression_ratio must be > 1")


@dataclass(frozen=True)
class ChangeSet:
    added: Mapping[str, Mapping] = field(default_factory=dict)
    modified: Mapping[str, Mapping] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.added) + len(self.modified)


@dataclass(frozen=True)
class SynopsisState:
    subset: Subset
    features: FeatureMatrix
    tree: rt.RTree
    index: rt.IndexFile
    synopsis: Synopsis
    config: SynopsisConfig
    # depth is tracked as a level counted from the leaves so root splits do not shift it
    level: int
    count_at_selection: int
    recomputed: frozenset = frozenset()

    @property
    def kind(self) -> str:
        return self.subset.kind

    @property
    def component_id(self) -> int:
        return self.subset.component_id

    @property
    def version(self) -> int:
        return self.synopsis.version

    def members(self, agg_id: int) -> frozenset:
        return self.index.mapping[agg_id]


# -- aggregation --------------------------------------------------------------


def aggregate_numeric(members, rows: Mapping[str, Mapping[str, float]]) -> AggregatedUser:
    members = list(members)
    if not members:
        raise ValueError("cannot aggregate an empty member set")
    per_item: dict[str, list[float]] = {}
    for uid in sorted_ids(members):
        for item, r in rows[uid].items():
            per_item.setdefault(item, []).append(r)
    return AggregatedUser({i: (math.fsum(v) / len(v), len(v)) for i, v in sorted(per_item.items())})


def aggregate_text(members, docs: Mapping[str, Mapping[str, int]]) -> AggregatedPage:
    members = list(members)
    if not members:
        raise ValueError("cannot aggregate an empty member set")
    merged: dict[str, int] = {}
    for did in members:
        for term, c in docs[did].items():
            merged[term] = merged.get(term, 0) + c
    return AggregatedPage(dict(sorted(merged.items())), len(members))


def aggregate(kind: str, members, points: Mapping[str, Mapping]) -> Payload:
    if kind == NUMERIC:
        return aggregate_numeric(members, points)
    return aggregate_text(members, points)


# -- creation ----------------------------------------------------------------


def _depth_of_level(tree: rt.RTree, level: int) -> int:
    return tree.height - 1 - level


def create(subset: Subset, cfg: SynopsisConfig = SynopsisConfig(), timings: dict | None = None) -> SynopsisState:
    """vectorize -> reduce -> R-tree -> depth selection -> index -> aggregation.

    When ``timings`` is given it receives wall seconds for the three steps
    under the keys ``reduce``, ``rtree`` and ``aggregate``.
    """
    if not len(subset):
        raise DataError("cannot create a synopsis for an empty subset")
    t0 = time.perf_counter()
    features = reduce(vectorize(subset), cfg.svd)
    t1 = time.perf_counter()
    tree = rt.build(((pid, features.row(pid)) for pid in subset.ids), cfg.min_entries, cfg.max_entries)
    t2 = time.perf_counter()
    state = _index_and_aggregate(subset, features, tree, cfg, version=0)
    if timings is not None:
        timings.update(reduce=t1 - t0, rtree=t2 - t1, aggregate=time.perf_counter() - t2)
    return state


def _index_and_aggregate(subset, features, tree, cfg, version) -> SynopsisState:
    depth = tree.select_depth(len(subset), cfg.compression_ratio)
    index = tree.index_at_depth(depth)
    if len(index) < cfg.min_synopsis_size:
        log.info("component %d: synopsis has %d points (< %d); compression bound wins",
                 subset.component_id, len(index), cfg.min_synopsis_size)
    points = {a: AggregatedPoint(a, aggregate(subset.kind, index.mapping[a], subset.points)) for a in index.agg_ids}
    return SynopsisState(
        subset=subset,
        features=features,
        tree=tree,
        index=index,
        synopsis=Synopsis(points, subset.component_id, version),
        config=cfg,
        level=tree.height - 1 - depth,
        count_at_selection=len(index),
        recomputed=frozenset(index.agg_ids),
    )


# -- updating ----------------------------------------------------------------


def validate_changes(state: SynopsisState, changes: ChangeSet) -> None:
    points = state.subset.points
    lo, hi = state.subset.scale
    for pid in changes.added:
        if pid in points:
            raise DataError(f"added point {pid!r} already exists")
        if pid in changes.modified:
            raise DataError(f"point {pid!r} is both added and modified")
    for pid in changes.modified:
        if pid not in points:
            raise DataError(f"modified point {pid!r} does not exist")
    for pid, content in {**changes.added, **changes.modified}.items():
        if not content:
            raise DataError(f"point {pid!r} has empty content")
        for attr, value in content.items():
            if state.kind == NUMERIC and not (lo <= value <= hi):
                raise DataError(f"rating {value} for ({pid},{attr}) outside scale")
            if state.kind == TEXT and (value < 1 or int(value) != value):
                raise DataError(f"document {pid!r}: bad count {value!r} for {attr!r}")


def update(state: SynopsisState, changes: ChangeSet) -> SynopsisState:
    """Apply additions/modifications, touching only the affected aggregated points.

    The input state is left untouched; a new state with ``version + 1`` is
    returned, whose ``recomputed`` field lists the aggregated ids rebuilt.
    """
    validate_changes(state, changes)
    cfg = state.config
    version = state.version + 1
    if not len(changes):
        return replace(state, synopsis=replace(state.synopsis, version=version), recomputed=frozenset())

    points = dict(state.subset.points)
    for pid, content in {**changes.added, **changes.modified}.items():
        points[pid] = dict(content)
    subset = state.subset.with_points(points)

    if cfg.full_reduce_on_update:
        fresh = create(subset, cfg)
        return replace(fresh, synopsis=replace(fresh.synopsis, version=version))

    touched = sorted_ids(list(changes.modified) + list(changes.added))
    new_rows = {pid: state.features.project(points[pid]) for pid in touched}
    features = state.features.with_rows(new_rows)
    tree = state.tree.copy()
    for pid in sorted_ids(changes.modified):
        tree.delete(pid)
    for pid in touched:
        tree.insert(pid, features.row(pid))

    level, count_at_selection = state.level, state.count_at_selection
    bound = len(subset) / cfg.compression_ratio
    reselect = level >= tree.height
    if not reselect:
        count = tree.node_counts()[_depth_of_level(tree, level)]
        reselect = count > max(bound, 1) or count < 0.5 * count_at_selection
    if reselect:
        depth = tree.select_depth(len(subset), cfg.compression_ratio)
        level = tree.height - 1 - depth
        count_at_selection = tree.node_counts()[depth]
    index = tree.index_at_depth(_depth_of_level(tree, level))

    modified = frozenset(changes.modified)
    old_map = state.index.mapping
    new_points, recomputed = {}, set()
    for agg in index.agg_ids:
        members = index.mapping[agg]
        if old_map.get(agg) == members and not (members & modified):
            new_points[agg] = state.synopsis.points[agg]
        else:
            new_points[agg] = AggregatedPoint(agg, aggregate(subset.kind, members, points))
            recomputed.add(agg)
    return SynopsisState(
        subset=subset,
        features=features,
        tree=tree,
        index=index,
        synopsis=Synopsis(new_points, subset.component_id, version),
        config=cfg,
        level=level,
        count_at_selection=count_at_selection,
        recomputed=frozenset(recomputed),
    )


def audit(state: SynopsisState) -> list[str]:
    """Consistency problems between raw data, tree, index and synopsis."""
    problems = [f"tree: {p}" for p in state.tree.check()]
    ids = frozenset(state.subset.points)
    if frozenset(state.tree.points) != ids:
        problems.append("tree points differ from subset")
    if state.index.universe != ids:
        problems.append("index does not cover the subset exactly")
    if set(state.index.mapping) != set(state.synopsis.points):
        problems.append("synopsis ids differ from index ids")
    for agg, members in state.index.mapping.items():
        ap = state.synopsis.points.get(agg)
        if ap is not None and ap.payload != aggregate(state.kind, members, state.subset.points):
            problems.append(f"aggregated point {agg} is stale")
    depth = _depth_of_level(state.tree, state.level)
    if depth < 0 or sorted(n.id for n in state.tree.nodes_at_depth(depth)) != state.index.agg_ids:
        problems.append("index does not match the tree at the stored depth")
    return problems


# -- persistence -------------------------------------------------------------


def format_synopsis(syn: Synopsis, kind: str) -> str:
    lines = [f"# synopsis kind={kind} component={syn.component_id} version={syn.version}"]
    for agg in syn.ids:
        p = syn.points[agg].payload
        if isinstance(p, AggregatedUser):
            fields = [f"{i}:{mean!r}:{cnt}" for i, (mean, cnt) in sorted(p.items.items(), key=lambda kv: id_key(kv[0]))]
        else:
            fields = [f"{t}:{c}" for t, c in sorted(p.terms.items())]
        lines.append(" ".join([str(agg)] + fields))
    return "\n".join(lines) + "\n"


def parse_synopsis(text: str, index: rt.IndexFile) -> tuple[Synopsis, str]:
    lines = text.splitlines()
    header = dict(kv.split("=", 1) for kv in lines[0].lstrip("# ").split()[1:])
    kind = header["kind"]
    points = {}
    for line in lines[1:]:
        if not line.strip():
            continue
        head, *fields = line.split()
        agg = int(head)
        if kind == NUMERIC:
            items = {}
            for f in fields:
                item, mean, cnt = f.rsplit(":", 2)
                items[item] = (float(mean), int(cnt))
            payload = AggregatedUser(dict(sorted(items.items())))
        else:
            terms = {}
            for f in fields:
                term, cnt = f.rsplit(":", 1)
                terms[term] = int(cnt)
            payload = AggregatedPage(dict(sorted(terms.items())), len(index.mapping[agg]))
        points[agg] = AggregatedPoint(agg, payload)
    return Synopsis(points, int(header["component"]), int(header["version"])), kind


def config_to_dict(cfg: SynopsisConfig) -> dict:
    return {
        "svd": {
            "j": cfg.svd.j,
            "iters_per_dim": cfg.svd.iters_per_dim,
            "learning_rate": cfg.svd.learning_rate,
            "regularization": cfg.svd.regularization,
            "seed": cfg.svd.seed,
        },
        "compression_ratio": cfg.compression_ratio,
        "min_entries": cfg.min_entries,
        "max_entries": cfg.max_entries,
        "min_synopsis_size": cfg.min_synopsis_size,
        "full_reduce_on_update": cfg.full_reduce_on_update,
    }


def config_from_dict(d: dict) -> SynopsisConfig:
    d = dict(d)
    return SynopsisConfig(svd=SvdConfig(**d.pop("svd")), **d)


def save_state(state: SynopsisState, directory) -> None:
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    kind = state.kind
    if kind == NUMERIC:
        lines = [f"{u},{i},{state.subset.points[u][i]!r}" for u in state.subset.ids for i in sorted_ids(state.subset.points[u])]
        (out / "data.csv").write_text("".join(x + "\n" for x in lines), encoding="utf-8")
    else:
        lines = [format_doc(d, state.subset.points[d]) for d in state.subset.ids]
        (out / "data.tsv").write_text("".join(x + "\n" for x in lines), encoding="utf-8")
    state.features.to_csv(out / "features.csv")
    state.features.to_csv(out / "col_features.csv", cols=True)
    state.tree.save(out / "rtree.json")
    state.index.to_csv(out / "index.csv")
    (out / "synopsis.txt").write_text(format_synopsis(state.synopsis, kind), encoding="utf-8")
    meta = {
        "format_version": STATE_FORMAT_VERSION,
        "kind": kind,
        "component_id": state.component_id,
        "scale": list(state.subset.scale),
        "depth": state.index.depth,
        "level": state.level,
        "count_at_selection": state.count_at_selection,
        "recomputed": sorted(state.recomputed),
        "config": config_to_dict(state.config),
    }
    (out / "meta.json").write_text(json.dumps(meta, indent=1, sort_keys=True) + "\n", encoding="utf-8")


def load_state(directory) -> SynopsisState:
    src = Path(directory)
    meta = json.loads((src / "meta.json").read_text(encoding="utf-8"))
    if meta.get("format_version") != STATE_FORMAT_VERSION:
        raise DataError(f"{src}: unsupported state format {meta.get('format_version')}")
    kind = meta["kind"]
    scale = tuple(meta["scale"])
    if kind == NUMERIC:
        rows = parse_ratings((src / "data.csv").read_text(encoding="utf-8").splitlines(), scale).rows
        subset = Subset(NUMERIC, meta["component_id"], {u: dict(r) for u, r in rows.items()}, scale)
    else:
        docs = parse_corpus((src / "data.tsv").read_text(encoding="utf-8").splitlines()).docs
        subset = Subset(TEXT, meta["component_id"], {d: dict(t) for d, t in docs.items()}, scale)
    cfg = config_from_dict(meta["config"])
    features = FeatureMatrix.from_csv(src / "features.csv", src / "col_features.csv", cfg.svd.regularization,
                                      dense=kind == TEXT)
    tree = rt.RTree.load(src / "rtree.json")
    index = rt.IndexFile.from_csv(src / "index.csv", meta["depth"])
    synopsis, _ = parse_synopsis((src / "synopsis.txt").read_text(encoding="utf-8"), index)
    return SynopsisState(
        subset=subset,
        features=features,
        tree=tree,
        index=index,
        synopsis=synopsis,
        config=cfg,
        level=meta["level"],
        count_at_selection=meta["count_at_selection"],
        recomputed=frozenset(meta["recomputed"]),
    )
