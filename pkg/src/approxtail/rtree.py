"""Depth-balanced R-tree over low-dimensional points (Guttman, quadratic split).

Leaves hold point ids; coordinates live in ``RTree.points``.  Every node has
a stable integer id: a split keeps the original id for one half and gives the
other half a fresh one.  ``insert`` and ``delete`` return the ids of nodes
whose member set or bounding box changed, including created and removed ones.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .dataset import id_key, sorted_ids

FORMAT_NAME = "approxtail-rtree"
FORMAT_VERSION = 1


class TreeError(ValueError):
    pass


def _volume(lo, hi) -> float:
    v = 1.0
    for a, b in zip(lo, hi):
        v *= b - a
    return v


def _margin(lo, hi) -> float:
    return sum(b - a for a, b in zip(lo, hi))


def _union(lo1, hi1, lo2, hi2):
    return [min(a, b) for a, b in zip(lo1, lo2)], [max(a, b) for a, b in zip(hi1, hi2)]


def _cost(lo, hi):
    # volume first; margin separates degenerate (flat) boxes of zero volume
    return (_volume(lo, hi), _margin(lo, hi))


def _enlargement(lo, hi, elo, ehi):
    ulo, uhi = _union(lo, hi, elo, ehi)
    v0, m0 = _cost(lo, hi)
    v1, m1 = _cost(ulo, uhi)
    return (v1 - v0, m1 - m0)


class Node:
    __slots__ = ("id", "leaf", "entries", "lo", "hi", "parent")

    def __init__(self, node_id: int, leaf: bool):
        self.id = node_id
        self.leaf = leaf
        self.entries: list = []  # point ids for leaves, child Nodes otherwise
        self.lo: list[float] = []
        self.hi: list[float] = []
        self.parent: Node | None = None

    def __repr__(self):
        kind = "Leaf" if self.leaf else "Node"
        return f"{kind}({self.id}, n={len(self.entries)})"


@dataclass(frozen=True)
class IndexFile:
    """Aggregated point id -> ids of the original points it stands for."""

    mapping: Mapping[int, frozenset]
    depth: int

    def __post_init__(self):
        seen: set = set()
        for agg_id, members in self.mapping.items():
            if not members:
                raise TreeError(f"aggregated point {agg_id} has no members")
            if seen & members:
                raise TreeError("index entries overlap")
            seen |= members

    @property
    def agg_ids(self) -> list[int]:
        return sorted(self.mapping)

    @property
    def universe(self) -> frozenset:
        return frozenset().union(*self.mapping.values()) if self.mapping else frozenset()

    def owner(self) -> dict:
        return {pid: agg for agg, members in self.mapping.items() for pid in members}

    def __len__(self) -> int:
        return len(self.mapping)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["agg_id", "member_id"])
            for agg in self.agg_ids:
                for pid in sorted_ids(self.mapping[agg]):
                    w.writerow([agg, pid])

    @classmethod
    def from_csv(cls, path, depth: int) -> "IndexFile":
        mapping: dict[int, set] = {}
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header != ["agg_id", "member_id"]:
                raise TreeError(f"{path}: bad index header {header}")
            for agg, pid in reader:
                mapping.setdefault(int(agg), set()).add(pid)
        return cls({k: frozenset(v) for k, v in mapping.items()}, depth)


class RTree:
    def __init__(self, min_entries: int = 2, max_entries: int = 8):
        if min_entries < 2 or min_entries > max_entries / 2:
            raise TreeError(f"need 2 <= m_r <= M_r/2, got m_r={min_entries}, M_r={max_entries}")
        self.min_entries = min_entries
        self.max_entries = max_entries
        self.points: dict[str, tuple[float, ...]] = {}
        self._leaf_of: dict[str, Node] = {}
        self._next_id = 0
        self.root = self._new_node(leaf=True)

    # -- basic queries -------------------------------------------------

    def __len__(self) -> int:
        return len(self.points)

    def __contains__(self, pid) -> bool:
        return pid in self.points

    @property
    def height(self) -> int:
        h, node = 1, self.root
        while not node.leaf:
            node = node.entries[0]
            h += 1
        return h

    def nodes_at_depth(self, depth: int) -> list[Node]:
        if not 0 <= depth < self.height:
            raise TreeError(f"depth {depth} out of range for height {self.height}")
        level = [self.root]
        for _ in range(depth):
            level = [c for n in level for c in n.entries]
        return level

    def node_counts(self) -> list[int]:
        counts, level = [], [self.root]
        while True:
            counts.append(len(level))
            if level[0].leaf:
                return counts
            level = [c for n in level for c in n.entries]

    def members(self, node: Node) -> frozenset:
        if node.leaf:
            return frozenset(node.entries)
        out: list = []
        stack = [node]
        while stack:
            n = stack.pop()
            if n.leaf:
                out.extend(n.entries)
            else:
                stack.extend(n.entries)
        return frozenset(out)

    def all_nodes(self) -> list[Node]:
        out, stack = [], [self.root]
        while stack:
            n = stack.pop()
            out.append(n)
            if not n.leaf:
                stack.extend(n.entries)
        return out

    def path_to(self, pid) -> list[Node]:
        node = self._leaf_of[pid]
        path = []
        while node is not None:
            path.append(node)
            node = node.parent
        return path

    # -- mutation ------------------------------------------------------

    def _new_node(self, leaf: bool) -> Node:
        node = Node(self._next_id, leaf)
        self._next_id += 1
        return node

    def _entry_box(self, node: Node, entry):
        if node.leaf:
            p = self.points[entry]
            return p, p
        return entry.lo, entry.hi

    def _refit(self, node: Node) -> None:
        if not node.entries:
            node.lo, node.hi = [], []
            return
        boxes = [self._entry_box(node, e) for e in node.entries]
        dims = len(boxes[0][0])
        node.lo = [min(b[0][d] for b in boxes) for d in range(dims)]
        node.hi = [max(b[1][d] for b in boxes) for d in range(dims)]

    def _choose_leaf(self, coords) -> Node:
        node = self.root
        while not node.leaf:
            best, best_key = None, None
            for pos, child in enumerate(node.entries):
                key = (_enlargement(child.lo, child.hi, coords, coords), _cost(child.lo, child.hi), pos)
                if best_key is None or key < best_key:
                    best, best_key = child, key
            node = best
        return node

    def _split(self, node: Node) -> Node:
        """Quadratic split of an overfull node; returns the new sibling."""
        entries = node.entries
        boxes = [self._entry_box(node, e) for e in entries]
        # pick seeds: the pair wasting the most space
        seeds, worst = (0, 1), None
        for a in range(len(entries)):
            for b in range(a + 1, len(entries)):
                ulo, uhi = _union(*boxes[a], *boxes[b])
                jv, jm = _cost(ulo, uhi)
                av, am = _cost(*boxes[a])
                bv, bm = _cost(*boxes[b])
                waste = (jv - av - bv, jm - am - bm)
                if worst is None or waste > worst:
                    seeds, worst = (a, b), waste
        groups = [[seeds[0]], [seeds[1]]]
        glo = [list(boxes[seeds[0]][0]), list(boxes[seeds[1]][0])]
        ghi = [list(boxes[seeds[0]][1]), list(boxes[seeds[1]][1])]
        remaining = [i for i in range(len(entries)) if i not in seeds]
        m = self.min_entries
        while remaining:
            for g in (0, 1):
                if len(groups[g]) + len(remaining) == m:
                    groups[g].extend(remaining)
                    for i in remaining:
                        glo[g], ghi[g] = _union(glo[g], ghi[g], *boxes[i])
                    remaining = []
                    break
            if not remaining:
                break
            pick, pick_key, pick_d = None, None, None
            for i in remaining:
                d0 = _enlargement(glo[0], ghi[0], *boxes[i])
                d1 = _enlargement(glo[1], ghi[1], *boxes[i])
                key = (abs(d0[0] - d1[0]), abs(d0[1] - d1[1]))
                if pick_key is None or key > pick_key:
                    pick, pick_key, pick_d = i, key, (d0, d1)
            d0, d1 = pick_d
            c0, c1 = _cost(glo[0], ghi[0]), _cost(glo[1], ghi[1])
            g = 0 if (d0, c0, len(groups[0])) <= (d1, c1, len(groups[1])) else 1
            groups[g].append(pick)
            glo[g], ghi[g] = _union(glo[g], ghi[g], *boxes[pick])
            remaining.remove(pick)
        sibling = self._new_node(node.leaf)
        node.entries = [entries[i] for i in sorted(groups[0])]
        sibling.entries = [entries[i] for i in sorted(groups[1])]
        for n in (node, sibling):
            if n.leaf:
                for pid in n.entries:
                    self._leaf_of[pid] = n
            else:
                for c in n.entries:
                    c.parent = n
            self._refit(n)
        return sibling

    def insert(self, pid, coords: Sequence[float]) -> set[int]:
        if pid in self.points:
            raise TreeError(f"duplicate point id {pid!r}")
        coords = tuple(float(x) for x in coords)
        if not all(math.isfinite(x) for x in coords):
            raise TreeError(f"non-finite coordinates for {pid!r}")
        if self.points:
            dims = len(next(iter(self.points.values())))
            if len(coords) != dims:
                raise TreeError(f"expected {dims} coordinates, got {len(coords)}")
        self.points[pid] = coords
        return self._insert_existing(pid)

    def _insert_existing(self, pid) -> set[int]:
        coords = self.points[pid]
        leaf = self._choose_leaf(coords)
        leaf.entries.append(pid)
        self._leaf_of[pid] = leaf
        influenced = set()
        node, sibling = leaf, None
        if len(leaf.entries) > self.max_entries:
            sibling = self._split(leaf)
        else:
            leaf.lo, leaf.hi = (list(coords), list(coords)) if len(leaf.entries) == 1 else _union(leaf.lo, leaf.hi, coords, coords)
        while True:
            influenced.add(node.id)
            if sibling is not None:
                influenced.add(sibling.id)
            parent = node.parent
            if parent is None:
                if sibling is not None:
                    new_root = self._new_node(leaf=False)
                    new_root.entries = [node, sibling]
                    node.parent = sibling.parent = new_root
                    self._refit(new_root)
                    self.root = new_root
                    influenced.add(new_root.id)
                return influenced
            if sibling is not None:
                parent.entries.append(sibling)
                sibling.parent = parent
                sibling = self._split(parent) if len(parent.entries) > self.max_entries else None
                if sibling is None:
                    self._refit(parent)
            else:
                parent.lo, parent.hi = _union(parent.lo, parent.hi, node.lo, node.hi)
            node = parent

    def delete(self, pid) -> set[int]:
        if pid not in self.points:
            raise TreeError(f"unknown point id {pid!r}")
        leaf = self._leaf_of.pop(pid)
        leaf.entries.remove(pid)
        del self.points[pid]
        influenced: set[int] = set()
        orphans: list = []
        node = leaf
        while node.parent is not None:
            parent = node.parent
            influenced.add(node.id)
            if len(node.entries) < self.min_entries:
                parent.entries.remove(node)
                for n in self._subtree(node):
                    influenced.add(n.id)
                    if n.leaf:
                        orphans.extend(n.entries)
                node.parent = None
            else:
                self._refit(node)
            node = parent
        influenced.add(self.root.id)
        self._refit(self.root)
        while not self.root.leaf and len(self.root.entries) == 1:
            child = self.root.entries[0]
            child.parent = None
            self.root = child
        for orphan in sorted(orphans, key=id_key):
            del self._leaf_of[orphan]
            influenced |= self._insert_existing(orphan)
        return influenced

    def _subtree(self, node: Node) -> list[Node]:
        out, stack = [], [node]
        while stack:
            n = stack.pop()
            out.append(n)
            if not n.leaf:
                stack.extend(n.entries)
        return out

    # -- synopsis support ---------------------------------------------

    def select_depth(self, subset_size: int, compression_ratio: float) -> int:
        """Deepest depth whose node count is at most subset_size / compression_ratio (else 0)."""
        if not compression_ratio > 1:
            raise TreeError("compression_ratio must be > 1")
        bound = subset_size / compression_ratio
        best = 0
        for depth, count in enumerate(self.node_counts()):
            if count <= bound:
                best = depth
        return best

    def index_at_depth(self, depth: int) -> IndexFile:
        if not self.points:
            raise TreeError("empty tree has no index")
        nodes = self.nodes_at_depth(depth)
        return IndexFile({n.id: self.members(n) for n in nodes}, depth)

    # -- validation ----------------------------------------------------

    def check(self) -> list[str]:
        """Return a list of invariant violations (empty when the tree is valid)."""
        problems: list[str] = []
        leaf_depths: set[int] = set()
        seen: list = []

        def walk(node: Node, depth: int):
            n = len(node.entries)
            if node is not self.root and not (self.min_entries <= n <= self.max_entries):
                problems.append(f"node {node.id} has {n} entries")
            if node is self.root and n > self.max_entries:
                problems.append(f"root has {n} entries")
            if n:
                boxes = [self._entry_box(node, e) for e in node.entries]
                dims = len(boxes[0][0])
                lo = [min(b[0][d] for b in boxes) for d in range(dims)]
                hi = [max(b[1][d] for b in boxes) for d in range(dims)]
                if lo != list(node.lo) or hi != list(node.hi):
                    problems.append(f"node {node.id} box not tight")
            if node.leaf:
                leaf_depths.add(depth)
                for pid in node.entries:
                    seen.append(pid)
                    if self._leaf_of.get(pid) is not node:
                        problems.append(f"leaf map wrong for {pid!r}")
            else:
                if not node.entries:
                    problems.append(f"internal node {node.id} is empty")
                for c in node.entries:
                    if c.parent is not node:
                        problems.append(f"parent link wrong for node {c.id}")
                    walk(c, depth + 1)

        walk(self.root, 0)
        if len(leaf_depths) > 1:
            problems.append(f"leaves at depths {sorted(leaf_depths)}")
        if sorted(seen, key=id_key) != sorted(self.points, key=id_key):
            problems.append("leaf contents differ from point set")
        return problems

    # -- copying and persistence --------------------------------------

    def copy(self) -> "RTree":
        twin = RTree.__new__(RTree)
        twin.min_entries, twin.max_entries = self.min_entries, self.max_entries
        twin.points = dict(self.points)
        twin._leaf_of = {}
        twin._next_id = self._next_id

        def clone(node: Node, parent):
            c = Node(node.id, node.leaf)
            c.lo, c.hi, c.parent = list(node.lo), list(node.hi), parent
            if node.leaf:
                c.entries = list(node.entries)
                for pid in c.entries:
                    twin._leaf_of[pid] = c
            else:
                c.entries = [clone(ch, c) for ch in node.entries]
            return c

        twin.root = clone(self.root, None)
        return twin

    def to_dict(self) -> dict:
        def enc(node: Node):
            if node.leaf:
                return {"id": node.id, "leaf": True, "entries": list(node.entries)}
            return {"id": node.id, "leaf": False, "entries": [enc(c) for c in node.entries]}

        return {
            "format": FORMAT_NAME,
            "version": FORMAT_VERSION,
            "min_entries": self.min_entries,
            "max_entries": self.max_entries,
            "next_id": self._next_id,
            "points": {pid: list(self.points[pid]) for pid in sorted_ids(self.points)},
            "root": enc(self.root),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "RTree":
        if doc.get("format") != FORMAT_NAME or doc.get("version") != FORMAT_VERSION:
            raise TreeError(f"unsupported tree format {doc.get('format')!r} v{doc.get('version')}")
        tree = cls(doc["min_entries"], doc["max_entries"])
        tree.points = {pid: tuple(float(x) for x in c) for pid, c in doc["points"].items()}
        tree._next_id = doc["next_id"]

        def dec(d, parent):
            node = Node(d["id"], d["leaf"])
            node.parent = parent
            if node.leaf:
                node.entries = list(d["entries"])
                for pid in node.entries:
                    tree._leaf_of[pid] = node
            else:
                node.entries = [dec(c, node) for c in d["entries"]]
            tree._refit(node)
            return node

        tree.root = dec(doc["root"], None)
        return tree

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), sort_keys=True) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "RTree":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def build(points: Iterable[tuple[str, Sequence[float]]], min_entries: int = 2, max_entries: int = 8) -> RTree:
    """Build by sequential insertion in sorted-id order."""
    pts = list(points)
    if not pts:
        raise TreeError("cannot build a tree from no points")
    ids = [p for p, _ in pts]
    if len(set(ids)) != len(ids):
        raise TreeError("duplicate point ids")
    tree = RTree(min_entries, max_entries)
    for pid, coords in sorted(pts, key=lambda pc: id_key(pc[0])):
        tree.insert(pid, coords)
    return tree
