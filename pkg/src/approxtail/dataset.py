"""Input data: rating matrices, text corpora, partitioning and vectorization."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Literal, Mapping, Union

import numpy as np
from scipy import sparse

NUMERIC = "numeric"
TEXT = "text"
Kind = Literal["numeric", "text"]


class DataError(ValueError):
    """Malformed or inconsistent input data."""


class DuplicateError(DataError):
    pass


def id_key(point_id: str):
    """Sort key for point ids: integers numerically, everything else lexically after."""
    try:
        return (0, int(point_id), point_id)
    except ValueError:
        return (1, 0, point_id)


def sorted_ids(ids: Iterable[str]) -> list[str]:
    return sorted(ids, key=id_key)


@dataclass(frozen=True)
class RatingMatrix:
    """Sparse user-item ratings, stored row-wise as user -> {item: rating}."""

    rows: Mapping[str, Mapping[str, float]]
    scale: tuple[float, float] = (1.0, 5.0)

    def __post_init__(self):
        lo, hi = self.scale
        if lo >= hi:
            raise DataError(f"bad rating scale {self.scale}")
        for user, row in self.rows.items():
            for item, r in row.items():
                if not (lo <= r <= hi):
                    raise DataError(f"rating {r} for ({user},{item}) outside scale [{lo}, {hi}]")

    @property
    def users(self) -> list[str]:
        return sorted_ids(self.rows)

    @property
    def items(self) -> list[str]:
        return sorted_ids({i for row in self.rows.values() for i in row})

    @property
    def ratings(self) -> dict[tuple[str, str], float]:
        return {(u, i): r for u, row in self.rows.items() for i, r in row.items()}

    def __len__(self) -> int:
        return len(self.rows)


@dataclass(frozen=True)
class Corpus:
    """Documents as term-frequency maps."""

    docs: Mapping[str, Mapping[str, int]]

    def __post_init__(self):
        for doc_id, tf in self.docs.items():
            if not tf:
                raise DataError(f"document {doc_id!r} is empty")
            for term, c in tf.items():
                if c < 1:
                    raise DataError(f"document {doc_id!r}: non-positive count for {term!r}")

    @property
    def vocabulary(self) -> list[str]:
        return sorted({t for tf in self.docs.values() for t in tf})

    def __len__(self) -> int:
        return len(self.docs)


@dataclass(frozen=True)
class Subset:
    """One component's share of the input data.

    ``points`` maps a point id to its content: an item->rating map for
    numeric data, a term->count map for text.
    """

    kind: Kind
    component_id: int
    points: Mapping[str, Mapping]
    scale: tuple[float, float] = (1.0, 5.0)

    def __len__(self) -> int:
        return len(self.points)

    @property
    def ids(self) -> list[str]:
        return sorted_ids(self.points)

    def with_points(self, points: Mapping[str, Mapping]) -> "Subset":
        return Subset(self.kind, self.component_id, points, self.scale)


@dataclass(frozen=True)
class NumericDataset:
    """u x v matrix over point ids (rows) and attribute ids (cols).

    Observed entries are kept as COO triplets.
    """

    rows: tuple[str, ...]
    cols: tuple[str, ...]
    row_idx: np.ndarray = field(repr=False)
    col_idx: np.ndarray = field(repr=False)
    values: np.ndarray = field(repr=False)
    # every (row, col) cell is observed; absent attributes count as zero
    dense: bool = False

    def __post_init__(self):
        if not (len(self.row_idx) == len(self.col_idx) == len(self.values)):
            raise DataError("inconsistent triplet lengths")
        if len(self.values) and not np.all(np.isfinite(self.values)):
            raise DataError("non-finite values in dataset")

    @property
    def shape(self) -> tuple[int, int]:
        return len(self.rows), len(self.cols)

    @property
    def nnz(self) -> int:
        return len(self.values)

    @property
    def matrix(self) -> sparse.csr_matrix:
        return sparse.csr_matrix((self.values, (self.row_idx, self.col_idx)), shape=self.shape)

    def to_dense(self) -> np.ndarray:
        out = np.zeros(self.shape)
        out[self.row_idx, self.col_idx] = self.values
        return out


def _open_lines(path) -> list[str]:
    return Path(path).read_text(encoding="utf-8").splitlines()


def parse_ratings(lines: Iterable[str], scale=(1.0, 5.0)) -> RatingMatrix:
    rows: dict[str, dict[str, float]] = {}
    for lineno, line in enumerate(lines, 1):
        if not line.strip():
            continue
        parts = line.strip().split(",")
        if len(parts) != 3:
            raise DataError(f"line {lineno}: expected user_id,item_id,rating, got {line!r}")
        user, item, raw = (p.strip() for p in parts)
        if not user or not item:
            raise DataError(f"line {lineno}: empty id")
        try:
            rating = float(raw)
        except ValueError:
            raise DataError(f"line {lineno}: bad rating {raw!r}") from None
        row = rows.setdefault(user, {})
        if item in row:
            raise DuplicateError(f"line {lineno}: duplicate rating for ({user},{item})")
        row[item] = rating
    return RatingMatrix(rows, scale=tuple(scale))


def load_ratings(path, scale=(1.0, 5.0)) -> RatingMatrix:
    """Read ``user_id,item_id,rating`` lines (no header)."""
    return parse_ratings(_open_lines(path), scale)


def tokenize(text: str) -> list[str]:
    return text.lower().split()


def parse_corpus(lines: Iterable[str]) -> Corpus:
    docs: dict[str, dict[str, int]] = {}
    for lineno, line in enumerate(lines, 1):
        if not line.strip():
            continue
        doc_id, sep, body = line.partition("\t")
        doc_id = doc_id.strip()
        if not sep or not doc_id:
            raise DataError(f"line {lineno}: expected doc_id<TAB>terms")
        if doc_id in docs:
            raise DuplicateError(f"line {lineno}: duplicate doc id {doc_id!r}")
        terms = tokenize(body)
        if not terms:
            raise DataError(f"line {lineno}: empty document {doc_id!r}")
        docs[doc_id] = dict(Counter(terms))
    return Corpus(docs)


def load_corpus(path) -> Corpus:
    """Read ``doc_id<TAB>term term ...`` lines."""
    return parse_corpus(_open_lines(path))


def write_ratings(matrix: RatingMatrix, path) -> None:
    lines = [
        f"{u},{i},{matrix.rows[u][i]!r}"
        for u in matrix.users
        for i in sorted_ids(matrix.rows[u])
    ]
    Path(path).write_text("".join(line + "\n" for line in lines), encoding="utf-8")


def format_doc(doc_id: str, tf: Mapping[str, int]) -> str:
    terms = []
    for term in sorted(tf):
        terms.extend([term] * tf[term])
    return f"{doc_id}\t{' '.join(terms)}"


def write_corpus(corpus: Corpus, path) -> None:
    lines = [format_doc(d, corpus.docs[d]) for d in sorted_ids(corpus.docs)]
    Path(path).write_text("".join(line + "\n" for line in lines), encoding="utf-8")


def partition(data: Union[RatingMatrix, Corpus], n: int) -> list[Subset]:
    """Round-robin split over sorted point ids into ``n`` balanced subsets."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if isinstance(data, RatingMatrix):
        points, kind, scale = data.rows, NUMERIC, data.scale
    else:
        points, kind, scale = data.docs, TEXT, (1.0, 5.0)
    if not points:
        raise DataError("cannot partition empty data")
    if n > len(points):
        raise ValueError(f"{n} components but only {len(points)} points")
    buckets: list[dict] = [{} for _ in range(n)]
    for pos, pid in enumerate(sorted_ids(points)):
        buckets[pos % n][pid] = dict(points[pid])
    return [Subset(kind, k, b, scale) for k, b in enumerate(buckets)]


def vectorize(subset: Subset) -> NumericDataset:
    """Turn a subset into a numeric point x attribute dataset.

    Text documents become dense term-occurrence rows over the subset
    vocabulary (an absent word is an observed zero).  Numeric subsets keep
    only their observed ratings; unrated items are missing, not zero.
    """
    rows = subset.ids
    if subset.kind == TEXT:
        cols = sorted({a for pid in rows for a in subset.points[pid]})
        dense = np.zeros((len(rows), len(cols)))
        col_pos = {c: j for j, c in enumerate(cols)}
        for i, pid in enumerate(rows):
            for a, c in subset.points[pid].items():
                dense[i, col_pos[a]] = c
        r_idx, c_idx = np.indices(dense.shape)
        return NumericDataset(tuple(rows), tuple(cols), r_idx.ravel().astype(np.int64),
                              c_idx.ravel().astype(np.int64), dense.ravel(), dense=True)
    cols = sorted_ids({a for pid in rows for a in subset.points[pid]})
    col_pos = {c: j for j, c in enumerate(cols)}
    r_idx, c_idx, vals = [], [], []
    for i, pid in enumerate(rows):
        content = subset.points[pid]
        for a in sorted(content, key=col_pos.__getitem__):
            r_idx.append(i)
            c_idx.append(col_pos[a])
            vals.append(float(content[a]))
    return NumericDataset(
        tuple(rows),
        tuple(cols),
        np.asarray(r_idx, dtype=np.int64),
        np.asarray(c_idx, dtype=np.int64),
        np.asarray(vals, dtype=np.float64),
    )
