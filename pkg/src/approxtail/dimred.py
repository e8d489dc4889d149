"""Dimension-by-dimension gradient-descent SVD (Funk style) for sparse data."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np
from numba import njit

from .dataset import DataError, NumericDataset


@dataclass(frozen=True)
class SvdConfig:
    j: int = 3
    iters_per_dim: int = 100
    learning_rate: float = 0.002
    regularization: float = 0.02
    seed: int = 0

    def __post_init__(self):
        if self.j < 1:
            raise ValueError("j must be >= 1")
        if self.iters_per_dim < 1:
            raise ValueError("iters_per_dim must be >= 1")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")
        if self.regularization < 0:
            raise ValueError("regularization must be >= 0")


@dataclass(frozen=True)
class FeatureMatrix:
    row_ids: tuple[str, ...]
    row_features: np.ndarray = field(repr=False)
    col_ids: tuple[str, ...]
    col_features: np.ndarray = field(repr=False)
    regularization: float = 0.02
    # rows were fit against every column, so unseen attributes project as zeros
    dense: bool = False

    @property
    def j(self) -> int:
        return self.row_features.shape[1]

    def row(self, point_id: str) -> np.ndarray:
        return self.row_features[self._row_pos[point_id]]

    @property
    def _row_pos(self) -> dict[str, int]:
        cached = self.__dict__.get("_row_pos_cache")
        if cached is None:
            cached = {pid: i for i, pid in enumerate(self.row_ids)}
            object.__setattr__(self, "_row_pos_cache", cached)
        return cached

    def reconstruct(self) -> np.ndarray:
        return self.row_features @ self.col_features.T

    def project(self, content: Mapping[str, float]) -> np.ndarray:
        """Least-squares row features for new content against the frozen columns.

        Attributes unknown to the column space are ignored.  For dense
        features every known column is an observation (absent ones are 0).
        """
        col_pos = self.__dict__.get("_col_pos_cache")
        if col_pos is None:
            col_pos = {c: i for i, c in enumerate(self.col_ids)}
            object.__setattr__(self, "_col_pos_cache", col_pos)
        known = sorted((col_pos[a], float(x)) for a, x in content.items() if a in col_pos)
        if self.dense:
            vals = np.zeros(len(self.col_ids))
            for k, x in known:
                vals[k] = x
            V = self.col_features
        else:
            if not known:
                return np.zeros(self.j)
            V = self.col_features[np.array([k for k, _ in known])]
            vals = np.array([x for _, x in known])
        lam = max(self.regularization, 1e-9)
        A = V.T @ V + lam * len(vals) * np.eye(self.j)
        return np.linalg.solve(A, V.T @ vals)

    def with_rows(self, updates: Mapping[str, np.ndarray]) -> "FeatureMatrix":
        """Copy with the given rows replaced or appended (new ids go at the end)."""
        ids = list(self.row_ids)
        feats = [r for r in self.row_features]
        pos = dict(self._row_pos)
        for pid, vec in updates.items():
            vec = np.asarray(vec, dtype=np.float64)
            if pid in pos:
                feats[pos[pid]] = vec
            else:
                pos[pid] = len(ids)
                ids.append(pid)
                feats.append(vec)
        arr = np.vstack(feats) if feats else np.zeros((0, self.j))
        return FeatureMatrix(tuple(ids), arr, self.col_ids, self.col_features, self.regularization, self.dense)

    def to_csv(self, path, cols: bool = False) -> None:
        ids, feats = (self.col_ids, self.col_features) if cols else (self.row_ids, self.row_features)
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["point_id"] + [f"f{d + 1}" for d in range(self.j)])
            for pid, vec in zip(ids, feats):
                w.writerow([pid] + [repr(float(x)) for x in vec])

    @classmethod
    def from_csv(cls, rows_path, cols_path, regularization: float = 0.02, dense: bool = False) -> "FeatureMatrix":
        r_ids, r_feat = _read_feature_csv(rows_path)
        c_ids, c_feat = _read_feature_csv(cols_path)
        return cls(r_ids, r_feat, c_ids, c_feat, regularization, dense)


def _read_feature_csv(path) -> tuple[tuple[str, ...], np.ndarray]:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    j = len(rows[0]) - 1
    ids = tuple(r[0] for r in rows[1:])
    feats = np.array([[float(x) for x in r[1:]] for r in rows[1:]], dtype=np.float64).reshape(len(ids), j)
    return ids, feats


@njit(cache=True)
def _train_dimension(rows, cols, resid, by_col, u, v, lr, reg, iters):
    # Each epoch sweeps rows with v frozen, then columns with u frozen. Updates
    # stay per-entry (stable for any row/column degree) and identical rows
    # receive identical updates.
    n = rows.shape[0]
    for _ in range(iters):
        for k in range(n):
            r = rows[k]
            vc = v[cols[k]]
            ur = u[r]
            u[r] = ur + lr * ((resid[k] - ur * vc) * vc - reg * ur)
        for t in range(n):
            k = by_col[t]
            c = cols[k]
            ur = u[rows[k]]
            vc = v[c]
            v[c] = vc + lr * ((resid[k] - ur * vc) * ur - reg * vc)


def reduce(data: NumericDataset, cfg: SvdConfig = SvdConfig()) -> FeatureMatrix:
    """Reduce ``data`` to ``cfg.j`` dense features per row.

    Dimensions are trained one after another, each on the residual left by
    the previous ones, for a fixed ``iters_per_dim`` budget.
    """
    if data.nnz == 0 or not np.any(data.values):
        raise DataError("cannot reduce an empty or all-zero dataset")
    u_n, v_n = data.shape
    rng = np.random.default_rng(cfg.seed)
    row_f = np.empty((u_n, cfg.j))
    col_f = np.empty((v_n, cfg.j))
    rows = data.row_idx.astype(np.int64)
    cols = data.col_idx.astype(np.int64)
    resid = data.values.astype(np.float64).copy()
    by_col = np.lexsort((rows, cols)).astype(np.int64)
    for d in range(cfg.j):
        # rows start equal so identical rows stay interchangeable; columns carry the jitter
        u = np.full(u_n, 0.1)
        v = 0.1 + rng.uniform(-0.01, 0.01, size=v_n)
        _train_dimension(rows, cols, resid, by_col, u, v, cfg.learning_rate, cfg.regularization, cfg.iters_per_dim)
        if not (np.all(np.isfinite(u)) and np.all(np.isfinite(v))):
            raise DataError(
                f"gradient descent diverged in dimension {d + 1}; "
                f"try a learning rate below {cfg.learning_rate}"
            )
        resid -= u[rows] * v[cols]
        row_f[:, d] = u
        col_f[:, d] = v
    return FeatureMatrix(tuple(data.rows), row_f, tuple(data.cols), col_f, cfg.regularization, data.dense)
