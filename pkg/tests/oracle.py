"""Brute-force reference implementations used only by the tests.

Nothing here imports from the main package.  Inputs are plain dicts, lists
and numpy arrays; where exactness matters arithmetic is done in Fraction or
high-precision Decimal.
"""

from __future__ import annotations

import math
from decimal import Decimal, localcontext
from fractions import Fraction

import numpy as np


def _key(pid):
    s = str(pid)
    if s.isdigit() or (s.startswith("-") and s[1:].isdigit()):
        return (0, int(s), s)
    return (1, 0, s)


def _sqrt(x: Fraction) -> Decimal:
    with localcontext() as ctx:
        ctx.prec = 60
        return (Decimal(x.numerator) / Decimal(x.denominator)).sqrt()


def _div(num: Fraction, den: Decimal) -> float:
    with localcontext() as ctx:
        ctx.prec = 60
        return float(Decimal(num.numerator) / Decimal(num.denominator) / den)


# -- statistics -----------------------------------------------------------------------


def percentile(samples, p) -> float:
    ordered = sorted(samples)
    n = len(ordered)
    exact = Fraction(str(p)) * n / 100
    rank = exact.numerator // exact.denominator
    if rank < exact:
        rank += 1
    rank = max(1, min(n, rank))
    return ordered[rank - 1]


def pearson(a: dict, b: dict, min_overlap: int = 2) -> float:
    common = sorted(set(a) & set(b))
    if len(common) < max(1, min_overlap):
        return 0.0
    xa = [Fraction(a[i]) for i in common]
    xb = [Fraction(b[i]) for i in common]
    ma = sum(xa) / len(xa)
    mb = sum(xb) / len(xb)
    cov = sum((x - ma) * (y - mb) for x, y in zip(xa, xb))
    va = sum((x - ma) ** 2 for x in xa)
    vb = sum((y - mb) ** 2 for y in xb)
    if va <= Fraction(1, 10**12) or vb <= Fraction(1, 10**12):
        return 0.0
    r = _div(cov, _sqrt(va * vb))
    return max(-1.0, min(1.0, r))


def rmse(predictions: dict, actuals: dict) -> float:
    total = sum((Fraction(predictions[i]) - Fraction(r)) ** 2 for i, r in actuals.items())
    return float(_sqrt(total / len(actuals)))


# -- collaborative filtering -------------------------------------------------------------


def cf_predict(users: dict, known: dict, targets, scale=(1.0, 5.0), min_overlap=2, centered=True) -> dict:
    """Double loop over targets and users; every user with a rating on the target contributes."""
    active_mean = sum(known.values()) / len(known)
    out = {}
    for item in targets:
        num = 0.0
        den = 0.0
        for uid, row in users.items():
            if item not in row:
                continue
            w = pearson(known, row, min_overlap)
            if w == 0:
                continue
            mean = sum(row.values()) / len(row)
            num += w * ((row[item] - mean) if centered else row[item])
            den += abs(w)
        if den > 0:
            p = active_mean + num / den if centered else num / den
        else:
            p = active_mean
        out[item] = min(scale[1], max(scale[0], p))
    return out


# -- search ---------------------------------------------------------------------------------


def search_topk(docs: dict, terms, k: int, stats_docs: dict | None = None):
    """Score every document, sort by (-score, id), keep positive scores, cut at k."""
    base = docs if stats_docs is None else stats_docs
    n = len(base)
    df = {}
    for tf in base.values():
        for t in set(tf):
            df[t] = df.get(t, 0) + 1

    def idf(t):
        return math.log(1.0 + n / df[t]) if t in df else 0.0

    scored = []
    for d, tf in docs.items():
        norm = math.sqrt(sum((c * idf(t)) ** 2 for t, c in tf.items()))
        if norm == 0:
            continue
        s = sum(tf.get(t, 0) * idf(t) for t in terms) / norm
        if s > 0:
            scored.append((d, s))
    scored.sort(key=lambda ds: (-ds[1], _key(ds[0])))
    return scored[:k]


def merge(lists, k: int):
    """Concatenate (id, score) lists and sort."""
    allhits = [h for lst in lists for h in lst]
    allhits.sort(key=lambda ds: (-ds[1], _key(ds[0])))
    return allhits[:k]


def rank(correlations, agg_ids=None):
    ids = list(range(len(correlations))) if agg_ids is None else list(agg_ids)
    return sorted(range(len(correlations)), key=lambda p: (-float(correlations[p]), ids[p]))


# -- aggregation ------------------------------------------------------------------------------


def reaggregate_numeric(mapping: dict, rows: dict) -> dict:
    """agg id -> {item: (mean, count)} recomputed from scratch."""
    out = {}
    for agg, members in mapping.items():
        acc = {}
        for uid in members:
            for item, r in rows[uid].items():
                acc.setdefault(item, []).append(r.as_integer_ratio())
        out[agg] = {i: (_exact_mean(v), len(v)) for i, v in acc.items()}
    return out


def _exact_mean(ratios) -> float:
    # float denominators are powers of two, so the largest one is a common denominator
    den = max(d for _, d in ratios)
    total = sum(n * (den // d) for n, d in ratios)
    return float(Fraction(total, den * len(ratios)))


def reaggregate_text(mapping: dict, docs: dict) -> dict:
    out = {}
    for agg, members in mapping.items():
        acc = {}
        for d in members:
            for t, c in docs[d].items():
                acc[t] = acc.get(t, 0) + c
        out[agg] = acc
    return out


# -- factorization ------------------------------------------------------------------------------


def rank1(M: np.ndarray, iters: int = 500) -> np.ndarray:
    """Best rank-1 approximation by power iteration on M^T M."""
    M = np.asarray(M, dtype=float)
    v = np.ones(M.shape[1])
    for _ in range(iters):
        v = M.T @ (M @ v)
        v /= np.linalg.norm(v)
    u = M @ v
    return np.outer(u, v)


def jacobi_eig(S: np.ndarray, sweeps: int = 100):
    """Eigen-decomposition of a small symmetric matrix by cyclic Jacobi rotations."""
    A = np.array(S, dtype=float)
    n = A.shape[0]
    V = np.eye(n)
    for _ in range(sweeps):
        off = math.sqrt(sum(A[i, j] ** 2 for i in range(n) for j in range(n) if i != j))
        if off < 1e-15:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                if abs(A[p, q]) < 1e-300:
                    continue
                theta = (A[q, q] - A[p, p]) / (2 * A[p, q])
                t = math.copysign(1.0, theta) / (abs(theta) + math.sqrt(theta * theta + 1))
                c = 1 / math.sqrt(t * t + 1)
                s = t * c
                J = np.eye(n)
                J[p, p] = J[q, q] = c
                J[p, q] = s
                J[q, p] = -s
                A = J.T @ A @ J
                V = V @ J
    return np.diag(A).copy(), V


def best_rank(M: np.ndarray, j: int) -> np.ndarray:
    """Best rank-j approximation via Jacobi eigen-decomposition of M^T M."""
    M = np.asarray(M, dtype=float)
    vals, V = jacobi_eig(M.T @ M)
    order = np.argsort(-vals)[:j]
    Vj = V[:, order]
    return M @ Vj @ Vj.T


# -- spatial ----------------------------------------------------------------------------------------


def snapshot(tree) -> dict:
    """node id -> (bounding box, member set), gathered by walking the tree from its root."""
    out = {}
    stack = [tree.root]
    while stack:
        node = stack.pop()
        members = set()
        inner = [node]
        while inner:
            x = inner.pop()
            if x.leaf:
                members.update(x.entries)
            else:
                inner.extend(x.entries)
        out[node.id] = (tuple(node.lo), tuple(node.hi), frozenset(members))
        if not node.leaf:
            stack.extend(node.entries)
    return out


def nodes_per_depth(tree) -> list[int]:
    counts = []
    level = [tree.root]
    while level:
        counts.append(len(level))
        if level[0].leaf:
            break
        level = [c for n in level for c in n.entries]
    return counts
