import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import oracle
from approxtail import synth
from approxtail.dataset import NUMERIC, DataError, Subset, partition, vectorize
from approxtail.dimred import FeatureMatrix, SvdConfig, reduce

# the default budget is sized for thousands of ratings; toy matrices need longer runs
TOY = dict(iters_per_dim=2000, learning_rate=0.05, regularization=0.0)


def _numeric(M: np.ndarray) -> Subset:
    rows = {str(r): {str(c): float(M[r, c]) for c in range(M.shape[1])} for r in range(M.shape[0])}
    return Subset(NUMERIC, 0, rows, scale=(0.0, 10.0))


def _rel(a, b):
    return np.linalg.norm(a - b) / np.linalg.norm(b)


def test_rank_one_matches_power_iteration():
    M = np.outer([1.0, 2.0], [1.0, 2.0, 3.0])
    f = reduce(vectorize(_numeric(M)), SvdConfig(j=1, **TOY))
    assert _rel(f.reconstruct(), oracle.rank1(M)) < 1e-3


def test_diagonal_matches_jacobi_svd():
    D = np.diag([1.0, 1.0, 1.0])
    f = reduce(vectorize(_numeric(D)), SvdConfig(j=3, **TOY))
    assert _rel(f.reconstruct(), oracle.best_rank(D, 3)) < 0.05


def test_jacobi_oracle_sanity():
    rng = np.random.default_rng(0)
    M = rng.normal(size=(5, 3))
    _, s, vt = np.linalg.svd(M)
    assert np.allclose(oracle.best_rank(M, 3), M)
    assert np.allclose(oracle.best_rank(M, 1), s[0] * np.outer(M @ vt[0] / s[0], vt[0]))


def test_identical_rows_get_identical_features():
    rows = {"1": {"a": 4.0, "b": 2.0, "c": 5.0}, "2": {"a": 4.0, "b": 2.0, "c": 5.0}, "3": {"a": 1.0, "c": 3.0}}
    f = reduce(vectorize(Subset(NUMERIC, 0, rows)), SvdConfig())
    assert np.max(np.abs(f.row("1") - f.row("2"))) < 1e-6


def test_deterministic():
    ratings, _ = synth.generate_cf(200, 0, seed=2)
    ds = vectorize(partition(ratings, 1)[0])
    a, b = reduce(ds), reduce(ds)
    assert a.row_ids == b.row_ids
    assert np.array_equal(a.row_features, b.row_features)
    assert np.array_equal(a.col_features, b.col_features)


def test_features_finite_and_keyed():
    ratings, _ = synth.generate_cf(150, 0, seed=4)
    sub = partition(ratings, 1)[0]
    f = reduce(vectorize(sub))
    assert f.row_features.shape == (150, 3)
    assert np.all(np.isfinite(f.row_features))
    assert list(f.row_ids) == sub.ids


def test_distance_preservation_on_clusters():
    rng = np.random.default_rng(7)
    profiles = rng.integers(1, 6, size=(4, 30)).astype(float)
    rows, label = {}, {}
    for u in range(160):
        c = u % 4
        vals = np.clip(profiles[c] + rng.normal(scale=0.4, size=30), 1, 5)
        seen = rng.random(30) < 0.6
        rows[str(u)] = {str(i): float(vals[i]) for i in range(30) if seen[i]}
        label[str(u)] = c
    f = reduce(vectorize(Subset(NUMERIC, 0, rows)), SvdConfig())
    X = f.row_features
    labels = np.array([label[pid] for pid in f.row_ids])
    d = np.linalg.norm(X[:, None, :] - X[None, :, :], axis=-1)
    same = labels[:, None] == labels[None, :]
    off = ~np.eye(len(X), dtype=bool)
    assert d[same & off].mean() < d[~same].mean()


def test_empty_dataset_rejected():
    with pytest.raises(DataError):
        reduce(vectorize(Subset(NUMERIC, 0, {})))


@pytest.mark.parametrize("kw", [dict(j=0), dict(iters_per_dim=0), dict(learning_rate=0.0), dict(regularization=-1)])
def test_config_validation(kw):
    with pytest.raises(ValueError):
        SvdConfig(**kw)


def test_projection_of_existing_row_is_close():
    ratings, _ = synth.generate_cf(300, 0, seed=9)
    sub = partition(ratings, 1)[0]
    f = reduce(vectorize(sub))
    pid = sub.ids[0]
    assert np.linalg.norm(f.project(sub.points[pid]) - f.row(pid)) < 0.5 * np.linalg.norm(f.row(pid)) + 0.5


def test_csv_round_trip(tmp_path):
    ratings, _ = synth.generate_cf(50, 0, seed=1)
    f = reduce(vectorize(partition(ratings, 1)[0]))
    f.to_csv(tmp_path / "rows.csv")
    f.to_csv(tmp_path / "cols.csv", cols=True)
    g = FeatureMatrix.from_csv(tmp_path / "rows.csv", tmp_path / "cols.csv", f.regularization)
    assert g.row_ids == f.row_ids and g.col_ids == f.col_ids
    assert np.array_equal(g.row_features, f.row_features)
    assert np.array_equal(g.col_features, f.col_features)
    assert (tmp_path / "rows.csv").read_text().splitlines()[0] == "point_id,f1,f2,f3"


@settings(max_examples=25, deadline=None)
@given(st.integers(min_value=0, max_value=10_000))
def test_duplicated_rows_stay_equal(seed):
    rng = np.random.default_rng(seed)
    base = {str(i): float(rng.integers(1, 6)) for i in range(6) if rng.random() < 0.8} or {"0": 3.0}
    rows = {"1": dict(base), "2": dict(base), "3": {"0": 1.0, "5": 5.0}}
    f = reduce(vectorize(Subset(NUMERIC, 0, rows)), SvdConfig(seed=seed))
    assert np.max(np.abs(f.row("1") - f.row("2"))) < 1e-6
