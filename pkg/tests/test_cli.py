import csv
import math
from pathlib import Path

import numpy as np
import pytest

from approxtail import synopsis as sy
from approxtail.cf import CfComponent, CfRequest
from approxtail.cli import EXIT_DATA, EXIT_INVARIANT, EXIT_OK, EXIT_USAGE, main


def _files(root: Path) -> dict[str, bytes]:
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def _csv(path: Path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def _ok(argv):
    assert main([str(a) for a in argv]) == EXIT_OK


@pytest.fixture(scope="module")
def cf_run(tmp_path_factory):
    root = tmp_path_factory.mktemp("cf")
    _ok(["generate", "--workload", "cf", "--out", root / "g", "--size", 400, "--requests", 30, "--seed", 1])
    _ok(["build-synopsis", "--data", root / "g/ratings.csv", "--workload", "cf", "--components", 2,
         "--out", root / "b"])
    return root


@pytest.fixture(scope="module")
def text_run(tmp_path_factory):
    root = tmp_path_factory.mktemp("text")
    (root / "cfg").write_text("svd_learning_rate = 0.01\ncompression_ratio = 10\n")
    _ok(["generate", "--workload", "search", "--out", root / "g", "--size", 300, "--requests", 20, "--seed", 2])
    _ok(["build-synopsis", "--data", root / "g/corpus.tsv", "--workload", "search", "--components", 2,
         "--config", root / "cfg", "--out", root / "b"])
    return root


def test_generate_is_deterministic(cf_run, tmp_path):
    _ok(["generate", "--workload", "cf", "--out", tmp_path, "--size", 400, "--requests", 30, "--seed", 1])
    assert _files(tmp_path) == _files(cf_run / "g")


@pytest.mark.parametrize("run", ["cf_run", "text_run"])
def test_build_outputs(run, request):
    root = request.getfixturevalue(run)
    rows = _csv(root / "b/build.csv")
    assert len(rows) == 2
    for row in rows:
        state = sy.load_state(root / f"b/component_{int(row['component_id']):03d}")
        assert sy.audit(state) == []
        assert int(row["synopsis_points"]) == state.synopsis.m
        assert state.synopsis.m <= int(row["points"]) / state.config.compression_ratio


def test_build_rerun_byte_identical(cf_run, tmp_path):
    _ok(["build-synopsis", "--data", cf_run / "g/ratings.csv", "--workload", "cf", "--components", 2,
         "--out", tmp_path])
    assert _files(tmp_path) == _files(cf_run / "b")


def test_update_sweep(cf_run, tmp_path):
    argv = ["update-synopsis", "--state", cf_run / "b/component_000", "--percents", "0,1,2,5", "--out"]
    _ok(argv + [tmp_path / "a"])
    _ok(argv + [tmp_path / "b"])
    assert _files(tmp_path / "a") == _files(tmp_path / "b")
    rows = _csv(tmp_path / "a/update_report.csv")
    by = {(r["category"], float(r["percent"])): int(r["recomputed"]) for r in rows}
    assert by[("add", 0.0)] == 0 and by[("modify", 0.0)] == 0
    for pct in (1.0, 2.0, 5.0):
        assert by[("add", pct)] <= by[("modify", pct)]


def test_update_from_change_file(cf_run, tmp_path):
    state = sy.load_state(cf_run / "b/component_001")
    user = state.subset.ids[0]
    item = sorted(state.subset.points[user])[0]
    old = state.subset.points[user][item]
    new_value = 1.0 if old != 1.0 else 2.0
    changes = tmp_path / "changes.csv"
    changes.write_text(f"add,fresh1,1,4\nadd,fresh1,2,3\nmodify,{user},{item},{new_value}\n")
    for d in ("a", "b"):
        _ok(["update-synopsis", "--state", cf_run / "b/component_001", "--changes", changes, "--out", tmp_path / d])
    assert _files(tmp_path / "a") == _files(tmp_path / "b")
    new = sy.load_state(tmp_path / "a/state")
    assert sy.audit(new) == []
    assert new.subset.points["fresh1"] == {"1": 4.0, "2": 3.0}
    assert new.subset.points[user][item] == new_value
    assert new.version == state.version + 1


def test_update_text_change_file(text_run, tmp_path):
    state = sy.load_state(text_run / "b/component_000")
    doc = state.subset.ids[0]
    changes = tmp_path / "changes.tsv"
    changes.write_text(f"add\tnewdoc\talpha beta beta\nmodify\t{doc}\tgamma gamma delta\n")
    _ok(["update-synopsis", "--state", text_run / "b/component_000", "--changes", changes, "--out", tmp_path / "o"])
    new = sy.load_state(tmp_path / "o/state")
    assert sy.audit(new) == []
    assert new.subset.points["newdoc"] == {"alpha": 1, "beta": 2}
    assert new.subset.points[doc] == {"gamma": 2, "delta": 1}


@pytest.mark.parametrize("run,requests", [("cf_run", "g/active.csv"), ("text_run", "g/queries.tsv")])
def test_rank_effectiveness(run, requests, request, tmp_path):
    root = request.getfixturevalue(run)
    for d in ("a", "b"):
        _ok(["rank-effectiveness", "--state", root / "b", "--requests", root / requests, "--out", tmp_path / d])
    assert _files(tmp_path / "a") == _files(tmp_path / "b")
    rows = _csv(tmp_path / "a/rank_effectiveness.csv")
    assert [int(r["section"]) for r in rows] == list(range(1, 11))
    fr = [float(r["fraction"]) for r in rows]
    assert all(0.0 <= f <= 1.0 for f in fr)
    assert fr[0] > fr[-1]


def test_request_matching_aggregated_profile_ranks_first(cf_run):
    state = sy.load_state(cf_run / "b/component_000")
    comp = CfComponent(state)
    for pos, agg in enumerate(state.synopsis.ids):
        items = state.synopsis.points[agg].payload.items
        known = {i: mean for i, (mean, _) in items.items()}
        if len(known) < 3 or np.var(list(known.values())) < 1e-6:
            continue
        prep = comp.prepare(CfRequest(known, ("absent-item",)))
        assert prep.correlations[pos] == pytest.approx(1.0, abs=1e-12)
        assert prep.correlations[pos] >= prep.correlations.max() - 1e-12


def _scenario(root: Path, extra: str = "") -> Path:
    path = root / "scenario.cfg"
    path.write_text(
        "workload = cf\ncomponents = 2\ngen_points = 400\ngen_requests = 30\nn_requests = 150\n"
        "rate_factors = 0.5, 3\nreissue_min_samples = 20\nwindow_ms = 5000\n" + extra
    )
    return path


def test_bench_summary_and_determinism(tmp_path):
    scen = _scenario(tmp_path, "outcomes = true\n")
    for d in ("a", "b"):
        _ok(["bench", "--scenario", scen, "--out", tmp_path / d])
    assert _files(tmp_path / "a") == _files(tmp_path / "b")
    rows = _csv(tmp_path / "a/summary.csv")
    assert [(r["rate"], r["strategy"]) for r in rows] == [
        (rate, s) for rate in ("0.5x", "3x") for s in ("basic", "reissue", "partial", "accuracy_aware")]
    for r in rows:
        assert int(r["request_count"]) == 150
        if r["strategy"] in ("basic", "reissue"):
            assert float(r["mean_accuracy_loss_pct"]) == 0.0
    metrics = _csv(tmp_path / "a/metrics_3x.csv")
    assert {m["strategy"] for m in metrics} == {"basic", "reissue", "partial", "accuracy_aware"}
    assert sum(int(m["request_count"]) for m in metrics if m["strategy"] == "basic") == 150
    outcomes = _csv(tmp_path / "a/outcomes.csv")
    assert len(outcomes) == 2 * 150 * 2
    _ok(["bench", "--scenario", scen, "--seed", 5, "--out", tmp_path / "c"])
    assert _files(tmp_path / "c") != _files(tmp_path / "a")


def test_bench_with_data_and_trace(cf_run, tmp_path):
    g = cf_run / "g"
    ids = [line.split(",")[0] for line in (g / "active.csv").read_text().splitlines()]
    ids = sorted(set(ids))
    trace = tmp_path / "trace.csv"
    trace.write_text("submit_time_ms,request_id\n" + "".join(f"{k * 40.0},{ids[k % len(ids)]}\n" for k in range(60)))
    scen = _scenario(tmp_path, f"data = {g / 'ratings.csv'}\nrequests = {g / 'active.csv'}\n"
                               f"testset = {g / 'testset.csv'}\ntrace = {trace}\n")
    _ok(["bench", "--scenario", scen, "--out", tmp_path / "o"])
    rows = _csv(tmp_path / "o/summary.csv")
    assert [r["rate"] for r in rows] == ["trace"] * 4
    assert all(int(r["request_count"]) == 60 for r in rows)
    assert all(math.isnan(float(r["rate_rps"])) for r in rows)


def test_bench_cf_data_without_testset(cf_run, tmp_path):
    g = cf_run / "g"
    scen = _scenario(tmp_path, f"data = {g / 'ratings.csv'}\nrequests = {g / 'active.csv'}\n")
    assert main(["bench", "--scenario", str(scen), "--out", str(tmp_path / "o")]) == EXIT_USAGE


def test_exit_codes(cf_run, tmp_path, capsys):
    assert main([]) == EXIT_USAGE
    assert main(["frobnicate"]) == EXIT_USAGE
    assert main(["build-synopsis", "--out", str(tmp_path)]) == EXIT_USAGE
    bad_cfg = tmp_path / "bad.cfg"
    bad_cfg.write_text("mystery = 1\n")
    assert main(["bench", "--scenario", str(bad_cfg), "--out", str(tmp_path / "o")]) == EXIT_USAGE
    assert main(["build-synopsis", "--data", str(tmp_path / "missing.csv"), "--workload", "cf",
                 "--out", str(tmp_path / "o")]) == EXIT_DATA
    broken = tmp_path / "broken.csv"
    broken.write_text("u1,i1,not-a-number\n")
    assert main(["build-synopsis", "--data", str(broken), "--workload", "cf", "--out", str(tmp_path / "o")]) == EXIT_DATA
    assert main(["rank-effectiveness", "--state", str(tmp_path), "--requests", str(broken),
                 "--out", str(tmp_path / "o")]) == EXIT_DATA
    err = capsys.readouterr().err
    assert "usage error" in err and "config error" in err and "data error" in err


def test_exit_code_for_stale_state(cf_run, tmp_path):
    import shutil

    src = tmp_path / "state"
    shutil.copytree(cf_run / "b/component_000", src)
    lines = (src / "data.csv").read_text().splitlines()
    u, i, r = lines[0].split(",")
    lines[0] = f"{u},{i},{1.0 if float(r) != 1.0 else 2.0!r}"
    (src / "data.csv").write_text("\n".join(lines) + "\n")
    assert main(["update-synopsis", "--state", str(src), "--percents", "1", "--out", str(tmp_path / "o")]) \
        == EXIT_INVARIANT
