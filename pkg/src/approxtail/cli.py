"""Command-line entry points.

Output files never contain wall-clock timings, so re-running a subcommand
with the same inputs and seed reproduces them byte for byte; timings go to
stdout.
"""

from __future__ import annotations

import argparse
import logging
import sys
import time
from pathlib import Path
from typing import Sequence

from . import __version__, experiments as ex, simulator as sim, synth
from . import synopsis as sy
from .config import ConfigError, Settings, load_settings
from .dataset import NUMERIC, TEXT, DataError, Subset, load_corpus, load_ratings, partition, sorted_ids, tokenize
from .engine import OUTCOME_HEADER
from .search import CorpusStats
from .service import CfService, SearchService

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_INVARIANT = 0, 2, 3, 4

log = logging.getLogger("approxtail")


class InvariantError(RuntimeError):
    pass


class UsageError(Exception):
    pass


# -- shared helpers ---------------------------------------------------------------------


def _settings(args) -> Settings:
    base = load_settings(args.config) if getattr(args, "config", None) else Settings()
    over = {}
    for key in ("workload", "components", "seed"):
        val = getattr(args, key, None)
        if val is not None:
            over[key] = val
    data = getattr(args, "data", None)
    if data:
        over["data"] = str(data)
    return _replace(base, **over)


def _replace(s: Settings, **kw) -> Settings:
    import dataclasses

    try:
        return dataclasses.replace(s, **kw)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def _write_lines(path: Path, header: str, rows: Sequence[str]) -> None:
    path.write_text("\n".join([header, *rows]) + "\n", encoding="utf-8")


def _load_data(workload: str, path):
    return load_ratings(path) if workload == "cf" else load_corpus(path)


def _load_requests(workload: str, path, k: int, testset=None):
    if workload == "cf":
        return synth.load_cf_queries(path, testset)
    return synth.load_search_queries(path, k)


def _check(state: sy.SynopsisState) -> None:
    problems = sy.audit(state)
    if problems:
        raise InvariantError(f"component {state.component_id}: " + "; ".join(problems[:5]))


def _component_dirs(root: Path) -> list[Path]:
    dirs = sorted(p for p in root.glob("component_*") if p.is_dir())
    if not dirs:
        raise DataError(f"{root}: no component_* state directories")
    return dirs


def _build(settings: Settings, data, announce=print) -> list[sy.SynopsisState]:
    cfg = settings.synopsis_config()
    states = []
    for subset in partition(data, settings.components):
        timings: dict = {}
        state = sy.create(subset, cfg, timings)
        _check(state)
        announce(f"component {subset.component_id}: {len(subset)} points -> {state.synopsis.m} aggregated "
                 f"(reduce {timings['reduce']:.3f}s, rtree {timings['rtree']:.3f}s, "
                 f"aggregate {timings['aggregate']:.3f}s)")
        states.append(state)
    return states


def _service(settings: Settings, states, requests, data):
    if settings.workload == "cf":
        return CfService(states, requests, settings.cf_config(data.scale))
    stats = CorpusStats.from_docs(data.docs) if settings.search_stats == "global" else None
    return SearchService(states, requests, stats)


# -- subcommands ------------------------------------------------------------------------------


def cmd_generate(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.workload == "cf":
        ratings, queries = synth.generate_cf(args.size, args.requests, seed=args.seed)
        from .dataset import write_ratings

        write_ratings(ratings, out / "ratings.csv")
        synth.write_cf_queries(queries, out / "active.csv", out / "testset.csv")
        print(f"wrote {len(ratings)} users and {len(queries)} requests to {out}")
    else:
        corpus = synth.generate_corpus(args.size, seed=args.seed)
        queries = synth.generate_queries(args.requests, seed=args.seed + 1)
        synth.write_docs(corpus.docs, out / "corpus.tsv")
        synth.write_search_queries(queries, out / "queries.tsv")
        print(f"wrote {len(corpus)} documents and {len(queries)} queries to {out}")
    return EXIT_OK


def cmd_build_synopsis(args) -> int:
    settings = _settings(args)
    if not settings.data:
        raise UsageError("--data is required")
    data = _load_data(settings.workload, settings.data)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    states = _build(settings, data)
    rows = []
    for st in states:
        sy.save_state(st, out / f"component_{st.component_id:03d}")
        rows.append(f"{st.component_id},{len(st.subset)},{st.synopsis.m},{st.index.depth},{st.tree.height}")
    _write_lines(out / "build.csv", "component_id,points,synopsis_points,depth,tree_height", rows)
    print(f"built {len(states)} synopses in {time.perf_counter() - t0:.3f}s -> {out}")
    return EXIT_OK


def parse_changes(path, kind: str, current) -> sy.ChangeSet:
    """Read a change file.

    Numeric: ``add|modify,user_id,item_id,rating`` rows; an added user's rows
    form its content, a modified user's rows overwrite those ratings.
    Text: ``add|modify<TAB>doc_id<TAB>terms`` rows giving the full new document.
    """
    added: dict[str, dict] = {}
    modified: dict[str, dict] = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        if kind == NUMERIC:
            parts = [p.strip() for p in line.split(",")]
            if len(parts) != 4 or parts[0] not in ("add", "modify"):
                raise DataError(f"{path}:{lineno}: expected add|modify,user_id,item_id,rating")
            op, pid, item, raw = parts
            try:
                value = float(raw)
            except ValueError:
                raise DataError(f"{path}:{lineno}: bad rating {raw!r}") from None
            if op == "add":
                added.setdefault(pid, {})[item] = value
            else:
                if pid not in current:
                    raise DataError(f"{path}:{lineno}: modified point {pid!r} does not exist")
                modified.setdefault(pid, dict(current[pid]))[item] = value
        else:
            parts = line.split("\t")
            if len(parts) != 3 or parts[0] not in ("add", "modify"):
                raise DataError(f"{path}:{lineno}: expected add|modify<TAB>doc_id<TAB>terms")
            op, pid, body = parts[0], parts[1].strip(), parts[2]
            tf: dict[str, int] = {}
            for term in tokenize(body):
                tf[term] = tf.get(term, 0) + 1
            (added if op == "add" else modified)[pid] = tf
    return sy.ChangeSet(added, modified)


def cmd_update_synopsis(args) -> int:
    state = sy.load_state(args.state)
    _check(state)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.changes:
        changes = parse_changes(args.changes, state.kind, state.subset.points)
        t0 = time.perf_counter()
        new = sy.update(state, changes)
        dt = time.perf_counter() - t0
        _check(new)
        sy.save_state(new, out / "state")
        _write_lines(out / "update_report.csv", "category,percent,changed,recomputed,synopsis_points,version",
                     [f"file,,{len(changes)},{len(new.recomputed)},{new.synopsis.m},{new.version}"])
        print(f"applied {len(changes)} changes, recomputed {len(new.recomputed)} aggregated points in {dt:.4f}s")
        return EXIT_OK
    percents = [float(x) for x in args.percents.split(",") if x.strip()]
    rows = []
    for run in ex.update_sweep(state, percents, args.seed):
        _check(run.state)
        rows.append(f"{run.category},{run.percent:g},{run.changed},{run.recomputed},{run.m},{run.state.version}")
        print(f"{run.category:>6} {run.percent:6g}%: {run.changed} changed, {run.recomputed} recomputed "
              f"of {run.m} in {run.seconds:.4f}s")
    _write_lines(out / "update_report.csv", "category,percent,changed,recomputed,synopsis_points,version", rows)
    return EXIT_OK


def cmd_rank_effectiveness(args) -> int:
    settings = _settings(args)
    states = [sy.load_state(d) for d in _component_dirs(Path(args.state))]
    for st in states:
        _check(st)
    kind = states[0].kind
    workload = "cf" if kind == NUMERIC else "search"
    if args.workload and args.workload != workload:
        raise UsageError(f"state holds {kind} data but --workload is {args.workload}")
    requests = _load_requests(workload, args.requests, settings.search_k)
    if workload == "cf":
        from .cf import CfComponent

        cfg = settings.cf_config(states[0].subset.scale)
        profile = ex.cf_rank_profile([CfComponent(s, cfg) for s in states], [q.request for q in requests])
    else:
        from .search import SearchComponent

        stats = None
        if settings.search_stats == "global":
            docs = {d: tf for s in states for d, tf in s.subset.points.items()}
            stats = CorpusStats.from_docs(docs)
        profile = ex.search_rank_profile([SearchComponent(s, stats) for s in states], requests)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = [f"{k + 1},{ex.fmt(f)},{h:g},{t:g}" for k, (f, h, t) in
            enumerate(zip(profile.fractions, profile.hits, profile.totals))]
    _write_lines(out / "rank_effectiveness.csv", "section,fraction,related,total", rows)
    print("section fractions: " + " ".join(f"{f:.3f}" for f in profile.fractions))
    print(f"spearman(section, fraction) = {profile.spearman:.4f}")
    return EXIT_OK


def cmd_bench(args) -> int:
    settings = load_settings(args.scenario)
    if args.seed is not None:
        settings = _replace(settings, seed=args.seed)
    if settings.data:
        data = _load_data(settings.workload, settings.data)
        if not settings.requests:
            raise ConfigError("scenario gives data but no requests file")
        if settings.workload == "cf" and not settings.testset:
            raise ConfigError("a cf scenario with data needs a testset file")
        requests = _load_requests(settings.workload, settings.requests, settings.search_k, settings.testset)
    elif settings.workload == "cf":
        data, requests = synth.generate_cf(settings.gen_points, settings.gen_requests, seed=settings.seed)
    else:
        data = synth.generate_corpus(settings.gen_points, seed=settings.seed)
        requests = synth.generate_queries(settings.gen_requests, k=settings.search_k, seed=settings.seed + 1)
    t0 = time.perf_counter()
    states = _build(settings, data, announce=lambda s: None)
    service = _service(settings, states, requests, data)
    print(f"synopses built in {time.perf_counter() - t0:.2f}s; subset sizes {service.sizes}, "
          f"synopsis sizes {service.synopsis_sizes}")
    mean_points = sum(service.sizes) / service.n
    base = settings.scenario(mean_points)
    strategies = settings.strategy_objects()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    t0 = time.perf_counter()
    if settings.trace:
        arrivals = sim.load_trace(settings.trace)
        rows = []
        for strat in strategies:
            scen = settings.scenario(mean_points, strat)
            m = sim.run(scen, service, arrivals)
            rows.append(ex.BenchRow(float("nan"), float("nan"), strat.name, m.p999(), m.mean_loss(),
                                    len(m.records), m.reissues, m))
        groups = [("trace", rows)]
    else:
        rows = ex.bench_sweep(service, base, strategies, settings.rate_factors, settings.n_requests, settings.seed)
        groups = [(f"{f:g}x", [r for r in rows if r.rate_factor == f]) for f in settings.rate_factors]

    summary = []
    outcome_rows = []
    for label, group in groups:
        metric_rows = []
        for r in group:
            metric_rows.extend(sim.metrics_rows(r.metrics, settings.window_ms))
            summary.append(f"{label},{ex.fmt(r.rate_rps)},{r.strategy},{ex.fmt(r.p999_ms)},"
                           f"{ex.fmt(r.mean_loss_pct)},{r.requests},{r.reissues}")
            if settings.outcomes and r.strategy == "accuracy_aware":
                for k, rec in enumerate(r.metrics.records):
                    rid = f"{label}:{k}:{rec.request_id}"
                    for c, (lat, n_sets) in enumerate(zip(rec.latencies, rec.sets)):
                        outcome_rows.append(f"{rid},{c},{r.strategy},{lat:.6f},{n_sets},{int(n_sets == 0)}")
        _write_lines(out / f"metrics_{label}.csv", sim.METRICS_HEADER, metric_rows)
    _write_lines(out / "summary.csv",
                 "rate,rate_rps,strategy,p999_latency_ms,mean_accuracy_loss_pct,request_count,reissues", summary)
    if settings.outcomes:
        _write_lines(out / "outcomes.csv", OUTCOME_HEADER, outcome_rows)

    print(f"{'rate':>6} {'strategy':>15} {'p99.9 ms':>12} {'loss %':>8} {'reissues':>8}")
    for label, group in groups:
        for r in group:
            print(f"{label:>6} {r.strategy:>15} {r.p999_ms:12.1f} {r.mean_loss_pct:8.2f} {r.reissues:8d}")
    print(f"simulated in {time.perf_counter() - t0:.2f}s -> {out}")
    return EXIT_OK


# -- entry point ---------------------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="approxtail", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("generate", help="write a seeded synthetic dataset and request file")
    g.add_argument("--workload", choices=("cf", "search"), required=True)
    g.add_argument("--out", required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--size", type=int, default=3600, help="users or documents")
    g.add_argument("--requests", type=int, default=200)
    g.set_defaults(func=cmd_generate)

    b = sub.add_parser("build-synopsis", help="partition data and build one synopsis per component")
    b.add_argument("--data", required=True)
    b.add_argument("--workload", choices=("cf", "search"))
    b.add_argument("--components", type=int)
    b.add_argument("--config")
    b.add_argument("--seed", type=int)
    b.add_argument("--out", required=True)
    b.set_defaults(func=cmd_build_synopsis)

    u = sub.add_parser("update-synopsis", help="apply changes to one component's synopsis state")
    u.add_argument("--state", required=True, help="a component_* directory written by build-synopsis")
    src = u.add_mutually_exclusive_group(required=True)
    src.add_argument("--changes", help="change file to apply")
    src.add_argument("--percents", help="comma list of percentages for an add/modify sweep")
    u.add_argument("--seed", type=int, default=0)
    u.add_argument("--out", required=True)
    u.set_defaults(func=cmd_update_synopsis)

    r = sub.add_parser("rank-effectiveness", help="share of highly related originals per ranked section")
    r.add_argument("--state", required=True, help="directory written by build-synopsis")
    r.add_argument("--requests", required=True)
    r.add_argument("--workload", choices=("cf", "search"))
    r.add_argument("--config")
    r.add_argument("--out", required=True)
    r.set_defaults(func=cmd_rank_effectiveness)

    k = sub.add_parser("bench", help="simulate the strategies over a rate sweep or trace")
    k.add_argument("--scenario", required=True)
    k.add_argument("--seed", type=int)
    k.add_argument("--out", required=True)
    k.set_defaults(func=cmd_bench)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, FileNotFoundError, IsADirectoryError, UnicodeDecodeError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except InvariantError as exc:
        print(f"invariant violation: {exc}", file=sys.stderr)
        return EXIT_INVARIANT


if __name__ == "__main__":
    sys.exit(main())
