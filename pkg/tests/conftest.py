import time
from contextlib import contextmanager
from dataclasses import dataclass

import pytest

from approxtail import synopsis as sy, synth
from approxtail.dataset import partition
from approxtail.dimred import SvdConfig


def small_cfg(lr: float = 0.002, ratio: float = 20.0) -> sy.SynopsisConfig:
    return sy.SynopsisConfig(SvdConfig(learning_rate=lr), compression_ratio=ratio)


@dataclass
class Bundle:
    data: object
    requests: list
    states: list


@pytest.fixture(scope="session")
def cf_bundle() -> Bundle:
    ratings, queries = synth.generate_cf(600, 40, seed=3)
    states = [sy.create(s, small_cfg()) for s in partition(ratings, 2)]
    return Bundle(ratings, queries, states)


@pytest.fixture(scope="session")
def text_bundle() -> Bundle:
    corpus = synth.generate_corpus(400, seed=5)
    queries = synth.generate_queries(40, seed=6)
    states = [sy.create(s, small_cfg(lr=0.01)) for s in partition(corpus, 2)]
    return Bundle(corpus, queries, states)


CRITERIA = pytest.StashKey[dict]()


@pytest.fixture
def criterion(request):
    """Times a block and records one PASS/FAIL line for an acceptance criterion."""
    lines = request.config.stash.setdefault(CRITERIA, {})

    @contextmanager
    def record(number: int, title: str, limit_s: float):
        notes: list[str] = []
        t0 = time.perf_counter()
        ok = False
        try:
            yield notes
            elapsed = time.perf_counter() - t0
            assert elapsed < limit_s, f"took {elapsed:.1f}s, limit {limit_s:g}s"
            ok = True
        finally:
            elapsed = time.perf_counter() - t0
            detail = "; ".join(notes)
            line = f"criterion {number}: {'PASS' if ok else 'FAIL'} {title} ({elapsed:.1f}s){': ' + detail if detail else ''}"
            lines[number] = line
            print(line)

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(CRITERIA, {})
    if lines:
        terminalreporter.section("acceptance criteria")
        for k in sorted(lines):
            terminalreporter.write_line(lines[k])
