import time

import pytest

CRITERIA: dict[int, tuple[str, bool, str]] = {}
BENCH_SEEDS = (0, 1, 2)


@pytest.fixture(scope="session")
def criteria():
    """Records ``(name, passed, detail)`` per acceptance criterion for the summary."""
    return CRITERIA


@pytest.fixture(scope="session")
def bench_runs(tmp_path_factory):
    """Benchmark runs for every seed plus a repeat of the first: ``{key: (dir, result, secs)}``."""
    from mplab.bench import run_bench
    from mplab.config import bench_config

    cfg = bench_config()
    root = tmp_path_factory.mktemp("bench")
    runs = {}
    for key, seed in [(s, s) for s in BENCH_SEEDS] + [("repeat", BENCH_SEEDS[0])]:
        out = root / str(key)
        t0 = time.perf_counter()
        result = run_bench(cfg, seed, out, workers=1)
        runs[key] = (out, result, time.perf_counter() - t0)
    return runs


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for n in sorted(CRITERIA):
        name, ok, detail = CRITERIA[n]
        tr.write_line(f"[{'PASS' if ok else 'FAIL'}] {n}. {name}: {detail}")
