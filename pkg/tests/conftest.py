import functools

import pytest

from flowsense.procsim import ScenarioConfig, run_scenario

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def acceptance():
    """Record one PASS/FAIL line for the end-of-run summary (also printed immediately)."""

    def record(number: int, title: str, ok: bool, detail: str = "") -> bool:
        line = f"[{'PASS' if ok else 'FAIL'}] criterion {number}: {title}" + (f" ({detail})" if detail else "")
        print(line)
        ACCEPTANCE_LINES.append(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split("criterion ")[1].split(":")[0])):
            terminalreporter.write_line(line)


@functools.lru_cache(maxsize=None)
def short_dataset(variant: str, hours: float = 3.0, seed: int = 0):
    return run_scenario(variant, ScenarioConfig(duration_h=hours, warmup_h=4.0, seed=seed))


@pytest.fixture(scope="session")
def data_a():
    return short_dataset("A", 3.0, 1)


@pytest.fixture(scope="session")
def data_b():
    return short_dataset("B", 3.0, 2)
