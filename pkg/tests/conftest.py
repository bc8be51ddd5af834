import numpy as np
import pytest

from nastl.benchmark import SyntheticSpec, SyntheticTask, generate_synthetic
from nastl.search_space import SearchSpace

ACCEPTANCE_RESULTS: list[tuple[str, str]] = []


@pytest.fixture(scope="session")
def tiny_space():
    return SearchSpace(node_count=3, edges=((0, 1), (0, 2), (1, 2)), ops=("a", "b"))


@pytest.fixture(scope="session")
def smooth_bench():
    spec = SyntheticSpec(tasks=(SyntheticTask(name="alpha", family="smooth"),))
    return generate_synthetic(11, spec)


@pytest.fixture(scope="session")
def two_task_bench():
    spec = SyntheticSpec(tasks=(
        SyntheticTask(name="alpha", family="smooth"),
        SyntheticTask(name="beta", family="smooth",
                      correlate_with="alpha", kendall_tau=0.7),
    ))
    return generate_synthetic(17, spec)


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(0)


def record_acceptance(name: str, ok: bool, detail: str = "") -> None:
    ACCEPTANCE_RESULTS.append((name, ("PASS" if ok else "FAIL") +
                               (f" ({detail})" if detail else "")))
    assert ok, f"acceptance criterion failed: {name} {detail}"


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for name, verdict in ACCEPTANCE_RESULTS:
        terminalreporter.write_line(f"[{verdict.split()[0]}] {name}"
                                    + ("" if " " not in verdict else
                                       " " + verdict.split(" ", 1)[1]))
