import numpy as np
import pytest

from kvmix.rng import SplitMix64, child_seed

_ACCEPTANCE: list[tuple[str, bool, str]] = []


def gaussian(shape, seed, scale=1.0):
    return (SplitMix64(seed).normal(shape) * scale).astype(np.float32)


@pytest.fixture
def rng_matrix():
    def make(rows, cols, seed=0, scale=1.0):
        return gaussian((rows, cols), child_seed(seed, rows, cols), scale)

    return make


@pytest.fixture
def criterion(request):
    """Record one acceptance line; a failing assertion marks it FAIL."""
    name = _label(request.node)
    state = {"detail": ""}
    yield state
    rep = getattr(request.node, "rep_call", None)
    ok = rep is not None and rep.passed
    _ACCEPTANCE.append((name, ok, state["detail"]))


@pytest.hookimpl(hookwrapper=True, tryfirst=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    setattr(item, "rep_" + rep.when, rep)


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(label): acceptance criterion label")
    config.addinivalue_line("markers", "slow: long-running statistical checks")


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, detail in _ACCEPTANCE:
        line = f"{'PASS' if ok else 'FAIL'}  {name}"
        if detail:
            line += f"  ({detail})"
        terminalreporter.write_line(line)


def _label(node):
    marker = node.get_closest_marker("criterion")
    return marker.args[0] if marker else node.name
