import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("default", max_examples=100, deadline=None)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


class Criterion:
    """Collects the verdict of one acceptance criterion."""

    def __init__(self, number, title):
        self.number = number
        self.title = title
        self.checks = []

    def check(self, ok, detail):
        self.checks.append((bool(ok), detail))

    @property
    def ok(self):
        return bool(self.checks) and all(ok for ok, _ in self.checks)

    def line(self):
        details = "; ".join(d for _, d in self.checks)
        return f"[{'PASS' if self.ok else 'FAIL'}] {self.number:2d}. {self.title}: {details}"


def pytest_configure(config):
    config.acceptance = {}


@pytest.fixture
def criterion(request):
    """``with criterion(n, title) as c: c.check(ok, detail)``; asserts at the end."""
    from contextlib import contextmanager

    @contextmanager
    def open_criterion(number, title):
        c = Criterion(number, title)
        request.config.acceptance[number] = c
        try:
            yield c
        except Exception as exc:
            c.check(False, f"raised {type(exc).__name__}: {exc}")
            raise
        failed = [d for ok, d in c.checks if not ok]
        assert c.checks and not failed, failed

    return open_criterion


def pytest_terminal_summary(terminalreporter, config):
    results = getattr(config, "acceptance", {})
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(results):
        terminalreporter.write_line(results[number].line())
