import numpy as np

from pridda.problems import Regularizer
from pridda.prox import ProxQuery

KINDS = ("l1", "l2_half", "ball", "zero")


def random_query(kind, m, rng):
    """Query whose minimiser lies well inside [-3, 3]^m."""
    gamma = rng.uniform(0.5, 2.0)
    c = rng.uniform(0.0, 2.0)
    z = rng.uniform(-1.0, 1.0, m) * gamma * 2.0
    if kind == "l1":
        reg = Regularizer.l1(rng.uniform(0.05, 1.0))
    elif kind == "l2_half":
        reg = Regularizer.l2_half(rng.uniform(0.1, 2.0))
    elif kind == "ball":
        reg = Regularizer.ball(rng.uniform(0.3, 2.5))
    else:
        reg = Regularizer.zero()
    return ProxQuery(z, c, gamma, reg)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(results):
        title, ok, detail = results[number]
        terminalreporter.write_line(f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {title}: {detail}")
