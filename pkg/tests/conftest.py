"""Shared fixtures, a suite-wide cardinality guard and the acceptance summary."""

from __future__ import annotations

import functools

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

import dcctrack.backtest
import dcctrack.baselines
import dcctrack.cli
import dcctrack.solver
from dcctrack.io import SynthSpec, synthetic_panel
from dcctrack.model import ReturnsPanel

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

#: (method, K, exact cardinality) of every successful partial-replication fit
PARTIAL_SOLVES: list[tuple[str, int, int]] = []
#: acceptance criterion number -> (passed, detail)
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def _guard(fn, method):
    @functools.wraps(fn)
    def wrapper(panel, spec, *args, **kwargs):
        report = fn(panel, spec, *args, **kwargs)
        k = spec.K if hasattr(spec, "K") else int(spec)
        PARTIAL_SOLVES.append((method, k, report.exact_cardinality))
        if report.exact_cardinality > k:
            pytest.fail(f"{method} returned {report.exact_cardinality} > K={k} holdings", pytrace=False)
        return report

    return wrapper


def pytest_configure(config):
    targets = {
        "partial_replication_dcc": (dcctrack.solver, "dcc", (dcctrack.backtest, dcctrack.cli)),
        "forward_selection": (dcctrack.baselines, "forward", (dcctrack.backtest, dcctrack.cli)),
        "backward_selection": (dcctrack.baselines, "backward", (dcctrack.backtest, dcctrack.cli)),
    }
    for name, (home, method, users) in targets.items():
        wrapped = _guard(getattr(home, name), method)
        for mod in (home, *users):
            setattr(mod, name, wrapped)


def pytest_terminal_summary(terminalreporter):
    tr = terminalreporter
    if PARTIAL_SOLVES:
        over = [s for s in PARTIAL_SOLVES if s[2] > s[1]]
        verdict = "all within K" if not over else f"{len(over)} OVER K"
        tr.write_line(f"cardinality guard: {len(PARTIAL_SOLVES)} partial-replication fits, {verdict}")
        if 5 in ACCEPTANCE:
            ok, detail = ACCEPTANCE[5]
            ACCEPTANCE[5] = (ok and not over, f"{detail}; suite-wide {len(PARTIAL_SOLVES)} fits, {len(over)} over K")
    if not ACCEPTANCE:
        return
    tr.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        tr.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")


def make_panel(n=8, d=252, k0=3, noise=0.002, seed=0) -> tuple[ReturnsPanel, np.ndarray]:
    return synthetic_panel(SynthSpec(n=n, d=d, k0=k0, noise=noise, seed=seed))


@pytest.fixture
def small_panel():
    return make_panel(n=8, d=252, k0=3, noise=0.002, seed=3)[0]
