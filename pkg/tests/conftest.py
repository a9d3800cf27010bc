from __future__ import annotations

import numpy as np
import pytest

from dcma.genmodel import Dataset


def linear_gaussian_mediator_data(n: int, seed: int = 0) -> Dataset:
    """``M | a, z ~ N(0.5 + a + 0.3 z, 0.5^2)`` with an unrelated outcome."""
    gen = np.random.default_rng(seed)
    a = (gen.random(n) < 0.5).astype(float)
    z = gen.normal(size=(n, 1))
    m = 0.5 + a[:, None] + 0.3 * z + 0.5 * gen.normal(size=(n, 1))
    y = 1.0 + m[:, 0] + gen.normal(size=n)
    return Dataset(a, z, m, y)


@pytest.fixture(scope="session")
def lg_data() -> Dataset:
    return linear_gaussian_mediator_data(5000)


ACCEPTANCE_CRITERIA = range(1, 11)
_acceptance_lines: dict = {}


@pytest.fixture
def criterion(request):
    """Record one acceptance verdict; the terminal summary lists them all."""

    def record(number, ok: bool, detail: str, variant: str = "") -> bool:
        name = f"criterion {number}" + (f" [{variant}]" if variant else "")
        line = f"{name}: {'PASS' if ok else 'FAIL'}  {detail}"
        _acceptance_lines[(number, variant)] = line
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if not _acceptance_lines:
        return
    terminalreporter.section("acceptance criteria")
    seen = {number for number, _ in _acceptance_lines}
    for number in ACCEPTANCE_CRITERIA:
        if number not in seen:
            terminalreporter.write_line(f"criterion {number}: FAIL  not run or errored before reporting")
        for key in sorted(k for k in _acceptance_lines if k[0] == number):
            terminalreporter.write_line(_acceptance_lines[key])
