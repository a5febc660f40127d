import numpy as np
import pytest

from mstm.fields import N_FIELDS, Sequence


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_sequence(rng, T=8, H=8, W=8, F=N_FIELDS, **params):
    frames = rng.uniform(0.0, 1.0, size=(T, F, H, W)).astype(np.float32)
    return Sequence(frames, params or {"porosity": 0.5}, 0.25)


ACCEPTANCE = []


def record_acceptance(number, title, ok, detail):
    line = f"criterion {number} {'PASS' if ok else 'FAIL'}: {title} ({detail})"
    ACCEPTANCE.append((number, line))
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(ACCEPTANCE):
            terminalreporter.write_line(line)
