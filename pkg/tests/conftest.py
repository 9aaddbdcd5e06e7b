import numpy as np
import pytest

from physprior.unified import generate_dataset


@pytest.fixture(scope="session")
def unified_ds():
    """Fixed-coefficient library used by the in-distribution tasks."""
    return generate_dataset("unified", 200, seed=11)


@pytest.fixture(scope="session")
def small_unified_ds():
    return generate_dataset("unified", 12, seed=5)


@pytest.fixture(scope="session")
def manifold_ds():
    return generate_dataset("continuous_manifold", 200, seed=21)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


_ACCEPTANCE = pytest.StashKey[list]()


@pytest.fixture
def report(request):
    """Record one PASS/FAIL line for the acceptance summary."""
    lines = request.config.stash.setdefault(_ACCEPTANCE, [])

    def record(label, ok, detail):
        line = f"criterion {label}: {'PASS' if ok else 'FAIL'}  {detail}"
        lines.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_ACCEPTANCE, [])
    if lines:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
