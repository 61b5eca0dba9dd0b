import numpy as np
import pytest

from fetalbio.data import SyntheticConfig, generate_synthetic


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def head_images():
    return generate_synthetic(SyntheticConfig(n_images=12, image_size=64, size_range=(0.2, 0.3), seed=7))


@pytest.fixture(scope="session")
def femur_images():
    return generate_synthetic(
        SyntheticConfig(n_images=12, image_size=64, shape="rod_femur", size_range=(0.2, 0.3), seed=8)
    )


ACCEPTANCE = pytest.StashKey[dict]()


def pytest_configure(config):
    config.stash[ACCEPTANCE] = {}


@pytest.fixture
def acceptance(request):
    """Record one pass/fail/skip line per acceptance criterion."""
    results = request.config.stash[ACCEPTANCE]

    def record(number, title, status, detail=""):
        results[number] = (title, status, detail)
        print(f"[{number}] {title}: {status} {detail}")

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    results = config.stash.get(ACCEPTANCE, {})
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(results):
        title, status, detail = results[number]
        terminalreporter.write_line(f"{number} {status:<4} {title}  ({detail})")
