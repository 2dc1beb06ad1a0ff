import numpy as np
import pytest
from scipy import ndimage


def textured(shape, seed=0, scales=(1.5, 4.0), contrast=60.0, mean=140.0):
    """Smooth random texture with features at a few spatial scales."""
    rng = np.random.default_rng(seed)
    out = np.zeros(shape)
    for s in scales:
        f = ndimage.gaussian_filter(rng.standard_normal(shape), s, mode="wrap")
        out += f / f.std()
    return np.clip(mean + contrast * out / np.sqrt(len(scales)), 0, 255)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


_ACCEPTANCE_KEY = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_ACCEPTANCE_KEY] = []


@pytest.fixture
def criterion(request):
    """Record one acceptance line; returns ``ok`` so the test can assert on it."""
    def record(number: int, ok: bool, detail: str) -> bool:
        line = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
        request.config.stash[_ACCEPTANCE_KEY].append((number, line))
        print(line)
        return ok
    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_ACCEPTANCE_KEY, [])
    if not lines:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for _, line in sorted(lines):
        terminalreporter.write_line(line)
