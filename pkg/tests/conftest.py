import numpy as np
import pytest

from inpaint_nerf.synthetic import SyntheticSpec, make_synthetic

SMALL = dict(height=24, width=32, focal=30.0, n_frames=10)


@pytest.fixture(scope="session")
def small_scene():
    """10-frame 24x32 box scene with built-in inpaintings (no corruption)."""
    return make_synthetic(SyntheticSpec(**SMALL), seed=0)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n, (ok, detail) in sorted(results.items()):
        terminalreporter.write_line(f"[criterion {n}] {'PASS' if ok else 'FAIL'}: {detail}")
