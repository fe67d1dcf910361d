import numpy as np
import pytest

from mmfs.data import SyntheticSpec, generate_synthetic, load_samples


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def synth_dir(tmp_path_factory):
    """A small synthetic dataset on disk, shared across the session."""
    out = tmp_path_factory.mktemp("synth")
    generate_synthetic(SyntheticSpec(num_samples=120, seed=3), out)
    return out


@pytest.fixture(scope="session")
def synth_samples(synth_dir):
    from mmfs.data import load_manifest
    return load_samples(load_manifest(synth_dir / "manifest.jsonl"))


def pytest_terminal_summary(terminalreporter):
    """Repeat the acceptance verdicts, one line per criterion, at the end of the run."""
    import sys
    module = sys.modules.get("test_acceptance")
    results = getattr(module, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for number in sorted(results):
            terminalreporter.write_line(results[number])
