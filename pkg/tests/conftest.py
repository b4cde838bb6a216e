import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "default", deadline=None, max_examples=40, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def toy_checkpoint(tmp_path_factory):
    """A briefly trained toy model saved to disk: (path, model, hash)."""
    from lfcodec.codec.model import CodecConfig
    from lfcodec.train import synth_dataset, train_toy

    path = tmp_path_factory.mktemp("ckpt") / "toy.lft"
    res = train_toy(CodecConfig.toy(), synth_dataset(4, 2, 32, 32, seed=0), 8, checkpoint_path=path)
    return path, res.model, res.model_hash


ACCEPTANCE = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[ACCEPTANCE] = []


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash[ACCEPTANCE]
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)


@pytest.fixture
def criterion(request):
    """Record one PASS/FAIL line for the end-of-run summary, then assert it."""

    def record(number, ok, detail):
        line = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}"
        request.config.stash[ACCEPTANCE].append(line)
        print(line)
        assert ok, line

    return record
