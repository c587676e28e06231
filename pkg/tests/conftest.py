import numpy as np
import pytest
import torch

from lipgan.model import ArchitectureConfig

# Small network used wherever a test only needs the plumbing to work.
TINY = ArchitectureConfig(
    face_size=64,
    embed_dim=16,
    encoder_widths=(4, 4, 8, 8, 8, 8),
    decoder_widths=(8, 8, 8, 8, 4, 4),
    audio_widths=(4, 8),
    res_blocks=1,
    res_from_scale=3,
)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(autouse=True)
def _seed_torch():
    torch.manual_seed(0)


@pytest.fixture(scope="session")
def toy_clip():
    from lipgan.synthetic import ToyClipSpec, make_clip

    return make_clip(ToyClipSpec(seed=7, duration_s=2.0))


# (criterion, passed, detail) rows recorded by the acceptance suite
ACCEPTANCE_RESULTS: list = []


def record_criterion(criterion: str, passed: bool, detail: str) -> None:
    line = f"criterion {criterion}: {'PASS' if passed else 'FAIL'} ({detail})"
    print(line)
    ACCEPTANCE_RESULTS.append(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_RESULTS):
            terminalreporter.write_line(line)
