import numpy as np
import pytest

from tfn.model import ArchConfig
from tfn.synth import SynthSpec, synth_generate

TINY = dict(lstm_embed=4, lstm_hidden=4, language_dim=4, visual_dim=3, acoustic_dim=3,
            trunk_width=6, t_max=6)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_arch():
    return ArchConfig(p=8, q=8, **TINY)


@pytest.fixture(scope="session")
def small_dataset():
    return synth_generate(SynthSpec(n_utterances=60, gamma=1.0, alpha=(0.2, 0.2, 0.2),
                                    beta=(0.2, 0.2, 0.2), noise_std=0.1, seed=7))


# one PASS/FAIL line per acceptance criterion, printed after the run
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
