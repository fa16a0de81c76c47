import os
import sys

import numpy as np
import pytest
import torch

sys.path.insert(0, os.path.dirname(__file__))

from deeplip.lipnet import McnnConfig  # noqa: E402
from deeplip.xvector import EtdnnConfig  # noqa: E402

torch.set_num_threads(1)

# Acceptance outcomes, printed once at the end of the run.
ACCEPTANCE_LINES: list[str] = []


def tiny_mcnn(**kw) -> McnnConfig:
    base = dict(stem_channels=4, trunk_widths=(4, 8, 16, 32), tcn_width=48, embedding_dim=32, n_classes=4)
    base.update(kw)
    return McnnConfig(**base)


def tiny_etdnn(**kw) -> EtdnnConfig:
    base = dict(hidden_dim=16, prepool_dim=32, embedding_dim=16, n_classes=4)
    base.update(kw)
    return EtdnnConfig(**base)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_corpus(tmp_path_factory):
    from deeplip.synth import synth_corpus

    out = tmp_path_factory.mktemp("synth4x8")
    return synth_corpus(4, 8, 7, str(out))


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
