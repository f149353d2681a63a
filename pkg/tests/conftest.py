import os

import numpy as np
import pytest

from cycleguardian import synth
from cycleguardian.model import CycleGuardian, ModelConfig


def mini_model_config(**overrides):
    """Smallest config that still exercises every parameter group."""
    base = dict(
        widths=(4, 8, 16),
        d_g=8,
        d_e=4,
        d_z=8,
        k=3,
        n_filters=12,
        g_frames=6,
        n_classes=4,
    )
    base.update(overrides)
    return ModelConfig(**base)


def mini_model(seed=0, dtype=np.float32, **overrides):
    return CycleGuardian(mini_model_config(**overrides), np.random.default_rng(seed), dtype)


@pytest.fixture(scope="session")
def synth_corpus_dir(tmp_path_factory):
    """A 12-recording synthetic corpus in the annotated-pair layout."""
    root = tmp_path_factory.mktemp("corpus")
    synth.write_synthetic_corpus(root, n=12, seed=7)
    return root


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)


def icbhi_dir():
    d = os.environ.get("ICBHI_DATA_DIR")
    return d if d and os.path.isdir(d) else None


needs_icbhi = pytest.mark.skipif(icbhi_dir() is None, reason="set ICBHI_DATA_DIR to run full-corpus checks")
