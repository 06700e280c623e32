import numpy as np
import pytest

from strukt.audio import AudioClip, SongSpec, default_timbres
from strukt.nn import EncoderConfig

SR = 24000


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def tiny_cfg():
    return EncoderConfig(n_mels=16, n_classes=3, d_model=8, n_backbone_blocks=1, n_head_blocks=1,
                         n_heads=2, ff_mult=2, conv_kernel=3, stem_stride=2, proj_dim=4)


@pytest.fixture(scope="session")
def vcv_spec():
    labels = ("verse", "chorus")
    return SongSpec(7, (("verse", 10.0), ("chorus", 10.0), ("verse", 10.0)), SR, default_timbres(labels, 3))


def sine(freq, seconds, sr=SR, amp=1.0):
    t = np.arange(int(round(seconds * sr))) / sr
    return AudioClip(amp * np.sin(2 * np.pi * freq * t), sr)
