import numpy as np
import pytest

from roiformer import ModelConfig, RankSpec, WindowSpec


@pytest.fixture
def rng():
    return np.random.default_rng(0)


def tiny_model_config(**overrides) -> ModelConfig:
    """Small but fully featured config: windowed temporal encoder block,
    rank-masked spatial decoder block, co-attention block, CNN embedding."""
    base = dict(n_rois=4, segment_len=12, d_model=8, d_a=8, d_ff=16,
                heads_encoder=2, heads_decoder=2, blocks_encoder=1,
                blocks_decoder=2, p_drop=0.1,
                window=WindowSpec(2, 2, (0,)), rank=RankSpec(2),
                cnn_channels=(4, 8, 8, 8), cnn_kernel=3,
                classifier_sizes=(8, 4, 1))
    base.update(overrides)
    return ModelConfig(**base)
