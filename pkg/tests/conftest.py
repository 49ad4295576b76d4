import json

import pytest

from avturn import datagen
from avturn.harness.config import RunConfig, desk_config


def tiny_config(seed: int = 0, **train) -> RunConfig:
    """A model small enough to train a few steps in well under a second each."""
    cfg = desk_config(seed)
    m = cfg.model
    m.d, m.hidden, m.decoder_hidden = 8, 8, 8
    m.K, m.frame_size, m.frame_pool, m.frame_stride = 2, 32, 2, 10
    m.visual_channels, m.audio_channels, m.n_proj = (2,), (2, 2), 8
    cfg.data = datagen.DataConfig(n_segments=2, height=32, width=32)
    cfg.train.batch_clips, cfg.train.steps, cfg.train.eval_every, cfg.train.eval_clips = 2, 4, 2, 2
    for k, v in train.items():
        setattr(cfg.train, k, v)
    return cfg.validate()


def write_config(cfg: RunConfig, path):
    path.write_text(json.dumps(cfg.to_dict()))
    return path


@pytest.fixture(scope="session")
def tiny_data(tmp_path_factory):
    out = tmp_path_factory.mktemp("tiny_data")
    datagen.make_dataset(6, "coop", 3, out, tiny_config().data)
    return out
