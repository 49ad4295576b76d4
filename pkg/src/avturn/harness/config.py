"""Run configuration: model geometry, loss weights, optimizer and data settings.

Configs are JSON files with a schema version and three sections
(``model``, ``train``, ``data``). Keys missing from a file keep the values of
a base config, the single-core desk preset unless another base is given.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .. import dsp
from ..datagen import DataConfig

CONFIG_SCHEMA = 1


class ConfigError(ValueError):
    pass


@dataclass
class ModelConfig:
    d: int = 512
    hidden: int = 1024  # residual MLP width in the attention blocks
    decoder_hidden: int = 1024
    mask_time_blocks: int = 0  # distinct mask rows per segment (0 = one per STFT frame)
    grid: int = 6
    K: int = 3
    visual_channels: tuple = (8, 16, 32)
    audio_channels: tuple = (8, 16, 32)
    audio_bins: int = 0  # feed only the lowest n frequency bins to the audio encoder (0 = all)
    frame_size: int = 64
    frame_channels: int = 3
    frame_stride: int = 1  # keep every n-th video frame
    frame_pool: int = 1  # average-pool frames by this factor before the visual encoder
    n_proj: int = 64
    alpha_align: float = 1.0
    alpha_visual: float = 1.0
    alpha_audio: float = 1.0
    alpha_supervised: float = 0.0
    alpha_phase: float = 0.0
    phase_mask: bool = False
    cyc_stop_gradient: bool = False
    segment_embedding: bool = False
    sroi_mode: str = "block"  # or "boxes" (ROI-Align over the dataset's boxes file)
    roi_bins: int = 2
    stft_win: int = 640
    stft_hop: int = 160
    segment_seconds: float = 2.0
    sample_rate: int = 16000
    lr: float = 1e-4
    rms_decay: float = 0.9
    rms_eps: float = 1e-8
    seed: int = 0

    def validate(self):
        for name in ("d", "hidden", "decoder_hidden", "grid", "K", "frame_size", "frame_channels",
                     "frame_stride", "frame_pool", "n_proj", "roi_bins", "stft_win", "stft_hop", "sample_rate"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"model.{name} must be positive, got {getattr(self, name)}")
        for name in ("alpha_align", "alpha_visual", "alpha_audio", "alpha_supervised", "alpha_phase"):
            if getattr(self, name) < 0:
                raise ConfigError(f"model.{name} must be nonnegative")
        if self.lr <= 0 or self.segment_seconds <= 0 or not 0 < self.rms_decay < 1 or self.rms_eps <= 0:
            raise ConfigError("model.lr, segment_seconds, rms_eps must be positive and rms_decay in (0, 1)")
        if any(c <= 0 for c in (*self.visual_channels, *self.audio_channels)):
            raise ConfigError("encoder channels must be positive")
        if self.frame_size % self.frame_pool or self.encoder_frame_size % (2 ** len(self.visual_channels)):
            raise ConfigError(f"frame_size {self.frame_size} / frame_pool {self.frame_pool} not divisible "
                              f"by 2^{len(self.visual_channels)}")
        if self.encoder_frame_size // 2 ** len(self.visual_channels) < self.grid and self.sroi_mode == "block":
            raise ConfigError("visual feature map smaller than the SROI grid")
        if self.sroi_mode not in ("block", "boxes"):
            raise ConfigError(f"unknown sroi_mode {self.sroi_mode!r}")
        frames = dsp.n_frames(self.segment_samples, self.stft_win, self.stft_hop)
        if not 0 <= self.mask_time_blocks <= frames:
            raise ConfigError(f"model.mask_time_blocks must be in [0, {frames}]")
        if self.audio_bins < 0:
            raise ConfigError("model.audio_bins must be >= 0")
        if self.stft_win % self.stft_hop:
            raise ConfigError("stft_win must be a multiple of stft_hop")
        if self.alpha_phase > 0 and not self.phase_mask:
            raise ConfigError("alpha_phase > 0 requires phase_mask")

    @property
    def encoder_frame_size(self) -> int:
        return self.frame_size // self.frame_pool

    @property
    def segment_samples(self) -> int:
        return int(round(self.segment_seconds * self.sample_rate))


@dataclass
class TrainConfig:
    steps: int = 200
    batch_clips: int = 8
    eval_every: int = 50
    eval_clips: int = 16  # held-out clips scored at each eval step
    n_clips: int = 500  # clips generated by gen-data
    holdout_fraction: float = 0.1
    data_seed: int = 1

    def validate(self):
        if self.steps < 0 or self.batch_clips <= 0 or self.eval_every <= 0 or self.eval_clips < 0:
            raise ConfigError("train.steps/batch_clips/eval_every/eval_clips out of range")
        if not 0 < self.holdout_fraction < 1:
            raise ConfigError("train.holdout_fraction must be in (0, 1)")


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    data: DataConfig = field(default_factory=DataConfig)

    def validate(self) -> "RunConfig":
        self.model.validate()
        self.train.validate()
        if self.data.n_segments != self.model.K:
            raise ConfigError(f"data.n_segments ({self.data.n_segments}) != model.K ({self.model.K})")
        if self.data.grid != self.model.grid and self.model.sroi_mode == "block":
            # block SROIs only coincide with speaker cells when the grids agree
            raise ConfigError(f"data.grid ({self.data.grid}) != model.grid ({self.model.grid})")
        if self.data.height != self.model.frame_size or self.data.width != self.model.frame_size:
            raise ConfigError("data frame size must equal model.frame_size")
        if self.data.channels != self.model.frame_channels:
            raise ConfigError(f"data.channels ({self.data.channels}) != model.frame_channels "
                              f"({self.model.frame_channels})")
        if self.data.sample_rate != self.model.sample_rate:
            raise ConfigError("data and model sample rates differ")
        if self.data.segment_seconds != self.model.segment_seconds:
            raise ConfigError("data and model segment lengths differ")
        return self

    def to_dict(self) -> dict:
        data = asdict(self.data)
        data["conditions"] = list(self.data.conditions)
        model = asdict(self.model)
        model["visual_channels"] = list(self.model.visual_channels)
        model["audio_channels"] = list(self.model.audio_channels)
        return {"schema_version": CONFIG_SCHEMA, "model": model, "train": asdict(self.train), "data": data}

    @classmethod
    def from_dict(cls, raw: dict, base: "RunConfig | None" = None) -> "RunConfig":
        if raw.get("schema_version") != CONFIG_SCHEMA:
            raise ConfigError(f"config schema version {raw.get('schema_version')!r} != {CONFIG_SCHEMA}")
        base_dict = (base or desk_config()).to_dict()
        parts = {}
        for key, typ in (("model", ModelConfig), ("train", TrainConfig), ("data", DataConfig)):
            if not isinstance(raw.get(key, {}), dict):
                raise ConfigError(f"config section {key!r} must be an object")
            section = {**base_dict[key], **raw.get(key, {})}
            known = {f.name for f in fields(typ)}
            unknown = set(section) - known
            if unknown:
                raise ConfigError(f"unknown {key} keys: {sorted(unknown)}")
            for k in ("visual_channels", "audio_channels", "conditions"):
                if k in section:
                    section[k] = tuple(section[k])
            try:
                parts[key] = typ(**section)
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"invalid {key} section: {exc}") from exc
        return cls(**parts).validate()


def desk_config(seed: int = 0) -> RunConfig:
    """Small single-core preset used by the CLI and the toy acceptance runs."""
    model = ModelConfig(d=64, hidden=128, decoder_hidden=128, grid=3, K=3, visual_channels=(8, 16),
                        frame_stride=5, frame_pool=2, audio_bins=48, stft_hop=320, lr=1e-3,
                        mask_time_blocks=4, seed=seed)
    return RunConfig(model=model, train=TrainConfig(), data=DataConfig()).validate()


def load_config(path, base: RunConfig | None = None) -> RunConfig:
    try:
        raw = json.loads(Path(path).read_text())
    except FileNotFoundError as exc:
        raise ConfigError(f"config file {path} not found") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"config file {path} must hold a JSON object")
    return RunConfig.from_dict(raw, base)


def save_config(cfg: RunConfig, path):
    Path(path).write_text(json.dumps(cfg.to_dict(), indent=1, sort_keys=True))
