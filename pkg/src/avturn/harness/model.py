"""Full audio-visual model and the per-clip forward pass."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .. import dsp
from .. import tensor as T
from ..alignment import sliced_gw
from ..attention import CrossAttention, SelfAttention, audio_self_attention, av_cross_attention, \
    visual_self_attention, within_segment
from ..datagen import LabeledClip
from ..encoders import AudioEncoder, SROIBox, SROIProjector, VisualEncoder, grid_boxes
from ..head import AudioMask, MaskDecoder, loss_audio, loss_cyc_sync, loss_phase, loss_visual_supervised
from ..nn import Module, param
from ..tensor import Tensor
from .config import ModelConfig


class AVModel(Module):
    def __init__(self, cfg: ModelConfig):
        rng = np.random.default_rng(cfg.seed)
        self.cfg = cfg
        size = cfg.encoder_frame_size
        self.visual = VisualEncoder(cfg.visual_channels, cfg.frame_channels, (size, size), rng)
        self.sroi = SROIProjector(self.visual.out_channels, cfg.d, rng)
        self.audio = AudioEncoder(cfg.audio_channels, cfg.d, rng)
        self.visual_attn = SelfAttention(cfg.d, cfg.hidden, rng)
        self.audio_attn = SelfAttention(cfg.d, cfg.hidden, rng)
        self.cross = CrossAttention(cfg.d, cfg.hidden, rng)
        frames = dsp.n_frames(cfg.segment_samples, cfg.stft_win, cfg.stft_hop)
        self.decoder = MaskDecoder(cfg.d, cfg.decoder_hidden, frames, dsp.n_bins(cfg.stft_win), rng,
                                   phase=cfg.phase_mask, time_blocks=cfg.mask_time_blocks or None)
        # optional learned segment-index embedding (off by default)
        self.segment_emb = param(np.zeros((cfg.K, cfg.d))) if cfg.segment_embedding else None

    @property
    def spec_shape(self) -> tuple:
        return self.decoder.frames, self.decoder.bins


@dataclass
class ClipInputs:
    frames: np.ndarray  # (K, T', H, W, C) float64
    mix: list  # Spectrogram per segment
    target: list  # Spectrogram of the clean main voice per segment
    mix_wave: list  # Waveform per segment
    clean_wave: list  # Waveform per segment
    boxes: list  # per segment, the candidate SROI boxes
    gt_box: list  # SROIBox per segment
    gt_index: np.ndarray  # (K,) index into boxes[k] of the main speaker, -1 if none
    main_id: list
    condition: str

    @property
    def mix_mag(self) -> np.ndarray:
        return np.stack([s.magnitude for s in self.mix])

    @property
    def target_mag(self) -> np.ndarray:
        return np.stack([s.magnitude for s in self.target])


def _box_index(boxes, gt: SROIBox) -> int:
    cx, cy = gt.center
    for i, b in enumerate(boxes):
        if b.contains(cx, cy):
            return i
    return -1


def prepare_inputs(clip: LabeledClip, cfg: ModelConfig, supplied_boxes: Optional[list] = None) -> ClipInputs:
    """Slice a clip into K segments and compute the spectrograms the model consumes."""
    K = clip.n_segments
    if K != cfg.K:
        raise ValueError(f"clip has {K} segments, model expects K={cfg.K}")
    if clip.audio_mix.sample_rate != cfg.sample_rate:
        raise ValueError(f"clip sample rate {clip.audio_mix.sample_rate} != {cfg.sample_rate}")
    H, W, C = clip.frames.shape[1:]
    if (H, W, C) != (cfg.frame_size, cfg.frame_size, cfg.frame_channels):
        raise ValueError(f"clip frames {H}x{W}x{C} do not match model geometry")
    frames = np.stack([clip.segment_frames(k)[::cfg.frame_stride] for k in range(K)]).astype(np.float64)
    if cfg.frame_pool > 1:
        p, s = cfg.frame_pool, cfg.encoder_frame_size
        frames = frames.reshape(K, -1, s, p, s, p, C).mean(axis=(3, 5))
    mix_w = [clip.segment_audio(k) for k in range(K)]
    mix = [dsp.stft(w, cfg.stft_win, cfg.stft_hop) for w in mix_w]
    target = [dsp.stft(w, cfg.stft_win, cfg.stft_hop) for w in clip.clean_main]
    if cfg.sroi_mode == "block":
        boxes = [grid_boxes(cfg.grid)] * K
    else:
        boxes = supplied_boxes if supplied_boxes is not None else [clip.speaker_boxes()] * K
    gt_index = np.array([_box_index(boxes[k], clip.main_box[k]) for k in range(K)])
    return ClipInputs(frames, mix, target, mix_w, list(clip.clean_main), boxes, list(clip.main_box), gt_index,
                      list(clip.main_id), clip.condition)


@dataclass
class ForwardOutput:
    alpha: Tensor  # (K, K, N)
    alpha_within: Tensor  # (K, N)
    mask: AudioMask
    z_v: Tensor  # (K, N, d)
    z_a: Tensor  # (K, d)
    z: Tensor  # (K, d)
    align: Tensor
    alpha_hat_within: Optional[Tensor] = None


def _add_segment_embedding(x: Tensor, emb: Tensor) -> Tensor:
    if x.ndim == 2:
        return x + emb
    K, N, d = x.shape
    return x + Tensor(np.ones((K, N, 1))) @ emb.reshape(K, 1, d)


def _audio_branch(model: AVModel, magnitude) -> Tensor:
    magnitude = T.as_tensor(magnitude)
    if model.cfg.audio_bins:
        magnitude = magnitude[..., :model.cfg.audio_bins]
    f_a = model.audio(magnitude)
    if model.segment_emb is not None:
        f_a = _add_segment_embedding(f_a, model.segment_emb)
    z_a, _ = audio_self_attention(f_a, model.audio_attn)
    return z_a


def forward_clip(model: AVModel, inputs: ClipInputs, cycle: bool = True, align_seed: int = 0) -> ForwardOutput:
    """Visual and audio branches, alignment features, cross attention and masks.

    With ``cycle`` the predicted magnitude is re-encoded and attended against the
    same visual features, giving the weights used by the cycle-sync loss.
    """
    cfg = model.cfg
    fmap = model.visual(inputs.frames)
    if cfg.sroi_mode == "block":
        sroi, _ = model.sroi.block(fmap, cfg.grid)
    else:
        sroi = model.sroi.roialign(fmap, inputs.boxes, cfg.roi_bins)
    if model.segment_emb is not None:
        sroi = _add_segment_embedding(sroi, model.segment_emb)
    z_v, _ = visual_self_attention(sroi, model.visual_attn)
    z_a = _audio_branch(model, inputs.mix_mag)
    align = sliced_gw(z_v.mean(axis=1), z_a, cfg.n_proj, seed=align_seed)
    z, alpha = av_cross_attention(z_a, z_v, model.cross)
    mask = model.decoder(z)
    out = ForwardOutput(alpha, within_segment(alpha), mask, z_v, z_a, z, align)
    if cycle:
        separated = mask.mag_mask * inputs.mix_mag
        z_a_hat = _audio_branch(model, separated)
        _, alpha_hat = av_cross_attention(z_a_hat, z_v, model.cross)
        out.alpha_hat_within = within_segment(alpha_hat)
    return out


def loss_parts(model: AVModel, out: ForwardOutput, inputs: ClipInputs) -> dict:
    cfg = model.cfg
    parts = {"align": out.align, "audio": loss_audio(out.mask, inputs.mix_mag, inputs.target_mag)}
    if out.alpha_hat_within is not None:
        parts["cyc_sync"] = loss_cyc_sync(out.alpha_within, out.alpha_hat_within, cfg.cyc_stop_gradient)
    if cfg.alpha_supervised > 0:
        idx = inputs.gt_index
        if (idx < 0).any():
            raise ValueError("supervised mode needs the main speaker inside a candidate box in every segment")
        parts["visual"] = loss_visual_supervised(out.alpha_within, idx)
    if cfg.phase_mask and cfg.alpha_phase > 0:
        mix_p = np.stack([s.phase for s in inputs.mix])
        tgt_p = np.stack([s.phase for s in inputs.target])
        parts["phase"] = loss_phase(out.mask.phase_delta, mix_p, tgt_p)
    return parts


def separate(model: AVModel, inputs: ClipInputs, mask: Optional[AudioMask] = None) -> list:
    """Masked mixture resynthesized per segment (mixture phase unless a phase head exists)."""
    if mask is None:
        with T.no_grad():
            mask = forward_clip(model, inputs, cycle=False).mask
    out = []
    for k, spec in enumerate(inputs.mix):
        pd = mask.phase_delta.data[k] if mask.phase_delta is not None else None
        out.append(dsp.istft(dsp.apply_mask(spec, mask.mag_mask.data[k], pd)))
    return out
