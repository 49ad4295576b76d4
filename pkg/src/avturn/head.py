"""Visual/audio mask construction and the training losses."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import tensor as T
from .encoders import SROIBox
from .nn import Linear, Module
from .tensor import Tensor


@dataclass
class VisualMask:
    values: np.ndarray  # (H, W)
    argmax: int


@dataclass
class AudioMask:
    mag_mask: Tensor  # (..., frames, bins) in (0, 1)
    phase_delta: Optional[Tensor] = None


def build_visual_mask(alpha_within, boxes: Sequence[SROIBox], height: int, width: int) -> VisualMask:
    """Paint each region's weight into its box (max where boxes overlap)."""
    a = np.asarray(getattr(alpha_within, "data", alpha_within), dtype=np.float64).reshape(-1)
    if not boxes:
        raise ValueError("build_visual_mask needs at least one box")
    if len(boxes) != len(a):
        raise ValueError(f"{len(a)} weights for {len(boxes)} boxes")
    ys = (np.arange(height) + 0.5) / height
    xs = (np.arange(width) + 0.5) / width
    out = np.zeros((height, width))
    for val, b in zip(a, boxes):
        inside = ((ys >= b.y0) & (ys < b.y1))[:, None] & ((xs >= b.x0) & (xs < b.x1))[None, :]
        out = np.where(inside, np.maximum(out, val), out)
    return VisualMask(out, int(np.argmax(a)))


class MaskDecoder(Module):
    """Two fully connected layers mapping a fused feature to a (frames, bins) sigmoid mask.

    ``time_blocks`` (default: one per frame) sets how many distinct mask rows are predicted;
    each row is held over an equal run of consecutive frames.
    """

    def __init__(self, d: int, hidden: int, frames: int, bins: int, rng: np.random.Generator,
                 phase: bool = False, time_blocks: int | None = None):
        time_blocks = frames if time_blocks is None else time_blocks
        if frames <= 0 or bins <= 0 or not 0 < time_blocks <= frames:
            raise ValueError(f"invalid spectrogram geometry {frames}x{bins} with {time_blocks} time blocks")
        self.fc1 = Linear(d, hidden, rng)
        self.fc2 = Linear(hidden, time_blocks * bins, rng, init="lecun")
        self.phase = Linear(hidden, time_blocks * bins, rng, init="lecun") if phase else None
        self.frames, self.bins, self.time_blocks = frames, bins, time_blocks
        # frame t reads block floor(t * blocks / frames)
        self.block_of_frame = np.arange(frames) * time_blocks // frames

    def __call__(self, z) -> AudioMask:
        return decode_audio_mask(z, self)


def decode_audio_mask(z, decoder: MaskDecoder) -> AudioMask:
    z = T.as_tensor(z)
    h = T.relu(decoder.fc1(z))
    shape = z.shape[:-1] + (decoder.time_blocks, decoder.bins)

    def expand(t):
        t = t.reshape(shape)
        if decoder.time_blocks == decoder.frames:
            return t
        return t[(Ellipsis, decoder.block_of_frame, slice(None))]
    mag = expand(T.sigmoid(decoder.fc2(h)))
    phase = None
    if decoder.phase is not None:
        phase = expand(T.tanh(decoder.phase(h)) * np.pi)
    return AudioMask(mag, phase)


def loss_audio(mask, mix_magnitude, target_magnitude) -> Tensor:
    """Mean absolute error between the masked mixture and the clean target magnitudes."""
    m = mask.mag_mask if isinstance(mask, AudioMask) else T.as_tensor(mask)
    mix_magnitude = np.asarray(getattr(mix_magnitude, "magnitude", mix_magnitude))
    target_magnitude = np.asarray(getattr(target_magnitude, "magnitude", target_magnitude))
    if m.shape != mix_magnitude.shape or m.shape != target_magnitude.shape:
        raise T.ShapeError("loss_audio", m.shape, mix_magnitude.shape, target_magnitude.shape)
    return T.abs(m * mix_magnitude - target_magnitude).mean()


def loss_phase(phase_delta, mix_phase, target_phase) -> Tensor:
    """Mean (1 - cos) between predicted corrected phase and the target phase."""
    resid = np.asarray(target_phase) - np.asarray(mix_phase)
    cos_r, sin_r = np.cos(resid), np.sin(resid)
    # cos(delta - resid) expanded so only the prediction carries gradients
    p = T.as_tensor(phase_delta)
    c = T.cos(p) * cos_r + T.sin(p) * sin_r
    return (1.0 - c).mean()


def loss_visual_supervised(alpha_within, true_index) -> Tensor:
    """Cross-entropy that treats within-segment weights as logits, averaged over segments."""
    a = T.as_tensor(alpha_within)
    if a.ndim == 1:
        a = a.reshape(1, -1)
    idx = np.atleast_1d(np.asarray(true_index, dtype=int))
    K, N = a.shape
    if idx.shape != (K,) or (idx < 0).any() or (idx >= N).any():
        raise IndexError(f"true index {idx.tolist()} out of range for {N} regions")
    return -T.log_softmax(a, axis=-1)[np.arange(K), idx].mean()


def loss_cyc_sync(alpha, alpha_hat, stop_gradient: bool = False) -> Tensor:
    """Mean L1 between mixture weights and the argmax-sparsified weights of the separated audio.

    Both inputs are (K, N) within-segment weights.
    """
    a, ah = T.as_tensor(alpha), T.as_tensor(alpha_hat)
    if a.shape != ah.shape:
        raise T.ShapeError("loss_cyc_sync", a.shape, ah.shape)
    if stop_gradient:
        ah = ah.detach()
    onehot = np.zeros(ah.shape)
    np.put_along_axis(onehot, ah.data.argmax(axis=-1)[..., None], 1.0, axis=-1)
    return T.abs(a - ah * onehot).mean()


def total_loss(parts: dict, alpha_align: float = 1.0, alpha_visual: float = 1.0,
               alpha_audio: float = 1.0, alpha_supervised: float = 0.0,
               alpha_phase: float = 0.0) -> Tensor:
    """Weighted sum of ``align``, ``cyc_sync`` and ``audio`` losses.

    ``visual`` (supervised localization) and ``phase`` parts are included only
    when given a positive weight.
    """
    weights = {"align": alpha_align, "cyc_sync": alpha_visual, "audio": alpha_audio,
               "visual": alpha_supervised, "phase": alpha_phase}
    for name, w in weights.items():
        if w < 0:
            raise ValueError(f"loss weight for {name} must be nonnegative, got {w}")
    total = T.Tensor(0.0)
    for name, part in parts.items():
        if name not in weights:
            continue
        part = T.as_tensor(part)
        if part.size != 1:
            raise T.ShapeError(f"total_loss ({name})", part.shape, ())
        if weights[name] != 0:
            total = total + part.reshape(()) * weights[name]
    return total
