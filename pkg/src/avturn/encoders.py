"""Visual and audio embeddings and speaker-region-of-interest (SROI) pooling."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import tensor as T
from .nn import ConvBlock, Linear, Module
from .tensor import Tensor


@dataclass
class VisualSegment:
    frames: np.ndarray  # (T, H, W, C) in [0, 1]
    fps: float = 25.0

    def __post_init__(self):
        self.frames = np.asarray(self.frames)
        if self.frames.ndim != 4 or self.frames.shape[0] < 1:
            raise ValueError(f"frames must be (T>=1, H, W, C), got {self.frames.shape}")


@dataclass(frozen=True)
class SROIBox:
    x0: float
    y0: float
    x1: float
    y1: float
    speaker_index: int = -1

    def __post_init__(self):
        if not (self.x0 < self.x1 and self.y0 < self.y1):
            raise ValueError(f"degenerate box {self}")

    @property
    def center(self) -> tuple[float, float]:
        return (0.5 * (self.x0 + self.x1), 0.5 * (self.y0 + self.y1))

    def contains(self, x: float, y: float) -> bool:
        return self.x0 <= x <= self.x1 and self.y0 <= y <= self.y1

    def as_list(self) -> list:
        return [self.x0, self.y0, self.x1, self.y1]


@dataclass
class SROIFeature:
    segment: int
    roi: int
    feature: Tensor
    box: SROIBox


def grid_boxes(n: int) -> list[SROIBox]:
    """Normalized rectangles of an n x n grid, row-major."""
    return [SROIBox(c / n, r / n, (c + 1) / n, (r + 1) / n, r * n + c) for r in range(n) for c in range(n)]


class VisualEncoder(Module):
    """Stack of conv3d -> relu -> spatial 2x max-pool blocks, then a temporal mean."""

    def __init__(self, channels: Sequence[int], in_channels: int, frame_hw: tuple[int, int],
                 rng: np.random.Generator):
        factor = 2 ** len(channels)
        if frame_hw[0] % factor or frame_hw[1] % factor:
            raise ValueError(f"frame size {frame_hw} not divisible by pooling factor {factor}")
        chans = [in_channels, *channels]
        self.blocks = [ConvBlock(3, a, b, rng, pool=(1, 2, 2)) for a, b in zip(chans[:-1], chans[1:])]
        self.out_hw = (frame_hw[0] // factor, frame_hw[1] // factor)
        self.out_channels = chans[-1]
        self.in_channels = in_channels

    def __call__(self, frames) -> Tensor:
        """(K, T, H, W, C) frames -> (K, H', W', C') feature maps."""
        x = T.as_tensor(frames)
        if x.ndim == 4:
            x = x.reshape((1,) + x.shape)
        if x.shape[-1] != self.in_channels:
            raise T.ShapeError("embed_visual", x.shape, (self.in_channels,))
        for blk in self.blocks:
            x = blk(x)
        return x.mean(axis=1)


def embed_visual(v: VisualSegment, encoder: VisualEncoder) -> Tensor:
    return encoder(v.frames[None].astype(np.float64))[0]


class AudioEncoder(Module):
    """log1p magnitude -> conv2d blocks (2x pools) -> global mean -> linear to d."""

    def __init__(self, channels: Sequence[int], d: int, rng: np.random.Generator):
        chans = [1, *channels]
        self.blocks = [ConvBlock(2, a, b, rng, pool=(2, 2), crop=True) for a, b in zip(chans[:-1], chans[1:])]
        self.proj = Linear(chans[-1], d, rng, init="lecun")
        self.min_extent = 2 ** len(channels)

    def __call__(self, magnitude) -> Tensor:
        """(K, frames, bins) nonnegative magnitudes -> (K, d)."""
        m = T.as_tensor(magnitude)
        if m.ndim == 2:
            m = m.reshape((1,) + m.shape)
        if m.shape[1] < self.min_extent or m.shape[2] < self.min_extent:
            raise ValueError(f"spectrogram {m.shape[1:]} smaller than receptive field {self.min_extent}")
        x = T.log1p(m).reshape(m.shape + (1,))
        for blk in self.blocks:
            x = blk(x)
        return self.proj(x.mean(axis=(1, 2)))


def embed_audio(spec, encoder: AudioEncoder) -> Tensor:
    return encoder(spec.magnitude[None])[0]


# -- SROI extraction ------------------------------------------------------

def block_pool_matrix(h: int, w: int, n: int) -> np.ndarray:
    """(n*n, h*w) area-weighted averaging over an n x n partition of an h x w map.

    Cells need not align with pixels: each pixel contributes the fraction of its
    area inside the cell.
    """
    if h < n or w < n:
        raise ValueError(f"feature map {h}x{w} smaller than grid {n}")

    def overlap(size):
        edges = np.arange(n + 1) * size / n
        lo, hi = edges[:-1, None], edges[1:, None]
        px = np.arange(size)[None, :]
        return np.clip(np.minimum(hi, px + 1) - np.maximum(lo, px), 0, None)

    oy, ox = overlap(h), overlap(w)
    P = np.einsum("ai,bj->abij", oy, ox).reshape(n * n, h * w)
    return P / P.sum(axis=1, keepdims=True)


def _bilinear_weights(h: int, w: int, ys: np.ndarray, xs: np.ndarray) -> np.ndarray:
    """Average of bilinear interpolation weights over points given in pixel units.

    A point at continuous coordinate u sits between pixel centers floor(u-0.5)
    and floor(u-0.5)+1; coordinates are clamped to the border pixel centers.
    """
    acc = np.zeros((h, w))
    py = np.clip(ys - 0.5, 0, h - 1)
    px = np.clip(xs - 0.5, 0, w - 1)
    y0 = np.floor(py).astype(int)
    x0 = np.floor(px).astype(int)
    y1, x1 = np.minimum(y0 + 1, h - 1), np.minimum(x0 + 1, w - 1)
    fy, fx = py - y0, px - x0
    for yy, xx, wt in ((y0, x0, (1 - fy) * (1 - fx)), (y0, x1, (1 - fy) * fx),
                       (y1, x0, fy * (1 - fx)), (y1, x1, fy * fx)):
        np.add.at(acc, (yy, xx), wt)
    return acc.reshape(-1) / len(ys)


def roi_align_matrix(h: int, w: int, boxes: Sequence[SROIBox], bins: int) -> np.ndarray:
    """(len(boxes), h*w) ROI-Align averaging weights.

    Each box is split into bins x bins cells, each sampled on a regular grid of
    ceil(extent / bins) points per axis; all samples are averaged.
    """
    if bins < 1:
        raise ValueError("bins must be >= 1")
    rows = []
    for i, b in enumerate(boxes):
        x0, x1 = np.clip([b.x0, b.x1], 0.0, 1.0) * w
        y0, y1 = np.clip([b.y0, b.y1], 0.0, 1.0) * h
        if x1 - x0 <= 0 or y1 - y0 <= 0:
            raise ValueError(f"box {i} ({b}) has zero area after clamping")
        ny = max(1, int(np.ceil((y1 - y0) / bins)))
        nx = max(1, int(np.ceil((x1 - x0) / bins)))
        sy = y0 + (np.arange(bins * ny) + 0.5) * (y1 - y0) / (bins * ny)
        sx = x0 + (np.arange(bins * nx) + 0.5) * (x1 - x0) / (bins * nx)
        gy, gx = np.meshgrid(sy, sx, indexing="ij")
        rows.append(_bilinear_weights(h, w, gy.ravel(), gx.ravel()))
    return np.stack(rows)


def pool_regions(fmap, P: np.ndarray) -> Tensor:
    """Apply a (R, H*W) pooling matrix to (K, H, W, C) maps -> (K, R, C)."""
    fmap = T.as_tensor(fmap)
    K, H, W, C = fmap.shape
    flat = fmap.reshape(K, H * W, C).transpose(0, 2, 1)  # (K, C, HW)
    return (flat @ T.Tensor(P.T)).transpose(0, 2, 1)


class SROIProjector(Module):
    """Region pooling followed by a linear projection into the attention width d."""

    def __init__(self, c_in: int, d: int, rng: np.random.Generator):
        self.proj = Linear(c_in, d, rng, init="lecun")

    def block(self, fmap, n: int) -> tuple[Tensor, list]:
        fmap = T.as_tensor(fmap)
        P = block_pool_matrix(fmap.shape[1], fmap.shape[2], n)
        return self.proj(pool_regions(fmap, P)), grid_boxes(n)

    def roialign(self, fmap, boxes, bins: int = 2) -> Tensor:
        """``boxes`` is one list shared by all segments or one equal-length list per segment."""
        fmap = T.as_tensor(fmap)
        K, H, W, C = fmap.shape
        if boxes and isinstance(boxes[0], SROIBox):
            return self.proj(pool_regions(fmap, roi_align_matrix(H, W, boxes, bins)))
        if len(boxes) != K or len({len(b) for b in boxes}) != 1:
            raise ValueError("need one equal-length box list per segment")
        P = np.stack([roi_align_matrix(H, W, b, bins).T for b in boxes])  # (K, HW, R)
        flat = fmap.reshape(K, H * W, C).transpose(0, 2, 1)
        return self.proj((flat @ T.Tensor(P)).transpose(0, 2, 1))


def _as_features(feats: Tensor, boxes_per_segment) -> list[SROIFeature]:
    out = []
    for k in range(feats.shape[0]):
        for i, box in enumerate(boxes_per_segment[k]):
            out.append(SROIFeature(k, i, feats[k, i], box))
    return out


def sroi_block(fmap, n: int, projector: SROIProjector) -> list[SROIFeature]:
    """Uniform n x n block decomposition of (K, H', W', C) maps."""
    feats, boxes = projector.block(fmap, n)
    return _as_features(feats, [boxes] * feats.shape[0])


def sroi_roialign(fmap, boxes, bins: int, projector: SROIProjector) -> list[SROIFeature]:
    """ROI-Align pooling of externally supplied boxes."""
    feats = projector.roialign(fmap, boxes, bins)
    per_seg = [list(boxes)] * feats.shape[0] if isinstance(boxes[0], SROIBox) else boxes
    return _as_features(feats, per_seg)
