"""Synthetic turn-taking conversations with exact labels.

Voices are gated harmonic tones; each on-screen speaker is a tinted rectangle
in one grid cell whose "mouth" bar opens with the voice envelope.
Cooperative clips hand the turn from speaker to speaker; competitive clips add
a short interruption by another visible speaker inside every segment.
"""
from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy.signal import butter, sosfiltfilt

from . import dsp
from .dsp import Waveform
from .encoders import SROIBox

SCHEMA_VERSION = 1
FRAME_MAGIC = b"AVTF"
FRAME_VERSION = 1
CONDITIONS = ("clean", "1S+N", "2S", "2S+N")

# Pool of voice identities. The f0 values avoid near-coincident partials among
# the first four harmonics, which keeps every pair separable by a ratio mask.
POOL_F0 = (155.0, 186.0, 217.0, 264.0)
# Face tint per voice. Distinct hues give each identity its own direction in
# color space instead of a point on a single brightness axis.
POOL_COLORS = ((1.0, 0.3, 0.3), (0.3, 1.0, 0.3), (0.3, 0.3, 1.0), (0.9, 0.9, 0.9))


@dataclass(frozen=True)
class SyntheticSpeaker:
    id: int
    f0: float
    grid_cell: tuple = (0, 0)
    timbre: tuple = (1.0, 0.5, 0.35, 0.25)
    shade: float = 0.6
    color: tuple = (1.0, 1.0, 1.0)

    def __post_init__(self):
        if not 120.0 <= self.f0 <= 300.0:
            raise ValueError(f"f0 {self.f0} outside [120, 300] Hz")
        if len(self.timbre) != 4:
            raise ValueError("timbre needs 4 partial amplitudes")
        if len(self.color) != 3 or min(self.color) <= 0:
            raise ValueError("color needs 3 positive channel gains")


def pool_speaker(voice: int, cell=(0, 0)) -> SyntheticSpeaker:
    """Speaker identity ``voice`` from the fixed pool, placed at ``cell``."""
    r = np.random.default_rng(1000 + voice)
    timbre = (1.0, *np.round(r.uniform(0.2, 0.7, 3), 3))
    shade = 0.35 + 0.12 * voice
    return SyntheticSpeaker(voice, POOL_F0[voice], tuple(cell), tuple(float(t) for t in timbre), shade,
                            POOL_COLORS[voice])


def check_distinct(speakers: Sequence[SyntheticSpeaker]):
    for i, a in enumerate(speakers):
        for b in speakers[i + 1:]:
            if abs(a.f0 - b.f0) < 20.0:
                raise ValueError(f"speakers {a.id} and {b.id} have f0 closer than 20 Hz")
            if a.grid_cell == b.grid_cell:
                raise ValueError(f"speakers {a.id} and {b.id} share grid cell {a.grid_cell}")


# -- audio ----------------------------------------------------------------

def gate_envelope(n_samples: int, sample_rate: int, rng: np.random.Generator,
                  cutoff_hz: float = 4.0, control_rate: int = 100) -> np.ndarray:
    """Smooth random gate in [0, 1]: low-passed uniform noise, min-max renormalized."""
    n_ctrl = max(int(np.ceil(n_samples / sample_rate * control_rate)) + 1, 2)
    pad = 3 * control_rate // 4
    noise = rng.uniform(size=n_ctrl + 2 * pad)
    sos = butter(4, cutoff_hz, fs=control_rate, output="sos")
    smooth = sosfiltfilt(sos, noise)[pad:pad + n_ctrl]
    lo, hi = smooth.min(), smooth.max()
    smooth = (smooth - lo) / (hi - lo) if hi > lo else np.ones_like(smooth)
    t_ctrl = np.arange(n_ctrl) / control_rate
    return np.interp(np.arange(n_samples) / sample_rate, t_ctrl, smooth)


def synth_voice(sp: SyntheticSpeaker, duration: float, seed: int, sample_rate: int = dsp.SAMPLE_RATE,
                envelope: Optional[np.ndarray] = None, rms: float = 0.1) -> tuple[Waveform, np.ndarray]:
    """Gated harmonic voice normalized to ``rms``; returns (waveform, per-sample envelope)."""
    if duration <= 0:
        raise ValueError("duration must be positive")
    n = int(round(duration * sample_rate))
    rng = np.random.default_rng(seed)
    phases = rng.uniform(0, 2 * np.pi, 4)
    env = gate_envelope(n, sample_rate, rng) if envelope is None else np.asarray(envelope, dtype=np.float64)
    t = np.arange(n) / sample_rate
    tone = sum(a * np.sin(2 * np.pi * h * sp.f0 * t + p) for h, a, p in zip(range(1, 5), sp.timbre, phases))
    x = tone * env
    power = np.sqrt(np.mean(x ** 2))
    if power > 0:
        x *= rms / power
    return Waveform(x, sample_rate), env


def white_noise(n: int, rms: float, rng: np.random.Generator, sample_rate: int = dsp.SAMPLE_RATE) -> Waveform:
    return Waveform(rng.normal(0.0, rms, n), sample_rate)


# -- video ----------------------------------------------------------------

def cell_box(cell, grid: int, speaker_index: int = -1) -> SROIBox:
    r, c = cell
    return SROIBox(c / grid, r / grid, (c + 1) / grid, (r + 1) / grid, speaker_index)


def _face_geometry(cell, grid, height, width):
    r, c = cell
    ch, cw = height / grid, width / grid
    fy0, fy1 = r * ch + 0.15 * ch, (r + 1) * ch - 0.1 * ch
    fx0, fx1 = c * cw + 0.15 * cw, (c + 1) * cw - 0.15 * cw
    mouth_top = fy0 + 0.3 * (fy1 - fy0)
    mx0, mx1 = fx0 + 0.25 * (fx1 - fx0), fx1 - 0.25 * (fx1 - fx0)
    return (fy0, fy1, fx0, fx1), mouth_top, (mx0, mx1), ch


def _coverage(lo: float, hi: float, size: int) -> np.ndarray:
    px = np.arange(size)
    return np.clip(np.minimum(hi, px + 1) - np.maximum(lo, px), 0.0, 1.0)


def mouth_pixel_range(cell, grid, height, width):
    """Integer (column slice, mouth top row) of a speaker's mouth bar."""
    _, top, (mx0, mx1), _ = _face_geometry(cell, grid, height, width)
    return slice(int(np.ceil(mx0)), int(np.floor(mx1))), top


def render_video(speakers: Sequence[SyntheticSpeaker], envelopes: Sequence[np.ndarray], duration: float,
                 fps: float = 25.0, height: int = 64, width: int = 64, grid: int = 3,
                 sample_rate: int = dsp.SAMPLE_RATE, background: float = 0.1, channels: int = 1) -> np.ndarray:
    """Render (T, H, W, channels) float32 frames; mouth height = envelope(t) * cell_height / 3.

    With one channel a face has intensity ``shade``; with three it is ``shade``
    times the speaker's color.
    """
    if channels not in (1, 3):
        raise ValueError(f"channels must be 1 or 3, got {channels}")
    for sp in speakers:
        r, c = sp.grid_cell
        if not (0 <= r < grid and 0 <= c < grid):
            raise ValueError(f"speaker {sp.id} cell {sp.grid_cell} outside a {grid}x{grid} grid")
    if len({sp.grid_cell for sp in speakers}) != len(speakers):
        raise ValueError("too many speakers for the grid: cells must be distinct")
    n_frames = int(round(duration * fps))
    frames = np.full((n_frames, height, width, channels), background, dtype=np.float64)
    for sp, env in zip(speakers, envelopes):
        tint = [sp.shade] if channels == 1 else [sp.shade * g for g in sp.color]
        (fy0, fy1, fx0, fx1), top, (mx0, mx1), ch = _face_geometry(sp.grid_cell, grid, height, width)
        face = _coverage(fy0, fy1, height)[:, None] * _coverage(fx0, fx1, width)[None, :]
        mcols = _coverage(mx0, mx1, width) == 1.0
        idx = np.minimum((np.arange(n_frames) / fps * sample_rate).astype(int), len(env) - 1)
        heights = np.asarray(env)[idx] * ch / 3.0
        for f in range(n_frames):
            open_ = np.ones((height, width))
            if heights[f] > 0:
                rows = _coverage(top, top + heights[f], height)
                open_[:, mcols] = (1.0 - rows)[:, None]
            for c, level in enumerate(tint):
                img = (background * (1 - face) + level * face) * open_
                frames[f, :, :, c] = np.where(face > 0, img, frames[f, :, :, c])
    return frames.astype(np.float32)


def measure_mouth_heights(frames: np.ndarray, sp: SyntheticSpeaker, grid: int) -> np.ndarray:
    """Recover per-frame mouth heights (pixels) from rendered frames."""
    T_, H, W, _ = frames.shape
    cols, top = mouth_pixel_range(sp.grid_cell, grid, H, W)
    c = int(np.argmax(sp.color)) if frames.shape[-1] == 3 else 0
    level = sp.shade * (sp.color[c] if frames.shape[-1] == 3 else 1.0)
    col = frames[:, :, cols.start, c].astype(np.float64)
    rows = slice(int(np.floor(top)), int(np.ceil(top + H / grid / 3.0)) + 1)
    return (1.0 - col[:, rows] / level).clip(0, 1).sum(axis=1)


# -- scripts and clips ----------------------------------------------------

@dataclass
class ConversationScript:
    turns: list  # (speaker_id, start_s, end_s)
    overlaps: list = field(default_factory=list)  # (interrupter_id, start_s, end_s)
    mode: str = "cooperative"

    def validate(self, duration: float, segment_seconds: float, ratio: Optional[float] = None):
        t = 0.0
        for sid, s, e in self.turns:
            if abs(s - t) > 1e-9 or e <= s:
                raise ValueError(f"turns must tile the clip without gaps (turn of {sid} at {s}-{e})")
            t = e
        if abs(t - duration) > 1e-9:
            raise ValueError(f"turns end at {t}, clip lasts {duration}")
        for iid, s, e in self.overlaps:
            owners = [tr for tr in self.turns if tr[1] - 1e-9 <= s and e <= tr[2] + 1e-9]
            if len(owners) != 1:
                raise ValueError(f"overlap {iid}@{s:.3f}-{e:.3f} must lie inside exactly one turn")
            # windows are whole samples, so allow sub-millisecond rounding
            if ratio is not None and abs((e - s) - ratio * segment_seconds) > 1e-4:
                raise ValueError(f"overlap length {e - s:.4f}s != {ratio} of a segment")

    def owner_at(self, time_s: float) -> int:
        for sid, s, e in self.turns:
            if s <= time_s < e:
                return sid
        return self.turns[-1][0]


@dataclass
class LabeledClip:
    frames: np.ndarray  # (T, H, W, C) for the whole clip
    audio_mix: Waveform
    clean_main: list  # Waveform per segment
    main_box: list  # SROIBox per segment
    main_id: list  # int per segment
    script: ConversationScript
    speakers: list  # visible SyntheticSpeakers
    condition: str = "clean"
    fps: float = 25.0
    segment_seconds: float = 2.0
    grid: int = 3

    @property
    def n_segments(self) -> int:
        return len(self.main_id)

    def segment_frames(self, k: int) -> np.ndarray:
        per = int(round(self.segment_seconds * self.fps))
        return self.frames[k * per:(k + 1) * per]

    def segment_audio(self, k: int) -> Waveform:
        per = int(round(self.segment_seconds * self.audio_mix.sample_rate))
        return Waveform(self.audio_mix.samples[k * per:(k + 1) * per], self.audio_mix.sample_rate)

    def speaker_boxes(self) -> list:
        return [cell_box(sp.grid_cell, self.grid, sp.id) for sp in self.speakers]


@dataclass
class DataConfig:
    n_speakers: int = 2
    n_segments: int = 3
    segment_seconds: float = 2.0
    fps: float = 25.0
    height: int = 64
    width: int = 64
    grid: int = 3
    sample_rate: int = dsp.SAMPLE_RATE
    overlap_ratio: float = 1.0 / 3.0
    noise_snr_db: float = 5.0
    interferer_gain: float = 0.7
    conditions: tuple = ("1S+N", "2S", "2S+N")
    channels: int = 3

    def __post_init__(self):
        self.conditions = tuple(self.conditions)
        for c in self.conditions:
            if c not in CONDITIONS:
                raise ValueError(f"unknown condition {c!r}; expected one of {CONDITIONS}")
        if self.channels not in (1, 3):
            raise ValueError(f"channels must be 1 or 3, got {self.channels}")
        dur = self.n_segments * self.segment_seconds
        if not 4.0 <= dur <= 8.0:
            raise ValueError(f"clip length {dur}s outside the 4-8 s range")


def _choose_cast(rng, n_speakers: int, grid: int, rows_distinct: bool) -> list:
    voices = rng.choice(len(POOL_F0), size=n_speakers, replace=False)
    if rows_distinct:
        if n_speakers > grid:
            raise ValueError(f"{n_speakers} speakers do not fit in {grid} rows")
        rows = rng.choice(grid, size=n_speakers, replace=False)
        cells = [(int(r), int(rng.integers(grid))) for r in rows]
    else:
        if n_speakers > grid * grid:
            raise ValueError(f"{n_speakers} speakers do not fit in a {grid}x{grid} grid")
        flat = rng.choice(grid * grid, size=n_speakers, replace=False)
        cells = [(int(f // grid), int(f % grid)) for f in flat]
    return [pool_speaker(int(v), c) for v, c in zip(voices, cells)]


def _random_turns(rng, n_segments: int, n_speakers: int) -> list:
    """Split segments into consecutive turns (>= 1 segment each), alternating owners."""
    n_turns = int(rng.integers(min(2, n_segments), min(n_segments, 3) + 1)) if n_speakers > 1 else 1
    cuts = np.sort(rng.choice(np.arange(1, n_segments), size=n_turns - 1, replace=False)) if n_turns > 1 else []
    lengths = np.diff([0, *cuts, n_segments]).tolist()
    first = int(rng.integers(n_speakers))
    return [(first + i) % n_speakers for i in range(n_turns)], lengths


def _interference(rng, cfg: DataConfig, condition: str, cast_ids: set, n: int, seed: int):
    """Off-screen voice and/or white noise for a condition; returns a list of (Waveform, gain)."""
    parts = []
    if condition in ("2S", "2S+N"):
        free = [v for v in range(len(POOL_F0)) if v not in cast_ids]
        other = pool_speaker(int(rng.choice(free)))
        voice, _ = synth_voice(other, n / cfg.sample_rate, seed + 7919, cfg.sample_rate)
        parts.append((voice, cfg.interferer_gain))
    if condition in ("1S+N", "2S+N"):
        rms = 0.1 * 10 ** (-cfg.noise_snr_db / 20)
        parts.append((white_noise(n, rms, rng, cfg.sample_rate), 1.0))
    return parts


def turn_seed(seed: int, turn: int) -> int:
    """Seed of the voice rendered for turn ``turn`` of a clip seeded with ``seed``."""
    return seed + 101 * (turn + 1)


def _assemble(cfg: DataConfig, cast, turn_owners, turn_lengths, seed, rng, condition,
              overlaps_spec, mode) -> LabeledClip:
    sr, seg_s = cfg.sample_rate, cfg.segment_seconds
    per = int(round(seg_s * sr))
    n = per * cfg.n_segments
    duration = cfg.n_segments * seg_s
    sources = {sp.id: np.zeros(n) for sp in cast}
    envs = {sp.id: np.zeros(n) for sp in cast}
    turns, seg_owner, t0 = [], [], 0
    for ti, (owner_idx, length) in enumerate(zip(turn_owners, turn_lengths)):
        if length < 1:
            raise ValueError("turn shorter than one segment")
        sp = cast[owner_idx]
        a, b = t0 * per, (t0 + length) * per
        voice, env = synth_voice(sp, (b - a) / sr, turn_seed(seed, ti), sr)
        sources[sp.id][a:b] = voice.samples
        envs[sp.id][a:b] = env
        turns.append((sp.id, t0 * seg_s, (t0 + length) * seg_s))
        seg_owner += [sp.id] * length
        t0 += length
    main_tracks = {sid: src.copy() for sid, src in sources.items()}
    overlaps = []
    for oi, (iid, a, b) in enumerate(overlaps_spec):
        sp = next(s for s in cast if s.id == iid)
        voice, env = synth_voice(sp, (b - a) / sr, seed + 211 * (oi + 1), sr)
        sources[iid][a:b] += voice.samples
        envs[iid][a:b] = np.maximum(envs[iid][a:b], env)
        overlaps.append((iid, a / sr, b / sr))
    script = ConversationScript(turns, overlaps, mode)
    script.validate(duration, seg_s, cfg.overlap_ratio if overlaps else None)

    parts = [(Waveform(sources[sp.id], sr), 1.0) for sp in cast]
    parts += _interference(rng, cfg, condition, {sp.id for sp in cast}, n, seed)
    mixture, _ = dsp.mix([p for p, _ in parts], [g for _, g in parts])
    clean = [Waveform(main_tracks[seg_owner[k]][k * per:(k + 1) * per], sr) for k in range(cfg.n_segments)]
    frames = render_video(cast, [envs[sp.id] for sp in cast], duration, cfg.fps, cfg.height, cfg.width,
                          cfg.grid, sr, channels=cfg.channels)
    by_id = {sp.id: sp for sp in cast}
    boxes = [cell_box(by_id[sid].grid_cell, cfg.grid, sid) for sid in seg_owner]
    return LabeledClip(frames, mixture, clean, boxes, seg_owner, script, list(cast), condition,
                       cfg.fps, seg_s, cfg.grid)


def compose_cooperative(cfg: DataConfig, seed: int, condition: str = "clean",
                        speakers: Optional[Sequence[SyntheticSpeaker]] = None,
                        turn_lengths: Optional[Sequence[float]] = None) -> LabeledClip:
    """Speakers take whole-segment turns one after another; only the turn owner is voiced.

    ``turn_lengths`` are in seconds (multiples of the segment length); owners
    cycle through ``speakers`` in order.
    """
    rng = np.random.default_rng(seed)
    cast = list(speakers) if speakers is not None else _choose_cast(rng, cfg.n_speakers, cfg.grid, False)
    check_distinct(cast)
    if turn_lengths is None:
        owners, lengths = _random_turns(rng, cfg.n_segments, len(cast))
    else:
        lengths = []
        for tl in turn_lengths:
            if tl < cfg.segment_seconds - 1e-9:
                raise ValueError(f"turn of {tl}s is shorter than one segment")
            q = tl / cfg.segment_seconds
            if abs(q - round(q)) > 1e-9:
                raise ValueError(f"turn of {tl}s is not a whole number of segments")
            lengths.append(int(round(q)))
        if sum(lengths) != cfg.n_segments:
            raise ValueError(f"turns cover {sum(lengths)} segments, config has {cfg.n_segments}")
        owners = [i % len(cast) for i in range(len(lengths))]
    return _assemble(cfg, cast, owners, lengths, seed, rng, condition, [], "cooperative")


def compose_competitive(cfg: DataConfig, seed: int, condition: str = "clean",
                        speakers: Optional[Sequence[SyntheticSpeaker]] = None) -> LabeledClip:
    """Cooperative turns plus one interruption per segment by another visible speaker.

    The interruption covers ``overlap_ratio`` of the segment; the turn owner
    stays the main speaker throughout. Speakers occupy distinct grid rows.
    """
    rng = np.random.default_rng(seed)
    n_sp = max(cfg.n_speakers, 2)
    cast = list(speakers) if speakers is not None else _choose_cast(rng, n_sp, cfg.grid, True)
    if len(cast) < 2:
        raise ValueError("competitive mode needs at least two speakers")
    check_distinct(cast)
    owners, lengths = _random_turns(rng, cfg.n_segments, len(cast))
    sr = cfg.sample_rate
    per = int(round(cfg.segment_seconds * sr))
    win = int(round(cfg.overlap_ratio * per))
    if win > per:
        raise ValueError("overlap window exceeds the turn")
    seg_owner_idx = [o for o, length in zip(owners, lengths) for _ in range(length)]
    overlaps = []
    for k, oidx in enumerate(seg_owner_idx):
        others = [i for i in range(len(cast)) if i != oidx]
        iid = cast[int(rng.choice(others))].id
        start = k * per + int(rng.integers(0, per - win + 1))
        overlaps.append((iid, start, start + win))
    return _assemble(cfg, cast, owners, lengths, seed, rng, condition, overlaps, "competitive")


# -- serialization ----------------------------------------------------------

def write_frames(path, frames: np.ndarray):
    arr = np.ascontiguousarray(frames, dtype="<f4")
    header = FRAME_MAGIC + struct.pack("<II", FRAME_VERSION, arr.ndim) + struct.pack(f"<{arr.ndim}Q", *arr.shape)
    Path(path).write_bytes(header + arr.tobytes())


def read_frames(path) -> np.ndarray:
    buf = Path(path).read_bytes()
    if buf[:4] != FRAME_MAGIC:
        raise ValueError(f"{path}: not a frame tensor file")
    version, rank = struct.unpack_from("<II", buf, 4)
    if version != FRAME_VERSION:
        raise ValueError(f"{path}: unsupported frame file version {version}")
    shape = struct.unpack_from(f"<{rank}Q", buf, 12)
    off = 12 + 8 * rank
    return np.frombuffer(buf, dtype="<f4", offset=off, count=int(np.prod(shape))).reshape(shape)


def _speaker_record(sp: SyntheticSpeaker) -> dict:
    d = asdict(sp)
    d["grid_cell"] = list(sp.grid_cell)
    d["timbre"] = list(sp.timbre)
    d["color"] = list(sp.color)
    return d


def clip_metadata(clip: LabeledClip, seed: int) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "seed": int(seed),
        "mode": clip.script.mode,
        "condition": clip.condition,
        "fps": clip.fps,
        "segment_seconds": clip.segment_seconds,
        "grid": clip.grid,
        "sample_rate": clip.audio_mix.sample_rate,
        "main_id": [int(i) for i in clip.main_id],
        "main_box": [b.as_list() for b in clip.main_box],
        "speakers": [_speaker_record(sp) for sp in clip.speakers],
        "turns": [list(t) for t in clip.script.turns],
        "overlaps": [list(o) for o in clip.script.overlaps],
    }


def save_clip(clip: LabeledClip, clip_dir, seed: int) -> dict:
    clip_dir = Path(clip_dir)
    try:
        clip_dir.mkdir(parents=True, exist_ok=True)
        dsp.write_wav(clip_dir / "mix.wav", clip.audio_mix)
        for k, w in enumerate(clip.clean_main):
            dsp.write_wav(clip_dir / f"clean_{k}.wav", w)
        write_frames(clip_dir / "frames.avtf", clip.frames)
        meta = clip_metadata(clip, seed)
        (clip_dir / "meta.json").write_text(json.dumps(meta, indent=1, sort_keys=True))
    except OSError as exc:
        raise OSError(f"failed writing clip to {clip_dir}: {exc}") from exc
    return meta


def load_clip(clip_dir) -> LabeledClip:
    clip_dir = Path(clip_dir)
    meta_path = clip_dir / "meta.json"
    if not meta_path.exists():
        raise FileNotFoundError(f"{meta_path} not found")
    meta = json.loads(meta_path.read_text())
    if meta.get("schema_version") != SCHEMA_VERSION:
        raise ValueError(f"{meta_path}: schema version {meta.get('schema_version')} != {SCHEMA_VERSION}")
    speakers = [SyntheticSpeaker(s["id"], s["f0"], tuple(s["grid_cell"]), tuple(s["timbre"]), s["shade"],
                                 tuple(s.get("color", (1.0, 1.0, 1.0))))
                for s in meta["speakers"]]
    by_id = {sp.id: sp for sp in speakers}
    grid = meta["grid"]
    K = len(meta["main_id"])
    script = ConversationScript([tuple(t) for t in meta["turns"]], [tuple(o) for o in meta["overlaps"]],
                                meta["mode"])
    return LabeledClip(
        frames=read_frames(clip_dir / "frames.avtf"),
        audio_mix=dsp.read_wav(clip_dir / "mix.wav"),
        clean_main=[dsp.read_wav(clip_dir / f"clean_{k}.wav") for k in range(K)],
        main_box=[cell_box(by_id[i].grid_cell, grid, i) for i in meta["main_id"]],
        main_id=list(meta["main_id"]),
        script=script,
        speakers=speakers,
        condition=meta["condition"],
        fps=meta["fps"],
        segment_seconds=meta["segment_seconds"],
        grid=grid,
    )


def clip_seed(seed: int, index: int) -> int:
    return int(np.random.SeedSequence([seed, index]).generate_state(1)[0] % (2 ** 31))


def make_dataset(n_clips: int, mode: str, seed: int, out_dir, cfg: Optional[DataConfig] = None) -> dict:
    """Render ``n_clips`` clips into ``out_dir`` and write ``manifest.json`` and ``boxes.jsonl``.

    ``mode`` is ``coop``, ``compet`` or ``mixed`` (alternating); conditions
    cycle through ``cfg.conditions``.
    """
    cfg = cfg or DataConfig()
    if mode not in ("coop", "compet", "mixed"):
        raise ValueError(f"unknown mode {mode!r}")
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create dataset directory {out}: {exc}") from exc
    clips, box_lines = [], []
    for i in range(n_clips):
        s = clip_seed(seed, i)
        cond = cfg.conditions[i % len(cfg.conditions)]
        clip_mode = mode if mode != "mixed" else ("coop", "compet")[i % 2]
        compose = compose_cooperative if clip_mode == "coop" else compose_competitive
        clip = compose(cfg, s, cond)
        name = f"clip_{i:05d}"
        save_clip(clip, out / name, s)
        clips.append({"name": name, "seed": s, "mode": clip_mode, "condition": cond})
        for k in range(clip.n_segments):
            for b in clip.speaker_boxes():
                box_lines.append(json.dumps({"clip": name, "segment": k, "speaker": b.speaker_index,
                                             "box": b.as_list()}, sort_keys=True))
    manifest = {"schema_version": SCHEMA_VERSION, "seed": int(seed), "mode": mode,
                "config": {**asdict(cfg), "conditions": list(cfg.conditions)}, "clips": clips}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True))
    (out / "boxes.jsonl").write_text("\n".join(box_lines) + ("\n" if box_lines else ""))
    return manifest


def load_manifest(data_dir) -> dict:
    path = Path(data_dir) / "manifest.json"
    if not path.exists():
        raise FileNotFoundError(f"no manifest at {path}")
    manifest = json.loads(path.read_text())
    if manifest.get("schema_version") != SCHEMA_VERSION:
        raise ValueError(f"{path}: schema version {manifest.get('schema_version')} != {SCHEMA_VERSION}")
    return manifest


def read_boxes_file(path) -> dict:
    """Map (clip, segment) -> list of SROIBox from a JSON-lines boxes file."""
    out: dict = {}
    for line in Path(path).read_text().splitlines():
        if not line.strip():
            continue
        rec = json.loads(line)
        out.setdefault((rec["clip"], rec["segment"]), []).append(SROIBox(*rec["box"], rec["speaker"]))
    return out
