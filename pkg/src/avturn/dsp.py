"""Waveforms, STFT/ISTFT, spectrogram masking, mixing and SI-SDR."""
from __future__ import annotations

import wave
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

SAMPLE_RATE = 16000
WIN_LEN = 640  # 40 ms at 16 kHz
HOP = 160  # 10 ms at 16 kHz
SI_SDR_CAP = 100.0


@dataclass
class Waveform:
    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.sample_rate <= 0:
            raise ValueError(f"sample_rate must be positive, got {self.sample_rate}")
        if not np.isfinite(self.samples).all():
            raise ValueError("waveform contains non-finite samples")

    def __len__(self):
        return len(self.samples)

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate


@dataclass
class Spectrogram:
    """Magnitude/phase planes of shape (frames, bins) plus framing metadata.

    ``length`` is the number of waveform samples the frames were taken from,
    so that :func:`istft` can restore it exactly.
    """

    magnitude: np.ndarray
    phase: np.ndarray
    hop: int
    win_len: int
    sample_rate: int = SAMPLE_RATE
    length: int = 0

    @property
    def shape(self):
        return self.magnitude.shape

    def complex(self) -> np.ndarray:
        return self.magnitude * np.exp(1j * self.phase)


def hann(win_len: int) -> np.ndarray:
    """Periodic Hann window."""
    n = np.arange(win_len)
    return 0.5 - 0.5 * np.cos(2 * np.pi * n / win_len)


def _pad_amounts(length: int, win_len: int, hop: int) -> tuple[int, int, int]:
    front = win_len - hop
    total = length + 2 * front
    n_frames = -(-(total - win_len) // hop) + 1
    back = (n_frames - 1) * hop + win_len - length - front
    return front, back, n_frames


def n_frames(length: int, win_len: int = WIN_LEN, hop: int = HOP) -> int:
    return _pad_amounts(length, win_len, hop)[2]


def n_bins(win_len: int = WIN_LEN) -> int:
    return win_len // 2 + 1


def wrap_phase(p: np.ndarray) -> np.ndarray:
    """Map angles into (-pi, pi]."""
    w = np.mod(p + np.pi, 2 * np.pi) - np.pi
    return np.where(w <= -np.pi, w + 2 * np.pi, w)


def stft(w: Waveform, win_len: int = WIN_LEN, hop: int = HOP) -> Spectrogram:
    """Hann-windowed STFT.

    The signal is zero-padded by ``win_len - hop`` samples at the front and at
    least as much at the tail, so every input sample is covered by the same
    number of frames; the frame count is ``floor((padded - win_len) / hop) + 1``.
    """
    if hop <= 0 or win_len < hop:
        raise ValueError(f"need 0 < hop <= win_len, got hop={hop}, win_len={win_len}")
    x = w.samples
    if len(x) < win_len:
        raise ValueError(f"waveform of {len(x)} samples is shorter than the window ({win_len})")
    front, back, nf = _pad_amounts(len(x), win_len, hop)
    xp = np.concatenate([np.zeros(front), x, np.zeros(back)])
    frames = np.lib.stride_tricks.sliding_window_view(xp, win_len)[::hop][:nf]
    spec = np.fft.rfft(frames * hann(win_len), axis=-1)
    return Spectrogram(np.abs(spec), wrap_phase(np.angle(spec)), hop, win_len, w.sample_rate, len(x))


def check_cola(win_len: int, hop: int):
    if win_len % hop:
        raise ValueError(f"hop {hop} does not divide window {win_len}: overlap-add condition violated")


def istft(s: Spectrogram) -> Waveform:
    """Overlap-add inverse with squared-window-sum normalization."""
    check_cola(s.win_len, s.hop)
    win = hann(s.win_len)
    frames = np.fft.irfft(s.complex(), n=s.win_len, axis=-1) * win
    nf = frames.shape[0]
    total = (nf - 1) * s.hop + s.win_len
    out = np.zeros(total)
    norm = np.zeros(total)
    w2 = win * win
    for i in range(nf):
        out[i * s.hop:i * s.hop + s.win_len] += frames[i]
        norm[i * s.hop:i * s.hop + s.win_len] += w2
    nz = norm > 1e-10
    out[nz] /= norm[nz]
    out[~nz] = 0.0
    front = s.win_len - s.hop
    length = s.length or total - 2 * front
    return Waveform(out[front:front + length], s.sample_rate)


def apply_mask(s: Spectrogram, mag_mask: np.ndarray, phase_delta: np.ndarray | None = None) -> Spectrogram:
    mag_mask = np.asarray(mag_mask, dtype=np.float64)
    if mag_mask.shape != s.magnitude.shape:
        raise ValueError(f"mask shape {mag_mask.shape} != spectrogram shape {s.magnitude.shape}")
    if mag_mask.min(initial=0.0) < 0.0 or mag_mask.max(initial=0.0) > 1.0:
        raise ValueError("magnitude mask values must lie in [0, 1]")
    phase = s.phase
    if phase_delta is not None:
        phase_delta = np.asarray(phase_delta, dtype=np.float64)
        if phase_delta.shape != s.phase.shape:
            raise ValueError(f"phase delta shape {phase_delta.shape} != {s.phase.shape}")
        phase = wrap_phase(phase + phase_delta)
    return replace(s, magnitude=mag_mask * s.magnitude, phase=phase)


def mix(sources: list, gains: list) -> tuple[Waveform, int]:
    """Weighted sum clipped to [-1, 1]; returns the mixture and the number of clipped samples."""
    if len(sources) != len(gains) or not sources:
        raise ValueError("mix needs one gain per source and at least one source")
    n, sr = len(sources[0]), sources[0].sample_rate
    for s in sources:
        if len(s) != n:
            raise ValueError(f"length mismatch: {len(s)} vs {n}")
        if s.sample_rate != sr:
            raise ValueError(f"sample rate mismatch: {s.sample_rate} vs {sr}")
    out = np.zeros(n)
    for s, g in zip(sources, gains):
        out += g * s.samples
    clipped = int(np.count_nonzero(np.abs(out) > 1.0))
    return Waveform(np.clip(out, -1.0, 1.0), sr), clipped


def si_sdr(estimate, reference) -> float:
    """Scale-invariant SDR in dB, capped at +100 dB for a perfect estimate."""
    est = np.asarray(getattr(estimate, "samples", estimate), dtype=np.float64)
    ref = np.asarray(getattr(reference, "samples", reference), dtype=np.float64)
    if est.shape != ref.shape:
        raise ValueError(f"length mismatch: {est.shape} vs {ref.shape}")
    ref_energy = float(ref @ ref)
    if ref_energy == 0.0:
        raise ValueError("si_sdr: reference is identically zero")
    target = (float(est @ ref) / ref_energy) * ref
    noise = est - target
    num, den = float(target @ target), float(noise @ noise)
    if den <= num * 10 ** (-SI_SDR_CAP / 10):
        return SI_SDR_CAP
    if num == 0.0:
        return -SI_SDR_CAP
    return float(min(10 * np.log10(num / den), SI_SDR_CAP))


def ideal_ratio_mask(target: Spectrogram, interference: Spectrogram) -> np.ndarray:
    den = target.magnitude + interference.magnitude
    return np.divide(target.magnitude, den, out=np.zeros_like(den), where=den > 0)


# -- WAV files ------------------------------------------------------------

def write_wav(path, w: Waveform):
    pcm = np.round(np.clip(w.samples, -1.0, 1.0) * 32767.0).astype("<i2")
    with wave.open(str(path), "wb") as f:
        f.setnchannels(1)
        f.setsampwidth(2)
        f.setframerate(w.sample_rate)
        f.writeframes(pcm.tobytes())


def read_wav(path) -> Waveform:
    path = Path(path)
    with wave.open(str(path), "rb") as f:
        if f.getnchannels() != 1 or f.getsampwidth() != 2:
            raise ValueError(f"{path}: expected mono PCM16")
        sr = f.getframerate()
        data = np.frombuffer(f.readframes(f.getnframes()), dtype="<i2")
    return Waveform(data.astype(np.float64) / 32767.0, sr)
