"""Localization and separation scoring."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .. import dsp
from .. import tensor as T
from .model import AVModel, ClipInputs, forward_clip, separate


def predicted_point(alpha_within_k: np.ndarray, boxes) -> tuple[int, tuple]:
    """Index of the strongest SROI and the center of its box."""
    i = int(np.argmax(alpha_within_k))
    return i, boxes[i].center


def speaker_at(point, clip) -> int:
    """Id of the visible speaker whose cell contains ``point``; -1 if none."""
    from ..datagen import cell_box
    for sp in clip.speakers:
        if cell_box(sp.grid_cell, clip.grid).contains(*point):
            return sp.id
    return -1


def macro_f1(true_ids: Sequence[int], pred_ids: Sequence[int]) -> float:
    """Mean over speakers of the F1 score of "main speaker == s"."""
    true_ids, pred_ids = np.asarray(true_ids), np.asarray(pred_ids)
    speakers = sorted(set(true_ids.tolist()))
    if not speakers:
        return 0.0
    scores = []
    for s in speakers:
        tp = np.sum((pred_ids == s) & (true_ids == s))
        fp = np.sum((pred_ids == s) & (true_ids != s))
        fn = np.sum((pred_ids != s) & (true_ids == s))
        scores.append(2 * tp / (2 * tp + fp + fn) if tp else 0.0)
    return float(np.mean(scores))


def _concat(waves) -> dsp.Waveform:
    return dsp.Waveform(np.concatenate([w.samples for w in waves]), waves[0].sample_rate)


def ideal_mask_estimate(inputs: ClipInputs) -> list:
    out = []
    for spec, mix_w, clean_w in zip(inputs.mix, inputs.mix_wave, inputs.clean_wave):
        win, hop = spec.win_len, spec.hop
        rest = dsp.stft(dsp.Waveform(mix_w.samples - clean_w.samples, mix_w.sample_rate), win, hop)
        target = dsp.stft(clean_w, win, hop)
        out.append(dsp.istft(dsp.apply_mask(spec, dsp.ideal_ratio_mask(target, rest))))
    return out


@dataclass
class EvalReport:
    accuracy: float
    f1: float
    si_sdr: dict  # condition -> {"model", "mixture", "ideal", "improvement", "clips"}
    cycle_agreement: Optional[float] = None
    records: list = field(default_factory=list)

    def __post_init__(self):
        for name in ("accuracy", "f1"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} {v} outside [0, 1]")

    def summary(self) -> dict:
        out = {"accuracy": self.accuracy, "f1": self.f1, "si_sdr": self.si_sdr}
        if self.cycle_agreement is not None:
            out["cycle_agreement"] = self.cycle_agreement
        return out

    def to_dict(self) -> dict:
        return {**self.summary(), "records": self.records}


Localizer = Callable[[ClipInputs], np.ndarray]


def oracle_localizer(inputs: ClipInputs) -> np.ndarray:
    """One-hot within-segment weights at the ground-truth SROI."""
    n = len(inputs.boxes[0])
    a = np.zeros((len(inputs.boxes), n))
    for k, i in enumerate(inputs.gt_index):
        if i >= 0:
            a[k, i] = 1.0
    return a


def evaluate_clips(items, model: Optional[AVModel] = None, localizer: Optional[Localizer] = None,
                   separation: bool = True) -> EvalReport:
    """Score ``items`` = iterable of (name, ClipInputs, LabeledClip).

    Localization uses ``localizer`` when given, otherwise the model's
    within-segment cross-attention weights.
    """
    records, correct, true_ids, pred_ids, agree = [], [], [], [], []
    by_cond: dict = {}
    for name, inputs, clip in items:
        mask = None
        if model is not None:
            with T.no_grad():
                out = forward_clip(model, inputs, cycle=True)
            mask = out.mask
            alpha_w = out.alpha_within.data
            agree += list(alpha_w.argmax(axis=1) == out.alpha_hat_within.data.argmax(axis=1))
        if localizer is not None:
            alpha_w = np.asarray(localizer(inputs))
        rec = {"clip": name, "condition": inputs.condition, "segments": []}
        for k in range(len(inputs.boxes)):
            idx, point = predicted_point(alpha_w[k], inputs.boxes[k])
            ok = bool(inputs.gt_box[k].contains(*point))
            pred = speaker_at(point, clip)
            correct.append(ok)
            true_ids.append(inputs.main_id[k])
            pred_ids.append(pred)
            rec["segments"].append({"pred_index": idx, "correct": ok, "pred_speaker": pred,
                                    "main_id": int(inputs.main_id[k])})
        if separation and model is not None:
            ref = _concat(inputs.clean_wave)
            est = _concat(separate(model, inputs, mask))
            mix = _concat(inputs.mix_wave)
            ideal = _concat(ideal_mask_estimate(inputs))
            scores = {"model": dsp.si_sdr(est, ref), "mixture": dsp.si_sdr(mix, ref),
                      "ideal": dsp.si_sdr(ideal, ref)}
            rec["si_sdr"] = scores
            by_cond.setdefault(inputs.condition, []).append(scores)
        records.append(rec)
    si = {}
    for cond in sorted(by_cond):
        rows = by_cond[cond]
        mean = {key: float(np.mean([r[key] for r in rows])) for key in ("model", "mixture", "ideal")}
        mean["improvement"] = mean["model"] - mean["mixture"]
        mean["clips"] = len(rows)
        si[cond] = mean
    accuracy = float(np.mean(correct)) if correct else 0.0
    return EvalReport(accuracy, macro_f1(true_ids, pred_ids), si,
                      float(np.mean(agree)) if agree else None, records)


def evaluate_model(model: AVModel, source, names: Sequence[str], localizer: Optional[Localizer] = None,
                   separation: bool = True) -> EvalReport:
    items = ((name, *source.inputs(name)) for name in names)
    return evaluate_clips(items, model, localizer, separation)


def evaluate(checkpoint, data_dir, names: Optional[Sequence[str]] = None, held_out: bool = True) -> EvalReport:
    """Load a checkpoint and score clips of ``data_dir`` (the held-out split by default)."""
    from .train import ClipSource, check_dataset, load_run, split_clips
    model, _, cfg, _ = load_run(checkpoint)
    manifest = check_dataset(cfg, data_dir)
    if names is None:
        train_names, held = split_clips(manifest, cfg.train.holdout_fraction)
        names = held if held_out else train_names + held
    return evaluate_model(model, ClipSource(cfg, data_dir), names)
