"""RMSProp training loop with gradient accumulation over clips."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from .. import datagen
from .. import tensor as T
from ..head import total_loss
from ..tensor import load_checkpoint, save_checkpoint
from .config import RunConfig
from .model import AVModel, forward_clip, loss_parts, prepare_inputs

CHECKPOINT_NAME = "checkpoint.avtt"
METRICS_NAME = "metrics.jsonl"
OPT_PREFIX = "opt."


class DataError(ValueError):
    """Dataset missing or incompatible with the run configuration."""


class NonFiniteGradient(FloatingPointError):
    pass


def rmsprop_step(params: dict, grads: dict, state: dict, lr: float, decay: float = 0.9, eps: float = 1e-8):
    """In-place RMSProp update of ``params`` (name -> Tensor) from ``grads`` (name -> array).

    Raises NonFiniteGradient, leaving params and state untouched, if any
    gradient is not finite.
    """
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            continue
        if g.shape != p.shape:
            raise T.ShapeError(f"rmsprop_step ({name})", g.shape, p.shape)
        if not np.isfinite(g).all():
            raise NonFiniteGradient(f"non-finite gradient for {name}; step skipped")
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            continue
        s = state.get(name)
        s = decay * s + (1 - decay) * g * g if s is not None else (1 - decay) * g * g
        state[name] = s
        p.data -= lr * g / np.sqrt(s + eps)
    return params, state


# -- data ------------------------------------------------------------------

def split_clips(manifest: dict, holdout_fraction: float) -> tuple[list, list]:
    names = [c["name"] for c in manifest["clips"]]
    n_hold = max(1, int(math.ceil(holdout_fraction * len(names)))) if len(names) > 1 else 0
    return names[:len(names) - n_hold], names[len(names) - n_hold:]


def check_dataset(cfg: RunConfig, data_dir) -> dict:
    """Load the manifest and verify it matches the run geometry."""
    try:
        manifest = datagen.load_manifest(data_dir)
    except (FileNotFoundError, ValueError) as exc:
        raise DataError(str(exc)) from exc
    dc = manifest.get("config", {})
    want = {"n_segments": cfg.model.K, "height": cfg.model.frame_size, "width": cfg.model.frame_size,
            "channels": cfg.model.frame_channels,
            "sample_rate": cfg.model.sample_rate, "segment_seconds": cfg.model.segment_seconds}
    if cfg.model.sroi_mode == "block":
        want["grid"] = cfg.model.grid
    for key, val in want.items():
        if dc.get(key) != val:
            raise DataError(f"dataset {data_dir}: {key}={dc.get(key)!r} but the run expects {val!r}")
    if not manifest["clips"]:
        raise DataError(f"dataset {data_dir} has no clips")
    return manifest


class ClipSource:
    """Loads clips by name and prepares model inputs (optionally with supplied boxes)."""

    def __init__(self, cfg: RunConfig, data_dir):
        self.cfg = cfg
        self.dir = Path(data_dir)
        self.boxes = None
        if cfg.model.sroi_mode == "boxes":
            path = self.dir / "boxes.jsonl"
            if not path.exists():
                raise DataError(f"sroi_mode 'boxes' needs {path}")
            self.boxes = datagen.read_boxes_file(path)

    def clip(self, name: str):
        try:
            return datagen.load_clip(self.dir / name)
        except (FileNotFoundError, ValueError) as exc:
            raise DataError(f"cannot load clip {name}: {exc}") from exc

    def inputs(self, name: str):
        clip = self.clip(name)
        supplied = None
        if self.boxes is not None:
            supplied = [self.boxes[(name, k)] for k in range(clip.n_segments)]
        return prepare_inputs(clip, self.cfg.model, supplied), clip


def clip_order(n_train: int, seed: int, index: int) -> int:
    """Position ``index`` of the endless shuffled stream of training clips."""
    epoch, pos = divmod(index, n_train)
    return int(np.random.default_rng([seed, epoch]).permutation(n_train)[pos])


# -- checkpoints -------------------------------------------------------------

def save_run(path, model: AVModel, opt_state: dict, cfg: RunConfig, step: int, extra: Optional[dict] = None):
    arrays = {name: p.data for name, p in model.named_parameters().items()}
    arrays.update({OPT_PREFIX + name: s for name, s in opt_state.items()})
    meta = {"config": cfg.to_dict(), "step": step, **(extra or {})}
    save_checkpoint(path, arrays, meta)


def load_run(path) -> tuple[AVModel, dict, RunConfig, dict]:
    arrays, meta = load_checkpoint(path)
    cfg = RunConfig.from_dict(meta["config"])
    model = AVModel(cfg.model)
    model.load_arrays({k: v for k, v in arrays.items() if not k.startswith(OPT_PREFIX)})
    opt = {k[len(OPT_PREFIX):]: v for k, v in arrays.items() if k.startswith(OPT_PREFIX)}
    return model, opt, cfg, meta


# -- loop ---------------------------------------------------------------------

@dataclass
class TrainResult:
    checkpoint: Path
    metrics: Path
    steps: int
    skipped: int


def _json_line(rec: dict) -> str:
    return json.dumps(rec, sort_keys=True)


def train(cfg: RunConfig, data_dir, out_dir, resume: bool = False,
          progress: Optional[Callable[[str], None]] = None) -> TrainResult:
    """Minimize the weighted objective over the training split of ``data_dir``.

    Writes ``checkpoint.avtt`` (parameters, optimizer state and config) and an
    append-only ``metrics.jsonl`` with one record per evaluation step.
    """
    from .evaluate import evaluate_model

    manifest = check_dataset(cfg, data_dir)
    train_names, held_names = split_clips(manifest, cfg.train.holdout_fraction)
    if not train_names:
        raise DataError(f"dataset {data_dir} has no training clips")
    source = ClipSource(cfg, data_dir)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ckpt, metrics = out / CHECKPOINT_NAME, out / METRICS_NAME

    model, opt_state, step, running = AVModel(cfg.model), {}, 0, {}
    if resume and ckpt.exists():
        model, opt_state, saved_cfg, meta = load_run(ckpt)
        if saved_cfg.model != cfg.model:
            raise DataError(f"checkpoint {ckpt} was trained with a different model config")
        step, running = meta["step"], meta.get("running", {})
    elif not resume and metrics.exists():
        metrics.unlink()

    params = model.named_parameters()
    m, B = cfg.model, cfg.train.batch_clips
    skipped = running.pop("skipped", 0)
    eval_names = held_names[:cfg.train.eval_clips]
    while step < cfg.train.steps:
        for j in range(B):
            name = train_names[clip_order(len(train_names), m.seed, step * B + j)]
            inputs, _ = source.inputs(name)
            out_fwd = forward_clip(model, inputs, cycle=m.alpha_visual > 0, align_seed=m.seed * 100_003 + step)
            parts = loss_parts(model, out_fwd, inputs)
            loss = total_loss(parts, m.alpha_align, m.alpha_visual, m.alpha_audio, m.alpha_supervised,
                              m.alpha_phase)
            T.backward(loss * (1.0 / B))
            for k, v in parts.items():
                running[k] = running.get(k, 0.0) + v.item() / B
            running["total"] = running.get("total", 0.0) + loss.item() / B
        grads = {name: (p.grad if p.grad is not None else np.zeros_like(p.data)) for name, p in params.items()}
        try:
            rmsprop_step(params, grads, opt_state, m.lr, m.rms_decay, m.rms_eps)
        except NonFiniteGradient as exc:
            skipped += 1
            if progress:
                progress(f"step {step}: {exc}")
        T.zero_grads(params.values())
        step += 1
        running["n"] = running.get("n", 0) + 1
        if step % cfg.train.eval_every == 0 or step == cfg.train.steps:
            n = running.pop("n")
            rec = {"step": step, "skipped": skipped, "train": {k: v / n for k, v in sorted(running.items())}}
            if eval_names:
                report = evaluate_model(model, source, eval_names)
                rec["eval"] = report.summary()
            with open(metrics, "a") as fh:
                fh.write(_json_line(rec) + "\n")
            running = {}
            save_run(ckpt, model, opt_state, cfg, step, {"running": {"skipped": skipped}})
            if progress:
                progress(_json_line(rec))
    if not ckpt.exists() or cfg.train.steps == 0:
        save_run(ckpt, model, opt_state, cfg, step, {"running": {**running, "skipped": skipped}})
    return TrainResult(ckpt, metrics, step, skipped)
