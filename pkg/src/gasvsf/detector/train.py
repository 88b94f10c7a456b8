"""SGD training loop, parameter files and detection CSVs."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .. import rng as rngmod
from ..radiometry.clip import ClipSample, read_clip, read_manifest
from ..tensorcore import NonFiniteError, Tape, Tensor
from ..tensorcore import io as tio
from .boxes import Detection
from .model import Model, ModelConfig, build_model, clip_samples, infer_clip, unit_loss

log = logging.getLogger(__name__)


class DivergenceError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    lr: float = 1e-2
    momentum: float = 0.9
    weight_decay: float = 1e-4
    epochs: int = 9
    decay_epoch: int = 8  # 1-based epoch from which lr is scaled by decay_factor
    decay_factor: float = 0.1
    batch_size: int = 1
    frames: int = 8
    seed: int = 0
    grad_clip: float = 10.0

    def __post_init__(self):
        if min(self.lr, self.epochs, self.decay_epoch, self.batch_size, self.frames) <= 0 or self.momentum < 0:
            raise ValueError("training hyperparameters must be positive")
        if self.frames not in (1, 2, 4, 8, 16):
            raise ValueError(f"frames must be one of 1, 2, 4, 8, 16, got {self.frames}")


@dataclass
class TrainResult:
    model: Model
    losses: list[dict]  # one row per optimizer step
    epoch_losses: list[float]


def load_clips(manifest) -> list[ClipSample]:
    paths = read_manifest(manifest)
    if not paths:
        raise ValueError(f"manifest {manifest} lists no clips")
    return [read_clip(p) for p in paths]


def _lr_at(cfg: TrainConfig, epoch: int) -> float:
    return cfg.lr * (cfg.decay_factor if epoch + 1 >= cfg.decay_epoch else 1.0)


def train(clips, variant: str, cfg: TrainConfig, model_cfg: ModelConfig | None = None,
          loss_csv=None) -> TrainResult:
    """Train ``variant`` on in-memory clips (or a manifest path). Deterministic given ``cfg.seed``."""
    if not isinstance(clips, (list, tuple)):
        clips = load_clips(clips)
    if not clips:
        raise ValueError("no training clips")
    model_cfg = model_cfg or ModelConfig(frames=cfg.frames)
    if model_cfg.frames != cfg.frames:
        raise ValueError(f"model frames {model_cfg.frames} differ from training frames {cfg.frames}")
    model = build_model(variant, model_cfg, seed=cfg.seed)
    names = list(model.params)
    vel = {k: np.zeros_like(model.params[k].data) for k in names}
    rows: list[dict] = []
    epoch_losses: list[float] = []
    step = 0
    for epoch in range(cfg.epochs):
        order = rngmod.stream(cfg.seed, "shuffle", epoch).permutation(len(clips))
        lr = _lr_at(cfg, epoch)
        ep_sum, ep_n = 0.0, 0
        for b0 in range(0, len(order), cfg.batch_size):
            batch = order[b0:b0 + cfg.batch_size]
            grads = {k: np.zeros_like(vel[k]) for k in names}
            acc = dict(loss=0.0, rpn_cls=0.0, rpn_reg=0.0, head_cls=0.0, head_reg=0.0)
            n_units = 0
            for ci in batch:
                clip = clips[int(ci)]
                units = clip_samples(model, clip.frames, clip.boxes)
                for ui, (fr, bx) in enumerate(units):
                    r = rngmod.stream(cfg.seed, "sampling", epoch, int(ci), ui)
                    with Tape() as tape:
                        try:
                            parts, _ = unit_loss(model, fr, bx, r)
                        except NonFiniteError as exc:
                            raise DivergenceError(f"non-finite value at epoch {epoch} step {step}: {exc}") from exc
                    tape.backward(parts.total)
                    for k in names:
                        grads[k] += tape.grad(model.params[k])
                    acc["loss"] += parts.total.item()
                    acc["rpn_cls"] += parts.rpn_cls
                    acc["rpn_reg"] += parts.rpn_reg
                    acc["head_cls"] += parts.head_cls
                    acc["head_reg"] += parts.head_reg
                    n_units += 1
            if not np.isfinite(acc["loss"]):
                raise DivergenceError(f"non-finite loss at epoch {epoch} step {step}")
            gnorm = np.sqrt(sum(float(np.sum(np.square(g, dtype=np.float64))) for g in grads.values())) / n_units
            if not np.isfinite(gnorm):
                raise DivergenceError(f"non-finite gradient at epoch {epoch} step {step}")
            clip_scale = min(1.0, cfg.grad_clip / gnorm) if gnorm > 0 else 1.0
            for k in names:
                p = model.params[k]
                g = grads[k] / n_units * clip_scale + cfg.weight_decay * p.data
                vel[k] = (cfg.momentum * vel[k] + g).astype(p.dtype)
                p.data -= (lr * vel[k]).astype(p.dtype)
            row = {"epoch": epoch, "step": step, "lr": lr}
            row.update({k: v / n_units for k, v in acc.items()})
            rows.append(row)
            ep_sum += acc["loss"]
            ep_n += n_units
            step += 1
        epoch_losses.append(ep_sum / ep_n)
        log.info("epoch %d lr %.4g mean loss %.6f", epoch, lr, epoch_losses[-1])
    if loss_csv is not None:
        write_loss_csv(rows, loss_csv)
    return TrainResult(model, rows, epoch_losses)


LOSS_COLUMNS = ("epoch", "step", "lr", "loss", "rpn_cls", "rpn_reg", "head_cls", "head_reg")


def write_loss_csv(rows, path) -> None:
    with open(path, "w") as f:
        f.write(",".join(LOSS_COLUMNS) + "\n")
        for r in rows:
            f.write(",".join(repr(r[c]) if isinstance(r[c], float) else str(r[c]) for c in LOSS_COLUMNS) + "\n")


# -- parameter files --------------------------------------------------------

def save_params(model: Model, directory) -> Path:
    """One VSFT dump per tensor plus ``index.txt`` (name, shape, file) in insertion order."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    lines = [f"# variant {model.variant}"]
    for i, (name, t) in enumerate(model.params.items()):
        fn = f"{i:03d}_{name}.vsft"
        tio.save(d / fn, t.data)
        lines.append(f"{name} {'x'.join(str(s) for s in t.shape)} {fn}")
    (d / "index.txt").write_text("\n".join(lines) + "\n")
    return d


def load_params(directory, variant: str, model_cfg: ModelConfig) -> Model:
    d = Path(directory)
    model = build_model(variant, model_cfg)
    seen = set()
    for line in (d / "index.txt").read_text().splitlines():
        if not line.strip() or line.startswith("#"):
            continue
        name, shape, fn = line.split()
        if name not in model.params:
            raise ValueError(f"parameter {name} does not belong to a {variant} model")
        arr = tio.load(d / fn)
        expect = model.params[name].shape
        if arr.shape != expect:
            raise ValueError(f"parameter {name} has shape {arr.shape}, model expects {expect}")
        model.params[name] = Tensor(arr.astype(model.params[name].dtype), requires_grad=True, name=name)
        seen.add(name)
    missing = set(model.params) - seen
    if missing:
        raise ValueError(f"parameter files lack {sorted(missing)}")
    return model


# -- detections -------------------------------------------------------------

def write_detections(dets: list[Detection], path) -> None:
    with open(path, "w") as f:
        f.write("frame,x1,y1,x2,y2,score\n")
        for d in dets:
            f.write(f"{d.frame},{d.box[0]!r},{d.box[1]!r},{d.box[2]!r},{d.box[3]!r},{d.score!r}\n")


def read_detections(path) -> list[Detection]:
    out = []
    with open(path) as f:
        header = f.readline().strip()
        if header != "frame,x1,y1,x2,y2,score":
            raise ValueError(f"{path}: unexpected detection header {header!r}")
        for line in f:
            if line.strip():
                v = line.strip().split(",")
                out.append(Detection(int(v[0]), tuple(float(x) for x in v[1:5]), float(v[5])))
    return out


def predict(model: Model, clips) -> list[list[Detection]]:
    return [infer_clip(model, c.frames) for c in clips]
