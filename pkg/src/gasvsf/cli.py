"""Command-line entry point: generate, train, eval, gradcheck, objectness, export."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import config as cfgmod
from . import rng as rngmod

log = logging.getLogger("gasvsf")


class CommandError(RuntimeError):
    """Failure reported as one ``error: code=... msg=...`` line and a nonzero exit."""

    def __init__(self, code: str, msg: str):
        super().__init__(msg)
        self.code = code


def _out_dir(args, default: str) -> Path:
    d = Path(args.out or default)
    d.mkdir(parents=True, exist_ok=True)
    return d


# -- generate ---------------------------------------------------------------

def cmd_generate(cfg: cfgmod.RunConfig, out_dir) -> Path:
    """Write ``n_clips`` clip directories plus manifest.txt, train.txt and test.txt."""
    from .radiometry.clip import sample_clip, write_clip, write_manifest

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    gen, scene, seed, n = cfg.gen(), cfg.scene(), cfg["seed"], cfg["n_clips"]
    if n < 1:
        raise CommandError("config", "n_clips must be positive")
    paths = []
    for i in range(n):
        clip = sample_clip(seed, i, gen, scene)
        paths.append(write_clip(clip, out / "clips" / f"clip_{i:05d}"))
        log.debug("clip %d: %s %s", i, clip.meta["size_bucket"], clip.meta["visibility"])
    order = rngmod.stream(seed, "split").permutation(n)
    n_test = int(round(gen.test_fraction * n))
    test = sorted(order[:n_test].tolist())
    train = sorted(order[n_test:].tolist())
    write_manifest(paths, out / "manifest.txt")
    write_manifest([paths[i] for i in train], out / "train.txt")
    write_manifest([paths[i] for i in test], out / "test.txt")
    cfg.save(out / "config.txt")
    log.info("wrote %d clips (%d train, %d test) to %s", n, len(train), len(test), out)
    return out / "manifest.txt"


# -- train / eval -----------------------------------------------------------

def _data_shape(clips) -> tuple[int, int]:
    sizes = {(c.frames.shape[1], c.frames.shape[2]) for c in clips}
    frames = {c.n_frames for c in clips}
    if len(sizes) != 1 or len(frames) != 1:
        raise CommandError("data", "clips differ in frame size or frame count")
    (h, w), = sizes
    if h != w:
        raise CommandError("data", f"frames must be square, got {w}x{h}")
    return h, frames.pop()


def cmd_train(manifest, variant: str, cfg: cfgmod.RunConfig, run_dir) -> Path:
    from .detector.train import load_clips, save_params, train

    clips = load_clips(manifest)
    size, frames = _data_shape(clips)
    run = Path(run_dir)
    run.mkdir(parents=True, exist_ok=True)
    cfg.values["variant"] = variant
    res = train(clips, variant, cfg.train(frames), cfg.model(size, frames), loss_csv=run / "loss.csv")
    save_params(res.model, run / "params")
    cfg.save(run / "config.txt")
    (run / "data.txt").write_text(f"image_size = {size}\nframes = {frames}\n")
    log.info("trained %s: epoch losses %s", variant, " ".join(f"{v:.4f}" for v in res.epoch_losses))
    return run


def load_run(run_dir):
    from .detector.train import load_params

    run = Path(run_dir)
    for f in ("config.txt", "data.txt", "params/index.txt"):
        if not (run / f).is_file():
            raise CommandError("missing", f"{run / f} not found")
    cfg = cfgmod.parse_text((run / "config.txt").read_text(), origin=str(run / "config.txt"))
    data = dict(line.split(" = ") for line in (run / "data.txt").read_text().splitlines() if line)
    mcfg = cfg.model(int(data["image_size"]), int(data["frames"]))
    return load_params(run / "params", cfg["variant"], mcfg), cfg


def cmd_eval(run_dir, manifest, out_dir):
    from .detector.train import load_clips, predict, write_detections
    from .eval.metrics import clip_instances, evaluate_clips, iou_density

    model, _ = load_run(run_dir)
    clips = load_clips(manifest)
    dets = predict(model, clips)
    report = evaluate_clips(clips, dets)
    out = Path(out_dir)
    (out / "detections").mkdir(parents=True, exist_ok=True)
    for i, d in enumerate(dets):
        write_detections(d, out / "detections" / f"clip_{i:05d}.csv")
    (out / "report.json").write_text(report.to_json() + "\n")
    (out / "report.txt").write_text(report.table())
    dl, gl, _ = clip_instances(clips, dets)
    dens = iou_density(dl, gl, 10)
    (out / "iou_density.csv").write_text("bin_lo,bin_hi,density\n" + "".join(
        f"{k / 10!r},{(k + 1) / 10!r},{v!r}\n" for k, v in enumerate(dens.tolist())))
    return report


# -- gradcheck --------------------------------------------------------------

def cmd_gradcheck(scope: str, seed: int = 0) -> list[tuple[str, float, float]]:
    from .checks import run_scope

    return run_scope(scope, seed)


# -- objectness -------------------------------------------------------------

OBJ_COLUMNS = "clip,frame,x1,y1,x2,y2,ms,cc,ed,ss"


def cmd_objectness(manifest=None, image=None, boxes=()) -> list[str]:
    from .eval.objectness import objectness
    from .radiometry.clip import read_clip, read_manifest, read_pgm

    rows = [OBJ_COLUMNS]

    def add(name, frame, img, box):
        s = objectness(img, box)
        rows.append(f"{name},{frame},{box[0]},{box[1]},{box[2]},{box[3]},{s.ms!r},{s.cc!r},{s.ed!r},{s.ss!r}")

    if manifest is not None:
        for p in read_manifest(manifest):
            clip = read_clip(p)
            for t, b in enumerate(clip.boxes):
                if b is not None:
                    add(Path(p).name, t, clip.frames[t], b)
    elif image is not None:
        img = read_pgm(image)
        if not boxes:
            raise CommandError("args", "objectness on an image needs at least one --box")
        for b in boxes:
            add(Path(image).name, 0, img, b)
    else:
        raise CommandError("args", "give --manifest or --image")
    return rows


# -- export -----------------------------------------------------------------

def cmd_export(src, fmt: str, out_dir, run_dir=None) -> list[Path]:
    """Export a clip (frames as PGM, boxes as CSV) or an offset dump (CSV or PGM slices).

    With ``run_dir`` the clip is passed through a trained VSF model and the
    learned offset field of every VSF stage is written as a VSFT dump first.
    """
    from .radiometry.clip import read_clip, write_pgm
    from .tensorcore import io as tio

    src = Path(src)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []
    if fmt not in ("pgm", "csv"):
        raise CommandError("args", f"unknown export format {fmt!r}")
    if src.is_dir():
        clip = read_clip(src)
        if run_dir is not None:
            return export_offsets(run_dir, clip, out, fmt)
        if fmt == "pgm":
            for t, img in enumerate(clip.frames):
                p = out / f"frame_{t:03d}.pgm"
                write_pgm(p, img)
                written.append(p)
        else:
            p = out / "boxes.csv"
            p.write_text("frame,x1,y1,x2,y2\n" + "".join(
                f"{t},{','.join(str(v) for v in b)}\n" for t, b in enumerate(clip.boxes) if b is not None))
            written.append(p)
        return written
    if not src.is_file():
        raise CommandError("missing", f"{src} not found")
    arr = tio.load(src)
    written.extend(_export_offset_array(arr, src.stem, out, fmt))
    return written


def _export_offset_array(arr: np.ndarray, stem: str, out: Path, fmt: str) -> list[Path]:
    from .radiometry.clip import write_pgm

    if arr.ndim != 4 or arr.shape[-1] != 3:
        raise CommandError("format", f"offset dump must be (H, W, T, 3), got {arr.shape}")
    H, W, T, _ = arr.shape
    if fmt == "csv":
        hh, ww, tt = np.meshgrid(np.arange(H), np.arange(W), np.arange(T), indexing="ij")
        p = out / f"{stem}.csv"
        lines = ["y,x,t,dx,dy,dt"]
        for y, x, t, o in zip(hh.ravel(), ww.ravel(), tt.ravel(), arr.reshape(-1, 3)):
            lines.append(f"{y},{x},{t},{float(o[0])!r},{float(o[1])!r},{float(o[2])!r}")
        p.write_text("\n".join(lines) + "\n")
        return [p]
    paths = []
    # displacement magnitude per frame, scaled so 2 voxels maps to white
    mag = np.sqrt(np.sum(arr.astype(np.float64) ** 2, axis=-1))
    for t in range(T):
        p = out / f"{stem}_t{t:03d}.pgm"
        write_pgm(p, np.clip(np.rint(mag[:, :, t] * 127.5), 0, 255).astype(np.uint8))
        paths.append(p)
    return paths


def export_offsets(run_dir, clip, out: Path, fmt: str) -> list[Path]:
    from .detector.model import prepare_input
    from .detector.model import backbone_offsets
    from .tensorcore import Tensor
    from .tensorcore import io as tio
    from .vsf import OffsetField

    model, _ = load_run(run_dir)
    if model.variant != "vsf_full":
        raise CommandError("args", f"run {run_dir} is a {model.variant} model without learnable offsets")
    written = []
    for stage, O in backbone_offsets(model, Tensor(prepare_input(clip.frames))):
        # the last channel carries no schedule bias, so it shows the learned field alone
        field = OffsetField(O.data[0, -1])
        p = out / f"offsets_stage{stage}.vsft"
        field.save(p)
        written.append(p)
        written.extend(_export_offset_array(tio.load(p), p.stem, out, fmt))
    return written


# -- main -------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="gasvsf", description=__doc__)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key=value config file")
    common.add_argument("--seed", type=int, help="64-bit master seed (overrides the config)")
    common.add_argument("--out", help="output directory")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="config override")
    common.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", parents=[common], help="render a synthetic clip dataset")
    g.add_argument("--n-clips", type=int, help="number of clips (overrides n_clips)")

    t = sub.add_parser("train", parents=[common], help="train a detector variant")
    t.add_argument("--manifest", required=True)
    t.add_argument("--variant", help="frame_baseline, concat_baseline, vsf_data or vsf_full")

    e = sub.add_parser("eval", parents=[common], help="evaluate a trained run on a manifest")
    e.add_argument("--run", required=True)
    e.add_argument("--manifest", required=True)

    c = sub.add_parser("gradcheck", parents=[common], help="finite-difference gradient checks")
    c.add_argument("--scope", choices=("tensorcore", "vsf", "detector", "all"), default="all")

    o = sub.add_parser("objectness", parents=[common], help="objectness scores per GT box")
    o.add_argument("--manifest")
    o.add_argument("--image", help="PGM image")
    o.add_argument("--box", action="append", default=[], help="x1,y1,x2,y2")

    x = sub.add_parser("export", parents=[common], help="export a clip or an offset dump")
    x.add_argument("--input", required=True, help="clip directory or .vsft offset dump")
    x.add_argument("--format", choices=("pgm", "csv"), default="csv")
    x.add_argument("--run", help="trained vsf_full run; dumps its offsets on the input clip")
    return ap


def _parse_box(text: str):
    try:
        v = tuple(int(s) for s in text.split(","))
    except ValueError:
        raise CommandError("args", f"bad box {text!r}") from None
    if len(v) != 4:
        raise CommandError("args", f"box {text!r} needs four integers")
    return v


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    cfg = cfgmod.load(args.config, args.set, args.seed)
    if args.command == "generate":
        if args.n_clips is not None:
            cfg.values["n_clips"] = args.n_clips
        m = cmd_generate(cfg, _out_dir(args, "data"))
        print(m)
    elif args.command == "train":
        run_dir = cmd_train(args.manifest, args.variant or cfg["variant"], cfg, _out_dir(args, "run"))
        print(run_dir)
    elif args.command == "eval":
        rep = cmd_eval(args.run, args.manifest, _out_dir(args, str(Path(args.run) / "eval")))
        print(rep.table(), end="")
    elif args.command == "gradcheck":
        scopes = ("tensorcore", "vsf", "detector") if args.scope == "all" else (args.scope,)
        failed = []
        for s in scopes:
            for name, err, tol in cmd_gradcheck(s, cfg["seed"]):
                ok = err < tol
                print(f"{'PASS' if ok else 'FAIL'} {s}.{name} rel_err={err:.3e} tol={tol:.0e}")
                if not ok:
                    failed.append(f"{s}.{name}")
        if failed:
            raise CommandError("gradcheck", "failed: " + ",".join(failed))
    elif args.command == "objectness":
        rows = cmd_objectness(args.manifest, args.image, [_parse_box(b) for b in args.box])
        text = "\n".join(rows) + "\n"
        if args.out:
            d = _out_dir(args, ".")
            (d / "objectness.csv").write_text(text)
        else:
            sys.stdout.write(text)
    elif args.command == "export":
        for p in cmd_export(args.input, args.format, _out_dir(args, "export"), args.run):
            print(p)
    return 0


def main(argv=None) -> int:
    try:
        return run(argv)
    except CommandError as exc:
        print(f"error: code={exc.code} msg={exc}", file=sys.stderr)
        return 2
    except cfgmod.ConfigError as exc:
        print(f"error: code=config msg={exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError) as exc:
        print(f"error: code={type(exc).__name__} msg={exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
