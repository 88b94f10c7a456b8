"""Annotated synthetic clips: generation and the on-disk directory format.

Directory layout of one clip::

    clip_<id>/meta.txt          key=value lines (UTF-8)
    clip_<id>/frames/000000.pgm binary PGM (P5, maxval 255), one per frame
    clip_<id>/boxes.jsonl       {"frame": k, "box": [x1, y1, x2, y2] | null}

A dataset manifest lists clip directories, one per line, relative to the
manifest's own directory.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..dispersion import Grid, ReleaseSchedule, superpose_field
from ..rng import stream
from .physics import GasSpectrum, SceneConfig
from .render import annotate_bbox, render_frame, texture_field, visibility_map


class ClipFormatError(ValueError):
    pass


@dataclass
class ClipSample:
    frames: np.ndarray  # (T, H, W) uint8
    boxes: list  # per frame: (x1, y1, x2, y2) or None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.frames.ndim != 3 or self.frames.dtype != np.uint8:
            raise ValueError("frames must be a (T, H, W) uint8 array")
        if len(self.boxes) != self.frames.shape[0]:
            raise ValueError("one box entry per frame is required")
        _, h, w = self.frames.shape
        for b in self.boxes:
            if b is not None and not (0 <= b[0] < b[2] <= w and 0 <= b[1] < b[3] <= h):
                raise ValueError(f"box {b} outside a {w}x{h} image")

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]

    def __eq__(self, other) -> bool:
        return (isinstance(other, ClipSample) and np.array_equal(self.frames, other.frames)
                and [None if b is None else tuple(b) for b in self.boxes]
                == [None if b is None else tuple(b) for b in other.boxes]
                and self.meta == other.meta)


@dataclass
class Camera:
    width: int
    height: int
    mpp: float  # meters per pixel
    source_px: tuple[float, float]  # (column, row) of the leak source
    jitter: np.ndarray | None = None  # (T, 2) integer (dx, dy) per frame

    def grid(self, shift=(0, 0)) -> Grid:
        ox = -(self.source_px[0] + shift[0]) * self.mpp
        oy = -(self.source_px[1] + shift[1]) * self.mpp
        return Grid(self.width, self.height, self.mpp, (ox, oy))


def generate_clip(seed: int, scene: SceneConfig, spectrum: GasSpectrum, schedule: ReleaseSchedule,
                  camera: Camera, n_frames: int, t0: float, vis_threshold: float = 0.05,
                  z0: float | None = None, texture_scale_px: float = 24.0, meta=None) -> ClipSample:
    """Render ``n_frames`` frames starting at time ``t0`` (seconds).

    Camera jitter moves the world under the camera, so gas, background
    texture and the box shift together. All randomness (noise, texture)
    comes from streams of ``seed``.
    """
    if n_frames < 1:
        raise ValueError("need at least one frame")
    z0 = schedule.H if z0 is None else z0
    times = t0 + np.arange(n_frames) / scene.fps
    jit = np.zeros((n_frames, 2), dtype=int) if camera.jitter is None else np.asarray(camera.jitter, dtype=int)
    noise_rng = stream(seed, "noise")
    tex_seed = int(stream(seed, "texture").integers(2**63))
    frames, boxes = [], []
    for k, t in enumerate(times):
        grid = camera.grid(jit[k])
        slc = superpose_field(schedule, grid, z0, [t])[0]
        X, Y = grid.coords()
        tex = None
        if scene.texture_K:
            tex = texture_field(X, Y, np.random.default_rng(tex_seed), scene.texture_K,
                                texture_scale_px * camera.mpp)
        frames.append(render_frame(slc, scene, spectrum, rng=noise_rng, texture=tex))
        boxes.append(annotate_bbox(slc, scene, spectrum, vis_threshold))
    return ClipSample(np.stack(frames), boxes, dict(meta or {}))


# -- sampling whole scenes --------------------------------------------------

@dataclass
class GenConfig:
    image_size: int = 128
    frames: int = 8
    frac_small: float = 1 / 3
    frac_medium: float = 1 / 3
    frac_large: float = 1 / 3
    dynamic_fraction: float = 0.5
    jitter_px: int = 2
    mwir_fraction: float = 0.5
    wind_min: float = 1.0
    wind_max: float = 4.0
    wind_fluct: float = 0.25  # rad / sqrt(s), random walk of the wind angle
    warmup_min: float = 3.0
    warmup_max: float = 8.0
    leak_min: float = 300.0  # source rate, concentration units m^3 / s
    leak_max: float = 3000.0
    dT_min: float = -15.0  # T_gas - T_b
    dT_max: float = -4.0
    emission_interval: float = 0.1
    vis_threshold: float = 0.05
    clear_threshold: float = 0.3
    texture_scale_px: float = 24.0
    test_fraction: float = 0.2
    stability_classes: str = "ABCDEF"


SMALL_MAX = 32 * 32
LARGE_MIN = 96 * 96


def _target_area(bucket: str, size: int, rng) -> float:
    # buckets that do not fit the image fall back to the next smaller one
    cap = 0.8 * size * size
    if bucket == "large" and cap > 1.15 * LARGE_MIN:
        return rng.uniform(1.15 * LARGE_MIN, cap)
    if bucket in ("medium", "large") and cap > 1.3 * SMALL_MAX:
        return rng.uniform(1.3 * SMALL_MAX, min(0.85 * LARGE_MIN, cap))
    hi = min(0.8 * SMALL_MAX, cap)
    return rng.uniform(min(0.25 * SMALL_MAX, 0.5 * hi), hi)


def _max_box_area(schedule, camera, scene, spectrum, times, z0, thr) -> float:
    best = 0.0
    for slc in superpose_field(schedule, camera.grid(), z0, times):
        vis = visibility_map(slc, scene, spectrum) >= thr
        if vis.any():
            rows = np.flatnonzero(vis.any(axis=1))
            cols = np.flatnonzero(vis.any(axis=0))
            best = max(best, float((rows[-1] + 1 - rows[0]) * (cols[-1] + 1 - cols[0])))
    return best


def sample_clip(seed: int, index: int, gen: GenConfig, scene: SceneConfig) -> ClipSample:
    """Draw leak, wind, camera and scene for clip ``index`` and render it."""
    rng = stream(seed, "generation", index)
    fr = np.array([gen.frac_small, gen.frac_medium, gen.frac_large], dtype=float)
    if fr.sum() <= 0 or np.any(fr < 0):
        raise ValueError("size fractions must be non-negative and not all zero")
    bucket = ["small", "medium", "large"][int(rng.choice(3, p=fr / fr.sum()))]
    size = gen.image_size
    target = _target_area(bucket, size, rng)

    u0 = rng.uniform(gen.wind_min, gen.wind_max)
    theta0 = rng.uniform(0, 2 * np.pi)
    cls = gen.stability_classes[int(rng.integers(len(gen.stability_classes)))]
    leak = math.exp(rng.uniform(math.log(gen.leak_min), math.log(gen.leak_max)))
    warmup = rng.uniform(gen.warmup_min, gen.warmup_max)
    band = "mwir" if rng.random() < gen.mwir_fraction else "lwir"
    dT = rng.uniform(gen.dT_min, gen.dT_max)
    dynamic = bool(rng.random() < gen.dynamic_fraction)

    t_end = warmup + gen.frames / scene.fps
    wt = np.arange(0.0, t_end + 0.5, 0.5)
    wth = theta0 + np.concatenate([[0.0], np.cumsum(rng.normal(0, gen.wind_fluct * math.sqrt(0.5), wt.size - 1))])
    wu = np.maximum(u0 * (1 + 0.1 * rng.standard_normal(wt.size)), 0.1)
    emissions = np.arange(0.0, t_end, gen.emission_interval)
    schedule = ReleaseSchedule(emissions, leak * gen.emission_interval, np.stack([wt, wu, wth], axis=1),
                               H=0.0, stability_class=cls)

    spectrum = GasSpectrum.synthetic(band)
    sc = SceneConfig(**{**scene.__dict__, "T_gas": scene.T_b + dT})
    # source upwind of the image centre so the plume crosses the frame
    src = (size / 2 - 0.35 * size * math.cos(theta0), size / 2 - 0.35 * size * math.sin(theta0))
    times = warmup + np.arange(gen.frames) / sc.fps

    mpp = 0.1
    cam = Camera(size, size, mpp, src)
    for _ in range(8):
        area = _max_box_area(schedule, cam, sc, spectrum, times, 0.0, gen.vis_threshold)
        if area <= 0:
            mpp *= 0.5
        else:
            ratio = math.sqrt(area / target)
            if abs(ratio - 1) < 0.05:
                break
            mpp *= min(max(ratio, 0.5), 2.0)
        cam = Camera(size, size, mpp, src)
    if bucket == "small":
        # jitter cannot enlarge a box, so the unjittered check bounds every frame
        for _ in range(40):
            if _max_box_area(schedule, cam, sc, spectrum, times, 0.0, gen.vis_threshold) < SMALL_MAX:
                break
            mpp *= 1.15
            cam = Camera(size, size, mpp, src)

    jitter = None
    if dynamic and gen.jitter_px > 0:
        steps = rng.integers(-1, 2, size=(gen.frames, 2))
        steps[0] = rng.integers(-gen.jitter_px, gen.jitter_px + 1, size=2)
        jitter = np.clip(np.cumsum(steps, axis=0), -gen.jitter_px, gen.jitter_px)
    cam = Camera(size, size, mpp, src, jitter)

    meta = {
        "seed": int(seed), "index": int(index), "size_bucket": bucket, "band": band,
        "camera": "dynamic" if dynamic else "static", "stability_class": cls,
        "wind_speed": float(u0), "wind_angle": float(theta0), "leak_rate": float(leak),
        "warmup": float(warmup), "mpp": float(mpp), "T_b": float(sc.T_b), "T_gas": float(sc.T_gas),
        "noise_sigma": float(sc.noise_sigma), "fps": float(sc.fps), "frames": int(gen.frames),
        "width": int(size), "height": int(size),
    }
    clip = generate_clip(int(stream(seed, "render", index).integers(2**62)), sc, spectrum, schedule, cam,
                         gen.frames, warmup, gen.vis_threshold, z0=0.0,
                         texture_scale_px=gen.texture_scale_px, meta=meta)
    clip.meta["visibility"] = _visibility_label(schedule, cam, sc, spectrum, times, clip.boxes, gen)
    return clip


def _visibility_label(schedule, cam, scene, spectrum, times, boxes, gen) -> str:
    vals = []
    jit = np.zeros((len(times), 2), dtype=int) if cam.jitter is None else cam.jitter
    for k, t in enumerate(times):
        if boxes[k] is None:
            continue
        slc = superpose_field(schedule, cam.grid(jit[k]), 0.0, [t])[0]
        x1, y1, x2, y2 = boxes[k]
        vals.append(float(visibility_map(slc, scene, spectrum)[y1:y2, x1:x2].mean()))
    return "clear" if vals and np.mean(vals) >= gen.clear_threshold else "vague"


# -- disk format ------------------------------------------------------------

def write_pgm(path, img: np.ndarray) -> None:
    img = np.asarray(img, dtype=np.uint8)
    h, w = img.shape
    Path(path).write_bytes(b"P5\n%d %d\n255\n" % (w, h) + img.tobytes())


def read_pgm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    parts = data.split(maxsplit=4)
    if len(parts) < 5 or parts[0] != b"P5":
        raise ClipFormatError(f"{path}: not a binary PGM")
    try:
        w, h, maxval = int(parts[1]), int(parts[2]), int(parts[3])
    except ValueError:
        raise ClipFormatError(f"{path}: malformed PGM header") from None
    if maxval != 255:
        raise ClipFormatError(f"{path}: maxval {maxval} unsupported")
    # header ends with exactly one whitespace byte after maxval
    head = len(data) - w * h
    if head <= 0:
        raise ClipFormatError(f"{path}: truncated pixel data")
    return np.frombuffer(data, dtype=np.uint8, offset=head).reshape(h, w).copy()


def _fmt(v) -> str:
    if isinstance(v, bool):
        raise TypeError("booleans are not supported in clip metadata")
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _parse(v: str):
    try:
        i = int(v)
        if str(i) == v:
            return i
    except ValueError:
        pass
    try:
        f = float(v)
        if repr(f) == v:
            return f
    except ValueError:
        pass
    return v


def write_clip(clip: ClipSample, directory) -> Path:
    d = Path(directory)
    (d / "frames").mkdir(parents=True, exist_ok=True)
    lines = [f"{k}={_fmt(v)}" for k, v in sorted(clip.meta.items())]
    (d / "meta.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
    for k, img in enumerate(clip.frames):
        write_pgm(d / "frames" / f"{k:06d}.pgm", img)
    with open(d / "boxes.jsonl", "w", encoding="utf-8") as fh:
        for k, b in enumerate(clip.boxes):
            fh.write(json.dumps({"frame": k, "box": None if b is None else [int(x) for x in b]}) + "\n")
    return d


def read_clip(directory) -> ClipSample:
    d = Path(directory)
    try:
        meta = {}
        for line in (d / "meta.txt").read_text(encoding="utf-8").splitlines():
            if not line.strip():
                continue
            if "=" not in line:
                raise ClipFormatError(f"{d}/meta.txt: malformed line {line!r}")
            k, v = line.split("=", 1)
            meta[k] = _parse(v)
        recs = [json.loads(l) for l in (d / "boxes.jsonl").read_text(encoding="utf-8").splitlines() if l.strip()]
        frame_files = sorted((d / "frames").glob("*.pgm"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ClipFormatError(f"{d}: {exc}") from exc
    if not frame_files or len(frame_files) != len(recs):
        raise ClipFormatError(f"{d}: {len(frame_files)} frames but {len(recs)} box records")
    if [r.get("frame") for r in recs] != list(range(len(recs))):
        raise ClipFormatError(f"{d}: box records out of order")
    frames = np.stack([read_pgm(p) for p in frame_files])
    boxes = [None if r["box"] is None else tuple(int(x) for x in r["box"]) for r in recs]
    return ClipSample(frames, boxes, meta)


def write_manifest(paths, manifest) -> Path:
    m = Path(manifest)
    rel = [str(Path(p).resolve().relative_to(m.parent.resolve())) for p in paths]
    m.write_text("\n".join(rel) + ("\n" if rel else ""), encoding="utf-8")
    return m


def read_manifest(manifest) -> list[Path]:
    m = Path(manifest)
    lines = [l.strip() for l in m.read_text(encoding="utf-8").splitlines() if l.strip()]
    return [(m.parent / l) if not Path(l).is_absolute() else Path(l) for l in lines]
