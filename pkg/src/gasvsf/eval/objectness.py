"""Generic objectness cues for a box in a grayscale image.

MS: spectral-residual saliency; CC: histogram contrast against the
surrounding ring; ED: edge density near the box border; SS: superpixel
straddling; HOG: oriented-gradient histograms. Scalar scores lie in [0, 1].
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage
from skimage.segmentation import felzenszwalb
from skimage.transform import resize

MS_SCALES = (16, 24, 32)
OBJECT_FACTOR = 3.0
ED_SIGMA = 1.5
CC_BINS = 16
RING_DILATION = 0.5
ED_SHRINK = 0.25
SS_SCALE = 100
SS_MIN_SIZE = 20
HOG_CELL = 8
HOG_BINS = 9
HOG_BLOCK = 2


@dataclass
class ObjectnessScores:
    ms: float
    cc: float
    ed: float
    ss: float
    hog: np.ndarray


def _check(image, box) -> tuple[np.ndarray, tuple[int, int, int, int]]:
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 2:
        raise ValueError(f"expected a 2-D grayscale image, got shape {img.shape}")
    x1, y1, x2, y2 = (int(round(v)) for v in box)
    h, w = img.shape
    if not (0 <= x1 < x2 <= w and 0 <= y1 < y2 <= h):
        raise ValueError(f"box {tuple(box)} is not inside the {w}x{h} image")
    return img, (x1, y1, x2, y2)


def _ring_box(box, shape, frac):
    x1, y1, x2, y2 = box
    h, w = shape
    dx, dy = int(round(frac * (x2 - x1))), int(round(frac * (y2 - y1)))
    return max(x1 - dx, 0), max(y1 - dy, 0), min(x2 + dx, w), min(y2 + dy, h)


def saliency_map(image: np.ndarray, side: int) -> np.ndarray:
    """Spectral-residual saliency at a working resolution of ``side`` pixels, resized back."""
    img = np.asarray(image, dtype=np.float64)
    small = resize(img, (side, side), order=1, anti_aliasing=True, mode="reflect")
    spec = np.fft.fft2(small)
    log_amp = np.log(np.abs(spec) + 1e-12)
    residual = log_amp - ndimage.uniform_filter(log_amp, size=3, mode="wrap")
    sal = np.abs(np.fft.ifft2(np.exp(residual + 1j * np.angle(spec)))) ** 2
    sal = ndimage.gaussian_filter(sal, sigma=side / 32 * 2.5, mode="wrap")
    return resize(sal, img.shape, order=1, mode="reflect")


def ms_score(image, box) -> float:
    img, (x1, y1, x2, y2) = _check(image, box)
    if np.ptp(img) == 0:
        return 0.0
    vals = []
    for s in MS_SCALES:
        sal = saliency_map(img, s)
        m = sal.max()
        if m <= 0:
            vals.append(0.0)
            continue
        # object map: saliency below OBJECT_FACTOR times its mean counts as background
        obj = np.where(sal >= OBJECT_FACTOR * sal.mean(), sal, 0.0)
        vals.append(float(obj[y1:y2, x1:x2].mean() / m))
    return float(np.clip(np.mean(vals), 0.0, 1.0))


def _histogram(values: np.ndarray, lo: float, hi: float) -> np.ndarray:
    h, _ = np.histogram(values, bins=CC_BINS, range=(lo, hi))
    return h / max(h.sum(), 1)


def cc_score(image, box) -> float:
    """Half the chi-squared distance between box and surrounding-ring histograms, in [0, 1]."""
    img, b = _check(image, box)
    x1, y1, x2, y2 = b
    rx1, ry1, rx2, ry2 = _ring_box(b, img.shape, RING_DILATION)
    ring = np.zeros(img.shape, dtype=bool)
    ring[ry1:ry2, rx1:rx2] = True
    ring[y1:y2, x1:x2] = False
    if not ring.any():
        return 0.0
    lo, hi = (0.0, 256.0) if img.min() >= 0 and img.max() <= 255 else (img.min(), img.max() + 1e-9)
    hb = _histogram(img[y1:y2, x1:x2], lo, hi)
    hr = _histogram(img[ring], lo, hi)
    s = hb + hr
    nz = s > 0
    return float(np.clip(0.5 * np.sum((hb[nz] - hr[nz]) ** 2 / s[nz]), 0.0, 1.0))


def gradient_magnitude(img: np.ndarray, sigma: float = ED_SIGMA) -> np.ndarray:
    """Gaussian-derivative gradient magnitude (smoothing keeps sensor noise from reading as edges)."""
    return ndimage.gaussian_gradient_magnitude(img, sigma=sigma, mode="nearest")


def ed_score(image, box) -> float:
    """Mean gradient magnitude over the box minus its 25%-per-side shrunk core, over the image max."""
    img, (x1, y1, x2, y2) = _check(image, box)
    g = gradient_magnitude(img)
    gmax = g.max()
    if gmax <= 0:
        return 0.0
    dx, dy = int(ED_SHRINK * (x2 - x1)), int(ED_SHRINK * (y2 - y1))
    ring = np.zeros(img.shape, dtype=bool)
    ring[y1:y2, x1:x2] = True
    if x2 - x1 - 2 * dx > 0 and y2 - y1 - 2 * dy > 0:
        ring[y1 + dy:y2 - dy, x1 + dx:x2 - dx] = False
    return float(np.clip(g[ring].mean() / gmax, 0.0, 1.0))


def segments(image) -> np.ndarray:
    img = np.asarray(image, dtype=np.float64)
    rng = np.ptp(img)
    norm = (img - img.min()) / rng if rng > 0 else np.zeros_like(img)
    return felzenszwalb(norm, scale=SS_SCALE, sigma=0.8, min_size=SS_MIN_SIZE, channel_axis=None)


def ss_score(image, box) -> float:
    """1 - sum over segments of min(outside part, inside part) / box area, clamped to [0, 1]."""
    img, (x1, y1, x2, y2) = _check(image, box)
    seg = segments(img)
    inside = np.zeros(img.shape, dtype=bool)
    inside[y1:y2, x1:x2] = True
    n = seg.max() + 1
    tot = np.bincount(seg.ravel(), minlength=n)
    ins = np.bincount(seg[inside], minlength=n)
    straddle = np.minimum(tot - ins, ins).sum()
    return float(np.clip(1.0 - straddle / inside.sum(), 0.0, 1.0))


def hog_descriptor(image, box, cell: int = HOG_CELL, bins: int = HOG_BINS, block: int = HOG_BLOCK) -> np.ndarray:
    """Unsigned-orientation cell histograms over the box, L2-normalised per block of cells.

    Blocks with no gradient energy stay zero.
    """
    img, (x1, y1, x2, y2) = _check(image, box)
    ch, cw = (y2 - y1) // cell, (x2 - x1) // cell
    if ch < 1 or cw < 1:
        raise ValueError(f"box {tuple(box)} is smaller than one {cell}x{cell} cell")
    patch = img[y1:y1 + ch * cell, x1:x1 + cw * cell]
    gx = np.zeros_like(patch)
    gy = np.zeros_like(patch)
    gx[:, 1:-1] = patch[:, 2:] - patch[:, :-2]
    gy[1:-1, :] = patch[2:, :] - patch[:-2, :]
    mag = np.hypot(gx, gy)
    ang = np.mod(np.degrees(np.arctan2(gy, gx)), 180.0)
    b = np.minimum((ang / (180.0 / bins)).astype(int), bins - 1)
    cell_id = (np.arange(ch * cell)[:, None] // cell) * cw + (np.arange(cw * cell)[None, :] // cell)
    hist = np.bincount((cell_id * bins + b).ravel(), weights=mag.ravel(), minlength=ch * cw * bins)
    hist = hist.reshape(ch, cw, bins)
    bh, bw = max(ch - block + 1, 1), max(cw - block + 1, 1)
    out = []
    for i in range(bh):
        for j in range(bw):
            v = hist[i:i + block, j:j + block].ravel()
            n = np.sqrt(np.sum(v * v))
            out.append(v / n if n > 0 else np.zeros_like(v))
    return np.concatenate(out)


def objectness(image, box) -> ObjectnessScores:
    return ObjectnessScores(ms_score(image, box), cc_score(image, box), ed_score(image, box),
                            ss_score(image, box), hog_descriptor(image, box))
