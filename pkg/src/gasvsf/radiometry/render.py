"""Concentration slices to 8-bit infrared frames and ground-truth boxes."""

from __future__ import annotations

import numpy as np

from ..dispersion import ConcentrationSlice
from .physics import (
    GasSpectrum,
    SceneConfig,
    band_integrate,
    band_visibility,
    off_plume_radiance,
    radiance_difference,
)


def camera_gain_offset(scene: SceneConfig, spectrum: GasSpectrum) -> tuple[float, float]:
    m_off = float(band_integrate(off_plume_radiance(scene, spectrum), spectrum.wavelengths, spectrum.band))
    gain = scene.agc_gray / m_off if scene.gain is None else scene.gain
    offset = scene.background_gray - gain * m_off if scene.offset is None else scene.offset
    return gain, offset


def background_gray_level(scene: SceneConfig, spectrum: GasSpectrum) -> int:
    """Quantised gray level of a gas-free, noise-free, untextured pixel."""
    gain, offset = camera_gain_offset(scene, spectrum)
    m_off = float(band_integrate(off_plume_radiance(scene, spectrum), spectrum.wavelengths, spectrum.band))
    return int(np.clip(np.rint(gain * m_off + offset), 0, 255))


def render_radiance(slc: ConcentrationSlice, scene: SceneConfig, spectrum: GasSpectrum, texture=None) -> np.ndarray:
    """Noise-free, unquantised gray levels: gain * (M_off - dM) + offset."""
    CL = slc.values * scene.path_depth
    T_b = scene.T_b if texture is None else scene.T_b + np.asarray(texture)
    m_off = band_integrate(off_plume_radiance(scene, spectrum, T_b), spectrum.wavelengths, spectrum.band)
    dm = band_integrate(radiance_difference(scene, spectrum, CL, T_b), spectrum.wavelengths, spectrum.band)
    gain, offset = camera_gain_offset(scene, spectrum)
    return gain * (np.broadcast_to(m_off, CL.shape) - dm) + offset


def translate(img: np.ndarray, shift: tuple[int, int], fill) -> np.ndarray:
    """Integer translation by (dx, dy) pixels; uncovered pixels take ``fill``."""
    dx, dy = int(shift[0]), int(shift[1])
    h, w = img.shape
    out = np.full_like(img, fill)
    if abs(dx) >= w or abs(dy) >= h:
        return out
    src = img[max(0, -dy):h - max(0, dy), max(0, -dx):w - max(0, dx)]
    out[max(0, dy):max(0, dy) + src.shape[0], max(0, dx):max(0, dx) + src.shape[1]] = src
    return out


def quantize(v: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(v), 0, 255).astype(np.uint8)


def render_frame(slc: ConcentrationSlice, scene: SceneConfig, spectrum: GasSpectrum,
                 jitter=(0, 0), rng: np.random.Generator | None = None, texture=None) -> np.ndarray:
    """Render one 8-bit frame.

    Noise is drawn from ``rng`` only when ``scene.noise_sigma > 0``; jitter
    translates the whole frame and fills the uncovered strip with background.
    """
    v = render_radiance(slc, scene, spectrum, texture)
    if jitter[0] or jitter[1]:
        gain, offset = camera_gain_offset(scene, spectrum)
        m_off = float(band_integrate(off_plume_radiance(scene, spectrum), spectrum.wavelengths, spectrum.band))
        v = translate(v, jitter, gain * m_off + offset)
    if scene.noise_sigma > 0:
        if rng is None:
            raise ValueError("noise requested but no random generator given")
        v = v + rng.normal(0.0, scene.noise_sigma, size=v.shape)
    return quantize(v)


def visibility_map(slc: ConcentrationSlice, scene: SceneConfig, spectrum: GasSpectrum) -> np.ndarray:
    return band_visibility(spectrum, slc.values * scene.path_depth)


def annotate_bbox(slc: ConcentrationSlice, scene: SceneConfig, spectrum: GasSpectrum,
                  vis_threshold: float = 0.05, jitter=(0, 0)):
    """Tight (x1, y1, x2, y2) box around pixels with visibility >= threshold, or None.

    Coordinates are pixel edges: a single pixel at row i, column j gives
    (j, i, j + 1, i + 1). The box follows the frame jitter and is clipped to
    the image.
    """
    if not 0 < vis_threshold < 1:
        raise ValueError("vis_threshold must lie in (0, 1)")
    mask = visibility_map(slc, scene, spectrum) >= vis_threshold
    return mask_box(mask, jitter)


def mask_box(mask: np.ndarray, jitter=(0, 0)):
    h, w = mask.shape
    rows = np.flatnonzero(mask.any(axis=1))
    cols = np.flatnonzero(mask.any(axis=0))
    if rows.size == 0:
        return None
    dx, dy = int(jitter[0]), int(jitter[1])
    x1, x2 = max(cols[0] + dx, 0), min(cols[-1] + 1 + dx, w)
    y1, y2 = max(rows[0] + dy, 0), min(rows[-1] + 1 + dy, h)
    if x1 >= x2 or y1 >= y2:
        return None
    return (int(x1), int(y1), int(x2), int(y2))


def texture_field(X: np.ndarray, Y: np.ndarray, seed_rng: np.random.Generator, amplitude: float,
                  scale: float, n_waves: int = 12) -> np.ndarray:
    """Static smooth temperature texture evaluated at world coordinates (meters).

    Random Fourier waves with wavelengths between 0.3 and 1.5 times ``scale``,
    normalised so the RMS amplitude is ``amplitude`` kelvin.
    """
    if amplitude == 0:
        return np.zeros(X.shape)
    ang = seed_rng.uniform(0, 2 * np.pi, n_waves)
    lam = scale * seed_rng.uniform(0.3, 1.5, n_waves)
    ph = seed_rng.uniform(0, 2 * np.pi, n_waves)
    k = 2 * np.pi / lam
    f = np.zeros(X.shape)
    for a, kk, p in zip(ang, k, ph):
        f += np.cos(kk * (X * np.cos(a) + Y * np.sin(a)) + p)
    return amplitude * f * np.sqrt(2.0 / n_waves)
