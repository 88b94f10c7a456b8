"""Spectral radiometry of a gas layer in front of a background.

Two-layer line-of-sight model: background -> gas layer -> atmosphere ->
camera. Wavelengths are in meters, temperatures in kelvin, spectral exitance
in W m^-3 (per meter of wavelength).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

C1 = 3.74e-16  # W m^2
C2 = 1.44e-2  # m K

BANDS = {"mwir": (3e-6, 5e-6), "lwir": (8e-6, 12e-6)}


def planck_radiance(lam, T):
    """Blackbody spectral exitance M(lambda, T)."""
    lam = np.asarray(lam, dtype=np.float64)
    T = np.asarray(T, dtype=np.float64)
    if np.any(lam <= 0) or np.any(T <= 0):
        raise ValueError("wavelength and temperature must be positive")
    with np.errstate(over="ignore"):
        return C1 / lam ** 5 / np.expm1(C2 / (lam * T))


@dataclass
class GasSpectrum:
    wavelengths: np.ndarray
    alpha: np.ndarray
    band: tuple[float, float]

    def __post_init__(self):
        self.wavelengths = np.asarray(self.wavelengths, dtype=np.float64)
        self.alpha = np.asarray(self.alpha, dtype=np.float64)
        if self.wavelengths.shape != self.alpha.shape:
            raise ValueError("wavelengths and alpha must have the same length")
        if np.any(np.diff(self.wavelengths) <= 0):
            raise ValueError("wavelengths must be strictly increasing")
        if np.any(self.alpha < 0):
            raise ValueError("absorption coefficients must be non-negative")

    @classmethod
    def synthetic(cls, band: str = "lwir", peaks=None, n: int = 81) -> "GasSpectrum":
        """Sum of Gaussian absorption peaks (center m, width m, height per ppm m)."""
        lo, hi = BANDS[band]
        if peaks is None:
            # alkene-like feature in LWIR, alkane C-H stretch in MWIR
            peaks = [(10.5e-6, 0.25e-6, 2e-3)] if band == "lwir" else [(3.35e-6, 0.08e-6, 2e-3)]
        lam = np.linspace(lo, hi, n)
        alpha = np.zeros(n)
        for c, w, h in peaks:
            alpha += h * np.exp(-0.5 * ((lam - c) / w) ** 2)
        return cls(lam, alpha, (lo, hi))


@dataclass
class SceneConfig:
    T_b: float = 300.0
    T_gas: float = 290.0
    eps_b: float = 1.0
    tau_atm: float | np.ndarray = 0.95
    eps_atm: float | np.ndarray | None = None
    T_atm: float = 295.0
    gain: float | None = None  # gray per W m^-2 of band radiance; None: agc_gray / background band radiance
    offset: float | None = None  # None: uniform background sits at ``background_gray``
    agc_gray: float = 1000.0
    background_gray: float = 128.0
    noise_sigma: float = 1.5
    jitter_px: int = 0
    fps: float = 4.0
    path_depth: float = 1.0  # m; CL = concentration * path_depth
    texture_K: float = 0.0  # amplitude of static background temperature texture

    def __post_init__(self):
        if self.T_b <= 0 or self.T_gas <= 0 or self.T_atm <= 0:
            raise ValueError("temperatures must be positive")
        for name in ("eps_b", "tau_atm"):
            v = np.asarray(getattr(self, name))
            if np.any(v < 0) or np.any(v > 1):
                raise ValueError(f"{name} must lie in [0, 1]")
        if self.eps_atm is not None and (np.any(np.asarray(self.eps_atm) < 0) or np.any(np.asarray(self.eps_atm) > 1)):
            raise ValueError("eps_atm must lie in [0, 1]")

    @property
    def atm_emissivity(self):
        return 1.0 - np.asarray(self.tau_atm) if self.eps_atm is None else np.asarray(self.eps_atm)


def gas_transmittance(spectrum: GasSpectrum, CL) -> np.ndarray:
    """Beer-Lambert transmittance over the spectrum grid, shape CL.shape + (n_lambda,)."""
    CL = np.asarray(CL, dtype=np.float64)
    if np.any(CL < 0):
        raise ValueError("column density CL must be non-negative")
    return np.exp(-CL[..., None] * spectrum.alpha)


def background_radiance(scene: SceneConfig, lam, T_b=None):
    T_b = scene.T_b if T_b is None else T_b
    return scene.eps_b * planck_radiance(lam, T_b)


def off_plume_radiance(scene: SceneConfig, spectrum: GasSpectrum, T_b=None):
    lam = spectrum.wavelengths
    Tb = np.asarray(scene.T_b if T_b is None else T_b)[..., None]
    return scene.tau_atm * background_radiance(scene, lam, Tb) + scene.atm_emissivity * planck_radiance(lam, scene.T_atm)


def on_plume_radiance(scene: SceneConfig, spectrum: GasSpectrum, CL, T_b=None):
    lam = spectrum.wavelengths
    tau = gas_transmittance(spectrum, CL)
    Tb = np.asarray(scene.T_b if T_b is None else T_b)[..., None]
    m1 = tau * background_radiance(scene, lam, Tb) + (1.0 - tau) * planck_radiance(lam, scene.T_gas)
    return scene.tau_atm * m1 + scene.atm_emissivity * planck_radiance(lam, scene.T_atm)


def radiance_difference(scene: SceneConfig, spectrum: GasSpectrum, CL, T_b=None) -> np.ndarray:
    """Off-plume minus on-plume spectral radiance, shape CL.shape + (n_lambda,)."""
    lam = spectrum.wavelengths
    tau = gas_transmittance(spectrum, CL)
    Tb = np.asarray(scene.T_b if T_b is None else T_b)[..., None]
    return scene.tau_atm * (1.0 - tau) * (background_radiance(scene, lam, Tb) - planck_radiance(lam, scene.T_gas))


def trapezoid_weights(wavelengths, band: tuple[float, float]) -> np.ndarray:
    """Weights w with sum(f * w) == trapezoidal integral of f over the band samples."""
    lam = np.asarray(wavelengths, dtype=np.float64)
    sel = (lam >= band[0]) & (lam <= band[1])
    if sel.sum() < 2:
        raise ValueError(f"band {band} holds fewer than two wavelength samples")
    idx = np.flatnonzero(sel)
    h = np.diff(lam[idx])
    w = np.zeros(lam.size)
    w[idx[:-1]] += 0.5 * h
    w[idx[1:]] += 0.5 * h
    return w


def band_integrate(values, wavelengths, band: tuple[float, float]) -> np.ndarray:
    """Trapezoidal integral over the last axis, restricted to ``band``."""
    return np.asarray(values, dtype=np.float64) @ trapezoid_weights(wavelengths, band)


def band_visibility(spectrum: GasSpectrum, CL) -> np.ndarray:
    """1 - absorption-weighted band transmittance; 0 without gas, -> 1 when opaque."""
    tau = gas_transmittance(spectrum, CL)
    wsum = band_integrate(spectrum.alpha, spectrum.wavelengths, spectrum.band)
    if wsum <= 0:
        return np.zeros(np.shape(CL))
    return 1.0 - band_integrate(tau * spectrum.alpha, spectrum.wavelengths, spectrum.band) / wsum
