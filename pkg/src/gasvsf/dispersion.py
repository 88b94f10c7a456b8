"""Gaussian puff dispersion.

A puff released at the origin drifts with the wind and spreads according to
dispersion coefficients (sigma_x, sigma_y, sigma_z). Concentration at a point
is the Gaussian puff solution with a ground-reflection term. A continuous leak
is a superposition of puffs emitted along a release schedule.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

# Briggs open-country fits: sigma_y = a x (1 + b x)^-1/2 and sigma_z = c x (1 + d x)^e
BRIGGS_RURAL = {
    "A": (0.22, 0.0001, 0.20, 0.0, 0.0),
    "B": (0.16, 0.0001, 0.12, 0.0, 0.0),
    "C": (0.11, 0.0001, 0.08, 0.0002, -0.5),
    "D": (0.08, 0.0001, 0.06, 0.0015, -0.5),
    "E": (0.06, 0.0001, 0.03, 0.0003, -1.0),
    "F": (0.04, 0.0001, 0.016, 0.0003, -1.0),
}

DEFAULT_HORIZON_S = 120.0


def pg_coefficients(stability_class: str, x_downwind):
    """(sigma_x, sigma_y, sigma_z) in meters at ``x_downwind`` meters.

    sigma_x is taken equal to sigma_y (isotropic horizontal spread).
    Vectorised over ``x_downwind``.
    """
    try:
        a, b, c, d, e = BRIGGS_RURAL[stability_class.upper()]
    except (KeyError, AttributeError):
        raise ValueError(f"unknown stability class {stability_class!r}; expected one of A-F") from None
    x = np.asarray(x_downwind, dtype=np.float64)
    if np.any(x <= 0):
        raise ValueError("downwind distance must be positive")
    sy = a * x / np.sqrt(1.0 + b * x)
    sz = c * x * (1.0 + d * x) ** e
    if sy.ndim == 0:
        return float(sy), float(sy), float(sz)
    return sy, sy.copy(), sz


@dataclass
class PuffParams:
    Q0: float
    u: float
    theta: float = 0.0
    H: float = 0.0
    sigma: tuple[float, float, float] | None = (1.0, 1.0, 1.0)
    stability_class: str | None = None
    # floor on the downwind distance used for Briggs sigmas (a fresh puff is not a point)
    min_distance: float = 1.0

    def __post_init__(self):
        if self.Q0 <= 0:
            raise ValueError("Q0 must be positive")
        if self.u < 0:
            raise ValueError("wind speed must be non-negative")
        if self.sigma is None and self.stability_class is None:
            raise ValueError("give either sigma or stability_class")
        if self.sigma is not None and min(self.sigma) <= 0:
            raise ValueError("dispersion coefficients must be positive")

    def sigmas_at(self, t: float) -> tuple[float, float, float]:
        if self.sigma is not None:
            return tuple(float(s) for s in self.sigma)
        return pg_coefficients(self.stability_class, max(self.u * t, self.min_distance))


def puff_concentration(p: PuffParams, x, y, z, t):
    """Gaussian puff concentration at (x, y, z) and time t (vectorised)."""
    if np.any(np.asarray(t) < 0):
        raise ValueError("t must be non-negative")
    sx, sy, sz = p.sigmas_at(float(t))
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    c, s = math.cos(p.theta), math.sin(p.theta)
    q = p.Q0 / (2.0 * math.pi ** 1.5 * sx * sy * sz)
    along = x * c + y * s - p.u * t
    cross = y * c - x * s
    refl = np.exp(-((z + p.H) ** 2) / (2 * sz * sz)) + np.exp(-((z - p.H) ** 2) / (2 * sz * sz))
    return q * np.exp(-along * along / (2 * sx * sx)) * np.exp(-cross * cross / (2 * sy * sy)) * refl


@dataclass(frozen=True)
class Grid:
    """Regular (x, y) grid of cell centres; rows index y, columns index x."""

    nx: int
    ny: int
    spacing: float
    origin: tuple[float, float] = (0.0, 0.0)

    def coords(self) -> tuple[np.ndarray, np.ndarray]:
        xs = self.origin[0] + self.spacing * np.arange(self.nx)
        ys = self.origin[1] + self.spacing * np.arange(self.ny)
        return np.meshgrid(xs, ys)


@dataclass
class ConcentrationSlice:
    values: np.ndarray
    grid: Grid
    z0: float
    t: float

    def integral(self) -> float:
        return float(self.values.sum() * self.grid.spacing ** 2)


def slice_concentration(p: PuffParams, grid: Grid, z0: float, t: float) -> ConcentrationSlice:
    """Concentration over the horizontal cross-section at height z0."""
    sx, sy, sz = p.sigmas_at(t)
    q = p.Q0 / (2.0 * math.pi ** 1.5 * sx * sy * sz)
    zf = math.exp(-((z0 + p.H) ** 2) / (2 * sz * sz)) + math.exp(-((z0 - p.H) ** 2) / (2 * sz * sz))
    X, Y = grid.coords()
    c, s = math.cos(p.theta), math.sin(p.theta)
    along = X * c + Y * s - p.u * t
    cross = Y * c - X * s
    vals = q * np.exp(-along * along / (2 * sx * sx)) * np.exp(-cross * cross / (2 * sy * sy)) * zf
    return ConcentrationSlice(vals, grid, z0, t)


def shift_offsets(u: float, theta: float, dt: float) -> tuple[float, float]:
    """Displacement (dx, dy) that keeps both puff exponents unchanged over dt."""
    return u * dt * math.cos(theta), u * dt * math.sin(theta)


def shift_residuals(dx: float, dy: float, u: float, theta: float, dt: float) -> tuple[float, float]:
    c, s = math.cos(theta), math.sin(theta)
    return dx * c + dy * s - u * dt, dy * c - dx * s


def verify_approximation(p: PuffParams, x: float, y: float, t: float, dt: float, z0: float = 0.0) -> float:
    """Relative error of approximating zeta(x, y, t) by zeta(x+dx, y+dy, t+dt).

    Sigmas are evaluated at each time separately, so the error is zero for
    fixed sigmas and first order in dt when they grow with distance.
    """
    ref = float(puff_concentration(p, x, y, z0, t))
    if ref <= 0:
        raise ZeroDivisionError("reference concentration is zero")
    dx, dy = shift_offsets(p.u, p.theta, dt)
    moved = float(puff_concentration(p, x + dx, y + dy, z0, t + dt))
    return abs(ref - moved) / ref


@dataclass
class ReleaseSchedule:
    """Puff emissions at the origin plus a piecewise-constant wind record.

    ``wind`` holds (time, speed, angle) samples; each sample applies until the
    next one, the first one also applies before its time.
    """

    emission_times: np.ndarray
    q0: np.ndarray
    wind: np.ndarray = field(default_factory=lambda: np.array([[0.0, 1.0, 0.0]]))
    H: float = 0.0
    stability_class: str | None = "D"
    sigma: tuple[float, float, float] | None = None
    min_distance: float = 1.0

    def __post_init__(self):
        self.emission_times = np.asarray(self.emission_times, dtype=np.float64).reshape(-1)
        self.q0 = np.broadcast_to(np.asarray(self.q0, dtype=np.float64), self.emission_times.shape).copy()
        self.wind = np.atleast_2d(np.asarray(self.wind, dtype=np.float64))
        if np.any(self.emission_times < 0) or np.any(np.diff(self.emission_times) <= 0):
            raise ValueError("emission times must be non-negative and strictly increasing")
        if np.any(np.diff(self.wind[:, 0]) <= 0):
            raise ValueError("wind sample times must be strictly increasing")
        if np.any(self.q0 <= 0):
            raise ValueError("puff strengths must be positive")

    def _position(self, t: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Cumulative (x, y, path length) of an air parcel from time 0 to t."""
        wt, wu, wth = self.wind[:, 0], self.wind[:, 1], self.wind[:, 2]
        t = np.asarray(t, dtype=np.float64)
        knots = np.concatenate([[min(0.0, wt[0])], wt[1:]])
        vx, vy = wu * np.cos(wth), wu * np.sin(wth)
        seg = np.diff(knots)
        px = np.concatenate([[0.0], np.cumsum(vx[:-1] * seg)])
        py = np.concatenate([[0.0], np.cumsum(vy[:-1] * seg)])
        pl = np.concatenate([[0.0], np.cumsum(wu[:-1] * seg)])
        k = np.clip(np.searchsorted(knots, t, side="right") - 1, 0, len(knots) - 1)
        tau = t - knots[k]
        return px[k] + vx[k] * tau, py[k] + vy[k] * tau, pl[k] + wu[k] * tau

    def wind_at(self, t: float) -> tuple[float, float]:
        k = max(int(np.searchsorted(self.wind[:, 0], t, side="right")) - 1, 0)
        return float(self.wind[k, 1]), float(self.wind[k, 2])


def superpose_field(schedule: ReleaseSchedule, grid: Grid, z0: float, times, horizon: float = DEFAULT_HORIZON_S):
    """Concentration slices summed over every puff emitted strictly before each time.

    Puffs older than ``horizon`` seconds are dropped. A dropped puff of
    strength Q has been advected by at least u*horizon and its peak value is
    bounded by Q / (pi^1.5 sigma_x sigma_y sigma_z) at that age.
    """
    times = np.asarray(times, dtype=np.float64).reshape(-1)
    if np.any(np.diff(times) < 0):
        raise ValueError("times must be sorted")
    X, Y = grid.coords()
    ex, ey, el = schedule._position(schedule.emission_times)
    out = []
    for t in times:
        age = t - schedule.emission_times
        live = (age > 0) & (age <= horizon)
        vals = np.zeros((grid.ny, grid.nx))
        if live.any():
            cx, cy, cl = schedule._position(np.array([t]))
            dx, dy, path = cx[0] - ex[live], cy[0] - ey[live], cl[0] - el[live]
            q0 = schedule.q0[live]
            if schedule.sigma is not None:
                sx = np.full(q0.shape, schedule.sigma[0])
                sy = np.full(q0.shape, schedule.sigma[1])
                sz = np.full(q0.shape, schedule.sigma[2])
            else:
                sx, sy, sz = pg_coefficients(schedule.stability_class,
                                             np.maximum(path, schedule.min_distance))
            q = q0 / (2.0 * math.pi ** 1.5 * sx * sy * sz)
            zf = np.exp(-((z0 + schedule.H) ** 2) / (2 * sz * sz)) + np.exp(-((z0 - schedule.H) ** 2) / (2 * sz * sz))
            if np.array_equal(sx, sy):
                # isotropic puffs separate into x and y factors: sum_p w_p fy_p(y) fx_p(x)
                xs = grid.origin[0] + grid.spacing * np.arange(grid.nx)
                ys = grid.origin[1] + grid.spacing * np.arange(grid.ny)
                fx = np.exp(-(xs[None, :] - dx[:, None]) ** 2 / (2 * sx[:, None] ** 2))
                fy = np.exp(-(ys[None, :] - dy[:, None]) ** 2 / (2 * sy[:, None] ** 2))
                vals = (fy.T * (q * zf)) @ fx
            else:
                # each puff is Eq.-1 shaped about its own centre, oriented along its mean drift
                th = np.arctan2(dy, dx)
                c, s = np.cos(th)[:, None, None], np.sin(th)[:, None, None]
                rx = X[None] - dx[:, None, None]
                ry = Y[None] - dy[:, None, None]
                along = rx * c + ry * s
                cross = ry * c - rx * s
                e = np.exp(-along ** 2 / (2 * sx[:, None, None] ** 2) - cross ** 2 / (2 * sy[:, None, None] ** 2))
                vals = np.tensordot(q * zf, e, axes=(0, 0))
        out.append(ConcentrationSlice(np.maximum(vals, 0.0), grid, z0, float(t)))
    return out
