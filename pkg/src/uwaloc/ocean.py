"""Shallow-water waveguide environment and normal-mode Green's vectors.

The propagation model is an ideal isovelocity waveguide with a pressure-release
surface and a rigid flat bottom. The depth-dependent sound speed profile enters
only through its depth average, so a gradient perturbation of the profile shifts
every horizontal wavenumber by a different amount.
"""

from __future__ import annotations

import csv
import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

# Pivot depth of the constant-gradient perturbation (used verbatim, bottom is at 216 m).
PERTURBATION_PIVOT = 215.0
MIN_RANGE = 100.0

# Approximate summer SSP for the SWellEx-96 site, resampled to a coarse grid.
SWELLEX_SSP: tuple[tuple[float, float], ...] = (
    (0.0, 1521.9),
    (5.0, 1521.8),
    (10.0, 1519.6),
    (15.0, 1513.3),
    (20.0, 1507.4),
    (30.0, 1500.9),
    (40.0, 1497.6),
    (50.0, 1495.5),
    (60.0, 1494.1),
    (75.0, 1492.7),
    (100.0, 1491.4),
    (125.0, 1490.5),
    (150.0, 1489.8),
    (175.0, 1489.2),
    (200.0, 1488.7),
    (216.0, 1488.4),
)


def _default_array_depths() -> list[float]:
    return list(np.linspace(94.125, 212.25, 21))


@dataclass(frozen=True)
class Environment:
    """Range-independent waveguide with a vertical line array.

    Parameters
    ----------
    water_depth : float
        Depth of the flat bottom (m).
    ssp_base : tuple of (depth, speed)
        Unperturbed sound speed samples, increasing in depth and covering
        ``[0, water_depth]``.
    delta_c : float
        Perturbation magnitude already applied to ``ssp`` (m/s).
    source_depth : float
        Source depth (m).
    frequency : float
        Narrowband source frequency (Hz).
    array_depths : tuple of float
        Hydrophone depths (m), strictly increasing.
    bottom_loss : bool
        Damp each mode by the reflection loss of a lossy fluid half-space.
        When False the bottom is perfectly rigid and lossless.
    bottom_speed, bottom_density, bottom_attenuation : float
        Sediment sound speed (m/s), density ratio to water, and attenuation
        (dB per wavelength) used when ``bottom_loss`` is set.
    """

    water_depth: float = 216.0
    ssp_base: tuple[tuple[float, float], ...] = SWELLEX_SSP
    delta_c: float = 0.0
    source_depth: float = 54.0
    frequency: float = 130.0
    array_depths: tuple[float, ...] = field(default_factory=lambda: tuple(_default_array_depths()))
    bottom_loss: bool = True
    bottom_speed: float = 1572.4
    bottom_density: float = 1.76
    bottom_attenuation: float = 0.2

    def __post_init__(self):
        object.__setattr__(self, "ssp_base", tuple((float(z), float(c)) for z, c in self.ssp_base))
        object.__setattr__(self, "array_depths", tuple(float(z) for z in self.array_depths))
        self.validate()

    def validate(self) -> None:
        D = self.water_depth
        if D <= 0:
            raise ValueError("water_depth must be positive")
        z = self.ssp_depths
        if len(z) < 2:
            raise ValueError("SSP needs at least 2 samples")
        if np.any(np.diff(z) <= 0):
            raise ValueError("SSP depths must be strictly increasing")
        if z[0] > 0 or z[-1] < D:
            raise ValueError("SSP must cover [0, water_depth]")
        c = self.ssp_speeds_base
        if np.any(c < 1400) or np.any(c > 1600):
            raise ValueError("SSP speeds outside the [1400, 1600] m/s sanity band")
        za = np.asarray(self.array_depths)
        if za.size < 2:
            raise ValueError("array needs at least 2 hydrophones")
        if np.any(np.diff(za) <= 0):
            raise ValueError("array depths must be strictly increasing")
        for depth in (*self.array_depths, self.source_depth):
            if not 0 <= depth <= D:
                raise ValueError(f"depth {depth} outside [0, {D}]")
        if self.frequency <= 0:
            raise ValueError("frequency must be positive")

    @property
    def num_sensors(self) -> int:
        return len(self.array_depths)

    @property
    def ssp_depths(self) -> np.ndarray:
        return np.array([z for z, _ in self.ssp_base])

    @property
    def ssp_speeds_base(self) -> np.ndarray:
        return np.array([c for _, c in self.ssp_base])

    @property
    def ssp(self) -> np.ndarray:
        """Perturbed speeds at the SSP sample depths."""
        z = self.ssp_depths
        return self.ssp_speeds_base + self.delta_c / PERTURBATION_PIVOT * (z - PERTURBATION_PIVOT)


@dataclass(frozen=True)
class ModeSet:
    wavenumber: float
    vertical_wavenumbers: np.ndarray
    horizontal_wavenumbers: np.ndarray
    attenuation: np.ndarray | None = None  # Np/m per mode, None for a lossless guide

    @property
    def num_modes(self) -> int:
        return len(self.horizontal_wavenumbers)


def perturb_ssp(env: Environment, delta_c: float) -> Environment:
    """Apply ``c(z) = c0(z) + delta_c / 215 * (z - 215)`` on top of the current profile.

    Perturbations compose additively, so ``perturb_ssp(perturb_ssp(e, a), -a)``
    returns the base profile.
    """
    return dataclasses.replace(env, delta_c=env.delta_c + delta_c)


def depth_averaged_speed(env: Environment) -> float:
    z = env.ssp_depths
    c = env.ssp
    if len(z) < 2:
        raise ValueError("need at least 2 SSP samples")
    D = env.water_depth
    # clip the profile to the water column before averaging
    zc = np.clip(z, 0.0, D)
    grid = np.unique(np.concatenate([zc, [0.0, D]]))
    cg = np.interp(grid, z, c)
    return float(np.trapezoid(cg, grid) / D)


def compute_modes(env: Environment) -> ModeSet:
    c_bar = depth_averaged_speed(env)
    k = 2 * np.pi * env.frequency / c_bar
    D = env.water_depth
    # pressure-release surface, rigid bottom: k_z = (m - 1/2) pi / D
    n_max = int(np.floor(k * D / np.pi + 0.5)) + 1
    m = np.arange(1, n_max + 1)
    kz = (m - 0.5) * np.pi / D
    kz = kz[kz < k]
    if kz.size == 0:
        raise ValueError(f"no propagating modes at {env.frequency} Hz in {D} m of water")
    kr = np.sqrt(k**2 - kz**2)
    alpha = _bottom_attenuation(env, c_bar, kz, kr) if env.bottom_loss else None
    return ModeSet(wavenumber=k, vertical_wavenumbers=kz, horizontal_wavenumbers=kr, attenuation=alpha)


def _bottom_attenuation(env: Environment, c_bar: float, kz: np.ndarray, kr: np.ndarray) -> np.ndarray:
    """Per-mode decay rate from the Rayleigh reflection loss of a fluid bottom.

    Each mode is treated as a pair of plane waves at grazing angle
    ``arcsin(kz / k)``; the loss per bottom bounce is spread over the ray
    cycle distance ``2 D kr / kz``.
    """
    omega = 2 * np.pi * env.frequency
    # complex sediment wavenumber, attenuation given in dB per wavelength
    loss_tangent = env.bottom_attenuation / (40 * np.pi * np.log10(np.e))
    kb = omega / env.bottom_speed * (1 + 1j * loss_tangent)
    kz_b = np.sqrt(kb**2 - kr.astype(complex) ** 2)
    kz_b = np.where(kz_b.imag < 0, -kz_b, kz_b)
    refl = (env.bottom_density * kz - kz_b) / (env.bottom_density * kz + kz_b)
    return -np.log(np.abs(refl)) * kz / (2 * env.water_depth * kr)


def greens_vector(env: Environment, modes: ModeSet, range_d) -> np.ndarray:
    """Modal sum at the array for a source at ``range_d``.

    ``range_d`` may be a scalar (returns shape ``(L,)``) or an array of ranges
    (returns shape ``(len(range_d), L)``).
    """
    d = np.asarray(range_d, dtype=float)
    if np.any(d < MIN_RANGE):
        raise ValueError(f"range must be >= {MIN_RANGE} m for the far-field mode sum")
    kz = modes.vertical_wavenumbers
    kr = modes.horizontal_wavenumbers
    zl = np.asarray(env.array_depths)
    # (L, M) weights: source and receiver mode shapes
    shape = np.sin(kz * env.source_depth)[None, :] * np.sin(np.outer(zl, kz))
    dd = np.atleast_1d(d)[:, None]
    hankel = np.sqrt(2.0 / (np.pi * kr[None, :] * dd)) * np.exp(1j * (kr[None, :] * dd - np.pi / 4))
    if modes.attenuation is not None:
        hankel = hankel * np.exp(-modes.attenuation[None, :] * dd)
    g = hankel @ shape.T
    return g[0] if d.ndim == 0 else g


def load_ssp_csv(path: str | Path) -> tuple[tuple[float, float], ...]:
    """Read a two-column ``depth,speed`` CSV. A non-numeric first row is treated as a header."""
    rows = []
    with open(path, newline="") as fh:
        for rec in csv.reader(fh):
            if not rec or rec[0].strip().startswith("#"):
                continue
            try:
                rows.append((float(rec[0]), float(rec[1])))
            except ValueError:
                if rows:
                    raise
    return tuple(rows)
