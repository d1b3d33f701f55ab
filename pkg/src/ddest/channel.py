"""Discrete delay-Doppler channel model and random scene generation.

All delay/Doppler math runs in normalized units: a delay of tau' = tau * delta_f
is measured in cycles per frequency sample and lives in [0, 1); a Doppler shift
of alpha' = alpha * delta_t is measured in cycles per time sample and lives in
[-0.5, 0.5). Conversion to seconds/Hz happens only at I/O boundaries.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import ValidationError

TWO_PI = 2.0 * math.pi


def substream(seed: int, *path: int) -> np.random.Generator:
    """Independent generator derived from (seed, path...) for reproducible fan-out."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), *(int(p) for p in path)]))


@dataclass
class PathSet:
    """Specular paths as parallel vectors of complex gain, delay, and Doppler.

    Delays are normalized to [0, 1), Dopplers to [-0.5, 0.5). An empty set
    (P = 0) is valid.
    """

    gains: np.ndarray
    delays: np.ndarray
    dopplers: np.ndarray

    def __post_init__(self):
        self.gains = np.atleast_1d(np.asarray(self.gains, dtype=np.complex128))
        self.delays = np.atleast_1d(np.asarray(self.delays, dtype=np.float64))
        self.dopplers = np.atleast_1d(np.asarray(self.dopplers, dtype=np.float64))
        if not (self.gains.shape == self.delays.shape == self.dopplers.shape):
            raise ValidationError(
                f"path vectors disagree in length: gains {self.gains.shape}, "
                f"delays {self.delays.shape}, dopplers {self.dopplers.shape}"
            )
        if self.gains.ndim != 1:
            raise ValidationError("path vectors must be one-dimensional")
        if not (np.all(np.isfinite(self.gains)) and np.all(np.isfinite(self.delays))
                and np.all(np.isfinite(self.dopplers))):
            raise ValidationError("path parameters must be finite")
        if np.any(np.abs(self.gains) <= 0.0):
            raise ValidationError("gain magnitudes must be positive")
        if np.any((self.delays < 0.0) | (self.delays >= 1.0)):
            raise ValidationError("normalized delays must lie in [0, 1)")
        if np.any((self.dopplers < -0.5) | (self.dopplers >= 0.5)):
            raise ValidationError("normalized Dopplers must lie in [-0.5, 0.5)")

    def __len__(self) -> int:
        return self.gains.shape[0]

    @classmethod
    def empty(cls) -> "PathSet":
        return cls(np.zeros(0, np.complex128), np.zeros(0), np.zeros(0))

    @classmethod
    def single(cls, gain: complex, delay: float, doppler: float) -> "PathSet":
        return cls(np.array([gain]), np.array([delay]), np.array([doppler]))


@dataclass(frozen=True)
class SamplingGrid:
    """Frequency/time sampling geometry of one snapshot."""

    n_freq: int
    n_time: int
    delta_f: float
    delta_t: float
    f0: float
    t0: float = 0.0

    def __post_init__(self):
        if self.n_freq < 2 or self.n_time < 2:
            raise ValidationError("grid needs at least 2 samples per axis")
        if not (self.delta_f > 0 and self.delta_t > 0):
            raise ValidationError("sampling intervals must be positive")
        if not (math.isfinite(self.f0) and math.isfinite(self.t0)):
            raise ValidationError("grid offsets must be finite")

    @classmethod
    def centered(cls, n_freq: int, n_time: int, delta_f: float, delta_t: float,
                 t0: float = 0.0) -> "SamplingGrid":
        """Grid with the frequency axis centered on 0 (f0 = -B/2)."""
        return cls(n_freq, n_time, delta_f, delta_t, f0=-0.5 * n_freq * delta_f, t0=t0)

    @property
    def bandwidth(self) -> float:
        return self.n_freq * self.delta_f

    @property
    def delay_bin(self) -> float:
        """Rayleigh delay resolution in normalized units (1/N_f)."""
        return 1.0 / self.n_freq

    @property
    def doppler_bin(self) -> float:
        """Rayleigh Doppler resolution in normalized units (1/N_t)."""
        return 1.0 / self.n_time

    def freq_coords(self) -> np.ndarray:
        """Normalized frequency sample coordinates f0/delta_f + k."""
        return self.f0 / self.delta_f + np.arange(self.n_freq, dtype=np.float64)

    def time_coords(self) -> np.ndarray:
        """Normalized time sample coordinates t0/delta_t + l."""
        return self.t0 / self.delta_t + np.arange(self.n_time, dtype=np.float64)


@dataclass
class Snapshot:
    """One complex frequency-time observation plus its sampling geometry."""

    data: np.ndarray
    grid: SamplingGrid
    noise_sigma: float = 0.0
    truth: Optional[PathSet] = None

    def __post_init__(self):
        self.data = np.asarray(self.data)
        if self.data.shape != (self.grid.n_freq, self.grid.n_time):
            raise ValidationError(
                f"snapshot shape {self.data.shape} does not match grid "
                f"({self.grid.n_freq}, {self.grid.n_time})"
            )
        if not (math.isfinite(self.noise_sigma) and self.noise_sigma >= 0.0):
            raise ValidationError("noise_sigma must be finite and non-negative")


def synthesize_channel(paths: PathSet, grid: SamplingGrid) -> np.ndarray:
    """Evaluate the superposition of path atoms on the sampling grid.

    S[k, l] = sum_p gains[p] * exp(-2j*pi*f_k*tau_p) * exp(+2j*pi*t_l*alpha_p),
    with f_k*tau_p = (f0/delta_f + k) * delays[p] in normalized units, and the
    time term likewise. Linear in the gains; P = 0 gives the zero matrix.
    """
    if len(paths) == 0:
        return np.zeros((grid.n_freq, grid.n_time), dtype=np.complex128)
    af = np.exp(-2j * np.pi * np.outer(grid.freq_coords(), paths.delays))
    at = np.exp(2j * np.pi * np.outer(grid.time_coords(), paths.dopplers))
    return (af * paths.gains) @ at.T


def sigma_for_snr(signal: np.ndarray, snr_db: float) -> float:
    """Per-entry noise std so that mean(|S|^2) / sigma^2 hits the requested SNR."""
    signal = np.asarray(signal)
    if signal.size == 0:
        raise ValidationError("cannot derive a noise level from an empty signal")
    mean_power = float(np.mean(np.abs(signal) ** 2))
    if mean_power == 0.0:
        raise ValidationError("SNR is undefined for an all-zero signal")
    return math.sqrt(mean_power) * 10.0 ** (-snr_db / 20.0)


def add_noise(signal: np.ndarray, sigma: float, rng: np.random.Generator) -> np.ndarray:
    """Add circularly-symmetric complex Gaussian noise with per-entry variance sigma^2."""
    if not (math.isfinite(sigma) and sigma >= 0.0):
        raise ValidationError("sigma must be finite and non-negative")
    signal = np.asarray(signal)
    if sigma == 0.0:
        return signal.copy()
    scale = sigma / math.sqrt(2.0)
    noise = rng.standard_normal(signal.shape) + 1j * rng.standard_normal(signal.shape)
    return signal + scale * noise


@dataclass(frozen=True)
class SceneConfig:
    """Distributions for random training/evaluation scenes.

    Magnitudes are drawn uniformly in dB over magnitude_range_db, phases
    uniformly over [0, 2*pi), delays/Dopplers uniformly over their regions,
    and the per-scene SNR uniformly over snr_range_db.
    """

    path_count_range: tuple[int, int] = (1, 10)
    magnitude_range_db: tuple[float, float] = (-30.0, 0.0)
    delay_region: tuple[float, float] = (0.0, 0.025)
    doppler_region: tuple[float, float] = (-0.05, 0.05)
    snr_range_db: tuple[float, float] = (0.0, 50.0)
    seed: int = 0

    def __post_init__(self):
        lo, hi = self.path_count_range
        if not (1 <= lo <= hi):
            raise ValidationError("path_count_range must satisfy 1 <= low <= high")
        for name, (a, b) in (("magnitude_range_db", self.magnitude_range_db),
                             ("snr_range_db", self.snr_range_db)):
            if not (math.isfinite(a) and math.isfinite(b) and a <= b):
                raise ValidationError(f"{name} must be a finite non-empty interval")
        dlo, dhi = self.delay_region
        if not (0.0 <= dlo < dhi <= 1.0):
            raise ValidationError("delay_region must be a non-empty subinterval of [0, 1)")
        alo, ahi = self.doppler_region
        if not (-0.5 <= alo < ahi <= 0.5):
            raise ValidationError("doppler_region must be a non-empty subinterval of [-0.5, 0.5)")


def draw_paths(cfg: SceneConfig, rng: np.random.Generator) -> PathSet:
    """Draw one random PathSet according to the scene distributions."""
    lo, hi = cfg.path_count_range
    n = int(rng.integers(lo, hi + 1))
    mags = 10.0 ** (rng.uniform(*cfg.magnitude_range_db, size=n) / 20.0)
    phases = rng.uniform(0.0, TWO_PI, size=n)
    gains = mags * np.exp(1j * phases)
    delays = rng.uniform(*cfg.delay_region, size=n)
    dopplers = rng.uniform(*cfg.doppler_region, size=n)
    return PathSet(gains, delays, dopplers)


def sample_random_scene(cfg: SceneConfig, grid: SamplingGrid,
                        rng: np.random.Generator) -> Snapshot:
    """Draw paths and SNR, synthesize the channel, and return the noisy snapshot."""
    paths = draw_paths(cfg, rng)
    clean = synthesize_channel(paths, grid)
    snr_db = rng.uniform(*cfg.snr_range_db)
    sigma = sigma_for_snr(clean, snr_db)
    noisy = add_noise(clean, sigma, rng)
    return Snapshot(noisy, grid, noise_sigma=sigma, truth=paths)
