"""Snapshot preprocessing: multi-window filtering, zoomed 2D-DFT, real channels.

The zoomed transform correlates the windowed snapshot with single-path atoms
evaluated on a uniform delay/Doppler raster over a region of interest; with the
full range and matching supports it reduces to a plain 2D DFT (inverse
convention on the delay axis, forward on the Doppler axis).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .channel import SamplingGrid, Snapshot
from .errors import ValidationError

_WINDOW_NAMES = ("rectangular", "hann", "cosine", "tukey")

LOG_MAG_FLOOR = 1e-12


@dataclass(frozen=True)
class WindowKind:
    """Taper family plus shape parameter (only Tukey uses the shape)."""

    name: str
    shape: float = 0.5

    def __post_init__(self):
        if self.name not in _WINDOW_NAMES:
            raise ValidationError(f"unknown window {self.name!r}, expected one of {_WINDOW_NAMES}")
        if self.name == "tukey" and not (0.0 <= self.shape <= 1.0):
            raise ValidationError("tukey shape parameter must lie in [0, 1]")

    def __str__(self) -> str:
        return f"{self.name}:{self.shape:g}" if self.name == "tukey" else self.name

    @classmethod
    def parse(cls, text: str) -> "WindowKind":
        """Parse 'name' or 'tukey:shape' strings (as used in config files)."""
        name, _, shape = text.partition(":")
        name = name.strip().lower()
        if shape:
            return cls(name, float(shape))
        return cls(name)


RECTANGULAR = WindowKind("rectangular")
HANN = WindowKind("hann")
COSINE = WindowKind("cosine")


def tukey(shape: float = 0.5) -> WindowKind:
    return WindowKind("tukey", shape)


# paper-default stack of four views of the same snapshot
DEFAULT_WINDOWS = (tukey(0.5), COSINE, HANN, RECTANGULAR)


def window_1d(kind: WindowKind, n: int) -> np.ndarray:
    """Symmetric taper of length n; Tukey(0) is rectangular, Tukey(1) is Hann."""
    if n < 2:
        raise ValidationError("window length must be at least 2")
    m = np.arange(n, dtype=np.float64)
    if kind.name == "rectangular":
        return np.ones(n)
    if kind.name == "hann":
        return 0.5 * (1.0 - np.cos(2.0 * np.pi * m / (n - 1)))
    if kind.name == "cosine":
        return np.sin(np.pi * m / (n - 1))
    # tukey: flat middle with raised-cosine tapers over a fraction `shape` of the span
    alpha = kind.shape
    if alpha == 0.0:
        return np.ones(n)
    w = np.ones(n)
    edge = alpha * (n - 1) / 2.0
    left = m <= edge
    w[left] = 0.5 * (1.0 + np.cos(np.pi * (2.0 * m[left] / (alpha * (n - 1)) - 1.0)))
    w[::-1][left] = w[left]
    return w


def apply_windows(y: np.ndarray, kinds) -> np.ndarray:
    """Stack separably-windowed copies of y into a (N_W, N_f, N_t) tensor."""
    kinds = tuple(kinds)
    if not kinds:
        raise ValidationError("need at least one window kind")
    y = np.asarray(y)
    n_f, n_t = y.shape
    out = np.empty((len(kinds),) + y.shape, dtype=y.dtype)
    for w, kind in enumerate(kinds):
        wf = window_1d(kind, n_f).astype(y.real.dtype)
        wt = window_1d(kind, n_t).astype(y.real.dtype)
        out[w] = y * np.outer(wf, wt)
    return out


@dataclass(frozen=True)
class RegionOfInterest:
    """Delay/Doppler crop evaluated on an H x W raster (normalized units).

    The Doppler axis is 1-periodic, so windows anywhere in [-0.5, 1.0] of
    width <= 1 are accepted; this admits both the symmetric default region and
    the [0, 1) full-DFT special case.
    """

    delay_min: float
    delay_max: float
    doppler_min: float
    doppler_max: float
    height: int
    width: int

    def __post_init__(self):
        if not (0.0 <= self.delay_min < self.delay_max <= 1.0):
            raise ValidationError("delay region must satisfy 0 <= min < max <= 1")
        if not (-0.5 <= self.doppler_min < self.doppler_max <= 1.0):
            raise ValidationError("doppler region must satisfy -0.5 <= min < max <= 1")
        if self.doppler_max - self.doppler_min > 1.0:
            raise ValidationError("doppler region wider than one period")
        if self.height < 1 or self.width < 1:
            raise ValidationError("raster supports must be positive")

    @property
    def delay_span(self) -> float:
        return self.delay_max - self.delay_min

    @property
    def doppler_span(self) -> float:
        return self.doppler_max - self.doppler_min

    def delay_axis(self) -> np.ndarray:
        """H delays uniform over [delay_min, delay_max), endpoint excluded."""
        return self.delay_min + self.delay_span * np.arange(self.height) / self.height

    def doppler_axis(self) -> np.ndarray:
        return self.doppler_min + self.doppler_span * np.arange(self.width) / self.width

    def contains(self, delays: np.ndarray, dopplers: np.ndarray) -> np.ndarray:
        return ((delays >= self.delay_min) & (delays < self.delay_max)
                & (dopplers >= self.doppler_min) & (dopplers < self.doppler_max))


def zoom_dft_2d(yw: np.ndarray, roi: RegionOfInterest, grid: SamplingGrid) -> np.ndarray:
    """Matched-filter correlation of each channel with single-path atoms.

    X[h, w] = sum_{k,l} Y[k,l] * exp(+2j*pi*f_k*tau_h) * exp(-2j*pi*t_l*alpha_w)
    over the ROI raster, with f_k = f0/delta_f + k and t_l = t0/delta_t + l.
    Accepts a single (N_f, N_t) matrix or a stacked (N_W, N_f, N_t) tensor;
    complex64 input keeps the fast single-precision path.
    """
    yw = np.asarray(yw)
    squeeze = yw.ndim == 2
    if squeeze:
        yw = yw[None]
    if yw.shape[1:] != (grid.n_freq, grid.n_time):
        raise ValidationError(
            f"input shape {yw.shape[1:]} does not match grid ({grid.n_freq}, {grid.n_time})"
        )
    cdtype = np.complex64 if yw.dtype == np.complex64 else np.complex128
    ef = np.exp(2j * np.pi * np.outer(roi.delay_axis(), grid.freq_coords())).astype(cdtype)
    et = np.exp(-2j * np.pi * np.outer(grid.time_coords(), roi.doppler_axis())).astype(cdtype)
    out = np.empty((yw.shape[0], roi.height, roi.width), dtype=cdtype)
    for c in range(yw.shape[0]):
        out[c] = (ef @ yw[c].astype(cdtype, copy=False)) @ et
    return out[0] if squeeze else out


@dataclass
class CnnInput:
    """Real-valued network input: interleaved (log-mag, phase) channel pairs."""

    tensor: np.ndarray
    window_kinds: tuple[WindowKind, ...]

    def __post_init__(self):
        self.tensor = np.asarray(self.tensor)
        if self.tensor.ndim != 3 or self.tensor.shape[0] != 2 * len(self.window_kinds):
            raise ValidationError("tensor must be (2*N_W, H, W)")
        if not np.all(np.isfinite(self.tensor)):
            raise ValidationError("network input must be finite")


def to_real_channels(y1: np.ndarray, kinds) -> CnnInput:
    """Map complex channels to (standardized log10 magnitude, raw phase) pairs.

    Magnitudes are floored at 1e-12 before the log and standardized to zero
    mean / unit variance per channel (constant channels stay centered at 0);
    phases are left raw in (-pi, pi].
    """
    y1 = np.asarray(y1)
    kinds = tuple(kinds)
    n_w, h, w = y1.shape
    rdtype = np.float32 if y1.dtype == np.complex64 else np.float64
    out = np.empty((2 * n_w, h, w), dtype=rdtype)
    for c in range(n_w):
        logmag = np.log10(np.maximum(np.abs(y1[c]), LOG_MAG_FLOOR))
        centered = logmag - logmag.mean()
        std = centered.std()
        if std > 0.0:
            centered /= std
        out[2 * c] = centered
        out[2 * c + 1] = np.angle(y1[c])
    return CnnInput(tensor=out, window_kinds=kinds)


def preprocess_snapshot(snapshot: Snapshot, kinds, roi: RegionOfInterest,
                        single_precision: bool = False) -> CnnInput:
    """Full preprocessing chain: windows -> zoomed DFT -> real channels."""
    data = snapshot.data
    if single_precision:
        data = data.astype(np.complex64)
    stacked = apply_windows(data, kinds)
    zoomed = zoom_dft_2d(stacked, roi, snapshot.grid)
    return to_real_channels(zoomed, kinds)
