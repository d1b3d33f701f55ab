"""Cell-grid label encoding: paths <-> (existence flag, fractional offsets).

The region of interest is mapped onto the unit square, covered by I x J
half-open rectangular cells. Each cell holds up to C slots of
(mu, d_tau, d_alpha): mu flags slot occupancy and the offsets place the path
inside the cell, with the centroid encoding (0.5, 0.5) so offsets span [0, 1).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .channel import PathSet
from .errors import CellOverflowError, ValidationError
from .preprocess import RegionOfInterest


@dataclass(frozen=True)
class CellGridSpec:
    """Cell layout over a region of interest: I x J cells, C slots each."""

    rows: int
    cols: int
    capacity: int
    region: RegionOfInterest

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1 or self.capacity < 1:
            raise ValidationError("rows, cols, and capacity must be positive")

    @property
    def max_paths(self) -> int:
        return self.rows * self.cols * self.capacity

    @property
    def channels(self) -> int:
        """Label depth 3*C: (mu, d_tau, d_alpha) per slot."""
        return 3 * self.capacity

    def centroids(self) -> tuple[np.ndarray, np.ndarray]:
        """Unit-square cell centers along each axis."""
        u = (np.arange(self.rows) + 0.5) / self.rows
        v = (np.arange(self.cols) + 0.5) / self.cols
        return u, v


@dataclass
class EncodedLabel:
    """I x J x 3C tensor ordered (mu_1, d_tau_1, d_alpha_1, ..., mu_C, ...)."""

    tensor: np.ndarray

    def __post_init__(self):
        self.tensor = np.asarray(self.tensor)
        if self.tensor.ndim != 3 or self.tensor.shape[2] % 3 != 0:
            raise ValidationError("label tensor must be (I, J, 3*C)")

    @property
    def mu(self) -> np.ndarray:
        return self.tensor[:, :, 0::3]

    @property
    def path_count(self) -> float:
        """Model order as the mass of the existence channel."""
        return float(self.tensor[:, :, 0::3].sum())


def normalize_params(paths: PathSet, region: RegionOfInterest) -> tuple[np.ndarray, np.ndarray]:
    """Affine map of (delay, Doppler) into the unit square; rejects outsiders."""
    inside = region.contains(paths.delays, paths.dopplers)
    if not np.all(inside):
        p = int(np.flatnonzero(~inside)[0])
        raise ValidationError(
            f"path {p} at (tau'={paths.delays[p]:.6g}, alpha'={paths.dopplers[p]:.6g}) "
            f"lies outside the region of interest"
        )
    u = (paths.delays - region.delay_min) / region.delay_span
    v = (paths.dopplers - region.doppler_min) / region.doppler_span
    return u, v


def assign_cell(point: tuple[float, float], spec: CellGridSpec) -> tuple[int, int]:
    """Cell whose centroid is nearest in l-infinity distance.

    For points in the half-open cells this is the floor rule
    i = floor(u*I), j = floor(v*J); exact boundary points (ties) go to the
    upper cell, e.g. u = 0.5 with I = 2 gives i = 1.
    """
    u, v = point
    if not (0.0 <= u < 1.0 and 0.0 <= v < 1.0):
        raise ValidationError("point must lie in the half-open unit square")
    return int(u * spec.rows), int(v * spec.cols)


def _cells_of(u: np.ndarray, v: np.ndarray, spec: CellGridSpec) -> tuple[np.ndarray, np.ndarray]:
    i = np.minimum((u * spec.rows).astype(np.int64), spec.rows - 1)
    j = np.minimum((v * spec.cols).astype(np.int64), spec.cols - 1)
    return i, j


def encode(paths: PathSet, spec: CellGridSpec) -> EncodedLabel:
    """Encode a PathSet into the I x J x 3C label tensor.

    Paths within one cell fill slots in order of descending |gain| (ties broken
    by ascending delay, then Doppler); offsets are the unit-square coordinates
    relative to the cell centroid, scaled by the cell count and shifted by 0.5
    so they land in [0, 1). Unused slots stay zero.
    """
    tensor = np.zeros((spec.rows, spec.cols, spec.channels), dtype=np.float64)
    if len(paths) == 0:
        return EncodedLabel(tensor)
    u, v = normalize_params(paths, spec.region)
    ci, cj = _cells_of(u, v, spec)
    order = sorted(range(len(paths)),
                   key=lambda p: (-np.abs(paths.gains[p]), paths.delays[p], paths.dopplers[p]))
    fill = np.zeros((spec.rows, spec.cols), dtype=np.int64)
    for p in order:
        i, j = ci[p], cj[p]
        slot = fill[i, j]
        if slot >= spec.capacity:
            raise CellOverflowError((i, j), slot + 1, spec.capacity)
        d_tau = (u[p] - (i + 0.5) / spec.rows) * spec.rows + 0.5
        d_alpha = (v[p] - (j + 0.5) / spec.cols) * spec.cols + 0.5
        tensor[i, j, 3 * slot:3 * slot + 3] = (1.0, d_tau, d_alpha)
        fill[i, j] = slot + 1
    return EncodedLabel(tensor)


def encodable(paths: PathSet, spec: CellGridSpec) -> bool:
    """True when all paths sit inside the region with no cell over capacity."""
    if len(paths) == 0:
        return True
    if not np.all(spec.region.contains(paths.delays, paths.dopplers)):
        return False
    u = (paths.delays - spec.region.delay_min) / spec.region.delay_span
    v = (paths.dopplers - spec.region.doppler_min) / spec.region.doppler_span
    i, j = _cells_of(u, v, spec)
    counts = np.bincount(i * spec.cols + j, minlength=spec.rows * spec.cols)
    return int(counts.max(initial=0)) <= spec.capacity


def decode(label, threshold: float, spec: CellGridSpec) -> PathSet:
    """Invert the encoding: emit one path per slot with mu >= threshold.

    Returns a PathSet sorted by descending score whose `gains` field carries
    the detection scores mu (the encoding does not represent complex gains;
    reconstruct those downstream by least squares).
    """
    if not (0.0 < threshold <= 1.0):
        raise ValidationError("threshold must lie in (0, 1]")
    tensor = label.tensor if isinstance(label, EncodedLabel) else np.asarray(label)
    if tensor.shape != (spec.rows, spec.cols, spec.channels):
        raise ValidationError(
            f"label shape {tensor.shape} does not match spec "
            f"({spec.rows}, {spec.cols}, {spec.channels})"
        )
    mu = tensor[:, :, 0::3]
    hits = np.argwhere(mu >= threshold)
    if hits.shape[0] == 0:
        return PathSet.empty()
    i, j, c = hits[:, 0], hits[:, 1], hits[:, 2]
    scores = mu[i, j, c]
    d_tau = tensor[i, j, 3 * c + 1]
    d_alpha = tensor[i, j, 3 * c + 2]
    u = (d_tau - 0.5) / spec.rows + (i + 0.5) / spec.rows
    v = (d_alpha - 0.5) / spec.cols + (j + 0.5) / spec.cols
    region = spec.region
    delays = region.delay_min + u * region.delay_span
    dopplers = region.doppler_min + v * region.doppler_span
    # Doppler is 1-periodic: fold regions that extend past 0.5 back into range
    wrap = (dopplers < -0.5) | (dopplers >= 0.5)
    if np.any(wrap):
        dopplers[wrap] = np.mod(dopplers[wrap] + 0.5, 1.0) - 0.5
        dopplers[dopplers >= 0.5] = np.nextafter(0.5, -1.0)
    order = np.lexsort((c, j, i, -scores))
    return PathSet(scores[order].astype(np.complex128), delays[order], dopplers[order])
