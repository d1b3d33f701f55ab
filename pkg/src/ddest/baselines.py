"""Classical estimators: residual peak picking, successive-cancellation ML,
and EDC model order selection.

The successive-cancellation loop grows the model one path at a time: pick the
strongest residual peak on an oversampled raster, refit gains by least
squares, refine all paths jointly with Gauss-Newton, and repeat until the
stopping rule fires.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .channel import PathSet, Snapshot, synthesize_channel
from .errors import NumericalError, ValidationError
from .preprocess import RegionOfInterest, zoom_dft_2d
from .refine import GnConfig, blue_gains, pack_params, gauss_newton_refine, unpack_params

# relative residual floor: below this the fit is numerically exact and RSS
# carries no information (float64 LS residuals of exact models sit near 1e-30)
RSS_REL_FLOOR = 1e-24


def full_range_region(grid, oversample: int = 4) -> RegionOfInterest:
    """Whole unambiguous delay/Doppler plane at `oversample` points per bin."""
    return RegionOfInterest(0.0, 1.0, -0.5, 0.5,
                            height=oversample * grid.n_freq,
                            width=oversample * grid.n_time)


def residual_peak(residual: np.ndarray, snapshot: Snapshot,
                  region: RegionOfInterest) -> tuple[float, float]:
    """(delay, doppler) of the strongest matched-filter response in the region."""
    spectrum = zoom_dft_2d(residual, region, snapshot.grid)
    h, w = np.unravel_index(int(np.argmax(np.abs(spectrum))), spectrum.shape)
    return float(region.delay_axis()[h]), float(region.doppler_axis()[w])


@dataclass
class SicTrace:
    """Per-order state of one successive-cancellation run."""

    rss: list = field(default_factory=list)      # rss[k] = residual power with k paths
    fits: list = field(default_factory=list)     # fits[k] = PathSet with k paths


def _sic_fit(snapshot: Snapshot, p_max: int, region: RegionOfInterest,
             gn_cfg: GnConfig, sigma) -> SicTrace:
    """Fit 0..p_max paths incrementally; stops early once RSS hits the floor."""
    y = snapshot.data
    rss0 = float(np.sum(np.abs(y) ** 2))
    trace = SicTrace(rss=[rss0], fits=[PathSet.empty()])
    if rss0 == 0.0:
        return trace
    floor = RSS_REL_FLOOR * rss0
    paths = PathSet.empty()
    for _ in range(p_max):
        if trace.rss[-1] <= floor:
            break
        residual = y - synthesize_channel(paths, snapshot.grid)
        tau, alpha = residual_peak(residual, snapshot, region)
        delays = np.append(paths.delays, tau)
        dopplers = np.append(paths.dopplers, alpha)
        try:
            gains, _ = blue_gains(delays, dopplers, snapshot)
            theta0 = np.empty(4 * delays.size)
            theta0[0::4] = gains.real
            theta0[1::4] = gains.imag
            theta0[2::4] = delays
            theta0[3::4] = dopplers
            result = gauss_newton_refine(theta0, snapshot, gn_cfg, sigma=sigma)
            gains, delays, dopplers = unpack_params(result.theta)
            gains, rss = blue_gains(delays, dopplers, snapshot)
        except NumericalError as exc:
            warnings.warn(f"model order {delays.size}: fit failed ({exc}); stopping search")
            break
        keep = np.abs(gains) > 0.0
        if not np.all(keep):
            # a path collapsed to zero gain; drop it and stop growing
            break
        paths = PathSet(gains, delays, dopplers)
        trace.rss.append(rss)
        trace.fits.append(paths)
    return trace


def edc_values(rss: np.ndarray, n_real: int) -> np.ndarray:
    """EDC(k) = N ln(RSS_k / N) + 4k * sqrt(N ln ln N) over k = 0..K."""
    rss = np.asarray(rss, dtype=np.float64)
    scale = rss[0] if rss[0] > 0 else 1.0
    rss_eff = np.maximum(rss, RSS_REL_FLOOR * scale)
    penalty = math.sqrt(n_real * math.log(math.log(n_real)))
    k = np.arange(rss.size)
    return n_real * np.log(rss_eff / n_real) + 4.0 * k * penalty


def iterative_ml(snapshot: Snapshot, p_max: int, stop_rule: str = "edc",
                 region: Optional[RegionOfInterest] = None, oversample: int = 4,
                 gn_cfg: Optional[GnConfig] = None, sigma=None,
                 rss_rel_tol: float = 1e-12) -> PathSet:
    """Successive-cancellation maximum-likelihood estimate of up to p_max paths.

    stop_rule: "edc" stops when the detection criterion stops improving,
    "floor" when the residual power falls below rss_rel_tol relative to the
    input power, "fixed" returns exactly p_max paths (data permitting).
    """
    if p_max < 1:
        raise ValidationError("p_max must be at least 1")
    if stop_rule not in ("edc", "floor", "fixed"):
        raise ValidationError("stop_rule must be one of 'edc', 'floor', 'fixed'")
    region = region or full_range_region(snapshot.grid, oversample)
    gn_cfg = gn_cfg or GnConfig(max_iters=8)
    trace = _sic_fit(snapshot, p_max, region, gn_cfg, sigma)
    fitted = len(trace.fits) - 1
    if stop_rule == "fixed":
        return trace.fits[fitted]
    if stop_rule == "floor":
        floor = rss_rel_tol * trace.rss[0] if trace.rss[0] > 0 else 0.0
        for k in range(len(trace.rss)):
            if trace.rss[k] <= floor:
                return trace.fits[k]
        return trace.fits[fitted]
    n_real = 2 * snapshot.grid.n_freq * snapshot.grid.n_time
    k_hat = int(np.argmin(edc_values(np.asarray(trace.rss), n_real)))
    return trace.fits[k_hat]


def edc_model_order(snapshot: Snapshot, p_max: int,
                    inner_estimator: Optional[Callable[[Snapshot, int], PathSet]] = None,
                    region: Optional[RegionOfInterest] = None,
                    gn_cfg: Optional[GnConfig] = None, sigma=None) -> int:
    """Model order minimizing EDC(k) over k = 0..p_max.

    The default inner estimator is the successive-cancellation fit, evaluated
    incrementally (its k-path state equals an independent run capped at k). A
    custom inner_estimator(snapshot, k) -> PathSet is run per order; orders
    where it fails are skipped with a warning.
    """
    if p_max < 1:
        raise ValidationError("p_max must be at least 1")
    n_real = 2 * snapshot.grid.n_freq * snapshot.grid.n_time
    y = snapshot.data
    rss0 = float(np.sum(np.abs(y) ** 2))
    if rss0 == 0.0:
        return 0
    if inner_estimator is None:
        region = region or full_range_region(snapshot.grid)
        gn_cfg = gn_cfg or GnConfig(max_iters=8)
        trace = _sic_fit(snapshot, p_max, region, gn_cfg, sigma)
        orders = list(range(len(trace.rss)))
        rss = list(trace.rss)
    else:
        orders, rss = [0], [rss0]
        failures = 0
        for k in range(1, p_max + 1):
            try:
                fit = inner_estimator(snapshot, k)
                resid = y - synthesize_channel(fit, snapshot.grid)
                orders.append(k)
                rss.append(float(np.sum(np.abs(resid) ** 2)))
            except Exception as exc:  # estimator-defined failures
                failures += 1
                warnings.warn(f"inner estimator failed at order {k}: {exc}")
        if failures == p_max:
            raise NumericalError("inner estimator failed at every model order")
    values = edc_values(np.asarray(rss), n_real)
    return orders[int(np.argmin(values))]
