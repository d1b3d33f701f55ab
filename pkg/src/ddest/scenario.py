"""Bistatic two-sphere rotation scenario: analytic delay/Doppler ground truth.

Two reflectors sit at opposite ends of a beam rotating in the horizontal plane
about a fixed center. For each reflector the bistatic delay is
(||tx - p(t)|| + ||p(t) - rx||)/c and the Doppler shift is the carrier-scaled
negative rate of change of that path length, both evaluated in closed form
from the circular motion.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError

C_LIGHT = 299_792_458.0


@dataclass(frozen=True)
class BistaticScenario:
    """Geometry of the rotating-beam measurement: positions in meters."""

    tx_pos: tuple[float, float, float] = (-1.12, 0.0, 0.0)
    rx_pos: tuple[float, float, float] = (1.12, 0.0, 0.0)
    rotation_center: tuple[float, float, float] = (0.0, 2.0, 0.0)
    beam_length: float = 3.0
    rpm: float = 60.0
    carrier_hz: float = 5.9e9
    start_angle_deg: float = 0.0

    def __post_init__(self):
        if self.beam_length <= 0:
            raise ValidationError("beam_length must be positive")
        if self.carrier_hz <= 0:
            raise ValidationError("carrier_hz must be positive")
        if np.allclose(self.tx_pos, self.rx_pos):
            raise ValidationError("tx and rx must not coincide")

    @property
    def omega(self) -> float:
        """Angular rate in rad/s."""
        return 2.0 * math.pi * self.rpm / 60.0

    @property
    def rotation_period(self) -> float:
        return math.inf if self.rpm == 0 else 60.0 / abs(self.rpm)


def los_delay(scn: BistaticScenario) -> float:
    """Static line-of-sight delay in seconds."""
    d = np.linalg.norm(np.subtract(scn.tx_pos, scn.rx_pos))
    return float(d) / C_LIGHT


@dataclass
class SphereTrajectories:
    """Per-sphere delay (s) and Doppler (Hz) sampled on a common time axis."""

    times: np.ndarray           # (T,)
    delays_s: np.ndarray        # (2, T)
    dopplers_hz: np.ndarray     # (2, T)


def sphere_positions(scn: BistaticScenario, times: np.ndarray) -> np.ndarray:
    """Cartesian positions of both spheres over time, shape (2, T, 3)."""
    times = np.asarray(times, dtype=np.float64)
    theta0 = math.radians(scn.start_angle_deg)
    radius = 0.5 * scn.beam_length
    center = np.asarray(scn.rotation_center, dtype=np.float64)
    # spheres sit at opposite beam ends: pi radians apart in phase
    angles = theta0 + scn.omega * times[None, :] + np.array([[0.0], [math.pi]])
    pos = np.zeros((2, times.size, 3))
    pos[..., 0] = center[0] + radius * np.cos(angles)
    pos[..., 1] = center[1] + radius * np.sin(angles)
    pos[..., 2] = center[2]
    return pos


def sphere_scenario(scn: BistaticScenario, times: np.ndarray) -> SphereTrajectories:
    """Analytic bistatic delay and Doppler trajectories for both spheres."""
    times = np.asarray(times, dtype=np.float64)
    if times.ndim != 1 or times.size == 0:
        raise ValidationError("times must be a non-empty 1-D vector")
    if times.size > 1 and np.any(np.diff(times) <= 0):
        raise ValidationError("times must be strictly increasing")

    pos = sphere_positions(scn, times)                      # (2, T, 3)
    theta0 = math.radians(scn.start_angle_deg)
    radius = 0.5 * scn.beam_length
    angles = theta0 + scn.omega * times[None, :] + np.array([[0.0], [math.pi]])
    vel = np.zeros_like(pos)
    vel[..., 0] = -radius * scn.omega * np.sin(angles)
    vel[..., 1] = radius * scn.omega * np.cos(angles)

    tx = np.asarray(scn.tx_pos, dtype=np.float64)
    rx = np.asarray(scn.rx_pos, dtype=np.float64)
    d_tx = pos - tx                                         # (2, T, 3)
    d_rx = pos - rx
    r_tx = np.linalg.norm(d_tx, axis=-1)
    r_rx = np.linalg.norm(d_rx, axis=-1)
    delays = (r_tx + r_rx) / C_LIGHT
    # d/dt ||p - a|| = (p - a) . v / ||p - a||
    range_rate = (np.sum(d_tx * vel, axis=-1) / r_tx
                  + np.sum(d_rx * vel, axis=-1) / r_rx)
    dopplers = -(scn.carrier_hz / C_LIGHT) * range_rate
    return SphereTrajectories(times=times, delays_s=delays, dopplers_hz=dopplers)
