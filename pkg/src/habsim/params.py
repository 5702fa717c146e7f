"""Model constants shared by the environment generator and the fog/cloud services."""

from __future__ import annotations

import math
from dataclasses import dataclass

M_PER_DEG_LAT = 111_320.0


def m_per_deg_lon(ref_lat: float) -> float:
    return M_PER_DEG_LAT * math.cos(math.radians(ref_lat))


def velocity_to_deg(wfv: float, wfu: float, seconds: float, ref_lat: float) -> tuple[float, float]:
    """Displacement in degrees (lat, lon) after moving at (north, east) m/s for ``seconds``.

    Small-area equirectangular approximation around ``ref_lat``.
    """
    return wfv * seconds / M_PER_DEG_LAT, wfu * seconds / m_per_deg_lon(ref_lat)


def distance_m(lat1: float, lon1: float, lat2: float, lon2: float, ref_lat: float | None = None) -> float:
    ref = (lat1 + lat2) / 2 if ref_lat is None else ref_lat
    dy = (lat2 - lat1) * M_PER_DEG_LAT
    dx = (lon2 - lon1) * m_per_deg_lon(ref)
    return math.hypot(dx, dy)


@dataclass(frozen=True)
class BloomParams:
    """Growth/decay/advection constants of the bloom model (per hour of virtual time)."""

    K1: float = 5.0
    K2: float = 0.05
    K3: float = 0.17
    Kv: float = 0.0167
    r0: float = 0.05
    detect_threshold: float = 0.25

    def __post_init__(self):
        for name in ("K1", "K2", "K3", "Kv"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0):
                raise ValueError(f"{name} must be positive and finite, got {v}")
        if not (self.detect_threshold > self.r0 >= 0):
            raise ValueError("need detect_threshold > r0 >= 0")


@dataclass(frozen=True)
class SedimentParams:
    """Rainfall-driven nitrate source: first-order filter plus scale to nitrate units."""

    tau: float = 24.0        # hours
    gain: float = 1.0        # sediment units per mm of rain
    nox_scale: float = 0.01  # mg/L of nitrate per sediment unit
    nox_base: float = 0.002  # background nitrate, mg/L

    def __post_init__(self):
        if not self.tau > 0:
            raise ValueError("tau must be positive")
        if self.gain < 0 or self.nox_scale < 0 or self.nox_base < 0:
            raise ValueError("gain, nox_scale and nox_base must be non-negative")
