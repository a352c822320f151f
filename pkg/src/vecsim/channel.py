"""Radio link budget: log-distance path loss, log-normal shadowing, Shannon rate.

All dB/dBm conversions happen here. Gains are linear power ratios; rates are
bits per second. Shadowing is drawn once per vehicle per round by the caller
and the resulting rates are stored on the VehicleState.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from vecsim.mobility import VehicleState


@dataclass
class PathLossLaw:
    """PL(d) = intercept_db + slope * log10(d_km), shadowing sigma in dB."""

    intercept_db: float
    slope: float
    shadow_sigma_db: float


@dataclass
class ChannelParams:
    bandwidth_hz: float = 540e3
    p_rsu_dbm: float = 30.0
    p_mbs_dbm: float = 43.0
    noise_dbm: float = -114.0  # total noise power over the band
    wired_rate_bps: float = 15e6  # fixed RSU-to-RSU link
    v2r: PathLossLaw = field(default_factory=lambda: PathLossLaw(103.8, 20.9, 4.0))
    v2b: PathLossLaw = field(default_factory=lambda: PathLossLaw(128.1, 37.6, 8.0))
    rsu_offset_m: float = 10.0  # lateral offset of the RSU at the road midpoint
    # The macro cell serves several RSU segments, so it sits well outside this
    # one; anything much closer makes the V2B link faster than the wired
    # neighbor path and collapses the three delay tiers.
    mbs_offset_m: float = 1200.0

    def validate(self) -> None:
        if self.bandwidth_hz <= 0:
            raise ValueError("bandwidth must be positive")
        if self.wired_rate_bps <= 0:
            raise ValueError("wired rate must be positive")
        if self.v2r.shadow_sigma_db < 0 or self.v2b.shadow_sigma_db < 0:
            raise ValueError("shadowing sigma must be >= 0")


def dbm_to_mw(dbm: float) -> float:
    return 10.0 ** (dbm / 10.0)


def distance(endpoint: str, v: VehicleState, params: ChannelParams, coverage_m: float) -> float:
    """Euclidean distance in meters from the vehicle to 'rsu' or 'mbs'.

    Both endpoints sit at the coverage midpoint with their lateral offsets,
    so the distance is never zero.
    """
    along = v.position - coverage_m / 2.0
    if endpoint == "rsu":
        return math.hypot(along, params.rsu_offset_m)
    if endpoint == "mbs":
        return math.hypot(along, params.mbs_offset_m)
    raise ValueError(f"unknown endpoint {endpoint!r}")


def path_loss_db(d_m: float, law: PathLossLaw) -> float:
    if d_m <= 0:
        raise ValueError(f"distance must be positive, got {d_m}")
    return law.intercept_db + law.slope * math.log10(d_m / 1000.0)


def channel_gain(rng: np.random.Generator, d_m: float, law: PathLossLaw) -> float:
    """Linear power gain with one fresh shadowing draw (Normal in dB)."""
    shadow_db = rng.normal(0.0, law.shadow_sigma_db) if law.shadow_sigma_db > 0 else 0.0
    return 10.0 ** (-(path_loss_db(d_m, law) + shadow_db) / 10.0)


def shannon_rate(gain: float, tx_power_dbm: float, params: ChannelParams) -> float:
    """B * log2(1 + SNR) in bits/s; SNR formed in linear milliwatt units."""
    if gain < 0:
        raise ValueError(f"gain must be >= 0, got {gain}")
    snr = dbm_to_mw(tx_power_dbm) * gain / dbm_to_mw(params.noise_dbm)
    return params.bandwidth_hz * math.log2(1.0 + snr)


def draw_round_links(
    rng: np.random.Generator,
    vehicles: list[VehicleState],
    params: ChannelParams,
    coverage_m: float,
) -> None:
    """Fill rate_v2r / rate_v2b on every vehicle for the current round."""
    for v in vehicles:
        g_r = channel_gain(rng, distance("rsu", v, params, coverage_m), params.v2r)
        g_b = channel_gain(rng, distance("mbs", v, params, coverage_m), params.v2b)
        v.rate_v2r = shannon_rate(g_r, params.p_rsu_dbm, params)
        v.rate_v2b = shannon_rate(g_b, params.p_mbs_dbm, params)
