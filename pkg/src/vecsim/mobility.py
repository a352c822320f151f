"""Vehicle population dynamics on a one-directional road segment.

Velocities follow a truncated Gaussian (km/h, stored as m/s); the number of
vehicles inside the coverage area is Poisson in density mode. Positions are
1-D meters traversed since entering coverage.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Iterable, Optional

import numpy as np

if TYPE_CHECKING:  # pragma: no cover
    from vecsim.autoencoder import AEGradient
    from vecsim.dataset import LocalData

KMH_TO_MS = 1000.0 / 3600.0


@dataclass
class MobilityParams:
    """Velocity distribution and population model.

    mu, sigma, u_min, u_max are in km/h. Exactly one of density (vehicles
    per km, Poisson population) or arrival_rate (vehicles per second,
    Poisson arrivals) drives the population.
    """

    mu: float = 55.0
    sigma: float = 2.5
    u_min: float = 50.0
    u_max: float = 60.0
    density: Optional[float] = 15.0
    arrival_rate: Optional[float] = None

    def validate(self) -> None:
        if not self.u_min < self.u_max:
            raise ValueError(f"u_min must be < u_max, got [{self.u_min}, {self.u_max}]")
        if self.sigma <= 0:
            raise ValueError(f"sigma must be positive, got {self.sigma}")
        if (self.density is None) == (self.arrival_rate is None):
            raise ValueError("exactly one of density or arrival_rate must be set")
        rate = self.density if self.density is not None else self.arrival_rate
        if rate < 0:
            raise ValueError(f"population rate must be >= 0, got {rate}")


@dataclass
class VehicleState:
    """One vehicle inside coverage: kinematics plus per-round attachments."""

    id: int
    position: float  # meters traversed within coverage, in [0, L_s)
    velocity: float  # m/s
    dataset: "LocalData | None" = None
    delayed_gradient: "AEGradient | None" = None
    # Shannon rates for this round's links, filled in by the harness.
    rate_v2r: float = 0.0
    rate_v2b: float = 0.0


def truncated_gaussian_pdf(u, params: MobilityParams):
    """Density of the truncated Gaussian velocity law at u km/h.

    Normalized so the integral over [u_min, u_max] is 1; zero outside.
    Accepts scalars or numpy arrays.
    """
    za = (params.u_min - params.mu) / (params.sigma * math.sqrt(2.0))
    zb = (params.u_max - params.mu) / (params.sigma * math.sqrt(2.0))
    norm = math.sqrt(2.0 * math.pi * params.sigma**2) * (math.erf(zb) - math.erf(za)) / 2.0
    u_arr = np.asarray(u, dtype=float)
    dens = np.exp(-((u_arr - params.mu) ** 2) / (2.0 * params.sigma**2)) / norm
    dens = np.where((u_arr >= params.u_min) & (u_arr <= params.u_max), dens, 0.0)
    return float(dens) if np.isscalar(u) else dens


def sample_velocity(rng: np.random.Generator, params: MobilityParams) -> float:
    """Draw one velocity in m/s by rejection against the untruncated Gaussian."""
    while True:
        u = rng.normal(params.mu, params.sigma)
        if params.u_min <= u <= params.u_max:
            return u * KMH_TO_MS


def staying_time(v: VehicleState, coverage_m: float) -> float:
    """Seconds until the vehicle leaves coverage at its current velocity."""
    if v.velocity <= 0:
        raise ValueError(f"velocity must be positive, got {v.velocity}")
    return (coverage_m - v.position) / v.velocity


def select_participants(
    vehicles: Iterable[VehicleState],
    coverage_m: float,
    t_training: float,
    t_inference: float,
) -> list[VehicleState]:
    """Vehicles staying strictly longer than training plus inference time."""
    threshold = t_training + t_inference
    return [v for v in vehicles if staying_time(v, coverage_m) > threshold]


@dataclass
class PopulationModel:
    """Round-by-round population updater; owns the vehicle id counter."""

    params: MobilityParams
    coverage_m: float
    round_duration_s: float
    _next_id: int = field(default=0)

    def spawn_round(
        self, rng: np.random.Generator, previous: list[VehicleState]
    ) -> list[VehicleState]:
        """Advance survivors, apply arrivals/departures, re-draw velocities.

        Density mode keeps the population count exactly Poisson with mean
        density * coverage_km each round: survivors past the exit are
        dropped, a fresh Poisson target is drawn, deficits are filled with
        arrivals at position 0 and surpluses are removed starting from the
        vehicles closest to the exit. Arrival-rate mode adds
        Poisson(arrival_rate * round_duration) arrivals and only natural
        departures occur.
        """
        self.params.validate()
        survivors = []
        for v in previous:
            new_pos = v.position + v.velocity * self.round_duration_s
            if new_pos < self.coverage_m:
                v.position = new_pos
                survivors.append(v)

        if self.params.density is not None:
            target = int(rng.poisson(self.params.density * self.coverage_m / 1000.0))
            if len(survivors) > target:
                survivors.sort(key=lambda v: (-v.position, v.id))
                survivors = survivors[len(survivors) - target :]
            kept = sorted(survivors, key=lambda v: v.id)
            n_new = target - len(kept)
        else:
            kept = sorted(survivors, key=lambda v: v.id)
            n_new = int(rng.poisson(self.params.arrival_rate * self.round_duration_s))

        for v in kept:
            v.velocity = sample_velocity(rng, self.params)
        out = kept
        for _ in range(n_new):
            out.append(
                VehicleState(
                    id=self._next_id,
                    position=0.0,
                    velocity=sample_velocity(rng, self.params),
                )
            )
            self._next_id += 1
        return out


def spawn_round(
    rng: np.random.Generator,
    params: MobilityParams,
    previous: list[VehicleState],
    coverage_m: float = 1000.0,
    round_duration_s: float = 10.0,
    next_id: int = 0,
) -> list[VehicleState]:
    """One-shot population update; see PopulationModel.spawn_round."""
    model = PopulationModel(params, coverage_m, round_duration_s, _next_id=next_id)
    if previous:
        model._next_id = max(next_id, max(v.id for v in previous) + 1)
    return model.spawn_round(rng, previous)
