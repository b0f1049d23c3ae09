"""Ready-made scenarios: the 20 x 16 m lake section and smaller verification cases."""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .control import InitialState, ProblemSpec, Scenario
from .eutro import EutroParams
from .hydro import HydroParams
from .mesh import Interval, PumpSpec, generate_rect_mesh
from .series import TimeSeries
from .thermal import ThermoParams

# collector (1 m on a side wall) and injector (2 m on the bottom) per pump
LAKE_PUMPS = (
    PumpSpec(Interval("left", 14.0, 15.0), Interval("bottom", 2.0, 4.0)),
    PumpSpec(Interval("left", 5.0, 6.0), Interval("bottom", 6.0, 8.0)),
    PumpSpec(Interval("right", 14.0, 15.0), Interval("bottom", 16.0, 18.0)),
    PumpSpec(Interval("right", 5.0, 6.0), Interval("bottom", 12.0, 14.0)),
)
UPPER_PUMPS = (0, 2)
LOWER_PUMPS = (1, 3)


@dataclass(frozen=True)
class InitialProfiles:
    """Vertical initial profiles (``y`` measured up from the bottom)."""

    theta: float = 293.15
    nutrient: float = 0.1
    phytoplankton: float = 0.3
    zooplankton: float = 0.05
    detritus_top: float = 0.5
    detritus_bottom: float = 2.0
    detritus_scale: float = 3.0
    oxygen_mid: float = 6.5
    oxygen_half_range: float = 2.5
    oxycline: float = 9.0
    oxycline_width: float = 1.5

    def build(self, vertices):
        y = vertices[:, 1]
        nv = len(y)
        theta = np.full(nv, self.theta)
        u = np.empty((5, nv))
        u[0] = self.nutrient
        u[1] = self.phytoplankton
        u[2] = self.zooplankton
        u[3] = self.detritus_top + (self.detritus_bottom - self.detritus_top) * np.exp(-y / self.detritus_scale)
        u[4] = self.oxygen_mid + self.oxygen_half_range * np.tanh((y - self.oxycline) / self.oxycline_width)
        return theta, u


def lake_forcing(T: float, dt: float, theta: float = 293.15):
    end = T + dt
    radiation = TimeSeries.constant(theta)
    light = TimeSeries.day_bump(0.0, 400.0, 0.0, end)
    return radiation, light


def lake_scenario(nx: int = 40, ny: int = 32, dt: float = 450.0, T: float = 43200.0,
                  pumps=LAKE_PUMPS, strip: float = 3.0, profiles: InitialProfiles = InitialProfiles(),
                  reference_rate: float = 1.0e-4, problem: dict | None = None, name: str = "lake") -> Scenario:
    """Vertical 20 x 16 m section with four collector/injector pairs and a 3 m control strip."""
    mesh = generate_rect_mesh(20.0, 16.0, nx, ny, pumps=pumps, control_strip_height=strip)
    radiation, light = lake_forcing(T, dt)
    theta0, u0 = profiles.build(mesh.vertices)
    spec = ProblemSpec(T=T, dt=dt, **(problem or {}))
    N = spec.N
    return Scenario(
        mesh=mesh,
        hydro=HydroParams(theta0=profiles.theta),
        thermo=ThermoParams(theta_N=profiles.theta, theta_S=profiles.theta, radiation=radiation),
        eutro=EutroParams(theta_ref=profiles.theta, light=light),
        problem=spec,
        initial=InitialState(theta=theta0, species=u0),
        reference=np.full((N, len(pumps)), reference_rate) if pumps else None,
        name=name,
    )


def coarse_scenario(N: int = 6, dt: float = 1800.0, n_pumps: int = 2, nx: int = 20, ny: int = 16) -> Scenario:
    """Roughly 300-node lake section used for Jacobian verification."""
    pumps = tuple(LAKE_PUMPS[i] for i in (0, 2, 1, 3)[:n_pumps])
    return lake_scenario(nx=nx, ny=ny, dt=dt, T=N * dt, pumps=pumps, name="coarse")


def verification_schedule(N: int, n_pumps: int, base: float = 1.0e-4) -> np.ndarray:
    """A smooth, non-constant interior schedule."""
    n = np.arange(1, N + 1)[:, None]
    k = np.arange(n_pumps)[None, :]
    return base * (1.0 + 0.3 * np.sin(0.9 * n + 1.3 * k) + 0.1 * k)


def tiny_scenario(N: int = 2, dt: float = 1800.0) -> Scenario:
    """About 100 nodes, one pump: small enough for exhaustive search over schedules."""
    pumps = (PumpSpec(Interval("left", 6.0, 7.0), Interval("bottom", 2.0, 4.0)),)
    mesh = generate_rect_mesh(10.0, 8.0, 10, 8, pumps=pumps, control_strip_height=2.0)
    T = N * dt
    radiation, light = lake_forcing(T, dt)
    prof = replace(InitialProfiles(), oxycline=5.0, oxycline_width=1.0)
    theta0, u0 = prof.build(mesh.vertices)
    return Scenario(
        mesh=mesh,
        hydro=HydroParams(theta0=prof.theta),
        thermo=ThermoParams(theta_N=prof.theta, theta_S=prof.theta, radiation=radiation),
        eutro=EutroParams(theta_ref=prof.theta, light=light),
        problem=ProblemSpec(T=T, dt=dt, c1=0.0, c2=4.0e-4),
        initial=InitialState(theta=theta0, species=u0),
        reference=np.array([[1.0e-4], [2.0e-4]])[:N] if N <= 2 else np.full((N, 1), 1.5e-4),
        name="tiny",
    )
