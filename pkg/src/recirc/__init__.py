"""Lake recirculation model and pump-schedule optimizer."""
from .control import ControlSchedule, InitialState, ProblemSpec, Scenario, constraint_values, cost, simulate
from .eutro import EutroParams
from .fem import Discretization, SolverError
from .hydro import HydroParams
from .mesh import Interval, Mesh, MeshError, PumpSpec, generate_rect_mesh, load_mesh, save_mesh
from .optimizer import OptimizationReport, OptimizerConfig, kkt_residual, optimize
from .scenarios import coarse_scenario, lake_scenario, tiny_scenario
from .sensitivity import check_gradient, jacobian_adjoint, jacobian_fd, jacobian_linearized
from .series import TimeSeries
from .thermal import ThermoParams

__all__ = [
    "ControlSchedule", "Discretization", "EutroParams", "HydroParams", "InitialState", "Interval", "Mesh",
    "MeshError", "OptimizationReport", "OptimizerConfig", "ProblemSpec", "PumpSpec", "Scenario", "SolverError",
    "ThermoParams", "TimeSeries", "check_gradient", "coarse_scenario", "constraint_values", "cost",
    "generate_rect_mesh", "jacobian_adjoint", "jacobian_fd", "jacobian_linearized", "kkt_residual",
    "lake_scenario", "load_mesh", "optimize", "save_mesh", "simulate", "tiny_scenario",
]
