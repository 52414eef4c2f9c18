"""Numerical checks of Carleman weights built from the hyperquadric on model Lorentzian spacetimes.

The geometry layers (metrics, geodesics, frame transport, the
hyperquadric and its pseudoconvex shift) feed a Carleman layer that
evaluates the conjugated wave operator, and a 1+1 boundary-control layer
that runs HUM on a leapfrog discretisation.
"""

from .carleman import CarlemanParams, integrated_carleman, phi_suite, slab_geometry, weight_function
from .config import Config, ConfigError, load_config, write_config
from .geodesics import exp_map, integrate_geodesic, log_map, parallel_transport
from .leapfrog import BACKEND
from .metrics import CATALOG, Conformal, Minkowski, Warped, make_model
from .pseudoconvexity import PcParams, pseudoconvexity_check
from .report import CheckRow, read_report, write_report
from .wave_control import WaveConfig, build_problem, forward_solve, hum_control, observability_probe

__all__ = [
    "BACKEND",
    "CATALOG",
    "CarlemanParams",
    "CheckRow",
    "Config",
    "ConfigError",
    "Conformal",
    "Minkowski",
    "PcParams",
    "WaveConfig",
    "Warped",
    "build_problem",
    "exp_map",
    "forward_solve",
    "hum_control",
    "integrate_geodesic",
    "integrated_carleman",
    "load_config",
    "log_map",
    "make_model",
    "observability_probe",
    "parallel_transport",
    "phi_suite",
    "pseudoconvexity_check",
    "read_report",
    "slab_geometry",
    "weight_function",
    "write_config",
    "write_report",
]
