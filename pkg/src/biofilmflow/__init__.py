"""Desk-scale solver for coupled biofilm growth in an incompressible flow.

Three sub-systems advance together on a staggered box grid:

* biomass density u: implicit step of a degenerate nonlinear diffusion
  with transport of the mollified, boundary-cutoff density;
* nutrient concentration w: semi-implicit advection-diffusion with
  Monod consumption;
* fluid velocity v: viscous prediction followed by metric projection
  onto the divergence-free fields obeying a pointwise speed ceiling
  that depends on the locally averaged biomass.

Per time step the three solves are iterated to a fixed point of the
biomass field (Picard). See README.md for the CLI and file formats.
"""

from .config import SimConfig, load_config, parse_config, print_config
from .constitutive import ModelParams, validate_params
from .coupling import CouplingConfig, SimState, make_stepper, picard_step, run
from .grid import Grid, ScalarField, VectorField, build_grid

__all__ = [
    "Grid",
    "ScalarField",
    "VectorField",
    "build_grid",
    "ModelParams",
    "validate_params",
    "SimConfig",
    "parse_config",
    "load_config",
    "print_config",
    "SimState",
    "CouplingConfig",
    "make_stepper",
    "picard_step",
    "run",
]

__version__ = "0.1.0"
