"""Littlewood-Paley machinery for non-doubling discrete measures."""

from .measure import (Cube, CubeKind, DiscreteMeasure, MeasureError, ball_mass, cube_mass,
                      doubling_violation, generate_example, growth_constant, is_doubling)
from .geometry import (DeltaValue, DoublingSearchResult, LevelTable, delta, enclosing_cube,
                       find_doubling_inner, find_doubling_outer, verify_delta_properties)
from .lattice import (GenerationLattice, LatticeConfig, build_lattice, verify_nesting,
                      verify_regularity)
from .aoi import (AOI, AOIConfig, BumpProfile, OperatorMatrix, build_aoi, build_s, build_s_tilde,
                  operator_norm, psi_eval, tune_constants, verify_kernel_bounds, verify_phi_norms)
from .report import VerificationReport

__version__ = "0.1.0"
