"""Certified reduced-basis suite: fast parametrized elliptic solves with
rigorous output bounds, Monte-Carlo uncertainty quantification of a
random-Robin heat sink, and reduced-basis control variates for
parametrized SDE functionals."""

from .assembly import (AffineForm, T_SINK_ROBIN, THERMAL_BLOCK, TruthSolution,
                       assemble_affine, solve_truth)
from .cv import (ALG1, ALG2, CVBasis, CVEstimate, build_controls, cv_sweep,
                 greedy_offline_cv, online_estimate, solve_combination)
from .klfield import FieldRealization, KLBasis, kl_expand, sample_y
from .kolmogorov import (ControlGrid, hookean_exact_grid, ito_control_variate,
                         kolmogorov_solve_1d)
from .meshing import (DIRICHLET, GAMMA_B, GAMMA_N, GAMMA_R, Mesh, T_SINK,
                      UNIT_SQUARE_DIRICHLET, build_mesh)
from .quadrature import BoundaryQuadrature, boundary_quadrature
from .rb import (OnlineSolution, ReducedBasis, coercivity_lb,
                 effectivity_report, gram_schmidt, greedy_offline,
                 online_solve, online_solve_batch, truncate_basis)
from .sde import (PathEnsemble, SDEModel, black_scholes_1d, fene_dumbbell,
                  hookean_1d, kramers_output, simulate)
from .uq import (MCResult, combine_variance_bound, mc_outputs,
                 total_error_bound)

__version__ = "0.1.0"
