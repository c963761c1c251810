"""Adaptive Taylor-Hood Stokes solver with a diagonalized hierarchical error estimator."""

from .adapt import (IterationRecord, LoopConfig, LoopResult, StokesProblem,
                    adaptive_loop, dorfler_mark)
from .assembly import (apply_dirichlet, assemble_rhs, assemble_taylor_hood,
                       attach_mean_zero)
from .bench import (ConvergenceTable, LShapeSolution, SmoothSolution, error_norms,
                    run_example1, run_example2, solve_lambda)
from .estimator import (Estimate, assemble_error_matrices, assemble_error_residuals,
                        effectivity, estimate, global_estimator, local_estimators,
                        oscillation, solve_first_problem, solve_second_problem,
                        solve_third_problem)
from .mesh import (Mesh, make_lshape_mesh, make_unit_square_mesh, read_mesh, refine,
                   refine_uniform, write_mesh)
from .quadrature import rule
from .solver import SingularSystemError, factor, solve
from .spaces import DofMap, build_dof_maps

__all__ = [
    "IterationRecord",
    "LoopConfig",
    "LoopResult",
    "StokesProblem",
    "adaptive_loop",
    "dorfler_mark",
    "apply_dirichlet",
    "assemble_rhs",
    "assemble_taylor_hood",
    "attach_mean_zero",
    "ConvergenceTable",
    "LShapeSolution",
    "SmoothSolution",
    "error_norms",
    "run_example1",
    "run_example2",
    "solve_lambda",
    "Estimate",
    "assemble_error_matrices",
    "assemble_error_residuals",
    "effectivity",
    "estimate",
    "global_estimator",
    "local_estimators",
    "oscillation",
    "solve_first_problem",
    "solve_second_problem",
    "solve_third_problem",
    "Mesh",
    "make_lshape_mesh",
    "make_unit_square_mesh",
    "read_mesh",
    "refine",
    "refine_uniform",
    "write_mesh",
    "rule",
    "SingularSystemError",
    "factor",
    "solve",
    "DofMap",
    "build_dof_maps",
]

__version__ = "0.1.0"
