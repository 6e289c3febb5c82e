"""Linear-quadratic control of discretized stochastic Volterra integral equations."""
from .errors import (ConvergenceError, ConvexityError, DomainError, H4ViolationError,
                     RegularityError, SimulationError, SpecError, VolterraLQError)
from .grid import (DiscretePath, SampledCoefficients, TimeGrid, build_grid, discretize_path,
                   sample_spec)
from .model import (FreePath, KernelSpec, ProblemSpec, TimeWeight, ValidationReport,
                    constant_problem, eval_kernel, validate_spec)
from .riccati import (LiftedSystem, PicardTrace, RiccatiSolution, bilinear_norms, build_lifted,
                      feedback_control, lyapunov_step, picard_solve, solve_dp, solve_problem,
                      value_at)
from .sde_reduce import compare_with_volterra, integrate_riccati_ode
from .simulate import NoiseDriver, SimReport, propagate_aux, simulate_closed_loop, simulate_open_loop

__version__ = "0.1.0"
