"""Weak-approximation engine for square-root-diffusion volatility models:
second-order splitting schemes, random-grid boosting to orders 4 and 6,
closed-form references, and a hybrid lattice/finite-difference pricer."""

from .cir import (CirParams, MomentTable, RegimeError, exact_cir_sample,
                  flow_x0, flow_x1, general_second_order_step_A,
                  high_vol_split, moment_exact, nv_cir_step,
                  poisson_first_order_step, psi, second_order_step_B,
                  threshold_k2)
from .engine import Estimate, RunningStats, SlopeFit, regress_slope, run_estimate
from .grids import (GridPlan, allocate_samples, boosted_estimate,
                    correction_variance, coupling_standard,
                    coupling_vol_weighted, draw_grid, estimator_order2,
                    estimator_order3, simulate_coupled, theta_estimate)
from .heston import (HestonParams, LogHestonState, asian_update,
                     bernoulli_step, ex_step, nv_step)
from .hybrid import (HybridLattice, TridiagonalOp, assemble_operator,
                     backward_sweep, build_lattice, hybrid_put_price,
                     implicit_solve, transform_initial)
from .multifactor import (BL2_H01_D3, KernelNodes, MfState, kernel_eval,
                          load_kernel_nodes, mf_step, psi1_flow, remap_Ay,
                          save_kernel_nodes)
from .pricers import (PutSpec, cir_laplace, heston_put_fourier,
                      multifactor_put_fourier, payoff_asian_put, payoff_put)

__version__ = "0.1.0"
