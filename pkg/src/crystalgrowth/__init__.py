"""Simulation and exact analysis of a lamellar crystal growth Markov model."""

__version__ = "0.1.0"

from .model import (Boundary, Configuration, RateTriple, Shape, deposit, neighbor_count,
                    reflect, shape_neighbor_count, shape_of, shape_step, transition_rate)
from .engine import (CoupleSpec, OrderMonitor, StreamFamily, Trajectory, derive_aux_process,
                     run_coupled, run_gillespie, run_poisson)
from .exact import (build_truncated, enumerate_comb_set, mu_n2, region_verdict,
                    solve_stationary, transience_constant, v2, v2_inf, vitesse_threshold)
from .analysis import (CombClassifier, DtildeEstimator, SpeedEstimator, TailEstimator,
                       classify_comb, empirical_shape_distribution, estimate_dtilde,
                       estimate_speeds, fit_tail)
