"""Joint task offloading, CPU allocation and MIMO beamforming for D2D edge networks."""

from .cpu_alloc import CpuAllocation, CpuSubproblem, equal_cpu_allocation, optimal_cpu_allocation
from .errors import D2DError, InfeasibleError, InvalidParameterError, InvalidStateError, TooLargeError
from .mcob import mcob, solve_beamformer_qcqp
from .overhead import AllocationState, BeamformingState, OverheadReport, total_overhead
from .scenario import NetworkScenario, ScenarioParams, distort_csi, generate_scenario
from .solvers import (Solution, alternate_optimize, enumerate_assignments, equal_cpu_baseline,
                      exhaustive_optimize, local_only, wmmse_baseline)
from .topology import greedy_allocate

__version__ = "0.1.0"
