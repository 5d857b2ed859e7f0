"""Determinantal sampling designs for two-stage indirect survey sampling."""

from .kernel import (
    Kernel,
    KernelError,
    InfeasibleDiagonalError,
    ProbabilityVector,
    complement_kernel,
    delta_matrix,
    givens_update,
    ht_variance,
    inclusion_prob,
    poisson_kernel,
    projection_kernel_with_diagonal,
    restrict_kernel,
)
from .sampler import (
    EnumerationLimitError,
    SampleSet,
    exact_law,
    exact_set_probability,
    sample_dpp,
    sample_dpp_batch,
)
from .linkage import (
    LinkageError,
    LinkStructure,
    SecondStageDesign,
    ValidationReport,
    WeightMatrix,
    build_link_structure,
    constraint_matrix,
    second_stage_kernel,
    validate,
)
from .gwsm import (
    GwsmError,
    GwsmEstimate,
    VarianceModel,
    gwsm_estimate,
    gwsm_variance,
    moment_matrix,
    one_stage_tilde_delta_ab,
    optimal_second_stage_probs,
    optimal_theta,
    q_matrix,
    tilde_delta_a,
    tilde_delta_ab_h34,
)
from .target import (
    TargetProbabilities,
    TargetProbabilityError,
    ht_target_estimate,
    ht_target_variance,
    one_stage_target_probs,
    pi1b_first,
    pi1b_joint,
    pi2b_first,
    pi2b_joint,
    two_stage_target_probs,
)
from .instance import Frames, Instance, InstanceError
from .optimizer import (
    ObjectiveBreakdown,
    OptimizerState,
    coordinate_descent,
    greedy_givens_pass,
    initial_state,
    objective,
)

__version__ = "0.1.0"
