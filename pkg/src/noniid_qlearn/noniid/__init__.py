"""Wrappers for i.i.d. learners, success criteria and application protocols."""

from .algorithms import (
    GeneralWrapper,
    IidAlgorithmSpec,
    MeasurementEngine,
    NonIidWrapper,
    RunRecord,
    algorithm1_run,
    algorithm2_run,
    algorithm3_run,
    conditional_on_prediction,
    coverage_block,
    coverage_failure_bound,
    coverage_failure_probability,
    first_hits,
    max_k_a,
    run_iid,
)
from .appendix_a import appendix_a_distribution_check, appendix_a_experiment, exact_delta_prime
from .errors import (
    ErrorEstimate,
    delta_prime,
    error_probability_with_calibration,
    error_probability_without_calibration,
    iid_error_probability,
    shift_probability_bound,
    general_shift_bound,
    shift_frequency,
    sup_branch_delta_a,
    wrapper_error_bound,
    wilson,
)
from .predicates import (
    DFunction,
    FidelityEst,
    Mixedness,
    MixednessD,
    ShadowMax,
    ShadowTomography,
    SuccessPredicate,
    Tomography,
    TraceDist,
    VerifyD,
    VerifyPure,
    evaluate_dfunction,
    evaluate_success,
)
from .predictions import Bit, CoverageFailure, ExpectationTuple, Scalar, StateDescription, as_prediction
from .protocols import (
    clifford_pool,
    fidelity_protocol,
    fidelity_spec,
    flammia_liu_estimates,
    mixedness_protocol,
    mixedness_spec,
    pauli_sampling_law,
    shadow_protocol,
    shadow_spec,
    tomography_protocol,
    tomography_spec,
    verification_expectation,
    verify_pure_protocol,
    verify_spec,
    wrapper_for,
)


__all__ = [
    "Bit",
    "CoverageFailure",
    "DFunction",
    "ErrorEstimate",
    "ExpectationTuple",
    "FidelityEst",
    "GeneralWrapper",
    "IidAlgorithmSpec",
    "MeasurementEngine",
    "Mixedness",
    "MixednessD",
    "NonIidWrapper",
    "RunRecord",
    "Scalar",
    "ShadowMax",
    "ShadowTomography",
    "StateDescription",
    "SuccessPredicate",
    "Tomography",
    "TraceDist",
    "VerifyD",
    "VerifyPure",
    "algorithm1_run",
    "algorithm2_run",
    "algorithm3_run",
    "appendix_a_distribution_check",
    "appendix_a_experiment",
    "as_prediction",
    "clifford_pool",
    "conditional_on_prediction",
    "coverage_block",
    "coverage_failure_bound",
    "coverage_failure_probability",
    "delta_prime",
    "error_probability_with_calibration",
    "error_probability_without_calibration",
    "evaluate_dfunction",
    "evaluate_success",
    "exact_delta_prime",
    "fidelity_protocol",
    "fidelity_spec",
    "first_hits",
    "flammia_liu_estimates",
    "general_shift_bound",
    "iid_error_probability",
    "max_k_a",
    "mixedness_protocol",
    "mixedness_spec",
    "pauli_sampling_law",
    "run_iid",
    "shadow_protocol",
    "shadow_spec",
    "shift_frequency",
    "sup_branch_delta_a",
    "shift_probability_bound",
    "tomography_protocol",
    "tomography_spec",
    "verification_expectation",
    "verify_pure_protocol",
    "verify_spec",
    "wilson",
    "wrapper_error_bound",
    "wrapper_for",
]
