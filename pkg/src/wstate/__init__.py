"""Weighted states: nonlinear transformations of quantum states by
classically reweighted instruments, with exact simulation, shot-based
estimation, and variance analysis."""

from .errors import (
    AllocationError,
    DimensionMismatch,
    EmptyDecomposition,
    FullyDestructive,
    InvalidDistribution,
    InvalidGrid,
    InvalidState,
    MissingDecomposition,
    NotNormal,
    NotUnitary,
    NumericalPreconditionError,
    OrthogonalInputs,
    OrthogonalIntermediate,
    SchemaError,
    UnknownExperiment,
    UnknownLabel,
    ValidationError,
    VanishingOverlapProduct,
    WstateError,
    ZeroBeta,
)
from .experiments import ResultTable, family_state, run_experiment
from .instrument import (
    InstrumentBranch,
    MeasurementOperator,
    Pipeline,
    QuantumInstrument,
    QuantumState,
    WeightedState,
    apply_exact,
    as_normal_instrument,
    branches,
    concatenate,
    expectation,
    haar_vector,
    identity_instrument,
    random_density,
)
from .lcs import (
    LcsProblem,
    LcuResult,
    PauliDecomposition,
    all_at_once_M,
    all_at_once_apply,
    build_all_at_once_instrument,
    hadamard_test,
    incoherent_estimate,
    incoherent_exact,
    lcu_prepare,
    pauli_decompose,
    preparation_unitary,
)
from .sampling import (
    BetaDesign,
    ConcatComparison,
    EstimatorReport,
    PowerComparison,
    VarianceBounds,
    allocate_shots,
    beta_variance_bound,
    compare_concat_vs_direct,
    compare_power_methods,
    hoeffding_shots,
    optimal_beta,
    sample_counts,
    sample_estimate,
    variance_bound,
    variance_exact,
    variance_gqt,
    variance_lincombo,
    variance_postprocessing,
    variance_qhp,
    variance_qsp,
)
from .subroutines import (
    PolySpec,
    PolynomialPipeline,
    SPECIAL_CASES,
    SolveResult,
    SolverSolution,
    alpha_of,
    build_gqt_instrument,
    build_lincombo_instrument,
    build_qhp_instrument,
    build_qsp_instrument,
    build_teleport_instrument,
    gamma_in,
    gqt,
    lincombo_pair_M,
    polynomial_pipeline,
    power_pipeline_states,
    power_state,
    qhp,
    qsp_oracle,
    solve_qsp_realizable,
    teleport_map,
)
from .tensor import (
    PermutationUnitary,
    Register,
    RegisterLayout,
    dephase,
    partial_trace,
)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
