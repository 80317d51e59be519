"""Desk-scale quantum key distribution laboratory.

Exact statevector simulation of BB84 (two- and four-basis phase-gate
variants) and SARG04, with intercept-resend eavesdropping, controlled-
Pauli channel noise, readout-error emulation and mitigation, and
single-qubit tomography, all behind a deterministic seeded sampler.
"""

from .core import (
    Circuit,
    GateOp,
    ShotHistogram,
    StateVector,
    apply_gate,
    collapse,
    derive_rng,
    exact_marginal,
    exact_probabilities,
    gate_matrix,
    marginal,
    measure_all,
    new_state,
    overlap,
    run_circuit,
)
from .protocols import (
    BASIS_HT,
    BASIS_HZ,
    BASIS_X,
    BASIS_Y,
    BasisSpec,
    FOUR_BASES,
    PartyRecord,
    Pipeline,
    SiftResult,
    TWO_BASES,
    build_bb84_circuit,
    build_bb84_pipeline,
    build_sarg04_pipeline,
    decode_ops,
    encode_ops,
    exact_pipeline_marginals,
    qber,
    run_pipeline,
    sarg04_announce,
    sarg04_encode,
    sarg04_sift_standard,
    sift_bb84,
)
from .adversary import (
    CalibrationSet,
    EveConfig,
    NoiseAttackConfig,
    ReadoutNoiseModel,
    apply_intercept_resend,
    apply_readout_noise,
    attach_noise_attack,
    build_calibration_set,
    inject_controlled_pauli,
)
from .analysis import (
    ComparisonReport,
    DensityMatrix1Q,
    FidelityReport,
    MitigationMatrix,
    PauliExpectations,
    build_confusion_matrix,
    compare_to_expected,
    estimate_expectations,
    fidelity,
    mitigate,
    reconstruct_rho,
    theoretical_rho,
    tomography_settings,
    tvd,
)
from .session import (
    SessionConfig,
    SessionResult,
    build_session_pipeline,
    run_bb84_session,
    run_sarg04_session,
    run_session,
    run_tomography,
)
from .qasm import ParseError, emit, parse

__version__ = "0.1.0"
