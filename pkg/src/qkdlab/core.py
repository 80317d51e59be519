"""Exact statevector simulation of small circuits with seeded sampling.

Conventions used throughout the package:

- Bitstring keys are little-endian: the rightmost character of a key is
  qubit 0. Qubit q holds bit ``(index >> q) & 1`` of the flat amplitude
  index. Marginals and reports always address qubits by index, never by
  string position.
- ``S`` is the phase gate diag(1, e^{-i pi/2}) = diag(1, -i), i.e. the
  adjoint of the more common convention. ``Sdg`` is its conjugate
  transpose. Correctness is protected by inverse-pair and tomography
  round-trip tests rather than by convention matching.
- Global phase is never observable; state comparisons go through
  :func:`overlap`.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

MAX_QUBITS = 24

_NORM_TOL = 1e-10


def derive_rng(seed: int | None, *stream: int) -> np.random.Generator:
    """Child generator for the stream path ``(seed, *stream)``.

    Uses SeedSequence spawn keys as the counter scheme, so any call with
    the same (seed, stream) pair yields an identical generator regardless
    of call order or parallelism.
    """
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=stream))


# Stream identifiers for derive_rng. Every independent consumer of
# randomness in a run owns one stream, so artifacts are reproducible
# end-to-end and insensitive to evaluation order.
STREAM_SHOT = 0
STREAM_EVE = 1
STREAM_BITS = 2
STREAM_ALICE_BASES = 3
STREAM_BOB_BASES = 4
STREAM_CHECK = 5
STREAM_READOUT = 6
STREAM_ROUND = 7
STREAM_DECOY = 8
STREAM_CAL = 9
STREAM_TOMO = 10
STREAM_SWEEP = 11
STREAM_BOB_BASIS = 12


# Fixed gate matrices. S carries the e^{-i pi/2} phase on |1> (see module
# docstring); T carries e^{+i pi/4}.
_FIXED_GATES: dict[str, np.ndarray] = {
    "I": np.eye(2, dtype=complex),
    "X": np.array([[0, 1], [1, 0]], dtype=complex),
    "Y": np.array([[0, -1j], [1j, 0]], dtype=complex),
    "Z": np.array([[1, 0], [0, -1]], dtype=complex),
    "H": np.array([[1, 1], [1, -1]], dtype=complex) / math.sqrt(2),
    "S": np.array([[1, 0], [0, -1j]], dtype=complex),
    "Sdg": np.array([[1, 0], [0, 1j]], dtype=complex),
    "T": np.array([[1, 0], [0, np.exp(1j * math.pi / 4)]], dtype=complex),
    "Tdg": np.array([[1, 0], [0, np.exp(-1j * math.pi / 4)]], dtype=complex),
}

GATE_KINDS = tuple(_FIXED_GATES) + ("P",)


def gate_matrix(kind: str, theta: float | None = None) -> np.ndarray:
    """2x2 unitary for a gate name; ``theta`` is required iff kind == "P"."""
    if kind == "P":
        if theta is None:
            raise ValueError("P gate requires a phase angle")
        return np.array([[1, 0], [0, np.exp(1j * theta)]], dtype=complex)
    if kind not in _FIXED_GATES:
        raise ValueError(f"unknown gate kind: {kind!r}")
    if theta is not None:
        raise ValueError(f"gate {kind} takes no angle")
    return _FIXED_GATES[kind].copy()


@dataclass(frozen=True)
class GateOp:
    """One gate application: single-qubit unitary with an optional control."""

    kind: str
    target: int
    control: int | None = None
    theta: float | None = None

    def __post_init__(self):
        if self.kind not in GATE_KINDS:
            raise ValueError(f"unknown gate kind: {self.kind!r}")
        if (self.theta is None) == (self.kind == "P"):
            raise ValueError("theta must be given for P and only for P")
        if self.control is not None and self.control == self.target:
            raise ValueError("control and target must differ")

    def matrix(self) -> np.ndarray:
        return gate_matrix(self.kind, self.theta)


@dataclass(frozen=True)
class Circuit:
    """Ordered gate ops on n qubits, measured set, and barrier positions.

    Barriers are op-index positions (full width); they have no semantic
    effect but are preserved for emission. ``channel_pos`` marks the op
    index of the quantum channel in protocol-built circuits; it is derived
    metadata and excluded from equality.
    """

    n_qubits: int
    ops: tuple[GateOp, ...]
    measured: frozenset[int] = frozenset()
    barriers: tuple[int, ...] = ()
    channel_pos: int | None = field(default=None, compare=False)

    def __post_init__(self):
        if not 1 <= self.n_qubits <= MAX_QUBITS:
            raise ValueError(f"qubit count must be in 1..{MAX_QUBITS}")
        object.__setattr__(self, "ops", tuple(self.ops))
        object.__setattr__(self, "measured", frozenset(self.measured))
        object.__setattr__(self, "barriers", tuple(self.barriers))
        for op in self.ops:
            if not 0 <= op.target < self.n_qubits:
                raise ValueError(f"target {op.target} out of range")
            if op.control is not None and not 0 <= op.control < self.n_qubits:
                raise ValueError(f"control {op.control} out of range")
        for q in self.measured:
            if not 0 <= q < self.n_qubits:
                raise ValueError(f"measured qubit {q} out of range")
        for b in self.barriers:
            if not 0 <= b <= len(self.ops):
                raise ValueError(f"barrier position {b} out of range")


class StateVector:
    """Exact complex amplitudes over n qubits; normalized on construction."""

    __slots__ = ("n_qubits", "amps")

    def __init__(self, n_qubits: int, amps: np.ndarray):
        if not 1 <= n_qubits <= MAX_QUBITS:
            raise ValueError(f"qubit count must be in 1..{MAX_QUBITS}")
        amps = np.asarray(amps, dtype=complex)
        if amps.shape != (1 << n_qubits,):
            raise ValueError(f"expected {1 << n_qubits} amplitudes, got {amps.shape}")
        if not np.all(np.isfinite(amps)):
            raise ValueError("non-finite amplitude")
        norm2 = float(np.sum(np.abs(amps) ** 2))
        if abs(norm2 - 1.0) > _NORM_TOL:
            raise ValueError(f"state not normalized: |psi|^2 = {norm2}")
        self.n_qubits = n_qubits
        self.amps = amps

    def probabilities(self) -> np.ndarray:
        return np.abs(self.amps) ** 2


def new_state(n_qubits: int) -> StateVector:
    """|0...0> on ``n_qubits`` qubits."""
    if not 1 <= n_qubits <= MAX_QUBITS:
        raise ValueError(f"qubit count must be in 1..{MAX_QUBITS}")
    amps = np.zeros(1 << n_qubits, dtype=complex)
    amps[0] = 1.0
    return StateVector(n_qubits, amps)


def _apply_unitary_inplace(
    amps: np.ndarray, n: int, u: np.ndarray, target: int, control: int | None
) -> None:
    """Apply a 2x2 unitary to ``target`` (restricted to control=|1> if set)."""
    t_ax = n - 1 - target
    psi = amps.reshape([2] * n)
    if control is not None:
        c_ax = n - 1 - control
        sel: list = [slice(None)] * n
        sel[c_ax] = 1
        psi = psi[tuple(sel)]
        if c_ax < t_ax:
            t_ax -= 1
    view = np.moveaxis(psi, t_ax, -1)
    view[...] = view @ u.T


def apply_gate(state: StateVector, op: GateOp) -> StateVector:
    """Return a new state with ``op`` applied; the input is untouched."""
    if not 0 <= op.target < state.n_qubits:
        raise ValueError(f"target {op.target} out of range")
    if op.control is not None and not 0 <= op.control < state.n_qubits:
        raise ValueError(f"control {op.control} out of range")
    amps = state.amps.copy()
    _apply_unitary_inplace(amps, state.n_qubits, op.matrix(), op.target, op.control)
    return StateVector(state.n_qubits, amps)


def run_circuit(circuit: Circuit) -> StateVector:
    """Apply all ops in order to |0...0>. Deterministic; no sampling."""
    amps = np.zeros(1 << circuit.n_qubits, dtype=complex)
    amps[0] = 1.0
    for op in circuit.ops:
        _apply_unitary_inplace(amps, circuit.n_qubits, op.matrix(), op.target, op.control)
    return StateVector(circuit.n_qubits, amps)


def exact_probabilities(state: StateVector) -> dict[str, float]:
    """Map bitstring -> |amplitude|^2, omitting exact zeros."""
    n = state.n_qubits
    probs = state.probabilities()
    return {
        format(i, f"0{n}b"): float(p) for i, p in enumerate(probs) if p > 0.0
    }


@dataclass(frozen=True)
class ShotHistogram:
    """Measurement counts per bitstring; keys are little-endian (see module doc)."""

    n_qubits: int
    counts: dict[str, int]
    shots: int

    def __post_init__(self):
        if sum(self.counts.values()) != self.shots:
            raise ValueError("counts do not sum to shots")
        for key, c in self.counts.items():
            if len(key) != self.n_qubits or set(key) - {"0", "1"}:
                raise ValueError(f"bad bitstring key: {key!r}")
            if c < 0:
                raise ValueError("negative count")

    def to_json(self) -> str:
        payload = {
            "n_qubits": self.n_qubits,
            "shots": self.shots,
            "counts": dict(sorted(self.counts.items())),
        }
        return json.dumps(payload, sort_keys=True, indent=2) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "ShotHistogram":
        data = json.loads(text)
        return cls(
            n_qubits=int(data["n_qubits"]),
            counts={str(k): int(v) for k, v in data["counts"].items()},
            shots=int(data["shots"]),
        )


def measure_all(state: StateVector, shots: int, seed) -> ShotHistogram:
    """Multinomial sample over the full joint distribution.

    ``seed`` may be an int (or None) or an already-derived Generator;
    identical seeds give bit-identical histograms.
    """
    if shots < 1:
        raise ValueError("shots must be >= 1")
    rng = seed if isinstance(seed, np.random.Generator) else derive_rng(seed)
    probs = state.probabilities()
    probs = probs / probs.sum()
    drawn = rng.multinomial(shots, probs)
    n = state.n_qubits
    counts = {format(i, f"0{n}b"): int(c) for i, c in enumerate(drawn) if c > 0}
    return ShotHistogram(n_qubits=n, counts=counts, shots=shots)


def marginal(hist: ShotHistogram, qubit: int) -> tuple[float, float]:
    """(p0, p1) relative frequency of one qubit across the histogram."""
    if not 0 <= qubit < hist.n_qubits:
        raise ValueError(f"qubit {qubit} out of range")
    ones = sum(
        c for key, c in hist.counts.items() if key[hist.n_qubits - 1 - qubit] == "1"
    )
    p1 = ones / hist.shots
    return (1.0 - p1, p1)


def exact_marginal(state: StateVector, qubit: int) -> tuple[float, float]:
    """(p0, p1) of one qubit from exact probabilities."""
    if not 0 <= qubit < state.n_qubits:
        raise ValueError(f"qubit {qubit} out of range")
    probs = state.probabilities().reshape([2] * state.n_qubits)
    ax = state.n_qubits - 1 - qubit
    summed = np.moveaxis(probs, ax, 0).reshape(2, -1).sum(axis=1)
    return (float(summed[0]), float(summed[1]))


def collapse(
    state: StateVector, qubit: int, rng: np.random.Generator
) -> tuple[int, StateVector]:
    """Projective measurement of one qubit mid-protocol.

    Samples the outcome from the qubit's marginal, zeroes the discarded
    branch and renormalizes. Returns (outcome, post-state).
    """
    _, p1 = exact_marginal(state, qubit)
    outcome = 1 if rng.random() < p1 else 0
    amps = state.amps.copy()
    _collapse_inplace(amps, state.n_qubits, qubit, outcome, p1 if outcome else 1.0 - p1)
    return outcome, StateVector(state.n_qubits, amps)


def _collapse_inplace(amps: np.ndarray, n: int, qubit: int, outcome: int, prob: float) -> None:
    psi = amps.reshape([2] * n)
    sel: list = [slice(None)] * n
    sel[n - 1 - qubit] = 1 - outcome
    psi[tuple(sel)] = 0.0
    amps /= math.sqrt(prob)


def overlap(a: StateVector, b: StateVector) -> float:
    """|<a|b>|; 1 means equal up to global phase."""
    if a.n_qubits != b.n_qubits:
        raise ValueError("qubit counts differ")
    return float(abs(np.vdot(a.amps, b.amps)))
