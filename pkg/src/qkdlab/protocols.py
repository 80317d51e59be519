"""BB84 (phase-gate bases) and SARG04 protocol building blocks.

Encoding map for the equatorial bases: bit b in basis with phase phi is
prepared as X^b, H, P(phi) (P omitted at phi = 0), giving the state
(|0> + (-1)^b e^{i phi} |1>)/sqrt(2). Decoding applies P(-phi), H and
recovers b exactly when the bases match. Named bases:

    X  -> phase 0        (bare Hadamard pair)
    Y  -> phase -pi/2    (H then S, with S = diag(1, e^{-i pi/2}))
    HT -> phase +pi/4    (H then T)
    HZ -> phase  pi      (H then Z; |0> encodes to |->)

SARG04 uses the computational/Hadamard pair instead: reference bit 0
keeps the data bit in the computational basis, reference bit 1 adds an H.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import (
    Circuit,
    GateOp,
    ShotHistogram,
    derive_rng,
    STREAM_EVE,
    STREAM_SHOT,
    _apply_unitary_inplace,
)

_PHASE_TOL = 1e-12

ALIAS_PHASES = {
    "X": 0.0,
    "Y": -math.pi / 2,
    "HT": math.pi / 4,
    "HZ": math.pi,
}


@dataclass(frozen=True)
class BasisSpec:
    """Equatorial encoding basis given by its phase angle in radians."""

    phase: float
    alias: str | None = None

    def __post_init__(self):
        if self.alias is not None:
            expected = ALIAS_PHASES.get(self.alias)
            if expected is None:
                raise ValueError(f"unknown basis alias: {self.alias!r}")
            if abs(self.phase - expected) > _PHASE_TOL:
                raise ValueError(f"alias {self.alias} does not match phase {self.phase}")

    @classmethod
    def named(cls, alias: str) -> "BasisSpec":
        if alias not in ALIAS_PHASES:
            raise ValueError(f"unknown basis alias: {alias!r}")
        return cls(phase=ALIAS_PHASES[alias], alias=alias)


BASIS_X = BasisSpec.named("X")
BASIS_Y = BasisSpec.named("Y")
BASIS_HT = BasisSpec.named("HT")
BASIS_HZ = BasisSpec.named("HZ")

FOUR_BASES = (BASIS_X, BASIS_Y, BASIS_HT, BASIS_HZ)
TWO_BASES = (BASIS_X, BASIS_Y)


def bases_equal(a: BasisSpec, b: BasisSpec) -> bool:
    """Sifting equality: phases equal within 1e-12 (aliases are canonical)."""
    return abs(a.phase - b.phase) <= _PHASE_TOL


def _phase_gate(theta: float, target: int) -> GateOp | None:
    """Named phase gate when the angle matches one; None at angle 0."""
    if abs(theta) <= _PHASE_TOL:
        return None
    for kind, phi in (
        ("S", -math.pi / 2),
        ("Sdg", math.pi / 2),
        ("T", math.pi / 4),
        ("Tdg", -math.pi / 4),
        ("Z", math.pi),
        ("Z", -math.pi),
    ):
        if abs(theta - phi) <= _PHASE_TOL:
            return GateOp(kind, target)
    return GateOp("P", target, theta=theta)


def basis_encode_ops(basis: BasisSpec, target: int = 0) -> list[GateOp]:
    """Basis part of the encoding: H then the phase gate (if any)."""
    ops = [GateOp("H", target)]
    pg = _phase_gate(basis.phase, target)
    if pg is not None:
        ops.append(pg)
    return ops


def encode_ops(bit: int, basis: BasisSpec, target: int = 0) -> list[GateOp]:
    """Alice's full preparation of one bit: X^bit, H, phase gate."""
    ops = [GateOp("X", target)] if bit else []
    return ops + basis_encode_ops(basis, target)


def decode_ops(basis: BasisSpec, target: int = 0) -> list[GateOp]:
    """Bob's measurement rotation: inverse phase gate then H."""
    ops = []
    pg = _phase_gate(-basis.phase, target)
    if pg is not None:
        ops.append(pg)
    ops.append(GateOp("H", target))
    return ops


def sarg04_encode(x: int, y: int, target: int = 0) -> list[GateOp]:
    """SARG04 preparation: reference bit y picks computational (0) or Hadamard (1)."""
    ops = [GateOp("X", target)] if x else []
    if y:
        ops.append(GateOp("H", target))
    return ops


def sarg04_decode_ops(y: int, target: int = 0) -> list[GateOp]:
    """H before measuring iff the reference bit selects the Hadamard basis."""
    return [GateOp("H", target)] if y else []


# Eve's basis token is a BasisSpec in BB84 sessions and a reference bit
# (0/1) in SARG04 sessions; dispatch on the type.
EveBasis = BasisSpec | int


def eve_decode_ops(basis: EveBasis, target: int) -> list[GateOp]:
    if isinstance(basis, BasisSpec):
        return decode_ops(basis, target)
    return sarg04_decode_ops(basis, target)


def eve_reprepare_ops(basis: EveBasis, target: int) -> list[GateOp]:
    """Re-preparation after Eve's measurement.

    The measured wire already holds |bit>, so re-encoding her outcome in
    her basis is the basis rotation alone (equivalent to reset followed
    by the full preparation).
    """
    if isinstance(basis, BasisSpec):
        return basis_encode_ops(basis, target)
    return [GateOp("H", target)] if basis else []


@dataclass(frozen=True)
class PartyRecord:
    """A party's data bits and basis choices, index-aligned."""

    bits: tuple[int, ...]
    bases: tuple[BasisSpec, ...]

    def __post_init__(self):
        object.__setattr__(self, "bits", tuple(self.bits))
        object.__setattr__(self, "bases", tuple(self.bases))
        if len(self.bits) != len(self.bases):
            raise ValueError("bits and bases must have equal length")
        if set(self.bits) - {0, 1}:
            raise ValueError("bits must be 0/1")


@dataclass(frozen=True)
class SiftResult:
    """Accepted indices plus the per-index A/D verdict string."""

    accepted: tuple[int, ...]
    verdicts: tuple[str, ...]


def sift_bb84(
    alice_bases: tuple[BasisSpec, ...], bob_bases: tuple[BasisSpec, ...]
) -> SiftResult:
    """Accept exactly the indices where both parties used the same basis."""
    if len(alice_bases) != len(bob_bases):
        raise ValueError("basis lists must have equal length")
    verdicts = tuple(
        "A" if bases_equal(a, b) else "D" for a, b in zip(alice_bases, bob_bases)
    )
    accepted = tuple(i for i, v in enumerate(verdicts) if v == "A")
    return SiftResult(accepted=accepted, verdicts=verdicts)


def qber(alice_bits, bob_bits, indices) -> float:
    """Mismatch fraction over the given indices; empty index set is an error."""
    indices = list(indices)
    if not indices:
        raise ValueError("cannot estimate QBER on an empty comparison set")
    for i in indices:
        if not (0 <= i < len(alice_bits) and i < len(bob_bits)):
            raise ValueError(f"comparison index {i} out of range")
    wrong = sum(1 for i in indices if alice_bits[i] != bob_bits[i])
    return wrong / len(indices)


@dataclass(frozen=True)
class Sarg04Announcement:
    """Published candidate pair for one SARG04 transmission.

    ``z_state`` names the computational member (bit b means |b>) and
    ``x_state`` the Hadamard member (0 means |+>, 1 means |->); the pair
    is always published in this canonical order. ``actual_is_x`` is
    Alice's hidden reference bit.
    """

    z_state: int
    x_state: int
    actual_is_x: bool


def sarg04_announce(x: int, y: int, rng: np.random.Generator) -> Sarg04Announcement:
    """Pair the transmitted state with a uniform decoy from the other basis."""
    decoy = int(rng.integers(2))
    if y == 0:
        return Sarg04Announcement(z_state=x, x_state=decoy, actual_is_x=False)
    return Sarg04Announcement(z_state=decoy, x_state=x, actual_is_x=True)


def sarg04_sift_standard(
    announcement: Sarg04Announcement, bob_basis: str, bob_outcome: int
) -> int | None:
    """Deduce the key bit from one measurement, or None when inconclusive.

    An outcome orthogonal to the pair's same-basis member rules that
    member out, so the transmitted state must be the other one; the key
    bit is the basis indicator (0 = computational member, 1 = Hadamard).
    In the Hadamard basis, outcome 0 means |+> and 1 means |->.
    """
    if bob_basis == "Z":
        if bob_outcome != announcement.z_state:
            return 1
        return None
    if bob_basis == "X":
        if bob_outcome != announcement.x_state:
            return 0
        return None
    raise ValueError(f"unknown measurement basis: {bob_basis!r}")


@dataclass(frozen=True)
class EveTap:
    """Intercept-resend point on one qubit between encode and decode.

    Either ``fixed`` (a single basis token) or ``pool`` (uniform draw per
    shot) is set. Basis tokens are BasisSpec for BB84, 0/1 reference bits
    for SARG04.
    """

    qubit: int
    fixed: EveBasis | None = None
    pool: tuple[EveBasis, ...] | None = None

    def __post_init__(self):
        if (self.fixed is None) == (self.pool is None):
            raise ValueError("exactly one of fixed/pool must be set")
        if self.pool is not None and len(self.pool) == 0:
            raise ValueError("empty basis pool")


@dataclass(frozen=True)
class Pipeline:
    """Staged description of one prepare-transmit-measure run.

    Stages mirror the canonical circuit layout: bit preparation (X gates),
    Alice's basis encoding, the channel (noise ops and Eve taps), and
    Bob's decoding. ``info_qubits`` are the key-carrying qubits; any
    others (reference bits, noise ancilla) are excluded from key reports.
    """

    n_qubits: int
    info_qubits: tuple[int, ...]
    prepare: tuple[GateOp, ...]
    encode: tuple[GateOp, ...]
    channel: tuple[GateOp, ...] = ()
    decode: tuple[GateOp, ...] = ()
    eve_taps: tuple[EveTap, ...] = ()

    def __post_init__(self):
        for name in ("info_qubits", "prepare", "encode", "channel", "decode", "eve_taps"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        seen = set()
        for tap in self.eve_taps:
            if not 0 <= tap.qubit < self.n_qubits:
                raise ValueError(f"eve tap qubit {tap.qubit} out of range")
            if tap.qubit in seen:
                raise ValueError(f"duplicate eve tap on qubit {tap.qubit}")
            seen.add(tap.qubit)

    @property
    def deterministic(self) -> bool:
        """True when the pipeline contains no mid-run collapse."""
        return not self.eve_taps

    def to_circuit(self) -> Circuit:
        """Flatten to a static circuit with stage barriers; Eve taps have
        no static-circuit form and raise."""
        if self.eve_taps:
            raise ValueError("pipeline with eavesdropper taps has no static circuit")
        ops = self.prepare + self.encode + self.channel + self.decode
        p, e, c = len(self.prepare), len(self.encode), len(self.channel)
        barriers = (p, p + e, p + e + c, len(ops))
        return Circuit(
            n_qubits=self.n_qubits,
            ops=ops,
            measured=frozenset(range(self.n_qubits)),
            barriers=barriers,
            channel_pos=p + e,
        )


def build_bb84_pipeline(
    bits, alice_bases, bob_bases
) -> Pipeline:
    """Per-qubit BB84 run: encode bits[i] in alice_bases[i], decode in bob_bases[i]."""
    bits = tuple(bits)
    alice_bases = tuple(alice_bases)
    bob_bases = tuple(bob_bases)
    if not bits:
        raise ValueError("empty transmission record")
    if not len(bits) == len(alice_bases) == len(bob_bases):
        raise ValueError("bits and basis lists must have equal length")
    n = len(bits)
    prepare = [GateOp("X", q) for q in range(n) if bits[q]]
    encode = [op for q in range(n) for op in basis_encode_ops(alice_bases[q], q)]
    decode = [op for q in range(n) for op in decode_ops(bob_bases[q], q)]
    return Pipeline(
        n_qubits=n,
        info_qubits=tuple(range(n)),
        prepare=tuple(prepare),
        encode=tuple(encode),
        decode=tuple(decode),
    )


def build_bb84_circuit(alice: PartyRecord, bob_bases) -> Circuit:
    """Static circuit for a BB84 run (paper-figure stage barriers included)."""
    return build_bb84_pipeline(alice.bits, alice.bases, tuple(bob_bases)).to_circuit()


def build_sarg04_pipeline(
    x, y, y_prime, include_reference_qubits: bool = True
) -> Pipeline:
    """SARG04 run: info qubits 0..n-1; optionally materialize the two
    reference-bit registers as qubits n..2n-1 (Alice) and 2n..3n-1 (Bob)."""
    x, y, y_prime = tuple(x), tuple(y), tuple(y_prime)
    if not x:
        raise ValueError("empty transmission record")
    if not len(x) == len(y) == len(y_prime):
        raise ValueError("bit strings must have equal length")
    n = len(x)
    total = 3 * n if include_reference_qubits else n
    prepare = [GateOp("X", q) for q in range(n) if x[q]]
    if include_reference_qubits:
        prepare += [GateOp("X", n + q) for q in range(n) if y[q]]
        prepare += [GateOp("X", 2 * n + q) for q in range(n) if y_prime[q]]
    encode = [GateOp("H", q) for q in range(n) if y[q]]
    decode = [GateOp("H", q) for q in range(n) if y_prime[q]]
    return Pipeline(
        n_qubits=total,
        info_qubits=tuple(range(n)),
        prepare=tuple(prepare),
        encode=tuple(encode),
        decode=tuple(decode),
    )


def _sample_index(probs: np.ndarray, rng: np.random.Generator) -> int:
    return int(np.searchsorted(np.cumsum(probs), rng.random()))


def _collapse_qubit(amps: np.ndarray, n: int, qubit: int, rng: np.random.Generator) -> int:
    psi = amps.reshape([2] * n)
    ax = n - 1 - qubit
    p1 = float(
        np.moveaxis(np.abs(psi) ** 2, ax, 0).reshape(2, -1).sum(axis=1)[1]
    )
    outcome = 1 if rng.random() < p1 else 0
    sel: list = [slice(None)] * n
    sel[ax] = 1 - outcome
    psi[tuple(sel)] = 0.0
    amps /= math.sqrt(p1 if outcome else 1.0 - p1)
    return outcome


def _run_one_shot(pipe: Pipeline, rng: np.random.Generator, eve_rng: np.random.Generator) -> int:
    """Execute one shot with true mid-run collapse; returns the sampled index."""
    n = pipe.n_qubits
    amps = np.zeros(1 << n, dtype=complex)
    amps[0] = 1.0
    for op in pipe.prepare + pipe.encode:
        _apply_unitary_inplace(amps, n, op.matrix(), op.target, op.control)
    for tap in pipe.eve_taps:
        basis = tap.fixed
        if basis is None:
            basis = tap.pool[int(eve_rng.integers(len(tap.pool)))]
        for op in eve_decode_ops(basis, tap.qubit):
            _apply_unitary_inplace(amps, n, op.matrix(), op.target, op.control)
        _collapse_qubit(amps, n, tap.qubit, rng)
        for op in eve_reprepare_ops(basis, tap.qubit):
            _apply_unitary_inplace(amps, n, op.matrix(), op.target, op.control)
    for op in pipe.channel + pipe.decode:
        _apply_unitary_inplace(amps, n, op.matrix(), op.target, op.control)
    return _sample_index(np.abs(amps) ** 2, rng)


def run_pipeline(
    pipe: Pipeline,
    shots: int,
    seed: int | None,
    eve_seed: int | None = None,
    stream: tuple[int, ...] = (),
) -> ShotHistogram:
    """Sample ``shots`` outcomes of the pipeline.

    Without Eve taps this is one exact statevector run plus a multinomial
    draw. With taps, every shot is simulated with true collapse; shot i
    uses the child streams (seed, *stream, STREAM_SHOT, i) for quantum
    randomness and (eve_seed or seed, *stream, STREAM_EVE, i) for Eve's
    basis draws. ``stream`` namespaces independent samplings of the same
    pipeline (tomography settings, sweep points).
    """
    if shots < 1:
        raise ValueError("shots must be >= 1")
    from .core import measure_all, run_circuit

    if pipe.deterministic:
        state = run_circuit(pipe.to_circuit())
        return measure_all(state, shots, derive_rng(seed, *stream, STREAM_SHOT))
    n = pipe.n_qubits
    tally: dict[int, int] = {}
    for i in range(shots):
        rng = derive_rng(seed, *stream, STREAM_SHOT, i)
        eve_rng = rng if eve_seed is None else derive_rng(eve_seed, *stream, STREAM_EVE, i)
        idx = _run_one_shot(pipe, rng, eve_rng)
        tally[idx] = tally.get(idx, 0) + 1
    counts = {format(i, f"0{n}b"): c for i, c in sorted(tally.items())}
    return ShotHistogram(n_qubits=n, counts=counts, shots=shots)


def exact_pipeline_marginals(pipe: Pipeline, max_branches: int = 1 << 20) -> list[tuple[float, float]]:
    """Exact per-qubit (p0, p1), averaging over Eve's choices and outcomes.

    Enumerates every (basis, outcome) branch of every tap with its exact
    probability weight; with no taps this is a single statevector run.
    """
    n = pipe.n_qubits
    n_branches = 1
    for tap in pipe.eve_taps:
        n_branches *= 2 * (1 if tap.fixed is not None else len(tap.pool))
        if n_branches > max_branches:
            raise ValueError("eavesdropper branch enumeration too large")

    total = np.zeros(1 << n)

    def walk(amps: np.ndarray, tap_idx: int, weight: float) -> None:
        if tap_idx == len(pipe.eve_taps):
            final = amps.copy()
            for op in pipe.channel + pipe.decode:
                _apply_unitary_inplace(final, n, op.matrix(), op.target, op.control)
            total[:] += weight * np.abs(final) ** 2
            return
        tap = pipe.eve_taps[tap_idx]
        choices = (tap.fixed,) if tap.fixed is not None else tap.pool
        for basis in choices:
            tapped = amps.copy()
            for op in eve_decode_ops(basis, tap.qubit):
                _apply_unitary_inplace(tapped, n, op.matrix(), op.target, op.control)
            psi = np.abs(tapped.reshape([2] * n)) ** 2
            ax = n - 1 - tap.qubit
            marg = np.moveaxis(psi, ax, 0).reshape(2, -1).sum(axis=1)
            for outcome in (0, 1):
                p = float(marg[outcome])
                if p <= 1e-15:
                    continue
                branch = tapped.copy()
                view = branch.reshape([2] * n)
                sel: list = [slice(None)] * n
                sel[ax] = 1 - outcome
                view[tuple(sel)] = 0.0
                branch /= math.sqrt(p)
                for op in eve_reprepare_ops(basis, tap.qubit):
                    _apply_unitary_inplace(branch, n, op.matrix(), op.target, op.control)
                walk(branch, tap_idx + 1, weight * p / len(choices))

    amps0 = np.zeros(1 << n, dtype=complex)
    amps0[0] = 1.0
    for op in pipe.prepare + pipe.encode:
        _apply_unitary_inplace(amps0, n, op.matrix(), op.target, op.control)
    walk(amps0, 0, 1.0)

    out = []
    cube = total.reshape([2] * n)
    for q in range(n):
        marg = np.moveaxis(cube, n - 1 - q, 0).reshape(2, -1).sum(axis=1)
        out.append((float(marg[0]), float(marg[1])))
    return out
