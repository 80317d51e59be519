"""Attack and noise models for the quantum channel.

Three independent disturbances are modeled:

- intercept-resend eavesdropping (per-shot true collapse, never a
  density-matrix average),
- controlled-Pauli noise driven by an appended ancilla qubit,
- classical readout error applied to sampled outcomes.

Eve re-prepares from her own measured bit and her own basis choice; she
never sees the sender's records.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .core import (
    Circuit,
    GateOp,
    ShotHistogram,
    derive_rng,
    MAX_QUBITS,
    STREAM_CAL,
)
from .protocols import EveBasis, EveTap, Pipeline

NOISE_GATES = ("CX", "CY", "CZ")


@dataclass(frozen=True)
class EveConfig:
    """Which qubits Eve taps and how she guesses bases.

    Exactly one of ``fixed_bases`` (index -> basis token) or ``pool``
    (uniform draw per shot) is given. Basis tokens are BasisSpec for
    BB84 sessions and 0/1 reference bits for SARG04 sessions. ``seed``
    decouples Eve's basis draws from the session randomness when set.
    """

    attacked: tuple[int, ...]
    fixed_bases: dict[int, EveBasis] | None = None
    pool: tuple[EveBasis, ...] | None = None
    seed: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "attacked", tuple(self.attacked))
        if len(set(self.attacked)) != len(self.attacked):
            raise ValueError("duplicate attacked index")
        if (self.fixed_bases is None) == (self.pool is None):
            raise ValueError("exactly one of fixed_bases/pool must be set")
        if self.fixed_bases is not None:
            missing = set(self.attacked) - set(self.fixed_bases)
            if missing:
                raise ValueError(f"no basis given for attacked indices {sorted(missing)}")
        if self.pool is not None:
            object.__setattr__(self, "pool", tuple(self.pool))
            if not self.pool:
                raise ValueError("empty basis pool")

    def tap_for(self, qubit: int) -> EveTap:
        if self.fixed_bases is not None:
            return EveTap(qubit=qubit, fixed=self.fixed_bases[qubit])
        return EveTap(qubit=qubit, pool=self.pool)


def apply_intercept_resend(pipe: Pipeline, eve: EveConfig) -> Pipeline:
    """Insert Eve between encode and decode on each attacked qubit."""
    info = set(pipe.info_qubits)
    for q in eve.attacked:
        if q not in info:
            raise ValueError(f"attacked index {q} is not a transmitted qubit")
    taps = tuple(eve.tap_for(q) for q in sorted(eve.attacked))
    return replace(pipe, eve_taps=taps)


@dataclass(frozen=True)
class NoiseAttackConfig:
    """Controlled-Pauli channel noise: (target qubit, CX|CY|CZ) pairs,
    all driven by one ancilla prepared in |ancilla_value>."""

    targets: tuple[tuple[int, str], ...]
    ancilla_value: int = 1

    def __post_init__(self):
        object.__setattr__(self, "targets", tuple((int(q), g) for q, g in self.targets))
        if not self.targets:
            raise ValueError("no noise targets given")
        for _, gate in self.targets:
            if gate not in NOISE_GATES:
                raise ValueError(f"unknown noise gate {gate!r}")
        if self.ancilla_value not in (0, 1):
            raise ValueError("ancilla_value must be a bit")


def _noise_ops(cfg: NoiseAttackConfig, ancilla: int) -> list[GateOp]:
    ops = []
    for qubit, gate in cfg.targets:
        if qubit == ancilla:
            raise ValueError("noise target equals the ancilla qubit")
        ops.append(GateOp(gate[1], qubit, control=ancilla))
    return ops


def attach_noise_attack(pipe: Pipeline, cfg: NoiseAttackConfig) -> Pipeline:
    """Append the control ancilla as the highest qubit index and put the
    controlled gates on the channel. The ancilla is not an info qubit."""
    if pipe.n_qubits >= MAX_QUBITS:
        raise ValueError("no room for the noise ancilla")
    ancilla = pipe.n_qubits
    for qubit, _ in cfg.targets:
        if not 0 <= qubit < pipe.n_qubits:
            raise ValueError(f"noise target {qubit} out of range")
    prepare = pipe.prepare + ((GateOp("X", ancilla),) if cfg.ancilla_value else ())
    return replace(
        pipe,
        n_qubits=ancilla + 1,
        prepare=prepare,
        channel=pipe.channel + tuple(_noise_ops(cfg, ancilla)),
    )


def inject_controlled_pauli(
    circuit: Circuit, cfg: NoiseAttackConfig, position: int | None = None
) -> Circuit:
    """Circuit-level form of the noise attack.

    The ancilla is appended as the highest index, set by an X op at the
    front, and the controlled gates are inserted at ``position`` (default:
    the circuit's channel position). The ancilla is left unmeasured so
    histogram widths of key qubits stay comparable.
    """
    if position is None:
        position = circuit.channel_pos
    if position is None:
        raise ValueError("circuit has no channel position; pass position explicitly")
    if not 0 <= position <= len(circuit.ops):
        raise ValueError("insertion position out of range")
    if circuit.n_qubits >= MAX_QUBITS:
        raise ValueError("no room for the noise ancilla")
    ancilla = circuit.n_qubits
    for qubit, _ in cfg.targets:
        if not 0 <= qubit < circuit.n_qubits:
            raise ValueError(f"noise target {qubit} out of range")
    prep = (GateOp("X", ancilla),) if cfg.ancilla_value else ()
    shift = len(prep)
    noise = tuple(_noise_ops(cfg, ancilla))
    ops = prep + circuit.ops[:position] + noise + circuit.ops[position:]
    barriers = tuple(
        b + shift + (len(noise) if b > position else 0) for b in circuit.barriers
    )
    return Circuit(
        n_qubits=ancilla + 1,
        ops=ops,
        measured=circuit.measured,
        barriers=barriers,
        channel_pos=position + shift,
    )


@dataclass(frozen=True)
class ReadoutNoiseModel:
    """Independent classical bit flips at measurement.

    ``p01[q]`` is the probability of reading 1 when qubit q is truly 0;
    ``p10[q]`` of reading 0 when truly 1.
    """

    p01: tuple[float, ...]
    p10: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "p01", tuple(float(p) for p in self.p01))
        object.__setattr__(self, "p10", tuple(float(p) for p in self.p10))
        if len(self.p01) != len(self.p10):
            raise ValueError("p01/p10 length mismatch")
        for p in self.p01 + self.p10:
            if not 0.0 <= p <= 1.0:
                raise ValueError("flip probabilities must be in [0, 1]")

    @property
    def n_qubits(self) -> int:
        return len(self.p01)

    @classmethod
    def uniform(cls, n_qubits: int, p01: float, p10: float | None = None) -> "ReadoutNoiseModel":
        p10 = p01 if p10 is None else p10
        return cls(p01=(p01,) * n_qubits, p10=(p10,) * n_qubits)

    def padded(self, n_qubits: int) -> "ReadoutNoiseModel":
        """Extend with noiseless qubits (for ancilla/reference registers)."""
        if n_qubits < self.n_qubits:
            raise ValueError("cannot shrink a readout model")
        extra = (0.0,) * (n_qubits - self.n_qubits)
        return ReadoutNoiseModel(p01=self.p01 + extra, p10=self.p10 + extra)


def flip_bit(bit: int, qubit: int, model: ReadoutNoiseModel, rng: np.random.Generator) -> int:
    """One readout of one qubit through the noise model."""
    p = model.p10[qubit] if bit else model.p01[qubit]
    return bit ^ (1 if rng.random() < p else 0)


def apply_readout_noise(
    hist: ShotHistogram, model: ReadoutNoiseModel, rng_or_seed
) -> ShotHistogram:
    """Flip each measured bit of each shot independently per the model.

    Deterministic for a given seed: keys are processed in sorted order
    and all flips for one key are drawn as a single block.
    """
    if model.n_qubits != hist.n_qubits:
        raise ValueError("readout model width does not match histogram")
    rng = rng_or_seed if isinstance(rng_or_seed, np.random.Generator) else derive_rng(rng_or_seed)
    n = hist.n_qubits
    # flip probability per string position depends on the true bit there
    p01 = np.array([model.p01[n - 1 - i] for i in range(n)])
    p10 = np.array([model.p10[n - 1 - i] for i in range(n)])
    out: dict[str, int] = {}
    for key in sorted(hist.counts):
        count = hist.counts[key]
        bits = np.frombuffer(key.encode(), dtype=np.uint8) - ord("0")
        p_flip = np.where(bits == 1, p10, p01)
        flips = rng.random((count, n)) < p_flip
        noisy = bits ^ flips
        for row in noisy:
            nk = "".join("1" if b else "0" for b in row)
            out[nk] = out.get(nk, 0) + 1
    return ShotHistogram(n_qubits=n, counts=out, shots=hist.shots)


@dataclass(frozen=True)
class CalibrationSet:
    """Observed histograms for prepared computational basis states."""

    n_qubits: int
    histograms: dict[str, ShotHistogram]
    mode: str  # full | tensored

    def __post_init__(self):
        if self.mode not in ("full", "tensored"):
            raise ValueError(f"unknown calibration mode {self.mode!r}")
        shots = {h.shots for h in self.histograms.values()}
        if len(shots) > 1:
            raise ValueError("calibration histograms must share one shot count")
        for key in self.histograms:
            if len(key) != self.n_qubits:
                raise ValueError(f"prepared-state key {key!r} has wrong length")


def build_calibration_set(
    n_qubits: int,
    model: ReadoutNoiseModel,
    shots: int,
    seed: int | None,
    mode: str | None = None,
) -> CalibrationSet:
    """Prepare basis states with X gates only and measure through the model.

    Full mode runs all 2^n states (n <= 12); tensored mode runs only
    |0...0> and |1...1> and characterizes each qubit separately.
    """
    if model.n_qubits != n_qubits:
        raise ValueError("readout model width does not match qubit count")
    if mode is None:
        mode = "full" if n_qubits <= 12 else "tensored"
    if mode == "full" and n_qubits > 12:
        raise ValueError("full calibration capped at 12 qubits; use tensored")
    if mode == "full":
        prepared = [format(i, f"0{n_qubits}b") for i in range(1 << n_qubits)]
    else:
        prepared = ["0" * n_qubits, "1" * n_qubits]
    histograms = {}
    for i, state in enumerate(prepared):
        ideal = ShotHistogram(n_qubits=n_qubits, counts={state: shots}, shots=shots)
        histograms[state] = apply_readout_noise(ideal, model, derive_rng(seed, STREAM_CAL, i))
    return CalibrationSet(n_qubits=n_qubits, histograms=histograms, mode=mode)
