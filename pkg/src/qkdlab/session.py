"""End-to-end protocol sessions: randomness, channel, sifting, key checks.

Two key-extraction modes are exposed. ``statistics`` runs the whole
transmission as one circuit for many shots and takes each qubit's
majority outcome as Bob's bit (the table-reproduction mode).
``single-shot`` samples one outcome per transmitted qubit, which is the
protocol-faithful mode used for QBER and abort behavior.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

from .adversary import (
    EveConfig,
    NoiseAttackConfig,
    ReadoutNoiseModel,
    apply_intercept_resend,
    attach_noise_attack,
    apply_readout_noise,
    flip_bit,
)
from .core import (
    GateOp,
    ShotHistogram,
    derive_rng,
    marginal,
    STREAM_ALICE_BASES,
    STREAM_BITS,
    STREAM_BOB_BASES,
    STREAM_CHECK,
    STREAM_DECOY,
    STREAM_EVE,
    STREAM_READOUT,
    STREAM_ROUND,
    STREAM_TOMO,
)
from .protocols import (
    BasisSpec,
    EveTap,
    FOUR_BASES,
    Pipeline,
    TWO_BASES,
    basis_encode_ops,
    build_bb84_pipeline,
    build_sarg04_pipeline,
    decode_ops,
    exact_pipeline_marginals,
    qber,
    run_pipeline,
    sarg04_announce,
    sarg04_sift_standard,
    sift_bb84,
    _run_one_shot,
)

PROTOCOLS = ("BB84-2", "BB84-4", "SARG04-paper", "SARG04-standard")
MODES = ("statistics", "single-shot")

_DEFAULT_BASIS_SETS = {"BB84-2": TWO_BASES, "BB84-4": FOUR_BASES}


@dataclass(frozen=True)
class SessionConfig:
    """Everything one protocol run needs; see the module docstring for modes.

    BB84 protocols use ``bits``/``alice_bases``/``bob_bases`` (or draw
    them from ``basis_set`` under the seed); SARG04 protocols use
    ``bits`` (the data string) plus ``alice_ref``/``bob_ref`` reference
    bits. ``readout_noise`` is indexed by transmitted qubit; reference
    and ancilla qubits read out noiselessly.
    """

    protocol: str
    n_bits: int | None = None
    bits: tuple[int, ...] | None = None
    alice_bases: tuple[BasisSpec, ...] | None = None
    bob_bases: tuple[BasisSpec, ...] | None = None
    alice_ref: tuple[int, ...] | None = None
    bob_ref: tuple[int, ...] | None = None
    basis_set: tuple[BasisSpec, ...] | None = None
    shots: int = 8192
    seed: int | None = None
    mode: str = "statistics"
    check_fraction: float = 0.5
    qber_abort_threshold: float = 0.11
    eve: EveConfig | None = None
    noise_attack: NoiseAttackConfig | None = None
    readout_noise: ReadoutNoiseModel | None = None
    backend: str = "ideal"
    sarg_reference_qubits: bool = True

    def __post_init__(self):
        if self.protocol not in PROTOCOLS:
            raise ValueError(f"unknown protocol {self.protocol!r}")
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}")
        if not 0.0 <= self.check_fraction < 1.0:
            raise ValueError("check_fraction must be in [0, 1)")
        if not 0.0 <= self.qber_abort_threshold <= 0.5:
            raise ValueError("qber_abort_threshold must be in [0, 0.5]")
        if self.shots < 1:
            raise ValueError("shots must be >= 1")
        if self.n_bits is None and self.bits is None:
            raise ValueError("either n_bits or explicit bits are required")
        if self.n_bits is not None and self.bits is not None and len(self.bits) != self.n_bits:
            raise ValueError("n_bits contradicts the explicit bit string")
        if self.protocol == "SARG04-standard" and self.mode != "single-shot":
            raise ValueError("SARG04-standard sifting needs single-shot outcomes")
        if self.backend not in ("ideal", "readout-noise"):
            raise ValueError(f"unknown backend {self.backend!r}")
        if (self.backend == "readout-noise") != (self.readout_noise is not None):
            raise ValueError("backend 'readout-noise' requires a readout model (and vice versa)")
        if self.protocol.startswith("SARG04") and (
            self.alice_bases is not None or self.bob_bases is not None
        ):
            raise ValueError("SARG04 uses reference bits, not phase bases")
        if self.eve is not None:
            for q in self.eve.attacked:
                if not 0 <= q < self.n:
                    raise ValueError(f"attacked index {q} out of range")

    @property
    def n(self) -> int:
        return len(self.bits) if self.bits is not None else self.n_bits


@dataclass
class SessionResult:
    """Outcome of one session, serializable for golden-file comparison.

    For SARG04 sessions ``alice_bases``/``bob_bases`` hold the reference
    bit strings. In single-shot mode each marginal is the round's single
    outcome (so p1 is 0.0 or 1.0), and ``expected_p1`` is not computed.
    """

    protocol: str
    mode: str
    n_bits: int
    shots: int
    bits: tuple[int, ...]
    alice_bases: tuple = ()
    bob_bases: tuple = ()
    marginals: list[tuple[float, float]] = field(default_factory=list)
    expected_p1: list[float] | None = None
    verdicts: tuple[str, ...] = ()
    accepted: tuple[int, ...] = ()
    alice_key: tuple[int, ...] = ()
    bob_key: tuple[int, ...] = ()
    check_indices: tuple[int, ...] = ()
    check_qber: float | None = None
    final_key_alice: tuple[int, ...] = ()
    final_key_bob: tuple[int, ...] = ()
    aborted: bool = False
    histogram: ShotHistogram | None = None

    def to_json(self) -> str:
        payload = {
            "protocol": self.protocol,
            "mode": self.mode,
            "n_bits": self.n_bits,
            "shots": self.shots,
            "bits": list(self.bits),
            "alice_bases": [_basis_token(b) for b in self.alice_bases],
            "bob_bases": [_basis_token(b) for b in self.bob_bases],
            "marginals": [[p0, p1] for p0, p1 in self.marginals],
            "expected_p1": self.expected_p1,
            "verdicts": list(self.verdicts),
            "accepted": list(self.accepted),
            "alice_key": list(self.alice_key),
            "bob_key": list(self.bob_key),
            "check_indices": list(self.check_indices),
            "check_qber": self.check_qber,
            "final_key_alice": list(self.final_key_alice),
            "final_key_bob": list(self.final_key_bob),
            "aborted": self.aborted,
        }
        return json.dumps(payload, sort_keys=True, indent=2) + "\n"


def _basis_token(basis):
    if isinstance(basis, BasisSpec):
        return basis.alias if basis.alias is not None else basis.phase
    return int(basis)


def _resolve_bits(config: SessionConfig, stream: int, explicit) -> tuple[int, ...]:
    if explicit is not None:
        bits = tuple(int(b) for b in explicit)
        if len(bits) != config.n:
            raise ValueError("bit string length does not match n_bits")
        if set(bits) - {0, 1}:
            raise ValueError("bits must be 0/1")
        return bits
    rng = derive_rng(config.seed, stream)
    return tuple(int(b) for b in rng.integers(2, size=config.n))


def _resolve_bases(config: SessionConfig, stream: int, explicit) -> tuple[BasisSpec, ...]:
    if explicit is not None:
        bases = tuple(explicit)
        if len(bases) != config.n:
            raise ValueError("basis list length does not match n_bits")
        return bases
    pool = config.basis_set or _DEFAULT_BASIS_SETS[config.protocol]
    rng = derive_rng(config.seed, stream)
    picks = rng.integers(len(pool), size=config.n)
    return tuple(pool[int(i)] for i in picks)


def _sift_and_finish(
    config: SessionConfig,
    result: SessionResult,
    alice_bits,
    bob_bits,
    verdicts: tuple[str, ...],
) -> SessionResult:
    """Shared tail: sifting bookkeeping, check-bit QBER, abort verdict."""
    accepted = tuple(i for i, v in enumerate(verdicts) if v == "A")
    result.verdicts = verdicts
    result.accepted = accepted
    result.alice_key = tuple(alice_bits[i] for i in accepted)
    result.bob_key = tuple(bob_bits[i] for i in accepted)

    n_check = math.ceil(config.check_fraction * len(accepted))
    if n_check > 0:
        rng = derive_rng(config.seed, STREAM_CHECK)
        positions = sorted(rng.choice(len(accepted), size=n_check, replace=False))
        result.check_indices = tuple(accepted[int(j)] for j in positions)
        result.check_qber = qber(alice_bits, bob_bits, result.check_indices)
        result.aborted = result.check_qber > config.qber_abort_threshold
    disclosed = set(result.check_indices)
    remaining = tuple(i for i in accepted if i not in disclosed)
    result.final_key_alice = tuple(alice_bits[i] for i in remaining)
    result.final_key_bob = tuple(bob_bits[i] for i in remaining)
    return result


def _assemble_channel(config: SessionConfig, pipe: Pipeline) -> Pipeline:
    """Attach the configured channel disturbances to a clean pipeline."""
    if config.noise_attack is not None:
        pipe = attach_noise_attack(pipe, config.noise_attack)
    if config.eve is not None:
        pipe = apply_intercept_resend(pipe, config.eve)
    return pipe


def build_session_pipeline(config: SessionConfig) -> Pipeline:
    """The statistics-mode pipeline this config runs, channel included."""
    if config.protocol.startswith("BB84"):
        bits = _resolve_bits(config, STREAM_BITS, config.bits)
        alice_bases = _resolve_bases(config, STREAM_ALICE_BASES, config.alice_bases)
        bob_bases = _resolve_bases(config, STREAM_BOB_BASES, config.bob_bases)
        pipe = build_bb84_pipeline(bits, alice_bases, bob_bases)
    else:
        x = _resolve_bits(config, STREAM_BITS, config.bits)
        y = _resolve_bits(config, STREAM_ALICE_BASES, config.alice_ref)
        y_prime = _resolve_bits(config, STREAM_BOB_BASES, config.bob_ref)
        pipe = build_sarg04_pipeline(
            x, y, y_prime, include_reference_qubits=config.sarg_reference_qubits
        )
    return _assemble_channel(config, pipe)


def _run_statistics(config: SessionConfig, pipe: Pipeline, result: SessionResult) -> tuple[int, ...]:
    """Joint-circuit sampling; fills marginals/histogram, returns Bob's
    majority bits (ties at exactly 0.5 count as 0)."""
    pipe = _assemble_channel(config, pipe)
    eve_seed = config.eve.seed if config.eve is not None else None
    hist = run_pipeline(pipe, config.shots, config.seed, eve_seed=eve_seed)
    model = _readout_for(config, pipe.n_qubits)
    if model is not None:
        hist = apply_readout_noise(hist, model, derive_rng(config.seed, STREAM_READOUT))
    result.histogram = hist
    result.marginals = [marginal(hist, q) for q in pipe.info_qubits]
    exact = exact_pipeline_marginals(pipe)
    result.expected_p1 = [exact[q][1] for q in pipe.info_qubits]
    return tuple(1 if p1 > 0.5 else 0 for _, p1 in result.marginals)


def _readout_for(config: SessionConfig, width: int) -> ReadoutNoiseModel | None:
    if config.readout_noise is None:
        return None
    if config.readout_noise.n_qubits > width:
        raise ValueError("readout model wider than the transmission")
    return config.readout_noise.padded(width)


def _round_pipeline(config: SessionConfig, index: int, prepare, encode, decode) -> Pipeline:
    """One-qubit pipeline for round ``index``, with the noise ancilla as
    qubit 1 when that round is a noise-attack target."""
    n_qubits = 1
    channel: tuple[GateOp, ...] = ()
    if config.noise_attack is not None:
        gates = [g for q, g in config.noise_attack.targets if q == index]
        if gates:
            n_qubits = 2
            if config.noise_attack.ancilla_value:
                prepare = tuple(prepare) + (GateOp("X", 1),)
            channel = tuple(GateOp(g[1], 0, control=1) for g in gates)
    pipe = Pipeline(
        n_qubits=n_qubits,
        info_qubits=(0,),
        prepare=tuple(prepare),
        encode=tuple(encode),
        channel=channel,
        decode=tuple(decode),
    )
    if config.eve is not None and index in config.eve.attacked:
        tap = config.eve.tap_for(index)
        pipe = Pipeline(
            n_qubits=pipe.n_qubits,
            info_qubits=pipe.info_qubits,
            prepare=pipe.prepare,
            encode=pipe.encode,
            channel=pipe.channel,
            decode=pipe.decode,
            eve_taps=(EveTap(qubit=0, fixed=tap.fixed, pool=tap.pool),),
        )
    return pipe


def _run_single_shot_rounds(config: SessionConfig, stages) -> list[int]:
    """One transmission per round; ``stages(i)`` gives that round's
    (prepare, encode, decode) ops on qubit 0. Returns Bob's outcomes."""
    eve_seed = config.eve.seed if config.eve is not None else None
    model = config.readout_noise
    if model is not None and model.n_qubits != config.n:
        raise ValueError("single-shot mode needs one readout rate per transmitted qubit")
    outcomes = []
    for i in range(config.n):
        pipe = _round_pipeline(config, i, *stages(i))
        rng = derive_rng(config.seed, STREAM_ROUND, i)
        eve_rng = rng if eve_seed is None else derive_rng(eve_seed, STREAM_EVE, i)
        bit = _run_one_shot(pipe, rng, eve_rng) & 1
        if model is not None:
            bit = flip_bit(bit, i, model, rng)
        outcomes.append(bit)
    return outcomes


def run_bb84_session(config: SessionConfig) -> SessionResult:
    """BB84 with two or four equatorial bases."""
    if not config.protocol.startswith("BB84"):
        raise ValueError(f"not a BB84 protocol: {config.protocol}")
    bits = _resolve_bits(config, STREAM_BITS, config.bits)
    alice_bases = _resolve_bases(config, STREAM_ALICE_BASES, config.alice_bases)
    bob_bases = _resolve_bases(config, STREAM_BOB_BASES, config.bob_bases)
    result = SessionResult(
        protocol=config.protocol,
        mode=config.mode,
        n_bits=config.n,
        shots=config.shots,
        bits=bits,
        alice_bases=alice_bases,
        bob_bases=bob_bases,
    )
    if config.mode == "statistics":
        pipe = build_bb84_pipeline(bits, alice_bases, bob_bases)
        bob_bits = _run_statistics(config, pipe, result)
    else:

        def stages(i):
            prepare = (GateOp("X", 0),) if bits[i] else ()
            return prepare, basis_encode_ops(alice_bases[i], 0), decode_ops(bob_bases[i], 0)

        bob_bits = _run_single_shot_rounds(config, stages)
        result.marginals = [(1.0 - b, float(b)) for b in bob_bits]
    sift = sift_bb84(alice_bases, bob_bases)
    return _sift_and_finish(config, result, bits, bob_bits, sift.verdicts)


def run_sarg04_session(config: SessionConfig) -> SessionResult:
    """SARG04 in paper mode (private reference-bit sift, key bit = data
    bit) or standard mode (pair announcement plus unambiguous sift, key
    bit = basis indicator)."""
    if not config.protocol.startswith("SARG04"):
        raise ValueError(f"not a SARG04 protocol: {config.protocol}")
    x = _resolve_bits(config, STREAM_BITS, config.bits)
    y = _resolve_bits(config, STREAM_ALICE_BASES, config.alice_ref)
    y_prime = _resolve_bits(config, STREAM_BOB_BASES, config.bob_ref)
    result = SessionResult(
        protocol=config.protocol,
        mode=config.mode,
        n_bits=config.n,
        shots=config.shots,
        bits=x,
        alice_bases=y,
        bob_bases=y_prime,
    )
    if config.mode == "statistics":
        pipe = build_sarg04_pipeline(
            x, y, y_prime, include_reference_qubits=config.sarg_reference_qubits
        )
        bob_bits = _run_statistics(config, pipe, result)
    else:

        def stages(i):
            prepare = (GateOp("X", 0),) if x[i] else ()
            encode = (GateOp("H", 0),) if y[i] else ()
            decode = (GateOp("H", 0),) if y_prime[i] else ()
            return prepare, encode, decode

        bob_bits = _run_single_shot_rounds(config, stages)
        result.marginals = [(1.0 - b, float(b)) for b in bob_bits]

    if config.protocol == "SARG04-paper":
        verdicts = tuple("A" if y[i] == y_prime[i] else "D" for i in range(config.n))
        return _sift_and_finish(config, result, x, bob_bits, verdicts)

    # standard mode: announce a candidate pair per round and keep only the
    # rounds where Bob's outcome excludes one member
    decoy_rng = derive_rng(config.seed, STREAM_DECOY)
    deduced: list[int | None] = []
    for i in range(config.n):
        ann = sarg04_announce(x[i], y[i], decoy_rng)
        basis = "X" if y_prime[i] else "Z"
        deduced.append(sarg04_sift_standard(ann, basis, bob_bits[i]))
    verdicts = tuple("A" if d is not None else "D" for d in deduced)
    bob_key_bits = [d if d is not None else 0 for d in deduced]
    return _sift_and_finish(config, result, list(y), bob_key_bits, verdicts)


def run_session(config: SessionConfig) -> SessionResult:
    if config.protocol.startswith("BB84"):
        return run_bb84_session(config)
    return run_sarg04_session(config)


def run_tomography(config: SessionConfig, qubits=None):
    """Tomograph the state delivered to Bob's measurement, per qubit.

    Runs the three Pauli settings for ``config.shots`` each and compares
    the reconstructed state against the data bit Alice intended, so a
    disturbed channel (wrong-basis decoding, eavesdropping, noise) shows
    up as a fidelity drop.
    """
    from dataclasses import replace

    from .analysis import (
        FidelityReport,
        QubitTomography,
        SETTINGS,
        estimate_expectations,
        fidelity,
        reconstruct_rho,
        theoretical_rho,
        tomography_settings,
    )

    pipe = build_session_pipeline(config)
    bits = _resolve_bits(config, STREAM_BITS, config.bits)
    targets = list(pipe.info_qubits) if qubits is None else list(qubits)
    model = _readout_for(config, pipe.n_qubits)
    eve_seed = config.eve.seed if config.eve is not None else None
    entries = []
    for q in targets:
        if q not in pipe.info_qubits:
            raise ValueError(f"qubit {q} is not a transmitted qubit")
        settings = tomography_settings(q, pipe.n_qubits)
        hists = {}
        for k, name in enumerate(SETTINGS):
            tomo_pipe = replace(pipe, decode=pipe.decode + settings[name].ops)
            hist = run_pipeline(
                tomo_pipe, config.shots, config.seed, eve_seed=eve_seed, stream=(STREAM_TOMO, q, k)
            )
            if model is not None:
                hist = apply_readout_noise(
                    hist, model, derive_rng(config.seed, STREAM_TOMO, q, k, STREAM_READOUT)
                )
            hists[name] = hist
        exps = estimate_expectations(hists["Z"], hists["X"], hists["Y"], q)
        rho = reconstruct_rho(exps)
        rho_t = theoretical_rho(bits[q], None)
        entries.append(
            QubitTomography(
                qubit=q,
                fidelity=fidelity(rho, rho_t),
                theoretical=f"|{bits[q]}>",
                shots_per_setting=config.shots,
                expectations=exps,
                bloch_rescaled=exps.bloch_norm > 1.0,
                rho=QubitTomography.serialize_rho(rho),
            )
        )
    return FidelityReport(entries=entries)


def compare_session_to_expected(result: SessionResult, expected_p1, sigma: float = 3.0):
    """Binomial-test report of a session's marginals against a golden table."""
    from .analysis import compare_to_expected

    return compare_to_expected(result.marginals, expected_p1, result.shots, sigma=sigma)
