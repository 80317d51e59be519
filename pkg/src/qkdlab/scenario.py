"""Scenario files: schema validation and conversion to session configs.

A scenario is a JSON document validated against the shipped schema
(``schemas/scenario.schema.json``); unknown keys are rejected and
violations are reported with JSON pointer paths. Basis tokens are alias
strings or phase angles in radians for BB84; for SARG04, Eve's basis
tokens are reference bits (0 = computational, 1 = Hadamard).

Seed resolution order: the --seed override, the scenario's "seed", then
the QKDLAB_SEED environment variable.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass
from importlib import resources

import jsonschema

from .adversary import EveConfig, NoiseAttackConfig, ReadoutNoiseModel
from .protocols import ALIAS_PHASES, BasisSpec
from .session import SessionConfig

DEFAULT_OUTPUTS = ("histogram", "report")


class ScenarioError(Exception):
    """Invalid scenario document; ``pointer`` locates the offending value."""

    def __init__(self, message: str, pointer: str = ""):
        super().__init__(f"{pointer or '/'}: {message}" if pointer else message)
        self.pointer = pointer


def _schema() -> dict:
    text = resources.files("qkdlab").joinpath("schemas/scenario.schema.json").read_text()
    return json.loads(text)


def validate_document(doc: dict) -> None:
    """Schema-check a scenario dict; raises ScenarioError with a pointer."""
    validator = jsonschema.Draft7Validator(_schema())
    errors = sorted(validator.iter_errors(doc), key=lambda e: list(e.absolute_path))
    if errors:
        err = errors[0]
        pointer = "/" + "/".join(str(p) for p in err.absolute_path)
        raise ScenarioError(err.message, pointer=pointer)


def parse_basis_token(token) -> BasisSpec:
    if isinstance(token, str):
        if token not in ALIAS_PHASES:
            raise ScenarioError(f"unknown basis alias {token!r}")
        return BasisSpec.named(token)
    phase = float(token)
    for alias, known in ALIAS_PHASES.items():
        if abs(phase - known) <= 1e-12:
            return BasisSpec.named(alias)
    return BasisSpec(phase=phase)


def _parse_eve_token(token, protocol: str):
    if protocol.startswith("SARG04"):
        if not isinstance(token, (int, float)) or token not in (0, 1):
            raise ScenarioError("SARG04 eavesdropper bases must be reference bits 0/1")
        return int(token)
    return parse_basis_token(token)


def _parse_eve(doc: dict, protocol: str) -> EveConfig:
    strategy = doc["strategy"]
    attacked = tuple(doc["attacked"])
    if strategy["kind"] == "fixed":
        if "bases" not in strategy:
            raise ScenarioError("fixed strategy needs 'bases'", pointer="/eve/strategy")
        bases = {
            int(k): _parse_eve_token(v, protocol) for k, v in strategy["bases"].items()
        }
        return EveConfig(attacked=attacked, fixed_bases=bases, seed=doc.get("seed"))
    if "pool" not in strategy:
        raise ScenarioError("uniform strategy needs 'pool'", pointer="/eve/strategy")
    pool = tuple(_parse_eve_token(t, protocol) for t in strategy["pool"])
    return EveConfig(attacked=attacked, pool=pool, seed=doc.get("seed"))


def _parse_readout(doc: dict, n_bits: int) -> ReadoutNoiseModel:
    def rates(value) -> tuple[float, ...]:
        if isinstance(value, list):
            if len(value) != n_bits:
                raise ScenarioError(
                    f"readout rate list must have {n_bits} entries", pointer="/readout_noise"
                )
            return tuple(float(v) for v in value)
        return (float(value),) * n_bits

    return ReadoutNoiseModel(p01=rates(doc["p01"]), p10=rates(doc["p10"]))


@dataclass(frozen=True)
class Scenario:
    """A validated scenario document plus the derived session config."""

    doc: dict
    config: SessionConfig
    outputs: tuple[str, ...]
    mitigation: dict | None
    expected_marginals: dict[int, float] | None


def resolve_seed(doc: dict, override: int | None, env: dict | None = None) -> int:
    env = os.environ if env is None else env
    if override is not None:
        return int(override)
    if "seed" in doc:
        return int(doc["seed"])
    raw = env.get("QKDLAB_SEED")
    if raw is not None:
        try:
            return int(raw)
        except ValueError:
            raise ScenarioError(f"QKDLAB_SEED is not an integer: {raw!r}") from None
    raise ScenarioError("no seed: set 'seed' in the scenario, pass --seed, or export QKDLAB_SEED")


def build_scenario(doc: dict, seed_override: int | None = None, env: dict | None = None) -> Scenario:
    """Validate a scenario dict and produce the session config."""
    validate_document(doc)
    protocol = doc["protocol"]
    n_bits = doc.get("n_bits", len(doc["bits"]) if "bits" in doc else None)
    seed = resolve_seed(doc, seed_override, env)

    def bases(key):
        if key not in doc:
            return None
        return tuple(parse_basis_token(t) for t in doc[key])

    try:
        config = SessionConfig(
            protocol=protocol,
            n_bits=n_bits,
            bits=tuple(doc["bits"]) if "bits" in doc else None,
            alice_bases=bases("alice_bases"),
            bob_bases=bases("bob_bases"),
            alice_ref=tuple(doc["alice_ref"]) if "alice_ref" in doc else None,
            bob_ref=tuple(doc["bob_ref"]) if "bob_ref" in doc else None,
            basis_set=bases("basis_set"),
            shots=doc.get("shots", 8192),
            seed=seed,
            mode=doc.get("mode", "statistics"),
            check_fraction=doc.get("check_fraction", 0.5),
            qber_abort_threshold=doc.get("qber_abort_threshold", 0.11),
            eve=_parse_eve(doc["eve"], protocol) if "eve" in doc else None,
            noise_attack=NoiseAttackConfig(
                targets=tuple((t["qubit"], t["gate"]) for t in doc["noise_attack"]["targets"]),
                ancilla_value=doc["noise_attack"].get("ancilla_value", 1),
            )
            if "noise_attack" in doc
            else None,
            readout_noise=_parse_readout(doc["readout_noise"], n_bits)
            if "readout_noise" in doc
            else None,
            backend="readout-noise" if "readout_noise" in doc else "ideal",
            sarg_reference_qubits=doc.get("sarg_reference_qubits", True),
        )
    except ValueError as exc:
        raise ScenarioError(str(exc)) from exc

    expected = None
    if "expected_marginals" in doc:
        expected = {int(k): float(v) for k, v in doc["expected_marginals"].items()}
        for q, p in expected.items():
            if not 0 <= q < config.n:
                raise ScenarioError(f"expected-marginal qubit {q} out of range", pointer="/expected_marginals")
            if math.isnan(p):
                raise ScenarioError("expected marginal is NaN", pointer="/expected_marginals")
    return Scenario(
        doc=doc,
        config=config,
        outputs=tuple(doc.get("outputs", DEFAULT_OUTPUTS)),
        mitigation=doc.get("mitigation"),
        expected_marginals=expected,
    )


def load_scenario(path: str, seed_override: int | None = None, env: dict | None = None) -> Scenario:
    """Read, validate, and convert a scenario file."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"{path} is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ScenarioError("scenario root must be a JSON object")
    return build_scenario(doc, seed_override=seed_override, env=env)
