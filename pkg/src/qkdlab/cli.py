"""Scenario-driven command line: run sessions, QASM I/O, sweeps, tomography.

Exit codes: 0 success, 1 error, 2 protocol abort (check-bit QBER above
the scenario threshold). All artifacts are deterministic for a fixed
seed: rerunning a command writes byte-identical files.
"""

from __future__ import annotations

import argparse
import copy
import json
import math
import sys
from pathlib import Path

from . import qasm
from .adversary import build_calibration_set
from .analysis import build_confusion_matrix, compare_to_expected, mitigate, tvd
from .core import STREAM_SWEEP, derive_rng, exact_probabilities, run_circuit
from .qasm import ParseError
from .scenario import Scenario, ScenarioError, load_scenario
from .session import build_session_pipeline, run_session, run_tomography

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_ABORT = 2


def _fail(message: str) -> int:
    print(f"error: {message}", file=sys.stderr)
    return EXIT_ERROR


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8", newline="\n")


def _quasi_histogram_json(n_qubits: int, shots: int, counts: dict[str, float]) -> str:
    payload = {
        "n_qubits": n_qubits,
        "shots": shots,
        "counts": {k: counts[k] for k in sorted(counts)},
    }
    return json.dumps(payload, sort_keys=True, indent=2) + "\n"


def cmd_run(args) -> int:
    try:
        scenario = load_scenario(args.scenario, seed_override=args.seed)
    except ScenarioError as exc:
        return _fail(str(exc))
    config = scenario.config
    outdir = Path(args.out)
    try:
        result = run_session(config)
    except (ValueError, RuntimeError) as exc:
        return _fail(str(exc))

    _write(outdir / "session.json", result.to_json())
    if "histogram" in scenario.outputs and result.histogram is not None:
        _write(outdir / "histogram.json", result.histogram.to_json())

    if scenario.mitigation is not None:
        code = _run_mitigation(scenario, result, outdir)
        if code != EXIT_OK:
            return code

    fidelities = None
    if "fidelity" in scenario.outputs:
        try:
            freport = run_tomography(config)
        except ValueError as exc:
            return _fail(str(exc))
        fidelities = {e.qubit: e.fidelity for e in freport.entries}
        _write(outdir / "fidelity.json", freport.to_json())
        _write(outdir / "fidelity.csv", freport.to_csv())

    if "report" in scenario.outputs:
        expected = scenario.expected_marginals
        if expected is None and result.expected_p1 is not None:
            expected = dict(enumerate(result.expected_p1))
        if expected is None:
            print("note: no expected marginals available; report skipped", file=sys.stderr)
        else:
            report = compare_to_expected(
                result.marginals, expected, result.shots, fidelities=fidelities
            )
            _write(outdir / "report.csv", report.to_csv())
            _write(outdir / "report.json", report.to_json())

    if "qasm" in scenario.outputs:
        pipe = build_session_pipeline(config)
        if not pipe.deterministic:
            return _fail("scenario requests a qasm artifact but the eavesdropper channel has no static circuit")
        _write(outdir / "circuit.qasm", qasm.emit(pipe.to_circuit()))

    qber_text = "n/a" if result.check_qber is None else f"{result.check_qber:.4f}"
    print(
        f"{config.protocol} [{config.mode}] n={config.n} shots={config.shots} "
        f"sifted={len(result.accepted)} check_qber={qber_text} aborted={result.aborted}"
    )
    return EXIT_ABORT if result.aborted else EXIT_OK


def _run_mitigation(scenario: Scenario, result, outdir: Path) -> int:
    config = scenario.config
    if result.histogram is None:
        return _fail("mitigation needs a statistics-mode histogram")
    if config.readout_noise is None:
        return _fail("mitigation without a readout_noise model is a no-op; remove one")
    width = result.histogram.n_qubits
    model = config.readout_noise.padded(width)
    mode = scenario.mitigation["mode"]
    method = scenario.mitigation.get("method", "lsq")
    try:
        cal = build_calibration_set(width, model, config.shots, config.seed, mode=mode)
        matrix = build_confusion_matrix(cal)
        quasi = mitigate(result.histogram, matrix, method=method)
    except (ValueError, RuntimeError) as exc:
        return _fail(str(exc))
    _write(
        outdir / "histogram_mitigated.json",
        _quasi_histogram_json(width, result.histogram.shots, quasi),
    )
    pipe = build_session_pipeline(config)
    if pipe.deterministic:
        ideal = exact_probabilities(run_circuit(pipe.to_circuit()))
        observed = {k: float(v) for k, v in result.histogram.counts.items()}
        summary = {
            "tvd_observed_vs_ideal": tvd(observed, ideal),
            "tvd_mitigated_vs_ideal": tvd(quasi, ideal),
        }
        _write(outdir / "mitigation.json", json.dumps(summary, sort_keys=True, indent=2) + "\n")
    return EXIT_OK


def cmd_qasm(args) -> int:
    if args.action == "parse":
        path = Path(args.file)
        try:
            text = path.read_text(encoding="utf-8")
        except OSError as exc:
            return _fail(str(exc))
        try:
            circuit = qasm.parse(text)
        except ParseError as exc:
            print(f"{path}:{exc.line}:{exc.column}: {exc.message}", file=sys.stderr)
            return EXIT_ERROR
        print(
            f"qubits={circuit.n_qubits} ops={len(circuit.ops)} "
            f"barriers={len(circuit.barriers)} measured={sorted(circuit.measured)}"
        )
        return EXIT_OK

    # emit: build the scenario's circuit and write canonical text
    try:
        scenario = load_scenario(args.file, seed_override=args.seed)
        pipe = build_session_pipeline(scenario.config)
    except ScenarioError as exc:
        return _fail(str(exc))
    except ValueError as exc:
        return _fail(str(exc))
    if not pipe.deterministic:
        return _fail("the eavesdropper channel has no static circuit to emit")
    text = qasm.emit(pipe.to_circuit())
    if args.out:
        _write(Path(args.out), text)
        print(args.out)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def _resolve_path(doc: dict, path: str, value, n_bits: int) -> None:
    """Assign ``value`` at a dotted path into the scenario document.

    ``eve.attacked_fraction`` is a virtual knob: it rewrites the attacked
    set to the first round(f*n) indices.
    """
    if path == "eve.attacked_fraction":
        if "eve" not in doc:
            raise ScenarioError("eve.attacked_fraction needs an 'eve' section in the scenario")
        doc["eve"]["attacked"] = list(range(int(round(float(value) * n_bits))))
        return
    node = doc
    parts = path.split(".")
    try:
        for part in parts[:-1]:
            node = node[int(part)] if isinstance(node, list) else node[part]
        leaf = parts[-1]
        if isinstance(node, list):
            node[int(leaf)] = value
        elif isinstance(node, dict):
            node[leaf] = value
        else:
            raise KeyError(leaf)
    except (KeyError, IndexError, TypeError, ValueError):
        raise ScenarioError(f"unresolvable parameter path {path!r}") from None


def cmd_sweep(args) -> int:
    try:
        with open(args.scenario, encoding="utf-8") as fh:
            base_doc = json.load(fh)
        with open(args.spec, encoding="utf-8") as fh:
            spec = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        return _fail(str(exc))
    if not isinstance(spec, dict) or "parameter" not in spec or "values" not in spec:
        return _fail("sweep spec needs 'parameter' and 'values'")
    values = spec["values"]
    if not isinstance(values, list) or not values:
        return _fail("sweep grid must be a nonempty list")
    repetitions = int(spec.get("repetitions", 1))
    if repetitions < 1:
        return _fail("repetitions must be >= 1")
    parameter = spec["parameter"]

    try:
        from .scenario import build_scenario, resolve_seed

        base_seed = resolve_seed(base_doc, args.seed)
    except ScenarioError as exc:
        return _fail(str(exc))

    rows = []
    for pi, value in enumerate(values):
        qbers = []
        sift_rates = []
        for ri in range(repetitions):
            doc = copy.deepcopy(base_doc)
            n_bits = doc.get("n_bits", len(doc.get("bits", [])))
            try:
                _resolve_path(doc, parameter, value, n_bits)
                point_seed = int(derive_rng(base_seed, STREAM_SWEEP, pi, ri).integers(1 << 63))
                scenario = build_scenario(doc, seed_override=point_seed)
                result = run_session(scenario.config)
            except (ScenarioError, ValueError, RuntimeError) as exc:
                return _fail(f"{parameter}={value}: {exc}")
            if result.check_qber is not None:
                qbers.append(result.check_qber)
            sift_rates.append(len(result.accepted) / result.n_bits)
        mean = sum(qbers) / len(qbers) if qbers else math.nan
        if len(qbers) > 1:
            var = sum((q - mean) ** 2 for q in qbers) / (len(qbers) - 1)
            stderr = math.sqrt(var / len(qbers))
        else:
            stderr = 0.0
        sift_rate = sum(sift_rates) / len(sift_rates)
        rows.append((value, mean, stderr, sift_rate))

    lines = [f"{parameter},qber_mean,qber_stderr,sift_rate"]
    for value, mean, stderr, sift_rate in rows:
        lines.append(f"{value!r},{mean!r},{stderr!r},{sift_rate!r}")
    _write(Path(args.out) / "sweep.csv", "\n".join(lines) + "\n")
    print(f"{len(rows)} grid points -> {Path(args.out) / 'sweep.csv'}")
    return EXIT_OK


def cmd_tomo(args) -> int:
    try:
        scenario = load_scenario(args.scenario, seed_override=args.seed)
    except ScenarioError as exc:
        return _fail(str(exc))
    try:
        report = run_tomography(scenario.config, qubits=[args.qubit])
    except ValueError as exc:
        return _fail(str(exc))
    outdir = Path(args.out)
    _write(outdir / f"tomography_q{args.qubit}.json", report.to_json())
    _write(outdir / f"tomography_q{args.qubit}.csv", report.to_csv())
    entry = report.entries[0]
    print(f"q[{entry.qubit}] fidelity={entry.fidelity:.6f} vs {entry.theoretical}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qkdlab", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run a scenario and write artifacts")
    p_run.add_argument("scenario")
    p_run.add_argument("--out", required=True)
    p_run.add_argument("--seed", type=int, default=None)
    p_run.set_defaults(func=cmd_run)

    p_qasm = sub.add_parser("qasm", help="parse a .qasm file or emit a scenario circuit")
    p_qasm.add_argument("action", choices=("parse", "emit"))
    p_qasm.add_argument("file", help="qasm file (parse) or scenario file (emit)")
    p_qasm.add_argument("--out", default=None)
    p_qasm.add_argument("--seed", type=int, default=None)
    p_qasm.set_defaults(func=cmd_qasm)

    p_sweep = sub.add_parser("sweep", help="rerun a scenario over a parameter grid")
    p_sweep.add_argument("scenario")
    p_sweep.add_argument("--spec", required=True, help="sweep spec JSON")
    p_sweep.add_argument("--out", required=True)
    p_sweep.add_argument("--seed", type=int, default=None)
    p_sweep.set_defaults(func=cmd_sweep)

    p_tomo = sub.add_parser("tomo", help="tomograph one delivered qubit")
    p_tomo.add_argument("scenario")
    p_tomo.add_argument("--qubit", type=int, required=True)
    p_tomo.add_argument("--out", required=True)
    p_tomo.add_argument("--seed", type=int, default=None)
    p_tomo.set_defaults(func=cmd_tomo)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
