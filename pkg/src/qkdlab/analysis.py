"""Single-qubit tomography, fidelity, readout mitigation, and reports.

The density matrix is reconstructed as rho = (I + <X> X + <Y> Y + <Z> Z)/2
from three measurement settings. The Y pre-rotation uses this package's
S gate (diag(1, -i)) followed by H, which maps the +i eigenstate of Y to
|0>, so the measured p0 - p1 equals <Y> exactly; the round-trip tests pin
this down.

Fidelity is the Uhlmann form, which for single qubits reduces to
F = sqrt(tr(rho sigma) + 2 sqrt(det rho det sigma)).
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass

import numpy as np

from .adversary import CalibrationSet
from .core import Circuit, GateOp, ShotHistogram, marginal
from .protocols import BasisSpec, encode_ops

_PAULI_X = np.array([[0, 1], [1, 0]], dtype=complex)
_PAULI_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
_PAULI_Z = np.array([[1, 0], [0, -1]], dtype=complex)

_BLOCH_SLACK = 0.05

SETTINGS = ("Z", "X", "Y")


def tomography_settings(target: int, n_qubits: int = 1) -> dict[str, Circuit]:
    """Pre-rotation circuits for the three Pauli settings on one qubit.

    Z measures directly; X applies H; Y applies S then H. Append the ops
    of a setting to a state-preparation circuit, then measure ``target``.
    """
    rotations = {
        "Z": (),
        "X": (GateOp("H", target),),
        "Y": (GateOp("S", target), GateOp("H", target)),
    }
    return {
        name: Circuit(n_qubits=n_qubits, ops=ops, measured=frozenset({target}))
        for name, ops in rotations.items()
    }


@dataclass(frozen=True)
class PauliExpectations:
    """Estimated <X>, <Y>, <Z> of one qubit."""

    ex: float
    ey: float
    ez: float

    @property
    def bloch_norm(self) -> float:
        return math.sqrt(self.ex**2 + self.ey**2 + self.ez**2)


def estimate_expectations(
    hist_z: ShotHistogram, hist_x: ShotHistogram, hist_y: ShotHistogram, qubit: int
) -> PauliExpectations:
    """Each expectation is p0 - p1 of the corresponding setting."""
    values = []
    for hist in (hist_x, hist_y, hist_z):
        if hist.shots == 0:
            raise ValueError("empty histogram")
        p0, p1 = marginal(hist, qubit)
        values.append(p0 - p1)
    ex, ey, ez = values
    return PauliExpectations(ex=ex, ey=ey, ez=ez)


class DensityMatrix1Q:
    """2x2 density matrix; Hermitian, unit trace, PSD within 1e-10."""

    __slots__ = ("mat",)

    def __init__(self, mat: np.ndarray):
        mat = np.asarray(mat, dtype=complex)
        if mat.shape != (2, 2):
            raise ValueError("density matrix must be 2x2")
        if np.max(np.abs(mat - mat.conj().T)) > 1e-10:
            raise ValueError("density matrix not Hermitian")
        if abs(np.trace(mat).real - 1.0) > 1e-10:
            raise ValueError("density matrix trace is not 1")
        if np.min(np.linalg.eigvalsh(mat)) < -1e-10:
            raise ValueError("density matrix not positive semidefinite")
        self.mat = mat

    @classmethod
    def from_pure(cls, amp0: complex, amp1: complex) -> "DensityMatrix1Q":
        v = np.array([amp0, amp1], dtype=complex)
        v = v / np.linalg.norm(v)
        return cls(np.outer(v, v.conj()))

    def bloch(self) -> tuple[float, float, float]:
        return (
            float(np.trace(self.mat @ _PAULI_X).real),
            float(np.trace(self.mat @ _PAULI_Y).real),
            float(np.trace(self.mat @ _PAULI_Z).real),
        )


def reconstruct_rho(e: PauliExpectations) -> DensityMatrix1Q:
    """(I + <X>X + <Y>Y + <Z>Z)/2, radially rescaled onto the Bloch ball.

    A norm above 1 is a finite-shot artifact and is scaled back to 1;
    beyond 1 + 0.05 it is treated as a hard error instead.
    """
    norm = e.bloch_norm
    if norm > 1.0 + _BLOCH_SLACK:
        raise ValueError(f"Bloch vector norm {norm:.4f} exceeds 1 + slack")
    ex, ey, ez = e.ex, e.ey, e.ez
    if norm > 1.0:
        ex, ey, ez = ex / norm, ey / norm, ez / norm
    mat = 0.5 * (np.eye(2, dtype=complex) + ex * _PAULI_X + ey * _PAULI_Y + ez * _PAULI_Z)
    return DensityMatrix1Q(mat)


def theoretical_rho(bit: int, basis: BasisSpec | None) -> DensityMatrix1Q:
    """Projector of the encoded state, or of |bit> when basis is None."""
    if bit not in (0, 1):
        raise ValueError("bit must be 0 or 1")
    if basis is None:
        return DensityMatrix1Q.from_pure(1 - bit, bit)
    v = np.array([1.0, 0.0], dtype=complex)
    for op in encode_ops(bit, basis):
        v = op.matrix() @ v
    return DensityMatrix1Q.from_pure(v[0], v[1])


def fidelity(rho_e: DensityMatrix1Q, rho_t: DensityMatrix1Q) -> float:
    """Uhlmann fidelity via the single-qubit closed form."""
    a, b = rho_e.mat, rho_t.mat
    tr = float(np.trace(a @ b).real)
    det_term = max(float(np.linalg.det(a).real), 0.0) * max(float(np.linalg.det(b).real), 0.0)
    f2 = tr + 2.0 * math.sqrt(det_term)
    return min(1.0, math.sqrt(max(f2, 0.0)))


@dataclass(frozen=True)
class MitigationMatrix:
    """Column-stochastic confusion matrix M[observed, prepared].

    Full mode stores the 2^k x 2^k matrix; tensored mode stores one 2x2
    factor per qubit (ordered by qubit index) whose Kronecker product,
    taken highest qubit first, is the full matrix.
    """

    mode: str
    matrix: np.ndarray | None = None
    factors: tuple[np.ndarray, ...] | None = None

    def __post_init__(self):
        if self.mode not in ("full", "tensored"):
            raise ValueError(f"unknown mitigation mode {self.mode!r}")
        blocks = (self.matrix,) if self.mode == "full" else self.factors
        if blocks is None or any(b is None for b in blocks):
            raise ValueError("missing matrix data for the declared mode")
        for block in blocks:
            if np.min(block) < 0:
                raise ValueError("confusion matrix entries must be nonnegative")
            if np.max(np.abs(block.sum(axis=0) - 1.0)) > 1e-9:
                raise ValueError("confusion matrix columns must sum to 1")

    @property
    def n_qubits(self) -> int:
        if self.mode == "full":
            return int(round(math.log2(self.matrix.shape[0])))
        return len(self.factors)

    def full_matrix(self) -> np.ndarray:
        if self.mode == "full":
            return self.matrix
        if self.n_qubits > 12:
            raise ValueError("tensored matrix too large to materialize")
        out = np.array([[1.0]])
        for factor in reversed(self.factors):
            out = np.kron(out, factor)
        return out


def build_confusion_matrix(cal: CalibrationSet) -> MitigationMatrix:
    """Observed-given-prepared frequencies from a calibration run."""
    n = cal.n_qubits
    if cal.mode == "full":
        dim = 1 << n
        mat = np.zeros((dim, dim))
        for col in range(dim):
            key = format(col, f"0{n}b")
            hist = cal.histograms.get(key)
            if hist is None:
                raise ValueError(f"calibration set is missing prepared state {key}")
            if hist.shots == 0:
                raise ValueError("zero-shot calibration histogram")
            for observed, count in hist.counts.items():
                mat[int(observed, 2), col] = count / hist.shots
        return MitigationMatrix(mode="full", matrix=mat)
    zeros = cal.histograms.get("0" * n)
    ones = cal.histograms.get("1" * n)
    if zeros is None or ones is None:
        raise ValueError("tensored calibration needs the all-0 and all-1 states")
    factors = []
    for q in range(n):
        p01 = marginal(zeros, q)[1]
        p10 = marginal(ones, q)[0]
        factors.append(np.array([[1 - p01, p10], [p01, 1 - p10]]))
    return MitigationMatrix(mode="tensored", factors=tuple(factors))


def _project_simplex(v: np.ndarray) -> np.ndarray:
    u = np.sort(v)[::-1]
    css = np.cumsum(u)
    idx = np.nonzero(u * np.arange(1, len(v) + 1) > (css - 1.0))[0][-1]
    theta = (css[idx] - 1.0) / (idx + 1)
    return np.maximum(v - theta, 0.0)


def _simplex_lsq(a: np.ndarray, f: np.ndarray, tol: float = 1e-12, max_iter: int = 100_000) -> np.ndarray:
    """min ||Ax - f||_2 over the probability simplex, by accelerated
    projected gradient with restart."""
    ata = a.T @ a
    atf = a.T @ f
    lip = 2.0 * np.linalg.norm(a, 2) ** 2
    x = np.full(len(f), 1.0 / len(f))
    y = x.copy()
    t = 1.0
    for _ in range(max_iter):
        grad = 2.0 * (ata @ y - atf)
        x_new = _project_simplex(y - grad / lip)
        if np.max(np.abs(x_new - x)) < tol:
            return x_new
        t_new = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * t * t))
        momentum = (t - 1.0) / t_new
        if (x_new - x) @ (y - x_new) > 0:  # restart when momentum points uphill
            y = x_new.copy()
            t_new = 1.0
        else:
            y = x_new + momentum * (x_new - x)
        x, t = x_new, t_new
    raise RuntimeError("mitigation solver did not converge")


def mitigate(
    hist: ShotHistogram, m: MitigationMatrix, method: str = "lsq"
) -> dict[str, float]:
    """Recover pre-readout counts from an observed histogram.

    ``lsq`` solves constrained least squares on the probability simplex
    (nonnegative, sums to the shot count); ``pinv`` applies the raw
    matrix inverse for comparison and may go negative.
    """
    if m.n_qubits != hist.n_qubits:
        raise ValueError("mitigation matrix width does not match histogram")
    n = hist.n_qubits
    dim = 1 << n
    observed = np.zeros(dim)
    for key, count in hist.counts.items():
        observed[int(key, 2)] = count / hist.shots
    full = m.full_matrix()
    if method == "lsq":
        x = _simplex_lsq(full, observed)
    elif method == "pinv":
        x = np.linalg.pinv(full) @ observed
    else:
        raise ValueError(f"unknown mitigation method {method!r}")
    return {format(i, f"0{n}b"): float(v * hist.shots) for i, v in enumerate(x)}


def tvd(a, b) -> float:
    """Total variation distance between two distributions.

    Accepts equal-length vectors, or bitstring-keyed mappings over the
    same key width (missing keys count as zero).
    """
    if isinstance(a, dict) or isinstance(b, dict):
        widths = {len(k) for k in a} | {len(k) for k in b}
        if len(widths) > 1:
            raise ValueError("mixed bitstring widths")
        keys = set(a) | set(b)
        av = np.array([a.get(k, 0.0) for k in sorted(keys)], dtype=float)
        bv = np.array([b.get(k, 0.0) for k in sorted(keys)], dtype=float)
    else:
        av = np.asarray(a, dtype=float)
        bv = np.asarray(b, dtype=float)
        if av.shape != bv.shape:
            raise ValueError("distribution dimensions differ")
    sa, sb = av.sum(), bv.sum()
    if sa > 0:
        av = av / sa
    if sb > 0:
        bv = bv / sb
    return float(0.5 * np.abs(av - bv).sum())


@dataclass(frozen=True)
class QubitTomography:
    """One qubit's reconstructed state and its closeness to the reference."""

    qubit: int
    fidelity: float
    theoretical: str
    shots_per_setting: int
    expectations: PauliExpectations
    bloch_rescaled: bool
    rho: tuple  # 2x2 nested (re, im) pairs

    @staticmethod
    def serialize_rho(rho: DensityMatrix1Q) -> tuple:
        return tuple(
            tuple((float(z.real), float(z.imag)) for z in row) for row in rho.mat
        )


@dataclass
class FidelityReport:
    """Tomography results for a set of qubits."""

    entries: list[QubitTomography]

    def to_json(self) -> str:
        payload = [
            {
                "qubit": e.qubit,
                "fidelity": e.fidelity,
                "theoretical": e.theoretical,
                "shots_per_setting": e.shots_per_setting,
                "expectations": {"ex": e.expectations.ex, "ey": e.expectations.ey, "ez": e.expectations.ez},
                "bloch_rescaled": e.bloch_rescaled,
                "rho": [[list(z) for z in row] for row in e.rho],
            }
            for e in self.entries
        ]
        return json.dumps(payload, sort_keys=True, indent=2) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["qubit", "fidelity", "ex", "ey", "ez", "bloch_rescaled", "shots_per_setting"])
        for e in self.entries:
            writer.writerow(
                [
                    e.qubit,
                    repr(e.fidelity),
                    repr(e.expectations.ex),
                    repr(e.expectations.ey),
                    repr(e.expectations.ez),
                    str(e.bloch_rescaled).lower(),
                    e.shots_per_setting,
                ]
            )
        return buf.getvalue()


@dataclass(frozen=True)
class QubitComparison:
    qubit: int
    expected_p1: float
    observed_p1: float
    zscore: float
    passed: bool
    fidelity: float | None = None


@dataclass
class ComparisonReport:
    """Per-qubit observed-vs-expected marginals with binomial z-scores."""

    shots: int
    rows: list[QubitComparison]

    @property
    def all_passed(self) -> bool:
        return all(r.passed for r in self.rows)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["qubit", "expected_p1", "observed_p1", "zscore", "pass", "fidelity"])
        for r in self.rows:
            writer.writerow(
                [
                    r.qubit,
                    repr(r.expected_p1),
                    repr(r.observed_p1),
                    repr(r.zscore),
                    str(r.passed).lower(),
                    "" if r.fidelity is None else repr(r.fidelity),
                ]
            )
        return buf.getvalue()

    def to_json(self) -> str:
        payload = {
            "shots": self.shots,
            "all_passed": self.all_passed,
            "rows": [
                {
                    "qubit": r.qubit,
                    "expected_p1": r.expected_p1,
                    "observed_p1": r.observed_p1,
                    "zscore": r.zscore,
                    "pass": r.passed,
                    "fidelity": r.fidelity,
                }
                for r in self.rows
            ],
        }
        return json.dumps(payload, sort_keys=True, indent=2) + "\n"


def compare_to_expected(
    marginals: list[tuple[float, float]],
    expected_p1: dict[int, float] | list[float],
    shots: int,
    sigma: float = 3.0,
    fidelities: dict[int, float] | None = None,
) -> ComparisonReport:
    """Flag qubits whose observed p1 deviates beyond ``sigma`` binomial
    standard errors from the expected value; deterministic expectations
    (p in {0, 1}) must match exactly."""
    if isinstance(expected_p1, dict):
        items = sorted(expected_p1.items())
    else:
        items = list(enumerate(expected_p1))
    if not items:
        raise ValueError("empty expected-marginals table")
    rows = []
    for qubit, expected in items:
        if not 0 <= qubit < len(marginals):
            raise ValueError(f"expected-table qubit {qubit} out of range")
        observed = marginals[qubit][1]
        stderr = math.sqrt(expected * (1.0 - expected) / shots)
        if stderr == 0.0:
            z = 0.0 if observed == expected else math.inf
        else:
            z = (observed - expected) / stderr
        fid = None if fidelities is None else fidelities.get(qubit)
        rows.append(
            QubitComparison(
                qubit=qubit,
                expected_p1=float(expected),
                observed_p1=float(observed),
                zscore=float(z),
                passed=bool(abs(z) <= sigma),
                fidelity=fid,
            )
        )
    return ComparisonReport(shots=shots, rows=rows)
