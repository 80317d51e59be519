"""Statevector core: gates, circuits, sampling, collapse."""

import json
import math

import numpy as np
import pytest

from qkdlab.core import (
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

# Reference matrices written out independently of gate_matrix.
SQ2 = 1.0 / math.sqrt(2.0)
REF = {
    "I": np.eye(2),
    "X": np.array([[0, 1], [1, 0]], dtype=complex),
    "Y": np.array([[0, -1j], [1j, 0]], dtype=complex),
    "Z": np.diag([1, -1]).astype(complex),
    "H": SQ2 * np.array([[1, 1], [1, -1]], dtype=complex),
    "S": np.diag([1, np.exp(-1j * math.pi / 2)]),
    "Sdg": np.diag([1, np.exp(1j * math.pi / 2)]),
    "T": np.diag([1, np.exp(1j * math.pi / 4)]),
    "Tdg": np.diag([1, np.exp(-1j * math.pi / 4)]),
}


def product_oracle(kinds: list[str]) -> np.ndarray:
    """Final 1-qubit state of a gate sequence, by direct matrix products."""
    v = np.array([1.0, 0.0], dtype=complex)
    for kind in kinds:
        v = REF[kind] @ v
    return v


class TestNewState:
    def test_single_qubit(self):
        s = new_state(1)
        assert np.allclose(s.amps, [1.0, 0.0])

    def test_three_qubits(self):
        s = new_state(3)
        assert s.amps.shape == (8,)
        assert s.amps[0] == 1.0
        assert np.count_nonzero(s.amps) == 1

    @pytest.mark.parametrize("n", [0, 25, -1])
    def test_out_of_range(self, n):
        with pytest.raises(ValueError):
            new_state(n)


class TestGateMatrix:
    @pytest.mark.parametrize("kind", list(REF))
    def test_matches_reference(self, kind):
        assert np.allclose(gate_matrix(kind), REF[kind], atol=1e-15)

    def test_s_carries_minus_i(self):
        assert gate_matrix("S")[1, 1] == pytest.approx(-1j)

    def test_phase_gate_pi_equals_z(self):
        assert np.allclose(gate_matrix("P", math.pi), REF["Z"], atol=1e-15)

    def test_phase_gate_quarter_equals_t(self):
        assert np.allclose(gate_matrix("P", math.pi / 4), REF["T"], atol=1e-15)

    def test_unknown_gate(self):
        with pytest.raises(ValueError):
            gate_matrix("Q")

    def test_theta_on_fixed_gate(self):
        with pytest.raises(ValueError):
            gate_matrix("H", 0.3)

    def test_p_needs_theta(self):
        with pytest.raises(ValueError):
            gate_matrix("P")

    @pytest.mark.parametrize("kind", list(REF) + ["P"])
    def test_unitarity(self, kind):
        theta = 0.7345 if kind == "P" else None
        u = gate_matrix(kind, theta)
        assert np.max(np.abs(u @ u.conj().T - np.eye(2))) < 1e-10

    def test_inverse_pairs(self):
        # S entries are exact imaginary units, so the product is bit-exact;
        # T holds e^{i pi/4} whose float square magnitude is 1 +- 1 ulp
        assert np.array_equal(gate_matrix("S") @ gate_matrix("Sdg"), np.eye(2))
        assert np.max(np.abs(gate_matrix("T") @ gate_matrix("Tdg") - np.eye(2))) < 1e-15


class TestApplyGate:
    def test_hadamard_on_zero(self):
        s = apply_gate(new_state(1), GateOp("H", 0))
        assert np.allclose(s.amps, [SQ2, SQ2])

    def test_x_fixes_plus(self):
        plus = StateVector(1, np.array([SQ2, SQ2]))
        assert overlap(apply_gate(plus, GateOp("X", 0)), plus) == pytest.approx(1.0)

    def test_cx_flips_target_when_control_set(self):
        s = apply_gate(new_state(2), GateOp("X", 1))  # control qubit 1 -> |1>
        s = apply_gate(s, GateOp("X", 0, control=1))
        # key "11": both qubits set
        assert exact_probabilities(s) == {"11": 1.0}

    def test_cx_idle_when_control_clear(self):
        s = apply_gate(new_state(2), GateOp("X", 0, control=1))
        assert exact_probabilities(s) == {"00": 1.0}

    def test_entangling(self):
        s = apply_gate(new_state(2), GateOp("H", 0))
        s = apply_gate(s, GateOp("X", 1, control=0))
        probs = exact_probabilities(s)
        assert probs["00"] == pytest.approx(0.5)
        assert probs["11"] == pytest.approx(0.5)
        assert set(probs) == {"00", "11"}

    def test_target_out_of_range(self):
        with pytest.raises(ValueError):
            apply_gate(new_state(1), GateOp("X", 1))

    def test_control_equals_target_rejected(self):
        with pytest.raises(ValueError):
            GateOp("X", 0, control=0)

    def test_norm_preserved_random_circuits(self):
        rng = np.random.default_rng(11)
        kinds = ["I", "X", "Y", "Z", "H", "S", "Sdg", "T", "Tdg", "P"]
        for _ in range(30):
            s = new_state(4)
            for _ in range(40):
                kind = kinds[rng.integers(len(kinds))]
                theta = float(rng.uniform(-math.pi, math.pi)) if kind == "P" else None
                target = int(rng.integers(4))
                control = None
                if rng.random() < 0.3:
                    control = int(rng.integers(4))
                    if control == target:
                        control = None
                s = apply_gate(s, GateOp(kind, target, control=control, theta=theta))
            assert abs(np.sum(np.abs(s.amps) ** 2) - 1.0) < 1e-10


class TestRunCircuit:
    def test_x_only(self):
        s = run_circuit(Circuit(1, [GateOp("X", 0)]))
        assert exact_probabilities(s) == {"1": 1.0}

    def test_encode_decode_column_q0(self):
        # X, H, S then Sdg, H recovers |1> exactly
        kinds = ["X", "H", "S", "Sdg", "H"]
        s = run_circuit(Circuit(1, [GateOp(k, 0) for k in kinds]))
        expected = product_oracle(kinds)
        assert np.allclose(s.amps, expected, atol=1e-12)
        assert abs(abs(s.amps[1]) ** 2 - 1.0) < 1e-10

    def test_mismatched_column_q4(self):
        # H, T then Z, H leaves P(1) = cos^2(pi/8)
        kinds = ["H", "T", "Z", "H"]
        s = run_circuit(Circuit(1, [GateOp(k, 0) for k in kinds]))
        expected = product_oracle(kinds)
        assert np.allclose(s.amps, expected, atol=1e-12)
        assert abs(s.amps[1]) ** 2 == pytest.approx(math.cos(math.pi / 8) ** 2, abs=1e-10)

    def test_ops_applied_in_order(self):
        s = run_circuit(Circuit(1, [GateOp("X", 0), GateOp("H", 0)]))
        assert np.allclose(s.amps, [SQ2, -SQ2])


class TestExactProbabilities:
    def test_ground_state(self):
        assert exact_probabilities(new_state(1)) == {"0": 1.0}

    def test_plus_state(self):
        s = apply_gate(new_state(1), GateOp("H", 0))
        probs = exact_probabilities(s)
        assert probs["0"] == pytest.approx(0.5)
        assert probs["1"] == pytest.approx(0.5)

    def test_sums_to_one(self):
        kinds = ["X", "H", "S", "H"]
        s = run_circuit(Circuit(1, [GateOp(k, 0) for k in kinds]))
        probs = exact_probabilities(s)
        assert sum(probs.values()) == pytest.approx(1.0, abs=1e-10)
        assert probs["0"] == pytest.approx(0.5, abs=1e-10)


class TestMeasureAll:
    def test_deterministic_state(self):
        s = run_circuit(Circuit(1, [GateOp("X", 0)]))
        hist = measure_all(s, 8192, seed=1)
        assert hist.counts == {"1": 8192}

    def test_same_seed_same_histogram(self):
        s = apply_gate(new_state(3), GateOp("H", 1))
        a = measure_all(s, 4096, seed=99)
        b = measure_all(s, 4096, seed=99)
        assert a == b

    def test_different_seed_differs(self):
        s = apply_gate(new_state(1), GateOp("H", 0))
        a = measure_all(s, 8192, seed=1)
        b = measure_all(s, 8192, seed=2)
        assert a != b

    def test_binomial_bound_plus_state(self):
        s = apply_gate(new_state(1), GateOp("H", 0))
        for seed in range(5):
            hist = measure_all(s, 8192, seed=seed)
            p0 = hist.counts.get("0", 0) / 8192
            assert abs(p0 - 0.5) < 3 * math.sqrt(0.25 / 8192)

    def test_counts_sum_to_shots(self):
        s = run_circuit(Circuit(2, [GateOp("H", 0), GateOp("H", 1)]))
        hist = measure_all(s, 1000, seed=5)
        assert sum(hist.counts.values()) == 1000

    def test_zero_shots(self):
        with pytest.raises(ValueError):
            measure_all(new_state(1), 0, seed=1)


class TestMarginal:
    def test_even_split(self):
        hist = ShotHistogram(2, {"00": 50, "11": 50}, 100)
        assert marginal(hist, 0) == (0.5, 0.5)

    def test_little_endian_positions(self):
        # key "10" means qubit 1 set, qubit 0 clear
        hist = ShotHistogram(2, {"10": 8192}, 8192)
        assert marginal(hist, 1) == (0.0, 1.0)
        assert marginal(hist, 0) == (1.0, 0.0)

    def test_index_out_of_range(self):
        hist = ShotHistogram(1, {"0": 1}, 1)
        with pytest.raises(ValueError):
            marginal(hist, 1)

    def test_exact_marginal_matches_histogram_limit(self):
        s = run_circuit(Circuit(2, [GateOp("X", 1), GateOp("H", 0)]))
        assert exact_marginal(s, 1)[1] == pytest.approx(1.0)
        assert exact_marginal(s, 0)[1] == pytest.approx(0.5)


class TestCollapse:
    def test_deterministic_qubit(self):
        s = run_circuit(Circuit(2, [GateOp("X", 1)]))
        outcome, post = collapse(s, 1, derive_rng(1))
        assert outcome == 1
        assert overlap(post, s) == pytest.approx(1.0)

    def test_projection_of_plus(self):
        s = apply_gate(new_state(1), GateOp("H", 0))
        outcome, post = collapse(s, 0, derive_rng(3))
        target = np.zeros(2, dtype=complex)
        target[outcome] = 1.0
        assert overlap(post, StateVector(1, target)) == pytest.approx(1.0)

    def test_entangled_correlation(self):
        s = apply_gate(new_state(2), GateOp("H", 0))
        s = apply_gate(s, GateOp("X", 1, control=0))
        for seed in range(8):
            outcome, post = collapse(s, 0, derive_rng(seed))
            probs = exact_probabilities(post)
            key = "11" if outcome else "00"
            assert probs[key] == pytest.approx(1.0)

    def test_outcome_frequencies(self):
        s = apply_gate(new_state(1), GateOp("H", 0))
        outcomes = [collapse(s, 0, derive_rng(7, i))[0] for i in range(2000)]
        assert abs(sum(outcomes) / 2000 - 0.5) < 3 * math.sqrt(0.25 / 2000)


class TestEigenstateInvariance:
    @pytest.mark.parametrize(
        "kind,amps",
        [
            ("X", [SQ2, SQ2]),
            ("X", [SQ2, -SQ2]),
            ("Z", [1.0, 0.0]),
            ("Z", [0.0, 1.0]),
            ("Y", [SQ2, 1j * SQ2]),
            ("Y", [SQ2, -1j * SQ2]),
        ],
    )
    def test_fixed_up_to_global_phase(self, kind, amps):
        s = StateVector(1, np.array(amps, dtype=complex))
        assert abs(overlap(apply_gate(s, GateOp(kind, 0)), s) - 1.0) < 1e-10


class TestShotHistogram:
    def test_json_round_trip(self):
        hist = ShotHistogram(2, {"01": 3, "10": 5}, 8)
        again = ShotHistogram.from_json(hist.to_json())
        assert again == hist

    def test_json_key_order_lexicographic(self):
        hist = ShotHistogram(2, {"11": 1, "00": 2, "01": 3}, 6)
        counts = json.loads(hist.to_json())["counts"]
        assert list(counts) == sorted(counts)

    def test_counts_must_sum(self):
        with pytest.raises(ValueError):
            ShotHistogram(1, {"0": 1}, 2)

    def test_key_length_checked(self):
        with pytest.raises(ValueError):
            ShotHistogram(2, {"0": 1}, 1)


class TestStateVector:
    def test_rejects_nan(self):
        with pytest.raises(ValueError):
            StateVector(1, np.array([np.nan, 0.0]))

    def test_rejects_unnormalized(self):
        with pytest.raises(ValueError):
            StateVector(1, np.array([1.0, 1.0]))

    def test_rejects_wrong_length(self):
        with pytest.raises(ValueError):
            StateVector(2, np.array([1.0, 0.0]))


class TestDeriveRng:
    def test_same_path_same_stream(self):
        a = derive_rng(42, 1, 2).random(4)
        b = derive_rng(42, 1, 2).random(4)
        assert np.array_equal(a, b)

    def test_different_path_differs(self):
        a = derive_rng(42, 1, 2).random(4)
        b = derive_rng(42, 1, 3).random(4)
        assert not np.array_equal(a, b)
