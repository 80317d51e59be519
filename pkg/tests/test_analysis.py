"""Tomography, fidelity, mitigation, TVD, comparison reports."""

import math

import numpy as np
import pytest

from qkdlab.adversary import ReadoutNoiseModel, apply_readout_noise, build_calibration_set
from qkdlab.analysis import (
    ComparisonReport,
    DensityMatrix1Q,
    MitigationMatrix,
    PauliExpectations,
    SETTINGS,
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
from qkdlab.core import (
    Circuit,
    GateOp,
    ShotHistogram,
    StateVector,
    derive_rng,
    exact_marginal,
    measure_all,
    run_circuit,
)
from qkdlab.protocols import FOUR_BASES, encode_ops

SQ2 = 1.0 / math.sqrt(2.0)


def exact_expectations(state: StateVector, qubit: int = 0) -> PauliExpectations:
    """Infinite-shot expectations: apply each setting's rotation exactly."""
    values = {}
    settings = tomography_settings(qubit, state.n_qubits)
    for name in SETTINGS:
        rotated = state
        for op in settings[name].ops:
            from qkdlab.core import apply_gate

            rotated = apply_gate(rotated, op)
        p0, p1 = exact_marginal(rotated, qubit)
        values[name] = p0 - p1
    return PauliExpectations(ex=values["X"], ey=values["Y"], ez=values["Z"])


def pure_rho(amps) -> DensityMatrix1Q:
    return DensityMatrix1Q.from_pure(amps[0], amps[1])


class TestTomographySettings:
    def test_setting_ops(self):
        settings = tomography_settings(0)
        assert settings["Z"].ops == ()
        assert [op.kind for op in settings["X"].ops] == ["H"]
        assert [op.kind for op in settings["Y"].ops] == ["S", "H"]

    def test_ground_state_z(self):
        state = run_circuit(Circuit(1, ()))
        exp = exact_expectations(state)
        assert exp.ez == pytest.approx(1.0, abs=1e-12)

    def test_plus_state_x(self):
        state = run_circuit(Circuit(1, (GateOp("H", 0),)))
        exp = exact_expectations(state)
        assert exp.ex == pytest.approx(1.0, abs=1e-12)
        assert exp.ez == pytest.approx(0.0, abs=1e-12)

    def test_y_eigenstate(self):
        # (|0> + i|1>)/sqrt(2): the S,H pre-rotation maps it to |0>
        state = StateVector(1, np.array([SQ2, 1j * SQ2]))
        exp = exact_expectations(state)
        assert exp.ey == pytest.approx(1.0, abs=1e-12)


class TestEstimateExpectations:
    def test_deterministic_histograms(self):
        hz = ShotHistogram(1, {"0": 8192}, 8192)
        hx = ShotHistogram(1, {"0": 4096, "1": 4096}, 8192)
        hy = ShotHistogram(1, {"1": 8192}, 8192)
        exp = estimate_expectations(hz, hx, hy, 0)
        assert exp.ez == 1.0
        assert exp.ex == 0.0
        assert exp.ey == -1.0

    def test_empty_histogram_rejected(self):
        empty = ShotHistogram(1, {}, 0)
        with pytest.raises(ValueError):
            estimate_expectations(empty, empty, empty, 0)


class TestReconstructRho:
    def test_north_pole(self):
        rho = reconstruct_rho(PauliExpectations(0, 0, 1))
        assert np.allclose(rho.mat, np.diag([1.0, 0.0]))

    def test_maximally_mixed(self):
        rho = reconstruct_rho(PauliExpectations(0, 0, 0))
        assert np.allclose(rho.mat, np.eye(2) / 2)

    def test_plus_projector(self):
        rho = reconstruct_rho(PauliExpectations(1, 0, 0))
        assert np.allclose(rho.mat, np.full((2, 2), 0.5))

    def test_overshoot_rescaled_to_ball(self):
        exp = PauliExpectations(1.02, 0.0, 0.0)
        rho = reconstruct_rho(exp)  # valid despite norm 1.02
        bloch = rho.bloch()
        assert math.sqrt(sum(v * v for v in bloch)) == pytest.approx(1.0, abs=1e-10)

    def test_far_overshoot_rejected(self):
        with pytest.raises(ValueError):
            reconstruct_rho(PauliExpectations(1.1, 0.0, 0.0))

    def test_reconstruction_always_psd(self):
        rng = np.random.default_rng(12)
        for _ in range(100):
            v = rng.normal(size=3)
            v = v / np.linalg.norm(v) * rng.uniform(0, 1.05)
            rho = reconstruct_rho(PauliExpectations(*v))
            assert np.min(np.linalg.eigvalsh(rho.mat)) >= -1e-10


class TestTheoreticalRho:
    def test_x_basis_zero(self):
        rho = theoretical_rho(0, FOUR_BASES[0])
        assert np.allclose(rho.mat, np.full((2, 2), 0.5))

    def test_computational_reference(self):
        rho = theoretical_rho(1, None)
        assert np.allclose(rho.mat, np.diag([0.0, 1.0]))

    def test_ht_off_diagonal(self):
        from qkdlab.protocols import BASIS_HT

        rho = theoretical_rho(0, BASIS_HT)
        assert rho.mat[0, 1] == pytest.approx(0.5 * np.exp(-1j * math.pi / 4), abs=1e-12)

    def test_bad_bit(self):
        with pytest.raises(ValueError):
            theoretical_rho(2, None)


class TestFidelity:
    def test_identical_pure(self):
        rho = pure_rho([SQ2, SQ2])
        assert fidelity(rho, rho) == pytest.approx(1.0, abs=1e-12)

    def test_orthogonal_pure(self):
        assert fidelity(pure_rho([1, 0]), pure_rho([0, 1])) == pytest.approx(0.0, abs=1e-12)

    def test_mixed_vs_pure_sqrt_half(self):
        mixed = DensityMatrix1Q(np.eye(2) / 2)
        pure = pure_rho([1, 0])
        assert fidelity(mixed, pure) == pytest.approx(math.sqrt(0.5), abs=1e-12)

    def _random_rho(self, rng) -> DensityMatrix1Q:
        v = rng.normal(size=3)
        v = v / np.linalg.norm(v) * rng.uniform(0, 1)
        return reconstruct_rho(PauliExpectations(*v))

    def _random_unitary(self, rng) -> np.ndarray:
        m = rng.normal(size=(2, 2)) + 1j * rng.normal(size=(2, 2))
        q, r = np.linalg.qr(m)
        return q * (np.diag(r) / np.abs(np.diag(r)))

    def test_bounds_symmetry_unitary_invariance(self):
        rng = np.random.default_rng(99)
        for _ in range(100):
            a, b = self._random_rho(rng), self._random_rho(rng)
            f = fidelity(a, b)
            assert 0.0 <= f <= 1.0
            assert f == pytest.approx(fidelity(b, a), abs=1e-12)
            u = self._random_unitary(rng)
            ua = DensityMatrix1Q(u @ a.mat @ u.conj().T)
            ub = DensityMatrix1Q(u @ b.mat @ u.conj().T)
            assert fidelity(ua, ub) == pytest.approx(f, abs=1e-9)

    def test_unit_fidelity_iff_equal(self):
        rng = np.random.default_rng(5)
        for _ in range(50):
            a, b = self._random_rho(rng), self._random_rho(rng)
            if fidelity(a, b) > 1.0 - 1e-9:
                assert np.max(np.abs(a.mat - b.mat)) < 1e-4


class TestTomographyRoundTrip:
    @pytest.mark.parametrize("bit", [0, 1])
    @pytest.mark.parametrize("basis", FOUR_BASES)
    def test_infinite_shot_fidelity_is_one(self, bit, basis):
        state = run_circuit(Circuit(1, tuple(encode_ops(bit, basis))))
        exp = exact_expectations(state)
        rho = reconstruct_rho(exp)
        assert fidelity(rho, theoretical_rho(bit, basis)) == pytest.approx(1.0, abs=1e-9)


class TestConfusionMatrix:
    def test_noiseless_identity(self):
        cal = build_calibration_set(2, ReadoutNoiseModel.uniform(2, 0.0), 128, seed=1)
        m = build_confusion_matrix(cal)
        assert np.array_equal(m.matrix, np.eye(4))

    def test_symmetric_flip_estimate(self):
        cal = build_calibration_set(1, ReadoutNoiseModel.uniform(1, 0.1), 1 << 15, seed=2)
        m = build_confusion_matrix(cal)
        tol = 3 * math.sqrt(0.09 / (1 << 15))
        assert abs(m.matrix[0, 0] - 0.9) < tol
        assert abs(m.matrix[1, 1] - 0.9) < tol

    def test_tensored_kronecker_structure(self):
        cal = build_calibration_set(2, ReadoutNoiseModel.uniform(2, 0.1), 1 << 14, seed=3, mode="tensored")
        m = build_confusion_matrix(cal)
        full = m.full_matrix()
        assert full.shape == (4, 4)
        assert np.allclose(full, np.kron(m.factors[1], m.factors[0]), atol=1e-12)
        assert np.max(np.abs(full.sum(axis=0) - 1.0)) < 1e-9

    def test_missing_prepared_state(self):
        from qkdlab.adversary import CalibrationSet

        h = ShotHistogram(1, {"0": 4}, 4)
        cal = CalibrationSet(1, {"0": h}, mode="full")
        with pytest.raises(ValueError):
            build_confusion_matrix(cal)


class TestMitigate:
    def test_identity_matrix_is_noop(self):
        hist = ShotHistogram(1, {"0": 900, "1": 100}, 1000)
        m = MitigationMatrix(mode="full", matrix=np.eye(2))
        quasi = mitigate(hist, m)
        assert quasi["0"] == pytest.approx(900.0, abs=1e-6)
        assert quasi["1"] == pytest.approx(100.0, abs=1e-6)

    def test_analytic_two_by_two(self):
        # M = [[.9,.1],[.1,.9]] observed (0.82, 0.18) -> (0.9, 0.1)
        hist = ShotHistogram(1, {"0": 8200, "1": 1800}, 10000)
        m = MitigationMatrix(mode="full", matrix=np.array([[0.9, 0.1], [0.1, 0.9]]))
        quasi = mitigate(hist, m)
        assert quasi["0"] / 10000 == pytest.approx(0.9, abs=1e-8)
        assert quasi["1"] / 10000 == pytest.approx(0.1, abs=1e-8)

    def test_pinv_method_matches_on_interior(self):
        hist = ShotHistogram(1, {"0": 8200, "1": 1800}, 10000)
        m = MitigationMatrix(mode="full", matrix=np.array([[0.9, 0.1], [0.1, 0.9]]))
        quasi = mitigate(hist, m, method="pinv")
        assert quasi["0"] / 10000 == pytest.approx(0.9, abs=1e-10)

    def test_width_mismatch(self):
        hist = ShotHistogram(2, {"00": 1}, 1)
        m = MitigationMatrix(mode="full", matrix=np.eye(2))
        with pytest.raises(ValueError):
            mitigate(hist, m)

    def test_output_is_normalized_and_nonnegative(self):
        hist = ShotHistogram(1, {"0": 30, "1": 970}, 1000)
        m = MitigationMatrix(mode="full", matrix=np.array([[0.95, 0.05], [0.05, 0.95]]))
        quasi = mitigate(hist, m)
        assert all(v >= 0 for v in quasi.values())
        assert sum(quasi.values()) == pytest.approx(1000.0, abs=1e-6)

    def _tvd_trial(self, seed: int, n: int, shots: int) -> tuple[float, float]:
        """One synthetic-noise trial; returns (tvd unmitigated, tvd mitigated).

        Trials prepare a random product state with at least one qubit left
        in a computational state, so the readout noise actually displaces
        the distribution (a fully uniform state is noise-invariant and
        gives mitigation nothing to correct).
        """
        rng = np.random.default_rng(seed)
        ops = [GateOp("X", q) if rng.integers(2) else GateOp("I", q) for q in range(n)]
        mixed = rng.choice(n, size=rng.integers(0, n), replace=False)
        ops += [GateOp("H", int(q)) for q in mixed]
        state = run_circuit(Circuit(n, ops))
        ideal = {format(i, f"0{n}b"): p for i, p in enumerate(state.probabilities())}
        model = ReadoutNoiseModel.uniform(n, 0.05)
        hist = measure_all(state, shots, seed=seed)
        noisy = apply_readout_noise(hist, model, derive_rng(seed, 1))
        cal = build_calibration_set(n, model, shots, seed=seed + 10_000)
        quasi = mitigate(noisy, build_confusion_matrix(cal))
        observed = {k: float(v) for k, v in noisy.counts.items()}
        return tvd(observed, ideal), tvd(quasi, ideal)

    def test_mitigation_reduces_tvd(self):
        wins = 0
        for seed in range(100):
            before, after = self._tvd_trial(seed, n=1 + seed % 3, shots=8192)
            if after < before:
                wins += 1
        assert wins >= 95

    def test_consistency_improves_with_shots(self):
        small = [self._tvd_trial(s, n=2, shots=1 << 13)[1] for s in range(10)]
        large = [self._tvd_trial(s, n=2, shots=1 << 16)[1] for s in range(10)]
        assert sum(large) / 10 < sum(small) / 10


class TestTvd:
    def test_identical(self):
        assert tvd([0.5, 0.5], [0.5, 0.5]) == 0.0

    def test_disjoint(self):
        assert tvd([1.0, 0.0], [0.0, 1.0]) == 1.0

    def test_direct_sum(self):
        assert tvd([0.9, 0.1], [0.8, 0.2]) == pytest.approx(0.1, abs=1e-12)

    def test_dict_union_support(self):
        assert tvd({"00": 1.0}, {"11": 1.0}) == 1.0

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            tvd([0.5, 0.5], [1.0])

    def test_mixed_key_width(self):
        with pytest.raises(ValueError):
            tvd({"0": 1.0}, {"00": 1.0})


class TestCompareToExpected:
    def test_ideal_run_passes(self):
        report = compare_to_expected(
            marginals=[(0.0, 1.0), (0.503, 0.497)],
            expected_p1={0: 1.0, 1: 0.5},
            shots=8192,
        )
        assert report.all_passed

    def test_readout_shifts_fail(self):
        # p10 = 0.03 on a deterministic qubit is far beyond 3 sigma
        report = compare_to_expected(
            marginals=[(0.03, 0.97)], expected_p1={0: 1.0}, shots=8192
        )
        assert not report.rows[0].passed
        assert report.rows[0].zscore == math.inf

    def test_statistical_zscore(self):
        report = compare_to_expected(
            marginals=[(0.49, 0.51)], expected_p1={0: 0.5}, shots=8192
        )
        want = 0.01 / math.sqrt(0.25 / 8192)
        assert report.rows[0].zscore == pytest.approx(want, abs=1e-9)

    def test_empty_table_rejected(self):
        with pytest.raises(ValueError):
            compare_to_expected(marginals=[(1.0, 0.0)], expected_p1={}, shots=10)

    def test_csv_shape(self):
        report = compare_to_expected(
            marginals=[(0.0, 1.0)], expected_p1={0: 1.0}, shots=8192
        )
        lines = report.to_csv().strip().splitlines()
        assert lines[0] == "qubit,expected_p1,observed_p1,zscore,pass,fidelity"
        assert len(lines) == 2
