import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qrcell import qcore, tomo
from qrcell.entangle import LarmorClock, atom_photon_state
from qrcell.noise import depolarized_ap_state
from qrcell.qcore import CANONICAL_ORDER, DensityMatrix, PureState
from qrcell.tomo import (
    Basis,
    IncompleteSettings,
    MeasurementSetting,
    TomographyData,
    bootstrap,
    complete_settings,
    larmor_rephase,
    linear_inversion,
    nearest_physical,
    read_counts_csv,
    reconstruct,
    simulate_counts,
)

from .conftest import random_density

A1, PA, A2, PB = CANONICAL_ORDER
BELL = PureState(np.array([1, 0, 0, 1]) / math.sqrt(2), (PA, PB))


def naive_inversion(rho_probs, n):
    """Reference: rho = sum_P <P> P / 2^n with <P> from one matching setting."""
    pauli = {"I": np.eye(2), "X": qcore.PAULI["X"], "Y": qcore.PAULI["Y"], "Z": qcore.PAULI["Z"]}
    out = np.zeros((2 ** n, 2 ** n), complex)
    for ops in np.ndindex(*(4,) * n):
        labels = ["IXYZ"[o] for o in ops]
        setting = "".join("Z" if c == "I" else c for c in labels)
        probs = rho_probs[setting]
        signs = np.ones(2 ** n)
        for i in range(2 ** n):
            bits = format(i, f"0{n}b")
            signs[i] = np.prod([(-1) ** int(b) for b, c in zip(bits, labels) if c != "I"])
        op = np.ones((1, 1))
        for c in labels:
            op = np.kron(op, pauli[c])
        out += (signs @ probs) * op
    return out / 2 ** n


class TestSettings:
    def test_complete_count(self):
        assert len(complete_settings(2)) == 9
        assert {s.label for s in complete_settings(1)} == {"Z", "X", "Y"}

    def test_shots_positive(self):
        with pytest.raises(ValueError):
            MeasurementSetting((Basis.Z,), shots=0)


class TestSimulateCounts:
    def test_ground_state_z(self, rng):
        rho = PureState.basis([0], (A1,)).to_density()
        data = simulate_counts(rho, [MeasurementSetting(("Z",), 1000)], rng)
        np.testing.assert_array_equal(data.counts, [[1000, 0]])

    def test_mixed_fifty_fifty(self):
        rho = DensityMatrix.maximally_mixed((A1,))
        data = simulate_counts(rho, complete_settings(1))
        np.testing.assert_allclose(data.counts, 0.5, atol=1e-15)

    def test_bell_correlations(self):
        data = simulate_counts(BELL.to_density(), [MeasurementSetting(("X", "X"))])
        np.testing.assert_allclose(data.counts[0], [0.5, 0, 0, 0.5], atol=1e-15)

    def test_y_eigenstate(self):
        plus_i = PureState(np.array([1, 1j]) / math.sqrt(2), (A1,))
        data = simulate_counts(plus_i.to_density(), [MeasurementSetting(("Y",))])
        np.testing.assert_allclose(data.counts[0], [1, 0], atol=1e-15)

    def test_needs_rng(self):
        with pytest.raises(ValueError):
            simulate_counts(BELL.to_density(), complete_settings(2, 10))


class TestReconstruct:
    @given(st.integers(0, 2 ** 32 - 1), st.integers(1, 3))
    @settings(max_examples=20)
    def test_analytic_round_trip(self, seed, n):
        rng = np.random.default_rng(seed)
        rho = random_density(CANONICAL_ORDER[:n], rng)
        res = reconstruct(simulate_counts(rho, complete_settings(n)))
        np.testing.assert_allclose(res.rho.matrix, rho.matrix, atol=1e-10)
        assert res.projection_distance < 1e-10

    def test_inversion_matches_reference(self, rng):
        rho = random_density((A1, PA), rng)
        data = simulate_counts(rho, complete_settings(2, 500), rng)
        probs = dict(zip((s.label for s in data.settings), data.frequencies()))
        # the reference uses one setting per Pauli, the library averages over
        # all compatible ones; both are exact only in the analytic limit
        ref = naive_inversion(probs, 2)
        np.testing.assert_allclose(linear_inversion(data), ref, atol=0.1)
        exact = simulate_counts(rho, complete_settings(2))
        probs = dict(zip((s.label for s in exact.settings), exact.frequencies()))
        np.testing.assert_allclose(linear_inversion(exact), naive_inversion(probs, 2), atol=1e-12)

    def test_sampled_atom_state(self, rng):
        rho = depolarized_ap_state(0.924, atom=2)
        data = simulate_counts(rho, complete_settings(2, 10 ** 5), rng)
        res = reconstruct(data, target=atom_photon_state(atom=2))
        assert res.fidelity == pytest.approx(0.924, abs=0.01)
        assert res.rho.n_qubits == 2

    def test_mixed_purity(self, rng):
        data = simulate_counts(DensityMatrix.maximally_mixed((A1, PA)), complete_settings(2, 10 ** 4), rng)
        assert reconstruct(data).purity == pytest.approx(0.25, abs=0.01)

    def test_missing_settings(self):
        settings_ = [s for s in complete_settings(2) if s.label not in ("XY", "ZZ")]
        data = simulate_counts(BELL.to_density(), settings_)
        with pytest.raises(IncompleteSettings, match="XY") as err:
            reconstruct(data)
        assert "ZZ" in str(err.value)

    def test_no_target_nan(self):
        res = reconstruct(simulate_counts(BELL.to_density(), complete_settings(2)))
        assert math.isnan(res.fidelity)

    def test_projection_bound(self, rng):
        # few shots on a pure state drive eigenvalues negative
        for _ in range(20):
            data = simulate_counts(BELL.to_density(), complete_settings(2, 30), rng)
            res = reconstruct(data, target=BELL)
            assert abs(res.fidelity - res.fidelity_linear) <= res.projection_distance + 1e-12
            w = np.linalg.eigvalsh(res.rho.matrix)
            assert w.min() >= -1e-12
            assert np.trace(res.rho.matrix).real == pytest.approx(1.0, abs=1e-12)


class TestNearestPhysical:
    def test_already_physical(self, rng):
        rho = random_density((A1, PA), rng).matrix
        out, d = nearest_physical(rho)
        np.testing.assert_allclose(out, rho, atol=1e-12)
        assert d < 1e-12

    def test_negative_eigenvalue(self):
        out, d = nearest_physical(np.diag([0.7, 0.5, -0.2]))
        np.testing.assert_allclose(out, np.diag([0.6, 0.4, 0.0]), atol=1e-12)
        assert d == pytest.approx(0.4)

    @given(st.lists(st.floats(-1, 1), min_size=4, max_size=4))
    def test_result_on_simplex(self, vals):
        m = np.diag(np.asarray(vals) + (1 - sum(vals)) / 4)
        out, _ = nearest_physical(m)
        DensityMatrix(out, (A1, PA))


class TestBootstrap:
    def test_analytic_zero(self, rng):
        data = simulate_counts(BELL.to_density(), complete_settings(2))
        assert bootstrap(data, 100, rng, BELL) == (0.0, 0.0)

    def test_minimum_resamples(self, rng):
        data = simulate_counts(BELL.to_density(), complete_settings(2, 100), rng)
        with pytest.raises(ValueError):
            bootstrap(data, 50, rng, BELL)

    def test_shot_scaling(self, rng):
        rho = depolarized_ap_state(0.924, atom=1)
        target = atom_photon_state()
        errs = []
        for shots in (2000, 8000):
            data = simulate_counts(rho, complete_settings(2, shots), rng)
            errs.append(bootstrap(data, 300, rng, target)[0])
        assert errs[1] / errs[0] == pytest.approx(0.5, abs=0.15)

    def test_bell_magnitude(self, rng):
        rho = qcore.depolarize(BELL.to_density(), 0.05)
        data = simulate_counts(rho, complete_settings(2, 10 ** 5), rng)
        res = reconstruct(data, BELL, n_bootstrap=100, rng=rng)
        assert 2e-4 < res.fidelity_err < 5e-3
        assert res.n_bootstrap == 100


class TestLarmor:
    def test_zero_time(self, rng):
        rho = random_density((A1, PA), rng)
        np.testing.assert_allclose(larmor_rephase(rho, 0.0).matrix, rho.matrix, atol=1e-15)

    def test_full_period(self, rng):
        rho = random_density((A1, PA), rng)
        clock = LarmorClock()
        np.testing.assert_allclose(larmor_rephase(rho, clock.period).matrix, rho.matrix, atol=1e-12)

    @given(st.floats(0, 1e-5))
    def test_random_time(self, t):
        rho = atom_photon_state(t=t).to_density()
        out = larmor_rephase(rho, t)
        np.testing.assert_allclose(out.matrix, atom_photon_state().to_density().matrix, atol=1e-12)
        assert qcore.fidelity_with_pure(out, atom_photon_state()) == pytest.approx(1.0, abs=1e-12)

    def test_needs_atom(self):
        with pytest.raises(qcore.RegisterError):
            larmor_rephase(BELL.to_density(), 1e-7)
        with pytest.raises(ValueError):
            larmor_rephase(atom_photon_state().to_density(), -1.0)


class TestCsv:
    def test_round_trip(self, tmp_path, rng):
        data = simulate_counts(BELL.to_density(), complete_settings(2, 1000), rng)
        path = tmp_path / "counts.csv"
        tomo.write_counts_csv(data, path)
        back = read_counts_csv(path, (PA, PB))
        assert [s.label for s in back.settings] == [s.label for s in data.settings]
        assert [s.shots for s in back.settings] == [1000] * 9
        np.testing.assert_array_equal(back.counts, data.counts)

    def test_analytic_round_trip(self, tmp_path):
        data = simulate_counts(BELL.to_density(), complete_settings(2))
        path = tmp_path / "p.csv"
        tomo.write_counts_csv(data, path)
        back = read_counts_csv(path, (PA, PB), analytic=True)
        np.testing.assert_allclose(reconstruct(back).rho.matrix, BELL.to_density().matrix, atol=1e-12)

    def test_wrong_register(self, tmp_path, rng):
        data = simulate_counts(BELL.to_density(), complete_settings(2, 10), rng)
        path = tmp_path / "c.csv"
        tomo.write_counts_csv(data, path)
        with pytest.raises(ValueError):
            read_counts_csv(path, (PA,))


def test_data_shape_checked():
    with pytest.raises(ValueError):
        TomographyData((A1,), tuple(complete_settings(1)), np.ones((3, 4)))
