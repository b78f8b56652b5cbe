import math

import numpy as np
import pytest
import sympy as sp
from scipy.optimize import curve_fit

from qrcell import fit
from qrcell.fit import (
    PP_REFERENCE,
    FidelityCurve,
    atom_model,
    fit_atom_model,
    fit_pp_model,
    least_squares,
    pp_model,
    synthetic_curve,
)
from qrcell.noise import ETA_850

N_VALUES = [1, 3, 10, 30, 100, 300, 1000, 3000]
F10, F20 = 0.945, 0.924


def symbolic_atom_gradient(n_values, f10, p_false, p=0.00096, eta=ETA_850):
    """d/d(F10, P) of the explicit weighted sum, differentiated by sympy."""
    F, P = sp.symbols("F P", positive=True)
    c = P * sp.Float(eta) / 2
    q = sp.Float(p)
    k = sp.symbols("k", integer=True, positive=True)
    rows = []
    for n in n_values:
        w = q * (1 - q) ** (k - 1)
        expr = sp.Rational(1, 4) + (F - sp.Rational(1, 4)) * sp.Sum(w * (1 - c) ** k, (k, 1, n)) \
            / sp.Sum(w, (k, 1, n))
        rows.append([float(sp.diff(expr, v).subs({F: f10, P: p_false}).doit()) for v in (F, P)])
    return np.array(rows)


class TestCurve:
    def test_validation(self):
        with pytest.raises(ValueError):
            FidelityCurve(np.array([1, 1, 2]), np.ones(3) * 0.5, np.zeros(3))
        with pytest.raises(ValueError):
            FidelityCurve(np.array([1, 2]), np.array([0.5, 1.2]), np.zeros(2))
        with pytest.raises(ValueError):
            FidelityCurve(np.array([1, 2]), np.array([0.5, 0.4]), np.array([0.1, -0.1]))

    def test_csv_round_trip(self, tmp_path):
        c = FidelityCurve.from_points([(1, 0.9, 0.01), (10, 0.8, 0.02), (100, 0.7, 0.03)])
        c.write_csv(tmp_path / "c.csv")
        back = FidelityCurve.read_csv(tmp_path / "c.csv")
        assert back.points() == c.points()

    def test_too_few_points(self):
        c = FidelityCurve.from_points([(1, 0.9, 0.01), (10, 0.8, 0.02)])
        with pytest.raises(ValueError):
            fit_atom_model(c)


class TestLeastSquares:
    def test_linear_exact(self):
        x = np.arange(6.0)
        y = 2.0 + 0.5 * x
        res = least_squares(lambda x, p: p[0] + p[1] * x, (x, y, np.zeros(6)), [0.0, 0.0])
        assert res.converged
        np.testing.assert_allclose(res.values, [2.0, 0.5], atol=1e-10)
        assert res.iterations <= 2

    def test_quadratic_bowl(self, rng):
        # residuals (p - a) * scale: the minimum is a
        a = np.array([0.3, -1.7, 2.2])
        x = np.arange(3.0)
        for _ in range(5):
            start = rng.uniform(-5, 5, 3)
            res = least_squares(lambda x, p: p * np.array([1.0, 3.0, 0.5]),
                                (x, a * np.array([1.0, 3.0, 0.5]), np.ones(3)), start)
            np.testing.assert_allclose(res.values, a, atol=1e-8)

    def test_bounds_respected(self):
        x = np.arange(5.0)
        y = 3.0 * x
        res = least_squares(lambda x, p: p[0] * x, (x, y, np.ones(5)), [0.5], ([0.0], [1.0]))
        assert res.values[0] == pytest.approx(1.0)
        assert res.converged

    def test_against_scipy(self, rng):
        x = np.linspace(0, 4, 30)
        sig = np.full(30, 0.05)
        y = 1.3 * np.exp(-0.7 * x) + 0.2 + rng.normal(0, 0.05, 30)
        f = lambda x, a, b, c: a * np.exp(-b * x) + c
        ref, ref_cov = curve_fit(f, x, y, p0=[1, 1, 0], sigma=sig, absolute_sigma=True)
        res = least_squares(lambda x, p: f(x, *p), (x, y, sig), [1, 1, 0])
        np.testing.assert_allclose(res.values, ref, rtol=1e-6)
        np.testing.assert_allclose(res.errors, np.sqrt(np.diag(ref_cov)), rtol=1e-4)

    def test_unit_weights_scaled(self, rng):
        x = np.linspace(0, 1, 20)
        y = 1 + 2 * x + rng.normal(0, 0.1, 20)
        f = lambda x, a, b: a + b * x
        ref, ref_cov = curve_fit(f, x, y, p0=[0, 0])
        res = least_squares(lambda x, p: f(x, *p), (x, y, np.zeros(20)), [0, 0])
        np.testing.assert_allclose(res.values, ref, rtol=1e-8)
        np.testing.assert_allclose(res.errors, np.sqrt(np.diag(ref_cov)), rtol=1e-5)

    def test_singular_reports_nonconvergence(self):
        # only the sum of the two parameters is identifiable
        x = np.arange(5.0)
        res = least_squares(lambda x, p: (p[0] + p[1]) * x, (x, 2 * x, np.ones(5)), [0.5, 0.5])
        assert not res.converged
        assert np.isnan(res.errors).all()
        assert "singular" in res.message

    def test_mixed_sigma_rejected(self):
        with pytest.raises(ValueError):
            least_squares(lambda x, p: p[0] * x, ([1, 2], [1, 2], [0.0, 1.0]), [1.0])

    def test_guess_outside_bounds(self):
        with pytest.raises(ValueError):
            least_squares(lambda x, p: p[0] * x, ([1, 2], [1, 2], [1, 1]), [2.0], ([0.0], [1.0]))

    def test_jacobian_against_symbolic(self):
        n = [1, 5, 40]
        model = atom_model()
        wrapped = lambda q: model(np.array(n, float), q)
        p0 = np.array([0.945, 0.0056])
        _, jac = fit._jacobian(wrapped, p0, np.array([0.25, 0.0]), np.array([1.0, 0.1]), 1e-6)
        np.testing.assert_allclose(jac, symbolic_atom_gradient(n, *p0), rtol=1e-4)


class TestAtomFit:
    def test_noiseless_recovery(self):
        curve = synthetic_curve(atom_model(), [0.945, 0.0056], N_VALUES)
        res = fit_atom_model(curve)
        assert res.converged
        assert res["f10"] == pytest.approx(0.945, abs=1e-6)
        assert res["p_sia_false"] == pytest.approx(0.0056, abs=1e-6)

    def test_noisy_recovery(self, rng):
        curve = synthetic_curve(atom_model(), [0.945, 0.0056], N_VALUES, 0.005, rng)
        res = fit_atom_model(curve)
        assert abs(res["f10"] - 0.945) < 3 * res.error("f10")
        assert abs(res["p_sia_false"] - 0.0056) < 3 * res.error("p_sia_false")

    def test_flat_curve(self, rng):
        curve = synthetic_curve(atom_model(), [0.9, 0.0], N_VALUES, 0.003, rng)
        res = fit_atom_model(curve)
        assert res["p_sia_false"] <= 3 * res.error("p_sia_false") + 1e-12

    def test_sigma_rescaling(self, rng):
        curve = synthetic_curve(atom_model(), [0.945, 0.0056], N_VALUES, 0.005, rng)
        scaled = FidelityCurve(curve.n_max, curve.fidelity, curve.sigma * 4)
        a, b = fit_atom_model(curve), fit_atom_model(scaled)
        np.testing.assert_allclose(b.values, a.values, rtol=1e-6, atol=1e-9)
        np.testing.assert_allclose(b.errors, 4 * a.errors, rtol=1e-4)

    def test_coverage(self):
        rng = np.random.default_rng(4242)
        truth = np.array([0.945, 0.0056])
        hits = 0
        for _ in range(200):
            curve = synthetic_curve(atom_model(), truth, N_VALUES, 0.005, rng)
            res = fit_atom_model(curve)
            hits += bool(np.all(np.abs(res.values - truth) < 3 * res.errors))
        assert hits / 200 >= 0.95


class TestPhotonPairFit:
    @pytest.mark.parametrize("name", list(PP_REFERENCE))
    def test_noiseless_recovery(self, name):
        ref = PP_REFERENCE[name]
        model = pp_model(F10, F20)
        curve = synthetic_curve(model, [ref["f_ms"], ref["p_sia_false"]], N_VALUES)
        res = fit_pp_model(curve, F10, F20)
        assert res["f_ms"] == pytest.approx(ref["f_ms"], abs=1e-6)
        assert res["p_sia_false"] == pytest.approx(ref["p_sia_false"], abs=1e-6)

    def test_initial_fidelity(self):
        ref = PP_REFERENCE["PSI_MINUS"]
        curve = synthetic_curve(pp_model(F10, F20), [0.915, 0.0130], N_VALUES)
        res = fit_pp_model(curve, F10, F20)
        assert res.derived["f_init"][0] == pytest.approx(0.797, abs=0.005)
        assert res.derived["f_init"][0] == pytest.approx(ref["f_init"], abs=0.005)

    def test_initial_fidelity_error(self, rng):
        curve = synthetic_curve(pp_model(F10, F20), [0.915, 0.0130], N_VALUES, 0.005, rng)
        res = fit_pp_model(curve, F10, F20)
        f, err = res.derived["f_init"]
        assert 0 < err < 0.05
        assert abs(f - 0.797) < 3 * err + 0.005

    def test_to_dict(self):
        curve = synthetic_curve(pp_model(F10, F20), [0.9, 0.01], N_VALUES)
        d = fit_pp_model(curve, F10, F20).to_dict()
        assert set(d["parameters"]) == {"f_ms", "p_sia_false"}
        assert "f_init" in d["derived"]
        assert math.isfinite(d["residual_norm"])
