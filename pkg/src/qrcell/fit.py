"""Weighted nonlinear least squares for fidelity-versus-n_max curves.

The solver is a Levenberg-Marquardt damped Gauss-Newton iteration with a
central-difference Jacobian (one-sided next to a bound), Marquardt diagonal
scaling and box bounds enforced by clipping the trial point.  A clipped step
that does not lower the cost is rejected and the damping raised, so the
iteration slides along the bound instead of leaving it.

Covariances use the supplied sigmas as absolute errors.  When every sigma is
zero the points get unit weight and the covariance is scaled by the reduced
chi-square.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .noise import ETA_850, NoiseModelParams, avg_atom_fidelity, avg_pp_fidelity

FIDELITY_BOUNDS = (0.25, 1.0)
PROBABILITY_BOUNDS = (0.0, 0.1)
INITIAL_P_FALSE = 0.005

# fitted parameters used to generate closed-loop synthetic data
ATOM_REFERENCE = {"f10": 0.945, "p_sia_false": 0.0056}
PP_REFERENCE = {
    "PSI_MINUS": {"f_ms": 0.915, "p_sia_false": 0.0130, "f_init": 0.797},
    "PSI_PLUS": {"f_ms": 0.914, "p_sia_false": 0.0110, "f_init": 0.796},
    "PHI_MINUS": {"f_ms": 0.871, "p_sia_false": 0.0120, "f_init": 0.759},
    "PHI_PLUS": {"f_ms": 0.886, "p_sia_false": 0.0146, "f_init": 0.771},
}


class ConvergenceError(RuntimeError):
    pass


@dataclass(frozen=True)
class FidelityCurve:
    n_max: np.ndarray
    fidelity: np.ndarray
    sigma: np.ndarray

    def __post_init__(self):
        n = np.asarray(self.n_max)
        f = np.asarray(self.fidelity, dtype=float)
        s = np.asarray(self.sigma, dtype=float)
        if not (n.shape == f.shape == s.shape) or n.ndim != 1:
            raise ValueError("n_max, fidelity and sigma must be equal-length vectors")
        if np.any(n < 1) or np.any(n != np.round(n)) or np.any(np.diff(n) <= 0):
            raise ValueError("n_max must be positive integers, strictly increasing")
        if np.any((f < 0) | (f > 1)):
            raise ValueError("fidelities must lie in [0, 1]")
        if np.any(s < 0) or not np.all(np.isfinite(s)):
            raise ValueError("sigmas must be finite and non-negative")
        object.__setattr__(self, "n_max", n.astype(int))
        object.__setattr__(self, "fidelity", f)
        object.__setattr__(self, "sigma", s)

    @classmethod
    def from_points(cls, points) -> FidelityCurve:
        n, f, s = zip(*points)
        return cls(np.array(n), np.array(f), np.array(s))

    def __len__(self) -> int:
        return self.n_max.size

    def points(self) -> list[tuple[int, float, float]]:
        return list(zip(self.n_max.tolist(), self.fidelity.tolist(), self.sigma.tolist()))

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["n_max", "fidelity", "sigma"])
            for n, f, s in self.points():
                w.writerow([n, repr(f), repr(s)])

    @classmethod
    def read_csv(cls, path) -> FidelityCurve:
        with open(path, newline="") as fh:
            rows = [(int(r["n_max"]), float(r["fidelity"]), float(r["sigma"]))
                    for r in csv.DictReader(fh)]
        if not rows:
            raise ValueError(f"{path}: no data rows")
        return cls.from_points(rows)


@dataclass
class FitResult:
    names: tuple[str, ...]
    values: np.ndarray
    errors: np.ndarray
    covariance: np.ndarray
    residual_norm: float  # sqrt of chi-square
    iterations: int
    converged: bool
    message: str
    derived: dict[str, tuple[float, float]] = field(default_factory=dict)

    def __getitem__(self, name: str) -> float:
        return float(self.values[self.names.index(name)])

    def error(self, name: str) -> float:
        return float(self.errors[self.names.index(name)])

    def to_dict(self) -> dict:
        return {
            "parameters": {n: {"value": float(v), "error": float(e)}
                           for n, v, e in zip(self.names, self.values, self.errors)},
            "derived": {k: {"value": v, "error": e} for k, (v, e) in self.derived.items()},
            "covariance": self.covariance.tolist(),
            "residual_norm": self.residual_norm,
            "iterations": self.iterations,
            "converged": self.converged,
            "message": self.message,
        }


def _jacobian(fun, p, lo, hi, rel_step):
    f0 = fun(p)
    jac = np.empty((f0.size, p.size))
    for j in range(p.size):
        h = rel_step * (abs(p[j]) if p[j] != 0 else 1.0)
        up, dn = p.copy(), p.copy()
        if p[j] + h > hi[j]:
            dn[j] -= h
            jac[:, j] = (f0 - fun(dn)) / h
        elif p[j] - h < lo[j]:
            up[j] += h
            jac[:, j] = (fun(up) - f0) / h
        else:
            up[j] += h
            dn[j] -= h
            jac[:, j] = (fun(up) - fun(dn)) / (2 * h)
    return f0, jac


def least_squares(model: Callable[[np.ndarray, np.ndarray], np.ndarray],
                  data: tuple, initial_guess: Sequence[float],
                  bounds: tuple[Sequence[float], Sequence[float]] | None = None,
                  names: Sequence[str] | None = None, *,
                  max_iter: int = 10_000, gtol: float = 1e-9, xtol: float = 1e-12,
                  ftol: float = 1e-15, rel_step: float = 1e-6,
                  lambda0: float = 1e-8) -> FitResult:
    """Minimize sum(((y - model(x, p)) / sigma)^2) over ``p`` within ``bounds``.

    ``data`` is (x, y, sigma).  Convergence is declared when the projected
    gradient of half the chi-square drops below ``gtol``, when an accepted
    step is below ``xtol`` relative to the parameters, or when an accepted
    step lowers the cost by less than ``ftol`` relative.  Hitting
    ``max_iter`` or a rank-deficient Jacobian leaves ``converged`` False and
    the errors NaN.
    """
    x, y, sigma = (np.asarray(a, dtype=float) for a in data)
    if not (x.shape == y.shape == sigma.shape):
        raise ValueError("x, y and sigma must have the same shape")
    if np.all(sigma == 0):
        weights, absolute = np.ones_like(y), False
    elif np.any(sigma == 0):
        raise ValueError("sigmas must be all positive or all zero")
    else:
        weights, absolute = 1.0 / sigma, True
    p = np.asarray(initial_guess, dtype=float).copy()
    if not np.all(np.isfinite(p)):
        raise ValueError("initial guess must be finite")
    n_par = p.size
    names = tuple(names) if names is not None else tuple(f"p{i}" for i in range(n_par))
    if bounds is None:
        lo, hi = np.full(n_par, -np.inf), np.full(n_par, np.inf)
    else:
        lo, hi = (np.asarray(b, dtype=float) for b in bounds)
    if np.any(p < lo) or np.any(p > hi):
        raise ValueError("initial guess outside bounds")

    def residuals(q):
        return (y - model(x, q)) * weights

    def fun(q):
        return model(x, q) * weights

    def projected_gradient(q, g):
        # g is the descent direction J^T r; drop components pushing past a bound
        g = g.copy()
        g[(q <= lo) & (g < 0)] = 0.0
        g[(q >= hi) & (g > 0)] = 0.0
        return g

    r = residuals(p)
    cost = 0.5 * float(r @ r)
    lam = lambda0
    converged, message, it = False, "maximum iterations reached", 0
    while it < max_iter:
        _, jac = _jacobian(fun, p, lo, hi, rel_step)
        g = jac.T @ r
        if np.max(np.abs(projected_gradient(p, g)), initial=0.0) < gtol:
            converged, message = True, "gradient below tolerance"
            break
        a = jac.T @ jac
        diag = np.where(np.diag(a) > 0, np.diag(a), 1.0)
        accepted = False
        while lam < 1e20:
            try:
                step = np.linalg.solve(a + lam * np.diag(diag), g)
            except np.linalg.LinAlgError:
                lam *= 10
                continue
            trial = np.clip(p + step, lo, hi)
            r_new = residuals(trial)
            cost_new = 0.5 * float(r_new @ r_new)
            if cost_new < cost:
                accepted = True
                break
            lam *= 10
        if not accepted:
            converged, message = True, "no further decrease possible"
            break
        it += 1
        moved = trial - p
        drop = cost - cost_new
        p, r, cost = trial, r_new, cost_new
        lam = max(lam / 10, 1e-15)
        if np.linalg.norm(moved) <= xtol * (np.linalg.norm(p) + xtol):
            converged, message = True, "step below tolerance"
            break
        if drop <= ftol * max(cost, 1e-300):
            converged, message = True, "cost change below tolerance"
            break

    _, jac = _jacobian(fun, p, lo, hi, rel_step)
    a = jac.T @ jac
    try:
        if np.linalg.matrix_rank(a) < n_par or np.linalg.cond(a) > 1e14:
            raise np.linalg.LinAlgError("singular")
        cov = np.linalg.inv(a)
        if not absolute:
            dof = max(y.size - n_par, 1)
            cov = cov * (2 * cost / dof)
        cov = (cov + cov.T) / 2
        errors = np.sqrt(np.clip(np.diag(cov), 0.0, None))
    except np.linalg.LinAlgError:
        cov = np.full((n_par, n_par), np.nan)
        errors = np.full(n_par, np.nan)
        converged, message = False, "singular Jacobian: parameters not identifiable"
    return FitResult(names, p, errors, cov, math.sqrt(2 * cost), it, converged, message)


# ---------------------------------------------------------------------------
# fidelity models

def _curve_data(curve: FidelityCurve):
    if len(curve) < 3:
        raise ValueError("a fit needs at least 3 points")
    return curve.n_max.astype(float), curve.fidelity, curve.sigma


def atom_model(p: float = 0.00096, eta_850: float = ETA_850):
    """model(n, (F10, P_false)) evaluating the averaged atom-photon fidelity."""
    def model(n, theta):
        f10, p_false = theta
        return np.array([avg_atom_fidelity(NoiseModelParams(
            f10=f10, p_sia_false=p_false, eta_850=eta_850, p=p, n=int(k))) for k in n])
    return model


def pp_model(f10: float, f20: float, p: float = 0.00096, eta_850: float = ETA_850):
    """model(n, (F_MS, P_false)) evaluating the averaged photon-photon fidelity."""
    def model(n, theta):
        f_ms, p_false = theta
        return np.array([avg_pp_fidelity(NoiseModelParams(
            f10=f10, f20=f20, f_ms=f_ms, p_sia_false=p_false, eta_850=eta_850,
            p=p, n=int(k))) for k in n])
    return model


def _bounds():
    return ([FIDELITY_BOUNDS[0], PROBABILITY_BOUNDS[0]],
            [FIDELITY_BOUNDS[1], PROBABILITY_BOUNDS[1]])


def _initial(curve: FidelityCurve):
    first = float(np.clip(curve.fidelity[0], *FIDELITY_BOUNDS))
    return [first, INITIAL_P_FALSE]


def fit_atom_model(curve: FidelityCurve, p: float = 0.00096, eta_850: float = ETA_850,
                   **kw) -> FitResult:
    """Fit initial fidelity F10 and false-addressing probability."""
    return least_squares(atom_model(p, eta_850), _curve_data(curve), _initial(curve),
                         _bounds(), ("f10", "p_sia_false"), **kw)


def fit_pp_model(curve: FidelityCurve, f10: float, f20: float, p: float = 0.00096,
                 eta_850: float = ETA_850, **kw) -> FitResult:
    """Fit gate fidelity and false-addressing probability; report F_init at N=1."""
    model = pp_model(f10, f20, p, eta_850)
    res = least_squares(model, _curve_data(curve), _initial(curve), _bounds(),
                        ("f_ms", "p_sia_false"), **kw)
    one = np.array([1.0])
    f_init = float(model(one, res.values)[0])
    grad = np.empty(2)
    for j in range(2):
        h = 1e-6 * max(abs(res.values[j]), 1e-3)
        up, dn = res.values.copy(), res.values.copy()
        up[j] += h
        dn[j] = max(dn[j] - h, 0.0)
        grad[j] = (model(one, up)[0] - model(one, dn)[0]) / (up[j] - dn[j])
    err = float(math.sqrt(max(grad @ res.covariance @ grad, 0.0))) \
        if np.all(np.isfinite(res.covariance)) else math.nan
    res.derived["f_init"] = (f_init, err)
    return res


def synthetic_curve(model, theta, n_values, sigma: float = 0.0,
                    rng: np.random.Generator | None = None) -> FidelityCurve:
    """Closed-loop test data: model values plus optional Gaussian noise."""
    n = np.asarray(n_values, dtype=float)
    f = model(n, np.asarray(theta, dtype=float))
    if sigma > 0:
        if rng is None:
            raise ValueError("noise needs an rng")
        f = np.clip(f + rng.normal(0.0, sigma, f.size), 0.0, 1.0)
    return FidelityCurve(n.astype(int), f, np.full(f.size, float(sigma)))
