"""False-addressing depolarization model and its averaged fidelities.

Each retry of atom 2 exposes atom 1 to the single-ion-addressing beam.  With
probability c = P_false * eta_850 / 2 atom 1 is scrambled into the
depolarizing matrix M, so after k retries

    eps_k(rho) = (1-c)^k rho + (1 - (1-c)^k) M.

Fidelities are then averaged over the trial at which photon 2 arrives, with
truncated geometric weights w_k = p (1-p)^(k-1) / sum_i p (1-p)^(i-1).

Three evaluation routes exist for each averaged fidelity and are kept
independent so they can check one another:

* ``avg_atom_fidelity`` / ``avg_pp_fidelity``: closed forms;
* ``*_sum``: explicit weighted sums over k of the per-trial closed form;
* ``*_matrix``: density matrices pushed through iterated Kraus channels.

The photon-photon fidelity is the overlap with the ideal 4-qubit state after
the gate (both atoms and both photons), which is what the closed form
evaluates.  Per-outcome fidelities of the heralded photon pair are a
different quantity; see :func:`heralded_pp_fidelity`.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from . import qcore
from .entangle import (
    BellOutcome,
    LarmorClock,
    apply_ms,
    atom_photon_state,
    ideal_post_gate_state,
    photon_target,
    swap,
)
from .qcore import DensityMatrix, Qubit

ETA_850 = 0.899


class DegenerateWeights(ValueError):
    pass


@dataclass(frozen=True)
class NoiseModelParams:
    f10: float = 0.945
    f20: float = 0.924
    f_ms: float = 1.0
    p_sia_false: float = 0.0056
    eta_850: float = ETA_850
    p: float = 0.00096
    n: int = 10

    def __post_init__(self):
        for name in ("f10", "f20", "f_ms", "p_sia_false", "eta_850", "p"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name}={v!r} outside [0, 1]")
        if int(self.n) != self.n or self.n < 1:
            raise ValueError("n must be a positive integer")

    @property
    def c(self) -> float:
        return self.p_sia_false * self.eta_850 / 2

    def with_n(self, n: int) -> NoiseModelParams:
        return replace(self, n=int(n))


# ---------------------------------------------------------------------------
# states and channels

def depolarizing_matrix_M() -> DensityMatrix:
    """(3/5 |-><-| + 2/5 |+><+|) (x) I/2 over (ATOM1, PHOTON_A)."""
    atom = np.diag([2 / 5, 3 / 5])  # |+> = 0, |-> = 1
    return DensityMatrix(np.kron(atom, np.eye(2) / 2), (Qubit.ATOM1, Qubit.PHOTON_A))


def _as_atom1(rho: DensityMatrix) -> DensityMatrix:
    m = depolarizing_matrix_M()
    if set(rho.register) != set(m.register):
        raise qcore.RegisterError("depolarization acts on (ATOM1, PHOTON_A)")
    return qcore.reorder(rho, m.register)


def false_addressing_channel(c: float) -> qcore.KrausChannel:
    """One retry: rho -> (1-c) rho + c M on (ATOM1, PHOTON_A)."""
    return qcore.replacement_channel(depolarizing_matrix_M(), c)


def depolarize_k(rho0: DensityMatrix, c: float, k: int) -> DensityMatrix:
    if k < 0:
        raise ValueError("k must be non-negative")
    rho0 = _as_atom1(rho0)
    keep = (1.0 - c) ** k
    return DensityMatrix(keep * rho0.matrix + (1 - keep) * depolarizing_matrix_M().matrix,
                         rho0.register)


def fidelity_after_k(f10: float, c: float, k: int) -> float:
    keep = (1.0 - c) ** k
    return keep * f10 + (1 - keep) / 4


def depolarized_ap_state(f_i0: float, t: float = 0.0, clock: LarmorClock | None = None,
                         atom: int = 1) -> DensityMatrix:
    """(1-q)|psi><psi| + q I/4 with q = 4/3 (1 - F), fidelity F with psi."""
    if not 0.25 - 1e-15 <= f_i0 <= 1.0:
        raise ValueError(f"fidelity {f_i0!r} cannot be reached by depolarizing (needs >= 1/4)")
    q = 4.0 / 3.0 * (1.0 - f_i0)
    psi = atom_photon_state(True, t, clock, atom=atom)
    return qcore.depolarize(psi.to_density(), min(q, 1.0))


def noisy_ms_channel(rho12: DensityMatrix, f_ms: float) -> DensityMatrix:
    """Imperfect gate: (1-alpha) MS(rho) + alpha I/16, alpha = 16/15 (1 - F_MS).

    On an atoms-only register the same rule gives alpha = 4/3 (1 - F_MS).
    """
    if not 0.0 <= f_ms <= 1.0:
        raise ValueError("gate fidelity outside [0, 1]")
    return apply_ms(rho12, f_ms)


# ---------------------------------------------------------------------------
# weights and closed forms

def trial_weights(p: float, n: int) -> np.ndarray:
    if p <= 0.0:
        raise DegenerateWeights("degenerate weights: detection probability is zero")
    if p > 1.0 or n < 1:
        raise ValueError("need 0 < p <= 1 and n >= 1")
    w = p * (1.0 - p) ** np.arange(n)
    return w / w.sum()


def _survival_factor(p: float, c: float, n: int) -> float:
    """sum_k w_k (1-c)^k in closed form."""
    if p <= 0.0:
        raise DegenerateWeights("degenerate weights: detection probability is zero")
    q = (1.0 - c) * (1.0 - p)
    # expm1/log1p keep precision when p and c are both tiny
    norm = -math.expm1(n * math.log1p(-p)) if p < 1 else 1.0
    tail = -math.expm1(n * (math.log1p(-c) + math.log1p(-p))) if q > 0 else 1.0
    return p * (1.0 - c) / norm * tail / (p + c * (1.0 - p))


def avg_atom_fidelity(params: NoiseModelParams) -> float:
    s = _survival_factor(params.p, params.c, params.n)
    return 0.25 + (params.f10 - 0.25) * s


def avg_pp_fidelity(params: NoiseModelParams) -> float:
    s = _survival_factor(params.p, params.c, params.n)
    f10, f20, fms = params.f10, params.f20, params.f_ms
    return (s * f20 * (4 * f10 - 1) * (16 * fms - 1) / 60
            + (1 - fms - f20 / 4 + 4 * fms * f20) / 15)


def limit_fidelity(params: NoiseModelParams, model: str = "pp") -> float:
    """N -> infinity limit of the averaged fidelity."""
    p, c = params.p, params.c
    s = p * (1 - c) / (p + c * (1 - p))
    if model == "atom":
        return 0.25 + (params.f10 - 0.25) * s
    f10, f20, fms = params.f10, params.f20, params.f_ms
    return s * f20 * (4 * f10 - 1) * (16 * fms - 1) / 60 + (1 - fms - f20 / 4 + 4 * fms * f20) / 15


# ---------------------------------------------------------------------------
# independent routes

def avg_atom_fidelity_sum(params: NoiseModelParams) -> float:
    w = trial_weights(params.p, params.n)
    return float(sum(wk * fidelity_after_k(params.f10, params.c, k)
                     for k, wk in enumerate(w, start=1)))


def avg_pp_fidelity_sum(params: NoiseModelParams) -> float:
    w = trial_weights(params.p, params.n)
    fms, f20 = params.f_ms, params.f20
    alpha = 16 / 15 * (1 - fms)
    total = 0.0
    for k, wk in enumerate(w, start=1):
        f1 = fidelity_after_k(params.f10, params.c, k)
        total += wk * ((1 - alpha) * f1 * f20 + alpha / 16)
    return total


def avg_atom_fidelity_matrix(params: NoiseModelParams) -> float:
    """Weighted fidelity with atom 1's state pushed through k Kraus retries."""
    psi = atom_photon_state(True, 0.0, atom=1)
    rho = depolarized_ap_state(params.f10, atom=1)
    ch = false_addressing_channel(params.c)
    targets = (Qubit.ATOM1, Qubit.PHOTON_A)
    total = 0.0
    for wk in trial_weights(params.p, params.n):
        rho = qcore.apply_channel(rho, ch, targets)
        total += wk * qcore.fidelity_with_pure(rho, psi)
    return total


def avg_pp_fidelity_matrix(params: NoiseModelParams) -> float:
    """Weighted overlap of the noisy post-gate 4-qubit state with the ideal one."""
    phi = ideal_post_gate_state()
    rho1 = depolarized_ap_state(params.f10, atom=1)
    rho2 = depolarized_ap_state(params.f20, atom=2)
    ch = false_addressing_channel(params.c)
    targets = (Qubit.ATOM1, Qubit.PHOTON_A)
    total = 0.0
    for wk in trial_weights(params.p, params.n):
        rho1 = qcore.apply_channel(rho1, ch, targets)
        out = noisy_ms_channel(qcore.tensor(rho1, rho2), params.f_ms)
        total += wk * qcore.fidelity_with_pure(out, phi)
    return total


def heralded_pp_fidelity(params: NoiseModelParams, outcome: BellOutcome) -> float:
    """Trial-averaged fidelity of the heralded photon pair with its target.

    Differs from :func:`avg_pp_fidelity` because the white noise of the gate
    is spread over both photons and atoms: with ideal inputs this equals
    1 - 3 alpha / 4 rather than F_MS.
    """
    # eps_k is affine in (1-c)^k, so the trial average acts on the input state
    s = _survival_factor(params.p, params.c, params.n)
    rho1 = qcore.mix([(s, depolarized_ap_state(params.f10, atom=1)),
                      (1 - s, depolarizing_matrix_M())])
    rho2 = depolarized_ap_state(params.f20, atom=2)
    ph, _ = swap(qcore.tensor(rho1, rho2), outcome, f_ms=params.f_ms)
    return qcore.fidelity_with_pure(ph, photon_target(outcome))


# ---------------------------------------------------------------------------
# thresholds

def fidelity_threshold(params: NoiseModelParams, target: float = 0.5,
                       model: str = "pp") -> int | None:
    """Smallest N whose averaged fidelity falls strictly below ``target``.

    Returns None when the N -> infinity limit stays at or above ``target``.
    """
    if not 0.25 < target < 1.0:
        raise ValueError("target must lie in (1/4, 1)")
    if model not in ("atom", "pp"):
        raise ValueError(f"unknown model {model!r}")
    f = avg_atom_fidelity if model == "atom" else avg_pp_fidelity

    def below(n: int) -> bool:
        return f(params.with_n(n)) < target

    if below(1):
        return 1
    if limit_fidelity(params, model) >= target:
        return None
    lo, hi = 1, 2
    while not below(hi):
        lo, hi = hi, hi * 2
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if below(mid):
            hi = mid
        else:
            lo = mid
    return hi
