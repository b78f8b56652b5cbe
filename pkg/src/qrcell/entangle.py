"""Atom-photon states, the Bell-basis mapping gate and ideal swapping.

The gate used for the atom-atom Bell measurement is modelled as the fixed
two-qubit unitary ``exp(i pi/4 Y(x)Y)``.  In the qubit encoding of
:mod:`qrcell.qcore` it maps

    (|-,-> + i|+,+>)/sqrt2  ->  |-,->      PHI_MINUS
    (|+,+> + i|-,->)/sqrt2  ->  |+,+>      PHI_PLUS
    (|+,-> - i|-,+>)/sqrt2  ->  |+,->      PSI_MINUS
    (|-,+> - i|+,->)/sqrt2  ->  |-,+>      PSI_PLUS

exactly, without extra phases, and its fourth power is -1.

Photon-pair targets per outcome come from expanding the product of two
atom-photon states in this Bell basis (time-dependent phases
phi_minus = wL (t1 - t2) + pi/2, phi_plus = wL (t1 + t2) + pi/2):

    PHI_PLUS   (|LL> - e^{i phi_plus}  |RR>)/sqrt2
    PHI_MINUS  (|LL> + e^{i phi_plus}  |RR>)/sqrt2
    PSI_MINUS  (|LR> + e^{i phi_minus} |RL>)/sqrt2
    PSI_PLUS   (|LR> - e^{i phi_minus} |RL>)/sqrt2

The overall phase wL t2 of the PSI sector is dropped; states are compared
through fidelities only.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import expm

from .qcore import (
    CANONICAL_ORDER,
    PAULI,
    DensityMatrix,
    PureState,
    Qubit,
    RegisterError,
    apply_unitary,
    depolarize,
    ket_projector,
    partial_trace,
    project,
    reorder,
    tensor,
)

LARMOR_OMEGA = 2 * math.pi * 9.6e6  # rad/s

ATOMS = (Qubit.ATOM1, Qubit.ATOM2)
PHOTONS = (Qubit.PHOTON_A, Qubit.PHOTON_B)
PLUS, MINUS = 0, 1
L, R = 0, 1


@dataclass(frozen=True)
class LarmorClock:
    omega_L: float = LARMOR_OMEGA
    t1: float = 0.0
    t2: float = 0.0

    def __post_init__(self):
        if self.omega_L <= 0:
            raise ValueError("Larmor frequency must be positive")
        if self.t1 < 0 or self.t2 < 0:
            raise ValueError("elapsed times must be non-negative")

    @property
    def phi_minus(self) -> float:
        return self.omega_L * (self.t1 - self.t2) + math.pi / 2

    @property
    def phi_plus(self) -> float:
        return self.omega_L * (self.t1 + self.t2) + math.pi / 2

    @property
    def period(self) -> float:
        return 2 * math.pi / self.omega_L


class BellOutcome(enum.Enum):
    """Atom-atom Bell state, valued by the atomic (atom1, atom2) readout."""

    PHI_MINUS = ("-", "-")
    PHI_PLUS = ("+", "+")
    PSI_MINUS = ("+", "-")
    PSI_PLUS = ("-", "+")

    @property
    def atomic_result(self) -> tuple[str, str]:
        return self.value

    @property
    def bits(self) -> tuple[int, int]:
        return tuple(PLUS if s == "+" else MINUS for s in self.value)

    @classmethod
    def from_atomic_result(cls, result) -> BellOutcome:
        return cls(tuple(result))


def _ket(bits) -> np.ndarray:
    v = np.zeros(2 ** len(bits), dtype=complex)
    v[int("".join(map(str, bits)), 2)] = 1.0
    return v


def atom_photon_state(balanced: bool = True, t: float = 0.0,
                      clock: LarmorClock | None = None, atom: int = 1) -> PureState:
    """Atom-photon state after emission, ``t`` seconds later.

    ``balanced=False`` returns the raw state with the 2/3 : 1/3 weights of
    the decay paths; ``balanced=True`` the equal-weight state obtained after
    the population-balancing step.
    """
    if t < 0:
        raise ValueError("t must be non-negative")
    omega = (clock or LarmorClock()).omega_L
    a, b = (math.sqrt(0.5), math.sqrt(0.5)) if balanced else (math.sqrt(2 / 3), math.sqrt(1 / 3))
    amps = a * _ket((PLUS, L)) + b * np.exp(1j * omega * t) * _ket((MINUS, R))
    if atom not in (1, 2):
        raise ValueError("atom must be 1 or 2")
    register = (Qubit.ATOM1, Qubit.PHOTON_A) if atom == 1 else (Qubit.ATOM2, Qubit.PHOTON_B)
    return PureState(amps, register)


def ms_map() -> np.ndarray:
    """Unitary on (ATOM1, ATOM2) sending the Bell basis onto product states."""
    return expm(1j * math.pi / 4 * np.kron(PAULI["Y"], PAULI["Y"]))


def bell_state(outcome: BellOutcome) -> PureState:
    """Atom-atom Bell state that the gate maps onto ``outcome.atomic_result``."""
    s = 1 / math.sqrt(2)
    mm, pp = _ket((MINUS, MINUS)), _ket((PLUS, PLUS))
    pm, mp = _ket((PLUS, MINUS)), _ket((MINUS, PLUS))
    amps = {
        BellOutcome.PHI_MINUS: mm + 1j * pp,
        BellOutcome.PHI_PLUS: pp + 1j * mm,
        BellOutcome.PSI_MINUS: pm - 1j * mp,
        BellOutcome.PSI_PLUS: mp - 1j * pm,
    }[outcome]
    return PureState(s * amps, ATOMS)


def photon_target(outcome: BellOutcome, clock: LarmorClock | None = None) -> PureState:
    """Ideal photon-pair state heralded by ``outcome``."""
    clock = clock or LarmorClock()
    s = 1 / math.sqrt(2)
    ep, em = np.exp(1j * clock.phi_plus), np.exp(1j * clock.phi_minus)
    amps = {
        BellOutcome.PHI_PLUS: _ket((L, L)) - ep * _ket((R, R)),
        BellOutcome.PHI_MINUS: _ket((L, L)) + ep * _ket((R, R)),
        BellOutcome.PSI_MINUS: _ket((L, R)) + em * _ket((R, L)),
        BellOutcome.PSI_PLUS: _ket((L, R)) - em * _ket((R, L)),
    }[outcome]
    return PureState(s * amps, PHOTONS)


def joint_state(clock: LarmorClock | None = None) -> PureState:
    """Product of both balanced atom-photon states, canonical register order."""
    clock = clock or LarmorClock()
    return tensor(atom_photon_state(True, clock.t1, clock, atom=1),
                  atom_photon_state(True, clock.t2, clock, atom=2))


def apply_ms(rho: DensityMatrix, f_ms: float = 1.0) -> DensityMatrix:
    """Gate on the two atoms followed by white noise over the whole register.

    The mixing weight is alpha = d/(d-1) (1 - f_ms) for register dimension d,
    so that the gate alone has fidelity ``f_ms`` with its ideal output.
    """
    if not set(ATOMS) <= set(rho.register):
        raise RegisterError("gate needs both atoms in the register")
    out = apply_unitary(rho, ms_map(), ATOMS)
    if f_ms == 1.0:
        return out
    d = rho.dim
    alpha = d / (d - 1) * (1.0 - f_ms)
    if alpha > 1.0 + 1e-12:
        raise ValueError(f"gate fidelity {f_ms} is below the fully mixed floor 1/{d}")
    return depolarize(out, min(alpha, 1.0))


def ideal_post_gate_state(clock: LarmorClock | None = None) -> PureState:
    """Gate applied to :func:`joint_state`, as a 4-qubit pure state."""
    psi = reorder(joint_state(clock), ATOMS + PHOTONS)
    amps = np.kron(ms_map(), np.eye(4)) @ psi.amplitudes
    return reorder(PureState(amps, ATOMS + PHOTONS), CANONICAL_ORDER)


def swap(rho_joint: DensityMatrix, outcome: BellOutcome,
         clock: LarmorClock | None = None, f_ms: float = 1.0
         ) -> tuple[DensityMatrix, float]:
    """Bell-measure the atoms and return (photon-pair state, outcome probability)."""
    if set(rho_joint.register) != set(CANONICAL_ORDER):
        raise RegisterError("swap needs all four qubits")
    after = apply_ms(rho_joint, f_ms)
    proj = ket_projector(PureState.basis(outcome.bits, ATOMS))
    post, prob = project(after, proj, ATOMS)
    return partial_trace(post, PHOTONS), prob
