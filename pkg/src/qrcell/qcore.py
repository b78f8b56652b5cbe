"""Dense density-matrix engine for the four qubits of a repeater cell.

Registers hold at most four labelled qubits, so every state is an explicit
complex matrix of dimension <= 16.  Operations address qubits by label and
never by position, which lets states built in different orders be combined.

Computational encoding
----------------------
Atoms:   |+> = |0>,  |-> = |1>
Photons: |L> = |0>,  |R> = |1>

With this choice the Bell-basis mapping of the entangling gate is a
permutation-plus-phase on computational basis states.  The canonical register
order is (ATOM1, PHOTON_A, ATOM2, PHOTON_B).
"""
from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

HERMITIAN_TOL = 1e-12
TRACE_TOL = 1e-12
EIGEN_FLOOR = -1e-10
NORM_TOL = 1e-12
KRAUS_TOL = 1e-10
IMPOSSIBLE_PROB = 1e-15


class Qubit(enum.Enum):
    ATOM1 = "atom1"
    PHOTON_A = "photonA"
    ATOM2 = "atom2"
    PHOTON_B = "photonB"


CANONICAL_ORDER = (Qubit.ATOM1, Qubit.PHOTON_A, Qubit.ATOM2, Qubit.PHOTON_B)


class RegisterError(ValueError):
    """Raised for overlapping, missing or mismatched qubit labels."""


class ImpossibleOutcome(ValueError):
    """Raised when a projection has (numerically) zero probability."""


def _check_register(register: Sequence[Qubit]) -> tuple[Qubit, ...]:
    register = tuple(register)
    if len(set(register)) != len(register):
        raise RegisterError(f"duplicate qubit labels in {register}")
    for q in register:
        if not isinstance(q, Qubit):
            raise RegisterError(f"not a qubit label: {q!r}")
    return register


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=complex)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class PureState:
    amplitudes: np.ndarray
    register: tuple[Qubit, ...]

    def __post_init__(self):
        register = _check_register(self.register)
        amps = _frozen(np.ravel(self.amplitudes))
        if amps.size != 2 ** len(register):
            raise RegisterError(
                f"{amps.size} amplitudes for a {len(register)}-qubit register")
        norm = np.linalg.norm(amps)
        if abs(norm - 1.0) > NORM_TOL:
            raise ValueError(f"state norm {norm!r} differs from 1")
        object.__setattr__(self, "register", register)
        object.__setattr__(self, "amplitudes", amps)

    @classmethod
    def from_unnormalized(cls, amplitudes, register) -> PureState:
        amps = np.asarray(amplitudes, dtype=complex)
        return cls(amps / np.linalg.norm(amps), tuple(register))

    @classmethod
    def basis(cls, bits: Sequence[int], register) -> PureState:
        amps = np.zeros(2 ** len(bits), dtype=complex)
        amps[int("".join(str(int(b)) for b in bits), 2)] = 1.0
        return cls(amps, tuple(register))

    @property
    def dim(self) -> int:
        return self.amplitudes.size

    def to_density(self) -> DensityMatrix:
        return DensityMatrix(np.outer(self.amplitudes, self.amplitudes.conj()),
                             self.register)


@dataclass(frozen=True, eq=False)
class DensityMatrix:
    """Trace-one positive semidefinite matrix over a labelled register.

    The physicality checks run on construction; pass ``check=False`` only for
    intermediate, knowingly unnormalized matrices inside this module.
    """

    matrix: np.ndarray
    register: tuple[Qubit, ...]
    check: bool = True

    def __post_init__(self):
        register = _check_register(self.register)
        m = _frozen(self.matrix)
        d = 2 ** len(register)
        if m.shape != (d, d):
            raise RegisterError(f"matrix shape {m.shape} for a {len(register)}-qubit register")
        object.__setattr__(self, "register", register)
        object.__setattr__(self, "matrix", m)
        if self.check:
            validate(self)

    @classmethod
    def maximally_mixed(cls, register) -> DensityMatrix:
        d = 2 ** len(tuple(register))
        return cls(np.eye(d) / d, tuple(register))

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    @property
    def n_qubits(self) -> int:
        return len(self.register)


def validate(rho: DensityMatrix) -> None:
    m = rho.matrix
    if np.max(np.abs(m - m.conj().T)) > HERMITIAN_TOL:
        raise ValueError("density matrix is not Hermitian")
    tr = np.trace(m)
    if abs(tr - 1.0) > TRACE_TOL:
        raise ValueError(f"density matrix trace {tr!r} differs from 1")
    lo = np.linalg.eigvalsh(m).min()
    if lo < EIGEN_FLOOR:
        raise ValueError(f"density matrix has negative eigenvalue {lo:.3e}")


def _hermitize(m: np.ndarray) -> np.ndarray:
    return 0.5 * (m + m.conj().T)


def _permutation(register: Sequence[Qubit], order: Sequence[Qubit]) -> list[int]:
    if set(register) != set(order) or len(register) != len(order):
        raise RegisterError(f"register {tuple(register)} is not a permutation of {tuple(order)}")
    return [list(register).index(q) for q in order]


def reorder(state, order: Sequence[Qubit]):
    """Return ``state`` with its qubits permuted into ``order``."""
    order = _check_register(order)
    perm = _permutation(state.register, order)
    k = len(order)
    if isinstance(state, PureState):
        amps = state.amplitudes.reshape((2,) * k).transpose(perm).ravel()
        return PureState(amps, order)
    m = state.matrix.reshape((2,) * (2 * k))
    m = m.transpose(perm + [p + k for p in perm]).reshape(state.dim, state.dim)
    return DensityMatrix(m, order)


def tensor(a, b):
    """Tensor product; the result register is ``a.register + b.register``."""
    if set(a.register) & set(b.register):
        raise RegisterError(f"overlapping registers {a.register} and {b.register}")
    register = a.register + b.register
    if isinstance(a, PureState) and isinstance(b, PureState):
        return PureState(np.kron(a.amplitudes, b.amplitudes), register)
    if isinstance(a, PureState):
        a = a.to_density()
    if isinstance(b, PureState):
        b = b.to_density()
    return DensityMatrix(np.kron(a.matrix, b.matrix), register)


@dataclass(frozen=True, eq=False)
class KrausChannel:
    operators: tuple[np.ndarray, ...]

    def __post_init__(self):
        ops = tuple(_frozen(k) for k in self.operators)
        if not ops:
            raise ValueError("a channel needs at least one Kraus operator")
        d = ops[0].shape[0]
        for k in ops:
            if k.shape != (d, d):
                raise ValueError("Kraus operators must be square and of equal dimension")
        total = sum(k.conj().T @ k for k in ops)
        if np.max(np.abs(total - np.eye(d))) > KRAUS_TOL:
            raise ValueError("Kraus operators are not trace preserving")
        object.__setattr__(self, "operators", ops)

    @property
    def dim(self) -> int:
        return self.operators[0].shape[0]

    @classmethod
    def unitary(cls, u) -> KrausChannel:
        return cls((np.asarray(u, dtype=complex),))


def identity_channel(n_qubits: int = 1) -> KrausChannel:
    return KrausChannel((np.eye(2 ** n_qubits),))


PAULI = {
    "I": np.eye(2, dtype=complex),
    "X": np.array([[0, 1], [1, 0]], dtype=complex),
    "Y": np.array([[0, -1j], [1j, 0]], dtype=complex),
    "Z": np.array([[1, 0], [0, -1]], dtype=complex),
}


def depolarizing_channel(p: float) -> KrausChannel:
    """Single-qubit depolarizing channel rho -> (1-p) rho + p I/2."""
    if not 0.0 <= p <= 4.0 / 3.0:
        raise ValueError("depolarizing strength out of range")
    ops = [np.sqrt(1 - 3 * p / 4) * PAULI["I"]]
    ops += [np.sqrt(p / 4) * PAULI[s] for s in "XYZ"]
    return KrausChannel(tuple(ops))


def replacement_channel(target: DensityMatrix, c: float) -> KrausChannel:
    """Kraus form of rho -> (1-c) rho + c * target (trace of rho times target)."""
    if not 0.0 <= c <= 1.0:
        raise ValueError("replacement probability must lie in [0, 1]")
    w, v = np.linalg.eigh(target.matrix)
    d = target.dim
    ops = [np.sqrt(1 - c) * np.eye(d)]
    for lam, vec in zip(w, v.T):
        if lam <= 0:
            continue
        for j in range(d):
            k = np.zeros((d, d), dtype=complex)
            k[:, j] = vec
            ops.append(np.sqrt(c * lam) * k)
    return KrausChannel(tuple(ops))


def _targets_first(rho: DensityMatrix, targets: Sequence[Qubit]):
    targets = _check_register(targets)
    missing = [t for t in targets if t not in rho.register]
    if missing:
        raise RegisterError(f"targets {missing} not in register {rho.register}")
    rest = tuple(q for q in rho.register if q not in targets)
    return targets, rest, reorder(rho, targets + rest)


def apply_channel(rho: DensityMatrix, ch: KrausChannel,
                  targets: Sequence[Qubit]) -> DensityMatrix:
    targets, rest, r = _targets_first(rho, targets)
    dt = 2 ** len(targets)
    if ch.dim != dt:
        raise RegisterError(f"channel dimension {ch.dim} does not match {len(targets)} target qubits")
    dr = 2 ** len(rest)
    m = r.matrix.reshape(dt, dr, dt, dr)
    out = sum(np.einsum("ai,ibjc,dj->abdc", k, m, k.conj()) for k in ch.operators)
    out = _hermitize(out.reshape(dt * dr, dt * dr))
    return reorder(DensityMatrix(out, targets + rest), rho.register)


def apply_unitary(rho: DensityMatrix, u, targets: Sequence[Qubit]) -> DensityMatrix:
    return apply_channel(rho, KrausChannel.unitary(u), targets)


def depolarize(rho: DensityMatrix, alpha: float) -> DensityMatrix:
    """Global depolarization (1-alpha) rho + alpha I/d over the whole register."""
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"mixing weight {alpha!r} outside [0, 1]")
    d = rho.dim
    return DensityMatrix((1 - alpha) * rho.matrix + alpha * np.eye(d) / d, rho.register)


def mix(states: Iterable[tuple[float, DensityMatrix]]) -> DensityMatrix:
    """Convex combination sum_i w_i rho_i over a shared register."""
    states = list(states)
    register = states[0][1].register
    total = np.zeros_like(states[0][1].matrix)
    for w, s in states:
        total = total + w * reorder(s, register).matrix
    return DensityMatrix(total, register)


def fidelity_with_pure(rho: DensityMatrix, psi: PureState) -> float:
    """<psi|rho|psi>, with psi permuted to rho's qubit order if necessary."""
    if set(rho.register) != set(psi.register):
        raise RegisterError(f"register mismatch: {rho.register} vs {psi.register}")
    psi = reorder(psi, rho.register)
    f = float(np.real(np.vdot(psi.amplitudes, rho.matrix @ psi.amplitudes)))
    if f < -HERMITIAN_TOL or f > 1 + HERMITIAN_TOL:
        raise ValueError(f"fidelity {f!r} outside [0, 1]")
    return min(max(f, 0.0), 1.0)


def purity(rho: DensityMatrix) -> float:
    return float(np.real(np.trace(rho.matrix @ rho.matrix)))


def partial_trace(rho: DensityMatrix, keep: Sequence[Qubit]) -> DensityMatrix:
    keep, rest, r = _targets_first(rho, keep)
    dk, dr = 2 ** len(keep), 2 ** len(rest)
    m = r.matrix.reshape(dk, dr, dk, dr)
    return DensityMatrix(_hermitize(np.einsum("ajbj->ab", m)), keep)


def project(rho: DensityMatrix, projector, targets: Sequence[Qubit]
            ) -> tuple[DensityMatrix, float]:
    """Apply projector P on ``targets``; return (P rho P / prob, prob)."""
    p = np.asarray(projector, dtype=complex)
    if np.max(np.abs(p - p.conj().T)) > 1e-10 or np.max(np.abs(p @ p - p)) > 1e-10:
        raise ValueError("projector must be Hermitian and idempotent")
    targets, rest, r = _targets_first(rho, targets)
    dt, dr = 2 ** len(targets), 2 ** len(rest)
    if p.shape != (dt, dt):
        raise RegisterError("projector dimension does not match the targets")
    full = np.kron(p, np.eye(dr))
    out = full @ r.matrix @ full
    prob = float(np.real(np.trace(out)))
    if prob < IMPOSSIBLE_PROB:
        raise ImpossibleOutcome(f"projection outcome has probability {prob:.3e}")
    post = DensityMatrix(_hermitize(out) / prob, targets + rest)
    return reorder(post, rho.register), min(prob, 1.0)


def ket_projector(psi: PureState) -> np.ndarray:
    return np.outer(psi.amplitudes, psi.amplitudes.conj())
