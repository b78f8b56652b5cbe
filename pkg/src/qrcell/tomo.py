"""Pauli-basis state tomography: forward simulation and reconstruction.

Each qubit is measured in Z, X or Y; outcome bit 0 is the +1 eigenvector
(|0>, (|0>+|1>)/sqrt2, (|0>+i|1>)/sqrt2).  A complete data set has all 3^k
basis combinations.

Reconstruction is linear inversion followed by projection onto the nearest
physical state in Frobenius norm: the eigenvalues of the inverted matrix are
projected onto the probability simplex, eigenvectors kept.  Linear inversion
is exact for exact probabilities, so analytic-mode data (``shots=None``)
round-trips to the input state.

Error bars are parametric bootstrap: the observed frequencies of every
setting are resampled multinomially with the same number of shots and the
spread of the resulting fidelity and purity is reported.
"""
from __future__ import annotations

import csv
import enum
import itertools
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import qcore
from .entangle import ATOMS, LarmorClock
from .qcore import DensityMatrix, PureState, Qubit


class Basis(enum.Enum):
    Z = "Z"
    X = "X"
    Y = "Y"


_S = 1 / math.sqrt(2)
# rows are <e_0|, <e_1| of each basis
_ROTATION = {
    Basis.Z: np.eye(2, dtype=complex),
    Basis.X: _S * np.array([[1, 1], [1, -1]], dtype=complex),
    Basis.Y: _S * np.array([[1, -1j], [1, 1j]], dtype=complex),
}


class IncompleteSettings(ValueError):
    pass


@dataclass(frozen=True)
class MeasurementSetting:
    bases: tuple[Basis, ...]
    shots: int | None = None  # None: exact Born probabilities

    def __post_init__(self):
        object.__setattr__(self, "bases", tuple(Basis(b) for b in self.bases))
        if self.shots is not None and self.shots < 1:
            raise ValueError("shots must be >= 1")

    @property
    def label(self) -> str:
        return "".join(b.value for b in self.bases)


def complete_settings(n_qubits: int, shots: int | None = None) -> list[MeasurementSetting]:
    return [MeasurementSetting(bs, shots)
            for bs in itertools.product(list(Basis), repeat=n_qubits)]


@dataclass(frozen=True)
class TomographyData:
    """Counts per outcome (columns, binary order) for each setting (rows).

    Rows of analytic settings hold probabilities instead of counts.
    """

    register: tuple[Qubit, ...]
    settings: tuple[MeasurementSetting, ...]
    counts: np.ndarray

    def __post_init__(self):
        k = len(self.register)
        if self.counts.shape != (len(self.settings), 2 ** k):
            raise ValueError("counts must have one row per setting and 2^k columns")
        if any(len(s.bases) != k for s in self.settings):
            raise ValueError("every setting needs one basis per qubit")
        if np.any(self.counts < 0):
            raise ValueError("counts must be non-negative")

    @property
    def n_qubits(self) -> int:
        return len(self.register)

    def frequencies(self) -> np.ndarray:
        tot = self.counts.sum(axis=1, keepdims=True)
        if np.any(tot <= 0):
            raise ValueError("a setting has no counts")
        return self.counts / tot

    def missing(self) -> list[str]:
        have = {s.label for s in self.settings}
        return [s.label for s in complete_settings(self.n_qubits) if s.label not in have]


def _rotation(bases) -> np.ndarray:
    u = np.ones((1, 1), dtype=complex)
    for b in bases:
        u = np.kron(u, _ROTATION[b])
    return u


def born_probabilities(rho: DensityMatrix, setting: MeasurementSetting) -> np.ndarray:
    u = _rotation(setting.bases)
    p = np.real(np.einsum("ij,jk,ik->i", u, rho.matrix, u.conj()))
    p = np.clip(p, 0.0, None)
    return p / p.sum()


def simulate_counts(rho: DensityMatrix, settings, rng: np.random.Generator | None = None
                    ) -> TomographyData:
    """Multinomial counts per setting; analytic settings get exact probabilities."""
    settings = tuple(settings)
    rows = []
    for s in settings:
        p = born_probabilities(rho, s)
        if s.shots is None:
            rows.append(p)
        else:
            if rng is None:
                raise ValueError("sampling needs an rng")
            rows.append(rng.multinomial(s.shots, p).astype(float))
    return TomographyData(tuple(rho.register), settings, np.array(rows))


# ---------------------------------------------------------------------------
# reconstruction

_PAULI_OF = {Basis.Z: "Z", Basis.X: "X", Basis.Y: "Y"}


def _sign_table(n: int) -> np.ndarray:
    """signs[support_mask, outcome] = prod over support of (-1)^bit."""
    outcomes = np.arange(2 ** n)
    bits = (outcomes[:, None] >> np.arange(n - 1, -1, -1)) & 1
    masks = np.array(list(itertools.product((0, 1), repeat=n)))
    return np.where((masks @ bits.T) % 2 == 0, 1.0, -1.0)


def linear_inversion(data: TomographyData) -> np.ndarray:
    """rho = 2^-k sum_P <P> P, each <P> averaged over compatible settings."""
    missing = data.missing()
    if missing:
        raise IncompleteSettings(f"missing measurement bases: {', '.join(missing)}")
    n = data.n_qubits
    freqs = data.frequencies()
    signs = _sign_table(n)
    rho = np.zeros((2 ** n, 2 ** n), dtype=complex)
    for paulis in itertools.product("IXYZ", repeat=n):
        support = tuple(int(p != "I") for p in paulis)
        mask_index = int("".join(map(str, support)), 2) if n else 0
        vals = [signs[mask_index] @ f for s, f in zip(data.settings, freqs)
                if all(p == "I" or p == _PAULI_OF[b] for p, b in zip(paulis, s.bases))]
        op = np.ones((1, 1), dtype=complex)
        for p in paulis:
            op = np.kron(op, qcore.PAULI[p])
        rho += float(np.mean(vals)) * op
    rho /= 2 ** n
    return (rho + rho.conj().T) / 2


def _project_simplex(v: np.ndarray) -> np.ndarray:
    """Euclidean projection of a real vector onto {x >= 0, sum x = 1}."""
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - 1.0
    idx = np.arange(1, v.size + 1)
    r = np.nonzero(u - css / idx > 0)[0][-1]
    return np.maximum(v - css[r] / (r + 1), 0.0)


def nearest_physical(m: np.ndarray) -> tuple[np.ndarray, float]:
    """Frobenius-nearest density matrix and the trace-norm distance moved."""
    w, v = np.linalg.eigh((m + m.conj().T) / 2)
    w_new = _project_simplex(w)
    rho = (v * w_new) @ v.conj().T
    return (rho + rho.conj().T) / 2, float(np.abs(w_new - w).sum())


@dataclass(frozen=True)
class TomographyResult:
    rho: DensityMatrix
    fidelity: float
    fidelity_err: float
    purity: float
    purity_err: float
    n_bootstrap: int
    fidelity_linear: float
    projection_distance: float  # trace norm between inverted and projected matrix

    def __post_init__(self):
        if self.fidelity_err < 0 or self.purity_err < 0:
            raise ValueError("error bars must be non-negative")


def _point_estimate(data: TomographyData, target: PureState | None):
    lin = linear_inversion(data)
    phys, dist = nearest_physical(lin)
    rho = DensityMatrix(phys, data.register)
    f = f_lin = math.nan
    if target is not None:
        psi = qcore.reorder(target, data.register)
        f = qcore.fidelity_with_pure(rho, psi)
        f_lin = float(np.real(psi.amplitudes.conj() @ lin @ psi.amplitudes))
    return rho, f, f_lin, dist


def reconstruct(data: TomographyData, target: PureState | None = None,
                n_bootstrap: int = 0, rng: np.random.Generator | None = None
                ) -> TomographyResult:
    """Reconstruct a density matrix; fidelity is NaN without a ``target``."""
    rho, f, f_lin, dist = _point_estimate(data, target)
    f_err = p_err = 0.0
    if n_bootstrap:
        f_err, p_err = bootstrap(data, n_bootstrap, rng, target)
    return TomographyResult(rho, f, f_err, qcore.purity(rho), p_err, n_bootstrap, f_lin, dist)


def bootstrap(data: TomographyData, n_resamples: int, rng: np.random.Generator | None,
              target: PureState | None = None) -> tuple[float, float]:
    """Standard deviations of fidelity and purity over parametric resamples."""
    if n_resamples < 100:
        raise ValueError("bootstrap needs at least 100 resamples")
    sampled = [s.shots is not None for s in data.settings]
    if not any(sampled):
        return 0.0, 0.0
    if rng is None:
        raise ValueError("bootstrap needs an rng")
    freqs = data.frequencies()
    totals = data.counts.sum(axis=1)
    fids, purs = [], []
    for _ in range(n_resamples):
        counts = data.counts.copy()
        for i, s in enumerate(sampled):
            if s:
                counts[i] = rng.multinomial(int(round(totals[i])), freqs[i])
        rho, f, _, _ = _point_estimate(
            TomographyData(data.register, data.settings, counts), target)
        fids.append(f)
        purs.append(qcore.purity(rho))
    f_err = float(np.std(fids, ddof=1)) if target is not None else math.nan
    return f_err, float(np.std(purs, ddof=1))


# ---------------------------------------------------------------------------
# Larmor phase

def larmor_rephase(rho: DensityMatrix, detection_time: float, clock: LarmorClock | None = None,
                   atom: Qubit | None = None) -> DensityMatrix:
    """Undo the precession of the atomic qubit accumulated since emission.

    Applies diag(1, exp(-i wL t)) to ``atom``, the single atom of the register
    when not given.
    """
    if detection_time < 0:
        raise ValueError("detection time must be non-negative")
    if atom is None:
        present = [q for q in rho.register if q in ATOMS]
        if len(present) != 1:
            raise qcore.RegisterError("name the atom to rephase")
        atom = present[0]
    omega = (clock or LarmorClock()).omega_L
    u = np.diag([1.0, np.exp(-1j * omega * detection_time)])
    return qcore.apply_unitary(rho, u, (atom,))


# ---------------------------------------------------------------------------
# serialization

def _bits(i: int, n: int) -> str:
    return format(i, f"0{n}b")


def write_counts_csv(data: TomographyData, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["setting", "outcome", "count"])
        for s, row in zip(data.settings, data.counts):
            for i, c in enumerate(row):
                w.writerow([s.label, _bits(i, data.n_qubits), repr(float(c))])


def read_counts_csv(path, register, analytic: bool = False) -> TomographyData:
    register = tuple(register)
    n = len(register)
    table: dict[str, np.ndarray] = {}
    with open(Path(path), newline="") as fh:
        for rec in csv.DictReader(fh):
            label, outcome = rec["setting"], rec["outcome"]
            if len(label) != n or len(outcome) != n:
                raise ValueError(f"row {rec} does not match a {n}-qubit register")
            table.setdefault(label, np.zeros(2 ** n))[int(outcome, 2)] = float(rec["count"])
    settings = []
    for label, row in table.items():
        shots = None if analytic else int(round(row.sum()))
        settings.append(MeasurementSetting(tuple(Basis(c) for c in label), shots))
    return TomographyData(register, tuple(settings), np.array(list(table.values())))
