"""Monte Carlo of the asynchronous pair-generation sequence and its calibrations.

One *repetition* starts with cooling (step 1) and ends either when control
returns to step 1 (photon 1 missed, or n_max retries of atom 2 used up) or
after the atomic readout of a heralded pair.  The D3/2 veto (step 3) and the
balancing losses (steps 6-8, 10) are not sampled separately: their pass
probabilities are already contained in the effective per-shot detection
probabilities p1 and p2 of the efficiency budget, so the vetoes always pass
here and the pair probability per repetition is p1 (1 - (1 - p2)^n_max).

Two engines produce statistically identical repetitions:

* :func:`run_sequence` walks the step table one repetition at a time;
* :func:`sample_repetitions` draws whole batches with numpy and is what
  :func:`monte_carlo` uses by default.

Quantum states are tracked through a small set of cases per arm (intact,
scrambled by false addressing, heralded by a dark count), whose photon-pair
states after the gate are computed once with the density-matrix engine.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from . import qcore
from .entangle import BellOutcome, photon_target, swap
from .noise import ETA_850, depolarized_ap_state, depolarizing_matrix_M, noisy_ms_channel
from .qcore import DensityMatrix, Qubit

OUTCOMES = tuple(BellOutcome)

# documentation constants of the trap and readout, not used by the simulation
AXIAL_FREQUENCY = 1.1642e6  # Hz
ION_SPACING = 5.1e-6  # m
CROSSTALK_ATOM1 = 200 / 110e3
CROSSTALK_ATOM2 = 400 / 150e3
EXTINCTION_FREE = 2.76e-6
EXTINCTION_FIBER = 1.29e-7


class StepKind(enum.Enum):
    COOL = "Cool"
    GENERATE1 = "Generate1"
    FLUOR_CHECK = "FluorCheck"
    REPREP2 = "Reprep2"
    GENERATE2 = "Generate2"
    PUMP = "Pump"
    BALANCE = "Balance"
    MS_GATE = "MSGate"
    PROJECTION = "Projection"


@dataclass(frozen=True)
class SequenceStep:
    id: int
    kind: StepKind
    duration: float  # microseconds
    on_success: int | None  # None ends the repetition
    on_failure: int | None = None


STEPS = {
    s.id: s for s in (
        SequenceStep(1, StepKind.COOL, 3.0, 2),
        SequenceStep(2, StepKind.GENERATE1, 2.0, 3, 1),
        SequenceStep(3, StepKind.FLUOR_CHECK, 50.0, 4, 1),
        SequenceStep(4, StepKind.REPREP2, 4.5, 5),
        SequenceStep(5, StepKind.GENERATE2, 2.0, 6, 4),
        SequenceStep(6, StepKind.PUMP, 10.0, 7),
        SequenceStep(7, StepKind.BALANCE, 10.0, 8),
        SequenceStep(8, StepKind.PUMP, 10.0, 9),
        SequenceStep(9, StepKind.MS_GATE, 220.0, 10),
        SequenceStep(10, StepKind.FLUOR_CHECK, 100.0, 11, 1),
        # step 11 finishes when both atoms read |->; otherwise step 12 follows
        SequenceStep(11, StepKind.PROJECTION, 110.0, None, 12),
        SequenceStep(12, StepKind.PROJECTION, 110.0, None),
    )
}

RESTART_TIME = STEPS[1].duration + STEPS[2].duration
TRIAL_TIME = STEPS[4].duration + STEPS[5].duration
POST_HERALD_TIME = sum(STEPS[i].duration for i in range(6, 12))
SECOND_PROJECTION_TIME = STEPS[12].duration


# ---------------------------------------------------------------------------
# efficiency budget

@dataclass(frozen=True)
class EfficiencyBudget:
    eta_850: float = ETA_850
    eta_mix: float = 0.5
    eta_sigma: float = 9 / 15
    eta_halo: float = 0.06
    eta_balance: float = 2 / 3
    eta_gate: float = 1.0
    eta_fiber: float = 0.193
    t_projection: float = 0.603
    eta_detector: float = 0.91

    def __post_init__(self):
        for name, v in self.factors().items():
            if not 0.0 < v <= 1.0:
                raise ValueError(f"{name}={v!r} outside (0, 1]")

    def factors(self) -> dict[str, float]:
        return dict(self.__dict__)


ATOM1_BUDGET = EfficiencyBudget()
ATOM2_BUDGET = EfficiencyBudget(eta_gate=0.82, eta_fiber=0.177, t_projection=0.672)


def detection_efficiency(budget: EfficiencyBudget) -> float:
    return math.prod(budget.factors().values())


def extinction_ratio(r_free: float = EXTINCTION_FREE, r_fiber: float = EXTINCTION_FIBER) -> float:
    """Total extinction of two switches in series."""
    return r_free * r_fiber


# ---------------------------------------------------------------------------
# parameters and outcomes

@dataclass(frozen=True)
class ProtocolParams:
    p1: float = 1.0
    p2: float = 1.0
    n_max: int = 1
    p_sia_false: float = 0.0
    p_sia_reset: float = 1.0
    dark_count_rate: float = 0.0  # Hz
    detection_window: float = 2.0  # microseconds per generation step
    f10: float = 1.0
    f20: float = 1.0
    f_ms: float = 1.0
    eta_850: float = ETA_850
    rng_seed: int = 20240917

    def __post_init__(self):
        for name in ("p1", "p2", "p_sia_false", "p_sia_reset", "eta_850", "f_ms"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name}={v!r} outside [0, 1]")
        for name in ("f10", "f20"):
            if not 0.25 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [1/4, 1]")
        if int(self.n_max) != self.n_max or self.n_max < 1:
            raise ValueError("n_max must be a positive integer")
        if self.dark_count_rate < 0 or self.detection_window <= 0:
            raise ValueError("dark count rate and detection window must be non-negative")

    @classmethod
    def reference(cls, **kw) -> ProtocolParams:
        base = dict(p1=0.00114, p2=0.00096, n_max=100, p_sia_false=0.0056,
                    f10=0.945, f20=0.924, f_ms=0.926)
        base.update(kw)
        return cls(**base)

    @property
    def c(self) -> float:
        return self.p_sia_false * self.eta_850 / 2

    @property
    def p_dark(self) -> float:
        return -math.expm1(-self.dark_count_rate * self.detection_window * 1e-6)

    @property
    def p2_effective(self) -> float:
        return self.p2 * self.p_sia_reset


class AbortReason(enum.Enum):
    PHOTON1_MISSED = "photon1_missed"
    NMAX_REACHED = "nmax_reached"


# atom 1 cases: 0 intact, 1 scrambled, 2 dark-count herald; atom 2: 0 intact, 1 dark
ATOM1_CASES = 3
ATOM2_CASES = 2


@dataclass(frozen=True, eq=False)
class TrialOutcome:
    success: bool
    trials_used: int
    elapsed: float  # microseconds
    bell_outcome: BellOutcome | None = None
    photon_pair_state: DensityMatrix | None = None
    abort_reason: AbortReason | None = None
    atom1_case: int | None = None
    atom2_case: int | None = None

    def __post_init__(self):
        if self.success and (self.bell_outcome is None or self.photon_pair_state is None):
            raise ValueError("a successful repetition carries an outcome and a state")


@lru_cache(maxsize=64)
def _herald_table(f10: float, f20: float, f_ms: float):
    """Outcome probabilities and photon states for every atom-case pair."""
    atom1 = [depolarized_ap_state(f10, atom=1), depolarizing_matrix_M(),
             DensityMatrix.maximally_mixed((Qubit.ATOM1, Qubit.PHOTON_A))]
    atom2 = [depolarized_ap_state(f20, atom=2),
             DensityMatrix.maximally_mixed((Qubit.ATOM2, Qubit.PHOTON_B))]
    probs = np.zeros((ATOM1_CASES, ATOM2_CASES, len(OUTCOMES)))
    states = {}
    for i, r1 in enumerate(atom1):
        for j, r2 in enumerate(atom2):
            joint = qcore.tensor(r1, r2)
            for o, outcome in enumerate(OUTCOMES):
                ph, prob = swap(joint, outcome, f_ms=f_ms)
                probs[i, j, o] = prob
                states[i, j, o] = ph
    probs /= probs.sum(axis=2, keepdims=True)
    return probs, states


def _atom1_fidelity(case: np.ndarray | int, f10: float):
    return np.where(np.asarray(case) == 0, f10, 0.25)


def run_sequence(params: ProtocolParams, rng: np.random.Generator) -> TrialOutcome:
    """Walk the step table for one repetition."""
    probs, states = _herald_table(params.f10, params.f20, params.f_ms)
    elapsed = 0.0
    trials = 0
    atom1 = atom2 = 0
    outcome = None
    step = 1
    while step is not None:
        s = STEPS[step]
        elapsed += s.duration
        nxt = s.on_success
        if s.kind is StepKind.GENERATE1:
            if rng.random() < params.p1:
                atom1 = 0
            elif rng.random() < params.p_dark:
                atom1 = 2
            else:
                return TrialOutcome(False, 0, elapsed, abort_reason=AbortReason.PHOTON1_MISSED)
        elif s.kind is StepKind.REPREP2:
            trials += 1
            if rng.random() < params.c:
                atom1 = 1
        elif s.kind is StepKind.GENERATE2:
            if rng.random() < params.p2_effective:
                atom2 = 0
            elif rng.random() < params.p_dark:
                atom2 = 1
            elif trials >= params.n_max:
                return TrialOutcome(False, trials, elapsed, abort_reason=AbortReason.NMAX_REACHED)
            else:
                nxt = s.on_failure
        elif s.kind is StepKind.MS_GATE:
            o = rng.choice(len(OUTCOMES), p=probs[atom1, atom2])
            outcome = OUTCOMES[o]
        elif s.id == 11 and outcome is not BellOutcome.PHI_MINUS:
            nxt = s.on_failure
        step = nxt
    o = OUTCOMES.index(outcome)
    return TrialOutcome(True, trials, elapsed, outcome, states[atom1, atom2, o],
                        atom1_case=atom1, atom2_case=atom2)


def expected_repetition_time(params: ProtocolParams) -> float:
    """Mean wall time of one repetition in microseconds, in closed form."""
    probs, _ = _herald_table(params.f10, params.f20, params.f_ms)
    p_click1 = params.p1 + (1 - params.p1) * params.p_dark
    q = (1 - params.p2_effective) * (1 - params.p_dark)  # no click in a trial
    n = params.n_max
    mean_trials = n if q == 1.0 else (1 - q ** n) / (1 - q)
    p_herald = 1 - q ** n
    # chance of the second projection step, averaged over the atom cases
    genuine1 = params.p1 / p_click1 if p_click1 > 0 else 1.0
    genuine2 = params.p2_effective / (1 - q) if q < 1 else 1.0
    s = _mean_survival(params)
    w1 = np.array([genuine1 * s, genuine1 * (1 - s), 1 - genuine1])
    w2 = np.array([genuine2, 1 - genuine2])
    p_phi_minus = float(np.einsum("i,j,ij->", w1, w2,
                                  probs[:, :, OUTCOMES.index(BellOutcome.PHI_MINUS)]))
    post = POST_HERALD_TIME + (1 - p_phi_minus) * SECOND_PROJECTION_TIME
    return RESTART_TIME + p_click1 * (STEPS[3].duration + TRIAL_TIME * mean_trials
                                      + p_herald * post)


def _mean_survival(params: ProtocolParams) -> float:
    """E[(1-c)^k] over the heralding trial k, given a herald within n_max."""
    q = (1 - params.p2_effective) * (1 - params.p_dark)
    k = np.arange(1, params.n_max + 1)
    w = (1 - q) * q ** (k - 1)
    return float((w * (1 - params.c) ** k).sum() / w.sum())


def expected_rate(params: ProtocolParams) -> float:
    """Heralded pairs per second implied by the closed-form mean times."""
    q = (1 - params.p2_effective) * (1 - params.p_dark)
    p_click1 = params.p1 + (1 - params.p1) * params.p_dark
    pairs = p_click1 * (1 - q ** params.n_max)
    return pairs / (expected_repetition_time(params) * 1e-6)


def _first_event(rng, p: float, size: int) -> np.ndarray:
    """1-based index of the first success of a Bernoulli(p) sequence."""
    if p <= 0.0:
        return np.full(size, np.iinfo(np.int64).max)
    return rng.geometric(p, size)


def sample_repetitions(params: ProtocolParams, n: int, rng: np.random.Generator) -> dict:
    """Vectorized draw of ``n`` repetitions.

    Returns arrays ``success``, ``trials``, ``elapsed`` (microseconds),
    ``outcome`` (index into OUTCOMES, -1 on failure), ``atom1`` and ``atom2``
    (case indices).
    """
    probs, _ = _herald_table(params.f10, params.f20, params.f_ms)
    u = rng.random(n)
    genuine1 = u < params.p1
    dark1 = ~genuine1 & (rng.random(n) < params.p_dark)
    clicked = genuine1 | dark1
    m = int(clicked.sum())

    first_true = _first_event(rng, params.p2_effective, m)
    first_dark = _first_event(rng, params.p_dark, m)
    first = np.minimum(first_true, first_dark)
    ok = first <= params.n_max
    k = np.minimum(first, params.n_max)
    scrambled = rng.random(m) < -np.expm1(k * np.log1p(-params.c)) if params.c > 0 else np.zeros(m, bool)

    a1 = np.where(scrambled, 1, np.where(dark1[clicked], 2, 0))
    a2 = np.where(first_true <= first_dark, 0, 1)
    # one inverse-CDF draw per heralded pair, conditioned on the atom cases
    cdf = np.cumsum(probs, axis=2)[a1, a2]
    o = (rng.random(m)[:, None] > cdf).sum(axis=1)
    o = np.minimum(o, len(OUTCOMES) - 1)
    second = o != OUTCOMES.index(BellOutcome.PHI_MINUS)

    elapsed = np.full(n, RESTART_TIME)
    sub = STEPS[3].duration + k * TRIAL_TIME
    sub = sub + ok * (POST_HERALD_TIME + second * SECOND_PROJECTION_TIME)
    elapsed[clicked] += sub

    success = np.zeros(n, bool)
    success[clicked] = ok
    trials = np.zeros(n, np.int64)
    trials[clicked] = k
    outcome = np.full(n, -1)
    outcome[clicked] = np.where(ok, o, -1)
    atom1 = np.full(n, -1)
    atom1[clicked] = a1
    atom2 = np.full(n, -1)
    atom2[clicked] = a2
    return {"success": success, "trials": trials, "elapsed": elapsed,
            "outcome": outcome, "atom1": atom1, "atom2": atom2}


@dataclass
class MonteCarloSummary:
    n_reps: int
    successes: int
    total_time: float  # seconds
    outcome_counts: dict[BellOutcome, int]
    outcome_states: dict[BellOutcome, DensityMatrix | None]
    trials_histogram: np.ndarray  # successes by trials_used, index 0 <-> 1 trial
    mean_atom1_fidelity: float
    case_counts: np.ndarray = field(repr=False)

    @property
    def pair_probability(self) -> float:
        return self.successes / self.n_reps

    @property
    def pair_probability_stderr(self) -> float:
        p = self.pair_probability
        return math.sqrt(max(p * (1 - p), 0.0) / self.n_reps)

    @property
    def mean_repetition_time(self) -> float:
        """Mean wall time per repetition in microseconds."""
        return self.total_time / self.n_reps * 1e6

    @property
    def rate(self) -> float:
        """Heralded pairs per second of simulated wall time."""
        return self.successes / self.total_time

    @property
    def outcome_fidelities(self) -> dict[BellOutcome, float | None]:
        return {o: (None if s is None else qcore.fidelity_with_pure(s, photon_target(o)))
                for o, s in self.outcome_states.items()}


def monte_carlo(params: ProtocolParams, n_reps: int, engine: str = "vector",
                chunk: int = 1 << 20) -> MonteCarloSummary:
    """Aggregate ``n_reps`` repetitions, reproducibly from ``params.rng_seed``.

    Each chunk of repetitions draws from its own stream spawned from the seed,
    so results do not depend on how chunks are scheduled.
    """
    if n_reps < 1:
        raise ValueError("n_reps must be >= 1")
    if engine not in ("vector", "step"):
        raise ValueError(f"unknown engine {engine!r}")
    _, states = _herald_table(params.f10, params.f20, params.f_ms)
    n_chunks = -(-n_reps // chunk)
    seeds = np.random.SeedSequence(params.rng_seed).spawn(n_chunks)

    cases = np.zeros((ATOM1_CASES, ATOM2_CASES, len(OUTCOMES)), np.int64)
    hist = np.zeros(params.n_max, np.int64)
    total = 0.0
    f_atom1 = 0.0
    for i, seed in enumerate(seeds):
        size = min(chunk, n_reps - i * chunk)
        rng = np.random.default_rng(seed)
        if engine == "vector":
            r = sample_repetitions(params, size, rng)
        else:
            r = _stepwise_batch(params, size, rng)
        s = r["success"]
        total += float(r["elapsed"].sum())
        np.add.at(cases, (r["atom1"][s], r["atom2"][s], r["outcome"][s]), 1)
        hist += np.bincount(r["trials"][s] - 1, minlength=params.n_max)
        f_atom1 += float(_atom1_fidelity(r["atom1"][s], params.f10).sum())

    successes = int(cases.sum())
    counts, averaged = {}, {}
    for o, outcome in enumerate(OUTCOMES):
        n_o = int(cases[:, :, o].sum())
        counts[outcome] = n_o
        if n_o == 0:
            averaged[outcome] = None
            continue
        averaged[outcome] = qcore.mix(
            (cases[i, j, o] / n_o, states[i, j, o])
            for i in range(ATOM1_CASES) for j in range(ATOM2_CASES) if cases[i, j, o])
    return MonteCarloSummary(
        n_reps=n_reps, successes=successes, total_time=total * 1e-6,
        outcome_counts=counts, outcome_states=averaged, trials_histogram=hist,
        mean_atom1_fidelity=f_atom1 / successes if successes else float("nan"),
        case_counts=cases)


def _stepwise_batch(params: ProtocolParams, n: int, rng: np.random.Generator) -> dict:
    out = [run_sequence(params, rng) for _ in range(n)]
    return {
        "success": np.array([t.success for t in out], bool),
        "trials": np.array([t.trials_used for t in out], np.int64),
        "elapsed": np.array([t.elapsed for t in out]),
        "outcome": np.array([OUTCOMES.index(t.bell_outcome) if t.success else -1 for t in out]),
        "atom1": np.array([t.atom1_case if t.success else -1 for t in out]),
        "atom2": np.array([t.atom2_case if t.success else -1 for t in out]),
    }


# ---------------------------------------------------------------------------
# signal to background

def sbr(histogram, onset_bin: int, end_bin: int | None = None) -> float:
    """Signal-to-background ratio of a photon arrival-time histogram.

    The background rate per bin is the mean of the bins before ``onset_bin``;
    the signal is the sum of all counts in [onset_bin, end_bin).  Returns
    ``math.inf`` when no background count precedes the onset.
    """
    h = np.asarray(histogram, dtype=float)
    end = h.size if end_bin is None else end_bin
    if not 0 < onset_bin < end <= h.size:
        raise ValueError("onset must leave bins both before and after it")
    pre = h[:onset_bin]
    if pre.sum() == 0:
        return math.inf
    background = pre.mean() * (end - onset_bin)
    return float(h[onset_bin:end].sum() / background)


def wavepacket_histogram(signal_counts: float, background_per_bin: float, decay: float,
                         bin_width: float, n_pre: int, n_post: int,
                         rng: np.random.Generator) -> np.ndarray:
    """Poisson counts of an instantly rising, exponentially decaying wavepacket."""
    edges = np.arange(n_post + 1) * bin_width
    shape = np.exp(-edges[:-1] / decay) - np.exp(-edges[1:] / decay)
    mean = np.concatenate([np.full(n_pre, background_per_bin),
                           background_per_bin + signal_counts * shape])
    return rng.poisson(mean)


# ---------------------------------------------------------------------------
# gate calibration by parity oscillation

def ms_fidelity_from_parity(amplitude: float, population: float) -> float:
    """Bell-state fidelity from parity contrast and even-population P_DD+SS."""
    if not (0.0 <= amplitude <= 1.0 and 0.0 <= population <= 1.0):
        raise ValueError("amplitude and population must lie in [0, 1]")
    return population / 2 + amplitude / 2


@dataclass
class ParityScan:
    phases: np.ndarray
    parity: np.ndarray
    amplitude: float
    population: float

    @property
    def fidelity(self) -> float:
        return ms_fidelity_from_parity(min(self.amplitude, 1.0), min(self.population, 1.0))


def _analysis_pulse(phase: float) -> np.ndarray:
    n = math.cos(phase) * qcore.PAULI["X"] + math.sin(phase) * qcore.PAULI["Y"]
    r = math.cos(math.pi / 4) * np.eye(2) - 1j * math.sin(math.pi / 4) * n
    return np.kron(r, r)


def simulate_parity_scan(f_ms: float, phases, shots: int | None,
                         rng: np.random.Generator | None = None) -> ParityScan:
    """Gate on |+,+>, global pi/2 analysis pulse, parity fit.

    ``shots=None`` uses exact Born probabilities.  The parity curve is fitted
    with a + b cos(2 phi) + c sin(2 phi); its contrast is the amplitude.
    """
    phases = np.asarray(phases, dtype=float)
    if phases.size < 4:
        raise ValueError("a parity fit needs at least 4 phase points")
    if shots is not None and shots < 1:
        raise ValueError("shots must be >= 1")
    if shots is not None and rng is None:
        raise ValueError("sampling needs an rng")
    atoms = (Qubit.ATOM1, Qubit.ATOM2)
    start = qcore.PureState.basis((0, 0), atoms).to_density()
    rho = noisy_ms_channel(start, f_ms)
    parity_signs = np.array([1, -1, -1, 1])

    def measure(probs: np.ndarray) -> np.ndarray:
        probs = np.clip(probs, 0, None)
        probs = probs / probs.sum()
        if shots is None:
            return probs
        return rng.multinomial(shots, probs) / shots

    even = measure(np.real(np.diag(rho.matrix)))
    population = float(even[0] + even[3])
    parity = np.empty(phases.size)
    for i, ph in enumerate(phases):
        u = _analysis_pulse(ph)
        probs = np.real(np.diag(u @ rho.matrix @ u.conj().T))
        parity[i] = measure(probs) @ parity_signs
    design = np.column_stack([np.ones_like(phases), np.cos(2 * phases), np.sin(2 * phases)])
    coef, *_ = np.linalg.lstsq(design, parity, rcond=None)
    return ParityScan(phases, parity, float(math.hypot(coef[1], coef[2])), population)
