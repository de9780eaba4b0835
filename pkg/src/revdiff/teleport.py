"""Monte Carlo model of the teleportation protocol for the dissipative drift.

Each reverse step splits into a weak measurement exp(-p dt + sqrt(p) P dW)
and the normalized imaginary-time drift R = exp(a P)/||exp(a P)|| with
a = sqrt(p) dY, dY = dX - dW.  R is applied by teleporting the state through
a resource state; the Bell outcome leaves a Pauli byproduct Q, so attempt r
applies the Kraus operator R^(2^r) Q.  Outcome statistics are sampled from
this Kraus algebra directly, without circuit-level simulation.

Branch rule.  At r = 0 a byproduct commuting with P is corrected by Q and
the drift is done.  An anticommuting byproduct is mapped to C = P_* Q, which
commutes with P, leaving R P_* phi.  Every later attempt carries such a
P_* defect: an anticommuting Q then cancels it through the identity
R^n P_* R^n P_* = lambda_min^n I and leaves R phi, while a commuting Q deepens
the defect to R^(2^(r+1) - 1) P_* phi.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import product

import numpy as np

from .channel import ChannelConfig, _broadcast_states, reverse_bridge
from .noise import REVERSE_CHANNEL, TELEPORT_CHANNEL, BatchNoise, NoiseStream, bridge_step, measurement_signal
from .pauli import DISSIPATIVE, PauliString, apply_affine_pauli, fidelity, normalize, pauli_matrix

GOOD = "good"
BAD = "bad"
MAX_ATTEMPTS = 64


@dataclass(frozen=True)
class DriftOp:
    """Power of the normalized drift R = exp(a L)/||exp(a L)||, a = sqrt(p) dy."""

    L: PauliString
    dy: float
    p: float
    power: float = 1

    def __post_init__(self):
        object.__setattr__(self, "L", PauliString.parse(self.L))

    @property
    def a(self) -> float:
        return math.sqrt(self.p) * self.dy

    @property
    def lambda_min(self) -> float:
        """Smallest eigenvalue e^{-2|a|} of R (not of its power)."""
        return math.exp(-2 * abs(self.a))

    def coefficients(self, power=None) -> tuple[float, float]:
        """(alpha, beta) with R^n = alpha I + beta L, in overflow-free form."""
        n = self.power if power is None else power
        e = math.exp(-2 * n * abs(self.a))
        sign = math.copysign(1.0, self.a) if self.a else 0.0
        return 0.5 * (1 + e), 0.5 * sign * (1 - e)

    def matrix(self) -> np.ndarray:
        alpha, beta = self.coefficients()
        return alpha * np.eye(self.L.dim) + beta * pauli_matrix(self.L)

    def apply(self, psi: np.ndarray, power=None) -> np.ndarray:
        alpha, beta = self.coefficients(power)
        return alpha * psi + beta * self.L.apply(psi)

    def with_power(self, power) -> "DriftOp":
        return DriftOp(self.L, self.dy, self.p, power)


def drift_operator(dy: float, p: float, L, power: float = 1) -> np.ndarray:
    """R^power as a dense matrix with unit largest singular value."""
    return DriftOp(PauliString.parse(L), dy, p, power).matrix()


def byproduct(j, l) -> PauliString:
    """Pauli string with factor sigma_1^j sigma_3^l on each qubit (phase dropped)."""
    letters = {(0, 0): "I", (1, 0): "X", (0, 1): "Z", (1, 1): "Y"}
    return PauliString("".join(letters[(int(a), int(b))] for a, b in zip(j, l)))


def outcomes(m: int) -> list[tuple[tuple[int, ...], tuple[int, ...]]]:
    """All 4^m Bell outcome pairs (j, l) of bit vectors."""
    bits = list(product((0, 1), repeat=m))
    return [(j, l) for j in bits for l in bits]


def choose_p_star(L) -> PauliString:
    """Fixed single-factor string anticommuting with L.

    Placed on the first non-identity qubit of L, using Z there unless L
    already has Z (then X).
    """
    L = PauliString.parse(L)
    for u, c in enumerate(L.word):
        if c != "I":
            letter = "X" if c == "Z" else "Z"
            return PauliString("I" * u + letter + "I" * (L.m - u - 1))
    raise ValueError("L must not be the identity")


@dataclass(frozen=True)
class Classification:
    """Branch of a byproduct and the Pauli correction to apply.

    ``reduced`` is C = P_* Q for an anticommuting byproduct (it commutes
    with L) and the identity otherwise.
    """

    branch: str
    correction: PauliString
    reduced: PauliString
    p_star: PauliString


def classify_byproduct(Q, L, carrying: bool = False) -> Classification:
    """Good or bad branch of byproduct Q given whether a P_* defect is carried."""
    Q = PauliString.parse(Q)
    L = PauliString.parse(L)
    p_star = choose_p_star(L)
    commutes = Q.commutes_with(L)
    _, reduced = p_star.multiply(Q)
    if commutes:
        branch = BAD if carrying else GOOD
        return Classification(branch, Q, PauliString.identity(L.m), p_star)
    branch = GOOD if carrying else BAD
    return Classification(branch, reduced, reduced, p_star)


@dataclass
class TeleportOutcome:
    j: tuple[int, ...]
    l: tuple[int, ...]
    byproduct: PauliString
    branch: str
    post_state: np.ndarray
    probability: float


def outcome_probabilities(state, drift: DriftOp) -> tuple[list, np.ndarray]:
    """Born probabilities of all Bell outcomes for Kraus operators R^n Q.

    ||R^n Q psi||^2 = alpha2 + s_Q beta2 <L>, with R^(2n) = alpha2 I + beta2 L
    and s_Q = +1 if Q commutes with L else -1; the normalization is
    4^m alpha2.
    """
    psi = normalize(state)
    L = drift.L
    expect = float(np.real(np.vdot(psi, L.apply(psi))))
    alpha2, beta2 = drift.coefficients(2 * drift.power)
    outs = outcomes(L.m)
    signs = np.array([1.0 if byproduct(j, l).commutes_with(L) else -1.0 for j, l in outs])
    probs = (alpha2 + signs * beta2 * expect) / (4**L.m * alpha2)
    return outs, np.clip(probs, 0.0, None)


def teleport_round(state, drift: DriftOp, stream: NoiseStream, carrying: bool = False) -> TeleportOutcome:
    """Sample one Bell outcome and return the corrected, normalized post state."""
    outs, probs = outcome_probabilities(state, drift)
    u = stream.draw()
    idx = int(np.searchsorted(np.cumsum(probs), u * probs.sum(), side="right"))
    idx = min(idx, len(outs) - 1)
    j, l = outs[idx]
    Q = byproduct(j, l)
    cls = classify_byproduct(Q, drift.L, carrying)
    post = drift.apply(Q.apply(np.asarray(state, dtype=complex)))
    post = normalize(cls.correction.apply(post))
    return TeleportOutcome(j, l, Q, cls.branch, post, float(probs[idx]))


def worst_case_fail_prob(r: int, p: float, dy: float) -> float:
    """State-independent bound 0.5 (1 + |tanh(2^(r+1) sqrt(p) dy)|)."""
    if r < 0:
        raise ValueError("r must be non-negative")
    return 0.5 * (1 + abs(math.tanh(2.0 ** (r + 1) * math.sqrt(p) * dy)))


def consecutive_fail_bound(r: int, p: float, dy: float) -> float:
    """Bound on r consecutive failures: product of the per-attempt bounds."""
    return math.prod(worst_case_fail_prob(s, p, dy) for s in range(r))


def d_min(epsilon: float, p: float, dy: float) -> int:
    """Smallest d with d (1 - log2(1 + eta_d)) >= log2(1/epsilon), eta_d = |tanh(2^d sqrt(p) dy)|.

    Raises
    ------
    ValueError
        If epsilon is outside (0, 1) or no d up to 64 qualifies.
    """
    if not 0 < epsilon < 1:
        raise ValueError("epsilon must lie in (0, 1)")
    target = math.log2(1 / epsilon)
    for d in range(1, MAX_ATTEMPTS + 1):
        eta = abs(math.tanh(2.0**d * math.sqrt(p) * dy))
        if d * (1 - math.log2(1 + eta)) >= target - 1e-9:
            return d
    raise ValueError(f"no attempt budget up to {MAX_ATTEMPTS} reaches epsilon={epsilon}")


@dataclass(frozen=True)
class ResourceBudget:
    """Attempt budget and resource-state accounting.

    Attributes
    ----------
    epsilon : float
        Target failure probability.
    d : int
        Maximum number of attempts per drift application.
    delta : float
        Post-selection failure probability per resource state (< 1/2).
    m : int
        Qubits in the support of L; each resource copy uses m Bell pairs.
    """

    epsilon: float = 1e-3
    d: int = 10
    delta: float = 0.25
    m: int = 1

    def __post_init__(self):
        if self.d < 1:
            raise ValueError("d must be at least 1")
        if not 0 < self.delta < 0.5:
            raise ValueError("delta must lie in (0, 1/2)")

    @classmethod
    def from_requirements(cls, epsilon: float, p: float, dy: float, delta: float = 0.25, m: int = 1):
        return cls(epsilon, d_min(epsilon, p, dy), delta, m)

    @classmethod
    def unbounded(cls, m: int = 1) -> "ResourceBudget":
        return cls(epsilon=2.0**-MAX_ATTEMPTS, d=MAX_ATTEMPTS, m=m)

    @property
    def copies_per_attempt(self) -> int:
        """Resource copies prepared per attempt so post-selection fails with prob <= delta."""
        return math.ceil(math.log2(1 / self.delta))

    @property
    def n_bell_per_r(self) -> tuple[int, ...]:
        return tuple(self.m * self.copies_per_attempt for _ in range(self.d))

    def sufficient(self, p: float, dy: float) -> bool:
        """Whether (1/2)^d (1 + eta)^d <= epsilon with eta = |tanh(2^d sqrt(p) dy)|."""
        eta = abs(math.tanh(2.0**self.d * math.sqrt(p) * dy))
        return (0.5 * (1 + eta)) ** self.d <= self.epsilon

    def summary(self) -> dict:
        return {
            "epsilon": self.epsilon,
            "d": self.d,
            "delta": self.delta,
            "bell_pairs_per_attempt": self.m * self.copies_per_attempt,
            "bell_pairs_per_step_max": sum(self.n_bell_per_r),
        }


@dataclass
class DriftResult:
    state: np.ndarray
    attempts: int
    success: bool
    outcomes: list = field(default_factory=list)


def run_drift_application(state, dy: float, p: float, L, budget: ResourceBudget, stream: NoiseStream) -> DriftResult:
    """Repeat teleportation with doubling drift powers until a good outcome.

    On success the state is proportional to R state.  After ``budget.d``
    bad outcomes the erroneous state is returned with ``success=False``.
    """
    L = PauliString.parse(L)
    psi = normalize(state)
    history = []
    for r in range(budget.d):
        drift = DriftOp(L, dy, p, 2.0**r)
        out = teleport_round(psi, drift, stream, carrying=r > 0)
        history.append(out)
        psi = out.post_state
        if out.branch == GOOD:
            return DriftResult(psi, r + 1, True, history)
    return DriftResult(psi, budget.d, False, history)


@dataclass
class StepOutcome:
    state: np.ndarray
    attempts: int
    success: bool


def weak_measurement(state, cfg: ChannelConfig, dW: float) -> np.ndarray:
    """Normalized exp(-p dt + sqrt(p) P dW) state."""
    return normalize(apply_affine_pauli(-cfg.p * cfg.dt, np.sqrt(cfg.p) * dW, cfg.pauli, state))


def protocol_step(state, dW: float, dY: float, cfg: ChannelConfig, budget: ResourceBudget, stream: NoiseStream):
    """Weak measurement followed by teleported drift; dY = 0 skips teleportation."""
    if cfg.mode != DISSIPATIVE:
        raise ValueError("the teleportation protocol implements the dissipative drift")
    bar = weak_measurement(state, cfg, dW)
    if dY == 0:
        return StepOutcome(bar, 0, True)
    res = run_drift_application(bar, dY, cfg.p, cfg.pauli, budget, stream)
    return StepOutcome(res.state, res.attempts, res.success)


@dataclass
class ResourceLedger:
    """Aggregated attempt and failure statistics; merging is associative."""

    steps: int = 0
    teleported_steps: int = 0
    attempts: int = 0
    failures: int = 0
    bell_pairs: int = 0
    attempt_histogram: dict = field(default_factory=dict)

    def record(self, attempts: int, success: bool, bell_per_attempt: int):
        self.steps += 1
        if attempts:
            self.teleported_steps += 1
            self.attempt_histogram[attempts] = self.attempt_histogram.get(attempts, 0) + 1
        self.attempts += attempts
        self.failures += 0 if success else 1
        self.bell_pairs += attempts * bell_per_attempt

    def merge(self, other: "ResourceLedger") -> "ResourceLedger":
        hist = dict(self.attempt_histogram)
        for k, v in other.attempt_histogram.items():
            hist[k] = hist.get(k, 0) + v
        return ResourceLedger(
            self.steps + other.steps,
            self.teleported_steps + other.teleported_steps,
            self.attempts + other.attempts,
            self.failures + other.failures,
            self.bell_pairs + other.bell_pairs,
            hist,
        )

    def as_dict(self) -> dict:
        return {
            "steps": self.steps,
            "teleported_steps": self.teleported_steps,
            "attempts": self.attempts,
            "failures": self.failures,
            "bell_pairs": self.bell_pairs,
            "attempt_histogram": {str(k): v for k, v in sorted(self.attempt_histogram.items())},
        }


@dataclass
class TeleportRun:
    times: np.ndarray
    states: np.ndarray
    attempts: np.ndarray
    failed: bool
    failure_step: int | None
    ledger: ResourceLedger
    terminal_fidelity: float | None = None


def run_teleport_reverse(cfg: ChannelConfig, psi_T, W_T: float, budget: ResourceBudget, trajectory: int = 0, psi0=None):
    """Reverse run on [T, 2T] where every drift is applied by teleportation.

    Uses the same reverse noise streams as the engine's reverse run, so with
    all drifts successful the states agree with it step by step.
    """
    steps, dt = cfg.steps, cfg.dt
    psi = _broadcast_states(psi_T, 1)[0]
    bridge = reverse_bridge(cfg, float(W_T))
    noise = BatchNoise(cfg.seed, [trajectory], [REVERSE_CHANNEL])
    stream = NoiseStream(cfg.seed, trajectory, TELEPORT_CHANNEL, kind="uniform")
    ledger = ResourceLedger()
    bell = budget.m * budget.copies_per_attempt

    states = np.empty((steps + 1, psi.shape[0]), dtype=complex)
    attempts = np.zeros(steps, dtype=int)
    states[0] = psi
    failure = None
    for k in range(steps):
        dW = float(np.sqrt(dt) * noise.next()[0, 0])
        if cfg.reverse_record == "detector":
            dW += float(measurement_signal(psi, cfg.jump, cfg.p, dt))
        new = bridge_step(bridge, dW, dt)
        dY = float(np.real(new.x - bridge.x)) - dW
        bridge = new
        out = protocol_step(psi, dW, dY, cfg, budget, stream)
        psi = out.state
        attempts[k] = out.attempts
        ledger.record(out.attempts, out.success, bell)
        states[k + 1] = psi
        if not out.success:
            failure = k
            states = states[: k + 2]
            break
    terminal = None
    if psi0 is not None and failure is None:
        terminal = fidelity(states[-1], psi0)
    times = cfg.T + np.arange(states.shape[0]) * dt
    return TeleportRun(times, states, attempts, failure is not None, failure, ledger, terminal)
