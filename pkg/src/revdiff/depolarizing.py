"""Single-qubit depolarizing noise: forward trajectories, the second-order
Magnus solution, and the approximate reverse SDE.

The three channels L_k = sigma_k (dissipative) or i sigma_k (conserving)
share the strength p/3 each.  The forward solution is approximated by

    exp(-p t + sqrt(p/3) sigma.W - i (2p/3) sigma.S)        (dissipative)
    exp(i sqrt(p/3) sigma.W + i (2p/3) sigma.S)             (conserving)

with S = (S_23, S_31, S_12) the Lévy areas of the record.  The reverse
process drives three complex bridges X_k from the Magnus boundary values
down to zero and integrates the truncated reverse SDE in terms of dX_k.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .channel import TrajectoryResult, _as_batch, _broadcast_states
from .noise import (
    FORWARD_CHANNEL,
    REVERSE_CHANNEL,
    BatchNoise,
    BridgeState,
    MeasurementRecord,
    bridge_step,
    levy_increment,
    levy_vector,
)
from .pauli import (
    CONSERVING,
    DISSIPATIVE,
    MODES,
    apply_pauli_vector,
    bloch_vector,
    fidelity,
    pauli_vector_coefficients,
    renormalize,
)

_CHANNELS = (0, 1, 2)


@dataclass(frozen=True)
class DepolarizingConfig:
    """Parameters of a depolarizing experiment (single qubit).

    Attributes
    ----------
    p, T, dt, seed
        Noise strength, forward horizon, step and base seed.
    mode : {"dissipative", "conserving"}
    reverse_record : {"innovation", "detector"}
        Whether reverse increments carry the reverse state's own signal.
    """

    p: float = 0.1
    T: float = 1.0
    dt: float = 1e-3
    mode: str = DISSIPATIVE
    seed: int = 0
    reverse_record: str = "innovation"

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if not 0 <= self.p <= 1:
            raise ValueError("p must lie in [0, 1]")
        if self.dt <= 0 or self.T <= 0:
            raise ValueError("T and dt must be positive")
        n = self.T / self.dt
        if abs(n - round(n)) > 1e-9 * max(1.0, n):
            raise ValueError("T/dt must be an integer")
        if self.reverse_record not in ("innovation", "detector"):
            raise ValueError("reverse_record must be 'innovation' or 'detector'")

    @property
    def steps(self) -> int:
        return int(round(self.T / self.dt))

    @property
    def amplitude(self) -> float:
        return np.sqrt(self.p / 3)

    @property
    def gamma(self) -> complex:
        """Bridge diffusion coefficient: sqrt(p/3) - 2ip/3 or sqrt(p/3) + 2p/3."""
        if self.mode == DISSIPATIVE:
            return complex(self.amplitude, -2 * self.p / 3)
        return complex(self.amplitude + 2 * self.p / 3, 0.0)

    @property
    def in_accuracy_regime(self) -> bool:
        return self.p * self.T < 1


# ----------------------------------------------------------------- forward


def _signal(psi_hat: np.ndarray, cfg: DepolarizingConfig) -> np.ndarray:
    """sqrt(p/3) <L_k + L_k^dagger> dt for the three channels."""
    if cfg.mode == CONSERVING:
        return np.zeros(psi_hat.shape[:-1] + (3,))
    return 2 * cfg.amplitude * bloch_vector(psi_hat) * cfg.dt


def forward_depol_step(state, cfg: DepolarizingConfig, dW) -> np.ndarray:
    """Euler-Maruyama step psi - (p/2) dt psi + sum_k sqrt(p/3) L_k dW_k psi."""
    psi = np.asarray(state, dtype=complex)
    v = cfg.amplitude * np.asarray(dW, dtype=float)
    if cfg.mode == CONSERVING:
        v = 1j * v
    return (1 - 0.5 * cfg.p * cfg.dt) * psi + apply_pauli_vector(0.0, v, psi)


def run_depol_forward(cfg: DepolarizingConfig, psi0, trajectories=0) -> TrajectoryResult:
    """Monitored forward run on [0, T] with online Lévy-area accumulation."""
    traj, single = _as_batch(trajectories)
    n, steps, dt = len(traj), cfg.steps, cfg.dt
    psi = _broadcast_states(psi0, n)
    start = psi.copy()
    log = np.zeros(n)
    noise = BatchNoise(cfg.seed, traj, [FORWARD_CHANNEL + k for k in _CHANNELS])

    states = np.empty((n, steps + 1, 2), dtype=complex)
    log_norm = np.zeros((n, steps + 1))
    incs = np.empty((n, steps, 3))
    W = np.zeros((n, 3))
    S = np.zeros((n, 3, 3))
    states[:, 0] = psi
    for k in range(steps):
        psi_hat = psi / np.linalg.norm(psi, axis=-1, keepdims=True)
        dW = _signal(psi_hat, cfg) + np.sqrt(dt) * noise.next()
        psi = forward_depol_step(psi, cfg, dW)
        psi, log = renormalize(psi, log)
        S += levy_increment(W, dW)
        W += dW
        nrm = np.linalg.norm(psi, axis=-1)
        states[:, k + 1] = psi / nrm[:, None]
        log_norm[:, k + 1] = log + np.log(nrm)
        incs[:, k] = dW

    result = TrajectoryResult(
        times=np.arange(steps + 1) * dt,
        states=states,
        log_norm=log_norm,
        record=MeasurementRecord(dt, incs, S),
        terminal_fidelity=fidelity(states[:, -1], start),
        trajectories=traj,
        extras={"W": W},
    )
    if single:
        result.states, result.log_norm = states[0], log_norm[0]
        result.record = MeasurementRecord(dt, incs[0], S[0])
        result.terminal_fidelity = float(result.terminal_fidelity[0])
        result.extras = {"W": W[0]}
    return result


def magnus2_exponent(W, S_vec, cfg: DepolarizingConfig, t: float):
    """Scalar and vector parts (c0, c) of the Magnus-2 exponent."""
    W = np.asarray(W, dtype=float)
    S_vec = np.asarray(S_vec, dtype=float)
    a, q = cfg.amplitude, 2 * cfg.p / 3
    if cfg.mode == DISSIPATIVE:
        return -cfg.p * t, a * W - 1j * q * S_vec
    return 0.0, 1j * (a * W + q * S_vec)


def magnus2_operator(W, S_vec, cfg: DepolarizingConfig, t: float):
    """Coefficients (alpha, beta) of F2(t) = alpha I + beta.sigma."""
    c0, c = magnus2_exponent(W, S_vec, cfg, t)
    return pauli_vector_coefficients(c0, c)


def magnus2_solution(psi0, record: MeasurementRecord, cfg: DepolarizingConfig, t: float | None = None):
    """F2(t) psi0 with W(t), S(t) read from the record (whole record by default)."""
    if t is None:
        t = record.steps * record.dt
    alpha, beta = magnus2_operator(record.W, record.levy_vector, cfg, t)
    return apply_pauli_vector(alpha, beta, np.asarray(psi0, dtype=complex))


# ----------------------------------------------------------------- reverse


@dataclass(frozen=True)
class ReverseDriftState:
    """Three complex bridges X_k and their starting values X_k(T)."""

    bridges: BridgeState
    x_T: np.ndarray
    gamma: complex

    @property
    def x(self) -> np.ndarray:
        return self.bridges.x

    @property
    def offset(self) -> np.ndarray:
        """X_k(t) - X_k(T)."""
        return self.bridges.x - self.x_T


def boundary_values(W, S_vec, cfg: DepolarizingConfig) -> np.ndarray:
    """X_k(T) matching the Magnus-2 exponent: sqrt(p/3) W - i(2p/3) S or sqrt(p/3) W + (2p/3) S."""
    W = np.asarray(W, dtype=float)
    S_vec = np.asarray(S_vec, dtype=float)
    q = 2 * cfg.p / 3
    if cfg.mode == DISSIPATIVE:
        return cfg.amplitude * W - 1j * q * S_vec
    return (cfg.amplitude * W + q * S_vec).astype(complex)


def reverse_drift_init(record_T: MeasurementRecord, cfg: DepolarizingConfig) -> ReverseDriftState:
    """Bridges on [T, 2T] started at the boundary values and pinned at zero."""
    x_T = boundary_values(record_T.W, record_T.levy_vector, cfg)
    bridges = BridgeState(x=x_T.copy(), t=cfg.T, t_end=2 * cfg.T, x_end=0.0, gamma=cfg.gamma)
    return ReverseDriftState(bridges, x_T, cfg.gamma)


def reverse_generator(offset: np.ndarray, dX: np.ndarray, cfg: DepolarizingConfig):
    """Scalar drift D and noise vector v with D dt + sum_k H_k dX_k = D dt + v.sigma.

    The commutator sums reduce through the Levi-Civita table to cross
    products of the bridge offset c = X - X(T) with dX.
    """
    c = offset
    sq = np.sum(c * c, axis=-1)
    cross = np.cross(c, dX)
    g = cfg.gamma
    if cfg.mode == DISSIPATIVE:
        D = -cfg.p + 0.5 * g * g * (3 - 2 * sq)
        v = dX + 1j * cross
    else:
        D = -0.5 * g * g * (3 + 2 * sq)
        v = 1j * (dX - cross)
    return D, v


def reverse_depol_step(state, cfg: DepolarizingConfig, drift: ReverseDriftState, dW):
    """One reverse step driven by the bridge increments dX_k."""
    new = bridge_step(drift.bridges, np.asarray(dW, dtype=float), cfg.dt)
    dX = new.x - drift.bridges.x
    D, v = reverse_generator(drift.offset, dX, cfg)
    psi = np.asarray(state, dtype=complex)
    out = psi + (D * cfg.dt)[..., None] * psi + apply_pauli_vector(0.0, v, psi)
    return out, replace(drift, bridges=new)


def reverse_depol_oracle(psi0, record_T: MeasurementRecord, X_t, cfg: DepolarizingConfig, t: float):
    """R2(t) F2(T) psi0 with R2(t) = exp(-p (t - T) + sigma.(X(t) - X(T))) (dissipative)
    or exp(i sigma.(X(t) - X(T))) (conserving)."""
    x_T = boundary_values(record_T.W, record_T.levy_vector, cfg)
    offset = np.asarray(X_t, dtype=complex) - x_T
    if cfg.mode == DISSIPATIVE:
        alpha, beta = pauli_vector_coefficients(-cfg.p * (t - cfg.T), offset)
    else:
        alpha, beta = pauli_vector_coefficients(0.0, 1j * offset)
    fwd = magnus2_solution(psi0, record_T, cfg, cfg.T)
    return apply_pauli_vector(alpha, beta, fwd)


def run_depol_reverse(cfg: DepolarizingConfig, psi_T, record_T: MeasurementRecord, trajectories=0, psi0=None):
    """Reverse run on [T, 2T] from phi(T) = psi_T with bridges set by the forward record."""
    traj, single = _as_batch(trajectories)
    n, steps, dt = len(traj), cfg.steps, cfg.dt
    if single:
        record_T = MeasurementRecord(record_T.dt, record_T.increments[None], record_T.levy[None])
    psi = _broadcast_states(psi_T, n)
    log = np.zeros(n)
    drift = reverse_drift_init(record_T, cfg)
    noise = BatchNoise(cfg.seed, traj, [REVERSE_CHANNEL + k for k in _CHANNELS])

    states = np.empty((n, steps + 1, 2), dtype=complex)
    log_norm = np.zeros((n, steps + 1))
    xs = np.empty((n, steps + 1, 3), dtype=complex)
    incs = np.empty((n, steps, 3))
    states[:, 0] = psi
    xs[:, 0] = drift.x
    for k in range(steps):
        dW = np.sqrt(dt) * noise.next()
        if cfg.reverse_record == "detector":
            dW = dW + _signal(psi / np.linalg.norm(psi, axis=-1, keepdims=True), cfg)
        psi, drift = reverse_depol_step(psi, cfg, drift, dW)
        psi, log = renormalize(psi, log)
        nrm = np.linalg.norm(psi, axis=-1)
        states[:, k + 1] = psi / nrm[:, None]
        log_norm[:, k + 1] = log + np.log(nrm)
        xs[:, k + 1] = drift.x
        incs[:, k] = dW

    terminal = None
    if psi0 is not None:
        terminal = fidelity(states[:, -1], _broadcast_states(psi0, n))
    result = TrajectoryResult(
        times=cfg.T + np.arange(steps + 1) * dt,
        states=states,
        log_norm=log_norm,
        record=MeasurementRecord(dt, incs, np.zeros((n, 3, 3))),
        terminal_fidelity=terminal,
        bridge=xs,
        trajectories=traj,
        extras={"x_T": drift.x_T},
    )
    if single:
        result.states, result.log_norm, result.bridge = states[0], log_norm[0], xs[0]
        result.record = MeasurementRecord(dt, incs[0], np.zeros((3, 3)))
        result.terminal_fidelity = None if terminal is None else float(terminal[0])
        result.extras = {"x_T": drift.x_T[0]}
    return result


@dataclass
class DepolCycle:
    forward: TrajectoryResult
    reverse: TrajectoryResult

    @property
    def terminal_fidelity(self):
        return self.reverse.terminal_fidelity

    @property
    def deficit(self):
        """1 - F(phi_hat(2T), psi0), reported alongside the fidelity."""
        return 1 - np.asarray(self.reverse.terminal_fidelity)


def run_depol_cycle(cfg: DepolarizingConfig, psi0, trajectories=0) -> DepolCycle:
    fwd = run_depol_forward(cfg, psi0, trajectories)
    rev = run_depol_reverse(cfg, fwd.terminal, fwd.record, trajectories, psi0=psi0)
    return DepolCycle(fwd, rev)


def levy_areas(record: MeasurementRecord) -> np.ndarray:
    """(S_23, S_31, S_12) of a three-channel record."""
    return levy_vector(record.levy)


def magnus_error_study(cfg: DepolarizingConfig, times, psi0, trajectories) -> np.ndarray:
    """RMS distance between Magnus-2 states and an Euler-Maruyama reference.

    Integrates the forward SDE at ``cfg.dt`` and, at each time in ``times``,
    compares the unnormalized reference state with F2(t) psi0 built from the
    same record.  Only snapshots are kept, so very fine grids stay cheap.
    """
    traj, _ = _as_batch(trajectories)
    n, dt = len(traj), cfg.dt
    marks = {int(round(t / dt)): i for i, t in enumerate(times)}
    psi = _broadcast_states(psi0, n)
    start = psi.copy()
    log = np.zeros(n)
    W = np.zeros((n, 3))
    S = np.zeros((n, 3, 3))
    noise = BatchNoise(cfg.seed, traj, [FORWARD_CHANNEL + k for k in _CHANNELS])
    errors = np.empty(len(times))
    for k in range(1, max(marks) + 1):
        psi_hat = psi / np.linalg.norm(psi, axis=-1, keepdims=True)
        dW = _signal(psi_hat, cfg) + np.sqrt(dt) * noise.next()
        psi = forward_depol_step(psi, cfg, dW)
        psi, log = renormalize(psi, log)
        S += levy_increment(W, dW)
        W += dW
        if k in marks:
            alpha, beta = magnus2_operator(W, levy_vector(S), cfg, k * dt)
            m2 = apply_pauli_vector(alpha, beta, start)
            ref = psi * np.exp(log)[:, None]
            errors[marks[k]] = np.sqrt(np.mean(np.sum(np.abs(ref - m2) ** 2, axis=-1)))
    return errors
