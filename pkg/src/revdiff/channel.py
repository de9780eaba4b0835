"""Forward and reverse trajectories of a single Pauli noise channel.

The forward process is the diffusive unravelling

    d|psi> = (-p/2 dt + sqrt(p) L dW) |psi>,   L = P or iP,

and the reverse process replaces the drift by a Brownian-bridge feedback
term driven by an auxiliary process X(t) with X(T) = W(T) and X(2T) = 0:

    d|phi> = (-p/2 dt + sqrt(p) L dX) |phi>,   dX = -X/(2T - t) dt + dW.

Because every generator along a path is a function of the single operator
P, both processes have closed-form solutions, and an exact stepper that
multiplies the per-step exponentials reproduces them up to rounding.  All
engines are vectorized over a leading trajectory axis.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .noise import (
    FORWARD_CHANNEL,
    REVERSE_CHANNEL,
    BatchNoise,
    BridgeState,
    MeasurementRecord,
    bridge_step,
    measurement_signal,
)
from .pauli import (
    DISSIPATIVE,
    MODES,
    JumpOperator,
    PauliString,
    apply_affine_pauli,
    exp_affine_pauli,
    fidelity,
    normalize,
    normalize_density,
    renormalize,
)

STEPPERS = ("exact", "em")
RECORDS = ("innovation", "detector")


@dataclass(frozen=True)
class ChannelConfig:
    """Parameters of one Pauli channel experiment.

    Attributes
    ----------
    pauli : PauliString or str
        The noise operator P.
    mode : {"dissipative", "conserving"}
        Jump operator L = P or L = iP.
    p : float
        Noise strength in [0, 1].
    T : float
        Forward horizon; the reverse process runs on [T, 2T].
    dt : float
        Step; T/dt must be an integer.
    seed : int
        Base seed of all noise streams.
    stepper : {"exact", "em"}
        Per-step closed-form exponentials or Euler-Maruyama.
    reverse_record : {"innovation", "detector"}
        Whether reverse increments carry the reverse state's own signal.
    """

    pauli: PauliString | str = "X"
    mode: str = DISSIPATIVE
    p: float = 0.2
    T: float = 1.0
    dt: float = 1e-3
    seed: int = 0
    stepper: str = "exact"
    reverse_record: str = "innovation"

    def __post_init__(self):
        object.__setattr__(self, "pauli", PauliString.parse(self.pauli))
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if not 0 <= self.p <= 1:
            raise ValueError("p must lie in [0, 1]")
        if self.dt <= 0 or self.T <= 0:
            raise ValueError("T and dt must be positive")
        n = self.T / self.dt
        if abs(n - round(n)) > 1e-9 * max(1.0, n):
            raise ValueError("T/dt must be an integer")
        if self.stepper not in STEPPERS:
            raise ValueError(f"stepper must be one of {STEPPERS}")
        if self.reverse_record not in RECORDS:
            raise ValueError(f"reverse_record must be one of {RECORDS}")

    @property
    def steps(self) -> int:
        return int(round(self.T / self.dt))

    @property
    def jump(self) -> JumpOperator:
        return JumpOperator(self.pauli, self.mode)

    @property
    def drift_rate(self) -> float:
        """Scalar c with F(t) = exp(c t + sqrt(p) L W): c = -p(1 + s)/2 where L^2 = s I."""
        return -0.5 * self.p * (1.0 + self.jump.square_sign)


@dataclass
class TrajectoryResult:
    """Sampled path of one or many trajectories.

    ``states`` holds normalized amplitudes of shape ``(..., len(times), dim)``
    and ``log_norm`` the log of the unnormalized norm at each sample.
    """

    times: np.ndarray
    states: np.ndarray
    log_norm: np.ndarray
    record: MeasurementRecord
    terminal_fidelity: float | np.ndarray | None = None
    bridge: np.ndarray | None = None
    trajectories: np.ndarray | None = None
    extras: dict = field(default_factory=dict)

    @property
    def terminal(self) -> np.ndarray:
        return self.states[..., -1, :]

    def fidelity_to(self, psi0) -> np.ndarray:
        """fidelity(state(t), psi0) for every sample time."""
        psi0 = np.asarray(psi0, dtype=complex)
        if psi0.ndim == 2:
            psi0 = psi0[:, None, :]
        return fidelity(self.states, np.broadcast_to(psi0, self.states.shape))


def _as_batch(trajectories):
    single = np.ndim(trajectories) == 0
    return np.atleast_1d(np.asarray(trajectories, dtype=np.int64)), single


def _broadcast_states(psi, n: int) -> np.ndarray:
    psi = normalize(np.asarray(psi, dtype=complex))
    if psi.ndim == 1:
        psi = np.broadcast_to(psi, (n, psi.shape[0]))
    if psi.shape[0] != n:
        raise ValueError("initial states do not match the trajectory batch")
    return np.array(psi)


def _squeeze(result: TrajectoryResult, single: bool) -> TrajectoryResult:
    if not single:
        return result
    rec = result.record
    return TrajectoryResult(
        times=result.times,
        states=result.states[0],
        log_norm=result.log_norm[0],
        record=MeasurementRecord(rec.dt, rec.increments[0], rec.levy[0]),
        terminal_fidelity=None if result.terminal_fidelity is None else float(result.terminal_fidelity[0]),
        bridge=None if result.bridge is None else result.bridge[0],
        trajectories=result.trajectories,
        extras={k: (v[0] if isinstance(v, np.ndarray) and v.ndim else v) for k, v in result.extras.items()},
    )


# ----------------------------------------------------------------- forward


def forward_step_em(state, cfg: ChannelConfig, dW) -> np.ndarray:
    """Euler-Maruyama step psi + (-p/2 dt) psi + sqrt(p) L dW psi."""
    psi = np.asarray(state, dtype=complex)
    dW = np.asarray(dW, dtype=float)[..., None]
    return psi * (1.0 - 0.5 * cfg.p * cfg.dt) + np.sqrt(cfg.p) * dW * cfg.jump.apply(psi)


def forward_step_exact(state, cfg: ChannelConfig, dW) -> np.ndarray:
    """Apply the closed-form one-step propagator exp(c dt + sqrt(p) L dW)."""
    L = cfg.jump
    b = np.sqrt(cfg.p) * L.phase * np.asarray(dW, dtype=float)
    return apply_affine_pauli(cfg.drift_rate * cfg.dt, b, L.pauli, np.asarray(state, dtype=complex))


def forward_operator(cfg: ChannelConfig, W_t, t: float) -> np.ndarray:
    """F(t) = exp(c t + sqrt(p) L W(t)) as a dense (batch of) matrix."""
    L = cfg.jump
    return exp_affine_pauli(cfg.drift_rate * t, np.sqrt(cfg.p) * L.phase * np.asarray(W_t, dtype=float), L.pauli)


def forward_exact(psi0, cfg: ChannelConfig, W_t, t: float) -> np.ndarray:
    """Closed-form forward solution F(t) psi0 (unnormalized)."""
    L = cfg.jump
    b = np.sqrt(cfg.p) * L.phase * np.asarray(W_t, dtype=float)
    return apply_affine_pauli(cfg.drift_rate * t, b, L.pauli, np.asarray(psi0, dtype=complex))


def run_forward(cfg: ChannelConfig, psi0, trajectories=0) -> TrajectoryResult:
    """Simulate the monitored forward process on [0, T].

    Parameters
    ----------
    cfg : ChannelConfig
    psi0 : array_like
        Initial state, shape (dim,) or (n, dim) for per-trajectory states.
    trajectories : int or sequence of int
        Trajectory indices; each selects an independent noise stream.
    """
    traj, single = _as_batch(trajectories)
    n, steps, dt = len(traj), cfg.steps, cfg.dt
    L = cfg.jump
    psi = _broadcast_states(psi0, n)
    start = psi.copy()
    log = np.zeros(n)
    step = forward_step_exact if cfg.stepper == "exact" else forward_step_em
    noise = BatchNoise(cfg.seed, traj, [FORWARD_CHANNEL])

    states = np.empty((n, steps + 1, psi.shape[1]), dtype=complex)
    log_norm = np.zeros((n, steps + 1))
    incs = np.empty((n, steps, 1))
    states[:, 0] = psi
    for k in range(steps):
        dW = measurement_signal(psi, L, cfg.p, dt) + np.sqrt(dt) * noise.next()[:, 0]
        psi = step(psi, cfg, dW)
        psi, log = renormalize(psi, log)
        nrm = np.linalg.norm(psi, axis=-1)
        states[:, k + 1] = psi / nrm[:, None]
        log_norm[:, k + 1] = log + np.log(nrm)
        incs[:, k, 0] = dW

    record = MeasurementRecord(dt, incs, np.zeros((n, 1, 1)))
    result = TrajectoryResult(
        times=np.arange(steps + 1) * dt,
        states=states,
        log_norm=log_norm,
        record=record,
        terminal_fidelity=fidelity(states[:, -1], start),
        trajectories=traj,
    )
    return _squeeze(result, single)


# ----------------------------------------------------------------- reverse


def reverse_bridge(cfg: ChannelConfig, W_T) -> BridgeState:
    """Bridge X on [T, 2T] started at X(T) = W(T) and pinned at zero."""
    return BridgeState(x=np.asarray(W_T, dtype=complex), t=cfg.T, t_end=2 * cfg.T, x_end=0.0, gamma=1.0)


def _bridge_delta(bridge: BridgeState, dW, dt: float):
    new = bridge_step(bridge, dW, dt)
    return new, np.real(new.x - bridge.x)


def reverse_step_em(state, cfg: ChannelConfig, bridge: BridgeState, dW):
    """Euler-Maruyama reverse step.

    The drift -X/(2T - t) sqrt(p) L dt and the noise sqrt(p) L dW combine
    into sqrt(p) L dX with dX from the bridge recursion, which also handles
    the pinned final step.
    """
    new, dX = _bridge_delta(bridge, dW, cfg.dt)
    psi = np.asarray(state, dtype=complex)
    out = psi * (1.0 - 0.5 * cfg.p * cfg.dt) + np.sqrt(cfg.p) * dX[..., None] * cfg.jump.apply(psi)
    return out, new


def reverse_step_exact(state, cfg: ChannelConfig, bridge: BridgeState, dW):
    """Exact reverse step exp(c dt + sqrt(p) L dX) applied to the state."""
    new, dX = _bridge_delta(bridge, dW, cfg.dt)
    L = cfg.jump
    out = apply_affine_pauli(cfg.drift_rate * cfg.dt, np.sqrt(cfg.p) * L.phase * dX, L.pauli, state)
    return out, new


def reverse_operator(cfg: ChannelConfig, X_t, W_t) -> np.ndarray:
    """R(t) = exp(sqrt(p) L (X(t) - W(t)))."""
    L = cfg.jump
    b = np.sqrt(cfg.p) * L.phase * (np.asarray(X_t, dtype=float) - np.asarray(W_t, dtype=float))
    return exp_affine_pauli(0.0, b, L.pauli)


def reverse_exact(psi0, cfg: ChannelConfig, X_t, W_t, t: float) -> np.ndarray:
    """Closed-form reverse solution R(t) F(t) psi0 (unnormalized)."""
    L = cfg.jump
    fwd = forward_exact(psi0, cfg, W_t, t)
    b = np.sqrt(cfg.p) * L.phase * (np.asarray(X_t, dtype=float) - np.asarray(W_t, dtype=float))
    return apply_affine_pauli(0.0, b, L.pauli, fwd)


def _reverse_increment(psi, cfg: ChannelConfig, innovation):
    if cfg.reverse_record == "detector":
        return measurement_signal(psi, cfg.jump, cfg.p, cfg.dt) + innovation
    return innovation


def run_reverse(cfg: ChannelConfig, psi_T, W_T, trajectories=0, psi0=None) -> TrajectoryResult:
    """Simulate the reverse process on [T, 2T] from phi(T) = psi_T, X(T) = W_T.

    ``psi0`` is used only to score the terminal fidelity; the dynamics never
    see it.
    """
    traj, single = _as_batch(trajectories)
    n, steps, dt = len(traj), cfg.steps, cfg.dt
    psi = _broadcast_states(psi_T, n)
    log = np.zeros(n)
    bridge = reverse_bridge(cfg, np.broadcast_to(np.asarray(W_T, dtype=float), (n,)))
    step = reverse_step_exact if cfg.stepper == "exact" else reverse_step_em
    noise = BatchNoise(cfg.seed, traj, [REVERSE_CHANNEL])

    states = np.empty((n, steps + 1, psi.shape[1]), dtype=complex)
    log_norm = np.zeros((n, steps + 1))
    xs = np.empty((n, steps + 1))
    incs = np.empty((n, steps, 1))
    states[:, 0] = psi
    xs[:, 0] = bridge.x.real
    for k in range(steps):
        dW = _reverse_increment(psi, cfg, np.sqrt(dt) * noise.next()[:, 0])
        psi, bridge = step(psi, cfg, bridge, dW)
        psi, log = renormalize(psi, log)
        nrm = np.linalg.norm(psi, axis=-1)
        states[:, k + 1] = psi / nrm[:, None]
        log_norm[:, k + 1] = log + np.log(nrm)
        xs[:, k + 1] = np.real(bridge.x)
        incs[:, k, 0] = dW

    terminal = None
    if psi0 is not None:
        terminal = fidelity(states[:, -1], _broadcast_states(psi0, n))
    result = TrajectoryResult(
        times=cfg.T + np.arange(steps + 1) * dt,
        states=states,
        log_norm=log_norm,
        record=MeasurementRecord(dt, incs, np.zeros((n, 1, 1))),
        terminal_fidelity=terminal,
        bridge=xs,
        trajectories=traj,
    )
    return _squeeze(result, single)


@dataclass
class CycleResult:
    """A forward run on [0, T] followed by the reverse run on [T, 2T]."""

    forward: TrajectoryResult
    reverse: TrajectoryResult

    @property
    def times(self) -> np.ndarray:
        return np.concatenate([self.forward.times, self.reverse.times[1:]])

    def fidelity_to(self, psi0) -> np.ndarray:
        f = self.forward.fidelity_to(psi0)
        r = self.reverse.fidelity_to(psi0)
        return np.concatenate([f, r[..., 1:]], axis=-1)

    @property
    def terminal_fidelity(self):
        return self.reverse.terminal_fidelity


def run_cycle(cfg: ChannelConfig, psi0, trajectories=0) -> CycleResult:
    """Forward run, then the reverse run seeded with psi_hat(T) and X(T) = W(T)."""
    fwd = run_forward(cfg, psi0, trajectories)
    W_T = fwd.record.W[..., 0]
    rev = run_reverse(cfg, fwd.terminal, W_T, trajectories, psi0=psi0)
    return CycleResult(fwd, rev)


# --------------------------------------------------------------------- SME


def _dagger(a):
    return np.conj(np.swapaxes(a, -1, -2))


def _anticommutator_term(rho, L: JumpOperator):
    """{L, rho} = L rho + rho L^dagger."""
    Lm = L.matrix()
    return Lm @ rho + rho @ _dagger(Lm)


def _lindblad(rho, L: JumpOperator, p: float):
    """p (L rho L^dagger - rho)."""
    Lm = L.matrix()
    return p * (Lm @ rho @ _dagger(Lm) - rho)


def sme_reverse_step(rho, cfg: ChannelConfig, bridge: BridgeState, dW):
    """Euler step of the linear reverse SME.

    rho + p (L rho L^dagger - rho) dt + sqrt(p) {L, rho} dX, where
    dX = -X/(2T - t) dt + dW reproduces the feedback drift term and the
    record noise, and is pinned on the final step.
    """
    new, dX = _bridge_delta(bridge, dW, cfg.dt)
    rho = np.asarray(rho, dtype=complex)
    L = cfg.jump
    noise = np.sqrt(cfg.p) * dX[..., None, None] * _anticommutator_term(rho, L)
    return rho + _lindblad(rho, L, cfg.p) * cfg.dt + noise, new


def sme_reverse_step_exact(rho, cfg: ChannelConfig, bridge: BridgeState, dW):
    """Exact step rho -> e^{2 c dt} E rho E^dagger with E = exp(sqrt(p) L dX).

    The Lindbladian and the anticommutator map commute, and the Lindbladian
    minus half the squared anticommutator map is the scalar 2c, so the SME
    propagator over one step factorizes into this sandwich.
    """
    new, dX = _bridge_delta(bridge, dW, cfg.dt)
    L = cfg.jump
    E = exp_affine_pauli(0.0, np.sqrt(cfg.p) * L.phase * dX, L.pauli)
    rho = np.asarray(rho, dtype=complex)
    return np.exp(2 * cfg.drift_rate * cfg.dt) * (E @ rho @ _dagger(E)), new


def run_sme_reverse(cfg: ChannelConfig, rho_T, W_T, trajectories=0, stepper: str | None = None) -> TrajectoryResult:
    """Reverse SME on [T, 2T], sharing noise streams with :func:`run_reverse`.

    ``states`` holds trace-normalized density matrices of shape
    ``(..., steps + 1, dim, dim)``.
    """
    traj, single = _as_batch(trajectories)
    n, steps, dt = len(traj), cfg.steps, cfg.dt
    stepper = stepper or cfg.stepper
    step = sme_reverse_step_exact if stepper == "exact" else sme_reverse_step
    rho = np.array(np.broadcast_to(np.asarray(rho_T, dtype=complex), (n,) + np.shape(rho_T)[-2:]))
    rho = normalize_density(rho)
    bridge = reverse_bridge(cfg, np.broadcast_to(np.asarray(W_T, dtype=float), (n,)))
    noise = BatchNoise(cfg.seed, traj, [REVERSE_CHANNEL])
    L = cfg.jump

    dim = rho.shape[-1]
    states = np.empty((n, steps + 1, dim, dim), dtype=complex)
    log_tr = np.zeros((n, steps + 1))
    incs = np.empty((n, steps, 1))
    log = np.zeros(n)
    states[:, 0] = rho
    for k in range(steps):
        innovation = np.sqrt(dt) * noise.next()[:, 0]
        if cfg.reverse_record == "detector" and L.hermitian:
            tr = np.real(np.trace(rho, axis1=-2, axis2=-1))
            expect = 2 * np.real(np.trace(L.pauli.matrix() @ rho, axis1=-2, axis2=-1)) / tr
            dW = np.sqrt(cfg.p) * expect * dt + innovation
        else:
            dW = innovation
        rho, bridge = step(rho, cfg, bridge, dW)
        tr = np.real(np.trace(rho, axis1=-2, axis2=-1))
        rho = rho / tr[:, None, None]
        log = log + np.log(tr)
        states[:, k + 1] = rho
        log_tr[:, k + 1] = log
        incs[:, k, 0] = dW

    result = TrajectoryResult(
        times=cfg.T + np.arange(steps + 1) * dt,
        states=states,
        log_norm=log_tr,
        record=MeasurementRecord(dt, incs, np.zeros((n, 1, 1))),
        trajectories=traj,
    )
    if single:
        result.states = result.states[0]
        result.log_norm = result.log_norm[0]
        result.record = MeasurementRecord(dt, incs[0], np.zeros((1, 1)))
    return result
