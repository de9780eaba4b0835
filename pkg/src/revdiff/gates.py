"""Diffusion-driven Pauli rotations G(theta) = exp(-i theta P).

A conserving noise channel with jump operator iP is steered by a bridge
X(t) on [T, 2T] with X(T) = 0 and X(2T) = -theta/sqrt(p).  The shifted
process Y = theta/sqrt(p) + X is an ordinary bridge to zero, so the gate
SDE is the conserving reverse SDE with X replaced by Y, and the terminal
state is G(theta) psi0 on every path.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .channel import TrajectoryResult, _as_batch, _broadcast_states
from .noise import REVERSE_CHANNEL, THETA_CHANNEL, BatchNoise, BridgeState, MeasurementRecord, bridge_step, noise_block
from .pauli import PauliString, apply_affine_pauli, fidelity, renormalize


@dataclass(frozen=True)
class ThetaSampler:
    """Distribution of the rotation angle: a point mass or a uniform interval."""

    kind: str = "uniform"
    low: float = 0.0
    high: float = np.pi

    def __post_init__(self):
        if self.kind not in ("point", "uniform"):
            raise ValueError("kind must be 'point' or 'uniform'")
        if self.kind == "uniform" and not self.high > self.low:
            raise ValueError("uniform sampler needs high > low")

    @classmethod
    def point(cls, theta: float) -> "ThetaSampler":
        return cls("point", theta, theta)

    def transform(self, u) -> np.ndarray:
        """Map uniform draws u in [0, 1) to angles."""
        u = np.asarray(u, dtype=float)
        if self.kind == "point":
            return np.full_like(u, self.low)
        return self.low + (self.high - self.low) * u

    def sample(self, seed: int, trajectories) -> np.ndarray:
        """One angle per trajectory from its dedicated uniform stream."""
        traj = np.atleast_1d(np.asarray(trajectories, dtype=np.int64))
        u = np.array([noise_block(seed, t, THETA_CHANNEL, 0, "uniform")[0] for t in traj])
        return self.transform(u)


@dataclass(frozen=True)
class GateConfig:
    """Parameters of a gate-synthesis run.

    Attributes
    ----------
    theta : float
        Rotation angle in radians; ignored per run when a sampler is given.
    pauli : PauliString or str
        Generator P (any word; P^2 = I).
    p : float
        Noise strength, must be positive.
    T, dt, seed
        The gate acts over [T, 2T]; T/dt must be an integer.
    stepper : {"exact", "em"}
    theta_sampler : ThetaSampler, optional
    """

    theta: float = np.pi / 2
    pauli: PauliString | str = "X"
    p: float = 0.2
    T: float = 1.0
    dt: float = 1e-3
    seed: int = 0
    stepper: str = "exact"
    theta_sampler: ThetaSampler | None = None

    def __post_init__(self):
        object.__setattr__(self, "pauli", PauliString.parse(self.pauli))
        if not 0 < self.p <= 1:
            raise ValueError("gate synthesis needs 0 < p <= 1")
        if self.dt <= 0 or self.T <= 0:
            raise ValueError("T and dt must be positive")
        n = self.T / self.dt
        if abs(n - round(n)) > 1e-9 * max(1.0, n):
            raise ValueError("T/dt must be an integer")
        if self.stepper not in ("exact", "em"):
            raise ValueError("stepper must be 'exact' or 'em'")

    @property
    def steps(self) -> int:
        return int(round(self.T / self.dt))


def gate_target(theta, pauli, psi0) -> np.ndarray:
    """G(theta) psi0 = cos(theta) psi0 - i sin(theta) P psi0."""
    return apply_affine_pauli(0.0, -1j * np.asarray(theta, dtype=float), PauliString.parse(pauli), psi0)


def gate_bridge(cfg: GateConfig, theta) -> BridgeState:
    """X on [T, 2T] from 0, pinned at -theta/sqrt(p)."""
    theta = np.asarray(theta, dtype=float)
    return BridgeState(
        x=np.zeros(theta.shape, dtype=complex), t=cfg.T, t_end=2 * cfg.T, x_end=-theta / np.sqrt(cfg.p), gamma=1.0
    )


def hamiltonian_strength(cfg: GateConfig, bridge: BridgeState):
    """|H| = sqrt(p) |theta/sqrt(p) + X| / (2T - t) at the bridge's current time."""
    y = np.real(bridge.x - bridge.x_end)
    return np.sqrt(cfg.p) * np.abs(y) / (bridge.t_end - bridge.t)


def gate_step_exact(state, cfg: GateConfig, bridge: BridgeState, dW):
    """psi -> exp(i sqrt(p) P dX) psi with dX from the shifted bridge."""
    new = bridge_step(bridge, dW, cfg.dt)
    dX = np.real(new.x - bridge.x)
    return apply_affine_pauli(0.0, 1j * np.sqrt(cfg.p) * dX, cfg.pauli, state), new


def gate_step_em(state, cfg: GateConfig, bridge: BridgeState, dW):
    """Euler-Maruyama: psi + (-p/2 dt - i sqrt(p) P Y/(2T - t) dt + i sqrt(p) P dW) psi.

    The drift and noise terms are combined as i sqrt(p) P dX, which also
    covers the pinned last step.
    """
    new = bridge_step(bridge, dW, cfg.dt)
    dX = np.real(new.x - bridge.x)
    psi = np.asarray(state, dtype=complex)
    out = psi * (1 - 0.5 * cfg.p * cfg.dt) + 1j * np.sqrt(cfg.p) * dX[..., None] * cfg.pauli.apply(psi)
    return out, new


def run_gate(cfg: GateConfig, psi0, trajectories=0, thetas=None) -> TrajectoryResult:
    """Steer psi0 to G(theta) psi0 over [T, 2T].

    ``thetas`` overrides the per-trajectory angle (defaults to ``cfg.theta``).
    ``terminal_fidelity`` is scored against each trajectory's own target and
    ``extras["max_hamiltonian"]`` reports the largest drift strength seen.
    """
    traj, single = _as_batch(trajectories)
    n, steps, dt = len(traj), cfg.steps, cfg.dt
    theta = np.broadcast_to(np.asarray(cfg.theta if thetas is None else thetas, dtype=float), (n,)).copy()
    psi = _broadcast_states(psi0, n)
    start = psi.copy()
    log = np.zeros(n)
    bridge = gate_bridge(cfg, theta)
    step = gate_step_exact if cfg.stepper == "exact" else gate_step_em
    noise = BatchNoise(cfg.seed, traj, [REVERSE_CHANNEL])

    states = np.empty((n, steps + 1, psi.shape[1]), dtype=complex)
    log_norm = np.zeros((n, steps + 1))
    xs = np.empty((n, steps + 1))
    incs = np.empty((n, steps, 1))
    h_max = np.zeros(n)
    states[:, 0] = psi
    xs[:, 0] = 0.0
    for k in range(steps):
        dW = np.sqrt(dt) * noise.next()[:, 0]
        h_max = np.maximum(h_max, hamiltonian_strength(cfg, bridge))
        psi, bridge = step(psi, cfg, bridge, dW)
        psi, log = renormalize(psi, log)
        nrm = np.linalg.norm(psi, axis=-1)
        states[:, k + 1] = psi / nrm[:, None]
        log_norm[:, k + 1] = log + np.log(nrm)
        xs[:, k + 1] = np.real(bridge.x)
        incs[:, k, 0] = dW

    target = gate_target(theta, cfg.pauli, start)
    result = TrajectoryResult(
        times=cfg.T + np.arange(steps + 1) * dt,
        states=states,
        log_norm=log_norm,
        record=MeasurementRecord(dt, incs, np.zeros((n, 1, 1))),
        terminal_fidelity=fidelity(states[:, -1], target),
        bridge=xs,
        trajectories=traj,
        extras={"theta": theta, "max_hamiltonian": h_max},
    )
    if single:
        result.states, result.log_norm, result.bridge = states[0], log_norm[0], xs[0]
        result.record = MeasurementRecord(dt, incs[0], np.zeros((1, 1)))
        result.terminal_fidelity = float(result.terminal_fidelity[0])
        result.extras = {"theta": float(theta[0]), "max_hamiltonian": float(h_max[0])}
    return result


def run_gate_manifold(cfg: GateConfig, psi0, n: int, start: int = 0) -> TrajectoryResult:
    """``n`` gate runs with theta drawn per run from ``cfg.theta_sampler``."""
    if cfg.theta_sampler is None:
        raise ValueError("run_gate_manifold needs a theta_sampler")
    traj = np.arange(start, start + n)
    thetas = cfg.theta_sampler.sample(cfg.seed, traj)
    return run_gate(cfg, psi0, traj, thetas=thetas)
