"""Counter-based noise, measurement records, Lévy areas and Brownian bridges.

Random draws are addressed by ``(seed, trajectory, channel, position)``.
Positions are grouped in blocks of :data:`BLOCK` draws, and each block comes
from its own Philox generator keyed by a ``SeedSequence`` spawn key.  Any
draw can therefore be regenerated without replaying earlier ones, and the
result never depends on how trajectories are split across workers.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .pauli import JumpOperator, as_amplitudes

BLOCK = 1024

_NORMAL_TAG = 0
_UNIFORM_TAG = 1

# channel namespaces, kept disjoint so no two processes share a stream
FORWARD_CHANNEL = 0
REVERSE_CHANNEL = 8
TELEPORT_CHANNEL = 16
THETA_CHANNEL = 24
INIT_CHANNEL = 32


def _generator(seed: int, tag: int, trajectory: int, channel: int, block: int):
    ss = np.random.SeedSequence(int(seed), spawn_key=(tag, int(trajectory), int(channel), int(block)))
    return np.random.Generator(np.random.Philox(ss))


def noise_block(seed: int, trajectory: int, channel: int, block: int, kind: str = "normal") -> np.ndarray:
    """The ``block``-th group of :data:`BLOCK` standard normal (or uniform) draws."""
    if kind == "normal":
        return _generator(seed, _NORMAL_TAG, trajectory, channel, block).standard_normal(BLOCK)
    if kind == "uniform":
        return _generator(seed, _UNIFORM_TAG, trajectory, channel, block).random(BLOCK)
    raise ValueError(f"unknown draw kind {kind!r}")


@dataclass
class NoiseStream:
    """A positioned view into one (seed, trajectory, channel) stream."""

    seed: int
    trajectory: int = 0
    channel: int = 0
    position: int = 0
    kind: str = "normal"
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def stream_id(self) -> tuple[int, int]:
        return (self.trajectory, self.channel)

    def _block(self, b: int) -> np.ndarray:
        blk = self._cache.get(b)
        if blk is None:
            self._cache.clear()
            blk = noise_block(self.seed, self.trajectory, self.channel, b, self.kind)
            self._cache[b] = blk
        return blk

    def draw(self, n: int | None = None):
        """Return the next draw (or ``n`` draws) and advance the position."""
        count = 1 if n is None else int(n)
        out = np.empty(count)
        filled = 0
        while filled < count:
            b, off = divmod(self.position, BLOCK)
            take = min(count - filled, BLOCK - off)
            out[filled:filled + take] = self._block(b)[off:off + take]
            filled += take
            self.position += take
        return float(out[0]) if n is None else out

    def peek(self, position: int) -> float:
        b, off = divmod(position, BLOCK)
        return float(self._block(b)[off])


class BatchNoise:
    """Per-step draws for many trajectories and channels at once.

    ``next()`` returns an array of shape ``(len(trajectories), len(channels))``
    holding the draw at the current position of every stream.
    """

    def __init__(self, seed: int, trajectories, channels, kind: str = "normal", position: int = 0):
        self.seed = int(seed)
        self.trajectories = np.atleast_1d(np.asarray(trajectories, dtype=np.int64))
        self.channels = tuple(int(c) for c in np.atleast_1d(channels))
        self.kind = kind
        self.position = int(position)
        self._block_index = -1
        self._buf = None

    def _load(self, b: int):
        buf = np.empty((len(self.trajectories), len(self.channels), BLOCK))
        for i, traj in enumerate(self.trajectories):
            for j, ch in enumerate(self.channels):
                buf[i, j] = noise_block(self.seed, traj, ch, b, self.kind)
        self._buf = buf
        self._block_index = b

    def next(self) -> np.ndarray:
        b, off = divmod(self.position, BLOCK)
        if b != self._block_index:
            self._load(b)
        self.position += 1
        return self._buf[:, :, off]


def wiener_increment(stream: NoiseStream, dt: float) -> float:
    """A Normal(0, dt) sample; advances the stream by one position."""
    if dt < 0:
        raise ValueError("dt must be non-negative")
    return np.sqrt(dt) * stream.draw()


def measurement_signal(psi, L: JumpOperator, p: float, dt: float) -> np.ndarray:
    """The deterministic part sqrt(p) <L + L^dagger> dt of a record increment."""
    psi = as_amplitudes(psi)
    nrm = np.linalg.norm(psi, axis=-1, keepdims=True)
    if np.any(nrm == 0):
        raise ValueError("state has zero norm")
    return np.sqrt(p) * L.signal(psi / nrm) * dt


def measurement_increment(state, L: JumpOperator, p: float, dt: float, stream) -> float | np.ndarray:
    """Observed increment sqrt(p) <L + L^dagger> dt + dW_hat.

    ``stream`` is a :class:`NoiseStream`, or an already drawn innovation
    (scalar or array matching the batch shape of ``state``).
    """
    if not 0 <= p <= 1:
        raise ValueError("p must lie in [0, 1]")
    if dt <= 0:
        raise ValueError("dt must be positive")
    innovation = wiener_increment(stream, dt) if isinstance(stream, NoiseStream) else stream
    out = measurement_signal(state, L, p, dt) + innovation
    return float(out) if np.ndim(out) == 0 else out


def levy_increment(W: np.ndarray, dW: np.ndarray) -> np.ndarray:
    """Left-point area increment 0.5 (W_i dW_j - W_j dW_i) as a (..., c, c) array."""
    outer = W[..., :, None] * dW[..., None, :]
    return 0.5 * (outer - np.swapaxes(outer, -1, -2))


def levy_vector(S: np.ndarray) -> np.ndarray:
    """(S_23, S_31, S_12) from an antisymmetric 3x3 area matrix."""
    return np.stack([S[..., 1, 2], S[..., 2, 0], S[..., 0, 1]], axis=-1)


@dataclass
class MeasurementRecord:
    """Observed increments of one or more channels with running sums and areas.

    ``increments`` has shape ``(..., steps, channels)``; ``levy`` holds the
    antisymmetric matrix S_ij accumulated to the last step.
    """

    dt: float
    increments: np.ndarray
    levy: np.ndarray | None = None

    def __post_init__(self):
        self.increments = np.asarray(self.increments, dtype=float)
        if self.levy is None:
            self.levy = self._areas()

    @classmethod
    def empty(cls, dt: float, channels: int = 1) -> "MeasurementRecord":
        return cls(dt, np.zeros((0, channels)))

    @classmethod
    def from_increments(cls, increments, dt: float) -> "MeasurementRecord":
        return cls(dt, increments)

    @property
    def steps(self) -> int:
        return self.increments.shape[-2]

    @property
    def channels(self) -> int:
        return self.increments.shape[-1]

    @property
    def cumulative(self) -> np.ndarray:
        """W at every grid point, starting from zero: shape (..., steps + 1, channels)."""
        shape = self.increments.shape[:-2] + (1, self.channels)
        return np.concatenate([np.zeros(shape), np.cumsum(self.increments, axis=-2)], axis=-2)

    @property
    def W(self) -> np.ndarray:
        return np.sum(self.increments, axis=-2)

    @property
    def levy_vector(self) -> np.ndarray:
        return levy_vector(self.levy)

    def _areas(self) -> np.ndarray:
        c = self.channels
        S = np.zeros(self.increments.shape[:-2] + (c, c))
        W = np.zeros(self.increments.shape[:-2] + (c,))
        for k in range(self.steps):
            dW = self.increments[..., k, :]
            S += levy_increment(W, dW)
            W = W + dW
        return S

    def prefix(self, steps: int) -> "MeasurementRecord":
        return MeasurementRecord(self.dt, self.increments[..., :steps, :])


def levy_update(record: MeasurementRecord, dW) -> MeasurementRecord:
    """Append one increment vector, updating areas with pre-step sums."""
    dW = np.asarray(dW, dtype=float)
    S = record.levy + levy_increment(record.W, dW)
    inc = np.concatenate([record.increments, dW[..., None, :]], axis=-2)
    return MeasurementRecord(record.dt, inc, S)


@dataclass(frozen=True)
class BridgeState:
    """Auxiliary process X(t) pinned to ``x_end`` at ``t_end``.

    ``x`` may be an array for a batch of independent bridges sharing time.
    """

    x: complex | np.ndarray
    t: float
    t_end: float
    x_end: complex | np.ndarray = 0.0
    gamma: complex = 1.0

    def remaining(self) -> float:
        return self.t_end - self.t


def bridge_step(b: BridgeState, dW, dt: float) -> BridgeState:
    """One step of dX = (x_end - X)/(t_end - t) dt + gamma dW.

    The step that lands on ``t_end`` (within half a step) sets ``x = x_end``
    exactly instead of evaluating the singular drift.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    left = b.t_end - b.t
    if dt > left + 0.5 * dt:
        raise ValueError(f"step to t={b.t + dt} passes the pin time {b.t_end}")
    if left - dt <= 0.5 * dt:
        x_new = np.broadcast_to(np.asarray(b.x_end, dtype=complex), np.shape(b.x)).copy()
        if np.ndim(x_new) == 0:
            x_new = complex(x_new)
        return replace(b, x=x_new, t=b.t_end)
    x = b.x + (b.x_end - b.x) * (dt / left) + b.gamma * np.asarray(dW)
    return replace(b, x=x, t=b.t + dt)


def random_states(seed: int, trajectories, m: int = 1) -> np.ndarray:
    """Haar-random initial states, one per trajectory index, from a dedicated stream."""
    traj = np.atleast_1d(np.asarray(trajectories, dtype=np.int64))
    dim = 2**m
    out = np.empty((len(traj), dim), dtype=complex)
    for i, t in enumerate(traj):
        z = noise_block(seed, t, INIT_CHANNEL, 0)[: 2 * dim]
        v = z[:dim] + 1j * z[dim:]
        out[i] = v / np.linalg.norm(v)
    return out
