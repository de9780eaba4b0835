"""Parallel Monte Carlo ensembles, fidelity flows, statistics and persistence.

Work is split into fixed chunks of trajectory indices.  Chunks depend only
on the spec, never on the worker count, and every trajectory draws from its
own noise streams, so outputs are a pure function of the spec.
"""

from __future__ import annotations

import csv
import json
import os
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, is_dataclass, replace
from pathlib import Path

import numpy as np
from scipy import stats

from .channel import ChannelConfig, run_cycle, run_forward, run_reverse, run_sme_reverse
from .depolarizing import DepolarizingConfig, run_depol_cycle, run_depol_forward
from .gates import GateConfig, gate_target, run_gate
from .noise import random_states
from .pauli import fidelity, project_density, trace_distance
from .teleport import ResourceBudget, ResourceLedger, d_min, run_teleport_reverse

KINDS = ("channel", "depolarizing", "gate", "teleport", "sme")
SEGMENTS = ("cycle", "forward")
QUANTILES = (0.05, 0.25, 0.5, 0.75, 0.95)
CHUNK = 250


# -------------------------------------------------------------- statistics


@dataclass(frozen=True)
class KSResult:
    statistic: float
    pvalue: float
    alpha: float
    reject: bool


def ks_two_sample(a, b, alpha: float = 0.01) -> KSResult:
    """Two-sample Kolmogorov-Smirnov test; ``reject`` is the decision at ``alpha``."""
    a = np.asarray(a, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    if a.size == 0 or b.size == 0:
        raise ValueError("both samples must be nonempty")
    with warnings.catch_warnings():
        # saturated fidelities produce ties; the asymptotic fallback is fine
        warnings.simplefilter("ignore", RuntimeWarning)
        res = stats.ks_2samp(a, b)
    return KSResult(float(res.statistic), float(res.pvalue), alpha, bool(res.pvalue < alpha))


@dataclass(frozen=True)
class ScalingFit:
    slope: float
    intercept: float
    residual: float


def scaling_fit(points) -> ScalingFit:
    """Least-squares line through (log x, log y) for (pT, deficit) pairs."""
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[0] < 3:
        raise ValueError("need at least three (x, y) points")
    if np.any(pts <= 0):
        raise ValueError("scaling fit needs positive abscissae and deficits")
    x, y = np.log(pts[:, 0]), np.log(pts[:, 1])
    (slope, intercept), res, *_ = np.polyfit(x, y, 1, full=True)
    return ScalingFit(float(slope), float(intercept), float(res[0]) if len(res) else 0.0)


@dataclass
class FidelityFlow:
    """Per-time fidelity histograms, quantiles and means of an ensemble.

    Trajectories that stopped early (failed teleport runs) are NaN after the
    failure and drop out of later bins; ``counts`` records the bin mass.
    """

    times: np.ndarray
    mean: np.ndarray
    quantiles: np.ndarray  # (len(QUANTILES), len(times))
    histograms: np.ndarray  # (len(times), bins)
    bin_edges: np.ndarray
    n_traj: int
    counts: np.ndarray  # trajectories contributing at each time

    @classmethod
    def from_samples(cls, times, fid: np.ndarray, bins: int = 100) -> "FidelityFlow":
        fid = np.atleast_2d(np.asarray(fid, dtype=float))
        edges = np.linspace(0.0, 1.0, bins + 1)
        ok = np.isfinite(fid)
        hist = np.zeros((fid.shape[1], bins), dtype=np.int64)
        for k in range(fid.shape[1]):
            col = fid[ok[:, k], k]
            hist[k] = np.bincount(np.clip(np.floor(col * bins).astype(int), 0, bins - 1), minlength=bins)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            mean = np.nanmean(fid, axis=0)
            quantiles = np.nanquantile(fid, QUANTILES, axis=0)
        return cls(
            times=np.asarray(times, dtype=float),
            mean=mean,
            quantiles=quantiles,
            histograms=hist,
            bin_edges=edges,
            n_traj=fid.shape[0],
            counts=ok.sum(axis=0),
        )

    def quantile(self, q: float) -> np.ndarray:
        return self.quantiles[QUANTILES.index(q)]

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "mean", "q05", "q25", "q50", "q75", "q95"])
            for k, t in enumerate(self.times):
                w.writerow([repr(float(t)), repr(float(self.mean[k]))] + [repr(float(q)) for q in self.quantiles[:, k]])


# ------------------------------------------------------------------- specs


@dataclass
class EnsembleSpec:
    """What to run and how many times.

    Attributes
    ----------
    kind : {"channel", "depolarizing", "gate", "teleport", "sme"}
    config : engine config dataclass (its seed is replaced by ``base_seed``)
    segment : {"cycle", "forward"}
        Forward segment only, or forward followed by reverse (channel and
        depolarizing kinds).
    n_traj : int
    base_seed : int
    initial : "zero", "haar", or an explicit amplitude list
    time_grid : optional sample times for the flow (defaults to every step)
    epsilon : target failure probability for teleport budgets
    """

    kind: str
    config: object
    n_traj: int = 100
    base_seed: int = 0
    initial: object = "zero"
    time_grid: list | None = None
    epsilon: float = 1e-3
    segment: str = "cycle"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"kind must be one of {KINDS}")
        if self.segment not in SEGMENTS:
            raise ValueError(f"segment must be one of {SEGMENTS}")
        if self.segment == "forward" and self.kind not in ("channel", "depolarizing"):
            raise ValueError("only channel and depolarizing runs have a forward-only segment")
        if self.n_traj < 1:
            raise ValueError("n_traj must be at least 1")
        self.config = replace(self.config, seed=self.base_seed)
        if self.time_grid is not None:
            T = self.config.T
            if any(t < 0 or t > 2 * T + 1e-12 for t in self.time_grid):
                raise ValueError("time grid must lie within [0, 2T]")

    @property
    def qubits(self) -> int:
        return 1 if self.kind == "depolarizing" else self.config.pauli.m


def initial_states(spec: EnsembleSpec, traj: np.ndarray) -> np.ndarray:
    m = spec.qubits
    if isinstance(spec.initial, str):
        if spec.initial == "haar":
            return random_states(spec.base_seed, traj, m)
        if spec.initial == "zero":
            psi = np.zeros((len(traj), 2**m), dtype=complex)
            psi[:, 0] = 1
            return psi
        raise ValueError(f"unknown initial state {spec.initial!r}")
    psi = np.asarray(spec.initial, dtype=complex)
    if psi.ndim == 2 and psi.shape[-1] == 2:
        psi = psi[..., 0] + 1j * psi[..., 1]
    return np.broadcast_to(psi / np.linalg.norm(psi), (len(traj), 2**m)).copy()


# ------------------------------------------------------------------ chunks


@dataclass
class ChunkResult:
    trajectories: np.ndarray
    times: np.ndarray
    fidelities: np.ndarray  # (n, len(times)); NaN after a protocol failure
    states: np.ndarray  # (n, len(times), dim)
    increments: np.ndarray  # (n, steps, channels)
    terminal: np.ndarray
    ledger: ResourceLedger = field(default_factory=ResourceLedger)
    failed: np.ndarray | None = None
    extras: dict = field(default_factory=dict)


def _run_chunk(spec: EnsembleSpec, traj: np.ndarray) -> ChunkResult:
    """Fidelities are to psi0, except gate runs which score against G(theta) psi0."""
    psi0 = initial_states(spec, traj)
    cfg = spec.config
    if spec.segment == "forward":
        run = run_forward if spec.kind == "channel" else run_depol_forward
        res = run(cfg, psi0, traj)
        fid = fidelity(res.states, np.broadcast_to(psi0[:, None, :], res.states.shape))
        return ChunkResult(traj, res.times, fid, res.states, res.record.increments, fid[:, -1])
    if spec.kind == "sme":
        return _run_sme_chunk(spec, traj, psi0)
    if spec.kind == "channel":
        cyc = run_cycle(cfg, psi0, traj)
        states = np.concatenate([cyc.forward.states, cyc.reverse.states[:, 1:]], axis=1)
        inc = np.concatenate([cyc.forward.record.increments, cyc.reverse.record.increments], axis=1)
        return ChunkResult(traj, cyc.times, cyc.fidelity_to(psi0), states, inc, cyc.terminal_fidelity)
    if spec.kind == "depolarizing":
        cyc = run_depol_cycle(cfg, psi0, traj)
        times = np.concatenate([cyc.forward.times, cyc.reverse.times[1:]])
        states = np.concatenate([cyc.forward.states, cyc.reverse.states[:, 1:]], axis=1)
        fid = fidelity(states, np.broadcast_to(psi0[:, None, :], states.shape))
        inc = np.concatenate([cyc.forward.record.increments, cyc.reverse.record.increments], axis=1)
        return ChunkResult(traj, times, fid, states, inc, cyc.terminal_fidelity)
    if spec.kind == "gate":
        res = run_gate(cfg, psi0, traj, thetas=None if cfg.theta_sampler is None else cfg.theta_sampler.sample(cfg.seed, traj))
        target = gate_target(res.extras["theta"], cfg.pauli, psi0)
        fid = fidelity(res.states, np.broadcast_to(target[:, None, :], res.states.shape))
        return ChunkResult(
            traj, res.times, fid, res.states, res.record.increments, res.terminal_fidelity,
            extras={"theta": res.extras["theta"], "max_hamiltonian": res.extras["max_hamiltonian"]},
        )
    return _run_teleport_chunk(spec, traj, psi0)


def _run_sme_chunk(spec: EnsembleSpec, traj: np.ndarray, psi0: np.ndarray) -> ChunkResult:
    cfg = spec.config
    fwd = run_forward(cfg, psi0, traj)
    W_T = fwd.record.W[:, 0]
    sme = run_sme_reverse(cfg, project_density(fwd.terminal), W_T, traj)
    pure = run_reverse(cfg, fwd.terminal, W_T, traj)
    states = np.concatenate([project_density(fwd.states), sme.states[:, 1:]], axis=1)
    overlap = np.einsum("ni,ntij,nj->nt", psi0.conj(), states, psi0)
    fid = np.sqrt(np.clip(overlap.real, 0.0, 1.0))
    times = np.concatenate([fwd.times, pure.times[1:]])
    inc = np.concatenate([fwd.record.increments, sme.record.increments], axis=1)
    dist = trace_distance(sme.states[:, -1], project_density(pure.states[:, -1]))
    return ChunkResult(traj, times, fid, states, inc, fid[:, -1], extras={"trace_distance": np.atleast_1d(dist)})


def teleport_budget(spec: EnsembleSpec) -> ResourceBudget:
    """Budget sized by d_min at the typical step |dY| ~ dt.

    When no finite budget meets epsilon at that step size, the attempt cap
    is lifted and failures are left to the protocol itself.
    """
    cfg = spec.config
    try:
        return ResourceBudget(spec.epsilon, d_min(spec.epsilon, cfg.p, cfg.dt), m=cfg.pauli.m)
    except ValueError:
        return ResourceBudget.unbounded(m=cfg.pauli.m)


def _run_teleport_chunk(spec: EnsembleSpec, traj: np.ndarray, psi0: np.ndarray) -> ChunkResult:
    cfg = spec.config
    budget = teleport_budget(spec)
    fwd = run_forward(cfg, psi0, traj)
    n, steps = len(traj), cfg.steps
    dim = psi0.shape[1]
    times = np.concatenate([fwd.times, cfg.T + np.arange(1, steps + 1) * cfg.dt])
    states = np.full((n, 2 * steps + 1, dim), np.nan, dtype=complex)
    states[:, : steps + 1] = fwd.states
    inc = np.full((n, 2 * steps, 1), np.nan)
    inc[:, :steps] = fwd.record.increments
    ledger = ResourceLedger()
    failed = np.zeros(n, dtype=bool)
    terminal = np.full(n, np.nan)
    for i, t in enumerate(traj):
        run = run_teleport_reverse(cfg, fwd.terminal[i], fwd.record.W[i, 0], budget, int(t), psi0=psi0[i])
        ledger = ledger.merge(run.ledger)
        k = run.states.shape[0]
        states[i, steps + 1 : steps + k] = run.states[1:]
        failed[i] = run.failed
        if run.terminal_fidelity is not None:
            terminal[i] = run.terminal_fidelity
    with np.errstate(invalid="ignore"):
        nrm = np.linalg.norm(states, axis=-1)
        ok = np.isfinite(nrm)
        fid = np.full(nrm.shape, np.nan)
        fid[ok] = np.abs(np.sum(np.conj(psi0[:, None, :]) * states, axis=-1))[ok]
    return ChunkResult(traj, times, np.minimum(fid, 1.0), states, inc, terminal, ledger, failed,
                       extras={"budget": budget.summary()})


def _chunk_task(spec: EnsembleSpec, traj: np.ndarray) -> ChunkResult:
    """Worker entry point: run a chunk and keep states only on the output grid."""
    res = _run_chunk(spec, traj)
    res.states = res.states[:, _sample_index(res.times, spec.time_grid)]
    return res


def _chunks(n_traj: int, size: int = CHUNK):
    return [np.arange(s, min(s + size, n_traj)) for s in range(0, n_traj, size)]


# ----------------------------------------------------------------- results


@dataclass
class EnsembleResult:
    spec: EnsembleSpec
    times: np.ndarray
    fidelities: np.ndarray
    states: np.ndarray  # sampled on ``times[sample_index]``
    increments: np.ndarray
    terminal: np.ndarray
    flow: FidelityFlow
    summary: dict
    sample_index: np.ndarray


def _sample_index(times: np.ndarray, grid) -> np.ndarray:
    if grid is None:
        return np.arange(len(times))
    return np.array([int(np.argmin(np.abs(times - t))) for t in grid])


def run_ensemble(spec: EnsembleSpec, workers: int = 1, out: str | os.PathLike | None = None) -> EnsembleResult:
    """Run ``spec.n_traj`` trajectories, optionally in parallel, and summarize.

    Results are identical for any ``workers``.  If ``out`` is given,
    ``flow.csv``, ``trajectories.jsonl`` and ``summary.json`` are written there.
    """
    chunks = _chunks(spec.n_traj)
    if workers > 1 and len(chunks) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_chunk_task, [spec] * len(chunks), chunks))
    else:
        parts = [_chunk_task(spec, c) for c in chunks]

    times = parts[0].times
    fid = np.concatenate([p.fidelities for p in parts])
    states = np.concatenate([p.states for p in parts])
    inc = np.concatenate([p.increments for p in parts])
    terminal = np.concatenate([p.terminal for p in parts])
    idx = _sample_index(times, spec.time_grid)

    complete = np.all(np.isfinite(fid), axis=1)
    flow = FidelityFlow.from_samples(times[idx], fid[:, idx])
    summary = _summarize(spec, parts, times, fid, terminal, complete, flow)
    result = EnsembleResult(spec, times, fid, states, inc, terminal, flow, summary, idx)
    if out is not None:
        write_outputs(result, out)
    return result


def time_reversal_ks(fid: np.ndarray, steps: int, offsets_steps, alpha: float = 0.01) -> dict:
    """KS tests of fidelity at T - s (forward) against T + s (reverse)."""
    out = {}
    for s in offsets_steps:
        res = ks_two_sample(fid[:, steps - s], fid[:, steps + s], alpha)
        out[str(s)] = asdict(res)
    return out


def _summarize(spec, parts, times, fid, terminal, complete, flow) -> dict:
    cfg = spec.config
    finite = terminal[np.isfinite(terminal)]
    summary = {
        "kind": spec.kind,
        "segment": spec.segment,
        "n_traj": spec.n_traj,
        "base_seed": spec.base_seed,
        "config": _config_dict(cfg),
        "terminal_fidelity": {
            "mean": float(finite.mean()) if finite.size else None,
            "min": float(finite.min()) if finite.size else None,
        },
        "final_q05": float(flow.quantile(0.05)[-1]),
    }
    if spec.kind in ("channel", "depolarizing", "sme") and spec.segment == "cycle":
        steps = cfg.steps
        offs = [steps // 4, steps // 2, 3 * steps // 4]
        summary["time_reversal_ks"] = {
            f"{s * cfg.dt:.6g}": v for s, v in zip(offs, time_reversal_ks(fid, steps, offs).values())
        }
        summary["deficit_mean"] = float(np.mean(1 - terminal))
    if spec.kind == "sme":
        dist = np.concatenate([p.extras["trace_distance"] for p in parts])
        summary["sme_trace_distance_max"] = float(dist.max())
    if spec.kind == "gate":
        summary["max_hamiltonian"] = float(max(p.extras["max_hamiltonian"].max() for p in parts))
    if spec.kind == "teleport":
        ledger = ResourceLedger()
        for p in parts:
            ledger = ledger.merge(p.ledger)
        summary["teleport"] = {
            "ledger": ledger.as_dict(),
            "budget": parts[0].extras["budget"],
            "failed_runs": int(sum(int(p.failed.sum()) for p in parts)),
            "completed_runs": int(complete.sum()),
        }
    return summary


def _config_dict(cfg) -> dict:
    d = {}
    for k, v in asdict(cfg).items():
        d[k] = str(v) if not isinstance(v, (int, float, str, bool, type(None))) else v
    if hasattr(cfg, "pauli"):
        d["pauli"] = str(cfg.pauli)
    if getattr(cfg, "theta_sampler", None) is not None:
        d["theta_sampler"] = asdict(cfg.theta_sampler)
    return d


# ------------------------------------------------------------- persistence


def _complex_pairs(a: np.ndarray) -> list:
    return np.stack([a.real, a.imag], axis=-1).tolist()


def trajectory_record(result: EnsembleResult, i: int) -> dict:
    idx = result.sample_index
    return {
        "trajectory": i,
        "times": result.times[idx].tolist(),
        "increments": result.increments[i].tolist(),
        "states": _complex_pairs(result.states[i]),
        "fidelity": result.fidelities[i, idx].tolist(),
        "terminal_fidelity": float(result.terminal[i]),
    }


def write_trajectories(records, path):
    """One JSON object per line; floats use shortest round-trip reprs."""
    with open(path, "w") as fh:
        for rec in sorted(records, key=lambda r: r["trajectory"]):
            fh.write(json.dumps(rec, allow_nan=True) + "\n")


def read_trajectories(path) -> list[dict]:
    """Inverse of :func:`write_trajectories`, restoring numpy arrays."""
    out = []
    with open(path) as fh:
        for line in fh:
            rec = json.loads(line)
            rec["times"] = np.asarray(rec["times"], dtype=float)
            rec["increments"] = np.asarray(rec["increments"], dtype=float)
            st = np.asarray(rec["states"], dtype=float)
            rec["states"] = st[..., 0] + 1j * st[..., 1]
            rec["fidelity"] = np.asarray(rec["fidelity"], dtype=float)
            out.append(rec)
    return out


def write_outputs(result: EnsembleResult, out) -> Path:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    result.flow.write_csv(out / "flow.csv")
    write_trajectories([trajectory_record(result, i) for i in range(result.spec.n_traj)], out / "trajectories.jsonl")
    with open(out / "summary.json", "w") as fh:
        json.dump(result.summary, fh, indent=2, default=_json_default)
    return out


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if is_dataclass(o):
        return asdict(o)
    raise TypeError(f"cannot serialize {type(o).__name__}")


# ------------------------------------------------------------- experiments


def depol_scaling(p_values, T: float = 1.0, dt: float = 1e-3, n_traj: int = 500, seed: int = 0,
                  mode: str = "dissipative", workers: int = 1) -> dict:
    """Mean reverse deficits over a list of p and the log-log slope in pT."""
    deficits = []
    for p in p_values:
        cfg = DepolarizingConfig(p=p, T=T, dt=dt, mode=mode, seed=seed)
        spec = EnsembleSpec("depolarizing", cfg, n_traj=n_traj, base_seed=seed, initial="haar", time_grid=[0.0, 2 * T])
        res = run_ensemble(spec, workers=workers)
        deficits.append(float(np.mean(1 - res.terminal)))
    fit = scaling_fit([(p * T, d) for p, d in zip(p_values, deficits)])
    return {"pT": [p * T for p in p_values], "deficits": deficits, "fit": asdict(fit)}


def config_from_dict(kind: str, data: dict):
    """Build the engine config of ``kind`` from a field dictionary."""
    cls = {"channel": ChannelConfig, "depolarizing": DepolarizingConfig, "gate": GateConfig,
           "teleport": ChannelConfig, "sme": ChannelConfig}[kind]
    return cls(**data)
