"""Desk-scale invariant suite behind ``revdiff verify``.

Each check runs a small fixed-seed experiment and returns a
:class:`CheckResult`.  The whole suite runs in well under a minute.
"""

from __future__ import annotations

import math
import tempfile
import time
from dataclasses import dataclass
from itertools import product

import numpy as np
from scipy.linalg import expm

from .channel import ChannelConfig, run_cycle, run_forward, run_reverse, run_sme_reverse
from .depolarizing import DepolarizingConfig, reverse_depol_oracle, run_depol_forward, run_depol_reverse
from .ensemble import EnsembleSpec, read_trajectories, run_ensemble, scaling_fit
from .gates import GateConfig, run_gate
from .noise import noise_block, random_states
from .pauli import (
    MODES,
    PauliString,
    exp_affine_pauli,
    fidelity,
    pauli_matrix,
    project_density,
    trace_distance,
)
from .teleport import DriftOp, d_min, outcome_probabilities

TOL = 1e-9


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str
    seconds: float = 0.0


def check_pauli_algebra() -> CheckResult:
    worst = 0.0
    for word in ("X", "Y", "Z", "XZ", "YIZ", "ZXY"):
        P = pauli_matrix(word)
        worst = max(worst, np.abs(P @ P - np.eye(len(P))).max(), np.abs(P - P.conj().T).max())
        for a, b in ((0.3, 0.7), (-0.2, 0.4j), (0.1 + 0.2j, -0.5 + 0.3j)):
            worst = max(worst, np.abs(exp_affine_pauli(a, b, PauliString(word)) - expm(a * np.eye(len(P)) + b * P)).max())
    return CheckResult("pauli algebra and closed-form exponentials", worst < 1e-12, f"max error {worst:.2e}")


def check_noise_determinism() -> CheckResult:
    a = noise_block(7, 3, 0, 2)
    b = noise_block(7, 3, 0, 2)
    c = noise_block(7, 4, 0, 2)
    ok = np.array_equal(a, b) and not np.array_equal(a, c)
    return CheckResult("counter-based noise streams", ok, "same key reproduces, distinct keys differ")


def check_exact_recovery() -> CheckResult:
    worst = 0.0
    for word, mode in product(("X", "Y", "Z", "XZ"), MODES):
        cfg = ChannelConfig(word, mode, p=0.2, T=1.0, dt=1e-3)
        psi0 = random_states(0, np.arange(20), cfg.jump.pauli.m)
        worst = max(worst, float(np.max(1 - run_cycle(cfg, psi0, np.arange(20)).terminal_fidelity)))
    return CheckResult("exact single-channel recovery", worst <= TOL, f"max deficit {worst:.2e}")


def check_time_reversal() -> CheckResult:
    cfg = ChannelConfig("X", "dissipative", p=0.2, T=1.0, dt=1e-3)
    res = run_ensemble(EnsembleSpec("channel", cfg, n_traj=500))
    pmin = min(v["pvalue"] for v in res.summary["time_reversal_ks"].values())
    return CheckResult("statistical time reversal (KS, n=500)", pmin >= 0.01, f"min p-value {pmin:.3f}")


def check_fidelity_flow() -> CheckResult:
    cfg = ChannelConfig("X", "dissipative", p=0.2, T=1.0, dt=1e-3)
    res = run_ensemble(EnsembleSpec("channel", cfg, n_traj=500, time_grid=[0.0, 1.0, 2.0]))
    q = res.flow.quantile(0.05)
    order = np.all(np.diff(res.flow.quantiles, axis=0) >= 0)
    ok = q[1] < 0.9 and q[2] >= 0.999 and order and np.all(res.flow.histograms.sum(axis=1) == 500)
    return CheckResult("fidelity flow spreads and reconcentrates", bool(ok), f"q05(T)={q[1]:.3f} q05(2T)={q[2]:.6f}")


def check_sme_consistency() -> CheckResult:
    cfg = ChannelConfig("X", "dissipative", p=0.2, T=0.2, dt=1e-3)
    psi0 = random_states(1, np.arange(5), 1)
    fwd = run_forward(cfg, psi0, np.arange(5))
    W_T = fwd.record.W[:, 0]
    pure = run_reverse(cfg, fwd.terminal, W_T, np.arange(5))
    sme = run_sme_reverse(cfg, project_density(fwd.terminal), W_T, np.arange(5))
    dist = float(np.max(trace_distance(sme.states[:, -1], project_density(pure.states[:, -1]))))
    return CheckResult("reverse SME matches pure-state reverse", dist < 1e-6, f"max trace distance {dist:.2e}")


def check_depolarizing() -> CheckResult:
    cfg = DepolarizingConfig(p=0.1, T=0.25, dt=1e-3)
    traj = np.arange(20)
    psi0 = random_states(2, traj, 1)
    fwd = run_depol_forward(cfg, psi0, traj)
    rev = run_depol_reverse(cfg, fwd.terminal, fwd.record, traj, psi0=psi0)
    oracle = reverse_depol_oracle(psi0, fwd.record, rev.bridge[:, -1], cfg, 2 * cfg.T)
    gap = float(np.max(1 - fidelity(rev.terminal, oracle)))
    deficit = float(np.mean(1 - rev.terminal_fidelity))
    ok = gap < 1e-3 and deficit < 1e-3
    return CheckResult("depolarizing reverse vs closed form", ok, f"oracle gap {gap:.2e}, mean deficit {deficit:.2e}")


def check_gates() -> CheckResult:
    worst = 0.0
    for theta, word in product((math.pi / 4, math.pi / 2, 1.0), ("X", "ZX")):
        cfg = GateConfig(theta=theta, pauli=word, p=0.2)
        psi0 = random_states(3, np.arange(10), cfg.pauli.m)
        worst = max(worst, float(np.max(1 - run_gate(cfg, psi0, np.arange(10)).terminal_fidelity)))
    return CheckResult("deterministic gate synthesis", worst <= TOL, f"max deficit {worst:.2e}")


def check_teleport_algebra() -> CheckResult:
    errs = []
    for n in (1, 2, 4, 8):
        R = DriftOp("X", 0.05, 0.2, n)
        Z = pauli_matrix("Z")
        M = R.matrix() @ Z @ R.matrix() @ Z
        errs.append(np.abs(M - R.lambda_min**n * np.eye(2)).max())
    psi = random_states(4, [0], 2)[0]
    _, probs = outcome_probabilities(psi, DriftOp("XZ", 0.1, 0.2, 2))
    complete = abs(probs.sum() - 1)
    dmins = [d_min(eps, 0.2, 1e-12) == math.ceil(math.log2(1 / eps)) for eps in (0.5, 0.125, 1e-3)]
    ok = max(errs) < 1e-10 and complete < 1e-12 and all(dmins)
    return CheckResult("teleport POVM and cancellation identity", ok, f"identity {max(errs):.1e}, completeness {complete:.1e}")


def check_scaling_fit() -> CheckResult:
    x = np.array([0.05, 0.1, 0.2])
    fit = scaling_fit(np.column_stack([x, x**3]))
    return CheckResult("log-log scaling fit", abs(fit.slope - 3) < 1e-10, f"slope {fit.slope:.12f}")


def check_persistence() -> CheckResult:
    cfg = ChannelConfig("XZ", "conserving", p=0.2, T=0.05, dt=1e-3)
    with tempfile.TemporaryDirectory() as tmp:
        res = run_ensemble(EnsembleSpec("channel", cfg, n_traj=3), out=tmp)
        recs = read_trajectories(f"{tmp}/trajectories.jsonl")
    ok = all(
        np.array_equal(r["states"], res.states[i]) and np.array_equal(r["increments"], res.increments[i])
        for i, r in enumerate(recs)
    )
    return CheckResult("trajectory persistence round trip", ok, "bit-exact" if ok else "mismatch")


CHECKS = (
    check_pauli_algebra,
    check_noise_determinism,
    check_exact_recovery,
    check_time_reversal,
    check_fidelity_flow,
    check_sme_consistency,
    check_depolarizing,
    check_gates,
    check_teleport_algebra,
    check_scaling_fit,
    check_persistence,
)


def run_checks(checks=CHECKS) -> list[CheckResult]:
    """Run each check, turning unexpected exceptions into failures."""
    out = []
    for check in checks:
        t0 = time.perf_counter()
        try:
            res = check()
        except Exception as exc:  # a crash is a failed check, not a crashed suite
            res = CheckResult(check.__name__, False, f"{type(exc).__name__}: {exc}")
        out.append(CheckResult(res.name, bool(res.passed), res.detail, time.perf_counter() - t0))
    return out
