import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.linalg import expm

from revdiff.channel import (
    ChannelConfig,
    forward_exact,
    forward_step_em,
    forward_step_exact,
    reverse_bridge,
    reverse_exact,
    reverse_step_em,
    reverse_step_exact,
    run_cycle,
    run_forward,
    run_reverse,
    run_sme_reverse,
    sme_reverse_step,
    sme_reverse_step_exact,
)
from revdiff.ensemble import ks_two_sample
from revdiff.noise import BridgeState, random_states
from revdiff.pauli import MODES, fidelity, normalize, pauli_matrix, project_density, trace_distance

ZERO = np.array([1, 0], dtype=complex)
PLUS = np.array([1, 1], dtype=complex) / math.sqrt(2)


def dense_L(cfg):
    return cfg.jump.matrix()


class TestConfig:
    @pytest.mark.parametrize(
        "kwargs",
        [{"p": -0.1}, {"p": 1.5}, {"dt": 0}, {"T": 1.0, "dt": 0.3}, {"mode": "x"}, {"stepper": "rk4"}, {"reverse_record": "y"}],
    )
    def test_rejects(self, kwargs):
        with pytest.raises(ValueError):
            ChannelConfig(**kwargs)

    def test_drift_rate(self):
        assert ChannelConfig(mode="dissipative", p=0.2).drift_rate == pytest.approx(-0.2)
        assert ChannelConfig(mode="conserving", p=0.2).drift_rate == 0.0


class TestForwardSteps:
    def test_p_zero_unchanged(self):
        cfg = ChannelConfig(p=0.0)
        np.testing.assert_array_equal(forward_step_em(PLUS, cfg, 0.3), PLUS)

    def test_zero_increment_contracts(self):
        cfg = ChannelConfig(p=0.2, dt=1e-2)
        np.testing.assert_allclose(forward_step_em(PLUS, cfg, 0.0), (1 - 0.001) * PLUS)

    def test_conserving_em_norm_change_is_order_dt(self):
        for dt in (1e-2, 1e-3):
            cfg = ChannelConfig(mode="conserving", p=0.2, dt=dt, T=1.0)
            dW = math.sqrt(dt) * 0.7
            em = forward_step_em(PLUS, cfg, dW)
            oracle = expm(math.sqrt(cfg.p) * dW * dense_L(cfg)) @ PLUS
            assert abs(np.linalg.norm(oracle) - 1) < 1e-14
            change = abs(np.linalg.norm(em) - 1)
            assert 0.01 * dt < change < 2 * dt
            assert np.linalg.norm(em - oracle) < 2 * dt

    @given(st.sampled_from(["X", "Y", "Z", "XZ"]), st.sampled_from(MODES), st.floats(-0.2, 0.2))
    def test_exact_step_matches_expm(self, word, mode, dW):
        cfg = ChannelConfig(word, mode, p=0.3, dt=1e-2)
        psi = normalize(np.arange(1, 2 ** len(word) + 1) + 0.5j)
        ref = expm(cfg.drift_rate * cfg.dt * np.eye(len(psi)) + math.sqrt(cfg.p) * dW * dense_L(cfg)) @ psi
        np.testing.assert_allclose(forward_step_exact(psi, cfg, dW), ref, atol=1e-13)


class TestForwardExact:
    def test_zero_record(self):
        cfg = ChannelConfig(p=0.2)
        out = forward_exact(PLUS, cfg, 0.0, 0.7)
        np.testing.assert_allclose(out, math.exp(-0.2 * 0.7) * PLUS, atol=1e-15)

    def test_reference_amplitudes(self):
        cfg = ChannelConfig("X", "dissipative", p=0.2)
        out = normalize(forward_exact(ZERO, cfg, 1.0, 1.0))
        ref = normalize(np.array([math.cosh(math.sqrt(0.2)), math.sinh(math.sqrt(0.2))]))
        np.testing.assert_allclose(out, ref, atol=1e-15)
        assert out[1].real / out[0].real == pytest.approx(math.tanh(math.sqrt(0.2)), abs=1e-15)

    @given(st.floats(-5, 5), st.floats(0, 2))
    def test_conserving_unitary(self, W, t):
        cfg = ChannelConfig("XZ", "conserving", p=0.2)
        psi = normalize(np.array([1, 2j, 0.5, -1]))
        assert abs(np.linalg.norm(forward_exact(psi, cfg, W, t)) - 1) < 1e-13


class TestReverseSteps:
    def test_zero_bridge_reduces_to_forward(self):
        cfg = ChannelConfig(p=0.2, dt=1e-2)
        b = BridgeState(np.zeros(1, dtype=complex), 1.0, 2.0)
        out, _ = reverse_step_em(PLUS[None], cfg, b, np.array([0.05]))
        np.testing.assert_allclose(out[0], forward_step_em(PLUS, cfg, 0.05), atol=1e-15)

    def test_p_zero(self):
        cfg = ChannelConfig(p=0.0, dt=0.1)
        b = BridgeState(np.array([2.0 + 0j]), 1.0, 2.0)
        out, nb = reverse_step_em(PLUS[None], cfg, b, np.array([0.0]))
        np.testing.assert_array_equal(out[0], PLUS)
        assert nb.x[0] == pytest.approx(2.0 * (1 - 0.1))

    def test_exact_step_uses_bridge_increment(self):
        cfg = ChannelConfig("Y", "conserving", p=0.2, dt=0.1)
        b = BridgeState(np.array([0.4 + 0j]), 1.2, 2.0)
        out, nb = reverse_step_exact(PLUS[None], cfg, b, np.array([0.03]))
        dX = (nb.x - b.x).real[0]
        ref = expm(math.sqrt(cfg.p) * dX * dense_L(cfg)) @ PLUS
        np.testing.assert_allclose(out[0], ref, atol=1e-14)


class TestReverseExact:
    def test_x_equals_w(self):
        cfg = ChannelConfig(p=0.2)
        np.testing.assert_allclose(reverse_exact(PLUS, cfg, 0.8, 0.8, 1.0), forward_exact(PLUS, cfg, 0.8, 1.0))

    @pytest.mark.parametrize("mode", MODES)
    def test_terminal_recovers(self, mode):
        cfg = ChannelConfig("XZ", mode, p=0.2)
        psi0 = random_states(0, [0], 2)[0]
        assert fidelity(reverse_exact(psi0, cfg, 0.0, 1.3, 2.0), psi0) == pytest.approx(1.0, abs=1e-14)

    @given(st.floats(-3, 3), st.floats(-3, 3), st.sampled_from(MODES))
    def test_operator_product_oracle(self, X, W, mode):
        cfg = ChannelConfig("X", mode, p=0.2)
        Lm = dense_L(cfg)
        t = 1.4
        F = expm(cfg.drift_rate * t * np.eye(2) + math.sqrt(cfg.p) * W * Lm)
        R = expm(math.sqrt(cfg.p) * (X - W) * Lm)
        ref = R @ F @ PLUS
        np.testing.assert_allclose(reverse_exact(PLUS, cfg, X, W, t), ref, atol=1e-12 * max(1, np.abs(ref).max()))


class TestRunForward:
    def test_p_zero(self):
        res = run_forward(ChannelConfig(p=0.0, T=0.1, dt=1e-3), PLUS)
        np.testing.assert_allclose(res.states, np.broadcast_to(PLUS, res.states.shape), atol=1e-15)
        assert len(res.states) == res.record.steps + 1

    @pytest.mark.parametrize("mode", MODES)
    def test_exact_matches_closed_form(self, mode):
        cfg = ChannelConfig("XZ", mode, p=0.2, T=1.0, dt=1e-3)
        psi0 = random_states(1, [0], 2)[0]
        res = run_forward(cfg, psi0, 0)
        ref = forward_exact(psi0, cfg, res.record.W[0], cfg.T)
        np.testing.assert_allclose(res.terminal, normalize(ref), atol=1e-10)
        assert res.log_norm[-1] == pytest.approx(math.log(np.linalg.norm(ref)), abs=1e-10)

    def test_conserving_exact_preserves_norm(self):
        res = run_forward(ChannelConfig("Y", "conserving", p=0.3, T=1.0, dt=1e-3), PLUS, [0, 1, 2])
        assert np.abs(res.log_norm).max() < 1e-12

    def test_conserving_em_norm_drift_order_dt(self):
        dt = 1e-3
        res = run_forward(ChannelConfig("Y", "conserving", p=0.3, T=0.1, dt=dt, stepper="em"), PLUS, [0, 1])
        per_step = np.abs(np.diff(res.log_norm, axis=-1))
        assert per_step.max() < 10 * dt
        assert per_step.mean() > 0.01 * dt

    def test_batch_equals_single(self):
        cfg = ChannelConfig(p=0.2, T=0.2, dt=1e-3)
        batch = run_forward(cfg, PLUS, [3, 7])
        single = run_forward(cfg, PLUS, 7)
        np.testing.assert_array_equal(batch.states[1], single.states)

    def test_em_converges(self):
        # strong order of Euler-Maruyama is exactly 1/2, so check consistency with it
        dts = np.array([4e-3, 2e-3, 1e-3, 5e-4])
        errs = []
        for dt in dts:
            cfg = ChannelConfig("X", "dissipative", p=0.2, T=1.0, dt=dt, stepper="em")
            res = run_forward(cfg, ZERO, np.arange(200))
            ref = forward_exact(ZERO, cfg, res.record.W[:, 0], 1.0)
            em = res.terminal * np.exp(res.log_norm[:, -1])[:, None]
            errs.append(np.mean(np.linalg.norm(em - ref, axis=-1)))
        assert np.all(np.diff(errs) < 0)
        order = np.polyfit(np.log(dts), np.log(errs), 1)[0]
        assert abs(order - 0.5) < 0.1


class TestRunReverse:
    @pytest.mark.parametrize("word", ["X", "Z", "XY", "ZZ"])
    @pytest.mark.parametrize("mode", MODES)
    def test_almost_sure_recovery(self, word, mode):
        cfg = ChannelConfig(word, mode, p=0.2, T=1.0, dt=1e-3)
        traj = np.arange(20)
        psi0 = random_states(5, traj, len(word))
        cyc = run_cycle(cfg, psi0, traj)
        assert np.min(cyc.terminal_fidelity) >= 1 - 1e-9

    def test_reference_scenario(self):
        cyc = run_cycle(ChannelConfig("X", "dissipative", p=0.2, T=1.0, dt=1e-3), ZERO, 0)
        assert cyc.terminal_fidelity == pytest.approx(1.0, abs=1e-9)
        assert cyc.reverse.bridge[-1] == 0.0

    def test_no_noise_constant(self):
        cfg = ChannelConfig(p=0.0, T=0.5, dt=1e-2)
        res = run_reverse(cfg, PLUS, 0.0, 0)
        np.testing.assert_allclose(res.states, np.broadcast_to(PLUS, res.states.shape), atol=1e-15)

    def test_reverse_never_reads_psi0(self):
        cfg = ChannelConfig(p=0.2, T=0.3, dt=1e-3)
        a = run_reverse(cfg, PLUS, 0.4, 2, psi0=ZERO)
        b = run_reverse(cfg, PLUS, 0.4, 2)
        np.testing.assert_array_equal(a.states, b.states)

    def test_detector_record_breaks_time_reversal(self):
        # the signal-carrying reverse record shifts the dissipative marginals
        n = 2000
        cfg = ChannelConfig("X", "dissipative", p=0.2, T=1.0, dt=1e-3, reverse_record="detector")
        fid = run_cycle(cfg, ZERO, np.arange(n)).fidelity_to(ZERO)
        assert ks_two_sample(fid[:, 500], fid[:, 1500]).reject
        assert np.min(fid[:, -1]) >= 1 - 1e-9

    def test_detector_same_as_innovation_when_conserving(self):
        kw = dict(pauli="X", mode="conserving", p=0.2, T=0.2, dt=1e-3)
        a = run_cycle(ChannelConfig(**kw), PLUS, [0, 1])
        b = run_cycle(ChannelConfig(reverse_record="detector", **kw), PLUS, [0, 1])
        np.testing.assert_array_equal(a.reverse.states, b.reverse.states)


class TestSME:
    def test_zero_bridge_is_forward_unravelling(self):
        cfg = ChannelConfig("X", "dissipative", p=0.2, dt=1e-2)
        rho = project_density(PLUS + 0.3 * ZERO)
        b = BridgeState(np.zeros(1, dtype=complex), 1.0, 2.0)
        dW = 0.07
        out, _ = sme_reverse_step(rho[None], cfg, b, np.array([dW]))
        L = dense_L(cfg)
        ref = rho + cfg.p * (L @ rho @ L - rho) * cfg.dt + math.sqrt(cfg.p) * dW * (L @ rho + rho @ L)
        np.testing.assert_allclose(out[0], ref, atol=1e-15)

    @pytest.mark.parametrize("mode", MODES)
    def test_euler_ito_consistency(self, mode):
        # |phi'><phi'| - SME(rho) = p L rho L^dag (dX^2 - dt) + O(dt dX)
        cfg = ChannelConfig("XZ", mode, p=0.2, dt=1e-3)
        phi = random_states(2, [0], 2)
        rho = phi[:, :, None] * phi[:, None, :].conj()
        b = BridgeState(np.array([0.3 + 0j]), 1.2, 2.0)
        dW = np.array([0.021])
        pure, nb = reverse_step_em(phi, cfg, b, dW)
        sme, _ = sme_reverse_step(rho, cfg, b, dW)
        dX = (nb.x - b.x).real[0]
        L = dense_L(cfg)
        anti = L @ rho[0] + rho[0] @ L.conj().T
        pred = (
            cfg.p * (dX**2 - cfg.dt) * L @ rho[0] @ L.conj().T
            - 0.5 * cfg.p * cfg.dt * math.sqrt(cfg.p) * dX * anti
            + 0.25 * (cfg.p * cfg.dt) ** 2 * rho[0]
        )
        outer = pure[0][:, None] * pure[0][None, :].conj()
        np.testing.assert_allclose(outer - sme[0], pred, atol=1e-15)

    @given(st.integers(0, 1000))
    @settings(max_examples=25)
    def test_euler_preserves_hermiticity(self, seed):
        cfg = ChannelConfig("Y", "dissipative", p=0.3, dt=1e-2)
        rng = np.random.default_rng(seed)
        A = rng.standard_normal((2, 2)) + 1j * rng.standard_normal((2, 2))
        rho = (A @ A.conj().T)[None]
        out, _ = sme_reverse_step(rho, cfg, BridgeState(np.array([0.5 + 0j]), 1.0, 2.0), np.array([0.1]))
        np.testing.assert_allclose(out, np.conj(np.swapaxes(out, -1, -2)), atol=1e-15)

    @pytest.mark.parametrize("step", [sme_reverse_step, sme_reverse_step_exact])
    def test_maximally_mixed_fixed_point_conserving(self, step):
        cfg = ChannelConfig("X", "conserving", p=0.2, dt=1e-2)
        rho = np.eye(2)[None] / 2
        out, _ = step(rho, cfg, BridgeState(np.array([0.5 + 0j]), 1.0, 2.0), np.array([0.1]))
        np.testing.assert_allclose(out / np.trace(out[0]), rho, atol=1e-15)

    @pytest.mark.parametrize("mode", MODES)
    def test_exact_sme_tracks_pure_state(self, mode):
        cfg = ChannelConfig("XZ", mode, p=0.2, T=0.5, dt=1e-3)
        traj = np.arange(4)
        psi0 = random_states(8, traj, 2)
        fwd = run_forward(cfg, psi0, traj)
        W_T = fwd.record.W[:, 0]
        pure = run_reverse(cfg, fwd.terminal, W_T, traj)
        sme = run_sme_reverse(cfg, project_density(fwd.terminal), W_T, traj)
        dist = trace_distance(sme.states, project_density(pure.states))
        assert dist.max() < 1e-12
        np.testing.assert_array_equal(sme.record.increments, pure.record.increments)

    def test_euler_sme_converges_to_pure(self):
        errs = []
        for dt in (1e-2, 1e-3):
            cfg = ChannelConfig("X", "dissipative", p=0.2, T=1.0, dt=dt)
            traj = np.arange(20)
            fwd = run_forward(cfg, ZERO, traj)
            W_T = fwd.record.W[:, 0]
            pure = run_reverse(cfg, fwd.terminal, W_T, traj)
            sme = run_sme_reverse(cfg, project_density(fwd.terminal), W_T, traj, stepper="em")
            errs.append(np.mean(trace_distance(sme.states[:, -1], project_density(pure.states[:, -1]))))
        assert errs[1] < errs[0]
        assert errs[1] < 0.05

    def test_reverse_bridge_start(self):
        b = reverse_bridge(ChannelConfig(T=1.5), np.array([0.2, -0.1]))
        np.testing.assert_array_equal(b.x, [0.2, -0.1])
        assert (b.t, b.t_end) == (1.5, 3.0)

    def test_pauli_dense_consistency(self):
        cfg = ChannelConfig("YX", "conserving")
        np.testing.assert_allclose(dense_L(cfg), 1j * pauli_matrix("YX"))
