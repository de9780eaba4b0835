import csv
import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from revdiff.channel import ChannelConfig, run_cycle
from revdiff.depolarizing import DepolarizingConfig
from revdiff.ensemble import (
    QUANTILES,
    EnsembleSpec,
    FidelityFlow,
    depol_scaling,
    initial_states,
    ks_two_sample,
    read_trajectories,
    run_ensemble,
    scaling_fit,
    time_reversal_ks,
)
from revdiff.gates import GateConfig
from revdiff.pauli import fidelity

SMALL = ChannelConfig(pauli="X", p=0.2, T=0.05, dt=1e-3)


class TestStatistics:
    def test_ks_identical(self):
        x = np.linspace(0, 1, 50)
        res = ks_two_sample(x, x)
        assert res.statistic == 0 and not res.reject

    def test_ks_shifted(self):
        rng = np.random.default_rng(0)
        res = ks_two_sample(rng.standard_normal(500), rng.standard_normal(500) + 3)
        assert res.reject and res.pvalue < 1e-10

    def test_ks_empty(self):
        with pytest.raises(ValueError):
            ks_two_sample([], [1.0])

    @pytest.mark.parametrize("power", [2, 3])
    def test_scaling_fit_exact_power(self, power):
        x = np.array([0.05, 0.1, 0.2, 0.4])
        fit = scaling_fit(list(zip(x, 0.7 * x**power)))
        assert fit.slope == pytest.approx(power, abs=1e-12)
        assert math.exp(fit.intercept) == pytest.approx(0.7)
        assert fit.residual < 1e-20

    def test_scaling_fit_rejects(self):
        with pytest.raises(ValueError):
            scaling_fit([(0.1, 1e-3), (0.2, 0.0), (0.4, 1e-2)])
        with pytest.raises(ValueError):
            scaling_fit([(0.1, 1e-3), (0.2, 1e-2)])


class TestFlow:
    def test_single_trajectory(self):
        t = np.linspace(0, 1, 11)
        f = np.linspace(1, 0.5, 11)
        flow = FidelityFlow.from_samples(t, f[None, :])
        np.testing.assert_allclose(flow.mean, f)
        for q in QUANTILES:
            np.testing.assert_allclose(flow.quantile(q), f)

    @given(st.integers(0, 1000))
    def test_quantile_order_and_mass(self, seed):
        fid = np.random.default_rng(seed).uniform(0, 1, (40, 6))
        fid[:, 0] = 1.0
        flow = FidelityFlow.from_samples(np.arange(6), fid)
        assert np.all(np.diff(flow.quantiles, axis=0) >= 0)
        np.testing.assert_array_equal(flow.histograms.sum(axis=1), 40)
        assert flow.histograms[0, -1] == 40

    def test_nan_drops_out(self):
        fid = np.array([[1.0, 0.9, np.nan], [1.0, 0.8, 0.7]])
        flow = FidelityFlow.from_samples([0, 1, 2], fid)
        np.testing.assert_array_equal(flow.counts, [2, 2, 1])
        assert flow.mean[2] == pytest.approx(0.7)


class TestSpec:
    def test_seed_replaced(self):
        spec = EnsembleSpec("channel", SMALL, base_seed=9)
        assert spec.config.seed == 9

    @pytest.mark.parametrize(
        "kwargs",
        [
            {"kind": "bogus"},
            {"segment": "backward"},
            {"n_traj": 0},
            {"time_grid": [0.0, 0.2]},
            {"kind": "gate", "config": GateConfig(T=0.05), "segment": "forward"},
        ],
    )
    def test_rejects(self, kwargs):
        args = {"kind": "channel", "config": SMALL} | kwargs
        with pytest.raises(ValueError):
            EnsembleSpec(**args)

    def test_initial_states(self):
        spec = EnsembleSpec("channel", ChannelConfig(pauli="XZ"), initial="haar")
        psi = initial_states(spec, np.arange(3))
        assert psi.shape == (3, 4)
        np.testing.assert_allclose(np.linalg.norm(psi, axis=1), 1)
        explicit = EnsembleSpec("channel", SMALL, initial=[[0, 0], [0, 1]])
        np.testing.assert_allclose(initial_states(explicit, np.arange(2)), [[0, 1j], [0, 1j]])


class TestRunEnsemble:
    def test_matches_engine(self):
        res = run_ensemble(EnsembleSpec("channel", SMALL, n_traj=5, base_seed=3))
        cyc = run_cycle(ChannelConfig(pauli="X", p=0.2, T=0.05, dt=1e-3, seed=3), np.array([1, 0]), np.arange(5))
        np.testing.assert_allclose(res.terminal, cyc.terminal_fidelity, atol=1e-14)

    def test_worker_count_invariant(self):
        spec = EnsembleSpec("channel", SMALL, n_traj=600, initial="haar", time_grid=list(np.linspace(0, 0.1, 11)))
        a = run_ensemble(spec, workers=1)
        b = run_ensemble(spec, workers=3)
        np.testing.assert_array_equal(a.fidelities, b.fidelities)
        np.testing.assert_array_equal(a.states, b.states)
        assert a.summary == b.summary

    def test_cycle_summary(self):
        res = run_ensemble(EnsembleSpec("channel", SMALL, n_traj=50))
        assert set(res.summary["time_reversal_ks"]) == {"0.012", "0.025", "0.037"}
        assert res.summary["deficit_mean"] < 1e-12

    def test_forward_segment(self):
        res = run_ensemble(EnsembleSpec("depolarizing", DepolarizingConfig(T=0.05), n_traj=3, segment="forward"))
        assert res.times[-1] == pytest.approx(0.05)
        assert "time_reversal_ks" not in res.summary

    def test_gate_flow_targets_rotated_state(self):
        res = run_ensemble(EnsembleSpec("gate", GateConfig(theta=1.0, T=0.05), n_traj=4))
        np.testing.assert_allclose(res.fidelities[:, -1], 1, atol=1e-9)
        assert res.summary["max_hamiltonian"] > 0

    def test_teleport_summary(self):
        res = run_ensemble(EnsembleSpec("teleport", ChannelConfig(pauli="X", p=0.2, T=0.02, dt=1e-3), n_traj=4))
        tel = res.summary["teleport"]
        assert tel["failed_runs"] + tel["completed_runs"] == 4
        assert tel["ledger"]["steps"] > 0

    def test_sme_consistent(self):
        res = run_ensemble(EnsembleSpec("sme", ChannelConfig(pauli="Z", p=0.2, T=0.05, dt=1e-3), n_traj=5, initial="haar"))
        assert res.summary["sme_trace_distance_max"] < 1e-6

    def test_time_reversal_ks_keys(self):
        fid = np.ones((10, 9))
        out = time_reversal_ks(fid, 4, [1, 2])
        assert set(out) == {"1", "2"} and not out["1"]["reject"]


class TestPersistence:
    def test_round_trip(self, tmp_path):
        spec = EnsembleSpec("channel", SMALL, n_traj=3, initial="haar", time_grid=[0.0, 0.05, 0.1])
        res = run_ensemble(spec, out=tmp_path)
        recs = read_trajectories(tmp_path / "trajectories.jsonl")
        assert [r["trajectory"] for r in recs] == [0, 1, 2]
        for i, r in enumerate(recs):
            np.testing.assert_array_equal(r["states"], res.states[i])
            np.testing.assert_array_equal(r["increments"], res.increments[i])
            np.testing.assert_array_equal(r["times"], [0.0, 0.05, 0.1])
            assert fidelity(r["states"][-1], r["states"][0]) == pytest.approx(1, abs=1e-12)

    def test_output_files(self, tmp_path):
        run_ensemble(EnsembleSpec("channel", SMALL, n_traj=2, time_grid=[0.0, 0.1]), out=tmp_path)
        with open(tmp_path / "flow.csv") as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["t", "mean", "q05", "q25", "q50", "q75", "q95"]
        assert len(rows) == 3
        summary = json.loads((tmp_path / "summary.json").read_text())
        assert summary["n_traj"] == 2 and summary["config"]["pauli"] == "X"


class TestScalingExperiment:
    def test_depol_scaling_shape(self):
        out = depol_scaling([0.05, 0.1, 0.2], T=0.25, dt=1e-3, n_traj=20)
        assert out["pT"] == pytest.approx([0.0125, 0.025, 0.05])
        assert all(d > 0 for d in out["deficits"])
        assert out["fit"]["slope"] > 1
