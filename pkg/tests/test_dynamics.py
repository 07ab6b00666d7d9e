import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from eqhs.dynamics import (ControlPolicy, PackConfig, PolicyMode, SocState,
                           check_proportional_stability, control_step,
                           imbalance, simulate_batch, step)
from eqhs.hypergraph import (EdgeKind, Hyperedge, Topology, TopologyKind,
                             incidence_matrix, make_topology)


def pack8(**kw):
    return PackConfig.uniform(8, 3.1, m=2, **kw)


def single_cc_topology(n=2, limit=0.5):
    return Topology(n, (Hyperedge(EdgeKind.CC, (1,), (2,), limit),))


class TestPackConfig:
    def test_d_diag_formula(self):
        pack = PackConfig(3, (3.1, 2.0, 4.0), coulombic_efficiency=0.9,
                          sample_period=2.0)
        expect = 0.9 * 2.0 / (3600.0 * np.array([3.1, 2.0, 4.0]))
        assert np.allclose(pack.d_diag(), expect, rtol=0, atol=0)
        assert pack.d_smallest == 0.9 * 2.0 / (3600.0 * 4.0)

    def test_validation(self):
        with pytest.raises(ValueError):
            PackConfig(2, (3.1,))
        with pytest.raises(ValueError):
            PackConfig(2, (3.1, -1.0))
        with pytest.raises(ValueError):
            PackConfig(2, (3.1, 3.1), coulombic_efficiency=1.5)
        with pytest.raises(ValueError):
            PackConfig(2, (3.1, 3.1), sample_period=0.0)
        with pytest.raises(ValueError):
            PackConfig(4, (1.0,) * 4, m=3)


class TestControlStep:
    def test_cc_discharges_the_higher_cell(self):
        pack = PackConfig.uniform(2, 3.1)
        u = control_step(ControlPolicy.sign_constant(0.5), single_cc_topology(),
                         np.array([0.6, 0.4]), pack)
        assert u.shape == (1,)
        assert u[0] == 0.5

    def test_balanced_state_gives_zero_current(self):
        pack = PackConfig.uniform(2, 3.1)
        u = control_step(ControlPolicy.sign_constant(0.5), single_cc_topology(),
                         SocState(0, np.array([0.5, 0.5])), pack)
        assert u[0] == 0.0

    def test_proportional_cpc_hand_value(self):
        topo = Topology(4, (Hyperedge(EdgeKind.CPC, (1,), (2, 3, 4), 10.0),))
        pack = PackConfig.uniform(4, 3.1)
        policy = ControlPolicy.proportional(1.0)
        u = control_step(policy, topo, np.array([0.7, 0.5, 0.5, 0.5]), pack)
        assert u[0] == pytest.approx(0.7 * 3 / 4 - 1.5 * 1 / 4, abs=1e-15)

    def test_edge_current_limit_caps_the_policy_magnitude(self):
        pack = PackConfig.uniform(2, 3.1)
        u = control_step(ControlPolicy.sign_constant(2.0),
                         single_cc_topology(limit=0.5),
                         np.array([0.9, 0.1]), pack)
        assert u[0] == 0.5

    def test_rejects_nan_state(self):
        pack = PackConfig.uniform(2, 3.1)
        with pytest.raises(ValueError, match="finite"):
            control_step(ControlPolicy.sign_constant(0.5), single_cc_topology(),
                         np.array([np.nan, 0.4]), pack)

    def test_switched_controls_exactly_one_equalizer(self):
        topo = make_topology(TopologyKind.SWITCH_CPC, 4)
        pack = PackConfig.uniform(4, 3.1)
        u = control_step(ControlPolicy.sign_constant(0.5), topo,
                         np.array([0.5, 0.8, 0.5, 0.5]), pack)
        assert u.shape == (1,)
        assert u[0] > 0.0
        # the weighted dot may keep one ulp of rounding at exact balance, and
        # the overshoot cap then scales the current down to physically zero
        balanced = control_step(ControlPolicy.sign_constant(0.5), topo,
                                np.full(4, 0.6), pack)
        assert abs(balanced[0]) <= 1e-9


class TestStep:
    def test_identity_with_zero_inputs(self):
        pack = PackConfig.uniform(2, 3.1)
        C = incidence_matrix(single_cc_topology())
        x = np.array([0.6, 0.4])
        x1, clamped = step(pack, C, x, [0.0])
        assert np.array_equal(x1, x)
        assert not clamped

    def test_hand_coulomb_count(self):
        # 0.5 A for 1 s on 3.1 Ah moves 0.5 / (3600 * 3.1) of SOC
        pack = PackConfig.uniform(2, 3.1)
        C = incidence_matrix(single_cc_topology())
        delta = 0.5 / (3600.0 * 3.1)
        x1, _ = step(pack, C, np.array([0.6, 0.4]), [0.5])
        assert x1[0] == pytest.approx(0.6 - delta, abs=1e-18)
        assert x1[1] == pytest.approx(0.4 + delta, abs=1e-18)
        assert delta == pytest.approx(4.4803e-5, abs=1e-9)

    def test_external_current_discharges_all_cells(self):
        pack = PackConfig.uniform(2, 3.1)
        C = incidence_matrix(single_cc_topology())
        delta = 0.5 / (3600.0 * 3.1)
        x1, _ = step(pack, C, np.array([0.6, 0.4]), [0.0], external_current=0.5)
        assert np.allclose(x1, [0.6 - delta, 0.4 - delta], rtol=0, atol=1e-18)

    def test_clamp_flag(self):
        pack = PackConfig.uniform(2, 0.001, sample_period=3600.0)
        C = incidence_matrix(single_cc_topology(limit=10.0))
        x1, clamped = step(pack, C, np.array([0.9, 0.1]), [10.0])
        assert clamped
        assert x1[0] == 0.0 and x1[1] == 1.0

    def test_dimension_mismatch(self):
        pack = PackConfig.uniform(2, 3.1)
        C = incidence_matrix(single_cc_topology())
        with pytest.raises(ValueError):
            step(pack, C, np.array([0.5, 0.5, 0.5]), [0.0])
        with pytest.raises(ValueError):
            step(pack, C, np.array([0.5, 0.5]), [0.0, 0.0])


class TestImbalance:
    def test_balanced(self):
        assert imbalance([0.5, 0.5, 0.5]) == 0.0

    def test_two_cells(self):
        assert imbalance([0.6, 0.4]) == pytest.approx(np.sqrt(0.02) / 2, abs=1e-16)

    def test_four_cells_hand_value(self):
        # devs from the mean 0.5375: [0.0825, -0.0575, 0.0925, -0.1175]
        sumsq = 0.0825**2 + 0.0575**2 + 0.0925**2 + 0.1175**2
        assert imbalance([0.62, 0.48, 0.63, 0.42]) == pytest.approx(
            np.sqrt(sumsq) / 4, abs=1e-12)

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            imbalance([])

    @given(st.lists(st.floats(0, 1, allow_nan=False), min_size=1, max_size=16))
    def test_nonnegative_and_zero_iff_equal(self, values):
        imb = imbalance(values)
        assert imb >= 0.0
        if len(set(values)) == 1:
            assert imb == 0.0


class TestSignEquivalence:
    """sign(c^T x) must equal the sign of the SOC difference each edge acts on."""

    @pytest.mark.parametrize("kind", list(EdgeKind))
    def test_thousand_random_states(self, kind):
        rng = np.random.default_rng(100 + list(EdgeKind).index(kind))
        n = 8
        if kind is EdgeKind.CC:
            e = Hyperedge(kind, (2,), (5,), 1.0)
            paper_arg = lambda x: x[1] - x[4]
        elif kind is EdgeKind.MM:
            e = Hyperedge(kind, (1, 2, 3, 4), (5, 6, 7, 8), 1.0)
            paper_arg = lambda x: x[:4].mean() - x[4:].mean()
        elif kind is EdgeKind.CPC:
            e = Hyperedge(kind, (3,), (1, 2, 4, 5, 6, 7, 8), 1.0)
            paper_arg = lambda x: x[2] - x.mean()
        else:
            e = Hyperedge(kind, (2,), (1, 3, 4), 1.0)
            paper_arg = lambda x: x[1] - x[:4].mean()
        col = np.array([float(w) for w in e.column_fractions(n)])
        for _ in range(1000):
            x = rng.uniform(0.0, 1.0, n)
            lhs = np.sign(col @ x)
            rhs = np.sign(paper_arg(x))
            assert lhs == rhs or abs(paper_arg(x)) < 1e-12


class TestConservation:
    def test_mean_invariant_per_step_equal_capacity(self):
        pack = pack8()
        for kind, m in [(TopologyKind.SERIES_CC, None), (TopologyKind.CPC, None),
                        (TopologyKind.MODULE_CPC, 2)]:
            topo = make_topology(kind, 8, m, current_limit=0.5)
            C = incidence_matrix(topo)
            rng = np.random.default_rng(3)
            x = rng.uniform(0.3, 0.9, 8)
            u = control_step(ControlPolicy.sign_constant(0.5), topo, x, pack)
            x1, _ = step(pack, C, x, u)
            assert abs(x1.mean() - x.mean()) <= 1e-12

    def test_total_charge_invariant_unequal_capacity(self):
        rng = np.random.default_rng(9)
        caps = tuple(rng.uniform(2.0, 5.0, 8))
        pack = PackConfig(8, caps, m=2)
        topo = make_topology(TopologyKind.MODULE_CC, 8, 2, current_limit=0.5)
        X0 = rng.uniform(0.3, 0.9, (16, 8))
        res = simulate_batch(pack, topo, ControlPolicy.sign_constant(0.5), X0,
                             epsilon=1e-12, max_steps=20_000,
                             check_convergence=False)
        q = np.array(caps)
        drift = np.abs(res.soc_final @ q - X0 @ q) / np.abs(X0 @ q)
        assert drift.max() <= 1e-9

    def test_mean_drift_over_many_steps(self):
        pack = pack8()
        topo = make_topology(TopologyKind.LAYER_CC, 8, current_limit=0.5)
        X0 = np.random.default_rng(11).uniform(0.3, 0.9, (16, 8))
        res = simulate_batch(pack, topo, ControlPolicy.sign_constant(0.5), X0,
                             epsilon=1e-12, max_steps=20_000,
                             check_convergence=False)
        assert np.abs(res.soc_final.mean(axis=1) - X0.mean(axis=1)).max() <= 1e-9


class TestProportional:
    def test_policy_requires_gains(self):
        with pytest.raises(ValueError, match="gains"):
            ControlPolicy(PolicyMode.PROPORTIONAL)

    def test_stability_guard(self):
        pack = pack8()
        topo = make_topology(TopologyKind.LAYER_CC, 8, current_limit=1e9)
        with pytest.raises(ValueError, match="unstable"):
            ControlPolicy.proportional(1e9, pack, topo)
        margin = check_proportional_stability(
            ControlPolicy.proportional(10.0), pack, topo)
        assert 0.0 < margin < 1.0

    def test_closed_loop_fixes_the_ones_vector(self):
        pack = pack8()
        topo = make_topology(TopologyKind.MODULE_CC, 8, 2, current_limit=1e9)
        C = incidence_matrix(topo)
        gain = 20.0
        A = np.eye(8) - (pack.d_diag()[:, None] * C) @ (gain * C.T)
        assert np.abs(A @ np.ones(8) - 1.0).max() <= 1e-12

    def test_imbalance_nonincreasing(self):
        pack = pack8()
        topo = make_topology(TopologyKind.SERIES_CC, 8, current_limit=1e9)
        policy = ControlPolicy.proportional(40.0, pack, topo)
        C = incidence_matrix(topo)
        x = np.random.default_rng(2).uniform(0.4, 0.8, 8)
        prev = imbalance(x)
        for _ in range(500):
            u = control_step(policy, topo, x, pack)
            x, _ = step(pack, C, x, u)
            now = imbalance(x)
            assert now <= prev + 1e-15
            prev = now


class TestAntiChatter:
    @pytest.mark.parametrize("kind,m", [(TopologyKind.SERIES_CC, None),
                                        (TopologyKind.CPC, None),
                                        (TopologyKind.MODULE_CPC, 2)])
    def test_imbalance_stays_below_tolerance_after_crossing(self, kind, m):
        pack = pack8()
        topo = make_topology(kind, 8, m, current_limit=0.5)
        policy = ControlPolicy.sign_constant(0.5)
        C = incidence_matrix(topo)
        eps = 1e-3
        x = np.random.default_rng(4).uniform(0.4, 0.8, 8)
        crossed = False
        for _ in range(12_000):
            u = control_step(policy, topo, x, pack)
            x, _ = step(pack, C, x, u)
            if crossed:
                assert imbalance(x) <= eps
            elif imbalance(x) <= eps:
                crossed = True
        assert crossed


class TestBatchEngine:
    def test_matches_scalar_simulation_step_counts(self):
        from eqhs.analysis import simulate_until_balanced
        pack = pack8()
        policy = ControlPolicy.sign_constant(0.5)
        rng = np.random.default_rng(21)
        for kind in TopologyKind:
            topo = make_topology(kind, 8, 2, current_limit=0.5)
            X0 = rng.uniform(0.4, 0.8, (5, 8))
            res = simulate_batch(pack, topo, policy, X0, 1e-3, 200_000)
            for i in range(5):
                run = simulate_until_balanced(pack, topo, policy, X0[i], 1e-3,
                                              max_steps=200_000)
                assert run.converged == res.converged[i]
                assert run.steps == res.te_steps[i]

    def test_already_balanced_rows_report_zero(self):
        pack = pack8()
        topo = make_topology(TopologyKind.SERIES_CC, 8, current_limit=0.5)
        X0 = np.vstack([np.full(8, 0.6), np.linspace(0.4, 0.8, 8)])
        res = simulate_batch(pack, topo, ControlPolicy.sign_constant(0.5),
                             X0, 1e-3, 100_000)
        assert res.te_steps[0] == 0
        assert res.te_steps[1] > 0

    def test_compaction_schedule_only_perturbs_rounding(self):
        # different schedules re-block the batched products, which may move
        # results by ulps; crossing steps and states must agree to far better
        # than any physical tolerance
        pack = pack8()
        topo = make_topology(TopologyKind.CPC, 8, current_limit=0.5)
        X0 = np.random.default_rng(33).uniform(0.4, 0.8, (32, 8))
        a = simulate_batch(pack, topo, ControlPolicy.sign_constant(0.5),
                           X0, 1e-3, 100_000, compact_every=64)
        b = simulate_batch(pack, topo, ControlPolicy.sign_constant(0.5),
                           X0, 1e-3, 100_000, compact_every=1 << 60)
        assert np.array_equal(a.te_steps, b.te_steps)
        assert np.abs(a.soc_final - b.soc_final).max() <= 1e-12

    def test_fixed_settings_are_bit_reproducible(self):
        pack = pack8()
        topo = make_topology(TopologyKind.MODULE_CPC, 8, 2, current_limit=0.5)
        X0 = np.random.default_rng(34).uniform(0.4, 0.8, (32, 8))
        a = simulate_batch(pack, topo, ControlPolicy.sign_constant(0.5),
                           X0, 1e-3, 100_000)
        b = simulate_batch(pack, topo, ControlPolicy.sign_constant(0.5),
                           X0, 1e-3, 100_000)
        assert np.array_equal(a.te_steps, b.te_steps)
        assert np.array_equal(a.soc_final, b.soc_final)
