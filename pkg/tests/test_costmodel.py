import math

import pytest
from hypothesis import given, strategies as st

from moeplan.config import (CalibrationCoefficients, ClusterConfig,
                            ModelHyperparams, WorkloadSpec)
from moeplan.costmodel import (LinkClass, a2a_cost, ag_cost, ar_cost,
                               comm_latency, comm_terms, compute_latency,
                               indicators, lambda_ep_baseline, lambda_ep_terms,
                               lambda_mix, lambda_mix_terms, p2p_cost,
                               queuing_delay, rs_cost, svc_latency)
from moeplan.errors import SaturationError
from moeplan.strategy import make_strategy, parse_strategy

LINK = LinkClass(alpha=0.0, beta=1e9)

sizes = st.floats(min_value=0, max_value=1e12, allow_nan=False)
degrees = st.integers(min_value=1, max_value=1024)


class TestCollectiveCosts:
    def test_degree_one_is_free(self):
        for fn in (rs_cost, ag_cost, a2a_cost):
            assert fn(12345.0, 1, LINK) == 0.0
        assert ar_cost(12345.0, 1, LINK) == 0.0

    def test_rs_hand_arithmetic(self):
        # 8192 B over 4 ranks at 1 GB/s: one round moving 2048 B
        assert rs_cost(8192, 4, LINK) == pytest.approx(2.048e-6)
        assert ag_cost(8192, 4, LINK) == pytest.approx(2.048e-6)

    def test_rs_halves_when_degree_doubles(self):
        assert rs_cost(8192, 8, LINK) == pytest.approx(rs_cost(8192, 4, LINK) / 2)

    def test_ar_literal_hand_arithmetic(self):
        # literal composition: RS(4096, 2) + AG(4096, 2) = 2 x 2048 B rounds
        assert ar_cost(8192, 2, LINK, literal=True) == pytest.approx(4.096e-6)

    def test_ar_nonliteral_uses_undivided_size(self):
        assert ar_cost(8192, 2, LINK, literal=False) == pytest.approx(
            rs_cost(8192, 2, LINK) + ag_cost(8192, 2, LINK))

    @given(sizes, degrees)
    def test_ar_is_rs_plus_ag_identically(self, size, d):
        got = ar_cost(size, d, LINK, literal=True)
        assert got == rs_cost(size / d, d, LINK) + ag_cost(size / d, d, LINK)

    @given(sizes, degrees)
    def test_ar_bounded_by_twice_rs(self, size, d):
        assert ar_cost(size, d, LINK, literal=True) <= 2 * rs_cost(size, d, LINK) + 1e-18

    def test_a2a_hand_arithmetic(self):
        # 3 rounds of 256 B each
        assert a2a_cost(1024, 4, LINK) == pytest.approx(768e-9)

    def test_a2a_increasing_in_degree(self):
        costs = [a2a_cost(4096, d, LINK) for d in (2, 4, 8, 16)]
        assert costs == sorted(costs)

    def test_a2a_piecewise_linear_in_size(self):
        assert a2a_cost(2048, 4, LINK) == pytest.approx(2 * a2a_cost(1024, 4, LINK))

    def test_p2p_hand_arithmetic(self):
        link = LinkClass(alpha=1e-6, beta=1e9)
        assert p2p_cost(1e6, link) == pytest.approx(1.001e-3)
        assert p2p_cost(0, LINK) == 0.0

    @given(sizes, degrees)
    def test_all_nonnegative(self, size, d):
        link = LinkClass(alpha=1e-6, beta=1e9)
        for fn in (rs_cost, ag_cost, a2a_cost):
            assert fn(size, d, link) >= 0.0
        assert ar_cost(size, d, link) >= 0.0


class TestComputeLatency:
    def model(self, psi=100.0):
        return ModelHyperparams(hidden_dim=4, num_layers=1, top_k=1,
                                num_routed_experts=4, num_shared_experts=0,
                                psi_attn=psi, psi_moe=psi, psi_active=psi)

    def workload(self, b=1, s=1):
        return WorkloadSpec(batch_size=b, seq_len=s, input_len=1,
                            output_len=1, arrival_rate=0)

    def test_direct_substitution(self):
        calib = CalibrationCoefficients(compute_coeff=1e-12)
        strat = parse_strategy("TP=1, EP=1")
        assert compute_latency(strat, self.model(), self.workload(),
                               calib) == pytest.approx(1e-10)

    def test_doubling_tp_halves_tau(self):
        calib = CalibrationCoefficients(compute_coeff=1e-12)
        t1 = compute_latency(make_strategy([("TP", 1)], [("TP", 1)]),
                             self.model(), self.workload(b=4, s=4), calib)
        t2 = compute_latency(make_strategy([("TP", 2)], [("TP", 2)]),
                             self.model(), self.workload(b=4, s=4), calib)
        assert t2 == pytest.approx(t1 / 2)

    def test_doubling_dp_halves_tau(self):
        calib = CalibrationCoefficients(compute_coeff=1e-12)
        t1 = compute_latency(make_strategy([("DP", 2)], [("EP", 2)]),
                             self.model(), self.workload(b=4, s=4), calib)
        t2 = compute_latency(make_strategy([("DP", 4)], [("EP", 4)]),
                             self.model(), self.workload(b=4, s=4), calib)
        # doubling both d_DP and d_EP quarters tau: 1/d_DP and 1/d_EP factors
        assert t2 == pytest.approx(t1 / 4)

    def test_tau_literal_multiplies_by_hidden_dim(self):
        base = CalibrationCoefficients(compute_coeff=1e-12, tau_literal=False)
        lit = CalibrationCoefficients(compute_coeff=1e-12, tau_literal=True)
        strat = parse_strategy("TP=1, EP=1")
        assert compute_latency(strat, self.model(), self.workload(), lit) == \
            pytest.approx(4 * compute_latency(strat, self.model(),
                                              self.workload(), base))


class TestCommLatency:
    def setup_method(self):
        self.model = ModelHyperparams(hidden_dim=16, num_layers=2, top_k=2,
                                      num_routed_experts=8, num_shared_experts=0,
                                      psi_attn=1e4, psi_moe=1e4, psi_active=1e4)
        self.workload = WorkloadSpec(batch_size=8, seq_len=4, input_len=4,
                                     output_len=2, arrival_rate=0)
        self.cluster = ClusterConfig(2, 2, 1e-6, 1e9, 2e-6, 1e8, 1e12, 1e9)
        self.calib = CalibrationCoefficients(compute_coeff=1e-12)

    def test_degenerate_strategy_is_free(self):
        strat = parse_strategy("TP=1, EP=1")
        one = ClusterConfig(1, 1, 1e-6, 1e9, 2e-6, 1e8, 1e12, 1e9)
        assert comm_latency(strat, self.model, self.workload, one) == 0.0

    def test_branch_selection_visible_in_breakdown(self):
        # d_DP=4 vs d_EP=2: group 2, batch b/4; d_DP=2 vs d_EP=4: group 2, batch b/4
        greater = make_strategy([("DP", 4)], [("TP", 2), ("EP", 2)])
        less = make_strategy([("TP", 2), ("DP", 2)], [("EP", 4)])
        bpe = self.model.bytes_per_element
        gt = [t for t in comm_terms(greater, self.model, self.workload,
                                    self.cluster) if t["op"] == "a2a"]
        lt = [t for t in comm_terms(less, self.model, self.workload,
                                    self.cluster) if t["op"] == "a2a"]
        assert all(t["dp_ep_case"] == "dp_greater" and t["degree"] == 2 for t in gt)
        assert all(t["dp_ep_case"] == "dp_less" and t["degree"] == 2 for t in lt)
        expected = (8 / 4) * 4 * 16 * 2 * bpe
        assert all(t["size_bytes"] == pytest.approx(expected) for t in gt + lt)

    def test_full_term_by_term_recomputation(self):
        # independent recomputation of every term for TP=2 + DP=2, TP=2 + EP=2
        strat = make_strategy([("TP", 2), ("DP", 2)], [("TP", 2), ("EP", 2)])
        b, s, h, k = 8, 4, 16, 2
        bpe = 2
        intra = LinkClass(1e-6, 1e9)
        inter = LinkClass(2e-6, 1e8)
        ar_size = (b / 2) * s * h * bpe
        # both AR groups have degree 2 <= n_proc: intra scope
        expect_ar = ar_cost(ar_size, 2, intra, literal=True)
        # equal case: group d_EP=2, extent moe_tp*moe_ep=4 > n_proc=2: inter
        a2a_size = (b / 2) * s * h * k * bpe
        expect_a2a = a2a_cost(a2a_size, 2, inter)
        got = comm_latency(strat, self.model, self.workload, self.cluster)
        assert got == pytest.approx(2 * expect_ar + 2 * expect_a2a)

    def test_svc_latency_linearity_in_layers(self):
        strat = make_strategy([("TP", 2), ("DP", 2)], [("TP", 2), ("EP", 2)])
        model2 = ModelHyperparams(hidden_dim=16, num_layers=4, top_k=2,
                                  num_routed_experts=8, num_shared_experts=0,
                                  psi_attn=1e4, psi_moe=1e4, psi_active=1e4)
        one = svc_latency(strat, self.model, self.workload, self.cluster,
                          self.calib, 4)
        two = svc_latency(strat, model2, self.workload, self.cluster,
                          self.calib, 4)
        assert two == pytest.approx(2 * one)

    def test_pp_term(self):
        strat = parse_strategy("TP=2 [PP=2]")
        b, s, h, bpe = 8, 4, 16, 2
        inter = LinkClass(2e-6, 1e8)
        base = make_strategy([("TP", 2)], [("TP", 2)])
        with_pp = svc_latency(strat, self.model, self.workload, self.cluster,
                              self.calib, s)
        without = svc_latency(base, self.model, self.workload, self.cluster,
                              self.calib, s)
        expected_hop = p2p_cost(b * s * h * bpe, inter)
        assert with_pp - without == pytest.approx(expected_hop)

    def test_pp1_has_no_hop(self):
        strat = make_strategy([("TP", 2), ("DP", 2)], [("TP", 2), ("EP", 2)])
        est = indicators(strat, self.model, self.workload, self.cluster, self.calib)
        assert est.p2p == 0.0


class TestQueuing:
    def test_zero_arrival(self):
        assert queuing_delay(0.0, 0.01) == 0.0

    def test_hand_arithmetic(self):
        # mu = 100/s, W_q = 50 / (100 * 50) = 0.01 s
        assert queuing_delay(50.0, 0.01) == pytest.approx(0.01)

    def test_saturation_raises(self):
        with pytest.raises(SaturationError):
            queuing_delay(100.0, 0.01)
        with pytest.raises(SaturationError):
            queuing_delay(200.0, 0.01)

    @given(st.floats(min_value=0.01, max_value=0.99))
    def test_closed_form_on_grid(self, rho):
        svc = 0.004
        lam = rho / svc
        mu = 1.0 / svc
        assert queuing_delay(lam, svc) == pytest.approx(
            lam / (mu * (mu - lam)), rel=1e-12)


class TestIndicators:
    def setup_method(self):
        self.model = ModelHyperparams(hidden_dim=16, num_layers=2, top_k=2,
                                      num_routed_experts=8, num_shared_experts=0,
                                      psi_attn=1e4, psi_moe=1e4, psi_active=1e4)
        self.cluster = ClusterConfig(2, 2, 1e-6, 1e9, 2e-6, 1e8, 1e12, 1e9)
        self.calib = CalibrationCoefficients(compute_coeff=1e-9)
        self.strategy = make_strategy([("TP", 2), ("DP", 2)],
                                      [("TP", 2), ("EP", 2)])

    def workload(self, arrival=1.0, l_out=2):
        return WorkloadSpec(batch_size=8, seq_len=4, input_len=4,
                            output_len=l_out, arrival_rate=arrival)

    def test_matches_independent_recomputation(self):
        wl = self.workload()
        est = indicators(self.strategy, self.model, wl, self.cluster, self.calib)
        svc_prf = svc_latency(self.strategy, self.model, wl, self.cluster,
                              self.calib, 4)
        svc_dec = svc_latency(self.strategy, self.model, wl, self.cluster,
                              self.calib, 1)
        w_q = queuing_delay(1.0, svc_dec)
        assert est.svc_prefill == pytest.approx(svc_prf)
        assert est.svc_decode == pytest.approx(svc_dec)
        assert est.w_q == pytest.approx(w_q)
        assert est.ttft == pytest.approx(w_q + svc_prf)
        assert est.itl == est.svc_decode
        assert est.theta == pytest.approx(
            (4 + 2) / (w_q + svc_prf + 2 * svc_dec))

    def test_ttft_at_least_wq(self):
        est = indicators(self.strategy, self.model, self.workload(),
                         self.cluster, self.calib)
        assert est.ttft >= est.w_q

    def test_decode_bound_throughput_limit(self):
        est = indicators(self.strategy, self.model, self.workload(l_out=100000),
                         self.cluster, self.calib)
        assert est.theta == pytest.approx(1.0 / est.svc_decode, rel=1e-2)

    def test_saturation_marks_unstable(self):
        est = indicators(self.strategy, self.model, self.workload(arrival=1e9),
                         self.cluster, self.calib)
        assert not est.stable
        assert est.w_q == math.inf
        assert est.theta == 0.0

    def test_theta_decreases_with_latency(self):
        slow = CalibrationCoefficients(compute_coeff=1e-8)
        fast = indicators(self.strategy, self.model, self.workload(),
                          self.cluster, self.calib)
        slower = indicators(self.strategy, self.model, self.workload(),
                            self.cluster, slow)
        assert slower.theta < fast.theta


class TestLambdaComparison:
    def setup_method(self):
        self.model = ModelHyperparams(hidden_dim=32, num_layers=2, top_k=4,
                                      num_routed_experts=8, num_shared_experts=0,
                                      psi_attn=1e4, psi_moe=1e4, psi_active=1e4)
        self.workload = WorkloadSpec(batch_size=8, seq_len=16, input_len=16,
                                     output_len=4, arrival_rate=0)

    def cluster(self, inter_beta=1e8):
        return ClusterConfig(2, 2, 1e-6, 1e9, 2e-6, inter_beta, 1e12, 1e9)

    def test_ep_baseline_hand_arithmetic(self):
        cl = self.cluster()
        b, s, h, k, bpe = 8, 16, 32, 4, 2
        expect = (ar_cost(b * s * h * bpe, 2, LinkClass(1e-6, 1e9), literal=True)
                  + 2 * a2a_cost(b * s * h * k * bpe, 2, LinkClass(2e-6, 1e8)))
        assert lambda_ep_baseline(self.model, self.workload, cl) == \
            pytest.approx(expect)

    def test_mix_hand_arithmetic(self):
        cl = self.cluster()
        b, s, h, k, bpe = 8, 16, 32, 4, 2
        shard = b * s * h * k * bpe / 2
        expect = (ar_cost(b * s * h * bpe, 2, LinkClass(1e-6, 1e9), literal=True)
                  + ag_cost(shard, 2, LinkClass(1e-6, 1e9))
                  + 2 * a2a_cost(shard, 2, LinkClass(2e-6, 1e8)))
        assert lambda_mix(self.model, self.workload, cl) == pytest.approx(expect)

    def test_single_node_ep_baseline_has_no_a2a(self):
        cl = ClusterConfig(1, 4, 1e-6, 1e9, 2e-6, 1e8, 1e12, 1e9)
        terms = lambda_ep_terms(self.model, self.workload, cl)
        a2a = [t for t in terms if t["op"] == "a2a"]
        assert all(t["seconds"] == 0.0 for t in a2a)

    def test_inter_volume_reduced_by_exactly_n_proc(self):
        cl = ClusterConfig(2, 4, 1e-6, 1e9, 2e-6, 1e8, 1e12, 1e9)
        ep = {t["block"]: t for t in lambda_ep_terms(self.model, self.workload, cl)
              if t["op"] == "a2a"}
        mix = {t["block"]: t for t in lambda_mix_terms(self.model, self.workload, cl)
               if t["op"] == "a2a"}
        for phase in ("dispatch", "combine"):
            assert ep[phase]["size_bytes"] == pytest.approx(
                4 * mix[phase]["size_bytes"])

    def test_mix_beats_ep_when_inter_is_slow(self):
        cl = self.cluster(inter_beta=1e7)
        assert lambda_mix(self.model, self.workload, cl) < \
            lambda_ep_baseline(self.model, self.workload, cl)
