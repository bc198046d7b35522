import math

import numpy as np
import pytest

from safestrata.eprocess import (GLOBAL, CombinerSpec, NullSpec, StratumState, TestConfig,
                                 combine, conditional_evalue, crosstalk_mix, first_crossing,
                                 global_log_e, pseudo_bayes_weights, run_blocks, stratum_step,
                                 test_global_null)
from safestrata.errors import MisalignedHistories
from safestrata.ingest import Block, BlockStream, generate_stream
from safestrata.learners import CrossTalkMode, GroupCounts
from safestrata.model import BlockCounts, BlockDesign, ThetaPair

ONE = BlockDesign(1, 1)
OUTCOMES = [(0, 0), (0, 1), (1, 0), (1, 1)]


def expectation(theta_alt, null, q):
    """Exhaustive E[S] over the four outcomes of a 1+1 block under P_q."""
    total = 0.0
    for sa, sb in OUTCOMES:
        p = (q[0] if sa else 1 - q[0]) * (q[1] if sb else 1 - q[1])
        total += p * math.exp(conditional_evalue(theta_alt, null, BlockCounts(sa, sb, ONE)))
    return total


@pytest.fixture(scope="module")
def fig2_stream():
    return generate_stream([(0.1, 0.15), (0.2, 0.6), (0.8, 0.2)], blocks_per_stratum=20, seed=7)


def random_histories(rng, k=3, m=30):
    # sleeping structure: each block belongs to one stratum
    strata = rng.integers(0, k, size=m)
    h = np.zeros((k, m))
    h[strata, np.arange(m)] = rng.normal(0, 0.7, size=m)
    return h


class TestConditionalEvalue:
    def test_alternative_in_null(self):
        for sa, sb in OUTCOMES:
            assert conditional_evalue(ThetaPair(0.5, 0.5), GLOBAL, BlockCounts(sa, sb, ONE)) == 0.0

    def test_direct_evaluation(self):
        t = ThetaPair(0.2, 0.8)
        assert math.exp(conditional_evalue(t, GLOBAL, BlockCounts(0, 1, ONE))) == pytest.approx(2.56)
        assert math.exp(conditional_evalue(t, GLOBAL, BlockCounts(1, 0, ONE))) == pytest.approx(0.16)

    def test_halfplane_identity(self):
        for sa, sb in OUTCOMES:
            v = conditional_evalue(ThetaPair(0.2, 0.8), NullSpec.rd_ge(0.3), BlockCounts(sa, sb, ONE))
            assert v == 0.0

    def test_witness_polynomial(self):
        t = ThetaPair(0.2, 0.8)
        for q in np.linspace(0.05, 0.95, 19):
            assert expectation(t, GLOBAL, (q, q)) == pytest.approx((1.6 - 1.2 * q) * (0.4 + 1.2 * q))
        assert expectation(t, GLOBAL, (0.5, 0.5)) == pytest.approx(1.0, abs=1e-12)

    @pytest.mark.parametrize("kind", ["ge", "le", "eq"])
    def test_rd_bound_coarse_grid(self, kind):
        grid = np.round(np.linspace(0.1, 0.9, 9), 10)
        for delta in (-0.3, 0.0, 0.2):
            null = NullSpec(kind, delta)
            for ta in grid:
                for tb in grid:
                    alt = ThetaPair(ta, tb)
                    for qa in grid:
                        for qb in grid:
                            d = qb - qa
                            inside = {"ge": d >= delta - 1e-12, "le": d <= delta + 1e-12,
                                      "eq": abs(d - delta) < 1e-9}[kind]
                            if inside:
                                assert expectation(alt, null, (qa, qb)) <= 1 + 1e-9

    def test_null_validation(self):
        with pytest.raises(ValueError):
            NullSpec("gt", 0.0)
        with pytest.raises(ValueError):
            NullSpec.rd_eq(1.5)


class TestStratumStep:
    def test_sleeping_and_counts(self):
        states = [StratumState(), StratumState()]
        block = Block(1, BlockCounts(1, 0, ONE), 2)
        new, log_s = stratum_step(states, block)
        assert new[0] == states[0]
        assert new[1].counts_a == GroupCounts(1, 0)
        assert new[1].counts_b == GroupCounts(0, 1)
        assert new[1].blocks_seen == 1
        # first block: prior-mean alternative (0.5, 0.5) lies in the global null
        assert log_s == 0.0

    def test_matches_engine(self, fig2_stream):
        for mode in ("none", "odds", "control-rate", "risk-diff"):
            for null, family, deltas in ((GLOBAL, "global", None),
                                         (NullSpec.rd_le(0.1), "le", [0.1]),
                                         (NullSpec.rd_eq(-0.2), "eq", [-0.2])):
                trace = run_blocks(fig2_stream, mode, family, deltas)
                states = [StratumState()] * 3
                for j, block in enumerate(fig2_stream.blocks()):
                    states, log_s = stratum_step(states, block, mode, null)
                    assert log_s == pytest.approx(trace.log_s[j, 0], abs=1e-10)
                hist = trace.histories()[..., 0]
                for k in range(3):
                    assert states[k].log_e == pytest.approx(hist[k].sum(), abs=1e-9)

    def test_mix_rejected(self):
        with pytest.raises(ValueError):
            stratum_step([StratumState()], Block(0, BlockCounts(0, 0, ONE), 1), "mix")
        with pytest.raises(IndexError):
            stratum_step([StratumState()], Block(2, BlockCounts(0, 0, ONE), 1))


class TestEngine:
    def test_estimates_use_past_only(self, fig2_stream):
        trace = run_blocks(fig2_stream, "none")
        assert tuple(trace.theta[0]) == (0.5, 0.5)
        first = {}
        for j, k in enumerate(fig2_stream.strata):
            first.setdefault(int(k), j)
        for j in first.values():
            assert tuple(trace.theta[j]) == (0.5, 0.5)

    def test_histories_sleep(self, fig2_stream):
        hist = run_blocks(fig2_stream, "none").histories()
        for j, k in enumerate(fig2_stream.strata):
            others = [i for i in range(3) if i != k]
            assert np.all(hist[others, j] == 0.0)

    def test_delta_family_columns(self, fig2_stream):
        deltas = np.array([-0.5, 0.0, 0.5])
        trace = run_blocks(fig2_stream, "none", "eq", deltas)
        assert trace.log_s.shape == (len(fig2_stream), 3)
        single = run_blocks(fig2_stream, "none", "eq", [0.5])
        assert np.allclose(trace.log_s[:, 2], single.log_s[:, 0])


class TestCombine:
    def test_k1_reduces(self):
        h = np.random.default_rng(0).normal(size=(1, 12))
        ref = np.concatenate([[0.0], np.cumsum(h[0])])
        for kind in ("multiply", "mixture", "pseudo-bayes", "min"):
            assert np.allclose(combine(CombinerSpec(kind), h), ref)
        assert np.allclose(combine(CombinerSpec("switch", switch_at=4), h), ref)
        assert np.allclose(combine(CombinerSpec("switch", switch_range=(2, 8)), h), ref)

    def test_pseudo_bayes_weights(self):
        assert pseudo_bayes_weights(np.log([2.0, 1.0])) == pytest.approx([2 / 3, 1 / 3])
        assert pseudo_bayes_weights(np.log([2.0, 1.0]), eta=2.0) == pytest.approx([4 / 5, 1 / 5])

    def test_min(self):
        h = np.log(np.array([[3.0], [0.4]]))
        assert math.exp(combine(CombinerSpec("min"), h)[-1]) == pytest.approx(0.4)

    def test_multiply_is_sum(self):
        h = random_histories(np.random.default_rng(1))
        out = combine(CombinerSpec("multiply"), h)
        assert np.allclose(out[1:], np.cumsum(h, axis=1).sum(axis=0))

    def test_mixture_oracle(self):
        h = random_histories(np.random.default_rng(2))
        w = np.array([0.5, 0.3, 0.2])
        out = combine(CombinerSpec("mixture", weights=tuple(w)), h)
        e = 1.0
        for j in range(h.shape[1]):
            e *= float(np.dot(w, np.exp(h[:, j])))
            assert out[j + 1] == pytest.approx(math.log(e))

    @pytest.mark.parametrize("eta", [1.0, 2.0, 0.5])
    def test_pseudo_bayes_oracle(self, eta):
        h = random_histories(np.random.default_rng(3))
        out = combine(CombinerSpec("pseudo-bayes", eta=eta), h)
        prod = np.ones(3)
        e = 1.0
        for j in range(h.shape[1]):
            w = prod ** eta / np.sum(prod ** eta)
            e *= float(np.dot(w, np.exp(h[:, j])))
            prod *= np.exp(h[:, j])
            assert out[j + 1] == pytest.approx(math.log(e))

    def test_switch_oracle(self):
        h = random_histories(np.random.default_rng(4))
        m = h.shape[1]
        mix = combine(CombinerSpec("mixture"), h)
        for j_star in (1, 7, 15, m - 1):
            out = combine(CombinerSpec("switch", switch_at=j_star), h)
            cum = np.cumsum(h, axis=1)
            lead = int(np.argmax(cum[:, j_star - 1]))
            e = math.exp(mix[j_star])
            for j in range(m):
                if j + 1 <= j_star:
                    assert out[j + 1] == pytest.approx(mix[j + 1])
                else:
                    e *= math.exp(h[lead, j])
                    assert out[j + 1] == pytest.approx(math.log(e))

    def test_switch_tie_goes_to_lowest(self):
        h = np.array([[0.5, 0.0, 0.3], [0.0, 0.5, -0.3]])
        out = combine(CombinerSpec("switch", switch_at=2), h)
        mix = combine(CombinerSpec("mixture"), h)
        assert out[3] == pytest.approx(mix[2] + 0.3)

    def test_switch_never_equals_mixture(self):
        h = random_histories(np.random.default_rng(5))
        m = h.shape[1]
        spec = CombinerSpec("switch", weights=(0.2, 0.3, 0.5), switch_at=m)
        mix = combine(CombinerSpec("mixture", weights=(0.2, 0.3, 0.5)), h)
        assert np.array_equal(combine(spec, h), mix)

    def test_switch_prior_is_average(self):
        h = random_histories(np.random.default_rng(6))
        parts = [np.exp(combine(CombinerSpec("switch", switch_at=j), h)) for j in range(3, 9)]
        out = combine(CombinerSpec("switch", switch_range=(3, 8)), h)
        assert np.allclose(np.exp(out), np.mean(parts, axis=0))

    def test_default_switch_range(self):
        h = random_histories(np.random.default_rng(7), m=20)
        default = combine(CombinerSpec("switch"), h)
        explicit = combine(CombinerSpec("switch", switch_range=(5, 15)), h)
        assert np.array_equal(default, explicit)

    def test_grid_axis(self):
        rng = np.random.default_rng(8)
        h = np.stack([random_histories(rng) for _ in range(4)], axis=-1)
        for spec in (CombinerSpec("pseudo-bayes", eta=2), CombinerSpec("switch", switch_at=5)):
            out = combine(spec, h)
            for g in range(4):
                assert np.allclose(out[:, g], combine(spec, h[..., g]))

    def test_misaligned(self):
        with pytest.raises(MisalignedHistories):
            combine(CombinerSpec(), [np.zeros(3), np.zeros(4)])
        with pytest.raises(MisalignedHistories):
            combine(CombinerSpec("mixture", weights=(0.5, 0.5)), np.zeros((3, 4)))

    def test_spec_validation(self):
        with pytest.raises(ValueError):
            CombinerSpec("average")
        with pytest.raises(ValueError):
            CombinerSpec("pseudo-bayes", eta=0)
        with pytest.raises(ValueError):
            CombinerSpec("mixture", weights=(0.5, 0.6))
        with pytest.raises(ValueError):
            CombinerSpec("switch", switch_at=0)
        with pytest.raises(ValueError):
            CombinerSpec("switch", switch_range=(9, 3))
        assert CombinerSpec("Pseudo_Bayes").kind == "pseudo-bayes"


class TestCrosstalkMix:
    def test_identical(self):
        e = np.concatenate([[0.0], np.cumsum(np.random.default_rng(0).normal(size=10))])
        assert np.allclose(crosstalk_mix([e, e, e]), e)

    def test_unit(self):
        assert np.allclose(crosstalk_mix(np.zeros((3, 2))), 0.0)

    def test_dominant_within_factor_three(self):
        m = 20
        dom = np.concatenate([np.linspace(0, math.log(1e6), m // 2 + 1), np.full(m // 2, math.log(1e6))])
        weak = np.zeros(m + 1)
        out = crosstalk_mix([weak, dom, weak])
        assert out[-1] >= dom[-1] - math.log(3) - 1e-9
        assert out[-1] <= dom[-1]

    def test_lower_bound_everywhere(self):
        rng = np.random.default_rng(1)
        es = [np.concatenate([[0.0], np.cumsum(rng.normal(size=40))]) for _ in range(3)]
        out = crosstalk_mix(es)
        assert np.all(out >= np.max(es, axis=0) - math.log(3) - 1e-9)
        # eta = 1 telescopes to the average
        assert np.allclose(out, np.log(np.mean(np.exp(es), axis=0)))

    def test_misaligned(self):
        with pytest.raises(MisalignedHistories):
            crosstalk_mix([np.zeros(3), np.zeros(5)])


class TestGlobalNull:
    def test_empty_stream(self):
        trace = test_global_null(BlockStream([], [], [], ONE, 2))
        assert not trace.rejected
        assert trace.log_e.tolist() == [0.0]
        assert trace.verdict() == "NO REJECTION after 0 blocks"

    def test_first_crossing(self):
        assert first_crossing(np.array([0, 1, 3.1, 2.0]), 0.05) == 2
        assert first_crossing(np.array([0, 1.0]), 0.05) is None

    def test_verdict_and_crossing(self, fig2_stream):
        trace = test_global_null(fig2_stream, TestConfig(CombinerSpec("pseudo-bayes")))
        m = trace.rejected_at
        assert m is not None
        assert trace.log_e[m] >= math.log(20) > trace.log_e[:m].max()
        assert trace.verdict() == f"REJECT at block {m}"

    def test_unstratified_is_pooled(self, fig2_stream):
        pooled = global_log_e(fig2_stream, TestConfig(stratified=False))
        one = BlockStream(np.zeros(len(fig2_stream), int), fig2_stream.s_a, fig2_stream.s_b, ONE, 1)
        assert np.allclose(pooled, global_log_e(one))

    def test_mix_matches_manual(self, fig2_stream):
        spec = CombinerSpec("mixture")
        parts = [global_log_e(fig2_stream, TestConfig(spec, mode)) for mode in ("none", "odds", "control-rate")]
        mixed = global_log_e(fig2_stream, TestConfig(spec, "mix"))
        assert np.allclose(mixed, crosstalk_mix(parts))

    def test_cache_shared_between_configs(self, fig2_stream):
        cache = {}
        a = global_log_e(fig2_stream, TestConfig(CombinerSpec("multiply")), cache)
        b = global_log_e(fig2_stream, TestConfig(CombinerSpec("multiply"), stratified=False), cache)
        assert np.allclose(a, global_log_e(fig2_stream, TestConfig(CombinerSpec("multiply"))))
        assert np.allclose(b, global_log_e(fig2_stream, TestConfig(stratified=False)))

    def test_config_validation(self):
        with pytest.raises(ValueError):
            TestConfig(alpha=1.5)
        assert TestConfig(crosstalk="odds").crosstalk is CrossTalkMode.ODDS

    def test_type_one_error_small(self):
        # quick version of the acceptance check; the full one lives in test_acceptance
        hits = 0
        reps = 300
        for r in range(reps):
            s = generate_stream([(0.3, 0.3)] * 3, blocks_per_stratum=40, seed=5000 + r)
            hits += test_global_null(s, TestConfig(CombinerSpec("pseudo-bayes"))).rejected
        se = math.sqrt(0.05 * 0.95 / reps)
        assert hits / reps <= 0.05 + 3 * se
