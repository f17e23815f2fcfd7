import math

import numpy as np
import pytest

from quantproxy import kendall, novelty, spearman
from quantproxy.dsl import make_candidate, parse, ProxyCandidate
from quantproxy.errors import DataError
from quantproxy.fitness import SENTINEL, CandidateEvaluator, EvalSettings

from oracles import kendall_oracle, levenshtein_oracle, spearman_oracle

# Pinned by scripts/make_fixtures.py for the builtin formula at
# zeta = 0.8, alpha = 0.1.
BUILTIN_PHI = 0.150625
BUILTIN_RHO = 0.1
BUILTIN_ACC = 0.15625


class TestSpearman:
    def test_monotone(self):
        assert spearman([1, 2, 3], [10, 20, 30]) == 1.0

    def test_reversed(self):
        assert spearman([1, 2, 3], [3, 2, 1]) == -1.0

    def test_tied_example_matches_definitional_oracle(self):
        x = [1.0, 2.0, 2.0, 3.0]
        y = [1.0, 3.0, 2.0, 4.0]
        assert spearman(x, y) == pytest.approx(spearman_oracle(x, y), abs=1e-12)

    def test_both_constant_is_zero(self):
        assert spearman([1, 1, 1], [2, 2, 2]) == 0.0
        assert spearman([1, 1, 1], [1, 2, 3]) == 0.0

    def test_length_mismatch(self):
        with pytest.raises(DataError):
            spearman([1, 2], [1, 2, 3])

    def test_too_short(self):
        with pytest.raises(DataError):
            spearman([1], [1])

    def test_symmetry_and_rank_invariance(self):
        rng = np.random.default_rng(17)
        for _ in range(50):
            x = rng.normal(size=8)
            y = rng.normal(size=8)
            assert spearman(x, y) == pytest.approx(spearman(y, x), abs=1e-12)
            # any strictly increasing transform leaves ranks unchanged
            assert spearman(np.exp(x), y) == pytest.approx(spearman(x, y),
                                                           abs=1e-12)


class TestKendall:
    def test_monotone(self):
        assert kendall([1, 2, 3], [5, 6, 9]) == 1.0

    def test_reversed(self):
        assert kendall([1, 2, 3], [9, 6, 5]) == -1.0

    def test_tied_example_matches_hand_count(self):
        # pairs: (1,2):concordant (1,2):c (1,3):c (2,2): tie-x (2,3):c (2,3):c
        x = [1.0, 2.0, 2.0, 3.0]
        y = [1.0, 3.0, 2.0, 4.0]
        concordant, discordant, tx, ty = 5, 0, 1, 0
        n0 = 6
        expected = (concordant - discordant) / math.sqrt((n0 - tx) * (n0 - ty))
        assert kendall(x, y) == pytest.approx(expected, abs=1e-12)
        assert kendall(x, y) == pytest.approx(kendall_oracle(x, y), abs=1e-12)

    def test_agreement_with_oracle_random(self):
        rng = np.random.default_rng(29)
        for _ in range(100):
            n = int(rng.integers(2, 15))
            x = rng.integers(0, 6, size=n).astype(float)
            y = rng.integers(0, 6, size=n).astype(float)
            assert kendall(x, y) == pytest.approx(kendall_oracle(list(x), list(y)),
                                                  abs=1e-12)

    def test_sign_agreement_with_spearman(self):
        rng = np.random.default_rng(31)
        agree = total = 0
        for _ in range(400):
            x = rng.normal(size=8)
            y = rng.normal(size=8)
            s, k = spearman(x, y), kendall(x, y)
            if s == 0.0 or k == 0.0:
                continue
            total += 1
            agree += (s > 0) == (k > 0)
        assert agree / total >= 0.95


class TestEvaluateCandidate:
    def test_phi_linear_blend(self):
        assert 0.1 * 0.8 + 0.9 * 0.7 == pytest.approx(0.71)

    def test_unparsed_candidate_gets_sentinel(self, evaluator):
        broken = ProxyCandidate(id="c-9", reasoning="", expr=None,
                                expr_text="1 +", origin="mutation")
        result = evaluator.evaluate(broken)
        assert result.phi == SENTINEL
        assert result.assignment is None
        assert any("contract" in w for w in result.warnings)

    def test_builtin_pipeline_pinned(self, evaluator):
        from quantproxy.stats import NORM_ENTROPY_DECAY
        candidate = make_candidate("b-1", "builtin", parse(NORM_ENTROPY_DECAY),
                                   "builtin")
        result = evaluator.evaluate(candidate)
        assert result.rho_sens == pytest.approx(BUILTIN_RHO, abs=1e-12)
        assert result.acc_quant == pytest.approx(BUILTIN_ACC, abs=1e-12)
        assert result.phi == pytest.approx(BUILTIN_PHI, abs=1e-12)
        assert result.assignment is not None

    def test_phi_blend_matches_components(self, evaluator):
        candidate = make_candidate("c-3", "", parse("depth"), "init")
        result = evaluator.evaluate(candidate)
        assert result.phi == pytest.approx(
            0.1 * result.rho_sens + 0.9 * result.acc_quant, abs=1e-12)

    def test_constant_scores_flagged_degenerate(self, evaluator):
        candidate = make_candidate("c-4", "", parse("3.5"), "init")
        result = evaluator.evaluate(candidate)
        assert result.rho_sens == 0.0
        assert any("degenerate" in w for w in result.warnings)
        assert result.phi != SENTINEL

    def test_sentinel_never_ranks_above_finite(self, evaluator):
        finite = evaluator.evaluate(make_candidate("c-5", "", parse("depth"),
                                                   "init"))
        broken = evaluator.evaluate(ProxyCandidate(
            id="c-6", reasoning="", expr=None, expr_text="", origin="init"))
        ranked = sorted([broken, finite], key=lambda e: e.sort_key())
        assert ranked[0] is finite


class TestNovelty:
    def test_identical_member_distance_zero(self):
        a = make_candidate("a", "", parse("w_l2 * depth"), "init")
        b = make_candidate("b", "", parse("w_l2*depth"), "init")
        assert novelty(a, [b]) == 0.0

    def test_empty_population_sentinel(self):
        a = make_candidate("a", "", parse("w_l2"), "init")
        assert novelty(a, []) == math.inf

    def test_token_distance_two(self):
        a = make_candidate("a", "", parse("w_l2"), "init")
        b = make_candidate("b", "", parse("w_l2 * depth"), "init")
        assert novelty(a, [b]) == 2.0

    def test_matches_levenshtein_oracle(self):
        a = make_candidate("a", "", parse("exp(w_l2) + depth"), "init")
        b = make_candidate("b", "", parse("log(w_l2) * a_std"), "init")
        # canonical token streams without parentheses
        ta = ["exp", "w_l2", "+", "depth"]
        tb = ["log", "w_l2", "*", "a_std"]
        assert novelty(a, [b]) == float(levenshtein_oracle(ta, tb))

    def test_min_over_population(self):
        a = make_candidate("a", "", parse("w_l2"), "init")
        pop = [make_candidate("b", "", parse("w_l2 * depth"), "init"),
               make_candidate("c", "", parse("w_l2"), "init")]
        assert novelty(a, pop) == 0.0
