import math

import numpy as np
import pytest

from affinestop.model import PayoffSpec, payoff
from affinestop.oracle import (
    STOP,
    GuardError,
    MalformedRuleError,
    StoppingRule,
    Tree,
    best_rule_exhaustive,
    count_rules,
    evaluate_rule,
    first_contact_rule,
    smallest_optimal_rule,
    snell_value,
    threshold_form_check,
    _rule_value_table,
    _decode_rule,
)

UNIT = PayoffSpec(alpha=1.0, c=1.0)


def random_tree(rng, depth, require_growth_screen=False):
    """Random binary tree; optionally resample until exp(-r*dt)*E[m] < 1,
    the per-step analogue of the discounted-growth screen."""
    while True:
        up = math.exp(rng.uniform(0.05, 0.5))
        down = math.exp(-rng.uniform(0.05, 0.5))
        q = rng.uniform(0.2, 0.8)
        t = Tree(
            depth=depth,
            v0=rng.uniform(0.3, 2.5),
            multipliers=(up, down),
            probs=(q, 1.0 - q),
            dt=rng.uniform(0.1, 1.0),
            r=rng.uniform(0.02, 0.5),
        )
        if not require_growth_screen:
            return t
        if t.step_discount * (q * up + (1.0 - q) * down) < 1.0:
            return t


def random_payoff(rng):
    return PayoffSpec(alpha=rng.uniform(0.5, 2.0), c=rng.uniform(0.5, 2.0))


class TestTreeValidation:
    def test_bad_args(self):
        with pytest.raises(ValueError):
            Tree(depth=-1, v0=1.0, multipliers=(2.0, 0.5), probs=(0.5, 0.5),
                 dt=1.0, r=0.0)
        with pytest.raises(ValueError):
            Tree(depth=1, v0=1.0, multipliers=(2.0,), probs=(1.0,), dt=1.0, r=0.0)
        with pytest.raises(ValueError):
            Tree(depth=1, v0=1.0, multipliers=(2.0, 0.5), probs=(0.6, 0.6),
                 dt=1.0, r=0.0)
        with pytest.raises(ValueError):
            Tree(depth=1, v0=-1.0, multipliers=(2.0, 0.5), probs=(0.5, 0.5),
                 dt=1.0, r=0.0)

    def test_stop_rule_has_no_children(self):
        with pytest.raises(ValueError):
            StoppingRule(stop=True, children=(STOP,))


class TestCountRules:
    def test_trivials(self):
        assert count_rules(0, 2) == 1
        assert count_rules(1, 2) == 2
        assert count_rules(3, 2) == 26
        assert count_rules(5, 2) == 458_330

    def test_matches_enumeration_length(self):
        rng = np.random.default_rng(3)
        for depth in range(0, 5):
            t = random_tree(rng, depth)
            table = _rule_value_table(t, UNIT, clipped=False)
            assert len(table) == count_rules(depth, 2)

    def test_wide_integers(self):
        # depth 6 binary exceeds any fixed-width integer; must still be exact
        n5 = count_rules(5, 2)
        assert count_rules(6, 2) == 1 + n5 * n5


class TestEvaluateRule:
    def test_stop_at_root(self):
        t = Tree(depth=2, v0=0.7, multipliers=(2.0, 0.5), probs=(0.5, 0.5),
                 dt=1.0, r=0.3)
        assert evaluate_rule(t, STOP, UNIT) == payoff(UNIT, 0.7)

    def test_hand_computed_depth_one(self):
        # never stop early: 0.5*f(2) + 0.5*f(0.5) = -0.25 with r=0
        t = Tree(depth=1, v0=1.0, multipliers=(2.0, 0.5), probs=(0.5, 0.5),
                 dt=1.0, r=0.0)
        rule = StoppingRule(stop=False, children=(STOP, STOP))
        assert evaluate_rule(t, rule, UNIT) == pytest.approx(-0.25, abs=1e-15)

    def test_malformed(self):
        t = Tree(depth=1, v0=1.0, multipliers=(2.0, 0.5), probs=(0.5, 0.5),
                 dt=1.0, r=0.0)
        deep = StoppingRule(stop=False, children=(
            StoppingRule(stop=False, children=(STOP, STOP)), STOP))
        with pytest.raises(MalformedRuleError):
            evaluate_rule(t, deep, UNIT)
        with pytest.raises(MalformedRuleError):
            evaluate_rule(t, StoppingRule(stop=False, children=(STOP,)), UNIT)

    def test_first_contact_rule_attains_backward_value(self):
        rng = np.random.default_rng(11)
        for _ in range(25):
            t = random_tree(rng, depth=int(rng.integers(0, 5)))
            p = random_payoff(rng)
            rule = first_contact_rule(t, p)
            assert evaluate_rule(t, rule, p) == pytest.approx(
                snell_value(t, p), abs=1e-12)

    def test_enumeration_table_consistent_with_evaluate(self):
        rng = np.random.default_rng(12)
        t = random_tree(rng, depth=3)
        p = random_payoff(rng)
        table = _rule_value_table(t, p, clipped=False)
        memo = {}
        for idx in range(len(table)):
            rule = _decode_rule(3, 2, idx, memo)
            assert evaluate_rule(t, rule, p) == pytest.approx(
                table[idx], abs=1e-12)


class TestBestRuleExhaustive:
    def test_depth_zero(self):
        t = Tree(depth=0, v0=0.4, multipliers=(2.0, 0.5), probs=(0.5, 0.5),
                 dt=1.0, r=0.1)
        value, rules = best_rule_exhaustive(t, UNIT)
        assert value == payoff(UNIT, 0.4)
        assert rules == [STOP]

    def test_hand_enumerated_depth_one(self):
        # two rules: stop at root (0) or continue (-0.25); max is 0
        t = Tree(depth=1, v0=1.0, multipliers=(2.0, 0.5), probs=(0.5, 0.5),
                 dt=1.0, r=0.0)
        value, rules = best_rule_exhaustive(t, UNIT)
        assert value == 0.0
        assert rules == [STOP]

    def test_depth_five_matches_backward_induction(self):
        rng = np.random.default_rng(21)
        t = random_tree(rng, depth=5)
        p = random_payoff(rng)
        value, rules = best_rule_exhaustive(t, p)
        assert abs(value - snell_value(t, p)) <= 1e-12
        assert all(
            evaluate_rule(t, r, p) >= value - 1e-12 for r in rules[:5])

    def test_guard(self):
        t = Tree(depth=6, v0=1.0, multipliers=(2.0, 0.5), probs=(0.5, 0.5),
                 dt=1.0, r=0.1)
        with pytest.raises(GuardError):
            best_rule_exhaustive(t, UNIT)
        with pytest.raises(GuardError):
            smallest_optimal_rule(t, UNIT)


class TestSmallestOptimalRule:
    def test_depth_zero(self):
        t = Tree(depth=0, v0=1.0, multipliers=(2.0, 0.5), probs=(0.5, 0.5),
                 dt=1.0, r=0.1)
        assert smallest_optimal_rule(t, UNIT) == STOP

    def test_tie_breaks_to_stop(self):
        # E[V_1] = v0 and r = 0 make stopping now and continuing both optimal
        t = Tree(depth=1, v0=1.0, multipliers=(1.5, 0.5), probs=(0.5, 0.5),
                 dt=1.0, r=0.0)
        value, rules = best_rule_exhaustive(t, UNIT)
        assert value == 0.0
        assert len(rules) == 2  # genuine tie
        assert smallest_optimal_rule(t, UNIT) == STOP

    def test_equals_first_contact_on_random_instances(self):
        rng = np.random.default_rng(31)
        for _ in range(30):
            t = random_tree(rng, depth=4)
            p = random_payoff(rng)
            assert smallest_optimal_rule(t, p) == first_contact_rule(t, p)


class TestThresholdFormCheck:
    def test_symmetric_depth_one(self):
        t = Tree(depth=1, v0=1.0, multipliers=(1.1, 1 / 1.1), probs=(0.5, 0.5),
                 dt=1.0, r=0.05)
        assert threshold_form_check(t, UNIT).passed

    def test_recombining_depth_five(self):
        t = Tree(depth=5, v0=1.0, multipliers=(1.1, 1 / 1.1), probs=(0.5, 0.5),
                 dt=1.0, r=0.05)
        report = threshold_form_check(t, UNIT)
        assert report.passed
        assert len(report.level_thresholds) == 6
        assert report.violations == ()

    def test_worthless_tree_contacts_everywhere(self):
        # all nodes at or above c/alpha with clipped payoff: f+ = s = 0,
        # contact holds vacuously at every level
        t = Tree(depth=3, v0=1.0, multipliers=(1.3, 1.05), probs=(0.5, 0.5),
                 dt=1.0, r=0.2)
        report = threshold_form_check(t, UNIT, clipped=True)
        assert report.passed
        assert all(th is not None for th in report.level_thresholds)

    def test_thresholds_are_level_maxima_of_contact(self):
        rng = np.random.default_rng(41)
        t = random_tree(rng, depth=4, require_growth_screen=True)
        p = random_payoff(rng)
        report = threshold_form_check(t, p)
        assert report.passed
        # the root level has a single node, so its threshold is v0 or None
        assert report.level_thresholds[0] in (None, t.v0)
