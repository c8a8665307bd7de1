import math
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from multinego.valuation import (
    ConcessionState,
    DomainError,
    IssueNode,
    IssueValuation,
    LambdaInputs,
    NonFunctionalAttributes,
    UtilityBounds,
    buyer_accepts,
    compute_u_max,
    compute_u_min,
    decay_utility,
    derive_lambda,
    max_payoff,
    min_payoff,
    raise_utility,
    seller_accepts,
)

NFA = {"updates": 1.0, "scope": 0.9}


def state(u, lo, hi, w=8.0, issue="x"):
    return ConcessionState(issue, u, UtilityBounds(lo, hi), w)


def bisect_lambda(states, target_drop, t=1):
    """Root-find the penalty whose unclamped decay drops the sum by ``target_drop``."""
    total = sum(s.u_current for s in states)

    def drop(lam):
        return total - sum(s.u_current * (1 - lam * t / s.weight) for s in states)

    lo, hi = 0.0, 1.0
    while drop(hi) < target_drop:
        hi *= 2
    for _ in range(200):
        mid = (lo + hi) / 2
        if drop(mid) < target_drop:
            lo = mid
        else:
            hi = mid
    return (lo + hi) / 2


class TestUtilityBounds:
    def test_seller_iso_issue(self):
        v = IssueValuation("iso", 15.0, 17.0, 8.0, NFA)
        assert compute_u_min(v) == pytest.approx(108.0, abs=1e-9)
        assert compute_u_max(v) == pytest.approx(122.39994, abs=1e-4)

    def test_buyer_issue(self):
        v = IssueValuation("iso", 4.0, 6.0, 8.0, NFA)
        assert compute_u_min(v) == pytest.approx(28.8, abs=1e-9)
        assert compute_u_max(v) == pytest.approx(43.199997, abs=1e-4)

    @pytest.mark.parametrize("c", [0.0, 3.5, 1e6])
    def test_empty_attributes_unit_weight(self, c):
        v = IssueValuation("x", c, c)
        assert compute_u_min(v) == c
        assert compute_u_max(v) == c

    def test_empty_product_is_one(self):
        assert NonFunctionalAttributes().product() == 1

    @pytest.mark.parametrize("bad", [0.0, -1.0, float("nan"), float("inf")])
    def test_multiplier_must_be_positive(self, bad):
        with pytest.raises(DomainError):
            NonFunctionalAttributes.of({"a": bad})

    def test_valuation_invariants(self):
        with pytest.raises(DomainError):
            IssueValuation("x", 5.0, 4.0)
        with pytest.raises(DomainError):
            IssueValuation("x", 1.0, 2.0, weight=0.0)
        with pytest.raises(DomainError):
            IssueValuation("x", -1.0, 2.0)


class TestPayoffs:
    def test_buyer_payoffs(self):
        vs = [IssueValuation(f"i{k}", 4.0, 6.0, 8.0, NFA) for k in range(5)]
        assert min_payoff(vs) == pytest.approx(144.0, abs=1e-9)
        assert max_payoff(vs) == pytest.approx(215.99998, abs=1e-4)

    def test_single_issue(self):
        v = IssueValuation("x", 2.0, 3.0, 2.0, NFA)
        assert min_payoff([v]) == compute_u_min(v)
        assert max_payoff([v]) == compute_u_max(v)

    def test_empty(self):
        with pytest.raises(DomainError, match="no issues"):
            min_payoff([])
        with pytest.raises(DomainError, match="no issues"):
            max_payoff([])


class TestAcceptance:
    @pytest.mark.parametrize("price,expected", [(108.0, True), (107.99, False), (150.0, True)])
    def test_seller(self, price, expected):
        assert seller_accepts(price, UtilityBounds(108.0, 122.4)) is expected

    @pytest.mark.parametrize("price,expected", [(43.2, True), (43.3, False), (0.0, True)])
    def test_buyer(self, price, expected):
        assert buyer_accepts(price, UtilityBounds(28.8, 43.2)) is expected


class TestConcession:
    def test_decay_identity(self):
        assert decay_utility(state(100, 0, 200), 0.0, 3) == 100

    def test_decay_step(self):
        assert decay_utility(state(100, 0, 200), 0.4, 1) == pytest.approx(95.0)

    def test_decay_clamped(self):
        assert decay_utility(state(100, 90, 200), 10.0, 1) == 90.0

    def test_raise_identity(self):
        assert raise_utility(state(28.8, 28.8, 43.2), 0.0, 1) == 28.8

    def test_raise_step(self):
        assert raise_utility(state(30, 28.8, 43.2), 0.8, 1) == pytest.approx(33.0)

    def test_raise_clamped(self):
        assert raise_utility(state(42, 28.8, 43.2), 1.0, 2) == 43.2

    def test_negative_lambda(self):
        with pytest.raises(DomainError):
            decay_utility(state(1, 0, 2), -0.1, 1)


class TestDeriveLambda:
    def test_single_issue_against_bisection(self):
        s = state(122.4, 108.0, 122.4)
        oracle = bisect_lambda([s], 14.4)
        assert oracle == pytest.approx(0.94118, abs=1e-5)
        assert derive_lambda(LambdaInputs((s,), 1)) == pytest.approx(oracle, abs=1e-9)

    def test_zero_gap(self):
        ss = (state(10, 10, 10), state(5, 5, 5, w=2.0))
        assert derive_lambda(LambdaInputs(ss, 4)) == 0.0

    def test_degenerate(self):
        with pytest.raises(DomainError, match="degenerate open set"):
            derive_lambda(LambdaInputs((state(0.0, 0.0, 1.0),), 3))

    def test_inputs_validated(self):
        with pytest.raises(DomainError):
            LambdaInputs((), 1)
        with pytest.raises(DomainError):
            LambdaInputs((state(1, 0, 2),), 0)

    def test_doubling_weights_doubles_lambda(self):
        rng = random.Random(11)
        for _ in range(200):
            ss = []
            for k in range(rng.randint(1, 6)):
                lo = rng.uniform(0, 50)
                hi = lo + rng.uniform(0, 50)
                ss.append(state(rng.uniform(lo, hi) + 1e-3, lo, hi + 1e-3, w=rng.uniform(0.5, 10), issue=f"i{k}"))
            rr = rng.randint(1, 10)
            lam = derive_lambda(LambdaInputs(tuple(ss), rr))
            doubled = tuple(ConcessionState(s.issue_id, s.u_current, s.bounds, 2 * s.weight) for s in ss)
            assert derive_lambda(LambdaInputs(doubled, rr)) == pytest.approx(2 * lam, rel=1e-12)

    def test_matches_bisection_on_random_sets(self):
        rng = random.Random(5)
        for _ in range(100):
            ss = []
            for k in range(rng.randint(1, 5)):
                lo = rng.uniform(1, 50)
                hi = lo + rng.uniform(0, 20)
                ss.append(state(rng.uniform(lo, hi), lo, hi, w=rng.uniform(1, 10), issue=f"i{k}"))
            rr = rng.randint(1, 10)
            target = sum(s.bounds.gap for s in ss) / rr
            lam = derive_lambda(LambdaInputs(tuple(ss), rr))
            assert lam == pytest.approx(bisect_lambda(ss, target), rel=1e-9, abs=1e-12)


# -- properties --

costs = st.floats(0, 1e4, allow_nan=False)
pos = st.floats(0.01, 100, allow_nan=False)


@st.composite
def valuations(draw):
    a = draw(costs)
    b = a + draw(st.floats(0, 1e4))
    nfa = draw(st.dictionaries(st.text("abc", min_size=1, max_size=3), pos, max_size=3))
    return IssueValuation("x", a, b, draw(pos), nfa)


@st.composite
def concession(draw):
    lo = draw(st.floats(0, 1e3))
    hi = lo + draw(st.floats(0, 1e3))
    u = draw(st.floats(lo, hi)) if hi > lo else lo
    return state(u, lo, hi, w=draw(pos))


@given(valuations())
def test_floor_below_ceiling(v):
    assert compute_u_min(v) <= compute_u_max(v)


@given(st.lists(valuations(), min_size=1, max_size=6))
def test_min_payoff_below_max(vs):
    assert min_payoff(vs) <= max_payoff(vs)


@given(concession(), st.floats(0, 50), st.integers(1, 20))
def test_decay_stays_in_bounds(s, lam, t):
    out = decay_utility(s, lam, t)
    assert s.bounds.u_min <= out <= s.bounds.u_max
    assert raise_utility(s, lam, t) <= s.bounds.u_max


@given(concession(), st.floats(0, 5), st.floats(0, 5), st.integers(1, 10), st.integers(1, 10))
def test_decay_monotone(s, l1, l2, t1, t2):
    lo_l, hi_l = sorted((l1, l2))
    lo_t, hi_t = sorted((t1, t2))
    assert decay_utility(s, hi_l, lo_t) <= decay_utility(s, lo_l, lo_t)
    assert decay_utility(s, lo_l, hi_t) <= decay_utility(s, lo_l, lo_t)


@given(st.lists(concession(), min_size=1, max_size=5), st.integers(1, 10))
def test_lambda_nonnegative_and_zero_iff_no_gap(ss, rr):
    ss = [s for s in ss if s.u_current > 0]
    if not ss:
        return
    lam = derive_lambda(LambdaInputs(tuple(ss), rr))
    assert lam >= 0
    assert (lam == 0) == all(s.bounds.gap == 0 for s in ss)


@settings(max_examples=200)
@given(st.floats(0, 1e3), st.floats(0, 1e3), st.floats(0, 100), st.floats(0, 100))
def test_acceptance_monotone_in_price(lo, span, p1, p2):
    b = UtilityBounds(lo, lo + span)
    low, high = sorted((p1, p2))
    if seller_accepts(low, b):
        assert seller_accepts(high, b)
    if buyer_accepts(high, b):
        assert buyer_accepts(low, b)


class TestIssueTree:
    def test_leaves_and_round_trip(self):
        tree = IssueNode("p", "p", (IssueNode("a", "", (IssueNode("a1"), IssueNode("a2"))), IssueNode("b")))
        assert tree.leaf_ids() == ["a1", "a2", "b"]
        assert IssueNode.from_dict(tree.to_dict()) == tree

    def test_duplicate_ids(self):
        with pytest.raises(DomainError, match="duplicate"):
            IssueNode("p", "", (IssueNode("a"), IssueNode("a")))

    def test_nfa_round_trip(self):
        n = NonFunctionalAttributes.of(NFA)
        assert n.as_dict() == NFA
        assert math.isclose(n.product(), 0.9)
