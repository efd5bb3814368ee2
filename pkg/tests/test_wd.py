import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mechforge import generators, market, mechanism, wd
from mechforge.market import BUYER, NULL, SELLER, make_instance
from mechforge.rules import Rule
from conftest import fixture_a
from oracles import brute_efficient_value


def test_fixture_efficient_trade(fix_a):
    res = wd.solve(fix_a)
    assert res.profile == (0, 0, NULL)
    assert res.surplus == 6.0
    assert res.marginals == (0.0, 0.0, 6.0)
    assert res.vcg_discounts == (6.0, 6.0, 0.0)
    assert res.trading == (0, 1)


def test_fixture_vcg_payments(fix_a):
    res = wd.solve(fix_a)
    reported = wd.reported_values_at(wd.report_values(fix_a), res.profile)
    pay = wd.vcg_payments(reported, res.vcg_discounts)
    assert pay == (-10.0, 4.0, 0.0)
    assert sum(pay) == -6.0


def test_low_buyer_value_gives_all_null():
    res = wd.solve(fixture_a(3.0))
    assert res.profile == (NULL, NULL, NULL)
    assert res.surplus == 0.0
    assert res.vcg_discounts == (0.0, 0.0, 0.0)


def test_seller_only_instance():
    inst = make_instance(2, [(SELLER, [((-1, 0), -1.0)])])
    res = wd.solve(inst)
    assert res.profile == (NULL,) and res.surplus == 0.0 and res.marginals == (0.0,)


def test_competition_shrinks_discount():
    alone = wd.solve(make_instance(2, [(SELLER, [((-1, -1), -4.0)]), (BUYER, [((1, 1), 10.0)])]))
    duel = wd.solve(make_instance(2, [(SELLER, [((-1, -1), -4.0)]), (BUYER, [((1, 1), 10.0)]),
                                      (BUYER, [((1, 1), 8.0)])]))
    assert duel.profile == (0, 0, NULL)
    assert duel.vcg_discounts[1] == 2.0 < alone.vcg_discounts[1] == 6.0


def test_tie_prefers_lexicographically_smallest():
    # two buyers with equal value for the same bundle: the null entry sorts first,
    # so agent 1 null and agent 2 trading wins the tie
    inst = make_instance(1, [(SELLER, [((-1,), -1.0)]), (BUYER, [((1,), 3.0)]), (BUYER, [((1,), 3.0)])])
    for solver in (wd.solve, wd.exhaustive_solve, lambda i: wd.FeasibleSet(i).solve()):
        res = solver(inst)
        assert res.profile == (0, NULL, 0)
        assert res.vcg_discounts == (2.0, 0.0, 0.0)


def test_zero_surplus_trade_loses_tie_to_null():
    inst = make_instance(1, [(SELLER, [((-1,), -2.0)]), (BUYER, [((1,), 2.0)])])
    assert wd.solve(inst).profile == (NULL, NULL)


def test_withheld_atoms_are_never_selected(fix_a):
    reports = list(fix_a.valuations)
    reports[1] = market.XorValuation(BUYER, ())
    res = wd.solve(fix_a, reports)
    assert res.profile == (NULL, NULL, NULL)
    assert wd.exhaustive_solve(fix_a, reports) == res


def test_report_values_validation(fix_a):
    with pytest.raises(ValueError):
        wd.report_values(fix_a, [[1.0]])
    with pytest.raises(ValueError):
        wd.report_values(fix_a, [[-4.0], [1.0, 2.0], [3.0]])
    bad = list(fix_a.valuations)
    bad[2] = market.XorValuation(BUYER, (market.Atom((0, 1), 1.0),))
    with pytest.raises(ValueError):
        wd.report_values(fix_a, bad)


def _random_instance(seed):
    rng = np.random.default_rng(seed)
    scen = generators.SCENARIOS[seed % 3]
    cfg = generators.GeneratorConfig(
        scenario=scen, n_goods=int(rng.integers(2, 5)), n_buyers=int(rng.integers(1, 4)),
        n_sellers=int(rng.integers(2, 4)), atoms_per_agent=int(rng.integers(1, 4)), endowment_size=2)
    return generators.generate(cfg, seed)


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 100_000))
def test_solvers_agree(seed):
    inst = _random_instance(seed)
    bb = wd.solve(inst)
    assert wd.exhaustive_solve(inst) == bb
    assert wd.FeasibleSet(inst).solve() == bb
    assert bb.surplus == pytest.approx(brute_efficient_value(inst, wd.report_values(inst)), abs=1e-9)
    assert market.feasible(inst, bb.profile)
    assert bb.surplus == market.total_value(bb.profile, inst.valuations)
    assert all(x >= 0 for x in bb.vcg_discounts)
    assert all(bb.vcg_discounts[i] == 0 for i in range(inst.n_agents) if bb.profile[i] == NULL)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 100_000), agent=st.integers(0, 10), factors=st.lists(st.floats(0.0, 2.0), min_size=1, max_size=5))
def test_solve_variants_matches_solve_table(seed, agent, factors):
    inst = _random_instance(seed)
    agent %= inst.n_agents
    fs = wd.FeasibleSet(inst)
    tab = fs.table(wd.report_values(inst))
    rows = np.array([tab[agent] * f for f in factors])
    got = fs.solve_variants(tab, agent, rows)
    for row, res in zip(rows, got):
        sub = tab.copy()
        sub[agent] = row
        assert res == fs.solve_table(sub)


def test_feasible_set_cached_per_instance(fix_a):
    assert wd.feasible_set(fix_a) is wd.feasible_set(fix_a)
    assert len(wd.feasible_set(fix_a)) == 4  # null, s1+b1, s1+b2, s1 alone


def test_mechanism_outcome_on_fixture(fix_a):
    out = mechanism.run(fix_a, rules=(Rule.VCG, Rule.EQUAL, Rule.NO_DISCOUNT))
    assert out.payments(Rule.VCG) == (-10.0, 4.0, 0.0)
    assert out.payments(Rule.EQUAL) == (-7.0, 7.0, 0.0)
    assert out.payments(Rule.NO_DISCOUNT) == (-4.0, 10.0, 0.0)
    assert mechanism.true_utility(fix_a, out, Rule.VCG, 1) == 6.0
    assert mechanism.run(fix_a, exact=True) == mechanism.run(fix_a)


def test_lp_text(fix_a):
    text = wd.lp_text(fix_a)
    assert text.startswith("\\ winner determination")
    assert " surplus: -4.0 x_0_0 + 10.0 x_1_0 + 3.0 x_2_0" in text
    assert " good_0: -1 x_0_0 +1 x_1_0 +1 x_2_0 <= 0" in text
    assert " good_1: -1 x_0_0 +1 x_1_0 <= 0" in text
    assert text.rstrip().endswith("End")
