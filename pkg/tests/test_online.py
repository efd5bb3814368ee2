import pytest

from mechforge import generators, mechanism, metrics, online, rng
from mechforge.equilibrium import IterationParams, shaved_values
from mechforge.metrics import InstancePayoffs
from mechforge.online import EpochRecord, SelectorState
from mechforge.rules import BALANCED, Rule

CFG = generators.GeneratorConfig(scenario="decay")
PARAMS = IterationParams(instances_per_iteration=10, max_iterations=3)


@pytest.fixture(scope="module")
def cache():
    return online.EquilibriumCache(CFG, PARAMS, seed=1)


def test_cache_reuses_results(cache):
    assert cache.get(Rule.SMALL, 1) is cache.get(Rule.SMALL, 1)


def test_counterfactual_payoffs_match_direct_run(cache):
    rec = online.run_epoch(CFG, Rule.THRESHOLD, cache, epoch=2, epoch_size=12, seed=5)
    prof = cache.get(Rule.THRESHOLD, 1).profile
    for c in online.CANDIDATES:
        direct = []
        for j in range(12):
            inst = generators.generate(CFG, rng.child_seed(5, "online", 2, j))
            bids = shaved_values(inst, prof.alphas, prof.boundaries)
            r = metrics.instance_payoffs(mechanism.run(inst, bids, (c,), exact=True), c, j)
            if r is not None:
                direct.append(r)
        assert rec.payoffs[c] == direct
    assert rec.observed is rec.payoffs[Rule.THRESHOLD]


def test_counterfactual_rules_balance(cache):
    rec = online.run_epoch(CFG, Rule.SMALL, cache, epoch=0, epoch_size=15, seed=2)
    for c in BALANCED:
        for r in rec.payoffs[c]:
            assert sum(r.mechanism) == pytest.approx(r.surplus, abs=1e-9 * max(1.0, r.surplus))


def test_efficiency_fraction(cache):
    rec = online.run_epoch(CFG, Rule.SMALL, cache, epoch=0, epoch_size=10, seed=2)
    assert rec.efficiency_fraction == pytest.approx(1.0)
    assert rec.efficiency == rec.ideal_efficiency


def _rec(distance):
    # one agent, surplus 1, reference 1: L1norm distance is |1 - mechanism|
    return InstancePayoffs(0, 1.0, (0,), (1.0,), (1.0 - distance,))


def _epoch(e, rule, dist):
    return EpochRecord(e, rule, {c: [_rec(d)] for c, d in dist.items()}, 1.0, 1.0)


def test_single_candidate():
    state = SelectorState(candidates=(Rule.SMALL,))
    state.add(_epoch(0, Rule.SMALL, {Rule.SMALL: 0.3}))
    assert online.evaluate_and_select(state, "L1norm") is Rule.SMALL


def test_plain_selection_uses_current_rule_data():
    state = SelectorState(candidates=(Rule.SMALL, Rule.THRESHOLD))
    state.add(_epoch(0, Rule.SMALL, {Rule.SMALL: 0.5, Rule.THRESHOLD: 0.1}))
    assert online.evaluate_and_select(state, "L1norm") is Rule.THRESHOLD
    assert state.history[Rule.SMALL][0].scores[Rule.SMALL] == 0.5


def test_cycle_is_broken_with_merged_data():
    state = SelectorState(candidates=(Rule.SMALL, Rule.THRESHOLD))
    state.add(_epoch(0, Rule.SMALL, {Rule.SMALL: 1.0, Rule.THRESHOLD: 0.0}))
    assert online.evaluate_and_select(state, "L1norm") is Rule.THRESHOLD
    state.add(_epoch(1, Rule.THRESHOLD, {Rule.SMALL: 0.2, Rule.THRESHOLD: 1.0}))
    # T's own data points back to S, closing the cycle S -> T -> S; merged means are
    # S: (1.0 + 0.2) / 2 = 0.6 and T: (0.0 + 1.0) / 2 = 0.5
    assert online.evaluate_and_select(state, "L1norm") is Rule.THRESHOLD
    assert state.recommendation == {Rule.SMALL: Rule.THRESHOLD, Rule.THRESHOLD: Rule.SMALL}


def test_ties_go_to_earlier_candidate():
    state = SelectorState(candidates=(Rule.THRESHOLD, Rule.SMALL))
    state.add(_epoch(0, Rule.SMALL, {Rule.SMALL: 0.4, Rule.THRESHOLD: 0.4}))
    assert online.evaluate_and_select(state, "L1norm") is Rule.THRESHOLD


def test_empty_state_and_bad_metric():
    with pytest.raises(ValueError):
        online.evaluate_and_select(SelectorState())
    with pytest.raises(ValueError):
        online.run_online_search(CFG, "KL", 1)


def test_search_is_deterministic(cache):
    a = online.run_online_search(CFG, "KLnorm", 3, seed=1, epoch_size=10, cache=cache)
    b = online.run_online_search(CFG, "KLnorm", 3, seed=1, epoch_size=10, cache=cache)
    assert a.rows() == b.rows()
    assert a.labels[0] == "N" and len(a.labels) == 3
    assert [r.epoch for r in a.epochs] == [0, 1, 2]


def test_zero_epochs(cache):
    trace = online.run_online_search(CFG, "L1norm", 0, seed=1, cache=cache)
    assert trace.epochs == [] and trace.labels == [] and trace.rows() == []
