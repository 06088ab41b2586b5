import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mecsim.optimizer import (CACHE, NONE, TRANSCODE, CacheDecisionInstance, CacheItem, Candidate,
                              CtraOptions, IncrementalResolver, InstanceFormatError,
                              SchedClient, ServerBudgets, UtilityTable, brute_force_oracle,
                              ctra_schedule, greedy_assign, load_instance, random_instance,
                              rb_cost, relaxation_bound, round_robin_assign, save_instance,
                              set_utility, solve_cache_transcode, transcode_feasible)
from mecsim.catalog import PresentationVariant
from mecsim.radio import McsTable

from conftest import flat_variant

MCS = McsTable.default()


def one_item(nu=5.0, size=100, budget=1000, **kw):
    return CacheDecisionInstance(0, [CacheItem(("v", 1, 1), size, nu, nu, **kw)], budget, {},
                                 budget, budget)


def test_single_item():
    sol = solve_cache_transcode(one_item())
    assert sol.state == (CACHE,) and sol.objective == 5.0
    assert sol.tau == (True,) and sol.o == (False,)


def test_zero_budgets():
    inst = random_instance(1, 6)
    zero = CacheDecisionInstance(0, inst.items, 0.0, {p: 0.0 for p in inst.peer_budgets}, 0.0, 0.0)
    sol = solve_cache_transcode(zero)
    assert sol.objective == 0 and set(sol.state) == {NONE}
    assert brute_force_oracle(zero).objective == 0


def test_seed42_six_items_matches_enumeration():
    inst = random_instance(42, 6)
    assert solve_cache_transcode(inst).objective == pytest.approx(
        brute_force_oracle(inst).objective, abs=1e-6)


def test_empty_instance():
    inst = CacheDecisionInstance(0, [], 0, {}, 0, 0)
    assert solve_cache_transcode(inst).objective == 0
    assert brute_force_oracle(inst).objective == 0
    assert relaxation_bound(inst) == 0


def test_oracle_refuses_large():
    with pytest.raises(ValueError):
        brute_force_oracle(random_instance(0, 13))


def test_oracle_lexicographic_ties():
    # transcode and cache give the same value; the smaller state (transcode) wins
    inst = one_item(transcode_ok=True)
    assert brute_force_oracle(inst).state == (TRANSCODE,)


def test_transcode_needs_flag():
    inst = one_item(budget=1000)
    inst.cache_budget = 0
    sol = solve_cache_transcode(inst)
    assert sol.objective == 0  # cannot cache, transcode not allowed


@pytest.mark.parametrize("seed", range(60))
def test_matches_oracle_and_sandwich(seed):
    n = 1 + seed % 12
    inst = random_instance(seed + 1000, n)
    bb = solve_cache_transcode(inst)
    bf = brute_force_oracle(inst)
    assert inst.feasible(bb.state)
    assert bb.objective == pytest.approx(bf.objective, abs=1e-6)
    assert relaxation_bound(inst) >= bb.objective - 1e-9 >= -1e-9


def test_scaling_invariance():
    for seed in range(30):
        inst = random_instance(seed, 9)
        base = solve_cache_transcode(inst)
        for f in (0.5, 2.0, 8.0):
            scaled = CacheDecisionInstance(
                0, [CacheItem(it.key, it.size, it.nu_tau * f, it.nu_o * f, it.peer,
                              it.transcode_ok, it.cycles) for it in inst.items],
                inst.cache_budget, inst.peer_budgets, inst.cloud_budget, inst.compute_budget)
            sol = solve_cache_transcode(scaled)
            assert sol.state == base.state
            assert sol.objective == pytest.approx(f * base.objective)


def test_instance_round_trip(tmp_path):
    inst = random_instance(5, 7)
    p = tmp_path / "i.json"
    save_instance(inst, p)
    back = load_instance(p)
    assert back.to_dict() == inst.to_dict()


def test_corrupted_dump(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text("{not json")
    with pytest.raises(InstanceFormatError):
        load_instance(p)
    p.write_text(json.dumps({"items": [{"key": [1]}]}))
    with pytest.raises(InstanceFormatError):
        load_instance(p)


def test_invalid_budgets_rejected():
    with pytest.raises(ValueError):
        CacheDecisionInstance(0, [], -1, {}, 0, 0)
    with pytest.raises(ValueError):
        CacheDecisionInstance(0, [CacheItem(("v", 1, 1), 1, 1, 1, peer=3)], 1, {}, 1, 1)


def test_resolver_memo_and_fresh_equality():
    r = IncrementalResolver()
    inst = random_instance(3, 8)
    a = r.solve(inst)
    b = r.solve(inst)
    assert a is b and r.hits == 1 and r.misses == 1
    items = list(inst.items)
    it = items[2]
    items[2] = CacheItem(it.key, it.size, it.nu_tau + 3.0, it.nu_o + 3.0, it.peer,
                         it.transcode_ok, it.cycles)
    changed = CacheDecisionInstance(0, items, inst.cache_budget, inst.peer_budgets,
                                    inst.cloud_budget, inst.compute_budget)
    c = r.solve(changed, changed_client=7)
    assert r.misses == 2
    fresh = solve_cache_transcode(changed)
    assert c.state == fresh.state and c.objective == fresh.objective
    assert r.solve(CacheDecisionInstance(0, [], 0, {}, 0, 0)).objective == 0


@settings(max_examples=150, deadline=None)
@given(st.integers(0, 10 ** 6), st.integers(0, 10))
def test_solver_property(seed, n):
    inst = random_instance(seed, n)
    bb = solve_cache_transcode(inst)
    assert inst.feasible(bb.state)
    assert bb.objective == pytest.approx(brute_force_oracle(inst).objective, abs=1e-6)


def test_transcode_feasible_cases():
    held = {("v", 1, 3)}
    assert transcode_feasible("v", 1, 1, held.__contains__, 3) == ("v", 1, 3)
    assert transcode_feasible("v", 1, 3, {("v", 1, 1)}.__contains__, 3) is None
    assert transcode_feasible("v", 1, 2, set().__contains__, 3) is None
    assert transcode_feasible("v", 1, 3, {("v", 1, 1)}.__contains__, 3, unrestricted=True) == ("v", 1, 1)


# scheduling --------------------------------------------------------------

def small_variant(level=1, frames=10, frame_bytes=100):
    return flat_variant(level, n_frames=frames, frame_bytes=frame_bytes)


def client(cid, snr=30.0, n_rbs=4, cands=None, enodeb=0, urgency=6.0, last=None):
    if cands is None:
        cands = [Candidate(1, small_variant(), ("v", 1, 1), mode="hit")]
    return SchedClient(cid, enodeb, np.full(n_rbs, snr), urgency, last, 3, cands)


def budgets(cache=1e9):
    return ServerBudgets(cache, {}, 1e9, 1e12)


def test_rb_cost_empty_queue():
    var = small_variant()
    cl = client(0, cands=[Candidate(1, var, ("v", 1, 1), mode="hit", phi=var.size_bytes)])
    tab = UtilityTable([cl], CtraOptions())
    assert rb_cost(cl, 0, [], tab, 0, MCS) == 0.0


def test_rb_cost_first_rb_equals_full_utility():
    cl = client(0)
    tab = UtilityTable([cl], CtraOptions())
    assert rb_cost(cl, 0, [], tab, 0, MCS) == pytest.approx(set_utility(cl, [0], tab, 0, MCS))
    assert set_utility(cl, [], tab, 0, MCS) == 0.0


def test_rb_cost_zero_when_no_frame_completes():
    # a single 1 MB frame cannot complete with a few RBs, and nothing else changes
    big = PresentationVariant(1, 10 ** 6, 1e6, (10 ** 6,), (10.0,), frame_rate=0.5)
    cl = client(0, cands=[Candidate(1, big, ("v", 1, 1), mode="hit")])
    tab = UtilityTable([cl], CtraOptions())
    assert rb_cost(cl, 1, [0], tab, 0, MCS) == 0.0


def test_rb_cost_nonnegative_random():
    rng = np.random.default_rng(0)
    for _ in range(200):
        frames = int(rng.integers(1, 30))
        var = small_variant(frames=frames, frame_bytes=int(rng.integers(50, 3000)))
        cl = client(0, snr=float(rng.uniform(-5, 30)), n_rbs=6, urgency=float(rng.uniform(0, 7)),
                    last=int(rng.integers(1, 4)),
                    cands=[Candidate(l, var, ("v", 1, l), mode="miss") for l in (1, 2)])
        tab = UtilityTable([cl], CtraOptions())
        k = int(rng.integers(0, 5))
        assert rb_cost(cl, k, list(range(k)), tab, 0, MCS) >= 0.0


def test_ctra_c9_stop():
    cl = client(0, n_rbs=2)
    dv = ctra_schedule(0, [cl], 2, MCS, budgets())
    owner = dv.rb_owner[0]
    assert list(owner) == [0, -1]
    assert dv.delivery[0].source == "hit"


def test_ctra_tie_lower_id():
    a, b = client(3, n_rbs=1), client(1, n_rbs=1)
    dv = ctra_schedule(0, [a, b], 1, MCS, budgets())
    assert list(dv.rb_owner[0]) == [1]


def test_ctra_zero_rbs():
    seen = []
    cl = client(0, n_rbs=0, cands=[Candidate(1, small_variant(), ("v", 1, 1), mode="miss")])
    dv = ctra_schedule(0, [cl], 0, MCS, budgets(), instance_hook=seen.append)
    assert len(dv.rb_owner[0]) == 0 and dv.delivery == {} and dv.tau[0] == {}
    assert seen[0].n == 0


def test_reduce_all_cached_gives_empty_instance():
    seen = []
    ctra_schedule(0, [client(0), client(1)], 4, MCS, budgets(), instance_hook=seen.append)
    assert seen[0].n == 0


def test_reduce_aggregates_and_expands_levels():
    var = [small_variant(l, frame_bytes=100 * l) for l in (1, 2, 3)]
    cands = lambda: [Candidate(l, var[l - 1], ("v", 1, l), mode="miss") for l in (1, 2, 3)]
    seen = []
    one = client(0, n_rbs=8, cands=cands())
    ctra_schedule(0, [one], 8, MCS, budgets(), instance_hook=seen.append)
    assert [it.key for it in seen[0].items] == [("v", 1, 1), ("v", 1, 2), ("v", 1, 3)]

    # two clients on separate eNodeBs requesting the same items: NU adds up
    a, b = client(0, n_rbs=8, cands=cands()), client(1, n_rbs=8, cands=cands(), enodeb=1)
    ctra_schedule(0, [a, b], 8, MCS, budgets(), instance_hook=seen.append)
    for it_one, it_two in zip(seen[0].items, seen[1].items):
        assert it_two.nu_tau == pytest.approx(2 * it_one.nu_tau)
        assert it_two.nu_tau == it_two.nu_o


def test_ctra_fetch_respects_cache_budget():
    var = small_variant()
    cl = client(0, cands=[Candidate(1, var, ("v", 1, 1), mode="miss")])
    dv = ctra_schedule(0, [cl], 4, MCS, budgets(cache=var.size_bytes - 1))
    assert dv.tau[0] == {} and dv.delivery == {} and list(dv.rb_owner[0]) == [-1] * 4
    dv = ctra_schedule(0, [cl], 4, MCS, budgets(cache=var.size_bytes))
    assert dv.tau[0] == {("v", 1, 1): None} and dv.delivery[0].source == "fetch"


def test_greedy_never_double_assigns():
    rng = np.random.default_rng(5)
    for _ in range(30):
        cls = [client(k, snr=float(rng.uniform(0, 25)), n_rbs=20,
                      cands=[Candidate(1, small_variant(frame_bytes=int(rng.integers(100, 4000))),
                                       ("v", k, 1), mode="hit")])
               for k in range(5)]
        tab = UtilityTable(cls, CtraOptions())
        ra = greedy_assign(cls, tab, MCS, 20)
        assert ra.counts.sum() == (ra.owner >= 0).sum()


def test_round_robin_single_and_fair():
    one = client(0, snr=5.0, n_rbs=10)
    rbs, m, _ = round_robin_assign([one], 10, MCS, {0: 10 ** 7})
    assert rbs[0] == list(range(10))
    two = [client(0, snr=5.0, n_rbs=11), client(1, snr=5.0, n_rbs=11)]
    rbs, m, _ = round_robin_assign(two, 11, MCS, {0: 10 ** 7, 1: 10 ** 7})
    assert abs(len(rbs[0]) - len(rbs[1])) <= 1
    assert set(m) == {0, 1}
