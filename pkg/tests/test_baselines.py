import pytest

from mecsim.baselines import LfuRr, LruRr, abr_level, make_policy
from mecsim.sim import ConfigError, ScenarioConfig, finalize_metrics, run


def test_abr_level():
    rates = [400e3, 560e3, 784e3]
    assert abr_level(None, rates) == 1
    assert abr_level(100e3, rates) == 1
    assert abr_level(600e3, rates) == 2
    assert abr_level(784e3, rates) == 3
    assert abr_level(1e9, rates) == 3


def test_registry():
    assert isinstance(make_policy("lru-rr"), LruRr)
    assert isinstance(make_policy("lfu-rr"), LfuRr)
    assert make_policy("ctra").tiered
    with pytest.raises(ValueError, match="not implemented"):
        make_policy("rbcc")
    with pytest.raises(ValueError, match="unknown policy"):
        make_policy("fifo")
    with pytest.raises(ConfigError, match="not implemented"):
        ScenarioConfig(policy="greedy-msmc").validate()


@pytest.mark.parametrize("policy", ["lru-rr", "lfu-rr"])
def test_baseline_round_robin_counts(policy):
    cfg = ScenarioConfig(policy=policy, n_clients=12, total_periods=80, n_rbs=25,
                         poisson_lambda=20.0, check_constraints=True,
                         catalog={"n_videos": 6, "segments_max": 12})
    world = run(cfg)
    assert world.violations == []
    assert finalize_metrics(world)["segments_completed"] > 0


def test_single_backlogged_client_gets_every_rb():
    cfg = ScenarioConfig(policy="lru-rr", n_clients=1, total_periods=0, n_rbs=10,
                         poisson_lambda=1e4, ref_snr_db=-10.0, catalog={"n_videos": 3})
    from mecsim.sim import build_world, step
    w = build_world(cfg)
    step(w)
    # weak channel: the first segment needs more than 10 RBs of capacity
    assert w.rows[-1].assigned_rbs == 10
