"""Run one small scenario under each policy and print the headline metrics."""
from mecsim.sim import ScenarioConfig, finalize_metrics, run

BASE = dict(n_clients=12, total_periods=300, n_rbs=50, catalog={"n_videos": 8}, seed=1)

print(f"{'policy':8} {'thr Mbps':>9} {'rebuf s':>8} {'hit':>6} {'switches':>9} {'backhaul MB':>12}")
for policy in ("ctra", "lru-rr", "lfu-rr"):
    m = finalize_metrics(run(ScenarioConfig(policy=policy, **BASE)))
    hit = m["hit_ratio"] if m["hit_ratio"] is not None else float("nan")
    print(f"{policy:8} {m['mean_throughput_bps'] / 1e6:9.3f} {m['mean_rebuffer_s']:8.2f} "
          f"{hit:6.3f} {m['mean_switch_count']:9.2f} {m['backhaul_bytes'] / 1e6:12.1f}")
