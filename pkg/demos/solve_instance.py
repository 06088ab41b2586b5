"""Solve one random cache/transcode instance three ways and compare."""
import sys

from mecsim.optimizer import brute_force_oracle, random_instance, relaxation_bound, solve_cache_transcode

seed = int(sys.argv[1]) if len(sys.argv) > 1 else 7
inst = random_instance(seed, 10)
bb = solve_cache_transcode(inst)
bf = brute_force_oracle(inst)
print(f"instance seed {seed}: {inst.n} items")
print(f"LP relaxation bound  {relaxation_bound(inst):.4f}")
print(f"branch and bound     {bb.objective:.4f}  ({bb.nodes} nodes)")
print(f"brute force          {bf.objective:.4f}")
names = {0: "-", 1: "transcode", 2: "cache"}
for item, choice in zip(inst.items, bb.state):
    print(f"  {item.key}  {names[int(choice)]}")
