"""Reference policies: LRU-RR and LFU-RR, plus the policy registry.

Both keep a single cache pool without tiers or peer cooperation.  The
requested level follows a throughput rule (the highest level whose rate fits
the client's smoothed capacity); a miss is served by down-transcoding a
cached higher level when compute allows, otherwise fetched from the cloud
and admitted to the cache.  RBs go round robin, one per backlogged client per
turn.
"""
from __future__ import annotations

import numpy as np

from . import cache as cachemod
from .optimizer import Delivery, DecisionVector, round_robin_assign, transcode_feasible

POLICY_NAMES = frozenset({"ctra", "lru-rr", "lfu-rr"})
OUT_OF_SCOPE = {
    "rbcc": "defined in an external reference with too little detail to reproduce",
    "greedy-msmc": "defined in an external reference with too little detail to reproduce",
}


def abr_level(cp_bps, rates: list[float]) -> int:
    """Highest level whose encoded rate is <= the smoothed capacity; level 1 if unknown."""
    if cp_bps is None:
        return 1
    best = 1
    for l, r in enumerate(rates, start=1):
        if r <= cp_bps:
            best = l
    return best


class RoundRobinPolicy:
    name = "rr"
    tiered = False

    def __init__(self):
        self.pointer: dict = {}

    def eviction_order(self, srv):
        raise NotImplementedError

    def decide(self, world, budget, snr):
        cat, cfg = world.catalog, world.cfg
        dv = DecisionVector()
        from .sim import hit_reserve

        for q, srv in enumerate(world.servers):
            dv.tau[q], dv.transcode[q] = {}, {}
            wanted = {}
            for c in world.clients:
                if c.server != q or c.request is None:
                    continue
                if c.locked_key is not None:
                    dv.delivery[c.client_id] = Delivery(c.locked_key, "queued", None, c.phi)
                    continue
                vid, i = c.request
                seg = cat.segment(vid, i)
                wanted[c.client_id] = (vid, i, abr_level(c.cp_ewma, [v.rate_bps for v in seg.variants]))
            room = srv.sc_bytes - hit_reserve(world, q, wanted.values())
            cloud, compute = budget.cloud[q], budget.compute[q]
            for k, key in wanted.items():
                vid, i, l = key
                c = world.clients[k]
                size = cat.variant(*key).size_bytes
                if srv.holds(key):
                    dv.delivery[c.client_id] = Delivery(key, "hit")
                    continue
                if key in dv.tau[q]:
                    dv.delivery[c.client_id] = Delivery(key, "fetch")
                    continue
                src = transcode_feasible(vid, i, l, srv.holds, cat.levels, cfg.unrestricted_transcode)
                cyc = cfg.mu_cycles_per_byte * size
                if key in dv.transcode[q] or (src is not None and cyc <= compute):
                    if key not in dv.transcode[q]:
                        dv.transcode[q][key] = src
                        compute -= cyc
                    dv.delivery[c.client_id] = Delivery(key, "transcode", dv.transcode[q][key])
                    continue
                if size <= cloud and size <= room:
                    dv.tau[q][key] = None
                    cloud -= size
                    room -= size
                    dv.delivery[c.client_id] = Delivery(key, "fetch")
        for h in range(len(world.topology.enodeb_server)):
            group = [c for c in world.clients if c.enodeb == h and c.client_id in dv.delivery]
            ls = {}
            for c in group:
                d = dv.delivery[c.client_id]
                ls[c.client_id] = cat.variant(*d.key).size_bytes - d.phi
            from .optimizer import SchedClient
            sc = [SchedClient(c.client_id, h, snr[c.client_id], 0.0, None, cat.levels) for c in group]
            rbs, mcs, nxt = round_robin_assign(sc, cfg.n_rbs, world.mcs, ls, self.pointer.get(h, 0))
            self.pointer[h] = nxt
            owner = np.full(cfg.n_rbs, -1)
            for k, lst in rbs.items():
                owner[lst] = k
                dv.mcs[k] = mcs[k]
            dv.rb_owner[h] = owner
        return dv

    def maintain(self, world, budget, row) -> None:
        for srv in world.servers:
            srv.period_requests.clear()


class LruRr(RoundRobinPolicy):
    name = "lru-rr"

    def eviction_order(self, srv):
        return cachemod.lru_order(srv)


class LfuRr(RoundRobinPolicy):
    name = "lfu-rr"

    def eviction_order(self, srv):
        return cachemod.lfu_order(srv)


def make_policy(name: str):
    from .sim import CtraPolicy

    if name in OUT_OF_SCOPE:
        raise ValueError(f"policy {name!r} is not implemented: {OUT_OF_SCOPE[name]}")
    table = {"ctra": CtraPolicy, "lru-rr": LruRr, "lfu-rr": LfuRr}
    if name not in table:
        raise ValueError(f"unknown policy {name!r}; choose from {sorted(table)}")
    return table[name]()
