"""MEC cache lifecycle.

Each server keeps two tiers: ``tier1`` holds head segments of the most
popular videos and is refreshed once per long period; ``tier23`` holds
everything else and is trimmed by delete priority every short period.
Entries are keyed by ``(video_id, segment_index, level)``.
"""
from __future__ import annotations

import bisect
import json
import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Callable, Iterable

from .catalog import VideoCatalog

Key = tuple  # (video_id, segment_index, level)

ZETA = 0.8
ALPHA = 0.5
LAMBDA = 0.5


class PartialEvictionError(RuntimeError):
    def __init__(self, needed: int, freed: int, evicted: list):
        super().__init__(f"could only free {freed} of {needed} bytes (rest pinned)")
        self.needed = needed
        self.freed = freed
        self.evicted = evicted


@dataclass
class CacheEntry:
    video_id: str
    segment_index: int
    level: int
    size_bytes: int
    pins: int = 0

    @property
    def key(self) -> Key:
        return (self.video_id, self.segment_index, self.level)

    @property
    def pinned(self) -> bool:
        return self.pins > 0


@dataclass
class MecServerState:
    server_id: int
    sh_bytes: int = 0
    sc_bytes: int = 0
    compute_cycles_per_s: float = 3.6e9
    peer_links: dict = field(default_factory=dict)  # peer id -> bytes/s
    cloud_link: float = 500e6 / 8
    tier1: dict = field(default_factory=dict)
    tier23: dict = field(default_factory=dict)
    delete_priority: dict = field(default_factory=dict)
    period_requests: dict = field(default_factory=dict)  # key -> set of client ids
    video_requests: Counter = field(default_factory=Counter)  # cumulative, per video
    key_requests: Counter = field(default_factory=Counter)  # cumulative, per key
    last_access: dict = field(default_factory=dict)
    tier1_pending: dict = field(default_factory=dict)  # key -> size, reserved in tier1

    # occupancy ----------------------------------------------------------
    def used_tier1(self) -> int:
        return sum(e.size_bytes for e in self.tier1.values())

    def used_tier23(self) -> int:
        return sum(e.size_bytes for e in self.tier23.values())

    def free_tier23(self) -> int:
        return self.sc_bytes - self.used_tier23()

    def pinned_tier23(self) -> int:
        return sum(e.size_bytes for e in self.tier23.values() if e.pinned)

    @property
    def total_bytes(self) -> int:
        return self.sh_bytes + self.sc_bytes

    def holds(self, key: Key) -> bool:
        return key in self.tier1 or key in self.tier23

    def entry(self, key: Key) -> CacheEntry | None:
        return self.tier1.get(key) or self.tier23.get(key)

    def keys(self) -> Iterable[Key]:
        yield from self.tier1
        yield from self.tier23

    # mutation -----------------------------------------------------------
    def insert(self, entry: CacheEntry, now: int = 0) -> None:
        """Insert into tier1 if reserved there, else tier23 (space must be free)."""
        key = entry.key
        if self.holds(key):
            raise ValueError(f"duplicate cache entry {key}")
        if key in self.tier1_pending:
            del self.tier1_pending[key]
            self.tier1[key] = entry
        else:
            if entry.size_bytes > self.free_tier23():
                raise ValueError(f"no room for {key} in tier 2/3")
            self.tier23[key] = entry
        self.last_access[key] = now

    def remove(self, key: Key) -> CacheEntry:
        e = self.tier23.pop(key, None) or self.tier1.pop(key)
        self.delete_priority.pop(key, None)
        self.last_access.pop(key, None)
        return e

    def touch(self, key: Key, now: int) -> None:
        self.last_access[key] = now

    def pin(self, key: Key) -> None:
        self.entry(key).pins += 1

    def unpin(self, key: Key) -> None:
        e = self.entry(key)
        if e is not None and e.pins > 0:
            e.pins -= 1

    def record_request(self, key: Key, client_id: int) -> None:
        self.period_requests.setdefault(key, set()).add(client_id)
        self.video_requests[key[0]] += 1
        self.key_requests[key] += 1

    def snapshot(self) -> dict:
        def dump(tier):
            return [[*k, e.size_bytes, e.pins, self.delete_priority.get(k)]
                    for k, e in sorted(tier.items())]
        return {
            "server_id": self.server_id,
            "sh_bytes": self.sh_bytes,
            "sc_bytes": self.sc_bytes,
            "used_tier1": self.used_tier1(),
            "used_tier23": self.used_tier23(),
            "tier1": dump(self.tier1),
            "tier23": dump(self.tier23),
            "tier1_pending": sorted([*k, s] for k, s in self.tier1_pending.items()),
        }

    def dump_snapshot(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.snapshot(), fh, indent=1)

    def check(self) -> None:
        assert self.used_tier1() + sum(self.tier1_pending.values()) <= self.sh_bytes, "tier1 overfull"
        assert self.used_tier23() <= self.sc_bytes, "tier2/3 overfull"
        assert all(v >= 0 for v in self.delete_priority.values())


# predeployment -----------------------------------------------------------

def predeploy_capacities(demands: list[float], total_bytes: int) -> list[int]:
    """Split `total_bytes` across regions in proportion to historical demand.

    Largest-remainder rounding keeps the sum exact; an all-zero history falls
    back to an equal split.
    """
    if total_bytes < 0:
        raise ValueError("total_bytes must be nonnegative")
    if any(d < 0 for d in demands):
        raise ValueError("demands must be nonnegative")
    n = len(demands)
    if n == 0:
        return []
    tot = float(sum(demands))
    shares = [1.0 / n] * n if tot == 0 else [d / tot for d in demands]
    raw = [total_bytes * s for s in shares]
    base = [math.floor(r) for r in raw]
    short = total_bytes - sum(base)
    order = sorted(range(n), key=lambda q: (-(raw[q] - base[q]), q))
    for q in order[:short]:
        base[q] += 1
    return base


def popularity_ranking(counts: Counter, video_ids: list[str]) -> list[str]:
    """Descending request count; ties broken by id."""
    return sorted(video_ids, key=lambda v: (-counts.get(v, 0), v))


def top_videos(ranking: list[str], fraction: float = 0.2) -> list[str]:
    if not ranking:
        return []
    return ranking[: max(1, math.ceil(fraction * len(ranking)))]


def initial_fill(server: MecServerState, catalog: VideoCatalog, ranking: list[str],
                 level: int = 1, tiered: bool = True, top_fraction: float = 0.2) -> None:
    """Place head segments of popular videos until the next one would not fit.

    The cache is treated as one pool of ``sh_bytes + sc_bytes``; afterwards
    entries of the top videos form tier 1 and tier 1's size becomes the bytes
    it holds.
    """
    if server.tier1 or server.tier23:
        raise ValueError("initial_fill needs an empty cache")
    capacity = server.total_bytes
    used = 0
    placed = []
    done = False
    for vid in ranking:
        for i in range(1, catalog.head_segments(vid) + 1):
            var = catalog.variant(vid, i, level)
            if used + var.size_bytes > capacity:
                done = True
                break
            placed.append(CacheEntry(vid, i, level, var.size_bytes))
            used += var.size_bytes
        if done:
            break
    top = set(top_videos(ranking, top_fraction)) if tiered else set()
    sh = sum(e.size_bytes for e in placed if e.video_id in top)
    server.sh_bytes, server.sc_bytes = sh, capacity - sh
    for e in placed:
        (server.tier1 if e.video_id in top else server.tier23)[e.key] = e
        server.last_access[e.key] = 0


# delete priority -----------------------------------------------------------

def capacity_match(avg_capacity_bps: float, rate_bps: float) -> int:
    return int(avg_capacity_bps >= rate_bps)


def delete_priority_period(rates: dict, requests: dict, client_capacity: dict,
                           zeta: float = ZETA, alpha: float = ALPHA) -> dict:
    """Current-period delete priority for every key in `rates`.

    rates: key -> R (bps).  requests: key -> ids of clients that requested it
    this period.  client_capacity: client id -> average capacity (bps) for all
    K_q clients of the region.  Higher value = better eviction candidate.
    """
    if zeta <= 0 or alpha <= 0:
        raise ValueError("zeta and alpha must be positive")
    K = len(client_capacity)
    if K == 0:
        return {}
    caps = sorted(client_capacity.values())
    w00, w01 = 1.0 / alpha, 1.0 / (zeta + alpha)          # not requested
    w10, w11 = 1.0 / (1.0 + alpha), 1.0 / (1.0 + zeta + alpha)  # requested
    out = {}
    for key, rate in rates.items():
        n_match = K - bisect.bisect_left(caps, rate)
        req = [c for c in requests.get(key, ()) if c in client_capacity]
        req_match = sum(1 for c in req if client_capacity[c] >= rate)
        req_nomatch = len(req) - req_match
        total = ((n_match - req_match) * w01 + (K - n_match - req_nomatch) * w00
                 + req_match * w11 + req_nomatch * w10)
        out[key] = total / K
    return out


def update_overall_priority(prev: float | None, current: float, lam: float = LAMBDA) -> float:
    """EWMA of the current-period priority with the previous overall value."""
    if not 0.0 <= lam <= 1.0:
        raise ValueError("lambda must lie in [0, 1]")
    if prev is None:
        return current
    return prev + lam * (current - prev)  # exact fixed point at current == prev


def refresh_delete_priorities(server: MecServerState, catalog: VideoCatalog,
                              client_capacity: dict, zeta=ZETA, alpha=ALPHA,
                              lam=LAMBDA) -> None:
    rates = {k: catalog.variant(*k).rate_bps for k in server.tier23}
    cur = delete_priority_period(rates, server.period_requests, client_capacity, zeta, alpha)
    server.delete_priority = {
        k: update_overall_priority(server.delete_priority.get(k), v, lam) for k, v in cur.items()
    }


# eviction ------------------------------------------------------------------

def dp_order(server: MecServerState) -> Callable:
    """Sort key: highest delete priority first, then larger size, then id."""
    dp = server.delete_priority
    return lambda e: (-dp.get(e.key, 0.0), -e.size_bytes, e.key)


def lru_order(server: MecServerState) -> Callable:
    la = server.last_access
    return lambda e: (la.get(e.key, -1), e.key)


def lfu_order(server: MecServerState) -> Callable:
    la, cnt = server.last_access, server.key_requests
    return lambda e: (cnt.get(e.key, 0), la.get(e.key, -1), e.key)


def evict_for(server: MecServerState, needed_bytes: int, order: Callable | None = None) -> list:
    """Evict unpinned tier-2/3 entries until `needed_bytes` are free."""
    if needed_bytes > server.sc_bytes:
        raise ValueError("needed_bytes exceeds the tier 2/3 capacity")
    free = server.free_tier23()
    if free >= needed_bytes:
        return []
    key_fn = order or dp_order(server)
    evicted = []
    for e in sorted(server.tier23.values(), key=key_fn):
        if free >= needed_bytes:
            break
        if e.pinned:
            continue
        server.remove(e.key)
        free += e.size_bytes
        evicted.append(e)
    if free < needed_bytes:
        raise PartialEvictionError(needed_bytes, sum(e.size_bytes for e in evicted), evicted)
    return evicted


# long-period tier-1 refresh --------------------------------------------------

def tier1_target(catalog: VideoCatalog, ranking: list[str], max_bytes: float = math.inf,
                 all_levels: bool = True, level: int = 1, top_fraction: float = 0.2) -> dict:
    """Head segments of the top videos, in popularity order, capped at `max_bytes`."""
    target = {}
    used = 0
    levels = range(1, catalog.levels + 1) if all_levels else (level,)
    for vid in top_videos(ranking, top_fraction):
        for i in range(1, catalog.head_segments(vid) + 1):
            for l in levels:
                size = catalog.variant(vid, i, l).size_bytes
                if used + size <= max_bytes:
                    target[(vid, i, l)] = size
                    used += size
    return target


def refresh_tier1(server: MecServerState, target: dict, now: int = 0,
                  order: Callable | None = None) -> tuple[int, list]:
    """Resize tier 1 to the target set and swap its contents.

    Returns (FC, evicted).  SH + SC is conserved.  Target entries already in
    tier 2/3 are promoted; missing ones are reserved in ``tier1_pending`` and
    filled as fetch budget allows.  Old tier-1 entries leaving the target are
    demoted to tier 2/3 when room remains, otherwise dropped.
    """
    target_bytes = sum(target.values())
    fc = target_bytes - server.sh_bytes

    for key in [k for k in server.tier23 if k in target]:
        server.tier1[key] = server.tier23.pop(key)
        server.delete_priority.pop(key, None)
    leaving = [server.tier1.pop(k) for k in list(server.tier1) if k not in target]

    evicted = []
    if fc >= 0:
        evicted = evict_for(server, fc, order)
    server.sh_bytes += fc
    server.sc_bytes -= fc

    # pinned entries are still being sent: give them first claim on the room
    for e in sorted(leaving, key=lambda e: (not e.pinned, e.key)):
        if e.size_bytes <= server.free_tier23():
            server.tier23[e.key] = e
        else:
            server.last_access.pop(e.key, None)
            evicted.append(e)
    server.tier1_pending = {k: s for k, s in target.items() if k not in server.tier1}
    return fc, evicted


# cooperation ----------------------------------------------------------------

@dataclass(frozen=True)
class LocalHit:
    pass


@dataclass(frozen=True)
class PeerHit:
    peer: int


@dataclass(frozen=True)
class CloudOnly:
    pass


@dataclass
class Topology:
    servers: list  # MecServerState, index = server id
    enodeb_server: list  # eNodeB index -> server id
    client_enodeb: list  # client id -> eNodeB index

    def __post_init__(self):
        n = len(self.servers)
        if any(not 0 <= q < n for q in self.enodeb_server):
            raise ValueError("every eNodeB must map to one server")
        if any(not 0 <= h < len(self.enodeb_server) for h in self.client_enodeb):
            raise ValueError("every client must map to one eNodeB")

    def client_server(self, k: int) -> int:
        return self.enodeb_server[self.client_enodeb[k]]

    def clients_of_server(self, q: int) -> list[int]:
        return [k for k, h in enumerate(self.client_enodeb) if self.enodeb_server[h] == q]

    def enodebs_of_server(self, q: int) -> list[int]:
        return [h for h, s in enumerate(self.enodeb_server) if s == q]


@dataclass
class LinkBudget:
    """Bytes and cycles left this period, decremented by fetches and transcodes."""

    peer: dict  # (q, p) -> bytes
    cloud: dict  # q -> bytes
    compute: dict  # q -> cycles

    @classmethod
    def for_period(cls, servers: list, td_s: float) -> "LinkBudget":
        peer = {(s.server_id, p): cap * td_s for s in servers for p, cap in s.peer_links.items()}
        cloud = {s.server_id: s.cloud_link * td_s for s in servers}
        compute = {s.server_id: s.compute_cycles_per_s * td_s for s in servers}
        return cls(peer, cloud, compute)

    def take_peer(self, q: int, p: int, nbytes: float) -> None:
        if nbytes > self.peer[(q, p)] + 1e-6:
            raise AssertionError(f"peer link {q}<-{p} over budget")
        self.peer[(q, p)] -= nbytes

    def take_cloud(self, q: int, nbytes: float) -> None:
        if nbytes > self.cloud[q] + 1e-6:
            raise AssertionError(f"cloud link of {q} over budget")
        self.cloud[q] -= nbytes

    def take_compute(self, q: int, cycles: float) -> None:
        if cycles > self.compute[q] + 1e-6:
            raise AssertionError(f"compute of {q} over budget")
        self.compute[q] -= cycles


def locate(key: Key, size: int, q: int, topology: Topology, budget: LinkBudget | None = None,
           cooperative: bool = True):
    """Where the home server `q` can get `key`: locally, from a peer, or the cloud.

    Among peers holding the entry the one with the highest remaining link
    budget wins (ties -> lower id); a peer whose budget cannot carry the
    segment this period does not count.
    """
    servers = topology.servers
    if servers[q].holds(key):
        return LocalHit()
    if cooperative:
        best, best_budget = None, -1.0
        for p, srv in enumerate(servers):
            if p == q or not srv.holds(key) or p not in servers[q].peer_links:
                continue
            left = budget.peer[(q, p)] if budget is not None else math.inf
            if left >= size and left > best_budget:
                best, best_budget = p, left
        if best is not None:
            return PeerHit(best)
    return CloudOnly()
