"""Time-stepped multi-MEC DASH simulator.

One call to :func:`step` advances a period of ``td_s`` seconds: requests,
channel draw, policy decision, transfers against link budgets, radio
delivery, playback, then cache maintenance.  A run is a pure function of the
config (which carries the seed).
"""
from __future__ import annotations

import csv
import dataclasses
import io
import json
import math
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from . import cache as cachemod
from .cache import LinkBudget, MecServerState, Topology
from .catalog import CatalogSpec, VideoCatalog, generate_synthetic_catalog, load_catalog
from .radio import ChannelModel, McsTable, bler
from .utility import UtilityWeights

ENODEB_POSITIONS = ((600, 342), (600, -342), (0, -690), (-600, -342), (-600, 342), (0, 690))
MEC_POSITIONS = ((-600, 0), (0, 0), (600, 0))


class ConfigError(ValueError):
    pass


@dataclass
class ScenarioConfig:
    seed: int = 0
    policy: str = "ctra"
    n_clients: int = 40
    total_periods: int = 1200
    td_s: float = 0.05
    periods_per_long_period: int = 20
    zipf_beta: float = 0.6
    poisson_lambda: float = 0.8
    enodeb_positions: list = field(default_factory=lambda: [list(p) for p in ENODEB_POSITIONS])
    mec_positions: list = field(default_factory=lambda: [list(p) for p in MEC_POSITIONS])
    cell_radius_m: float = 350.0
    n_rbs: int = 100
    ttis_per_period: int = 50
    re_per_rb: int = 120
    ref_snr_db: float = 20.0
    pathloss_exponent: float = 3.5
    shadow_sigma_db: float = 8.0
    mcs_table_path: str | None = None
    catalog: dict = field(default_factory=dict)  # CatalogSpec overrides
    catalog_path: str | None = None
    catalog_seed: int | None = None  # defaults to seed
    cache_fraction: float = 0.2  # total MEC cache as a fraction of catalog bytes
    total_cache_bytes: int | None = None  # overrides cache_fraction
    cloud_link_mbps: float = 500.0
    peer_link_mbps: float = 200.0
    compute_cycles_per_s: float = 3.6e9
    mu_cycles_per_byte: float = 30.0
    theta1: float = 0.125
    theta2: float = 1.0
    theta3: float = 1.0
    theta4: float = 0.025
    omega: float = 2.0
    zeta: float = 0.8
    alpha: float = 0.5
    dp_lambda: float = 0.5
    capacity_smoothing: float = 0.3
    buffer_cap_s: float | None = None  # None: request the next segment as soon as one completes
    startup_segments: float = 1.0
    abandonment: bool = True
    abandon_median_fraction: float = 0.15
    history_requests: int = 20
    initial_fill_level: int = 1
    tier1_all_levels: bool = True
    tier1_max_fraction: float = 0.5
    cooperative: bool = True
    literal_gating: bool = False
    cumulative_psnr: bool = False
    raw_capacity: bool = False
    unrestricted_transcode: bool = False
    check_constraints: bool = False

    def validate(self) -> None:
        def need(cond, name, msg):
            if not cond:
                raise ConfigError(f"field '{name}': {msg}")

        from .baselines import OUT_OF_SCOPE, POLICY_NAMES
        need(self.policy not in OUT_OF_SCOPE, "policy",
             f"{self.policy!r} is not implemented ({OUT_OF_SCOPE.get(self.policy)})")
        need(self.policy in POLICY_NAMES, "policy", f"must be one of {sorted(POLICY_NAMES)}")
        need(isinstance(self.seed, int), "seed", "must be an integer")
        need(self.n_clients >= 0, "n_clients", "must be >= 0")
        need(self.total_periods >= 0, "total_periods", "must be >= 0")
        for name in ("td_s", "cell_radius_m", "cloud_link_mbps", "peer_link_mbps",
                     "compute_cycles_per_s", "mu_cycles_per_byte", "theta1", "theta2", "theta3",
                     "theta4", "omega", "zeta", "alpha", "startup_segments"):
            need(getattr(self, name) > 0, name, "must be positive")
        for name in ("periods_per_long_period", "n_rbs", "ttis_per_period", "re_per_rb"):
            need(isinstance(getattr(self, name), int) and getattr(self, name) >= 1, name,
                 "must be a positive integer")
        need(self.buffer_cap_s is None or self.buffer_cap_s > 0, "buffer_cap_s", "must be positive or null")
        need(self.zipf_beta >= 0, "zipf_beta", "must be >= 0")
        need(self.poisson_lambda >= 0, "poisson_lambda", "must be >= 0")
        need(0 <= self.dp_lambda <= 1, "dp_lambda", "must lie in [0, 1]")
        need(0 < self.capacity_smoothing <= 1, "capacity_smoothing", "must lie in (0, 1]")
        need(0 <= self.cache_fraction, "cache_fraction", "must be >= 0")
        need(self.total_cache_bytes is None or self.total_cache_bytes >= 0, "total_cache_bytes",
             "must be >= 0")
        need(0 < self.tier1_max_fraction <= 1, "tier1_max_fraction", "must lie in (0, 1]")
        need(0 < self.abandon_median_fraction <= 1, "abandon_median_fraction", "must lie in (0, 1]")
        need(len(self.enodeb_positions) >= 1, "enodeb_positions", "need at least one eNodeB")
        need(len(self.mec_positions) >= 1, "mec_positions", "need at least one MEC server")
        for name in ("enodeb_positions", "mec_positions"):
            need(all(len(p) == 2 for p in getattr(self, name)), name, "entries must be [x, y]")
        need(self.history_requests >= 0, "history_requests", "must be >= 0")
        if self.catalog_path is not None:
            import os
            need(os.path.exists(self.catalog_path), "catalog_path", f"no such file {self.catalog_path!r}")
        if self.mcs_table_path is not None:
            import os
            need(os.path.exists(self.mcs_table_path), "mcs_table_path",
                 f"no such file {self.mcs_table_path!r}")
        bad = set(self.catalog) - {f.name for f in dataclasses.fields(CatalogSpec)}
        need(not bad, "catalog", f"unknown catalog keys {sorted(bad)}")

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioConfig":
        if not isinstance(d, dict):
            raise ConfigError("config must be a JSON object")
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(d) - names)
        if unknown:
            raise ConfigError(f"unknown config field(s): {', '.join(unknown)}")
        try:
            cfg = cls(**d)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path) -> "ScenarioConfig":
        try:
            with open(path) as fh:
                d = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from exc
        return cls.from_dict(d)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def replace(self, **kw) -> "ScenarioConfig":
        cfg = dataclasses.replace(self, **kw)
        cfg.validate()
        return cfg

    @property
    def weights(self) -> UtilityWeights:
        return UtilityWeights(self.theta1, self.theta2, self.theta3, self.theta4, self.omega)


@dataclass
class ClientStats:
    delivered_bits: float = 0.0
    rebuffer_s: float = 0.0
    psnr_sum: float = 0.0
    frames: int = 0
    switches: int = 0
    switch_mag: float = 0.0
    segments: int = 0
    requests: int = 0
    playable_s: float = 0.0
    played_s: float = 0.0


@dataclass
class ClientState:
    client_id: int
    enodeb: int
    server: int
    mean_snr_db: float
    video_id: str | None = None
    next_index: int = 1
    request: tuple | None = None  # (video_id, segment_index) awaiting a decision or in flight
    locked_key: tuple | None = None
    locked_source: str | None = None
    pinned_key: tuple | None = None
    phi: float = 0.0
    last_level: int | None = None
    buffer_s: float = 0.0
    playing: bool = False
    download_done: bool = False
    cp_ewma: float | None = None
    stats: ClientStats = field(default_factory=ClientStats)

    @property
    def in_session(self) -> bool:
        return self.video_id is not None


@dataclass
class PeriodRow:
    period: int
    active_clients: int = 0
    delivered_bits: float = 0.0
    rebuffer_s: float = 0.0
    cloud_bytes: float = 0.0
    peer_bytes: float = 0.0
    transcode_cycles: float = 0.0
    requests: int = 0
    local_hits: int = 0
    peer_hits: int = 0
    cloud_fetches: int = 0
    switches: int = 0
    assigned_rbs: int = 0
    mean_buffer_s: float = 0.0
    cache_bytes: int = 0


PERIOD_COLUMNS = [f.name for f in dataclasses.fields(PeriodRow)]


@dataclass
class ServerCounters:
    cloud_bytes: float = 0.0
    peer_bytes: float = 0.0
    local_hits: int = 0
    peer_hits: int = 0
    cloud_fetches: int = 0
    inserted_bytes: float = 0.0
    evicted_bytes: float = 0.0
    fetched_bytes: float = 0.0


@dataclass
class World:
    cfg: ScenarioConfig
    catalog: VideoCatalog
    mcs: McsTable
    channel: ChannelModel
    topology: Topology
    clients: list
    popularity: list  # video ids in Zipf rank order
    zipf_p: np.ndarray
    policy: object
    req_rng: np.random.Generator
    tx_rng: np.random.Generator
    period: int = 0
    rows: list = field(default_factory=list)
    counters: list = field(default_factory=list)
    violations: list = field(default_factory=list)
    pending_requests: int = 0

    @property
    def servers(self) -> list:
        return self.topology.servers

    @property
    def sim_seconds(self) -> float:
        return self.period * self.cfg.td_s


# construction ----------------------------------------------------------------

def zipf_probabilities(n: int, beta: float) -> np.ndarray:
    if n == 0:
        return np.zeros(0)
    w = np.arange(1, n + 1, dtype=float) ** (-beta)
    return w / w.sum()


def abandon_probability(n_segments: int, median_fraction: float = 0.15) -> float:
    """Per-boundary departure probability whose median departure is near
    `median_fraction` of the video."""
    n = max(1.0, median_fraction * n_segments)
    return 1.0 - 0.5 ** (1.0 / n)


def _assign_enodebs(enb, mec) -> list[int]:
    out = []
    for x, y in enb:
        d = [math.hypot(x - mx, y - my) for mx, my in mec]
        out.append(int(np.argmin(d)))
    return out


def build_world(cfg: ScenarioConfig) -> World:
    cfg.validate()
    from .baselines import make_policy

    if cfg.catalog_path is not None:
        catalog = load_catalog(cfg.catalog_path)
    else:
        spec = CatalogSpec(**cfg.catalog)
        catalog = generate_synthetic_catalog(spec, cfg.seed if cfg.catalog_seed is None else cfg.catalog_seed)
    if cfg.mcs_table_path is not None:
        mcs = McsTable.load(cfg.mcs_table_path)
    else:
        mcs = McsTable.default(cfg.re_per_rb, cfg.ttis_per_period)
    channel = ChannelModel(n_rbs=cfg.n_rbs, ref_snr_db=cfg.ref_snr_db, exponent=cfg.pathloss_exponent,
                           shadow_sigma_db=cfg.shadow_sigma_db)

    n_srv = len(cfg.mec_positions)
    enb_srv = _assign_enodebs(cfg.enodeb_positions, cfg.mec_positions)
    place = np.random.default_rng([cfg.seed, 3])
    clients = []
    client_enb = []
    for k in range(cfg.n_clients):
        h = k % len(cfg.enodeb_positions)
        r = cfg.cell_radius_m * math.sqrt(place.random())
        shadow = place.normal(0.0, cfg.shadow_sigma_db)
        snr = float(channel.mean_snr_db(max(r, 1.0), shadow))
        clients.append(ClientState(k, h, enb_srv[h], snr))
        client_enb.append(h)

    vids = catalog.video_ids
    pop_rng = np.random.default_rng([cfg.seed, 5])
    popularity = [vids[i] for i in pop_rng.permutation(len(vids))]
    zipf_p = zipf_probabilities(len(vids), cfg.zipf_beta)

    # demand history drives predeployment and the initial popularity ranking
    hist_rng = np.random.default_rng([cfg.seed, 4])
    counts = [dict() for _ in range(n_srv)]
    demand = [0.0] * n_srv
    for c in clients:
        if not vids:
            break
        picks = hist_rng.choice(len(vids), size=cfg.history_requests, p=zipf_p)
        for i in picks:
            v = popularity[int(i)]
            counts[c.server][v] = counts[c.server].get(v, 0) + 1
            demand[c.server] += sum(s.variant(1).size_bytes for s in catalog.video(v).segments)
    total = cfg.total_cache_bytes
    if total is None:
        total = int(cfg.cache_fraction * catalog.total_bytes())
    caps = cachemod.predeploy_capacities(demand, int(total))

    policy = make_policy(cfg.policy)
    servers = []
    peer_Bps = cfg.peer_link_mbps * 1e6 / 8
    for q in range(n_srv):
        srv = MecServerState(q, 0, caps[q], cfg.compute_cycles_per_s,
                             {p: peer_Bps for p in range(n_srv) if p != q},
                             cfg.cloud_link_mbps * 1e6 / 8)
        srv.video_requests = Counter(counts[q])
        ranking = cachemod.popularity_ranking(srv.video_requests, vids)
        cachemod.initial_fill(srv, catalog, ranking, level=cfg.initial_fill_level,
                              tiered=policy.tiered)
        servers.append(srv)
    topo = Topology(servers, enb_srv, client_enb)
    world = World(cfg, catalog, mcs, channel, topo, clients, popularity, zipf_p, policy,
                  np.random.default_rng([cfg.seed, 1]), np.random.default_rng([cfg.seed, 2]))
    world.counters = [ServerCounters() for _ in servers]
    return world


# requests and playback -------------------------------------------------------------

def draw_requests(world: World) -> int:
    """Session arrivals for idle clients and next-segment requests; returns new requests."""
    cfg = world.cfg
    p_start = 1.0 - math.exp(-cfg.poisson_lambda * cfg.td_s)
    new = 0
    for c in world.clients:
        if not c.in_session:
            if world.popularity and world.req_rng.random() < p_start:
                i = int(world.req_rng.choice(len(world.popularity), p=world.zipf_p))
                c.video_id = world.popularity[i]
                c.next_index, c.last_level = 1, None
                c.buffer_s, c.playing, c.download_done = 0.0, False, False
            else:
                continue
        capped = cfg.buffer_cap_s is not None and c.buffer_s >= cfg.buffer_cap_s
        if c.request is None and not c.download_done and not capped:
            c.request = (c.video_id, c.next_index)
            c.stats.requests += 1
            new += 1
    return new


def playback_advance(c: ClientState, td_s: float, threshold_s: float) -> float:
    """Advance playback by one period; returns the rebuffering accrued."""
    if not c.in_session:
        return 0.0
    if not c.playing:
        if c.buffer_s >= threshold_s or (c.download_done and c.buffer_s > 0):
            c.playing = True
        else:
            return td_s  # startup delay
    played = min(td_s, c.buffer_s)
    c.buffer_s -= played
    c.stats.played_s += played
    if c.buffer_s <= 1e-12:
        c.buffer_s = 0.0
        if c.download_done:
            c.video_id = None  # watched to the end
            c.playing = False
            return 0.0
        return td_s - played
    return 0.0


def _end_session(world: World, c: ClientState) -> None:
    if c.pinned_key is not None:
        world.servers[c.server].unpin(c.pinned_key)
    c.video_id = None
    c.request = c.locked_key = c.locked_source = c.pinned_key = None
    c.phi = 0.0
    c.playing = c.download_done = False
    c.buffer_s = 0.0


# execution -------------------------------------------------------------------------

def decision_context(world: World, budget: LinkBudget) -> dict:
    """Plain-data snapshot handed to the constraint checker."""
    srvs = world.servers
    return {
        "holdings": [set(s.keys()) for s in srvs],
        "sc_bytes": [s.sc_bytes for s in srvs],
        "pinned_tier23": [s.pinned_tier23() for s in srvs],
        "peer_budget": dict(budget.peer),
        "cloud_budget": dict(budget.cloud),
        "compute_budget": dict(budget.compute),
        "enodeb_server": list(world.topology.enodeb_server),
        "client_enodeb": [c.enodeb for c in world.clients],
        "client_locked": {c.client_id: c.locked_key for c in world.clients},
        "client_phi": {c.client_id: c.phi for c in world.clients},
        "client_request": {c.client_id: c.request for c in world.clients},
        "n_rbs": world.cfg.n_rbs,
        "mu": world.cfg.mu_cycles_per_byte,
        "n_levels": world.catalog.levels,
        "unrestricted_transcode": world.cfg.unrestricted_transcode,
    }


def insert_fetched(world: World, q: int, key: tuple, order=None) -> None:
    srv = world.servers[q]
    if srv.holds(key):
        return
    size = world.catalog.variant(*key).size_bytes
    if key not in srv.tier1_pending:
        evicted = cachemod.evict_for(srv, size, order)
        world.counters[q].evicted_bytes += sum(e.size_bytes for e in evicted)
    srv.insert(cachemod.CacheEntry(*key, size), world.period)
    world.counters[q].inserted_bytes += size


def execute(world: World, dv, budget: LinkBudget, row: PeriodRow) -> None:
    cat = world.catalog
    order_fn = world.policy.eviction_order
    srvs = world.servers
    # bytes move first, then caches change, so a peer's own eviction this
    # period cannot pull an entry out from under a concurrent fetch
    fetched = []
    for q, taus in sorted(dv.tau.items()):
        for key, peer in sorted(taus.items(), key=lambda kv: kv[0]):
            size = cat.variant(*key).size_bytes
            if peer is None:
                budget.take_cloud(q, size)
                world.counters[q].cloud_bytes += size
                row.cloud_bytes += size
            else:
                assert srvs[peer].holds(key), f"peer {peer} lacks {key}"
                budget.take_peer(q, peer, size)
                world.counters[q].peer_bytes += size
                row.peer_bytes += size
            world.counters[q].fetched_bytes += size
            fetched.append((q, key))
    for q, tr in sorted(dv.transcode.items()):
        for key, src in sorted(tr.items()):
            assert srvs[q].holds(src), f"transcode source {src} missing at {q}"
            cyc = world.cfg.mu_cycles_per_byte * cat.variant(*key).size_bytes
            budget.take_compute(q, cyc)
            row.transcode_cycles += cyc
    # local hits are pinned before fetched entries claim room
    for k, d in sorted(dv.delivery.items()):
        c = world.clients[k]
        if c.locked_key is None and d.source == "hit":
            srvs[c.server].pin(d.key)
            c.pinned_key = d.key
    takers: dict = {}
    for k, d in sorted(dv.delivery.items()):
        if world.clients[k].locked_key is None and d.source == "fetch":
            takers.setdefault(d.key, []).append(world.clients[k])
    for q, key in fetched:
        insert_fetched(world, q, key, order_fn(srvs[q]))
        for c in takers.get(key, ()):
            if c.server == q:
                srvs[q].pin(key)
                c.pinned_key = key

    for k, d in sorted(dv.delivery.items()):
        c = world.clients[k]
        srv = srvs[c.server]
        if c.locked_key is None:
            assert c.request == d.key[:2], f"client {k} delivery does not match request"
            c.locked_key, c.locked_source, c.phi = d.key, d.source, 0.0
            level = d.key[2]
            if c.last_level is not None and level != c.last_level:
                c.stats.switches += 1
                c.stats.switch_mag += abs(level - c.last_level) / (world.catalog.levels - 1)
                row.switches += 1
            srv.record_request(d.key, k)
            cnt = world.counters[c.server]
            row.requests += 1
            if d.source in ("hit", "transcode"):
                cnt.local_hits += 1
                row.local_hits += 1
            elif d.source == "fetch" and dv.tau[c.server][d.key] is not None:
                cnt.peer_hits += 1
                row.peer_hits += 1
            else:
                cnt.cloud_fetches += 1
                row.cloud_fetches += 1
            srv.touch(d.key, world.period)
        else:
            assert d.key == c.locked_key, f"client {k} switched an in-flight segment"


def transmit(world: World, dv, snr: np.ndarray, row: PeriodRow) -> None:
    cfg = world.cfg
    mcs = world.mcs
    owned: dict = {}
    for h, owner in dv.rb_owner.items():
        for n in np.flatnonzero(owner >= 0):
            owned.setdefault(int(owner[n]), []).append(int(n))
    for k in sorted(owned):
        rbs = owned[k]
        c = world.clients[k]
        row.assigned_rbs += len(rbs)
        if c.locked_key is None:
            continue
        var = world.catalog.variant(*c.locked_key)
        m = dv.mcs[k]
        e = bler(float(snr[k, rbs].mean()), m, mcs)
        blocks = cfg.ttis_per_period * len(rbs)
        ok = world.tx_rng.binomial(blocks, 1.0 - e)
        bits = ok * mcs.r(m) / cfg.ttis_per_period
        remain = var.size_bytes - c.phi
        nbytes = min(bits / 8.0, remain)
        if bits / 8.0 < remain:
            a = cfg.capacity_smoothing
            cap = bits / cfg.td_s
            c.cp_ewma = cap if c.cp_ewma is None else a * cap + (1 - a) * c.cp_ewma
        z0 = var.frames_complete(c.phi)
        c.phi += nbytes
        if var.size_bytes - c.phi < 1e-6:
            c.phi = float(var.size_bytes)
        z1 = var.frames_complete(c.phi)
        c.buffer_s += (z1 - z0) / var.frame_rate
        c.stats.playable_s += (z1 - z0) / var.frame_rate
        c.stats.psnr_sum += var.cum_psnr[z1] - var.cum_psnr[z0]
        c.stats.frames += z1 - z0
        c.stats.delivered_bits += nbytes * 8.0
        row.delivered_bits += nbytes * 8.0
        if c.phi >= var.size_bytes:
            _segment_done(world, c)


def _segment_done(world: World, c: ClientState) -> None:
    srv = world.servers[c.server]
    if c.pinned_key is not None:
        srv.unpin(c.pinned_key)
    c.last_level = c.locked_key[2]
    c.stats.segments += 1
    c.request = c.locked_key = c.locked_source = c.pinned_key = None
    c.phi = 0.0
    video = world.catalog.video(c.video_id)
    c.next_index += 1
    if c.next_index > video.n_segments:
        c.download_done = True
        return
    if world.cfg.abandonment:
        p = abandon_probability(video.n_segments, world.cfg.abandon_median_fraction)
        if world.req_rng.random() < p:
            _end_session(world, c)


# the step --------------------------------------------------------------------------

def step(world: World) -> World:
    cfg = world.cfg
    row = PeriodRow(world.period)
    draw_requests(world)
    mean_snr = np.array([c.mean_snr_db for c in world.clients], dtype=float)
    snr = world.channel.realize(cfg.seed, world.period, mean_snr) if world.clients else np.zeros((0, cfg.n_rbs))
    budget = LinkBudget.for_period(world.servers, cfg.td_s)
    ctx = decision_context(world, budget) if cfg.check_constraints else None
    dv = world.policy.decide(world, budget, snr)
    if ctx is not None:
        from .checker import check_decision
        bad = check_decision(dv, ctx, world.catalog, world.mcs)
        world.violations.extend(f"period {world.period}: {v}" for v in bad)
    execute(world, dv, budget, row)
    transmit(world, dv, snr, row)
    threshold = cfg.startup_segments * (world.catalog.videos[0].segments[0].duration_s
                                        if world.catalog.videos else 0.0)
    for c in world.clients:
        if c.in_session:
            row.active_clients += 1
        rb = playback_advance(c, cfg.td_s, threshold)
        c.stats.rebuffer_s += rb
        row.rebuffer_s += rb
    world.policy.maintain(world, budget, row)
    for s in world.servers:
        s.check()
    row.mean_buffer_s = float(np.mean([c.buffer_s for c in world.clients])) if world.clients else 0.0
    row.cache_bytes = sum(s.used_tier1() + s.used_tier23() for s in world.servers)
    world.rows.append(row)
    world.period += 1
    return world


def run(cfg: ScenarioConfig, progress=None) -> World:
    world = build_world(cfg)
    for _ in range(cfg.total_periods):
        step(world)
        if progress is not None:
            progress(world)
    return world


# metrics ---------------------------------------------------------------------------

def finalize_metrics(world: World) -> dict:
    secs = world.sim_seconds
    cl = world.clients
    n = len(cl)
    thr = [c.stats.delivered_bits / secs for c in cl] if secs > 0 else [0.0] * n
    reqs = sum(x.local_hits + x.peer_hits + x.cloud_fetches for x in world.counters)
    local = sum(x.local_hits for x in world.counters)
    peer = sum(x.peer_hits for x in world.counters)
    switches = sum(c.stats.switches for c in cl)
    frames = sum(c.stats.frames for c in cl)
    return {
        "policy": world.cfg.policy,
        "seed": world.cfg.seed,
        "n_clients": n,
        "periods": world.period,
        "sim_seconds": secs,
        "mean_throughput_bps": float(np.mean(thr)) if n else 0.0,
        "mean_rebuffer_s": float(np.mean([c.stats.rebuffer_s for c in cl])) if n else 0.0,
        "mean_psnr_db": (sum(c.stats.psnr_sum for c in cl) / frames) if frames else None,
        "mean_switch_count": switches / n if n else 0.0,
        "mean_switch_magnitude": (sum(c.stats.switch_mag for c in cl) / switches) if switches else None,
        "cloud_bytes": float(sum(x.cloud_bytes for x in world.counters)),
        "peer_bytes": float(sum(x.peer_bytes for x in world.counters)),
        "backhaul_bytes": float(sum(x.cloud_bytes for x in world.counters)),
        "requests": reqs,
        "local_hits": local,
        "peer_hits": peer,
        "cloud_fetches": reqs - local - peer,
        "hit_ratio": (local + peer) / reqs if reqs else None,
        "local_hit_ratio": local / reqs if reqs else None,
        "segments_completed": sum(c.stats.segments for c in cl),
        "constraint_violations": len(world.violations),
    }


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def metrics_csv(world: World) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["row_type"] + PERIOD_COLUMNS)
    tot = PeriodRow(-1)
    for r in world.rows:
        vals = dataclasses.astuple(r)
        w.writerow(["period"] + [_fmt(v) for v in vals])
        for name in PERIOD_COLUMNS[1:]:
            if name in ("mean_buffer_s", "cache_bytes", "active_clients"):
                continue
            setattr(tot, name, getattr(tot, name) + getattr(r, name))
    tot.period = world.period
    if world.rows:
        tot.active_clients = max(r.active_clients for r in world.rows)
        tot.mean_buffer_s = float(np.mean([r.mean_buffer_s for r in world.rows]))
        tot.cache_bytes = world.rows[-1].cache_bytes
    w.writerow(["summary"] + [_fmt(v) for v in dataclasses.astuple(tot)])
    return buf.getvalue()


def client_csv(world: World) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    names = [f.name for f in dataclasses.fields(ClientStats)]
    w.writerow(["client_id", "enodeb", "server", "mean_snr_db"] + names)
    for c in world.clients:
        w.writerow([c.client_id, c.enodeb, c.server, repr(c.mean_snr_db)]
                   + [_fmt(v) for v in dataclasses.astuple(c.stats)])
    return buf.getvalue()


def hit_reserve(world: World, q: int, keys=None) -> int:
    """Tier-2/3 bytes that cannot make room this period: pinned entries plus
    unpinned entries that new requests may be served from."""
    srv = world.servers[q]
    held = set()
    if keys is None:
        keys = [(c.request[0], c.request[1], l) for c in world.clients
                if c.server == q and c.request is not None and c.locked_key is None
                for l in range(1, world.catalog.levels + 1)]
    for key in keys:
        e = srv.tier23.get(key)
        if e is not None and not e.pinned:
            held.add(key)
    return srv.pinned_tier23() + sum(srv.tier23[k].size_bytes for k in held)


# the CTRA policy -------------------------------------------------------------------

def ctra_candidates(world: World, c: ClientState, budget: LinkBudget, cache_budget: float) -> list:
    """Levels the client could receive this period, with their sourcing."""
    from .optimizer import Candidate, transcode_feasible

    cat, cfg = world.catalog, world.cfg
    q = c.server
    srvs = world.servers
    if c.locked_key is not None:
        var = cat.variant(*c.locked_key)
        return [Candidate(c.locked_key[2], var, c.locked_key, "queued", c.phi)]
    vid, i = c.request
    out = []
    holds = srvs[q].holds
    for l in range(1, cat.levels + 1):
        key = (vid, i, l)
        var = cat.variant(vid, i, l)
        any_peer = cfg.cooperative and any(srvs[p].holds(key) for p in range(len(srvs)) if p != q)
        if holds(key):
            out.append(Candidate(l, var, key, "hit", any_peer=any_peer))
            continue
        size = var.size_bytes
        loc = cachemod.locate(key, size, q, world.topology, budget, cfg.cooperative)
        if isinstance(loc, cachemod.PeerHit):
            peer, link = loc.peer, budget.peer[(q, loc.peer)]
        else:
            peer, link = None, budget.cloud[q]
        fetch_ok = size <= cache_budget and size <= link
        src = transcode_feasible(vid, i, l, holds, cat.levels, cfg.unrestricted_transcode)
        if src is not None and cfg.mu_cycles_per_byte * size > budget.compute[q]:
            src = None
        if fetch_ok or src is not None:
            out.append(Candidate(l, var, key, "miss", any_peer=any_peer, peer=peer,
                                 transcode_source=src, fetchable=fetch_ok))
    return out


class CtraPolicy:
    name = "ctra"
    tiered = True

    def __init__(self):
        from .optimizer import IncrementalResolver
        self.resolver = IncrementalResolver()
        self.instance_log = None  # optional callable receiving each instance

    def eviction_order(self, srv):
        return cachemod.dp_order(srv)

    def decide(self, world: World, budget: LinkBudget, snr: np.ndarray):
        from .optimizer import (CtraOptions, DecisionVector, SchedClient, ServerBudgets,
                                ctra_schedule)
        from .utility import urgency

        cfg = world.cfg
        opts = CtraOptions(cfg.weights, cfg.literal_gating, cfg.cumulative_psnr, cfg.raw_capacity)
        dv = DecisionVector()
        self.resolver.clear()
        for q, srv in enumerate(world.servers):
            cache_budget = srv.sc_bytes - hit_reserve(world, q)
            sched = []
            for c in world.clients:
                if c.server != q or c.request is None:
                    continue
                cands = ctra_candidates(world, c, budget, cache_budget)
                if not cands:
                    continue
                d = cands[0].variant.duration_s
                sched.append(SchedClient(c.client_id, c.enodeb, snr[c.client_id],
                                         urgency(c.buffer_s, d, cfg.omega), c.last_level,
                                         world.catalog.levels, cands))
            b = ServerBudgets(cache_budget, {p: budget.peer[(q, p)] for p in srv.peer_links},
                              budget.cloud[q], budget.compute[q])
            part = ctra_schedule(q, sched, cfg.n_rbs, world.mcs, b, opts, cfg.mu_cycles_per_byte,
                                 self.resolver, self.instance_log)
            dv.tau.update(part.tau)
            dv.transcode.update(part.transcode)
            dv.rb_owner.update(part.rb_owner)
            dv.mcs.update(part.mcs)
            dv.delivery.update(part.delivery)
            dv.objective.update(part.objective)
        return dv

    def maintain(self, world: World, budget: LinkBudget, row: PeriodRow) -> None:
        cfg = world.cfg
        cat = world.catalog
        for q, srv in enumerate(world.servers):
            caps = {c.client_id: (c.cp_ewma or 0.0) for c in world.clients if c.server == q}
            cachemod.refresh_delete_priorities(srv, cat, caps, cfg.zeta, cfg.alpha, cfg.dp_lambda)
            srv.period_requests.clear()
            # reserved tier-1 slots fill from whatever link budget is left
            for key, size in sorted(srv.tier1_pending.items()):
                loc = cachemod.locate(key, size, q, world.topology, budget, cfg.cooperative)
                if isinstance(loc, cachemod.PeerHit):
                    budget.take_peer(q, loc.peer, size)
                    world.counters[q].peer_bytes += size
                    row.peer_bytes += size
                elif isinstance(loc, cachemod.CloudOnly) and budget.cloud[q] >= size:
                    budget.take_cloud(q, size)
                    world.counters[q].cloud_bytes += size
                    row.cloud_bytes += size
                else:
                    continue
                world.counters[q].fetched_bytes += size
                world.counters[q].inserted_bytes += size
                srv.insert(cachemod.CacheEntry(*key, size), world.period)
            if (world.period + 1) % cfg.periods_per_long_period == 0:
                ranking = cachemod.popularity_ranking(srv.video_requests, cat.video_ids)
                cap = min(cfg.tier1_max_fraction * srv.total_bytes,
                          srv.sh_bytes + srv.sc_bytes - srv.pinned_tier23())
                target = cachemod.tier1_target(cat, ranking, cap, cfg.tier1_all_levels,
                                               cfg.initial_fill_level)
                _, evicted = cachemod.refresh_tier1(srv, target, world.period, self.eviction_order(srv))
                world.counters[q].evicted_bytes += sum(e.size_bytes for e in evicted)
