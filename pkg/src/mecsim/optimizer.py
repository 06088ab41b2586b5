"""Cache/transcode integer program, its brute-force oracle, and the greedy
utility-driven RB scheduler (CTRA).

Per server the cache decision is a 0-1 program over requested-but-uncached
(segment, level) items: each item is left alone, fetched into the cache
(tau) from a peer or the cloud, or transcoded (o) from a higher cached level.
Resource rows are cache space, one row per peer link, the cloud link and
compute.  All coefficients are nonnegative, so x = 0 is always feasible.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import lp
from .catalog import PresentationVariant
from .radio import McsTable, best_mcs_at, best_mcs_vec
from .utility import UtilityWeights

ORACLE_MAX_ITEMS = 12
PRUNE_TOL = 1e-9
INT_TOL = 1e-9

NONE, TRANSCODE, CACHE = 0, 1, 2  # item states; order gives the oracle's lexicographic tie rule


class InstanceFormatError(ValueError):
    pass


def _fits(load, cap):
    return load <= cap * (1.0 + 1e-12) + 1e-9


@dataclass(frozen=True)
class CacheItem:
    key: tuple  # (video_id, segment_index, level)
    size: int
    nu_tau: float
    nu_o: float
    peer: int | None = None  # serving peer for a fetch; None -> cloud
    transcode_ok: bool = False
    cycles: float = 0.0


@dataclass
class CacheDecisionInstance:
    server_id: int
    items: list
    cache_budget: float
    peer_budgets: dict  # peer id -> bytes this period
    cloud_budget: float
    compute_budget: float

    def __post_init__(self):
        budgets = [self.cache_budget, self.cloud_budget, self.compute_budget, *self.peer_budgets.values()]
        if any(not np.isfinite(b) or b < 0 for b in budgets):
            raise ValueError("budgets must be finite and nonnegative")
        for it in self.items:
            if it.size < 0 or it.cycles < 0:
                raise ValueError(f"negative size or cycles on {it.key}")
            if it.peer is not None and it.peer not in self.peer_budgets:
                raise ValueError(f"item {it.key} names unknown peer {it.peer}")

    @property
    def n(self) -> int:
        return len(self.items)

    def peers(self) -> list[int]:
        return sorted(self.peer_budgets)

    def rows(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(R_tau, R_o, caps): resource usage per unit of tau / o, and capacities."""
        peers = self.peers()
        r = 3 + len(peers)
        Rt = np.zeros((r, self.n))
        Ro = np.zeros((r, self.n))
        for j, it in enumerate(self.items):
            Rt[0, j] = it.size
            if it.peer is None:
                Rt[1 + len(peers), j] = it.size
            else:
                Rt[1 + peers.index(it.peer), j] = it.size
            Ro[2 + len(peers), j] = it.cycles
        caps = np.array([self.cache_budget, *(self.peer_budgets[p] for p in peers),
                         self.cloud_budget, self.compute_budget], dtype=float)
        return Rt, Ro, caps

    def objective(self, state) -> float:
        return float(sum(it.nu_tau if s == CACHE else it.nu_o if s == TRANSCODE else 0.0
                         for it, s in zip(self.items, state)))

    def feasible(self, state) -> bool:
        if len(state) != self.n:
            return False
        Rt, Ro, caps = self.rows()
        st = np.asarray(state, dtype=int)
        if any(s == TRANSCODE and not it.transcode_ok for it, s in zip(self.items, st)):
            return False
        load = Rt @ (st == CACHE) + Ro @ (st == TRANSCODE)
        return bool(np.all(_fits(load, caps)))

    # serialization ------------------------------------------------------
    def to_dict(self) -> dict:
        return {
            "server_id": self.server_id,
            "cache_budget": self.cache_budget,
            "peer_budgets": {str(p): v for p, v in sorted(self.peer_budgets.items())},
            "cloud_budget": self.cloud_budget,
            "compute_budget": self.compute_budget,
            "items": [{"key": list(it.key), "size": it.size, "nu_tau": it.nu_tau, "nu_o": it.nu_o,
                       "peer": it.peer, "transcode_ok": it.transcode_ok, "cycles": it.cycles}
                      for it in self.items],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CacheDecisionInstance":
        try:
            items = [CacheItem(tuple(x["key"]), int(x["size"]), float(x["nu_tau"]), float(x["nu_o"]),
                               None if x["peer"] is None else int(x["peer"]),
                               bool(x["transcode_ok"]), float(x["cycles"]))
                     for x in d["items"]]
            return cls(int(d["server_id"]), items, float(d["cache_budget"]),
                       {int(p): float(v) for p, v in d["peer_budgets"].items()},
                       float(d["cloud_budget"]), float(d["compute_budget"]))
        except (KeyError, TypeError, AttributeError) as exc:
            raise InstanceFormatError(f"malformed instance: {exc!r}") from exc


def save_instance(inst: CacheDecisionInstance, path) -> None:
    with open(path, "w") as fh:
        json.dump(inst.to_dict(), fh, indent=1)


def load_instance(path) -> CacheDecisionInstance:
    try:
        with open(path) as fh:
            d = json.load(fh)
    except json.JSONDecodeError as exc:
        raise InstanceFormatError(f"{path}: not valid JSON ({exc.msg}, line {exc.lineno})") from exc
    if not isinstance(d, dict):
        raise InstanceFormatError(f"{path}: top level must be an object")
    return CacheDecisionInstance.from_dict(d)


def random_instance(seed: int, n_items: int, n_peers: int = 2) -> CacheDecisionInstance:
    """Seeded instance with budgets tight enough that constraints bind."""
    rng = np.random.default_rng([seed, n_items, n_peers])
    items = []
    for j in range(n_items):
        size = int(rng.integers(10_000, 400_000))
        nu_t = float(rng.uniform(0.0, 10.0))
        nu_o = nu_t if rng.random() < 0.5 else float(rng.uniform(0.0, 10.0))
        peer = int(rng.integers(0, n_peers + 1))
        items.append(CacheItem(("v%03d" % (j // 3), j // 3 + 1, j % 3 + 1), size, nu_t, nu_o,
                               None if peer == n_peers else peer + 1,
                               bool(rng.random() < 0.6), 30.0 * size))
    tot = sum(it.size for it in items) or 1
    frac = lambda: float(rng.uniform(0.1, 0.8))
    return CacheDecisionInstance(
        0, items, frac() * tot, {p + 1: frac() * tot / 2 for p in range(n_peers)},
        frac() * tot / 2, frac() * 30.0 * tot / 2)


@dataclass
class CacheSolution:
    state: tuple  # per item NONE / TRANSCODE / CACHE
    objective: float
    nodes: int = 0
    lp_bound: float | None = None

    @property
    def tau(self) -> tuple:
        return tuple(s == CACHE for s in self.state)

    @property
    def o(self) -> tuple:
        return tuple(s == TRANSCODE for s in self.state)


# LP relaxation --------------------------------------------------------------

def _node_lp(free, t_ok, o_ok, nu_t, nu_o, Rt, Ro, resid):
    tv = [i for i in free if t_ok[i]]
    ov = [i for i in free if o_ok[i]]
    if not tv and not ov:
        return 0.0, {}, {}
    c = np.concatenate([nu_t[tv], nu_o[ov]])
    A = np.hstack([Rt[:, tv], Ro[:, ov]])
    keep = np.any(A > 0, axis=1)
    A, b = A[keep], resid[keep]
    both = [i for i in tv if o_ok[i]]
    if both:
        pair = np.zeros((len(both), len(tv) + len(ov)))
        for r, i in enumerate(both):
            pair[r, tv.index(i)] = 1.0
            pair[r, len(tv) + ov.index(i)] = 1.0
        A = np.vstack([A, pair])
        b = np.concatenate([b, np.ones(len(both))])
    res = lp.solve(lp.LpProblem(c, A, np.maximum(b, 0.0)))
    xt = {i: float(res.x[j]) for j, i in enumerate(tv)}
    xo = {i: float(res.x[len(tv) + j]) for j, i in enumerate(ov)}
    return res.objective, xt, xo


def relaxation_bound(inst: CacheDecisionInstance) -> float:
    """Objective of the full LP relaxation (tau, o in [0, 1])."""
    nu_t = np.array([it.nu_tau for it in inst.items], dtype=float)
    nu_o = np.array([it.nu_o for it in inst.items], dtype=float)
    t_ok = [True] * inst.n
    o_ok = [it.transcode_ok for it in inst.items]
    Rt, Ro, caps = inst.rows()
    val, _, _ = _node_lp(list(range(inst.n)), t_ok, o_ok, nu_t, nu_o, Rt, Ro, caps)
    return val


def solve_cache_transcode(inst: CacheDecisionInstance, max_nodes: int = 200_000) -> CacheSolution:
    """Exact branch and bound with LP-relaxation bounds.

    Depth first; after branching the children with the best bounds are explored
    first.  A node is pruned when its bound <= incumbent + 1e-9.
    """
    n = inst.n
    if n == 0:
        return CacheSolution((), 0.0, 0, 0.0)
    Rt, Ro, caps = inst.rows()
    nu_t = np.array([it.nu_tau for it in inst.items], dtype=float)
    nu_o = np.array([it.nu_o for it in inst.items], dtype=float)
    # options that can never help: nonpositive value or individually over budget
    t_ok = [nu_t[i] > 0 and bool(np.all(_fits(Rt[:, i], caps))) for i in range(n)]
    o_ok = [inst.items[i].transcode_ok and nu_o[i] > 0 and bool(np.all(_fits(Ro[:, i], caps)))
            for i in range(n)]

    # separable upper bound reached -> optimal without search
    greedy = []
    for i in range(n):
        if t_ok[i] and (not o_ok[i] or nu_t[i] >= nu_o[i]):
            greedy.append(CACHE)
        elif o_ok[i]:
            greedy.append(TRANSCODE)
        else:
            greedy.append(NONE)
    if inst.feasible(greedy):
        return CacheSolution(tuple(greedy), inst.objective(greedy), 0, inst.objective(greedy))

    best_state = [NONE] * n
    best_val = 0.0
    nodes = 0

    def contrib(i, s):
        if s == CACHE:
            return Rt[:, i], nu_t[i]
        if s == TRANSCODE:
            return Ro[:, i], nu_o[i]
        return None, 0.0

    def consider(state):
        nonlocal best_state, best_val
        if inst.feasible(state):
            v = inst.objective(state)
            if v > best_val + 1e-12:
                best_val, best_state = v, list(state)

    def explore(state, fixed_val, resid, lp_val, xt, xo):
        nonlocal nodes
        nodes += 1
        if nodes > max_nodes:
            raise RuntimeError("branch and bound node limit exceeded")
        free = [i for i in range(n) if state[i] is None]
        # rounding down the relaxation is always feasible: a cheap incumbent
        floor_state = [NONE if s is None else s for s in state]
        for i in free:
            if xt.get(i, 0.0) >= 1.0 - INT_TOL:
                floor_state[i] = CACHE
            elif xo.get(i, 0.0) >= 1.0 - INT_TOL:
                floor_state[i] = TRANSCODE
        consider(floor_state)

        frac = {i: max(min(xt.get(i, 0.0), 1 - xt.get(i, 0.0)),
                       min(xo.get(i, 0.0), 1 - xo.get(i, 0.0))) for i in free}
        j = None
        if frac:
            j = max(free, key=lambda i: (frac[i], -i))
            if frac[j] <= INT_TOL:
                if inst.feasible(floor_state):
                    return  # integral relaxation: floor_state is this subtree's optimum
                j = max(free, key=lambda i: (xt.get(i, 0.0) + xo.get(i, 0.0), -i))
        if j is None:
            return

        children = []
        for s in (CACHE, TRANSCODE, NONE):
            if (s == CACHE and not t_ok[j]) or (s == TRANSCODE and not o_ok[j]):
                continue
            use, val = contrib(j, s)
            r2 = resid - use if use is not None else resid
            if np.any(r2 < -1e-9 * np.maximum(1.0, caps)):
                continue
            st2 = list(state)
            st2[j] = s
            free2 = [i for i in free if i != j]
            cv, cxt, cxo = _node_lp(free2, t_ok, o_ok, nu_t, nu_o, Rt, Ro, np.maximum(r2, 0.0))
            bound = fixed_val + val + cv
            if bound <= best_val + PRUNE_TOL:
                continue
            children.append((bound, len(children), st2, fixed_val + val, r2, cv, cxt, cxo))
        children.sort(key=lambda c: (-c[0], c[1]))
        for bound, _, st2, fv, r2, cv, cxt, cxo in children:
            if bound <= best_val + PRUNE_TOL:
                continue
            explore(st2, fv, r2, cv, cxt, cxo)

    root_val, xt, xo = _node_lp(list(range(n)), t_ok, o_ok, nu_t, nu_o, Rt, Ro, caps)
    if root_val > PRUNE_TOL:
        explore([None] * n, 0.0, caps.copy(), root_val, xt, xo)
    return CacheSolution(tuple(best_state), best_val, nodes, root_val)


def brute_force_oracle(inst: CacheDecisionInstance) -> CacheSolution:
    """Exhaustive search over all 3^n states; ties -> lexicographically smallest
    state vector over (tau_1, o_1, tau_2, o_2, ...)."""
    n = inst.n
    if n > ORACLE_MAX_ITEMS:
        raise ValueError(f"oracle refuses {n} items (limit {ORACLE_MAX_ITEMS})")
    if n == 0:
        return CacheSolution((), 0.0, 1, None)
    Rt, Ro, caps = inst.rows()
    obj = np.zeros(1)
    load = np.zeros((caps.size, 1))
    ok = np.ones(1, dtype=bool)
    # item 0 is the most significant digit; digit order NONE < TRANSCODE < CACHE
    for j, it in enumerate(inst.items):
        obj = (obj[:, None] + np.array([0.0, it.nu_o, it.nu_tau])[None, :]).ravel()
        ok = (ok[:, None] & np.array([True, it.transcode_ok, True])[None, :]).ravel()
        step = np.stack([np.zeros(caps.size), Ro[:, j], Rt[:, j]], axis=1)
        load = (load[:, :, None] + step[:, None, :]).reshape(caps.size, -1)
    ok &= np.all(_fits(load, caps[:, None]), axis=0)
    vals = np.where(ok, obj, -np.inf)
    top = vals.max()
    idx = int(np.flatnonzero(vals >= top - 1e-9)[0])
    digits = []
    for _ in range(n):
        digits.append(idx % 3)
        idx //= 3
    state = tuple(reversed(digits))
    return CacheSolution(state, inst.objective(state), 3 ** n, None)


class IncrementalResolver:
    """Memoized solve keyed by the full coefficient set.

    Within a period the greedy RB loop changes one client's capacity at a
    time; unchanged aggregated coefficients reuse the earlier optimum.
    """

    def __init__(self):
        self._memo: dict = {}
        self.hits = 0
        self.misses = 0

    @staticmethod
    def key(inst: CacheDecisionInstance) -> tuple:
        return (inst.cache_budget, tuple(sorted(inst.peer_budgets.items())), inst.cloud_budget,
                inst.compute_budget,
                tuple((it.key, it.size, it.nu_tau, it.nu_o, it.peer, it.transcode_ok, it.cycles)
                      for it in inst.items))

    def solve(self, inst: CacheDecisionInstance, changed_client=None) -> CacheSolution:
        k = self.key(inst)
        sol = self._memo.get(k)
        if sol is not None:
            self.hits += 1
            return sol
        self.misses += 1
        sol = solve_cache_transcode(inst)
        self._memo[k] = sol
        return sol

    def clear(self) -> None:
        self._memo.clear()


def transcode_feasible(video_id: str, segment_index: int, level: int, holds,
                       n_levels: int, unrestricted: bool = False):
    """Source key for transcoding to `level`, or None.

    Down-transcoding only: the lowest cached level above `level` is used.  With
    `unrestricted`, any other cached level of the segment qualifies.
    """
    for l2 in range(level + 1, n_levels + 1):
        if holds((video_id, segment_index, l2)):
            return (video_id, segment_index, l2)
    if unrestricted:
        for l2 in range(level - 1, 0, -1):
            if holds((video_id, segment_index, l2)):
                return (video_id, segment_index, l2)
    return None


# scheduling -----------------------------------------------------------------

@dataclass
class Candidate:
    """One level a client could receive this period.

    mode: "queued" (committed earlier, sitting in the MAC queue), "hit" (cached
    at the home server) or "miss" (needs a fetch or a transcode).
    """

    level: int
    variant: PresentationVariant
    key: tuple
    mode: str = "hit"
    phi: float = 0.0
    any_peer: bool = False
    peer: int | None = None  # fetch source for a miss; None -> cloud
    transcode_source: tuple | None = None
    fetchable: bool = True


@dataclass
class SchedClient:
    client_id: int
    enodeb: int
    snr_db: np.ndarray  # per RB, this period
    urgency: float
    last_level: int | None
    n_levels: int
    candidates: list = field(default_factory=list)


@dataclass(frozen=True)
class CtraOptions:
    weights: UtilityWeights = UtilityWeights()
    literal_gating: bool = False
    cumulative_psnr: bool = False
    raw_capacity: bool = False


class UtilityTable:
    """Per (client, candidate) arrays so marginal utility evaluates in bulk."""

    def __init__(self, clients: list, opts: CtraOptions):
        w = opts.weights
        C = len(clients)
        L = max([len(c.candidates) for c in clients] + [1])
        F = max([cd.variant.n_frames for c in clients for cd in c.candidates] + [1])
        self.C, self.L, self.F = C, L, F
        self.valid = np.zeros((C, L), dtype=bool)
        self.const = np.zeros((C, L))
        self.w_sp = np.zeros((C, L))
        self.w_ps = np.zeros((C, L))
        self.phi = np.zeros((C, L))
        self.remain = np.zeros((C, L))
        self.z0 = np.zeros((C, L), dtype=int)
        self.base = np.zeros((C, L))
        self.cum = np.full((C, L, F), np.inf)
        self.cump = np.zeros((C, L, F + 1))
        for k, cl in enumerate(clients):
            for j, cd in enumerate(cl.candidates):
                var = cd.variant
                if cd.mode == "hit":
                    gate = 0 if opts.literal_gating else 1
                else:
                    gate = 1
                pr = cl.urgency * (1.0 if cd.any_peer else 2.0)
                if cd.mode == "queued" or cl.last_level is None:
                    rs = 0.0
                else:
                    rs = abs(cd.level - cl.last_level) / (cl.n_levels - 1)
                nf = var.n_frames
                self.valid[k, j] = True
                self.const[k, j] = gate * (w.theta1 * pr - w.theta3 * rs)
                self.w_sp[k, j] = gate * w.theta2 / nf
                self.w_ps[k, j] = gate * w.theta4
                self.phi[k, j] = cd.phi
                self.remain[k, j] = var.size_bytes - cd.phi
                z0 = var.frames_complete(cd.phi)
                self.z0[k, j] = z0
                self.cum[k, j, :nf] = var.cum_sizes_arr
                self.cump[k, j, :nf + 1] = var.cum_psnr_arr
                self.cump[k, j, nf + 1:] = var.cum_psnr_arr[-1]
                self.base[k, j] = 0.0 if opts.cumulative_psnr else var.cum_psnr_arr[z0]

    def values(self, rows, gp_bits: np.ndarray, mask: np.ndarray | None = None):
        """Utility of every candidate of `rows` (None = all clients) when each
        gets `gp_bits` this period."""
        if rows is None:
            remain, phi, cum, cump = self.remain, self.phi, self.cum, self.cump
            const, w_sp, w_ps, z0, base = self.const, self.w_sp, self.w_ps, self.z0, self.base
            valid = self.valid if mask is None else self.valid & mask
        else:
            remain, phi, cum, cump = self.remain[rows], self.phi[rows], self.cum[rows], self.cump[rows]
            const, w_sp, w_ps = self.const[rows], self.w_sp[rows], self.w_ps[rows]
            z0, base = self.z0[rows], self.base[rows]
            valid = self.valid[rows] if mask is None else self.valid[rows] & mask[rows]
        delta = np.minimum(gp_bits[:, None] * 0.125, remain)
        z = (cum <= (phi + delta)[..., None]).sum(axis=-1)
        n, L = z.shape
        ps = cump.reshape(n * L, -1)[np.arange(n * L), z.ravel()].reshape(n, L)
        u = const + w_sp * (z - z0) + w_ps * (ps - base)
        return np.where(valid, u, -np.inf)

    def best(self, rows, gp_bits, mask=None):
        u = self.values(rows, gp_bits, mask)
        j = np.argmax(u, axis=1)
        return u[np.arange(u.shape[0]), j], j

    def ls_bytes(self, mask=None) -> np.ndarray:
        ok = self.valid if mask is None else self.valid & mask
        return np.where(ok, self.remain, 0.0).max(axis=1, initial=0.0)


def _goodput(snr_sum, cnt, table: McsTable, raw: bool):
    """(MCS, expected bits per period) for RB sets given their SNR sums and sizes."""
    eff = snr_sum / cnt
    g = table._r * (1.0 + np.tanh(0.5 * table._slope * (eff[:, None] - table._mid)))
    m = np.argmax(g, axis=1)
    if raw:
        per_rb = table._r[m]
    else:
        per_rb = 0.5 * g[np.arange(g.shape[0]), m]
    return m + 1, cnt * per_rb


def set_utility(client: SchedClient, rbs, table: UtilityTable, row: int, mcs: McsTable,
                opts: CtraOptions = CtraOptions(), mask=None) -> float:
    """max over candidate levels of the utility with RB set `rbs`; 0 for the empty set."""
    if len(rbs) == 0:
        return 0.0
    snr = np.asarray(client.snr_db)[list(rbs)]
    m, gp = _goodput(np.array([snr.sum()]), np.array([len(rbs)]), mcs, opts.raw_capacity)
    u, _ = table.best(np.array([row]), gp, mask)
    return float(u[0])


def rb_cost(client: SchedClient, rb: int, assigned, table: UtilityTable, row: int,
            mcs: McsTable, opts: CtraOptions = CtraOptions(), mask=None) -> float:
    """Utility gain from adding `rb` to the client's current RB set, floored at 0."""
    if table.ls_bytes(mask)[row] <= 0:
        return 0.0
    after = set_utility(client, list(assigned) + [rb], table, row, mcs, opts, mask)
    before = set_utility(client, assigned, table, row, mcs, opts, mask)
    return max(0.0, after - before)


@dataclass
class RbAssignment:
    owner: np.ndarray  # per RB: row index into the client list, -1 unassigned
    counts: np.ndarray
    snr_sum: np.ndarray


def greedy_assign(clients: list, table: UtilityTable, mcs: McsTable, n_rbs: int,
                  opts: CtraOptions = CtraOptions()) -> RbAssignment:
    """Give each RB in turn to the client with the largest utility gain.

    Ties go to the larger goodput gain, then the lower client id.  A client
    leaves once its raw capacity covers its MAC queue.  When no client gains
    utility or bytes from an RB it stays unassigned.
    """
    C = len(clients)
    owner = np.full(n_rbs, -1)
    counts = np.zeros(C, dtype=int)
    snr_sum = np.zeros(C)
    u_cur = np.zeros(C)
    gp_cur = np.zeros(C)
    if C == 0:
        return RbAssignment(owner, counts, snr_sum)
    snr = np.stack([np.asarray(c.snr_db, dtype=float) for c in clients])
    ids = np.array([c.client_id for c in clients])
    ls = table.ls_bytes()
    ls_bits = ls * 8.0
    active = ls > 0
    r_bits = mcs._r
    for n in range(n_rbs):
        if not active.any():
            break
        cnt = counts + 1
        m, gp = _goodput(snr_sum + snr[:, n], cnt, mcs, opts.raw_capacity)
        u, _ = table.best(None, gp)
        ci = u - np.where(counts > 0, u_cur, 0.0)
        ci = np.where(active & np.isfinite(ci), np.maximum(ci, 0.0), -1.0)
        g_gain = np.minimum(gp, ls_bits) - np.minimum(gp_cur, ls_bits)
        order = np.lexsort((ids, -g_gain, -ci))
        k = order[0]
        if ci[k] <= 0 and g_gain[k] <= 0:
            continue
        owner[n] = k
        counts[k] += 1
        snr_sum[k] += snr[k, n]
        u_cur[k] = u[k]
        gp_cur[k] = gp[k]
        if counts[k] * r_bits[m[k] - 1] >= ls_bits[k]:
            active[k] = False
    return RbAssignment(owner, counts, snr_sum)


@dataclass(frozen=True)
class Delivery:
    key: tuple
    source: str  # "queued", "hit", "fetch", "transcode"
    transcode_source: tuple | None = None
    phi: float = 0.0


@dataclass
class DecisionVector:
    tau: dict = field(default_factory=dict)  # server -> {key: peer id or None (cloud)}
    transcode: dict = field(default_factory=dict)  # server -> {key: source key}
    rb_owner: dict = field(default_factory=dict)  # eNodeB -> array of client ids (-1 free)
    mcs: dict = field(default_factory=dict)  # client -> m
    delivery: dict = field(default_factory=dict)  # client -> Delivery
    objective: dict = field(default_factory=dict)  # server -> integer program objective

    def rbs_of(self, client_id: int, enodeb: int) -> list[int]:
        return [int(n) for n in np.flatnonzero(self.rb_owner[enodeb] == client_id)]


@dataclass
class ServerBudgets:
    cache: float
    peer: dict
    cloud: float
    compute: float


def _trim_to_queue(rbs: list, snr: np.ndarray, ls_bytes: float, mcs: McsTable):
    """Drop the last-assigned RBs until removing one more would leave the queue uncovered."""
    rbs = list(rbs)
    while rbs:
        m, _ = best_mcs_at(float(snr[rbs].mean()), mcs)
        if (len(rbs) - 1) * mcs.r(m) < ls_bytes * 8.0:
            return rbs, m
        rbs.pop()
    return rbs, None


def ctra_schedule(server_id: int, clients: list, n_rbs: int, mcs: McsTable,
                  budgets: ServerBudgets, opts: CtraOptions = CtraOptions(),
                  mu: float = 30.0, resolver: IncrementalResolver | None = None,
                  instance_hook=None) -> DecisionVector:
    """One period of CTRA for the eNodeBs of one MEC server."""
    dv = DecisionVector(tau={server_id: {}}, transcode={server_id: {}}, objective={server_id: 0.0})
    by_enb: dict = {}
    for cl in clients:
        by_enb.setdefault(cl.enodeb, []).append(cl)

    # RB assignment per eNodeB, treating every candidate level as obtainable
    tables, assigned = {}, {}
    for h in sorted(by_enb):
        group = sorted(by_enb[h], key=lambda c: c.client_id)
        tab = UtilityTable(group, opts)
        ra = greedy_assign(group, tab, mcs, n_rbs, opts)
        tables[h] = (group, tab)
        assigned[h] = ra

    # integer program over misses, valued at each client's assigned capacity
    items: dict = {}
    per_client_u: dict = {}
    for h, (group, tab) in tables.items():
        ra = assigned[h]
        for row, cl in enumerate(group):
            if ra.counts[row] == 0:
                continue
            rbs = list(np.flatnonzero(ra.owner == row))
            snr = np.asarray(cl.snr_db)[rbs]
            _, gp = _goodput(np.array([snr.sum()]), np.array([len(rbs)]), mcs, opts.raw_capacity)
            u = tab.values(np.array([row]), gp)[0]
            per_client_u[cl.client_id] = u
            for j, cd in enumerate(cl.candidates):
                if cd.mode != "miss" or not np.isfinite(u[j]):
                    continue
                rec = items.setdefault(cd.key, {"size": cd.variant.size_bytes, "nu": 0.0,
                                                "peer": cd.peer, "src": cd.transcode_source})
                rec["nu"] += float(u[j])
    item_list = [CacheItem(k, r["size"], r["nu"], r["nu"], r["peer"], r["src"] is not None,
                           mu * r["size"])
                 for k, r in sorted(items.items()) if r["nu"] > 0]
    inst = CacheDecisionInstance(server_id, item_list, max(budgets.cache, 0.0),
                                 {p: max(v, 0.0) for p, v in budgets.peer.items()},
                                 max(budgets.cloud, 0.0), max(budgets.compute, 0.0))
    if instance_hook is not None:
        instance_hook(inst)
    sol = (resolver.solve(inst) if resolver is not None else solve_cache_transcode(inst))
    dv.objective[server_id] = sol.objective
    granted = {}
    for it, s in zip(item_list, sol.state):
        if s == CACHE:
            dv.tau[server_id][it.key] = it.peer
            granted[it.key] = "fetch"
        elif s == TRANSCODE:
            dv.transcode[server_id][it.key] = items[it.key]["src"]
            granted[it.key] = "transcode"

    # delivered level per client, then trim RBs beyond the queue
    for h, (group, tab) in tables.items():
        ra = assigned[h]
        owner_ids = np.full(n_rbs, -1)
        for row, cl in enumerate(group):
            if ra.counts[row] == 0:
                continue
            u = per_client_u[cl.client_id]
            best_j, best_u = None, -np.inf
            for j, cd in enumerate(cl.candidates):
                if cd.mode == "miss" and cd.key not in granted:
                    continue
                if u[j] > best_u:
                    best_j, best_u = j, u[j]
            if best_j is None:
                continue
            cd = cl.candidates[best_j]
            rbs = [int(n) for n in np.flatnonzero(ra.owner == row)]
            snr = np.asarray(cl.snr_db)
            rbs, m = _trim_to_queue(rbs, snr, cd.variant.size_bytes - cd.phi, mcs)
            if not rbs:
                continue
            owner_ids[rbs] = cl.client_id
            dv.mcs[cl.client_id] = m
            if cd.mode == "miss":
                kind = granted[cd.key]
                src = dv.transcode[server_id].get(cd.key) if kind == "transcode" else None
                dv.delivery[cl.client_id] = Delivery(cd.key, kind, src, cd.phi)
            else:
                dv.delivery[cl.client_id] = Delivery(cd.key, cd.mode, None, cd.phi)
        dv.rb_owner[h] = owner_ids
    return dv


def round_robin_assign(clients: list, n_rbs: int, mcs: McsTable, ls_bytes: dict,
                       start: int = 0) -> tuple[dict, dict, int]:
    """RBs in index order to backlogged clients in turn, one per client per turn.

    Returns (client id -> RB list, client id -> MCS, next pointer).  A client
    leaves the rotation once its raw capacity covers its queue.
    """
    order = sorted(c.client_id for c in clients if ls_bytes.get(c.client_id, 0) > 0)
    snr = {c.client_id: np.asarray(c.snr_db, dtype=float) for c in clients}
    rbs: dict = {k: [] for k in order}
    if not order:
        return {}, {}, start
    pos = start % len(order)
    live = list(order)
    ptr = live.index(order[pos])
    for n in range(n_rbs):
        if not live:
            break
        ptr %= len(live)
        k = live[ptr]
        rbs[k].append(n)
        m, _ = best_mcs_at(float(snr[k][rbs[k]].mean()), mcs)
        if len(rbs[k]) * mcs.r(m) >= ls_bytes[k] * 8.0:
            live.pop(ptr)
        else:
            ptr += 1
    out_rbs, out_m = {}, {}
    for k, lst in rbs.items():
        lst, m = _trim_to_queue(lst, snr[k], ls_bytes[k], mcs)
        if lst:
            out_rbs[k] = lst
            out_m[k] = m
    return out_rbs, out_m, (pos + 1) % len(order)
