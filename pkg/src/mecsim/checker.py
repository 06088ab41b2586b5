"""Stand-alone validator for per-period decisions.

Deliberately written against plain data (sets, dicts, the catalog and the
MCS table) and without calling into the optimizer, so a solver bug cannot
hide behind shared code.
"""
from __future__ import annotations

import numpy as np

TOL = 1e-6


def check_decision(dv, ctx: dict, catalog, mcs) -> list[str]:
    """Return human-readable violations (empty when every constraint holds).

    c1 cache space, c2 no re-caching, c3 peer links, c4 cloud link,
    c5 cache xor transcode, c6 compute, c7 one owner per RB, c8 one MCS per
    served client, c9 no RB beyond what the queue needs.
    """
    bad = []
    holdings = ctx["holdings"]

    def size(key):
        try:
            return catalog.variant(*key).size_bytes
        except (KeyError, IndexError, TypeError):
            bad.append(f"unknown segment {key}")
            return 0

    for q, taus in dv.tau.items():
        fetched = sum(size(k) for k in taus)
        if fetched + ctx["pinned_tier23"][q] > ctx["sc_bytes"][q] + TOL:
            bad.append(f"c1 server {q}: {fetched} fetched + pinned exceeds cache {ctx['sc_bytes'][q]}")
        per_peer: dict = {}
        cloud = 0
        for key, peer in taus.items():
            if key in holdings[q]:
                bad.append(f"c2 server {q}: {key} already cached")
            if peer is None:
                cloud += size(key)
            else:
                if key not in holdings[peer]:
                    bad.append(f"c3 server {q}: peer {peer} does not hold {key}")
                per_peer[peer] = per_peer.get(peer, 0) + size(key)
        for p, used in per_peer.items():
            if used > ctx["peer_budget"][(q, p)] + TOL:
                bad.append(f"c3 server {q}: peer link {p} carries {used} > budget")
        if cloud > ctx["cloud_budget"][q] + TOL:
            bad.append(f"c4 server {q}: cloud carries {cloud} > budget {ctx['cloud_budget'][q]}")

    for q, tr in dv.transcode.items():
        cycles = 0.0
        for key, src in tr.items():
            if key in dv.tau.get(q, {}):
                bad.append(f"c5 server {q}: {key} both cached and transcoded")
            if src is None or src not in holdings[q]:
                bad.append(f"c6 server {q}: transcode source {src} not cached")
            elif src[:2] != key[:2] or (src[2] <= key[2] and not ctx["unrestricted_transcode"]):
                bad.append(f"c6 server {q}: {src} cannot be transcoded to {key}")
            cycles += ctx["mu"] * size(key)
        if cycles > ctx["compute_budget"][q] * (1 + 1e-12) + TOL:
            bad.append(f"c6 server {q}: {cycles} cycles > budget")

    owners: dict = {}
    for h, owner in dv.rb_owner.items():
        owner = np.asarray(owner)
        if owner.shape != (ctx["n_rbs"],):
            bad.append(f"c7 eNodeB {h}: RB vector has shape {owner.shape}")
            continue
        for n, k in enumerate(owner.tolist()):
            if k < 0:
                continue
            if ctx["client_enodeb"][k] != h:
                bad.append(f"c7 eNodeB {h}: RB {n} given to client {k} of another cell")
            owners.setdefault(k, []).append(n)

    for k, rbs in owners.items():
        m = dv.mcs.get(k)
        if m is None or not (1 <= int(m) <= mcs.size):
            bad.append(f"c8 client {k}: invalid or missing MCS {m}")
            continue
        d = dv.delivery.get(k)
        if d is None:
            bad.append(f"c9 client {k}: RBs with nothing to send")
            continue
        ls = size(d.key) - ctx["client_phi"][k]
        if (len(rbs) - 1) * mcs.bits[int(m) - 1] >= ls * 8.0:
            bad.append(f"c9 client {k}: {len(rbs)} RBs exceed queue of {ls} bytes")
    for k in dv.mcs:
        if k not in owners:
            bad.append(f"c8 client {k}: MCS without RBs")

    for k, d in dv.delivery.items():
        q = ctx["enodeb_server"][ctx["client_enodeb"][k]]
        locked = ctx["client_locked"][k]
        if locked is not None:
            if d.key != locked or d.source != "queued":
                bad.append(f"delivery client {k}: in-flight {locked} replaced by {d.key}")
            continue
        req = ctx["client_request"][k]
        if req is None or tuple(d.key[:2]) != tuple(req):
            bad.append(f"delivery client {k}: {d.key} was not requested")
        ok = {"hit": d.key in holdings[q],
              "fetch": d.key in dv.tau.get(q, {}),
              "transcode": d.key in dv.transcode.get(q, {})}.get(d.source, False)
        if not ok:
            bad.append(f"delivery client {k}: source {d.source} unavailable for {d.key}")
    return bad
