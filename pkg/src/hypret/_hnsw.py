"""Navigable small-world graph kernels behind the graph vector index.

The build and search loops are the hot path; they exist as numba kernels and
as a heapq/numpy fallback with identical algorithmic behavior (greedy beam
search per layer, diversity-aware neighbor selection, (distance, id)
tie-breaking). Distances are squared L2 accumulated in float64 over float32
stored vectors.
"""
from __future__ import annotations

import heapq
import math

import numpy as np

from ._kernels import NUMBA_AVAILABLE, USE_NUMBA, njit


@njit(cache=True)
def _dist_to_query(vecs, i, q):
    acc = 0.0
    for j in range(q.shape[0]):
        t = float(vecs[i, j]) - q[j]
        acc += t * t
    return acc


@njit(cache=True)
def _dist_pair(vecs, a, b):
    acc = 0.0
    for j in range(vecs.shape[1]):
        t = float(vecs[a, j]) - float(vecs[b, j])
        acc += t * t
    return acc


@njit(cache=True)
def _min_push(hd, hi, size, d, i):
    pos = size
    hd[pos] = d
    hi[pos] = i
    while pos > 0:
        par = (pos - 1) >> 1
        if hd[par] > hd[pos] or (hd[par] == hd[pos] and hi[par] > hi[pos]):
            hd[par], hd[pos] = hd[pos], hd[par]
            hi[par], hi[pos] = hi[pos], hi[par]
            pos = par
        else:
            break
    return size + 1


@njit(cache=True)
def _min_pop(hd, hi, size):
    d = hd[0]
    i = hi[0]
    size -= 1
    hd[0] = hd[size]
    hi[0] = hi[size]
    pos = 0
    while True:
        left = 2 * pos + 1
        right = left + 1
        best = pos
        if left < size and (
            hd[left] < hd[best] or (hd[left] == hd[best] and hi[left] < hi[best])
        ):
            best = left
        if right < size and (
            hd[right] < hd[best] or (hd[right] == hd[best] and hi[right] < hi[best])
        ):
            best = right
        if best == pos:
            break
        hd[best], hd[pos] = hd[pos], hd[best]
        hi[best], hi[pos] = hi[pos], hi[best]
        pos = best
    return d, i, size


@njit(cache=True)
def _max_push(hd, hi, size, d, i):
    pos = size
    hd[pos] = d
    hi[pos] = i
    while pos > 0:
        par = (pos - 1) >> 1
        if hd[par] < hd[pos] or (hd[par] == hd[pos] and hi[par] < hi[pos]):
            hd[par], hd[pos] = hd[pos], hd[par]
            hi[par], hi[pos] = hi[pos], hi[par]
            pos = par
        else:
            break
    return size + 1


@njit(cache=True)
def _max_pop(hd, hi, size):
    size -= 1
    hd[0], hd[size] = hd[size], hd[0]
    hi[0], hi[size] = hi[size], hi[0]
    pos = 0
    while True:
        left = 2 * pos + 1
        right = left + 1
        best = pos
        if left < size and (
            hd[left] > hd[best] or (hd[left] == hd[best] and hi[left] > hi[best])
        ):
            best = left
        if right < size and (
            hd[right] > hd[best] or (hd[right] == hd[best] and hi[right] > hi[best])
        ):
            best = right
        if best == pos:
            break
        hd[best], hd[pos] = hd[pos], hd[best]
        hi[best], hi[pos] = hi[pos], hi[best]
        pos = best
    return size


@njit(cache=True)
def _heap_sort_max(hd, hi, size):
    # In-place heapsort of a max-heap: leaves the prefix ascending by (d, id).
    s = size
    while s > 1:
        s = _max_pop(hd, hi, s)


@njit(cache=True)
def _search_layer(vecs, q, adj, cnt, eps, n_eps, ef, visit_tag, tag, cand_d, cand_i, res_d, res_i):
    """Greedy beam search on one layer; returns result count.

    Results end up in res_d/res_i sorted ascending by (distance, id).
    """
    n_cand = 0
    n_res = 0
    for idx in range(n_eps):
        ep = eps[idx]
        if visit_tag[ep] == tag:
            continue
        visit_tag[ep] = tag
        dv = _dist_to_query(vecs, ep, q)
        n_cand = _min_push(cand_d, cand_i, n_cand, dv, ep)
        n_res = _max_push(res_d, res_i, n_res, dv, ep)
        if n_res > ef:
            n_res = _max_pop(res_d, res_i, n_res)
    while n_cand > 0:
        dcur, cur, n_cand = _min_pop(cand_d, cand_i, n_cand)
        if n_res >= ef and dcur > res_d[0]:
            break
        for jj in range(cnt[cur]):
            nb = adj[cur, jj]
            if visit_tag[nb] == tag:
                continue
            visit_tag[nb] = tag
            dn = _dist_to_query(vecs, nb, q)
            if n_res < ef or dn < res_d[0] or (dn == res_d[0] and nb < res_i[0]):
                n_cand = _min_push(cand_d, cand_i, n_cand, dn, nb)
                n_res = _max_push(res_d, res_i, n_res, dn, nb)
                if n_res > ef:
                    n_res = _max_pop(res_d, res_i, n_res)
    _heap_sort_max(res_d, res_i, n_res)
    return n_res


@njit(cache=True)
def _select_heuristic(vecs, sorted_d, sorted_i, nr, m, out_i, disc_d, disc_i):
    """Diversity-aware neighbor selection over ascending (distance, id) candidates."""
    if nr <= m:
        for t in range(nr):
            out_i[t] = sorted_i[t]
        return nr
    nsel = 0
    ndisc = 0
    for t in range(nr):
        if nsel >= m:
            break
        e = sorted_i[t]
        de = sorted_d[t]
        keep = True
        for s in range(nsel):
            if _dist_pair(vecs, e, out_i[s]) <= de:
                keep = False
                break
        if keep:
            out_i[nsel] = e
            nsel += 1
        else:
            disc_d[ndisc] = de
            disc_i[ndisc] = e
            ndisc += 1
    t = 0
    while nsel < m and t < ndisc:
        out_i[nsel] = disc_i[t]
        nsel += 1
        t += 1
    return nsel


@njit(cache=True)
def _prune_neighbors(vecs, node, adj, cnt, mcap, new_nb, pr_d, pr_i, out_i, disc_d, disc_i):
    total = cnt[node]
    for t in range(total):
        pr_i[t] = adj[node, t]
        pr_d[t] = _dist_pair(vecs, node, adj[node, t])
    pr_i[total] = new_nb
    pr_d[total] = _dist_pair(vecs, node, new_nb)
    total += 1
    # insertion sort by (distance, id); lists are at most M0 + 1 long
    for a in range(1, total):
        dv = pr_d[a]
        iv = pr_i[a]
        b = a - 1
        while b >= 0 and (pr_d[b] > dv or (pr_d[b] == dv and pr_i[b] > iv)):
            pr_d[b + 1] = pr_d[b]
            pr_i[b + 1] = pr_i[b]
            b -= 1
        pr_d[b + 1] = dv
        pr_i[b + 1] = iv
    nsel = _select_heuristic(vecs, pr_d, pr_i, total, mcap, out_i, disc_d, disc_i)
    for t in range(nsel):
        adj[node, t] = out_i[t]
    cnt[node] = nsel


@njit(cache=True)
def hnsw_build_nb(vecs, levels, M, M0, efc, adj0, cnt0, adjU, cntU):
    n, d = vecs.shape
    visit_tag = np.zeros(n, np.int64)
    tag = 0
    cap = n + 2
    cand_d = np.empty(cap)
    cand_i = np.empty(cap, np.int64)
    res_d = np.empty(cap)
    res_i = np.empty(cap, np.int64)
    eps = np.empty(cap, np.int64)
    sel = np.empty(M0 + 1, np.int64)
    pr_d = np.empty(M0 + 2)
    pr_i = np.empty(M0 + 2, np.int64)
    pr_sel = np.empty(M0 + 2, np.int64)
    pr_disc_d = np.empty(M0 + 2)
    pr_disc_i = np.empty(M0 + 2, np.int64)
    q64 = np.empty(d)
    entry = 0
    max_lvl = levels[0]
    for i in range(1, n):
        for j in range(d):
            q64[j] = vecs[i, j]
        lvl = levels[i]
        eps[0] = entry
        n_eps = 1
        lc = max_lvl
        while lc > lvl:
            tag += 1
            if lc == 0:
                nr = _search_layer(vecs, q64, adj0, cnt0, eps, n_eps, 1, visit_tag, tag, cand_d, cand_i, res_d, res_i)
            else:
                nr = _search_layer(vecs, q64, adjU[lc - 1], cntU[lc - 1], eps, n_eps, 1, visit_tag, tag, cand_d, cand_i, res_d, res_i)
            eps[0] = res_i[0]
            n_eps = 1
            lc -= 1
        lc = lvl if lvl < max_lvl else max_lvl
        while lc >= 0:
            tag += 1
            if lc == 0:
                adj = adj0
                cnt = cnt0
                mcap = M0
            else:
                adj = adjU[lc - 1]
                cnt = cntU[lc - 1]
                mcap = M
            nr = _search_layer(vecs, q64, adj, cnt, eps, n_eps, efc, visit_tag, tag, cand_d, cand_i, res_d, res_i)
            nsel = _select_heuristic(vecs, res_d, res_i, nr, mcap, sel, cand_d, cand_i)
            for s in range(nsel):
                nb = sel[s]
                adj[i, cnt[i]] = nb
                cnt[i] += 1
                if cnt[nb] < mcap:
                    adj[nb, cnt[nb]] = i
                    cnt[nb] += 1
                else:
                    _prune_neighbors(vecs, nb, adj, cnt, mcap, i, pr_d, pr_i, pr_sel, pr_disc_d, pr_disc_i)
            for t in range(nr):
                eps[t] = res_i[t]
            n_eps = nr
            lc -= 1
        if lvl > max_lvl:
            entry = i
            max_lvl = lvl
    return entry, max_lvl


@njit(cache=True)
def hnsw_search_nb(vecs, entry, max_lvl, adj0, cnt0, adjU, cntU, q64, ef, k):
    n = vecs.shape[0]
    visit_tag = np.zeros(n, np.int64)
    tag = 0
    cap = n + 2
    cand_d = np.empty(cap)
    cand_i = np.empty(cap, np.int64)
    res_d = np.empty(cap)
    res_i = np.empty(cap, np.int64)
    eps = np.empty(1, np.int64)
    eps[0] = entry
    for lc in range(max_lvl, 0, -1):
        tag += 1
        _search_layer(vecs, q64, adjU[lc - 1], cntU[lc - 1], eps, 1, 1, visit_tag, tag, cand_d, cand_i, res_d, res_i)
        eps[0] = res_i[0]
    tag += 1
    nr = _search_layer(vecs, q64, adj0, cnt0, eps, 1, ef, visit_tag, tag, cand_d, cand_i, res_d, res_i)
    kk = k if k < nr else nr
    return res_d[:kk].copy(), res_i[:kk].copy()


# ---------------------------------------------------------------------------
# pure-python fallback (heapq + numpy distance gathers), same algorithm
# ---------------------------------------------------------------------------


def _search_layer_np(vecs64, q, adj, cnt, eps, ef, visited):
    cand = []
    res = []  # max-heap via negated keys: (-d, -id)
    for ep in eps:
        if ep in visited:
            continue
        visited.add(ep)
        diff = vecs64[ep] - q
        dv = float(diff @ diff)
        heapq.heappush(cand, (dv, ep))
        heapq.heappush(res, (-dv, -ep))
        if len(res) > ef:
            heapq.heappop(res)
    while cand:
        dcur, cur = heapq.heappop(cand)
        if len(res) >= ef and dcur > -res[0][0]:
            break
        nbs = [nb for nb in adj[cur, : cnt[cur]] if nb not in visited]
        if not nbs:
            continue
        visited.update(nbs)
        diffs = vecs64[nbs] - q
        dists = np.einsum("ij,ij->i", diffs, diffs)
        for nb, dn in zip(nbs, dists):
            dn = float(dn)
            worst_d, worst_i = -res[0][0], -res[0][1]
            if len(res) < ef or dn < worst_d or (dn == worst_d and nb < worst_i):
                heapq.heappush(cand, (dn, nb))
                heapq.heappush(res, (-dn, -nb))
                if len(res) > ef:
                    heapq.heappop(res)
    out = sorted((-d, -i) for d, i in res)
    return out


def _select_heuristic_np(vecs64, cands, m):
    if len(cands) <= m:
        return [i for _, i in cands]
    sel = []
    disc = []
    for de, e in cands:
        if len(sel) >= m:
            break
        diffs = vecs64[sel] - vecs64[e] if sel else None
        if sel and float(np.min(np.einsum("ij,ij->i", diffs, diffs))) <= de:
            disc.append(e)
        else:
            sel.append(e)
    for e in disc:
        if len(sel) >= m:
            break
        sel.append(e)
    return sel


def hnsw_build_np(vecs, levels, M, M0, efc, adj0, cnt0, adjU, cntU):
    n = vecs.shape[0]
    vecs64 = vecs.astype(np.float64)
    entry = 0
    max_lvl = int(levels[0])
    for i in range(1, n):
        q = vecs64[i]
        lvl = int(levels[i])
        eps = [entry]
        for lc in range(max_lvl, lvl, -1):
            adj, cnt = (adj0, cnt0) if lc == 0 else (adjU[lc - 1], cntU[lc - 1])
            out = _search_layer_np(vecs64, q, adj, cnt, eps, 1, set())
            eps = [out[0][1]]
        for lc in range(min(lvl, max_lvl), -1, -1):
            adj, cnt = (adj0, cnt0) if lc == 0 else (adjU[lc - 1], cntU[lc - 1])
            mcap = M0 if lc == 0 else M
            out = _search_layer_np(vecs64, q, adj, cnt, eps, efc, set())
            sel = _select_heuristic_np(vecs64, out, mcap)
            for nb in sel:
                adj[i, cnt[i]] = nb
                cnt[i] += 1
                if cnt[nb] < mcap:
                    adj[nb, cnt[nb]] = i
                    cnt[nb] += 1
                else:
                    existing = list(adj[nb, : cnt[nb]])
                    cands = existing + [i]
                    diffs = vecs64[cands] - vecs64[nb]
                    dists = np.einsum("ij,ij->i", diffs, diffs)
                    pairs = sorted(zip(dists.tolist(), cands))
                    kept = _select_heuristic_np(vecs64, pairs, mcap)
                    adj[nb, : len(kept)] = kept
                    cnt[nb] = len(kept)
            eps = [idx for _, idx in out]
        if lvl > max_lvl:
            entry = i
            max_lvl = lvl
    return entry, max_lvl


def hnsw_search_np(vecs, entry, max_lvl, adj0, cnt0, adjU, cntU, q64, ef, k):
    vecs64 = vecs.astype(np.float64)
    eps = [int(entry)]
    for lc in range(max_lvl, 0, -1):
        out = _search_layer_np(vecs64, q64, adjU[lc - 1], cntU[lc - 1], eps, 1, set())
        eps = [out[0][1]]
    out = _search_layer_np(vecs64, q64, adj0, cnt0, eps, ef, set())
    out = out[:k]
    dists = np.array([d for d, _ in out])
    ids = np.array([i for _, i in out], dtype=np.int64)
    return dists, ids


def hnsw_build(vecs, levels, M, M0, efc, adj0, cnt0, adjU, cntU):
    if USE_NUMBA:
        return hnsw_build_nb(vecs, levels, np.int64(M), np.int64(M0), np.int64(efc), adj0, cnt0, adjU, cntU)
    return hnsw_build_np(vecs, levels, M, M0, efc, adj0, cnt0, adjU, cntU)


def hnsw_search(vecs, entry, max_lvl, adj0, cnt0, adjU, cntU, q64, ef, k):
    if USE_NUMBA:
        return hnsw_search_nb(
            vecs, np.int64(entry), np.int64(max_lvl), adj0, cnt0, adjU, cntU, q64, np.int64(ef), np.int64(k)
        )
    return hnsw_search_np(vecs, entry, max_lvl, adj0, cnt0, adjU, cntU, q64, ef, k)


def draw_levels(n: int, seed: int, ml: float = 1.0 / math.log(2.0), max_level: int = 30) -> np.ndarray:
    """Exponentially decaying layer assignment, pre-drawn for reproducibility."""
    rng = np.random.default_rng(seed)
    u = rng.uniform(np.nextafter(0.0, 1.0), 1.0, size=n)
    levels = np.minimum((-np.log(u) * ml).astype(np.int32), max_level)
    return levels
