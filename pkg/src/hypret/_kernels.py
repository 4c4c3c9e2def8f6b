"""Hot numeric kernels: hyperbolic distances from tangent coordinates and the
sequential training epochs.

Every kernel exists in two variants: a numba ``@njit`` build (default when
numba imports) and a pure-numpy fallback. Set ``HYPRET_DISABLE_NUMBA=1`` to
force the numpy path; ``benchmarks/bench_kernels.py`` compares the two.

All distance math accumulates in float64 regardless of the storage dtype.
"""
from __future__ import annotations

import math
import os

import numpy as np

NUMBA_DISABLED = os.environ.get("HYPRET_DISABLE_NUMBA", "").lower() in ("1", "true", "yes")

try:
    from numba import njit

    NUMBA_AVAILABLE = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    NUMBA_AVAILABLE = False

    def njit(*args, **kwargs):
        def deco(f):
            return f

        return deco


USE_NUMBA = NUMBA_AVAILABLE and not NUMBA_DISABLED

# Guard for derivative denominators near coincident points; distance values
# themselves clamp the arcosh argument at exactly 1 so d(x, x) == 0.
GRAD_EPS = 1e-14


# ---------------------------------------------------------------------------
# scalar series helpers
# ---------------------------------------------------------------------------


@njit(cache=True)
def _sinhc(r):
    # sinh(r)/r with the 0/0 limit handled by a Taylor series.
    if r < 1e-4:
        return 1.0 + r * r / 6.0
    return math.sinh(r) / r


@njit(cache=True)
def _qfun(r):
    # (cosh(r) - sinh(r)/r) / r^2, the radial derivative of sinhc; limit 1/3.
    if r < 1e-3:
        return 1.0 / 3.0 + r * r / 30.0
    return (math.cosh(r) - math.sinh(r) / r) / (r * r)


def _sinhc_arr(r: np.ndarray) -> np.ndarray:
    out = np.empty_like(r)
    small = r < 1e-4
    out[small] = 1.0 + r[small] ** 2 / 6.0
    big = ~small
    out[big] = np.sinh(r[big]) / r[big]
    return out


def _qfun_arr(r: np.ndarray) -> np.ndarray:
    out = np.empty_like(r)
    small = r < 1e-3
    out[small] = 1.0 / 3.0 + r[small] ** 2 / 30.0
    big = ~small
    rb = r[big]
    out[big] = (np.cosh(rb) - np.sinh(rb) / rb) / (rb * rb)
    return out


# ---------------------------------------------------------------------------
# hyperbolic distances from origin tangent coordinates
#
#   z(u, v) = cosh|u| cosh|v| - (u.v) sinhc|u| sinhc|v|,  d = arcosh(max(z, 1))
# ---------------------------------------------------------------------------


def tangent_distance_matrix_np(Q: np.ndarray, X: np.ndarray) -> np.ndarray:
    Q = np.asarray(Q, dtype=np.float64)
    X = np.asarray(X, dtype=np.float64)
    rq = np.linalg.norm(Q, axis=1)
    rx = np.linalg.norm(X, axis=1)
    cq = np.cosh(rq)
    cx = np.cosh(rx)
    sq = _sinhc_arr(rq)
    sx = _sinhc_arr(rx)
    z = np.outer(cq, cx) - (Q @ X.T) * np.outer(sq, sx)
    np.maximum(z, 1.0, out=z)
    return np.arccosh(z)


@njit(cache=True)
def _tangent_distance_matrix_loops(Q, X, out):
    nq, d = Q.shape
    nx = X.shape[0]
    rq = np.empty(nq)
    rx = np.empty(nx)
    for i in range(nq):
        acc = 0.0
        for j in range(d):
            acc += Q[i, j] * Q[i, j]
        rq[i] = math.sqrt(acc)
    for i in range(nx):
        acc = 0.0
        for j in range(d):
            acc += X[i, j] * X[i, j]
        rx[i] = math.sqrt(acc)
    for i in range(nq):
        cq = math.cosh(rq[i])
        sq = _sinhc(rq[i])
        for k in range(nx):
            dot = 0.0
            for j in range(d):
                dot += Q[i, j] * X[k, j]
            z = cq * math.cosh(rx[k]) - dot * sq * _sinhc(rx[k])
            if z < 1.0:
                z = 1.0
            out[i, k] = math.acosh(z)


if NUMBA_AVAILABLE:
    _tangent_distance_matrix_nb = _tangent_distance_matrix_loops


def tangent_distance_matrix(Q: np.ndarray, X: np.ndarray) -> np.ndarray:
    """Pairwise hyperbolic distances between two sets of tangent vectors.

    Always routed through the vectorized numpy form: the inner product is a
    BLAS matmul, which beats the scalar-loop kernel (see
    benchmarks/bench_kernels.py). The numba variant stays available for the
    comparison."""
    return tangent_distance_matrix_np(Q, X)


def tangent_pair_distances(U: np.ndarray, V: np.ndarray) -> np.ndarray:
    """Row-wise hyperbolic distances between matched tangent vectors."""
    U = np.atleast_2d(np.asarray(U, dtype=np.float64))
    V = np.atleast_2d(np.asarray(V, dtype=np.float64))
    ru = np.linalg.norm(U, axis=1)
    rv = np.linalg.norm(V, axis=1)
    dot = np.einsum("ij,ij->i", U, V)
    z = np.cosh(ru) * np.cosh(rv) - dot * _sinhc_arr(ru) * _sinhc_arr(rv)
    return np.arccosh(np.maximum(z, 1.0))


def pair_distance_grads_np(u: np.ndarray, V: np.ndarray):
    """Distance and gradients between one tangent vector and rows of V.

    Returns (d[K], gu[K, dim], gv[K, dim]) where gu[k] is the gradient of
    d(u, V[k]) with respect to u.
    """
    u = np.asarray(u, dtype=np.float64)
    V = np.atleast_2d(np.asarray(V, dtype=np.float64))
    ru = float(np.linalg.norm(u))
    rv = np.linalg.norm(V, axis=1)
    cu = math.cosh(ru)
    cv = np.cosh(rv)
    su = _sinhc(ru)
    sv = _sinhc_arr(rv)
    dot = V @ u
    z = cu * cv - dot * su * sv
    t = z - 1.0
    d = np.arccosh(np.maximum(z, 1.0))
    w = np.zeros_like(z)
    ok = t > GRAD_EPS
    w[ok] = 1.0 / np.sqrt(t[ok] * (t[ok] + 2.0))
    qu = _qfun(ru)
    qv = _qfun_arr(rv)
    au = w * (cv * su - dot * sv * qu)
    av = w * (cu * sv - dot * su * qv)
    cross = w * su * sv
    gu = au[:, None] * u[None, :] - cross[:, None] * V
    gv = av[:, None] * V - cross[:, None] * u[None, :]
    return d, gu, gv


@njit(cache=True)
def _pair_dist_grad(u, v, gu, gv):
    """Scalar kernel: d(u, v) with gradients written into gu/gv. Returns d."""
    d_dim = u.shape[0]
    ru2 = 0.0
    rv2 = 0.0
    dot = 0.0
    for j in range(d_dim):
        ru2 += u[j] * u[j]
        rv2 += v[j] * v[j]
        dot += u[j] * v[j]
    ru = math.sqrt(ru2)
    rv = math.sqrt(rv2)
    cu = math.cosh(ru)
    cv = math.cosh(rv)
    su = _sinhc(ru)
    sv = _sinhc(rv)
    z = cu * cv - dot * su * sv
    if z < 1.0:
        z = 1.0
    dist = math.acosh(z)
    t = z - 1.0
    if t <= GRAD_EPS:
        for j in range(d_dim):
            gu[j] = 0.0
            gv[j] = 0.0
        return dist
    w = 1.0 / math.sqrt(t * (t + 2.0))
    au = w * (cv * su - dot * sv * _qfun(ru))
    av = w * (cu * sv - dot * su * _qfun(rv))
    cross = w * su * sv
    for j in range(d_dim):
        gu[j] = au * u[j] - cross * v[j]
        gv[j] = av * v[j] - cross * u[j]
    return dist


@njit(cache=True)
def _clip_row(U, i, budget):
    d = U.shape[1]
    acc = 0.0
    for j in range(d):
        acc += U[i, j] * U[i, j]
    r = math.sqrt(acc)
    if r > budget:
        scale = budget / r
        for j in range(d):
            U[i, j] *= scale
        return 1
    return 0


# ---------------------------------------------------------------------------
# hierarchy epoch: sequential SGD over is-a edges
#
# per-edge loss:
#   d(u_p, u_c) + max(0, margin + |u_p| - |u_c|)
#   + sum_n max(0, margin + d(u_p, u_c) - d(u_p, u_n))
# ---------------------------------------------------------------------------


@njit(cache=True)
def _hier_epoch_loops(U, parents, children, negs, margin, lr, budget, clip, grad_norms):
    n_edges = parents.shape[0]
    n_neg = negs.shape[1]
    d = U.shape[1]
    gpc_p = np.empty(d)
    gpc_c = np.empty(d)
    gpn_p = np.empty((n_neg, d))
    gpn_n = np.empty((n_neg, d))
    active = np.empty(n_neg, np.bool_)
    gp = np.empty(d)
    gc = np.empty(d)
    total = 0.0
    clip_events = 0
    for e in range(n_edges):
        p = parents[e]
        c = children[e]
        dist_pc = _pair_dist_grad(U[p], U[c], gpc_p, gpc_c)
        loss = dist_pc
        n_active = 0
        for k in range(n_neg):
            nn = negs[e, k]
            if nn < 0:  # no admissible negative for this edge
                active[k] = False
                continue
            dist_pn = _pair_dist_grad(U[p], U[nn], gpn_p[k], gpn_n[k])
            h = margin + dist_pc - dist_pn
            if h > 0.0:
                active[k] = True
                loss += h
                n_active += 1
            else:
                active[k] = False
        mult = 1.0 + n_active
        for j in range(d):
            gp[j] = mult * gpc_p[j]
            gc[j] = mult * gpc_c[j]
        for k in range(n_neg):
            if active[k]:
                for j in range(d):
                    gp[j] -= gpn_p[k, j]
        rp = 0.0
        rc = 0.0
        for j in range(d):
            rp += U[p, j] * U[p, j]
            rc += U[c, j] * U[c, j]
        rp = math.sqrt(rp)
        rc = math.sqrt(rc)
        radial = margin + rp - rc
        if radial > 0.0:
            loss += radial
            if rp > 1e-12:
                for j in range(d):
                    gp[j] += U[p, j] / rp
            if rc > 1e-12:
                for j in range(d):
                    gc[j] -= U[c, j] / rc
        gn2 = 0.0
        for j in range(d):
            gn2 += gp[j] * gp[j] + gc[j] * gc[j]
        for k in range(n_neg):
            if active[k]:
                for j in range(d):
                    gn2 += gpn_n[k, j] * gpn_n[k, j]
        grad_norms[e] = math.sqrt(gn2)
        for j in range(d):
            U[p, j] -= lr * gp[j]
            U[c, j] -= lr * gc[j]
        for k in range(n_neg):
            if active[k]:
                nn = negs[e, k]
                for j in range(d):
                    U[nn, j] += lr * gpn_n[k, j]
        if clip:
            clip_events += _clip_row(U, p, budget)
            clip_events += _clip_row(U, c, budget)
            for k in range(n_neg):
                if active[k]:
                    clip_events += _clip_row(U, negs[e, k], budget)
        total += loss
    return total, clip_events


if NUMBA_AVAILABLE:
    _hier_epoch_nb = _hier_epoch_loops


def _clip_row_np(U, i, budget):
    r = float(np.linalg.norm(U[i]))
    if r > budget:
        U[i] *= budget / r
        return 1
    return 0


def _hier_epoch_np(U, parents, children, negs, margin, lr, budget, clip, grad_norms):
    n_edges = parents.shape[0]
    total = 0.0
    clip_events = 0
    for e in range(n_edges):
        p = int(parents[e])
        c = int(children[e])
        neg_ids = negs[e]
        valid = neg_ids >= 0
        dists, gus, gvs = pair_distance_grads_np(
            U[p], np.concatenate((U[c][None, :], U[np.where(valid, neg_ids, 0)]), axis=0)
        )
        dist_pc = dists[0]
        gpc_p, gpc_c = gus[0], gvs[0]
        hinges = margin + dist_pc - dists[1:]
        active = (hinges > 0.0) & valid
        n_active = int(active.sum())
        loss = dist_pc + float(hinges[active].sum())
        gp = (1.0 + n_active) * gpc_p - gus[1:][active].sum(axis=0)
        gc = (1.0 + n_active) * gpc_c
        rp = float(np.linalg.norm(U[p]))
        rc = float(np.linalg.norm(U[c]))
        radial = margin + rp - rc
        if radial > 0.0:
            loss += radial
            if rp > 1e-12:
                gp = gp + U[p] / rp
            if rc > 1e-12:
                gc = gc - U[c] / rc
        gn = -gvs[1:][active]
        grad_norms[e] = math.sqrt(
            float(np.dot(gp, gp) + np.dot(gc, gc) + (gn * gn).sum())
        )
        U[p] -= lr * gp
        U[c] -= lr * gc
        for k in np.flatnonzero(active):
            U[neg_ids[k]] -= lr * (-gvs[1 + k])
        if clip:
            clip_events += _clip_row_np(U, p, budget)
            clip_events += _clip_row_np(U, c, budget)
            for k in np.flatnonzero(active):
                clip_events += _clip_row_np(U, neg_ids[k], budget)
        total += loss
    return total, clip_events


def hier_epoch(U, parents, children, negs, margin, lr, budget, clip, grad_norms):
    """One sequential-SGD pass over all edges; updates U in place."""
    if USE_NUMBA:
        return _hier_epoch_nb(U, parents, children, negs, margin, lr, budget, clip, grad_norms)
    return _hier_epoch_np(U, parents, children, negs, margin, lr, budget, clip, grad_norms)


# ---------------------------------------------------------------------------
# text-alignment epoch: d(u_v, W e_v + b), sequential over entities
# ---------------------------------------------------------------------------


@njit(cache=True)
def _text_epoch_linear_loops(U, E, rows, W, b, weight, lr, budget, clip, grad_norms):
    d = U.shape[1]
    de = E.shape[1]
    t = np.empty(d)
    gu = np.empty(d)
    gt = np.empty(d)
    total = 0.0
    clip_events = 0
    for rr in range(rows.shape[0]):
        v = rows[rr]
        for i in range(d):
            acc = b[i]
            for j in range(de):
                acc += W[i, j] * E[rr, j]
            t[i] = acc
        dist = _pair_dist_grad(U[v], t, gu, gt)
        total += dist
        gn2 = 0.0
        for i in range(d):
            gn2 += gu[i] * gu[i] + gt[i] * gt[i]
        grad_norms[rr] = math.sqrt(gn2) * weight
        for i in range(d):
            U[v, i] -= lr * weight * gu[i]
            step = lr * weight * gt[i]
            b[i] -= step
            for j in range(de):
                W[i, j] -= step * E[rr, j]
        if clip:
            clip_events += _clip_row(U, v, budget)
    return total, clip_events


if NUMBA_AVAILABLE:
    _text_epoch_linear_nb = _text_epoch_linear_loops


def _text_epoch_linear_np(U, E, rows, W, b, weight, lr, budget, clip, grad_norms):
    total = 0.0
    clip_events = 0
    for rr in range(rows.shape[0]):
        v = int(rows[rr])
        t = W @ E[rr] + b
        dists, gus, gvs = pair_distance_grads_np(U[v], t[None, :])
        dist, gu, gt = dists[0], gus[0], gvs[0]
        total += dist
        grad_norms[rr] = math.sqrt(float(np.dot(gu, gu) + np.dot(gt, gt))) * weight
        U[v] -= lr * weight * gu
        W -= np.outer(lr * weight * gt, E[rr])
        b -= lr * weight * gt
        if clip:
            clip_events += _clip_row_np(U, v, budget)
    return total, clip_events


@njit(cache=True)
def _text_epoch_mlp_loops(U, E, rows, W1, b1, W2, b2, weight, lr, budget, clip, grad_norms):
    d = U.shape[1]
    de = E.shape[1]
    h = W1.shape[0]
    hid = np.empty(h)
    t = np.empty(d)
    gu = np.empty(d)
    gt = np.empty(d)
    gpre = np.empty(h)
    total = 0.0
    clip_events = 0
    for rr in range(rows.shape[0]):
        v = rows[rr]
        for i in range(h):
            acc = b1[i]
            for j in range(de):
                acc += W1[i, j] * E[rr, j]
            hid[i] = math.tanh(acc)
        for i in range(d):
            acc = b2[i]
            for j in range(h):
                acc += W2[i, j] * hid[j]
            t[i] = acc
        dist = _pair_dist_grad(U[v], t, gu, gt)
        total += dist
        for i in range(h):
            acc = 0.0
            for j in range(d):
                acc += W2[j, i] * gt[j]
            gpre[i] = acc * (1.0 - hid[i] * hid[i])
        gn2 = 0.0
        for i in range(d):
            gn2 += gu[i] * gu[i] + gt[i] * gt[i]
        grad_norms[rr] = math.sqrt(gn2) * weight
        for i in range(d):
            U[v, i] -= lr * weight * gu[i]
            step = lr * weight * gt[i]
            b2[i] -= step
            for j in range(h):
                W2[i, j] -= step * hid[j]
        for i in range(h):
            step = lr * weight * gpre[i]
            b1[i] -= step
            for j in range(de):
                W1[i, j] -= step * E[rr, j]
        if clip:
            clip_events += _clip_row(U, v, budget)
    return total, clip_events


if NUMBA_AVAILABLE:
    _text_epoch_mlp_nb = _text_epoch_mlp_loops


def _text_epoch_mlp_np(U, E, rows, W1, b1, W2, b2, weight, lr, budget, clip, grad_norms):
    total = 0.0
    clip_events = 0
    for rr in range(rows.shape[0]):
        v = int(rows[rr])
        pre = W1 @ E[rr] + b1
        hid = np.tanh(pre)
        t = W2 @ hid + b2
        dists, gus, gvs = pair_distance_grads_np(U[v], t[None, :])
        dist, gu, gt = dists[0], gus[0], gvs[0]
        total += dist
        gpre = (W2.T @ gt) * (1.0 - hid * hid)
        grad_norms[rr] = math.sqrt(float(np.dot(gu, gu) + np.dot(gt, gt))) * weight
        U[v] -= lr * weight * gu
        W2 -= np.outer(lr * weight * gt, hid)
        b2 -= lr * weight * gt
        W1 -= np.outer(lr * weight * gpre, E[rr])
        b1 -= lr * weight * gpre
        if clip:
            clip_events += _clip_row_np(U, v, budget)
    return total, clip_events


def text_epoch(U, E, rows, adapter_arrays, weight, lr, budget, clip, grad_norms):
    """One text-alignment pass; updates U and adapter arrays in place.

    E is row-aligned with ``rows`` (entity indices that carry a text vector).
    adapter_arrays is (W, b) for the linear variant or (W1, b1, W2, b2) for
    the two-layer one.
    """
    if len(adapter_arrays) == 2:
        W, b = adapter_arrays
        if USE_NUMBA:
            return _text_epoch_linear_nb(U, E, rows, W, b, weight, lr, budget, clip, grad_norms)
        return _text_epoch_linear_np(U, E, rows, W, b, weight, lr, budget, clip, grad_norms)
    W1, b1, W2, b2 = adapter_arrays
    if USE_NUMBA:
        return _text_epoch_mlp_nb(U, E, rows, W1, b1, W2, b2, weight, lr, budget, clip, grad_norms)
    return _text_epoch_mlp_np(U, E, rows, W1, b1, W2, b2, weight, lr, budget, clip, grad_norms)


# ---------------------------------------------------------------------------
# flat translational baseline epoch (margin ranking on |p + t - c|^2)
# ---------------------------------------------------------------------------


@njit(cache=True)
def _kg_epoch_loops(V, trans, parents, children, negs, margin, lr):
    n_edges = parents.shape[0]
    n_neg = negs.shape[1]
    d = V.shape[1]
    diff_pos = np.empty(d)
    diff_neg = np.empty(d)
    total = 0.0
    for e in range(n_edges):
        p = parents[e]
        c = children[e]
        s_pos = 0.0
        for j in range(d):
            diff_pos[j] = V[p, j] + trans[j] - V[c, j]
            s_pos += diff_pos[j] * diff_pos[j]
        for k in range(n_neg):
            nn = negs[e, k]
            s_neg = 0.0
            for j in range(d):
                diff_neg[j] = V[p, j] + trans[j] - V[nn, j]
                s_neg += diff_neg[j] * diff_neg[j]
            h = margin + s_pos - s_neg
            if h > 0.0:
                total += h
                for j in range(d):
                    g = 2.0 * (diff_pos[j] - diff_neg[j])
                    V[p, j] -= lr * g
                    trans[j] -= lr * g
                    V[c, j] += lr * 2.0 * diff_pos[j]
                    V[nn, j] -= lr * 2.0 * diff_neg[j]
                s_pos = 0.0
                for j in range(d):
                    diff_pos[j] = V[p, j] + trans[j] - V[c, j]
                    s_pos += diff_pos[j] * diff_pos[j]
    return total


if NUMBA_AVAILABLE:
    _kg_epoch_nb = _kg_epoch_loops


def _kg_epoch_np(V, trans, parents, children, negs, margin, lr):
    n_edges = parents.shape[0]
    n_neg = negs.shape[1]
    total = 0.0
    for e in range(n_edges):
        p = int(parents[e])
        c = int(children[e])
        diff_pos = V[p] + trans - V[c]
        s_pos = float(np.dot(diff_pos, diff_pos))
        for k in range(n_neg):
            nn = int(negs[e, k])
            diff_neg = V[p] + trans - V[nn]
            s_neg = float(np.dot(diff_neg, diff_neg))
            h = margin + s_pos - s_neg
            if h > 0.0:
                total += h
                g = 2.0 * (diff_pos - diff_neg)
                V[p] -= lr * g
                trans -= lr * g
                V[c] += lr * 2.0 * diff_pos
                V[nn] -= lr * 2.0 * diff_neg
                diff_pos = V[p] + trans - V[c]
                s_pos = float(np.dot(diff_pos, diff_pos))
    return total


def kg_epoch(V, trans, parents, children, negs, margin, lr):
    """One margin-ranking pass of the flat translational baseline."""
    if USE_NUMBA:
        return _kg_epoch_nb(V, trans, parents, children, negs, margin, lr)
    return _kg_epoch_np(V, trans, parents, children, negs, margin, lr)


# ---------------------------------------------------------------------------
# plain squared-L2 distances (exact index scans)
# ---------------------------------------------------------------------------


def sq_dists_to_many_np(q: np.ndarray, X: np.ndarray) -> np.ndarray:
    diff = X.astype(np.float64) - np.asarray(q, dtype=np.float64)[None, :]
    return np.einsum("ij,ij->i", diff, diff)


@njit(cache=True)
def _sq_dists_to_many_loops(q, X, out):
    n, d = X.shape
    for i in range(n):
        acc = 0.0
        for j in range(d):
            t = float(X[i, j]) - q[j]
            acc += t * t
        out[i] = acc


if NUMBA_AVAILABLE:
    _sq_dists_to_many_nb = _sq_dists_to_many_loops


def sq_dists_to_many(q: np.ndarray, X: np.ndarray) -> np.ndarray:
    q = np.ascontiguousarray(q, dtype=np.float64)
    if USE_NUMBA:
        out = np.empty(X.shape[0])
        _sq_dists_to_many_nb(q, np.ascontiguousarray(X), out)
        return out
    return sq_dists_to_many_np(q, X)
