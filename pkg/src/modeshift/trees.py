"""Compiled kernels for honest tree growing and traversal.

One kernel grows both tree kinds: causal trees receive centered residuals
(d_tilde, y_tilde) and split on the gradient pseudo-outcomes of the local
effect regression; regression trees pass d_tilde = 1 and y_tilde = y, which
reduces the same criterion to exact CART variance reduction and the leaf
statistic to the honest-half mean.

Split admissibility is checked on the structure *and* honest halves
(min_leaf_size units each; for causal trees both treatment values in each),
so every leaf used for prediction is valid on the honest sample by
construction. Ties in split gain resolve to the lowest feature index, then
the lowest threshold.
"""

from __future__ import annotations

import numpy as np
from numba import njit

_U = np.uint64


@njit(cache=True, nogil=True, inline="always")
def _splitmix64(state):
    # Deterministic 64-bit mix; used only for per-node feature subsampling.
    state = state + _U(0x9E3779B97F4A7C15)
    z = state
    z = (z ^ (z >> _U(30))) * _U(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> _U(27))) * _U(0x94D049BB133111EB)
    z = z ^ (z >> _U(31))
    return state, z


@njit(cache=True, nogil=True)
def grow_tree(
    xs,
    dt_s,
    yt_s,
    tr_s,
    xh,
    dt_h,
    yt_h,
    tr_h,
    min_leaf,
    mtry,
    require_both,
    rng_seed,
):
    ns, p = xs.shape
    nh = xh.shape[0]
    max_nodes = 2 * max(ns // max(min_leaf, 1), 1) + 3

    feature = np.full(max_nodes, -1, np.int32)
    threshold = np.zeros(max_nodes, np.float64)
    left = np.full(max_nodes, -1, np.int32)
    right = np.full(max_nodes, -1, np.int32)
    leaf_num = np.zeros(max_nodes, np.float64)
    leaf_den = np.zeros(max_nodes, np.float64)

    idx_s = np.arange(ns, dtype=np.int64)
    idx_h = np.arange(nh, dtype=np.int64)

    # Stack rows: node id, structure lo/hi, honest lo/hi.
    stack = np.empty((max_nodes, 5), np.int64)
    stack[0, 0] = 0
    stack[0, 1] = 0
    stack[0, 2] = ns
    stack[0, 3] = 0
    stack[0, 4] = nh
    sp = 1
    n_nodes = 1
    state = rng_seed

    feat_buf = np.empty(p, np.int64)

    while sp > 0:
        sp -= 1
        node = stack[sp, 0]
        s_lo, s_hi = stack[sp, 1], stack[sp, 2]
        h_lo, h_hi = stack[sp, 3], stack[sp, 4]
        ns_node = s_hi - s_lo
        nh_node = h_hi - h_lo

        # Local-effect regression through the origin on the structure half.
        sum_dd = 0.0
        sum_dy = 0.0
        nt_tot = 0
        for k in range(s_lo, s_hi):
            i = idx_s[k]
            sum_dd += dt_s[i] * dt_s[i]
            sum_dy += dt_s[i] * yt_s[i]
            nt_tot += tr_s[i]
        nc_tot = ns_node - nt_tot

        best_gain = 0.0
        best_f = -1
        best_thr = 0.0

        splittable = (
            ns_node >= 2 * min_leaf
            and nh_node >= 2 * min_leaf
            and sum_dd > 0.0
            and n_nodes + 2 <= max_nodes
        )
        if splittable and require_both and (nt_tot < 2 or nc_tot < 2):
            splittable = False

        if splittable:
            tau = sum_dy / sum_dd
            a_p = sum_dd / ns_node
            hnt_tot = 0
            for k in range(h_lo, h_hi):
                hnt_tot += tr_h[idx_h[k]]

            rho = np.empty(ns_node, np.float64)
            svals = np.empty(ns_node, np.float64)
            hvals = np.empty(nh_node, np.float64)
            for k in range(ns_node):
                i = idx_s[s_lo + k]
                rho[k] = dt_s[i] * (yt_s[i] - dt_s[i] * tau) / a_p
            total_rho = 0.0
            for k in range(ns_node):
                total_rho += rho[k]

            # Feature subset, ascending order (partial Fisher-Yates when mtry < p).
            if mtry >= p:
                n_feat = p
                for j in range(p):
                    feat_buf[j] = j
            else:
                n_feat = mtry
                for j in range(p):
                    feat_buf[j] = j
                for j in range(mtry):
                    state, z = _splitmix64(state)
                    pick = j + np.int64(z % _U(p - j))
                    tmp = feat_buf[j]
                    feat_buf[j] = feat_buf[pick]
                    feat_buf[pick] = tmp
                feat_buf[:mtry] = np.sort(feat_buf[:mtry])

            # Honest treated counts in value order, per feature.
            h_tr = np.empty(nh_node, np.int8)

            for fj in range(n_feat):
                f = feat_buf[fj]
                for k in range(ns_node):
                    svals[k] = xs[idx_s[s_lo + k], f]
                sord = np.argsort(svals)
                for k in range(nh_node):
                    hvals[k] = xh[idx_h[h_lo + k], f]
                hord = np.argsort(hvals)
                for k in range(nh_node):
                    h_tr[k] = tr_h[idx_h[h_lo + hord[k]]]

                cum_rho = 0.0
                nl = 0
                ntl = 0
                hp = 0
                hntl = 0
                for k in range(ns_node - 1):
                    u = sord[k]
                    cum_rho += rho[u]
                    nl += 1
                    ntl += tr_s[idx_s[s_lo + u]]
                    a = svals[u]
                    b = svals[sord[k + 1]]
                    if a == b:
                        continue
                    thr = 0.5 * (a + b)
                    if thr >= b:
                        thr = a
                    while hp < nh_node and hvals[hord[hp]] <= thr:
                        hntl += h_tr[hp]
                        hp += 1
                    nr = ns_node - nl
                    hnl = hp
                    hnr = nh_node - hnl
                    if nl < min_leaf or nr < min_leaf or hnl < min_leaf or hnr < min_leaf:
                        continue
                    if require_both:
                        ncl = nl - ntl
                        ntr = nt_tot - ntl
                        ncr = nc_tot - ncl
                        if ntl < 1 or ncl < 1 or ntr < 1 or ncr < 1:
                            continue
                        hncl = hnl - hntl
                        hntr = hnt_tot - hntl
                        hncr = hnr - hntr
                        if hntl < 1 or hncl < 1 or hntr < 1 or hncr < 1:
                            continue
                    rs = total_rho - cum_rho
                    gain = cum_rho * cum_rho / nl + rs * rs / nr
                    if gain > best_gain:
                        best_gain = gain
                        best_f = f
                        best_thr = thr

        if best_f < 0:
            # Leaf: honest-half statistics, averaged over honest leaf size.
            if nh_node > 0:
                num = 0.0
                den = 0.0
                for k in range(h_lo, h_hi):
                    i = idx_h[k]
                    num += dt_h[i] * yt_h[i]
                    den += dt_h[i] * dt_h[i]
                leaf_num[node] = num / nh_node
                leaf_den[node] = den / nh_node
            continue

        # Partition both halves on the chosen split (left: x <= thr).
        s_mid = _partition(idx_s, s_lo, s_hi, xs, best_f, best_thr)
        h_mid = _partition(idx_h, h_lo, h_hi, xh, best_f, best_thr)

        left_id = n_nodes
        right_id = n_nodes + 1
        n_nodes += 2
        feature[node] = best_f
        threshold[node] = best_thr
        left[node] = left_id
        right[node] = right_id

        stack[sp, 0] = left_id
        stack[sp, 1] = s_lo
        stack[sp, 2] = s_mid
        stack[sp, 3] = h_lo
        stack[sp, 4] = h_mid
        sp += 1
        stack[sp, 0] = right_id
        stack[sp, 1] = s_mid
        stack[sp, 2] = s_hi
        stack[sp, 3] = h_mid
        stack[sp, 4] = h_hi
        sp += 1

    return (
        feature[:n_nodes].copy(),
        threshold[:n_nodes].copy(),
        left[:n_nodes].copy(),
        right[:n_nodes].copy(),
        leaf_num[:n_nodes].copy(),
        leaf_den[:n_nodes].copy(),
    )


@njit(cache=True, nogil=True, inline="always")
def _partition(idx, lo, hi, x, f, thr):
    buf = np.empty(hi - lo, np.int64)
    mid = lo
    nr = 0
    for k in range(lo, hi):
        i = idx[k]
        if x[i, f] <= thr:
            idx[mid] = i
            mid += 1
        else:
            buf[nr] = i
            nr += 1
    for k in range(nr):
        idx[mid + k] = buf[k]
    return mid


@njit(cache=True, nogil=True)
def apply_tree(x, feature, threshold, left, right):
    n = x.shape[0]
    out = np.empty(n, np.int32)
    for i in range(n):
        node = 0
        while feature[node] >= 0:
            if x[i, feature[node]] <= threshold[node]:
                node = left[node]
            else:
                node = right[node]
        out[i] = node
    return out
