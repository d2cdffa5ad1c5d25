"""Compiled kernels for tree growth, forest weighting and boosted stumps."""
from __future__ import annotations

import numpy as np
from numba import njit

VARIANCE = 0
DISTRIBUTION = 1

_REL_TIE = 1e-10


@njit(cache=True)
def _type1_quantile(sorted_vals, q):
    n = sorted_vals.size
    k = int(np.ceil(q * n - 1e-9)) - 1
    if k < 0:
        k = 0
    if k > n - 1:
        k = n - 1
    return sorted_vals[k]


@njit(cache=True)
def _node_targets(y, idx, start, end, criterion, pilot):
    m = end - start
    if criterion == VARIANCE:
        t = np.empty((m, 1))
        for i in range(m):
            t[i, 0] = y[idx[start + i]]
        return t
    vals = np.empty(m)
    for i in range(m):
        vals[i] = y[idx[start + i]]
    srt = np.sort(vals)
    t = np.empty((m, pilot.size))
    for k in range(pilot.size):
        theta = _type1_quantile(srt, pilot[k])
        for i in range(m):
            t[i, k] = 1.0 if vals[i] > theta else 0.0
    return t


@njit(cache=True)
def _better(crit, thr, rank, best, best_thr, best_rank):
    tol = _REL_TIE * max(abs(crit), abs(best), 1e-300)
    if crit > best + tol:
        return True
    if crit < best - tol:
        return False
    if rank < best_rank:
        return True
    if rank == best_rank and thr < best_thr:
        return True
    return False


@njit(cache=True)
def grow_tree(X, y, sample, keys, mtry, min_leaf, criterion, rank, pilot, max_depth):
    """Grow one tree on the case indices ``sample`` (repeats allowed).

    Returns flat node arrays plus the partitioned member index array and the
    per-predictor sum of split improvements.
    """
    m = sample.size
    p = X.shape[1]
    max_nodes = 2 * (m // max(min_leaf, 1)) + 3
    feature = np.full(max_nodes, -1, np.int64)
    threshold = np.zeros(max_nodes)
    left = np.full(max_nodes, -1, np.int64)
    right = np.full(max_nodes, -1, np.int64)
    lo = np.zeros(max_nodes, np.int64)
    hi = np.zeros(max_nodes, np.int64)
    depth = np.zeros(max_nodes, np.int64)
    importance = np.zeros(p)
    idx = sample.copy()
    buf = np.empty(m, np.int64)

    n_nodes = 1
    lo[0] = 0
    hi[0] = m
    stack = np.empty(max_nodes, np.int64)
    top = 0
    stack[0] = 0
    top = 1
    while top > 0:
        top -= 1
        node = stack[top]
        start = lo[node]
        end = hi[node]
        size = end - start
        if size < 2 * min_leaf or depth[node] >= max_depth or n_nodes + 2 > max_nodes:
            continue
        t = _node_targets(y, idx, start, end, criterion, pilot)
        ncol = t.shape[1]
        total = np.zeros(ncol)
        for i in range(size):
            for c in range(ncol):
                total[c] += t[i, c]
        base = 0.0
        for c in range(ncol):
            base += total[c] * total[c] / size

        order_f = np.argsort(keys[node])
        best = 0.0
        best_f = -1
        best_thr = 0.0
        best_rank = 1 << 30
        vals = np.empty(size)
        cum = np.zeros(ncol)
        for j in range(min(mtry, p)):
            f = order_f[j]
            for i in range(size):
                vals[i] = X[idx[start + i], f]
            order = np.argsort(vals, kind="mergesort")
            cum[:] = 0.0
            for i in range(size - 1):
                r = order[i]
                for c in range(ncol):
                    cum[c] += t[r, c]
                nl = i + 1
                nr = size - nl
                if nl < min_leaf:
                    continue
                if nr < min_leaf:
                    break
                v0 = vals[r]
                v1 = vals[order[i + 1]]
                if not v0 < v1:
                    continue
                crit = -base
                for c in range(ncol):
                    sr = total[c] - cum[c]
                    crit += cum[c] * cum[c] / nl + sr * sr / nr
                thr = 0.5 * (v0 + v1)
                if best_f == -1:
                    if crit > _REL_TIE * max(base, 1e-300) and crit > 1e-14:
                        best, best_f, best_thr, best_rank = crit, f, thr, rank[f]
                elif _better(crit, thr, rank[f], best, best_thr, best_rank):
                    best, best_f, best_thr, best_rank = crit, f, thr, rank[f]
        if best_f == -1:
            continue

        nl = 0
        nr = 0
        for i in range(start, end):
            case = idx[i]
            if X[case, best_f] <= best_thr:
                idx[start + nl] = case
                nl += 1
            else:
                buf[nr] = case
                nr += 1
        for i in range(nr):
            idx[start + nl + i] = buf[i]

        feature[node] = best_f
        threshold[node] = best_thr
        importance[best_f] += best
        lchild = n_nodes
        rchild = n_nodes + 1
        n_nodes += 2
        left[node] = lchild
        right[node] = rchild
        lo[lchild] = start
        hi[lchild] = start + nl
        lo[rchild] = start + nl
        hi[rchild] = end
        depth[lchild] = depth[node] + 1
        depth[rchild] = depth[node] + 1
        stack[top] = rchild
        top += 1
        stack[top] = lchild
        top += 1

    return (feature[:n_nodes], threshold[:n_nodes], left[:n_nodes], right[:n_nodes],
            lo[:n_nodes], hi[:n_nodes], idx, importance)


@njit(cache=True)
def find_leaf(x, feature, threshold, left, right):
    node = 0
    while left[node] != -1:
        if x[feature[node]] <= threshold[node]:
            node = left[node]
        else:
            node = right[node]
    return node


@njit(cache=True)
def forest_weights_quantiles(Xq, y, order, levels, offsets, feature, threshold, left, right, lo, hi,
                             member_offsets, members, n_trees):
    """Weighted type-1 quantiles of training ``y`` for each query row.

    Tree ``t`` owns the node slice ``offsets[t]:offsets[t+1]`` and member
    slice ``member_offsets[t]:member_offsets[t+1]``.
    """
    nq = Xq.shape[0]
    n = y.size
    out = np.empty((nq, levels.size))
    w = np.zeros(n)
    for i in range(nq):
        w[:] = 0.0
        for t in range(n_trees):
            a = offsets[t]
            b = offsets[t + 1]
            leaf = find_leaf(Xq[i], feature[a:b], threshold[a:b], left[a:b], right[a:b])
            s = lo[a + leaf]
            e = hi[a + leaf]
            mo = member_offsets[t]
            share = 1.0 / (n_trees * (e - s))
            for k in range(s, e):
                w[members[mo + k]] += share
        total = 0.0
        for k in range(n):
            total += w[k]
        cum = 0.0
        j = 0
        for k in range(n):
            cum += w[order[k]]
            while j < levels.size and cum >= levels[j] * total - 1e-12:
                out[i, j] = y[order[k]]
                j += 1
            if j == levels.size:
                break
        while j < levels.size:
            out[i, j] = y[order[n - 1]]
            j += 1
    return out


@njit(cache=True)
def _pinball_sum(y, f, q, mask):
    s = 0.0
    for i in range(y.size):
        if mask[i]:
            r = y[i] - f[i]
            s += q * r if r >= 0 else (q - 1.0) * r
    return s


@njit(cache=True)
def _best_stump(X, presorted, g, mask, m, min_leaf, rank):
    n, p = X.shape
    tot = 0.0
    for i in range(n):
        if mask[i]:
            tot += g[i]
    base = tot * tot / m
    best = 0.0
    best_f = -1
    best_thr = 0.0
    best_rank = 1 << 30
    for ff in range(p):
        col = presorted[ff]
        cum = 0.0
        nl = 0
        prev = -1
        for k in range(n):
            i = col[k]
            if not mask[i]:
                continue
            if prev >= 0 and nl >= min_leaf and m - nl >= min_leaf and X[prev, ff] < X[i, ff]:
                sr = tot - cum
                crit = cum * cum / nl + sr * sr / (m - nl) - base
                thr = 0.5 * (X[prev, ff] + X[i, ff])
                if best_f == -1:
                    if crit > 1e-12:
                        best, best_f, best_thr, best_rank = crit, ff, thr, rank[ff]
                elif _better(crit, thr, rank[ff], best, best_thr, best_rank):
                    best, best_f, best_thr, best_rank = crit, ff, thr, rank[ff]
            cum += g[i]
            nl += 1
            prev = i
            if m - nl < min_leaf:
                break
    return best_f, best_thr


@njit(cache=True)
def boost_level(X, presorted, y, q, init, masks, lr, min_leaf, rank):
    """Gradient boosting of depth-1 trees on the pinball loss at level ``q``.

    ``presorted[f]`` is the argsort of column ``f``; ``masks[it]`` selects
    the subsample of iteration ``it``. Returns stump arrays and the summed
    pinball-loss reduction per predictor.
    """
    n, p = X.shape
    n_iter = masks.shape[0]
    f = np.full(n, init)
    s_feat = np.full(n_iter, -1, np.int64)
    s_thr = np.zeros(n_iter)
    s_left = np.zeros(n_iter)
    s_right = np.zeros(n_iter)
    importance = np.zeros(p)
    g = np.empty(n)
    for it in range(n_iter):
        mask = masks[it]
        m = 0
        ties = 0
        for i in range(n):
            if mask[i]:
                m += 1
                if y[i] == f[i]:
                    ties += 1
        if m < 2 * min_leaf:
            continue
        # subgradient q at a zero residual; if that leaves no split signal,
        # retry with the other end (q - 1) for the tied cases
        best_f = -1
        for attempt in range(2):
            if attempt == 1 and ties == 0:
                break
            tie_grad = q if attempt == 0 else q - 1.0
            for i in range(n):
                if y[i] > f[i]:
                    g[i] = q
                elif y[i] < f[i]:
                    g[i] = q - 1.0
                else:
                    g[i] = tie_grad
            best_f, best_thr = _best_stump(X, presorted, g, mask, m, min_leaf, rank)
            if best_f != -1:
                break
        if best_f == -1:
            continue
        nl = 0
        for i in range(n):
            if mask[i] and X[i, best_f] <= best_thr:
                nl += 1
        rl = np.empty(nl)
        rr = np.empty(m - nl)
        a = 0
        b = 0
        for i in range(n):
            if mask[i]:
                if X[i, best_f] <= best_thr:
                    rl[a] = y[i] - f[i]
                    a += 1
                else:
                    rr[b] = y[i] - f[i]
                    b += 1
        inc_l = lr * np.quantile(rl, q)
        inc_r = lr * np.quantile(rr, q)
        before = _pinball_sum(y, f, q, mask)
        for i in range(n):
            f[i] += inc_l if X[i, best_f] <= best_thr else inc_r
        after = _pinball_sum(y, f, q, mask)
        s_feat[it] = best_f
        s_thr[it] = best_thr
        s_left[it] = inc_l
        s_right[it] = inc_r
        importance[best_f] += max(before - after, 0.0) / m
    return s_feat, s_thr, s_left, s_right, importance
