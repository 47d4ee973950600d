"""Hot numeric loops, each with a numba path and a pure-numpy path.

The numba path is used when numba imports and ``TILEPLAN_DISABLE_NUMBA`` is not
set to a truthy value. Both paths return identical results; the benchmark in
``benchmarks/bench_kernels.py`` compares their speed.
"""

from __future__ import annotations

import os

import numpy as np

_DISABLED = os.environ.get("TILEPLAN_DISABLE_NUMBA", "").lower() in ("1", "true", "yes")

try:
    if _DISABLED:
        raise ImportError("disabled by TILEPLAN_DISABLE_NUMBA")
    import numba

    HAVE_NUMBA = True
except ImportError:
    numba = None
    HAVE_NUMBA = False


def _njit(fn):
    if HAVE_NUMBA:
        return numba.njit(cache=True)(fn)
    return fn


# ---------------------------------------------------------------- divisibility


def divisible_pairs_numpy(cands: np.ndarray, prev: np.ndarray):
    """All (cand, prev) index pairs where prev divides cand on every axis.

    Pairs come out prev-major, the order a sieve over ``prev`` emits them.
    """
    cand_idx = []
    prev_idx = []
    for j in range(prev.shape[0]):
        hit = np.flatnonzero(np.all(cands % prev[j] == 0, axis=1))
        cand_idx.append(hit)
        prev_idx.append(np.full(hit.shape, j, dtype=np.int64))
    if not cand_idx:
        return np.empty(0, np.int64), np.empty(0, np.int64)
    return np.concatenate(cand_idx).astype(np.int64), np.concatenate(prev_idx)


@_njit
def _divisible_pairs_jit(cands, prev):
    nc, na = cands.shape
    npv = prev.shape[0]
    count = 0
    for j in range(npv):
        for i in range(nc):
            ok = True
            for a in range(na):
                if cands[i, a] % prev[j, a] != 0:
                    ok = False
                    break
            if ok:
                count += 1
    ci = np.empty(count, np.int64)
    pj = np.empty(count, np.int64)
    pos = 0
    for j in range(npv):
        for i in range(nc):
            ok = True
            for a in range(na):
                if cands[i, a] % prev[j, a] != 0:
                    ok = False
                    break
            if ok:
                ci[pos] = i
                pj[pos] = j
                pos += 1
    return ci, pj


def divisible_pairs(cands: np.ndarray, prev: np.ndarray):
    cands = np.ascontiguousarray(cands, dtype=np.int64)
    prev = np.ascontiguousarray(prev, dtype=np.int64)
    if HAVE_NUMBA:
        return _divisible_pairs_jit(cands, prev)
    return divisible_pairs_numpy(cands, prev)


# ------------------------------------------------------------ composed costs


def pipeline_cost_numpy(t_load, trips, inner, t_store):
    """Vectorised temporal cost: load + (trips-1)*max(load, inner) + inner + store."""
    return t_load + (trips - 1) * np.maximum(t_load, inner) + inner + t_store


@_njit
def _pipeline_cost_jit(t_load, trips, inner, t_store):
    out = np.empty(t_load.shape[0], np.int64)
    for i in range(t_load.shape[0]):
        lo = t_load[i]
        c = inner[i]
        m = lo if lo > c else c
        out[i] = lo + (trips[i] - 1) * m + c + t_store[i]
    return out


def pipeline_cost(t_load, trips, inner, t_store):
    args = [np.ascontiguousarray(x, dtype=np.int64) for x in (t_load, trips, inner, t_store)]
    if HAVE_NUMBA:
        return _pipeline_cost_jit(*args)
    return pipeline_cost_numpy(*args)


# --------------------------------------------------------------- micro-kernels


def gemm_level0_numpy(a_buf, b_buf, c_out, m0, n0, k0):
    """Run every level-0 chunk of a staged (A, B) pair and accumulate into ``c_out``.

    Loop order follows the level-0 nest: m, n temporal-spatial outside, k
    reduction inside; each (m, n) fragment starts at zero and is stored once.
    """
    mm, kk = a_buf.shape
    nn = b_buf.shape[1]
    for i in range(0, mm, m0):
        for j in range(0, nn, n0):
            frag = np.zeros((m0, n0), dtype=c_out.dtype)
            for p in range(0, kk, k0):
                frag += a_buf[i : i + m0, p : p + k0] @ b_buf[p : p + k0, j : j + n0]
            c_out[i : i + m0, j : j + n0] += frag


@_njit
def _gemm_level0_jit(a_buf, b_buf, c_out, m0, n0, k0):
    mm, kk = a_buf.shape
    nn = b_buf.shape[1]
    frag = np.zeros((m0, n0), dtype=c_out.dtype)
    for i in range(0, mm, m0):
        for j in range(0, nn, n0):
            frag[:, :] = 0
            for p in range(0, kk, k0):
                for ii in range(m0):
                    for pp in range(k0):
                        av = a_buf[i + ii, p + pp]
                        for jj in range(n0):
                            frag[ii, jj] += av * b_buf[p + pp, j + jj]
            for ii in range(m0):
                for jj in range(n0):
                    c_out[i + ii, j + jj] += frag[ii, jj]


def gemm_level0(a_buf, b_buf, c_out, m0, n0, k0):
    if HAVE_NUMBA:
        _gemm_level0_jit(a_buf, b_buf, c_out, m0, n0, k0)
    else:
        gemm_level0_numpy(a_buf, b_buf, c_out, m0, n0, k0)


def conv_level0_numpy(i_buf, w_buf, o_out, t):
    """Level-0 chunks of a staged direct convolution.

    ``t`` is the level-0 tile (n, co, h, w, ci, kh, kw); ``i_buf`` holds the
    input window for the staged region, ``w_buf`` its weights.
    """
    tn, tco, th, tw, tci, tkh, tkw = t
    nn, cc, hh, ww = o_out.shape
    ci_ext, kh_ext, kw_ext = w_buf.shape[1], w_buf.shape[2], w_buf.shape[3]
    for b in range(0, nn, tn):
        for co in range(0, cc, tco):
            for y in range(0, hh, th):
                for x in range(0, ww, tw):
                    frag = np.zeros((tn, tco, th, tw), dtype=o_out.dtype)
                    for ci in range(0, ci_ext, tci):
                        for r in range(0, kh_ext, tkh):
                            for s in range(0, kw_ext, tkw):
                                win = i_buf[
                                    b : b + tn,
                                    ci : ci + tci,
                                    y + r : y + r + th + tkh - 1,
                                    x + s : x + s + tw + tkw - 1,
                                ]
                                wt = w_buf[co : co + tco, ci : ci + tci, r : r + tkh, s : s + tkw]
                                for rr in range(tkh):
                                    for ss in range(tkw):
                                        patch = win[:, :, rr : rr + th, ss : ss + tw]
                                        frag += np.einsum(
                                            "bcyx,oc->boyx", patch, wt[:, :, rr, ss]
                                        )
                    o_out[b : b + tn, co : co + tco, y : y + th, x : x + tw] += frag


@_njit
def _conv_level0_jit(i_buf, w_buf, o_out, tn, tco, th, tw, tci, tkh, tkw):
    nn, cc, hh, ww = o_out.shape
    ci_ext = w_buf.shape[1]
    kh_ext = w_buf.shape[2]
    kw_ext = w_buf.shape[3]
    frag = np.zeros((tn, tco, th, tw), dtype=o_out.dtype)
    for b in range(0, nn, tn):
        for co in range(0, cc, tco):
            for y in range(0, hh, th):
                for x in range(0, ww, tw):
                    frag[:, :, :, :] = 0
                    for ci in range(0, ci_ext, tci):
                        for r in range(0, kh_ext, tkh):
                            for s in range(0, kw_ext, tkw):
                                for bb in range(tn):
                                    for oo in range(tco):
                                        for cci in range(tci):
                                            for rr in range(tkh):
                                                for ss in range(tkw):
                                                    wv = w_buf[co + oo, ci + cci, r + rr, s + ss]
                                                    for yy in range(th):
                                                        for xx in range(tw):
                                                            frag[bb, oo, yy, xx] += (
                                                                wv
                                                                * i_buf[
                                                                    b + bb,
                                                                    ci + cci,
                                                                    y + yy + r + rr,
                                                                    x + xx + s + ss,
                                                                ]
                                                            )
                    o_out[b : b + tn, co : co + tco, y : y + th, x : x + tw] += frag


def conv_level0(i_buf, w_buf, o_out, t):
    if HAVE_NUMBA:
        _conv_level0_jit(i_buf, w_buf, o_out, *[int(v) for v in t])
    else:
        conv_level0_numpy(i_buf, w_buf, o_out, t)


# ------------------------------------------------------------------ simulator


def simulate_numpy(loads, computes, stores, group_size, store_overlap):
    """Event loop of the double-buffered pipeline; see :func:`tileplan.cost.simulate`."""
    load_end = 0
    comp_end = 0
    comp_prev = 0  # compute end of iteration i-1
    comp_prev2 = 0  # and of iteration i-2
    store_end = 0
    barrier = 0
    for i in range(len(loads)):
        load_end = max(load_end, comp_prev2, barrier) + int(loads[i])
        comp_end = max(comp_end, load_end) + int(computes[i])
        comp_prev2 = comp_prev
        comp_prev = comp_end
        if (i + 1) % group_size == 0:
            store_end = max(store_end, comp_end) + int(stores[i // group_size])
            if not store_overlap:
                barrier = store_end
                comp_end = max(comp_end, store_end)
    return max(comp_end, store_end)


@_njit
def _simulate_jit(loads, computes, stores, group_size, store_overlap):
    load_end = 0
    comp_end = 0
    comp_prev = 0
    comp_prev2 = 0
    store_end = 0
    barrier = 0
    for i in range(loads.shape[0]):
        start = load_end
        if comp_prev2 > start:
            start = comp_prev2
        if barrier > start:
            start = barrier
        load_end = start + loads[i]
        if load_end > comp_end:
            comp_end = load_end
        comp_end += computes[i]
        comp_prev2 = comp_prev
        comp_prev = comp_end
        if (i + 1) % group_size == 0:
            if comp_end > store_end:
                store_end = comp_end
            store_end += stores[i // group_size]
            if not store_overlap:
                barrier = store_end
                if store_end > comp_end:
                    comp_end = store_end
    return comp_end if comp_end > store_end else store_end


def simulate(loads, computes, stores, group_size, store_overlap=False) -> int:
    if HAVE_NUMBA:
        args = [np.ascontiguousarray(x, dtype=np.int64) for x in (loads, computes, stores)]
        return int(_simulate_jit(*args, int(group_size), bool(store_overlap)))
    return int(simulate_numpy(loads, computes, stores, group_size, store_overlap))
