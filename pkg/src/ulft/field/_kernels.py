"""Compiled inner loops for the voxel field.

Per-ray work runs in parallel; every reduction into shared grid rows
happens in a serial pass in ray order, so results never depend on the
thread count.  Grids are stored flat: every
channel group is a ``(sum_l R_l**3, C)`` array and ``offs[l]`` is the
first row of level ``l``.
"""

import math
import warnings

import numpy as np

from numba import njit, prange

# numba probes for a recent TBB at first parallel launch and warns before
# falling back to OpenMP; the fallback is fine for us
warnings.filterwarnings("ignore", message=".*TBB threading layer.*")


@njit(cache=True, nogil=True, inline="always")
def _softplus(x):
    if x > 30.0:
        return x
    return math.log1p(math.exp(x))


@njit(cache=True, nogil=True, inline="always")
def _sigmoid(x):
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


@njit(cache=True, nogil=True)
def corner_table(p, res, offs, idx, wts):
    """Fill ``idx``/``wts`` (L, 8) with trilinear corners of point ``p``."""
    px = min(max(p[0], 0.0), 1.0)
    py = min(max(p[1], 0.0), 1.0)
    pz = min(max(p[2], 0.0), 1.0)
    for lv in range(res.shape[0]):
        R = res[lv]
        s = R - 1
        x = px * s
        y = py * s
        z = pz * s
        ix = min(max(int(x), 0), R - 2)
        iy = min(max(int(y), 0), R - 2)
        iz = min(max(int(z), 0), R - 2)
        fx = x - ix
        fy = y - iy
        fz = z - iz
        b = offs[lv] + (ix * R + iy) * R + iz
        for c in range(8):
            dx = (c >> 2) & 1
            dy = (c >> 1) & 1
            dz = c & 1
            idx[lv, c] = b + (dx * R + dy) * R + dz
            wts[lv, c] = (fx if dx else 1.0 - fx) * (fy if dy else 1.0 - fy) \
                * (fz if dz else 1.0 - fz)


@njit(cache=True, nogil=True)
def query_raw(points, res, offs, table):
    """Sum over levels of trilinear interpolation of ``table`` at points."""
    n = points.shape[0]
    C = table.shape[1]
    out = np.zeros((n, C))
    L = res.shape[0]
    idx = np.empty((L, 8), dtype=np.int64)
    wts = np.empty((L, 8))
    for i in range(n):
        corner_table(points[i], res, offs, idx, wts)
        for lv in range(L):
            for c in range(8):
                w = wts[lv, c]
                r = idx[lv, c]
                for ch in range(C):
                    out[i, ch] += w * table[r, ch]
    return out


@njit(cache=True, nogil=True, parallel=True)
def render_forward(origins, dirs, t_lo, t_hi, zfac, jitter, K, res, offs,
                   dens, col, sem, inst, bg, dscale, w_floor,
                   t_s, delta, raw_d, w_s, T_next, c_s, s_s, i_s, cidx, cwts,
                   out_c, out_d, out_o, out_s, out_i):
    """Volume render a batch of rays, one ray per parallel iteration.

    Per-sample buffers (``t_s`` .. ``cwts``) are filled for the backward
    pass.  Heads with zero columns (``col``/``sem``/``inst``) are skipped.
    Samples whose weight is below ``w_floor`` skip the head lookups.
    """
    B = origins.shape[0]
    L = res.shape[0]
    n_col = col.shape[1]
    n_sem = sem.shape[1]
    n_inst = inst.shape[1]
    for b in prange(B):
        lo = t_lo[b]
        hi = t_hi[b]
        span = hi - lo
        if span <= 0.0:
            for k in range(K):
                t_s[b, k] = lo
                raw_d[b, k] = -1e30
                T_next[b, k] = 1.0
            if n_col:
                for ch in range(n_col):
                    out_c[b, ch] = bg[ch]
            continue
        for k in range(K):
            t_s[b, k] = lo + (k + jitter[b, k]) / K * span
        for k in range(K - 1):
            delta[b, k] = t_s[b, k + 1] - t_s[b, k]
        delta[b, K - 1] = hi - t_s[b, K - 1]
        p = np.empty(3)
        T = 1.0
        acc_t = 0.0
        opac = 0.0
        for k in range(K):
            idx = cidx[b, k]
            wts = cwts[b, k]
            for a in range(3):
                p[a] = origins[b, a] + t_s[b, k] * dirs[b, a]
            corner_table(p, res, offs, idx, wts)
            rd = 0.0
            for lv in range(L):
                for c in range(8):
                    rd += wts[lv, c] * dens[idx[lv, c], 0]
            raw_d[b, k] = rd
            sigma = dscale * _softplus(rd)
            alpha = 1.0 - math.exp(-sigma * delta[b, k])
            w = T * alpha
            T = T * (1.0 - alpha)
            w_s[b, k] = w
            T_next[b, k] = T
            acc_t += w * t_s[b, k]
            opac += w
            if w < w_floor:
                continue
            for ch in range(n_col):
                v = 0.0
                for lv in range(L):
                    for c in range(8):
                        v += wts[lv, c] * col[idx[lv, c], ch]
                v = _sigmoid(v)
                c_s[b, k, ch] = v
                out_c[b, ch] += w * v
            for ch in range(n_sem):
                v = 0.0
                for lv in range(L):
                    for c in range(8):
                        v += wts[lv, c] * sem[idx[lv, c], ch]
                s_s[b, k, ch] = v
                out_s[b, ch] += w * v
            for ch in range(n_inst):
                v = 0.0
                for lv in range(L):
                    for c in range(8):
                        v += wts[lv, c] * inst[idx[lv, c], ch]
                i_s[b, k, ch] = v
                out_i[b, ch] += w * v
        out_o[b] = opac
        for ch in range(n_col):
            out_c[b, ch] += (1.0 - opac) * bg[ch]
        out_d[b] = acc_t * zfac[b]


@njit(cache=True, nogil=True, parallel=True)
def sample_grads(zfac, span, K, dscale, bg, t_s, delta, raw_d, w_s, T_next,
                 c_s, s_s, i_s, gC, gD, gS, gI, g_raw_d):
    """Per-sample gradient of the loss w.r.t. raw density (parallel over rays).

    dL/dsigma_k = delta_k (T_{k+1} e_k - sum_{j>k} w_j e_j), where e_k is the
    gradient-weighted value sample k contributes in place of the background.
    """
    B = t_s.shape[0]
    for b in prange(B):
        if span[b] <= 0.0:
            continue
        gbg_dot = 0.0
        for ch in range(3):
            gbg_dot += gC[b, ch] * bg[ch]
        suffix = 0.0
        for k in range(K - 1, -1, -1):
            e = gD[b] * zfac[b] * t_s[b, k] - gbg_dot
            for ch in range(c_s.shape[2]):
                e += gC[b, ch] * c_s[b, k, ch]
            for ch in range(s_s.shape[2]):
                e += gS[b, ch] * s_s[b, k, ch]
            for ch in range(i_s.shape[2]):
                e += gI[b, ch] * i_s[b, k, ch]
            g_sigma = dscale * delta[b, k] * (T_next[b, k] * e - suffix)
            suffix += w_s[b, k] * e
            g_raw_d[b, k] = g_sigma * _sigmoid(raw_d[b, k])


@njit(cache=True, nogil=True)
def scatter_grads(span, K, w_floor, w_s, c_s, cidx, cwts, out_o, gC, gS, gI,
                  g_raw_d, train_geom, g_dens, g_col, g_sem, g_inst, g_bg, touched):
    """Serial fixed-order scatter of per-sample gradients into grid rows.

    ``train_geom`` toggles density/color/background gradients.  Semantic and
    instance gradients are produced whenever their gradient arrays have
    columns.  ``touched`` rows are flagged for the lazy optimiser.
    """
    B = w_s.shape[0]
    L = cidx.shape[2]
    n_col = c_s.shape[2] if train_geom else 0
    n_sem = g_sem.shape[1]
    n_inst = g_inst.shape[1]
    for b in range(B):
        if train_geom:
            if span[b] <= 0.0:
                # ray missed the volume: only the background sees it
                for ch in range(3):
                    g_bg[ch] += gC[b, ch]
                continue
            for ch in range(3):
                g_bg[ch] += (1.0 - out_o[b]) * gC[b, ch]
        elif span[b] <= 0.0:
            continue
        for k in range(K):
            w = w_s[b, k]
            heads = w >= w_floor and w > 0.0
            if not train_geom and not heads:
                continue
            gd = g_raw_d[b, k]
            for lv in range(L):
                for c in range(8):
                    r = cidx[b, k, lv, c]
                    wc = cwts[b, k, lv, c]
                    if wc == 0.0:
                        continue
                    touched[r] = True
                    if train_geom:
                        g_dens[r, 0] += wc * gd
                        if heads:
                            for ch in range(n_col):
                                cv = c_s[b, k, ch]
                                g_col[r, ch] += wc * w * gC[b, ch] * cv * (1.0 - cv)
                    if heads:
                        for ch in range(n_sem):
                            g_sem[r, ch] += wc * w * gS[b, ch]
                        for ch in range(n_inst):
                            g_inst[r, ch] += wc * w * gI[b, ch]


@njit(cache=True, nogil=True)
def adam_rows(param, grad, m, v, touched, lr, b1, b2, eps, step, clear):
    """Adam on flagged rows only; optionally zero their gradient afterwards.

    Returns the first non-finite row index, or -1.
    """
    bc1 = 1.0 - b1 ** step
    bc2 = 1.0 - b2 ** step
    C = param.shape[1]
    for r in range(param.shape[0]):
        if not touched[r]:
            continue
        for ch in range(C):
            g = grad[r, ch]
            if not math.isfinite(g):
                return r
            mm = b1 * m[r, ch] + (1.0 - b1) * g
            vv = b2 * v[r, ch] + (1.0 - b2) * g * g
            m[r, ch] = mm
            v[r, ch] = vv
            param[r, ch] -= lr * (mm / bc1) / (math.sqrt(vv / bc2) + eps)
            if clear:
                grad[r, ch] = 0.0
    return -1


@njit(cache=True, nogil=True)
def build_operator(origins, dirs, t_lo, t_hi, zfac, K, res, offs, dens, dscale, w_floor):
    """Sparse per-ray weights over grid vertices for frozen geometry.

    Row ``b`` holds sum_k w_k * trilinear_k restricted to samples with
    ``w_k >= w_floor`` (midpoint samples), merged per vertex.  Rendering a
    head channel table then reduces to a sparse product.
    """
    B = origins.shape[0]
    L = res.shape[0]
    cap = max(B * 32, 1024)
    indices = np.empty(cap, dtype=np.int64)
    data = np.empty(cap)
    indptr = np.zeros(B + 1, dtype=np.int64)
    opacity = np.zeros(B)
    depth = np.zeros(B)
    idx = np.empty((L, 8), dtype=np.int64)
    wts = np.empty((L, 8))
    row_i = np.empty(K * L * 8, dtype=np.int64)
    row_w = np.empty(K * L * 8)
    p = np.empty(3)
    nnz = 0
    for b in range(B):
        lo = t_lo[b]
        span = t_hi[b] - lo
        n = 0
        if span > 0.0:
            T = 1.0
            acc_t = 0.0
            opac = 0.0
            for k in range(K):
                t = lo + (k + 0.5) / K * span
                dl = span / K if k < K - 1 else t_hi[b] - t
                for a in range(3):
                    p[a] = origins[b, a] + t * dirs[b, a]
                corner_table(p, res, offs, idx, wts)
                rd = 0.0
                for lv in range(L):
                    for c in range(8):
                        rd += wts[lv, c] * dens[idx[lv, c], 0]
                alpha = 1.0 - math.exp(-dscale * _softplus(rd) * dl)
                w = T * alpha
                T = T * (1.0 - alpha)
                acc_t += w * t
                opac += w
                if w < w_floor or w <= 0.0:
                    continue
                for lv in range(L):
                    for c in range(8):
                        if wts[lv, c] != 0.0:
                            row_i[n] = idx[lv, c]
                            row_w[n] = w * wts[lv, c]
                            n += 1
            opacity[b] = opac
            depth[b] = acc_t * zfac[b]
        if n:
            order = np.argsort(row_i[:n], kind="mergesort")
            if nnz + n > cap:
                cap = max(2 * cap, nnz + n)
                ni = np.empty(cap, dtype=np.int64)
                nd = np.empty(cap)
                ni[:nnz] = indices[:nnz]
                nd[:nnz] = data[:nnz]
                indices = ni
                data = nd
            last = -1
            for j in range(n):
                r = row_i[order[j]]
                if r == last:
                    data[nnz - 1] += row_w[order[j]]
                else:
                    indices[nnz] = r
                    data[nnz] = row_w[order[j]]
                    nnz += 1
                    last = r
        indptr[b + 1] = nnz
    return indptr, indices[:nnz].copy(), data[:nnz].copy(), opacity, depth


@njit(cache=True, nogil=True)
def operator_apply(indptr, indices, data, rows, table, out):
    """out[i] = sum over row ``rows[i]`` of data * table[indices]."""
    C = table.shape[1]
    for i in range(rows.shape[0]):
        b = rows[i]
        for j in range(indptr[b], indptr[b + 1]):
            r = indices[j]
            w = data[j]
            for ch in range(C):
                out[i, ch] += w * table[r, ch]


@njit(cache=True, nogil=True)
def operator_scatter(indptr, indices, data, rows, grad, out, touched):
    """Transpose of :func:`operator_apply` accumulated into ``out`` in row order."""
    C = grad.shape[1]
    for i in range(rows.shape[0]):
        b = rows[i]
        for j in range(indptr[b], indptr[b + 1]):
            r = indices[j]
            w = data[j]
            touched[r] = True
            for ch in range(C):
                out[r, ch] += w * grad[i, ch]
