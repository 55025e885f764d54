# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled inner loops.

power_top2
    Best and second-best atom per source point for the power cost
    ``d^2(x, X_i) - w_i``, using a bucket grid with ring search.
quad_infconv_lines
    Exact 1-D inf-convolution with a quadratic kernel along the rows of a
    2-D array (lower envelope of parabolas).
ball_min
    Literal Lax-Oleinik minimisation over all grid offsets inside a disc.

Signatures and return conventions match ``semimatch._kernels_py``.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, floor, log, sqrt, INFINITY

cnp.import_array()


cdef inline double _wrap(double d) nogil:
    cdef double w = d - floor(d + 0.5)
    if w == -0.5:
        w = 0.5
    return w


def power_top2(const double[::1] sx, const double[::1] sy, const double[::1] ax, const double[::1] ay,
               const double[::1] w, bint periodic):
    cdef Py_ssize_t m = sx.shape[0]
    cdef Py_ssize_t n = ax.shape[0]
    cdef int G = <int>sqrt(n / 2.0)
    if G < 1:
        G = 1
    if G > 512:
        G = 512
    cdef double bs = 1.0 / G
    cdef Py_ssize_t i, k, p
    cdef int bx, by, b

    cdef cnp.ndarray[cnp.int64_t, ndim=1] start_arr = np.zeros(G * G + 1, dtype=np.int64)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] order_arr = np.empty(n, dtype=np.int64)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] bucket_arr = np.empty(n, dtype=np.int64)
    cdef cnp.int64_t[::1] start = start_arr
    cdef cnp.int64_t[::1] order = order_arr
    cdef cnp.int64_t[::1] bucket = bucket_arr

    cdef double wmax = -INFINITY
    for i in range(n):
        if w[i] > wmax:
            wmax = w[i]
        bx = <int>floor(ax[i] * G)
        by = <int>floor(ay[i] * G)
        if bx < 0: bx = 0
        if bx >= G: bx = G - 1
        if by < 0: by = 0
        if by >= G: by = G - 1
        bucket[i] = bx * G + by
        start[bucket[i] + 1] += 1
    for b in range(G * G):
        start[b + 1] += start[b]
    cdef cnp.ndarray[cnp.int64_t, ndim=1] fill_arr = start_arr[:-1].copy()
    cdef cnp.int64_t[::1] fill = fill_arr
    for i in range(n):
        order[fill[bucket[i]]] = i
        fill[bucket[i]] += 1

    best_arr = np.full(m, -1, dtype=np.int64)
    second_arr = np.full(m, -1, dtype=np.int64)
    bval_arr = np.full(m, np.inf)
    sval_arr = np.full(m, np.inf)
    cdef cnp.int64_t[::1] best = best_arr
    cdef cnp.int64_t[::1] second = second_arr
    cdef double[::1] bval = bval_arr
    cdef double[::1] sval = sval_arr

    cdef int r, dxb, dyb, cx, cy, rmax
    cdef double px, py, dx, dy, v, bound, b1, b2
    cdef Py_ssize_t j, i1, i2
    cdef Py_ssize_t idx

    with nogil:
        for p in range(m):
            px = sx[p]
            py = sy[p]
            cx = <int>floor(px * G)
            cy = <int>floor(py * G)
            if cx < 0: cx = 0
            if cx >= G: cx = G - 1
            if cy < 0: cy = 0
            if cy >= G: cy = G - 1
            b1 = INFINITY
            b2 = INFINITY
            i1 = -1
            i2 = -1
            r = 0
            while True:
                for dxb in range(-r, r + 1):
                    for dyb in range(-r, r + 1):
                        if dxb != -r and dxb != r and dyb != -r and dyb != r:
                            continue
                        bx = cx + dxb
                        by = cy + dyb
                        if periodic:
                            bx = bx % G
                            by = by % G
                            if bx < 0: bx += G
                            if by < 0: by += G
                        elif bx < 0 or bx >= G or by < 0 or by >= G:
                            continue
                        b = bx * G + by
                        for k in range(start[b], start[b + 1]):
                            j = order[k]
                            if j == i1 or j == i2:
                                continue
                            dx = ax[j] - px
                            dy = ay[j] - py
                            if periodic:
                                dx = _wrap(dx)
                                dy = _wrap(dy)
                            v = dx * dx + dy * dy - w[j]
                            if v < b1 or (v == b1 and j < i1):
                                b2 = b1
                                i2 = i1
                                b1 = v
                                i1 = j
                            elif v < b2 or (v == b2 and j < i2):
                                b2 = v
                                i2 = j
                if periodic:
                    if 2 * r + 1 >= G:
                        break
                else:
                    if r >= G:
                        break
                bound = (r * bs) * (r * bs) - wmax
                if i2 >= 0 and bound >= b2:
                    break
                if i2 < 0 and n == 1 and i1 >= 0:
                    break
                r += 1
            best[p] = i1
            second[p] = i2
            bval[p] = b1
            sval[p] = b2
    return best_arr, bval_arr, second_arr, sval_arr


cdef void _envelope(const double* val, Py_ssize_t M, double s, double offset,
                    Py_ssize_t* v_idx, double* z, Py_ssize_t ny,
                    double* out, cnp.int64_t* arg) nogil:
    # lower envelope of parabolas s*(y - (q + offset))^2 + val[q], evaluated
    # at integer y in [0, ny); arg receives the signed offset of the minimiser
    cdef Py_ssize_t k = 0, q, y
    cdef double sint, pq, pr
    v_idx[0] = 0
    z[0] = -INFINITY
    z[1] = INFINITY
    for q in range(1, M):
        pq = q + offset
        while True:
            pr = v_idx[k] + offset
            sint = ((val[q] + s * pq * pq) - (val[v_idx[k]] + s * pr * pr)) / (2.0 * s * (pq - pr))
            if sint <= z[k]:
                k -= 1
            else:
                break
        k += 1
        v_idx[k] = q
        z[k] = sint
        z[k + 1] = INFINITY
    k = 0
    for y in range(ny):
        while z[k + 1] < y:
            k += 1
        pq = v_idx[k] + offset
        out[y] = s * (y - pq) * (y - pq) + val[v_idx[k]]
        arg[y] = <cnp.int64_t>pq - y


def quad_infconv_lines(const double[:, ::1] values, double s, bint periodic):
    cdef Py_ssize_t L = values.shape[0]
    cdef Py_ssize_t N = values.shape[1]
    cdef Py_ssize_t M = 3 * N if periodic else N
    out_arr = np.empty((L, N), dtype=np.float64)
    off_arr = np.empty((L, N), dtype=np.int64)
    cdef double[:, ::1] out = out_arr
    cdef cnp.int64_t[:, ::1] off = off_arr
    cdef cnp.ndarray[double, ndim=1] ext_arr = np.empty(M, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=1] z_arr = np.empty(M + 1, dtype=np.float64)
    cdef cnp.ndarray[cnp.npy_intp, ndim=1] v_arr = np.empty(M, dtype=np.intp)
    cdef double* ext = <double*>ext_arr.data
    cdef double* z = <double*>z_arr.data
    cdef Py_ssize_t* v_idx = <Py_ssize_t*>v_arr.data
    cdef Py_ssize_t l, q
    cdef double offset = -<double>N if periodic else 0.0
    with nogil:
        for l in range(L):
            if periodic:
                for q in range(M):
                    ext[q] = values[l, q % N]
            else:
                for q in range(N):
                    ext[q] = values[l, q]
            _envelope(ext, M, s, offset, v_idx, z, N, &out[l, 0], &off[l, 0])
    return out_arr, off_arr


def ball_min(const double[:, ::1] f, double s, int radius, bint periodic):
    cdef Py_ssize_t N = f.shape[0]
    cdef Py_ssize_t N2 = f.shape[1]
    offs = [(a, b) for a in range(-radius, radius + 1) for b in range(-radius, radius + 1)
            if a * a + b * b <= radius * radius]
    offs.sort(key=lambda ab: (ab[0] * ab[0] + ab[1] * ab[1], ab[0], ab[1]))
    cdef cnp.ndarray[cnp.int64_t, ndim=2] oarr = np.asarray(offs, dtype=np.int64).reshape(-1, 2)
    cdef cnp.int64_t[:, ::1] o = oarr
    cdef Py_ssize_t K = o.shape[0]
    cdef Py_ssize_t r = radius
    # padded copy (wrapped, or +inf outside the square) so the inner loop has
    # no index arithmetic; offsets go outermost for contiguous row access
    if periodic:
        padded = np.pad(np.asarray(f), r, mode="wrap")
    else:
        padded = np.pad(np.asarray(f), r, mode="constant", constant_values=np.inf)
    cdef double[:, ::1] P = np.ascontiguousarray(padded)
    out_arr = np.full((N, N2), np.inf)
    o1_arr = np.zeros((N, N2), dtype=np.int64)
    o2_arr = np.zeros((N, N2), dtype=np.int64)
    cdef double[:, ::1] out = out_arr
    cdef cnp.int64_t[:, ::1] o1 = o1_arr
    cdef cnp.int64_t[:, ::1] o2 = o2_arr
    cdef Py_ssize_t i, j, k
    cdef cnp.int64_t a, b
    cdef double pen, v
    with nogil:
        for k in range(K):
            a = o[k, 0]
            b = o[k, 1]
            pen = s * (a * a + b * b)
            for i in range(N):
                for j in range(N2):
                    v = pen + P[i + r + a, j + r + b]
                    if v < out[i, j]:
                        out[i, j] = v
                        o1[i, j] = a
                        o2[i, j] = b
    return out_arr, o1_arr, o2_arr


cdef enum:
    KMAX = 8
    VMAX = 16


cdef int _clip(double* px, double* py, int* lab, int nv,
               double alpha, double bx, double by, int label,
               double* qx, double* qy, int* qlab) noexcept nogil:
    # keep the part of the polygon where alpha + bx*x + by*y <= 0; every
    # vertex carries the label of the edge leaving it
    cdef int v, w, nq = 0
    cdef double gp, gq, t
    for v in range(nv):
        w = v + 1
        if w == nv:
            w = 0
        gp = alpha + bx * px[v] + by * py[v]
        gq = alpha + bx * px[w] + by * py[w]
        if gp <= 0:
            qx[nq] = px[v]
            qy[nq] = py[v]
            qlab[nq] = lab[v]
            nq += 1
            if gq > 0:
                t = gp / (gp - gq)
                qx[nq] = px[v] + t * (px[w] - px[v])
                qy[nq] = py[v] + t * (py[w] - py[v])
                qlab[nq] = label
                nq += 1
        elif gq <= 0:
            t = gp / (gp - gq)
            qx[nq] = px[v] + t * (px[w] - px[v])
            qy[nq] = py[v] + t * (py[w] - py[v])
            qlab[nq] = lab[v]
            nq += 1
    return nq


def laguerre_pixel_masses(const double[::1] sx, const double[::1] sy, double h,
                          const double[::1] ax, const double[::1] ay,
                          const double[::1] w, const double[::1] pm, bint periodic):
    """Exact Laguerre-cell masses of square pixels with constant density.

    Returns (best, bval, masses, ei, ej, ec, overflow): raster argmin at the
    pixel centres (ties to the lowest index) and its value; the mass of each
    cell; the facet coefficients ec = pm * length / |grad of the bisector|
    for atom pairs ei < ej sharing a facet inside some pixel; and the number
    of pixels whose candidate list was truncated at KMAX.
    """
    cdef Py_ssize_t m = sx.shape[0]
    cdef Py_ssize_t n = ax.shape[0]
    cdef int G = <int>sqrt(n / 2.0)
    if G < 1:
        G = 1
    if G > 512:
        G = 512
    cdef double bs = 1.0 / G
    cdef double rpix = h * sqrt(0.5)
    cdef Py_ssize_t i, k, p, j, q
    cdef int bx, by, b

    cdef cnp.ndarray[cnp.int64_t, ndim=1] start_arr = np.zeros(G * G + 1, dtype=np.int64)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] order_arr = np.empty(n, dtype=np.int64)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] bucket_arr = np.empty(n, dtype=np.int64)
    cdef cnp.int64_t[::1] start = start_arr
    cdef cnp.int64_t[::1] order = order_arr
    cdef cnp.int64_t[::1] bucket = bucket_arr
    cdef double wmax = -INFINITY
    for i in range(n):
        if w[i] > wmax:
            wmax = w[i]
        bx = <int>floor(ax[i] * G)
        by = <int>floor(ay[i] * G)
        if bx < 0: bx = 0
        if bx >= G: bx = G - 1
        if by < 0: by = 0
        if by >= G: by = G - 1
        bucket[i] = bx * G + by
        start[bucket[i] + 1] += 1
    for b in range(G * G):
        start[b + 1] += start[b]
    cdef cnp.ndarray[cnp.int64_t, ndim=1] fill_arr = start_arr[:-1].copy()
    cdef cnp.int64_t[::1] fill = fill_arr
    for i in range(n):
        order[fill[bucket[i]]] = i
        fill[bucket[i]] += 1

    best_arr = np.empty(m, dtype=np.int64)
    bval_arr = np.empty(m, dtype=np.float64)
    mass_arr = np.zeros(n, dtype=np.float64)
    cdef cnp.int64_t[::1] best = best_arr
    cdef double[::1] bval = bval_arr
    cdef double[::1] mass = mass_arr

    cdef Py_ssize_t cap = 1024, ne = 0
    ei_arr = np.empty(cap, dtype=np.int64)
    ej_arr = np.empty(cap, dtype=np.int64)
    ec_arr = np.empty(cap, dtype=np.float64)
    cdef cnp.int64_t[::1] ei = ei_arr
    cdef cnp.int64_t[::1] ej = ej_arr
    cdef double[::1] ec = ec_arr

    cdef int r, dxb, dyb, cx, cy, K, nv, nv2, v, vn, lab_k, overflow = 0
    cdef double px_, py_, dx, dy, val, b1, R, di, thr, area, seg, gnorm
    cdef Py_ssize_t i1
    cdef Py_ssize_t cand[KMAX]
    cdef double cval[KMAX]
    cdef double cdx[KMAX]
    cdef double cdy[KMAX]
    cdef double vx[VMAX]
    cdef double vy[VMAX]
    cdef int vl[VMAX]
    cdef double tx[VMAX]
    cdef double ty[VMAX]
    cdef int tl[VMAX]
    cdef double alpha, ux, uy
    cdef bint stop, dup

    for p in range(m):
        px_ = sx[p]
        py_ = sy[p]
        cx = <int>floor(px_ * G)
        cy = <int>floor(py_ * G)
        if cx < 0: cx = 0
        if cx >= G: cx = G - 1
        if cy < 0: cy = 0
        if cy >= G: cy = G - 1

        # phase 1: best atom
        b1 = INFINITY
        i1 = -1
        r = 0
        while True:
            for dxb in range(-r, r + 1):
                for dyb in range(-r, r + 1):
                    if dxb != -r and dxb != r and dyb != -r and dyb != r:
                        continue
                    bx = cx + dxb
                    by = cy + dyb
                    if periodic:
                        bx = bx % G
                        by = by % G
                        if bx < 0: bx += G
                        if by < 0: by += G
                    elif bx < 0 or bx >= G or by < 0 or by >= G:
                        continue
                    b = bx * G + by
                    for k in range(start[b], start[b + 1]):
                        j = order[k]
                        dx = ax[j] - px_
                        dy = ay[j] - py_
                        if periodic:
                            dx = _wrap(dx)
                            dy = _wrap(dy)
                        val = dx * dx + dy * dy - w[j]
                        if val < b1 or (val == b1 and j < i1):
                            b1 = val
                            i1 = j
            if periodic:
                if 2 * r + 1 >= G:
                    break
            elif r >= G:
                break
            if i1 >= 0 and (r * bs) * (r * bs) - wmax >= b1:
                break
            r += 1
        best[p] = i1
        bval[p] = b1
        dx = ax[i1] - px_
        dy = ay[i1] - py_
        if periodic:
            dx = _wrap(dx)
            dy = _wrap(dy)
        di = sqrt(dx * dx + dy * dy)

        # phase 2: every atom whose cell can reach into the pixel
        K = 0
        r = 0
        while True:
            for dxb in range(-r, r + 1):
                for dyb in range(-r, r + 1):
                    if dxb != -r and dxb != r and dyb != -r and dyb != r:
                        continue
                    bx = cx + dxb
                    by = cy + dyb
                    if periodic:
                        bx = bx % G
                        by = by % G
                        if bx < 0: bx += G
                        if by < 0: by += G
                    elif bx < 0 or bx >= G or by < 0 or by >= G:
                        continue
                    b = bx * G + by
                    for k in range(start[b], start[b + 1]):
                        j = order[k]
                        dx = ax[j] - px_
                        dy = ay[j] - py_
                        if periodic:
                            dx = _wrap(dx)
                            dy = _wrap(dy)
                        val = dx * dx + dy * dy - w[j]
                        ux = dx - (ax[i1] - px_ if not periodic else _wrap(ax[i1] - px_))
                        uy = dy - (ay[i1] - py_ if not periodic else _wrap(ay[i1] - py_))
                        if val - b1 > 2.0 * rpix * sqrt(ux * ux + uy * uy):
                            continue
                        # a wrapped ring can revisit a bucket on small tori
                        dup = False
                        for q in range(K):
                            if cand[q] == j:
                                dup = True
                                break
                        if dup:
                            continue
                        # insertion by (value, index), keep the KMAX best
                        if K == KMAX:
                            overflow += 1
                            if val > cval[K - 1] or (val == cval[K - 1] and j > cand[K - 1]):
                                continue
                            K -= 1
                        q = K
                        while q > 0 and (cval[q - 1] > val or (cval[q - 1] == val and cand[q - 1] > j)):
                            cand[q] = cand[q - 1]
                            cval[q] = cval[q - 1]
                            cdx[q] = cdx[q - 1]
                            cdy[q] = cdy[q - 1]
                            q -= 1
                        cand[q] = j
                        cval[q] = val
                        cdx[q] = dx
                        cdy[q] = dy
                        K += 1
            if periodic:
                if 2 * r + 1 >= G:
                    break
            elif r >= G:
                break
            R = r * bs
            if R >= rpix and R * R - 2.0 * rpix * R - wmax - b1 > 2.0 * rpix * di:
                break
            r += 1

        if K <= 1:
            mass[i1] += pm[p]
            continue

        for i in range(K):
            # unit pixel in local coordinates s = (x - centre) / h
            vx[0] = -0.5; vy[0] = -0.5
            vx[1] = 0.5; vy[1] = -0.5
            vx[2] = 0.5; vy[2] = 0.5
            vx[3] = -0.5; vy[3] = 0.5
            vl[0] = -1; vl[1] = -1; vl[2] = -1; vl[3] = -1
            nv = 4
            for k in range(K):
                if k == i:
                    continue
                alpha = cval[i] - cval[k]
                ux = -2.0 * h * (cdx[i] - cdx[k])
                uy = -2.0 * h * (cdy[i] - cdy[k])
                if ux == 0.0 and uy == 0.0:
                    if alpha < 0 or (alpha == 0 and cand[i] < cand[k]):
                        continue
                    nv = 0
                    break
                nv2 = _clip(vx, vy, vl, nv, alpha, ux, uy, <int>k, tx, ty, tl)
                for v in range(nv2):
                    vx[v] = tx[v]
                    vy[v] = ty[v]
                    vl[v] = tl[v]
                nv = nv2
                if nv == 0:
                    break
            if nv < 3:
                continue
            area = 0.0
            for v in range(nv):
                vn = v + 1
                if vn == nv:
                    vn = 0
                area += vx[v] * vy[vn] - vx[vn] * vy[v]
            mass[cand[i]] += pm[p] * 0.5 * area
            for v in range(nv):
                lab_k = vl[v]
                if lab_k < 0 or cand[i] > cand[lab_k]:
                    continue
                vn = v + 1
                if vn == nv:
                    vn = 0
                seg = sqrt((vx[vn] - vx[v]) ** 2 + (vy[vn] - vy[v]) ** 2)
                if seg == 0.0:
                    continue
                gnorm = 2.0 * h * sqrt((cdx[i] - cdx[lab_k]) ** 2 + (cdy[i] - cdy[lab_k]) ** 2)
                if ne == cap:
                    cap *= 2
                    ei_arr = np.resize(ei_arr, cap)
                    ej_arr = np.resize(ej_arr, cap)
                    ec_arr = np.resize(ec_arr, cap)
                    ei = ei_arr
                    ej = ej_arr
                    ec = ec_arr
                ei[ne] = cand[i]
                ej[ne] = cand[lab_k]
                ec[ne] = pm[p] * seg / gnorm
                ne += 1
    return best_arr, bval_arr, mass_arr, ei_arr[:ne].copy(), ej_arr[:ne].copy(), ec_arr[:ne].copy(), overflow


def lse_entries(const double[:, ::1] A, const double[:, ::1] P,
                const cnp.int64_t[::1] ra, const cnp.int64_t[::1] rx):
    """log sum_y exp(A[ra[k], y] + P[rx[k], y]) for each listed entry k."""
    cdef Py_ssize_t K = ra.shape[0]
    cdef Py_ssize_t N = A.shape[1]
    out_arr = np.empty(K, dtype=np.float64)
    cdef double[::1] out = out_arr
    cdef Py_ssize_t k, y, a, x
    cdef double mx, s, v
    with nogil:
        for k in range(K):
            a = ra[k]
            x = rx[k]
            mx = -INFINITY
            for y in range(N):
                v = A[a, y] + P[x, y]
                if v > mx:
                    mx = v
            if mx == -INFINITY:
                out[k] = -INFINITY
                continue
            s = 0.0
            for y in range(N):
                s += exp(A[a, y] + P[x, y] - mx)
            out[k] = mx + log(s)
    return out_arr
