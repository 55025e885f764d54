"""Pure numpy/scipy versions of the compiled kernels in ``_kernels.pyx``.

Same signatures and return conventions; used when the extension is not built
or when ``SEMIMATCH_PURE_PYTHON=1`` is set.
"""

import numpy as np
from scipy.spatial import cKDTree


def power_top2(sx, sy, ax, ay, w, periodic):
    """Top-2 atoms per source point for the cost ``d^2 - w``.

    Lifts atoms to 3-D as ``(X_i, sqrt(wmax - w_i))`` so that the power cost
    becomes a squared Euclidean distance plus the constant ``wmax``; a k-d tree
    query then gives exact nearest atoms.
    """
    sx = np.asarray(sx, dtype=float)
    sy = np.asarray(sy, dtype=float)
    w = np.asarray(w, dtype=float)
    n = len(w)
    m = len(sx)
    wmax = w.max()
    lift = np.sqrt(wmax - w)
    atoms = np.column_stack([ax, ay, lift])
    if periodic:
        depth = 2.0 * lift.max() + 1.0
        tree = cKDTree(np.column_stack([np.mod(ax, 1.0), np.mod(ay, 1.0), lift]),
                       boxsize=[1.0, 1.0, depth])
    else:
        tree = cKDTree(atoms)
    queries = np.column_stack([sx, sy, np.zeros(m)])
    k = min(n, 3)
    _, idx = tree.query(queries, k=k)
    idx = np.asarray(idx).reshape(m, k)

    # re-evaluate exactly so that ties and rounding match the compiled kernel
    vals = _power_values(sx, sy, ax, ay, w, idx, periodic)
    key_idx = np.argsort(idx, axis=1, kind="stable")
    idx = np.take_along_axis(idx, key_idx, axis=1)
    vals = np.take_along_axis(vals, key_idx, axis=1)
    srt = np.argsort(vals, axis=1, kind="stable")
    idx = np.take_along_axis(idx, srt, axis=1)
    vals = np.take_along_axis(vals, srt, axis=1)

    best = idx[:, 0].astype(np.int64)
    bval = vals[:, 0].copy()
    if n == 1:
        return best, bval, np.full(m, -1, dtype=np.int64), np.full(m, np.inf)
    return best, bval, idx[:, 1].astype(np.int64), vals[:, 1].copy()


def _power_values(sx, sy, ax, ay, w, idx, periodic):
    dx = np.asarray(ax)[idx] - sx[:, None]
    dy = np.asarray(ay)[idx] - sy[:, None]
    if periodic:
        dx = _wrap(dx)
        dy = _wrap(dy)
    return dx * dx + dy * dy - np.asarray(w)[idx]


def _wrap(d):
    w = d - np.floor(d + 0.5)
    return np.where(w == -0.5, 0.5, w)


def quad_infconv_lines(values, s, periodic):
    """Row-wise ``min_k s*(k - y)^2 + values[l, k]`` and the minimising offset."""
    values = np.ascontiguousarray(values, dtype=float)
    L, N = values.shape
    out = np.full((L, N), np.inf)
    off = np.zeros((L, N), dtype=np.int64)
    y = np.arange(N)
    offsets = range(-N, 2 * N) if periodic else range(N)
    # sweep candidate source columns in increasing position order; strict
    # improvement keeps the first minimiser, matching the envelope kernel
    for q in offsets:
        col = values[:, q % N] if periodic else values[:, q]
        cand = s * (q - y)[None, :] ** 2 + col[:, None]
        better = cand < out
        out = np.where(better, cand, out)
        off = np.where(better, q - y[None, :], off)
    return out, off


def ball_min(f, s, radius, periodic):
    f = np.ascontiguousarray(f, dtype=float)
    N, N2 = f.shape
    offs = [(a, b) for a in range(-radius, radius + 1) for b in range(-radius, radius + 1)
            if a * a + b * b <= radius * radius]
    offs.sort(key=lambda ab: (ab[0] * ab[0] + ab[1] * ab[1], ab[0], ab[1]))
    out = np.full((N, N2), np.inf)
    o1 = np.zeros((N, N2), dtype=np.int64)
    o2 = np.zeros((N, N2), dtype=np.int64)
    if not periodic:
        padded = np.full((N + 2 * radius, N2 + 2 * radius), np.inf)
        padded[radius:radius + N, radius:radius + N2] = f
    for a, b in offs:
        if periodic:
            shifted = np.roll(f, (-a, -b), axis=(0, 1))
        else:
            shifted = padded[radius + a:radius + a + N, radius + b:radius + b + N2]
        cand = s * (a * a + b * b) + shifted
        better = cand < out
        out = np.where(better, cand, out)
        o1[better] = a
        o2[better] = b
    return out, o1, o2


KMAX = 8


def _clip_rows(X, Y, L, nv, alpha, bx, by, label):
    """Clip one convex polygon per row by alpha + bx*x + by*y <= 0."""
    P, V = X.shape
    col = np.arange(V)[None, :]
    valid = col < nv[:, None]
    nxt = np.where(col + 1 < nv[:, None], col + 1, 0)
    x1 = np.take_along_axis(X, nxt, axis=1)
    y1 = np.take_along_axis(Y, nxt, axis=1)
    gp = alpha[:, None] + bx[:, None] * X + by[:, None] * Y
    gq = alpha[:, None] + bx[:, None] * x1 + by[:, None] * y1
    p_in = gp <= 0
    q_in = gq <= 0
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(p_in != q_in, gp / (gp - gq), 0.0)
    ix = X + t * (x1 - X)
    iy = Y + t * (y1 - Y)
    # each edge emits up to two vertices: slot 0 then slot 1
    e0 = valid & (p_in | q_in)
    e0x = np.where(p_in, X, ix)
    e0y = np.where(p_in, Y, iy)
    e1 = valid & p_in & ~q_in
    ox = np.stack([e0x, ix], axis=-1).reshape(P, 2 * V)
    oy = np.stack([e0y, iy], axis=-1).reshape(P, 2 * V)
    ol = np.stack([L, np.broadcast_to(label[:, None], L.shape)], axis=-1).reshape(P, 2 * V)
    om = np.stack([e0, e1], axis=-1).reshape(P, 2 * V)
    order = np.argsort(~om, axis=1, kind="stable")[:, :V]
    return (np.take_along_axis(ox, order, 1), np.take_along_axis(oy, order, 1),
            np.take_along_axis(ol, order, 1), om.sum(axis=1))


def laguerre_pixel_masses(sx, sy, h, ax, ay, w, pm, periodic):
    sx = np.asarray(sx, dtype=float)
    sy = np.asarray(sy, dtype=float)
    ax = np.asarray(ax, dtype=float)
    ay = np.asarray(ay, dtype=float)
    w = np.asarray(w, dtype=float)
    pm = np.asarray(pm, dtype=float)
    n, m = len(w), len(sx)
    rpix = h * np.sqrt(0.5)
    K = min(n, KMAX)
    lift = np.sqrt(w.max() - w)
    if periodic:
        tree = cKDTree(np.column_stack([np.mod(ax, 1.0), np.mod(ay, 1.0), lift]),
                       boxsize=[1.0, 1.0, 2.0 * lift.max() + 1.0])
    else:
        tree = cKDTree(np.column_stack([ax, ay, lift]))
    _, idx = tree.query(np.column_stack([sx, sy, np.zeros(m)]), k=K)
    idx = np.asarray(idx).reshape(m, K)
    dx = ax[idx] - sx[:, None]
    dy = ay[idx] - sy[:, None]
    if periodic:
        dx, dy = _wrap(dx), _wrap(dy)
    val = dx * dx + dy * dy - w[idx]
    # sort by (value, index)
    o = np.argsort(idx, axis=1, kind="stable")
    idx, val, dx, dy = (np.take_along_axis(a, o, 1) for a in (idx, val, dx, dy))
    o = np.argsort(val, axis=1, kind="stable")
    idx, val, dx, dy = (np.take_along_axis(a, o, 1) for a in (idx, val, dx, dy))

    best = idx[:, 0].astype(np.int64)
    bval = val[:, 0].copy()
    gap = np.hypot(dx - dx[:, :1], dy - dy[:, :1])
    keep = (val - bval[:, None]) <= 2.0 * rpix * gap
    keep[:, 0] = True
    # kept candidates form a prefix after a stable sort on ~keep
    o = np.argsort(~keep, axis=1, kind="stable")
    idx, val, dx, dy = (np.take_along_axis(a, o, 1) for a in (idx, val, dx, dy))
    cnt = keep.sum(axis=1)

    mass = np.bincount(best[cnt == 1], weights=pm[cnt == 1], minlength=n)
    EI, EJ, EC = [], [], []
    V = 4 + KMAX
    for c in range(2, K + 1):
        rows = np.nonzero(cnt == c)[0]
        if len(rows) == 0:
            continue
        P = len(rows)
        ci, cv, cx, cy = idx[rows, :c], val[rows, :c], dx[rows, :c], dy[rows, :c]
        for i in range(c):
            X = np.zeros((P, V))
            Y = np.zeros((P, V))
            X[:, :4] = [-0.5, 0.5, 0.5, -0.5]
            Y[:, :4] = [-0.5, -0.5, 0.5, 0.5]
            Lb = np.full((P, V), -1)
            nv = np.full(P, 4)
            for k in range(c):
                if k == i:
                    continue
                alpha = cv[:, i] - cv[:, k]
                bx = -2.0 * h * (cx[:, i] - cx[:, k])
                by = -2.0 * h * (cy[:, i] - cy[:, k])
                deg = (bx == 0) & (by == 0)
                if np.any(deg):
                    lose = deg & ~((alpha < 0) | ((alpha == 0) & (ci[:, i] < ci[:, k])))
                    nv = np.where(lose, 0, nv)
                    alpha = np.where(deg, -1.0, alpha)
                X, Y, Lb, nv = _clip_rows(X, Y, Lb, nv, alpha, bx, by, np.full(P, k))
            col = np.arange(V)[None, :]
            live = col < nv[:, None]
            nxt = np.where(col + 1 < nv[:, None], col + 1, 0)
            x1 = np.take_along_axis(X, nxt, 1)
            y1 = np.take_along_axis(Y, nxt, 1)
            area = 0.5 * np.sum(np.where(live, X * y1 - x1 * Y, 0.0), axis=1)
            area = np.where(nv >= 3, area, 0.0)
            mass += np.bincount(ci[:, i], weights=pm[rows] * area, minlength=n)
            seg = np.hypot(x1 - X, y1 - Y)
            lab = np.where(live & (nv[:, None] >= 3), Lb, -1)
            labc = np.clip(lab, 0, c - 1)
            other = np.take_along_axis(ci, labc, 1)
            sel = (lab >= 0) & (ci[:, i][:, None] < other) & (seg > 0)
            r_, v_ = np.nonzero(sel)
            k_ = labc[r_, v_]
            gn = 2.0 * h * np.hypot(cx[r_, i] - cx[r_, k_], cy[r_, i] - cy[r_, k_])
            EI.append(ci[r_, i])
            EJ.append(other[r_, v_])
            EC.append(pm[rows][r_] * seg[r_, v_] / gn)
    cat = (lambda parts, dt: np.concatenate(parts).astype(dt) if parts else np.zeros(0, dt))
    return best, bval, mass, cat(EI, np.int64), cat(EJ, np.int64), cat(EC, float), 0


def lse_entries(A, P, ra, rx):
    from scipy.special import logsumexp

    out = np.empty(len(ra))
    for lo in range(0, len(ra), 4096):
        sl = slice(lo, lo + 4096)
        out[sl] = logsumexp(A[ra[sl]] + P[rx[sl]], axis=1)
    return out
