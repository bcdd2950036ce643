"""Numba-accelerated hot kernels.

Mirrors numpy_backend function-for-function. All loops are sequential and
fastmath is left off so results are reproducible run to run and stay within
floating-point rounding of the reference implementations.
"""

from __future__ import annotations

import numpy as np
from numba import njit


@njit(cache=True)
def curvature(points, offsets, valid, n_neighbor):
    n = points.shape[0]
    kappa = np.full(n, np.inf)
    n_lines = offsets.shape[0] - 1
    for line in range(n_lines):
        lo = offsets[line]
        hi = offsets[line + 1]
        if hi - lo < 2 * n_neighbor + 1:
            continue
        for i in range(lo + n_neighbor, hi - n_neighbor):
            if not valid[i]:
                continue
            ax = 0.0
            ay = 0.0
            az = 0.0
            px = points[i, 0]
            py = points[i, 1]
            pz = points[i, 2]
            for j in range(1, n_neighbor + 1):
                ax += points[i + j, 0] + points[i - j, 0] - 2.0 * px
                ay += points[i + j, 1] + points[i - j, 1] - 2.0 * py
                az += points[i + j, 2] + points[i - j, 2] - 2.0 * pz
            inv = 1.0 / n_neighbor
            ax *= inv
            ay *= inv
            az *= inv
            kappa[i] = np.sqrt(ax * ax + ay * ay + az * az)
    return kappa


@njit(cache=True)
def select_features(
    kappa,
    valid,
    offsets,
    n_sectors,
    n_planar,
    n_point,
    delta_planar,
    n_neighbor,
    with_points,
):
    n = kappa.shape[0]
    planar_flag = np.zeros(n, dtype=np.bool_)
    point_flag = np.zeros(n, dtype=np.bool_)
    n_lines = offsets.shape[0] - 1
    for line in range(n_lines):
        lo = offsets[line]
        hi = offsets[line + 1]
        width = hi - lo
        if width == 0:
            continue
        cols = np.empty(width, dtype=np.int64)
        count = 0
        for c in range(width):
            if valid[lo + c]:
                cols[count] = c
                count += 1
        if count == 0:
            continue
        blocked = np.zeros(width, dtype=np.bool_)
        base = count // n_sectors
        extra = count % n_sectors
        bounds = np.empty(n_sectors + 1, dtype=np.int64)
        bounds[0] = 0
        for s in range(n_sectors):
            size = base + 1 if s < extra else base
            bounds[s + 1] = bounds[s] + size
        for s in range(n_sectors):
            a = bounds[s]
            b = bounds[s + 1]
            m = b - a
            if m == 0:
                continue
            sk = np.empty(m)
            for p in range(m):
                sk[p] = kappa[lo + cols[a + p]]
            order = np.argsort(sk, kind="mergesort")
            taken = 0
            for oo in range(m):
                if taken >= n_planar:
                    break
                o = order[oo]
                if sk[o] >= delta_planar:
                    break
                col = cols[a + o]
                if blocked[col]:
                    continue
                planar_flag[lo + col] = True
                taken += 1
                w0 = col - n_neighbor + 1
                if w0 < 0:
                    w0 = 0
                w1 = col + n_neighbor
                if w1 > width:
                    w1 = width
                for w in range(w0, w1):
                    blocked[w] = True
        if not with_points:
            continue
        for s in range(n_sectors):
            a = bounds[s]
            b = bounds[s + 1]
            m = b - a
            if m == 0:
                continue
            for j in range(n_point):
                start = (j * m) // n_point
                for p in range(start, m):
                    col = cols[a + p]
                    if not blocked[col]:
                        point_flag[lo + col] = True
                        w0 = col - n_neighbor + 1
                        if w0 < 0:
                            w0 = 0
                        w1 = col + n_neighbor
                        if w1 > width:
                            w1 = width
                        for w in range(w0, w1):
                            blocked[w] = True
                        break
    n_planar_sel = 0
    n_point_sel = 0
    for i in range(n):
        if planar_flag[i]:
            n_planar_sel += 1
        if point_flag[i]:
            n_point_sel += 1
    planar_idx = np.empty(n_planar_sel, dtype=np.int64)
    point_idx = np.empty(n_point_sel, dtype=np.int64)
    a = 0
    b = 0
    for i in range(n):
        if planar_flag[i]:
            planar_idx[a] = i
            a += 1
        if point_flag[i]:
            point_idx[b] = i
            b += 1
    return planar_idx, point_idx


@njit(cache=True)
def _collect_line(
    points, in_range, lo, hi, center_idx, cx, cy, cz, radius, cap, out, n_out
):
    r2 = radius * radius
    if in_range[center_idx] and n_out < cap:
        out[n_out] = center_idx
        n_out += 1
    left = center_idx - 1
    right = center_idx + 1
    left_alive = True
    right_alive = True
    while n_out < cap and (left_alive or right_alive):
        if left_alive:
            if left < lo:
                left_alive = False
            else:
                if in_range[left]:
                    dx = points[left, 0] - cx
                    dy = points[left, 1] - cy
                    dz = points[left, 2] - cz
                    if dx * dx + dy * dy + dz * dz <= r2:
                        out[n_out] = left
                        n_out += 1
                    else:
                        left_alive = False
                left -= 1
        if n_out >= cap:
            break
        if right_alive:
            if right >= hi:
                right_alive = False
            else:
                if in_range[right]:
                    dx = points[right, 0] - cx
                    dy = points[right, 1] - cy
                    dz = points[right, 2] - cz
                    if dx * dx + dy * dy + dz * dz <= r2:
                        out[n_out] = right
                        n_out += 1
                    else:
                        right_alive = False
                right += 1
    return n_out


@njit(cache=True)
def plane_normals(points, offsets, in_range, feat_flat, feat_line, radius, n_neighbor):
    n_lines = offsets.shape[0] - 1
    nf = feat_flat.shape[0]
    normals = np.zeros((nf, 3))
    counts = np.zeros(nf, dtype=np.int64)
    spread = np.zeros((nf, 2))
    buf = np.empty(3 * (n_neighbor + 1), dtype=np.int64)
    cov = np.empty((3, 3))
    for f in range(nf):
        flat = feat_flat[f]
        line = feat_line[f]
        fx = points[flat, 0]
        fy = points[flat, 1]
        fz = points[flat, 2]
        n_got = 0
        lo = offsets[line]
        hi = offsets[line + 1]
        before = n_got
        n_got = _collect_line(
            points, in_range, lo, hi, flat, fx, fy, fz, radius, before + n_neighbor + 1, buf, n_got
        )
        # drop the feature itself from its own-line neighborhood
        keep = before
        for p in range(before, n_got):
            if buf[p] != flat:
                buf[keep] = buf[p]
                keep += 1
        n_got = keep
        for step in (-1, 1):
            adj = line + step
            if adj < 0 or adj >= n_lines:
                continue
            alo = offsets[adj]
            ahi = offsets[adj + 1]
            if ahi <= alo:
                continue
            near = -1
            near_d2 = np.inf
            for p in range(alo, ahi):
                if not in_range[p]:
                    continue
                dx = points[p, 0] - fx
                dy = points[p, 1] - fy
                dz = points[p, 2] - fz
                d2 = dx * dx + dy * dy + dz * dz
                if d2 < near_d2:
                    near_d2 = d2
                    near = p
            if near < 0 or near_d2 > radius * radius:
                continue
            n_got = _collect_line(
                points,
                in_range,
                alo,
                ahi,
                near,
                points[near, 0],
                points[near, 1],
                points[near, 2],
                radius,
                n_got + n_neighbor,
                buf,
                n_got,
            )
        counts[f] = n_got
        if n_got < 3:
            continue
        for a in range(3):
            for b in range(3):
                cov[a, b] = 0.0
        for p in range(n_got):
            idx = buf[p]
            dx = points[idx, 0] - fx
            dy = points[idx, 1] - fy
            dz = points[idx, 2] - fz
            cov[0, 0] += dx * dx
            cov[0, 1] += dx * dy
            cov[0, 2] += dx * dz
            cov[1, 1] += dy * dy
            cov[1, 2] += dy * dz
            cov[2, 2] += dz * dz
        cov[1, 0] = cov[0, 1]
        cov[2, 0] = cov[0, 2]
        cov[2, 1] = cov[1, 2]
        vals, vecs = np.linalg.eigh(cov)
        spread[f, 0] = vals[0]
        spread[f, 1] = vals[1]
        nx = vecs[0, 0]
        ny = vecs[1, 0]
        nz = vecs[2, 0]
        if nx * fx + ny * fy + nz * fz > 0.0:
            nx = -nx
            ny = -ny
            nz = -nz
        normals[f, 0] = nx
        normals[f, 1] = ny
        normals[f, 2] = nz
    return normals, counts, spread


@njit(cache=True)
def match_system(rot, tra, kinds, k_slots, i_slots, pk, pi, nk, n_slots):
    dim = 6 * n_slots
    h = np.zeros((dim, dim))
    g = np.zeros(dim)
    cost = 0.0
    m = kinds.shape[0]
    u = np.empty(12)
    jrow = np.empty((3, 12))
    gidx = np.empty(12, dtype=np.int64)
    for f in range(m):
        k = k_slots[f]
        i = i_slots[f]
        rk = rot[k]
        ri = rot[i]
        pkx = pk[f, 0]
        pky = pk[f, 1]
        pkz = pk[f, 2]
        pix = pi[f, 0]
        piy = pi[f, 1]
        piz = pi[f, 2]
        wkx = rk[0, 0] * pkx + rk[0, 1] * pky + rk[0, 2] * pkz + tra[k, 0]
        wky = rk[1, 0] * pkx + rk[1, 1] * pky + rk[1, 2] * pkz + tra[k, 1]
        wkz = rk[2, 0] * pkx + rk[2, 1] * pky + rk[2, 2] * pkz + tra[k, 2]
        wix = ri[0, 0] * pix + ri[0, 1] * piy + ri[0, 2] * piz + tra[i, 0]
        wiy = ri[1, 0] * pix + ri[1, 1] * piy + ri[1, 2] * piz + tra[i, 1]
        wiz = ri[2, 0] * pix + ri[2, 1] * piy + ri[2, 2] * piz + tra[i, 2]
        dx = wix - wkx
        dy = wiy - wky
        dz = wiz - wkz
        for c in range(6):
            gidx[c] = 6 * k + c
            gidx[6 + c] = 6 * i + c
        if kinds[f] == 0:
            nkx = nk[f, 0]
            nky = nk[f, 1]
            nkz = nk[f, 2]
            # m = R_k n_k, a = R_i^T m, b = R_k^T d
            mx = rk[0, 0] * nkx + rk[0, 1] * nky + rk[0, 2] * nkz
            my = rk[1, 0] * nkx + rk[1, 1] * nky + rk[1, 2] * nkz
            mz = rk[2, 0] * nkx + rk[2, 1] * nky + rk[2, 2] * nkz
            ax = ri[0, 0] * mx + ri[1, 0] * my + ri[2, 0] * mz
            ay = ri[0, 1] * mx + ri[1, 1] * my + ri[2, 1] * mz
            az = ri[0, 2] * mx + ri[1, 2] * my + ri[2, 2] * mz
            bx = rk[0, 0] * dx + rk[1, 0] * dy + rk[2, 0] * dz
            by = rk[0, 1] * dx + rk[1, 1] * dy + rk[2, 1] * dz
            bz = rk[0, 2] * dx + rk[1, 2] * dy + rk[2, 2] * dz
            r = nkx * bx + nky * by + nkz * bz
            u[0] = (nky * pkz - nkz * pky) - (by * nkz - bz * nky)
            u[1] = (nkz * pkx - nkx * pkz) - (bz * nkx - bx * nkz)
            u[2] = (nkx * pky - nky * pkx) - (bx * nky - by * nkx)
            u[3] = -nkx
            u[4] = -nky
            u[5] = -nkz
            u[6] = piy * az - piz * ay
            u[7] = piz * ax - pix * az
            u[8] = pix * ay - piy * ax
            u[9] = ax
            u[10] = ay
            u[11] = az
            for a in range(12):
                ga = gidx[a]
                ua = u[a]
                g[ga] += ua * r
                for b in range(a, 12):
                    h[ga, gidx[b]] += ua * u[b]
            cost += r * r
        else:
            # rows of [J_k | J_i] for the 3-vector residual d
            for row in range(3):
                jrow[row, 3] = -rk[row, 0]
                jrow[row, 4] = -rk[row, 1]
                jrow[row, 5] = -rk[row, 2]
                jrow[row, 9] = ri[row, 0]
                jrow[row, 10] = ri[row, 1]
                jrow[row, 11] = ri[row, 2]
            # R_k [p_k]x and -R_i [p_i]x columns
            for row in range(3):
                jrow[row, 0] = rk[row, 1] * pkz - rk[row, 2] * pky
                jrow[row, 1] = rk[row, 2] * pkx - rk[row, 0] * pkz
                jrow[row, 2] = rk[row, 0] * pky - rk[row, 1] * pkx
                jrow[row, 6] = -(ri[row, 1] * piz - ri[row, 2] * piy)
                jrow[row, 7] = -(ri[row, 2] * pix - ri[row, 0] * piz)
                jrow[row, 8] = -(ri[row, 0] * piy - ri[row, 1] * pix)
            for a in range(12):
                ga = gidx[a]
                g[ga] += jrow[0, a] * dx + jrow[1, a] * dy + jrow[2, a] * dz
                for b in range(a, 12):
                    h[ga, gidx[b]] += (
                        jrow[0, a] * jrow[0, b]
                        + jrow[1, a] * jrow[1, b]
                        + jrow[2, a] * jrow[2, b]
                    )
            cost += dx * dx + dy * dy + dz * dz
    for a in range(dim):
        for b in range(a + 1, dim):
            h[b, a] = h[a, b]
    return h, g, cost


@njit(cache=True)
def match_cost(rot, tra, kinds, k_slots, i_slots, pk, pi, nk):
    cost = 0.0
    m = kinds.shape[0]
    for f in range(m):
        k = k_slots[f]
        i = i_slots[f]
        rk = rot[k]
        ri = rot[i]
        pkx = pk[f, 0]
        pky = pk[f, 1]
        pkz = pk[f, 2]
        pix = pi[f, 0]
        piy = pi[f, 1]
        piz = pi[f, 2]
        dx = (
            ri[0, 0] * pix + ri[0, 1] * piy + ri[0, 2] * piz + tra[i, 0]
            - rk[0, 0] * pkx - rk[0, 1] * pky - rk[0, 2] * pkz - tra[k, 0]
        )
        dy = (
            ri[1, 0] * pix + ri[1, 1] * piy + ri[1, 2] * piz + tra[i, 1]
            - rk[1, 0] * pkx - rk[1, 1] * pky - rk[1, 2] * pkz - tra[k, 1]
        )
        dz = (
            ri[2, 0] * pix + ri[2, 1] * piy + ri[2, 2] * piz + tra[i, 2]
            - rk[2, 0] * pkx - rk[2, 1] * pky - rk[2, 2] * pkz - tra[k, 2]
        )
        if kinds[f] == 0:
            mx = rk[0, 0] * nk[f, 0] + rk[0, 1] * nk[f, 1] + rk[0, 2] * nk[f, 2]
            my = rk[1, 0] * nk[f, 0] + rk[1, 1] * nk[f, 1] + rk[1, 2] * nk[f, 2]
            mz = rk[2, 0] * nk[f, 0] + rk[2, 1] * nk[f, 1] + rk[2, 2] * nk[f, 2]
            r = mx * dx + my * dy + mz * dz
            cost += r * r
        else:
            cost += dx * dx + dy * dy + dz * dz
    return cost


@njit(cache=True)
def raycast(origin, dirs, pl_c, pl_u, pl_v, pl_n, pl_half, po_c, po_r, po_z0, po_z1):
    n = dirs.shape[0]
    best = np.full(n, np.inf)
    eps = 1e-12
    ox = origin[0]
    oy = origin[1]
    oz = origin[2]
    for i in range(n):
        dx = dirs[i, 0]
        dy = dirs[i, 1]
        dz = dirs[i, 2]
        tbest = np.inf
        for q in range(pl_c.shape[0]):
            denom = dx * pl_n[q, 0] + dy * pl_n[q, 1] + dz * pl_n[q, 2]
            if abs(denom) <= eps:
                continue
            t = (
                (pl_c[q, 0] - ox) * pl_n[q, 0]
                + (pl_c[q, 1] - oy) * pl_n[q, 1]
                + (pl_c[q, 2] - oz) * pl_n[q, 2]
            ) / denom
            if t <= eps or t >= tbest:
                continue
            hx = ox + t * dx - pl_c[q, 0]
            hy = oy + t * dy - pl_c[q, 1]
            hz = oz + t * dz - pl_c[q, 2]
            du = hx * pl_u[q, 0] + hy * pl_u[q, 1] + hz * pl_u[q, 2]
            if abs(du) > pl_half[q, 0]:
                continue
            dv = hx * pl_v[q, 0] + hy * pl_v[q, 1] + hz * pl_v[q, 2]
            if abs(dv) > pl_half[q, 1]:
                continue
            tbest = t
        for s in range(po_c.shape[0]):
            cx = ox - po_c[s, 0]
            cy = oy - po_c[s, 1]
            a = dx * dx + dy * dy
            if a <= eps:
                continue
            b = 2.0 * (cx * dx + cy * dy)
            c = cx * cx + cy * cy - po_r[s] * po_r[s]
            disc = b * b - 4.0 * a * c
            if disc < 0.0:
                continue
            sq = np.sqrt(disc)
            t = (-b - sq) / (2.0 * a)
            if t > eps and t < tbest:
                z = oz + t * dz
                if po_z0[s] <= z <= po_z1[s]:
                    tbest = t
                    continue
            t = (-b + sq) / (2.0 * a)
            if t > eps and t < tbest:
                z = oz + t * dz
                if po_z0[s] <= z <= po_z1[s]:
                    tbest = t
        best[i] = tbest
    return best
