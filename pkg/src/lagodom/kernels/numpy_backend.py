"""Pure-numpy reference implementations of the hot kernels.

Same signatures and semantics as numba_backend; used when the accelerated
path is disabled (LAGODOM_NUMBA=0) or numba is unavailable, and as the
parity oracle in tests.
"""

from __future__ import annotations

import numpy as np


def curvature(points, offsets, valid, n_neighbor):
    """Mean second-difference magnitude per point, along each scanline.

    Returns an (N,) array holding, for every valid point, the norm of the
    averaged second differences over the n_neighbor symmetric window, and
    +inf elsewhere.
    """
    n = points.shape[0]
    kappa = np.full(n, np.inf)
    for line in range(len(offsets) - 1):
        lo, hi = offsets[line], offsets[line + 1]
        pts = points[lo:hi]
        width = hi - lo
        if width < 2 * n_neighbor + 1:
            continue
        acc = np.zeros((width - 2 * n_neighbor, 3))
        center = pts[n_neighbor : width - n_neighbor]
        for j in range(1, n_neighbor + 1):
            left = pts[n_neighbor - j : width - n_neighbor - j]
            right = pts[n_neighbor + j : width - n_neighbor + j]
            acc += left + right - 2.0 * center
        mags = np.linalg.norm(acc / n_neighbor, axis=1)
        mask = valid[lo + n_neighbor : hi - n_neighbor]
        idx = np.arange(lo + n_neighbor, hi - n_neighbor)[mask]
        kappa[idx] = mags[mask]
    return kappa


def _sector_chunks(count, n_sectors):
    # first (count % n_sectors) chunks get one extra element
    base, extra = divmod(count, n_sectors)
    sizes = [base + 1] * extra + [base] * (n_sectors - extra)
    bounds = np.cumsum([0] + sizes)
    return [(bounds[s], bounds[s + 1]) for s in range(n_sectors)]


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
    """Greedy per-sector feature selection with index-spacing enforcement.

    Planar candidates are visited in ascending curvature (ties: lower
    index); point candidates at an even stride across each sector. A
    selected feature blocks every index closer than n_neighbor on its
    scanline, across both feature kinds and sector boundaries.
    """
    planar_sel = []
    point_sel = []
    for line in range(len(offsets) - 1):
        lo, hi = offsets[line], offsets[line + 1]
        cols = np.flatnonzero(valid[lo:hi])
        if len(cols) == 0:
            continue
        blocked = np.zeros(hi - lo, dtype=bool)
        chunks = _sector_chunks(len(cols), n_sectors)
        for a, b in chunks:
            sector = cols[a:b]
            if len(sector) == 0:
                continue
            sk = kappa[lo + sector]
            order = np.argsort(sk, kind="mergesort")
            taken = 0
            for o in order:
                if taken >= n_planar:
                    break
                col = sector[o]
                if sk[o] >= delta_planar:
                    break
                if blocked[col]:
                    continue
                planar_sel.append(lo + col)
                taken += 1
                w0 = max(0, col - n_neighbor + 1)
                blocked[w0 : col + n_neighbor] = True
        if not with_points:
            continue
        for a, b in chunks:
            sector = cols[a:b]
            m = len(sector)
            if m == 0:
                continue
            taken = 0
            for j in range(n_point):
                start = (j * m) // n_point
                for p in range(start, m):
                    col = sector[p]
                    if not blocked[col]:
                        point_sel.append(lo + col)
                        taken += 1
                        w0 = max(0, col - n_neighbor + 1)
                        blocked[w0 : col + n_neighbor] = True
                        break
                if taken >= n_point:
                    break
    return (
        np.array(sorted(planar_sel), dtype=np.int64),
        np.array(sorted(point_sel), dtype=np.int64),
    )


def _line_neighbors(points, lo, hi, in_range, center_idx, center_pt, radius, cap):
    """Walk outward from center_idx collecting in-range points within radius."""
    out = []
    include_center = in_range[center_idx]
    if include_center:
        out.append(center_idx)
    left = center_idx - 1
    right = center_idx + 1
    left_alive = True
    right_alive = True
    while len(out) < cap and (left_alive or right_alive):
        progressed = False
        if left_alive:
            if left < lo:
                left_alive = False
            else:
                if in_range[left]:
                    if np.linalg.norm(points[left] - center_pt) <= radius:
                        out.append(left)
                        progressed = True
                    else:
                        left_alive = False
                left -= 1
        if len(out) >= cap:
            break
        if right_alive:
            if right >= hi:
                right_alive = False
            else:
                if in_range[right]:
                    if np.linalg.norm(points[right] - center_pt) <= radius:
                        out.append(right)
                        progressed = True
                    else:
                        right_alive = False
                right += 1
        if not progressed and not left_alive and not right_alive:
            break
    return out


def plane_normals(points, offsets, in_range, feat_flat, feat_line, radius, n_neighbor):
    """Neighborhood covariance normals for planar feature candidates.

    For each feature: up to n_neighbor own-line neighbors within radius of
    the feature, plus, per adjacent scanline whose nearest point lies within
    radius of the feature, up to n_neighbor points around that nearest
    point. Covariance is taken about the feature point itself; the normal is
    the smallest-eigenvalue eigenvector, oriented so normal . feature < 0.

    Returns (normals (F,3), neighbor_counts (F,), spread (F,2)); spread
    holds the two smallest scatter eigenvalues so callers can reject
    near-collinear neighborhoods whose normal direction is noise.
    """
    n_lines = len(offsets) - 1
    nf = len(feat_flat)
    normals = np.zeros((nf, 3))
    counts = np.zeros(nf, dtype=np.int64)
    spread = np.zeros((nf, 2))
    for f in range(nf):
        flat = feat_flat[f]
        line = feat_line[f]
        fpt = points[flat]
        gathered = []
        lo, hi = offsets[line], offsets[line + 1]
        own = _line_neighbors(points, lo, hi, in_range, flat, fpt, radius, n_neighbor + 1)
        gathered.extend(i for i in own if i != flat)
        for adj in (line - 1, line + 1):
            if adj < 0 or adj >= n_lines:
                continue
            alo, ahi = offsets[adj], offsets[adj + 1]
            if ahi <= alo:
                continue
            seg = points[alo:ahi]
            ok = in_range[alo:ahi]
            d2 = np.sum((seg - fpt) ** 2, axis=1)
            d2 = np.where(ok, d2, np.inf)
            near = int(np.argmin(d2))
            if d2[near] > radius * radius:
                continue
            gathered.extend(
                _line_neighbors(
                    points, alo, ahi, in_range, alo + near, seg[near], radius, n_neighbor
                )
            )
        counts[f] = len(gathered)
        if len(gathered) < 3:
            continue
        diffs = points[np.array(gathered)] - fpt
        cov = diffs.T @ diffs
        vals, vecs = np.linalg.eigh(cov)
        spread[f] = vals[:2]
        normal = vecs[:, 0]
        if normal @ fpt > 0.0:
            normal = -normal
        normals[f] = normal
    return normals, counts, spread


def _gather_rows(rot, tra, kinds, k_slots, i_slots, pk, pi, nk):
    """Per-factor residual rows and the stacked [J_k | J_i] blocks."""
    rk = rot[k_slots]
    ri = rot[i_slots]
    wk = np.einsum("nab,nb->na", rk, pk) + tra[k_slots]
    wi = np.einsum("nab,nb->na", ri, pi) + tra[i_slots]
    d = wi - wk
    planar = kinds == 0
    rows_r = []
    rows_j = []
    rows_f = []
    if np.any(planar):
        sel = np.flatnonzero(planar)
        m = np.einsum("nab,nb->na", rk[sel], nk[sel])
        a = np.einsum("nba,nb->na", ri[sel], m)
        b = np.einsum("nba,nb->na", rk[sel], d[sel])
        r = np.einsum("na,na->n", nk[sel], b)
        j = np.zeros((len(sel), 1, 12))
        j[:, 0, 0:3] = np.cross(nk[sel], pk[sel]) - np.cross(b, nk[sel])
        j[:, 0, 3:6] = -nk[sel]
        j[:, 0, 6:9] = np.cross(pi[sel], a)
        j[:, 0, 9:12] = a
        rows_r.append(r[:, None])
        rows_j.append(j)
        rows_f.append(sel)
    if np.any(~planar):
        sel = np.flatnonzero(~planar)
        r = d[sel]
        j = np.zeros((len(sel), 3, 12))
        for n, s in enumerate(sel):
            rks, ris = rot[k_slots[s]], rot[i_slots[s]]
            j[n, :, 0:3] = rks @ _skew(pk[s])
            j[n, :, 3:6] = -rks
            j[n, :, 6:9] = -ris @ _skew(pi[s])
            j[n, :, 9:12] = ris
        rows_r.append(r)
        rows_j.append(j)
        rows_f.append(sel)
    return rows_r, rows_j, rows_f


def _skew(v):
    return np.array(
        [[0.0, -v[2], v[1]], [v[2], 0.0, -v[0]], [-v[1], v[0], 0.0]]
    )


def match_system(rot, tra, kinds, k_slots, i_slots, pk, pi, nk, n_slots):
    """Accumulate H = J^T J, g = J^T r, and cost over a factor set.

    Pose slots are indexed 0..n_slots-1; every factor must satisfy
    k_slot < i_slot. Returns a full symmetric (6n, 6n) H.
    """
    dim = 6 * n_slots
    h = np.zeros((dim, dim))
    g = np.zeros(dim)
    cost = 0.0
    if len(kinds) == 0:
        return h, g, cost
    rows_r, rows_j, rows_f = _gather_rows(
        rot, tra, kinds, k_slots, i_slots, pk, pi, nk
    )
    for r, j, sel in zip(rows_r, rows_j, rows_f):
        gidx = np.empty((len(sel), 12), dtype=np.int64)
        gidx[:, :6] = 6 * k_slots[sel, None] + np.arange(6)
        gidx[:, 6:] = 6 * i_slots[sel, None] + np.arange(6)
        blocks = np.einsum("nda,ndb->nab", j, j)
        gvec = np.einsum("nda,nd->na", j, r)
        np.add.at(h, (gidx[:, :, None], gidx[:, None, :]), blocks)
        np.add.at(g, gidx, gvec)
        cost += float(np.sum(r * r))
    return h, g, cost


def match_cost(rot, tra, kinds, k_slots, i_slots, pk, pi, nk):
    """Sum of squared residuals over a factor set."""
    if len(kinds) == 0:
        return 0.0
    rk = rot[k_slots]
    ri = rot[i_slots]
    wk = np.einsum("nab,nb->na", rk, pk) + tra[k_slots]
    wi = np.einsum("nab,nb->na", ri, pi) + tra[i_slots]
    d = wi - wk
    planar = kinds == 0
    cost = 0.0
    if np.any(planar):
        m = np.einsum("nab,nb->na", rk[planar], nk[planar])
        r = np.einsum("na,na->n", m, d[planar])
        cost += float(np.sum(r * r))
    if np.any(~planar):
        cost += float(np.sum(d[~planar] ** 2))
    return cost


def raycast(origin, dirs, pl_c, pl_u, pl_v, pl_n, pl_half, po_c, po_r, po_z0, po_z1):
    """Nearest positive ray-surface hit distance per direction (inf = miss).

    Surfaces are finite rectangles (center, two in-plane unit axes with
    half-extents, normal) and vertical cylinder side walls (xy center,
    radius, z span).
    """
    n = dirs.shape[0]
    best = np.full(n, np.inf)
    eps = 1e-12
    for q in range(pl_c.shape[0]):
        denom = dirs @ pl_n[q]
        with np.errstate(divide="ignore", invalid="ignore"):
            t = ((pl_c[q] - origin) @ pl_n[q]) / denom
        t = np.where(np.abs(denom) > eps, t, np.inf)
        with np.errstate(invalid="ignore"):
            hit = origin + t[:, None] * dirs - pl_c[q]
            du = hit @ pl_u[q]
            dv = hit @ pl_v[q]
        ok = (
            (t > eps)
            & (np.abs(du) <= pl_half[q, 0])
            & (np.abs(dv) <= pl_half[q, 1])
        )
        best = np.where(ok & (t < best), t, best)
    for s in range(po_c.shape[0]):
        ox = origin[0] - po_c[s, 0]
        oy = origin[1] - po_c[s, 1]
        dx = dirs[:, 0]
        dy = dirs[:, 1]
        a = dx * dx + dy * dy
        b = 2.0 * (ox * dx + oy * dy)
        c = ox * ox + oy * oy - po_r[s] * po_r[s]
        disc = b * b - 4.0 * a * c
        with np.errstate(divide="ignore", invalid="ignore"):
            sq = np.sqrt(np.maximum(disc, 0.0))
            t1 = (-b - sq) / (2.0 * a)
            t2 = (-b + sq) / (2.0 * a)
        for t in (t1, t2):
            z = origin[2] + t * dirs[:, 2]
            ok = (disc >= 0.0) & (a > eps) & (t > eps) & (z >= po_z0[s]) & (z <= po_z1[s])
            best = np.where(ok & (t < best), t, best)
    return best
