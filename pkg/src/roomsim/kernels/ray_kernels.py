"""Stochastic ray transport kernels.

Scene geometry arrives as plain arrays: room extents, interior boxes as
[lo_xyz, hi_xyz] rows, per-surface absorption/scattering tables indexed
0..5 for the walls (-x,+x,-y,+y,-z,+z) and 6+i for interior box i.

Receiver detection is diffuse-rain only: at every surface hit the
scattered share of the reflected energy deposits into each visible
receiver, weighted by the Lambert cosine and the receiver solid angle,
and is subtracted from the ray so the energy books close exactly.  The
specular remainder keeps bouncing; the direct path is handled
analytically by the caller.

Random draws are addressed positionally (see rng): slots 0,1 steer the
emission direction, slots (2+3b, 3+3b, 4+3b) serve bounce b.  Specular
bounces consume only the first slot of their triple but the numbering is
fixed, so the scalar loop (numba) and the vectorized wavefront (numpy)
see identical sequences.
"""

from __future__ import annotations

import math

import numpy as np

from . import backend
from .backend import jit, jit_parallel, prange
from .rng import make_streams_vec, unit, unit_vec

N_CHUNKS = 64  # fixed chunk count: merge order never depends on threads
_BLOCK = 16384  # wavefront block size for the numpy path
_EPS_T = 1e-9
_TWO_PI = 2.0 * math.pi


def emission_basis(orientation: np.ndarray) -> np.ndarray:
    """Right-handed frame [t1, t2, axis] around the source axis."""
    o = orientation / np.linalg.norm(orientation)
    helper = np.array([1.0, 0.0, 0.0])
    if abs(o[0]) > 0.9:
        helper = np.array([0.0, 1.0, 0.0])
    t1 = np.cross(helper, o)
    t1 /= np.linalg.norm(t1)
    t2 = np.cross(o, t1)
    return np.stack([t1, t2, o])


def _trace_chunk_loop(
    r0,
    r1,
    seed,
    src,
    basis,
    pattern,
    w0,
    room,
    boxes,
    alpha_surf,
    scat_surf,
    smean_surf,
    rcv,
    radius,
    c,
    bin_width,
    n_bins,
    max_time,
    floor_total,
    max_bounces,
    ech,
    absorbed,
    deposited,
    truncated,
):
    n_bands = alpha_surf.shape[1]
    n_rcv = rcv.shape[0]
    n_box = boxes.shape[0]
    e = np.empty(n_bands)
    pos = np.empty(3)
    d = np.empty(3)
    for ray in range(r0, r1):
        stream = np.uint64(seed) ^ np.uint64(ray)
        u0 = unit(stream, np.uint64(0))
        u1 = unit(stream, np.uint64(1))
        if pattern == 1:
            mu = 2.0 * u0 ** (1.0 / 3.0) - 1.0
        else:
            mu = 2.0 * u0 - 1.0
        phi = _TWO_PI * u1
        st = math.sqrt(max(0.0, 1.0 - mu * mu))
        ca = st * math.cos(phi)
        sa = st * math.sin(phi)
        for a in range(3):
            d[a] = ca * basis[0, a] + sa * basis[1, a] + mu * basis[2, a]
            pos[a] = src[a]
        for b in range(n_bands):
            e[b] = w0
        dist_total = 0.0
        for bounce in range(max_bounces):
            # nearest wall
            best = 1e30
            surf = -1
            axis = -1
            nsign = 0.0
            for a in range(3):
                if d[a] > 1e-15:
                    t = (room[a] - pos[a]) / d[a]
                    if _EPS_T < t < best:
                        best = t
                        surf = 2 * a + 1
                        axis = a
                        nsign = -1.0
                elif d[a] < -1e-15:
                    t = -pos[a] / d[a]
                    if _EPS_T < t < best:
                        best = t
                        surf = 2 * a
                        axis = a
                        nsign = 1.0
            # interior boxes
            for bi in range(n_box):
                tmin = -1e30
                tmax = 1e30
                haxis = -1
                ok = True
                for a in range(3):
                    lo = boxes[bi, a]
                    hi = boxes[bi, 3 + a]
                    if d[a] > 1e-15 or d[a] < -1e-15:
                        t1 = (lo - pos[a]) / d[a]
                        t2 = (hi - pos[a]) / d[a]
                        if t1 > t2:
                            tmp = t1
                            t1 = t2
                            t2 = tmp
                        if t1 > tmin:
                            tmin = t1
                            haxis = a
                        if t2 < tmax:
                            tmax = t2
                        if tmin > tmax:
                            ok = False
                            break
                    elif pos[a] < lo or pos[a] > hi:
                        ok = False
                        break
                if ok and _EPS_T < tmin < best and tmin < tmax:
                    best = tmin
                    surf = 6 + bi
                    axis = haxis
                    nsign = -1.0 if d[haxis] > 0.0 else 1.0
            if surf < 0 or (dist_total + best) / c > max_time:
                break
            for a in range(3):
                pos[a] = pos[a] + best * d[a]
            dist_total += best
            # absorb
            for b in range(n_bands):
                absorbed[b] += e[b] * alpha_surf[surf, b]
                e[b] *= 1.0 - alpha_surf[surf, b]
            # diffuse rain toward every visible receiver
            for r in range(n_rcv):
                rx = rcv[r, 0] - pos[0]
                ry = rcv[r, 1] - pos[1]
                rz = rcv[r, 2] - pos[2]
                dr = math.sqrt(rx * rx + ry * ry + rz * rz)
                if dr < 1e-12:
                    continue
                if axis == 0:
                    cosx = nsign * rx / dr
                elif axis == 1:
                    cosx = nsign * ry / dr
                else:
                    cosx = nsign * rz / dr
                if cosx <= 0.0:
                    continue
                tb = (dist_total + dr) / c
                kbin = int(tb / bin_width)
                if kbin >= n_bins:
                    continue
                # occlusion against boxes
                blocked = False
                for bi in range(n_box):
                    tmin = 0.0
                    tmax = dr
                    ok = True
                    for a in range(3):
                        da = (rcv[r, a] - pos[a]) / dr
                        lo = boxes[bi, a]
                        hi = boxes[bi, 3 + a]
                        if da > 1e-15 or da < -1e-15:
                            t1 = (lo - pos[a]) / da
                            t2 = (hi - pos[a]) / da
                            if t1 > t2:
                                tmp = t1
                                t1 = t2
                                t2 = tmp
                            if t1 > tmin:
                                tmin = t1
                            if t2 < tmax:
                                tmax = t2
                            if tmin > tmax:
                                ok = False
                                break
                        elif pos[a] < lo or pos[a] > hi:
                            ok = False
                            break
                    if ok and tmin < tmax - _EPS_T and tmin < dr - _EPS_T and tmax > _EPS_T:
                        blocked = True
                        break
                if blocked:
                    continue
                ratio = radius / dr
                if ratio > 1.0:
                    ratio = 1.0
                omega = _TWO_PI * (1.0 - math.sqrt(max(0.0, 1.0 - ratio * ratio)))
                w_geom = cosx * omega / math.pi
                if w_geom > 1.0:
                    w_geom = 1.0
                for b in range(n_bands):
                    dep = e[b] * scat_surf[surf, b] * w_geom
                    ech[r, b, kbin] += dep
                    e[b] -= dep
                    deposited[b] += dep
            # roulette: Lambertian with probability mean scattering
            u_r = unit(stream, np.uint64(2 + 3 * bounce))
            if u_r < smean_surf[surf]:
                u_a = unit(stream, np.uint64(3 + 3 * bounce))
                u_c = unit(stream, np.uint64(4 + 3 * bounce))
                cth = math.sqrt(u_c)
                sth = math.sqrt(max(0.0, 1.0 - u_c))
                phi2 = _TWO_PI * u_a
                a1 = (axis + 1) % 3
                a2 = (axis + 2) % 3
                d[a1] = sth * math.cos(phi2)
                d[a2] = sth * math.sin(phi2)
                d[axis] = nsign * cth
            else:
                d[axis] = -d[axis]
            tot = 0.0
            for b in range(n_bands):
                tot += e[b]
            if tot < floor_total:
                break
        # every exit path strands the ray's remaining energy in flight
        tot = 0.0
        for b in range(n_bands):
            tot += e[b]
        truncated[0] += tot
    return ech


_trace_chunk_numba = jit(_trace_chunk_loop)


def _make_parallel_driver():
    chunk = _trace_chunk_numba

    def driver(
        n_rays,
        per_chunk,
        seed,
        src,
        basis,
        pattern,
        w0,
        room,
        boxes,
        alpha_surf,
        scat_surf,
        smean_surf,
        rcv,
        radius,
        c,
        bin_width,
        n_bins,
        max_time,
        floor_total,
        max_bounces,
        ech_all,
        absorbed_all,
        deposited_all,
        truncated_all,
    ):
        n_chunks = ech_all.shape[0]
        for ci in prange(n_chunks):
            r0 = ci * per_chunk
            r1 = min(n_rays, r0 + per_chunk)
            if r0 < r1:
                chunk(
                    r0,
                    r1,
                    seed,
                    src,
                    basis,
                    pattern,
                    w0,
                    room,
                    boxes,
                    alpha_surf,
                    scat_surf,
                    smean_surf,
                    rcv,
                    radius,
                    c,
                    bin_width,
                    n_bins,
                    max_time,
                    floor_total,
                    max_bounces,
                    ech_all[ci],
                    absorbed_all[ci],
                    deposited_all[ci],
                    truncated_all[ci],
                )

    return jit_parallel(driver)


_trace_parallel_numba = _make_parallel_driver() if backend.HAVE_NUMBA else None


def _segment_blocked(p0: np.ndarray, p1: np.ndarray, boxes: np.ndarray) -> np.ndarray:
    """Vectorized box-occlusion test for segments p0[n,3] -> p1[n,3]."""
    n = p0.shape[0]
    blocked = np.zeros(n, dtype=bool)
    seg = p1 - p0
    dist = np.linalg.norm(seg, axis=1)
    safe = np.where(dist > 1e-12, dist, 1.0)
    dirs = seg / safe[:, None]
    for bi in range(boxes.shape[0]):
        tmin = np.zeros(n)
        tmax = dist.copy()
        ok = np.ones(n, dtype=bool)
        for a in range(3):
            da = dirs[:, a]
            lo = boxes[bi, a]
            hi = boxes[bi, 3 + a]
            para = np.abs(da) <= 1e-15
            with np.errstate(divide="ignore", invalid="ignore"):
                t1 = (lo - p0[:, a]) / da
                t2 = (hi - p0[:, a]) / da
            swap = t1 > t2
            t1s = np.where(swap, t2, t1)
            t2s = np.where(swap, t1, t2)
            inside = (p0[:, a] >= lo) & (p0[:, a] <= hi)
            ok &= ~para | inside
            upd = ~para
            tmin = np.where(upd, np.maximum(tmin, t1s), tmin)
            tmax = np.where(upd, np.minimum(tmax, t2s), tmax)
        hit = ok & (tmin < tmax - _EPS_T) & (tmin < dist - _EPS_T) & (tmax > _EPS_T)
        blocked |= hit
    return blocked


def _trace_block_numpy(
    ray_lo,
    ray_hi,
    seed,
    src,
    basis,
    pattern,
    w0,
    room,
    boxes,
    alpha_surf,
    scat_surf,
    smean_surf,
    rcv,
    radius,
    c,
    bin_width,
    n_bins,
    max_time,
    floor_total,
    max_bounces,
    ech,
    absorbed,
    deposited,
    truncated,
):
    n_bands = alpha_surf.shape[1]
    n_rcv = rcv.shape[0]
    streams = make_streams_vec(seed, np.arange(ray_lo, ray_hi, dtype=np.uint64))
    n = streams.size
    u0 = unit_vec(streams, 0)
    u1 = unit_vec(streams, 1)
    if pattern == 1:
        mu = 2.0 * u0 ** (1.0 / 3.0) - 1.0
    else:
        mu = 2.0 * u0 - 1.0
    phi = _TWO_PI * u1
    st = np.sqrt(np.maximum(0.0, 1.0 - mu * mu))
    local = np.stack([st * np.cos(phi), st * np.sin(phi), mu], axis=1)
    d = local @ basis
    pos = np.broadcast_to(src, (n, 3)).copy()
    e = np.full((n, n_bands), w0)
    dist_total = np.zeros(n)

    for bounce in range(max_bounces):
        if streams.size == 0:
            break
        n_alive = streams.size
        # nearest wall per axis
        best = np.full(n_alive, 1e30)
        surf = np.full(n_alive, -1, dtype=np.int64)
        axis = np.zeros(n_alive, dtype=np.int64)
        nsign = np.zeros(n_alive)
        for a in range(3):
            da = d[:, a]
            with np.errstate(divide="ignore"):
                t_hi = (room[a] - pos[:, a]) / da
                t_lo = -pos[:, a] / da
            fwd = da > 1e-15
            bwd = da < -1e-15
            t = np.where(fwd, t_hi, np.where(bwd, t_lo, 1e30))
            upd = (t > _EPS_T) & (t < best)
            best = np.where(upd, t, best)
            surf = np.where(upd, np.where(fwd, 2 * a + 1, 2 * a), surf)
            axis = np.where(upd, a, axis)
            nsign = np.where(upd, np.where(fwd, -1.0, 1.0), nsign)
        for bi in range(boxes.shape[0]):
            tmin = np.full(n_alive, -1e30)
            tmax = np.full(n_alive, 1e30)
            haxis = np.zeros(n_alive, dtype=np.int64)
            ok = np.ones(n_alive, dtype=bool)
            for a in range(3):
                da = d[:, a]
                para = np.abs(da) <= 1e-15
                with np.errstate(divide="ignore", invalid="ignore"):
                    t1 = (boxes[bi, a] - pos[:, a]) / da
                    t2 = (boxes[bi, 3 + a] - pos[:, a]) / da
                swap = t1 > t2
                t1s = np.where(swap, t2, t1)
                t2s = np.where(swap, t1, t2)
                inside = (pos[:, a] >= boxes[bi, a]) & (pos[:, a] <= boxes[bi, 3 + a])
                ok &= ~para | inside
                take = ~para & (t1s > tmin)
                tmin = np.where(take, t1s, tmin)
                haxis = np.where(take, a, haxis)
                tmax = np.where(~para, np.minimum(tmax, t2s), tmax)
            hit = ok & (tmin < tmax) & (tmin > _EPS_T) & (tmin < best)
            best = np.where(hit, tmin, best)
            surf = np.where(hit, 6 + bi, surf)
            axis = np.where(hit, haxis, axis)
            dsel = np.take_along_axis(d, haxis[:, None], axis=1)[:, 0]
            nsign = np.where(hit, np.where(dsel > 0.0, -1.0, 1.0), nsign)

        over = (dist_total + best) / c > max_time
        dead = (surf < 0) | over
        if dead.any():
            truncated[0] += e[dead].sum()
        live = ~dead
        streams = streams[live]
        pos = pos[live] + best[live, None] * d[live]
        d = d[live]
        e = e[live]
        dist_total = dist_total[live] + best[live]
        surf = surf[live]
        axis = axis[live]
        nsign = nsign[live]
        if streams.size == 0:
            break

        alpha = alpha_surf[surf]
        absorbed += (e * alpha).sum(axis=0)
        e = e * (1.0 - alpha)
        scat = scat_surf[surf]

        normal = np.zeros_like(pos)
        np.put_along_axis(normal, axis[:, None], nsign[:, None], axis=1)
        for r in range(n_rcv):
            delta = rcv[r] - pos
            dr = np.linalg.norm(delta, axis=1)
            dr = np.maximum(dr, 1e-12)
            cosx = (normal * delta).sum(axis=1) / dr
            tb = (dist_total + dr) / c
            kbin = (tb / bin_width).astype(np.int64)
            cand = (cosx > 0.0) & (kbin < n_bins)
            if not cand.any():
                continue
            if boxes.shape[0]:
                cand &= ~_segment_blocked(pos, np.broadcast_to(rcv[r], pos.shape), boxes)
                if not cand.any():
                    continue
            ratio = np.minimum(radius / dr, 1.0)
            omega = _TWO_PI * (1.0 - np.sqrt(np.maximum(0.0, 1.0 - ratio**2)))
            w_geom = np.minimum(cosx * omega / math.pi, 1.0)
            w_geom = np.where(cand, w_geom, 0.0)
            dep = e * scat * w_geom[:, None]
            idx = np.where(cand)[0]
            np.add.at(ech[r], (slice(None), kbin[idx]), dep[idx].T)
            deposited += dep.sum(axis=0)
            e = e - dep

        u_r = unit_vec(streams, 2 + 3 * bounce)
        diffuse = u_r < smean_surf[surf]
        u_a = unit_vec(streams, 3 + 3 * bounce)
        u_c = unit_vec(streams, 4 + 3 * bounce)
        cth = np.sqrt(u_c)
        sth = np.sqrt(np.maximum(0.0, 1.0 - u_c))
        phi2 = _TWO_PI * u_a
        a1 = (axis + 1) % 3
        a2 = (axis + 2) % 3
        d_diff = np.zeros_like(d)
        rows = np.arange(streams.size)
        d_diff[rows, a1] = sth * np.cos(phi2)
        d_diff[rows, a2] = sth * np.sin(phi2)
        d_diff[rows, axis] = nsign * cth
        d_spec = d.copy()
        d_spec[rows, axis] = -d_spec[rows, axis]
        d = np.where(diffuse[:, None], d_diff, d_spec)

        tot = e.sum(axis=1)
        floored = tot < floor_total
        if floored.any():
            truncated[0] += tot[floored].sum()
        live = ~floored
        streams = streams[live]
        pos = pos[live]
        d = d[live]
        e = e[live]
        dist_total = dist_total[live]
    else:
        if streams.size:
            truncated[0] += e.sum()
    return ech


def trace_rays(
    n_rays: int,
    seed: int,
    src: np.ndarray,
    basis: np.ndarray,
    pattern: int,
    w0: float,
    room: np.ndarray,
    boxes: np.ndarray,
    alpha_surf: np.ndarray,
    scat_surf: np.ndarray,
    rcv: np.ndarray,
    radius: float,
    c: float,
    bin_width: float,
    n_bins: int,
    max_time: float,
    floor_total: float,
    max_bounces: int,
):
    """Dispatch the transport loop; returns (ech, absorbed, deposited, truncated).

    ech has shape [n_rcv, n_bands, n_bins]; the tallies are per band
    except truncated, which is a 1-element total (band identity of
    truncated energy is not tracked: rays die whole).
    """
    n_bands = alpha_surf.shape[1]
    n_rcv = rcv.shape[0]
    smean_surf = scat_surf.mean(axis=1)
    args = (
        seed,
        src,
        basis,
        pattern,
        w0,
        room,
        boxes,
        alpha_surf,
        scat_surf,
        smean_surf,
        rcv,
        radius,
        c,
        bin_width,
        n_bins,
        max_time,
        floor_total,
        max_bounces,
    )
    if backend.USE_NUMBA:
        per_chunk = -(-n_rays // N_CHUNKS)
        ech_all = np.zeros((N_CHUNKS, n_rcv, n_bands, n_bins))
        absorbed_all = np.zeros((N_CHUNKS, n_bands))
        deposited_all = np.zeros((N_CHUNKS, n_bands))
        truncated_all = np.zeros((N_CHUNKS, 1))
        _trace_parallel_numba(
            n_rays, per_chunk, *args, ech_all, absorbed_all, deposited_all, truncated_all
        )
        return (
            ech_all.sum(axis=0),
            absorbed_all.sum(axis=0),
            deposited_all.sum(axis=0),
            truncated_all.sum(axis=0),
        )
    ech = np.zeros((n_rcv, n_bands, n_bins))
    absorbed = np.zeros(n_bands)
    deposited = np.zeros(n_bands)
    truncated = np.zeros(1)
    for lo in range(0, n_rays, _BLOCK):
        hi = min(n_rays, lo + _BLOCK)
        _trace_block_numpy(lo, hi, *args, ech, absorbed, deposited, truncated)
    return ech, absorbed, deposited, truncated
