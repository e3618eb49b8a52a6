"""Numba kernels for the tile renderer.

Layout shared by forward and backward:
  - per-primitive arrays: ohat (camera center in the local frame), M
    (local-from-camera rotation for ray directions), wv = (w1, w2, 1/s3),
    sv = activated scales, lam = principal coefficients, alpha, colors,
    Nmat (camera-from-local rotation for normals), planar flags.
  - bins: tile_prims holds, per 16x16 tile, the primitive ids sorted by
    tile depth (ties by id); tile_offsets delimits tiles.  Each (tile,
    position) pair owns one row of the pair-gradient buffer, which makes
    the parallel backward race-free and the final merge deterministic.

Fragments stream per pixel in tile order through a fixed 8-slot buffer
that always composites the minimum-depth entry (per-pixel resorting);
the backward replays the same stream front-to-back using the rewritten
gradient  dX/dabar_i = (X_i - (X_hat - prefix_i)/T_{i+1}) * T_i.
"""

import numpy as np
from numba import njit, prange

from .geodesic import arc_length_grad, sigma_dir_grad
from .intersect import fragment_geometry, ray_coeffs, BR_QUAD, BR_LINEAR, BR_PLANAR
from .surface import curvature_local

BUFFER_SIZE = 8
NG = 33  # kernel-level gradient slots per primitive (see _grad offsets)

# gradient slot offsets
_GO_OHAT = 0
_GO_M = 3
_GO_W = 12     # w1, w2, iw3
_GO_S = 15     # s1, s2, s3
_GO_ALPHA = 18
_GO_COLOR = 19
_GO_NMAT = 22
_GO_LAM = 31


@njit(cache=True)
def _shade(p, ohat, M, wv, sv, lam, alpha, colors, Nmat, planar,
           dx, dy, dz, euclid, t_clip, alpha_floor, alpha_clamp):
    """Fragment of primitive p against the camera-frame direction d.

    Returns (valid, t, x, y, rho, cth, sth, a, l, sig, G, branch, abar,
    ncx, ncy, ncz, K) with the normal in the camera frame, camera-facing.
    """
    dhx = M[p, 0, 0] * dx + M[p, 0, 1] * dy + M[p, 0, 2] * dz
    dhy = M[p, 1, 0] * dx + M[p, 1, 1] * dy + M[p, 1, 2] * dz
    dhz = M[p, 2, 0] * dx + M[p, 2, 1] * dy + M[p, 2, 2] * dz
    valid, t, x, y, rho, cth, sth, a, l, sig, G, branch = fragment_geometry(
        wv[p, 0], wv[p, 1], wv[p, 2], sv[p, 0], sv[p, 1], sv[p, 2],
        ohat[p, 0], ohat[p, 1], ohat[p, 2], dhx, dhy, dhz,
        planar[p] == 1, euclid, t_clip)
    if not valid:
        return (False, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0,
                branch, 0.0, 0.0, 0.0, 0.0, 0.0)
    abar = alpha[p] * G
    if abar < alpha_floor:
        return (False, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0,
                branch, 0.0, 0.0, 0.0, 0.0, 0.0)
    if abar > alpha_clamp:
        abar = alpha_clamp
    if branch == BR_PLANAR:
        nlx, nly, nlz = 0.0, 0.0, -1.0
        K = 0.0
    else:
        nx = 2.0 * wv[p, 0] * x
        ny = 2.0 * wv[p, 1] * y
        nz = -wv[p, 2]
        nrm = np.sqrt(nx * nx + ny * ny + nz * nz)
        nlx, nly, nlz = nx / nrm, ny / nrm, nz / nrm
        K = curvature_local(lam[p, 0], lam[p, 1], x, y, False)
    ncx = Nmat[p, 0, 0] * nlx + Nmat[p, 0, 1] * nly + Nmat[p, 0, 2] * nlz
    ncy = Nmat[p, 1, 0] * nlx + Nmat[p, 1, 1] * nly + Nmat[p, 1, 2] * nlz
    ncz = Nmat[p, 2, 0] * nlx + Nmat[p, 2, 1] * nly + Nmat[p, 2, 2] * nlz
    if ncx * dx + ncy * dy + ncz * dz > 0.0:
        ncx, ncy, ncz = -ncx, -ncy, -ncz
    return (True, t, x, y, rho, cth, sth, a, l, sig, G, branch, abar,
            ncx, ncy, ncz, K)


@njit(cache=True, parallel=True)
def forward_kernel(H, W, dirs, tile_offsets, tile_prims, tiles_x, tiles_y,
                   pix_bbox, ohat, M, wv, sv, lam, alpha, colors, Nmat,
                   planar, resort_on, euclid, t_clip, alpha_floor,
                   alpha_clamp, t_term,
                   out_color, out_alpha, out_depth, out_depthsq, out_median,
                   out_normal, out_curv, out_dist, out_T, out_nfrag,
                   out_violations):
    n_tiles = tiles_x * tiles_y
    for tile in prange(n_tiles):
        ty = tile // tiles_x
        tx = tile % tiles_x
        v0, v1 = ty * 16, min(H, ty * 16 + 16)
        u0, u1 = tx * 16, min(W, tx * 16 + 16)
        start, stop = tile_offsets[tile], tile_offsets[tile + 1]
        violations = 0
        buf_t = np.empty(BUFFER_SIZE)
        buf_pay = np.empty((BUFFER_SIZE, 8))  # abar, nc(3), K, color(3)
        for v in range(v0, v1):
            for u in range(u0, u1):
                dx = dirs[v, u, 0]
                dy = dirs[v, u, 1]
                dz = dirs[v, u, 2]
                T = 1.0
                n_buf = 0
                acc_c0 = acc_c1 = acc_c2 = 0.0
                acc_a = acc_d = acc_d2 = 0.0
                acc_n0 = acc_n1 = acc_n2 = 0.0
                acc_k = acc_dist = 0.0
                s0 = s1sum = s2sum = 0.0
                median = 0.0
                last_t = -1.0e300
                nfrag = 0
                alive = True
                for idx in range(start, stop):
                    if not alive:
                        break
                    p = tile_prims[idx]
                    if (u < pix_bbox[p, 0] or u > pix_bbox[p, 1]
                            or v < pix_bbox[p, 2] or v > pix_bbox[p, 3]):
                        continue
                    res = _shade(p, ohat, M, wv, sv, lam, alpha, colors,
                                 Nmat, planar, dx, dy, dz, euclid, t_clip,
                                 alpha_floor, alpha_clamp)
                    if not res[0]:
                        continue
                    t = res[1]
                    abar = res[12]
                    if not resort_on:
                        # composite immediately in stream order
                        if t < last_t - 1e-12:
                            violations += 1
                        if t > last_t:
                            last_t = t
                        w_i = abar * T
                        acc_c0 += w_i * colors[p, 0]
                        acc_c1 += w_i * colors[p, 1]
                        acc_c2 += w_i * colors[p, 2]
                        acc_a += w_i
                        acc_d += w_i * t
                        acc_d2 += w_i * t * t
                        acc_n0 += w_i * res[13]
                        acc_n1 += w_i * res[14]
                        acc_n2 += w_i * res[15]
                        acc_k += w_i * res[16]
                        acc_dist += w_i * (t * t * s0 - 2.0 * t * s1sum + s2sum)
                        s0 += w_i
                        s1sum += w_i * t
                        s2sum += w_i * t * t
                        if T > 0.5:
                            median = t
                        T *= 1.0 - abar
                        nfrag += 1
                        if T < t_term:
                            alive = False
                        continue
                    # buffered path: if full, emit the minimum first
                    if n_buf == BUFFER_SIZE:
                        jmin = 0
                        for j in range(1, n_buf):
                            if buf_t[j] < buf_t[jmin]:
                                jmin = j
                        if t < buf_t[jmin]:
                            et = t
                            e_abar = abar
                            e_n0, e_n1, e_n2 = res[13], res[14], res[15]
                            e_k = res[16]
                            e_c0, e_c1, e_c2 = colors[p, 0], colors[p, 1], colors[p, 2]
                        else:
                            et = buf_t[jmin]
                            e_abar = buf_pay[jmin, 0]
                            e_n0 = buf_pay[jmin, 1]
                            e_n1 = buf_pay[jmin, 2]
                            e_n2 = buf_pay[jmin, 3]
                            e_k = buf_pay[jmin, 4]
                            e_c0 = buf_pay[jmin, 5]
                            e_c1 = buf_pay[jmin, 6]
                            e_c2 = buf_pay[jmin, 7]
                            buf_t[jmin] = t
                            buf_pay[jmin, 0] = abar
                            buf_pay[jmin, 1] = res[13]
                            buf_pay[jmin, 2] = res[14]
                            buf_pay[jmin, 3] = res[15]
                            buf_pay[jmin, 4] = res[16]
                            buf_pay[jmin, 5] = colors[p, 0]
                            buf_pay[jmin, 6] = colors[p, 1]
                            buf_pay[jmin, 7] = colors[p, 2]
                        if et < last_t - 1e-12:
                            violations += 1
                        if et > last_t:
                            last_t = et
                        w_i = e_abar * T
                        acc_c0 += w_i * e_c0
                        acc_c1 += w_i * e_c1
                        acc_c2 += w_i * e_c2
                        acc_a += w_i
                        acc_d += w_i * et
                        acc_d2 += w_i * et * et
                        acc_n0 += w_i * e_n0
                        acc_n1 += w_i * e_n1
                        acc_n2 += w_i * e_n2
                        acc_k += w_i * e_k
                        acc_dist += w_i * (et * et * s0 - 2.0 * et * s1sum + s2sum)
                        s0 += w_i
                        s1sum += w_i * et
                        s2sum += w_i * et * et
                        if T > 0.5:
                            median = et
                        T *= 1.0 - e_abar
                        nfrag += 1
                        if T < t_term:
                            alive = False
                            continue
                    else:
                        buf_t[n_buf] = t
                        buf_pay[n_buf, 0] = abar
                        buf_pay[n_buf, 1] = res[13]
                        buf_pay[n_buf, 2] = res[14]
                        buf_pay[n_buf, 3] = res[15]
                        buf_pay[n_buf, 4] = res[16]
                        buf_pay[n_buf, 5] = colors[p, 0]
                        buf_pay[n_buf, 6] = colors[p, 1]
                        buf_pay[n_buf, 7] = colors[p, 2]
                        n_buf += 1
                # drain remaining buffered fragments in depth order
                while alive and n_buf > 0:
                    jmin = 0
                    for j in range(1, n_buf):
                        if buf_t[j] < buf_t[jmin]:
                            jmin = j
                    et = buf_t[jmin]
                    e_abar = buf_pay[jmin, 0]
                    e_n0 = buf_pay[jmin, 1]
                    e_n1 = buf_pay[jmin, 2]
                    e_n2 = buf_pay[jmin, 3]
                    e_k = buf_pay[jmin, 4]
                    e_c0 = buf_pay[jmin, 5]
                    e_c1 = buf_pay[jmin, 6]
                    e_c2 = buf_pay[jmin, 7]
                    n_buf -= 1
                    buf_t[jmin] = buf_t[n_buf]
                    for j in range(8):
                        buf_pay[jmin, j] = buf_pay[n_buf, j]
                    if et < last_t - 1e-12:
                        violations += 1
                    if et > last_t:
                        last_t = et
                    w_i = e_abar * T
                    acc_c0 += w_i * e_c0
                    acc_c1 += w_i * e_c1
                    acc_c2 += w_i * e_c2
                    acc_a += w_i
                    acc_d += w_i * et
                    acc_d2 += w_i * et * et
                    acc_n0 += w_i * e_n0
                    acc_n1 += w_i * e_n1
                    acc_n2 += w_i * e_n2
                    acc_k += w_i * e_k
                    acc_dist += w_i * (et * et * s0 - 2.0 * et * s1sum + s2sum)
                    s0 += w_i
                    s1sum += w_i * et
                    s2sum += w_i * et * et
                    if T > 0.5:
                        median = et
                    T *= 1.0 - e_abar
                    nfrag += 1
                    if T < t_term:
                        alive = False

                out_color[v, u, 0] = acc_c0
                out_color[v, u, 1] = acc_c1
                out_color[v, u, 2] = acc_c2
                out_alpha[v, u] = acc_a
                out_depth[v, u] = acc_d
                out_depthsq[v, u] = acc_d2
                out_median[v, u] = median
                out_normal[v, u, 0] = acc_n0
                out_normal[v, u, 1] = acc_n1
                out_normal[v, u, 2] = acc_n2
                out_curv[v, u] = acc_k
                out_dist[v, u] = acc_dist
                out_T[v, u] = T
                out_nfrag[v, u] = nfrag
        out_violations[tile] = violations


@njit(cache=True)
def _grad_fragment(p, slot, pay, T, pref_w, vtot, F0, F1, F2,
                   uc0, uc1, uc2, ua, ut, un0, un1, un2, uk, ud,
                   ohat, M, wv, sv, lam, alpha, colors, Nmat,
                   dx, dy, dz, alpha_clamp, euclid, pair_grad):
    """Gradient of one composited fragment; returns updated (T, pref_w).

    pay = (t, x, y, rho, cth, sth, a, l, sig, G, abar, branch).
    """
    t = pay[0]
    x = pay[1]
    y = pay[2]
    rho = pay[3]
    cth = pay[4]
    sth = pay[5]
    a = pay[6]
    l = pay[7]
    sig = pay[8]
    G = pay[9]
    abar = pay[10]
    branch = int(pay[11])
    w1 = wv[p, 0]
    w2 = wv[p, 1]
    iw3 = wv[p, 2]

    # recompute the camera-facing normal and curvature
    if branch == BR_PLANAR:
        nlx, nly, nlz = 0.0, 0.0, -1.0
        K = 0.0
        nrm = 1.0
    else:
        nxu = 2.0 * w1 * x
        nyu = 2.0 * w2 * y
        nzu = -iw3
        nrm = np.sqrt(nxu * nxu + nyu * nyu + nzu * nzu)
        nlx, nly, nlz = nxu / nrm, nyu / nrm, nzu / nrm
        K = curvature_local(lam[p, 0], lam[p, 1], x, y, False)
    ncx = Nmat[p, 0, 0] * nlx + Nmat[p, 0, 1] * nly + Nmat[p, 0, 2] * nlz
    ncy = Nmat[p, 1, 0] * nlx + Nmat[p, 1, 1] * nly + Nmat[p, 1, 2] * nlz
    ncz = Nmat[p, 2, 0] * nlx + Nmat[p, 2, 1] * nly + Nmat[p, 2, 2] * nlz
    flip = 1.0
    if ncx * dx + ncy * dy + ncz * dz > 0.0:
        flip = -1.0
        ncx, ncy, ncz = -ncx, -ncy, -ncz

    w_i = abar * T
    # dL/d omega_i for every blended map plus the distortion pair sum
    V = (uc0 * colors[p, 0] + uc1 * colors[p, 1] + uc2 * colors[p, 2]
         + ua + ut * t + un0 * ncx + un1 * ncy + un2 * ncz + uk * K
         + ud * (t * t * F0 - 2.0 * t * F1 + F2))
    pref_w += w_i * V
    g_abar = T * V - (vtot - pref_w) / (1.0 - abar)

    base = slot * NG
    # attribute gradients, weighted by omega_i
    pair_grad[base + _GO_COLOR + 0] += w_i * uc0
    pair_grad[base + _GO_COLOR + 1] += w_i * uc1
    pair_grad[base + _GO_COLOR + 2] += w_i * uc2
    g_t = ut * w_i + ud * 2.0 * w_i * (t * F0 - F1)
    gn_cx = w_i * un0
    gn_cy = w_i * un1
    gn_cz = w_i * un2
    g_K = w_i * uk

    # abar = alpha * G (no gradient through an active clamp)
    if abar < alpha_clamp:
        pair_grad[base + _GO_ALPHA] += g_abar * G
        g_G = g_abar * alpha[p]
    else:
        g_G = 0.0

    # G = exp(-l^2 / (2 sig^2))
    g_l = g_G * G * (-l / (sig * sig))
    g_sig = g_G * G * (l * l / (sig * sig * sig))

    # sigma(s1, s2, cth, sth)
    sg = sigma_dir_grad(sv[p, 0], sv[p, 1], cth, sth)
    pair_grad[base + _GO_S + 0] += g_sig * sg[1]
    pair_grad[base + _GO_S + 1] += g_sig * sg[2]
    g_cth = g_sig * sg[3]
    g_sth = g_sig * sg[4]

    g_x = 0.0
    g_y = 0.0
    g_rho = 0.0
    g_a = 0.0

    if euclid or branch == BR_PLANAR:
        g_rho += g_l
    else:
        lg = arc_length_grad(a, rho)
        g_a += g_l * lg[1]
        g_rho += g_l * lg[2]

    if branch != BR_PLANAR:
        # a = s3 (w1 cth^2 + w2 sth^2)
        s3 = sv[p, 2]
        pair_grad[base + _GO_S + 2] += g_a * (w1 * cth * cth + w2 * sth * sth)
        g_w1 = g_a * s3 * cth * cth
        g_w2 = g_a * s3 * sth * sth
        g_iw3 = 0.0
        g_cth += g_a * 2.0 * s3 * w1 * cth
        g_sth += g_a * 2.0 * s3 * w2 * sth

        # curvature K(lam1, lam2, x, y)
        lam1 = lam[p, 0]
        lam2 = lam[p, 1]
        den = 1.0 + 4.0 * lam1 * lam1 * x * x + 4.0 * lam2 * lam2 * y * y
        den3 = den * den * den
        pair_grad[base + _GO_LAM + 0] += g_K * (4.0 * lam2 / (den * den)
                                                - 64.0 * lam1 * lam1 * lam2 * x * x / den3)
        pair_grad[base + _GO_LAM + 1] += g_K * (4.0 * lam1 / (den * den)
                                                - 64.0 * lam1 * lam2 * lam2 * y * y / den3)
        g_x += g_K * (-16.0 * K * lam1 * lam1 * x / den)
        g_y += g_K * (-16.0 * K * lam2 * lam2 * y / den)

        # camera normal: nc = flip * Nmat @ (ntilde / |ntilde|)
        g_nlx = flip * (Nmat[p, 0, 0] * gn_cx + Nmat[p, 1, 0] * gn_cy + Nmat[p, 2, 0] * gn_cz)
        g_nly = flip * (Nmat[p, 0, 1] * gn_cx + Nmat[p, 1, 1] * gn_cy + Nmat[p, 2, 1] * gn_cz)
        g_nlz = flip * (Nmat[p, 0, 2] * gn_cx + Nmat[p, 1, 2] * gn_cy + Nmat[p, 2, 2] * gn_cz)
        pair_grad[base + _GO_NMAT + 0] += flip * gn_cx * nlx
        pair_grad[base + _GO_NMAT + 1] += flip * gn_cx * nly
        pair_grad[base + _GO_NMAT + 2] += flip * gn_cx * nlz
        pair_grad[base + _GO_NMAT + 3] += flip * gn_cy * nlx
        pair_grad[base + _GO_NMAT + 4] += flip * gn_cy * nly
        pair_grad[base + _GO_NMAT + 5] += flip * gn_cy * nlz
        pair_grad[base + _GO_NMAT + 6] += flip * gn_cz * nlx
        pair_grad[base + _GO_NMAT + 7] += flip * gn_cz * nly
        pair_grad[base + _GO_NMAT + 8] += flip * gn_cz * nlz
        # through the normalization of ntilde
        dot = nlx * g_nlx + nly * g_nly + nlz * g_nlz
        g_ntx = (g_nlx - nlx * dot) / nrm
        g_nty = (g_nly - nly * dot) / nrm
        g_ntz = (g_nlz - nlz * dot) / nrm
        g_w1 += 2.0 * x * g_ntx
        g_x += 2.0 * w1 * g_ntx
        g_w2 += 2.0 * y * g_nty
        g_y += 2.0 * w2 * g_nty
        g_iw3 += -g_ntz
    else:
        # planar: fixed local normal (0,0,-1); only Nmat sees gradient
        pair_grad[base + _GO_NMAT + 2] += -flip * gn_cx
        pair_grad[base + _GO_NMAT + 5] += -flip * gn_cy
        pair_grad[base + _GO_NMAT + 8] += -flip * gn_cz
        g_w1 = 0.0
        g_w2 = 0.0
        g_iw3 = 0.0

    # polar coordinates of the hit
    if rho > 1e-12:
        g_x += g_cth * sth * sth / rho - g_sth * cth * sth / rho
        g_y += -g_cth * cth * sth / rho + g_sth * cth * cth / rho
    g_x += g_rho * cth
    g_y += g_rho * sth

    # hit point x = ohat + t dhat
    dhx = M[p, 0, 0] * dx + M[p, 0, 1] * dy + M[p, 0, 2] * dz
    dhy = M[p, 1, 0] * dx + M[p, 1, 1] * dy + M[p, 1, 2] * dz
    dhz = M[p, 2, 0] * dx + M[p, 2, 1] * dy + M[p, 2, 2] * dz
    g_t_total = g_t + g_x * dhx + g_y * dhy
    g_oh0 = g_x
    g_oh1 = g_y
    g_oh2 = 0.0
    g_dh0 = g_x * t
    g_dh1 = g_y * t
    g_dh2 = 0.0

    ox = ohat[p, 0]
    oy = ohat[p, 1]
    oz = ohat[p, 2]
    if branch == BR_PLANAR:
        # t = -oz / dhz
        g_oh2 += -g_t_total / dhz
        g_dh2 += g_t_total * oz / (dhz * dhz)
    else:
        A, B, C = ray_coeffs(w1, w2, iw3, ox, oy, oz, dhx, dhy, dhz)
        if branch == BR_LINEAR:
            g_A = 0.0
            g_B = -g_t_total * t / B
            g_C = -g_t_total / B
        else:
            q = 2.0 * A * t + B
            g_A = -g_t_total * t * t / q
            g_B = -g_t_total * t / q
            g_C = -g_t_total / q
        g_w1 += g_A * dhx * dhx + g_B * 2.0 * ox * dhx + g_C * ox * ox
        g_w2 += g_A * dhy * dhy + g_B * 2.0 * oy * dhy + g_C * oy * oy
        g_iw3 += -g_B * dhz - g_C * oz
        g_oh0 += g_B * 2.0 * w1 * dhx + g_C * 2.0 * w1 * ox
        g_oh1 += g_B * 2.0 * w2 * dhy + g_C * 2.0 * w2 * oy
        g_oh2 += -g_C * iw3
        g_dh0 += g_A * 2.0 * w1 * dhx + g_B * 2.0 * w1 * ox
        g_dh1 += g_A * 2.0 * w2 * dhy + g_B * 2.0 * w2 * oy
        g_dh2 += -g_B * iw3

    pair_grad[base + _GO_W + 0] += g_w1
    pair_grad[base + _GO_W + 1] += g_w2
    pair_grad[base + _GO_W + 2] += g_iw3
    pair_grad[base + _GO_OHAT + 0] += g_oh0
    pair_grad[base + _GO_OHAT + 1] += g_oh1
    pair_grad[base + _GO_OHAT + 2] += g_oh2
    # dhat = M @ d_cam
    pair_grad[base + _GO_M + 0] += g_dh0 * dx
    pair_grad[base + _GO_M + 1] += g_dh0 * dy
    pair_grad[base + _GO_M + 2] += g_dh0 * dz
    pair_grad[base + _GO_M + 3] += g_dh1 * dx
    pair_grad[base + _GO_M + 4] += g_dh1 * dy
    pair_grad[base + _GO_M + 5] += g_dh1 * dz
    pair_grad[base + _GO_M + 6] += g_dh2 * dx
    pair_grad[base + _GO_M + 7] += g_dh2 * dy
    pair_grad[base + _GO_M + 8] += g_dh2 * dz

    T *= 1.0 - abar
    return T, pref_w


@njit(cache=True, parallel=True)
def backward_kernel(H, W, dirs, tile_offsets, tile_prims, tiles_x, tiles_y,
                    pix_bbox, ohat, M, wv, sv, lam, alpha, colors, Nmat,
                    planar, resort_on, euclid, t_clip, alpha_floor,
                    alpha_clamp, t_term,
                    out_color, out_alpha, out_depth, out_depthsq,
                    out_normal, out_curv, out_dist,
                    u_color, u_alpha, u_depth, u_normal, u_curv, u_dist,
                    pair_grad):
    n_tiles = tiles_x * tiles_y
    for tile in prange(n_tiles):
        ty = tile // tiles_x
        tx = tile % tiles_x
        v0, v1 = ty * 16, min(H, ty * 16 + 16)
        u0, u1 = tx * 16, min(W, tx * 16 + 16)
        start, stop = tile_offsets[tile], tile_offsets[tile + 1]
        buf_t = np.empty(BUFFER_SIZE)
        buf_slot = np.empty(BUFFER_SIZE, dtype=np.int64)
        buf_pay = np.empty((BUFFER_SIZE, 12))
        cur_pay = np.empty(12)
        for v in range(v0, v1):
            for u in range(u0, u1):
                uc0 = u_color[v, u, 0]
                uc1 = u_color[v, u, 1]
                uc2 = u_color[v, u, 2]
                ua = u_alpha[v, u]
                ut = u_depth[v, u]
                un0 = u_normal[v, u, 0]
                un1 = u_normal[v, u, 1]
                un2 = u_normal[v, u, 2]
                uk = u_curv[v, u]
                ud = u_dist[v, u]
                if (uc0 == 0.0 and uc1 == 0.0 and uc2 == 0.0 and ua == 0.0
                        and ut == 0.0 and un0 == 0.0 and un1 == 0.0
                        and un2 == 0.0 and uk == 0.0 and ud == 0.0):
                    continue
                dx = dirs[v, u, 0]
                dy = dirs[v, u, 1]
                dz = dirs[v, u, 2]
                F0 = out_alpha[v, u]
                F1 = out_depth[v, u]
                F2 = out_depthsq[v, u]
                vtot = (uc0 * out_color[v, u, 0] + uc1 * out_color[v, u, 1]
                        + uc2 * out_color[v, u, 2] + ua * F0 + ut * F1
                        + un0 * out_normal[v, u, 0] + un1 * out_normal[v, u, 1]
                        + un2 * out_normal[v, u, 2] + uk * out_curv[v, u]
                        + ud * 2.0 * out_dist[v, u])
                T = 1.0
                pref_w = 0.0
                n_buf = 0
                alive = True
                for idx in range(start, stop):
                    if not alive:
                        break
                    p = tile_prims[idx]
                    if (u < pix_bbox[p, 0] or u > pix_bbox[p, 1]
                            or v < pix_bbox[p, 2] or v > pix_bbox[p, 3]):
                        continue
                    res = _shade(p, ohat, M, wv, sv, lam, alpha, colors,
                                 Nmat, planar, dx, dy, dz, euclid, t_clip,
                                 alpha_floor, alpha_clamp)
                    if not res[0]:
                        continue
                    if not resort_on:
                        cur_pay[0] = res[1]
                        cur_pay[1] = res[2]
                        cur_pay[2] = res[3]
                        cur_pay[3] = res[4]
                        cur_pay[4] = res[5]
                        cur_pay[5] = res[6]
                        cur_pay[6] = res[7]
                        cur_pay[7] = res[8]
                        cur_pay[8] = res[9]
                        cur_pay[9] = res[10]
                        cur_pay[10] = res[12]
                        cur_pay[11] = float(res[11])
                        T, pref_w = _grad_fragment(
                            p, idx, cur_pay, T, pref_w, vtot, F0, F1, F2,
                            uc0, uc1, uc2, ua, ut, un0, un1, un2, uk, ud,
                            ohat, M, wv, sv, lam, alpha, colors, Nmat,
                            dx, dy, dz, alpha_clamp, euclid, pair_grad)
                        if T < t_term:
                            alive = False
                        continue
                    if n_buf == BUFFER_SIZE:
                        jmin = 0
                        for j in range(1, n_buf):
                            if buf_t[j] < buf_t[jmin]:
                                jmin = j
                        if res[1] < buf_t[jmin]:
                            e_slot = idx
                            cur_pay[0] = res[1]
                            cur_pay[1] = res[2]
                            cur_pay[2] = res[3]
                            cur_pay[3] = res[4]
                            cur_pay[4] = res[5]
                            cur_pay[5] = res[6]
                            cur_pay[6] = res[7]
                            cur_pay[7] = res[8]
                            cur_pay[8] = res[9]
                            cur_pay[9] = res[10]
                            cur_pay[10] = res[12]
                            cur_pay[11] = float(res[11])
                        else:
                            e_slot = buf_slot[jmin]
                            for j in range(12):
                                cur_pay[j] = buf_pay[jmin, j]
                            buf_t[jmin] = res[1]
                            buf_slot[jmin] = idx
                            buf_pay[jmin, 0] = res[1]
                            buf_pay[jmin, 1] = res[2]
                            buf_pay[jmin, 2] = res[3]
                            buf_pay[jmin, 3] = res[4]
                            buf_pay[jmin, 4] = res[5]
                            buf_pay[jmin, 5] = res[6]
                            buf_pay[jmin, 6] = res[7]
                            buf_pay[jmin, 7] = res[8]
                            buf_pay[jmin, 8] = res[9]
                            buf_pay[jmin, 9] = res[10]
                            buf_pay[jmin, 10] = res[12]
                            buf_pay[jmin, 11] = float(res[11])
                        ep = tile_prims[e_slot]
                        T, pref_w = _grad_fragment(
                            ep, e_slot, cur_pay, T, pref_w, vtot, F0, F1, F2,
                            uc0, uc1, uc2, ua, ut, un0, un1, un2, uk, ud,
                            ohat, M, wv, sv, lam, alpha, colors, Nmat,
                            dx, dy, dz, alpha_clamp, euclid, pair_grad)
                        if T < t_term:
                            alive = False
                    else:
                        buf_t[n_buf] = res[1]
                        buf_slot[n_buf] = idx
                        buf_pay[n_buf, 0] = res[1]
                        buf_pay[n_buf, 1] = res[2]
                        buf_pay[n_buf, 2] = res[3]
                        buf_pay[n_buf, 3] = res[4]
                        buf_pay[n_buf, 4] = res[5]
                        buf_pay[n_buf, 5] = res[6]
                        buf_pay[n_buf, 6] = res[7]
                        buf_pay[n_buf, 7] = res[8]
                        buf_pay[n_buf, 8] = res[9]
                        buf_pay[n_buf, 9] = res[10]
                        buf_pay[n_buf, 10] = res[12]
                        buf_pay[n_buf, 11] = float(res[11])
                        n_buf += 1
                while alive and n_buf > 0:
                    jmin = 0
                    for j in range(1, n_buf):
                        if buf_t[j] < buf_t[jmin]:
                            jmin = j
                    e_slot = buf_slot[jmin]
                    for j in range(12):
                        cur_pay[j] = buf_pay[jmin, j]
                    n_buf -= 1
                    buf_t[jmin] = buf_t[n_buf]
                    buf_slot[jmin] = buf_slot[n_buf]
                    for j in range(12):
                        buf_pay[jmin, j] = buf_pay[n_buf, j]
                    ep = tile_prims[e_slot]
                    T, pref_w = _grad_fragment(
                        ep, e_slot, cur_pay, T, pref_w, vtot, F0, F1, F2,
                        uc0, uc1, uc2, ua, ut, un0, un1, un2, uk, ud,
                        ohat, M, wv, sv, lam, alpha, colors, Nmat,
                        dx, dy, dz, alpha_clamp, euclid, pair_grad)
                    if T < t_term:
                        alive = False


@njit(cache=True)
def merge_pair_grads(tile_prims, pair_grad, out):
    """Deterministic reduction: pairs in (tile, sorted position) order."""
    n_pairs = tile_prims.shape[0]
    for i in range(n_pairs):
        p = tile_prims[i]
        base = i * NG
        for j in range(NG):
            out[p, j] += pair_grad[base + j]


@njit(cache=True)
def tile_sort_depths(tile_ids, prim_ids, tiles_x, ohat, M, wv, sv, planar,
                     vert_u, vert_v, center_dist, cx, cy, fx, fy, W, H,
                     euclid, t_clip):
    """Per (tile, primitive) sort depth: intersection depth along the ray
    through the tile's pixel nearest the projected vertex, else the
    camera-to-center distance."""
    n = tile_ids.shape[0]
    out = np.empty(n)
    for i in range(n):
        p = prim_ids[i]
        tile = tile_ids[i]
        ty = tile // tiles_x
        tx = tile % tiles_x
        u_lo, u_hi = tx * 16, min(W, tx * 16 + 16) - 1
        v_lo, v_hi = ty * 16, min(H, ty * 16 + 16) - 1
        u = float(min(max(int(np.floor(vert_u[p])), u_lo), u_hi))
        v = float(min(max(int(np.floor(vert_v[p])), v_lo), v_hi))
        ddx = (u + 0.5 - cx) / fx
        ddy = (v + 0.5 - cy) / fy
        nrm = np.sqrt(ddx * ddx + ddy * ddy + 1.0)
        dcx = ddx / nrm
        dcy = ddy / nrm
        dcz = 1.0 / nrm
        dhx = M[p, 0, 0] * dcx + M[p, 0, 1] * dcy + M[p, 0, 2] * dcz
        dhy = M[p, 1, 0] * dcx + M[p, 1, 1] * dcy + M[p, 1, 2] * dcz
        dhz = M[p, 2, 0] * dcx + M[p, 2, 1] * dcy + M[p, 2, 2] * dcz
        res = fragment_geometry(wv[p, 0], wv[p, 1], wv[p, 2],
                                sv[p, 0], sv[p, 1], sv[p, 2],
                                ohat[p, 0], ohat[p, 1], ohat[p, 2],
                                dhx, dhy, dhz, planar[p] == 1, euclid, t_clip)
        out[i] = res[1] if res[0] else center_dist[p]
    return out
