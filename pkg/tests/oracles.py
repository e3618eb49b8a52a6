"""Independent oracles used by the test suite.

Everything here deliberately avoids the closed forms and kernels under
test: arc lengths come from adaptive quadrature, curvature from numeric
fundamental forms, intersections from ray marching, gradients from central
finite differences.
"""

import numpy as np
from numba import njit

# Gauss-Kronrod 7-15 nodes/weights on [-1, 1] (QUADPACK constants).
_XK = np.array([
    0.991455371120813, 0.949107912342759, 0.864864423359769,
    0.741531185599394, 0.586087235467691, 0.405845151377397,
    0.207784955007898, 0.0,
])
_WK = np.array([
    0.022935322010529, 0.063092092629979, 0.104790010322250,
    0.140653259715525, 0.169004726639267, 0.190350578064785,
    0.204432940075298, 0.209482141084728,
])
_WG = np.array([
    0.129484966168870, 0.279705391489277, 0.381830050505119,
    0.417959183673469,
])

_NODES = np.concatenate([-_XK[:7], _XK[::-1]])           # 15 ascending
_WEIGHTS_K = np.concatenate([_WK[:7], _WK[::-1]])
_WEIGHTS_G = np.zeros(15)
_WEIGHTS_G[1:14:2] = np.concatenate([_WG[:3], _WG[::-1]])


def quad_arc_length(a, rho, tol=1e-12, max_depth=40):
    """Adaptive Gauss-Kronrod quadrature of integral 0..rho sqrt(1+(2at)^2) dt.

    Vectorized over flat arrays of (a, rho) pairs; bisects every interval
    whose Kronrod-Gauss discrepancy exceeds the local tolerance.
    """
    a = np.atleast_1d(np.asarray(a, dtype=np.float64)).ravel()
    rho = np.atleast_1d(np.asarray(rho, dtype=np.float64)).ravel()
    a, rho = np.broadcast_arrays(a, rho)
    n = a.size
    total = np.zeros(n)

    idx = np.arange(n)
    lo = np.zeros(n)
    hi = rho.astype(np.float64).copy()
    depth = np.zeros(n, dtype=np.int64)
    a_iv = a.astype(np.float64).copy()

    while idx.size:
        mid = 0.5 * (lo + hi)
        half = 0.5 * (hi - lo)
        t = mid[:, None] + half[:, None] * _NODES[None, :]
        f = np.sqrt(1.0 + (2.0 * a_iv[:, None] * t) ** 2)
        ik = half * (f @ _WEIGHTS_K)
        ig = half * (f @ _WEIGHTS_G)
        err = np.abs(ik - ig)
        ok = (err <= tol * np.maximum(1.0, np.abs(ik))) | (depth >= max_depth) | (half <= 0)
        np.add.at(total, idx[ok], ik[ok])

        bad = ~ok
        idx = np.concatenate([idx[bad], idx[bad]])
        lo = np.concatenate([lo[bad], mid[bad]])
        hi = np.concatenate([mid[bad], hi[bad]])
        a_iv = np.concatenate([a_iv[bad], a_iv[bad]])
        depth = np.concatenate([depth[bad] + 1, depth[bad] + 1])
    return total


@njit(cache=True)
def _march_residual(w1, w2, iw3, ox, oy, oz, dx, dy, dz, t):
    x = ox + t * dx
    y = oy + t * dy
    z = oz + t * dz
    return w1 * x * x + w2 * y * y - iw3 * z


@njit(cache=True)
def march_crossings(w1, w2, iw3, o, d, t0, t1, step):
    """All sign crossings of the implicit residual along o + t*d, refined by
    bisection.  Returns (count, t_a, t_b); a quadratic has at most two."""
    ra = _march_residual(w1, w2, iw3, o[0], o[1], o[2], d[0], d[1], d[2], t0)
    hits = np.zeros(2)
    cnt = 0
    t = t0
    while t < t1 and cnt < 2:
        tn = t + step
        rb = _march_residual(w1, w2, iw3, o[0], o[1], o[2], d[0], d[1], d[2], tn)
        if (ra < 0.0 and rb >= 0.0) or (ra > 0.0 and rb <= 0.0) or ra == 0.0:
            la, lb = t, tn
            for _ in range(200):
                lm = 0.5 * (la + lb)
                rm = _march_residual(w1, w2, iw3, o[0], o[1], o[2], d[0], d[1], d[2], lm)
                if (ra < 0.0) == (rm < 0.0):
                    la = lm
                else:
                    lb = lm
                if lb - la < 1e-14 * max(1.0, lm):
                    break
            hits[cnt] = 0.5 * (la + lb)
            cnt += 1
        ra = rb
        t = tn
    return cnt, hits[0], hits[1]


def fundamental_forms_curvature(lam1, lam2, x, y):
    """Gaussian curvature of z = lam1*x^2 + lam2*y^2 via numeric E,F,G,L,M,N."""
    h = 1e-5

    def patch(u, v):
        return np.array([u, v, lam1 * u * u + lam2 * v * v])

    xu = (patch(x + h, y) - patch(x - h, y)) / (2 * h)
    xv = (patch(x, y + h) - patch(x, y - h)) / (2 * h)
    xuu = (patch(x + h, y) - 2 * patch(x, y) + patch(x - h, y)) / h**2
    xvv = (patch(x, y + h) - 2 * patch(x, y) + patch(x, y - h)) / h**2
    xuv = (patch(x + h, y + h) - patch(x + h, y - h)
           - patch(x - h, y + h) + patch(x - h, y - h)) / (4 * h**2)
    n = np.cross(xu, xv)
    n = n / np.linalg.norm(n)
    E, F, G = xu @ xu, xu @ xv, xv @ xv
    L, M, N = n @ xuu, n @ xuv, n @ xvv
    return (L * N - M * M) / (E * G - F * F)


def central_diff(f, x0, h):
    """Central finite-difference gradient of scalar f at flat array x0."""
    x0 = np.asarray(x0, dtype=np.float64)
    g = np.zeros_like(x0)
    for i in range(x0.size):
        hp = h * max(1.0, abs(x0.flat[i]))
        xp = x0.copy(); xp.flat[i] += hp
        xm = x0.copy(); xm.flat[i] -= hp
        g.flat[i] = (f(xp) - f(xm)) / (2 * hp)
    return g


def reference_render(prims, cam, settings=None):
    """Per-pixel exact-sort compositor used as the ordering oracle.

    Walks every pixel, intersects every primitive through the library
    scalar path, sorts hits globally by depth (ties by primitive id) and
    composites front-to-back with the same floors and termination as the
    kernel.  Slow; use on tiny scenes only.
    """
    from qgsplat import sh as shlib
    from qgsplat.intersect import select_valid
    from qgsplat.model import activate_scales, quat_to_rot, sigmoid
    from qgsplat.rasterizer import RenderSettings
    from qgsplat.surface import curvature_at, normal_at

    settings = settings or RenderSettings()
    H, W = cam.height, cam.width
    scales, _ = activate_scales(prims.raw_scales, prims.raw_signs)
    alphas = sigmoid(prims.raw_opacity)
    R = quat_to_rot(prims.quats)
    eye = cam.center
    v = prims.centers - eye
    view_dirs = v / np.linalg.norm(v, axis=1, keepdims=True)
    colors, _ = shlib.eval_color(prims.sh, view_dirs)

    out = {
        "color": np.zeros((H, W, 3)), "alpha": np.zeros((H, W)),
        "depth": np.zeros((H, W)), "depth_median": np.zeros((H, W)),
        "normal": np.zeros((H, W, 3)), "curvature": np.zeros((H, W)),
        "distortion": np.zeros((H, W)), "transmittance": np.ones((H, W)),
    }
    for vpx in range(H):
        for upx in range(W):
            o_w, d_w = cam.ray_world(upx, vpx)
            frags = []
            for p in range(len(prims)):
                o_hat = R[p].T @ (o_w - prims.centers[p])
                d_hat = R[p].T @ d_w
                hit = select_valid(scales[p], o_hat, d_hat,
                                   t_clip=settings.t_near_clip,
                                   euclidean=settings.euclidean_density)
                if hit is None:
                    continue
                abar = alphas[p] * hit.weight
                if abar < settings.alpha_floor:
                    continue
                abar = min(abar, settings.alpha_clamp)
                n_w = normal_at(scales[p], R[p], hit.point, view_dir_world=d_w)
                n_c = cam.R_wc @ n_w
                K = curvature_at(scales[p], hit.point)
                frags.append((hit.t, p, abar, n_c, K, colors[p]))
            frags.sort(key=lambda f: (f[0], f[1]))
            T = 1.0
            S0 = S1 = S2 = 0.0
            for t, p, abar, n_c, K, col in frags:
                w_i = abar * T
                out["color"][vpx, upx] += w_i * col
                out["alpha"][vpx, upx] += w_i
                out["depth"][vpx, upx] += w_i * t
                out["normal"][vpx, upx] += w_i * n_c
                out["curvature"][vpx, upx] += w_i * K
                out["distortion"][vpx, upx] += w_i * (t * t * S0 - 2 * t * S1 + S2)
                S0 += w_i
                S1 += w_i * t
                S2 += w_i * t * t
                if T > 0.5:
                    out["depth_median"][vpx, upx] = t
                T *= 1.0 - abar
                if T < settings.t_term:
                    break
            out["transmittance"][vpx, upx] = T
    out["color"] += out["transmittance"][:, :, None] * np.asarray(settings.background)
    return out
