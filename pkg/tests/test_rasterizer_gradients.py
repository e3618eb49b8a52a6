import numpy as np
import pytest

from qgsplat import rasterizer as rz
from qgsplat.cameras import Camera, look_at
from qgsplat.model import PrimitiveSet, inverse_sigmoid


def blend_grad_back_to_front(abar, X):
    """Textbook back-to-front gradient of X_hat = sum abar_i T_i X_i."""
    n = len(abar)
    T = np.ones(n + 1)
    for i in range(n):
        T[i + 1] = T[i] * (1 - abar[i])
    g = np.zeros(n)
    for i in range(n):
        suffix = sum(X[j] * abar[j] * T[j] for j in range(i + 1, n))
        g[i] = (X[i] - suffix / T[i + 1]) * T[i]
    return g


def blend_grad_front_to_back(abar, X):
    """Front-to-back rewrite using the final value and a running prefix."""
    n = len(abar)
    X_hat = 0.0
    T = 1.0
    for i in range(n):
        X_hat += abar[i] * T * X[i]
        T *= 1 - abar[i]
    g = np.zeros(n)
    T = 1.0
    prefix = 0.0
    for i in range(n):
        prefix += X[i] * abar[i] * T
        T_next = T * (1 - abar[i])
        g[i] = (X[i] - (X_hat - prefix) / T_next) * T
        T = T_next
    return g


def test_front_to_back_rewrite_identity():
    rng = np.random.default_rng(0)
    for _ in range(50):
        n = 5
        abar = rng.uniform(0.05, 0.9, n)
        X = rng.normal(size=n)
        g_btf = blend_grad_back_to_front(abar, X)
        g_ftb = blend_grad_front_to_back(abar, X)
        assert np.abs(g_btf - g_ftb).max() <= 1e-12


def test_single_fragment_color_gradient():
    # one fragment, black background: dC/dabar = c * T_1 = c
    g = blend_grad_front_to_back(np.array([0.7]), np.array([0.35]))
    assert g[0] == pytest.approx(0.35, abs=1e-15)


def fd_scene(rng, n=3, sh_deg=1):
    """Scene kept away from every non-smooth switch so central differences
    at h = 1e-4 are trustworthy."""
    centers = rng.uniform(-0.25, 0.25, size=(n, 3))
    centers[:, 2] = np.linspace(-0.9, 0.9, n) + rng.uniform(-0.05, 0.05, n)
    quats = rng.normal(size=(n, 4)) * 0.2
    quats[:, 0] += 1.2
    raw_scales = np.column_stack([
        rng.uniform(0.4, 0.8, n), rng.uniform(0.4, 0.8, n),
        rng.uniform(-1.2, -0.6, n)])
    raw_signs = np.column_stack([
        rng.uniform(1.2, 2.0, n), rng.uniform(1.2, 2.0, n),
        rng.uniform(0.6, 1.4, n) * rng.choice([-1.0, 1.0], n)])
    sh = rng.uniform(-0.08, 0.08, size=(n, 3, (sh_deg + 1) ** 2))
    sh[:, :, 0] = rng.uniform(0.6, 1.4, size=(n, 3))
    raw_opacity = inverse_sigmoid(rng.uniform(0.35, 0.75, n))
    return PrimitiveSet(centers, quats, raw_scales, raw_signs, raw_opacity, sh)


def pack(prims):
    return np.concatenate([prims.centers.ravel(), prims.quats.ravel(),
                           prims.raw_scales.ravel(), prims.raw_signs.ravel(),
                           prims.raw_opacity.ravel(), prims.sh.ravel()])


def unpack(theta, template):
    n = len(template)
    k = template.sh.shape[2]
    sizes = [3 * n, 4 * n, 3 * n, 3 * n, n, 3 * k * n]
    parts = np.split(theta, np.cumsum(sizes)[:-1])
    return PrimitiveSet(parts[0].reshape(n, 3), parts[1].reshape(n, 4),
                        parts[2].reshape(n, 3), parts[3].reshape(n, 3),
                        parts[4], parts[5].reshape(n, 3, k))


def pack_grads(g):
    return np.concatenate([g.centers.ravel(), g.quats.ravel(),
                           g.raw_scales.ravel(), g.raw_signs.ravel(),
                           g.raw_opacity.ravel(), g.sh.ravel()])


GROUPS = ["centers", "quats", "raw_scales", "raw_signs", "raw_opacity", "sh"]


def group_slices(n, k):
    sizes = [3 * n, 4 * n, 3 * n, 3 * n, n, 3 * k * n]
    edges = np.concatenate([[0], np.cumsum(sizes)])
    return {name: slice(edges[i], edges[i + 1]) for i, name in enumerate(GROUPS)}


def run_fd_check(seed, res=4, n=3, h=1e-4, settings=None, agg=None):
    rng = np.random.default_rng(seed)
    prims = fd_scene(rng, n=n)
    cam = Camera(fx=res * 1.2, fy=res * 1.2, cx=res / 2, cy=res / 2,
                 width=res, height=res, world_to_camera=look_at([0, 0, 5.0], [0, 0, 0]))
    settings = settings or rz.RenderSettings(background=np.full(3, 0.25))
    w = {
        "color": rng.normal(size=(res, res, 3)),
        "alpha": rng.normal(size=(res, res)),
        "depth": rng.normal(size=(res, res)) * 0.3,
        "normal": rng.normal(size=(res, res, 3)),
        "curvature": rng.normal(size=(res, res)) * 0.3,
        "distortion": rng.normal(size=(res, res)),
    }

    def objective(theta):
        pr = unpack(theta, prims)
        prep = rz.prepare(pr, cam, settings)
        t = rz.forward(prep)
        return float(np.sum(w["color"] * t.color) + np.sum(w["alpha"] * t.alpha)
                     + np.sum(w["depth"] * t.depth) + np.sum(w["normal"] * t.normal)
                     + np.sum(w["curvature"] * t.curvature)
                     + np.sum(w["distortion"] * t.distortion))

    prep = rz.prepare(prims, cam, settings)
    targets = rz.forward(prep)
    grads = rz.backward(prep, targets, w)
    g_an = pack_grads(grads)

    theta0 = pack(prims)
    g_fd = np.zeros_like(theta0)
    for i in range(len(theta0)):
        hp = h * max(1.0, abs(theta0[i]))
        tp = theta0.copy(); tp[i] += hp
        tm = theta0.copy(); tm[i] -= hp
        g_fd[i] = (objective(tp) - objective(tm)) / (2 * hp)

    gmax = np.abs(g_an).max()
    floor = max(1e-7 * gmax, 1e-9)
    rel = np.abs(g_an - g_fd) / np.maximum.reduce(
        [np.abs(g_an), np.abs(g_fd), np.full_like(g_an, floor)])
    if agg is not None:
        agg.append((rel, group_slices(len(prims), prims.sh.shape[2])))
    return rel, group_slices(len(prims), prims.sh.shape[2])


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_fd_gradients_all_groups(seed):
    rel, slices = run_fd_check(seed)
    for name, sl in slices.items():
        assert rel[sl].max() <= 1e-4, f"{name}: max rel err {rel[sl].max():.2e}"


def test_fd_gradients_euclidean_ablation():
    rel, slices = run_fd_check(7, settings=rz.RenderSettings(
        background=np.zeros(3), euclidean_density=True))
    assert rel.max() <= 1e-4


def test_fd_gradients_resort_off():
    rel, slices = run_fd_check(9, settings=rz.RenderSettings(
        background=np.zeros(3), resort=False))
    assert rel.max() <= 1e-4


def test_fd_gradients_planar_primitives():
    # planar sheets exercise the fixed-normal branch; s3 pinned deep inside
    # the flat region so the wiggle cannot cross the switch
    rng = np.random.default_rng(21)
    n = 3
    res = 4
    prims = fd_scene(rng, n=n)
    prims.raw_scales[:, 2] = np.log(1e-10)
    prims.raw_signs[:, 2] = 10.0
    cam = Camera(fx=res * 1.2, fy=res * 1.2, cx=res / 2, cy=res / 2,
                 width=res, height=res, world_to_camera=look_at([0, 0, 5.0], [0, 0, 0]))
    w = {"color": rng.normal(size=(res, res, 3)),
         "alpha": rng.normal(size=(res, res)),
         "depth": rng.normal(size=(res, res)) * 0.3,
         "normal": rng.normal(size=(res, res, 3)),
         "curvature": np.zeros((res, res)),
         "distortion": rng.normal(size=(res, res))}

    def objective(pr):
        prep = rz.prepare(pr, cam)
        t = rz.forward(prep)
        return float(np.sum(w["color"] * t.color) + np.sum(w["alpha"] * t.alpha)
                     + np.sum(w["depth"] * t.depth) + np.sum(w["normal"] * t.normal)
                     + np.sum(w["distortion"] * t.distortion))

    prep = rz.prepare(prims, cam)
    grads = rz.backward(prep, rz.forward(prep), w)
    theta0 = pack(prims)
    g_an = pack_grads(grads)
    idx = np.arange(len(theta0))
    # skip the pinned s3 raws (their gradient is legitimately ~0 inside the
    # planar branch but FD across them stays inside the branch anyway)
    g_fd = np.zeros_like(theta0)
    for i in idx:
        hp = 1e-4 * max(1.0, abs(theta0[i]))
        tp = theta0.copy(); tp[i] += hp
        tm = theta0.copy(); tm[i] -= hp
        g_fd[i] = (objective(unpack(tp, prims)) - objective(unpack(tm, prims))) / (2 * hp)
    gmax = np.abs(g_an).max()
    rel = np.abs(g_an - g_fd) / np.maximum.reduce(
        [np.abs(g_an), np.abs(g_fd), np.full_like(g_an, max(1e-7 * gmax, 1e-9))])
    assert rel.max() <= 1e-4


def test_backward_determinism_bitwise():
    rng = np.random.default_rng(11)
    prims = fd_scene(rng, n=5)
    cam = Camera(fx=20, fy=20, cx=8, cy=8, width=16, height=16,
                 world_to_camera=look_at([0, 0, 5.0], [0, 0, 0]))
    w = {"color": rng.normal(size=(16, 16, 3)), "alpha": rng.normal(size=(16, 16))}
    prep = rz.prepare(prims, cam)
    targets = rz.forward(prep)
    g1 = rz.backward(prep, targets, w)
    g2 = rz.backward(prep, targets, w)
    for name in ("centers", "quats", "raw_scales", "raw_signs",
                 "raw_opacity", "sh", "screen_center"):
        assert np.array_equal(getattr(g1, name), getattr(g2, name)), name


def test_gradients_reach_every_group():
    rng = np.random.default_rng(12)
    prims = fd_scene(rng, n=3)
    cam = Camera(fx=10, fy=10, cx=4, cy=4, width=8, height=8,
                 world_to_camera=look_at([0, 0, 5.0], [0, 0, 0]))
    w = {"color": np.ones((8, 8, 3)), "normal": np.ones((8, 8, 3)),
         "curvature": np.ones((8, 8)), "depth": np.ones((8, 8))}
    prep = rz.prepare(prims, cam)
    g = rz.backward(prep, rz.forward(prep), w)
    assert np.abs(g.centers).max() > 0
    assert np.abs(g.quats).max() > 0
    assert np.abs(g.raw_scales).max() > 0
    assert np.abs(g.raw_signs).max() > 0
    assert np.abs(g.raw_opacity).max() > 0
    assert np.abs(g.sh).max() > 0
    assert np.abs(g.screen_center).max() > 0
    assert g.finite()
