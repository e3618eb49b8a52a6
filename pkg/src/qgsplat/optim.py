"""Adam over the primitive parameter groups.

Moment state lives alongside the primitive arrays; densification informs
the optimizer through keep-masks (prune) and zero-state extension (new
primitives).  Primitives whose gradients contain non-finite values skip
their step and are counted.
"""

import numpy as np

GROUPS = ("centers", "quats", "raw_scales", "raw_signs", "raw_opacity", "sh")


class Adam:
    def __init__(self, prims, beta1=0.9, beta2=0.999, eps=1e-15):
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {g: np.zeros_like(getattr(prims, g)) for g in GROUPS}
        self.v = {g: np.zeros_like(getattr(prims, g)) for g in GROUPS}
        self.skipped = 0

    def step(self, prims, grads, lrs, freeze=None):
        """lrs: group -> learning rate.  freeze: group -> bool mask or None."""
        self.t += 1
        b1c = 1.0 - self.beta1 ** self.t
        b2c = 1.0 - self.beta2 ** self.t
        # one bad primitive must not poison the others
        bad = np.zeros(len(prims), dtype=bool)
        for g in GROUPS:
            arr = getattr(grads, g)
            flat = arr.reshape(len(prims), -1)
            bad |= ~np.isfinite(flat).all(axis=1)
        if bad.any():
            self.skipped += int(bad.sum())
        for g in GROUPS:
            grad = getattr(grads, g).copy()
            grad[bad] = 0.0
            if freeze and freeze.get(g) is not None:
                grad = np.where(freeze[g], 0.0, grad)
            self.m[g] = self.beta1 * self.m[g] + (1 - self.beta1) * grad
            self.v[g] = self.beta2 * self.v[g] + (1 - self.beta2) * grad * grad
            mhat = self.m[g] / b1c
            vhat = self.v[g] / b2c
            getattr(prims, g)[:] -= lrs[g] * mhat / (np.sqrt(vhat) + self.eps)
        # keep quaternions unit so the rotation activation stays stable
        q = prims.quats
        q /= np.linalg.norm(q, axis=1, keepdims=True)

    def keep(self, mask):
        for g in GROUPS:
            self.m[g] = self.m[g][mask]
            self.v[g] = self.v[g][mask]

    def extend(self, n_new):
        for g in GROUPS:
            pad = np.zeros((n_new,) + self.m[g].shape[1:])
            self.m[g] = np.concatenate([self.m[g], pad])
            self.v[g] = np.concatenate([self.v[g], pad])

    def reset_group(self, group):
        self.m[group][:] = 0.0
        self.v[group][:] = 0.0


def center_lr(step, total, base, final_ratio, scene_extent):
    """Exponentially decayed center learning rate, scaled by scene size."""
    frac = min(max(step / max(total, 1), 0.0), 1.0)
    return base * scene_extent * (final_ratio ** frac)
