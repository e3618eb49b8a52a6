"""Quadric surfel parameters, activations and local-frame transforms.

Each primitive is a paraboloid patch z = s3*(sign(s1)/s1^2 x^2 +
sign(s2)/s2^2 y^2) in its local frame, carried by a center, a unit
quaternion, signed scales produced by tanh(raw_sign)*exp(raw_scale), a
sigmoid opacity and spherical-harmonic color coefficients.  Parameters are
stored struct-of-arrays so the renderer can vectorize.
"""

import struct

import numpy as np

# Floor on |s1|, |s2| after activation; prevents 1/s^2 blow-ups.  s3 is
# deliberately not floored: |s3| < S3_FLAT selects the planar-disk path.
S_MIN = 1e-4
S3_FLAT = 1e-6


class ParameterError(ValueError):
    """Raised when primitive parameters fail validation."""


def sign0(v):
    """Sign with sign0(0) = +1, elementwise."""
    return np.where(np.asarray(v) < 0, -1.0, 1.0)


def activate_scales(raw_scales, raw_signs):
    """Signed scales s_k = tanh(t_k) * exp(x_k), with |s1|,|s2| >= S_MIN.

    Returns (scales, clamped) where clamped marks entries pinned to the
    floor (their gradient w.r.t. the raw parameters is zero).
    """
    raw_scales = np.asarray(raw_scales, dtype=np.float64)
    raw_signs = np.asarray(raw_signs, dtype=np.float64)
    if not (np.all(np.isfinite(raw_scales)) and np.all(np.isfinite(raw_signs))):
        raise ParameterError("non-finite raw scale/sign")
    s = np.tanh(raw_signs) * np.exp(raw_scales)
    clamped = np.zeros_like(s, dtype=bool)
    small = np.abs(s[..., :2]) < S_MIN
    clamped[..., :2] = small
    s = s.copy()
    s[..., :2] = np.where(small, sign0(s[..., :2]) * S_MIN, s[..., :2])
    return s, clamped


def scale_activation_grads(raw_scales, raw_signs):
    """(ds/draw_scale, ds/draw_sign) for the unclamped activation."""
    t = np.tanh(raw_signs)
    e = np.exp(raw_scales)
    return t * e, (1.0 - t * t) * e


def sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def inverse_sigmoid(y):
    return np.log(y / (1.0 - y))


def surface_height(scales, x, y):
    """Local surface height z for activated scales (s1, s2, s3)."""
    s1, s2, s3 = scales[0], scales[1], scales[2]
    return s3 * (sign0(s1) / s1**2 * np.asarray(x) ** 2
                 + sign0(s2) / s2**2 * np.asarray(y) ** 2)


def quat_to_rot(q):
    """Unit-normalized quaternion(s) (w,x,y,z) -> rotation matrix(es)."""
    q = np.asarray(q, dtype=np.float64)
    single = q.ndim == 1
    q = np.atleast_2d(q)
    q = q / np.linalg.norm(q, axis=-1, keepdims=True)
    w, x, y, z = q[:, 0], q[:, 1], q[:, 2], q[:, 3]
    R = np.empty((len(q), 3, 3))
    R[:, 0, 0] = 1 - 2 * (y * y + z * z)
    R[:, 0, 1] = 2 * (x * y - w * z)
    R[:, 0, 2] = 2 * (x * z + w * y)
    R[:, 1, 0] = 2 * (x * y + w * z)
    R[:, 1, 1] = 1 - 2 * (x * x + z * z)
    R[:, 1, 2] = 2 * (y * z - w * x)
    R[:, 2, 0] = 2 * (x * z - w * y)
    R[:, 2, 1] = 2 * (y * z + w * x)
    R[:, 2, 2] = 1 - 2 * (x * x + y * y)
    return R[0] if single else R


def quat_rot_backward(q_raw, g_R):
    """Chain dL/dR (N,3,3) to dL/dq_raw (N,4) through normalization."""
    q_raw = np.atleast_2d(np.asarray(q_raw, dtype=np.float64))
    g_R = np.asarray(g_R, dtype=np.float64)
    norm = np.linalg.norm(q_raw, axis=-1, keepdims=True)
    q = q_raw / norm
    w, x, y, z = q[:, 0], q[:, 1], q[:, 2], q[:, 3]
    zero = np.zeros_like(w)

    def mat(rows):
        return np.stack([np.stack(r, axis=-1) for r in rows], axis=-2)

    dR_dw = mat([[zero, -2 * z, 2 * y], [2 * z, zero, -2 * x], [-2 * y, 2 * x, zero]])
    dR_dx = mat([[zero, 2 * y, 2 * z], [2 * y, -4 * x, -2 * w], [2 * z, 2 * w, -4 * x]])
    dR_dy = mat([[-4 * y, 2 * x, 2 * w], [2 * x, zero, 2 * z], [-2 * w, 2 * z, -4 * y]])
    dR_dz = mat([[-4 * z, -2 * w, 2 * x], [2 * w, -4 * z, 2 * y], [2 * x, 2 * y, zero]])
    g_unit = np.stack([np.sum(g_R * d, axis=(-2, -1))
                       for d in (dR_dw, dR_dx, dR_dy, dR_dz)], axis=-1)
    # through q = q_raw / |q_raw|
    g_raw = (g_unit - q * np.sum(g_unit * q, axis=-1, keepdims=True)) / norm
    return g_raw


def to_local(o, d, center, R):
    """Express a world ray (origin o, unit direction d) in the local frame."""
    o = np.asarray(o, dtype=np.float64)
    d = np.asarray(d, dtype=np.float64)
    o_hat = R.T @ (o - center)
    d_hat = R.T @ d
    return o_hat, d_hat


def from_local(p_hat, center, R):
    return center + R @ np.asarray(p_hat, dtype=np.float64)


class PrimitiveSet:
    """Array-of-structs free container for N quadric surfels."""

    def __init__(self, centers, quats, raw_scales, raw_signs, raw_opacity, sh):
        self.centers = np.ascontiguousarray(centers, dtype=np.float64)
        self.quats = np.ascontiguousarray(quats, dtype=np.float64)
        self.raw_scales = np.ascontiguousarray(raw_scales, dtype=np.float64)
        self.raw_signs = np.ascontiguousarray(raw_signs, dtype=np.float64)
        self.raw_opacity = np.ascontiguousarray(raw_opacity, dtype=np.float64)
        self.sh = np.ascontiguousarray(sh, dtype=np.float64)
        n = len(self.centers)
        if not (len(self.quats) == len(self.raw_scales) == len(self.raw_signs)
                == len(self.raw_opacity) == len(self.sh) == n):
            raise ParameterError("inconsistent parameter array lengths")
        if self.sh.ndim != 3 or self.sh.shape[1] != 3:
            raise ParameterError("sh must have shape (N, 3, (deg+1)^2)")

    def __len__(self):
        return len(self.centers)

    @property
    def sh_degree(self):
        return int(round(np.sqrt(self.sh.shape[2]))) - 1

    def scales(self):
        return activate_scales(self.raw_scales, self.raw_signs)[0]

    def opacities(self):
        return sigmoid(self.raw_opacity)

    def rotations(self):
        return quat_to_rot(self.quats)

    def validate(self):
        for name in ("centers", "quats", "raw_scales", "raw_signs", "raw_opacity", "sh"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise ParameterError(f"non-finite values in {name}")
        R = self.rotations()
        dev = np.abs(R @ np.transpose(R, (0, 2, 1)) - np.eye(3)).max()
        if dev > 1e-6:
            raise ParameterError(f"rotation not orthonormal (deviation {dev:.2e})")
        alpha = self.opacities()
        if np.any((alpha <= 0) | (alpha >= 1)):
            raise ParameterError("opacity out of (0,1)")

    def select(self, mask):
        return PrimitiveSet(self.centers[mask], self.quats[mask],
                            self.raw_scales[mask], self.raw_signs[mask],
                            self.raw_opacity[mask], self.sh[mask])

    def copy(self):
        return PrimitiveSet(self.centers.copy(), self.quats.copy(),
                            self.raw_scales.copy(), self.raw_signs.copy(),
                            self.raw_opacity.copy(), self.sh.copy())

    @staticmethod
    def concatenate(sets):
        return PrimitiveSet(
            np.concatenate([s.centers for s in sets]),
            np.concatenate([s.quats for s in sets]),
            np.concatenate([s.raw_scales for s in sets]),
            np.concatenate([s.raw_signs for s in sets]),
            np.concatenate([s.raw_opacity for s in sets]),
            np.concatenate([s.sh for s in sets]),
        )


# Binary little-endian PLY with one vertex per primitive.
_PLY_BASE = ["x", "y", "z",
             "quat_w", "quat_x", "quat_y", "quat_z",
             "raw_scale_1", "raw_scale_2", "raw_scale_3",
             "raw_sign_1", "raw_sign_2", "raw_sign_3",
             "raw_opacity"]


def save_ply(path, prims: PrimitiveSet):
    n = len(prims)
    n_sh = prims.sh.shape[1] * prims.sh.shape[2]
    names = _PLY_BASE + [f"sh_{k}" for k in range(n_sh)]
    header = ["ply", "format binary_little_endian 1.0",
              f"element vertex {n}"]
    header += [f"property double {name}" for name in names]
    header.append("end_header")
    data = np.concatenate([
        prims.centers, prims.quats, prims.raw_scales, prims.raw_signs,
        prims.raw_opacity[:, None], prims.sh.reshape(n, n_sh),
    ], axis=1)
    with open(path, "wb") as f:
        f.write(("\n".join(header) + "\n").encode("ascii"))
        f.write(np.ascontiguousarray(data, dtype="<f8").tobytes())


def load_ply(path) -> PrimitiveSet:
    with open(path, "rb") as f:
        magic = f.readline().strip()
        if magic != b"ply":
            raise ParameterError(f"{path}: not a PLY file")
        names = []
        n = 0
        while True:
            line = f.readline()
            if not line:
                raise ParameterError(f"{path}: truncated header")
            tok = line.decode("ascii").split()
            if tok[0] == "format" and tok[1] != "binary_little_endian":
                raise ParameterError(f"{path}: unsupported PLY format {tok[1]}")
            if tok[0] == "element" and tok[1] == "vertex":
                n = int(tok[2])
            elif tok[0] == "property":
                if tok[1] != "double":
                    raise ParameterError(f"{path}: expected double properties")
                names.append(tok[2])
            elif tok[0] == "end_header":
                break
        data = np.frombuffer(f.read(8 * n * len(names)), dtype="<f8")
    data = data.reshape(n, len(names)).astype(np.float64)
    if names[:len(_PLY_BASE)] != _PLY_BASE:
        raise ParameterError(f"{path}: unexpected property layout")
    n_sh = len(names) - len(_PLY_BASE)
    if n_sh % 3 != 0 or int(round(np.sqrt(n_sh // 3))) ** 2 * 3 != n_sh:
        raise ParameterError(f"{path}: sh property count {n_sh} is not 3*(deg+1)^2")
    sh = data[:, len(_PLY_BASE):].reshape(n, 3, n_sh // 3)
    return PrimitiveSet(data[:, 0:3], data[:, 3:7], data[:, 7:10],
                        data[:, 10:13], data[:, 13], sh)
