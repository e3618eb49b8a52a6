"""Training configuration and the flat key=value config-file format.

Every field of TrainConfig is addressable from the file; unknown keys are
errors.  Booleans accept true/false/1/0, the background accepts "black",
"white" or "r,g,b".
"""

from dataclasses import dataclass, fields

import numpy as np


@dataclass
class TrainConfig:
    iterations: int = 7000
    seed: int = 0
    sh_degree: int = 2

    # initialization
    init_points: int = 512
    init_opacity: float = 0.5
    init_s3_ratio: float = 0.01      # |s3| relative to the in-plane scale
    init_sign_raw: float = 3.0       # raw sign parameter (tanh saturating)
    max_primitives: int = 2000

    # learning rates (center lr scales with scene extent and decays)
    lr_center: float = 1.6e-4
    lr_center_final_ratio: float = 0.01
    lr_opacity: float = 0.05
    lr_scales: float = 5e-3
    lr_signs: float = 5e-3
    lr_rotation: float = 1e-3
    lr_sh: float = 2.5e-3

    # adaptive density control
    densify_from: int = 500
    densify_until: int = 5000
    densify_interval: int = 100
    densify_grad_threshold: float = 0.3
    percent_dense: float = 0.001
    prune_opacity: float = 0.005
    opacity_reset_interval: int = 3000
    clone_nudge: float = 0.5

    # losses and schedules
    lambda_photo_ssim: float = 0.2
    lambda_d: float = 1000.0
    lambda_n: float = 0.05
    lambda_mv: float = 0.05
    eps_curvature: float = 1e-6
    dist_from: int = 3000
    normal_from: int = 3000
    mv_from: int = 7000
    mv_patch: int = 7
    mv_neighbors: int = 2
    mv_min_baseline_deg: float = 15.0
    mv_full_chain: bool = True

    background: str = "black"

    # ablation switches
    euclidean_density: bool = False
    s3_fixed: bool = False
    s3_fixed_value: float = 0.001
    resort_off: bool = False
    lambdaK_off: bool = False
    mv_off: bool = False

    # bookkeeping
    log_every: int = 200
    checkpoint_every: int = 0

    def background_color(self):
        if self.background == "black":
            return np.zeros(3)
        if self.background == "white":
            return np.ones(3)
        vals = [float(x) for x in self.background.split(",")]
        if len(vals) != 3:
            raise ValueError(f"bad background spec: {self.background!r}")
        return np.array(vals)


class ConfigError(ValueError):
    pass


def _parse_value(text, ftype):
    if ftype is bool:
        t = text.strip().lower()
        if t in ("true", "1", "yes", "on"):
            return True
        if t in ("false", "0", "no", "off"):
            return False
        raise ConfigError(f"bad boolean: {text!r}")
    if ftype is int:
        return int(text)
    if ftype is float:
        return float(text)
    return text.strip()


def parse_config_text(text, base: TrainConfig = None) -> TrainConfig:
    cfg = base or TrainConfig()
    ftypes = {f.name: f.type for f in fields(TrainConfig)}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value, got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in ftypes:
            raise ConfigError(f"line {lineno}: unknown config key {key!r}")
        ftype = {"int": int, "float": float, "bool": bool, "str": str}[ftypes[key]] \
            if isinstance(ftypes[key], str) else ftypes[key]
        setattr(cfg, key, _parse_value(value, ftype))
    cfg.background_color()  # validate
    return cfg


def load_config(path, base: TrainConfig = None) -> TrainConfig:
    with open(path) as f:
        return parse_config_text(f.read(), base)


def save_config(path, cfg: TrainConfig):
    with open(path, "w") as f:
        for fld in fields(TrainConfig):
            f.write(f"{fld.name} = {getattr(cfg, fld.name)}\n")
