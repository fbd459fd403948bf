"""Procedural test scenes and depth-map ingestion.

A Scene bundles the three per-pixel quantities the forward model needs:
reflectance (albedo), ambient intensity and true depth. Generation is
deterministic for a fixed spec+seed.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError
from .imagefile import read_pfm, read_pgm16, write_pfm

SCENE_KINDS = ("ramp", "staircase", "sphere", "fronto-parallel-plane", "file")
ALBEDO_PATTERNS = ("constant", "checker", "gradient", "noise-texture")


@dataclass
class Scene:
    width: int
    height: int
    albedo: np.ndarray   # reflectance in [0, 1]
    ambient: np.ndarray  # photoelectrons per exposure window, >= 0
    depth: np.ndarray    # meters; pixels with depth <= 0 are invalid

    def __post_init__(self):
        for name in ("albedo", "ambient", "depth"):
            g = np.asarray(getattr(self, name), dtype=np.float64)
            if g.shape != (self.height, self.width):
                raise ConfigurationError(
                    f"{name} grid shape {g.shape} does not match "
                    f"{(self.height, self.width)}")
            if not np.all(np.isfinite(g)):
                raise ConfigurationError(f"{name} grid contains non-finite values")
            setattr(self, name, g)
        if self.albedo.min() < 0 or self.albedo.max() > 1:
            raise ConfigurationError("albedo values must lie in [0, 1]")
        if self.ambient.min() < 0:
            raise ConfigurationError("ambient values must be non-negative")
        if self.depth.min() < 0:
            raise ConfigurationError("depth values must be non-negative")

    @property
    def valid(self):
        return self.depth > 0


@dataclass
class SceneSpec:
    kind: str = "ramp"
    depth_range: tuple = (1.0, 5.0)  # [d_min, d_max] meters
    albedo_pattern: str = "constant"
    ambient_level: float = 0.0
    width: int = 64
    height: int = 64
    seed: int = 0
    path: str | None = None  # only for kind == "file"

    def __post_init__(self):
        if self.kind not in SCENE_KINDS:
            raise ConfigurationError(f"unknown scene kind {self.kind!r}")
        if self.albedo_pattern not in ALBEDO_PATTERNS:
            raise ConfigurationError(
                f"unknown albedo pattern {self.albedo_pattern!r}")
        d_min, d_max = self.depth_range
        if not (d_min < d_max or (d_min == d_max and self.kind == "fronto-parallel-plane")):
            raise ConfigurationError(
                f"depth_range requires d_min < d_max, got [{d_min}, {d_max}]")
        if self.ambient_level < 0:
            raise ConfigurationError("ambient_level must be >= 0")
        if self.width < 8 or self.height < 8:
            raise ConfigurationError("scene dimensions must be at least 8x8")


def _albedo_grid(spec, rng):
    h, w = spec.height, spec.width
    pat = spec.albedo_pattern
    if pat == "constant":
        return np.full((h, w), 0.5)
    if pat == "checker":
        yy, xx = np.indices((h, w))
        cell = max(1, min(h, w) // 8)
        return np.where(((yy // cell) + (xx // cell)) % 2 == 0, 0.9, 0.3)
    if pat == "gradient":
        col = np.linspace(0.1, 1.0, w)
        return np.tile(col, (h, 1))
    # noise-texture: sampled in [0.1, 1.0] so every pixel stays observable
    return rng.uniform(0.1, 1.0, size=(h, w))


def _depth_grid(spec, rng):
    h, w = spec.height, spec.width
    d_min, d_max = spec.depth_range
    if spec.kind == "ramp":
        col = np.linspace(d_min, d_max, w)
        return np.tile(col, (h, 1))
    if spec.kind == "fronto-parallel-plane":
        return np.full((h, w), 0.5 * (d_min + d_max))
    if spec.kind == "staircase":
        n_steps = 8
        step = (np.arange(w) * n_steps) // w
        col = d_min + (d_max - d_min) * step / (n_steps - 1)
        return np.tile(col, (h, 1))
    if spec.kind == "sphere":
        # spherical cap bulging toward the camera on a back plane at d_max
        yy, xx = np.indices((h, w))
        cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
        r = min(h, w) * 0.45
        rr2 = ((yy - cy) ** 2 + (xx - cx) ** 2) / r**2
        cap = np.sqrt(np.clip(1.0 - rr2, 0.0, None))
        return d_max - (d_max - d_min) * cap
    raise ConfigurationError(f"kind {spec.kind!r} is not procedural")


def generate_scene(spec: SceneSpec) -> Scene:
    """Build a deterministic procedural scene from a spec."""
    if spec.kind == "file":
        if spec.path is None:
            raise ConfigurationError("file scenes need a path")
        return load_depth_map(spec.path, "PFM" if spec.path.endswith(".pfm") else "PGM16", 1.0)
    rng = np.random.Generator(np.random.Philox(key=np.uint64(spec.seed)))
    depth = _depth_grid(spec, rng)
    albedo = _albedo_grid(spec, rng)
    ambient = np.full((spec.height, spec.width), float(spec.ambient_level))
    return Scene(spec.width, spec.height, albedo, ambient, depth)


def load_depth_map(path, fmt, scale, albedo=0.5, ambient=0.0) -> Scene:
    """Load a depth grid from PFM or 16-bit PGM; depth = raw value * scale."""
    if scale <= 0:
        raise ConfigurationError(f"scale must be positive, got {scale}")
    if fmt == "PFM":
        raw = read_pfm(path)
    elif fmt == "PGM16":
        raw = read_pgm16(path).astype(np.float64)
    else:
        raise ConfigurationError(f"unknown depth-map format {fmt!r}")
    depth = raw * scale
    h, w = depth.shape
    return Scene(w, h,
                 np.full((h, w), float(albedo)),
                 np.full((h, w), float(ambient)),
                 depth)


def save_depth_map(path, scene: Scene):
    """Write the scene's depth grid as PFM (meters)."""
    write_pfm(path, scene.depth)
