"""Classical depth decoders.

Covers burst-mode depth composition, 4-step phase shift, single- and
dual-frequency AMCW baselines, and a zero-normalized cross-correlation
lookup decoder for arbitrary frozen binary codes.
"""

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, NumericError, StateError
from .physics import (SPEED_OF_LIGHT, MeasurementStack, NoiseModel,
                      apply_noise, attenuation, depth_window, shifted_pulse)


@dataclass
class DepthEstimate:
    depth: np.ndarray      # meters
    valid: np.ndarray      # boolean mask
    method: str
    mae_mm: float = None   # filled when ground truth is available

    @property
    def invalid_fraction(self):
        return 1.0 - float(np.mean(self.valid))


@dataclass
class LookupTable:
    depth_grid: np.ndarray   # (N,) strictly increasing, meters
    signatures: np.ndarray   # (N, K) zero-mean unit-norm clean vectors
    grid_step: float

    def __post_init__(self):
        if np.any(np.diff(self.depth_grid) <= 0):
            raise ConfigurationError("lookup depth grid must be strictly increasing")


def compose_depth(phi1, phi2, timing):
    """Burst-mode depth from the coarse (delay) and fine (window) phases."""
    return SPEED_OF_LIGHT * (np.asarray(phi1) + np.asarray(phi2)) \
        * timing.T_burst / (4.0 * np.pi)


def phase_shift_4step(measurements):
    """4-step phase estimate atan2(I4 - I2, I1 - I3) mapped to [0, 2 pi).

    measurements: array with leading dimension 4. Returns (phase, valid);
    pixels with zero modulation contrast are flagged invalid.
    """
    m = np.asarray(measurements, dtype=np.float64)
    if m.shape[0] != 4:
        raise ConfigurationError("4-step phase shift needs exactly 4 measurements")
    num = m[3] - m[1]
    den = m[0] - m[2]
    scale = np.maximum(np.max(np.abs(m), axis=0), 1.0)
    valid = (np.abs(num) + np.abs(den)) > 1e-12 * scale
    phase = np.mod(np.arctan2(num, den), 2.0 * np.pi)
    return phase, valid


def _amcw_unit_measurements(scene, freq, att, wave="sine"):
    """Unit-scale 4-step AMCW correlation measurements, shape (4, H, W).

    sine: I_k = 0.5 rho F (1 + cos(phi + theta_k)) + 0.5 I_amb;
    square: the cosine is replaced by the triangle wave of square-square
    correlation. phi = 4 pi f d / c.
    """
    valid = scene.depth > 0
    f_att = np.zeros_like(scene.depth)
    f_att[valid] = attenuation(att, scene.depth[valid])
    phi = 4.0 * np.pi * freq * scene.depth / SPEED_OF_LIGHT
    out = np.zeros((4,) + scene.depth.shape)
    for k, theta in enumerate((0.0, 0.5 * np.pi, np.pi, 1.5 * np.pi)):
        x = phi + theta
        if wave == "sine":
            mod = np.cos(x)
        elif wave == "square":
            w = np.mod(x + np.pi, 2.0 * np.pi) - np.pi
            mod = 1.0 - 2.0 * np.abs(w) / np.pi
        else:
            raise ConfigurationError(f"unknown AMCW wave {wave!r}")
        out[k] = np.where(valid,
                          0.5 * scene.albedo * f_att * (1.0 + mod),
                          0.0) + 0.5 * scene.ambient
    return out


def _measure_amcw(scene, freq, noise, att, wave):
    unit = _amcw_unit_measurements(scene, freq, att, wave)
    if noise is None:
        return unit, scene.depth > 0
    stack = MeasurementStack(K=4, clean=noise.photon_scale * unit,
                             valid=scene.depth > 0)
    return apply_noise(stack, noise).noisy, stack.valid


def itof_single_frequency(scene, freq, noise, att, wave="sine") -> DepthEstimate:
    """AMCW 4-step decode at one frequency; depths beyond c/(2f) wrap."""
    if freq <= 0:
        raise ConfigurationError("modulation frequency must be positive")
    meas, scene_valid = _measure_amcw(scene, freq, noise, att, wave)
    phase, ps_valid = phase_shift_4step(meas)
    depth = SPEED_OF_LIGHT * phase / (4.0 * np.pi * freq)
    est = DepthEstimate(depth=depth, valid=scene_valid & ps_valid,
                        method=f"single-freq-{wave}")
    est.mae_mm = mae(est, scene) if np.any(est.valid) else None
    return est


def itof_dual_frequency(scene, f_low, f_high, noise, att,
                        wave="sine") -> DepthEstimate:
    """Unwrap the high-frequency phase with the low-frequency estimate."""
    if not (0 < f_low < f_high):
        raise ConfigurationError("need 0 < f_low < f_high")
    lo = itof_single_frequency(scene, f_low, noise, att, wave)
    if noise is not None:
        # independent noise stream for the second frequency capture
        noise = NoiseModel(noise.dark_expectation, noise.readout_sigma,
                           noise.photon_scale, seed=noise.seed + 1)
    hi = itof_single_frequency(scene, f_high, noise, att, wave)
    period = SPEED_OF_LIGHT / (2.0 * f_high)
    frac = (lo.depth - hi.depth) / period
    k = np.round(frac)
    consistent = np.abs(frac - k) <= 0.35
    # the unwrapped estimate is only defined modulo the low-frequency range;
    # folding it back rescues pixels whose noisy low phase wrapped past zero
    range_low = SPEED_OF_LIGHT / (2.0 * f_low)
    depth = np.mod(hi.depth + k * period, range_low)
    est = DepthEstimate(depth=depth,
                        valid=lo.valid & hi.valid & consistent,
                        method=f"dual-freq-{wave}")
    est.mae_mm = mae(est, scene) if np.any(est.valid) else None
    return est


def build_lookup(coding, timing, att, grid_step) -> LookupTable:
    """Precompute zero-mean unit-norm clean signatures over the depth window.

    Signatures are built ambient-free at unit albedo; the normalization is
    what removes the per-pixel gain and offset at decode time.
    """
    if not coding.frozen:
        raise StateError("build_lookup requires frozen codes")
    if grid_step <= 0:
        raise ConfigurationError("grid_step must be positive")
    lo, hi = depth_window(timing)
    depths = np.arange(lo, hi, grid_step)
    if depths[0] <= 0:  # window starting at zero delay; keep depth positive
        depths[0] = 0.5 * grid_step
    g = shifted_pulse(timing, depths)                       # (N, M)
    f = attenuation(att, depths)
    sig = f[:, None] * (g @ coding.values.T) / timing.M     # (N, K)
    centered = sig - sig.mean(axis=1, keepdims=True)
    norms = np.linalg.norm(centered, axis=1)
    ok = norms > 1e-12 * np.maximum(np.linalg.norm(sig, axis=1), 1e-300)
    n_bad = int(np.count_nonzero(~ok))
    if not np.any(ok):
        raise NumericError(
            "all lookup signatures are degenerate; codes carry no depth "
            "information (identical channels?)")
    if n_bad:
        warnings.warn(f"lookup: excluded {n_bad} degenerate depth entries")
    table = centered[ok] / norms[ok, None]
    return LookupTable(depth_grid=depths[ok], signatures=table,
                       grid_step=grid_step)


def decode_lookup(stack: MeasurementStack, table: LookupTable,
                  refine=True) -> DepthEstimate:
    """Per-pixel ZNCC match against the signature table.

    Measurements are zero-meaned and unit-normed across K, so decoding is
    invariant to per-pixel positive gain and common offset. Parabolic
    interpolation over the best neighbor pair refines below grid_step.
    """
    meas = stack.noisy if stack.noisy is not None else stack.clean
    k, h, w = meas.shape
    if k != table.signatures.shape[1]:
        raise ConfigurationError("stack K does not match lookup signature size")
    x = meas.reshape(k, -1).T                       # (P, K)
    centered = x - x.mean(axis=1, keepdims=True)
    norms = np.linalg.norm(centered, axis=1)
    ok = norms > 0
    xn = np.zeros_like(centered)
    xn[ok] = centered[ok] / norms[ok, None]
    scores = xn @ table.signatures.T                # (P, N)
    best = np.argmax(scores, axis=1)
    depth = table.depth_grid[best]
    if refine:
        n = table.depth_grid.size
        interior = (best > 0) & (best < n - 1) & ok
        ii = np.flatnonzero(interior)
        s0 = scores[ii, best[ii] - 1]
        s1 = scores[ii, best[ii]]
        s2 = scores[ii, best[ii] + 1]
        denom = s0 - 2.0 * s1 + s2
        delta = np.where(np.abs(denom) > 1e-300,
                         0.5 * (s0 - s2) / denom, 0.0)
        delta = np.clip(delta, -0.5, 0.5)
        step = np.diff(table.depth_grid).mean()
        depth[ii] = depth[ii] + delta * step
    est = DepthEstimate(depth=depth.reshape(h, w),
                        valid=(ok.reshape(h, w) & stack.valid),
                        method="lookup")
    return est


def mae(estimate: DepthEstimate, scene) -> float:
    """Mean absolute depth error in millimeters over jointly valid pixels."""
    mask = estimate.valid & (scene.depth > 0)
    if not np.any(mask):
        raise NumericError("MAE undefined: no valid pixels")
    return float(np.mean(np.abs(estimate.depth[mask] - scene.depth[mask]))
                 * 1000.0)
