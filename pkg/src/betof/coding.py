"""Learnable demodulation codes and their regularization/information losses.

Codes are direct sample values in [0, 1] (box-projected after every update);
freezing thresholds them to the binary gates the exposure hardware supports.
All losses return (value, gradient-with-respect-to-code-samples).
"""

import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, StateError
from .physics import (TimingConfig, attenuation, attenuation_derivative,
                      shifted_pulse)


@dataclass
class CodingSet:
    K: int
    M: int
    values: np.ndarray           # (K, M) in [0, 1]; {0, 1} once frozen
    timing: TimingConfig = None
    frozen: bool = False

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.K < 3:
            raise ConfigurationError("K >= 3 coding functions are required")
        if self.values.shape != (self.K, self.M):
            raise ConfigurationError(
                f"code grid shape {self.values.shape} != {(self.K, self.M)}")
        if self.values.min() < 0 or self.values.max() > 1:
            raise ConfigurationError("code values must lie in [0, 1]")
        if self.frozen and not np.all(np.isin(self.values, (0.0, 1.0))):
            raise ConfigurationError("frozen codes must be binary")

    def copy(self):
        return CodingSet(self.K, self.M, self.values.copy(),
                         timing=self.timing, frozen=self.frozen)


@dataclass
class LossWeights:
    gamma1: float = 5e-4  # Fisher guidance
    gamma2: float = 5e-2  # double well
    gamma3: float = 5.0   # first-order difference
    # (epoch, gamma1, gamma2) switch points, applied in order
    schedule: list = field(default_factory=lambda: [(40, 5e-5, 1.0)])

    def __post_init__(self):
        if min(self.gamma1, self.gamma2, self.gamma3) < 0:
            raise ConfigurationError("loss weights must be >= 0")

    def at_epoch(self, epoch):
        """Weights in effect at a given epoch, after any schedule switches."""
        g1, g2 = self.gamma1, self.gamma2
        for start, s1, s2 in sorted(self.schedule):
            if epoch >= start:
                g1, g2 = s1, s2
        return LossWeights(g1, g2, self.gamma3, schedule=[])


def init_codes(K, M, timing=None, seed=0) -> CodingSet:
    """Xavier-style uniform initialization scaled into [0, 1] around 0.5."""
    rng = np.random.Generator(np.random.Philox(key=np.uint64(seed)))
    a = np.sqrt(6.0 / (K + M))
    vals = np.clip(0.5 + rng.uniform(-a, a, size=(K, M)), 0.0, 1.0)
    return CodingSet(K, M, vals, timing=timing)


def square_codes(K, M, timing=None, duty=0.5) -> CodingSet:
    """Classic shifted square gates: duty-cycle gates at phase i/K."""
    j = np.arange(M)
    vals = np.zeros((K, M))
    for i in range(K):
        vals[i] = ((j - i * M // K) % M) < int(round(duty * M))
    return CodingSet(K, M, vals, timing=timing, frozen=True)


def double_well_value(x):
    """Quartic with equal minima at 0 and 1: 4(x-0.5)^4 - 2(x-0.5)^2."""
    y = np.asarray(x, dtype=np.float64) - 0.5
    return 4.0 * y**4 - 2.0 * y**2


def double_well_grad(x):
    y = np.asarray(x, dtype=np.float64) - 0.5
    return 16.0 * y**3 - 4.0 * y


def loss_double_well(coding: CodingSet):
    """Sum of the double-well potential over all code samples."""
    if coding.frozen:
        raise StateError("double-well loss is for unfrozen codes")
    value = float(np.sum(double_well_value(coding.values)))
    return value, double_well_grad(coding.values)


def loss_first_difference(coding: CodingSet, eps=0.002):
    """Total variation along each code; suppresses narrow peaks.

    Uses the smoothed absolute value sqrt(d^2 + eps^2) - eps so the gradient
    is continuous at d = 0; the raw subgradient kicks samples that dip below
    a neighbor much harder than the double well restores them, which leaves
    non-binary shoulders rattling around every transition.
    """
    if coding.frozen:
        raise StateError("first-difference loss is for unfrozen codes")
    d = np.diff(coding.values, axis=1)
    r = np.sqrt(d * d + eps * eps)
    value = float(np.sum(r - eps))
    s = d / r
    grad = np.zeros_like(coding.values)
    grad[:, 1:] += s
    grad[:, :-1] -= s
    return value, grad


def loss_fisher(scene, coding: CodingSet, timing: TimingConfig, att, noise):
    """Negative depth Fisher information of the clean forward model.

    value = -mean_s sum_i [1/(2 sigma_i^4) + 1/sigma_i^2] (dE(I_i)/dd)^2 with
    sigma_i^2 = E(I_i) + E(n_d) + sigma_r^2; the mean runs over valid pixels
    so the loss scale does not grow with scene size. The gradient w.r.t. code
    samples chains through both the depth derivative and sigma.
    Pixel-channels with sigma = 0 are excluded (counted in a warning).
    """
    if coding.M != timing.M:
        raise ConfigurationError("coding/timing sample-grid mismatch")
    depth = scene.depth.ravel()
    rho = scene.albedo.ravel()
    amb = scene.ambient.ravel()
    valid = depth > 0
    D = coding.values
    amp = timing.N_rep * noise.photon_scale
    var_floor = noise.dark_expectation + noise.readout_sigma**2

    if not np.any(valid):
        return 0.0, np.zeros_like(D)

    g, dg = shifted_pulse(timing, depth[valid], with_derivative=True)
    f = attenuation(att, depth[valid])
    df = attenuation_derivative(att, depth[valid])
    r = rho[valid, None]
    R = r * f[:, None] * g + amb[valid, None]           # (P, M) echo + ambient
    S = r * (f[:, None] * dg + df[:, None] * g)         # (P, M) d/dd of echo

    I = amp * (R @ D.T) / timing.M                      # (P, K)
    dId = amp * (S @ D.T) / timing.M                    # (P, K)
    sig2 = I + var_floor
    dead = sig2 <= 0
    n_dead = int(np.count_nonzero(dead))
    if n_dead:
        warnings.warn(f"fisher loss: excluded {n_dead} pixel-channels with "
                      "zero noise variance")
        sig2 = np.where(dead, 1.0, sig2)
    w = 0.5 / sig2**2 + 1.0 / sig2
    dw = -1.0 / sig2**3 - 1.0 / sig2**2                 # dw/d(sigma^2)
    live = ~dead
    n_px = int(np.count_nonzero(valid))
    value = -float(np.sum((w * dId**2)[live])) / n_px

    # d value / d D[i, j]; sigma^2 depends on D through I
    a = np.where(live, 2.0 * w * dId, 0.0)              # weight on dId term
    b = np.where(live, dw * dId**2, 0.0)                # weight on sigma term
    grad = -(amp / (timing.M * n_px)) * (a.T @ S + b.T @ R)
    return value, grad


def project_box(coding: CodingSet) -> CodingSet:
    """Clamp every code sample into [0, 1]."""
    vals = np.clip(coding.values, 0.0, 1.0)
    return CodingSet(coding.K, coding.M, vals, timing=coding.timing,
                     frozen=coding.frozen)


def freeze_binary(coding: CodingSet, threshold=0.5):
    """Threshold codes to {0, 1}; returns (frozen set, moved fraction).

    moved fraction counts samples displaced by more than 0.05.
    """
    if coding.frozen:
        raise StateError("coding set is already frozen")
    binary = (coding.values >= threshold).astype(np.float64)
    moved = float(np.mean(np.abs(binary - coding.values) > 0.05))
    return CodingSet(coding.K, coding.M, binary, timing=coding.timing,
                     frozen=True), moved


def transition_count(coding: CodingSet):
    """Number of 0-1 flips per channel; requires frozen codes."""
    if not coding.frozen:
        raise StateError("transition_count requires frozen codes")
    return [int(n) for n in
            np.sum(np.abs(np.diff(coding.values, axis=1)) > 0.5, axis=1)]


def save_coding(coding: CodingSet, path):
    """CSV serialization: header rows (K, M, T_m, tau, frozen) + K value rows."""
    t_m = coding.timing.T_m if coding.timing is not None else 0.0
    tau = coding.timing.tau if coding.timing is not None else 0.0
    with open(path, "w") as f:
        f.write(f"K,{coding.K}\n")
        f.write(f"M,{coding.M}\n")
        f.write(f"T_m,{t_m!r}\n")
        f.write(f"tau,{tau!r}\n")
        f.write(f"frozen,{int(coding.frozen)}\n")
        for row in coding.values:
            f.write(",".join(repr(float(v)) for v in row) + "\n")


def load_coding(path, timing=None) -> CodingSet:
    """Inverse of save_coding; bit-exact round trip of the value grid."""
    try:
        with open(path) as f:
            lines = [ln.rstrip("\n") for ln in f]
    except OSError as e:
        raise ConfigurationError(f"cannot read coding file {path}: {e}") \
            from None
    try:
        head = dict(ln.split(",", 1) for ln in lines[:5])
        K, M = int(head["K"]), int(head["M"])
        frozen = bool(int(head["frozen"]))
    except (KeyError, ValueError) as e:
        raise ConfigurationError(f"malformed coding file header: {e}") from None
    vals = np.array([[float(v) for v in ln.split(",")] for ln in lines[5:5 + K]])
    if vals.shape != (K, M):
        raise ConfigurationError(
            f"coding file value grid {vals.shape} does not match header {(K, M)}")
    return CodingSet(K, M, vals, timing=timing, frozen=frozen)
