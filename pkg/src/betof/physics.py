"""Discretized burst-mode ToF forward model.

The emitted pulse train has period T_burst; the sensor integrates the echo
against K demodulation codes over the window [tau, tau + T_m], sampled at M
midpoints. The echo shift by 2 d / c is realized as a circular shift of the
sampled pulse with linear interpolation, so clean measurements are piecewise
linear (hence differentiable almost everywhere) in depth.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, DomainError, NumericError

SPEED_OF_LIGHT = 299_792_458.0  # m/s, exact


@dataclass
class TimingConfig:
    T_burst: float = 5e-6       # burst period, s (200 kHz)
    T_m: float = 50e-9          # demodulation window, s
    tau: float = 0.0            # demodulation delay, s
    pulse_width: float = 20e-9  # emitted pulse width, s
    M: int = 1000               # samples per window
    N_rep: int = 1              # burst repetitions folded into the exposure

    def __post_init__(self):
        if not (0 < self.pulse_width <= self.T_m <= self.T_burst):
            raise ConfigurationError(
                "need 0 < pulse_width <= T_m <= T_burst, got "
                f"pw={self.pulse_width}, T_m={self.T_m}, T_burst={self.T_burst}")
        if not (0 <= self.tau <= self.T_burst - self.T_m):
            raise ConfigurationError(
                f"tau={self.tau} outside [0, T_burst - T_m]")
        if self.M < 2:
            raise ConfigurationError("M must be >= 2")
        if self.N_rep < 1:
            raise ConfigurationError("N_rep must be >= 1")

    @property
    def dt(self):
        return self.T_m / self.M

    @property
    def sample_times(self):
        """Midpoint sample times within the window, relative to t = 0."""
        return self.tau + (np.arange(self.M) + 0.5) * self.dt


@dataclass
class NoiseModel:
    dark_expectation: float = 0.0  # E(n_d), photoelectrons
    readout_sigma: float = 0.0     # sigma_r, photoelectrons
    photon_scale: float = 1.0      # photoelectrons per unit clean signal
    seed: int = 0

    def __post_init__(self):
        if self.dark_expectation < 0:
            raise ConfigurationError("dark_expectation must be >= 0")
        if self.readout_sigma < 0:
            raise ConfigurationError("readout_sigma must be >= 0")
        if self.photon_scale <= 0:
            raise ConfigurationError("photon_scale must be > 0")

    @property
    def bias_power(self):
        """Expected squared deviation of X - I for zero signal:
        Var + bias^2 = (dark + sigma_r^2) + dark^2."""
        return (self.dark_expectation + self.readout_sigma**2
                + self.dark_expectation**2)


@dataclass
class AttenuationModel:
    reference_distance: float = 1.0  # d_0, meters
    exponent: float = 2.0
    floor: float = 1e-6              # minimum coefficient

    def __post_init__(self):
        if self.reference_distance <= 0:
            raise ConfigurationError("reference_distance must be > 0")
        if self.exponent < 0:
            raise ConfigurationError("exponent must be >= 0")
        if not (0 < self.floor <= 1):
            raise ConfigurationError("floor must lie in (0, 1]")


@dataclass
class MeasurementStack:
    K: int
    clean: np.ndarray            # (K, H, W) photoelectrons
    noisy: np.ndarray = None     # (K, H, W) after apply_noise
    snr_db: float = None         # realized SNR of the noisy stack
    valid: np.ndarray = None     # (H, W) pixels with a live echo model

    def __post_init__(self):
        self.clean = np.asarray(self.clean, dtype=np.float64)
        if self.K < 3:
            raise ConfigurationError("K >= 3 measurements are required")
        if self.clean.shape[0] != self.K:
            raise ConfigurationError("clean stack channel count mismatch")
        if self.clean.min() < 0:
            raise ConfigurationError("clean measurements must be >= 0")
        if self.valid is None:
            self.valid = np.ones(self.clean.shape[1:], dtype=bool)


def max_unambiguous_range(timing: TimingConfig) -> float:
    """Largest depth measurable without burst-period wrapping."""
    return SPEED_OF_LIGHT * timing.T_burst / 2.0


def depth_window(timing: TimingConfig):
    """Depth sub-range observable at delay tau: [c tau / 2, c (tau + T_m) / 2]."""
    lo = SPEED_OF_LIGHT * timing.tau / 2.0
    hi = SPEED_OF_LIGHT * (timing.tau + timing.T_m) / 2.0
    return lo, hi


def emission_waveform(timing: TimingConfig):
    """Unit rectangular pulse sampled at the M window midpoints (no shift)."""
    t = (np.arange(timing.M) + 0.5) * timing.dt
    return (t < timing.pulse_width).astype(np.float64)


def _pulse_on_count(timing):
    # number of midpoint samples inside the pulse = round(M * pw / T_m)
    return int(np.count_nonzero(emission_waveform(timing)))


def shifted_pulse(timing: TimingConfig, depths, with_derivative=False):
    """Sampled echo waveform for each depth.

    Returns (P, M) values of the linearly interpolated pulse, circularly
    shifted by 2 d / c within the burst period and restricted to the window.
    With with_derivative=True also returns d(value)/d(depth), piecewise
    constant with one-sided convention at sample boundaries.
    """
    depths = np.atleast_1d(np.asarray(depths, dtype=np.float64))
    dt = timing.dt
    k_on = _pulse_on_count(timing)
    t = timing.sample_times  # (M,)
    shift = 2.0 * depths / SPEED_OF_LIGHT  # (P,)
    u = t[None, :] - shift[:, None]
    # wrap into [-dt/2, T_burst - dt/2) so the rising edge is contiguous
    u = np.mod(u + dt / 2.0, timing.T_burst) - dt / 2.0

    vals = np.zeros_like(u)
    dv_du = np.zeros_like(u) if with_derivative else None
    if k_on <= 0:
        return (vals, dv_du) if with_derivative else vals
    if k_on * dt >= timing.T_burst:  # pulse fills the whole burst
        vals[:] = 1.0
        return (vals, dv_du) if with_derivative else vals

    rise = (u >= -dt / 2.0) & (u < dt / 2.0)
    plateau = (u >= dt / 2.0) & (u < (k_on - 0.5) * dt)
    fall = (u >= (k_on - 0.5) * dt) & (u < (k_on + 0.5) * dt)
    vals[rise] = (u[rise] + dt / 2.0) / dt
    vals[plateau] = 1.0
    vals[fall] = 1.0 - (u[fall] - (k_on - 0.5) * dt) / dt
    if with_derivative:
        # du/dd = -2/c
        dv_du[rise] = 1.0 / dt
        dv_du[fall] = -1.0 / dt
        dv_dd = dv_du * (-2.0 / SPEED_OF_LIGHT)
        return vals, dv_dd
    return vals


def attenuation(model: AttenuationModel, depth):
    """Distance falloff coefficient min(1, max(floor, (d0 / d)^exponent))."""
    depth = np.asarray(depth, dtype=np.float64)
    if np.any(depth <= 0):
        raise DomainError("attenuation requires depth > 0")
    coeff = (model.reference_distance / depth) ** model.exponent
    return np.clip(coeff, model.floor, 1.0)


def attenuation_derivative(model: AttenuationModel, depth):
    """d(coefficient)/d(depth); zero on the clamped branches."""
    depth = np.asarray(depth, dtype=np.float64)
    if np.any(depth <= 0):
        raise DomainError("attenuation requires depth > 0")
    coeff = (model.reference_distance / depth) ** model.exponent
    grad = -model.exponent * coeff / depth
    clamped = (coeff <= model.floor) | (coeff >= 1.0)
    return np.where(clamped, 0.0, grad)


def integrate_measurements(scene, coding, timing: TimingConfig,
                           att: AttenuationModel,
                           photon_scale: float = 1.0) -> MeasurementStack:
    """Clean coded measurements of a scene (Riemann sum over the window).

    Per pixel and channel, I_i = N_rep * photon_scale *
    sum_j R(t_j) D_i(t_j) dt / T_m, with R the attenuated shifted echo plus
    ambient. Normalized so an all-open code over a full-duty pulse with
    albedo 1, no attenuation and no ambient yields N_rep * photon_scale.
    """
    if coding.M != timing.M:
        raise ConfigurationError(
            f"coding sampled at M={coding.M} but timing has M={timing.M}")
    if coding.K < 3:
        raise ConfigurationError("K >= 3 measurements are required")
    h, w = scene.height, scene.width
    depth = scene.depth.ravel()
    rho = scene.albedo.ravel()
    amb = scene.ambient.ravel()
    valid = depth > 0

    amp = timing.N_rep * photon_scale
    D = coding.values  # (K, M)
    duty = D.sum(axis=1) / timing.M  # per-channel code duty, (K,)

    signal = np.zeros((depth.size, coding.K))
    if np.any(valid):
        g = shifted_pulse(timing, depth[valid])  # (P_valid, M)
        f = attenuation(att, depth[valid])
        # echo part: rho * F * (g @ D.T) / M; ambient integrates against duty
        signal[valid] = (rho[valid] * f)[:, None] * (g @ D.T) / timing.M
    I = amp * (signal + amb[:, None] * duty[None, :])
    clean = I.T.reshape(coding.K, h, w)
    return MeasurementStack(K=coding.K, clean=clean,
                            valid=valid.reshape(h, w))


def measurement_depth_derivative(scene, coding, timing, att,
                                 photon_scale: float = 1.0):
    """Analytic d(clean I_i)/d(depth) per pixel and channel, shape (K, H, W).

    Chain rule through the interpolated echo shift and the attenuation
    falloff; zero for invalid (depth <= 0) pixels.
    """
    if coding.M != timing.M:
        raise ConfigurationError("coding/timing sample-grid mismatch")
    h, w = scene.height, scene.width
    depth = scene.depth.ravel()
    rho = scene.albedo.ravel()
    valid = depth > 0

    amp = timing.N_rep * photon_scale
    D = coding.values
    out = np.zeros((depth.size, coding.K))
    if np.any(valid):
        g, dg = shifted_pulse(timing, depth[valid], with_derivative=True)
        f = attenuation(att, depth[valid])
        df = attenuation_derivative(att, depth[valid])
        inner = (rho * np.ones_like(depth))[valid, None] * (
            f[:, None] * dg + df[:, None] * g)
        out[valid] = (inner @ D.T) / timing.M
    return amp * out.T.reshape(coding.K, h, w)


def apply_noise(stack: MeasurementStack, noise: NoiseModel) -> MeasurementStack:
    """Sample X = Poisson(I + E(n_d)) + N(0, sigma_r^2), deterministic per seed.

    The Poisson rate includes the clean signal so the sampled variance matches
    the sigma_i^2 = E(I) + E(n_d) + sigma_r^2 model used by the Fisher loss.
    """
    rng = np.random.Generator(np.random.Philox(key=np.uint64(noise.seed)))
    lam = stack.clean + noise.dark_expectation
    noisy = rng.poisson(lam).astype(np.float64)
    if noise.readout_sigma > 0:
        noisy += rng.normal(0.0, noise.readout_sigma, size=stack.clean.shape)
    snr = realized_snr_db(stack.clean, noisy, stack.valid)
    return MeasurementStack(K=stack.K, clean=stack.clean, noisy=noisy,
                            snr_db=snr, valid=stack.valid)


def realized_snr_db(clean, noisy, valid=None):
    """10 log10(mean I^2 / mean (X - I)^2) over valid pixels."""
    clean = np.asarray(clean, dtype=np.float64)
    noisy = np.asarray(noisy, dtype=np.float64)
    if valid is not None:
        clean = clean[:, valid]
        noisy = noisy[:, valid]
    sig = np.mean(clean**2)
    err = np.mean((noisy - clean) ** 2)
    if err == 0:
        return np.inf
    return 10.0 * np.log10(sig / err)


def analytic_snr_db(unit_clean, photon_scale, noise: NoiseModel, valid=None):
    """Expected realized SNR for clean = photon_scale * unit_clean.

    Expected noise power per sample is Var(X - I) + bias^2 =
    I + dark + sigma_r^2 + dark^2, averaged over valid pixels.
    """
    unit_clean = np.asarray(unit_clean, dtype=np.float64)
    if valid is not None:
        unit_clean = unit_clean[:, valid]
    sig = photon_scale**2 * np.mean(unit_clean**2)
    noise_power = photon_scale * np.mean(unit_clean) + noise.bias_power
    if sig <= 0:
        return -np.inf
    return 10.0 * np.log10(sig / noise_power)


def scale_for_snr(unit_clean, noise: NoiseModel, target_snr_db,
                  valid=None, tol_db=0.001):
    """Bisection on photon_scale until the analytic SNR meets the target."""
    unit_clean = np.asarray(unit_clean, dtype=np.float64)
    if valid is not None:
        flat = unit_clean[:, valid]
    else:
        flat = unit_clean
    if flat.size == 0 or np.all(flat == 0):
        raise NumericError("cannot calibrate SNR: clean signal is identically zero")

    def f(ps):
        return analytic_snr_db(unit_clean, ps, noise, valid) - target_snr_db

    lo, hi = 1e-12, 1.0
    while f(hi) < 0:
        hi *= 4.0
        if hi > 1e18:
            raise NumericError("SNR target unreachable")
    for _ in range(200):
        mid = np.sqrt(lo * hi)  # geometric bisection, scale spans decades
        if f(mid) < 0:
            lo = mid
        else:
            hi = mid
        if abs(f(mid)) < tol_db:
            return mid
    return np.sqrt(lo * hi)


def calibrate_photon_scale(scene, coding, timing, att, noise: NoiseModel,
                           target_snr_db) -> float:
    """Photon scale reproducing the target analytic SNR on this scene."""
    unit = integrate_measurements(scene, coding, timing, att, photon_scale=1.0)
    return scale_for_snr(unit.clean, noise, target_snr_db, valid=unit.valid)
