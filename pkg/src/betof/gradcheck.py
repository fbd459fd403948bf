"""Finite-difference validation of every analytic gradient in the toolkit.

Shared between the test suite and the `check-gradients` CLI subcommand.
Each check returns the maximum relative error it observed; thresholds are
applied by the caller.
"""

import numpy as np

from .coding import (CodingSet, LossWeights, init_codes, loss_double_well,
                     loss_first_difference, loss_fisher)
from .learn import (MlpDecoder, composite_loss, decoder_backward,
                    decoder_forward, make_decoder)
from .physics import (AttenuationModel, NoiseModel, TimingConfig,
                      integrate_measurements, measurement_depth_derivative)
from .scene import Scene, SceneSpec, generate_scene


def _rel(a, b, floor=1e-8):
    return abs(a - b) / max(abs(a), abs(b), floor)


def _random_coding(k=4, m=200, seed=0, timing=None):
    rng = np.random.Generator(np.random.Philox(key=np.uint64(seed)))
    vals = rng.uniform(0.02, 0.98, size=(k, m))
    return CodingSet(k, m, vals, timing=timing)


def check_double_well(n_coords=100, seed=0):
    coding = _random_coding(seed=seed)
    _, grad = loss_double_well(coding)
    rng = np.random.Generator(np.random.Philox(key=np.uint64(seed + 1)))
    h = 1e-6
    worst = 0.0
    for _ in range(n_coords):
        i = int(rng.integers(coding.K))
        j = int(rng.integers(coding.M))
        up = coding.copy()
        up.values[i, j] += h
        dn = coding.copy()
        dn.values[i, j] -= h
        fd = (loss_double_well(up)[0] - loss_double_well(dn)[0]) / (2 * h)
        worst = max(worst, _rel(grad[i, j], fd))
    return worst


def check_first_difference(n_coords=100, seed=0):
    coding = _random_coding(seed=seed)
    _, grad = loss_first_difference(coding)
    rng = np.random.Generator(np.random.Philox(key=np.uint64(seed + 1)))
    h = 1e-5
    scale = max(np.max(np.abs(grad)), 1e-12)
    worst = 0.0
    for _ in range(n_coords):
        i = int(rng.integers(coding.K))
        j = int(rng.integers(coding.M))
        up = coding.copy()
        up.values[i, j] += h
        dn = coding.copy()
        dn.values[i, j] -= h
        fd = (loss_first_difference(up)[0]
              - loss_first_difference(dn)[0]) / (2 * h)
        # scale-relative: coordinates where both halves of the smoothed
        # |.| nearly cancel have gradients ~0 and pure FD roundoff
        worst = max(worst, abs(grad[i, j] - fd)
                    / max(abs(grad[i, j]), abs(fd), 1e-3 * scale))
    return worst


def _smooth_ramp_scene(timing, width=32, height=8):
    """Ramp whose depths sit well inside the linear cells of the echo shift."""
    from .physics import SPEED_OF_LIGHT, depth_window
    lo, hi = depth_window(timing)
    cell = SPEED_OF_LIGHT * timing.dt / 2.0
    idx = np.arange(width)
    depths = lo + cell * (3 + idx * 7) + 0.31 * cell
    depths = np.minimum(depths, hi - 3 * cell)
    depth = np.tile(depths, (height, 1))
    rng = np.random.Generator(np.random.Philox(key=np.uint64(12)))
    albedo = rng.uniform(0.3, 1.0, size=depth.shape)
    ambient = np.full(depth.shape, 0.1)
    return Scene(width, height, albedo, ambient, depth)


def _fisher_setup(seed=0, m=500):
    timing = TimingConfig(tau=200e-9, M=m)
    att = AttenuationModel()
    noise = NoiseModel(dark_expectation=20.0, readout_sigma=3.0,
                       photon_scale=500.0)
    scene = _smooth_ramp_scene(timing)
    coding = _random_coding(m=m, seed=seed, timing=timing)
    return scene, coding, timing, att, noise


def check_fisher_depth_derivative(seed=0, step=1e-3):
    """Analytic dI/dd vs central differences in depth (1 mm step)."""
    scene, coding, timing, att, noise = _fisher_setup(seed)
    ana = measurement_depth_derivative(scene, coding, timing, att,
                                       photon_scale=noise.photon_scale)

    def clean(depth_grid):
        s = Scene(scene.width, scene.height, scene.albedo, scene.ambient,
                  depth_grid)
        return integrate_measurements(s, coding, timing, att,
                                      photon_scale=noise.photon_scale).clean

    fd = (clean(scene.depth + step) - clean(scene.depth - step)) / (2 * step)
    scale = max(np.max(np.abs(ana)), 1e-12)
    return float(np.max(np.abs(ana - fd)) / scale)


def check_fisher_code_gradient(seed=0, n_coords=40):
    scene, coding, timing, att, noise = _fisher_setup(seed)
    value, grad = loss_fisher(scene, coding, timing, att, noise)
    rng = np.random.Generator(np.random.Philox(key=np.uint64(seed + 5)))
    h = 1e-6
    scale = max(np.max(np.abs(grad)), 1e-12)
    worst = 0.0
    for _ in range(n_coords):
        i = int(rng.integers(coding.K))
        j = int(rng.integers(coding.M))
        up = coding.copy()
        up.values[i, j] += h
        dn = coding.copy()
        dn.values[i, j] -= h
        fd = (loss_fisher(scene, up, timing, att, noise)[0]
              - loss_fisher(scene, dn, timing, att, noise)[0]) / (2 * h)
        worst = max(worst, abs(grad[i, j] - fd) / max(abs(grad[i, j]),
                                                      abs(fd), 1e-6 * scale))
    return worst


def check_decoder_backward(seed=0, n_params=100):
    timing = TimingConfig(tau=200e-9)
    decoder = make_decoder(4, (8, 6), timing, seed=seed)
    rng = np.random.Generator(np.random.Philox(key=np.uint64(seed + 9)))
    feats = rng.normal(0, 1, size=(16, 5))
    up = rng.normal(0, 1, size=16)
    gws, gbs, gin = decoder_backward(decoder, feats, up)

    def value(dec):
        return float(np.sum(up * decoder_forward(dec, feats)))

    h = 1e-5
    worst = 0.0
    flat = [(li, "w", idx) for li, w in enumerate(decoder.weights)
            for idx in np.ndindex(w.shape)] + \
           [(li, "b", idx) for li, b in enumerate(decoder.biases)
            for idx in np.ndindex(b.shape)]
    picks = rng.choice(len(flat), size=min(n_params, len(flat)), replace=False)
    for pi in picks:
        li, kind, idx = flat[pi]
        dec = decoder.copy()
        arr = dec.weights[li] if kind == "w" else dec.biases[li]
        arr[idx] += h
        v_up = value(dec)
        arr[idx] -= 2 * h
        v_dn = value(dec)
        fd = (v_up - v_dn) / (2 * h)
        ana = (gws if kind == "w" else gbs)[li][idx]
        worst = max(worst, _rel(ana, fd, floor=1e-7))
    # input gradient on a handful of coordinates
    for _ in range(20):
        r = int(rng.integers(feats.shape[0]))
        c = int(rng.integers(feats.shape[1]))
        fu = feats.copy()
        fu[r, c] += h
        fdn = feats.copy()
        fdn[r, c] -= h
        fd = (float(np.sum(up * decoder_forward(decoder, fu)))
              - float(np.sum(up * decoder_forward(decoder, fdn)))) / (2 * h)
        worst = max(worst, _rel(gin[r, c], fd, floor=1e-7))
    return worst


def check_end_to_end_code_gradient(seed=0, n_coords=12):
    """FD through simulate + featurize + decode + composite loss, 8x8 scene."""
    timing = TimingConfig(tau=200e-9, M=200)
    att = AttenuationModel()
    noise = NoiseModel(dark_expectation=20.0, readout_sigma=3.0,
                       photon_scale=500.0)
    scene = generate_scene(SceneSpec(
        "ramp", (30.2, 32.8), "noise-texture", 0.05, 8, 8, seed=seed))
    coding = _random_coding(m=200, seed=seed, timing=timing)
    decoder = make_decoder(4, (8,), timing, seed=seed + 1)
    weights = LossWeights(gamma1=1e-5, gamma2=0.1, gamma3=0.1, schedule=[])

    def value(cs):
        v, *_ = composite_loss(scene, cs, timing, att, noise, decoder,
                               weights)
        return v

    _, _, _, _, grad, _ = composite_loss(scene, coding, timing, att, noise,
                                         decoder, weights)
    rng = np.random.Generator(np.random.Philox(key=np.uint64(seed + 3)))
    h = 1e-6
    scale = max(np.max(np.abs(grad)), 1e-12)
    worst = 0.0
    for _ in range(n_coords):
        i = int(rng.integers(coding.K))
        j = int(rng.integers(coding.M))
        up = coding.copy()
        up.values[i, j] += h
        dn = coding.copy()
        dn.values[i, j] -= h
        fd = (value(up) - value(dn)) / (2 * h)
        worst = max(worst, abs(grad[i, j] - fd) / max(abs(grad[i, j]),
                                                      abs(fd), 1e-4 * scale))
    return worst


ALL_CHECKS = [
    ("double_well", check_double_well, 1e-5),
    ("first_difference", check_first_difference, 1e-5),
    ("fisher_depth_derivative", check_fisher_depth_derivative, 1e-4),
    ("fisher_code_gradient", check_fisher_code_gradient, 1e-4),
    ("decoder_backward", check_decoder_backward, 1e-5),
    ("end_to_end_code_gradient", check_end_to_end_code_gradient, 1e-3),
]


def run_all(verbose=True):
    """Run every FD suite; returns list of (name, max rel error, threshold, ok)."""
    results = []
    for name, fn, thresh in ALL_CHECKS:
        err = fn()
        ok = err < thresh
        results.append((name, err, thresh, ok))
        if verbose:
            print(f"{name:28s} max rel err {err:.3e}  "
                  f"(threshold {thresh:g})  {'PASS' if ok else 'FAIL'}")
    return results
