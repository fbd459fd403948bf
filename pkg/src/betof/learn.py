"""Joint optimization of demodulation codes and a small per-pixel decoder.

The decoder is a plain MLP over K gain/offset-normalized measurements plus a
relative total-intensity feature; its output is squashed into the depth
window. All gradients are hand-written reverse mode and validated against
finite differences in the test suite.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .coding import (CodingSet, LossWeights, freeze_binary, init_codes,
                     loss_double_well, loss_first_difference, loss_fisher,
                     project_box)
from .errors import ConfigurationError, DomainError, NumericError
from .physics import (apply_noise, attenuation, calibrate_photon_scale,
                      depth_window, integrate_measurements, shifted_pulse)

RANDOM_SNR = "random"


@dataclass
class MlpDecoder:
    weights: list                # per layer, (out, in)
    biases: list                 # per layer, (out,)
    activation: str = "relu"
    out_lo: float = 0.0          # depth window the sigmoid output maps into
    out_hi: float = 1.0

    def __post_init__(self):
        if self.activation not in ("relu", "tanh"):
            raise ConfigurationError(f"unknown activation {self.activation!r}")
        for w, b in zip(self.weights, self.biases):
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise ConfigurationError("decoder parameters must be finite")

    @property
    def input_width(self):
        return self.weights[0].shape[1]

    def copy(self):
        return MlpDecoder([w.copy() for w in self.weights],
                          [b.copy() for b in self.biases],
                          self.activation, self.out_lo, self.out_hi)


def make_decoder(k, hidden, timing, activation="relu", seed=0) -> MlpDecoder:
    """Xavier-uniform MLP with input width K + 1 and scalar output."""
    lo, hi = depth_window(timing)
    widths = [k + 1] + list(hidden) + [1]
    rng = np.random.Generator(np.random.Philox(key=np.uint64(seed)))
    ws, bs = [], []
    for n_in, n_out in zip(widths[:-1], widths[1:]):
        a = math.sqrt(6.0 / (n_in + n_out))
        ws.append(rng.uniform(-a, a, size=(n_out, n_in)))
        bs.append(np.zeros(n_out))
    return MlpDecoder(ws, bs, activation, lo, hi)


@dataclass
class TrainConfig:
    epochs: int = 60
    batch: int = 1024             # pixels per update step
    lr: float = 0.01
    lr_decay: float = 0.7
    decay_interval: int = 10
    curriculum: list = field(default_factory=lambda: [5.23, 3.68, 2.22])
    curriculum_interval: int = 10
    weights: LossWeights = field(default_factory=LossWeights)
    optimizer: str = "sgd"        # or "adam"
    code_lr: float = None         # defaults to lr
    finetune_epochs: int = 0      # decoder-only epochs on frozen codes
    decoder_passes: int = 4       # extra decoder-only sweeps per scene visit
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigurationError("epochs must be >= 1")
        if not (0 < self.lr_decay <= 1):
            raise ConfigurationError("lr_decay must lie in (0, 1]")
        if not self.curriculum:
            raise ConfigurationError("curriculum must be non-empty")
        if self.optimizer not in ("sgd", "adam"):
            raise ConfigurationError(f"unknown optimizer {self.optimizer!r}")


def curriculum_snr(epoch, cfg: TrainConfig):
    """SNR target for an epoch: scheduled levels, then the random sentinel."""
    if epoch < 0:
        raise ConfigurationError("epoch must be >= 0")
    idx = epoch // cfg.curriculum_interval
    if idx < len(cfg.curriculum):
        return cfg.curriculum[idx]
    return RANDOM_SNR


# ---------------------------------------------------------------------------
# decoder forward / backward


def _activate(z, kind):
    if kind == "relu":
        return np.maximum(z, 0.0)
    return np.tanh(z)


def _activate_grad(z, kind):
    if kind == "relu":
        return (z > 0).astype(np.float64)
    return 1.0 - np.tanh(z) ** 2


def _sigmoid(y):
    out = np.empty_like(y)
    pos = y >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-y[pos]))
    ez = np.exp(y[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _forward(decoder, feats):
    """Returns (pred_depths, cache of pre-activations and activations)."""
    a = feats
    zs, acts = [], [a]
    n = len(decoder.weights)
    for li, (w, b) in enumerate(zip(decoder.weights, decoder.biases)):
        z = a @ w.T + b
        zs.append(z)
        a = z if li == n - 1 else _activate(z, decoder.activation)
        acts.append(a)
    y = acts[-1][:, 0]
    s = _sigmoid(y)
    pred = decoder.out_lo + (decoder.out_hi - decoder.out_lo) * s
    return pred, (zs, acts, s)


def decoder_forward(decoder: MlpDecoder, features):
    """Depth prediction for feature vectors, mapped into the depth window."""
    feats = np.atleast_2d(np.asarray(features, dtype=np.float64))
    if not np.all(np.isfinite(feats)):
        raise DomainError("decoder features must be finite")
    if feats.shape[1] != decoder.input_width:
        raise ConfigurationError(
            f"feature width {feats.shape[1]} != decoder input "
            f"{decoder.input_width}")
    pred, _ = _forward(decoder, feats)
    return pred


def decoder_backward(decoder: MlpDecoder, features, upstream_grad):
    """Reverse-mode gradients of the forward map.

    Returns (weight grads, bias grads, input gradient), each summed over the
    batch with the given upstream d(loss)/d(pred) weights.
    """
    feats = np.atleast_2d(np.asarray(features, dtype=np.float64))
    up = np.atleast_1d(np.asarray(upstream_grad, dtype=np.float64))
    pred, (zs, acts, s) = _forward(decoder, feats)
    # through the window sigmoid
    delta = (up * (decoder.out_hi - decoder.out_lo) * s * (1.0 - s))[:, None]
    gws = [None] * len(decoder.weights)
    gbs = [None] * len(decoder.biases)
    for li in reversed(range(len(decoder.weights))):
        if li != len(decoder.weights) - 1:
            delta = delta * _activate_grad(zs[li], decoder.activation)
        gws[li] = delta.T @ acts[li]
        gbs[li] = delta.sum(axis=0)
        delta = delta @ decoder.weights[li]
    return gws, gbs, delta


# ---------------------------------------------------------------------------
# features


def decoder_features(meas, valid=None):
    """(P, K) measurements -> (P, K+1) decoder features plus chain cache.

    First K features: zero-mean unit-norm channel vector (gain/offset
    invariant). Last feature: per-pixel channel mean divided by the mean of
    that quantity over valid pixels, a scale-free brightness cue.
    """
    x = np.asarray(meas, dtype=np.float64)
    p, k = x.shape
    mu = x.mean(axis=1, keepdims=True)
    c = x - mu
    n = np.linalg.norm(c, axis=1)
    ok = n > 0
    f = np.zeros_like(c)
    f[ok] = c[ok] / n[ok, None]
    t = x.mean(axis=1)
    vmask = np.ones(p, dtype=bool) if valid is None else valid
    denom = t[vmask].mean() if np.any(vmask) else 1.0
    denom = denom if abs(denom) > 1e-300 else 1.0
    feats = np.concatenate([f, (t / denom)[:, None]], axis=1)
    cache = {"f": f, "n": n, "ok": ok, "t": t, "denom": denom, "vmask": vmask}
    return feats, cache


def feature_input_grad(u_feat, cache):
    """Chain d(loss)/d(features) back to d(loss)/d(measurements), (P, K)."""
    f, n, ok = cache["f"], cache["n"], cache["ok"]
    t, denom, vmask = cache["t"], cache["denom"], cache["vmask"]
    p, k = f.shape
    v = u_feat[:, :k]
    # z-norm jacobian: (I - f f^T) / n then mean-removal projection
    gc = np.zeros_like(v)
    gc[ok] = (v[ok] - f[ok] * np.sum(f[ok] * v[ok], axis=1, keepdims=True)) \
        / n[ok, None]
    gx = gc - gc.mean(axis=1, keepdims=True)
    # intensity feature: feat = t_s / mean_valid(t); t = mean over channels
    u_t = u_feat[:, k]
    gt = u_t / denom
    corr = np.sum(u_t * t) / (denom**2 * max(int(np.sum(vmask)), 1))
    gt = gt - corr * vmask.astype(np.float64)
    return gx + gt[:, None] / k


# ---------------------------------------------------------------------------
# composite loss


def composite_loss(scene, coding: CodingSet, timing, att, noise, decoder,
                   weights: LossWeights, noisy=None, pixel_idx=None):
    """Full training loss and every gradient it produces.

    L = L_mse + g1 L_fisher + g2 L_dw + g3 L_1st. The MSE term reaches the
    code samples through the clean forward model and the decoder features;
    when a noisy stack is given it is used as the decoder input while the
    gradient still flows through the clean path (reparameterized noise).
    Returns (value, parts, decoder weight/bias grads, code gradient, pred).
    """
    if min(weights.gamma1, weights.gamma2, weights.gamma3) < 0:
        raise ConfigurationError("loss weights must be >= 0")
    amp = timing.N_rep * noise.photon_scale
    stack = integrate_measurements(scene, coding, timing, att,
                                   photon_scale=noise.photon_scale)
    meas = stack.clean if noisy is None else np.asarray(noisy, dtype=np.float64)
    k = coding.K
    x_all = meas.reshape(k, -1).T                       # (P, K)
    valid_all = stack.valid.ravel()
    feats_all, cache = decoder_features(x_all, valid=valid_all)

    if pixel_idx is None:
        pixel_idx = np.flatnonzero(valid_all)
    pred = decoder_forward(decoder, feats_all[pixel_idx])
    gt = scene.depth.ravel()[pixel_idx]
    err = pred - gt
    mse = float(np.sum(err**2))

    # decoder gradients and feature gradient for the selected pixels
    gws, gbs, gfeat_sel = decoder_backward(decoder, feats_all[pixel_idx],
                                           2.0 * err)
    gfeat = np.zeros_like(feats_all)
    gfeat[pixel_idx] = gfeat_sel
    gx = feature_input_grad(gfeat, cache)               # (P, K) = dL/dI

    # chain dI_i(s)/dD_ij = amp * R_j(s) / M onto the code samples
    depth = scene.depth.ravel()
    rho = scene.albedo.ravel()
    amb = scene.ambient.ravel()
    vmask = depth > 0
    R = np.zeros((depth.size, timing.M))
    if np.any(vmask):
        g = shifted_pulse(timing, depth[vmask])
        f_att = attenuation(att, depth[vmask])
        R[vmask] = rho[vmask, None] * f_att[:, None] * g
    R += amb[:, None]
    code_grad = (amp / timing.M) * (gx.T @ R)

    parts = {"mse": mse, "fisher": 0.0, "dw": 0.0, "first_diff": 0.0}
    value = mse
    if weights.gamma1 > 0:
        lf, gf = loss_fisher(scene, coding, timing, att, noise)
        parts["fisher"] = lf
        value += weights.gamma1 * lf
        code_grad += weights.gamma1 * gf
    if weights.gamma2 > 0:
        ldw, gdw = loss_double_well(coding)
        parts["dw"] = ldw
        value += weights.gamma2 * ldw
        code_grad += weights.gamma2 * gdw
    if weights.gamma3 > 0:
        l1, g1 = loss_first_difference(coding)
        parts["first_diff"] = l1
        value += weights.gamma3 * l1
        code_grad += weights.gamma3 * g1
    return value, parts, gws, gbs, code_grad, pred


# ---------------------------------------------------------------------------
# optimizers


class _Adam:
    def __init__(self, shapes, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros(s) for s in shapes]
        self.v = [np.zeros(s) for s in shapes]
        self.t = 0

    def step(self, params, grads, lr=None):
        lr = self.lr if lr is None else lr
        self.t += 1
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.b1
            m += (1 - self.b1) * g
            v *= self.b2
            v += (1 - self.b2) * g * g
            mh = m / (1 - self.b1**self.t)
            vh = v / (1 - self.b2**self.t)
            p -= lr * mh / (np.sqrt(vh) + self.eps)


class _Sgd:
    def __init__(self, lr):
        self.lr = lr

    def step(self, params, grads, lr=None):
        lr = self.lr if lr is None else lr
        for p, g in zip(params, grads):
            p -= lr * g


def _make_opt(kind, shapes, lr):
    return _Adam(shapes, lr) if kind == "adam" else _Sgd(lr)


# ---------------------------------------------------------------------------
# code-only optimization (Fisher + regularizers, no decoder)


def optimize_codes(scene, timing, att, noise, weights: LossWeights,
                   steps=500, lr=0.05, optimizer="adam", seed=0,
                   init=None, log_every=50):
    """Optimize codes with g1 L_fisher + g2 L_dw + g3 L_1st, box-projected.

    The gamma schedule is applied with one step counted as one epoch. Over
    the last 30% of the run the learning rate anneals linearly to lr / 5,
    shrinking the residual oscillation of samples that sit against the box
    boundary so they settle into the binary wells. Returns (coding set, log
    rows of (step, fisher, dw, first_diff)).
    """
    coding = init.copy() if init is not None else \
        init_codes(4, timing.M, timing=timing, seed=seed)
    opt = _make_opt(optimizer, [coding.values.shape], lr)
    settle = int(steps * 0.7)
    lr_min = lr / 5.0
    log = []
    for step in range(steps):
        w = weights.at_epoch(step)
        grad = np.zeros_like(coding.values)
        lf = ldw = l1 = 0.0
        if w.gamma1 > 0:
            lf, gf = loss_fisher(scene, coding, timing, att, noise)
            grad += w.gamma1 * gf
        if w.gamma2 > 0:
            ldw, gdw = loss_double_well(coding)
            grad += w.gamma2 * gdw
        if w.gamma3 > 0:
            l1, g1 = loss_first_difference(coding)
            grad += w.gamma3 * g1
        if step < settle:
            step_lr = lr
        else:
            step_lr = lr_min + (lr - lr_min) * (steps - step) / (steps - settle)
        opt.step([coding.values], [grad], lr=step_lr)
        coding = project_box(coding)
        if step % log_every == 0 or step == steps - 1:
            log.append({"step": step, "fisher": lf, "dw": ldw,
                        "first_diff": l1})
    return coding, log


# ---------------------------------------------------------------------------
# joint training


def train_joint(scenes, timing, att, noise, cfg: TrainConfig,
                hidden=(32, 32), val_scene=None, init_coding=None):
    """Jointly train codes and decoder; returns (frozen codes, decoder, log).

    Runs minibatch descent with the configured lr schedule, re-sampling noise
    each step at the curriculum's current SNR target. Codes start from
    init_coding when given (typically a Fisher-optimized near-binary set) and
    keep receiving joint updates. Aborts on divergence, returning the last
    finite checkpoint.
    """
    if not scenes:
        raise ConfigurationError("at least one training scene is required")
    ss = np.random.SeedSequence(cfg.seed)
    noise_seeds = np.random.Generator(np.random.Philox(ss.spawn(1)[0]))
    batch_rng = np.random.Generator(np.random.Philox(ss.spawn(1)[0]))
    snr_rng = np.random.Generator(np.random.Philox(ss.spawn(1)[0]))

    coding = init_coding.copy() if init_coding is not None else \
        init_codes(4, timing.M, timing=timing, seed=cfg.seed)
    decoder = make_decoder(coding.K, hidden, timing, seed=cfg.seed + 1)
    code_lr = cfg.code_lr if cfg.code_lr is not None else cfg.lr
    dec_opt = _make_opt(cfg.optimizer,
                        [w.shape for w in decoder.weights]
                        + [b.shape for b in decoder.biases], cfg.lr)
    code_opt = _make_opt(cfg.optimizer, [coding.values.shape], code_lr)

    ps_cache = {}

    def photon_scale_for(scene_idx, scene, snr):
        key = (scene_idx, round(float(snr), 3))
        if key not in ps_cache:
            ps_cache[key] = calibrate_photon_scale(
                scene, coding, timing, att, noise, snr)
        return ps_cache[key]

    snr_lo = min(cfg.curriculum)
    snr_hi = max(cfg.curriculum)
    log = []
    last_good = (coding.copy(), decoder.copy())
    aborted = False

    for epoch in range(cfg.epochs):
        lr = cfg.lr * cfg.lr_decay ** (epoch // cfg.decay_interval)
        clr = code_lr * cfg.lr_decay ** (epoch // cfg.decay_interval)
        w = cfg.weights.at_epoch(epoch)
        target = curriculum_snr(epoch, cfg)
        epoch_parts = {"mse": 0.0, "fisher": 0.0, "dw": 0.0, "first_diff": 0.0}
        n_steps = 0
        for si, scene in enumerate(scenes):
            snr = target if target != RANDOM_SNR else \
                float(snr_rng.uniform(snr_lo, snr_hi))
            ps = photon_scale_for(si, scene, snr)
            step_noise = type(noise)(noise.dark_expectation,
                                     noise.readout_sigma, ps,
                                     seed=int(noise_seeds.integers(2**62)))
            clean = integrate_measurements(scene, coding, timing, att,
                                           photon_scale=ps)
            noisy = apply_noise(clean, step_noise).noisy
            valid_idx = np.flatnonzero(clean.valid.ravel())

            # one exact joint update (codes + decoder) on a sampled batch
            pix = batch_rng.choice(valid_idx,
                                   size=min(cfg.batch, valid_idx.size),
                                   replace=False)
            value, parts, gws, gbs, gcode, _ = composite_loss(
                scene, coding, timing, att, step_noise, decoder, w,
                noisy=noisy, pixel_idx=pix)
            if not np.isfinite(value):
                aborted = True
                break
            # normalize the fidelity scale by batch size so lr is stable
            scale = 1.0 / pix.size
            dec_opt.step(decoder.weights + decoder.biases,
                         [g * scale for g in gws] + [g * scale for g in gbs],
                         lr=lr)
            code_opt.step([coding.values], [gcode * scale], lr=clr)
            coding = project_box(coding)
            for key in epoch_parts:
                epoch_parts[key] += parts[key]
            n_steps += 1

            # cheap decoder-only sweeps over the scene with the physics
            # recomputed once for the freshly updated codes
            if cfg.decoder_passes > 0:
                clean = integrate_measurements(scene, coding, timing, att,
                                               photon_scale=ps)
                noisy = apply_noise(clean, step_noise).noisy
                x_all = noisy.reshape(coding.K, -1).T
                feats_all, _ = decoder_features(x_all,
                                                valid=clean.valid.ravel())
                gt_all = scene.depth.ravel()
                for _ in range(cfg.decoder_passes):
                    order = batch_rng.permutation(valid_idx)
                    for start in range(0, order.size, cfg.batch):
                        bp = order[start:start + cfg.batch]
                        pred = decoder_forward(decoder, feats_all[bp])
                        err = pred - gt_all[bp]
                        gws, gbs, _ = decoder_backward(decoder, feats_all[bp],
                                                       2.0 * err / bp.size)
                        dec_opt.step(decoder.weights + decoder.biases,
                                     gws + gbs, lr=lr)
        if aborted:
            break
        last_good = (coding.copy(), decoder.copy())
        row = {"epoch": epoch, "lr": lr, "snr_target": target,
               "optimizer": cfg.optimizer}
        for key in epoch_parts:
            row[key] = epoch_parts[key] / max(n_steps, 1)
        if val_scene is not None:
            row["val_mae_mm"] = _validation_mae(val_scene, coding, timing,
                                                att, noise, decoder)
        log.append(row)

    coding, decoder = last_good
    frozen, moved = freeze_binary(coding)
    for _ in range(cfg.finetune_epochs):
        for si, scene in enumerate(scenes):
            snr = float(snr_rng.uniform(snr_lo, snr_hi))
            ps = calibrate_photon_scale(scene, frozen, timing, att, noise, snr)
            step_noise = type(noise)(noise.dark_expectation,
                                     noise.readout_sigma, ps,
                                     seed=int(noise_seeds.integers(2**62)))
            clean = integrate_measurements(scene, frozen, timing, att,
                                           photon_scale=ps)
            noisy = apply_noise(clean, step_noise).noisy
            valid_idx = np.flatnonzero(clean.valid.ravel())
            x_all = noisy.reshape(frozen.K, -1).T
            feats_all, _ = decoder_features(x_all, valid=clean.valid.ravel())
            gt_all = scene.depth.ravel()
            ft_lr = cfg.lr * cfg.lr_decay ** (cfg.epochs // cfg.decay_interval)
            for _ in range(max(cfg.decoder_passes, 1)):
                order = batch_rng.permutation(valid_idx)
                for start in range(0, order.size, cfg.batch):
                    pix = order[start:start + cfg.batch]
                    pred = decoder_forward(decoder, feats_all[pix])
                    err = pred - gt_all[pix]
                    gws, gbs, _ = decoder_backward(decoder, feats_all[pix],
                                                   2.0 * err / pix.size)
                    dec_opt.step(decoder.weights + decoder.biases,
                                 gws + gbs, lr=ft_lr)
    summary = {"moved_fraction": moved, "aborted": aborted}
    return frozen, decoder, {"epochs": log, "summary": summary}


def _validation_mae(scene, coding, timing, att, noise, decoder):
    clean = integrate_measurements(scene, coding, timing, att,
                                   photon_scale=noise.photon_scale)
    x = clean.clean.reshape(coding.K, -1).T
    feats, _ = decoder_features(x, valid=clean.valid.ravel())
    pred = decoder_forward(decoder, feats)
    gt = scene.depth.ravel()
    ok = clean.valid.ravel()
    return float(np.mean(np.abs(pred[ok] - gt[ok])) * 1000.0)


def mlp_decode(stack, decoder: MlpDecoder):
    """Decode a measurement stack with the trained per-pixel decoder."""
    from .decode import DepthEstimate
    meas = stack.noisy if stack.noisy is not None else stack.clean
    k, h, w = meas.shape
    feats, _ = decoder_features(meas.reshape(k, -1).T,
                                valid=stack.valid.ravel())
    pred = decoder_forward(decoder, feats)
    return DepthEstimate(depth=pred.reshape(h, w), valid=stack.valid.copy(),
                         method="mlp")


# ---------------------------------------------------------------------------
# checkpoint serialization


def save_decoder(decoder: MlpDecoder, path):
    """CSV blocks per layer: widths header, row-major weights, then biases."""
    with open(path, "w") as f:
        f.write(f"activation,{decoder.activation}\n")
        f.write(f"window,{decoder.out_lo!r},{decoder.out_hi!r}\n")
        f.write(f"layers,{len(decoder.weights)}\n")
        for w, b in zip(decoder.weights, decoder.biases):
            f.write(f"layer,{w.shape[0]},{w.shape[1]}\n")
            for row in w:
                f.write(",".join(repr(float(v)) for v in row) + "\n")
            f.write(",".join(repr(float(v)) for v in b) + "\n")


def load_decoder(path) -> MlpDecoder:
    try:
        with open(path) as f:
            lines = [ln.rstrip("\n") for ln in f]
    except OSError as e:
        raise ConfigurationError(f"cannot read decoder checkpoint {path}: {e}") \
            from None
    try:
        activation = lines[0].split(",")[1]
        _, lo, hi = lines[1].split(",")
        n_layers = int(lines[2].split(",")[1])
        ws, bs = [], []
        pos = 3
        for _ in range(n_layers):
            _, n_out, n_in = lines[pos].split(",")
            n_out, n_in = int(n_out), int(n_in)
            pos += 1
            w = np.array([[float(v) for v in lines[pos + r].split(",")]
                          for r in range(n_out)])
            pos += n_out
            b = np.array([float(v) for v in lines[pos].split(",")])
            pos += 1
            ws.append(w.reshape(n_out, n_in))
            bs.append(b)
    except (IndexError, ValueError) as e:
        raise ConfigurationError(f"malformed decoder checkpoint: {e}") from None
    return MlpDecoder(ws, bs, activation, float(lo), float(hi))
