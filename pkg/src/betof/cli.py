"""Command-line harness.

Subcommands: simulate, optimize-codes, train, decode, bench,
check-gradients. Exit codes: 0 success, 1 configuration error, 2 numeric
failure.
"""

import argparse
import hashlib
import os
import sys

import numpy as np

from . import bench as bench_mod
from .coding import (LossWeights, freeze_binary, load_coding, save_coding,
                     transition_count)
from .config import load_config
from .decode import build_lookup, decode_lookup
from .errors import ConfigurationError, NumericError
from .imagefile import write_pfm
from .learn import load_decoder, optimize_codes, save_decoder
from .physics import (MeasurementStack, NoiseModel, apply_noise,
                      integrate_measurements, scale_for_snr)
from .scene import SceneSpec, generate_scene


def _write_manifest(out_dir, cfg_path, seed, artifacts):
    lines = []
    if cfg_path and os.path.exists(cfg_path):
        digest = hashlib.sha256(open(cfg_path, "rb").read()).hexdigest()
        lines.append(f"config,{cfg_path}")
        lines.append(f"config_sha256,{digest}")
    lines.append(f"seed,{seed}")
    for a in artifacts:
        lines.append(f"artifact,{a}")
    with open(os.path.join(out_dir, "manifest.txt"), "w") as f:
        f.write("\n".join(lines) + "\n")


def _cmd_simulate(args, cfg):
    scene = generate_scene(SceneSpec(
        kind=args.kind, depth_range=(args.d_min, args.d_max),
        albedo_pattern="noise-texture",
        ambient_level=bench_mod.bucket_ambient(cfg, (args.d_min, args.d_max)),
        width=args.size, height=args.size, seed=cfg.plan.seed))
    timing = bench_mod.bucket_timing(cfg.timing, (args.d_min, args.d_max)) \
        if args.auto_tau else cfg.timing
    from .coding import square_codes
    coding = square_codes(cfg.k, timing.M, timing=timing)
    unit = integrate_measurements(scene, coding, timing, cfg.att)
    ps = scale_for_snr(unit.clean, cfg.noise, args.snr_db, valid=unit.valid)
    stack = MeasurementStack(K=cfg.k, clean=ps * unit.clean, valid=unit.valid)
    noise = NoiseModel(cfg.noise.dark_expectation, cfg.noise.readout_sigma,
                       ps, seed=cfg.noise.seed)
    noisy = apply_noise(stack, noise)
    os.makedirs(args.out, exist_ok=True)
    arts = []
    for i in range(cfg.k):
        p = os.path.join(args.out, f"measurement_ch{i}.pfm")
        write_pfm(p, noisy.noisy[i])
        arts.append(p)
    gt = os.path.join(args.out, "depth_gt.pfm")
    write_pfm(gt, scene.depth)
    arts.append(gt)
    table = build_lookup(coding, timing, cfg.att, cfg.lookup_grid_step_m)
    est = decode_lookup(noisy, table)
    dp = os.path.join(args.out, "depth_decoded.pfm")
    out_depth = np.where(est.valid, est.depth, -1.0)
    write_pfm(dp, out_depth)
    arts.append(dp)
    n_invalid = int(np.count_nonzero(~est.valid))
    if n_invalid:
        print(f"warning: {n_invalid} invalid pixels marked -1 in {dp}")
    print(f"simulated {args.kind} scene at SNR {noisy.snr_db:.2f} dB "
          f"(target {args.snr_db}); outputs in {args.out}")
    _write_manifest(args.out, args.config, cfg.plan.seed, arts)
    return 0


def _cmd_optimize_codes(args, cfg):
    timing = bench_mod.bucket_timing(cfg.timing, cfg.train_bucket)
    d0, d1 = cfg.train_bucket
    scene = generate_scene(SceneSpec(
        "ramp", (d0 + 0.1, d1 - 0.1), "noise-texture",
        bench_mod.bucket_ambient(cfg, cfg.train_bucket),
        16, 16, seed=cfg.plan.seed))
    from .physics import calibrate_photon_scale
    from .coding import init_codes
    probe = init_codes(cfg.k, timing.M, timing=timing, seed=cfg.plan.seed)
    ps = calibrate_photon_scale(scene, probe, timing, cfg.att, cfg.noise,
                                max(cfg.plan.snr_levels))
    noise = NoiseModel(cfg.noise.dark_expectation, cfg.noise.readout_sigma,
                       ps, seed=cfg.noise.seed)
    weights = cfg.train.weights if args.gamma3 is None else LossWeights(
        cfg.train.weights.gamma1, cfg.train.weights.gamma2, args.gamma3,
        schedule=cfg.train.weights.schedule)
    coding, log = optimize_codes(scene, timing, cfg.att, noise, weights,
                                 steps=args.steps, seed=cfg.plan.seed)
    frozen, moved = freeze_binary(coding)
    os.makedirs(args.out, exist_ok=True)
    path = os.path.join(args.out, "codes.csv")
    save_coding(frozen, path)
    near = float(np.mean(np.minimum(coding.values, 1 - coding.values) <= 0.05))
    print(f"optimized {args.steps} steps; {near * 100:.2f}% of samples "
          f"within 0.05 of binary; freeze moved-fraction {moved * 100:.3f}%")
    print(f"transitions per channel: {transition_count(frozen)}")
    print(f"codes written to {path}")
    _write_manifest(args.out, args.config, cfg.plan.seed, [path])
    return 0


def _cmd_train(args, cfg):
    coding, decoder, log, timing_t = bench_mod.train_learned(cfg)
    os.makedirs(args.out, exist_ok=True)
    cpath = os.path.join(args.out, "codes.csv")
    dpath = os.path.join(args.out, "decoder.csv")
    lpath = os.path.join(args.out, "train_log.csv")
    save_coding(coding, cpath)
    save_decoder(decoder, dpath)
    with open(lpath, "w") as f:
        f.write("epoch,lr,snr_target,optimizer,mse,fisher,dw,first_diff,"
                "val_mae_mm\n")
        for row in log["epochs"]:
            f.write(f"{row['epoch']},{row['lr']!r},{row['snr_target']},"
                    f"{row['optimizer']},{row['mse']!r},{row['fisher']!r},"
                    f"{row['dw']!r},{row['first_diff']!r},"
                    f"{row.get('val_mae_mm', '')!r}\n")
    print(f"trained {len(log['epochs'])} epochs; freeze moved-fraction "
          f"{log['summary']['moved_fraction'] * 100:.3f}%")
    if log["epochs"] and "val_mae_mm" in log["epochs"][-1]:
        print(f"final validation MAE {log['epochs'][-1]['val_mae_mm']:.1f} mm")
    _write_manifest(args.out, args.config, cfg.train.seed,
                    [cpath, dpath, lpath])
    return 0


def _cmd_decode(args, cfg):
    from .imagefile import read_pfm
    coding = load_coding(args.codes, timing=cfg.timing)
    chans = [read_pfm(p) for p in args.measurements]
    stack = np.stack(chans)
    ms = MeasurementStack(K=stack.shape[0], clean=np.zeros_like(stack),
                          noisy=stack)
    timing = cfg.timing
    table = build_lookup(coding, timing, cfg.att, cfg.lookup_grid_step_m)
    est = decode_lookup(ms, table)
    os.makedirs(args.out, exist_ok=True)
    dp = os.path.join(args.out, "depth_decoded.pfm")
    write_pfm(dp, np.where(est.valid, est.depth, -1.0))
    print(f"decoded {len(chans)} channels -> {dp}")
    return 0


def _cmd_bench(args, cfg):
    needs_learned = any(m in ("lookup-learned", "mlp-learned")
                        for m in cfg.plan.methods)
    coding = decoder = None
    if needs_learned:
        if args.codes and args.decoder:
            coding = load_coding(args.codes, timing=cfg.timing)
            decoder = load_decoder(args.decoder)
        else:
            print("training learned codes and decoder "
                  "(pass --codes/--decoder to reuse artifacts)")
            coding, decoder, _, _ = bench_mod.train_learned(cfg)
    rows = bench_mod.run_plan(cfg.plan, cfg, coding, decoder)
    res, txt = bench_mod.emit_table(rows, args.out)
    _write_manifest(args.out, args.config, cfg.plan.seed, [res, txt])
    print(open(txt).read())
    print(f"results in {res}")
    return 0


def _cmd_check_gradients(args, cfg):
    from .gradcheck import run_all
    results = run_all(verbose=True)
    return 0 if all(ok for *_, ok in results) else 2


def build_parser():
    p = argparse.ArgumentParser(
        prog="betof",
        description="Burst-encodable ToF simulator and optimization harness")
    p.add_argument("--config", default=None, help="TOML config file")
    p.add_argument("--seed", type=int, default=None, help="override all seeds")
    p.add_argument("--out", default="out", help="output directory")
    sub = p.add_subparsers(dest="command")

    s = sub.add_parser("simulate", help="scene -> measurement stack + depth PFMs")
    s.add_argument("--kind", default="ramp")
    s.add_argument("--d-min", type=float, default=30.0)
    s.add_argument("--d-max", type=float, default=33.0)
    s.add_argument("--size", type=int, default=64)
    s.add_argument("--snr-db", type=float, default=5.23)
    s.add_argument("--auto-tau", action="store_true", default=True)

    o = sub.add_parser("optimize-codes",
                       help="Fisher + regularizer code optimization")
    o.add_argument("--steps", type=int, default=500)
    o.add_argument("--gamma3", type=float, default=None)

    sub.add_parser("train", help="joint code + decoder training")

    d = sub.add_parser("decode", help="measurement PFMs + codes -> depth")
    d.add_argument("--codes", required=True)
    d.add_argument("measurements", nargs="+")

    b = sub.add_parser("bench", help="run the experimental matrix")
    b.add_argument("--codes", default=None)
    b.add_argument("--decoder", default=None)

    sub.add_parser("check-gradients",
                   help="run all finite-difference gradient suites")
    return p


_COMMANDS = {
    "simulate": _cmd_simulate,
    "optimize-codes": _cmd_optimize_codes,
    "train": _cmd_train,
    "decode": _cmd_decode,
    "bench": _cmd_bench,
    "check-gradients": _cmd_check_gradients,
}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return 0 if e.code in (0, None) else 1
    if args.command is None:
        parser.print_usage()
        return 1
    try:
        cfg = load_config(args.config, seed=args.seed)
        return _COMMANDS[args.command](args, cfg)
    except ConfigurationError as e:
        print(f"configuration error: {e}", file=sys.stderr)
        return 1
    except NumericError as e:
        print(f"numeric failure: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
