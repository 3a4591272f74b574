"""Command-line entry point: ``stemdegrade <subcommand> ...``.

Exit codes: 0 success, 1 usage error, 2 I/O or format error, 3 numerical
failure (degenerate input, non-convergence, diverged training).
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict, fields
from pathlib import Path

from . import io
from .benchmarks import NOISE_ALIASES, lattice_image, run_damage_benchmark, run_drift_benchmark
from .direct import DirectConfig, DirectEstimator
from .errors import (
    DegenerateInputError,
    DimensionError,
    FormatError,
    InvalidParameterError,
    SingularTransformError,
    TrainingDivergedError,
)
from .imaging import AffineParams
from .inference import flow_map, infer_sequence
from .synth import (
    AtomMapSpec,
    DegradationSpec,
    NoiseConfig,
    SamplerRanges,
    gen_atom_map,
    gen_sequence_sample,
    make_final_decay,
    perlin_field,
)

log = logging.getLogger("stemdegrade")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: error: {message}\n{self.format_usage()}")


def _pair(text):
    try:
        a, b = (float(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected 'a,b', got {text!r}")
    return (a, b)


def _floats(text):
    try:
        return tuple(float(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _save_image(path, img):
    path = Path(path)
    if path.suffix.lower() == ".pgm":
        io.write_pgm(path, img)
    else:
        io.write_atdf(path, img)


def _manifest_for(path) -> Path:
    return Path(str(path) + ".manifest.json")


def _resolved(args) -> dict:
    return {k: v for k, v in sorted(vars(args).items()) if k != "func"}


def _direct_config(args) -> DirectConfig:
    kw = {}
    if getattr(args, "rotation_starts", None):
        kw["rotation_starts"] = tuple(args.rotation_starts)
    return DirectConfig(**kw)


def _estimator(args, size=None):
    if args.method == "direct":
        return DirectEstimator(_direct_config(args))
    if not args.model:
        raise UsageError("--method model requires --model FILE")
    from .learned import LearnedEstimator, load_model

    model = load_model(args.model)
    if size is not None and size != model.config.input_size:
        raise DimensionError(f"model expects {model.config.input_size}px inputs, got {size}px")
    return LearnedEstimator(model, total_steps=getattr(args, "steps", None) or 10)


# --------------------------------------------------------------------------- subcommands

def cmd_gen_atoms(args):
    spec = AtomMapSpec(a1=args.a1, a2=args.a2, amplitude_range=args.amp, width_range=args.width,
                       jitter_px=args.jitter, seed=args.seed)
    _save_image(args.out, gen_atom_map(spec, args.size, args.size))
    io.write_manifest(_manifest_for(args.out), "gen-atoms", {**_resolved(args), "spec": asdict(spec)})
    return 0


def cmd_simulate(args):
    x0 = io.read_image(args.input)
    h, w = x0.shape
    noise = NoiseConfig.parse(args.noise)
    fld = perlin_field(h, w, args.decay_cells, args.decay_octaves, args.seed)
    lam_T = make_final_decay(fld, args.min_survival)
    aff_T = AffineParams(args.theta, args.tx, args.ty)
    spec = DegradationSpec(lam_T, aff_T, args.steps, noise)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    end = gen_sequence_sample(x0, spec, args.steps, args.seed)
    io.write_atdf(out / "x0.atdf", x0)
    io.write_atdf(out / "x0_noisy.atdf", end.x0_noisy)
    io.write_atdf(out / "xT.atdf", end.xt_clean)
    io.write_atdf(out / "xT_noisy.atdf", end.xT_noisy)
    io.write_atdf(out / "lambda_T.atdf", lam_T)
    for t in range(args.steps + 1):
        sample = gen_sequence_sample(x0, spec, t, args.seed)
        io.write_atdf(out / f"xt_{t:03d}.atdf", sample.xt_clean)
        io.write_atdf(out / f"lambda_{t:03d}.atdf", sample.lambda_t)
    spec_json = {
        "lambda_T_path": "lambda_T.atdf",
        "theta_deg": aff_T.theta_deg, "tx_px": aff_T.tx_px, "ty_px": aff_T.ty_px,
        "total_steps": args.steps,
        "noise": noise.to_dict(),
        "decay_cells": args.decay_cells, "decay_octaves": args.decay_octaves,
        "min_survival": args.min_survival, "seed": args.seed,
    }
    (out / "spec.json").write_text(json.dumps(spec_json, indent=2, sort_keys=True) + "\n")
    io.write_manifest(out / "manifest.json", "simulate", _resolved(args))
    return 0


def cmd_estimate(args):
    x0 = io.read_image(args.ref)
    xt = io.read_image(args.target)
    est_fn = _estimator(args, x0.shape[0] if args.method == "model" else None)
    if args.method == "model":
        T = args.steps or 10
        est = est_fn(x0, xt, T if args.t is None else args.t, T)
    else:
        est = est_fn(x0, xt)
    io.write_estimate(args.out, est)
    io.write_manifest(_manifest_for(args.out), "estimate", _resolved(args))
    if not est.converged:
        log.error("registration did not converge (residual %.4g)", est.residual)
        return 3
    return 0


def _load_train_config(path):
    from .learned import ModelConfig, TrainConfig

    try:
        raw = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"invalid training config JSON: {exc.msg}", exc.pos) from exc
    tr = dict(raw.get("train", {}))
    ranges = dict(tr.pop("ranges", {}))
    if "noise" in ranges and isinstance(ranges["noise"], dict):
        ranges["noise"] = NoiseConfig(**ranges["noise"])
    for key in ("min_survival", "decay_cells", "lattice_spacing"):
        if key in ranges:
            ranges[key] = tuple(ranges[key])
    try:
        sampler = SamplerRanges(**ranges)
        model_cfg = ModelConfig(**raw.get("model", {}))
        train_cfg = TrainConfig(**tr, ranges=sampler)
    except TypeError as exc:
        raise UsageError(f"bad training config: {exc}") from exc
    return train_cfg, model_cfg


def cmd_train(args):
    from .learned import save_model, train

    train_cfg, model_cfg = _load_train_config(args.config)
    if args.seed is not None:
        train_cfg = type(train_cfg)(**{**{f.name: getattr(train_cfg, f.name) for f in fields(train_cfg)},
                                       "seed": args.seed})
    result = train(train_cfg, model_cfg)
    save_model(result.model, args.out)
    io.write_csv(args.history, ["step", "lr", "loss", "val_loss"],
                 [[h["step"], h["lr"], h["loss"], h["val_loss"]] for h in result.history])
    io.write_manifest(_manifest_for(args.out), "train", {
        **_resolved(args), "train_config": train_cfg, "model_config": model_cfg,
        "identity_val_loss": result.identity_val_loss, "final_val_loss": result.final_val_loss(),
    })
    return 0


def cmd_bench_damage(args):
    kinds = ["gaussian", "perlin", "random"] if args.noise_type == "all" else [args.noise_type]
    est = _estimator(args, args.size if args.method == "model" else None)
    x0 = lattice_image(args.size, args.seed)
    rows = []
    for kind in kinds:
        res = run_damage_benchmark(x0, kind, est, args.frames, args.max_intensity, args.trials, args.seed)
        r = res.report
        rows.append([kind, r.mae, r.mse, r.rmse, r.r2, r.var_err])
        log.info("%s: %s", kind, r.format_row())
    io.write_csv(args.out, ["noise_type", "mae", "mse", "rmse", "r2", "var"], rows)
    io.write_manifest(_manifest_for(args.out), "bench-damage", _resolved(args))
    return 0


def cmd_bench_drift(args):
    img = io.read_image(args.image) if args.image else lattice_image(512, args.seed)
    est = _estimator(args, args.crop if args.method == "model" else None)
    res = run_drift_benchmark(img, args.rot, args.drift, est, args.crop, args.trials, args.seed)
    io.write_csv(args.out, ["rot_set_deg", "drift_set_px", "mean_drift_err_px", "mean_rot_err_deg"],
                 [[float(args.rot), float(args.drift), res.mean_drift_err_px, res.mean_rot_err_deg]])
    io.write_manifest(_manifest_for(args.out), "bench-drift", _resolved(args))
    return 0


def cmd_infer(args):
    x0 = io.read_image(args.ref)
    xT = io.read_image(args.target)
    est = _estimator(args, x0.shape[0] if args.method == "model" else None)
    T = args.steps or 10
    result = infer_sequence(x0, xT, est, args.n, T, mode=args.mode)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    records = []
    for k, fr in enumerate(result.frames, start=1):
        io.write_atdf(out / f"frame_{k:03d}.atdf", fr.frame)
        io.write_atdf(out / f"decay_{k:03d}.atdf", fr.decay)
        records.append({"index": k, "t": fr.t, "theta_deg": fr.affine.theta_deg,
                        "tx_px": fr.affine.tx_px, "ty_px": fr.affine.ty_px,
                        "frame": f"frame_{k:03d}.atdf", "decay": f"decay_{k:03d}.atdf"})
    (out / "sequence.json").write_text(json.dumps(records, indent=2) + "\n")
    io.write_manifest(out / "manifest.json", "infer", _resolved(args))
    return 0


def cmd_flow(args):
    est = io.read_estimate(args.est, load_decay=False)
    io.write_atdf(args.out, flow_map(est.affine, args.size, args.size, args.stride))
    io.write_manifest(_manifest_for(args.out), "flow", _resolved(args))
    return 0


# --------------------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="stemdegrade", description="STEM drift/decay simulation and recovery")
    p.add_argument("--log-level", default="WARNING")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    def add(name, func, help_):
        sp = sub.add_parser(name, help=help_)
        sp.set_defaults(func=func)
        sp.add_argument("--seed", type=int, default=0)
        return sp

    def add_method(sp):
        sp.add_argument("--method", choices=("direct", "model"), default="direct")
        sp.add_argument("--model")
        sp.add_argument("--rotation-starts", type=_floats, default=None)

    sp = add("gen-atoms", cmd_gen_atoms, "render a synthetic atom map")
    sp.add_argument("--out", required=True)
    sp.add_argument("--size", type=int, default=256)
    sp.add_argument("--a1", type=_pair, default=AtomMapSpec.a1)
    sp.add_argument("--a2", type=_pair, default=AtomMapSpec.a2)
    sp.add_argument("--amp", type=_pair, default=AtomMapSpec.amplitude_range)
    sp.add_argument("--width", type=_pair, default=AtomMapSpec.width_range)
    sp.add_argument("--jitter", type=float, default=AtomMapSpec.jitter_px)

    sp = add("simulate", cmd_simulate, "degrade an image over T steps")
    sp.add_argument("--in", dest="input", required=True)
    sp.add_argument("--theta", type=float, default=0.0)
    sp.add_argument("--tx", type=float, default=0.0)
    sp.add_argument("--ty", type=float, default=0.0)
    sp.add_argument("--steps", type=int, default=10)
    sp.add_argument("--decay-cells", type=int, default=3)
    sp.add_argument("--decay-octaves", type=int, default=3)
    sp.add_argument("--min-survival", type=float, default=0.3)
    sp.add_argument("--noise", default="dose=200,jitter=0.5,readout=0.01")
    sp.add_argument("--out-dir", required=True)

    sp = add("estimate", cmd_estimate, "recover drift and decay from a frame pair")
    sp.add_argument("--ref", required=True)
    sp.add_argument("--target", required=True)
    add_method(sp)
    sp.add_argument("--t", type=float, default=None)
    sp.add_argument("--steps", type=int, default=None)
    sp.add_argument("--out", required=True)

    sp = add("train", cmd_train, "train the learned estimator")
    sp.set_defaults(seed=None)
    sp.add_argument("--config", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--history", required=True)

    sp = add("bench-damage", cmd_bench_damage, "damage-intensity benchmark")
    sp.add_argument("--noise-type", choices=sorted(NOISE_ALIASES) + ["all"], default="all")
    sp.add_argument("--frames", type=int, default=10)
    sp.add_argument("--max-intensity", type=float, default=0.9)
    sp.add_argument("--trials", type=int, default=10)
    sp.add_argument("--size", type=int, default=128)
    add_method(sp)
    sp.add_argument("--out", required=True)

    sp = add("bench-drift", cmd_bench_drift, "drift/rotation recovery benchmark")
    sp.add_argument("--image")
    sp.add_argument("--rot", type=float, default=5.0)
    sp.add_argument("--drift", type=float, default=5.0)
    sp.add_argument("--crop", type=int, default=256)
    sp.add_argument("--trials", type=int, default=50)
    add_method(sp)
    sp.add_argument("--out", required=True)

    sp = add("infer", cmd_infer, "synthesize intermediate degradation states")
    sp.add_argument("--ref", required=True)
    sp.add_argument("--target", required=True)
    sp.add_argument("--n", type=int, default=8)
    sp.add_argument("--steps", type=int, default=None)
    sp.add_argument("--mode", choices=("interpolate", "query"), default="interpolate")
    add_method(sp)
    sp.add_argument("--out-dir", required=True)

    sp = add("flow", cmd_flow, "flow field of an estimated drift")
    sp.add_argument("--est", required=True)
    sp.add_argument("--size", type=int, required=True)
    sp.add_argument("--stride", type=int, default=16)
    sp.add_argument("--out", required=True)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError(parser.format_usage())
        logging.basicConfig(level=getattr(logging, str(args.log_level).upper(), logging.WARNING),
                            format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
        return int(args.func(args) or 0)
    except UsageError as exc:
        print(str(exc).rstrip(), file=sys.stderr)
        return 1
    except (InvalidParameterError, DimensionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (FormatError, OSError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return 2
    except (DegenerateInputError, SingularTransformError, TrainingDivergedError, ArithmeticError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
