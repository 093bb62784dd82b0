"""Command-line entry point: ``fmri2ges <command> [options]``.

Exit codes: 0 success, 1 usage error, 2 data or validation error.
Every command accepts ``--seed``, ``--config FILE`` (key = value lines whose
keys are option names, e.g. ``steps = 500``) and ``--out PATH``; flags given
on the command line win over the file.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__

log = logging.getLogger("fmri2ges")


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}\n{self.format_usage()}")


def _common() -> argparse.ArgumentParser:
    p = _Parser(add_help=False)
    p.add_argument("--seed", type=int, default=0, help="root random seed")
    p.add_argument("--config", metavar="FILE", help="key = value option file")
    p.add_argument("--out", metavar="PATH", help="output file or directory")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="fmri2ges", description="fMRI-to-gesture diffusion pipeline")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", parser_class=_Parser, metavar="command")
    common = _common()

    p = sub.add_parser("gen-data", parents=[common], help="write a synthetic dataset")
    p.add_argument("--region", default="auditory")
    p.add_argument("--sigma-f", type=float, default=0.0)
    p.add_argument("--sigma-g", type=float, default=0.01)
    p.add_argument("--vocab-size", type=int, default=64)
    p.add_argument("--n-voxels", type=int, default=64)
    p.add_argument("--paired-f2t", type=int, default=20, help="story records with fMRI")
    p.add_argument("--paired-t2g", type=int, default=16, help="spoken records with gestures")
    p.add_argument("--unpaired-fmri", type=int, default=8, help="fMRI-only records")
    p.add_argument("--full-scale", action="store_true", help="echo real region sizes")

    p = sub.add_parser("train-t2g", parents=[common], help="phase I: text-to-gesture")
    p.add_argument("--data", required=True)
    p.add_argument("--steps", type=int, default=2000)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--diffusion-steps", type=int, default=50)
    p.add_argument("--d-model", type=int, default=128)
    p.add_argument("--blocks", type=int, default=2)
    p.add_argument("--text-dim", type=int, default=32)
    p.add_argument("--resume", metavar="CKPT", help="continue a phase-I checkpoint")

    p = sub.add_parser("fit-f2t", parents=[common], help="fit the fMRI-to-text decoder")
    p.add_argument("--data", required=True)
    p.add_argument("--beam", type=int, default=8)
    p.add_argument("--draws", type=int, default=4)
    p.add_argument("--top-p", type=float, default=0.9)
    p.add_argument("--lm-weight", type=float, default=1.0)

    p = sub.add_parser("train-f2g", parents=[common], help="phase II: dual alignment")
    p.add_argument("--data", required=True)
    p.add_argument("--t2g", metavar="CKPT")
    p.add_argument("--f2t", metavar="CKPT")
    p.add_argument("--steps", type=int, default=600)
    p.add_argument("--lam", type=float, default=0.01)
    p.add_argument("--mode", default="paper-sqrt", choices=["paper-sqrt", "exact"])
    p.add_argument("--pseudo-mode", default="renoise", choices=["renoise", "chain-intermediate"])
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--freeze-x", action="store_true")

    p = sub.add_parser("decode-text", parents=[common], help="decode words from fMRI")
    p.add_argument("--f2t", required=True, metavar="CKPT")
    _source_args(p)

    p = sub.add_parser("generate", parents=[common], help="sample gestures")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--words", metavar="ARRAY", help="frame-aligned word ids (text models)")
    _source_args(p)

    p = sub.add_parser("evaluate", parents=[common], help="metrics report")
    p.add_argument("--ref", required=True, metavar="ARRAY")
    p.add_argument("--gen", required=True, metavar="ARRAY")
    p.add_argument("--onsets", metavar="ARRAY", help="onset frames for beat consistency")
    p.add_argument("--pck-rho", type=float, default=0.2)
    p.add_argument("--bc-sigma", type=float, default=1.5)
    p.add_argument("--fgd-mode", default="raw", choices=["raw", "pca"])

    p = sub.add_parser("render", parents=[common], help="SVG filmstrip")
    p.add_argument("--in", dest="input", required=True, metavar="ARRAY")
    p.add_argument("--every", type=int, default=8)
    p.add_argument("--data", help="dataset whose manifest supplies the bone list")
    return parser


def _source_args(p):
    p.add_argument("--fmri", metavar="ARRAY", help="voxel array (T_r, D_f)")
    p.add_argument("--data", help="dataset directory (with --index)")
    p.add_argument("--split", default="unpaired_fmri")
    p.add_argument("--index", type=int, default=0)


# ------------------------------------------------------------ helpers

def _apply_config(parser, argv) -> argparse.Namespace:
    args = parser.parse_args(argv)
    if args.command is None:
        raise UsageError(parser.format_usage() + "fmri2ges: error: a command is required")
    if not args.config:
        return args
    from .io import read_config
    try:
        cfg = read_config(args.config)
    except (OSError, ValueError) as e:
        raise DataError(f"cannot read config {args.config}: {e}") from e
    sub = parser._subparsers._group_actions[0].choices[args.command]
    actions = {a.dest: a for a in sub._actions}
    defaults = {}
    for key, value in cfg.items():
        dest = key.replace("-", "_")
        if dest in ("config", "help") or dest not in actions:
            raise UsageError(f"config key {key!r} is not an option of {args.command}")
        a = actions[dest]
        if isinstance(a, argparse._StoreTrueAction):
            defaults[dest] = value.lower() in ("1", "true", "yes", "on")
        else:
            try:
                defaults[dest] = a.type(value) if a.type else value
            except ValueError as e:
                raise UsageError(f"config key {key!r}: {e}") from e
            if a.choices and defaults[dest] not in a.choices:
                raise UsageError(f"config key {key!r} must be one of {a.choices}")
    sub.set_defaults(**defaults)
    return parser.parse_args(argv)


def _need(args, *names):
    missing = [n for n in names if getattr(args, n.replace("-", "_")) is None]
    if missing:
        raise DataError("missing required input: " + ", ".join("--" + m for m in missing))


def _out(args, default: str) -> Path:
    return Path(args.out or default)


def _read_array(path) -> np.ndarray:
    from .io import decode_array
    p = Path(path)
    if not p.is_file():
        raise DataError(f"no such file: {path}")
    return decode_array(p.read_bytes())


def _write_array(path, a) -> None:
    from .io import _atomic_write, encode_array
    _atomic_write(path, encode_array(a))


def _load_ckpt(path):
    from .io import load_checkpoint
    if not Path(path).is_file():
        raise DataError(f"no such checkpoint: {path}")
    return load_checkpoint(path)


def _dataset(path, splits=None):
    from .io import read_dataset
    from .synthdata import spec_from_meta
    if path is None or not Path(path).is_dir():
        raise DataError(f"no dataset directory at {path}")
    data, meta = read_dataset(path, splits)
    return data, meta, spec_from_meta(meta)


def _voxels(args):
    if args.fmri:
        return _read_array(args.fmri)
    if args.data:
        data, _, _ = _dataset(args.data, [args.split])
        recs = data[args.split]
        if not 0 <= args.index < len(recs):
            raise DataError(f"split {args.split} has no record {args.index}")
        rec = recs[args.index]
        if "voxels" not in rec:
            raise DataError(f"split {args.split} has no fMRI")
        return rec["voxels"]
    raise DataError("missing required input: --fmri or --data")


def _echo(args) -> dict:
    skip = {"config", "out", "verbose"}
    return {f"cli.{k}": v for k, v in sorted(vars(args).items())
            if k not in skip and v is not None}


# ------------------------------------------------------------ commands

def cmd_gen_data(args):
    from .io import write_dataset
    from .synthdata import WorldSpec, make_datasets
    spec = WorldSpec(seed=args.seed, vocab_size=args.vocab_size, n_voxels=args.n_voxels,
                     sigma_f=args.sigma_f, sigma_g=args.sigma_g, full_scale=args.full_scale)
    sizes = {"paired_f2t": args.paired_f2t, "paired_t2g": args.paired_t2g,
             "unpaired_fmri": args.unpaired_fmri}
    splits, meta = make_datasets(spec, sizes, args.seed, region=args.region)
    out = _out(args, "data")
    write_dataset(out, splits, meta)
    print(f"wrote {sum(map(len, splits.values()))} records to {out}")


def cmd_train_t2g(args):
    from .io import save_checkpoint
    from .t2g import GestureModel, T2GConfig, t2g_clips, to_checkpoint, train_t2g
    data, meta, spec = _dataset(args.data, ["paired_t2g"])
    cfg = T2GConfig(T=args.diffusion_steps, d_model=args.d_model, n_blocks=args.blocks,
                    text_dim=args.text_dim, batch_size=args.batch_size, lr=args.lr,
                    steps=args.steps)
    clips = t2g_clips(data["paired_t2g"], cfg.clip_len, cfg.stride)
    resume = None
    if args.resume:
        resume = GestureModel.from_checkpoint(_load_ckpt(args.resume), "x")
    model = train_t2g(clips, cfg, args.seed, spec.vocab_size, resume=resume)
    out = _out(args, "t2g.ckpt")
    save_checkpoint(out, to_checkpoint({"x": model}, extra_meta=_echo(args)))
    print(f"step {model.step}: loss {np.mean(model.losses[-50:]):.4f} -> {out}")


def cmd_fit_f2t(args):
    from .f2t import fit_f2t
    from .io import Checkpoint, save_checkpoint
    data, meta, spec = _dataset(args.data, ["paired_f2t"])
    models = fit_f2t(data["paired_f2t"], spec.semantic, spec.vocab_size, spec.tr_seconds,
                     spec.delays, k=args.beam, n_draws=args.draws, top_p=args.top_p,
                     lm_weight=args.lm_weight)
    out = _out(args, "f2t.ckpt")
    save_checkpoint(out, Checkpoint(models.to_arrays(), _echo(args)))
    print(f"encoder alpha {models.enc.alpha:g}, rate alpha {models.rate.ridge.alpha:g} -> {out}")


def cmd_train_f2g(args):
    from .dual import DualConfig, train_f2g
    from .f2t import F2TModels
    from .io import save_checkpoint
    from .t2g import GestureModel, t2g_clips, to_checkpoint
    _need(args, "t2g", "f2t")
    data, meta, spec = _dataset(args.data, ["paired_t2g", "unpaired_fmri"])
    theta_x = GestureModel.from_checkpoint(_load_ckpt(args.t2g), "x")
    f2t = F2TModels.from_arrays(_load_ckpt(args.f2t).arrays)
    cfg = DualConfig(lam=args.lam, mode=args.mode, pseudo_mode=args.pseudo_mode,
                     steps=args.steps, lr=args.lr, freeze_x=args.freeze_x)
    clips = t2g_clips(data["paired_t2g"], cfg.clip_len, cfg.stride)
    res = train_f2g(theta_x, f2t, clips, [r["voxels"] for r in data["unpaired_fmri"]], cfg,
                    args.seed)
    out = _out(args, "f2g.ckpt")
    extra = {"pseudo/skipped": np.array([res.pseudo.skipped], dtype=np.int64),
             "pseudo/count": np.array([len(res.pseudo.pairs)], dtype=np.int64)}
    save_checkpoint(out, to_checkpoint({"x": res.theta_x, "f": res.theta_f}, extra, _echo(args)))
    print(f"{len(res.pseudo.pairs)} pseudo pairs, alignment loss "
          f"{np.mean(res.align_losses[-50:]):.5f} -> {out}")


def cmd_decode_text(args):
    from .f2t import F2TModels
    f2t = F2TModels.from_arrays(_load_ckpt(args.f2t).arrays)
    vox = _voxels(args)
    if vox.ndim != 2 or vox.shape[1] != f2t.enc.n_voxels:
        raise DataError(f"fMRI of shape {vox.shape} does not fit {f2t.enc.n_voxels} voxels")
    dec = f2t.decode(vox, args.seed)
    lines = [f"{w} {o:.3f}" for w, o in zip(dec.words, dec.onsets)]
    text = "\n".join(lines) + ("\n" if lines else "")
    if args.out:
        Path(args.out).write_text(text, encoding="ascii")
    else:
        sys.stdout.write(text)


def cmd_generate(args):
    from .dual import generate_record
    from .t2g import GestureModel, generate_from_text
    ckpt = _load_ckpt(args.ckpt)
    prefix = "f" if "f/state" in ckpt else "x"
    model = GestureModel.from_checkpoint(ckpt, prefix)
    if model.modality == "text":
        if not args.words:
            raise DataError("missing required input: --words (text checkpoint)")
        clip = generate_from_text(model, _read_array(args.words).astype(np.int64), args.seed)
    else:
        vox = _voxels(args)
        if vox.ndim != 2 or vox.shape[1] != model.c_mean.shape[0]:
            raise DataError(f"fMRI of shape {vox.shape} does not fit {model.c_mean.shape[0]} voxels")
        clip = generate_record(model, vox, args.seed)
    out = _out(args, "gesture.f2gb")
    _write_array(out, clip)
    print(f"{clip.shape[0]} frames -> {out}")


def cmd_evaluate(args):
    from .metrics import evaluate
    ref, gen = _read_array(args.ref), _read_array(args.gen)
    if ref.shape != gen.shape:
        raise DataError(f"shape mismatch: ref {ref.shape} vs gen {gen.shape}")
    onsets = None
    if args.onsets:
        o = _read_array(args.onsets)
        onsets = [o] if gen.ndim == 2 else list(o)
    rep = evaluate(gen, ref, onsets, args.pck_rho, args.bc_sigma, args.fgd_mode)
    d = rep.as_dict() | {f"config.{k}": v for k, v in _echo(args).items()}
    from .io import format_kv
    text = format_kv(d)
    if args.out:
        out = Path(args.out)
        out.write_text(text, encoding="ascii")
        out.with_suffix(out.suffix + ".json").write_text(
            json.dumps(d, sort_keys=True, indent=1, default=str) + "\n", encoding="ascii")
    sys.stdout.write(text)


def cmd_render(args):
    from .render import parse_bones, render_svg
    from .skeleton import BONES
    frames = _read_array(args.input)
    if frames.ndim == 3:
        frames = frames[0]
    bones = BONES
    if args.data:
        from .io import read_manifest
        bones = parse_bones(read_manifest(args.data)["meta.bones"])
    out = _out(args, "gesture.svg")
    out.write_text(render_svg(frames, args.every, bones), encoding="ascii")
    print(f"{len(frames[::args.every])} panels -> {out}")


COMMANDS = {
    "gen-data": cmd_gen_data, "train-t2g": cmd_train_t2g, "fit-f2t": cmd_fit_f2t,
    "train-f2g": cmd_train_f2g, "decode-text": cmd_decode_text, "generate": cmd_generate,
    "evaluate": cmd_evaluate, "render": cmd_render,
}


def main(argv=None) -> int:
    from .io import FormatError
    parser = build_parser()
    try:
        args = _apply_config(parser, argv)
    except UsageError as e:
        sys.stderr.write(str(e).rstrip() + "\n")
        return 1
    except DataError as e:
        sys.stderr.write(f"error: {e}\n")
        return 2
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        COMMANDS[args.command](args)
    except (DataError, FormatError, FileNotFoundError, KeyError, ValueError) as e:
        sys.stderr.write(f"error: {e}\n")
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
