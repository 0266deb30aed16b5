"""Command-line front end.

Subcommands: ``project`` (equirect to cubemap files), ``assemble`` (cubemap
files to equirect), ``train``, ``sample``, ``eval``, and ``config dump``.
Exit codes: 0 success, 1 I/O failure, 2 usage or configuration error.  All
randomness flows from the single seed in the run config.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import asdict, fields
from pathlib import Path

import numpy as np

from .denoiser import DenoiserConfig
from .diffusion import SamplerConfig, cosine_schedule, sample_cubemap_latents
from .errors import CheckpointError, ConfigError, DomainError, PanocubeError
from .geometry import FaceId
from .imageio import load_cubemap, load_equirect, load_image, save_cubemap, save_equirect, save_image
from .latents import PixelLatentCodec
from .metrics import (
    face_color_divergence,
    kid_mmd,
    metric_report,
    patch_stats_features,
    seam_discontinuity,
    wraparound_error,
)
from .projection import Cubemap, bilinear_sample, crop_overlap, cubemap_to_equirect, equirect_to_cubemap
from .synth import synth_panorama, toy_text_embed
from .training import TrainConfig, load_train_state, run_training

__all__ = ["main", "RunConfig", "default_run_config", "load_run_config"]

_EXIT_OK = 0
_EXIT_IO = 1
_EXIT_USAGE = 2


# ----------------------------------------------------------------- run config

def default_run_config() -> dict:
    """Full RunConfig document with every default filled in."""
    model = asdict(DenoiserConfig())
    model.pop("dtype")
    train = asdict(TrainConfig())
    for key in ("schedule_T", "face_size", "overlap_fov_deg", "seed"):
        train.pop(key)
    return {
        "geometry": {"face_size": TrainConfig().face_size,
                     "fov_deg": TrainConfig().overlap_fov_deg},
        "model": model,
        "diffusion": {
            "T": TrainConfig().schedule_T,
            "ddim_steps": SamplerConfig().ddim_steps,
            "cfg_scale_text": SamplerConfig().cfg_scale_text,
            "cfg_scale_image": SamplerConfig().cfg_scale_image,
        },
        "train": train,
        "seed": 0,
    }


def _check_keys(doc: dict, defaults: dict, path: str = "") -> None:
    for key, value in doc.items():
        where = f"{path}.{key}" if path else key
        if key not in defaults:
            raise ConfigError(f"unknown config key {where!r}")
        if isinstance(defaults[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"config key {where!r} must be a section")
            _check_keys(value, defaults[key], where)


def load_run_config(path_or_none) -> dict:
    """Merge a user config over the defaults, rejecting unknown keys."""
    cfg = default_run_config()
    if path_or_none is None:
        return cfg
    doc = json.loads(Path(path_or_none).read_text())
    _check_keys(doc, cfg)
    for section, value in doc.items():
        if isinstance(value, dict):
            cfg[section].update(value)
        else:
            cfg[section] = value
    return cfg


class RunConfig:
    """Typed view over the JSON document."""

    def __init__(self, doc: dict):
        self.doc = doc
        g, m, d, t = doc["geometry"], doc["model"], doc["diffusion"], doc["train"]
        self.model = DenoiserConfig(
            **{**m, "channel_mult": tuple(m["channel_mult"]),
               "attention_levels": tuple(m["attention_levels"])}
        )
        if g["face_size"] != self.model.face_latent_size * self.model.latent_block:
            raise ConfigError(
                "geometry.face_size must equal model.face_latent_size * model.latent_block"
            )
        self.train = TrainConfig(
            **{**t, "kinds": tuple(t["kinds"]), "seed": doc["seed"],
               "schedule_T": d["T"], "face_size": g["face_size"],
               "overlap_fov_deg": g["fov_deg"]}
        )
        self.sampler = SamplerConfig(
            ddim_steps=d["ddim_steps"], cfg_scale_text=d["cfg_scale_text"],
            cfg_scale_image=d["cfg_scale_image"], seed=doc["seed"],
        )
        self.fov_deg = float(g["fov_deg"])
        self.seed = int(doc["seed"])


# ------------------------------------------------------------------- commands

def cmd_project(args) -> int:
    try:
        eq = load_equirect(args.equirect)
    except FileNotFoundError as e:
        print(f"error: {e}", file=sys.stderr)
        return _EXIT_IO
    cm = equirect_to_cubemap(eq, args.face_size, args.fov)
    save_cubemap(args.out, cm)
    print(f"wrote 6 faces + sidecar at {args.out}")
    return _EXIT_OK


def cmd_assemble(args) -> int:
    try:
        cm = load_cubemap(args.cubemap)
    except FileNotFoundError as e:
        print(f"error: {e}", file=sys.stderr)
        return _EXIT_IO
    eq = cubemap_to_equirect(cm, args.height)
    save_equirect(args.out, eq)
    print(f"wrote {args.out}")
    return _EXIT_OK


def cmd_config(args) -> int:
    cfg = load_run_config(args.config)
    RunConfig(cfg)  # validate before echoing
    print(json.dumps(cfg, indent=2, sort_keys=True))
    return _EXIT_OK


def cmd_train(args) -> int:
    rc = RunConfig(load_run_config(args.config))
    log_path = args.log or (str(Path(args.out).with_suffix(".log.jsonl")))
    run_training(
        rc.model, rc.train, checkpoint_path=args.out, log_path=log_path,
        resume_from=args.resume, stop_after=args.stop_after, progress=not args.quiet,
    )
    print(f"wrote checkpoint {args.out} and log {log_path}")
    return _EXIT_OK


def _resize_to_face(img: np.ndarray, size: int) -> np.ndarray:
    h, w = img.shape[:2]
    ii, jj = np.meshgrid(np.arange(size), np.arange(size), indexing="ij")
    y = (ii + 0.5) / size * h - 0.5
    x = (jj + 0.5) / size * w - 0.5
    return bilinear_sample(img, x, y, wrap="clamp")


def cmd_sample(args) -> int:
    try:
        model, _opt, _step, train_cfg = load_train_state(args.checkpoint)
    except (CheckpointError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return _EXIT_IO
    codec = PixelLatentCodec(model.config.latent_block)
    sched = cosine_schedule(train_cfg.schedule_T)
    sampler = SamplerConfig(
        ddim_steps=args.steps, seed=args.seed,
        cfg_scale_text=args.cfg_text, cfg_scale_image=args.cfg_image,
    )

    cond_latent = None
    if args.image:
        try:
            img = load_image(args.image)
        except FileNotFoundError as e:
            print(f"error: {e}", file=sys.stderr)
            return _EXIT_IO
        face = _resize_to_face(img, train_cfg.face_size)
        cond_latent = codec.encode(face)[None].astype(np.float32)

    text_tokens = None
    if args.prompt_face:
        if len(args.prompt_face) != 6:
            print("error: --prompt-face must be given exactly 6 times", file=sys.stderr)
            return _EXIT_USAGE
        per_face = [None] * 6
        for spec in args.prompt_face:
            name, _, text = spec.partition(":")
            names = [f.name.lower() for f in FaceId]
            if name.lower() not in names or not text:
                print(f"error: bad --prompt-face {spec!r}; use face:text", file=sys.stderr)
                return _EXIT_USAGE
            per_face[names.index(name.lower())] = text
        if any(t is None for t in per_face):
            print("error: --prompt-face must cover all six faces", file=sys.stderr)
            return _EXIT_USAGE
        toks = [toy_text_embed(t, model.config.text_tokens, model.config.text_dim)
                for t in per_face]
        text_tokens = np.concatenate(toks, axis=0)[None]
    elif args.prompt:
        text_tokens = toy_text_embed(
            args.prompt, model.config.text_tokens, model.config.text_dim
        )[None]

    latents = sample_cubemap_latents(
        model, sched, sampler, train_cfg.overlap_fov_deg,
        cond_latent=cond_latent, text_tokens=text_tokens,
    )
    faces = codec.decode(latents[0])
    cm = Cubemap(faces, train_cfg.overlap_fov_deg)
    out = Path(args.out)
    save_cubemap(out, cm)
    eq = cubemap_to_equirect(cm, args.height)
    save_equirect(out.parent / f"{out.name}_equirect.png", eq)
    meta = {
        "seed": args.seed,
        "ddim_steps": args.steps,
        "cfg_scale_text": args.cfg_text,
        "cfg_scale_image": args.cfg_image,
        "conditioned_on_image": bool(args.image),
        "prompt": args.prompt,
        "prompt_face": args.prompt_face,
    }
    (out.parent / f"{out.name}_meta.json").write_text(json.dumps(meta, indent=2) + "\n")
    print(f"wrote faces, equirect and metadata at stem {out}")
    return _EXIT_OK


def cmd_eval(args) -> int:
    if args.metric == "seam" or args.metric == "color":
        try:
            cm = load_cubemap(args.inputs[0])
        except FileNotFoundError as e:
            print(f"error: {e}", file=sys.stderr)
            return _EXIT_IO
        if cm.fov_deg > 90.0 + 1e-9:
            cm = Cubemap(
                np.stack([crop_overlap(cm.faces[f], cm.fov_deg, 90.0) for f in range(6)]), 90.0
            )
        if args.metric == "seam":
            rep = seam_discontinuity(cm)
            out = metric_report("seam", {"mean": rep.mean, "max": rep.max}, 12, args.seed,
                                {"face_size": cm.size})
        else:
            out = metric_report("color", face_color_divergence(cm), 6, args.seed,
                                {"face_size": cm.size})
    elif args.metric == "wrap":
        try:
            eq = load_equirect(args.inputs[0])
        except FileNotFoundError as e:
            print(f"error: {e}", file=sys.stderr)
            return _EXIT_IO
        out = metric_report("wrap", wraparound_error(eq), 1, args.seed, {})
    elif args.metric == "kid":
        if len(args.inputs) != 2:
            print("error: kid needs two directories of PNG images", file=sys.stderr)
            return _EXIT_USAGE
        sets = []
        for d in args.inputs:
            paths = sorted(Path(d).glob("*.png"))
            if len(paths) < 2:
                print(f"error: {d} holds fewer than 2 PNG images", file=sys.stderr)
                return _EXIT_IO
            sets.append(np.stack([patch_stats_features(load_image(p)) for p in paths]))
        value = kid_mmd(sets[0], sets[1])
        out = metric_report("kid", value, min(len(sets[0]), len(sets[1])), args.seed,
                            {"kernel_degree": 3})
    else:
        print(f"error: unknown metric {args.metric!r}", file=sys.stderr)
        return _EXIT_USAGE
    print(json.dumps(out, indent=2, sort_keys=True))
    return _EXIT_OK


def cmd_synth(args) -> int:
    eq = synth_panorama(args.seed, args.kind, args.height)
    save_equirect(args.out, eq)
    print(f"wrote {args.out}")
    return _EXIT_OK


# --------------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="panocube",
                                description="cubemap panorama diffusion toolkit")
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("project", help="split an equirect PNG into cubemap faces")
    sp.add_argument("equirect")
    sp.add_argument("out", help="output stem for the six faces + sidecar")
    sp.add_argument("--face-size", type=int, default=256, dest="face_size")
    sp.add_argument("--fov", type=float, default=90.0)
    sp.set_defaults(fn=cmd_project)

    sp = sub.add_parser("assemble", help="assemble cubemap faces into an equirect PNG")
    sp.add_argument("cubemap", help="cubemap stem (six faces + sidecar)")
    sp.add_argument("out")
    sp.add_argument("--height", type=int, default=512)
    sp.set_defaults(fn=cmd_assemble)

    sp = sub.add_parser("config", help="dump the run config with defaults applied")
    sp.add_argument("action", choices=["dump"])
    sp.add_argument("--config", default=None)
    sp.set_defaults(fn=cmd_config)

    sp = sub.add_parser("train", help="train the denoiser on synthetic panoramas")
    sp.add_argument("--config", default=None)
    sp.add_argument("--out", default="model.cpan")
    sp.add_argument("--log", default=None)
    sp.add_argument("--resume", default=None)
    sp.add_argument("--stop-after", type=int, default=None, dest="stop_after")
    sp.add_argument("--quiet", action="store_true")
    sp.set_defaults(fn=cmd_train)

    sp = sub.add_parser("sample", help="sample a panorama from a checkpoint")
    sp.add_argument("checkpoint")
    sp.add_argument("--out", default="sample")
    sp.add_argument("--image", default=None, help="conditioning view for the Front face")
    sp.add_argument("--prompt", default=None)
    sp.add_argument("--prompt-face", action="append", default=None,
                    help="face:text, repeated exactly 6 times", dest="prompt_face")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--steps", type=int, default=50)
    sp.add_argument("--cfg-text", type=float, default=3.0, dest="cfg_text")
    sp.add_argument("--cfg-image", type=float, default=3.0, dest="cfg_image")
    sp.add_argument("--height", type=int, default=256)
    sp.set_defaults(fn=cmd_sample)

    sp = sub.add_parser("eval", help="compute panorama metrics as JSON")
    sp.add_argument("inputs", nargs="+")
    sp.add_argument("--metric", required=True)
    sp.add_argument("--seed", type=int, default=0)
    sp.set_defaults(fn=cmd_eval)

    sp = sub.add_parser("synth", help="render a procedural test panorama")
    sp.add_argument("--kind", default="beacon_room")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--height", type=int, default=256)
    sp.add_argument("--out", default="synth.png")
    sp.set_defaults(fn=cmd_synth)

    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return _EXIT_USAGE if e.code not in (0, None) else _EXIT_OK
    try:
        return args.fn(args)
    except (ConfigError, DomainError) as e:
        print(f"error: {e}", file=sys.stderr)
        return _EXIT_USAGE
    except (OSError, CheckpointError, PanocubeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return _EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
