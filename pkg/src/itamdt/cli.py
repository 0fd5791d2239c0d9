"""Command-line entry point: ``itamdt <command> [options]``.

Exit codes: 0 success, 1 usage error, 2 runtime failure.  Relative output
paths are resolved under ``$ITAMDT_OUT_ROOT`` when that variable is set.
"""

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np
import torch

from . import codec as codec_mod
from .complexity import complexity_vector
from .encoder import FeatureEncoder, encode_features
from .evaluation import evaluate, generate
from .mdt import MDT, ModelConfig
from .sampler import CfgConfig
from .sre import SreParams, extract_salient, normalized_entropy_image
from .synth import gen_dataset
from .tensor_io import load_png, load_tensor, save_png, save_tensor
from .training import TrainConfig, TrainingDiverged, prepare_split, restore, train

OUT_ROOT_ENV = "ITAMDT_OUT_ROOT"
log = logging.getLogger("itamdt")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def out_path(path):
    path = Path(path)
    root = os.environ.get(OUT_ROOT_ENV)
    return Path(root) / path if root and not path.is_absolute() else path


def _settings(args, config_keys=()):
    """Merge ``--config`` JSON with explicitly given options (options win)."""
    merged = {}
    if args.config:
        merged.update(json.loads(Path(args.config).read_text()))
    merged.update({k: v for k, v in vars(args).items()
                   if v is not None and k not in ("config", "command", "func")})
    unknown = set(merged) - set(config_keys) - set(vars(args))
    if unknown:
        raise UsageError(f"unknown config keys: {sorted(unknown)}")
    return merged


# commands -----------------------------------------------------------------------


def cmd_gen_data(args):
    s = _settings(args)
    if "out" not in s:
        raise UsageError("gen-data needs --out")
    n, seed, size = s.get("n", 512), s.get("seed", 0), s.get("size", 64)
    manifest = gen_dataset(seed, n, out_path(s["out"]), size, size)
    splits = [it["split"] for it in manifest["items"]]
    print(json.dumps({"out": str(out_path(s["out"])), "n": n, "train": splits.count("train"),
                      "val": splits.count("val")}))


_TRAIN_FLAGS = {"data": "data_dir", "out": "out_dir", "steps": "steps", "seed": "seed", "batch": "batch",
                "lr": "lr", "optimizer": "optimizer", "mask_loss_form": "mask_loss_form",
                "ckpt_every": "ckpt_every", "mask_objective": "mask_objective", "threads": "threads"}


def cmd_train(args):
    fields = set(TrainConfig.__dataclass_fields__)
    s = _settings(args, fields)
    values = {k: v for k, v in s.items() if k in fields}
    for flag, key in _TRAIN_FLAGS.items():
        if flag in s and flag not in fields:
            values[key] = s[flag]
    if "data_dir" not in values or "out_dir" not in values:
        raise UsageError("train needs --data and --out (or data_dir/out_dir in --config)")
    values["out_dir"] = str(out_path(values["out_dir"]))
    config = TrainConfig.from_dict(values)
    ckpt = train(config)
    print(json.dumps({"checkpoint": str(ckpt), "metrics": str(Path(config.out_dir) / "metrics.jsonl")}))


def _cfg(s):
    return CfgConfig(alpha_cfg=s.get("cfg", 2.0), beta_scale=s.get("beta_scale", 1.0), steps=s.get("steps", 30))


def cmd_sample(args):
    s = _settings(args)
    for key in ("ckpt", "data", "out"):
        if key not in s:
            raise UsageError(f"sample needs --{key}")
    torch.set_num_threads(1)
    model, encoder, config, norm = restore(s["ckpt"], s.get("weights", "ema"))
    codec = codec_mod.build_codec(config.codec_seed, config.codec_f)
    data, _ = prepare_split(s["data"], s.get("split", "val"), codec, encoder, config.sre, norm)
    if s.get("limit"):
        data = data.head(s["limit"])
    seed = s.get("seed", 0)
    with torch.no_grad():
        z0, decoded, blended = generate(model, data, norm, codec, _cfg(s), seed)
    out = out_path(s["out"])
    for i, sid in enumerate(data.ids):
        save_png(out / f"{sid:05d}.png", blended[i])
        if s.get("dump_latent"):
            save_tensor(out / f"{sid:05d}_latent.f32", z0[i], id=sid, seed=seed, space="codec")
    print(json.dumps({"out": str(out), "count": len(data)}))


def cmd_sre(args):
    s = _settings(args)
    if "in_dir" not in s or "out" not in s:
        raise UsageError("sre needs --in and --out")
    params = SreParams(E=s.get("threshold", 0.8), l_min=s.get("lmin", 16), s_out=s.get("size", 32),
                       normalize=not s.get("raw", False))
    src, out = Path(s["in_dir"]), out_path(s["out"])
    files = [src] if src.is_file() else sorted(src.rglob("*.png"))
    if not files:
        raise FileNotFoundError(f"no PNG images under {src}")
    for f in files:
        name = f.stem if src.is_file() else f.relative_to(src).with_suffix("").as_posix().replace("/", "_")
        img = load_png(f)
        r = extract_salient(img, params)
        save_png(out / f"{name}_crop.png", r.crop)
        meta = {"source": str(f), "bbox": list(r.bbox), "used_threshold": r.used_threshold,
                "fallback_used": r.fallback_used}
        (out / f"{name}.json").write_text(json.dumps(meta, indent=1))
        if s.get("emit_entropy"):
            save_png(out / f"{name}_entropy.png", normalized_entropy_image(img, params)[None])
    print(json.dumps({"out": str(out), "count": len(files)}))


def cmd_itafa_weights(args):
    s = _settings(args)
    if ("features" in s) == ("image" in s):
        raise UsageError("itafa-weights needs exactly one of --features or --image")
    if "timestep" not in s:
        raise UsageError("itafa-weights needs --timestep")
    if "ckpt" in s:
        model, encoder, _, _ = restore(s["ckpt"], s.get("weights", "ema"))
    else:
        model, encoder = None, FeatureEncoder()
    if "features" in s:
        feats = torch.from_numpy(load_tensor(s["features"])[0])
    else:
        feats = encode_features(encoder, load_png(s["image"])).detach()
    if feats.ndim != 3:
        raise ValueError(f"feature stack must be L×s×d, got shape {tuple(feats.shape)}")
    if model is None:
        L, n_tok, d = feats.shape
        model = MDT(ModelConfig(feat_layers=L, feat_tokens=n_tok, feat_dim=d, seed=s.get("seed", 0)))
    with torch.no_grad():
        T = model.timestep_embedding(torch.tensor([int(s["timestep"])]))[0]
        c = complexity_vector(feats)
        w_t, w_i = model.itafa.logits(T, c)
        weights = model.itafa.weights(T, c)
    S, V, G = c.tolist()
    print(json.dumps({"timestep": int(s["timestep"]), "S": S, "V": V, "G": G, "W_T": w_t.tolist(),
                      "W_I": w_i.tolist(), "alpha": model.itafa.alpha.item(), "weights": weights.tolist()}))


def cmd_eval(args):
    s = _settings(args)
    for key in ("ckpt", "data"):
        if key not in s:
            raise UsageError(f"eval needs --{key}")
    torch.set_num_threads(1)
    out = out_path(s["out"]) if "out" in s else None
    result = evaluate(s["ckpt"], s["data"], s.get("split", "val"), s.get("seed", 0), _cfg(s),
                      s.get("weights", "ema"), out)
    print(json.dumps({"checkpoint": result["checkpoint"], "aggregate": result["aggregate"]}, indent=1))


# parser ---------------------------------------------------------------------------


def build_parser():
    common = _Parser(add_help=False)
    common.add_argument("--config", help="JSON file of option defaults; explicit options override it")
    p = _Parser(prog="itamdt", description="Desk-scale masked diffusion try-on pipeline.")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    g = sub.add_parser("gen-data", parents=[common], help="write a synthetic try-on dataset")
    g.add_argument("--n", type=int, help="number of samples (default 512)")
    g.add_argument("--out", help="output directory")
    g.add_argument("--seed", type=int, help="dataset seed (default 0)")
    g.add_argument("--size", type=int, help="image side in pixels (default 64)")
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", parents=[common], help="train the denoiser")
    t.add_argument("--data", help="dataset directory")
    t.add_argument("--out", help="run directory for metrics and checkpoints")
    t.add_argument("--steps", type=int)
    t.add_argument("--seed", type=int)
    t.add_argument("--batch", type=int)
    t.add_argument("--lr", type=float)
    t.add_argument("--optimizer", choices=("adamw", "sgd"))
    t.add_argument("--mask-loss-form", choices=("noise", "token"))
    t.add_argument("--no-mask-objective", dest="mask_objective", action="store_const", const=False)
    t.add_argument("--ckpt-every", type=int)
    t.add_argument("--threads", type=int)
    t.set_defaults(func=cmd_train)

    for name, func, text in (("sample", cmd_sample, "sample try-on images from a checkpoint"),
                             ("eval", cmd_eval, "score samples and the copy-agnostic baseline")):
        q = sub.add_parser(name, parents=[common], help=text)
        q.add_argument("--ckpt", help="checkpoint directory or manifest.json")
        q.add_argument("--data", help="dataset directory")
        q.add_argument("--split", choices=("train", "val"))
        q.add_argument("--steps", type=int, help="DDIM steps (default 30)")
        q.add_argument("--cfg", type=float, help="guidance scale alpha_cfg (default 2.0)")
        q.add_argument("--beta-scale", type=float, help="guidance ramp exponent (default 1.0)")
        q.add_argument("--seed", type=int)
        q.add_argument("--weights", choices=("ema", "raw"))
        q.add_argument("--out", help="output directory (sample) or JSON file (eval)")
        if name == "sample":
            q.add_argument("--limit", type=int, help="only the first N items of the split")
            q.add_argument("--dump-latent", action="store_const", const=True,
                           help="also write each sampled latent as a raw f32 blob")
        q.set_defaults(func=func)

    r = sub.add_parser("sre", parents=[common], help="extract salient regions from garment images")
    r.add_argument("--in", dest="in_dir", help="PNG file or directory searched recursively")
    r.add_argument("--out", help="output directory")
    r.add_argument("--threshold", type=float, help="starting entropy threshold (default 0.8)")
    r.add_argument("--lmin", type=int, help="minimum region side (default 16)")
    r.add_argument("--size", type=int, help="output crop side (default 32)")
    r.add_argument("--emit-entropy", action="store_const", const=True, help="also write the entropy map")
    r.add_argument("--raw", action="store_const", const=True,
                   help="threshold raw entropy in bits instead of the peak-normalised map")
    r.set_defaults(func=cmd_sre)

    w = sub.add_parser("itafa-weights", parents=[common], help="print layer weights for a feature stack")
    w.add_argument("--features", help="raw f32 feature stack (L×s×d) with JSON sidecar")
    w.add_argument("--image", help="PNG to encode with the seeded feature encoder instead")
    w.add_argument("--timestep", type=int)
    w.add_argument("--ckpt", help="take ITAFA parameters from this checkpoint")
    w.add_argument("--weights", choices=("ema", "raw"))
    w.add_argument("--seed", type=int, help="initialisation seed when no checkpoint is given")
    w.set_defaults(func=cmd_itafa_weights)
    return p


def main(argv=None):
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            parser.print_help(sys.stderr)
            return 1
        args.func(args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help
        return 0 if exc.code in (0, None) else 1
    except (OSError, ValueError, KeyError, TrainingDiverged, json.JSONDecodeError) as exc:
        print(f"itamdt: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
