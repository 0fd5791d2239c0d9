"""Dataset preparation, the training loop, EMA and checkpoint I/O."""

import dataclasses
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from . import codec as codec_mod
from .complexity import complexity_vector
from .encoder import EncoderConfig, FeatureEncoder
from .losses import (denoise_loss, inpaint_loss, mask_recon_loss, normalize_latent_mask,
                     token_recon_loss, total_loss)
from .mdt import MDT, ModelConfig, sample_token_mask
from .sampler import make_schedule, q_sample
from .sre import SreParams, extract_salient, resize_bilinear
from .synth import load_manifest, load_sample
from .tensor_io import load_tensor, save_tensor

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainConfig:
    data_dir: str = "data"
    out_dir: str = "runs/default"
    seed: int = 0
    steps: int = 3000
    batch: int = 8
    lr: float = 3e-4  # desk-scale rate for 3000-step runs; full-scale training used 1e-4
    optimizer: str = "adamw"
    momentum: float = 0.9
    ema_rate: float = 0.9999
    ema_warmup: bool = True
    mask_ratio: float = 0.3
    mask_objective: bool = True
    mask_loss_form: str = "noise"
    cond_drop: float = 0.1
    T_train: int = 1000
    ckpt_every: int = 1000
    threads: int = 1
    codec_seed: int = 7
    codec_f: int = 8
    model: ModelConfig = field(default_factory=ModelConfig)
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    sre: SreParams = field(default_factory=SreParams)

    def __post_init__(self):
        for name, cls in (("model", ModelConfig), ("encoder", EncoderConfig), ("sre", SreParams)):
            value = getattr(self, name)
            if isinstance(value, dict):
                setattr(self, name, cls(**value))
        if not (0 < self.lr and 0 <= self.ema_rate <= 1 and 0 < self.mask_ratio < 1):
            raise ValueError("lr, ema_rate or mask_ratio out of range")
        if not 0 <= self.cond_drop < 1:
            raise ValueError(f"cond_drop must be in [0, 1), got {self.cond_drop}")
        if self.optimizer not in ("adamw", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.mask_loss_form not in ("noise", "token"):
            raise ValueError(f"unknown mask_loss_form {self.mask_loss_form!r}")

    def to_dict(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data):
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - names
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)


# data ---------------------------------------------------------------------------


@dataclass
class LatentNorm:
    """Per-channel shift and scale applied to codec latents before diffusion.

    ``lo``/``hi`` are the normalised per-channel extremes seen in training,
    used to clip clean-latent estimates while sampling.
    """

    mean: list
    std: list
    lo: list
    hi: list

    @classmethod
    def fit(cls, z):
        mean = z.mean(dim=(0, 2, 3))
        std = z.std(dim=(0, 2, 3))
        zn = (z - mean[None, :, None, None]) / std[None, :, None, None]
        return cls(mean.tolist(), std.tolist(), zn.amin(dim=(0, 2, 3)).tolist(), zn.amax(dim=(0, 2, 3)).tolist())

    def _view(self, values, like):
        return torch.as_tensor(values, dtype=like.dtype).view(1, -1, 1, 1)

    def normalize(self, z):
        """Works on (B, 4k, H, W): every 4-channel group shares the statistics."""
        reps = z.shape[1] // len(self.mean)
        mean = self._view(self.mean * reps, z)
        std = self._view(self.std * reps, z)
        return (z - mean) / std

    def denormalize(self, z):
        return z * self._view(self.std, z) + self._view(self.mean, z)

    def clip_bounds(self):
        return torch.tensor(self.lo).view(1, -1, 1, 1), torch.tensor(self.hi).view(1, -1, 1, 1)

    def to_dict(self):
        return dataclasses.asdict(self)


@dataclass
class Prepared:
    """Tensors for one split; latents are already normalised."""

    ids: list
    z0: torch.Tensor
    refs: torch.Tensor
    m_norm: torch.Tensor
    garment_small: torch.Tensor
    crops: torch.Tensor
    feats_g: torch.Tensor
    feats_s: torch.Tensor
    cplx_g: torch.Tensor
    cplx_s: torch.Tensor
    agnostic: np.ndarray
    person: np.ndarray
    mask: np.ndarray

    def __len__(self):
        return len(self.ids)

    def head(self, n):
        """The first ``n`` items."""
        return Prepared(**{f.name: getattr(self, f.name)[:n] for f in dataclasses.fields(self)})


def prepare_split(data_dir, split, codec, encoder, sre_params, norm=None):
    """Encode every item of ``split``; returns ``(Prepared, LatentNorm)``.

    ``norm`` is fitted on this split's person latents when not given.
    """
    manifest = load_manifest(data_dir)
    items = [it for it in manifest["items"] if it["split"] == split]
    if not items:
        raise ValueError(f"split {split!r} of {data_dir} is empty")
    side = encoder.config.side
    cols = {k: [] for k in ("z0", "refs", "m", "gs", "crop", "ag", "person", "mask")}
    for it in items:
        s = load_sample(data_dir, it)
        cols["z0"].append(codec_mod.encode(s.person, codec))
        cols["refs"].append(np.concatenate([codec_mod.encode(s.agnostic, codec),
                                            codec_mod.encode(s.pose, codec),
                                            codec_mod.encode_mask(s.mask, codec)]))
        cols["m"].append(codec_mod.encode_mask(s.mask, codec))
        cols["gs"].append(resize_bilinear(s.garment, (side, side)))
        crop = extract_salient(s.garment, sre_params).crop
        if crop.shape[-1] != side:
            crop = resize_bilinear(crop, (side, side))
        cols["crop"].append(crop)
        cols["ag"].append(s.agnostic)
        cols["person"].append(s.person)
        cols["mask"].append(s.mask)
    z0 = torch.from_numpy(np.stack(cols["z0"])).float()
    if norm is None:
        norm = LatentNorm.fit(z0)
    refs = torch.from_numpy(np.stack(cols["refs"])).float()
    m_norm = normalize_latent_mask(torch.from_numpy(np.stack(cols["m"]))).float()
    gs = torch.from_numpy(np.stack(cols["gs"])).float()
    crops = torch.from_numpy(np.stack(cols["crop"])).float()
    with torch.no_grad():
        fg, fs = encoder(gs), encoder(crops)
    prepared = Prepared(
        ids=[it["id"] for it in items], z0=norm.normalize(z0), refs=norm.normalize(refs), m_norm=m_norm,
        garment_small=gs, crops=crops, feats_g=fg, feats_s=fs,
        cplx_g=complexity_vector(fg).float(), cplx_s=complexity_vector(fs).float(),
        agnostic=np.stack(cols["ag"]), person=np.stack(cols["person"]), mask=np.stack(cols["mask"]),
    )
    return prepared, norm


def batch_features(encoder, data, idx):
    """Cached stacks for a frozen encoder, fresh ones when it trains."""
    if encoder.config.trainable:
        fg, fs = encoder(data.garment_small[idx]), encoder(data.crops[idx])
        return fg, fs, complexity_vector(fg).float(), complexity_vector(fs).float()
    return data.feats_g[idx], data.feats_s[idx], data.cplx_g[idx], data.cplx_s[idx]


# EMA / parameters -------------------------------------------------------------


def ema_update(raw, ema, rate):
    """``ema <- rate·ema + (1 - rate)·raw`` over two name->tensor dicts, in place."""
    if raw.keys() != ema.keys():
        raise ValueError(f"parameter trees differ: {sorted(set(raw) ^ set(ema))}")
    with torch.no_grad():
        for name, value in raw.items():
            if ema[name].shape != value.shape:
                raise ValueError(f"{name}: shape {tuple(ema[name].shape)} vs {tuple(value.shape)}")
            ema[name].mul_(rate).add_(value.detach(), alpha=1 - rate)
    return ema


def ema_rate_at(rate, n_updates, warmup=True):
    """Configured rate, tempered during the first updates when ``warmup`` is on."""
    return min(rate, (1 + n_updates) / (10 + n_updates)) if warmup else rate


def named_params(model, encoder):
    params = {f"mdt.{k}": v for k, v in model.named_parameters()}
    params.update({f"encoder.{k}": v for k, v in encoder.named_parameters()})
    return params


def build_models(config):
    torch.manual_seed(config.seed)
    model = MDT(dataclasses.replace(config.model, seed=config.seed))
    encoder = FeatureEncoder(config.encoder)
    return model, encoder


# checkpoints --------------------------------------------------------------------


def _safe(name):
    return name.replace("/", "_")


def save_checkpoint(ckpt_dir, config, step, ema_step, raw, ema, norm):
    """Manifest JSON plus one raw little-endian f32 blob per parameter and weight set."""
    ckpt_dir = Path(ckpt_dir)
    entries = []
    for name in sorted(raw):
        for kind, tree in (("raw", raw), ("ema", ema)):
            save_tensor(ckpt_dir / kind / f"{_safe(name)}.f32", tree[name].detach().cpu().numpy(), name=name)
        entries.append({"name": name, "shape": list(raw[name].shape),
                        "raw": f"raw/{_safe(name)}.f32", "ema": f"ema/{_safe(name)}.f32"})
    manifest = {"config": config.to_dict(), "step": int(step), "ema_step": int(ema_step),
                "latent_norm": norm.to_dict(), "params": entries}
    path = ckpt_dir / "manifest.json"
    path.write_text(json.dumps(manifest, indent=1, sort_keys=True))
    return path


def load_checkpoint(path):
    """Returns ``(manifest, raw, ema)`` with name->tensor dicts."""
    path = Path(path)
    if path.is_dir():
        path = path / "manifest.json"
    if not path.exists():
        raise FileNotFoundError(f"checkpoint manifest not found: {path}")
    manifest = json.loads(path.read_text())
    for key in ("config", "step", "ema_step", "latent_norm", "params"):
        if key not in manifest:
            raise KeyError(f"checkpoint {path} lacks field {key!r}")
    raw, ema = {}, {}
    for entry in manifest["params"]:
        raw[entry["name"]] = torch.from_numpy(load_tensor(path.parent / entry["raw"])[0])
        ema[entry["name"]] = torch.from_numpy(load_tensor(path.parent / entry["ema"])[0])
    return manifest, raw, ema


def restore(path, weights="ema"):
    """Rebuild ``(model, encoder, config, LatentNorm)`` from a checkpoint."""
    manifest, raw, ema = load_checkpoint(path)
    config = TrainConfig.from_dict(manifest["config"])
    model, encoder = build_models(config)
    tree = ema if weights == "ema" else raw
    params = named_params(model, encoder)
    with torch.no_grad():
        for name, p in params.items():
            if name not in tree:
                raise KeyError(f"checkpoint lacks parameter {name}")
            p.copy_(tree[name])
    model.eval()
    return model, encoder, config, LatentNorm(**manifest["latent_norm"])


# training -----------------------------------------------------------------------


def _generators(seed):
    seeds = np.random.SeedSequence(seed).generate_state(5)
    return {k: torch.Generator().manual_seed(int(s))
            for k, s in zip(("batch", "t", "noise", "drop", "mask"), seeds)}


def compute_losses(model, encoder, data, idx, t, eps, drop, keep, config, schedule):
    """All three objectives for one batch; ``keep=None`` skips the masked pass."""
    c = model.config
    fg, fs, cg, cs = batch_features(encoder, data, idx)
    z0 = data.z0[idx]
    z_t = q_sample(z0, t.numpy(), eps, schedule)
    cond = model.condition(t, fg, fs, cg, cs, drop)
    refs = data.refs[idx]
    eps_hat, aux = model.denoise(z_t, refs, cond, return_aux=True)
    l_den = denoise_loss(eps, eps_hat)
    l_inp = inpaint_loss(eps, eps_hat, data.m_norm[idx])
    if keep is None:
        l_mask = eps.new_zeros(())
    else:
        eps_m, aux_m = model.denoise(z_t, refs, cond, keep, return_aux=True)
        if config.mask_loss_form == "noise":
            l_mask = mask_recon_loss(eps, eps_m, keep, c.patch, c.grid)
        else:
            l_mask = token_recon_loss(aux_m["side_out"], aux["enc_out"], keep)
    return total_loss(l_den, l_mask, l_inp)


def make_optimizer(config, params):
    if config.optimizer == "adamw":
        return torch.optim.AdamW(params, lr=config.lr, weight_decay=0.0)
    return torch.optim.SGD(params, lr=config.lr, momentum=config.momentum)


def train(config, data=None, callback=None):
    """Run ``config.steps`` updates; writes metrics.jsonl and checkpoints under ``out_dir``.

    ``data`` may be a pre-built ``(Prepared, LatentNorm)`` pair to skip
    preprocessing.  ``callback(step, model, encoder, ema)`` runs after each
    update.  Returns the path of the final checkpoint manifest.
    """
    if config.threads:
        torch.set_num_threads(config.threads)
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    model, encoder = build_models(config)
    if data is None:
        codec = codec_mod.build_codec(config.codec_seed, config.codec_f)
        data = prepare_split(config.data_dir, "train", codec, encoder, config.sre)
    data, norm = data
    schedule = make_schedule(config.T_train)
    params = named_params(model, encoder)
    trainable = [p for p in params.values() if p.requires_grad]
    opt = make_optimizer(config, trainable)
    ema = {k: v.detach().clone() for k, v in params.items()}
    gens = _generators(config.seed)
    c = model.config
    metrics_path = out / "metrics.jsonl"
    metrics_path.write_text("")
    ckpt = None
    with metrics_path.open("a") as metrics:
        for step in range(1, config.steps + 1):
            idx = torch.randint(len(data), (config.batch,), generator=gens["batch"])
            t = torch.randint(config.T_train, (config.batch,), generator=gens["t"])
            eps = torch.randn(data.z0[idx].shape, generator=gens["noise"])
            drop = torch.rand(config.batch, generator=gens["drop"]) < config.cond_drop
            keep = sample_token_mask(c.tokens, config.mask_ratio, gens["mask"], batch=config.batch)
            losses = compute_losses(model, encoder, data, idx, t, eps, drop,
                                    keep if config.mask_objective else None, config, schedule)
            if not torch.isfinite(losses.l_total):
                dump = {"step": step, "seed": config.seed, "batch_ids": [data.ids[i] for i in idx.tolist()],
                        "t": t.tolist(), "losses": losses.as_floats()}
                (out / "nan_dump.json").write_text(json.dumps(dump, indent=1))
                raise TrainingDiverged(f"non-finite loss at step {step}; batch written to {out / 'nan_dump.json'}")
            opt.zero_grad(set_to_none=True)
            losses.l_total.backward()
            opt.step()
            model.project_()
            ema_update(params, ema, ema_rate_at(config.ema_rate, step - 1, config.ema_warmup))
            row = {"step": step, **losses.as_floats(), "lr": config.lr}
            metrics.write(json.dumps(row) + "\n")
            metrics.flush()
            if callback is not None:
                callback(step, model, encoder, ema)
            if step % config.ckpt_every == 0 or step == config.steps:
                ckpt = save_checkpoint(out / f"step_{step:06d}", config, step, step, params, ema, norm)
                log.info("step %d l_total %.4f -> %s", step, row["l_total"], ckpt)
    return ckpt
