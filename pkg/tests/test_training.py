import hashlib
import json
from pathlib import Path

import numpy as np
import pytest
import torch

from itamdt import training
from itamdt.evaluation import evaluate, masked_mse, psnr, score, ssim
from itamdt.losses import LossBreakdown
from itamdt.sampler import CfgConfig
from itamdt.synth import load_manifest, load_sample
from itamdt.training import (LatentNorm, TrainConfig, TrainingDiverged, build_models, ema_rate_at, ema_update,
                             load_checkpoint, named_params, restore, save_checkpoint, train)


def rnd(seed, *shape):
    return torch.from_numpy(np.random.default_rng(seed).standard_normal(shape))


def test_ema_edge_rates():
    raw = {"a": rnd(0, 3, 2), "b": rnd(1, 4)}
    ema = {k: v.clone() + 1 for k, v in raw.items()}
    before = {k: v.clone() for k, v in ema.items()}
    ema_update(raw, ema, 1.0)
    assert all(torch.equal(ema[k], before[k]) for k in raw)
    ema_update(raw, ema, 0.0)
    assert all(torch.equal(ema[k], raw[k]) for k in raw)


def test_ema_two_step_closed_form():
    r = 0.9
    e0, r1, r2 = rnd(2, 5), rnd(3, 5), rnd(4, 5)
    ema = {"p": e0.clone()}
    ema_update({"p": r1}, ema, r)
    ema_update({"p": r2}, ema, r)
    expected = r * r * e0 + (1 - r) * (r * r1 + r2)
    assert torch.allclose(ema["p"], expected, atol=1e-12)


def test_ema_tree_mismatch():
    with pytest.raises(ValueError):
        ema_update({"a": torch.zeros(2)}, {"b": torch.zeros(2)}, 0.5)
    with pytest.raises(ValueError):
        ema_update({"a": torch.zeros(2)}, {"a": torch.zeros(3)}, 0.5)


def test_ema_warmup_rate():
    assert ema_rate_at(0.9999, 0) == pytest.approx(0.1)
    assert ema_rate_at(0.9999, 0, warmup=False) == 0.9999
    assert ema_rate_at(0.9999, 10 ** 6) == 0.9999
    rates = [ema_rate_at(0.9999, n) for n in range(0, 5000, 100)]
    assert all(a <= b for a, b in zip(rates, rates[1:]))


def test_config_validation_and_roundtrip():
    cfg = TrainConfig(data_dir="d", out_dir="o", model={"dim": 64, "heads": 4})
    assert cfg.model.dim == 64
    assert TrainConfig.from_dict(json.loads(json.dumps(cfg.to_dict()))) == cfg
    for bad in ({"lr": 0.0}, {"ema_rate": 1.5}, {"mask_ratio": 1.0}, {"cond_drop": 1.0},
                {"optimizer": "lbfgs"}, {"mask_loss_form": "pixel"}):
        with pytest.raises(ValueError):
            TrainConfig(data_dir="d", out_dir="o", **bad)
    with pytest.raises(ValueError):
        TrainConfig.from_dict({"data_dir": "d", "out_dir": "o", "learning_rate": 1.0})


def test_latent_norm_roundtrip():
    z = rnd(5, 6, 4, 8, 8).float() * torch.tensor([2.0, 0.2, 0.3, 0.3]).view(1, 4, 1, 1) + 3
    norm = LatentNorm.fit(z)
    zn = norm.normalize(z)
    assert zn.mean(dim=(0, 2, 3)).abs().max() < 1e-5
    assert (zn.std(dim=(0, 2, 3)) - 1).abs().max() < 1e-5
    assert torch.allclose(norm.denormalize(zn), z, atol=1e-5)
    lo, hi = norm.clip_bounds()
    assert (zn >= lo - 1e-6).all() and (zn <= hi + 1e-6).all()
    refs = torch.cat([z, z, z], dim=1)
    assert torch.allclose(norm.normalize(refs)[:, 8:], zn, atol=1e-6)


def _cfg(data, out, **kw):
    base = dict(data_dir=str(data), out_dir=str(out), steps=10, batch=4, ckpt_every=5, seed=3)
    base.update(kw)
    return TrainConfig(**base)


def _blob_hash(ckpt_dir):
    h = hashlib.sha256()
    for f in sorted(Path(ckpt_dir).rglob("*.f32")):
        h.update(f.read_bytes())
    return h.hexdigest()


@pytest.fixture(scope="module")
def smoke_run(small_dataset, tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    ckpt = train(_cfg(small_dataset, out))
    return out, ckpt


def test_smoke_metrics(smoke_run):
    out, ckpt = smoke_run
    rows = [json.loads(line) for line in (out / "metrics.jsonl").read_text().splitlines()]
    assert len(rows) == 10
    assert [r["step"] for r in rows] == list(range(1, 11))
    for r in rows:
        assert set(r) == {"step", "l_denoise", "l_mask", "l_inpaint", "l_total", "lr"}
        assert np.isfinite(r["l_total"])
        # terms are summed in float32 before logging
        assert abs(r["l_total"] - (r["l_denoise"] + r["l_mask"] + r["l_inpaint"])) < 1e-6
    assert ckpt == out / "step_000010" / "manifest.json"
    assert (out / "step_000005" / "manifest.json").exists()


def test_manifest_contents(smoke_run):
    out, ckpt = smoke_run
    manifest, raw, ema = load_checkpoint(ckpt)
    assert manifest["step"] == 10 and manifest["ema_step"] == 10
    assert TrainConfig.from_dict(manifest["config"]) == _cfg(manifest["config"]["data_dir"], out)
    model, encoder = build_models(TrainConfig.from_dict(manifest["config"]))
    assert set(raw) == set(named_params(model, encoder))
    for entry in manifest["params"]:
        assert list(raw[entry["name"]].shape) == entry["shape"]
    # EMA trails the raw weights
    assert any(not torch.equal(raw[k], ema[k]) for k in raw if k.startswith("mdt.enc"))


def test_checkpoint_resave_is_byte_identical(smoke_run, tmp_path):
    _, ckpt = smoke_run
    manifest, raw, ema = load_checkpoint(ckpt)
    config = TrainConfig.from_dict(manifest["config"])
    again = save_checkpoint(tmp_path / "copy", config, manifest["step"], manifest["ema_step"], raw, ema,
                            LatentNorm(**manifest["latent_norm"]))
    assert _blob_hash(ckpt.parent) == _blob_hash(again.parent)
    assert json.loads(again.read_text()) == manifest


def test_restore_selects_weights(smoke_run):
    _, ckpt = smoke_run
    _, raw, ema = load_checkpoint(ckpt)
    m_ema, _, _, _ = restore(ckpt, "ema")
    m_raw, _, _, _ = restore(ckpt, "raw")
    name = "enc.0.attn.q.weight"
    assert torch.equal(dict(m_ema.named_parameters())[name], ema["mdt." + name])
    assert torch.equal(dict(m_raw.named_parameters())[name], raw["mdt." + name])


def test_missing_checkpoint_fields(smoke_run, tmp_path):
    _, ckpt = smoke_run
    manifest = json.loads(ckpt.read_text())
    del manifest["ema_step"]
    bad = tmp_path / "manifest.json"
    bad.write_text(json.dumps(manifest))
    with pytest.raises(KeyError):
        load_checkpoint(bad)
    with pytest.raises(FileNotFoundError):
        load_checkpoint(tmp_path / "nothing")


def test_training_is_deterministic(small_dataset, tmp_path):
    a = train(_cfg(small_dataset, tmp_path / "a"))
    b = train(_cfg(small_dataset, tmp_path / "b"))
    assert _blob_hash(a.parent) == _blob_hash(b.parent)
    assert (tmp_path / "a" / "metrics.jsonl").read_bytes() == (tmp_path / "b" / "metrics.jsonl").read_bytes()
    c = train(_cfg(small_dataset, tmp_path / "c", seed=4))
    assert _blob_hash(a.parent) != _blob_hash(c.parent)


@pytest.mark.parametrize("kw", [{"mask_objective": False}, {"mask_loss_form": "token"}, {"optimizer": "sgd"}])
def test_training_modes_run(small_dataset, tmp_path, kw):
    train(_cfg(small_dataset, tmp_path, steps=3, ckpt_every=3, **kw))
    rows = [json.loads(line) for line in (tmp_path / "metrics.jsonl").read_text().splitlines()]
    assert len(rows) == 3 and all(np.isfinite(r["l_total"]) for r in rows)
    if kw.get("mask_objective") is False:
        assert all(r["l_mask"] == 0 for r in rows)


def test_nan_aborts_with_dump(small_dataset, tmp_path, monkeypatch):
    real = training.compute_losses

    def poisoned(*args, **kwargs):
        b = real(*args, **kwargs)
        nan = b.l_total * float("nan")
        return LossBreakdown(b.l_denoise, b.l_mask, b.l_inpaint, nan)

    monkeypatch.setattr(training, "compute_losses", poisoned)
    with pytest.raises(TrainingDiverged):
        train(_cfg(small_dataset, tmp_path))
    dump = json.loads((tmp_path / "nan_dump.json").read_text())
    assert dump["step"] == 1 and dump["seed"] == 3 and len(dump["batch_ids"]) == 4


def test_metric_identities():
    img = np.random.default_rng(0).random((3, 32, 32))
    mask = np.zeros((1, 32, 32))
    mask[:, 8:20, 4:30] = 1
    assert masked_mse(img, img, mask) == 0
    assert ssim(img, img) == 1.0
    assert ssim(img, img, mask) == 1.0
    assert psnr(0.0) == float("inf")
    assert psnr(0.01) == pytest.approx(20.0)
    s = score(img, img, mask)
    assert s["masked_mse"] == 0 and s["ssim"] == 1.0


def test_evaluate_baseline_matches_standalone(smoke_run, small_dataset):
    _, ckpt = smoke_run
    result = evaluate(ckpt, small_dataset, cfg=CfgConfig(steps=3))
    manifest = load_manifest(small_dataset)
    vals = [it for it in manifest["items"] if it["split"] == "val"]
    errs = []
    for it in vals:
        s = load_sample(small_dataset, it)
        m = s.mask[0] > 0.5
        errs.append(np.mean((s.agnostic[:, m].astype(np.float64) - s.person[:, m]) ** 2))
    agg = result["aggregate"]["copy_agnostic"]["masked_mse"]
    assert agg == pytest.approx(float(np.mean(errs)), rel=1e-9)
    assert len(result["items"]) == len(vals)
    for row in result["items"]:
        assert np.isfinite(row["model"]["masked_mse"])
