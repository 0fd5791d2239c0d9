"""Procedural paired try-on samples.

Every image lives on the 8-bit grid (values k/255) so PNG round trips are
lossless.  Randomness for one sample comes from ``SeedSequence([seed, id])``,
so samples can be generated independently and in any order.
"""

import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .tensor_io import load_png, save_png

# 0.5 snapped to the 8-bit grid
AGNOSTIC_GRAY = 128 / 255
MOTIF_PROB = 0.7
MASK_AREA_RANGE = (0.10, 0.50)
IMAGE_KEYS = ("garment", "person", "agnostic", "pose", "mask")


@dataclass
class TryOnSample:
    garment: np.ndarray
    person: np.ndarray
    agnostic: np.ndarray
    pose: np.ndarray
    mask: np.ndarray
    sample_id: int
    motif: dict = None
    warp: dict = field(default_factory=dict)


def _rng(dataset_seed, sample_id):
    return np.random.default_rng(np.random.SeedSequence([int(dataset_seed), int(sample_id)]))


def _color(rng):
    return rng.integers(0, 256, size=3) / 255.0


def _gray8(rgb):
    return int(round(255 * (0.299 * rgb[0] + 0.587 * rgb[1] + 0.114 * rgb[2])))


def _motif_colors(rng, base):
    """Two colours whose gray levels sit well apart from each other and the base."""
    g_base = _gray8(base)
    while True:
        c1, c2 = _color(rng), _color(rng)
        g1, g2 = _gray8(c1), _gray8(c2)
        if min(abs(g1 - g_base), abs(g2 - g_base), abs(g1 - g2)) >= 40:
            return c1, c2


def _garment_shape(rng, H, W):
    """Boolean support of a shirt-like shape (torso plus two sleeves) and its torso box."""
    tw = int(rng.integers(round(0.41 * W), round(0.56 * W) + 1))
    th = int(rng.integers(round(0.47 * H), round(0.62 * H) + 1))
    sw = int(rng.integers(max(2, round(0.06 * W)), round(0.12 * W) + 1))
    sh = int(rng.integers(round(0.12 * H), round(0.22 * H) + 1))
    x0 = (W - tw) // 2
    y0 = (H - th) // 2
    support = np.zeros((H, W), dtype=bool)
    support[y0:y0 + th, x0:x0 + tw] = True
    support[y0:y0 + sh, x0 - sw:x0] = True
    support[y0:y0 + sh, x0 + tw:x0 + tw + sw] = True
    return support, (x0, y0, tw, th)


def _draw_motif(rng, garment, torso, base):
    x0, y0, tw, th = torso
    mw = int(rng.integers(8, min(14, tw - 4) + 1))
    mh = int(rng.integers(8, min(14, th - 4) + 1))
    mx = int(rng.integers(x0 + 2, x0 + tw - mw - 2 + 1))
    my = int(rng.integers(y0 + 2, y0 + th - mh - 2 + 1))
    c1, c2 = _motif_colors(rng, base)
    kind = ["checker", "hstripe", "vstripe"][int(rng.integers(0, 3))]
    yy, xx = np.mgrid[0:mh, 0:mw]
    if kind == "checker":
        sel = ((yy // 2) + (xx // 2)) % 2 == 0
    elif kind == "hstripe":
        sel = (yy // 2) % 2 == 0
    else:
        sel = (xx // 2) % 2 == 0
    patch = np.where(sel[None], c1[:, None, None], c2[:, None, None])
    garment[:, my:my + mh, mx:mx + mw] = patch
    return {"kind": kind, "bbox": [mx, my, mw, mh]}


def _nearest_rescale(arr, scale):
    """Nearest-neighbour rescale of the trailing two axes by ``scale``."""
    h, w = arr.shape[-2:]
    nh, nw = max(1, round(h * scale)), max(1, round(w * scale))
    iy = np.minimum((np.arange(nh) / scale).astype(int), h - 1)
    ix = np.minimum((np.arange(nw) / scale).astype(int), w - 1)
    return arr[..., iy[:, None], ix[None, :]]


def _body(H, W, cx, torso_box):
    """Silhouette of head, torso and arms around where the garment sits."""
    yy, xx = np.mgrid[0:H, 0:W]
    gx0, gy0, gw, gh = torso_box
    body = np.zeros((H, W), dtype=bool)
    head_r = max(3, round(0.09 * H))
    head_cy = max(head_r, gy0 - head_r + 1)
    body |= (yy - head_cy) ** 2 + (xx - cx) ** 2 <= head_r ** 2
    body[gy0:min(H, gy0 + gh + 4), gx0 + 2:gx0 + gw - 2] = True
    arm = max(2, round(0.05 * W))
    body[gy0 + 2:min(H, gy0 + gh), max(0, gx0 - arm):gx0 + 1] = True
    body[gy0 + 2:min(H, gy0 + gh), gx0 + gw - 1:min(W, gx0 + gw + arm)] = True
    return body


def gen_pair(dataset_seed, sample_id, H=64, W=64):
    """Generate one paired sample; a pure function of ``(dataset_seed, sample_id)``."""
    if H < 32 or W < 32:
        raise ValueError(f"images must be at least 32×32, got {H}×{W}")
    rng = _rng(dataset_seed, sample_id)
    while True:
        support, torso = _garment_shape(rng, H, W)
        base = _color(rng)
        garment = np.ones((3, H, W))
        garment[:, support] = base[:, None]
        motif = None
        if rng.random() < MOTIF_PROB:
            motif = _draw_motif(rng, garment, torso, base)

        scale = [1.0, 0.75][int(rng.integers(0, 2))]
        ys, xs = np.nonzero(support)
        sy0, sy1, sx0, sx1 = ys.min(), ys.max() + 1, xs.min(), xs.max() + 1
        g_crop = _nearest_rescale(garment[:, sy0:sy1, sx0:sx1], scale)
        s_crop = _nearest_rescale(support[sy0:sy1, sx0:sx1], scale)
        gh, gw = s_crop.shape
        jy, jx = (int(v) for v in rng.integers(-3, 4, size=2))
        oy = int(np.clip(round(0.58 * H - gh / 2) + jy, 0, H - gh))
        ox = int(np.clip((W - gw) // 2 + jx, 0, W - gw))

        mask = np.zeros((H, W), dtype=bool)
        mask[oy:oy + gh, ox:ox + gw] = s_crop
        frac = mask.mean()
        if MASK_AREA_RANGE[0] <= frac <= MASK_AREA_RANGE[1]:
            break

    background = _color(rng)
    skin = _color(rng)
    person = np.empty((3, H, W))
    person[:] = background[:, None, None]
    body = _body(H, W, ox + gw // 2, (ox, oy, gw, gh))
    person[:, body] = skin[:, None]
    placed = np.zeros((3, H, W))
    placed[:, oy:oy + gh, ox:ox + gw] = g_crop
    person = np.where(mask[None], placed, person)

    agnostic = np.where(mask[None], AGNOSTIC_GRAY, person)

    top, bottom = _color(rng), _color(rng)
    ramp = np.linspace(0.0, 1.0, H)[None, :, None]
    gradient = top[:, None, None] * (1 - ramp) + bottom[:, None, None] * ramp
    silhouette = body | mask
    pose = np.where(silhouette[None], np.round(gradient * 255) / 255, 0.0)

    return TryOnSample(
        garment=garment.astype(np.float32),
        person=person.astype(np.float32),
        agnostic=agnostic.astype(np.float32),
        pose=pose.astype(np.float32),
        mask=mask[None].astype(np.float32),
        sample_id=int(sample_id),
        motif=motif,
        warp={"scale": scale, "offset": [ox, oy]},
    )


def split_ids(dataset_seed, n):
    """Deterministic 90/10 train/val split: ceil(0.9·n) train ids."""
    n_train = math.ceil(0.9 * n)
    order = np.random.default_rng(np.random.SeedSequence([int(dataset_seed), 0x5917])).permutation(n)
    val = set(int(i) for i in order[n_train:])
    return {i: ("val" if i in val else "train") for i in range(n)}


def gen_dataset(dataset_seed, n, out_dir, H=64, W=64):
    """Write ``n`` samples as PNG directories plus ``manifest.json``; returns the manifest."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create dataset directory {out_dir}: {exc}") from exc
    splits = split_ids(dataset_seed, n)
    items = []
    for i in range(n):
        sample = gen_pair(dataset_seed, i, H, W)
        rel = Path(f"{i:05d}")
        paths = {}
        for key in IMAGE_KEYS:
            p = rel / f"{key}.png"
            save_png(out_dir / p, getattr(sample, key))
            paths[key] = p.as_posix()
        items.append({"id": i, "paths": paths, "split": splits[i], "motif": sample.motif})
    manifest = {"seed": int(dataset_seed), "n": int(n), "H": H, "W": W, "items": items}
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True))
    return manifest


def manifest_hash(manifest):
    return hashlib.sha256(json.dumps(manifest, sort_keys=True).encode()).hexdigest()


def load_manifest(data_dir):
    path = Path(data_dir) / "manifest.json"
    if not path.exists():
        raise FileNotFoundError(f"no manifest at {path}")
    return json.loads(path.read_text())


def load_sample(data_dir, item):
    """Read one manifest item back into a :class:`TryOnSample`."""
    data_dir = Path(data_dir)
    images = {k: load_png(data_dir / item["paths"][k]) for k in IMAGE_KEYS}
    images["mask"] = (images["mask"][:1] > 0.5).astype(np.float32)
    return TryOnSample(sample_id=item["id"], motif=item.get("motif"), **images)
