"""Entropy-driven salient region extraction for garment images."""

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F

LUMA = np.array([0.299, 0.587, 0.114])


@dataclass(frozen=True)
class SreParams:
    neighborhood: int = 5
    E: float = 0.8
    E_min: float = 0.3
    E_step: float = 0.05
    l_min: int = 16
    expand_step: int = 8
    edge_frac: float = 0.05
    s_out: int = 32
    normalize: bool = True

    def __post_init__(self):
        if self.neighborhood < 1 or self.neighborhood % 2 == 0:
            raise ValueError(f"neighborhood must be odd and positive, got {self.neighborhood}")
        if not 0 < self.E_min <= self.E <= 1:
            raise ValueError(f"need 0 < E_min <= E <= 1, got E_min={self.E_min}, E={self.E}")


@dataclass
class SalientRegion:
    bbox: tuple
    crop: np.ndarray
    used_threshold: float
    fallback_used: bool


def to_gray8(image):
    """3×H×W float image in [0, 1] -> H×W uint8 luma."""
    image = np.asarray(image, dtype=np.float64)
    luma = np.tensordot(LUMA, image[:3], axes=1)
    return np.clip(np.round(luma * 255.0), 0, 255).astype(np.uint8)


def entropy_map(gray, neighborhood=5):
    """Per-pixel Shannon entropy (bits) of the border-truncated k×k neighbourhood.

    Out-of-image cells are padded with a sentinel and excluded from both the
    counts and ``|N|``.  For every valid cell we count how many cells of the
    window share its value; summing ``-(1/n)·log2(count/n)`` over the cells
    equals ``-Σ_k p_k log2 p_k`` over the histogram bins.
    """
    gray = np.asarray(gray)
    r = neighborhood // 2
    padded = np.pad(gray.astype(np.int16), r, constant_values=-1)
    win = np.lib.stride_tricks.sliding_window_view(padded, (neighborhood, neighborhood))
    win = win.reshape(gray.shape + (-1,))
    valid = win >= 0
    n = valid.sum(axis=-1)
    same = (win[..., :, None] == win[..., None, :]) & valid[..., None, :]
    counts = same.sum(axis=-1)
    terms = np.where(valid, np.log2(np.maximum(counts, 1) / n[..., None]), 0.0)
    ent = -(terms.sum(axis=-1) / n)
    return np.maximum(ent, 0.0)


def high_entropy_mask(emap, params=SreParams()):
    """Threshold the entropy map, lowering ``E`` stepwise until something passes.

    Returns ``(mask, used_threshold, failed)``.  ``failed`` is set when even
    ``E_min`` leaves the mask empty; the mask is then all False.
    """
    emap = np.asarray(emap, dtype=np.float64)
    if params.normalize:
        peak = emap.max() if emap.size else 0.0
        norm = emap / peak if peak > 0 else np.zeros_like(emap)
    else:
        norm = emap
    E = params.E
    while True:
        mask = norm > E
        if mask.any():
            return mask, E, False
        nxt = round(E - params.E_step, 10)
        if nxt < params.E_min - 1e-12:
            return mask, E, True
        E = nxt


def entropy_centroid(mask):
    """Centre of mass ``(x, y)`` of the mask, rounded; image centre when empty."""
    mask = np.asarray(mask, dtype=bool)
    H, W = mask.shape
    if not mask.any():
        return W // 2, H // 2
    ys, xs = np.nonzero(mask)
    return int(np.floor(xs.mean() + 0.5)), int(np.floor(ys.mean() + 0.5))


def _clamp_box(x0, y0, w, h, W, H):
    w, h = min(w, W), min(h, H)
    x0 = min(max(x0, 0), W - w)
    y0 = min(max(y0, 0), H - h)
    return x0, y0, w, h


def expand_region(mask, centroid, params=SreParams()):
    """Grow an ``l_min`` square around the centroid, one edge at a time.

    Edges are tried up, right, down, left; an edge moves out by
    ``expand_step`` when the strip it would add has at least ``edge_frac``
    high-entropy pixels.  Stops after a full cycle with no growth.
    """
    mask = np.asarray(mask, dtype=bool)
    H, W = mask.shape
    xc, yc = centroid
    l = params.l_min
    x0, y0, w, h = _clamp_box(xc - l // 2, yc - l // 2, l, l, W, H)
    x1, y1 = x0 + w, y0 + h
    step = params.expand_step
    grown = True
    while grown:
        grown = False
        for side in ("up", "right", "down", "left"):
            if side == "up" and y0 > 0:
                ny = max(0, y0 - step)
                strip = mask[ny:y0, x0:x1]
                if strip.mean() >= params.edge_frac:
                    y0, grown = ny, True
            elif side == "right" and x1 < W:
                nx = min(W, x1 + step)
                strip = mask[y0:y1, x1:nx]
                if strip.mean() >= params.edge_frac:
                    x1, grown = nx, True
            elif side == "down" and y1 < H:
                ny = min(H, y1 + step)
                strip = mask[y1:ny, x0:x1]
                if strip.mean() >= params.edge_frac:
                    y1, grown = ny, True
            elif side == "left" and x0 > 0:
                nx = max(0, x0 - step)
                strip = mask[y0:y1, nx:x0]
                if strip.mean() >= params.edge_frac:
                    x0, grown = nx, True
    return x0, y0, x1 - x0, y1 - y0


def _grow_1d(start, length, target, limit):
    """Widen ``[start, start+length)`` symmetrically to ``target``, shifting inside ``[0, limit)``."""
    target = min(target, limit)
    extra = target - length
    start = start - extra // 2
    return min(max(start, 0), limit - target), target


def adjust_aspect(bbox, H, W):
    """Widen the relatively short side so the box has the image's aspect ratio."""
    x0, y0, w, h = bbox
    if w * H < h * W:
        x0, w = _grow_1d(x0, w, int(round(h * W / H)), W)
    elif w * H > h * W:
        y0, h = _grow_1d(y0, h, int(round(w * H / W)), H)
    return x0, y0, w, h


def resize_bilinear(image, size):
    t = torch.as_tensor(np.asarray(image, dtype=np.float32))[None]
    out = F.interpolate(t, size=size, mode="bilinear", align_corners=False)
    return out[0].numpy()


def adjust_aspect_and_extract(image, bbox, params=SreParams()):
    """Aspect-correct ``bbox``, crop it and resize to ``s_out``×``s_out``.

    Returns ``(bbox, crop)``.
    """
    image = np.asarray(image, dtype=np.float32)
    _, H, W = image.shape
    x0, y0, w, h = adjust_aspect(bbox, H, W)
    crop = image[:, y0:y0 + h, x0:x0 + w]
    return (x0, y0, w, h), resize_bilinear(crop, (params.s_out, params.s_out))


def extract_salient(image, params=SreParams()):
    """Full pipeline: luma -> entropy map -> mask -> centroid -> expansion -> crop."""
    gray = to_gray8(image)
    emap = entropy_map(gray, params.neighborhood)
    mask, used, failed = high_entropy_mask(emap, params)
    centroid = entropy_centroid(mask)
    bbox = expand_region(mask, centroid, params)
    bbox, crop = adjust_aspect_and_extract(image, bbox, params)
    return SalientRegion(bbox=tuple(int(v) for v in bbox), crop=crop,
                         used_threshold=float(used), fallback_used=bool(failed))


def normalized_entropy_image(image, params=SreParams()):
    """Entropy map scaled to [0, 1] by its peak, for visual export."""
    emap = entropy_map(to_gray8(image), params.neighborhood)
    peak = emap.max()
    return emap / peak if peak > 0 else emap
