"""Fixed linear latent codec standing in for a pretrained image autoencoder.

Each f×f×3 pixel block is flattened and projected onto ``c_lat`` orthonormal
directions.  Row 0 is the normalised all-ones direction, so latent channel 0
is the block mean scaled by sqrt(3·f²); that makes channel 0 of an encoded
binary mask track the block coverage fraction.
"""

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True, eq=False)
class CodecSpec:
    f: int
    c_in: int
    c_lat: int
    P: np.ndarray
    seed: int

    @property
    def block_dim(self):
        return self.c_in * self.f * self.f


def build_codec(seed=7, f=8, c_lat=4, c_in=3):
    if f < 2 or c_lat < 1:
        raise ValueError(f"need f >= 2 and c_lat >= 1, got f={f}, c_lat={c_lat}")
    n = c_in * f * f
    if c_lat > n:
        raise ValueError(f"c_lat={c_lat} exceeds block dimension {n}; rows cannot be orthonormal")
    rng = np.random.default_rng(seed)
    rows = [np.full(n, 1.0 / np.sqrt(n))]
    while len(rows) < c_lat:
        v = rng.standard_normal(n)
        # modified Gram-Schmidt, two passes for stability
        for _ in range(2):
            for r in rows:
                v = v - (v @ r) * r
        norm = np.linalg.norm(v)
        if norm < 1e-8:
            continue
        rows.append(v / norm)
    P = np.stack(rows)
    P.setflags(write=False)
    return CodecSpec(f=f, c_in=c_in, c_lat=c_lat, P=P, seed=seed)


def space_to_depth(image, f):
    c, h, w = image.shape
    blocks = image.reshape(c, h // f, f, w // f, f)
    # (c, Hl, fy, Wl, fx) -> (c, fy, fx, Hl, Wl) -> (c·f·f, Hl, Wl)
    return blocks.transpose(0, 2, 4, 1, 3).reshape(c * f * f, h // f, w // f)


def depth_to_space(cells, c, f):
    _, hl, wl = cells.shape
    blocks = cells.reshape(c, f, f, hl, wl).transpose(0, 3, 1, 4, 2)
    return blocks.reshape(c, hl * f, wl * f)


def encode(image, codec):
    """Map a ``c_in×H×W`` image to a ``c_lat×(H/f)×(W/f)`` latent."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 3 or image.shape[0] != codec.c_in:
        raise ValueError(f"expected {codec.c_in}×H×W image, got shape {image.shape}")
    _, h, w = image.shape
    if h % codec.f or w % codec.f:
        raise ValueError(f"image {h}×{w} not divisible by codec factor {codec.f}")
    cells = space_to_depth(image, codec.f)
    return np.einsum("ln,nhw->lhw", codec.P, cells)


def decode(latent, codec, clamp=True):
    """Inverse map onto the codec's row space.

    ``clamp=False`` keeps the raw linear output, which is what the algebraic
    round-trip identities are stated on.
    """
    latent = np.asarray(latent, dtype=np.float64)
    if latent.ndim != 3 or latent.shape[0] != codec.c_lat:
        raise ValueError(f"expected {codec.c_lat}×H×W latent, got shape {latent.shape}")
    cells = np.einsum("ln,lhw->nhw", codec.P, latent)
    image = depth_to_space(cells, codec.c_in, codec.f)
    if clamp:
        image = np.clip(image, 0.0, 1.0)
    return image


def encode_mask(mask, codec):
    """Encode a 1×H×W (or H×W) binary mask replicated over the input channels."""
    mask = np.asarray(mask, dtype=np.float64)
    if mask.ndim == 3:
        mask = mask[0]
    return encode(np.repeat(mask[None], codec.c_in, axis=0), codec)
