"""Small ViT image encoder that returns the output of every block."""

from dataclasses import dataclass

import torch
import torch.nn as nn

from .layers import Attention, Mlp, sincos_2d


@dataclass(frozen=True)
class EncoderConfig:
    side: int = 32
    patch: int = 8
    layers: int = 4
    dim: int = 64
    heads: int = 4
    seed: int = 0
    trainable: bool = False
    use_pos: bool = True

    @property
    def tokens(self):
        return (self.side // self.patch) ** 2

    def __post_init__(self):
        if self.side % self.patch:
            raise ValueError(f"side {self.side} not divisible by patch {self.patch}")


class EncoderBlock(nn.Module):
    def __init__(self, dim, heads):
        super().__init__()
        self.norm1 = nn.LayerNorm(dim, eps=1e-6)
        self.attn = Attention(dim, heads)
        self.norm2 = nn.LayerNorm(dim, eps=1e-6)
        self.mlp = Mlp(dim)

    def forward(self, x):
        x = x + self.attn(self.norm1(x))
        return x + self.mlp(self.norm2(x))


class FeatureEncoder(nn.Module):
    def __init__(self, config=EncoderConfig()):
        super().__init__()
        self.config = config
        gen = torch.Generator().manual_seed(config.seed)
        p = config.patch
        self.patch_embed = nn.Linear(3 * p * p, config.dim)
        self.register_buffer("pos", sincos_2d(config.dim, config.side // p), persistent=False)
        self.blocks = nn.ModuleList(EncoderBlock(config.dim, config.heads) for _ in range(config.layers))
        # seeded init independent of the global torch RNG
        with torch.no_grad():
            for name, param in self.named_parameters():
                if name.endswith("bias"):
                    param.zero_()
                elif "norm" in name:
                    param.fill_(1.0)
                else:
                    fan_in = param.shape[-1]
                    param.copy_(torch.randn(param.shape, generator=gen) / fan_in ** 0.5)
        if not config.trainable:
            self.requires_grad_(False)

    def patchify(self, images):
        B, C, H, W = images.shape
        p = self.config.patch
        x = images.reshape(B, C, H // p, p, W // p, p).permute(0, 2, 4, 1, 3, 5)
        return x.reshape(B, (H // p) * (W // p), C * p * p)

    def forward(self, images):
        """(B, 3, side, side) images -> (B, L, s, d) stack of block outputs."""
        side = self.config.side
        if images.ndim != 4 or images.shape[1:] != (3, side, side):
            raise ValueError(f"expected (B, 3, {side}, {side}) images, got {tuple(images.shape)}")
        x = self.patch_embed(self.patchify(images))
        if self.config.use_pos:
            x = x + self.pos.to(x.dtype)
        outs = []
        for blk in self.blocks:
            x = blk(x)
            outs.append(x)
        return torch.stack(outs, dim=1)


def encode_features(encoder, image):
    """Single 3×side×side image (array or tensor) -> L×s×d feature stack."""
    t = torch.as_tensor(image, dtype=encoder.patch_embed.weight.dtype)
    return encoder(t[None])[0]
