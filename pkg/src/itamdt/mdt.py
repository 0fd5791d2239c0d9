"""Masked diffusion transformer denoiser with cross-attention garment conditioning."""

from dataclasses import dataclass

import torch
import torch.nn as nn

from .itafa import ITAFA
from .layers import Attention, Mlp, TimestepEmbedder, sincos_2d


@dataclass(frozen=True)
class ModelConfig:
    dim: int = 128
    enc_blocks: int = 4
    dec_blocks: int = 2
    heads: int = 4
    patch: int = 2
    latent_side: int = 8
    latent_ch: int = 4
    mask_ratio: float = 0.3
    feat_tokens: int = 16
    feat_dim: int = 64
    feat_layers: int = 4
    seed: int = 0

    @property
    def in_ch(self):
        return 4 * self.latent_ch

    @property
    def grid(self):
        return self.latent_side // self.patch

    @property
    def tokens(self):
        return self.latent_side ** 2 // self.patch ** 2

    @property
    def cond_len(self):
        return 2 * self.feat_tokens

    def __post_init__(self):
        if self.dim % self.heads:
            raise ValueError(f"dim {self.dim} not divisible by heads {self.heads}")
        if self.latent_side % self.patch:
            raise ValueError(f"latent side {self.latent_side} not divisible by patch {self.patch}")


def to_patches(x, patch):
    """(B, C, H, W) -> (B, H·W/patch², C·patch²), row-major over the patch grid."""
    B, C, H, W = x.shape
    x = x.reshape(B, C, H // patch, patch, W // patch, patch).permute(0, 2, 4, 1, 3, 5)
    return x.reshape(B, (H // patch) * (W // patch), C * patch * patch)


def from_patches(tokens, channels, patch, grid):
    """Inverse of :func:`to_patches` for a square ``grid``×``grid`` layout."""
    B = tokens.shape[0]
    x = tokens.reshape(B, grid, grid, channels, patch, patch).permute(0, 3, 1, 4, 2, 5)
    return x.reshape(B, channels, grid * patch, grid * patch)


def sample_token_mask(p, ratio, generator=None, batch=None):
    """Random token mask with exactly round(ratio·p) zeros (0 = masked, 1 = kept)."""
    if not 0 < ratio < 1:
        raise ValueError(f"mask ratio must be in (0, 1), got {ratio}")
    n_masked = int(round(ratio * p))
    if n_masked in (0, p):
        raise ValueError(f"ratio {ratio} masks {n_masked} of {p} tokens")
    shape = (p,) if batch is None else (batch, p)
    order = torch.rand(shape, generator=generator).argsort(dim=-1)
    mask = torch.ones(shape, dtype=torch.bool)
    mask.scatter_(-1, order[..., :n_masked], False)
    return mask


class Block(nn.Module):
    """Pre-norm self-attention, cross-attention to the condition, then MLP."""

    def __init__(self, dim, heads):
        super().__init__()
        self.norm1 = nn.LayerNorm(dim, eps=1e-6)
        self.attn = Attention(dim, heads)
        self.norm2 = nn.LayerNorm(dim, eps=1e-6)
        self.cross = Attention(dim, heads)
        self.norm3 = nn.LayerNorm(dim, eps=1e-6)
        self.mlp = Mlp(dim)

    def forward(self, x, cond):
        x = x + self.attn(self.norm1(x))
        x = x + self.cross(self.norm2(x), cond)
        return x + self.mlp(self.norm3(x))


class SideInterpolator(nn.Module):
    """Rebuild masked tokens from the kept ones with a single attention layer.

    Queries at masked positions are a learned mask token plus the position
    encoding, so the masked tokens' own contents never reach the output.
    """

    def __init__(self, dim, heads, pos):
        super().__init__()
        self.mask_token = nn.Parameter(torch.zeros(1, 1, dim))
        self.register_buffer("pos", pos, persistent=False)
        self.norm_q = nn.LayerNorm(dim, eps=1e-6)
        self.norm_kv = nn.LayerNorm(dim, eps=1e-6)
        self.attn = Attention(dim, heads)

    def forward(self, tokens, keep, residual=True):
        """``keep``: (B, p) bool, True for unmasked tokens."""
        if not keep.any(dim=-1).all():
            raise ValueError("side interpolation needs at least one unmasked token per sample")
        if keep.all():
            return tokens
        query = self.mask_token.to(tokens.dtype) + self.pos.to(tokens.dtype)[None]
        query = query.expand_as(tokens)
        filled = self.attn(self.norm_q(query), self.norm_kv(tokens), key_mask=keep)
        if residual:
            filled = filled + query
        return torch.where(keep[..., None], tokens, filled)


class MDT(nn.Module):
    """Denoiser plus the timestep embedder, ITAFA and condition projection.

    The feature encoder is kept outside so its stacks can be cached while it
    is frozen.
    """

    def __init__(self, config=ModelConfig()):
        super().__init__()
        self.config = config
        c = config
        D = c.dim
        pos = sincos_2d(D, c.grid)
        self.register_buffer("pos", pos, persistent=False)
        self.x_embed = nn.Linear(c.in_ch * c.patch ** 2, D)
        self.t_embed = TimestepEmbedder(D)
        self.itafa = ITAFA(D, c.feat_layers)
        self.cond_proj = nn.Linear(c.feat_dim, D)
        self.null_cond = nn.Parameter(torch.zeros(c.cond_len, D))
        self.enc = nn.ModuleList(Block(D, c.heads) for _ in range(c.enc_blocks))
        self.side = SideInterpolator(D, c.heads, pos)
        self.skip_fuse = nn.ModuleList(nn.Linear(2 * D, D) for _ in range(c.dec_blocks))
        self.dec = nn.ModuleList(Block(D, c.heads) for _ in range(c.dec_blocks))
        self.final_norm = nn.LayerNorm(D, eps=1e-6)
        self.final = nn.Linear(D, c.patch ** 2 * c.latent_ch)
        self.reset_parameters()

    def reset_parameters(self):
        gen = torch.Generator().manual_seed(self.config.seed)
        with torch.no_grad():
            for name, param in self.named_parameters():
                if name.endswith("bias") or name in ("null_cond", "side.mask_token"):
                    param.zero_()
                elif "norm" in name:
                    param.fill_(1.0)
                elif name == "itafa.alpha_raw":
                    param.fill_(0.5)
                elif param.ndim == 2:
                    fan_in, fan_out = param.shape[1], param.shape[0]
                    bound = (6.0 / (fan_in + fan_out)) ** 0.5
                    param.copy_((torch.rand(param.shape, generator=gen) * 2 - 1) * bound)
            self.null_cond.copy_(torch.randn(self.null_cond.shape, generator=gen) * 0.02)
            self.side.mask_token.copy_(torch.randn(self.side.mask_token.shape, generator=gen) * 0.02)
            self.final.weight.zero_()
            self.final.bias.zero_()

    # conditioning -------------------------------------------------------------

    def timestep_embedding(self, t):
        return self.t_embed(t)

    def aggregate_features(self, feats, T, cplx=None):
        return self.itafa(feats, T, cplx)

    def build_condition(self, F_g, F_s, T):
        """Shared projection of both feature maps, concatenated, plus T on every row."""
        if F_g.shape != F_s.shape:
            raise ValueError(f"garment/salient features differ in shape: {tuple(F_g.shape)} vs {tuple(F_s.shape)}")
        proj = torch.cat([self.cond_proj(F_g), self.cond_proj(F_s)], dim=-2)
        return proj + T[..., None, :]

    def null_condition(self, T):
        return self.null_cond.to(T.dtype)[None] + T[:, None, :]

    def condition(self, t, feats_g, feats_s, cplx_g=None, cplx_s=None, drop=None):
        """Timestep embedding -> ITAFA on both stacks -> condition tokens.

        ``drop`` (B bool) swaps in the learned null condition per sample.
        """
        T = self.timestep_embedding(t)
        F_g = self.aggregate_features(feats_g, T, cplx_g)
        F_s = self.aggregate_features(feats_s, T, cplx_s)
        cond = self.build_condition(F_g, F_s, T)
        if drop is not None:
            cond = torch.where(drop[:, None, None], self.null_condition(T), cond)
        return cond

    # denoiser -------------------------------------------------------------------

    def patchify(self, x):
        """(B, 16, H, W) -> (B, p, D) tokens with positional encodings."""
        c = self.config
        if x.shape[1] != c.in_ch:
            raise ValueError(f"expected {c.in_ch} input channels, got {x.shape[1]}")
        return self.x_embed(to_patches(x, c.patch)) + self.pos.to(x.dtype)[None]

    def unpatchify(self, tokens):
        c = self.config
        return from_patches(tokens, c.latent_ch, c.patch, c.grid)

    def encoder_forward(self, tokens, cond):
        skips = []
        for blk in self.enc:
            tokens = blk(tokens, cond)
            skips.append(tokens)
        return tokens, skips

    def decoder_forward(self, tokens, cond, skips):
        n_enc = len(skips)
        for i, (blk, fuse) in enumerate(zip(self.dec, self.skip_fuse), start=1):
            src = n_enc - i
            if src >= 1:
                skip = skips[src - 1]
                if skip.shape != tokens.shape:
                    raise ValueError(f"skip shape {tuple(skip.shape)} does not match tokens {tuple(tokens.shape)}")
                tokens = fuse(torch.cat([tokens, skip], dim=-1))
            tokens = blk(tokens, cond)
        return self.final(self.final_norm(tokens))

    def denoise(self, z_t, refs, cond, keep=None, return_aux=False):
        """Predict noise for ``z_t`` given reference latents (B, 12, H, W) and condition.

        With ``keep`` (B×p bool, False = masked) the encoder sees only kept
        tokens and the side-interpolator fills the rest before decoding.
        """
        x = self.patchify(torch.cat([z_t, refs], dim=1))
        aux = {"tokens": x}
        if keep is None or bool(keep.all()):
            h, skips = self.encoder_forward(x, cond)
        else:
            B, p, D = x.shape
            n_keep = int(keep[0].sum())
            if not bool((keep.sum(dim=1) == n_keep).all()):
                raise ValueError("every sample must keep the same number of tokens")
            idx = keep.nonzero(as_tuple=False)[:, 1].view(B, n_keep)
            gather = idx[..., None].expand(B, n_keep, D)
            h_u, skips_u = self.encoder_forward(torch.gather(x, 1, gather), cond)

            def scatter(t):
                return torch.zeros_like(x).scatter(1, gather, t)

            h = self.side(scatter(h_u), keep)
            skips = [scatter(s) for s in skips_u]
            aux["side_out"] = h
        aux["enc_out"] = h
        eps = self.unpatchify(self.decoder_forward(h, cond, skips))
        return (eps, aux) if return_aux else eps

    def forward(self, z_t, refs, t, feats_g, feats_s, cplx_g=None, cplx_s=None, drop=None, keep=None):
        cond = self.condition(t, feats_g, feats_s, cplx_g, cplx_s, drop)
        return self.denoise(z_t, refs, cond, keep)

    def project_(self):
        """Post-update parameter constraints."""
        self.itafa.project_()
