"""Transformer pieces shared by the feature encoder and the denoiser."""

import math

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F


def sincos_1d(dim, positions):
    """Standard sine/cosine table of shape (len(positions), dim)."""
    positions = np.asarray(positions, dtype=np.float64).reshape(-1)
    omega = 1.0 / 10000 ** (np.arange(dim // 2, dtype=np.float64) / (dim / 2.0))
    out = positions[:, None] * omega[None]
    return np.concatenate([np.sin(out), np.cos(out)], axis=1)


def sincos_2d(dim, side):
    """Fixed 2-D positional table for a side×side token grid, row-major."""
    if dim % 4:
        raise ValueError(f"2-D sincos needs dim divisible by 4, got {dim}")
    gy, gx = np.meshgrid(np.arange(side), np.arange(side), indexing="ij")
    emb_h = sincos_1d(dim // 2, gy)
    emb_w = sincos_1d(dim // 2, gx)
    return torch.from_numpy(np.concatenate([emb_h, emb_w], axis=1)).float()


def timestep_frequencies(t, dim, max_period=10000):
    half = dim // 2
    freqs = torch.exp(-math.log(max_period) * torch.arange(half, dtype=torch.float64) / half)
    args = t.to(torch.float64)[:, None] * freqs[None]
    return torch.cat([torch.cos(args), torch.sin(args)], dim=-1)


class TimestepEmbedder(nn.Module):
    """Sinusoidal timestep features followed by a two-layer MLP."""

    def __init__(self, hidden, freq_dim=256):
        super().__init__()
        self.freq_dim = freq_dim
        self.mlp = nn.Sequential(nn.Linear(freq_dim, hidden), nn.SiLU(), nn.Linear(hidden, hidden))

    def forward(self, t):
        dtype = self.mlp[0].weight.dtype
        return self.mlp(timestep_frequencies(t, self.freq_dim).to(dtype))


class Attention(nn.Module):
    """Multi-head attention; ``context`` defaults to ``x`` (self-attention).

    ``key_mask`` (B×Nk, True = visible) hides keys from every query.
    """

    def __init__(self, dim, heads):
        super().__init__()
        if dim % heads:
            raise ValueError(f"dim {dim} not divisible by heads {heads}")
        self.heads = heads
        self.q = nn.Linear(dim, dim)
        self.k = nn.Linear(dim, dim)
        self.v = nn.Linear(dim, dim)
        self.proj = nn.Linear(dim, dim)

    def forward(self, x, context=None, key_mask=None):
        context = x if context is None else context
        B, Nq, D = x.shape
        Nk = context.shape[1]
        h = self.heads
        q = self.q(x).view(B, Nq, h, D // h).transpose(1, 2)
        k = self.k(context).view(B, Nk, h, D // h).transpose(1, 2)
        v = self.v(context).view(B, Nk, h, D // h).transpose(1, 2)
        scores = q @ k.transpose(-1, -2) / math.sqrt(D // h)
        if key_mask is not None:
            scores = scores.masked_fill(~key_mask[:, None, None, :], float("-inf"))
        out = scores.softmax(dim=-1) @ v
        return self.proj(out.transpose(1, 2).reshape(B, Nq, D))


class Mlp(nn.Module):
    def __init__(self, dim, ratio=4):
        super().__init__()
        self.fc1 = nn.Linear(dim, dim * ratio)
        self.fc2 = nn.Linear(dim * ratio, dim)

    def forward(self, x):
        return self.fc2(F.gelu(self.fc1(x)))
