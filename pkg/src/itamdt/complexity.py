"""Sparsity / variance / gradient-magnitude statistics of a feature stack.

All functions reduce over the trailing (L, s, d) axes, so a batch of stacks
(B, L, s, d) yields one value per stack.
"""

import torch

DELTA = 0.01


def _as_stack(f):
    f = torch.as_tensor(f)
    if f.ndim < 3 or f.numel() == 0:
        raise ValueError(f"expected a non-empty (..., L, s, d) stack, got shape {tuple(f.shape)}")
    return f


def sparsity(f, delta=DELTA):
    """Fraction of entries with ``|f| < delta`` (strict)."""
    if delta <= 0:
        raise ValueError(f"delta must be positive, got {delta}")
    f = _as_stack(f)
    return (f.abs() < delta).to(torch.float64).mean(dim=(-3, -2, -1))


def variance(f):
    """Population variance over all entries of each stack."""
    f = _as_stack(f).to(torch.float64)
    if f.shape[-3:].numel() < 2:
        raise ValueError("variance needs at least two entries")
    mean = f.mean(dim=(-3, -2, -1), keepdim=True)
    return ((f - mean) ** 2).mean(dim=(-3, -2, -1))


def gradient_magnitude(f):
    """Mean forward-difference gradient norm over token and embedding axes, per layer."""
    f = _as_stack(f).to(torch.float64)
    s, d = f.shape[-2:]
    if s < 2 or d < 2:
        raise ValueError(f"need s >= 2 and d >= 2, got s={s}, d={d}")
    base = f[..., :-1, :-1]
    dj = f[..., 1:, :-1] - base
    dk = f[..., :-1, 1:] - base
    return torch.sqrt(dj ** 2 + dk ** 2).mean(dim=(-3, -2, -1))


def complexity_vector(f, delta=DELTA):
    """Stack the three statistics into ``[S, V, G]`` along a new last axis (float64)."""
    f = _as_stack(f).detach()
    return torch.stack([sparsity(f, delta), variance(f), gradient_magnitude(f)], dim=-1)
