"""Denoising, mask-reconstruction and inpainting objectives."""

from dataclasses import dataclass

import torch
import torch.nn.functional as F

MASK_EPS = 1e-8


@dataclass
class LossBreakdown:
    l_denoise: torch.Tensor
    l_mask: torch.Tensor
    l_inpaint: torch.Tensor
    l_total: torch.Tensor

    def as_floats(self):
        return {k: float(getattr(self, k).detach()) for k in ("l_denoise", "l_mask", "l_inpaint", "l_total")}


def _check(eps, eps_hat):
    if eps.shape != eps_hat.shape:
        raise ValueError(f"shape mismatch: {tuple(eps.shape)} vs {tuple(eps_hat.shape)}")


def denoise_loss(eps, eps_hat):
    _check(eps, eps_hat)
    return ((eps - eps_hat) ** 2).mean()


def token_mask_to_cells(keep, patch, grid):
    """(B, p) keep-mask -> (B, 1, grid·patch, grid·patch) float map, 1 on masked cells."""
    masked = (~keep).to(torch.float64).reshape(-1, 1, grid, grid)
    return masked.repeat_interleave(patch, dim=2).repeat_interleave(patch, dim=3)


def mask_recon_loss(eps, eps_hat_masked, keep, patch, grid):
    """Noise MSE restricted to latent cells under masked tokens.

    Averages over the counted cells (times channels); 0 when nothing is masked.
    """
    _check(eps, eps_hat_masked)
    cells = token_mask_to_cells(keep, patch, grid).to(eps.dtype)
    count = cells.sum() * eps.shape[1]
    if count == 0:
        return eps.new_zeros(())
    return (cells * (eps - eps_hat_masked) ** 2).sum() / count


def token_recon_loss(side_out, target, keep, normalize=True):
    """Token-space alternative: mean squared error between rebuilt and target masked tokens.

    With ``normalize`` both sides get a parameter-free layer norm first.  The
    target is the model's own encoder output, whose scale is otherwise free to
    grow, and an unnormalised loss diverges.
    """
    masked = ~keep
    if not masked.any():
        return side_out.new_zeros(())
    target = target.detach()
    if normalize:
        side_out = F.layer_norm(side_out, side_out.shape[-1:])
        target = F.layer_norm(target, target.shape[-1:])
    diff = (side_out - target)[masked]
    return (diff ** 2).mean()


def normalize_latent_mask(mask_latent):
    """Channel 0 of an encoded mask, min-max scaled with a 1e-8 guard.

    Accepts (C, H, W) or (B, C, H, W); min/max are taken per sample.
    """
    ch0 = mask_latent[..., 0, :, :]
    lo = ch0.amin(dim=(-2, -1), keepdim=True)
    hi = ch0.amax(dim=(-2, -1), keepdim=True)
    return (ch0 - lo) / (hi - lo + MASK_EPS)


def inpaint_loss(eps, eps_hat, m):
    """Mean over all elements of ``m·(eps - eps_hat)²`` with ``m`` broadcast over channels."""
    _check(eps, eps_hat)
    if m.shape[-2:] != eps.shape[-2:]:
        raise ValueError(f"mask spatial shape {tuple(m.shape[-2:])} vs latent {tuple(eps.shape[-2:])}")
    m = m.unsqueeze(-3) if m.ndim == eps.ndim - 1 else m
    return (m * (eps - eps_hat) ** 2).mean()


def total_loss(l_denoise, l_mask, l_inpaint):
    return LossBreakdown(l_denoise, l_mask, l_inpaint, l_denoise + l_mask + l_inpaint)
