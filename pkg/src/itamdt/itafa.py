"""Timestep- and complexity-conditioned softmax weighting of encoder layers."""

import torch
import torch.nn as nn

from .complexity import complexity_vector


def timestep_logits(T, weight, bias):
    """Affine map of the timestep embedding(s) onto one logit per encoder layer."""
    if T.shape[-1] != weight.shape[1]:
        raise ValueError(f"timestep embedding has dim {T.shape[-1]}, projection expects {weight.shape[1]}")
    return T @ weight.T + bias


def complexity_logits(c, weight, bias):
    if c.shape[-1] != 3 or weight.shape[1] != 3:
        raise ValueError(f"complexity vector must have length 3, got {c.shape[-1]}")
    return c @ weight.T + bias


def combine_and_normalize(w_t, w_i, alpha):
    """softmax(alpha·w_t + (1 - alpha)·w_i) across layers."""
    return torch.softmax(alpha * w_t + (1 - alpha) * w_i, dim=-1)


def aggregate(f, weights):
    """Weighted sum over the layer axis: (..., L, s, d) × (..., L) -> (..., s, d)."""
    if f.shape[-3] != weights.shape[-1]:
        raise ValueError(f"{weights.shape[-1]} weights for {f.shape[-3]} layers")
    return torch.einsum("...l,...lsd->...sd", weights, f)


class ITAFA(nn.Module):
    """One parameter set shared by the garment and salient-crop feature stacks.

    ``alpha_raw`` is unconstrained storage; reads go through a clamp to [0, 1]
    and :meth:`project_` writes the clamped value back after an update.
    """

    def __init__(self, t_dim, n_layers, alpha_init=0.5):
        super().__init__()
        self.t_proj = nn.Linear(t_dim, n_layers)
        self.c_proj = nn.Linear(3, n_layers)
        self.alpha_raw = nn.Parameter(torch.tensor(float(alpha_init)))

    @property
    def alpha(self):
        return self.alpha_raw.clamp(0.0, 1.0)

    @torch.no_grad()
    def project_(self):
        self.alpha_raw.clamp_(0.0, 1.0)

    def logits(self, T, c):
        w_t = timestep_logits(T, self.t_proj.weight, self.t_proj.bias)
        w_i = complexity_logits(c.to(self.c_proj.weight.dtype), self.c_proj.weight, self.c_proj.bias)
        return w_t, w_i

    def weights(self, T, c):
        w_t, w_i = self.logits(T, c)
        return combine_and_normalize(w_t, w_i, self.alpha)

    def forward(self, f, T, c=None):
        """Aggregate ``f`` (…, L, s, d); ``c`` is computed from ``f`` when omitted."""
        if c is None:
            c = complexity_vector(f)
        return aggregate(f, self.weights(T, c))
