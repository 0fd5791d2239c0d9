"""
Layer weights across the diffusion trajectory
=============================================

ITAFA mixes a timestep path and an image-complexity path before a softmax
over encoder layers.  A fresh model's projections are small, so they are
rescaled here to make the mechanics visible: alpha = 0 uses
only the complexity path (constant over t), alpha = 1 only the timestep path
(the same for every garment).
"""

import numpy as np
import torch

from itamdt.complexity import complexity_vector
from itamdt.encoder import FeatureEncoder, encode_features
from itamdt.mdt import MDT
from itamdt.sre import resize_bilinear
from itamdt.synth import gen_pair

encoder = FeatureEncoder()
model = MDT()

garments = {"plain": gen_pair(0, 0).garment, "checker": gen_pair(0, 1).garment}
complexity = {}
for name, g in garments.items():
    feats = encode_features(encoder, resize_bilinear(g, (32, 32)))
    complexity[name] = complexity_vector(feats)
    print(f"{name:8s} complexity [S, V, G] =", np.round(complexity[name].numpy(), 4))

T0 = model.timestep_embedding(torch.tensor([0]))[0]
print("fresh model, checker, t=0:",
      np.round(model.itafa.weights(T0, complexity["checker"]).detach().numpy(), 3))

# rescale the projections so the layer preference is visible
gen = torch.Generator().manual_seed(0)
with torch.no_grad():
    model.itafa.t_proj.weight.mul_(2)
    model.itafa.c_proj.weight.copy_(torch.randn(model.itafa.c_proj.weight.shape, generator=gen) * 0.5)

with torch.no_grad():
    for alpha in (0.0, 0.5, 1.0):
        model.itafa.alpha_raw.fill_(alpha)
        print(f"alpha = {alpha}")
        for name, c in complexity.items():
            for t in (999, 500, 0):
                T = model.timestep_embedding(torch.tensor([t]))[0]
                w = model.itafa.weights(T, c)
                print(f"  {name:8s} t={t:4d} weights", np.round(w.numpy(), 3))
