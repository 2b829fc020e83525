"""
Feature-wise modulation and the two condition generators
========================================================

FiLM scales and shifts a feature map, ``gamma * x + beta``. What changes
between model kinds is where the parameters come from and how finely they
vary: one pair per channel of every encoder block for the source selector,
one pair per bin and frame (global) or per frame (local) for F0 conditioning.
"""

import numpy as np
import torch

from satbsep.film import FilmParams, film_apply
from satbsep.nets import ModelConfig, build_model, cunet_forward, unet_forward
from satbsep.pitch import encode_control

x = torch.rand(1, 1, 512, 128)

# %%
# Granularities. Parameters broadcast over the axes they do not cover.
per_frame = FilmParams(torch.linspace(0, 1, 128)[None, None], torch.zeros(1, 1, 128), "per_frame")
y = film_apply(x, per_frame)
print("per-frame gamma fades the patch in:", float(y[..., 0].abs().max()), "->", float(y[..., -1].mean()))

# %%
# Generators start at the identity, so an untrained conditioned network is
# exactly its plain U-Net body.
model = build_model(ModelConfig(kind="cunet_ds_global"), seed=0).eval()
f0 = np.full(128, 220.0)
f0[::9] = 0.0  # a few unvoiced frames
z = encode_control(f0)
with torch.no_grad():
    params = model.generator(torch.from_numpy(z)[None])
    same = torch.equal(cunet_forward(model, x[0, 0], z), unet_forward(model.body, x[0, 0]))
print("global gamma/beta:", tuple(params.gamma.shape), "identity at init:", same)

local = build_model(ModelConfig(kind="cunet_ds_local"), seed=0)
with torch.no_grad():
    print("local gamma/beta:", tuple(local.generator(torch.from_numpy(z)[None]).gamma.shape))

selector = build_model(ModelConfig(kind="cunet_da"), seed=0)
with torch.no_grad():
    blocks = selector.generator(torch.eye(4)[:1])
print("source selector, one pair per block channel:", [p.gamma.shape[-1] for p in blocks])

# %%
# Parameter counts of the spectrogram models.
for kind in ("unet", "cunet_da", "cunet_ds_local", "cunet_ds_global"):
    m = build_model(ModelConfig(kind=kind), seed=0)
    print(f"{kind:16s} {sum(p.numel() for p in m.parameters()) / 1e6:6.2f} M parameters")
