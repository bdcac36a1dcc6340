"""Attention over view patches, and the binary mask that gates it.

Walks through the perception pipeline one stage at a time: cut an RGB view
into patch vectors, attend over them, then let a mask generator switch
individual patches off.
"""

import numpy as np

from asnet import Graph
from asnet.layers import (build_qkv, generate_binary_mask, init_attention_params,
                          init_mask_gen_params, patch_observation,
                          scaled_dot_attention)
from asnet.tensor import Tensor, make_param, sample_gumbel

rng = np.random.default_rng(7)

# a fake 6x6 RGB view, cut into 2x6 patches
view = rng.integers(0, 256, size=(6, 6, 3)).astype(float)

with Graph():
    patches = patch_observation(view, patch_h=2, patch_w=6)
    print(f"view {view.shape} -> {patches.data.shape[0]} patches "
          f"of dim {patches.data.shape[1]}")

    # attend over the patches with a fresh Q/K/V projection
    p = init_attention_params(rng, input_dim=patches.data.shape[1], d_k=8, d_v=4)
    q, k, v = build_qkv(patches, p)
    h1, att = scaled_dot_attention(q, k, v)
    print(f"attention weights  {att.data.round(3)}  (sum {att.data.sum():.3f})")
    print(f"attention output   {h1.data.round(3)}")

    # identical keys make attention collapse to the mean of V
    k_flat = make_param(np.ones_like(k.data))
    h1_flat, _ = scaled_dot_attention(q, k_flat, v)
    print(f"uniform keys       {h1_flat.data.round(3)} "
          f"(mean of V is {v.data.mean(axis=0).round(3)})")

    # a mask generator turns a control vector into per-patch on/off gates.
    # biases start shifted so a fresh mask is almost entirely open.
    n_patches = patches.data.shape[0]
    mg = init_mask_gen_params(rng, input_dim=5, d_att=n_patches)
    h2 = Tensor(rng.normal(size=5))
    noise = sample_gumbel(rng, (n_patches, 2))
    mask = generate_binary_mask(h2, mg, noise=noise)
    print(f"fresh mask         {mask.data}")

    # masked attention: a zero entry removes that patch from the weights
    hand_mask = make_param(np.array([1.0, 0.0, 1.0]))
    h1_m, att_m = scaled_dot_attention(q, k, v, mask=hand_mask)
    print(f"masked weights     {att_m.data.round(3)}  (patch 1 forced to 0)")
    print(f"masked output      {h1_m.data.round(3)}")
