"""Attention maps as distributions: softmax, aggregation, smoothing, KL.

Run: python demos/02_attention_distributions.py
"""

import numpy as np

from attnprior import (
    AttentionMap,
    AttentionSet,
    RawAttention,
    aggregate,
    kl,
    kl_to_uniform,
    smooth,
    softmax_scores,
    sym_kl,
)

rng = np.random.default_rng(0)

# raw per-head scores for a 4x4 grid and 3 tokens
raw = RawAttention(
    scores=rng.standard_normal((2, 16, 3)),
    height=4,
    width=4,
    feature_dim=8,
)
probs = softmax_scores(raw)
print("softmax rows sum to:", probs.scores.sum(axis=2).round(12).min())

attn = AttentionSet.from_raw(probs)
for i in range(attn.n_tokens):
    m = attn.for_token(i)
    print(f"token {i}: map sums to {m.flat.sum():.12f}, "
          f"peak cell {m.flat.max():.4f}")

# smoothing gives full support so KL terms stay finite
m0 = smooth(attn.for_token(0), 1e-10)
m1 = smooth(attn.for_token(1), 1e-10)
print("\nkl(m0, m1)        =", kl(m0, m1))
print("kl(m1, m0)        =", kl(m1, m0))
print("sym_kl(m0, m1)    =", sym_kl(m0, m1))
print("sym_kl(m1, m0)    =", sym_kl(m1, m0), "(identical by construction)")

uniform = AttentionMap.uniform(4, 4)
print("\nkl_to_uniform(uniform) =", kl_to_uniform(uniform))
print("kl_to_uniform(m0)      =", kl_to_uniform(m0))
print("upper bound ln|cells|  =", np.log(16))

peaked = smooth(aggregate(probs, 2), 1e-10)
print("kl_to_uniform(peaked)  =", kl_to_uniform(peaked))
