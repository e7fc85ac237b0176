"""
Probability-reweighted attention in five minutes
================================================

A reweighted attention matrix multiplies each key's similarity by that key's
detection probability before normalizing.  This script shows the three facts
the rest of the library is built on:

1. uniform probabilities give back the standard attention matrix,
2. zero-probability keys drop out exactly,
3. duplicating a key c times is the same as weighting it by c.

Run it directly: python demos/reweighted_attention.py
"""

import numpy as np

from rwmatch import (
    LinearSim,
    ProbabilityWeights,
    SoftmaxSim,
    attention_matrix,
    reweighted_attention_matrix,
)

rng = np.random.default_rng(0)

# five keys and two queries in a 3-dimensional token space
keys = rng.standard_normal((3, 5))
queries = rng.standard_normal((3, 2))

print("standard softmax attention (columns sum to 1):")
plain = attention_matrix(keys, queries, SoftmaxSim())
print(np.round(plain, 4))

# 1. uniform weights change nothing
uniform = reweighted_attention_matrix(
    keys, queries, SoftmaxSim(), ProbabilityWeights.uniform(5)
)
print(f"\nuniform reweighting deviates by {np.abs(uniform - plain).max():.2e}")

# 2. a zero-probability key contributes nothing, the rest renormalize
weights = ProbabilityWeights(np.array([1.0, 0.0, 1.0, 1.0, 1.0]))
masked = reweighted_attention_matrix(keys, queries, SoftmaxSim(), weights)
print(f"\nrow of the zero-weight key: {masked[1]}")

# 3. duplicating key i c_i times equals weighting it by c_i.  Build the
# expanded key matrix, attend, and sum the duplicate rows back together.
counts = np.array([3, 1, 2, 1, 1])
expanded = np.repeat(keys, counts, axis=1)
attn = attention_matrix(expanded, queries, SoftmaxSim())
grouped = np.zeros((5, 2))
np.add.at(grouped, np.repeat(np.arange(5), counts), attn)
weighted = reweighted_attention_matrix(
    keys, queries, SoftmaxSim(), ProbabilityWeights(counts.astype(float))
)
print(f"\nduplication vs reweighting deviation: {np.abs(grouped - weighted).max():.2e}")

# the same identities hold for the positive-feature-map similarity
lin_grouped = np.zeros((5, 2))
np.add.at(
    lin_grouped,
    np.repeat(np.arange(5), counts),
    attention_matrix(expanded, queries, LinearSim()),
)
lin_weighted = reweighted_attention_matrix(
    keys, queries, LinearSim(), ProbabilityWeights(counts.astype(float))
)
print(
    "same check with linear similarity:    "
    f"{np.abs(lin_grouped - lin_weighted).max():.2e}"
)
