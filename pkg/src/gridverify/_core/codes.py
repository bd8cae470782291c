"""Neuron status codes shared by the bound-propagation backends."""

PASS = 0          # identity neuron, or ReLU stable active (l >= 0)
ZERO = 1          # ReLU stable inactive (u <= 0)
UNSTABLE = 2      # ReLU with l < 0 < u: relaxed with slope alpha / upper chord
SPLIT_ACT = 3     # branched active: identity + dualized pre >= 0 (beta)
SPLIT_INACT = 4   # branched inactive: zero + dualized pre <= 0 (beta)
