"""Temporally predictive representation learning with feature decorrelation.

A desk-scale, numpy-backed implementation: a small reverse-mode autodiff
engine, a moving-dot gridworld dataset, the Siamese encode/project/
transition/predict stack with three transition variants, the similarity +
decorrelation training objectives (plus contrastive / masked-reconstruction
ablations), collapse diagnostics based on feature rank, and a linear
probing harness.
"""

__version__ = "0.1.0"
