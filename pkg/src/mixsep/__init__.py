"""Masked pseudo source separation pre-training at desk scale.

numpy-only reverse-mode autodiff, MFCC/k-means pseudo labels, on-the-fly
mixture simulation with aligned multi-stream targets, a small transformer
encoder with K prediction heads, permutation-invariant losses (masked
cross-entropy, CTC, BCE), downstream probes and metrics.
"""

__version__ = "0.1.0"
