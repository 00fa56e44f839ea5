"""Multiclass encryption by compressed sensing.

Keyed Bernoulli encoding with layered sign-flip perturbations, sparse
recovery per user class, recovery-error bounds and a statistical
cryptanalysis harness.
"""

__version__ = "0.1.0"
