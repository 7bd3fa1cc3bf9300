"""daep: self-supervised representation learning for long, irregularly
sampled, multimodal sequences.

A diffusion autoencoder and a masked autoencoder over a shared Perceiver
backbone, plus a beta-VAE baseline, with training, sampling, multimodal
fusion, and evaluation harnesses. Numeric hot kernels run through numba with
a pure-numpy fallback (see daep.kernels).
"""

__version__ = "0.1.0"
