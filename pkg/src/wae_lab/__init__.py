"""Wasserstein auto-encoders on a desk: WAE-MMD, WAE-GAN, a VAE baseline and
an exact optimal-transport oracle."""

__version__ = "0.1.0"
