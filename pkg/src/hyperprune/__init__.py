"""Controlled channel pruning of GAN generators through latent-driven hypernetworks."""

__version__ = "0.1.0"
