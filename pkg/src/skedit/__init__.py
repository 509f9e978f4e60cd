"""Sketch-guided tumor progression editing on 2D slices.

Pipeline stages: phantom/slice ingestion, sketch synthesis and refinement,
VAE-GAN latent compression, and a sketch+reference conditioned latent
diffusion model, wired together through a CLI and an HTTP service.
"""

__version__ = "0.1.0"
