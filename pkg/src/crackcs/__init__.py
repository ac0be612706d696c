"""Recovery of degraded crack images with a convolutional generative prior.

The package trains a small DCGAN on procedurally generated crack images,
recovers compressed / blurred / occluded observations by optimizing the
generator's latent input, benchmarks the result against classical
sparsity-based solvers (OMP, CoSaMP, ISTA), and scores every method by
downstream crack-segmentation quality.
"""

__version__ = "0.1.0"
