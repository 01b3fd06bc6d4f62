"""Sparse-view surface reconstruction with neural point clouds.

A point cloud carries disentangled geometry/appearance latent codes; small
MLP decoders turn local latent-plus-offset queries into signed distances
and radiance, which differentiable volume rendering fits to a handful of
posed images.  The geometry decoders are pre-trained on ground-truth
distances of simple shapes and kept frozen during reconstruction.
"""

__version__ = "0.1.0"
