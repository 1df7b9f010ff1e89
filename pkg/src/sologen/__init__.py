"""sologen: a non-adversarial generator trained on a single image.

A multi-scale residual upscaling network, with an optional variational
front-end for sampling diverse coarse layouts, is fit to one image; the
trained bundle then drives animation, interpolation, novel synthesis,
sketch/edge-conditioned generation, harmonization, and super-resolution.
"""

__version__ = "0.1.0"

from .estimator import SingleImageGenerator
from .imaging import ImagePyramid, build_pyramid, extract_edges, load_image, save_image
from .trainer import TrainConfig, load_checkpoint, save_checkpoint, train

__all__ = [
    "SingleImageGenerator",
    "ImagePyramid",
    "TrainConfig",
    "build_pyramid",
    "extract_edges",
    "load_image",
    "save_image",
    "load_checkpoint",
    "save_checkpoint",
    "train",
    "__version__",
]
