"""retcn: adaptive temporal weighting, depthwise separable temporal
convolution and skeleton augmentation on a small numpy substrate."""

from .kernels import BACKEND

__version__ = "0.1.0"
__all__ = ["BACKEND", "__version__"]
