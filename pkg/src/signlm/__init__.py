"""signlm: a fully trainable gesture-to-text pipeline on a numpy autodiff core.

Motion featurization and synthesis, a VQ-VAE motion tokenizer, a small
decoder-only language backbone, modality alignment + prompt fusion, staged
training schemes, and a complete evaluation suite.
"""

__version__ = "0.1.0"

from . import (backbone, checkpoint, data, fusion, metrics, motion, schemes,
               templates, tensor, vq)

__all__ = ["backbone", "checkpoint", "data", "fusion", "metrics", "motion",
           "schemes", "templates", "tensor", "vq", "__version__"]
