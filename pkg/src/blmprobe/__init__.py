"""Probing subject-verb agreement in stacked sentence embeddings.

A small numpy-only stack: reverse-mode tensors, the seven selection
architectures, max-margin/KL/reconstruction objectives, episode data
handling with a synthetic generator, and a training/evaluation harness.
"""

from .autograd import (Tensor, conv2d, conv3d, conv_transpose2d, conv_transpose3d,
                       leaky_relu, linear, no_grad, tensor)
from .errors import (ConfigError, ContractError, DataIntegrityError,
                     DegenerateInputError, FormatError, NumericError, ShapeError)
from .models import (ALLOWED_RESHAPES, MODEL_KINDS, Model, ModelSpec,
                     build_model, load_checkpoint, parameter_report, save_checkpoint)
from .objectives import (LatentCode, LossBreakdown, cosine_score, kl_standard_normal,
                         max_margin_loss, reconstruction_loss, sample_latent, select_answer)
from .optim import Adam, AdamState, Parameter

__version__ = "0.1.0"
__all__ = [
    "Tensor", "tensor", "no_grad", "linear", "leaky_relu",
    "conv2d", "conv3d", "conv_transpose2d", "conv_transpose3d",
    "Adam", "AdamState", "Parameter",
    "ModelSpec", "Model", "build_model", "parameter_report",
    "save_checkpoint", "load_checkpoint", "MODEL_KINDS", "ALLOWED_RESHAPES",
    "LatentCode", "LossBreakdown", "cosine_score", "max_margin_loss",
    "kl_standard_normal", "sample_latent", "reconstruction_loss", "select_answer",
    "ShapeError", "ContractError", "DegenerateInputError", "ConfigError",
    "DataIntegrityError", "FormatError", "NumericError",
]
