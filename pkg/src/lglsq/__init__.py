"""Quantization-aware training with learned-scale linear symmetric quantizers.

The scale is learned with a ternary simulated gradient (SSG), rounding is
relaxed with an arctangent soft round (ASR) whose gradient can be corrected
for discretization error (MDE), and trained weights export to integer codes.
"""

from .errors import (ConfigError, ContractError, DomainError, FormatError, ShapeError,
                     UnsupportedExportError)
from .estimators import (EstimatorConfig, EstimatorKind, LambdaSchedule, asr_backward,
                         asr_forward, lambda_at, mde_adjust, quant_backward)
from .quantizer import (PER_CHANNEL, PER_LAYER, QuantizerState, dequantize, fake_quantize,
                        init_scale, quantize_codes)
from .ssg import (SsgState, candidate_errors, llsq_grid_gradient, scale_step, ssg_gradient,
                  ssg_observe_and_adapt)
from .tensor import Tensor, backward, custom_grad, no_grad

__version__ = "0.1.0"
