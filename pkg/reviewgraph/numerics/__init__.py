from .kernels import DenseMatrix, check_finite, matmul, softmax_rows, softplus
from .mlp import MlpCache, MlpGrads, MlpParams, mlp_backward, mlp_forward
from .optim import AdamWState, adamw_step

__all__ = [
    "AdamWState",
    "DenseMatrix",
    "MlpCache",
    "MlpGrads",
    "MlpParams",
    "adamw_step",
    "check_finite",
    "matmul",
    "mlp_backward",
    "mlp_forward",
    "softmax_rows",
    "softplus",
]
