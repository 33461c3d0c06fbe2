"""Context-gated convolution with a small numpy autodiff core.

Modules: :mod:`~cgc.tensor` and :mod:`~cgc.ops` (differentiable ops),
:mod:`~cgc.layer` (the CGC layer), :mod:`~cgc.arch` and
:mod:`~cgc.accounting` (descriptors and cost counting), :mod:`~cgc.nn` and
:mod:`~cgc.train` (runnable networks and training), :mod:`~cgc.analysis`
(class structure of modulated kernels) and :mod:`~cgc.cli`.
"""

__version__ = "0.1.0"

from .layer import CgcConfig, CgcParams, ablation_config, cgc_forward, cgc_seq_forward, init_params
from .tensor import NonFiniteError, Tensor

__all__ = ["CgcConfig", "CgcParams", "NonFiniteError", "Tensor", "ablation_config",
           "cgc_forward", "cgc_seq_forward", "init_params"]
