from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .ops import RunningStats, affine_norm
from .tensor import Tensor


@dataclass(eq=False)
class Norm:
    """Affine normalization with learnable ``gamma``/``beta``.

    ``reduce_axes`` containing 0 means batch statistics (with running
    averages for eval mode); otherwise statistics are per sample.
    """

    gamma: Tensor
    beta: Tensor
    reduce_axes: tuple[int, ...]
    param_axis: int
    running: RunningStats | None = None
    eps: float = 1e-5
    name: str = field(default="norm")

    @classmethod
    def create(cls, n: int, reduce_axes, param_axis: int, *, zero: bool = False,
               dtype=np.float64, tag: str = "base", name: str = "norm") -> "Norm":
        fill = 0.0 if zero else 1.0
        gamma = Tensor(np.full(n, fill, dtype=dtype), requires_grad=True, name=f"{name}.gamma", tag=tag)
        beta = Tensor(np.zeros(n, dtype=dtype), requires_grad=True, name=f"{name}.beta", tag=tag)
        running = RunningStats.fresh(n, dtype) if 0 in tuple(reduce_axes) else None
        return cls(gamma, beta, tuple(reduce_axes), param_axis, running, name=name)

    def __call__(self, x, mode: str = "train") -> Tensor:
        return affine_norm(x, self.gamma, self.beta, reduce_axes=self.reduce_axes,
                           param_axis=self.param_axis, mode=mode, running=self.running, eps=self.eps)

    @property
    def size(self) -> int:
        return int(self.gamma.size)

    def parameters(self) -> list[Tensor]:
        return [self.gamma, self.beta]
