"""Central-difference verification of vector-Jacobian products."""
from __future__ import annotations

from typing import Sequence

import numpy as np

from .tensor import DualOp, NonFiniteError


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float) -> np.ndarray:
    """Elementwise ``|a - n| / max(|a|, |n|, floor)``."""
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / denom


def gradcheck(op: DualOp, inputs: Sequence[np.ndarray], eps: float = 1e-6, *,
              seed: int = 0, wrt: Sequence[int] | None = None, **attrs) -> float:
    """Max relative error between ``op``'s vjp and central finite differences.

    The output is reduced to a scalar by a fixed random projection ``<r, f(x)>``
    so a single vjp call gives the full gradient.  Entries whose gradient is
    tiny relative to the largest one are compared against a floor of
    ``1e-3 * max|grad|`` instead of their own magnitude, otherwise round-off
    on numerically-zero gradients would dominate.

    ``wrt`` selects which inputs to probe (default: every floating input).
    """
    if not 1e-7 <= eps <= 1e-4:
        raise ValueError(f"gradcheck: eps must lie in [1e-7, 1e-4], got {eps}")
    inputs = [np.array(x, copy=True) if isinstance(x, np.ndarray) else x for x in inputs]
    for i, x in enumerate(inputs):
        if isinstance(x, np.ndarray) and x.dtype.kind == "f" and x.dtype != np.float64:
            raise TypeError(f"gradcheck: input {i} is {x.dtype}; gradient checks run in float64")
    if wrt is None:
        wrt = [i for i, x in enumerate(inputs) if isinstance(x, np.ndarray) and x.dtype == np.float64]

    out, saved = op.forward(*inputs, **attrs)
    _finite(out, op.name)
    rng = np.random.default_rng(seed)
    proj = rng.standard_normal(out.shape)
    analytic = op.vjp(saved, proj)

    def objective() -> float:
        value, _ = op.forward(*inputs, **attrs)
        _finite(value, op.name)
        return float(np.sum(proj * value))

    pairs = []
    for i in wrt:
        x = inputs[i]
        numeric = np.zeros_like(x)
        flat = x.reshape(-1)
        nflat = numeric.reshape(-1)
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + eps
            up = objective()
            flat[k] = orig - eps
            down = objective()
            flat[k] = orig
            nflat[k] = (up - down) / (2 * eps)
        a = analytic[i]
        if a is None:
            a = np.zeros_like(x)
        pairs.append((np.asarray(a, dtype=np.float64), numeric))

    if not pairs:
        return 0.0
    scale = max(max(np.max(np.abs(a)), np.max(np.abs(n))) for a, n in pairs)
    floor = max(1e-3 * scale, 1e-12)
    return float(max(relative_error(a, n, floor).max() for a, n in pairs))


def _finite(value: np.ndarray, name: str) -> None:
    if not np.all(np.isfinite(value)):
        raise NonFiniteError(f"gradcheck: {name} produced non-finite values while probing")


# ---------------------------------------------------------------------------
# CGC layer suite

def _liven(params, rng: np.random.Generator) -> None:
    """Non-degenerate norm affines and running statistics, so every path carries gradient."""
    for _, norm in params.norms():
        n = norm.size
        norm.gamma.data = 1.0 + 0.3 * rng.standard_normal(n)
        norm.beta.data = 0.3 * rng.standard_normal(n)
        if norm.running is not None:
            norm.running.mean = 0.1 * rng.standard_normal(n)
            norm.running.var = rng.uniform(0.5, 1.5, n)


def layer_case(variant: str, seed: int = 0, mode: str = "eval"):
    """``(op, inputs)`` for an end-to-end check of one CGC configuration.

    Conv variants use ``c = o = 4``, a 3x3 kernel, padding 1, ``g = 2``
    (except ``g1-full``) and a ``(2, 4, 6, 6)`` input; ``sequence`` uses 2
    heads over 4 channels, ``k = 3`` and length 5 (shorter than ``3k``, so
    zero padding is exercised).  ``inputs`` are the layer input followed by
    every learnable tensor.
    """
    from .layer import CgcConfig, ablation_config, cgc_forward, cgc_seq_forward, init_params
    from .tensor import as_dual

    rng = np.random.default_rng([seed, 17])
    if variant == "sequence":
        cfg = CgcConfig(c=4, o=4, kernel=(3,), variant="sequence", heads=2)
        x = rng.standard_normal((2, 4, 5))
    else:
        extra = {} if variant == "g1-full" else {"g": 2}
        cfg = ablation_config(variant, c=4, o=4, kernel=3, padding=1, **extra)
        x = rng.standard_normal((2, 4, 6, 6))
    params = init_params(cfg, seed, zero_gate=False)
    _liven(params, rng)
    names = [name for name, _ in params.named_tensors()]

    def layer(X, *tensors):
        bound = params.rebind(dict(zip(names, tensors)))
        if cfg.variant == "sequence":
            return cgc_seq_forward(X, bound.W, cfg, bound, mode)
        return cgc_forward(X, cfg, bound, mode)

    op = as_dual(layer, name=f"cgc[{variant}]")
    return op, [x] + [t.data.copy() for _, t in params.named_tensors()]


def layer_suite(seed: int = 0, variants=None, mode: str = "eval", eps: float = 1e-6):
    """Yield ``(variant, max relative error)`` for each ablation variant and ``sequence``."""
    from .layer import ABLATIONS

    for variant in variants or [*ABLATIONS, "sequence"]:
        op, inputs = layer_case(variant, seed, mode)
        yield variant, gradcheck(op, inputs, eps, seed=seed)
