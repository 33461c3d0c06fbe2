"""Runnable networks built from architecture descriptors."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from . import ops
from .arch import ArchDescriptor, BlockDescriptor, LayerDescriptor
from .layer import CgcParams, cgc_forward, init_params
from .norm import Norm
from .tensor import NonFiniteError, Tensor


@dataclass(eq=False)
class Layer:
    desc: LayerDescriptor
    weights: dict[str, Tensor] = field(default_factory=dict)
    norm: Norm | None = None
    cgc: CgcParams | None = None
    frozen_gate: bool = False
    record: bool = False
    last_kernel: np.ndarray | None = None

    @property
    def id(self) -> str:
        return self.desc.id

    def __call__(self, x: Tensor, mode: str) -> Tensor:
        d = self.desc
        if d.kind == "conv":
            return ops.conv_nd(x, self.weights["W"], stride=d.stride, padding=d.padding, groups=d.groups)
        if d.kind == "cgc_conv":
            y, kernel = cgc_forward(x, d.cgc, self.cgc, mode, frozen_gate=self.frozen_gate, return_kernel=True)
            if self.record:
                k = kernel.data
                # a frozen gate yields one shared kernel rather than one per sample
                self.last_kernel = np.broadcast_to(k, (x.shape[0],) + k.shape).copy() if k.ndim == 4 else k
            return y
        if d.kind == "norm":
            return self.norm(x, mode)
        if d.kind == "relu":
            return ops.relu(x)
        if d.kind == "pool":
            return self._pool(x)
        if d.kind == "linear":
            flat = ops.reshape(x, (x.shape[0], -1))
            y = ops.matmul(flat, self.weights["W"])
            if "b" in self.weights:
                y = ops.add(y, self.weights["b"])
            return y
        raise ValueError(f"layer {d.id!r}: cannot run kind {d.kind!r}")

    def _pool(self, x: Tensor) -> Tensor:
        d = self.desc
        if d.pool_global:
            return ops.adaptive_pool(x, (1, 1), d.pool_mode)
        _, h, w = d.in_shape
        k1, k2 = d.kernel
        if d.padding or d.stride != k1 or k1 != k2 or h % k1 or w % k2:
            raise NotImplementedError(
                f"pool {d.id!r}: only non-overlapping windows that tile the input are runnable")
        return ops.adaptive_pool(x, (h // k1, w // k2), d.pool_mode)

    def named_parameters(self) -> Iterator[tuple[str, Tensor]]:
        for name, t in self.weights.items():
            yield f"{self.id}.{name}", t
        if self.norm is not None:
            yield f"{self.id}.gamma", self.norm.gamma
            yield f"{self.id}.beta", self.norm.beta
        if self.cgc is not None:
            for name, t in self.cgc.named_tensors():
                yield f"{self.id}.{name}", t

    def norms(self) -> Iterator[tuple[str, Norm]]:
        if self.norm is not None:
            yield self.id, self.norm
        if self.cgc is not None:
            for label, n in self.cgc.norms():
                yield f"{self.id}.{label}", n


@dataclass(eq=False)
class Block:
    id: str
    main: list[Layer]
    shortcut: list[Layer] | None = None


class Model:
    """Sequential network with residual blocks; see :func:`init_model`."""

    def __init__(self, arch: ArchDescriptor, items: list):
        self.arch = arch
        self.items = items

    def layers(self) -> Iterator[Layer]:
        for item in self.items:
            if isinstance(item, Block):
                yield from item.main
                yield from item.shortcut or ()
            else:
                yield item

    def layer(self, layer_id: str) -> Layer:
        for lay in self.layers():
            if lay.id == layer_id:
                return lay
        raise KeyError(f"model has no layer {layer_id!r}")

    def cgc_layers(self) -> list[Layer]:
        return [lay for lay in self.layers() if lay.desc.kind == "cgc_conv"]

    def named_parameters(self) -> Iterator[tuple[str, Tensor]]:
        for lay in self.layers():
            yield from lay.named_parameters()

    def parameters(self) -> list[Tensor]:
        return [t for _, t in self.named_parameters()]

    def set_frozen_gate(self, frozen: bool) -> None:
        for lay in self.cgc_layers():
            lay.frozen_gate = frozen

    def __call__(self, x, mode: str = "train") -> Tensor:
        x = x if isinstance(x, Tensor) else Tensor(x)
        for item in self.items:
            if isinstance(item, Block):
                main = _run(item.main, x, mode)
                side = _run(item.shortcut, x, mode) if item.shortcut else x
                x = _guard(item.id + " (residual sum)", lambda: ops.relu(ops.add(main, side)))
            else:
                x = _run([item], x, mode)
        return x

    # -- checkpoint state ---------------------------------------------------
    def state(self) -> list[tuple[str, np.ndarray]]:
        out = [(name, t.data) for name, t in self.named_parameters()]
        for lay in self.layers():
            for name, norm in lay.norms():
                if norm.running is not None:
                    out += [(f"{name}.running_mean", norm.running.mean),
                            (f"{name}.running_var", norm.running.var)]
        return out

    def load_state(self, tensors: dict[str, np.ndarray]) -> None:
        targets = {name: t for name, t in self.named_parameters()}
        for lay in self.layers():
            for name, norm in lay.norms():
                if norm.running is not None:
                    targets[f"{name}.running_mean"] = (norm.running, "mean")
                    targets[f"{name}.running_var"] = (norm.running, "var")
        missing = sorted(set(targets) - set(tensors))
        if missing:
            raise KeyError(f"checkpoint lacks {len(missing)} tensors, e.g. {missing[:3]}")
        for name, target in targets.items():
            value = tensors[name]
            if isinstance(target, Tensor):
                if value.shape != target.shape:
                    raise ValueError(f"checkpoint tensor {name!r} has shape {value.shape}, "
                                     f"model expects {target.shape}")
                target.data = value.astype(target.dtype)
            else:
                stats, attr = target
                setattr(stats, attr, value.astype(getattr(stats, attr).dtype))


def _guard(where: str, fn):
    try:
        return fn()
    except NonFiniteError as exc:
        raise NonFiniteError(f"non-finite activation in layer {where}: {exc}") from None


def _run(layers: list[Layer], x: Tensor, mode: str) -> Tensor:
    for lay in layers:
        x = _guard(repr(lay.id), lambda: lay(x, mode))
    return x


def _streams(seed) -> tuple[np.random.Generator, np.random.Generator]:
    kernel, extra = np.random.SeedSequence(seed).spawn(2)
    return np.random.default_rng(kernel), np.random.default_rng(extra)


def _build(desc: LayerDescriptor, rngs, dtype, zero_gate: bool) -> Layer:
    rng_w, _ = rngs
    lay = Layer(desc)
    if desc.kind == "conv":
        fan_in = desc.c // desc.groups * desc.spatial_size
        shape = (desc.o, desc.c // desc.groups) + desc.kernel
        W = rng_w.standard_normal(shape) * math.sqrt(2.0 / fan_in)
        lay.weights["W"] = Tensor(W.astype(dtype), requires_grad=True, name=f"{desc.id}.W")
    elif desc.kind == "cgc_conv":
        lay.cgc = init_params(desc.cgc, rngs, dtype=dtype, zero_gate=zero_gate)
    elif desc.kind == "norm":
        lay.norm = Norm.create(desc.c, (0, 2, 3), 1, dtype=dtype, name=desc.id)
    elif desc.kind == "linear":
        bound = 1.0 / math.sqrt(desc.c)
        W = rng_w.uniform(-bound, bound, (desc.c, desc.o))
        lay.weights["W"] = Tensor(W.astype(dtype), requires_grad=True, name=f"{desc.id}.W")
        if desc.bias:
            lay.weights["b"] = Tensor(np.zeros(desc.o, dtype=dtype), requires_grad=True, name=f"{desc.id}.b")
    return lay


def init_model(arch: ArchDescriptor, seed: int = 0, *, dtype=np.float64, zero_gate: bool = True) -> Model:
    """Instantiate ``arch`` with fan-in scaled weights.

    Kernels and classifier weights come from one random stream and the gate
    path (E, I, D) from another, so the same seed gives the same kernels
    with or without CGC.  Gate-path norms feeding the decoders start at
    zero scale and shift; running statistics start at mean 0, variance 1.
    """
    rngs = _streams(seed)
    items = []
    for item in arch.layers:
        if isinstance(item, BlockDescriptor):
            main = [_build(d, rngs, dtype, zero_gate) for d in item.main]
            short = [_build(d, rngs, dtype, zero_gate) for d in item.shortcut] if item.shortcut else None
            items.append(Block(item.id, main, short))
        else:
            items.append(_build(item, rngs, dtype, zero_gate))
    return Model(arch, items)
