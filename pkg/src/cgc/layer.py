"""Context-gated convolution.

A CGC layer pools its input to a small fixed grid, encodes each channel's
pooled map to a ``d``-dimensional latent with a channel-shared linear map
``E``, projects the latents from ``c`` to ``o`` channels with a grouped,
weight-shared linear map ``I``, and decodes both latents to kernel-sized
gate components with ``D_c`` and ``D_o``.  The gate for output channel
``h``, input channel ``i`` and kernel position ``(j, k)`` is

    G[h, i, j, k] = sigmoid(G1[i, j, k] + G2[h, j, k])

and the convolution runs with the per-sample kernel ``W * G``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, fields, replace
from typing import Iterator

import numpy as np

from . import ops
from .norm import Norm
from .tensor import Tensor

COMBINES = ("sum_sigmoid", "only_g1", "only_g2", "product")
VARIANTS = ("conv2d", "conv1d", "sequence")


def default_latent(kernel_positions: int) -> int:
    """Bottleneck width: half the number of kernel positions, rounded up."""
    return max(1, math.ceil(kernel_positions / 2))


def default_groups(c: int, o: int) -> int:
    """``c/g = 16`` when 16 divides both channel counts and ``g`` divides ``o``, otherwise a full map."""
    if c % 16 == 0 and o % 16 == 0 and o % (c // 16) == 0:
        return c // 16
    return 1


def _tuple(value) -> tuple[int, ...]:
    if isinstance(value, (int, np.integer)):
        return (int(value),)
    return tuple(int(v) for v in value)


@dataclass
class CgcConfig:
    c: int
    o: int
    kernel: tuple[int, ...]
    stride: int | tuple[int, ...] = 1
    padding: int | tuple[int, ...] = 0
    d: int | None = None
    g: int | None = None
    pooled: tuple[int, ...] | None = None
    pool_kind: str = "avg"
    combine: str = "sum_sigmoid"
    shared_norm: bool = False
    shared_D: bool = False
    two_E: bool = False
    channel_interacting: bool = True
    variant: str = "conv2d"
    heads: int | None = None

    def __post_init__(self):
        self.kernel = _tuple(self.kernel)
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown CGC variant {self.variant!r}")
        rank = 2 if self.variant == "conv2d" else 1
        if len(self.kernel) == 1 and rank == 2:
            self.kernel = self.kernel * 2
        if len(self.kernel) != rank:
            raise ValueError(f"{self.variant} needs a kernel with {rank} spatial extents, got {self.kernel}")
        if any(k < 1 for k in self.kernel):
            raise ValueError(f"kernel extents must be positive, got {self.kernel}")
        if self.positions == 1:
            raise ValueError("CGC only wraps kernels with spatial size > 1; use a plain conv_nd for 1x1 kernels")
        if self.c < 1 or self.o < 1:
            raise ValueError("channel counts must be positive")
        if self.pool_kind not in ("avg", "max"):
            raise ValueError(f"pool_kind must be 'avg' or 'max', got {self.pool_kind!r}")
        if self.combine not in COMBINES:
            raise ValueError(f"combine must be one of {COMBINES}, got {self.combine!r}")

        if self.variant == "sequence":
            k = self.kernel[0]
            if self.heads is None or self.heads < 1 or self.c % self.heads:
                raise ValueError(f"sequence variant needs heads dividing c={self.c}, got {self.heads}")
            if k % 2 == 0:
                raise ValueError("sequence variant needs an odd kernel length")
            if self.o != self.c:
                raise ValueError("sequence variant keeps the channel count (o == c)")
            # Single-branch gate: no channel interaction, so only G1 exists.
            self.channel_interacting = False
            self.combine = "only_g1"
            self.pooled = _tuple(self.pooled) if self.pooled is not None else (3 * k,)
            self.g = None
        else:
            self.pooled = _tuple(self.pooled) if self.pooled is not None else self.kernel
            if len(self.pooled) != rank or any(p < 1 for p in self.pooled):
                raise ValueError(f"pooled extents must be {rank} positive ints, got {self.pooled}")
            if not self.channel_interacting and self.combine != "only_g1":
                raise ValueError(f"combine={self.combine!r} needs the Channel Interacting Module")
            if self.channel_interacting:
                if self.g is None:
                    self.g = default_groups(self.c, self.o)
                if self.g < 1 or self.c % self.g or self.o % self.g:
                    raise ValueError(f"c={self.c} and o={self.o} must both be divisible by g={self.g}")
            else:
                self.g = None
        if self.d is None:
            self.d = default_latent(self.positions)
        if self.d < 1:
            raise ValueError(f"latent width d must be >= 1, got {self.d}")

    # -- derived structure ----------------------------------------------------
    @property
    def positions(self) -> int:
        return int(np.prod(self.kernel))

    @property
    def pooled_size(self) -> int:
        return int(np.prod(self.pooled))

    @property
    def uses_g1(self) -> bool:
        return self.combine != "only_g2"

    @property
    def uses_g2(self) -> bool:
        return self.channel_interacting and self.combine != "only_g1"

    def as_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


# Ablation switches keyed by the names used on the command line.
ABLATIONS: dict[str, dict] = {
    "default": {},
    "only-g1": {"combine": "only_g1"},
    "only-g2": {"combine": "only_g2"},
    "product": {"combine": "product"},
    "g1-full": {"g": 1},
    "d-full": {"d": "full"},
    "shared-norm": {"shared_norm": True},
    "two-e": {"two_E": True},
    "shared-d": {"shared_D": True},
    "pool-2x": {"pooled": "2x"},
    "maxpool": {"pool_kind": "max"},
}


def ablation_config(variant: str, **base) -> CgcConfig:
    """Build a CgcConfig for one of the named ablation rows."""
    try:
        switches = dict(ABLATIONS[variant])
    except KeyError:
        raise ValueError(f"unknown ablation variant {variant!r}; choose from {sorted(ABLATIONS)}") from None
    kernel = _tuple(base["kernel"])
    if base.get("variant", "conv2d") == "conv2d" and len(kernel) == 1:
        kernel = kernel * 2
    if switches.get("d") == "full":
        switches["d"] = int(np.prod(kernel))
    if switches.get("pooled") == "2x":
        switches["pooled"] = tuple(2 * k for k in kernel)
    base = {**base, "kernel": kernel}
    return CgcConfig(**{**base, **switches})


@dataclass(eq=False)
class CgcParams:
    """Learnable state of one CGC layer.

    Aliased entries (``D_o is D_c`` under shared_D, ``norm_c2 is norm_c1``
    under shared_norm) are the same object, so they are stored and updated
    once.
    """

    W: Tensor
    E: Tensor
    D_c: Tensor | None = None
    D_o: Tensor | None = None
    I: Tensor | None = None
    E2: Tensor | None = None
    norm_c1: Norm | None = None
    norm_c2: Norm | None = None
    norm_o: Norm | None = None

    def named_tensors(self) -> Iterator[tuple[str, Tensor]]:
        """Unique learnable tensors in a fixed order (aliases yielded once)."""
        seen: set[int] = set()
        items = [("W", self.W), ("E", self.E), ("E2", self.E2), ("I", self.I),
                 ("D_c", self.D_c), ("D_o", self.D_o)]
        for label in ("norm_c1", "norm_c2", "norm_o"):
            norm = getattr(self, label)
            if norm is not None:
                items += [(f"{label}.gamma", norm.gamma), (f"{label}.beta", norm.beta)]
        for name, t in items:
            if t is not None and id(t) not in seen:
                seen.add(id(t))
                yield name, t

    def norms(self) -> Iterator[tuple[str, Norm]]:
        seen: set[int] = set()
        for label in ("norm_c1", "norm_c2", "norm_o"):
            norm = getattr(self, label)
            if norm is not None and id(norm) not in seen:
                seen.add(id(norm))
                yield label, norm

    def extra_count(self) -> int:
        return sum(t.size for name, t in self.named_tensors() if name != "W")

    def rebind(self, tensors: dict[str, Tensor]) -> "CgcParams":
        """Copy whose learnable tensors are replaced by ``tensors`` (keyed as in
        :meth:`named_tensors`); aliases and running statistics are kept."""
        out = CgcParams(W=tensors.get("W", self.W), E=tensors.get("E", self.E))
        for label in ("E2", "I", "D_c", "D_o"):
            t = getattr(self, label)
            if t is not None:
                alias = "D_c" if label == "D_o" and t is self.D_c else label
                setattr(out, label, tensors.get(alias, t))
        made: dict[int, Norm] = {}
        for label in ("norm_c1", "norm_c2", "norm_o"):
            norm = getattr(self, label)
            if norm is None:
                continue
            if id(norm) not in made:
                made[id(norm)] = replace(norm, gamma=tensors.get(f"{label}.gamma", norm.gamma),
                                         beta=tensors.get(f"{label}.beta", norm.beta))
            setattr(out, label, made[id(norm)])
        return out


def _he(rng: np.random.Generator, shape, fan_in: int, dtype) -> np.ndarray:
    return (rng.standard_normal(shape) * math.sqrt(2.0 / fan_in)).astype(dtype)


def _rngs(seed) -> tuple[np.random.Generator, np.random.Generator]:
    if isinstance(seed, tuple):
        return seed
    base, extra = np.random.SeedSequence(seed).spawn(2)
    return np.random.default_rng(base), np.random.default_rng(extra)


def init_params(cfg: CgcConfig, seed=0, *, dtype=np.float64, zero_gate: bool = True) -> CgcParams:
    """Fresh parameters for ``cfg``.

    ``seed`` is an int or a ``(kernel_rng, gate_rng)`` pair; the kernel ``W``
    only consumes the first generator, so a gate-frozen control seeded the
    same way gets an identical kernel.  With ``zero_gate`` the norms feeding
    the decoders start with zero scale and shift, which pins every gate to 0.5.
    """
    rng_w, rng_x = _rngs(seed)
    K, P, d = cfg.positions, cfg.pooled_size, cfg.d
    if cfg.variant == "sequence":
        W = Tensor(_he(rng_w, (cfg.heads, cfg.kernel[0]), cfg.kernel[0], dtype),
                   requires_grad=True, name="W")
        E = Tensor(_he(rng_x, (P, d), P, dtype), requires_grad=True, name="E", tag="cgc")
        D_c = Tensor(_he(rng_x, (d, K), d, dtype), requires_grad=True, name="D_c", tag="cgc")
        norm = Norm.create(d, (2,), 2, zero=zero_gate, dtype=dtype, tag="cgc", name="norm_c1")
        return CgcParams(W=W, E=E, D_c=D_c, norm_c1=norm)

    W = Tensor(_he(rng_w, (cfg.o, cfg.c) + cfg.kernel, cfg.c * K, dtype), requires_grad=True, name="W")
    E = Tensor(_he(rng_x, (P, d), P, dtype), requires_grad=True, name="E", tag="cgc")
    params = CgcParams(W=W, E=E)

    def norm(n, zero, name):
        return Norm.create(n, (0, 2), 1, zero=zero and zero_gate, dtype=dtype, tag="cgc", name=name)

    if cfg.uses_g1:
        params.D_c = Tensor(_he(rng_x, (d, K), d, dtype), requires_grad=True, name="D_c", tag="cgc")
        params.norm_c1 = norm(cfg.c, True, "norm_c1")
    if cfg.uses_g2:
        cg, og = cfg.c // cfg.g, cfg.o // cfg.g
        params.I = Tensor(_he(rng_x, (cg, og), cg, dtype), requires_grad=True, name="I", tag="cgc")
        if cfg.two_E:
            params.E2 = Tensor(_he(rng_x, (P, d), P, dtype), requires_grad=True, name="E2", tag="cgc")
        if cfg.shared_D and params.D_c is not None:
            params.D_o = params.D_c
        else:
            params.D_o = Tensor(_he(rng_x, (d, K), d, dtype), requires_grad=True,
                                name="D_o", tag="cgc")
        if cfg.shared_norm and params.norm_c1 is not None:
            params.norm_c2 = params.norm_c1
        else:
            params.norm_c2 = norm(cfg.c, False, "norm_c2")
        params.norm_o = norm(cfg.o, True, "norm_o")
    return params


def first_layer_interact(cfg: CgcConfig, seed=0, **kwargs) -> CgcParams:
    """Parameters for a stem layer whose input channels do not split into groups of 16.

    The channel-interaction map becomes a full ``c x o`` matrix (``g = 1``).
    """
    if cfg.channel_interacting and cfg.g != default_groups(cfg.c, cfg.o):
        cfg = replace(cfg, g=None)
    return init_params(cfg, seed, **kwargs)


# ---------------------------------------------------------------------------
# forward pieces

def encode_context(X, cfg: CgcConfig, params: CgcParams, mode: str = "train"):
    """Pool, project each channel with ``E``, then normalize + ReLU per branch.

    Returns ``(C_dec, C_int)``, each ``(b, c, d)``; a branch that the
    configuration does not use is ``None``.
    """
    Xd = X.data if isinstance(X, Tensor) else np.asarray(X)
    b, c = Xd.shape[:2]
    pooled = ops.adaptive_pool(X, cfg.pooled, cfg.pool_kind)
    flat = ops.reshape(pooled, (b, c, cfg.pooled_size))
    Z = ops.matmul(flat, params.E)
    C_dec = C_int = None
    if cfg.uses_g1:
        C_dec = ops.relu(params.norm_c1(Z, mode))
    if cfg.uses_g2:
        if cfg.two_E:
            C_int = ops.relu(params.norm_c2(ops.matmul(flat, params.E2), mode))
        elif params.norm_c2 is params.norm_c1 and C_dec is not None:
            C_int = C_dec
        else:
            C_int = ops.relu(params.norm_c2(Z, mode))
    return C_dec, C_int


def interact_channels(C_int, cfg: CgcConfig, params: CgcParams, mode: str = "train") -> Tensor:
    """Grouped linear ``c -> o`` at every latent position, then normalize + ReLU."""
    if not cfg.channel_interacting or params.I is None:
        raise ValueError("interact_channels called on a configuration without channel interaction")
    T = ops.transpose(C_int, (0, 2, 1))
    Y = ops.grouped_linear(T, params.I, cfg.g)
    O = ops.transpose(Y, (0, 2, 1))
    return ops.relu(params.norm_o(O, mode))


def decode_gate(C_dec, O, cfg: CgcConfig, params: CgcParams) -> Tensor:
    """Gate of shape ``(b, o, c, *kernel)`` from the two latent branches."""
    K, c, o = cfg.positions, cfg.c, cfg.o
    G1 = G2 = None
    if cfg.uses_g1:
        G1 = ops.matmul(C_dec, params.D_c)
        b = G1.shape[0]
    if cfg.uses_g2:
        G2 = ops.matmul(O, params.D_o)
        b = G2.shape[0]
    full = (b, o, c, K)
    if cfg.combine == "sum_sigmoid":
        logits = ops.add(ops.reshape(G1, (b, 1, c, K)), ops.reshape(G2, (b, o, 1, K)))
        gate = ops.sigmoid(logits)
    elif cfg.combine == "only_g1":
        gate = ops.broadcast_to(ops.reshape(ops.sigmoid(G1), (b, 1, c, K)), full)
    elif cfg.combine == "only_g2":
        gate = ops.broadcast_to(ops.reshape(ops.sigmoid(G2), (b, o, 1, K)), full)
    else:
        gate = ops.mul(ops.reshape(ops.sigmoid(G1), (b, 1, c, K)),
                       ops.reshape(ops.sigmoid(G2), (b, o, 1, K)))
    return ops.reshape(gate, (b, o, c) + cfg.kernel)


def modulate_kernel(W, G_b) -> Tensor:
    """Elementwise product of the kernel with a gate of the same shape (or a batch of them)."""
    ws = W.shape if isinstance(W, Tensor) else np.shape(W)
    gs = G_b.shape if isinstance(G_b, Tensor) else np.shape(G_b)
    if tuple(gs[-len(ws):]) != tuple(ws) or len(gs) not in (len(ws), len(ws) + 1):
        raise ValueError(f"modulate_kernel: gate shape {gs} does not match kernel shape {ws}")
    return ops.mul(W, G_b)


def compute_gate(X, cfg: CgcConfig, params: CgcParams, mode: str = "train") -> Tensor:
    C_dec, C_int = encode_context(X, cfg, params, mode)
    O = interact_channels(C_int, cfg, params, mode) if cfg.uses_g2 else None
    return decode_gate(C_dec, O, cfg, params)


def cgc_forward(X, cfg: CgcConfig, params: CgcParams, mode: str = "train", *,
                frozen_gate: bool = False, return_kernel: bool = False):
    """Context-gated convolution of ``X`` (``(b, c, h, w)`` or ``(b, c, L)``).

    ``frozen_gate`` replaces the generated gate by the constant 0.5 (the
    control used to isolate the effect of gating).
    """
    if cfg.variant == "sequence":
        raise ValueError("use cgc_seq_forward for the sequence variant")
    if frozen_gate:
        kernel = ops.scale(params.W, 0.5)
    else:
        gate = compute_gate(X, cfg, params, mode)
        kernel = modulate_kernel(params.W, gate)
    Y = ops.conv_nd(X, kernel, stride=cfg.stride, padding=cfg.padding)
    if return_kernel:
        return Y, kernel
    return Y


def cgc_seq_forward(S, lightweight_kernel, cfg: CgcConfig, params: CgcParams,
                    mode: str = "train", *, return_gate: bool = False):
    """Context-gated lightweight (head-shared, depthwise) 1D convolution.

    The sequence ``(b, c, L)`` is zero-padded to at least ``3k`` positions,
    averaged over the channels of each head and pooled to length ``3k``;
    the gate ``(b, H, k)`` multiplies the head kernels.
    """
    if cfg.variant != "sequence":
        raise ValueError("cgc_seq_forward needs a sequence-variant configuration")
    Sd = S.data if isinstance(S, Tensor) else np.asarray(S)
    if Sd.ndim != 3:
        raise ValueError(f"sequence input must be (b, c, L), got {Sd.shape}")
    b, c, L = Sd.shape
    if L == 0:
        raise ValueError("cannot gate an empty sequence (L = 0)")
    if c != cfg.c:
        raise ValueError(f"sequence has {c} channels, configuration expects {cfg.c}")
    H, k = cfg.heads, cfg.kernel[0]
    lk_shape = lightweight_kernel.shape if isinstance(lightweight_kernel, Tensor) else np.shape(lightweight_kernel)
    if tuple(lk_shape) != (H, k):
        raise ValueError(f"lightweight kernel must be ({H}, {k}), got {tuple(lk_shape)}")
    span = cfg.pooled[0]
    padded = ops.pad_tail(S, 2, span) if L < span else S
    Lp = max(L, span)
    heads = ops.reduce_mean(ops.reshape(padded, (b, H, c // H, Lp)), axis=2)
    pooled = ops.adaptive_pool(heads, (span,), "avg")
    Z = ops.matmul(pooled, params.E)
    C = ops.relu(params.norm_c1(Z, mode))
    gate = ops.sigmoid(ops.matmul(C, params.D_c))
    gated = ops.mul(lightweight_kernel, gate)
    per_channel = ops.reshape(
        ops.broadcast_to(ops.reshape(gated, (b, H, 1, k)), (b, H, c // H, k)), (b, c, 1, k))
    Y = ops.conv_nd(S, per_channel, stride=1, padding=k // 2, groups=c)
    if return_gate:
        return Y, gate
    return Y
