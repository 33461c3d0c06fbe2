"""Analytic parameter and multiply-accumulate counts.

Nothing here runs a network: every figure comes from layer shapes.  One MAC
(multiply-accumulate) is one unit; "MFLOPs" in reports means millions of MACs.

Conventions for the CGC gate-generation overhead, per sample and per layer
with input ``c x h x w``, pooled grid ``P = h' * w'``, kernel positions
``K = k1 * k2``:

* pooling: one add per input element plus one divide per pooled output
  (max pooling: one comparison per input element);
* context encoding ``E``: ``c * P * d`` (twice with a second encoder);
* channel interaction ``I``: ``c * o / g`` by default (``interact="per_d"``
  counts ``d * c * o / g``, i.e. the map applied at every latent position);
* gate decoding: ``c * d * K`` for ``D_c`` and ``o * d * K`` for ``D_o``;
* gate multiply ``W * G``: ``o * c * K``, reported in its own column and
  left out of the CGC total unless ``gate_multiply=True``.

The defaults are the combination that reproduces the ResNet-110 + CGC
overhead of the published ablation table; see :func:`calibrate`.
Normalization (2 ops per element), activations (1 per element, sigmoid
included) and network pooling go to a separate ``aux`` column.
"""
from __future__ import annotations

import csv
import io
import itertools
from dataclasses import dataclass, field

from .arch import ArchDescriptor, LayerDescriptor
from .layer import CgcConfig

INTERACT_CONVENTIONS = ("no_d", "per_d")


@dataclass
class CgcOverhead:
    pool: int = 0
    E: int = 0
    I: int = 0
    D: int = 0
    gate: int = 0

    def total(self, gate_multiply: bool = False) -> int:
        return self.pool + self.E + self.I + self.D + (self.gate if gate_multiply else 0)


@dataclass
class LayerCost:
    id: str
    kind: str
    stage: str | None
    params: int = 0
    cgc_params: int = 0
    macs: int = 0
    cgc_macs: CgcOverhead = field(default_factory=CgcOverhead)
    aux_macs: int = 0


@dataclass
class CostReport:
    name: str
    rows: list[LayerCost]
    interact: str = "no_d"
    gate_multiply: bool = False

    @property
    def base_params(self) -> int:
        return sum(r.params for r in self.rows)

    @property
    def cgc_params(self) -> int:
        return sum(r.cgc_params for r in self.rows)

    @property
    def total_params(self) -> int:
        return self.base_params + self.cgc_params

    @property
    def base_macs(self) -> int:
        """Conv and linear MACs only."""
        return sum(r.macs for r in self.rows)

    @property
    def aux_macs(self) -> int:
        return sum(r.aux_macs for r in self.rows)

    @property
    def overhead(self) -> CgcOverhead:
        out = CgcOverhead()
        for r in self.rows:
            for part in ("pool", "E", "I", "D", "gate"):
                setattr(out, part, getattr(out, part) + getattr(r.cgc_macs, part))
        return out

    @property
    def cgc_macs(self) -> int:
        return self.overhead.total(self.gate_multiply)

    def to_text(self, per_layer: bool = True) -> str:
        lines = []
        header = f"{'layer':<24}{'kind':<10}{'params':>12}{'cgc params':>12}{'MMACs':>12}{'cgc MMACs':>12}"
        if per_layer:
            lines.append(header)
            lines.append("-" * len(header))
            for r in self.rows:
                lines.append(
                    f"{r.id:<24}{r.kind:<10}{r.params:>12d}{r.cgc_params:>12d}"
                    f"{r.macs / 1e6:>12.3f}{r.cgc_macs.total(self.gate_multiply) / 1e6:>12.4f}")
            lines.append("-" * len(header))
        ov = self.overhead
        lines += [
            f"architecture        {self.name}",
            f"params (base)       {self.base_params} ({self.base_params / 1e6:.2f}M)",
            f"params (cgc extra)  {self.cgc_params} ({self.cgc_params / 1e6:.4f}M)",
            f"params (total)      {self.total_params} ({self.total_params / 1e6:.2f}M)",
            f"MACs conv+linear    {self.base_macs} ({self.base_macs / 1e9:.3f} GFLOPs)",
            f"MACs norm/act/pool  {self.aux_macs} ({self.aux_macs / 1e6:.3f} MFLOPs)",
            f"CGC overhead        {self.cgc_macs / 1e6:.3f} MFLOPs "
            f"[pool {ov.pool / 1e6:.3f}, E {ov.E / 1e6:.3f}, I {ov.I / 1e6:.3f}, "
            f"D {ov.D / 1e6:.3f}, gate multiply {ov.gate / 1e6:.3f}"
            f"{'' if self.gate_multiply else ' (excluded)'}]",
            f"conventions         interact={self.interact} gate_multiply={self.gate_multiply}",
        ]
        return "\n".join(lines) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["layer", "kind", "stage", "params", "cgc_params", "macs", "cgc_pool",
                         "cgc_E", "cgc_I", "cgc_D", "cgc_gate", "aux_macs"])
        for r in self.rows:
            o = r.cgc_macs
            writer.writerow([r.id, r.kind, r.stage or "", r.params, r.cgc_params, r.macs,
                             o.pool, o.E, o.I, o.D, o.gate, r.aux_macs])
        o = self.overhead
        writer.writerow(["TOTAL", "", "", self.base_params, self.cgc_params, self.base_macs,
                         o.pool, o.E, o.I, o.D, o.gate, self.aux_macs])
        return buf.getvalue()


# ---------------------------------------------------------------------------
# per-layer formulas

def cgc_param_count(cfg: CgcConfig) -> int:
    """Extra learnable values a CGC layer adds on top of its kernel."""
    P, K, d, c, o = cfg.pooled_size, cfg.positions, cfg.d, cfg.c, cfg.o
    if cfg.variant == "sequence":
        return P * d + d * K + 2 * d
    total = P * d
    decoders = int(cfg.uses_g1) + int(cfg.uses_g2)
    if cfg.shared_D and decoders == 2:
        decoders = 1
    total += decoders * d * K
    if cfg.uses_g1:
        total += 2 * c
    if cfg.uses_g2:
        total += (c // cfg.g) * (o // cfg.g)
        if cfg.two_E:
            total += P * d
        if not (cfg.shared_norm and cfg.uses_g1):
            total += 2 * c
        total += 2 * o
    return total


def cgc_overhead_macs(cfg: CgcConfig, in_spatial: tuple[int, ...], interact: str = "no_d") -> tuple[CgcOverhead, int]:
    """Gate-generation MACs for one sample, plus the aux (norm/activation) count."""
    if interact not in INTERACT_CONVENTIONS:
        raise ValueError(f"interact convention must be one of {INTERACT_CONVENTIONS}")
    P, K, d, c, o = cfg.pooled_size, cfg.positions, cfg.d, cfg.c, cfg.o
    n_in = c
    for s in in_spatial:
        n_in *= s
    ov = CgcOverhead()
    ov.pool = n_in + (c * P if cfg.pool_kind == "avg" else 0)
    ov.E = c * P * d
    aux = 0
    if cfg.uses_g1:
        ov.D += c * d * K
        aux += 3 * c * d
    if cfg.uses_g2:
        ov.I = (c * o) // cfg.g * (d if interact == "per_d" else 1)
        ov.D += o * d * K
        if cfg.two_E:
            ov.E += c * P * d
        if cfg.two_E or not (cfg.shared_norm and cfg.uses_g1):
            aux += 3 * c * d
        aux += 3 * o * d
    ov.gate = o * c * K
    if cfg.combine == "sum_sigmoid":
        aux += o * c * K
    elif cfg.combine == "product":
        aux += (c + o) * K
    else:
        aux += (c if cfg.combine == "only_g1" else o) * K
    return ov, aux


def _layer_cost(lay: LayerDescriptor, interact: str) -> LayerCost:
    row = LayerCost(lay.id, lay.kind, lay.stage)
    c, h, w = lay.in_shape
    o, oh, ow = lay.out_shape
    if lay.is_conv:
        row.params = lay.o * (lay.c // lay.groups) * lay.spatial_size
        row.macs = row.params * oh * ow
        if lay.kind == "cgc_conv":
            row.cgc_params = cgc_param_count(lay.cgc)
            row.cgc_macs, row.aux_macs = cgc_overhead_macs(lay.cgc, (h, w), interact)
    elif lay.kind == "linear":
        row.params = lay.c * lay.o + (lay.o if lay.bias else 0)
        row.macs = lay.c * lay.o
    elif lay.kind == "norm":
        row.params = 2 * c
        row.aux_macs = 2 * c * h * w
    elif lay.kind == "relu":
        row.aux_macs = c * h * w
    elif lay.kind == "pool":
        row.aux_macs = c * h * w + (o * oh * ow if lay.pool_mode == "avg" else 0)
    return row


def cost_report(arch: ArchDescriptor, interact: str = "no_d", gate_multiply: bool = False) -> CostReport:
    """Per-layer and total parameter / MAC counts for ``arch``."""
    rows = [_layer_cost(lay, interact) for lay in arch.iter_layers()]
    return CostReport(arch.name, rows, interact, gate_multiply)


def count_params(arch: ArchDescriptor) -> CostReport:
    return cost_report(arch)


def count_macs(arch: ArchDescriptor, interact: str = "no_d", gate_multiply: bool = False) -> CostReport:
    return cost_report(arch, interact, gate_multiply)


def naive_gate_cost(l: int, layer: LayerDescriptor | CgcConfig, decomposed: bool = False) -> int:
    """Parameters of a bias-free linear map from a length-``l`` context vector to the gate.

    Undecomposed it emits the full ``o x c x k1 x k2`` gate; decomposed it
    emits the ``c x k1 x k2`` and ``o x k1 x k2`` components separately.
    """
    if l < 1:
        raise ValueError("context length l must be >= 1")
    K = 1
    for k in layer.kernel:
        K *= k
    if decomposed:
        return l * (layer.o + layer.c) * K
    return l * layer.o * layer.c * K


def calibrate(arch_cgc: ArchDescriptor, target_macs: float) -> list[tuple[str, bool, int, float]]:
    """Try every counting convention; returns ``(interact, gate_multiply, macs, rel_error)`` best first."""
    results = []
    for interact, gate in itertools.product(INTERACT_CONVENTIONS, (False, True)):
        macs = cost_report(arch_cgc, interact, gate).cgc_macs
        results.append((interact, gate, macs, abs(macs - target_macs) / target_macs))
    return sorted(results, key=lambda r: r[3])
