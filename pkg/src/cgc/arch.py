"""Declarative architecture descriptors.

A descriptor is a JSON document::

    {
      "name": "resnet110",
      "input_shape": [3, 32, 32],
      "layers": [
        {"kind": "conv", "id": "conv1", "o": 16, "kernel": 3, "padding": 1, "stage": "stem"},
        {"kind": "norm"}, {"kind": "relu"},
        {"kind": "stage", "id": "res1", "block": "basic", "blocks": 18, "o": 16, "stride": 1},
        {"kind": "pool", "mode": "avg", "global": true},
        {"kind": "linear", "o": 10, "bias": true}
      ]
    }

Layer kinds: ``conv`` and ``cgc_conv`` (``o``, ``kernel``, ``stride``,
``padding``, ``groups``; ``cgc_conv`` may carry a ``cgc`` object of
CgcConfig overrides or ``"variant"``), ``linear`` (``o``, ``bias``),
``norm``, ``relu``, ``pool`` (``mode`` avg/max and either ``global`` or
``kernel``/``stride``/``padding``), and the ``stage`` macro, which expands
to ``blocks`` residual blocks of type ``basic`` (two 3x3 convs, output
``o``) or ``bottleneck`` (1x1, 3x3, 1x1 with width ``o`` and output
``4*o``).  The first block of a stage carries ``stride``; a 1x1 projection
shortcut is inserted whenever a block changes shape.  Any layer may set
``c`` explicitly, which is then checked against the chained shape.
Missing ``id``s are generated; every conv gets the ``stage`` of its macro.
"""
from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterator, Union

from .layer import ABLATIONS, CgcConfig, ablation_config
from .ops import conv_out_extent

LAYER_KINDS = ("conv", "cgc_conv", "linear", "norm", "relu", "pool")


class DescriptorError(ValueError):
    """An architecture descriptor is malformed or its shapes do not chain."""


@dataclass
class LayerDescriptor:
    kind: str
    id: str
    c: int = 0
    o: int = 0
    kernel: tuple[int, ...] = ()
    stride: int = 1
    padding: int = 0
    groups: int = 1
    bias: bool = False
    cgc: CgcConfig | None = None
    stage: str | None = None
    pool_mode: str = "avg"
    pool_global: bool = False
    in_shape: tuple[int, int, int] = (0, 0, 0)
    out_shape: tuple[int, int, int] = (0, 0, 0)

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise DescriptorError(f"layer {self.id!r}: unknown kind {self.kind!r}")
        if (self.cgc is not None) != (self.kind == "cgc_conv"):
            raise DescriptorError(f"layer {self.id!r}: a CGC config is required exactly for cgc_conv layers")

    @property
    def spatial_size(self) -> int:
        size = 1
        for k in self.kernel:
            size *= k
        return size

    @property
    def is_conv(self) -> bool:
        return self.kind in ("conv", "cgc_conv")


@dataclass
class BlockDescriptor:
    """Residual block: ``relu(main(x) + shortcut(x))``; ``shortcut=None`` is identity."""

    id: str
    main: list[LayerDescriptor]
    shortcut: list[LayerDescriptor] | None = None
    stage: str | None = None
    in_shape: tuple[int, int, int] = (0, 0, 0)
    out_shape: tuple[int, int, int] = (0, 0, 0)


Item = Union[LayerDescriptor, BlockDescriptor]


@dataclass
class ArchDescriptor:
    name: str
    input_shape: tuple[int, int, int]
    layers: list[Item] = field(default_factory=list)

    def iter_layers(self) -> Iterator[LayerDescriptor]:
        """Every primitive layer in execution order (block main path before shortcut)."""
        for item in self.layers:
            if isinstance(item, BlockDescriptor):
                yield from item.main
                if item.shortcut:
                    yield from item.shortcut
            else:
                yield item

    def layer(self, layer_id: str) -> LayerDescriptor:
        for lay in self.iter_layers():
            if lay.id == layer_id:
                return lay
        raise DescriptorError(f"{self.name}: no layer with id {layer_id!r}")

    def stages(self) -> list[str]:
        seen: list[str] = []
        for lay in self.iter_layers():
            if lay.stage is not None and lay.stage not in seen:
                seen.append(lay.stage)
        return seen

    def cgc_layers(self) -> list[LayerDescriptor]:
        return [lay for lay in self.iter_layers() if lay.kind == "cgc_conv"]

    @property
    def output_shape(self) -> tuple[int, int, int]:
        return self.layers[-1].out_shape if self.layers else self.input_shape


# ---------------------------------------------------------------------------
# parsing and shape inference

def _int_pair_first(value, what: str, lid: str) -> tuple[int, ...]:
    if isinstance(value, int):
        return (value, value)
    value = tuple(int(v) for v in value)
    if len(value) == 1:
        return value * 2
    if len(value) != 2:
        raise DescriptorError(f"layer {lid!r}: {what} must be an int or a pair, got {value}")
    return value


def _plain(spec: dict, default_id: str, stage: str | None) -> LayerDescriptor:
    kind = spec.get("kind")
    lid = spec.get("id", default_id)
    if kind not in LAYER_KINDS:
        raise DescriptorError(f"layer {lid!r}: unknown kind {kind!r}")
    lay = LayerDescriptor(kind="conv" if kind == "cgc_conv" else kind, id=lid,
                          stage=spec.get("stage", stage))
    lay.c = int(spec.get("c", 0))
    if kind in ("conv", "cgc_conv"):
        lay.o = int(spec["o"])
        lay.kernel = _int_pair_first(spec.get("kernel", 1), "kernel", lid)
        lay.stride = int(spec.get("stride", 1))
        lay.padding = int(spec.get("padding", 0))
        lay.groups = int(spec.get("groups", 1))
        if kind == "cgc_conv":
            lay.kind = "cgc_conv"
            lay.cgc = spec.get("cgc", {})  # resolved once c is known
    elif kind == "linear":
        lay.o = int(spec["o"])
        lay.bias = bool(spec.get("bias", False))
    elif kind == "pool":
        lay.pool_mode = spec.get("mode", "avg")
        if lay.pool_mode not in ("avg", "max"):
            raise DescriptorError(f"layer {lid!r}: pool mode must be avg or max")
        lay.pool_global = bool(spec.get("global", False))
        if not lay.pool_global:
            lay.kernel = _int_pair_first(spec["kernel"], "kernel", lid)
            lay.stride = int(spec.get("stride", lay.kernel[0]))
            lay.padding = int(spec.get("padding", 0))
    return lay


def _conv(lid, o, k, stride, pad, stage) -> dict:
    return {"kind": "conv", "id": lid, "o": o, "kernel": k, "stride": stride, "padding": pad, "stage": stage}


def _expand_stage(spec: dict, channels: int) -> tuple[list[dict], int]:
    sid = spec["id"]
    block = spec.get("block", "basic")
    n = int(spec["blocks"])
    width = int(spec["o"])
    stride = int(spec.get("stride", 1))
    blocks = []
    c = channels
    for i in range(n):
        s = stride if i == 0 else 1
        p = f"{sid}.{i}"
        if block == "basic":
            out = width
            main = [_conv(f"{p}.conv1", width, 3, s, 1, sid), {"kind": "norm", "id": f"{p}.bn1"},
                    {"kind": "relu", "id": f"{p}.relu1"},
                    _conv(f"{p}.conv2", width, 3, 1, 1, sid), {"kind": "norm", "id": f"{p}.bn2"}]
        elif block == "bottleneck":
            out = 4 * width
            main = [_conv(f"{p}.conv1", width, 1, 1, 0, sid), {"kind": "norm", "id": f"{p}.bn1"},
                    {"kind": "relu", "id": f"{p}.relu1"},
                    _conv(f"{p}.conv2", width, 3, s, 1, sid), {"kind": "norm", "id": f"{p}.bn2"},
                    {"kind": "relu", "id": f"{p}.relu2"},
                    _conv(f"{p}.conv3", out, 1, 1, 0, sid), {"kind": "norm", "id": f"{p}.bn3"}]
        else:
            raise DescriptorError(f"stage {sid!r}: unknown block type {block!r}")
        shortcut = None
        if s != 1 or c != out:
            shortcut = [_conv(f"{p}.down", out, 1, s, 0, sid), {"kind": "norm", "id": f"{p}.down_bn"}]
        blocks.append({"kind": "block", "id": p, "stage": sid, "main": main, "shortcut": shortcut})
        c = out
    return blocks, c


def _resolve_layer(lay: LayerDescriptor, shape: tuple[int, int, int], where: str) -> tuple[int, int, int]:
    c, h, w = shape
    if lay.c and lay.c != c:
        raise DescriptorError(
            f"{where}: layer {lay.id!r} declares c={lay.c} but receives {c} channels from the previous layer")
    lay.c = c
    lay.in_shape = shape
    if lay.is_conv:
        if c % lay.groups or lay.o % lay.groups:
            raise DescriptorError(f"{where}: layer {lay.id!r} channels not divisible by groups={lay.groups}")
        oh = conv_out_extent(h, lay.kernel[0], lay.stride, lay.padding)
        ow = conv_out_extent(w, lay.kernel[1], lay.stride, lay.padding)
        if oh < 1 or ow < 1:
            raise DescriptorError(f"{where}: layer {lay.id!r} kernel {lay.kernel} exceeds input {h}x{w}")
        if lay.kind == "cgc_conv" and not isinstance(lay.cgc, CgcConfig):
            overrides = dict(lay.cgc or {})
            variant = overrides.pop("variant", "default")
            try:
                lay.cgc = ablation_config(variant, c=c, o=lay.o, kernel=lay.kernel,
                                          stride=lay.stride, padding=lay.padding, **overrides)
            except ValueError as exc:
                raise DescriptorError(f"{where}: layer {lay.id!r}: {exc}") from None
        lay.out_shape = (lay.o, oh, ow)
    elif lay.kind == "linear":
        lay.c = c * h * w
        lay.out_shape = (lay.o, 1, 1)
    elif lay.kind == "pool":
        lay.o = c
        if lay.pool_global:
            lay.out_shape = (c, 1, 1)
        else:
            oh = conv_out_extent(h, lay.kernel[0], lay.stride, lay.padding)
            ow = conv_out_extent(w, lay.kernel[1], lay.stride, lay.padding)
            if oh < 1 or ow < 1:
                raise DescriptorError(f"{where}: pool {lay.id!r} window exceeds input {h}x{w}")
            lay.out_shape = (c, oh, ow)
    else:
        lay.o = c
        lay.out_shape = shape
    return lay.out_shape


def _chain(layers: list[LayerDescriptor], shape, where: str):
    for lay in layers:
        shape = _resolve_layer(lay, shape, where)
    return shape


def parse_arch(doc: dict) -> ArchDescriptor:
    """Build and shape-check a descriptor from its JSON document."""
    try:
        name = doc["name"]
        input_shape = tuple(int(v) for v in doc["input_shape"])
        specs = doc["layers"]
    except (KeyError, TypeError) as exc:
        raise DescriptorError(f"descriptor is missing field {exc}") from None
    if len(input_shape) != 3 or min(input_shape) < 1:
        raise DescriptorError(f"{name}: input_shape must be three positive extents, got {input_shape}")

    arch = ArchDescriptor(name=name, input_shape=input_shape)
    shape = input_shape
    counter = 0
    for spec in specs:
        if spec.get("kind") == "stage":
            blocks, _ = _expand_stage(spec, shape[0])
            items = blocks
        else:
            items = [spec]
        for item in items:
            if item.get("kind") == "block":
                stage = item.get("stage")
                main = [_plain(s, f"{item['id']}.{j}", stage) for j, s in enumerate(item["main"])]
                short = None
                if item.get("shortcut"):
                    short = [_plain(s, f"{item['id']}.s{j}", stage) for j, s in enumerate(item["shortcut"])]
                block = BlockDescriptor(item["id"], main, short, stage)
                block.in_shape = shape
                out = _chain(main, shape, f"{name}/{block.id}")
                side = _chain(short, shape, f"{name}/{block.id} shortcut") if short else shape
                if out != side:
                    raise DescriptorError(
                        f"{name}/{block.id}: main path gives {out} but shortcut gives {side}")
                block.out_shape = out
                arch.layers.append(block)
                shape = out
            else:
                counter += 1
                lay = _plain(item, f"{item.get('kind', 'layer')}{counter}", item.get("stage"))
                shape = _resolve_layer(lay, shape, name)
                arch.layers.append(lay)
    return arch


def load_arch(source) -> ArchDescriptor:
    """Load a descriptor from a JSON path, or a bundled one by name (``resnet50`` or ``resnet50.json``)."""
    path = Path(source)
    if not path.exists():
        bundled = resources.files("cgc") / "archs" / f"{path.stem}.json"
        if path.parent != Path(".") or not bundled.is_file():
            raise DescriptorError(f"no descriptor file {source!r} and no bundled architecture by that name")
        return parse_arch(json.loads(bundled.read_text()))
    with open(path) as fh:
        return parse_arch(json.load(fh))


def bundled_archs() -> list[str]:
    return sorted(p.name[:-5] for p in (resources.files("cgc") / "archs").iterdir() if p.name.endswith(".json"))


# ---------------------------------------------------------------------------
# CGC placement

def cgc_eligible(lay: LayerDescriptor) -> bool:
    """Convs with a spatial kernel > 1 and no channel grouping."""
    return lay.is_conv and lay.spatial_size > 1 and lay.groups == 1


def _check_stages(arch: ArchDescriptor, stages) -> set[str] | None:
    if stages is None:
        return None
    stages = set(stages)
    unknown = stages - set(arch.stages())
    if unknown:
        raise DescriptorError(f"{arch.name}: unknown stage(s) {sorted(unknown)}; known: {arch.stages()}")
    return stages


def strip_cgc(arch: ArchDescriptor) -> ArchDescriptor:
    out = copy.deepcopy(arch)
    for lay in out.iter_layers():
        if lay.kind == "cgc_conv":
            lay.kind, lay.cgc = "conv", None
    return out


def with_cgc(arch: ArchDescriptor, variant: str = "default", stages=None, **overrides) -> ArchDescriptor:
    """Copy of ``arch`` with every eligible conv (optionally only in ``stages``) made a CGC conv."""
    if variant not in ABLATIONS:
        raise DescriptorError(f"unknown variant {variant!r}; choose from {sorted(ABLATIONS)}")
    stages = _check_stages(arch, stages)
    out = copy.deepcopy(arch)
    for lay in out.iter_layers():
        if not cgc_eligible(lay) or (stages is not None and lay.stage not in stages):
            continue
        lay.kind = "cgc_conv"
        lay.cgc = ablation_config(variant, c=lay.c, o=lay.o, kernel=lay.kernel,
                                  stride=lay.stride, padding=lay.padding, **overrides)
    return out


def stage_filter(arch: ArchDescriptor, stages, variant: str = "default") -> ArchDescriptor:
    """CGC on the eligible convs of ``stages`` only; every other conv is plain."""
    stages = _check_stages(arch, stages)
    if not stages:
        return strip_cgc(arch)
    return with_cgc(strip_cgc(arch), variant, stages)
