"""Class structure of modulated kernels.

For a chosen CGC layer, every sample's modulated kernel is flattened to a
vector.  Per class we take the mean kernel; ``intra[i]`` is the mean L2
distance of class ``i``'s samples to that mean and ``inter[i, j]`` the L2
distance between the means of classes ``i`` and ``j``.

The difference matrix pairs each inter-class distance with the intra-class
distance of its *row* class: ``diff[i, j] = inter[i, j] - intra[i]``, and
``frac_inter_gt_intra`` is the fraction of ordered pairs ``i != j`` with
``diff[i, j] > 0``.  Reading the comparison row-wise makes the matrix
asymmetric even though ``inter`` is symmetric.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import Dataset
from .nn import Model
from .tensor import Tensor

# Share of ordered class pairs with inter > intra reported for a full-scale
# ImageNet ResNet-50 + CGC; kept for reference, not a desk-scale target.
REFERENCE_FRAC_IMAGENET = 0.9399


@dataclass
class GateStats:
    class_means: np.ndarray
    intra: np.ndarray
    inter: np.ndarray
    diff: np.ndarray
    frac_inter_gt_intra: float

    @property
    def class_count(self) -> int:
        return len(self.intra)


def default_layer(model: Model) -> str:
    """Id of the deepest CGC layer (last in execution order)."""
    layers = model.cgc_layers()
    if not layers:
        raise ValueError("model has no CGC layer to analyse")
    return layers[-1].id


def sample_kernels(model: Model, data: Dataset, layer: str | None = None,
                   batch_size: int = 64) -> np.ndarray:
    """Flattened eval-mode modulated kernel of every sample at ``layer``, shape ``(n, o*c*k1*k2)``."""
    layer = layer or default_layer(model)
    target = model.layer(layer)
    if target.desc.kind != "cgc_conv":
        raise ValueError(f"layer {layer!r} is a {target.desc.kind}, not a CGC conv")
    dtype = model.parameters()[0].dtype
    chunks = []
    target.record = True
    try:
        for start in range(0, len(data), batch_size):
            x = data.inputs[start:start + batch_size].astype(dtype)
            model(Tensor(x), "eval")
            chunks.append(target.last_kernel.reshape(len(x), -1).astype(np.float64))
    finally:
        target.record = False
        target.last_kernel = None
    return np.concatenate(chunks)


def _means(kernels: np.ndarray, labels: np.ndarray, class_count: int) -> np.ndarray:
    labels = np.asarray(labels)
    counts = np.bincount(labels, minlength=class_count)
    empty = np.flatnonzero(counts == 0)
    if empty.size:
        raise ValueError(f"classes without samples: {empty.tolist()}")
    return np.stack([kernels[labels == k].mean(axis=0) for k in range(class_count)])


def class_mean_kernels(model: Model, data: Dataset, layer: str | None = None,
                       batch_size: int = 64) -> np.ndarray:
    """Per-class mean of the flattened modulated kernel at ``layer``, shape ``(classes, D)``."""
    kernels = sample_kernels(model, data, layer, batch_size)
    return _means(kernels, data.labels, data.class_count)


def distance_stats(class_means: np.ndarray, per_sample_kernels: np.ndarray, labels) -> GateStats:
    """Inter/intra-class distances of flattened kernels (see module docstring)."""
    class_means = np.asarray(class_means, dtype=np.float64)
    kernels = np.asarray(per_sample_kernels, dtype=np.float64)
    labels = np.asarray(labels)
    k = len(class_means)
    if k < 2:
        raise ValueError("distance statistics need at least two classes")
    intra = np.array([np.linalg.norm(kernels[labels == i] - class_means[i], axis=1).mean()
                      if np.any(labels == i) else 0.0 for i in range(k)])
    delta = class_means[:, None, :] - class_means[None, :, :]
    inter = np.sqrt((delta ** 2).sum(axis=-1))
    inter = 0.5 * (inter + inter.T)
    np.fill_diagonal(inter, 0.0)
    diff = inter - intra[:, None]
    off = ~np.eye(k, dtype=bool)
    frac = float((inter[off] > np.broadcast_to(intra[:, None], (k, k))[off]).mean())
    return GateStats(class_means, intra, inter, diff, frac)


def gate_stats(model: Model, data: Dataset, layer: str | None = None, batch_size: int = 64) -> GateStats:
    kernels = sample_kernels(model, data, layer, batch_size)
    return distance_stats(_means(kernels, data.labels, data.class_count), kernels, data.labels)


def _fmt(v: float) -> str:
    return format(float(v), ".17g")


def export_stats(stats: GateStats, path) -> None:
    """CSV with ``inter``, ``intra`` and ``diff`` blocks, then a summary line."""
    k = stats.class_count
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        for name, matrix in (("inter", stats.inter), ("intra", stats.intra[None, :]), ("diff", stats.diff)):
            writer.writerow([f"# {name}"])
            writer.writerows([_fmt(v) for v in row] for row in matrix)
        writer.writerow(["# summary"])
        writer.writerow([f"classes={k}", f"frac_inter_gt_intra={stats.frac_inter_gt_intra:.4f}"])


def read_stats(path) -> dict[str, np.ndarray | float]:
    """Parse a file written by :func:`export_stats`."""
    blocks: dict[str, list[list[str]]] = {}
    current = None
    with open(Path(path), newline="") as fh:
        for row in csv.reader(fh):
            if row and row[0].startswith("# "):
                current = row[0][2:]
                blocks[current] = []
            elif row:
                blocks[current].append(row)
    out: dict[str, np.ndarray | float] = {
        name: np.array([[float(v) for v in row] for row in blocks[name]]) for name in ("inter", "diff")}
    out["intra"] = np.array([float(v) for v in blocks["intra"][0]])
    summary = dict(item.split("=", 1) for item in blocks["summary"][0])
    out["frac_inter_gt_intra"] = float(summary["frac_inter_gt_intra"])
    return out
