"""SGD training loop with the CGC learning-rate and initialization rules."""
from __future__ import annotations

import configparser
import contextlib
import csv
import dataclasses
import io
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import ops
from .arch import ArchDescriptor, load_arch, strip_cgc, with_cgc
from .data import Dataset, augment, load_cifar10_dir, synth_dataset
from .nn import Model, init_model
from .tensor import NonFiniteError, Tensor, save_sections

log = logging.getLogger(__name__)

DTYPES = {"float32": np.float32, "float64": np.float64}


class TrainingDiverged(FloatingPointError):
    """Training produced a non-finite value; the message names where."""


@dataclass
class TrainConfig:
    """Everything that determines a training run.

    Defaults are the CIFAR-10 ResNet-110 recipe (164 epochs, batch 128,
    learning rate 0.1 divided by 10 at epochs 81 and 122, momentum 0.9,
    weight decay 1e-4, gate-path learning rate 10x smaller).

    ``lr_schedule`` holds ``(epoch, factor)`` pairs with 1-based epochs:
    from that epoch on the learning rate is multiplied by ``factor``
    (cumulatively).  ``dataset`` is ``synthetic`` or ``cifar10``.
    """

    arch: str = "resnet110"
    epochs: int = 164
    batch_size: int = 128
    base_lr: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 1e-4
    lr_schedule: list[tuple[int, float]] = field(default_factory=lambda: [(81, 0.1), (122, 0.1)])
    cgc_lr_mult: float = 0.1
    seed: int = 0
    augment: bool = True
    flip: bool = True
    dataset: str = "cifar10"
    synth_mode: str = "context-separable"
    class_count: int = 10
    n_train: int = 512
    n_eval: int = 256
    data_seed: int = 0
    dtype: str = "float32"
    frozen_gate: bool = False
    cgc: bool = True
    variant: str = "default"

    def __post_init__(self):
        if self.base_lr <= 0:
            raise ValueError("base_lr must be positive")
        if self.epochs < 0 or self.batch_size < 1:
            raise ValueError("epochs must be >= 0 and batch_size >= 1")
        for epoch, factor in self.lr_schedule:
            if epoch < 1 or not 0 < factor <= 1:
                raise ValueError(f"schedule entry ({epoch}, {factor}): epochs are >= 1 and factors in (0, 1]")
        if self.dtype not in DTYPES:
            raise ValueError(f"dtype must be one of {sorted(DTYPES)}")
        if self.dataset not in ("synthetic", "cifar10"):
            raise ValueError(f"dataset must be 'synthetic' or 'cifar10', got {self.dataset!r}")

    @classmethod
    def smoke(cls, **overrides) -> "TrainConfig":
        """Desk-scale run: the tiny CGC net on 512 synthetic 16x16 images."""
        preset = dict(arch="tiny", epochs=12, batch_size=32, base_lr=0.05, lr_schedule=[(7, 0.1), (10, 0.1)],
                      augment=False, dataset="synthetic", class_count=4, n_train=512, n_eval=256)
        return cls(**{**preset, **overrides})

    # -- key=value text form -------------------------------------------------
    @classmethod
    def from_pairs(cls, pairs: dict[str, str], base: "TrainConfig | None" = None) -> "TrainConfig":
        values = dataclasses.asdict(base) if base is not None else {}
        known = {f.name: f for f in dataclasses.fields(cls)}
        for key, raw in pairs.items():
            if key not in known:
                raise ValueError(f"unknown training option {key!r}")
            values[key] = _parse_value(key, raw.strip(), getattr(cls(), key))
        return cls(**values)

    @classmethod
    def from_text(cls, text: str, overrides: dict[str, str] | None = None) -> "TrainConfig":
        parser = configparser.ConfigParser(interpolation=None, delimiters=("=",))
        parser.optionxform = str
        parser.read_string("[train]\n" + text)
        return cls.from_pairs({**dict(parser["train"]), **(overrides or {})})

    @classmethod
    def from_file(cls, path, overrides: dict[str, str] | None = None) -> "TrainConfig":
        return cls.from_text(Path(path).read_text(), overrides)

    def to_pairs(self) -> dict[str, str]:
        out = {}
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if f.name == "lr_schedule":
                v = ",".join(f"{e}:{x!r}" for e, x in v)
            elif isinstance(v, bool):
                v = str(v).lower()
            out[f.name] = str(v)
        return out


def _parse_value(key: str, raw: str, default):
    if key == "lr_schedule":
        entries = []
        for item in filter(None, (s.strip() for s in raw.split(","))):
            epoch, factor = item.split(":")
            entries.append((int(epoch), float(factor)))
        return entries
    if isinstance(default, bool):
        lowered = raw.lower()
        if lowered not in ("true", "false", "1", "0", "yes", "no"):
            raise ValueError(f"option {key!r} expects a boolean, got {raw!r}")
        return lowered in ("true", "1", "yes")
    if isinstance(default, int):
        return int(raw)
    if isinstance(default, float):
        return float(raw)
    return raw


def lr_at(cfg: TrainConfig, epoch: int) -> float:
    """Learning rate used during 1-based ``epoch``."""
    lr = cfg.base_lr
    for start, factor in cfg.lr_schedule:
        if epoch >= start:
            lr *= factor
    return lr


# ---------------------------------------------------------------------------
# optimizer

def sgd_step(params: list[Tensor], grads: list, cfg: TrainConfig, state: list,
             lr: float | None = None) -> list[Tensor]:
    """One momentum-SGD update, in place.

    ``m <- momentum * m + (g + weight_decay * p)`` and ``p <- p - lr_eff * m``
    with ``lr_eff = lr * cgc_lr_mult`` for gate-path parameters (tag ``cgc``).
    ``state`` holds the momentum buffers aligned with ``params``; an empty
    list is filled on the first call.  Parameters whose gradient is ``None``
    (not reached by the loss) are left untouched.
    """
    if len(params) != len(grads):
        raise ValueError(f"{len(params)} parameters but {len(grads)} gradients")
    lr = cfg.base_lr if lr is None else lr
    if not state:
        state.extend(np.zeros_like(p.data) for p in params)
    for i, (p, g) in enumerate(zip(params, grads)):
        if g is None:
            continue
        if g.shape != p.shape:
            raise ValueError(f"gradient for {p.name or i} has shape {g.shape}, parameter has {p.shape}")
        step = lr * cfg.cgc_lr_mult if p.tag == "cgc" else lr
        buf = state[i]
        buf *= cfg.momentum
        buf += g + cfg.weight_decay * p.data
        p.data = p.data - step * buf
    return params


# ---------------------------------------------------------------------------
# data and model

def resolve_arch(cfg: TrainConfig, source=None) -> ArchDescriptor:
    """Descriptor for ``cfg``: CGC on every eligible conv when ``cfg.cgc``
    and the descriptor has none of its own, no CGC at all otherwise."""
    arch = load_arch(source or cfg.arch)
    if not cfg.cgc:
        return strip_cgc(arch)
    if not arch.cgc_layers():
        return with_cgc(arch, cfg.variant)
    return arch


def build_model(cfg: TrainConfig, arch_source=None) -> Model:
    model = init_model(resolve_arch(cfg, arch_source), cfg.seed, dtype=DTYPES[cfg.dtype])
    model.set_frozen_gate(cfg.frozen_gate)
    return model


def build_datasets(cfg: TrainConfig, data_dir=None) -> tuple[Dataset, Dataset]:
    if cfg.dataset == "cifar10":
        if data_dir is None:
            raise ValueError("cifar10 training needs a data directory")
        return load_cifar10_dir(data_dir, "train"), load_cifar10_dir(data_dir, "test")
    train = synth_dataset(cfg.data_seed, cfg.class_count, cfg.n_train, cfg.synth_mode)
    test = synth_dataset(cfg.data_seed + 10_007, cfg.class_count, max(cfg.n_eval, cfg.class_count),
                         cfg.synth_mode, split="eval")
    return train, test


@contextlib.contextmanager
def preserved_stats(model: Model):
    """Run train-mode forwards without leaving a trace in running statistics."""
    saved = [(n, n.running.mean.copy(), n.running.var.copy())
             for lay in model.layers() for _, n in lay.norms() if n.running is not None]
    try:
        yield
    finally:
        for norm, mean, var in saved:
            norm.running.mean, norm.running.var = mean, var


def evaluate(model: Model, data: Dataset, batch_size: int, mode: str = "eval") -> tuple[float, float]:
    """Mean loss and accuracy over ``data`` (no parameter updates)."""
    dtype = model.parameters()[0].dtype
    total_loss = correct = 0.0
    with preserved_stats(model):
        for start in range(0, len(data), batch_size):
            x = data.inputs[start:start + batch_size].astype(dtype)
            y = data.labels[start:start + batch_size]
            logits = model(Tensor(x), mode)
            total_loss += float(ops.cross_entropy(logits.detach(), y).data) * len(y)
            correct += int((logits.data.argmax(axis=1) == y).sum())
    return total_loss / len(data), correct / len(data)


@dataclass
class TrainResult:
    rows: list[tuple[int, str, float, float]]
    model: Model
    config: TrainConfig

    def final(self, split: str = "train") -> tuple[float, float]:
        loss, acc = [(r[2], r[3]) for r in self.rows if r[1] == split][-1]
        return loss, acc

    def metrics_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["epoch", "split", "loss", "acc"])
        for epoch, split, loss, acc in self.rows:
            writer.writerow([epoch, split, f"{loss:.8f}", f"{acc:.6f}"])
        return buf.getvalue()


def _forward_loss(model: Model, x: np.ndarray, y: np.ndarray):
    logits = model(Tensor(x), "train")
    try:
        loss = ops.cross_entropy(logits, y)
    except NonFiniteError as exc:
        raise NonFiniteError(f"non-finite value in the loss: {exc}") from None
    return logits, loss


def train(cfg: TrainConfig, data_dir=None, out_dir=None, *, datasets=None) -> TrainResult:
    """Train per ``cfg``; writes ``metrics.csv`` and ``model.ckpt`` into ``out_dir`` if given.

    Row ``epoch 0, train`` is the loss of the initial network over the
    training set (batch statistics, no updates); later train rows average
    the minibatch losses of that epoch.  Eval rows use running statistics.
    """
    train_set, eval_set = datasets if datasets is not None else build_datasets(cfg, data_dir)
    model = build_model(cfg)
    dtype = DTYPES[cfg.dtype]
    params = model.parameters()
    state: list = []
    order_rng, aug_rng = (np.random.default_rng(s) for s in np.random.SeedSequence([cfg.seed, 1]).spawn(2))

    rows = []
    loss0, acc0 = evaluate(model, train_set, cfg.batch_size, mode="train")
    rows.append((0, "train", loss0, acc0))
    for epoch in range(1, cfg.epochs + 1):
        lr = lr_at(cfg, epoch)
        order = order_rng.permutation(len(train_set))
        total_loss = correct = 0.0
        for start in range(0, len(order), cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            x = train_set.inputs[idx]
            if cfg.augment:
                x = augment(x, aug_rng, flip=cfg.flip)
            y = train_set.labels[idx]
            try:
                logits, loss = _forward_loss(model, x.astype(dtype), y)
            except NonFiniteError as exc:
                raise TrainingDiverged(f"epoch {epoch}, batch at {start}: {exc}") from None
            for p in params:
                p.grad = None
            loss.backward()
            sgd_step(params, [p.grad for p in params], cfg, state, lr)
            total_loss += float(loss.data) * len(y)
            correct += int((logits.data.argmax(axis=1) == y).sum())
        rows.append((epoch, "train", total_loss / len(order), correct / len(order)))
        eval_loss, eval_acc = evaluate(model, eval_set, cfg.batch_size)
        rows.append((epoch, "eval", eval_loss, eval_acc))
        log.info("epoch %d lr %.4g train loss %.4f acc %.3f eval acc %.3f",
                 epoch, lr, rows[-2][2], rows[-2][3], eval_acc)

    result = TrainResult(rows, model, cfg)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "metrics.csv").write_text(result.metrics_csv())
        save_sections(out / "model.ckpt", model.state(), cfg.to_pairs())
    return result


def load_checkpoint(path) -> tuple[TrainConfig, Model]:
    """Rebuild the model stored by :func:`train`."""
    from .tensor import load_sections

    header, tensors = load_sections(path)
    cfg = TrainConfig.from_pairs(header)
    model = build_model(cfg)
    model.load_state(tensors)
    return cfg, model
