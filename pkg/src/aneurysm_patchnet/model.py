"""Baseline and anatomically-informed 3D CNNs, their loss and the training loop.

Both networks are built from VGG-style blocks of 3x3x3 convolutions (stride 1,
same padding, ReLU) separated by 2x2x2 max pooling and closed by global
average pooling. The baseline sees only the small patch. The informed model
runs a second stack with its own weights on the large patch, concatenates
the two feature vectors, applies the first fully connected layer and then
concatenates the (normalized) spatial feature vector before the remaining
fully connected layers. Both end in a single sigmoid unit.
"""
from __future__ import annotations

import copy
import json
import logging
import math
import os
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
from torch import nn

from .augment import AugmentationSpec, apply_augmentation
from .errors import TrainingError, ValidationError
from .features import N_FEATURES
from .sampler import PatchDataset, PatchPair
from .seeding import derive_rng, derive_seed

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "aneurysm-patchnet-checkpoint/1"
PROB_CLAMP = 1e-7


@dataclass(frozen=True)
class ModelConfig:
    conv_blocks: tuple[tuple[int, int], ...] = ((2, 16), (2, 32), (2, 64))
    fc_widths: tuple[int, ...] = (128, 64)
    dropout_rate: float = 0.2
    informed: bool = True
    d_dim: int = N_FEATURES
    small_side: int = 30
    large_side: int = 80
    global_pool: str = "max"  # "max" or "avg" over the last feature maps

    def __post_init__(self):
        object.__setattr__(self, "conv_blocks", tuple(tuple(int(v) for v in b) for b in self.conv_blocks))
        object.__setattr__(self, "fc_widths", tuple(int(w) for w in self.fc_widths))
        if not self.conv_blocks or any(n < 1 or f < 1 for n, f in self.conv_blocks):
            raise ValidationError(f"conv_blocks need >= 1 block of (n_layers >= 1, n_filters >= 1): {self.conv_blocks}")
        if not self.fc_widths or min(self.fc_widths) < 1:
            raise ValidationError(f"fc_widths need >= 1 positive width: {self.fc_widths}")
        if self.global_pool not in ("max", "avg"):
            raise ValidationError(f"global_pool must be 'max' or 'avg', got {self.global_pool!r}")
        if not (0.0 <= self.dropout_rate < 1.0):
            raise ValidationError(f"dropout_rate must lie in [0, 1), got {self.dropout_rate}")
        pools = len(self.conv_blocks) - 1
        sides = [self.small_side] + ([self.large_side] if self.informed else [])
        for side in sides:
            out = side
            for _ in range(pools):
                out //= 2
            if out < 1:
                raise ValidationError(
                    f"input side {side} shrinks to {out} after {pools} poolings")

    def baseline(self) -> "ModelConfig":
        return replace(self, informed=False)

    @classmethod
    def quick(cls, informed: bool = True) -> "ModelConfig":
        return cls(conv_blocks=((1, 4), (1, 8)), fc_widths=(16, 8), informed=informed,
                   small_side=12, large_side=24)

    @classmethod
    def from_json(cls, doc) -> "ModelConfig":
        return cls(**{**doc, "conv_blocks": tuple(tuple(b) for b in doc.get("conv_blocks", cls.conv_blocks)),
                      "fc_widths": tuple(doc.get("fc_widths", cls.fc_widths))})


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-4
    batch_size: int = 4
    epochs: int = 50
    positive_sample_weight: float = 3.0
    patience: int = 8
    seed: int = 0
    augment: bool = True

    def __post_init__(self):
        if self.learning_rate <= 0 or self.batch_size < 1 or self.epochs < 1 or self.patience < 1:
            raise ValidationError("learning_rate, batch_size, epochs and patience must be positive")

    @classmethod
    def quick(cls) -> "TrainConfig":
        return cls(learning_rate=1e-3, epochs=15, patience=5)


# --------------------------------------------------------------------------
# layers

class SeededDropout(nn.Module):
    """Inverted dropout whose masks come from an explicit generator."""

    def __init__(self, p: float, generator: torch.Generator):
        super().__init__()
        self.p = p
        self.generator = generator

    def forward(self, x):
        if not self.training or self.p == 0.0:
            return x
        keep = torch.full_like(x, 1.0 - self.p)
        return x * torch.bernoulli(keep, generator=self.generator) / (1.0 - self.p)


class ConvStack(nn.Module):
    def __init__(self, blocks: Sequence[tuple[int, int]], global_pool: str = "max"):
        super().__init__()
        layers: list[nn.Module] = []
        c_in = 1
        for b, (n_layers, n_filters) in enumerate(blocks):
            if b > 0:
                layers.append(nn.MaxPool3d(2))
            for _ in range(n_layers):
                layers += [nn.Conv3d(c_in, n_filters, kernel_size=3, stride=1, padding=1), nn.ReLU()]
                c_in = n_filters
        pool = nn.AdaptiveMaxPool3d(1) if global_pool == "max" else nn.AdaptiveAvgPool3d(1)
        layers += [pool, nn.Flatten()]
        self.body = nn.Sequential(*layers)
        self.out_features = c_in

    def forward(self, x):
        return self.body(x)


class PatchNet(nn.Module):
    def __init__(self, config: ModelConfig, generator: torch.Generator | None = None):
        super().__init__()
        self.config = config
        self.generator = generator if generator is not None else torch.Generator().manual_seed(0)
        self.small_branch = ConvStack(config.conv_blocks, config.global_pool)
        width = self.small_branch.out_features
        if config.informed:
            self.large_branch = ConvStack(config.conv_blocks, config.global_pool)
            width += self.large_branch.out_features
        self.fc = nn.ModuleList()
        self.drop = nn.ModuleList()
        for i, w in enumerate(config.fc_widths):
            if i == 1 and config.informed:
                width += config.d_dim
            self.fc.append(nn.Linear(width, w))
            self.drop.append(SeededDropout(config.dropout_rate, self.generator))
            width = w
        if len(config.fc_widths) == 1 and config.informed:
            width += config.d_dim
        self.head = nn.Linear(width, 1)
        d = config.d_dim if config.informed else 0
        self.register_buffer("feature_mean", torch.zeros(d))
        self.register_buffer("feature_scale", torch.ones(d))

    def forward(self, small, large=None, features=None):
        """Logits of shape ``(batch,)``; inputs are ``(batch, side, side, side)``."""
        h = self.small_branch(small.unsqueeze(1))
        if self.config.informed:
            h = torch.cat([h, self.large_branch(large.unsqueeze(1))], dim=1)
            d = (features - self.feature_mean) / self.feature_scale
        for i, (fc, drop) in enumerate(zip(self.fc, self.drop)):
            if i == 1 and self.config.informed:
                h = torch.cat([h, d], dim=1)
            h = drop(torch.relu(fc(h)))
        if len(self.fc) == 1 and self.config.informed:
            h = torch.cat([h, d], dim=1)
        return self.head(h).squeeze(1)


@dataclass
class TrainedModel:
    config: ModelConfig
    network: PatchNet
    history: list[dict] = field(default_factory=list)

    def parameter_layout(self) -> list[tuple[str, tuple[int, ...]]]:
        """Names and shapes of the trainable tensors, in flattening order."""
        return [(n, tuple(p.shape)) for n, p in self.network.named_parameters()]

    def parameters_flat(self) -> np.ndarray:
        return np.concatenate([p.detach().cpu().numpy().ravel() for p in self.network.parameters()])

    def to_float64(self) -> "TrainedModel":
        self.network.double()
        return self


def build_model(config: ModelConfig, seed: int = 0) -> TrainedModel:
    """Fresh network: Xavier-uniform weights, zero biases."""
    init_gen = torch.Generator().manual_seed(derive_seed(seed, "init") % (2 ** 63))
    net = PatchNet(config, torch.Generator().manual_seed(derive_seed(seed, "dropout") % (2 ** 63)))
    for module in net.modules():
        if isinstance(module, (nn.Conv3d, nn.Linear)):
            nn.init.xavier_uniform_(module.weight, generator=init_gen)
            nn.init.zeros_(module.bias)
    return TrainedModel(config, net)


def count_parameters(obj) -> int:
    """Trainable parameter count from the closed-form layer formulas (or a live model)."""
    if isinstance(obj, TrainedModel):
        return int(sum(p.numel() for p in obj.network.parameters() if p.requires_grad))
    config: ModelConfig = obj

    def conv_stack():
        total, c_in = 0, 1
        for n_layers, n_filters in config.conv_blocks:
            for _ in range(n_layers):
                total += 27 * c_in * n_filters + n_filters
                c_in = n_filters
        return total, c_in

    conv, c_out = conv_stack()
    width = c_out
    total = conv
    if config.informed:
        total += conv
        width += c_out
    for i, w in enumerate(config.fc_widths):
        if i == 1 and config.informed:
            width += config.d_dim
        total += width * w + w
        width = w
    if len(config.fc_widths) == 1 and config.informed:
        width += config.d_dim
    return total + width + 1


def model_summary(config: ModelConfig) -> str:
    kind = "informed" if config.informed else "baseline"
    return (f"{kind} model: conv_blocks={list(config.conv_blocks)} fc_widths={list(config.fc_widths)} "
            f"inputs={config.small_side}^3" + (f" + {config.large_side}^3 + D[{config.d_dim}]" if config.informed else "")
            + f" -> {count_parameters(config):,} trainable parameters")


# --------------------------------------------------------------------------
# loss and inference

def weighted_bce(p, y, w_pos: float = 1.0):
    """Mean of ``-[w y log p + (1 - y) log(1 - p)]`` with ``w = w_pos`` for positives.

    Probabilities are clamped to ``[1e-7, 1 - 1e-7]``.
    """
    p = np.clip(np.asarray(p, dtype=np.float64), PROB_CLAMP, 1 - PROB_CLAMP)
    y = np.asarray(y, dtype=np.float64)
    w = np.where(y == 1, w_pos, 1.0)
    return float(np.mean(-(w * y * np.log(p) + (1 - y) * np.log1p(-p))))


def weighted_bce_torch(p: torch.Tensor, y: torch.Tensor, w_pos: float = 1.0) -> torch.Tensor:
    p = p.clamp(PROB_CLAMP, 1 - PROB_CLAMP)
    w = torch.where(y == 1, torch.full_like(y, w_pos), torch.ones_like(y))
    return torch.mean(-(w * y * torch.log(p) + (1 - y) * torch.log1p(-p)))


def _standardize_batch(x: np.ndarray) -> np.ndarray:
    x = x.astype(np.float64)
    flat = x.reshape(len(x), -1)
    mean = flat.mean(axis=1)
    std = flat.std(axis=1)
    out = (flat - mean[:, None]) / np.where(std < 1e-8, 1.0, std)[:, None]
    out[std < 1e-8] = 0.0
    return out.reshape(x.shape)


def _tensor(x, model: TrainedModel) -> torch.Tensor:
    dtype = next(model.network.parameters()).dtype
    return torch.as_tensor(np.asarray(x), dtype=dtype)


def _check_inputs(model: TrainedModel, small, large, features):
    cfg = model.config
    n = len(small)
    if tuple(np.shape(small)[1:]) != (cfg.small_side,) * 3:
        raise ValidationError(f"small patches must be {cfg.small_side}^3, got {np.shape(small)[1:]}")
    if cfg.informed:
        if large is None or features is None:
            raise ValidationError("the informed model needs small, large and feature inputs")
        if tuple(np.shape(large)[1:]) != (cfg.large_side,) * 3 or len(large) != n:
            raise ValidationError(f"large patches must be {cfg.large_side}^3, got {np.shape(large)[1:]}")
        if tuple(np.shape(features)[1:]) != (cfg.d_dim,) or len(features) != n:
            raise ValidationError(f"feature vectors must have length {cfg.d_dim}, got {np.shape(features)[1:]}")


def forward(model: TrainedModel, small, large=None, features=None, batch_size: int = 64) -> np.ndarray:
    """Probabilities for already-standardized inputs (dropout disabled)."""
    _check_inputs(model, small, large, features)
    net = model.network
    was_training = net.training
    net.eval()
    out = []
    with torch.no_grad():
        for b in range(0, len(small), batch_size):
            sl = slice(b, b + batch_size)
            args = [_tensor(small[sl], model)]
            if model.config.informed:
                args += [_tensor(large[sl], model), _tensor(features[sl], model)]
            # sigmoid in float64 so strongly confident logits do not round to exactly 0 or 1
            out.append(torch.sigmoid(net(*args).double()).cpu().numpy())
    net.train(was_training)
    return np.concatenate(out) if out else np.zeros(0)


def predict(model: TrainedModel, dataset: PatchDataset, batch_size: int = 64) -> np.ndarray:
    """Standardize each patch of ``dataset`` and return its aneurysm probability."""
    out = []
    for b in range(0, len(dataset), batch_size):
        sl = slice(b, b + batch_size)
        small = _standardize_batch(dataset.small[sl])
        large = _standardize_batch(dataset.large[sl]) if model.config.informed else None
        feats = dataset.features[sl] if model.config.informed else None
        out.append(forward(model, small, large, feats, batch_size))
    return np.concatenate(out) if out else np.zeros(0)


# --------------------------------------------------------------------------
# training

def _loss_on(model: TrainedModel, dataset: PatchDataset, w_pos: float) -> float:
    probs = predict(model, dataset)
    return weighted_bce(probs, dataset.labels, w_pos)


def train(model: TrainedModel, train_set: PatchDataset, val_set: PatchDataset | None,
          tc: TrainConfig, augmentation: AugmentationSpec | None = AugmentationSpec()) -> TrainedModel:
    """Fit ``model`` with Adam on weighted BCE, early stopping on validation loss.

    Positives are augmented each epoch (one transform each); negatives never
    are. The weights of the best validation epoch are restored. Everything is
    a deterministic function of ``tc.seed``.
    """
    if len(train_set) == 0:
        raise TrainingError("empty training set")
    if val_set is not None and set(train_set.subject_ids) & set(val_set.subject_ids):
        raise TrainingError("training and validation sets share subjects")
    net = model.network
    cfg = model.config
    dtype = next(net.parameters()).dtype
    if cfg.informed:
        feats = train_set.features.astype(np.float64)
        scale = feats.std(axis=0)
        net.feature_mean.copy_(torch.as_tensor(feats.mean(axis=0), dtype=dtype))
        net.feature_scale.copy_(torch.as_tensor(np.where(scale < 1e-6, 1.0, scale), dtype=dtype))
    net.generator.manual_seed(derive_seed(tc.seed, "dropout") % (2 ** 63))
    optimizer = torch.optim.Adam(net.parameters(), lr=tc.learning_rate, betas=(0.9, 0.999), eps=1e-8)

    labels = train_set.labels
    small_std = _standardize_batch(train_set.small)
    large_std = _standardize_batch(train_set.large) if cfg.informed else None
    positives = np.flatnonzero(labels == 1)
    augment = tc.augment and augmentation is not None and bool(augmentation.enabled)

    best_loss, best_state, best_epoch, stale = math.inf, None, -1, 0
    history: list[dict] = []
    for epoch in range(tc.epochs):
        net.train()
        small_ep, large_ep = small_std, large_std
        if augment and len(positives):
            small_ep = small_std.copy()
            large_ep = large_std.copy() if cfg.informed else None
            for i in positives:
                rng = derive_rng(tc.seed, "augment", epoch, train_set.meta[i]["id"])
                pair = PatchPair(train_set.small[i], train_set.large[i], (0, 0, 0))
                aug = apply_augmentation(pair, augmentation, rng)
                small_ep[i] = _standardize_batch(aug.small[None])[0]
                if cfg.informed:
                    large_ep[i] = _standardize_batch(aug.large[None])[0]
        order = derive_rng(tc.seed, "order", epoch).permutation(len(train_set))
        total, seen = 0.0, 0
        for b in range(0, len(order), tc.batch_size):
            idx = order[b:b + tc.batch_size]
            y = torch.as_tensor(labels[idx], dtype=dtype)
            args = [torch.as_tensor(small_ep[idx], dtype=dtype)]
            if cfg.informed:
                args += [torch.as_tensor(large_ep[idx], dtype=dtype),
                         torch.as_tensor(train_set.features[idx], dtype=dtype)]
            probs = torch.sigmoid(net(*args))
            loss = weighted_bce_torch(probs, y, tc.positive_sample_weight)
            if not torch.isfinite(loss):
                raise TrainingError(f"non-finite loss at epoch {epoch}, batch {b // tc.batch_size}")
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            total += float(loss.detach()) * len(idx)
            seen += len(idx)
        record = {"epoch": epoch + 1, "train_loss": total / seen}
        if val_set is not None and len(val_set):
            val_loss = _loss_on(model, val_set, tc.positive_sample_weight)
            if not math.isfinite(val_loss):
                raise TrainingError(f"non-finite validation loss at epoch {epoch}")
            record["val_loss"] = val_loss
            if val_loss < best_loss:
                best_loss, best_epoch, stale = val_loss, epoch + 1, 0
                best_state = copy.deepcopy(net.state_dict())
            else:
                stale += 1
        history.append(record)
        log.debug("epoch %d %s", epoch + 1, record)
        if val_set is not None and len(val_set) and stale >= tc.patience:
            break
    if best_state is not None:
        net.load_state_dict(best_state)
    net.eval()
    model.history = history
    if best_epoch > 0:
        model.history.append({"best_epoch": best_epoch, "best_val_loss": best_loss})
    return model


# --------------------------------------------------------------------------
# gradient verification

def finite_difference_gradients(model: TrainedModel, small, large, features, labels,
                                w_pos: float = 3.0, eps: float = 1e-6):
    """Analytic (autograd) and central-difference gradients of the mean weighted BCE.

    Both are returned as flat arrays in :meth:`TrainedModel.parameter_layout`
    order. Dropout is disabled; run the model in float64 for meaningful
    comparisons.
    """
    net = model.network
    net.eval()
    y = _tensor(labels, model)
    args = [_tensor(small, model)]
    if model.config.informed:
        args += [_tensor(large, model), _tensor(features, model)]

    def loss_value():
        return weighted_bce_torch(torch.sigmoid(net(*args)), y, w_pos)

    net.zero_grad()
    loss_value().backward()
    analytic = np.concatenate([p.grad.detach().numpy().ravel() for p in net.parameters()])
    numeric = []
    with torch.no_grad():
        for p in net.parameters():
            flat = p.view(-1)
            for k in range(flat.numel()):
                orig = float(flat[k])
                flat[k] = orig + eps
                up = float(loss_value())
                flat[k] = orig - eps
                down = float(loss_value())
                flat[k] = orig
                numeric.append((up - down) / (2 * eps))
    return analytic, np.asarray(numeric)


# --------------------------------------------------------------------------
# checkpoints

def save_checkpoint(model: TrainedModel, path: str | os.PathLike) -> Path:
    """Single file: one JSON header line, then little-endian float32 parameters and buffers."""
    path = Path(path)
    tensors = list(model.network.named_parameters()) + list(model.network.named_buffers())
    header = {
        "format": CHECKPOINT_FORMAT,
        "config": asdict(model.config),
        "history": model.history,
        "layout": [{"name": n, "shape": list(t.shape), "trainable": isinstance(t, nn.Parameter)}
                   for n, t in tensors],
        "n_trainable": count_parameters(model),
    }
    with open(path, "wb") as fh:
        fh.write((json.dumps(header, sort_keys=True) + "\n").encode())
        for _, t in tensors:
            fh.write(t.detach().cpu().numpy().astype("<f4").tobytes())
    return path


def load_checkpoint(path: str | os.PathLike) -> TrainedModel:
    with open(path, "rb") as fh:
        header = json.loads(fh.readline())
        raw = fh.read()
    if header.get("format") != CHECKPOINT_FORMAT:
        raise ValidationError(f"{path}: not a model checkpoint")
    model = build_model(ModelConfig.from_json(header["config"]))
    state = {}
    offset = 0
    for entry in header["layout"]:
        count = int(np.prod(entry["shape"])) if entry["shape"] else 1
        arr = np.frombuffer(raw, dtype="<f4", count=count, offset=offset).reshape(entry["shape"])
        state[entry["name"]] = torch.from_numpy(arr.astype(np.float32))
        offset += 4 * count
    model.network.load_state_dict(state)
    model.network.eval()
    model.history = header["history"]
    return model
