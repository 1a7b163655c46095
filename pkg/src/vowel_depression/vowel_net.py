"""2D CNN vowel classifier: architecture, training, inference and evaluation."""

from __future__ import annotations

import copy
import csv
import io
import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import torch
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.utils.validation import check_is_fitted
from torch import nn
from torch.nn import functional as F

from ._validation import check_labels, check_patches
from .checkpoint import load_checkpoint, save_checkpoint
from .dsp import N_FRAMES, N_MELS
from .metrics import class_metrics
from .segmentation import N_CLASSES, VowelLabel

log = logging.getLogger(__name__)

# (conv kernel, pool kernel) per block; block 3 pools (2, 2) to reach (64, 14, 14)
BLOCK_SPECS = [((3, 1), (2, 1)), ((3, 1), (2, 1)), ((3, 1), (2, 2)), ((3, 3), (2, 2))]
N_FILTERS = 64
CONV5_KERNEL = (6, 6)
CONV4_DIM = N_FILTERS * 6 * 6
EMBEDDING_KINDS = ("conv4", "conv5")


class TrainingError(RuntimeError):
    pass


class ConvBlock(nn.Module):
    """conv -> ReLU -> batch norm -> max pool, no padding."""

    def __init__(self, in_channels, kernel, pool):
        super().__init__()
        self.conv = nn.Conv2d(in_channels, N_FILTERS, kernel)
        self.bn = nn.BatchNorm2d(N_FILTERS)
        self.pool = nn.MaxPool2d(pool)

    def forward(self, x):
        return self.pool(self.bn(F.relu(self.conv(x))))


class VowelCNN(nn.Module):
    def __init__(self):
        super().__init__()
        channels = [1] + [N_FILTERS] * len(BLOCK_SPECS)
        self.blocks = nn.ModuleList(
            ConvBlock(channels[i], kernel, pool) for i, (kernel, pool) in enumerate(BLOCK_SPECS)
        )
        self.conv5 = nn.Conv2d(N_FILTERS, N_CLASSES, CONV5_KERNEL)

    def conv4(self, x):
        for block in self.blocks:
            x = block(x)
        return x

    def forward(self, x):
        """(N, 1, 128, 28) -> (N, 6) pre-softmax logits."""
        return self.conv5(self.conv4(x)).flatten(1)

    def shape_chain(self, x) -> list[tuple[int, ...]]:
        shapes = []
        for block in self.blocks:
            x = block(x)
            shapes.append(tuple(x.shape[1:]))
        shapes.append(tuple(self.conv5(x).shape[1:]))
        return shapes

    def conv_weights(self):
        return [b.conv.weight for b in self.blocks] + [self.conv5.weight]


def build_cnn(seed: int, dtype=torch.float32) -> VowelCNN:
    """Fresh CNN with U(-1/sqrt(fan_in), 1/sqrt(fan_in)) conv parameters."""
    gen = torch.Generator().manual_seed(int(seed))
    model = VowelCNN().to(dtype)
    with torch.no_grad():
        for module in model.modules():
            if isinstance(module, nn.Conv2d):
                fan_in = module.in_channels * module.kernel_size[0] * module.kernel_size[1]
                bound = 1.0 / math.sqrt(fan_in)
                for p in (module.weight, module.bias):
                    p.copy_(torch.rand(p.shape, generator=gen, dtype=dtype) * 2 * bound - bound)
            elif isinstance(module, nn.BatchNorm2d):
                module.reset_parameters()
                module.reset_running_stats()
    return model


def l2_penalty(weights) -> torch.Tensor:
    return sum((w**2).sum() for w in weights)


def cnn_objective(model: VowelCNN, x, y, l2: float) -> torch.Tensor:
    """Mean cross-entropy plus ``l2 * sum ||W||^2`` over conv weights."""
    loss = F.cross_entropy(model(x), y)
    if l2:
        loss = loss + l2 * l2_penalty(model.conv_weights())
    return loss


def oversample_indices(y, seed) -> np.ndarray:
    """Indices that bring every class up to the majority count.

    All original indices come first; extras are drawn with replacement.
    """
    y = np.asarray(y)
    classes, counts = np.unique(y, return_counts=True)
    rng = np.random.default_rng(seed)
    target = counts.max()
    extra = [rng.choice(np.flatnonzero(y == c), target - n, replace=True) for c, n in zip(classes, counts)]
    return np.concatenate([np.arange(len(y))] + extra).astype(np.int64)


def oversample(X, y, seed, n_classes: int | None = None):
    """Random over-sampling to equal class counts.

    With ``n_classes`` given, every class in ``range(n_classes)`` must be
    present.
    """
    y = np.asarray(y)
    if len(y) == 0:
        raise ValueError("cannot oversample an empty dataset")
    if n_classes is not None:
        missing = sorted(set(range(n_classes)) - set(np.unique(y).tolist()))
        if missing:
            raise ValueError(f"classes without samples: {missing}")
    idx = oversample_indices(y, seed)
    return np.asarray(X)[idx], y[idx]


@dataclass
class TrainReport:
    seed: int
    hyperparameters: dict
    initial_loss: float
    epoch_loss: list[float] = field(default_factory=list)
    dev_macro_f1: list[float] = field(default_factory=list)
    best_epoch: int | None = None

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["epoch", "train_loss", "dev_macro_f1", "selected"])
        w.writerow([0, f"{self.initial_loss:.6f}", "", 0])
        for i, loss in enumerate(self.epoch_loss, start=1):
            f1 = self.dev_macro_f1[i - 1] if i - 1 < len(self.dev_macro_f1) else float("nan")
            w.writerow([i, f"{loss:.6f}", _fmt(f1), int(i == self.best_epoch)])
        return buf.getvalue()


def _fmt(x: float) -> str:
    return "nan" if x is None or not np.isfinite(x) else f"{x:.6f}"


@dataclass(frozen=True)
class VowelPrediction:
    logits: np.ndarray
    probabilities: np.ndarray

    @property
    def predicted(self) -> VowelLabel:
        return VowelLabel(int(np.argmax(self.probabilities)))

    @property
    def confidence(self) -> float:
        return float(np.max(self.probabilities))


class VowelCNNClassifier(ClassifierMixin, TransformerMixin, BaseEstimator):
    """Six-way vowel classifier over (128, 28) log-Mel patches.

    ``transform`` returns the learned vowel embeddings selected by
    ``embedding`` ("conv5": 6 pre-softmax logits, "conv4": 2304 flattened
    block-4 activations).

    Parameters
    ----------
    batch_size, learning_rate, l2 : Adam mini-batch optimisation settings;
        ``l2`` scales an additive squared-norm penalty on conv weights.
    max_epochs : epoch budget; the epoch with the best eval-set macro F1 is kept.
    patience : stop after this many epochs without improvement (None = never).
    oversample : balance classes by random over-sampling before training.
    standardize : scale inputs by the training-set mean/std of the patches.
    random_state : seed for initialisation, over-sampling and shuffling.
    """

    def __init__(
        self,
        batch_size=64,
        learning_rate=1e-3,
        l2=1e-3,
        max_epochs=50,
        patience=None,
        oversample=True,
        standardize=True,
        embedding="conv5",
        random_state=0,
    ):
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.l2 = l2
        self.max_epochs = max_epochs
        self.patience = patience
        self.oversample = oversample
        self.standardize = standardize
        self.embedding = embedding
        self.random_state = random_state

    def _tensor(self, X) -> torch.Tensor:
        x = (X - self.input_mean_) / self.input_std_
        t = torch.from_numpy(np.ascontiguousarray(x, dtype=np.float32)).unsqueeze(1)
        return t.contiguous(memory_format=torch.channels_last)

    def fit(self, X, y, eval_set=None):
        """Train on patches ``X`` with labels ``y``.

        ``eval_set=(X_dev, y_dev)`` drives epoch selection; without it the
        training data is used.
        """
        X = check_patches(X)
        y = check_labels(y, N_CLASSES)
        if len(X) != len(y):
            raise ValueError("X and y differ in length")
        if eval_set is None:
            X_dev, y_dev = X, y
        else:
            X_dev, y_dev = check_patches(eval_set[0]), check_labels(eval_set[1], N_CLASSES)
            if len(X_dev) == 0:
                raise ValueError("eval_set is empty")
        seed = int(self.random_state)
        rng = np.random.default_rng(seed)

        if self.standardize:
            self.input_mean_, self.input_std_ = float(X.mean()), float(X.std() + 1e-8)
        else:
            self.input_mean_, self.input_std_ = 0.0, 1.0
        idx = oversample_indices(y, rng) if self.oversample else np.arange(len(y))
        xt, yt = self._tensor(X), torch.from_numpy(y.astype(np.int64))

        # channels-last makes the (2, 1) pools markedly faster on CPU
        self.model_ = model = build_cnn(seed).to(memory_format=torch.channels_last)
        self.classes_ = np.arange(N_CLASSES)
        opt = torch.optim.Adam(model.parameters(), lr=self.learning_rate, betas=(0.9, 0.999), eps=1e-8)
        hyper = {k: v for k, v in self.get_params().items() if k != "embedding"}

        order = rng.permutation(idx)
        report = TrainReport(seed, hyper, self._pass_loss(order, xt, yt))
        best_state, best_f1, stale = None, -np.inf, 0
        for epoch in range(1, self.max_epochs + 1):
            model.train()
            total, count = 0.0, 0
            for b, start in enumerate(range(0, len(order), self.batch_size)):
                batch = torch.from_numpy(order[start : start + self.batch_size])
                loss = cnn_objective(model, xt[batch], yt[batch], self.l2)
                if not torch.isfinite(loss):
                    raise TrainingError(f"non-finite loss at epoch {epoch}, batch {b}")
                opt.zero_grad()
                loss.backward()
                opt.step()
                total += loss.item() * len(batch)
                count += len(batch)
            report.epoch_loss.append(total / count)
            f1 = class_metrics(y_dev, self.predict(X_dev), N_CLASSES).macro_f1
            report.dev_macro_f1.append(f1)
            log.info("epoch %d loss %.4f dev macro-F1 %.4f", epoch, total / count, f1)
            if f1 > best_f1:
                best_f1, best_state, stale = f1, copy.deepcopy(model.state_dict()), 0
                report.best_epoch = epoch
            else:
                stale += 1
                if self.patience is not None and stale >= self.patience:
                    break
            order = rng.permutation(idx)
        model.load_state_dict(best_state)
        model.eval()
        self.train_report_ = report
        return self

    def _pass_loss(self, order, xt, yt) -> float:
        """Objective over one pass of batches without touching any state."""
        model = self.model_
        momenta = [m.momentum for m in model.modules() if isinstance(m, nn.BatchNorm2d)]
        for m in model.modules():
            if isinstance(m, nn.BatchNorm2d):
                m.momentum = 0.0
        model.train()
        total = 0.0
        with torch.no_grad():
            for start in range(0, len(order), self.batch_size):
                batch = torch.from_numpy(order[start : start + self.batch_size])
                total += cnn_objective(model, xt[batch], yt[batch], self.l2).item() * len(batch)
        for m, mom in zip((m for m in model.modules() if isinstance(m, nn.BatchNorm2d)), momenta):
            m.momentum = mom
        return total / len(order)

    def _forward(self, X, fn, chunk=256) -> np.ndarray:
        check_is_fitted(self, "model_")
        X = check_patches(X)
        self.model_.eval()
        outs = []
        with torch.no_grad():
            for start in range(0, len(X), chunk):
                outs.append(fn(self._tensor(X[start : start + chunk])).numpy())
        if not outs:
            raise ValueError("no patches given")
        return np.concatenate(outs).astype(np.float64)

    def decision_function(self, X) -> np.ndarray:
        return self._forward(X, self.model_)

    def predict_proba(self, X) -> np.ndarray:
        return _softmax(self.decision_function(X))

    def predict(self, X) -> np.ndarray:
        return np.argmax(self.decision_function(X), axis=1)

    def transform(self, X) -> np.ndarray:
        return self.extract_embeddings(X, self.embedding)

    def extract_embeddings(self, X, kind: str = "conv5") -> np.ndarray:
        """Per-patch embeddings in input order: (n, 6) or (n, 2304)."""
        kind = kind.lower()
        if kind == "conv5":
            return self.decision_function(X)
        if kind == "conv4":
            return self._forward(X, lambda x: self.model_.conv4(x).flatten(1))
        raise ValueError(f"embedding kind must be one of {EMBEDDING_KINDS}, got {kind!r}")

    def infer_vowel(self, patch) -> VowelPrediction:
        patch = np.asarray(patch)
        if patch.shape != (N_MELS, N_FRAMES):
            raise ValueError(f"patch must have shape ({N_MELS}, {N_FRAMES}), got {patch.shape}")
        logits = self.decision_function(patch[None])[0]
        return VowelPrediction(logits, _softmax(logits))

    def save(self, path) -> None:
        check_is_fitted(self, "model_")
        tensors = {
            k: v.detach().numpy()
            for k, v in self.model_.state_dict().items()
            if not k.endswith("num_batches_tracked")
        }
        tensors["input_mean"] = np.array(self.input_mean_)
        tensors["input_std"] = np.array(self.input_std_)
        spec = {
            "blocks": [{"conv": list(k), "pool": list(p), "filters": N_FILTERS} for k, p in BLOCK_SPECS],
            "conv5": {"kernel": list(CONV5_KERNEL), "filters": N_CLASSES},
            "input": [1, N_MELS, N_FRAMES],
            "params": self.get_params(),
        }
        save_checkpoint(path, "vowel_cnn", spec, int(self.random_state), tensors)

    @classmethod
    def load(cls, path) -> "VowelCNNClassifier":
        header, tensors = load_checkpoint(path, expect_model="vowel_cnn")
        est = cls(**header["spec"]["params"])
        est.input_mean_ = float(tensors.pop("input_mean"))
        est.input_std_ = float(tensors.pop("input_std"))
        model = VowelCNN()
        state = model.state_dict()
        for k, v in tensors.items():
            state[k] = torch.from_numpy(v)
        model.load_state_dict(state)
        model.eval()
        est.model_ = model.to(memory_format=torch.channels_last)
        est.classes_ = np.arange(N_CLASSES)
        return est


def _softmax(z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


@dataclass
class ThresholdRow:
    threshold: float
    retained_fraction: float
    precision: np.ndarray
    recall: np.ndarray
    f1: np.ndarray

    @property
    def macro(self) -> tuple[float, float, float]:
        if self.retained_fraction == 0:
            return (float("nan"),) * 3
        return float(self.precision.mean()), float(self.recall.mean()), float(self.f1.mean())


@dataclass
class VowelEvalReport:
    rows: list[ThresholdRow]
    n_segments: int

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        header = ["ct", "pct_segments"]
        for lab in VowelLabel:
            header += [f"p_{lab.slug}", f"r_{lab.slug}", f"f1_{lab.slug}"]
        w.writerow(header + ["macro_p", "macro_r", "macro_f1"])
        for row in self.rows:
            line = [f"{row.threshold:g}", f"{100 * row.retained_fraction:.2f}"]
            for c in range(N_CLASSES):
                line += [_fmt(row.precision[c]), _fmt(row.recall[c]), _fmt(row.f1[c])]
            w.writerow(line + [_fmt(v) for v in row.macro])
        return buf.getvalue()


def evaluate_confidence(y_true, probabilities, thresholds: Sequence[float]) -> VowelEvalReport:
    """Metrics over segments whose max probability is at least each threshold."""
    y_true = np.asarray(y_true, dtype=int)
    probabilities = np.asarray(probabilities, dtype=np.float64)
    confidence = probabilities.max(axis=1)
    predicted = probabilities.argmax(axis=1)
    rows = []
    for ct in thresholds:
        if not 0 <= ct < 1:
            raise ValueError(f"confidence threshold must lie in [0, 1), got {ct}")
        keep = confidence >= ct
        m = class_metrics(y_true[keep], predicted[keep], N_CLASSES)
        frac = float(keep.mean()) if len(keep) else 0.0
        rows.append(ThresholdRow(float(ct), frac, m.precision, m.recall, m.f1))
    return VowelEvalReport(rows, len(y_true))


def evaluate_vowels(model: VowelCNNClassifier, X, y, thresholds=(0.0, 0.3, 0.6, 0.9)) -> VowelEvalReport:
    return evaluate_confidence(y, model.predict_proba(X), thresholds)
