"""LSTM depression classifier over per-participant vowel-embedding sequences."""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np
import torch
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted
from torch import nn
from torch.nn import functional as F

from ._validation import check_sequences
from .checkpoint import load_checkpoint, save_checkpoint
from .corpus import CorpusManifest
from .metrics import class_metrics
from .vowel_net import TrainingError, TrainReport, _fmt, _softmax

log = logging.getLogger(__name__)

HIDDEN_SIZE = 128
DEFAULT_EPOCHS = {"conv4": 7, "conv5": 39}
EMBEDDING_DIMS = {"conv4": 2304, "conv5": 6}
MAX_STEPS = 300


@dataclass
class ParticipantSequence:
    participant_id: str
    steps: np.ndarray  # (T, d)
    label: int


def build_sequences(manifest: CorpusManifest, store: Mapping[str, np.ndarray], segment_ids) -> list[ParticipantSequence]:
    """Concatenate each participant's segment embeddings in manifest order.

    ``segment_ids`` maps participant id to that participant's ordered list
    of segment ids; ``store`` maps segment id to its embedding vector.
    """
    sequences = []
    for p in manifest.participants:
        ids = segment_ids.get(p.participant_id, [])
        if not ids:
            raise ValueError(f"participant {p.participant_id} has no segments")
        steps = []
        for sid in ids:
            if sid not in store:
                raise KeyError(f"missing embedding for segment {sid}")
            steps.append(store[sid])
        sequences.append(ParticipantSequence(p.participant_id, np.stack(steps), p.depression_label))
    dims = {s.steps.shape[1] for s in sequences}
    if len(dims) > 1:
        raise ValueError(f"mixed embedding dimensions {sorted(dims)}")
    return sequences


def duplicate_positives(sequences: Sequence, labels=None):
    """Return originals followed by a second copy of every positive.

    Works on ``ParticipantSequence`` lists, or on raw arrays with ``labels``
    (then a ``(sequences, labels)`` pair is returned).
    """
    if labels is None:
        return list(sequences) + [s for s in sequences if s.label == 1]
    labels = np.asarray(labels)
    pos = np.flatnonzero(labels == 1)
    return list(sequences) + [sequences[i] for i in pos], np.concatenate([labels, labels[pos]])


def crop_for_training(sequence: np.ndarray, max_steps: int, rng) -> np.ndarray:
    """Whole sequence if short enough, else a uniformly placed contiguous window."""
    if max_steps < 1:
        raise ValueError("max_steps must be >= 1")
    rng = np.random.default_rng(rng)
    if len(sequence) <= max_steps:
        return sequence
    start = int(rng.integers(0, len(sequence) - max_steps + 1))
    return sequence[start : start + max_steps]


class DepressionLSTM(nn.Module):
    def __init__(self, input_size: int, hidden_size: int = HIDDEN_SIZE):
        super().__init__()
        self.lstm = nn.LSTM(input_size, hidden_size, batch_first=True)
        self.fc = nn.Linear(hidden_size, 2)

    def hidden_states(self, x):
        return self.lstm(x)[0]

    def forward(self, x, lengths=None):
        """Logits from the hidden state at each sequence's last real step."""
        h = self.hidden_states(x)
        if lengths is None:
            return self.fc(h[:, -1])
        last = torch.as_tensor(lengths, dtype=torch.long) - 1
        return self.fc(h[torch.arange(len(last)), last])

    def step_logits(self, x):
        return self.fc(self.hidden_states(x))

    def penalized_weights(self):
        return [self.lstm.weight_ih_l0, self.lstm.weight_hh_l0, self.fc.weight]


def build_lstm(input_size: int, seed: int, hidden_size: int = HIDDEN_SIZE, dtype=torch.float32) -> DepressionLSTM:
    gen = torch.Generator().manual_seed(int(seed))
    model = DepressionLSTM(input_size, hidden_size).to(dtype)
    with torch.no_grad():
        for p in model.lstm.parameters():
            bound = 1.0 / math.sqrt(hidden_size)
            p.copy_(torch.rand(p.shape, generator=gen, dtype=dtype) * 2 * bound - bound)
        bound = 1.0 / math.sqrt(hidden_size)
        for p in model.fc.parameters():
            p.copy_(torch.rand(p.shape, generator=gen, dtype=dtype) * 2 * bound - bound)
    return model


def lstm_objective(model: DepressionLSTM, x, lengths, y, l2: float) -> torch.Tensor:
    loss = F.cross_entropy(model(x, lengths), y)
    if l2:
        loss = loss + l2 * sum((w**2).sum() for w in model.penalized_weights())
    return loss


def pad_batch(seqs: Sequence[np.ndarray]) -> tuple[torch.Tensor, np.ndarray]:
    lengths = np.array([len(s) for s in seqs])
    out = np.zeros((len(seqs), lengths.max(), seqs[0].shape[1]), dtype=np.float32)
    for i, s in enumerate(seqs):
        out[i, : len(s)] = s
    return torch.from_numpy(out), lengths


class DepressionLSTMClassifier(ClassifierMixin, BaseEstimator):
    """One-layer LSTM plus a linear head; predicts depression per sequence.

    ``fit`` takes a list of ``(steps, features)`` arrays and binary labels.
    Positives are duplicated once (``duplicate_positives``), long sequences
    are cropped to ``max_steps`` per epoch, and batches are zero-padded with
    the loss read at each sequence's true final step.

    ``n_epochs=None`` selects 7 for conv4 inputs and 39 for conv5 inputs.
    """

    def __init__(
        self,
        embedding_kind="conv5",
        hidden_size=HIDDEN_SIZE,
        learning_rate=0.01,
        l2=1e-3,
        batch_size=32,
        n_epochs=None,
        max_steps=MAX_STEPS,
        duplicate_positives=True,
        standardize=True,
        threshold=0.5,
        random_state=0,
    ):
        self.embedding_kind = embedding_kind
        self.hidden_size = hidden_size
        self.learning_rate = learning_rate
        self.l2 = l2
        self.batch_size = batch_size
        self.n_epochs = n_epochs
        self.max_steps = max_steps
        self.duplicate_positives = duplicate_positives
        self.standardize = standardize
        self.threshold = threshold
        self.random_state = random_state

    @property
    def epochs_(self) -> int:
        if self.n_epochs is not None:
            return int(self.n_epochs)
        try:
            return DEFAULT_EPOCHS[self.embedding_kind]
        except KeyError:
            raise ValueError(f"unknown embedding_kind {self.embedding_kind!r}") from None

    def _scale(self, seq: np.ndarray) -> np.ndarray:
        return (seq - self.feature_mean_) / self.feature_std_

    def fit(self, X, y):
        seqs = check_sequences(X)
        y = np.asarray(y, dtype=np.int64)
        if len(seqs) != len(y):
            raise ValueError("X and y differ in length")
        if not set(np.unique(y).tolist()) <= {0, 1}:
            raise ValueError("labels must be 0 or 1")
        seed = int(self.random_state)
        rng = np.random.default_rng(seed)
        self.n_features_in_ = seqs[0].shape[1]
        self.classes_ = np.array([0, 1])
        stacked = np.concatenate(seqs)
        if self.standardize:
            self.feature_mean_ = stacked.mean(axis=0)
            self.feature_std_ = stacked.std(axis=0) + 1e-6
        else:
            self.feature_mean_ = np.zeros(self.n_features_in_)
            self.feature_std_ = np.ones(self.n_features_in_)
        seqs = [self._scale(s) for s in seqs]
        if self.duplicate_positives:
            seqs, y = duplicate_positives(seqs, y)

        self.model_ = model = build_lstm(self.n_features_in_, seed, self.hidden_size)
        opt = torch.optim.Adam(model.parameters(), lr=self.learning_rate)
        report = TrainReport(seed, self.get_params(), self._initial_loss(seqs, y))
        yt = torch.from_numpy(y)
        for epoch in range(1, self.epochs_ + 1):
            model.train()
            order = rng.permutation(len(seqs))
            total = 0.0
            for b, start in enumerate(range(0, len(order), self.batch_size)):
                batch = order[start : start + self.batch_size]
                x, lengths = pad_batch([crop_for_training(seqs[i], self.max_steps, rng) for i in batch])
                loss = lstm_objective(model, x, lengths, yt[batch], self.l2)
                if not torch.isfinite(loss):
                    raise TrainingError(f"non-finite loss at epoch {epoch}, batch {b}")
                opt.zero_grad()
                loss.backward()
                opt.step()
                total += loss.item() * len(batch)
            report.epoch_loss.append(total / len(seqs))
            log.info("epoch %d loss %.4f", epoch, total / len(seqs))
        report.best_epoch = self.epochs_
        model.eval()
        self.train_report_ = report
        return self

    def _initial_loss(self, seqs, y) -> float:
        with torch.no_grad():
            x, lengths = pad_batch([s[: self.max_steps] for s in seqs])
            return float(lstm_objective(self.model_, x, lengths, torch.from_numpy(y), self.l2))

    def _prepare(self, X) -> list[np.ndarray]:
        check_is_fitted(self, "model_")
        seqs = check_sequences(X)
        if seqs[0].shape[1] != self.n_features_in_:
            raise ValueError(f"model expects {self.n_features_in_}-dim steps, got {seqs[0].shape[1]}")
        return [self._scale(s) for s in seqs]

    def decision_function(self, X) -> np.ndarray:
        """(n, 2) logits from the final hidden state of each full sequence."""
        seqs = self._prepare(X)
        out = []
        with torch.no_grad():
            # group equal lengths so no padding enters the recurrence
            order = sorted(range(len(seqs)), key=lambda i: len(seqs[i]))
            res = {}
            start = 0
            while start < len(order):
                stop = start
                while stop < len(order) and len(seqs[order[stop]]) == len(seqs[order[start]]):
                    stop += 1
                chunk = order[start:stop]
                x = torch.from_numpy(np.stack([seqs[i] for i in chunk]).astype(np.float32))
                for i, row in zip(chunk, self.model_(x).numpy()):
                    res[i] = row
                start = stop
            out = [res[i] for i in range(len(seqs))]
        return np.asarray(out, dtype=np.float64)

    def predict_proba(self, X) -> np.ndarray:
        return _softmax(self.decision_function(X))

    def predict(self, X) -> np.ndarray:
        return (self.predict_proba(X)[:, 1] >= self.threshold).astype(int)

    def classify(self, sequence) -> tuple[float, int]:
        p = float(self.predict_proba([sequence])[0, 1])
        return p, int(p >= self.threshold)

    def step_probabilities(self, sequence) -> np.ndarray:
        """Depression probability from the hidden state at every step."""
        (seq,) = self._prepare([sequence])
        with torch.no_grad():
            logits = self.model_.step_logits(torch.from_numpy(seq[None].astype(np.float32)))[0]
        return _softmax(logits.numpy())[:, 1]

    def save(self, path) -> None:
        check_is_fitted(self, "model_")
        tensors = {k: v.detach().numpy() for k, v in self.model_.state_dict().items()}
        tensors["feature_mean"] = self.feature_mean_
        tensors["feature_std"] = self.feature_std_
        spec = {
            "lstm": {"input_size": self.n_features_in_, "hidden_size": self.hidden_size, "layers": 1},
            "fc": {"in": self.hidden_size, "out": 2},
            "params": self.get_params(),
        }
        save_checkpoint(path, "depression_lstm", spec, int(self.random_state), tensors)

    @classmethod
    def load(cls, path) -> "DepressionLSTMClassifier":
        header, tensors = load_checkpoint(path, expect_model="depression_lstm")
        spec = header["spec"]
        est = cls(**spec["params"])
        est.feature_mean_ = tensors.pop("feature_mean").astype(np.float64)
        est.feature_std_ = tensors.pop("feature_std").astype(np.float64)
        est.n_features_in_ = spec["lstm"]["input_size"]
        est.classes_ = np.array([0, 1])
        model = DepressionLSTM(est.n_features_in_, spec["lstm"]["hidden_size"])
        model.load_state_dict({k: torch.from_numpy(v) for k, v in tensors.items()})
        model.eval()
        est.model_ = model
        return est


@dataclass
class DepEvalReport:
    precision: float
    recall: float
    f1: float
    macro_f1: float
    participant_ids: list[str]
    labels: np.ndarray
    probabilities: np.ndarray
    predictions: np.ndarray

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["precision", "recall", "f1", "macro_f1"])
        w.writerow([_fmt(self.precision), _fmt(self.recall), _fmt(self.f1), _fmt(self.macro_f1)])
        return buf.getvalue()

    def participants_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["participant_id", "label", "probability", "prediction"])
        for pid, lab, p, pred in zip(self.participant_ids, self.labels, self.probabilities, self.predictions):
            w.writerow([pid, int(lab), f"{p:.6f}", int(pred)])
        return buf.getvalue()


def depression_report(y_true, probabilities, threshold=0.5, participant_ids=None) -> DepEvalReport:
    y_true = np.asarray(y_true, dtype=int)
    probabilities = np.asarray(probabilities, dtype=np.float64)
    if y_true.size == 0:
        raise ValueError("empty evaluation set")
    pred = (probabilities >= threshold).astype(int)
    m = class_metrics(y_true, pred, 2)
    ids = list(participant_ids) if participant_ids is not None else [str(i) for i in range(len(y_true))]
    return DepEvalReport(
        float(m.precision[1]), float(m.recall[1]), float(m.f1[1]), m.macro_f1, ids, y_true, probabilities, pred
    )


def evaluate_depression(model: DepressionLSTMClassifier, sequences: Sequence[ParticipantSequence]) -> DepEvalReport:
    if not sequences:
        raise ValueError("empty evaluation set")
    probs = model.predict_proba([s.steps for s in sequences])[:, 1]
    return depression_report(
        [s.label for s in sequences], probs, model.threshold, [s.participant_id for s in sequences]
    )
