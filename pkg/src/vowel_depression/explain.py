"""Channel-level LIME over Conv5 sequences and smoothed decision trajectories."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from sklearn.base import BaseEstimator

from .segmentation import HOP_SECONDS, N_CLASSES, VowelLabel

SMOOTH_SECONDS = 4.0
SMOOTH_STEPS = int(round(SMOOTH_SECONDS / HOP_SECONDS))


class ExplanationError(RuntimeError):
    pass


def perturb_channels(X: np.ndarray, rng) -> tuple[np.ndarray, np.ndarray]:
    """Replace 1..6 random channels by uniform noise over each channel's range.

    Returns the perturbed copy and the mask (1 = untouched, 0 = perturbed).
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != N_CLASSES:
        raise ValueError(f"expected a (steps, {N_CLASSES}) sequence, got {X.shape}")
    rng = np.random.default_rng(rng)
    m = int(rng.integers(1, N_CLASSES + 1))
    channels = rng.choice(N_CLASSES, size=m, replace=False)
    lo, hi = X.min(axis=0), X.max(axis=0)
    Xp = X.copy()
    mask = np.ones(N_CLASSES)
    for c in channels:
        Xp[:, c] = rng.uniform(lo[c], hi[c], size=len(X))
        mask[c] = 0.0
    return Xp, mask


def similarity(mask, kernel_width: float = 0.25) -> float:
    """exp(-(k / 6)^2 / kernel_width) for k perturbed channels."""
    mask = np.asarray(mask)
    k = mask.size - np.count_nonzero(mask)
    return float(np.exp(-((k / mask.size) ** 2) / kernel_width))


def ridge_fit(features, targets, sample_weight=None, alpha: float = 1.0, center: bool = False) -> np.ndarray:
    """Weighted ridge weights ``(F^T S F + alpha I)^-1 F^T S y``.

    Solved as an augmented least-squares problem (SVD based), which avoids
    forming the normal equations. ``center=True`` subtracts weighted means
    first, i.e. fits an unpenalised intercept that is then discarded.
    """
    F = np.atleast_2d(np.asarray(features, dtype=np.float64))
    y = np.asarray(targets, dtype=np.float64).ravel()
    if F.shape[0] != y.size or y.size == 0:
        raise ValueError("features and targets must have the same, non-zero, number of rows")
    s = np.ones(y.size) if sample_weight is None else np.asarray(sample_weight, dtype=np.float64).ravel()
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    if not (np.all(np.isfinite(F)) and np.all(np.isfinite(y)) and np.all(np.isfinite(s))):
        raise ValueError("ridge inputs must be finite")
    if np.any(s < 0):
        raise ValueError("sample weights must be non-negative")
    if center and s.sum() > 0:
        F = F - (s @ F) / s.sum()
        y = y - (s @ y) / s.sum()
    root = np.sqrt(s)
    A = np.vstack([F * root[:, None], np.sqrt(alpha) * np.eye(F.shape[1])])
    b = np.concatenate([y * root, np.zeros(F.shape[1])])
    return np.linalg.lstsq(A, b, rcond=None)[0]


def rank_by_magnitude(weights) -> np.ndarray:
    """Rank 1 for the largest |w|; ties keep channel order."""
    order = np.argsort(-np.abs(np.asarray(weights)), kind="stable")
    ranks = np.empty(len(order), dtype=int)
    ranks[order] = np.arange(1, len(order) + 1)
    return ranks


@dataclass
class ChannelExplanation:
    weights: np.ndarray
    ranks: np.ndarray
    masks: np.ndarray  # (N + 1, 6); last row is the unperturbed sample
    targets: np.ndarray
    sample_weights: np.ndarray
    sample_id: str = ""
    degenerate: bool = False


def lime_explain(
    f: Callable[[np.ndarray], np.ndarray],
    X,
    n_samples: int = 1000,
    seed: int = 0,
    alpha: float = 1.0,
    kernel_width: float = 0.25,
    fit_intercept: bool = True,
    batch_size: int = 250,
    sample_id: str = "",
) -> ChannelExplanation:
    """Explain ``f`` around one Conv5 sequence by perturbing whole channels.

    ``f`` takes a stack ``(n, steps, 6)`` and returns ``n`` depression
    probabilities. The original sample is appended last with weight 0.
    """
    if n_samples < 10:
        raise ValueError("n_samples must be >= 10")
    X = np.asarray(X, dtype=np.float64)
    rng = np.random.default_rng(seed)
    perturbed, masks, weights = [], [], []
    for _ in range(n_samples):
        Xp, mask = perturb_channels(X, rng)
        perturbed.append(Xp)
        masks.append(mask)
        weights.append(similarity(mask, kernel_width))
    targets = np.empty(n_samples + 1)
    for start in range(0, n_samples, batch_size):
        stop = min(start + batch_size, n_samples)
        try:
            targets[start:stop] = np.asarray(f(np.stack(perturbed[start:stop])), dtype=np.float64).ravel()
        except Exception as exc:
            index = _first_failure(f, perturbed, start, stop)
            raise ExplanationError(f"classifier failed on perturbed sample {index}: {exc}") from exc
    targets[n_samples] = float(np.asarray(f(X[None])).ravel()[0])
    masks.append(np.ones(N_CLASSES))
    weights.append(0.0)
    masks, weights = np.array(masks), np.array(weights)

    w = ridge_fit(masks, targets, weights, alpha, center=fit_intercept)
    return ChannelExplanation(
        weights=w,
        ranks=rank_by_magnitude(w),
        masks=masks,
        targets=targets,
        sample_weights=weights,
        sample_id=sample_id,
        degenerate=bool(np.ptp(targets) <= 1e-12),
    )


def _first_failure(f, perturbed, start, stop) -> int:
    for i in range(start, stop):
        try:
            f(perturbed[i][None])
        except Exception:
            return i
    return start


class ChannelLimeExplainer(BaseEstimator):
    """Parameter holder around :func:`lime_explain` for config/grid use."""

    def __init__(self, n_samples=1000, alpha=1.0, kernel_width=0.25, fit_intercept=True, random_state=0):
        self.n_samples = n_samples
        self.alpha = alpha
        self.kernel_width = kernel_width
        self.fit_intercept = fit_intercept
        self.random_state = random_state

    def explain(self, f, X, sample_id: str = "") -> ChannelExplanation:
        return lime_explain(
            f, X, self.n_samples, self.random_state, self.alpha,
            self.kernel_width, self.fit_intercept, sample_id=sample_id,
        )


def classifier_function(model) -> Callable[[np.ndarray], np.ndarray]:
    """Adapt a fitted depression classifier to the ``f`` contract of LIME."""
    return lambda stack: model.predict_proba(list(stack))[:, 1]


def rank_census(explanations: Sequence[ChannelExplanation]) -> np.ndarray:
    """(6, 6) counts: entry [c, r] = participants where channel c ranked r + 1."""
    table = np.zeros((N_CLASSES, N_CLASSES), dtype=int)
    for exp in explanations:
        for c, r in enumerate(exp.ranks):
            table[c, r - 1] += 1
    return table


def explanations_to_csv(explanations: Sequence[ChannelExplanation]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    slugs = [lab.slug for lab in VowelLabel]
    w.writerow(["participant_id"] + [f"w_{s}" for s in slugs] + [f"rank_{s}" for s in slugs])
    for exp in explanations:
        w.writerow([exp.sample_id] + [f"{v:.6f}" for v in exp.weights] + [int(r) for r in exp.ranks])
    return buf.getvalue()


def census_to_csv(table: np.ndarray) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["vowel", "1st", "2nd", "3rd", "4th", "5th", "6th"])
    for lab in VowelLabel:
        w.writerow([lab.slug] + [int(v) for v in table[int(lab)]])
    return buf.getvalue()


def smooth(series, window_steps: int = SMOOTH_STEPS) -> np.ndarray:
    """Centered moving average; windows shrink at the edges.

    For even windows the centre sits right of the midpoint
    (``window // 2`` steps before, ``window - 1 - window // 2`` after).
    """
    if window_steps < 1:
        raise ValueError("window_steps must be >= 1")
    x = np.asarray(series, dtype=np.float64)
    n = x.size
    before = window_steps // 2
    after = window_steps - 1 - before
    t = np.arange(n)
    lo = np.maximum(0, t - before)
    hi = np.minimum(n, t + after + 1)
    csum = np.concatenate([[0.0], np.cumsum(x)])
    return (csum[hi] - csum[lo]) / (hi - lo)


@dataclass
class DecisionTrajectory:
    raw: np.ndarray
    smoothed: np.ndarray
    step_seconds: float = HOP_SECONDS
    window_steps: int = SMOOTH_STEPS

    @property
    def times(self) -> np.ndarray:
        return np.arange(len(self.raw)) * self.step_seconds

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["step", "time_s", "raw_p", "smoothed_p"])
        for i, (t, r, s) in enumerate(zip(self.times, self.raw, self.smoothed)):
            w.writerow([i, f"{t:.3f}", f"{r:.6f}", f"{s:.6f}"])
        return buf.getvalue()


def decision_trajectory(model, sequence, window_steps: int = SMOOTH_STEPS) -> DecisionTrajectory:
    """Per-step depression probability from every hidden state, plus smoothing."""
    raw = model.step_probabilities(sequence)
    return DecisionTrajectory(raw, smooth(raw, window_steps), HOP_SECONDS, window_steps)


def trajectory_svg(traj: DecisionTrajectory, title: str = "") -> str:
    """Line plot of raw and smoothed probabilities with a 0.5 reference."""
    width, height, pad = 640, 320, 48
    pw, ph = width - 2 * pad, height - 2 * pad
    duration = max(traj.times[-1], traj.step_seconds) if len(traj.raw) else 1.0

    def xy(t, p):
        return f"{pad + pw * t / duration:.2f},{pad + ph * (1 - p):.2f}"

    def polyline(values, style):
        pts = " ".join(xy(t, p) for t, p in zip(traj.times, values))
        return f'<polyline fill="none" {style} points="{pts}"/>'

    ref_y = pad + ph * 0.5
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">',
        f'<rect x="{pad}" y="{pad}" width="{pw}" height="{ph}" fill="white" stroke="black"/>',
        f'<line x1="{pad}" y1="{ref_y:.2f}" x2="{pad + pw}" y2="{ref_y:.2f}" stroke="gray" stroke-dasharray="4 4"/>',
        polyline(traj.raw, 'stroke="#9ecae1" stroke-width="1"'),
        polyline(traj.smoothed, 'stroke="#08519c" stroke-width="2"'),
        f'<text x="{width / 2:.0f}" y="{height - 10}" text-anchor="middle" font-size="12">time (s)</text>',
        f'<text x="14" y="{height / 2:.0f}" text-anchor="middle" font-size="12" '
        f'transform="rotate(-90 14 {height / 2:.0f})">P(depression)</text>',
        f'<text x="{pad - 6}" y="{pad + 4}" text-anchor="end" font-size="10">1</text>',
        f'<text x="{pad - 6}" y="{ref_y + 4:.2f}" text-anchor="end" font-size="10">0.5</text>',
        f'<text x="{pad - 6}" y="{pad + ph + 4}" text-anchor="end" font-size="10">0</text>',
        f'<text x="{pad + pw}" y="{pad + ph + 14}" text-anchor="end" font-size="10">{duration:.1f}</text>',
    ]
    if title:
        parts.append(f'<text x="{width / 2:.0f}" y="20" text-anchor="middle" font-size="14">{title}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
