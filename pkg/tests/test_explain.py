import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from oracles import normal_equations_ridge
from vowel_depression.explain import (
    SMOOTH_STEPS,
    ChannelLimeExplainer,
    DecisionTrajectory,
    ExplanationError,
    census_to_csv,
    explanations_to_csv,
    lime_explain,
    perturb_channels,
    rank_by_magnitude,
    rank_census,
    ridge_fit,
    similarity,
    smooth,
    trajectory_svg,
)
from vowel_depression.segmentation import HOP_SECONDS


def planted_sequence(rng, steps=120):
    X = rng.normal(size=(steps, 6))
    return X


def planted_classifier(channel):
    """Probability driven only by how often ``channel`` exceeds 1."""
    def f(stack):
        return 1 / (1 + np.exp(-8 * ((stack[:, :, channel] > 1.0).mean(axis=1) - 0.3)))
    return f


def test_perturbation_respects_channel_ranges():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(50, 6))
    seen = set()
    for _ in range(300):
        Xp, mask = perturb_channels(X, rng)
        k = int((mask == 0).sum())
        seen.add(k)
        assert 1 <= k <= 6
        np.testing.assert_array_equal(Xp[:, mask == 1], X[:, mask == 1])
        for c in np.flatnonzero(mask == 0):
            assert X[:, c].min() <= Xp[:, c].min() and Xp[:, c].max() <= X[:, c].max()
    assert seen == set(range(1, 7))


def test_similarity_kernel():
    assert similarity(np.ones(6)) == 1.0
    assert similarity([0, 1, 1, 1, 1, 1]) == pytest.approx(np.exp(-(1 / 6) ** 2 / 0.25))
    assert similarity(np.zeros(6)) == pytest.approx(np.exp(-4.0))


def test_ridge_matches_normal_equations():
    rng = np.random.default_rng(0)
    for _ in range(100):
        n, d = int(rng.integers(3, 60)), int(rng.integers(1, 8))
        F, y, s = rng.normal(size=(n, d)), rng.normal(size=n), rng.random(n)
        alpha = float(rng.uniform(0.01, 5))
        np.testing.assert_allclose(ridge_fit(F, y, s, alpha), normal_equations_ridge(F, y, s, alpha), rtol=0, atol=1e-8)


def test_ridge_centering_ignores_constant_offset():
    rng = np.random.default_rng(1)
    F, s = rng.integers(0, 2, size=(80, 6)).astype(float), rng.random(80)
    y = F @ np.arange(6.0)
    np.testing.assert_allclose(ridge_fit(F, y + 7.0, s, 1.0, center=True), ridge_fit(F, y, s, 1.0, center=True))


def test_ridge_rejects_bad_input():
    with pytest.raises(ValueError):
        ridge_fit(np.ones((3, 2)), np.ones(4))
    with pytest.raises(ValueError):
        ridge_fit(np.ones((3, 2)), np.ones(3), alpha=0)
    with pytest.raises(ValueError):
        ridge_fit(np.ones((3, 2)), [1, np.nan, 0])


def test_rank_by_magnitude():
    np.testing.assert_array_equal(rank_by_magnitude([0.1, -3, 2, 0, 0.5, -0.2]), [5, 1, 2, 6, 3, 4])


def test_planted_channel_ranks_first():
    hits = 0
    for seed in range(5):
        rng = np.random.default_rng(seed)
        channel = seed % 6
        exp = lime_explain(planted_classifier(channel), planted_sequence(rng), n_samples=300, seed=seed)
        hits += exp.ranks[channel] == 1
    assert hits == 5


def test_lime_bookkeeping():
    X = planted_sequence(np.random.default_rng(0), 40)
    exp = lime_explain(planted_classifier(0), X, n_samples=50, seed=1, sample_id="P9")
    assert exp.masks.shape == (51, 6) and exp.targets.shape == (51,)
    np.testing.assert_array_equal(exp.masks[-1], np.ones(6))
    assert exp.sample_weights[-1] == 0.0
    assert exp.targets[-1] == pytest.approx(planted_classifier(0)(X[None])[0])
    again = lime_explain(planted_classifier(0), X, n_samples=50, seed=1)
    np.testing.assert_array_equal(exp.weights, again.weights)
    flat = lime_explain(lambda s: np.full(len(s), 0.3), X, n_samples=20, seed=0)
    assert flat.degenerate


def test_lime_reports_failing_sample():
    def fragile(stack):
        if len(stack) > 1:
            raise RuntimeError("boom")
        return np.zeros(1)

    with pytest.raises(ExplanationError, match="perturbed sample"):
        lime_explain(fragile, np.zeros((5, 6)) + np.arange(6), n_samples=20, seed=0)


def test_census_and_csv():
    X = planted_sequence(np.random.default_rng(0), 40)
    exps = [ChannelLimeExplainer(n_samples=30, random_state=s).explain(planted_classifier(2), X, f"P{s}") for s in range(3)]
    census = rank_census(exps)
    assert census.sum() == 18 and np.all(census.sum(axis=0) == 3) and np.all(census.sum(axis=1) == 3)
    assert explanations_to_csv(exps).splitlines()[1].startswith("P0,")
    assert census_to_csv(census).splitlines()[0] == "vowel,1st,2nd,3rd,4th,5th,6th"


def brute_smooth(x, w):
    before, after = w // 2, w - 1 - w // 2
    return np.array([np.mean(x[max(0, t - before) : t + after + 1]) for t in range(len(x))])


def test_window_is_four_seconds():
    assert SMOOTH_STEPS == 32 and SMOOTH_STEPS * HOP_SECONDS == 4.0


@given(arrays(np.float64, st.integers(1, 120), elements=st.floats(-1, 1)), st.integers(1, 40))
def test_smooth_matches_brute_force(x, w):
    np.testing.assert_allclose(smooth(x, w), brute_smooth(x, w), atol=1e-12)


@given(st.integers(1, 200), st.floats(-5, 5))
def test_smooth_keeps_constants(n, c):
    np.testing.assert_allclose(smooth(np.full(n, c)), c, atol=1e-12)


@given(
    arrays(np.float64, 90, elements=st.floats(-1, 1)),
    arrays(np.float64, 90, elements=st.floats(-1, 1)),
    st.floats(-3, 3),
    st.floats(-3, 3),
)
def test_smooth_is_linear(x, y, a, b):
    np.testing.assert_allclose(smooth(a * x + b * y), a * smooth(x) + b * smooth(y), atol=1e-12)


def test_smooth_impulse_response():
    x = np.zeros(200)
    x[100] = 1.0
    out = smooth(x)
    assert np.count_nonzero(out) == 32
    np.testing.assert_allclose(out[out > 0], 1 / 32)
    with pytest.raises(ValueError):
        smooth(x, 0)


def test_trajectory_outputs():
    raw = np.linspace(0.2, 0.8, 40)
    traj = DecisionTrajectory(raw, smooth(raw))
    lines = traj.to_csv().splitlines()
    assert lines[0] == "step,time_s,raw_p,smoothed_p" and len(lines) == 41
    assert lines[2].startswith("1,0.125,")
    svg = trajectory_svg(traj, "Participant P1")
    assert svg.startswith("<svg") and svg.count("<polyline") == 2 and "P1" in svg
