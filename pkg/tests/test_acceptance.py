"""End-to-end acceptance criteria, one test per criterion.

Each test records a PASS/FAIL line that is printed in the terminal summary.
The synthetic end-to-end runs (criteria 7 and 8) share one session fixture.
"""

import time
from pathlib import Path

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import brute_force_label, confusion_metrics, fd_relative_error, normal_equations_ridge, random_tier_ms
from vowel_depression import corpus, pipeline
from vowel_depression.cli import main as cli_main
from vowel_depression.depression_net import (
    DepressionLSTMClassifier,
    ParticipantSequence,
    build_lstm,
    build_sequences,
    depression_report,
    duplicate_positives,
    evaluate_depression,
    lstm_objective,
)
from vowel_depression.dsp import default_filterbank, log_mel, power_spectrogram
from vowel_depression.explain import SMOOTH_STEPS, lime_explain, ridge_fit, smooth
from vowel_depression.segmentation import HOP_SECONDS, PhoneInterval, label_segment
from vowel_depression.vowel_net import ConvBlock, VowelCNNClassifier, build_cnn, evaluate_confidence

RESULTS: list[str] = []
SEED = 7


def record(number, name, ok, detail):
    RESULTS.append(f"[{'PASS' if ok else 'FAIL'}] criterion {number:>2}: {name} ({detail})")
    assert ok, detail


def test_01_shape_conformance():
    model = build_cnn(0).eval()
    t0 = time.perf_counter()
    with torch.no_grad():
        chain = model.shape_chain(torch.from_numpy(log_mel(np.zeros(4000)).astype(np.float32))[None, None])
    elapsed = time.perf_counter() - t0
    expected = [(64, 63, 28), (64, 30, 28), (64, 14, 14), (64, 6, 6), (6, 1, 1)]
    record(1, "CNN shape chain", chain == expected and elapsed < 1.0, f"{chain}, {elapsed:.3f} s")


def test_02_frame_count_law():
    failures = []

    @settings(max_examples=300, deadline=None)
    @given(st.integers(512, 8000))
    def law(n):
        frames = (default_filterbank().weights @ power_spectrogram(np.zeros(n))).shape[1]
        if frames != (n - 512) // 128 + 1:
            failures.append(n)

    law()
    frames = log_mel(np.zeros(4000)).shape[1]
    record(2, "frame-count law", frames == 28 and not failures, f"4000 samples -> {frames} frames; mismatches {failures[:5]}")


def test_03_labeling_oracle():
    rng = np.random.default_rng(SEED)
    cases = []
    for _ in range(10_000):
        tier_ms = random_tier_ms(rng, 1000)
        tier = [PhoneInterval(p, a / 1000, b / 1000) for p, a, b in tier_ms]
        spans = [(k * 125, k * 125 + 250) for k in range(int((tier_ms[-1][2] - 250) // 125) + 1)]
        cases.append((tier_ms, tier, spans))
    t0 = time.perf_counter()
    got = [[int(label_segment((a / 1000, b / 1000), tier)) for a, b in spans] for _, tier, spans in cases]
    elapsed = time.perf_counter() - t0
    want = [[brute_force_label(s, tier_ms) for s in spans] for tier_ms, _, spans in cases]
    n_spans = sum(len(s) for _, _, s in cases)
    agree = sum(g == w for gs, ws in zip(got, want) for g, w in zip(gs, ws))
    record(3, "labeling oracle", agree == n_spans and elapsed < 10, f"{agree}/{n_spans} spans agree over 10000 tiers, {elapsed:.2f} s")


def test_04_gradient_fidelity():
    t0 = time.perf_counter()
    worst = {"conv block": 0.0, "conv5": 0.0, "lstm cell": 0.0, "fc head": 0.0}
    for seed in range(20):
        torch.manual_seed(seed)
        rng = np.random.default_rng(seed)
        gen = torch.Generator().manual_seed(seed)

        block = ConvBlock(64, (3, 3), (2, 2)).double().train()
        xb = torch.randn(2, 64, 14, 14, generator=gen, dtype=torch.float64)
        proj = torch.randn(2, 64, 6, 6, generator=gen, dtype=torch.float64)
        loss_block = lambda: (block(xb) * proj).sum()  # noqa: E731
        for p in (block.conv.weight, block.conv.bias, block.bn.weight, block.bn.bias):
            worst["conv block"] = max(worst["conv block"], fd_relative_error(loss_block, p, rng))

        cnn = build_cnn(seed, torch.float64)
        x5 = torch.randn(3, 64, 6, 6, generator=gen, dtype=torch.float64)
        y5 = torch.tensor([0, 2, 5])
        loss5 = lambda: torch.nn.functional.cross_entropy(cnn.conv5(x5).flatten(1), y5) + 1e-3 * (cnn.conv5.weight**2).sum()  # noqa: E731
        for p in (cnn.conv5.weight, cnn.conv5.bias):
            worst["conv5"] = max(worst["conv5"], fd_relative_error(loss5, p, rng))

        lstm = build_lstm(6, seed, hidden_size=16, dtype=torch.float64)
        xs = torch.randn(3, 9, 6, generator=gen, dtype=torch.float64)
        lengths, ys = np.array([9, 6, 4]), torch.tensor([1, 0, 1])
        loss_lstm = lambda: lstm_objective(lstm, xs, lengths, ys, 1e-3)  # noqa: E731
        for p in (lstm.lstm.weight_ih_l0, lstm.lstm.weight_hh_l0, lstm.lstm.bias_ih_l0):
            worst["lstm cell"] = max(worst["lstm cell"], fd_relative_error(loss_lstm, p, rng))
        for p in (lstm.fc.weight, lstm.fc.bias):
            worst["fc head"] = max(worst["fc head"], fd_relative_error(loss_lstm, p, rng))
    elapsed = time.perf_counter() - t0
    ok = max(worst.values()) < 1e-3 and elapsed < 60
    detail = ", ".join(f"{k} {v:.1e}" for k, v in worst.items())
    record(4, "gradient fidelity", ok, f"max rel err {detail}; {elapsed:.1f} s")


def test_05_ridge_oracle():
    rng = np.random.default_rng(SEED)
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(100):
        n, d = int(rng.integers(7, 200)), 6
        F = rng.integers(0, 2, size=(n, d)).astype(float) if rng.random() < 0.5 else rng.normal(size=(n, d))
        y, s, alpha = rng.random(n), rng.random(n), float(rng.uniform(0.1, 3))
        worst = max(worst, float(np.max(np.abs(ridge_fit(F, y, s, alpha) - normal_equations_ridge(F, y, s, alpha)))))
    elapsed = time.perf_counter() - t0
    record(5, "ridge oracle", worst < 1e-8 and elapsed < 5, f"max abs diff {worst:.1e}, {elapsed:.2f} s")


def test_06_lime_recovery():
    t0 = time.perf_counter()
    hits = 0
    for seed in range(20):
        rng = np.random.default_rng(seed)
        channel = int(rng.integers(0, 6))
        X = rng.normal(size=(int(rng.integers(60, 200)), 6))

        def f(stack, c=channel):
            return 1 / (1 + np.exp(-8 * ((stack[:, :, c] > 1.0).mean(axis=1) - 0.3)))

        exp = lime_explain(f, X, n_samples=1000, seed=seed)
        hits += int(exp.ranks[channel] == 1)
    elapsed = time.perf_counter() - t0
    record(6, "LIME planted-channel recovery", hits >= 19 and elapsed < 60, f"{hits}/20 seeds, {elapsed:.1f} s")


@pytest.fixture(scope="session")
def synthetic_run(tmp_path_factory):
    root = tmp_path_factory.mktemp("synthetic")
    manifest = corpus.generate_synthetic_corpus(corpus.SyntheticSpec(), SEED, root)
    train, dev = corpus.split_train_dev(manifest, 0.3, SEED)
    table = pipeline.segment_manifest(manifest)
    tr, dv = table.subset(train.ids), table.subset(dev.ids)
    t0 = time.perf_counter()
    cnn = VowelCNNClassifier(max_epochs=50, patience=3, random_state=SEED)
    cnn.fit(tr.patches, tr.labels, eval_set=(dv.patches, dv.labels))
    cnn_seconds = time.perf_counter() - t0
    return dict(manifest=manifest, train=train, dev=dev, table=table, tr=tr, dv=dv, cnn=cnn, cnn_seconds=cnn_seconds)


def test_07_synthetic_vowel_task(synthetic_run):
    run = synthetic_run
    dv, cnn = run["dv"], run["cnn"]
    report = evaluate_confidence(dv.labels, cnn.predict_proba(dv.patches), [0.0])
    f1 = report.rows[0].macro[2]
    epochs = len(cnn.train_report_.epoch_loss)
    n_seg = len(run["table"].records)
    ok = n_seg >= 2000 and f1 >= 0.90 and epochs <= 50 and run["cnn_seconds"] < 600
    record(7, "synthetic vowel task", ok,
           f"{n_seg} segments, dev macro-F1 {f1:.4f} at CT=0, {epochs} epochs, {run['cnn_seconds']:.0f} s")


def test_08_synthetic_depression_task(synthetic_run):
    run = synthetic_run
    table, cnn = run["table"], run["cnn"]
    store = dict(zip(table.ids, cnn.extract_embeddings(table.patches, "conv5")))
    order: dict[str, list[str]] = {}
    for r in table.records:
        order.setdefault(r.participant_id, []).append(r.segment_id)
    train_seqs = build_sequences(run["train"], store, order)
    dev_seqs = build_sequences(run["dev"], store, order)
    t0 = time.perf_counter()
    clf = DepressionLSTMClassifier(embedding_kind="conv5", random_state=SEED)
    clf.fit([s.steps for s in train_seqs], [s.label for s in train_seqs])
    elapsed = time.perf_counter() - t0
    report = evaluate_depression(clf, dev_seqs)

    doubled = duplicate_positives(train_seqs)
    n_pos = sum(s.label for s in train_seqs)
    structural = (
        sum(s.label for s in doubled) == 2 * n_pos
        and clf.epochs_ == 39
        and len(clf.train_report_.epoch_loss) == 39
        and DepressionLSTMClassifier(embedding_kind="conv4").epochs_ == 7
    )
    per_split = min(len(train_seqs), len(dev_seqs))
    ok = report.macro_f1 >= 0.90 and per_split >= 12 and structural and elapsed < 600
    record(8, "synthetic depression task", ok,
           f"dev macro-F1 {report.macro_f1:.4f} over {len(dev_seqs)} dev / {len(train_seqs)} train participants, "
           f"{clf.epochs_} epochs, positives {n_pos} -> {2 * n_pos}, {elapsed:.0f} s")


def test_09_evaluation_protocol():
    rng = np.random.default_rng(SEED)
    retained, mismatches = True, 0
    for _ in range(200):
        n = int(rng.integers(1, 100))
        probs = rng.dirichlet(np.ones(6), size=n)
        retained &= evaluate_confidence(rng.integers(0, 6, n), probs, [0.0]).rows[0].retained_fraction == 1.0
        y, p = rng.integers(0, 2, n), rng.random(n)
        _, _, f = confusion_metrics(y, (p >= 0.5).astype(int), 2)
        mismatches += abs(depression_report(y, p).macro_f1 - (f[0] + f[1]) / 2) > 1e-12
    record(9, "evaluation protocol", retained and mismatches == 0,
           f"CT=0 retains all segments: {retained}; macro-F1 mismatches {mismatches}/200")


def test_10_smoothing():
    rng = np.random.default_rng(SEED)
    window_ok = SMOOTH_STEPS == 32 and SMOOTH_STEPS * HOP_SECONDS == 4.0
    const_err = max(float(np.max(np.abs(smooth(np.full(n, c)) - c))) for n, c in [(1, 0.3), (31, -2.0), (500, 0.7)])
    lin_err = 0.0
    for _ in range(100):
        n = int(rng.integers(1, 400))
        x, y = rng.random(n), rng.random(n)
        a, b = rng.normal(size=2)
        lin_err = max(lin_err, float(np.max(np.abs(smooth(a * x + b * y) - (a * smooth(x) + b * smooth(y))))))
    ok = window_ok and const_err <= 1e-12 and lin_err <= 1e-12
    record(10, "smoothing", ok, f"32 steps x {HOP_SECONDS} s = {SMOOTH_STEPS * HOP_SECONDS} s; constant err {const_err:.1e}; linearity err {lin_err:.1e}")


def _cli_pipeline(workdir: Path) -> dict[str, bytes]:
    w = ["--workdir", str(workdir), "--seed", str(SEED)]
    steps = [
        ["gen-data", "--set", "corpus.n_depressed=5", "--set", "corpus.n_control=5"],
        ["segment"],
        ["train-vowel", "--set", "vowel.max_epochs=1"],
        ["eval-vowel"],
        ["embed", "--kind", "conv5"],
        ["train-dep", "--kind", "conv5", "--epochs", "3"],
        ["eval-dep", "--kind", "conv5"],
        ["explain", "--set", "explain.n_samples=40"],
        ["trajectory", "--participant", "P001"],
    ]
    for step in steps:
        assert cli_main(step + w) == 0, step
    files = sorted((workdir / "reports").glob("*")) + [workdir / "cache" / "segments.csv"]
    return {p.name: p.read_bytes() for p in files}


def test_11_determinism(tmp_path, capsys):
    first = _cli_pipeline(tmp_path / "a")
    second = _cli_pipeline(tmp_path / "b")
    capsys.readouterr()
    differing = sorted(k for k in first if first[k] != second.get(k))
    csvs = [k for k in first if k.endswith(".csv")]
    ok = not differing and set(first) == set(second) and len(csvs) >= 9
    record(11, "determinism", ok, f"{len(csvs)} CSV reports compared, differing: {differing or 'none'}")
