"""Command-line entry point: one subcommand per pipeline stage.

Artifact layout under the configured directories::

    <corpus>/manifest.jsonl train.jsonl dev.jsonl audio/ align/
    <cache>/segments.csv patches.f32 patches.f32.idx.csv embeddings_<kind>.npy
    <checkpoints>/vowel_cnn.ckpt depression_lstm_<kind>.ckpt
    <reports>/vowel_train.csv vowel_eval.csv dep_train_<kind>.csv dep_eval_<kind>.csv
              dep_participants_<kind>.csv lime_channels.csv lime_rank_census.csv
              trajectory_<participant>.csv trajectory_<participant>.svg
"""

from __future__ import annotations

import argparse
import contextlib
import logging
import os
import sys
import tempfile
from collections import OrderedDict
from pathlib import Path

import numpy as np

from . import corpus, dsp, explain, pipeline
from .config import ConfigError, PipelineConfig
from .depression_net import DepressionLSTMClassifier, ParticipantSequence, build_sequences, evaluate_depression
from .segmentation import VowelLabel
from .vowel_net import VowelCNNClassifier, evaluate_vowels

log = logging.getLogger("vowel_depression")


class StageError(RuntimeError):
    pass


@contextlib.contextmanager
def staged(*targets: Path):
    """Yield temporary paths; move them onto ``targets`` only if the block succeeds."""
    tmps = []
    try:
        for t in targets:
            t.parent.mkdir(parents=True, exist_ok=True)
            fd, name = tempfile.mkstemp(prefix=f".{t.name}.", dir=t.parent)
            os.close(fd)
            tmps.append(Path(name))
        yield tmps
        for tmp, t in zip(tmps, targets):
            os.replace(tmp, t)
    finally:
        for tmp in tmps:
            if tmp.exists():
                tmp.unlink()


def write_text(path: Path, text: str) -> None:
    with staged(path) as (tmp,):
        tmp.write_text(text, encoding="utf-8")


def require(path: Path, stage: str) -> Path:
    if not path.exists():
        raise StageError(f"missing {path} (run `{stage}` first)")
    return path


def _manifests(cfg):
    root = cfg.path("corpus_dir")
    train = corpus.load_manifest(require(root / "train.jsonl", "gen-data"), "train")
    dev = corpus.load_manifest(require(root / "dev.jsonl", "gen-data"), "dev")
    corpus.check_disjoint(train, dev)
    return train, dev


def _segments(cfg) -> pipeline.SegmentTable:
    cache = cfg.path("cache_dir")
    seg_csv = require(cache / "segments.csv", "segment")
    records = pipeline.segments_from_csv(seg_csv.read_text(encoding="utf-8"))
    ids, patches = dsp.read_patch_cache(require(cache / "patches.f32", "segment"))
    if ids != [r.segment_id for r in records]:
        raise StageError(f"{cache / 'patches.f32'} does not match segments.csv; rerun `segment`")
    return pipeline.SegmentTable(records, patches)


def _kind(cfg, args) -> str:
    kind = (getattr(args, "kind", None) or cfg["run.embedding_kind"]).lower()
    if kind not in ("conv4", "conv5"):
        raise StageError(f"embedding kind must be conv4 or conv5, got {kind!r}")
    return kind


def _sequences(cfg, kind, manifest) -> list[ParticipantSequence]:
    cache = cfg.path("cache_dir")
    table = _segments(cfg)
    emb = np.load(require(cache / f"embeddings_{kind}.npy", f"embed --kind {kind}"))
    if len(emb) != len(table.records):
        raise StageError(f"embeddings_{kind}.npy does not match segments.csv; rerun `embed`")
    store = dict(zip(table.ids, emb))
    order: dict[str, list[str]] = OrderedDict()
    for r in table.records:
        order.setdefault(r.participant_id, []).append(r.segment_id)
    return build_sequences(manifest, store, order)


def _lstm(cfg, kind) -> DepressionLSTMClassifier:
    d = cfg.values["depression"]
    return DepressionLSTMClassifier(
        embedding_kind=kind,
        hidden_size=d["hidden_size"],
        learning_rate=d["learning_rate"],
        l2=d["l2"],
        batch_size=d["batch_size"],
        n_epochs=d["n_epochs"] or None,
        max_steps=d["max_steps"],
        random_state=cfg.seed,
    )


def cmd_gen_data(cfg, args) -> str:
    out = Path(args.out) if args.out else cfg.path("corpus_dir")
    c = cfg.values["corpus"]
    spec = corpus.SyntheticSpec(
        n_depressed=c["n_depressed"], n_control=c["n_control"],
        utterances_per_participant=c["utterances_per_participant"],
    )
    manifest = corpus.generate_synthetic_corpus(spec, cfg.seed, out)
    train, dev = corpus.split_train_dev(manifest, c["dev_fraction"], cfg.seed)
    corpus.save_manifest(train, out / "train.jsonl")
    corpus.save_manifest(dev, out / "dev.jsonl")
    return f"wrote {len(manifest)} participants to {out} ({len(train)} train / {len(dev)} dev)"


def cmd_segment(cfg, args) -> str:
    train, dev = _manifests(cfg)
    full = corpus.CorpusManifest(train.participants + dev.participants)
    table = pipeline.segment_manifest(full)
    cache = cfg.path("cache_dir")
    with staged(cache / "segments.csv", cache / "patches.f32", cache / "patches.f32.idx.csv") as (seg, pat, idx):
        seg.write_text(pipeline.segments_to_csv(table.records), encoding="utf-8")
        dsp.write_patch_cache(pat, table.ids, table.patches)
        os.replace(pat.with_name(pat.name + ".idx.csv"), idx)
    hist = table.histogram()
    for lab, n in hist.items():
        print(f"{lab.slug:>10} {n}")
    return f"{len(table.records)} segments"


def cmd_train_vowel(cfg, args) -> str:
    train, dev = _manifests(cfg)
    table = _segments(cfg)
    tr, dv = table.subset(train.ids), table.subset(dev.ids)
    v = cfg.values["vowel"]
    est = VowelCNNClassifier(
        batch_size=v["batch_size"], learning_rate=v["learning_rate"], l2=v["l2"],
        max_epochs=v["max_epochs"], patience=v["patience"] or None, random_state=cfg.seed,
    )
    est.fit(tr.patches, tr.labels, eval_set=(dv.patches, dv.labels))
    ckpt = cfg.path("checkpoint_dir") / "vowel_cnn.ckpt"
    with staged(ckpt) as (tmp,):
        est.save(tmp)
    write_text(cfg.path("report_dir") / "vowel_train.csv", est.train_report_.to_csv())
    rep = est.train_report_
    return f"best epoch {rep.best_epoch}, dev macro-F1 {rep.dev_macro_f1[rep.best_epoch - 1]:.4f}"


def _load_cnn(cfg) -> VowelCNNClassifier:
    return VowelCNNClassifier.load(require(cfg.path("checkpoint_dir") / "vowel_cnn.ckpt", "train-vowel"))


def cmd_eval_vowel(cfg, args) -> str:
    _, dev = _manifests(cfg)
    thresholds = [float(t) for t in args.ct.split(",")] if args.ct else cfg.thresholds
    est = _load_cnn(cfg)
    dv = _segments(cfg).subset(dev.ids)
    report = evaluate_vowels(est, dv.patches, dv.labels, thresholds)
    write_text(cfg.path("report_dir") / "vowel_eval.csv", report.to_csv())
    first = report.rows[0]
    return f"CT {first.threshold:g}: {100 * first.retained_fraction:.1f}% segments, macro-F1 {first.macro[2]:.4f}"


def cmd_embed(cfg, args) -> str:
    kind = _kind(cfg, args)
    est = _load_cnn(cfg)
    table = _segments(cfg)
    emb = est.extract_embeddings(table.patches, kind).astype(np.float32)
    target = cfg.path("cache_dir") / f"embeddings_{kind}.npy"
    with staged(target) as (tmp,):
        with open(tmp, "wb") as fh:
            np.save(fh, emb)
    return f"{kind}: {emb.shape[0]} segments x {emb.shape[1]} dims"


def _load_lstm(cfg, kind) -> DepressionLSTMClassifier:
    path = cfg.path("checkpoint_dir") / f"depression_lstm_{kind}.ckpt"
    return DepressionLSTMClassifier.load(require(path, f"train-dep --kind {kind}"))


def cmd_train_dep(cfg, args) -> str:
    kind = _kind(cfg, args)
    train, _ = _manifests(cfg)
    seqs = _sequences(cfg, kind, train)
    clf = _lstm(cfg, kind)
    if args.epochs is not None:
        clf.set_params(n_epochs=args.epochs)
    clf.fit([s.steps for s in seqs], [s.label for s in seqs])
    with staged(cfg.path("checkpoint_dir") / f"depression_lstm_{kind}.ckpt") as (tmp,):
        clf.save(tmp)
    write_text(cfg.path("report_dir") / f"dep_train_{kind}.csv", clf.train_report_.to_csv())
    return f"{kind}: trained {clf.epochs_} epochs, final loss {clf.train_report_.epoch_loss[-1]:.4f}"


def cmd_eval_dep(cfg, args) -> str:
    kind = _kind(cfg, args)
    _, dev = _manifests(cfg)
    clf = _load_lstm(cfg, kind)
    report = evaluate_depression(clf, _sequences(cfg, kind, dev))
    reports = cfg.path("report_dir")
    write_text(reports / f"dep_eval_{kind}.csv", report.to_csv())
    write_text(reports / f"dep_participants_{kind}.csv", report.participants_csv())
    return f"{kind}: F1 {report.f1:.4f}, macro-F1 {report.macro_f1:.4f}"


def cmd_explain(cfg, args) -> str:
    _, dev = _manifests(cfg)
    clf = _load_lstm(cfg, "conv5")
    e = cfg.values["explain"]
    f = explain.classifier_function(clf)
    exps = []
    for i, seq in enumerate(_sequences(cfg, "conv5", dev)):
        exps.append(explain.lime_explain(
            f, seq.steps, e["n_samples"], [cfg.seed, i], e["alpha"], e["kernel_width"],
            sample_id=seq.participant_id,
        ))
    census = explain.rank_census(exps)
    reports = cfg.path("report_dir")
    write_text(reports / "lime_channels.csv", explain.explanations_to_csv(exps))
    write_text(reports / "lime_rank_census.csv", explain.census_to_csv(census))
    top = VowelLabel(int(np.argmax(census[:, 0])))
    return f"explained {len(exps)} participants; most often ranked first: {top.slug}"


def cmd_trajectory(cfg, args) -> str:
    kind = _kind(cfg, args)
    train, dev = _manifests(cfg)
    pid = args.participant
    manifest = dev if pid in dev.ids else train if pid in train.ids else None
    if manifest is None:
        raise StageError(f"unknown participant {pid!r}")
    sub = corpus.CorpusManifest([manifest.get(pid)])
    (seq,) = _sequences(cfg, kind, sub)
    clf = _load_lstm(cfg, kind)
    traj = explain.decision_trajectory(clf, seq.steps, cfg["explain.smooth_steps"])
    reports = cfg.path("report_dir")
    prob, pred = clf.classify(seq.steps)
    write_text(reports / f"trajectory_{pid}.csv", traj.to_csv())
    title = f"Participant {pid}; prediction={pred}; label={seq.label}"
    write_text(reports / f"trajectory_{pid}.svg", explain.trajectory_svg(traj, title))
    return f"{pid}: final p={prob:.4f}, {len(traj.raw)} steps"


def cmd_show_config(cfg, args) -> str:
    sys.stdout.write(cfg.dump())
    return ""


COMMANDS = {
    "gen-data": cmd_gen_data,
    "segment": cmd_segment,
    "train-vowel": cmd_train_vowel,
    "eval-vowel": cmd_eval_vowel,
    "embed": cmd_embed,
    "train-dep": cmd_train_dep,
    "eval-dep": cmd_eval_dep,
    "explain": cmd_explain,
    "trajectory": cmd_trajectory,
    "show-config": cmd_show_config,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI config file; flags override it")
    common.add_argument("--workdir", help="root for corpus/cache/checkpoint/report directories")
    common.add_argument("--seed", type=int, help="random seed (required unless set in the config)")
    common.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                        help="override any config value")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="vowel-depression", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("gen-data", parents=[common], help="write the synthetic corpus")
    p.add_argument("--out", help="corpus directory (default <workdir>/data)")
    sub.add_parser("segment", parents=[common], help="window, label and log-Mel all utterances")
    sub.add_parser("train-vowel", parents=[common], help="train the vowel CNN")
    p = sub.add_parser("eval-vowel", parents=[common], help="confidence-thresholded vowel metrics")
    p.add_argument("--ct", help="comma-separated confidence thresholds")
    p = sub.add_parser("embed", parents=[common], help="extract conv4/conv5 embeddings")
    p.add_argument("--kind", choices=["conv4", "conv5"])
    p = sub.add_parser("train-dep", parents=[common], help="train the depression LSTM")
    p.add_argument("--kind", choices=["conv4", "conv5"])
    p.add_argument("--epochs", type=int, help="override the per-kind default (conv4 7, conv5 39)")
    p = sub.add_parser("eval-dep", parents=[common], help="depression metrics on the dev split")
    p.add_argument("--kind", choices=["conv4", "conv5"])
    sub.add_parser("explain", parents=[common], help="channel LIME over dev participants (conv5)")
    p = sub.add_parser("trajectory", parents=[common], help="per-step decision trajectory")
    p.add_argument("--participant", required=True)
    p.add_argument("--kind", choices=["conv4", "conv5"])
    sub.add_parser("show-config", parents=[common], help="print the effective configuration")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    overrides = {"paths.workdir": args.workdir, "run.seed": args.seed}
    if args.command == "gen-data" and args.out:
        overrides["paths.corpus_dir"] = args.out
    for item in args.set:
        key, sep, value = item.partition("=")
        if not sep:
            parser.error(f"--set expects SECTION.KEY=VALUE, got {item!r}")
        overrides[key.strip()] = value
    try:
        cfg = PipelineConfig.load(args.config, overrides)
    except ConfigError as exc:
        parser.error(str(exc))
    if cfg.seed is None and args.command != "show-config":
        parser.error("a seed is required: pass --seed or set [run] seed in the config")
    try:
        summary = COMMANDS[args.command](cfg, args)
    except Exception as exc:  # every stage failure maps to exit status 1
        log.debug("stage failed", exc_info=True)
        print(f"error: {exc}", file=sys.stderr)
        return 1
    if summary:
        print(summary)
    return 0


if __name__ == "__main__":
    sys.exit(main())
