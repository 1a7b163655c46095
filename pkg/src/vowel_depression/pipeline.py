"""Glue between the corpus, segmentation and feature stages."""

from __future__ import annotations

import csv
import io
from collections import Counter
from dataclasses import dataclass

import numpy as np

from .corpus import CorpusManifest
from .dsp import SAMPLE_RATE, SEGMENT_SAMPLES, decode_wav, default_filterbank, log_mel
from .segmentation import SegmentRecord, VowelLabel, parse_alignment, segment_utterance


@dataclass
class SegmentTable:
    records: list[SegmentRecord]
    patches: np.ndarray  # (n, 128, 28) float32

    @property
    def labels(self) -> np.ndarray:
        return np.array([int(r.label) for r in self.records], dtype=np.int64)

    @property
    def ids(self) -> list[str]:
        return [r.segment_id for r in self.records]

    def histogram(self) -> dict[VowelLabel, int]:
        counts = Counter(r.label for r in self.records)
        return {lab: counts.get(lab, 0) for lab in VowelLabel}

    def subset(self, participant_ids) -> "SegmentTable":
        wanted = set(participant_ids)
        keep = [i for i, r in enumerate(self.records) if r.participant_id in wanted]
        return SegmentTable([self.records[i] for i in keep], self.patches[keep])


def segment_manifest(manifest: CorpusManifest, mapping=None) -> SegmentTable:
    """Window, label and log-Mel every utterance, in manifest order.

    Alignment failures are collected and raised together, one line per file.
    """
    bank = default_filterbank()
    records, patches, failures = [], [], []
    for p in manifest.participants:
        for u_idx, utt in enumerate(p.utterances):
            try:
                tier = parse_alignment(utt.alignment_path)
            except (ValueError, OSError) as exc:
                failures.append(f"{utt.alignment_path}: {exc}")
                continue
            wave = decode_wav(utt.audio_path)
            segs = segment_utterance(p.participant_id, u_idx, wave.duration, tier, utt.start_offset, mapping)
            for seg in segs:
                first = int(round(seg.start * SAMPLE_RATE))
                patches.append(log_mel(wave.samples[first : first + SEGMENT_SAMPLES], bank))
            records.extend(segs)
    if failures:
        raise ValueError("alignment parse failures:\n" + "\n".join(failures))
    arr = np.stack(patches).astype(np.float32) if patches else np.zeros((0, 128, 28), np.float32)
    return SegmentTable(records, arr)


SEGMENT_CSV_HEADER = ["segment_id", "participant_id", "utterance_index", "segment_index", "start", "end", "label"]


def segments_to_csv(records) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SEGMENT_CSV_HEADER)
    for r in records:
        w.writerow([r.segment_id, r.participant_id, r.utterance_index, r.index,
                    f"{r.start:.3f}", f"{r.end:.3f}", r.label.name])
    return buf.getvalue()


def segments_from_csv(text: str) -> list[SegmentRecord]:
    rows = csv.DictReader(io.StringIO(text))
    return [
        SegmentRecord(r["participant_id"], int(r["utterance_index"]), int(r["segment_index"]),
                      float(r["start"]), float(r["end"]), VowelLabel[r["label"]])
        for r in rows
    ]
