"""Participant manifests, train/dev splitting and the synthetic corpus generator."""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Literal

import numpy as np

from .dsp import SAMPLE_RATE, write_wav
from .segmentation import PhoneInterval, VowelLabel, write_alignment_csv

PHQ8_THRESHOLD = 10

SplitTag = Literal["train", "dev"]


class ManifestError(ValueError):
    """Raised when a manifest violates its format or invariants."""


@dataclass(frozen=True)
class UtteranceRef:
    audio_path: Path
    alignment_path: Path
    start_offset: float = 0.0


@dataclass(frozen=True)
class ParticipantRecord:
    participant_id: str
    depression_label: int
    utterances: tuple[UtteranceRef, ...]
    phq8_score: int | None = None

    def __post_init__(self):
        if self.depression_label not in (0, 1):
            raise ManifestError(f"{self.participant_id}: depression_label must be 0 or 1")
        if self.phq8_score is not None:
            if not 0 <= self.phq8_score <= 24:
                raise ManifestError(f"{self.participant_id}: phq8_score {self.phq8_score} outside 0-24")
            expected = int(self.phq8_score >= PHQ8_THRESHOLD)
            if expected != self.depression_label:
                raise ManifestError(
                    f"{self.participant_id}: depression_label {self.depression_label} inconsistent "
                    f"with phq8_score {self.phq8_score} (threshold {PHQ8_THRESHOLD})"
                )
        if not self.utterances:
            raise ManifestError(f"{self.participant_id}: empty utterance list")


@dataclass
class CorpusManifest:
    participants: list[ParticipantRecord]
    split_tag: SplitTag | None = None

    def __post_init__(self):
        seen = set()
        for p in self.participants:
            if p.participant_id in seen:
                raise ManifestError(f"duplicate participant_id {p.participant_id!r}")
            seen.add(p.participant_id)

    def __len__(self):
        return len(self.participants)

    @property
    def ids(self) -> list[str]:
        return [p.participant_id for p in self.participants]

    @property
    def labels(self) -> np.ndarray:
        return np.array([p.depression_label for p in self.participants], dtype=int)

    def get(self, participant_id: str) -> ParticipantRecord:
        for p in self.participants:
            if p.participant_id == participant_id:
                return p
        raise KeyError(participant_id)


def check_disjoint(a: CorpusManifest, b: CorpusManifest) -> None:
    shared = set(a.ids) & set(b.ids)
    if shared:
        raise ManifestError(f"participants present in both splits: {sorted(shared)}")


def load_manifest(path, split_tag: SplitTag | None = None, check_files: bool = True) -> CorpusManifest:
    """Read and validate a JSON-lines manifest.

    Relative audio/alignment paths resolve against the manifest's directory.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"manifest not found: {path}")
    base = path.parent
    participants = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                utts = tuple(
                    UtteranceRef(
                        base / u["audio"],
                        base / u["alignment"],
                        float(u.get("start_offset", 0.0)),
                    )
                    for u in obj["utterances"]
                )
                record = ParticipantRecord(
                    participant_id=str(obj["participant_id"]),
                    depression_label=int(obj["depression_label"]),
                    utterances=utts,
                    phq8_score=None if obj.get("phq8_score") is None else int(obj["phq8_score"]),
                )
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise ManifestError(f"{path}:{lineno}: malformed line ({exc})") from None
            for u in record.utterances:
                if u.start_offset < 0:
                    raise ManifestError(f"{path}:{lineno}: negative start_offset")
                if check_files:
                    for p in (u.audio_path, u.alignment_path):
                        if not p.exists():
                            raise ManifestError(f"{path}:{lineno}: dangling path {p}")
            participants.append(record)
    return CorpusManifest(participants, split_tag)


def save_manifest(manifest: CorpusManifest, path) -> None:
    path = Path(path)
    base = path.parent.resolve()
    lines = []
    for p in manifest.participants:
        obj = {"participant_id": p.participant_id, "depression_label": p.depression_label}
        if p.phq8_score is not None:
            obj["phq8_score"] = p.phq8_score
        obj["utterances"] = [
            {
                "audio": os.path.relpath(Path(u.audio_path).resolve(), base),
                "alignment": os.path.relpath(Path(u.alignment_path).resolve(), base),
                "start_offset": round(u.start_offset, 6),
            }
            for u in p.utterances
        ]
        lines.append(json.dumps(obj, sort_keys=False))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def split_train_dev(
    manifest: CorpusManifest, dev_fraction: float, seed: int
) -> tuple[CorpusManifest, CorpusManifest]:
    """Stratified participant-level split.

    The dev size is ``round(n * dev_fraction)``, apportioned across the two
    classes by largest remainder so the class ratio is kept.
    """
    if not 0 < dev_fraction < 1:
        raise ValueError(f"dev_fraction must be in (0, 1), got {dev_fraction}")
    rng = np.random.default_rng(seed)
    labels = manifest.labels
    n_dev = int(round(len(manifest) * dev_fraction))
    counts = {c: int(np.sum(labels == c)) for c in (0, 1)}
    quotas = {c: counts[c] * dev_fraction for c in (0, 1)}
    alloc = {c: int(math.floor(quotas[c])) for c in (0, 1)}
    for c in sorted((0, 1), key=lambda c: quotas[c] - alloc[c], reverse=True):
        if sum(alloc.values()) < n_dev:
            alloc[c] += 1
    for c in (0, 1):
        if alloc[c] < 1 or counts[c] - alloc[c] < 1:
            raise ValueError(
                f"cannot place class {c} ({counts[c]} participants) in both splits "
                f"at dev_fraction {dev_fraction}"
            )
    dev_idx = set()
    for c in (0, 1):
        members = np.flatnonzero(labels == c)
        dev_idx.update(rng.permutation(members)[: alloc[c]].tolist())
    train = [p for i, p in enumerate(manifest.participants) if i not in dev_idx]
    dev = [p for i, p in enumerate(manifest.participants) if i in dev_idx]
    return CorpusManifest(train, "train"), CorpusManifest(dev, "dev")


# canonical (F1, F2) targets in Hz
FORMANTS = {
    VowelLabel.A: (730.0, 1090.0),
    VowelLabel.E: (530.0, 1840.0),
    VowelLabel.I: (270.0, 2290.0),
    VowelLabel.O: (570.0, 840.0),
    VowelLabel.U: (300.0, 870.0),
}
VOWEL_PHONES = {
    VowelLabel.A: ("AA1", "AH1"),
    VowelLabel.E: ("EH1", "AE1"),
    VowelLabel.I: ("IY1", "IH1"),
    VowelLabel.O: ("OW1", "AO1"),
    VowelLabel.U: ("UW1", "UH1"),
}
CONSONANT_PHONES = ("S", "SH", "F", "T", "K", "HH", "TH")


@dataclass(frozen=True)
class SyntheticSpec:
    """Knobs of the synthetic corpus.

    Depressed speakers get formants pulled toward the vowel-space centroid
    by ``depressed_dispersion`` and token loudness drawn from a narrower,
    lower range.
    """

    n_depressed: int = 60
    n_control: int = 60
    utterances_per_participant: int = 1
    tokens_per_utterance: tuple[int, int] = (4, 6)
    vowel_duration: tuple[float, float] = (0.22, 0.40)
    consonant_duration: tuple[float, float] = (0.08, 0.20)
    pause_probability: float = 0.25
    pause_duration: tuple[float, float] = (0.25, 0.45)
    depressed_dispersion: float = 0.4
    control_gain: tuple[float, float] = (0.4, 0.95)
    depressed_gain: tuple[float, float] = (0.1, 0.16)
    f0_range: tuple[float, float] = (95.0, 230.0)
    formant_jitter: float = 0.04
    noise_level: float = 0.003
    utterance_gap: float = 1.5

    def __post_init__(self):
        if self.n_depressed < 1 or self.n_control < 1:
            raise ValueError("synthetic corpus needs at least one participant in each class")
        if self.utterances_per_participant < 1:
            raise ValueError("utterances_per_participant must be >= 1")


def _resonance(f: np.ndarray, centre: float, bandwidth: float) -> np.ndarray:
    return 1.0 / np.sqrt((1.0 - (f / centre) ** 2) ** 2 + (f * bandwidth / centre**2) ** 2)


def synth_vowel(f1: float, f2: float, f0: float, n_samples: int, rng: np.random.Generator) -> np.ndarray:
    """Harmonic source shaped by two second-order formant resonances."""
    t = np.arange(n_samples) / SAMPLE_RATE
    harmonics = np.arange(1, int(4000 // f0) + 1) * f0
    amps = _resonance(harmonics, f1, 80.0) * _resonance(harmonics, f2, 110.0) / harmonics**0.5
    phases = rng.uniform(0, 2 * np.pi, len(harmonics))
    # slight pitch drift keeps harmonics from being perfectly stationary
    drift = 1.0 + 0.02 * np.sin(2 * np.pi * rng.uniform(1.0, 3.0) * t)
    phase_t = 2 * np.pi * np.cumsum(drift) / SAMPLE_RATE
    wave = (amps[:, None] * np.sin(harmonics[:, None] * phase_t[None, :] + phases[:, None])).sum(0)
    wave /= np.max(np.abs(wave)) + 1e-12
    return wave * _ramp(n_samples)


def synth_noise(n_samples: int, rng: np.random.Generator) -> np.ndarray:
    """High-passed noise burst standing in for an obstruent."""
    noise = rng.standard_normal(n_samples + 1)
    wave = np.diff(noise) * 0.5
    return wave / (np.max(np.abs(wave)) + 1e-12) * _ramp(n_samples)


def _ramp(n: int) -> np.ndarray:
    r = min(80, n // 4)
    env = np.ones(n)
    if r > 0:
        env[:r] = np.linspace(0, 1, r)
        env[-r:] = np.linspace(1, 0, r)
    return env


def _samples(seconds: float) -> int:
    return int(round(seconds * SAMPLE_RATE))


def _synth_utterance(spec: SyntheticSpec, depressed: bool, f0: float, rng: np.random.Generator):
    chunks, tier, t = [], [], 0.0
    gains = spec.depressed_gain if depressed else spec.control_gain
    scale = spec.depressed_dispersion if depressed else 1.0
    centroid = np.mean(list(FORMANTS.values()), axis=0)
    n_tokens = int(rng.integers(spec.tokens_per_utterance[0], spec.tokens_per_utterance[1] + 1))

    def add(phone, wave):
        nonlocal t
        n = len(wave)
        tier.append(PhoneInterval(phone, round(t, 4), round(t + n / SAMPLE_RATE, 4)))
        chunks.append(wave)
        t += n / SAMPLE_RATE

    for k in range(n_tokens):
        if k > 0 or rng.random() < 0.5:
            n = _samples(rng.uniform(*spec.consonant_duration))
            add(str(rng.choice(CONSONANT_PHONES)), 0.3 * rng.uniform(*gains) * synth_noise(n, rng))
        if k > 0 and rng.random() < spec.pause_probability:
            n = _samples(rng.uniform(*spec.pause_duration))
            add("sp", np.zeros(n))
        vowel = VowelLabel(int(rng.integers(0, 5)))
        f1, f2 = centroid + scale * (np.asarray(FORMANTS[vowel]) - centroid)
        f1 *= 1 + spec.formant_jitter * rng.uniform(-1, 1)
        f2 *= 1 + spec.formant_jitter * rng.uniform(-1, 1)
        n = _samples(rng.uniform(*spec.vowel_duration))
        add(str(rng.choice(VOWEL_PHONES[vowel])), rng.uniform(*gains) * synth_vowel(f1, f2, f0, n, rng))
    n = _samples(rng.uniform(*spec.consonant_duration))
    add(str(rng.choice(CONSONANT_PHONES)), 0.3 * rng.uniform(*gains) * synth_noise(n, rng))

    audio = np.concatenate(chunks)
    audio = audio + spec.noise_level * rng.standard_normal(len(audio))
    return np.clip(audio, -0.99, 0.99), tier


def generate_synthetic_corpus(spec: SyntheticSpec, seed: int, out_dir) -> CorpusManifest:
    """Write WAVs, CSV phone tiers and ``manifest.jsonl`` under ``out_dir``.

    Output is a pure function of ``(spec, seed)``: reruns are byte-identical.
    """
    out_dir = Path(out_dir)
    try:
        (out_dir / "audio").mkdir(parents=True, exist_ok=True)
        (out_dir / "align").mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out_dir}: {exc}") from exc
    rng = np.random.default_rng(seed)
    labels = [1] * spec.n_depressed + [0] * spec.n_control
    labels = [labels[i] for i in rng.permutation(len(labels))]
    participants = []
    for idx, label in enumerate(labels):
        pid = f"P{idx + 1:03d}"
        prng = np.random.default_rng([seed, idx])
        f0 = float(prng.uniform(*spec.f0_range))
        phq8 = int(prng.integers(10, 25)) if label else int(prng.integers(0, 10))
        utts, clock = [], 0.0
        for u in range(spec.utterances_per_participant):
            audio, tier = _synth_utterance(spec, bool(label), f0, prng)
            offset = round(clock, 4)
            stem = f"{pid}_u{u:02d}"
            write_wav(out_dir / "audio" / f"{stem}.wav", audio)
            write_alignment_csv(
                out_dir / "align" / f"{stem}.csv",
                [PhoneInterval(iv.phone, iv.start + offset, iv.end + offset) for iv in tier],
            )
            utts.append(UtteranceRef(out_dir / "audio" / f"{stem}.wav", out_dir / "align" / f"{stem}.csv", offset))
            clock = offset + len(audio) / SAMPLE_RATE + spec.utterance_gap
        participants.append(ParticipantRecord(pid, label, tuple(utts), phq8))
    manifest = CorpusManifest(participants)
    save_manifest(manifest, out_dir / "manifest.jsonl")
    return manifest
