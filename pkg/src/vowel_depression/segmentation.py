"""Phone-tier parsing, 250 ms windowing and vowel labeling of segments."""

from __future__ import annotations

import csv
import enum
import math
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

SEGMENT_SECONDS = 0.250
HOP_SECONDS = 0.125
VOWEL_COVERAGE = 0.8
SEGMENT_OCCUPANCY = 0.5
# absorbs float noise so that exact ties on the ms grid resolve as "not more than"
_EPS = 1e-9


class VowelLabel(enum.IntEnum):
    """Six segment classes; the integer value doubles as the CNN channel index."""

    A = 0
    E = 1
    I = 2  # noqa: E741
    O = 3  # noqa: E741
    U = 4
    NOT_VOWEL = 5

    @property
    def slug(self) -> str:
        return self.name.lower()

    @classmethod
    def parse(cls, text: str) -> "VowelLabel":
        try:
            return cls[text.strip().upper()]
        except KeyError:
            raise ValueError(f"unknown vowel label {text!r}") from None


N_CLASSES = len(VowelLabel)

DEFAULT_PHONE_MAP: dict[str, VowelLabel] = {
    **dict.fromkeys(["AA", "AH", "AY", "AW"], VowelLabel.A),
    **dict.fromkeys(["EH", "EY", "AE", "ER"], VowelLabel.E),
    **dict.fromkeys(["IY", "IH"], VowelLabel.I),
    **dict.fromkeys(["AO", "OW", "OY"], VowelLabel.O),
    **dict.fromkeys(["UW", "UH"], VowelLabel.U),
}


class AlignmentError(ValueError):
    """Raised for malformed or inconsistent phone tiers."""


@dataclass(frozen=True)
class PhoneInterval:
    phone: str
    start: float
    end: float

    def __post_init__(self):
        if not (math.isfinite(self.start) and math.isfinite(self.end)):
            raise AlignmentError(f"non-finite bounds for {self.phone!r}")
        if not self.start < self.end:
            raise AlignmentError(
                f"interval {self.phone!r} has start {self.start} >= end {self.end}"
            )

    @property
    def duration(self) -> float:
        return self.end - self.start


def validate_tier(intervals: Sequence[PhoneInterval]) -> list[PhoneInterval]:
    """Check time order and non-overlap; return the intervals as a list."""
    intervals = list(intervals)
    for i in range(1, len(intervals)):
        prev, cur = intervals[i - 1], intervals[i]
        if cur.start < prev.start:
            raise AlignmentError(
                f"intervals {i - 1} and {i} are out of time order "
                f"({prev.start} > {cur.start})"
            )
        if cur.start < prev.end - _EPS:
            raise AlignmentError(
                f"intervals {i - 1} and {i} overlap "
                f"([{prev.start}, {prev.end}] vs [{cur.start}, {cur.end}])"
            )
    return intervals


def _parse_csv(path: Path) -> list[PhoneInterval]:
    intervals = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        for lineno, row in enumerate(reader, start=1):
            if not row or all(not c.strip() for c in row):
                continue
            if lineno == 1 and [c.strip().lower() for c in row] == ["phone", "start", "end"]:
                continue
            if len(row) != 3:
                raise AlignmentError(f"{path}:{lineno}: expected 3 fields, got {len(row)}")
            try:
                start, end = float(row[1]), float(row[2])
            except ValueError:
                raise AlignmentError(f"{path}:{lineno}: unparsable times {row[1:]!r}") from None
            try:
                intervals.append(PhoneInterval(row[0].strip(), start, end))
            except AlignmentError as exc:
                raise AlignmentError(f"{path}:{lineno}: {exc}") from None
    return intervals


_TG_FIELD = re.compile(r'^\s*(\w+)\s*=\s*(.*?)\s*$')


def _parse_textgrid(path: Path, tier_name: str = "phone") -> list[PhoneInterval]:
    """Read the named IntervalTier of a long-format Praat TextGrid."""
    text = Path(path).read_text(encoding="utf-8-sig")
    tiers: list[dict] = []
    current: dict | None = None
    interval: dict | None = None
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if re.match(r"^item\s*\[\d+\]\s*:", stripped):
            current = {"class": None, "name": None, "intervals": []}
            tiers.append(current)
            interval = None
            continue
        if current is None:
            continue
        if re.match(r"^intervals\s*\[\d+\]\s*:", stripped):
            interval = {}
            current["intervals"].append((lineno, interval))
            continue
        m = _TG_FIELD.match(line)
        if not m:
            continue
        key, value = m.group(1), m.group(2)
        if value.startswith('"'):
            value = value[1:-1].replace('""', '"') if value.endswith('"') else value
        if interval is not None and key in ("xmin", "xmax", "text"):
            interval[key] = value
        elif key in ("class", "name"):
            current[key] = value

    for tier in tiers:
        if tier["class"] == "IntervalTier" and tier["name"] == tier_name:
            out = []
            for lineno, iv in tier["intervals"]:
                try:
                    out.append(PhoneInterval(iv.get("text", ""), float(iv["xmin"]), float(iv["xmax"])))
                except (KeyError, ValueError) as exc:
                    raise AlignmentError(f"{path}:{lineno}: bad interval ({exc})") from None
            return out
    raise AlignmentError(f"{path}: no IntervalTier named {tier_name!r}")


def parse_alignment(path) -> list[PhoneInterval]:
    """Parse a phone tier from CSV (``phone,start,end``) or a TextGrid.

    Non-speech markers (``sp``, ``sil``, empty text) are kept as intervals.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"alignment file not found: {path}")
    head = path.read_text(encoding="utf-8-sig")[:200]
    if path.suffix.lower() == ".textgrid" or "ooTextFile" in head:
        intervals = _parse_textgrid(path)
    else:
        intervals = _parse_csv(path)
    return validate_tier(intervals)


def write_alignment_csv(path, intervals: Iterable[PhoneInterval]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write("phone,start,end\n")
        for iv in intervals:
            fh.write(f"{iv.phone},{iv.start:.4f},{iv.end:.4f}\n")


def map_phone(phone: str, mapping: Mapping[str, VowelLabel] | None = None) -> VowelLabel | None:
    """Map an aligner phone symbol to a vowel class, or None for non-vowels.

    Stress digits are stripped before the lookup (``"AA1"`` -> ``"AA"``).
    """
    mapping = DEFAULT_PHONE_MAP if mapping is None else mapping
    key = phone.strip().upper().rstrip("012")
    return mapping.get(key)


def window_utterance(duration: float) -> list[tuple[float, float]]:
    """Return 250 ms spans with a 125 ms hop; a short tail is dropped."""
    if duration < SEGMENT_SECONDS - _EPS:
        raise ValueError(
            f"utterance of {duration:.3f} s is shorter than one {SEGMENT_SECONDS} s segment"
        )
    k_max = int(math.floor((duration - SEGMENT_SECONDS) / HOP_SECONDS + _EPS))
    return [(k * HOP_SECONDS, k * HOP_SECONDS + SEGMENT_SECONDS) for k in range(k_max + 1)]


def _qualifies(span_start: float, span_end: float, iv: PhoneInterval) -> bool:
    if iv.start >= span_start - _EPS and iv.end <= span_end + _EPS:
        return True
    overlap = min(span_end, iv.end) - max(span_start, iv.start)
    return (
        overlap - VOWEL_COVERAGE * iv.duration > _EPS
        or overlap - SEGMENT_OCCUPANCY * (span_end - span_start) > _EPS
    )


def label_segment(
    span: tuple[float, float],
    tier: Sequence[PhoneInterval],
    mapping: Mapping[str, VowelLabel] | None = None,
) -> VowelLabel:
    """Label one span from the vowels that overlap it.

    A vowel qualifies when it lies fully inside the span, covers more than
    80% of its own duration inside the span, or fills more than half of the
    span. The first qualifying vowel in order of appearance wins; if none
    qualifies (or no vowel overlaps) the span is ``NOT_VOWEL``.
    """
    span_start, span_end = span
    for iv in tier:
        if iv.end <= span_start + _EPS or iv.start >= span_end - _EPS:
            continue
        vowel = map_phone(iv.phone, mapping)
        if vowel is None:
            continue
        if _qualifies(span_start, span_end, iv):
            return vowel
    return VowelLabel.NOT_VOWEL


def shift_tier(tier: Sequence[PhoneInterval], offset: float) -> list[PhoneInterval]:
    return [PhoneInterval(iv.phone, iv.start + offset, iv.end + offset) for iv in tier]


@dataclass(frozen=True)
class SegmentRecord:
    participant_id: str
    utterance_index: int
    index: int
    start: float
    end: float
    label: VowelLabel

    @property
    def segment_id(self) -> str:
        return f"{self.participant_id}/u{self.utterance_index:03d}/s{self.index:04d}"


def segment_utterance(
    participant_id: str,
    utterance_index: int,
    duration: float,
    tier: Sequence[PhoneInterval],
    start_offset: float = 0.0,
    mapping: Mapping[str, VowelLabel] | None = None,
) -> list[SegmentRecord]:
    """Window an utterance and label every span.

    ``tier`` carries times on the interview clock; the utterance audio starts
    at ``start_offset`` on that clock.
    """
    local = shift_tier(tier, -start_offset) if start_offset else list(tier)
    return [
        SegmentRecord(participant_id, utterance_index, k, s, e, label_segment((s, e), local, mapping))
        for k, (s, e) in enumerate(window_utterance(duration))
    ]
