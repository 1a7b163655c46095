"""Vowel-based depression detection from interview speech."""

from .corpus import CorpusManifest, SyntheticSpec, generate_synthetic_corpus, load_manifest, split_train_dev
from .depression_net import DepressionLSTMClassifier, ParticipantSequence, build_sequences
from .dsp import LogMelExtractor, log_mel
from .explain import ChannelLimeExplainer, decision_trajectory, lime_explain, ridge_fit, smooth
from .segmentation import VowelLabel, label_segment, parse_alignment, segment_utterance
from .vowel_net import VowelCNNClassifier, evaluate_vowels

__version__ = "0.1.0"

__all__ = [
    "ChannelLimeExplainer",
    "CorpusManifest",
    "DepressionLSTMClassifier",
    "LogMelExtractor",
    "ParticipantSequence",
    "SyntheticSpec",
    "VowelCNNClassifier",
    "VowelLabel",
    "build_sequences",
    "decision_trajectory",
    "evaluate_vowels",
    "generate_synthetic_corpus",
    "label_segment",
    "lime_explain",
    "load_manifest",
    "log_mel",
    "parse_alignment",
    "ridge_fit",
    "segment_utterance",
    "smooth",
    "split_train_dev",
]
