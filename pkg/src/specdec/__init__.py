"""Speculative decoding with adaptive ensemble drafting over toy models."""

from .decoding import DecodeConfig, DraftBlock, RunRecords, VerificationResult, decode_session
from .dist import Distribution, Rng, WeightVector
from .ensemble import Criterion, EnsembleDrafter, HistoryCache, WeightPolicy
from .metrics import LatencyModel, block_efficiency, expected_speedup
from .models import Context, DraftSource, KgramModel, Segment, Tag

__all__ = [
    "Context",
    "Criterion",
    "DecodeConfig",
    "Distribution",
    "DraftBlock",
    "DraftSource",
    "EnsembleDrafter",
    "HistoryCache",
    "KgramModel",
    "LatencyModel",
    "Rng",
    "RunRecords",
    "Segment",
    "Tag",
    "VerificationResult",
    "WeightPolicy",
    "WeightVector",
    "block_efficiency",
    "decode_session",
    "expected_speedup",
]
