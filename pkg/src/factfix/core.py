"""Domain types, configuration, and deterministic text normalization.

Everything downstream (masking, retrieval, scoring, voting) builds on the
two text primitives defined here: :func:`normalize` for equality-style
comparisons and :func:`tokenize` for word-level metrics. Both are pure,
deterministic, and intentionally simple so that every metric in the test
suite is reproducible without a learned tokenizer.
"""

from __future__ import annotations

import json
import unicodedata
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterator, Optional

from .errors import EmptyClaim


class Label(str, Enum):
    SUPPORTED = "SUPPORTED"
    REFUTED = "REFUTED"
    UNKNOWN = "UNKNOWN"


class Mode(str, Enum):
    """Pipeline operating modes, from bare prompting to the full ensemble."""

    ZERO_SHOT = "ZERO_SHOT"
    RAG = "RAG"
    M2C = "M2C"
    M2C_WITH_VERIFY = "M2C_WITH_VERIFY"
    M2C_PLUS = "M2C_PLUS"


class Strategy(str, Enum):
    """Masking strategies: random, heuristic, entity, diversity-aware."""

    RM = "RM"
    HM = "HM"
    EM = "EM"
    DM = "DM"


class SpanSource(str, Enum):
    NER = "NER"
    PHRASE = "PHRASE"
    HEURISTIC = "HEURISTIC"
    EXTERNAL = "EXTERNAL"


MASK_TOKEN = "[MASK]"


@dataclass(frozen=True)
class Claim:
    """An input sentence to be verified and, if needed, corrected."""

    id: str
    text: str
    gold_correction: Optional[str] = None
    gold_evidence: Optional[tuple[str, ...]] = None
    label: Optional[Label] = None

    def __post_init__(self):
        if not self.text.strip():
            raise EmptyClaim(f"claim {self.id!r} has empty text")


@dataclass(frozen=True, order=True)
class SpanCandidate:
    """A candidate span of the claim text, addressed by character offsets."""

    char_start: int
    char_end: int
    surface: str
    source: SpanSource = SpanSource.HEURISTIC

    def __post_init__(self):
        if self.char_start < 0 or self.char_end <= self.char_start:
            raise ValueError(f"bad span offsets [{self.char_start}, {self.char_end})")


@dataclass(frozen=True)
class MaskedClaim:
    """A claim with one or more spans replaced by the mask token.

    ``masked_span`` is the primary (first) masked span; multi-mask variants
    (RM, and HM when several tokens are absent) carry the full provenance in
    ``masked_spans`` so the original text can be reconstructed by replacing
    the i-th mask with the i-th span surface.
    """

    claim_id: str
    masked_text: str
    masked_span: SpanCandidate
    strategy: Strategy
    rank: int = 1
    masked_spans: tuple[SpanCandidate, ...] = ()

    def __post_init__(self):
        if self.rank < 1:
            raise ValueError("rank must be >= 1")
        if not self.masked_spans:
            object.__setattr__(self, "masked_spans", (self.masked_span,))

    def reconstruct(self) -> str:
        """Replace each mask, left to right, with its original surface."""
        text = self.masked_text
        for span in self.masked_spans:
            text = text.replace(MASK_TOKEN, span.surface, 1)
        return text


@dataclass(frozen=True)
class NormalizedText:
    """Canonical surface form used for vote equality and n-gram metrics."""

    value: str


_TERMINAL_PUNCT = ".!?"


def normalize(text: str) -> NormalizedText:
    """Lowercase, collapse whitespace, trim, and strip terminal . ! ?

    Idempotent and deterministic. Only sentence-final punctuation is
    removed so entity-internal punctuation ("U.S.") survives mid-string.
    """
    value = " ".join(text.split()).lower().rstrip(_TERMINAL_PUNCT).rstrip()
    return NormalizedText(value)


def _is_punct(ch: str) -> bool:
    return unicodedata.category(ch).startswith("P")


def _strip_edge_punct(token: str) -> str:
    start, end = 0, len(token)
    while start < end and _is_punct(token[start]):
        start += 1
    while end > start and _is_punct(token[end - 1]):
        end -= 1
    return token[start:end]


def tokenize(text: str) -> list[str]:
    """Split normalized text on whitespace, stripping edge punctuation.

    Internal punctuation is preserved ("blood-oxygen", "15,882,417");
    tokens that are pure punctuation vanish. tokenize("") == [].
    """
    tokens = []
    for raw in normalize(text).value.split():
        token = _strip_edge_punct(raw)
        if token:
            tokens.append(token)
    return tokens


@dataclass(frozen=True)
class MaskingConfig:
    """Knobs for span selection and mask construction.

    ``alpha`` trades relevance against diversity in the greedy selector
    (1.0 = pure relevance); ``max_masks`` caps how many masked variants a
    claim produces; ``rm_mask_ratio`` is the fraction of tokens hidden by
    random masking; ``seed`` feeds the claim-local RNG for RM.
    """

    strategy: Strategy = Strategy.DM
    alpha: float = 0.3
    max_masks: int = 10
    rm_mask_ratio: float = 0.15
    similarity_provider: str = "CHAR_NGRAM_TFIDF"  # or "EMBEDDING_CLIENT"
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must be in [0, 1]")
        if self.max_masks < 1:
            raise ValueError("max_masks must be >= 1")
        if not 0.0 < self.rm_mask_ratio < 1.0:
            raise ValueError("rm_mask_ratio must be in (0, 1)")
        if self.similarity_provider not in ("EMBEDDING_CLIENT", "CHAR_NGRAM_TFIDF"):
            raise ValueError(f"unknown similarity provider {self.similarity_provider!r}")


@dataclass(frozen=True)
class Bm25Params:
    k1: float = 0.9
    b: float = 0.4

    def __post_init__(self):
        if self.k1 <= 0:
            raise ValueError("k1 must be > 0")
        if not 0.0 <= self.b <= 1.0:
            raise ValueError("b must be in [0, 1]")


@dataclass(frozen=True)
class Rm3Params:
    fb_docs: int = 10
    fb_terms: int = 10
    orig_weight: float = 0.5

    def __post_init__(self):
        if self.fb_docs < 0 or self.fb_terms < 0:
            raise ValueError("feedback counts must be >= 0")
        if not 0.0 <= self.orig_weight <= 1.0:
            raise ValueError("orig_weight must be in [0, 1]")


class RetrieverKind(str, Enum):
    BM25 = "BM25"
    RM3 = "RM3"
    DENSE = "DENSE"
    RERANK = "RERANK"


@dataclass(frozen=True)
class RetrieverSpec:
    """One retriever configuration: kind plus its scoring parameters.

    ``pool_size`` is the first-stage candidate pool (feeds the reranker);
    ``context_size`` is p, the number of evidence sentences prompted with.
    """

    kind: RetrieverKind = RetrieverKind.BM25
    bm25: Bm25Params = field(default_factory=Bm25Params)
    rm3: Rm3Params = field(default_factory=Rm3Params)
    pool_size: int = 50
    context_size: int = 3

    def __post_init__(self):
        if self.context_size < 1:
            raise ValueError("context_size must be >= 1")
        if self.pool_size < self.context_size:
            raise ValueError("pool_size must be >= context_size")


@dataclass(frozen=True)
class ScoringConfig:
    """Weight for the factuality/faithfulness trade-off."""

    lam: float = 0.5
    entailment_backend: str = "STUB"  # or "ENTAIL_CLIENT"

    def __post_init__(self):
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError("lambda must be in [0, 1]")


class TieBreak(str, Enum):
    BY_SCORE = "BY_SCORE"
    BY_PRIORITY = "BY_PRIORITY"


@dataclass(frozen=True)
class EnsembleConfig:
    """Which retrievers vote, and how group ties are resolved.

    Majority voting needs at least three voters to be meaningful, so
    shorter retriever lists are rejected outright.
    """

    retrievers: tuple[RetrieverKind, ...] = (
        RetrieverKind.BM25,
        RetrieverKind.DENSE,
        RetrieverKind.RERANK,
        RetrieverKind.RM3,
    )
    tie_break: TieBreak = TieBreak.BY_SCORE

    def __post_init__(self):
        if len(self.retrievers) < 3:
            raise ValueError("ensemble requires at least three retrievers")


@dataclass(frozen=True)
class PipelineConfig:
    """Full pipeline configuration; nested configs validate themselves."""

    masking: MaskingConfig = field(default_factory=MaskingConfig)
    retrieval: RetrieverSpec = field(default_factory=RetrieverSpec)
    scoring: ScoringConfig = field(default_factory=ScoringConfig)
    ensemble: EnsembleConfig = field(default_factory=EnsembleConfig)
    mode: Mode = Mode.M2C


def read_claims(path) -> Iterator[Claim]:
    """Stream claims from a JSON Lines file (keys: id, claim, optional
    gold_correction, gold_evidence, label)."""
    seen: set[str] = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            cid = str(obj["id"])
            if cid in seen:
                raise ValueError(f"duplicate claim id {cid!r} at line {lineno}")
            seen.add(cid)
            gold_ev = obj.get("gold_evidence")
            yield Claim(
                id=cid,
                text=obj["claim"],
                gold_correction=obj.get("gold_correction"),
                gold_evidence=tuple(gold_ev) if gold_ev else None,
                label=Label(obj["label"]) if obj.get("label") else None,
            )
