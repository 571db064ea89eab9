"""Span extraction and mask construction for the four masking strategies.

RM hides random token positions, HM hides claim tokens missing from the
evidence, EM masks each extracted span, and DM runs a greedy relevance/
diversity re-ranking over the extracted spans before masking. The greedy
objective at step i is

    alpha * sim(claim, v) - (1 - alpha) * max_{s in selected} sim(v, s)

with the max over an empty selected set defined as 0, so the first pick is
the pure-relevance argmax.
"""

from __future__ import annotations

import hashlib
import logging
import math
import random
import re
from dataclasses import dataclass
from typing import Callable, Iterable, Optional

from .core import (
    MASK_TOKEN,
    Claim,
    MaskedClaim,
    MaskingConfig,
    SpanCandidate,
    SpanSource,
    Strategy,
    normalize,
    tokenize,
)
from .errors import EmptyClaim, MissingEvidence, NoCandidates, NothingToMask

logger = logging.getLogger(__name__)

SimilarityFn = Callable[[str, str], float]
SpanProvider = Callable[[str], list[SpanCandidate]]

STOPWORDS = frozenset(
    """a an the is are was were be been being am do does did done have has had
    of in on at by for with to from as and or but not no nor it its this that
    these those he she they them him his her hers their theirs we us our ours
    you your yours i me my mine about into over under between during after
    before above below up down out off through than then there here when
    where which who whom whose what why how all any both each few more most
    other some such only own same so too very can could will would shall
    should may might must if because while until again further once""".split()
)

_SEGMENT = re.compile(r"\S+")
_QUOTED = re.compile(r'"([^"]+)"|“([^”]+)”')


@dataclass(frozen=True)
class _Token:
    """A whitespace segment of the claim with its edge-trimmed core."""

    start: int
    end: int
    core_start: int
    core_end: int

    @property
    def has_core(self) -> bool:
        return self.core_end > self.core_start


def segment_tokens(text: str) -> list[_Token]:
    import unicodedata

    tokens = []
    for m in _SEGMENT.finditer(text):
        s, e = m.start(), m.end()
        cs, ce = s, e
        while cs < ce and unicodedata.category(text[cs]).startswith("P"):
            cs += 1
        while ce > cs and unicodedata.category(text[ce - 1]).startswith("P"):
            ce -= 1
        tokens.append(_Token(s, e, cs, ce))
    return tokens


def _core(text: str, tok: _Token) -> str:
    return text[tok.core_start : tok.core_end]


def heuristic_spans(text: str) -> list[SpanCandidate]:
    """Rule-based span candidates, deduplicated by character extent.

    (a) maximal runs of capitalized words (a lone sentence-initial stopword
        is capitalized by position, not by name, and is skipped);
    (b) runs of digit-bearing tokens (numbers, years, quantities);
    (c) double-quoted spans;
    (d) contiguous content-word chunks between stopwords.
    """
    tokens = [t for t in segment_tokens(text) if t.has_core]
    spans: dict[tuple[int, int], SpanCandidate] = {}

    def add(cs: int, ce: int, source: SpanSource):
        if ce <= cs:
            return
        key = (cs, ce)
        if key not in spans:
            spans[key] = SpanCandidate(cs, ce, text[cs:ce], source)

    def runs(pred):
        run: list[_Token] = []
        for tok in tokens:
            if pred(tok):
                run.append(tok)
            elif run:
                yield run
                run = []
        if run:
            yield run

    # (a) capitalized runs
    for run in runs(lambda t: _core(text, t)[0].isupper()):
        first = _core(text, run[0])
        if len(run) == 1 and run[0] is tokens[0] and first.lower() in STOPWORDS:
            continue
        add(run[0].core_start, run[-1].core_end, SpanSource.HEURISTIC)

    # (b) numeric/date runs
    for run in runs(lambda t: any(ch.isdigit() for ch in _core(text, t))):
        add(run[0].core_start, run[-1].core_end, SpanSource.HEURISTIC)

    # (c) quoted spans
    for m in _QUOTED.finditer(text):
        group = 1 if m.group(1) is not None else 2
        add(m.start(group), m.end(group), SpanSource.HEURISTIC)

    # (d) content chunks between stopwords
    for run in runs(lambda t: _core(text, t).lower() not in STOPWORDS):
        add(run[0].core_start, run[-1].core_end, SpanSource.HEURISTIC)

    return sorted(spans.values(), key=lambda s: (s.char_start, s.char_end))


def extract_spans(claim: Claim, provider: Optional[SpanProvider] = None) -> list[SpanCandidate]:
    """Candidate spans for a claim, from the built-in rules or a provider.

    Provider spans that do not match the claim text at their offsets are
    dropped with a warning rather than poisoning downstream masking.
    """
    if not claim.text.strip():
        raise EmptyClaim(f"claim {claim.id!r} has empty text")
    if provider is None:
        return heuristic_spans(claim.text)
    out: dict[tuple[int, int], SpanCandidate] = {}
    for span in provider(claim.text):
        if claim.text[span.char_start : span.char_end] != span.surface:
            logger.warning(
                "span provider offset mismatch for claim %s: %r", claim.id, span.surface
            )
            continue
        out.setdefault((span.char_start, span.char_end), span)
    return sorted(out.values(), key=lambda s: (s.char_start, s.char_end))


class CharNgramTfidfSimilarity:
    """Offline similarity: cosine over character-3-gram tf-idf vectors.

    The idf table is fitted on the texts registered at construction (the
    claim plus its candidate surfaces), smooth-idf style. Strings shorter
    than three characters fall back to a single whole-string gram.
    """

    def __init__(self, texts: Iterable[str], n: int = 3):
        self.n = n
        unique = list(dict.fromkeys(normalize(t).value for t in texts))
        self.num_docs = len(unique)
        df: dict[str, int] = {}
        for text in unique:
            for gram in set(self._grams(text)):
                df[gram] = df.get(gram, 0) + 1
        self._df = df
        self._cache: dict[str, dict[str, float]] = {}

    def _grams(self, text: str) -> list[str]:
        if len(text) < self.n:
            return [text] if text else []
        return [text[i : i + self.n] for i in range(len(text) - self.n + 1)]

    def _vector(self, raw: str) -> dict[str, float]:
        text = normalize(raw).value
        if text in self._cache:
            return self._cache[text]
        counts: dict[str, int] = {}
        for gram in self._grams(text):
            counts[gram] = counts.get(gram, 0) + 1
        vec = {}
        for gram, tf in counts.items():
            idf = math.log((1 + self.num_docs) / (1 + self._df.get(gram, 0))) + 1.0
            vec[gram] = tf * idf
        norm = math.sqrt(sum(w * w for w in vec.values()))
        if norm > 0:
            vec = {g: w / norm for g, w in vec.items()}
        self._cache[text] = vec
        return vec

    def __call__(self, a: str, b: str) -> float:
        va, vb = self._vector(a), self._vector(b)
        if len(vb) < len(va):
            va, vb = vb, va
        return sum(w * vb.get(g, 0.0) for g, w in va.items())


class EmbeddingSimilarity:
    """Cosine over vectors from the /embed endpoint, cached per text."""

    def __init__(self, client):
        self.client = client
        self._cache: dict[str, list[float]] = {}

    def _vector(self, text: str) -> list[float]:
        if text not in self._cache:
            response = self.client.call("EMBED", {"texts": [text]})
            self._cache[text] = [float(x) for x in response["vectors"][0]]
        return self._cache[text]

    def __call__(self, a: str, b: str) -> float:
        va, vb = self._vector(a), self._vector(b)
        dot = sum(x * y for x, y in zip(va, vb))
        na = math.sqrt(sum(x * x for x in va))
        nb = math.sqrt(sum(x * x for x in vb))
        if na == 0 or nb == 0:
            return 0.0
        return dot / (na * nb)


def similarity_for(claim: Claim, candidates: list[SpanCandidate], cfg: MaskingConfig, client=None) -> SimilarityFn:
    if cfg.similarity_provider == "EMBEDDING_CLIENT" and client is not None:
        return EmbeddingSimilarity(client)
    return CharNgramTfidfSimilarity([claim.text] + [c.surface for c in candidates])


@dataclass(frozen=True)
class MaskSelection:
    """Prioritized spans and the greedy objective value at each pick."""

    ordered_spans: tuple[SpanCandidate, ...]
    selection_scores: tuple[float, ...]


def mmr_select(
    claim: Claim,
    candidates: list[SpanCandidate],
    cfg: MaskingConfig,
    sim: SimilarityFn,
) -> MaskSelection:
    """Greedy relevance/diversity selection over candidate spans.

    Ties break by earlier char_start, then lexicographic surface, giving a
    total order. Pairwise similarities to the selected set are maintained
    incrementally; the selection equals exhaustive re-evaluation of the
    objective at every step.
    """
    if not candidates:
        raise NoCandidates(f"claim {claim.id!r} has no span candidates")
    pool = sorted(candidates, key=lambda s: (s.char_start, s.surface))
    relevance = [sim(claim.text, s.surface) for s in pool]
    max_sim = [0.0] * len(pool)
    remaining = list(range(len(pool)))
    alpha = cfg.alpha

    chosen: list[SpanCandidate] = []
    scores: list[float] = []
    while remaining and len(chosen) < cfg.max_masks:
        best_i = None
        best_score = None
        for i in remaining:
            score = alpha * relevance[i] - (1 - alpha) * max_sim[i]
            if best_score is None or score > best_score:
                best_i, best_score = i, score
        chosen.append(pool[best_i])
        scores.append(best_score)
        remaining.remove(best_i)
        for i in remaining:
            s = sim(pool[i].surface, pool[best_i].surface)
            if s > max_sim[i]:
                max_sim[i] = s
    return MaskSelection(tuple(chosen), tuple(scores))


def _mask_extents(text: str, extents: list[tuple[int, int]]) -> str:
    parts = []
    last = 0
    for cs, ce in extents:
        parts.append(text[last:cs])
        parts.append(MASK_TOKEN)
        last = ce
    parts.append(text[last:])
    return "".join(parts)


def _single_span_mask(claim: Claim, span: SpanCandidate, strategy: Strategy, rank: int) -> MaskedClaim:
    masked = claim.text[: span.char_start] + MASK_TOKEN + claim.text[span.char_end :]
    return MaskedClaim(claim.id, masked, span, strategy, rank)


def _claim_rng(cfg: MaskingConfig, claim: Claim) -> random.Random:
    digest = hashlib.sha256(f"{cfg.seed}:{claim.id}".encode("utf-8")).digest()
    return random.Random(int.from_bytes(digest[:8], "little"))


def build_masked_claims(
    claim: Claim,
    selection=None,
    cfg: MaskingConfig = MaskingConfig(),
    evidence=None,
) -> list[MaskedClaim]:
    """Produce masked variants of a claim under the configured strategy.

    DM/EM take spans (a MaskSelection or a span list) and emit one variant
    per span, up to max_masks. HM emits a single variant masking every
    claim token whose normalized form is absent from the evidence. RM emits
    a single variant masking ceil(rm_mask_ratio * token count) positions
    drawn from a claim-local seeded RNG.

    Raises NothingToMask when the strategy finds nothing to hide; the
    caller falls back to the unmasked claim.
    """
    strategy = cfg.strategy
    if strategy in (Strategy.DM, Strategy.EM):
        spans = list(selection.ordered_spans) if isinstance(selection, MaskSelection) else list(selection or [])
        if not spans:
            raise NothingToMask(f"claim {claim.id!r}: no spans to mask")
        spans = spans[: cfg.max_masks]
        return [_single_span_mask(claim, span, strategy, i + 1) for i, span in enumerate(spans)]

    tokens = [t for t in segment_tokens(claim.text) if t.has_core]
    if strategy == Strategy.HM:
        if evidence is None:
            raise MissingEvidence("HM masking requires evidence")
        evidence_tokens = set()
        for item in evidence.items:
            evidence_tokens.update(tokenize(item.text))
        absent = [
            t for t in tokens
            if normalize(claim.text[t.core_start : t.core_end]).value not in evidence_tokens
        ]
        if not absent:
            raise NothingToMask(f"claim {claim.id!r}: every token appears in the evidence")
        extents = [(t.core_start, t.core_end) for t in absent]
    elif strategy == Strategy.RM:
        if not tokens:
            raise NothingToMask(f"claim {claim.id!r}: no tokens")
        k = math.ceil(cfg.rm_mask_ratio * len(tokens))
        rng = _claim_rng(cfg, claim)
        picked = sorted(rng.sample(range(len(tokens)), k))
        extents = [(tokens[i].core_start, tokens[i].core_end) for i in picked]
    else:
        raise ValueError(f"unknown strategy {strategy}")

    masked_spans = tuple(
        SpanCandidate(cs, ce, claim.text[cs:ce], SpanSource.HEURISTIC) for cs, ce in extents
    )
    masked_text = _mask_extents(claim.text, extents)
    return [MaskedClaim(claim.id, masked_text, masked_spans[0], strategy, 1, masked_spans)]
