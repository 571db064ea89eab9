"""Candidate scoring: combined factuality/faithfulness and winner selection.

A candidate correction is scored F = lambda * entailment + (1 - lambda) *
ROUGE-L, where entailment measures factual support by the retrieved
evidence and ROUGE-L measures how little the candidate strays from the
input claim. The argmax over candidates is the per-retriever winner.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

from .core import Claim, ScoringConfig, tokenize
from .correction import CandidateCorrection
from .errors import NoCandidates
from .retrieval import EvidenceSet

logger = logging.getLogger(__name__)


def lcs_length(a: list[str], b: list[str]) -> int:
    """Iterative LCS over token sequences (single rolling row)."""
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b, 1):
            if x == y:
                cur.append(prev[j - 1] + 1)
            else:
                cur.append(max(prev[j], cur[j - 1]))
        prev = cur
    return prev[len(b)]


def rouge_l(reference: str, candidate: str) -> float:
    """LCS-based F1 between two sentences, word-level.

    precision = LCS/|candidate|, recall = LCS/|reference|. Both sides
    empty scores 1.0, exactly one empty scores 0.0.
    """
    ref = tokenize(reference)
    cand = tokenize(candidate)
    if not ref and not cand:
        return 1.0
    if not ref or not cand:
        return 0.0
    lcs = lcs_length(ref, cand)
    if lcs == 0:
        return 0.0
    p = lcs / len(cand)
    r = lcs / len(ref)
    return 2 * p * r / (p + r)


def entailment(premise: str, hypothesis: str, client) -> float:
    """Probability that the premise entails the hypothesis, via /entail.

    Out-of-range service values are clamped to [0, 1] with a warning so the
    combined score keeps its range invariant.
    """
    response = client.call("ENTAIL", {"premise": premise, "hypothesis": hypothesis})
    value = float(response["entailment"])
    if not 0.0 <= value <= 1.0:
        logger.warning("entailment service returned %s; clamping to [0, 1]", value)
        value = min(1.0, max(0.0, value))
    return value


@dataclass(frozen=True)
class CorrectionScore:
    candidate: CandidateCorrection
    entailment: float
    rouge_l: float
    combined: float


def combine(lam: float, entail: float, rouge: float) -> float:
    return lam * entail + (1 - lam) * rouge


def score_candidates(
    claim: Claim,
    candidates: list[CandidateCorrection],
    evidence: EvidenceSet,
    cfg: ScoringConfig,
    client,
) -> list[CorrectionScore]:
    """Score every candidate against the claim and its evidence."""
    premise = "\n".join(item.text for item in evidence.items)
    scores = []
    for cand in candidates:
        e = entailment(premise, cand.text, client)
        r = rouge_l(claim.text, cand.text)
        scores.append(CorrectionScore(cand, e, r, combine(cfg.lam, e, r)))
    return scores


def select_winner(scores: list[CorrectionScore]) -> CorrectionScore:
    """Argmax of the combined score.

    Ties break by higher entailment, then higher ROUGE-L, then earliest
    candidate position, so the winner is stable under list permutation.
    """
    if not scores:
        raise NoCandidates("no candidate corrections to select from")
    best = scores[0]
    for s in scores[1:]:
        if (s.combined, s.entailment, s.rouge_l) > (best.combined, best.entailment, best.rouge_l):
            best = s
    return best


def score_and_select(
    claim: Claim,
    candidates: list[CandidateCorrection],
    evidence: EvidenceSet,
    cfg: ScoringConfig,
    client,
) -> tuple[CandidateCorrection, list[CorrectionScore]]:
    if not candidates:
        raise NoCandidates(f"claim {claim.id!r} produced no candidates")
    scores = score_candidates(claim, candidates, evidence, cfg, client)
    return select_winner(scores).candidate, scores
