"""End-to-end claim processing for every pipeline mode.

A Resources bundle carries the shared backend client, the lexical index,
the dense store, and an optional external span provider. Masked variants
are computed once per claim and reused across retrievers (random masking
draws from a claim-local RNG, so reuse and recomputation agree); only the
evidence-dependent heuristic strategy re-masks per retriever. Per-claim
and per-retriever failures degrade (logged, recorded) rather than abort.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Optional

from .backends import BackendClient
from .core import (
    Claim,
    MaskedClaim,
    Mode,
    PipelineConfig,
    RetrieverKind,
    RetrieverSpec,
    Strategy,
)
from .correction import (
    CandidateCorrection,
    GenParams,
    Verdict,
    build_prompt,
    generate_correction,
    verify_claim,
)
from .ensemble import EnsembleDecision, Vote, build_tally, majority_vote
from .errors import AllBackendsFailed, FactfixError, NothingToMask
from .masking import build_masked_claims, extract_spans, mmr_select, similarity_for
from .retrieval import EmbeddingStore, EvidenceSet, InvertedIndex, retrieve_evidence, spec_for
from .scoring import CorrectionScore, score_and_select

logger = logging.getLogger(__name__)


@dataclass
class Resources:
    client: BackendClient
    index: Optional[InvertedIndex] = None
    store: Optional[EmbeddingStore] = None
    span_provider: Optional[Callable] = None
    gen_params: GenParams = field(default_factory=GenParams)


@dataclass(frozen=True)
class RetrieverResult:
    retriever: RetrieverKind
    winner: CandidateCorrection
    scores: tuple[CorrectionScore, ...]
    evidence: EvidenceSet
    fallback_used: bool


@dataclass(frozen=True)
class ClaimResult:
    claim_id: str
    input_text: str
    final_text: str
    mode: Mode
    per_retriever: tuple[RetrieverResult, ...] = ()
    decision: Optional[EnsembleDecision] = None
    verified_correct: bool = False
    backend_failures: tuple[str, ...] = ()

    @property
    def changed(self) -> bool:
        from .core import normalize

        return normalize(self.final_text).value != normalize(self.input_text).value

    @property
    def fallback_used(self) -> bool:
        return any(r.fallback_used for r in self.per_retriever)


def shared_masks(claim: Claim, cfg: PipelineConfig, res: Resources) -> Optional[list[MaskedClaim]]:
    """Masked variants that do not depend on retrieved evidence.

    Returns None for the evidence-dependent strategy (HM), which must be
    built per retriever; returns [] when there is nothing to mask.
    """
    mask_cfg = cfg.masking
    if mask_cfg.strategy == Strategy.HM:
        return None
    try:
        if mask_cfg.strategy in (Strategy.DM, Strategy.EM):
            spans = extract_spans(claim, res.span_provider)
            if mask_cfg.strategy == Strategy.DM:
                sim = similarity_for(claim, spans, mask_cfg, res.client)
                selection = mmr_select(claim, spans, mask_cfg, sim) if spans else []
                return build_masked_claims(claim, selection, mask_cfg)
            return build_masked_claims(claim, spans, mask_cfg)
        return build_masked_claims(claim, None, mask_cfg)
    except NothingToMask:
        logger.info("claim %s: nothing to mask; using the unmasked claim only", claim.id)
        return []


def _evidence_masks(claim: Claim, cfg: PipelineConfig, evidence: EvidenceSet) -> list[MaskedClaim]:
    try:
        return build_masked_claims(claim, None, cfg.masking, evidence)
    except NothingToMask:
        logger.info("claim %s: nothing to mask against evidence", claim.id)
        return []


def _passthrough(claim: Claim, retriever: Optional[RetrieverKind]) -> CandidateCorrection:
    return CandidateCorrection(
        claim.id, " ".join(claim.text.split()), None, retriever, raw_generation=""
    )


def run_m2c_for_retriever(
    claim: Claim,
    cfg: PipelineConfig,
    res: Resources,
    spec: RetrieverSpec,
    masks: Optional[list[MaskedClaim]] = None,
    evidence: Optional[EvidenceSet] = None,
) -> RetrieverResult:
    """One mask -> retrieve -> generate -> score pass for one retriever.

    The unmasked claim always enters scoring as the zeroth candidate, so an
    already-correct claim can win selection outright.
    """
    if evidence is None:
        evidence = retrieve_evidence(claim, spec, res.index, res.client, res.store)
    if masks is None:
        masks = _evidence_masks(claim, cfg, evidence)

    candidates = [_passthrough(claim, spec.kind)]
    fallback = False
    for masked in masks:
        bundle = build_prompt(claim, masked, evidence, Mode.M2C)
        cand = generate_correction(
            bundle, res.client, res.gen_params,
            claim=claim, masked=masked, retriever=spec.kind,
        )
        candidates.append(cand)
        fallback = fallback or cand.fallback

    winner, scores = score_and_select(claim, candidates, evidence, cfg.scoring, res.client)
    return RetrieverResult(spec.kind, winner, tuple(scores), evidence, fallback)


def run_m2c_plus(claim: Claim, cfg: PipelineConfig, res: Resources) -> tuple[EnsembleDecision, list[RetrieverResult], list[str]]:
    """Per-retriever correction followed by hard majority voting.

    A retriever whose backend fails contributes no vote; if fewer than
    three votes remain the single best-scoring winner is returned with
    tie_break_used flagged. Masking is computed once and shared.
    """
    masks = shared_masks(claim, cfg, res)
    votes: list[Vote] = []
    results: list[RetrieverResult] = []
    failures: list[str] = []
    for kind in cfg.ensemble.retrievers:
        spec = spec_for(kind, cfg.retrieval)
        try:
            result = run_m2c_for_retriever(claim, cfg, res, spec, masks)
        except FactfixError as exc:
            logger.warning("claim %s: retriever %s failed: %s", claim.id, kind.value, exc)
            failures.append(f"{kind.value}: {exc}")
            continue
        results.append(result)
        combined = max(s.combined for s in result.scores if s.candidate is result.winner)
        votes.append(Vote(kind, result.winner, combined))

    if not votes:
        raise AllBackendsFailed(f"claim {claim.id}: every retriever backend failed")
    if len(votes) >= 3:
        decision = majority_vote(votes, cfg.ensemble)
    else:
        best = max(votes, key=lambda v: v.combined_score)
        decision = EnsembleDecision(claim.id, best.candidate.text, build_tally(votes), True)
    return decision, results, failures


def run_claim(claim: Claim, cfg: PipelineConfig, res: Resources) -> ClaimResult:
    """Dispatch one claim through the configured mode."""
    if cfg.mode == Mode.ZERO_SHOT:
        bundle = build_prompt(claim, None, None, Mode.ZERO_SHOT)
        cand = generate_correction(bundle, res.client, res.gen_params, claim=claim)
        return ClaimResult(claim.id, claim.text, cand.text, cfg.mode)

    if cfg.mode == Mode.RAG:
        evidence = retrieve_evidence(claim, cfg.retrieval, res.index, res.client, res.store)
        bundle = build_prompt(claim, None, evidence, Mode.RAG)
        cand = generate_correction(
            bundle, res.client, res.gen_params, claim=claim, retriever=cfg.retrieval.kind
        )
        return ClaimResult(claim.id, claim.text, cand.text, cfg.mode)

    if cfg.mode == Mode.M2C_PLUS:
        decision, results, failures = run_m2c_plus(claim, cfg, res)
        return ClaimResult(
            claim.id, claim.text, decision.final_text, cfg.mode,
            tuple(results), decision, backend_failures=tuple(failures),
        )

    # M2C and M2C_WITH_VERIFY share the single-retriever path
    evidence = retrieve_evidence(claim, cfg.retrieval, res.index, res.client, res.store)
    if cfg.mode == Mode.M2C_WITH_VERIFY:
        if verify_claim(claim, evidence, res.client) == Verdict.CORRECT:
            return ClaimResult(
                claim.id, claim.text, " ".join(claim.text.split()), cfg.mode,
                verified_correct=True,
            )
    masks = shared_masks(claim, cfg, res)
    result = run_m2c_for_retriever(claim, cfg, res, cfg.retrieval, masks, evidence)
    return ClaimResult(claim.id, claim.text, result.winner.text, cfg.mode, (result,))
