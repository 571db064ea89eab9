"""Training-free fact correction with retrieval-grounded mask filling.

The pipeline masks suspect spans of a claim, retrieves evidence from an
indexed corpus under one or more retrievers, generates candidate
corrections through a generation endpoint, scores candidates by combined
entailment and edit-minimality, and (in ensemble mode) majority-votes the
per-retriever winners into a final corrected claim.
"""

from .backends import BackendClient, BackendProfile, Endpoint
from .core import (
    Claim,
    MaskedClaim,
    MaskingConfig,
    Mode,
    NormalizedText,
    PipelineConfig,
    RetrieverKind,
    RetrieverSpec,
    ScoringConfig,
    SpanCandidate,
    Strategy,
    normalize,
    tokenize,
)
from .correction import CandidateCorrection, PromptBundle, build_prompt, generate_correction
from .ensemble import EnsembleDecision, Vote, majority_vote
from .evaluation import EvalRecord, EvalReport, evaluate, ndcg_at_10, sari
from .masking import MaskSelection, build_masked_claims, extract_spans, mmr_select
from .pipeline import ClaimResult, Resources, run_claim, run_m2c_plus
from .retrieval import (
    CorpusDoc,
    EvidenceSet,
    InvertedIndex,
    bm25_search,
    dense_search,
    rerank,
    retrieve_evidence,
    rm3_search,
)
from .scoring import CorrectionScore, rouge_l, score_and_select

__version__ = "0.1.0"
