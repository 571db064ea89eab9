"""Hard majority voting over per-retriever winning corrections.

Votes are grouped by normalized surface form (case, whitespace, and
terminal punctuation do not split a group). The group with the most votes
wins; its emitted text is the member with the highest combined score, so
the final answer keeps a real candidate's casing and punctuation. Group
ties resolve by configured policy: BY_SCORE hands the win to the group
holding the single best-scoring member, BY_PRIORITY to the group whose
member's retriever appears earliest in the configured order.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

from .core import EnsembleConfig, RetrieverKind, TieBreak, normalize
from .correction import CandidateCorrection
from .errors import NoWinners

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Vote:
    retriever: RetrieverKind
    candidate: CandidateCorrection
    combined_score: float


@dataclass(frozen=True)
class VoteGroup:
    text: str  # normalized form shared by the group
    count: int
    members: tuple[Vote, ...]

    @property
    def best_score(self) -> float:
        return max(v.combined_score for v in self.members)


@dataclass(frozen=True)
class EnsembleDecision:
    claim_id: str
    final_text: str
    tally: tuple[VoteGroup, ...]
    tie_break_used: bool

    def to_json(self) -> dict:
        return {
            "claim_id": self.claim_id,
            "final_text": self.final_text,
            "tally": [
                {
                    "text": g.text,
                    "count": g.count,
                    "members": [
                        {
                            "retriever": v.retriever.value,
                            "text": v.candidate.text,
                            "score": v.combined_score,
                        }
                        for v in g.members
                    ],
                }
                for g in self.tally
            ],
            "tie_break_used": self.tie_break_used,
        }


def _priority(vote: Vote, cfg: EnsembleConfig) -> int:
    try:
        return cfg.retrievers.index(vote.retriever)
    except ValueError:
        return len(cfg.retrievers)


def _surface_of(group: VoteGroup, cfg: EnsembleConfig) -> str:
    best = max(
        enumerate(group.members),
        key=lambda iv: (iv[1].combined_score, -_priority(iv[1], cfg), -iv[0]),
    )[1]
    return best.candidate.text


def build_tally(votes: list[Vote]) -> tuple[VoteGroup, ...]:
    groups: dict[str, list[Vote]] = {}
    for vote in votes:
        groups.setdefault(normalize(vote.candidate.text).value, []).append(vote)
    ordered = sorted(groups.items(), key=lambda kv: (-len(kv[1]), kv[0]))
    return tuple(VoteGroup(text, len(members), tuple(members)) for text, members in ordered)


def majority_vote(votes: list[Vote], cfg: EnsembleConfig) -> "EnsembleDecision":
    """Pick the most-voted correction; see module docstring for ties."""
    if not votes:
        raise NoWinners("no votes to tally")
    tally = build_tally(votes)
    top_count = tally[0].count
    tied = [g for g in tally if g.count == top_count]
    if len(tied) == 1:
        winner, tie_break_used = tied[0], False
    else:
        tie_break_used = True
        if cfg.tie_break == TieBreak.BY_SCORE:
            winner = max(tied, key=lambda g: (g.best_score, -min(_priority(v, cfg) for v in g.members)))
        else:
            winner = min(tied, key=lambda g: min(_priority(v, cfg) for v in g.members))
    claim_id = votes[0].candidate.claim_id
    return EnsembleDecision(claim_id, _surface_of(winner, cfg), tally, tie_break_used)
