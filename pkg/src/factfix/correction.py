"""Prompt assembly, generation calls, and candidate sanitization.

Prompt construction is a pure function: the instruction template is picked
by mode, evidence is rendered as a numbered block, and the test instance
carries the claim (plus the masked claim for mask-filling modes) with a
trailing answer marker. Completions are parsed defensively: take the text
after the last answer marker if present, otherwise the first non-empty
line; unquote; collapse to a single line. A completion that still carries
a mask literal gets one corrective retry, then the original claim is
passed through unchanged.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass
from enum import Enum
from typing import Optional

from .core import MASK_TOKEN, Claim, MaskedClaim, Mode, RetrieverKind
from .errors import MissingEvidence, MissingMask
from .retrieval import EvidenceSet

logger = logging.getLogger(__name__)

OUTPUT_MARKER = "Output Correction:"

RAG_INSTRUCTIONS = (
    "Given a claim and related evidence, your task is to correct it if the claim "
    "is not supported by the given evidence. If the input claim is correct, do "
    "not edit it and give the input claim as output. Your output claim should be "
    "faithful to the evidence and should not deviate much from the input claim. "
    "Do not print anything else in the output except the corrected claim. "
    "Strictly follow the syntax given below for output syntax:\n"
    "Input Claim: [sentence]\n"
    "Evidence: [document]\n"
    "Output Correction: [sentence]"
)

ZERO_SHOT_INSTRUCTIONS = (
    "Given a claim, your task is to correct it if the claim is not factually "
    "accurate. If the input claim is correct, do not edit it and give the input "
    "claim as output. Your output claim should not deviate much from the input "
    "claim. Do not print anything else in the output except the corrected claim. "
    "Strictly follow the syntax given below for output syntax:\n"
    "Input Claim: [sentence]\n"
    "Output Correction: [sentence]"
)

MASK_FILL_INSTRUCTIONS = (
    "Your task is to correct a claim by filling in the [MASK] using the provided "
    "input evidence, ensuring that the corrected claim is supported by the "
    "evidence and only differs from the input claim in the masked positions. If "
    "the input claim is correct, do not edit it and give the input claim as "
    "output. Your output claim should be faithful to the provided evidence and "
    "should not deviate much from the input claim.\n"
    "Please use the most relevant evidence to correct the claim. The corrected "
    "claim shouldn't contain any [MASK].\n"
    "\n"
    "Input Claim: [sentence]\n"
    "Evidence: [document]\n"
    "Masked Claim: [masked sentence]\n"
    "Output Correction: [sentence]"
)

VERIFY_INSTRUCTIONS = (
    "Decide whether the claim is supported by the evidence. "
    "Answer with SUPPORTED or REFUTED only."
)


@dataclass(frozen=True)
class PromptBundle:
    system_instructions: str
    evidence_block: str
    test_block: str
    mode: Mode

    def render(self) -> str:
        blocks = [self.system_instructions]
        if self.evidence_block:
            blocks.append(self.evidence_block)
        blocks.append(self.test_block)
        return "\n\n".join(blocks)


def render_evidence_block(evidence: Optional[EvidenceSet]) -> str:
    """Numbered evidence lines in retrieval order; '(none)' when empty."""
    if evidence is None or not evidence.items:
        return "Evidence: (none)"
    return "\n".join(f"[{i}.] {item.text}" for i, item in enumerate(evidence.items, 1))


def build_prompt(
    claim: Claim,
    masked: Optional[MaskedClaim] = None,
    evidence: Optional[EvidenceSet] = None,
    mode: Mode = Mode.M2C,
) -> PromptBundle:
    """Assemble the prompt for one generation call. Deterministic."""
    if mode == Mode.ZERO_SHOT:
        return PromptBundle(
            ZERO_SHOT_INSTRUCTIONS,
            "",
            f"Input Claim: {claim.text}\n{OUTPUT_MARKER}",
            mode,
        )
    if mode == Mode.RAG:
        if evidence is None:
            raise MissingEvidence("RAG prompts require an evidence set")
        return PromptBundle(
            RAG_INSTRUCTIONS,
            render_evidence_block(evidence),
            f"Input Claim: {claim.text}\n{OUTPUT_MARKER}",
            mode,
        )
    if masked is None:
        raise MissingMask(f"{mode.value} prompts require a masked claim")
    if evidence is None:
        raise MissingEvidence(f"{mode.value} prompts require an evidence set")
    return PromptBundle(
        MASK_FILL_INSTRUCTIONS,
        render_evidence_block(evidence),
        f"Input Claim: {claim.text}\nMasked Claim: {masked.masked_text}\n{OUTPUT_MARKER}",
        mode,
    )


@dataclass(frozen=True)
class CandidateCorrection:
    """One sanitized candidate: never multi-line, never mask-bearing."""

    claim_id: str
    text: str
    source_mask: Optional[MaskedClaim] = None
    retriever: Optional[RetrieverKind] = None
    raw_generation: str = ""
    fallback: bool = False

    def __post_init__(self):
        if MASK_TOKEN in self.text:
            raise ValueError("candidate text carries a mask literal")
        if "\n" in self.text:
            raise ValueError("candidate text must be a single line")


@dataclass(frozen=True)
class GenParams:
    max_tokens: int = 128
    temperature: float = 0.0


_QUOTE_PAIRS = [('"', '"'), ("'", "'"), ("“", "”")]


def parse_generation(raw: str) -> str:
    """Extract the corrected sentence from a raw completion."""
    text = raw
    if OUTPUT_MARKER in text:
        text = text.rsplit(OUTPUT_MARKER, 1)[1]
    for line in text.splitlines() or [""]:
        if line.strip():
            text = line
            break
    else:
        text = ""
    text = " ".join(text.split())
    for opener, closer in _QUOTE_PAIRS:
        if len(text) >= 2 and text.startswith(opener) and text.endswith(closer):
            text = text[1:-1].strip()
            break
    return text


def generate_correction(
    bundle: PromptBundle,
    client,
    params: GenParams = GenParams(),
    *,
    claim: Claim,
    masked: Optional[MaskedClaim] = None,
    retriever: Optional[RetrieverKind] = None,
) -> CandidateCorrection:
    """Call /generate and sanitize the completion into a candidate.

    If the parsed completion still contains a mask literal, the call is
    retried once with an appended reminder; a second failure falls back to
    the unmasked original claim (logged, never fatal).
    """
    prompt = bundle.render()
    response = client.call("GENERATE", {
        "prompt": prompt,
        "max_tokens": params.max_tokens,
        "temperature": params.temperature,
    })
    raw = response["text"]
    text = parse_generation(raw)
    if MASK_TOKEN in text:
        retry_prompt = prompt + f"\nThe corrected claim must not contain {MASK_TOKEN}."
        response = client.call("GENERATE", {
            "prompt": retry_prompt,
            "max_tokens": params.max_tokens,
            "temperature": params.temperature,
        })
        raw = response["text"]
        text = parse_generation(raw)
    fallback = MASK_TOKEN in text or not text
    if fallback:
        logger.info("claim %s: malformed generation, falling back to input", claim.id)
        text = " ".join(claim.text.split())
    return CandidateCorrection(claim.id, text, masked, retriever, raw, fallback)


class Verdict(str, Enum):
    CORRECT = "CORRECT"
    INCORRECT = "INCORRECT"


_AFFIRMATIVE = re.compile(r"^\s*(SUPPORTED|CORRECT|TRUE|YES)\b", re.IGNORECASE)


def verify_claim(claim: Claim, evidence: EvidenceSet, client) -> Verdict:
    """Binary pre-check; anything not clearly affirmative fails toward
    correction, including a downed generation service."""
    prompt = (
        f"{VERIFY_INSTRUCTIONS}\n\n"
        f"{render_evidence_block(evidence)}\n\n"
        f"Claim: {claim.text}\nAnswer:"
    )
    try:
        response = client.call("GENERATE", {"prompt": prompt, "max_tokens": 8, "temperature": 0.0})
    except Exception as exc:
        logger.warning("claim %s: verification unavailable (%s); correcting", claim.id, exc)
        return Verdict.INCORRECT
    answer = parse_generation(response.get("text", ""))
    return Verdict.CORRECT if _AFFIRMATIVE.match(answer) else Verdict.INCORRECT
