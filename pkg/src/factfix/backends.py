"""Client layer for the model endpoints, plus in-process deterministic stubs.

One shim base URL serves five JSON-over-HTTP endpoints (/embed, /entail,
/generate, /rerank, /spans). Transport failures and 5xx responses are
retried with exponential backoff; schema violations are never retried.
With ``stub_mode`` (or a per-endpoint override) requests short-circuit to
pure functions of (payload, seed), so the whole pipeline runs offline and
bit-reproducibly.

Stub behaviors, exactly as implemented:

* EMBED: each token hashes to a fixed 32-d vector (blake2b of
  "seed:token" read as signed 16-bit lanes, unit-normalized); a text is
  the unit-normalized sum of its token vectors, zeros if empty.
* ENTAIL: 1.0 when the hypothesis token set is contained in the premise
  token set, 0.5 when the premise is empty, else the fraction of
  hypothesis tokens that appear in the premise.
* RERANK: each doc scores the fraction of query tokens it contains.
* SPANS: the built-in heuristic span rules.
* GENERATE: parses the prompt. Verification prompts answer SUPPORTED when
  all claim tokens appear in the evidence, else REFUTED. Mask-filling
  prompts replace every mask with the evidence token window (length up to
  the number of hidden tokens) that shares the most tokens with the hidden
  content, preferring higher overlap, then longer windows, then earlier
  evidence, then earlier position; with no overlapping window the leading
  tokens of the first evidence are used, and with no evidence the input
  claim is echoed. Prompts without a masked claim echo the input claim.
"""

from __future__ import annotations

import hashlib
import logging
import math
import re
import struct
import threading
import time
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Optional

from .core import MASK_TOKEN, tokenize
from .errors import (
    EmbeddingServiceUnavailable,
    EntailmentServiceUnavailable,
    GenerationServiceUnavailable,
    MalformedResponse,
    RerankServiceUnavailable,
    SpanProviderUnavailable,
)

logger = logging.getLogger(__name__)


class Endpoint(str, Enum):
    EMBED = "EMBED"
    ENTAIL = "ENTAIL"
    GENERATE = "GENERATE"
    RERANK = "RERANK"
    SPANS = "SPANS"


ENDPOINT_PATHS = {
    Endpoint.EMBED: "/embed",
    Endpoint.ENTAIL: "/entail",
    Endpoint.GENERATE: "/generate",
    Endpoint.RERANK: "/rerank",
    Endpoint.SPANS: "/spans",
}

_UNAVAILABLE = {
    Endpoint.EMBED: EmbeddingServiceUnavailable,
    Endpoint.ENTAIL: EntailmentServiceUnavailable,
    Endpoint.GENERATE: GenerationServiceUnavailable,
    Endpoint.RERANK: RerankServiceUnavailable,
    Endpoint.SPANS: SpanProviderUnavailable,
}


@dataclass(frozen=True)
class BackendProfile:
    """Connection settings shared by all endpoints of one shim."""

    base_url: str = ""
    timeout_ms: int = 30000
    max_in_flight: int = 4
    retry_attempts: int = 3
    retry_backoff_ms: int = 100
    stub_mode: bool = True
    stub_seed: int = 0
    stub_endpoints: frozenset[Endpoint] = frozenset()

    def __post_init__(self):
        if self.retry_attempts < 1:
            raise ValueError("retry attempts must be >= 1")
        if self.max_in_flight < 1:
            raise ValueError("max_in_flight must be >= 1")

    def is_stubbed(self, endpoint: Endpoint) -> bool:
        return self.stub_mode or endpoint in self.stub_endpoints


EMBED_DIM = 32


def _token_vector(seed: int, token: str) -> list[float]:
    digest = hashlib.blake2b(f"{seed}:{token}".encode("utf-8"), digest_size=EMBED_DIM * 2).digest()
    lanes = struct.unpack(f"<{EMBED_DIM}h", digest)
    vec = [x / 32768.0 for x in lanes]
    norm = math.sqrt(sum(x * x for x in vec))
    return [x / norm for x in vec] if norm else vec


def stub_embed(texts: list[str], seed: int) -> list[list[float]]:
    out = []
    for text in texts:
        acc = [0.0] * EMBED_DIM
        for token in tokenize(text):
            for i, x in enumerate(_token_vector(seed, token)):
                acc[i] += x
        norm = math.sqrt(sum(x * x for x in acc))
        out.append([x / norm for x in acc] if norm else acc)
    return out


def stub_entail(premise: str, hypothesis: str) -> float:
    prem = set(tokenize(premise))
    hyp = set(tokenize(hypothesis))
    if not prem:
        return 0.5
    if not hyp or hyp <= prem:
        return 1.0
    return len(hyp & prem) / len(hyp)


def stub_rerank(query: str, docs: list[str]) -> list[float]:
    qtokens = set(tokenize(query))
    if not qtokens:
        return [0.0] * len(docs)
    return [len(qtokens & set(tokenize(doc))) / len(qtokens) for doc in docs]


def stub_spans(text: str) -> list[dict]:
    from .masking import heuristic_spans

    return [
        {"surface": s.surface, "start": s.char_start, "end": s.char_end}
        for s in heuristic_spans(text)
    ]


VERIFY_MARKER = "Answer with SUPPORTED or REFUTED"
_EVIDENCE_LINE = re.compile(r"^\[\d+\.\]\s*(.*)$", re.MULTILINE)


def _last_field(prompt: str, label: str) -> Optional[str]:
    matches = re.findall(rf"^{re.escape(label)}:\s*(.*)$", prompt, re.MULTILINE)
    return matches[-1].strip() if matches else None


def _windows(text: str):
    """Edge-punctuation-trimmed extents of each whitespace segment."""
    from .masking import segment_tokens

    return [(t.core_start, t.core_end) for t in segment_tokens(text) if t.has_core]


def stub_generate(prompt: str) -> str:
    claim = _last_field(prompt, "Input Claim") or _last_field(prompt, "Claim") or ""
    evidence = [m.strip() for m in _EVIDENCE_LINE.findall(prompt) if m.strip()]

    if VERIFY_MARKER in prompt:
        evidence_tokens = set()
        for text in evidence:
            evidence_tokens.update(tokenize(text))
        supported = bool(claim) and set(tokenize(claim)) <= evidence_tokens
        return "SUPPORTED" if supported else "REFUTED"

    masked = _last_field(prompt, "Masked Claim")
    if not masked or MASK_TOKEN not in masked:
        return claim

    from collections import Counter

    hidden = Counter(tokenize(claim)) - Counter(tokenize(masked.replace(MASK_TOKEN, " ")))
    hidden_set = set(hidden)
    max_len = max(1, sum(hidden.values()))

    best = None  # (overlap, length, -evidence_idx, -start) maximized
    for ev_idx, text in enumerate(evidence):
        segments = _windows(text)
        for i in range(len(segments)):
            for j in range(i, min(i + max_len, len(segments))):
                start, end = segments[i][0], segments[j][1]
                window = text[start:end]
                overlap = len(set(tokenize(window)) & hidden_set)
                key = (overlap, j - i + 1, -ev_idx, -start)
                if best is None or key > best[0]:
                    best = (key, window)
    if best is None:
        return claim
    (overlap, _, _, _), window = best
    if overlap == 0:
        lead = _windows(evidence[0])[: min(max_len, 3)]
        window = evidence[0][lead[0][0] : lead[-1][1]]
    return " ".join(masked.replace(MASK_TOKEN, window).split())


class BackendClient:
    """Shared client for all endpoints; safe for concurrent use.

    ``transport(url, payload, timeout_s)`` must return (status, json_obj)
    or raise OSError-like exceptions for transport faults; it is injectable
    for tests. ``sleep`` is injectable to assert the backoff schedule.
    """

    def __init__(
        self,
        profile: BackendProfile = BackendProfile(),
        transport: Optional[Callable] = None,
        sleep: Callable[[float], None] = time.sleep,
    ):
        self.profile = profile
        self.transport = transport or _requests_transport
        self.sleep = sleep
        self._limiters = {ep: threading.Semaphore(profile.max_in_flight) for ep in Endpoint}

    def call(self, endpoint, payload: dict) -> dict:
        endpoint = Endpoint(endpoint)
        if self.profile.is_stubbed(endpoint):
            return self._stub_call(endpoint, payload)
        return self._http_call(endpoint, payload)

    def _stub_call(self, endpoint: Endpoint, payload: dict) -> dict:
        seed = self.profile.stub_seed
        if endpoint == Endpoint.EMBED:
            return {"vectors": stub_embed(payload["texts"], seed)}
        if endpoint == Endpoint.ENTAIL:
            return {"entailment": stub_entail(payload["premise"], payload["hypothesis"])}
        if endpoint == Endpoint.GENERATE:
            return {"text": stub_generate(payload["prompt"])}
        if endpoint == Endpoint.RERANK:
            return {"scores": stub_rerank(payload["query"], payload["docs"])}
        if endpoint == Endpoint.SPANS:
            return {"spans": stub_spans(payload["text"])}
        raise ValueError(f"unknown endpoint {endpoint}")

    def _http_call(self, endpoint: Endpoint, payload: dict) -> dict:
        url = self.profile.base_url.rstrip("/") + ENDPOINT_PATHS[endpoint]
        timeout_s = self.profile.timeout_ms / 1000.0
        attempts = self.profile.retry_attempts
        last_error = ""
        for attempt in range(attempts):
            if attempt:
                self.sleep(self.profile.retry_backoff_ms * 2 ** (attempt - 1) / 1000.0)
            try:
                with self._limiters[endpoint]:
                    status, body = self.transport(url, payload, timeout_s)
            except MalformedResponse:
                raise
            except Exception as exc:  # transport fault: retry
                last_error = str(exc)
                logger.warning("%s attempt %d/%d failed: %s", endpoint.value, attempt + 1, attempts, exc)
                continue
            if 200 <= status < 300:
                self._validate(endpoint, payload, body)
                return body
            if 500 <= status < 600:
                last_error = f"HTTP {status}"
                logger.warning("%s attempt %d/%d: HTTP %d", endpoint.value, attempt + 1, attempts, status)
                continue
            raise _UNAVAILABLE[endpoint](f"HTTP {status}")
        raise _UNAVAILABLE[endpoint](last_error)

    @staticmethod
    def _validate(endpoint: Endpoint, payload: dict, body: dict):
        try:
            if endpoint == Endpoint.EMBED:
                vectors = body["vectors"]
                assert isinstance(vectors, list) and len(vectors) == len(payload["texts"])
                assert all(isinstance(v, list) for v in vectors)
            elif endpoint == Endpoint.ENTAIL:
                float(body["entailment"])
            elif endpoint == Endpoint.GENERATE:
                assert isinstance(body["text"], str)
            elif endpoint == Endpoint.RERANK:
                scores = body["scores"]
                assert isinstance(scores, list)
                [float(s) for s in scores]
            elif endpoint == Endpoint.SPANS:
                for span in body["spans"]:
                    assert isinstance(span["surface"], str)
                    int(span["start"]), int(span["end"])
        except (KeyError, AssertionError, TypeError, ValueError) as exc:
            raise MalformedResponse(endpoint.value.lower(), repr(exc)) from exc


def _requests_transport(url: str, payload: dict, timeout_s: float):
    import requests

    response = requests.post(url, json=payload, timeout=timeout_s)
    try:
        body = response.json() if response.content else {}
    except ValueError as exc:
        raise MalformedResponse(url, "response is not JSON") from exc
    return response.status_code, body


def external_span_provider(client: BackendClient):
    """Adapter turning /spans responses into SpanCandidate lists."""
    from .core import SpanCandidate, SpanSource

    def provider(text: str):
        response = client.call(Endpoint.SPANS, {"text": text})
        return [
            SpanCandidate(int(s["start"]), int(s["end"]), s["surface"], SpanSource.EXTERNAL)
            for s in response["spans"]
        ]

    return provider
