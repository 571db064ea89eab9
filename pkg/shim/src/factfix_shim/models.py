"""Model wrappers: lazy-loaded, lock-serialized, micro-batched inference.

Each wrapper loads its checkpoint once at startup; a load failure leaves
the wrapper unavailable with a recorded reason so the endpoint can answer
503 instead of crashing the service. Inference runs under a per-model lock
(one queue per model) in batches of at most ``max_batch``.
"""

from __future__ import annotations

import logging
import re
import threading
from typing import Optional

from .config import ShimConfig

logger = logging.getLogger(__name__)


class ModelUnavailable(RuntimeError):
    pass


class _LazyModel:
    def __init__(self, model_id: Optional[str], device: str):
        self.model_id = model_id
        self.device = device
        self.error: Optional[str] = None
        self.lock = threading.Lock()
        self._loaded = False

    @property
    def available(self) -> bool:
        return self._loaded and self.error is None

    def ensure(self):
        if not self.available:
            raise ModelUnavailable(self.error or "model not configured")


class Embedder(_LazyModel):
    """Mean-pooled transformer encoder behind /embed."""

    def load(self):
        if not self.model_id:
            self.error = "no embedding model configured"
            return
        try:
            import torch
            from transformers import AutoModel, AutoTokenizer

            self.tokenizer = AutoTokenizer.from_pretrained(self.model_id)
            self.model = AutoModel.from_pretrained(self.model_id).to(self.device).eval()
            self.torch = torch
            self._loaded = True
        except Exception as exc:
            self.error = f"embedding model load failed: {exc}"
            logger.warning(self.error)

    def encode(self, texts: list[str], max_batch: int) -> list[list[float]]:
        self.ensure()
        out: list[list[float]] = []
        with self.lock, self.torch.no_grad():
            for start in range(0, len(texts), max_batch):
                batch = texts[start : start + max_batch]
                enc = self.tokenizer(
                    batch, padding=True, truncation=True, max_length=256, return_tensors="pt"
                ).to(self.device)
                hidden = self.model(**enc).last_hidden_state
                mask = enc["attention_mask"].unsqueeze(-1).to(hidden.dtype)
                pooled = (hidden * mask).sum(dim=1) / mask.sum(dim=1).clamp(min=1)
                out.extend(pooled.cpu().numpy().astype(float).tolist())
        return out


class EntailmentScorer(_LazyModel):
    """Sequence-pair classifier behind /entail; emits P(entailment)."""

    def load(self):
        if not self.model_id:
            self.error = "no NLI model configured"
            return
        try:
            import torch
            from transformers import AutoModelForSequenceClassification, AutoTokenizer

            self.tokenizer = AutoTokenizer.from_pretrained(self.model_id)
            self.model = (
                AutoModelForSequenceClassification.from_pretrained(self.model_id)
                .to(self.device)
                .eval()
            )
            self.torch = torch
            self.entail_index = self._find_entail_index(self.model.config)
            self._loaded = True
        except Exception as exc:
            self.error = f"NLI model load failed: {exc}"
            logger.warning(self.error)

    @staticmethod
    def _find_entail_index(config) -> int:
        for idx, label in (config.id2label or {}).items():
            if "entail" in str(label).lower():
                return int(idx)
        return 0

    def score(self, premise: str, hypothesis: str) -> float:
        self.ensure()
        with self.lock, self.torch.no_grad():
            enc = self.tokenizer(
                premise, hypothesis, truncation=True, max_length=512, return_tensors="pt"
            ).to(self.device)
            logits = self.model(**enc).logits[0]
            prob = self.torch.softmax(logits, dim=-1)[self.entail_index].item()
        return min(1.0, max(0.0, float(prob)))


class Reranker(_LazyModel):
    """Cross-encoder behind /rerank: one relevance score per (query, doc)."""

    def load(self):
        if not self.model_id:
            self.error = "no reranker model configured"
            return
        try:
            import torch
            from transformers import AutoModelForSequenceClassification, AutoTokenizer

            self.tokenizer = AutoTokenizer.from_pretrained(self.model_id)
            self.model = (
                AutoModelForSequenceClassification.from_pretrained(self.model_id)
                .to(self.device)
                .eval()
            )
            self.torch = torch
            self._loaded = True
        except Exception as exc:
            self.error = f"reranker model load failed: {exc}"
            logger.warning(self.error)

    def score(self, query: str, docs: list[str], max_batch: int) -> list[float]:
        self.ensure()
        scores: list[float] = []
        with self.lock, self.torch.no_grad():
            for start in range(0, len(docs), max_batch):
                batch = docs[start : start + max_batch]
                enc = self.tokenizer(
                    [query] * len(batch), batch,
                    padding=True, truncation=True, max_length=512, return_tensors="pt",
                ).to(self.device)
                logits = self.model(**enc).logits
                if logits.shape[-1] == 1:
                    batch_scores = logits[:, 0]
                else:
                    batch_scores = self.torch.softmax(logits, dim=-1)[:, -1]
                scores.extend(float(s) for s in batch_scores.cpu())
        return scores


class SpanExtractor(_LazyModel):
    """Entity and phrase spans behind /spans.

    Uses a token-classification NER model when configured, always unioned
    with rule-based noun-ish phrase spans (capitalized runs, digit runs,
    quoted text, and content chunks between function words), so the
    endpoint stays useful without a linguistic model.
    """

    FUNCTION_WORDS = frozenset(
        """a an the is are was were be been being am do does did of in on at
        by for with to from as and or but not no it its this that these
        those he she they them his her their we us our you your i me my""".split()
    )

    def load(self):
        self.pipeline = None
        if self.model_id:
            try:
                from transformers import pipeline

                device = 0 if self.device == "cuda" else -1
                self.pipeline = pipeline(
                    "token-classification", model=self.model_id,
                    aggregation_strategy="simple", device=device,
                )
            except Exception as exc:
                self.error = f"spans model load failed: {exc}"
                logger.warning(self.error)
        self._loaded = True  # rule-based extraction always works

    def extract(self, text: str) -> list[dict]:
        spans: dict[tuple[int, int], str] = {}

        def add(start: int, end: int):
            if end > start and (start, end) not in spans:
                spans[(start, end)] = text[start:end]

        if self.pipeline is not None:
            with self.lock:
                for ent in self.pipeline(text):
                    add(int(ent["start"]), int(ent["end"]))

        words = [(m.start(), m.end(), m.group())
                 for m in re.finditer(r"\w(?:[\w',.-]*\w)?", text)]

        def runs(pred):
            run = []
            for word in words:
                if pred(word[2]):
                    run.append(word)
                elif run:
                    yield run
                    run = []
            if run:
                yield run

        for run in runs(lambda w: w[0].isupper()):
            if len(run) == 1 and run[0][0] == words[0][0] and run[0][2].lower() in self.FUNCTION_WORDS:
                continue
            add(run[0][0], run[-1][1])
        for run in runs(lambda w: any(ch.isdigit() for ch in w)):
            add(run[0][0], run[-1][1])
        for m in re.finditer(r'"([^"]+)"', text):
            add(m.start(1), m.end(1))
        for run in runs(lambda w: w.lower() not in self.FUNCTION_WORDS):
            add(run[0][0], run[-1][1])

        return [
            {"surface": surface, "start": start, "end": end}
            for (start, end), surface in sorted(spans.items())
        ]


class GenerationProxy:
    """Forwards /generate to the configured upstream completion server."""

    def __init__(self, cfg: ShimConfig):
        self.url = cfg.generation_upstream_url
        self.kind = cfg.generation_upstream_kind
        self.timeout_s = cfg.generation_timeout_s
        self.error = None if self.url else "no generation upstream configured"

    @property
    def available(self) -> bool:
        return self.url is not None

    def generate(self, prompt: str, max_tokens: int, temperature: float) -> str:
        import requests

        if not self.available:
            raise ModelUnavailable(self.error)
        if self.kind == "openai":
            payload = {"prompt": prompt, "max_tokens": max_tokens, "temperature": temperature}
            response = requests.post(self.url, json=payload, timeout=self.timeout_s)
            response.raise_for_status()
            body = response.json()
            return body["choices"][0]["text"]
        response = requests.post(
            self.url,
            json={"prompt": prompt, "max_tokens": max_tokens, "temperature": temperature},
            timeout=self.timeout_s,
        )
        response.raise_for_status()
        return response.json()["text"]


class ModelRegistry:
    """Everything the endpoints need, loaded once per service."""

    def __init__(self, cfg: ShimConfig):
        self.cfg = cfg
        self.embedder = Embedder(cfg.embed_model_id, cfg.torch_device)
        self.entailer = EntailmentScorer(cfg.nli_model_id, cfg.torch_device)
        self.reranker = Reranker(cfg.rerank_model_id, cfg.torch_device)
        self.spans = SpanExtractor(cfg.spans_model_id, cfg.torch_device)
        self.generator = GenerationProxy(cfg)

    def load_all(self):
        self.embedder.load()
        self.entailer.load()
        self.reranker.load()
        self.spans.load()
        return self

    def health(self) -> dict:
        return {
            "embed": self.embedder.available,
            "entail": self.entailer.available,
            "rerank": self.reranker.available,
            "generate": self.generator.available,
            "spans": self.spans.available,
        }
