"""Corpus indexing and the four evidence retrieval paths.

An inverted index (term -> postings with term frequencies) backs the
lexical retrievers: plain Okapi-weighted search and pseudo-relevance
feedback expansion on top of it. Dense retrieval scans a precomputed
embedding store with exact cosine; the reranker path refines a lexical
candidate pool through the /rerank endpoint. All paths are deterministic:
score ties break by ascending doc_id, rerank ties keep pool order.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import os
import time
from collections import Counter
from dataclasses import dataclass, field, replace
from typing import Iterable, Iterator, Optional

import numpy as np

from .core import Bm25Params, Claim, RetrieverKind, RetrieverSpec, Rm3Params, tokenize
from .errors import (
    DimensionMismatch,
    DuplicateDocId,
    EmptyCorpus,
    IndexNotLoaded,
    IoFailure,
    MalformedScores,
)

logger = logging.getLogger(__name__)

ANALYZER = "lowercase-whitespace-edgepunct-v1"


@dataclass(frozen=True)
class CorpusDoc:
    doc_id: str
    text: str
    title: Optional[str] = None

    def __post_init__(self):
        if not self.text.strip():
            raise ValueError(f"doc {self.doc_id!r} has empty text")


def read_corpus(path) -> Iterator[CorpusDoc]:
    """Stream corpus docs from a JSON Lines file {doc_id, text, title?}."""
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            yield CorpusDoc(str(obj["doc_id"]), obj["text"], obj.get("title"))


@dataclass(frozen=True)
class IndexManifest:
    corpus_hash: str
    doc_count: int
    vocab_size: int
    build_params: dict
    avgdl: float
    created_at: float = field(default_factory=time.time)

    def to_json(self) -> dict:
        return {
            "corpus_hash": self.corpus_hash,
            "doc_count": self.doc_count,
            "vocab_size": self.vocab_size,
            "build_params": self.build_params,
            "avgdl": self.avgdl,
            "created_at": self.created_at,
        }


class InvertedIndex:
    """In-memory inverted index with a document store.

    Postings map term -> [(doc_index, term_frequency)] in ascending doc
    order; documents keep their stream position, so builds are
    deterministic for a fixed corpus order.
    """

    def __init__(self):
        self.postings: dict[str, list[tuple[int, int]]] = {}
        self.doc_ids: list[str] = []
        self.texts: list[str] = []
        self.titles: list[Optional[str]] = []
        self.doc_len: list[int] = []
        self.avgdl: float = 0.0
        self.corpus_hash: str = ""

    @classmethod
    def build(cls, corpus: Iterable[CorpusDoc]) -> "InvertedIndex":
        index = cls()
        seen: set[str] = set()
        hasher = hashlib.sha256()
        for doc in corpus:
            if doc.doc_id in seen:
                raise DuplicateDocId(doc.doc_id)
            seen.add(doc.doc_id)
            hasher.update(doc.doc_id.encode("utf-8") + b"\x1f")
            hasher.update(doc.text.encode("utf-8") + b"\x1f")
            hasher.update((doc.title or "").encode("utf-8") + b"\x1e")
            idx = len(index.doc_ids)
            tokens = tokenize(doc.text)
            index.doc_ids.append(doc.doc_id)
            index.texts.append(doc.text)
            index.titles.append(doc.title)
            index.doc_len.append(len(tokens))
            for term, tf in sorted(Counter(tokens).items()):
                index.postings.setdefault(term, []).append((idx, tf))
        if not index.doc_ids:
            raise EmptyCorpus("corpus stream yielded no documents")
        index.avgdl = sum(index.doc_len) / len(index.doc_len)
        index.corpus_hash = hasher.hexdigest()
        return index

    @property
    def doc_count(self) -> int:
        return len(self.doc_ids)

    def manifest(self) -> IndexManifest:
        return IndexManifest(
            corpus_hash=self.corpus_hash,
            doc_count=self.doc_count,
            vocab_size=len(self.postings),
            build_params={"analyzer": ANALYZER},
            avgdl=self.avgdl,
        )

    def text_of(self, doc_id: str) -> str:
        return self.texts[self.doc_ids.index(doc_id)]

    def save(self, out_dir) -> IndexManifest:
        try:
            os.makedirs(out_dir, exist_ok=True)
            manifest = self.manifest()
            with open(os.path.join(out_dir, "manifest.json"), "w", encoding="utf-8") as fh:
                json.dump(manifest.to_json(), fh, sort_keys=True, indent=2)
            with open(os.path.join(out_dir, "postings.json"), "w", encoding="utf-8") as fh:
                json.dump(
                    {
                        "postings": {t: p for t, p in sorted(self.postings.items())},
                        "doc_len": self.doc_len,
                        "avgdl": self.avgdl,
                        "corpus_hash": self.corpus_hash,
                    },
                    fh,
                    sort_keys=True,
                )
            with open(os.path.join(out_dir, "docs.jsonl"), "w", encoding="utf-8") as fh:
                for doc_id, text, title in zip(self.doc_ids, self.texts, self.titles):
                    record = {"doc_id": doc_id, "text": text}
                    if title is not None:
                        record["title"] = title
                    fh.write(json.dumps(record, sort_keys=True, ensure_ascii=False) + "\n")
            return manifest
        except OSError as exc:
            raise IoFailure(str(exc)) from exc

    @classmethod
    def load(cls, index_dir) -> "InvertedIndex":
        try:
            with open(os.path.join(index_dir, "manifest.json"), encoding="utf-8") as fh:
                manifest = json.load(fh)
            with open(os.path.join(index_dir, "postings.json"), encoding="utf-8") as fh:
                data = json.load(fh)
            index = cls()
            index.postings = {t: [tuple(p) for p in ps] for t, ps in data["postings"].items()}
            index.doc_len = data["doc_len"]
            index.avgdl = data["avgdl"]
            index.corpus_hash = data["corpus_hash"]
            for doc in read_corpus(os.path.join(index_dir, "docs.jsonl")):
                index.doc_ids.append(doc.doc_id)
                index.texts.append(doc.text)
                index.titles.append(doc.title)
        except (OSError, json.JSONDecodeError, KeyError) as exc:
            raise IoFailure(f"cannot load index from {index_dir}: {exc}") from exc
        if (
            manifest["doc_count"] != len(index.doc_ids)
            or manifest["vocab_size"] != len(index.postings)
            or manifest["corpus_hash"] != index.corpus_hash
        ):
            raise IoFailure(f"manifest does not match on-disk index in {index_dir}")
        return index


def _idf(n_docs: int, df: int) -> float:
    return math.log(1 + (n_docs - df + 0.5) / (df + 0.5))


def weighted_bm25_search(
    index: InvertedIndex,
    term_weights: dict[str, float],
    k: int,
    params: Bm25Params,
) -> list[tuple[str, float]]:
    """Okapi scoring with per-term query weights.

    score(d) = sum_t w_t * idf(t) * tf * (k1 + 1) / (tf + k1 * (1 - b + b * dl/avgdl))
    with idf(t) = ln(1 + (N - df + 0.5) / (df + 0.5)). Terms with
    non-positive weight are skipped; ties break by ascending doc_id.
    """
    if index is None:
        raise IndexNotLoaded("no index loaded")
    n = index.doc_count
    scores: dict[int, float] = {}
    for term, weight in term_weights.items():
        if weight <= 0:
            continue
        plist = index.postings.get(term)
        if not plist:
            continue
        idf = _idf(n, len(plist))
        for doc_idx, tf in plist:
            dl = index.doc_len[doc_idx]
            denom = tf + params.k1 * (1 - params.b + params.b * dl / index.avgdl)
            scores[doc_idx] = scores.get(doc_idx, 0.0) + weight * idf * tf * (params.k1 + 1) / denom
    ranked = sorted(scores.items(), key=lambda item: (-item[1], index.doc_ids[item[0]]))
    return [(index.doc_ids[i], s) for i, s in ranked[:k]]


def bm25_search(
    index: InvertedIndex, query: str, k: int, params: Bm25Params = Bm25Params()
) -> list[tuple[str, float]]:
    """Rank documents for a query; duplicated query terms weight by count."""
    if k < 1:
        raise ValueError("k must be >= 1")
    weights = {term: float(tf) for term, tf in Counter(tokenize(query)).items()}
    return weighted_bm25_search(index, weights, k, params)


def rm3_search(
    index: InvertedIndex,
    query: str,
    k: int,
    cfg: Rm3Params = Rm3Params(),
    params: Bm25Params = Bm25Params(),
) -> list[tuple[str, float]]:
    """Pseudo-relevance feedback expansion over the lexical ranking.

    A relevance model is estimated from the top fb_docs documents
    (score-normalized mixture of their term distributions); the fb_terms
    strongest terms are mixed with the original query at orig_weight. With
    orig_weight = 1 or fb_docs = 0 the result equals plain search, scores
    included: the original terms keep their raw counts as weights, and
    expansion terms are scaled by (1 - orig_weight) * |query|.
    """
    if index is None:
        raise IndexNotLoaded("no index loaded")
    query_counts = Counter(tokenize(query))
    if cfg.fb_docs == 0 or cfg.orig_weight == 1.0 or not query_counts:
        return bm25_search(index, query, k, params)

    feedback = bm25_search(index, query, cfg.fb_docs, params)
    if not feedback:
        return []
    doc_pos = {doc_id: i for i, doc_id in enumerate(index.doc_ids)}
    total_score = sum(score for _, score in feedback)
    relevance_model: dict[str, float] = {}
    for doc_id, score in feedback:
        idx = doc_pos[doc_id]
        weight = score / total_score if total_score > 0 else 1.0 / len(feedback)
        counts = Counter(tokenize(index.texts[idx]))
        length = sum(counts.values())
        for term, tf in counts.items():
            relevance_model[term] = relevance_model.get(term, 0.0) + weight * tf / length

    expansion = sorted(relevance_model.items(), key=lambda item: (-item[1], item[0]))[: cfg.fb_terms]
    query_len = sum(query_counts.values())
    weights: dict[str, float] = {t: cfg.orig_weight * c for t, c in query_counts.items()}
    for term, prob in expansion:
        weights[term] = weights.get(term, 0.0) + (1 - cfg.orig_weight) * query_len * prob
    return weighted_bm25_search(index, weights, k, params)


class EmbeddingStore:
    """Row-major float32 vectors with aligned doc ids.

    On disk: a flat little-endian float32 binary next to a JSON sidecar
    {dim, count, doc_ids}.
    """

    def __init__(self, vectors: np.ndarray, doc_ids: list[str]):
        if vectors.ndim != 2 or len(doc_ids) != vectors.shape[0]:
            raise ValueError("vectors must be (count, dim) aligned with doc_ids")
        self.vectors = np.ascontiguousarray(vectors, dtype=np.float32)
        self.doc_ids = list(doc_ids)

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def save(self, path_prefix):
        with open(str(path_prefix) + ".f32", "wb") as fh:
            fh.write(self.vectors.astype("<f4").tobytes(order="C"))
        sidecar = {"dim": self.dim, "count": len(self.doc_ids), "doc_ids": self.doc_ids}
        with open(str(path_prefix) + ".json", "w", encoding="utf-8") as fh:
            json.dump(sidecar, fh, sort_keys=True)

    @classmethod
    def load(cls, path_prefix) -> "EmbeddingStore":
        with open(str(path_prefix) + ".json", encoding="utf-8") as fh:
            sidecar = json.load(fh)
        raw = np.fromfile(str(path_prefix) + ".f32", dtype="<f4")
        vectors = raw.reshape(sidecar["count"], sidecar["dim"])
        return cls(vectors, sidecar["doc_ids"])


def build_embedding_store(index: InvertedIndex, client, batch_size: int = 32) -> EmbeddingStore:
    """Embed every document text through /embed in fixed-size batches."""
    vectors: list[list[float]] = []
    for start in range(0, index.doc_count, batch_size):
        texts = index.texts[start : start + batch_size]
        response = client.call("EMBED", {"texts": texts})
        vectors.extend(response["vectors"])
    return EmbeddingStore(np.asarray(vectors, dtype=np.float32), list(index.doc_ids))


def dense_search(store: EmbeddingStore, query: str, k: int, client) -> list[tuple[str, float]]:
    """Exact brute-force cosine scan over the embedding store."""
    if store is None:
        raise IndexNotLoaded("no embedding store loaded")
    response = client.call("EMBED", {"texts": [query]})
    qvec = np.asarray(response["vectors"][0], dtype=np.float32)
    if qvec.shape[0] != store.dim:
        raise DimensionMismatch(f"query dim {qvec.shape[0]} != store dim {store.dim}")
    qnorm = np.linalg.norm(qvec)
    dnorm = np.linalg.norm(store.vectors, axis=1)
    denom = np.where(dnorm * qnorm > 0, dnorm * qnorm, 1.0)
    sims = store.vectors @ qvec / denom
    order = sorted(range(len(store.doc_ids)), key=lambda i: (-float(sims[i]), store.doc_ids[i]))
    return [(store.doc_ids[i], float(sims[i])) for i in order[:k]]


def rerank(pool: list[tuple[str, str]], query: str, client) -> list[tuple[str, float]]:
    """Re-score a candidate pool through /rerank; membership is preserved."""
    if not pool:
        raise ValueError("rerank pool must be non-empty")
    response = client.call("RERANK", {"query": query, "docs": [text for _, text in pool]})
    scores = response["scores"]
    if len(scores) != len(pool):
        raise MalformedScores(f"{len(scores)} scores for a pool of {len(pool)}")
    order = sorted(range(len(pool)), key=lambda i: -float(scores[i]))
    return [(pool[i][0], float(scores[i])) for i in order]


@dataclass(frozen=True)
class EvidenceItem:
    doc_id: str
    text: str
    score: float


@dataclass(frozen=True)
class EvidenceSet:
    """Top-p retrieved sentences for one claim under one retriever."""

    claim_id: str
    retriever: RetrieverKind
    items: tuple[EvidenceItem, ...] = ()


def retrieve_evidence(
    claim: Claim,
    spec: RetrieverSpec,
    index: Optional[InvertedIndex] = None,
    client=None,
    store: Optional[EmbeddingStore] = None,
) -> EvidenceSet:
    """Fetch evidence for a claim with the configured retriever.

    The query is the raw claim text. RERANK first pulls a pool_size lexical
    candidate pool and refines it through the reranker; every path then
    truncates to context_size. An empty result is returned (and logged),
    not raised.
    """
    p = spec.context_size
    if spec.kind == RetrieverKind.BM25:
        ranked = bm25_search(index, claim.text, p, spec.bm25)
    elif spec.kind == RetrieverKind.RM3:
        ranked = rm3_search(index, claim.text, p, spec.rm3, spec.bm25)
    elif spec.kind == RetrieverKind.DENSE:
        ranked = dense_search(store, claim.text, p, client)
    elif spec.kind == RetrieverKind.RERANK:
        pool = bm25_search(index, claim.text, spec.pool_size, spec.bm25)
        if not pool:
            ranked = []
        else:
            with_texts = [(doc_id, index.text_of(doc_id)) for doc_id, _ in pool]
            ranked = rerank(with_texts, claim.text, client)[:p]
    else:
        raise ValueError(f"unknown retriever kind {spec.kind}")

    if not ranked:
        logger.info("claim %s: %s retrieval returned no evidence", claim.id, spec.kind.value)
    lookup = {doc_id: i for i, doc_id in enumerate(index.doc_ids)} if index else {}
    items = []
    for doc_id, score in ranked[:p]:
        if doc_id in lookup:
            text = index.texts[lookup[doc_id]]
        else:
            text = doc_id  # dense store without a loaded doc store
        items.append(EvidenceItem(doc_id, text, float(score)))
    return EvidenceSet(claim.id, spec.kind, tuple(items))


def spec_for(kind: RetrieverKind, base: RetrieverSpec) -> RetrieverSpec:
    return replace(base, kind=kind)
