"""Shim acceptance: the correction engine runs against the live service.

The engine's HTTP client is pointed at the FastAPI app through an injected
transport, with generation served by the engine's deterministic stub (the
service proxies generation and no upstream is configured here). A
100-claim mask-and-correct run must complete with zero schema errors while
touching every model endpoint: /embed (dense store, query encoding, and
span-selection similarity), /rerank (candidate pool refinement), /entail
(candidate scoring), and /spans (span extraction).
"""

import threading
import time

import numpy as np
import pytest


@pytest.fixture(scope="session")
def engine_resources(checkpoints):
    from fastapi.testclient import TestClient

    from factfix.backends import BackendClient, BackendProfile, Endpoint
    from factfix.backends import external_span_provider
    from factfix.pipeline import Resources
    from factfix.retrieval import CorpusDoc, EmbeddingStore, InvertedIndex
    from factfix_shim import ShimConfig, create_app

    cfg = ShimConfig(
        embed_model_id=checkpoints["embed"],
        nli_model_id=checkpoints["nli"],
        rerank_model_id=checkpoints["rerank"],
        max_batch=16,
    )
    app = create_app(cfg)
    http = TestClient(app, raise_server_exceptions=False)

    def transport(url, payload, timeout_s):
        path = "/" + url.split("://", 1)[1].split("/", 1)[1]
        response = http.post(path, json=payload)
        return response.status_code, response.json()

    profile = BackendProfile(
        base_url="http://shim", stub_mode=False,
        stub_endpoints=frozenset({Endpoint.GENERATE}),
        retry_attempts=1,
    )
    client = BackendClient(profile, transport=transport)

    docs = []
    for i in range(100):
        docs.append(CorpusDoc(
            f"a{i}", f"annals note the korin{i} mill is by the fresh golden wheat barn{i} today."
        ))
        docs.append(CorpusDoc(
            f"b{i}", f"yard gate tower barn{i} wheat golden lore annal hymn."
        ))
    index = InvertedIndex.build(docs)

    vectors = []
    for start in range(0, index.doc_count, 16):
        body = client.call("EMBED", {"texts": index.texts[start : start + 16]})
        vectors.extend(body["vectors"])
    store = EmbeddingStore(np.asarray(vectors, dtype=np.float32), list(index.doc_ids))

    return Resources(client, index, store, external_span_provider(client))


@pytest.fixture
def live_shim_url(checkpoints):
    """Shim on a real socket, for exercising the engine's HTTP transport."""
    import uvicorn

    from factfix_shim import ShimConfig, create_app

    app = create_app(ShimConfig(
        embed_model_id=checkpoints["embed"],
        nli_model_id=checkpoints["nli"],
        rerank_model_id=checkpoints["rerank"],
    ))
    config = uvicorn.Config(app, host="127.0.0.1", port=0, log_level="error")
    server = uvicorn.Server(config)
    thread = threading.Thread(target=server.run, daemon=True)
    thread.start()
    deadline = time.time() + 10
    while not server.started:
        assert time.time() < deadline, "shim server did not start"
        time.sleep(0.01)
    port = server.servers[0].sockets[0].getsockname()[1]
    yield f"http://127.0.0.1:{port}"
    server.should_exit = True
    thread.join(timeout=5)


def test_engine_default_transport_against_live_service(live_shim_url):
    """The engine's stock HTTP client (no injected transport) talks to a
    socket-served shim for every model endpoint."""
    from factfix.backends import BackendClient, BackendProfile, Endpoint

    profile = BackendProfile(
        base_url=live_shim_url, stub_mode=False,
        stub_endpoints=frozenset({Endpoint.GENERATE}),
        timeout_ms=30000, retry_attempts=2,
    )
    client = BackendClient(profile)
    vectors = client.call("EMBED", {"texts": ["one dance", "the giver"]})["vectors"]
    assert len(vectors) == 2 and len(vectors[0]) == len(vectors[1])
    entail = client.call("ENTAIL", {"premise": "one dance is a song",
                                    "hypothesis": "one dance is a song"})["entailment"]
    assert 0.0 <= entail <= 1.0
    scores = client.call("RERANK", {"query": "one dance",
                                    "docs": ["one dance", "wheat barn"]})["scores"]
    assert len(scores) == 2
    spans = client.call("SPANS", {"text": "One Dance was by a Canadian."})["spans"]
    assert any(s["surface"] == "One Dance" for s in spans)
    # generation stays on the stub: the service proxies and has no upstream
    text = client.call("GENERATE", {"prompt": "Input Claim: a b.\nOutput Correction:",
                                    "max_tokens": 8, "temperature": 0.0})["text"]
    assert text == "a b."


def test_hundred_claim_run_through_shim(engine_resources):
    from factfix.core import (
        Claim,
        MaskingConfig,
        Mode,
        PipelineConfig,
        RetrieverKind,
        RetrieverSpec,
        Strategy,
    )
    from factfix.pipeline import run_claim

    cfg = PipelineConfig(
        mode=Mode.M2C,
        retrieval=RetrieverSpec(kind=RetrieverKind.RERANK, context_size=2, pool_size=5),
        masking=MaskingConfig(strategy=Strategy.DM, similarity_provider="EMBEDDING_CLIENT",
                              max_masks=3, seed=7),
    )
    started = time.perf_counter()
    failures = []
    for i in range(100):
        claim = Claim(
            f"c{i}",
            f"the korin{i} mill is by the Stale Golden wheat barn{i} qux tower gate yard.",
        )
        try:
            result = run_claim(claim, cfg, engine_resources)
        except Exception as exc:  # schema or transport failure
            failures.append((claim.id, repr(exc)))
            continue
        assert result.final_text
        assert "[MASK]" not in result.final_text
    elapsed = time.perf_counter() - started
    assert failures == []
    assert elapsed < 600, f"100-claim run took {elapsed:.1f}s"
    print(f"\n100-claim run through the shim completed in {elapsed:.1f}s")
