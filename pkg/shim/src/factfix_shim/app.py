"""FastAPI application exposing the five model endpoints plus /health.

Contract notes: request schema violations answer 400; an endpoint whose
model failed to load (or is not configured) answers 503 with the recorded
reason; everything else is a plain 200 JSON body matching the golden
response schemas shared with the engine's stub layer.
"""

from __future__ import annotations

import argparse
import logging
from typing import List, Optional

from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse
from pydantic import BaseModel, Field

from .config import ShimConfig
from .models import ModelRegistry, ModelUnavailable

logger = logging.getLogger(__name__)


class EmbedRequest(BaseModel):
    texts: List[str]


class EntailRequest(BaseModel):
    premise: str
    hypothesis: str


class GenerateRequest(BaseModel):
    prompt: str
    max_tokens: int = Field(default=128, ge=1)
    temperature: float = Field(default=0.0, ge=0.0)


class RerankRequest(BaseModel):
    query: str
    docs: List[str]


class SpansRequest(BaseModel):
    text: str


def create_app(cfg: ShimConfig, registry: Optional[ModelRegistry] = None) -> FastAPI:
    app = FastAPI(title="factfix model shim", version="0.1.0")
    models = registry if registry is not None else ModelRegistry(cfg).load_all()
    app.state.models = models

    @app.exception_handler(RequestValidationError)
    async def bad_request(request: Request, exc: RequestValidationError):
        return JSONResponse(status_code=400, content={"error": "schema violation",
                                                      "detail": exc.errors()})

    @app.exception_handler(ModelUnavailable)
    async def unavailable(request: Request, exc: ModelUnavailable):
        return JSONResponse(status_code=503, content={"error": str(exc)})

    @app.get("/health")
    def health():
        return models.health()

    @app.post("/embed")
    def embed(request: EmbedRequest):
        vectors = models.embedder.encode(request.texts, cfg.max_batch)
        return {"vectors": vectors}

    @app.post("/entail")
    def entail(request: EntailRequest):
        return {"entailment": models.entailer.score(request.premise, request.hypothesis)}

    @app.post("/generate")
    def generate(request: GenerateRequest):
        text = models.generator.generate(request.prompt, request.max_tokens, request.temperature)
        return {"text": text}

    @app.post("/rerank")
    def rerank(request: RerankRequest):
        return {"scores": models.reranker.score(request.query, request.docs, cfg.max_batch)}

    @app.post("/spans")
    def spans(request: SpansRequest):
        return {"spans": models.spans.extract(request.text)}

    return app


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="factfix-shim", description=__doc__)
    parser.add_argument("--embed-model", default=None)
    parser.add_argument("--nli-model", default=None)
    parser.add_argument("--rerank-model", default=None)
    parser.add_argument("--spans-model", default=None)
    parser.add_argument("--generation-upstream", default=None)
    parser.add_argument("--generation-kind", default="native", choices=["native", "openai"])
    parser.add_argument("--device", default="cpu", choices=["cpu", "gpu"])
    parser.add_argument("--max-batch", type=int, default=16)
    parser.add_argument("--host", default="127.0.0.1")
    parser.add_argument("--port", type=int, default=8080)
    args = parser.parse_args(argv)

    cfg = ShimConfig(
        embed_model_id=args.embed_model,
        nli_model_id=args.nli_model,
        rerank_model_id=args.rerank_model,
        spans_model_id=args.spans_model,
        generation_upstream_url=args.generation_upstream,
        generation_upstream_kind=args.generation_kind,
        device=args.device,
        max_batch=args.max_batch,
    )
    import uvicorn

    uvicorn.run(create_app(cfg), host=args.host, port=args.port)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
