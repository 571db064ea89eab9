"""Operator entry points: corpus indexing, pipeline runs, sensitivity sweeps.

Configuration lives in one declarative YAML/JSON file snapshotted into the
run manifest. Claims stream through a bounded worker pool; output writing
is serialized in input order, so a fixed seed and stub backends give
byte-identical outputs across runs (timestamps excluded, kept only in the
manifest). Every failure path exits nonzero with one machine-readable
"error: <Code>: <detail>" line on stderr.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import itertools
import json
import logging
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional

import yaml

from .backends import BackendClient, BackendProfile, Endpoint, external_span_provider
from .core import (
    Bm25Params,
    Claim,
    EnsembleConfig,
    MaskingConfig,
    Mode,
    PipelineConfig,
    RetrieverKind,
    RetrieverSpec,
    Rm3Params,
    ScoringConfig,
    Strategy,
    TieBreak,
    read_claims,
)
from .errors import DuplicateDocId, EmptyCorpus, FactfixError
from .evaluation import EvalRecord, evaluate
from .correction import GenParams
from .pipeline import ClaimResult, Resources, run_claim
from .retrieval import EmbeddingStore, InvertedIndex, build_embedding_store, read_corpus

logger = logging.getLogger(__name__)

ENV_SHIM_URL = "FACTFIX_SHIM_URL"
ENV_TIMEOUT_MS = "FACTFIX_TIMEOUT_MS"


@dataclass
class RunSettings:
    """Everything a run needs beyond the pipeline config proper."""

    pipeline: PipelineConfig = field(default_factory=PipelineConfig)
    backends: BackendProfile = field(default_factory=BackendProfile)
    generation: GenParams = field(default_factory=GenParams)
    seed: int = 0
    workers: int = 1


def _load_tree(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        if str(path).endswith(".json"):
            return json.load(fh) or {}
        return yaml.safe_load(fh) or {}


def parse_settings(tree: dict) -> RunSettings:
    """Build validated settings from a configuration tree."""
    seed = int(tree.get("seed", 0))
    masking = tree.get("masking", {})
    retrieval = tree.get("retrieval", {})
    scoring = tree.get("scoring", {})
    ensemble = tree.get("ensemble", {})
    backends = tree.get("backends", {})
    generation = tree.get("generation", {})

    pipeline = PipelineConfig(
        masking=MaskingConfig(
            strategy=Strategy(masking.get("strategy", "DM")),
            alpha=float(masking.get("alpha", 0.3)),
            max_masks=int(masking.get("max_masks", 10)),
            rm_mask_ratio=float(masking.get("rm_mask_ratio", 0.15)),
            similarity_provider=masking.get("similarity_provider", "CHAR_NGRAM_TFIDF"),
            seed=int(masking.get("seed", seed)),
        ),
        retrieval=RetrieverSpec(
            kind=RetrieverKind(retrieval.get("kind", "BM25")),
            bm25=Bm25Params(**retrieval.get("bm25", {})),
            rm3=Rm3Params(**retrieval.get("rm3", {})),
            pool_size=int(retrieval.get("pool_size", 50)),
            context_size=int(retrieval.get("context_size", 3)),
        ),
        scoring=ScoringConfig(
            lam=float(scoring.get("lambda", 0.5)),
            entailment_backend=scoring.get("entailment_backend", "STUB"),
        ),
        ensemble=EnsembleConfig(
            retrievers=tuple(
                RetrieverKind(k) for k in ensemble.get("retrievers", ["BM25", "DENSE", "RERANK", "RM3"])
            ),
            tie_break=TieBreak(ensemble.get("tie_break", "BY_SCORE")),
        ),
        mode=Mode(tree.get("mode", "M2C")),
    )

    base_url = backends.get("base_url", os.environ.get(ENV_SHIM_URL, ""))
    timeout_ms = int(backends.get("timeout_ms", os.environ.get(ENV_TIMEOUT_MS, 30000)))
    retry = backends.get("retry", {})
    profile = BackendProfile(
        base_url=base_url,
        timeout_ms=timeout_ms,
        max_in_flight=int(backends.get("max_in_flight", 4)),
        retry_attempts=int(retry.get("attempts", 3)),
        retry_backoff_ms=int(retry.get("backoff_ms", 100)),
        stub_mode=bool(backends.get("stub_mode", not base_url)),
        stub_seed=int(backends.get("stub_seed", seed)),
        stub_endpoints=frozenset(
            Endpoint(e) for e in backends.get("stub_endpoints", [])
        ),
    )
    gen = GenParams(
        max_tokens=int(generation.get("max_tokens", 128)),
        temperature=float(generation.get("temperature", 0.0)),
    )
    return RunSettings(pipeline, profile, gen, seed=seed, workers=int(tree.get("workers", 1)))


def load_settings(path: Optional[str]) -> RunSettings:
    return parse_settings(_load_tree(path)) if path else parse_settings({})


def _fail(code: str, detail: str, status: int) -> int:
    print(f"error: {code}: {detail}", file=sys.stderr)
    return status


def _needs_index(settings: RunSettings) -> bool:
    if settings.pipeline.mode == Mode.ZERO_SHOT:
        return False
    if settings.pipeline.mode == Mode.M2C_PLUS:
        return True
    return True


def _needs_store(settings: RunSettings) -> bool:
    if settings.pipeline.mode == Mode.ZERO_SHOT:
        return False
    if settings.pipeline.mode == Mode.M2C_PLUS:
        return RetrieverKind.DENSE in settings.pipeline.ensemble.retrievers
    return settings.pipeline.retrieval.kind == RetrieverKind.DENSE


def cmd_index(args) -> int:
    if not os.path.exists(args.corpus):
        return _fail("CorpusNotFound", args.corpus, 2)
    settings = load_settings(args.config)
    try:
        index = InvertedIndex.build(read_corpus(args.corpus))
        manifest = index.save(args.index_dir)
        if not args.skip_embeddings:
            client = BackendClient(settings.backends)
            store = build_embedding_store(index, client)
            store.save(os.path.join(args.index_dir, "embeddings"))
    except DuplicateDocId as exc:
        return _fail("DuplicateDocId", str(exc), 3)
    except EmptyCorpus as exc:
        return _fail("EmptyCorpus", str(exc), 2)
    except FactfixError as exc:
        return _fail(type(exc).__name__, str(exc), 1)
    print(json.dumps({"doc_count": manifest.doc_count, "vocab_size": manifest.vocab_size,
                      "index_dir": args.index_dir}))
    return 0


def _result_record(result: ClaimResult) -> dict:
    record = {
        "claim_id": result.claim_id,
        "input": result.input_text,
        "final_text": result.final_text,
        "mode": result.mode.value,
        "scores": [
            {"retriever": r.retriever.value, "text": r.winner.text,
             "combined": max(s.combined for s in r.scores if s.candidate is r.winner)}
            for r in result.per_retriever
        ],
        "per_retriever": [
            {
                "retriever": r.retriever.value,
                "winner": r.winner.text,
                "evidence": [
                    {"doc_id": item.doc_id, "text": item.text, "score": item.score}
                    for item in r.evidence.items
                ],
                "scores": [
                    {
                        "text": s.candidate.text,
                        "entailment": s.entailment,
                        "rouge_l": s.rouge_l,
                        "combined": s.combined,
                    }
                    for s in r.scores
                ],
            }
            for r in result.per_retriever
        ],
    }
    if result.decision is not None:
        record["decision"] = result.decision.to_json()
    if result.verified_correct:
        record["verified_correct"] = True
    if result.backend_failures:
        record["backend_failures"] = list(result.backend_failures)
    return record


def _probe_backend(profile: BackendProfile):
    """Connection-refused on the shim base URL is a global failure; any
    HTTP answer (including 404) proves reachability."""
    if profile.stub_mode or not profile.base_url:
        return
    import requests

    try:
        requests.get(profile.base_url.rstrip("/") + "/health", timeout=5)
    except requests.RequestException as exc:
        raise FactfixError(f"backend unreachable at {profile.base_url}: {exc}") from exc


def _build_resources(settings: RunSettings, index_dir: Optional[str]) -> Resources:
    _probe_backend(settings.backends)
    client = BackendClient(settings.backends)
    index = store = None
    if index_dir and _needs_index(settings):
        index = InvertedIndex.load(index_dir)
    if index_dir and _needs_store(settings):
        prefix = os.path.join(index_dir, "embeddings")
        if os.path.exists(prefix + ".json"):
            store = EmbeddingStore.load(prefix)
    provider = None
    if settings.backends.base_url and not settings.backends.stub_mode:
        provider = external_span_provider(client)
    return Resources(client, index, store, provider, settings.generation)


def run_claims_streaming(claims, settings: RunSettings, resources: Resources, out_fh,
                         decisions_fh=None):
    """Process claims with bounded parallelism; write results in input order."""
    counts = {"claims": 0, "corrected": 0, "unchanged": 0, "fallbacks": 0,
              "backend_failures": 0, "errors": 0}

    def work(claim: Claim):
        try:
            return run_claim(claim, settings.pipeline, resources)
        except Exception as exc:  # recorded per claim, never fatal to the run
            logger.warning("claim %s failed: %s", claim.id, exc)
            return (claim, exc)

    with ThreadPoolExecutor(max_workers=max(1, settings.workers)) as pool:
        for outcome in pool.map(work, claims):
            counts["claims"] += 1
            if isinstance(outcome, tuple):
                claim, exc = outcome
                counts["errors"] += 1
                record = {"claim_id": claim.id, "input": claim.text,
                          "error": f"{type(exc).__name__}: {exc}"}
            else:
                record = _result_record(outcome)
                counts["corrected" if outcome.changed else "unchanged"] += 1
                counts["fallbacks"] += int(outcome.fallback_used)
                counts["backend_failures"] += len(outcome.backend_failures)
                if decisions_fh is not None and outcome.decision is not None:
                    decisions_fh.write(
                        json.dumps(outcome.decision.to_json(), sort_keys=True,
                                   ensure_ascii=False) + "\n"
                    )
            out_fh.write(json.dumps(record, sort_keys=True, ensure_ascii=False) + "\n")
    return counts


def cmd_run(args) -> int:
    if not os.path.exists(args.claims):
        return _fail("ClaimsNotFound", args.claims, 2)
    if args.config and not os.path.exists(args.config):
        return _fail("ConfigNotFound", args.config, 2)
    settings = load_settings(args.config)
    if args.mode:
        settings.pipeline = replace(settings.pipeline, mode=Mode(args.mode))
    if args.seed is not None:
        settings.seed = args.seed
        settings.pipeline = replace(
            settings.pipeline, masking=replace(settings.pipeline.masking, seed=args.seed)
        )
        settings.backends = replace(settings.backends, stub_seed=args.seed)
    if args.workers:
        settings.workers = args.workers

    if _needs_index(settings) and not (args.index_dir and os.path.isdir(args.index_dir)):
        return _fail("IndexNotLoaded", "retrieval modes require --index-dir", 2)

    started = time.time()
    ensemble_mode = settings.pipeline.mode == Mode.M2C_PLUS
    decisions_path = args.out + ".decisions.jsonl" if ensemble_mode else None
    try:
        resources = _build_resources(settings, args.index_dir)
        with open(args.out, "w", encoding="utf-8") as out_fh:
            if decisions_path:
                with open(decisions_path, "w", encoding="utf-8") as dec_fh:
                    counts = run_claims_streaming(
                        read_claims(args.claims), settings, resources, out_fh, dec_fh
                    )
            else:
                counts = run_claims_streaming(read_claims(args.claims), settings, resources, out_fh)
    except FactfixError as exc:
        return _fail(type(exc).__name__, str(exc), 1)

    output_paths = {"results": args.out}
    if decisions_path:
        output_paths["decisions"] = decisions_path
    manifest = {
        "config_snapshot": _settings_snapshot(settings),
        "input_paths": {"claims": args.claims, "index_dir": args.index_dir},
        "output_paths": output_paths,
        "seed": settings.seed,
        "started_at": started,
        "finished_at": time.time(),
        "counts": counts,
    }
    with open(args.out + ".manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
    print(json.dumps(counts, sort_keys=True))
    return 0


def _settings_snapshot(settings: RunSettings) -> dict:
    def scrub(obj):
        if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
            return {k: scrub(v) for k, v in dataclasses.asdict(obj).items()}
        if isinstance(obj, dict):
            return {str(k): scrub(v) for k, v in obj.items()}
        if isinstance(obj, (list, tuple, set, frozenset)):
            return [scrub(v) for v in obj]
        if hasattr(obj, "value"):
            return obj.value
        return obj

    return {
        "pipeline": scrub(settings.pipeline),
        "backends": scrub(settings.backends),
        "generation": scrub(settings.generation),
        "seed": settings.seed,
        "workers": settings.workers,
    }


GRID_AXES = ("lambda", "p", "alpha", "m", "rm_mask_ratio", "retrievers", "mode")


def _apply_grid_point(settings: RunSettings, point: dict) -> RunSettings:
    pipeline = settings.pipeline
    if "lambda" in point:
        pipeline = replace(pipeline, scoring=replace(pipeline.scoring, lam=float(point["lambda"])))
    if "p" in point:
        p = int(point["p"])
        retrieval = replace(pipeline.retrieval, context_size=p,
                            pool_size=max(pipeline.retrieval.pool_size, p))
        pipeline = replace(pipeline, retrieval=retrieval)
    if "alpha" in point:
        pipeline = replace(pipeline, masking=replace(pipeline.masking, alpha=float(point["alpha"])))
    if "m" in point:
        pipeline = replace(pipeline, masking=replace(pipeline.masking, max_masks=int(point["m"])))
    if "rm_mask_ratio" in point:
        pipeline = replace(pipeline, masking=replace(pipeline.masking,
                                                     rm_mask_ratio=float(point["rm_mask_ratio"])))
    if "retrievers" in point:
        kinds = tuple(RetrieverKind(k) for k in point["retrievers"])
        pipeline = replace(pipeline, ensemble=replace(pipeline.ensemble, retrievers=kinds))
    if "mode" in point:
        pipeline = replace(pipeline, mode=Mode(point["mode"]))
    return dataclasses.replace(settings, pipeline=pipeline)


def _point_name(point: dict) -> str:
    if not point:
        return "default"
    parts = []
    for key in GRID_AXES:
        if key in point:
            value = point[key]
            if isinstance(value, (list, tuple)):
                value = "+".join(str(v) for v in value)
            parts.append(f"{key}={value}")
    return "_".join(parts)


def cmd_sweep(args) -> int:
    if not os.path.exists(args.claims):
        return _fail("ClaimsNotFound", args.claims, 2)
    if not os.path.exists(args.grid):
        return _fail("GridNotFound", args.grid, 2)
    base = load_settings(args.config)
    grid = _load_tree(args.grid)
    unknown = set(grid) - set(GRID_AXES)
    if unknown:
        return _fail("UnknownGridAxis", ",".join(sorted(unknown)), 2)

    axes = [(key, list(grid[key])) for key in GRID_AXES if key in grid]
    points = [dict(zip([k for k, _ in axes], combo))
              for combo in itertools.product(*[vals for _, vals in axes])] or [{}]

    claims = list(read_claims(args.claims))
    os.makedirs(args.out_dir, exist_ok=True)
    runs_dir = os.path.join(args.out_dir, "runs")
    os.makedirs(runs_dir, exist_ok=True)

    rows = []
    for point in points:
        name = _point_name(point)
        try:
            settings = _apply_grid_point(base, point)
            resources = _build_resources(settings, args.index_dir)
            out_path = os.path.join(runs_dir, name + ".jsonl")
            with open(out_path, "w", encoding="utf-8") as fh:
                counts = run_claims_streaming(claims, settings, resources, fh)
            records = _eval_records(claims, out_path)
            report = evaluate(records)
            rows.append({
                **{k: json.dumps(v) if isinstance(v, list) else v for k, v in point.items()},
                "sari": "" if report.sari_mean is None else round(report.sari_mean * 100, 4),
                "rouge_l": "" if report.rouge_l_mean is None else round(report.rouge_l_mean * 100, 4),
                "claims": counts["claims"],
                "errors": counts["errors"],
                "status": "ok",
            })
        except Exception as exc:  # a failing grid point is recorded, not fatal
            logger.warning("grid point %s failed: %s", name, exc)
            rows.append({**{k: str(v) for k, v in point.items()},
                         "sari": "", "rouge_l": "", "claims": 0, "errors": "",
                         "status": f"failed: {type(exc).__name__}"})

    fieldnames = [k for k, _ in axes] + ["sari", "rouge_l", "claims", "errors", "status"]
    csv_path = os.path.join(args.out_dir, "sweep.csv")
    with open(csv_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=fieldnames)
        writer.writeheader()
        writer.writerows(rows)
    print(json.dumps({"points": len(points), "csv": csv_path}))
    return 0


def _eval_records(claims: list[Claim], results_path: str) -> list[EvalRecord]:
    by_id = {}
    with open(results_path, encoding="utf-8") as fh:
        for line in fh:
            obj = json.loads(line)
            by_id[obj["claim_id"]] = obj
    records = []
    for claim in claims:
        obj = by_id.get(claim.id)
        if obj is None or "error" in obj or not claim.gold_correction:
            continue
        records.append(EvalRecord(
            claim_id=claim.id,
            source=claim.text,
            prediction=obj["final_text"],
            reference=claim.gold_correction,
            label=claim.label.value if claim.label else None,
        ))
    return records


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="factfix", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_index = sub.add_parser("index", help="build the inverted index and embedding store")
    p_index.add_argument("--corpus", required=True)
    p_index.add_argument("--index-dir", required=True)
    p_index.add_argument("--config", default=None)
    p_index.add_argument("--skip-embeddings", action="store_true")
    p_index.set_defaults(func=cmd_index)

    p_run = sub.add_parser("run", help="run claims through the configured pipeline mode")
    p_run.add_argument("--claims", required=True)
    p_run.add_argument("--config", default=None)
    p_run.add_argument("--out", required=True)
    p_run.add_argument("--index-dir", default=None)
    p_run.add_argument("--mode", default=None, choices=[m.value for m in Mode])
    p_run.add_argument("--seed", type=int, default=None)
    p_run.add_argument("--workers", type=int, default=None)
    p_run.set_defaults(func=cmd_run)

    p_sweep = sub.add_parser("sweep", help="run a hyperparameter grid and emit a CSV")
    p_sweep.add_argument("--claims", required=True)
    p_sweep.add_argument("--grid", required=True)
    p_sweep.add_argument("--config", default=None)
    p_sweep.add_argument("--out-dir", required=True)
    p_sweep.add_argument("--index-dir", default=None)
    p_sweep.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get("FACTFIX_LOG", "WARNING"))
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:  # defensive: never a bare traceback for operators
        logger.exception("unhandled failure")
        return _fail(type(exc).__name__, str(exc), 1)


if __name__ == "__main__":
    sys.exit(main())
