import json
import os
import pathlib
import threading

import jsonschema
import pytest

SCHEMAS = pathlib.Path(__file__).resolve().parent.parent.parent / "schemas"


def load_schema(name):
    return json.loads((SCHEMAS / f"{name}.schema.json").read_text())


class TestGoldenSchemas:
    """Every endpoint response validates against the shared schema files."""

    def test_embed(self, shim_client):
        response = shim_client.post("/embed", json={"texts": ["one dance", "the giver"]})
        assert response.status_code == 200
        body = response.json()
        jsonschema.validate(body, load_schema("embed"))
        assert len(body["vectors"]) == 2

    def test_entail(self, shim_client):
        response = shim_client.post(
            "/entail", json={"premise": "one dance is a song", "hypothesis": "one dance is a song"}
        )
        assert response.status_code == 200
        body = response.json()
        jsonschema.validate(body, load_schema("entail"))
        assert 0.0 <= body["entailment"] <= 1.0

    def test_rerank(self, shim_client):
        response = shim_client.post(
            "/rerank", json={"query": "one dance", "docs": ["one dance song", "the giver film", "wheat barn"]}
        )
        assert response.status_code == 200
        body = response.json()
        jsonschema.validate(body, load_schema("rerank"))
        assert len(body["scores"]) == 3

    def test_spans(self, shim_client):
        response = shim_client.post(
            "/spans", json={"text": "Pulmonary embolism is indicated by high blood oxygen levels."}
        )
        assert response.status_code == 200
        body = response.json()
        jsonschema.validate(body, load_schema("spans"))
        surfaces = [s["surface"] for s in body["spans"]]
        assert "Pulmonary embolism" in surfaces

    def test_health(self, shim_client):
        response = shim_client.get("/health")
        assert response.status_code == 200
        body = response.json()
        jsonschema.validate(body, load_schema("health"))
        assert body["embed"] and body["entail"] and body["rerank"] and body["spans"]
        assert not body["generate"]  # no upstream configured in this fixture


class TestEndpointBehavior:
    def test_identical_texts_identical_vectors(self, shim_client):
        response = shim_client.post("/embed", json={"texts": ["a", "a"]})
        vectors = response.json()["vectors"]
        assert vectors[0] == vectors[1]

    def test_embed_deterministic_across_calls(self, shim_client):
        first = shim_client.post("/embed", json={"texts": ["the giver is a film"]}).json()
        second = shim_client.post("/embed", json={"texts": ["the giver is a film"]}).json()
        assert first == second

    def test_embed_batching_matches_single(self, shim_client):
        texts = [f"claim {w}" for w in ("one", "dance", "film", "song", "barn",
                                        "wheat", "yard", "gate", "tower", "mill")]
        batched = shim_client.post("/embed", json={"texts": texts}).json()["vectors"]
        singles = [
            shim_client.post("/embed", json={"texts": [t]}).json()["vectors"][0] for t in texts
        ]
        for a, b in zip(batched, singles):
            assert a == pytest.approx(b, abs=1e-5)

    def test_entail_probability_range(self, shim_client):
        for hypothesis in ("one dance was by a canadian", "wheat barn gate"):
            body = shim_client.post(
                "/entail", json={"premise": "one dance was by a canadian", "hypothesis": hypothesis}
            ).json()
            assert 0.0 <= body["entailment"] <= 1.0

    def test_rerank_score_per_doc(self, shim_client):
        docs = ["one", "one dance", "one dance song", "the giver"]
        body = shim_client.post("/rerank", json={"query": "one dance", "docs": docs}).json()
        assert len(body["scores"]) == len(docs)

    def test_spans_rule_based_entities(self, shim_client):
        body = shim_client.post("/spans", json={"text": 'One Dance was by a Mexican in 2016.'}).json()
        surfaces = [s["surface"] for s in body["spans"]]
        assert "One Dance" in surfaces
        assert "Mexican" in surfaces
        assert "2016" in surfaces

    def test_spans_offsets_match(self, shim_client):
        text = "The Giver is a 2014 American film."
        body = shim_client.post("/spans", json={"text": text}).json()
        for span in body["spans"]:
            assert text[span["start"] : span["end"]] == span["surface"]

    def test_schema_violation_is_400(self, shim_client):
        response = shim_client.post("/embed", json={"wrong": "shape"})
        assert response.status_code == 400
        response = shim_client.post("/entail", json={"premise": 3})
        assert response.status_code == 400

    def test_generate_unconfigured_is_503(self, shim_client):
        response = shim_client.post(
            "/generate", json={"prompt": "Input Claim: x.\nOutput Correction:", "max_tokens": 8}
        )
        assert response.status_code == 503
        assert "error" in response.json()


class TestMissingModels:
    def test_unconfigured_endpoints_answer_503(self):
        from fastapi.testclient import TestClient

        from factfix_shim import ShimConfig, create_app

        app = create_app(ShimConfig())  # nothing configured
        with TestClient(app, raise_server_exceptions=False) as client:
            health = client.get("/health").json()
            assert not health["embed"] and not health["entail"] and not health["rerank"]
            assert health["spans"]  # rule-based extraction needs no model
            assert client.post("/embed", json={"texts": ["x"]}).status_code == 503
            assert client.post("/entail", json={"premise": "a", "hypothesis": "b"}).status_code == 503
            assert client.post("/rerank", json={"query": "a", "docs": ["b"]}).status_code == 503


class _UpstreamHandler:
    """Minimal completion upstream for proxy tests."""

    @staticmethod
    def serve(port_holder, stop_event):
        from http.server import BaseHTTPRequestHandler, HTTPServer

        class Handler(BaseHTTPRequestHandler):
            def do_POST(self):
                length = int(self.headers.get("Content-Length", 0))
                payload = json.loads(self.rfile.read(length) or b"{}")
                prompt = payload.get("prompt", "")
                last = [l for l in prompt.splitlines() if l.startswith("Input Claim:")]
                text = last[-1].split(":", 1)[1].strip() if last else "echo"
                body = json.dumps({"text": text}).encode()
                self.send_response(200)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(body)))
                self.end_headers()
                self.wfile.write(body)

            def log_message(self, *args):
                pass

        server = HTTPServer(("127.0.0.1", 0), Handler)
        port_holder.append(server.server_address[1])
        while not stop_event.is_set():
            server.handle_request()


@pytest.fixture
def upstream():
    import time

    port_holder, stop = [], threading.Event()
    thread = threading.Thread(target=_UpstreamHandler.serve, args=(port_holder, stop), daemon=True)
    thread.start()
    deadline = time.time() + 10
    while not port_holder and time.time() < deadline:
        time.sleep(0.01)
    assert port_holder, "upstream server did not start"
    yield f"http://127.0.0.1:{port_holder[0]}/generate"
    stop.set()


class TestGenerationProxy:
    def test_proxies_to_upstream(self, upstream):
        from fastapi.testclient import TestClient

        from factfix_shim import ShimConfig, create_app

        app = create_app(ShimConfig(generation_upstream_url=upstream))
        with TestClient(app, raise_server_exceptions=False) as client:
            assert client.get("/health").json()["generate"]
            response = client.post("/generate", json={
                "prompt": "Input Claim: The Giver is a film.\nOutput Correction:",
                "max_tokens": 16, "temperature": 0.0,
            })
            assert response.status_code == 200
            body = response.json()
            jsonschema.validate(body, load_schema("generate"))
            assert body["text"] == "The Giver is a film."


@pytest.mark.skipif(
    not os.environ.get("FACTFIX_SHIM_NLI_REAL"),
    reason="needs a trained NLI checkpoint (set FACTFIX_SHIM_NLI_REAL); "
           "no model hub is reachable from this environment",
)
def test_trained_nli_verbatim_premise_exceeds_090():
    """With a real NLI model, premise containing the hypothesis verbatim
    must score entailment above 0.9."""
    from fastapi.testclient import TestClient

    from factfix_shim import ShimConfig, create_app

    app = create_app(ShimConfig(nli_model_id=os.environ["FACTFIX_SHIM_NLI_REAL"]))
    with TestClient(app) as client:
        premise = ("Signs of a pulmonary embolism include low blood oxygen levels. "
                   "The Giver is a 2014 American film.")
        response = client.post("/entail", json={"premise": premise,
                                                "hypothesis": "The Giver is a 2014 American film."})
        assert response.json()["entailment"] > 0.9
