import csv
import json

import pytest
import yaml

from factfix.cli import main

from conftest import write_jsonl


CORPUS = [
    {"doc_id": "w1", "text": '"One Dance" is a song by Canadian rapper Drake from his fourth studio album.'},
    {"doc_id": "w2", "text": "The Jarabe Tapatio, better known internationally as the Mexican Hat Dance, is a folk dance."},
    {"doc_id": "w3", "text": "Pulmonary embolism is a blockage of an artery in the lungs. Signs of a PE include low blood oxygen levels."},
    {"doc_id": "w4", "text": "The Giver is a 2014 American social science fiction film directed by Phillip Noyce."},
]

CLAIMS = [
    {"id": "c1", "claim": "Pulmonary embolism is indicated by high blood oxygen levels.",
     "gold_correction": "Pulmonary embolism is indicated by low blood oxygen levels.",
     "label": "REFUTED"},
    {"id": "c2", "claim": "One Dance is a song by Canadian rapper Drake.",
     "gold_correction": "One Dance is a song by Canadian rapper Drake.",
     "label": "SUPPORTED"},
]


@pytest.fixture
def workdir(tmp_path):
    corpus = write_jsonl(tmp_path / "corpus.jsonl", CORPUS)
    claims = write_jsonl(tmp_path / "claims.jsonl", CLAIMS)
    config = tmp_path / "config.yaml"
    config.write_text(yaml.safe_dump({
        "mode": "M2C_PLUS",
        "seed": 7,
        "retrieval": {"context_size": 2, "pool_size": 4},
        "backends": {"stub_mode": True},
    }))
    return {"root": tmp_path, "corpus": str(corpus), "claims": str(claims),
            "config": str(config), "index": str(tmp_path / "index")}


class TestIndexCommand:
    def test_build_ok(self, workdir, capsys):
        rc = main(["index", "--corpus", workdir["corpus"], "--index-dir", workdir["index"]])
        assert rc == 0
        manifest = json.loads((workdir["root"] / "index" / "manifest.json").read_text())
        assert manifest["doc_count"] == 4
        assert (workdir["root"] / "index" / "embeddings.json").exists()

    def test_missing_corpus(self, workdir, capsys):
        rc = main(["index", "--corpus", str(workdir["root"] / "nope.jsonl"),
                   "--index-dir", workdir["index"]])
        assert rc == 2
        assert "error: CorpusNotFound:" in capsys.readouterr().err

    def test_duplicate_doc_id(self, workdir, capsys):
        bad = write_jsonl(workdir["root"] / "bad.jsonl", [
            {"doc_id": "a", "text": "x"}, {"doc_id": "a", "text": "y"},
        ])
        rc = main(["index", "--corpus", str(bad), "--index-dir", workdir["index"]])
        assert rc == 3
        assert "error: DuplicateDocId:" in capsys.readouterr().err

    def test_skip_embeddings(self, workdir):
        rc = main(["index", "--corpus", workdir["corpus"], "--index-dir", workdir["index"],
                   "--skip-embeddings"])
        assert rc == 0
        assert not (workdir["root"] / "index" / "embeddings.json").exists()


def _index(workdir):
    assert main(["index", "--corpus", workdir["corpus"], "--index-dir", workdir["index"],
                 "--config", workdir["config"]]) == 0


class TestRunCommand:
    def test_zero_shot_echo(self, workdir):
        out = str(workdir["root"] / "out.jsonl")
        rc = main(["run", "--claims", workdir["claims"], "--config", workdir["config"],
                   "--out", out, "--mode", "ZERO_SHOT"])
        assert rc == 0
        rows = [json.loads(line) for line in open(out)]
        assert all(row["final_text"] == row["input"] for row in rows)

    def test_m2c_plus_decision_tally(self, workdir):
        _index(workdir)
        out = str(workdir["root"] / "out.jsonl")
        rc = main(["run", "--claims", workdir["claims"], "--config", workdir["config"],
                   "--out", out, "--index-dir", workdir["index"]])
        assert rc == 0
        rows = [json.loads(line) for line in open(out)]
        for row in rows:
            assert sum(g["count"] for g in row["decision"]["tally"]) == 4
        by_id = {row["claim_id"]: row for row in rows}
        assert by_id["c1"]["final_text"] == \
            "Pulmonary embolism is indicated by low blood oxygen levels."
        assert by_id["c2"]["final_text"] == "One Dance is a song by Canadian rapper Drake."

    def test_context_size_propagates(self, workdir):
        _index(workdir)
        out = str(workdir["root"] / "out.jsonl")
        rc = main(["run", "--claims", workdir["claims"], "--config", workdir["config"],
                   "--out", out, "--index-dir", workdir["index"], "--mode", "M2C"])
        assert rc == 0
        for line in open(out):
            row = json.loads(line)
            for rec in row["per_retriever"]:
                assert len(rec["evidence"]) <= 2

    def test_decision_records_file(self, workdir):
        _index(workdir)
        out = str(workdir["root"] / "out.jsonl")
        assert main(["run", "--claims", workdir["claims"], "--config", workdir["config"],
                     "--out", out, "--index-dir", workdir["index"]]) == 0
        decisions = [json.loads(line) for line in open(out + ".decisions.jsonl")]
        assert len(decisions) == 2
        for dec in decisions:
            assert set(dec) == {"claim_id", "final_text", "tally", "tie_break_used"}
            for group in dec["tally"]:
                assert set(group) == {"text", "count", "members"}
                for member in group["members"]:
                    assert set(member) == {"retriever", "text", "score"}

    def test_manifest_written(self, workdir):
        _index(workdir)
        out = str(workdir["root"] / "out.jsonl")
        assert main(["run", "--claims", workdir["claims"], "--config", workdir["config"],
                     "--out", out, "--index-dir", workdir["index"]]) == 0
        manifest = json.loads(open(out + ".manifest.json").read())
        assert manifest["counts"]["claims"] == 2
        assert manifest["seed"] == 7
        assert manifest["config_snapshot"]["pipeline"]["mode"] == "M2C_PLUS"

    def test_missing_claims(self, workdir, capsys):
        rc = main(["run", "--claims", str(workdir["root"] / "nope.jsonl"),
                   "--out", str(workdir["root"] / "o.jsonl")])
        assert rc == 2
        assert "error: ClaimsNotFound:" in capsys.readouterr().err

    def test_retrieval_mode_requires_index(self, workdir, capsys):
        rc = main(["run", "--claims", workdir["claims"], "--config", workdir["config"],
                   "--out", str(workdir["root"] / "o.jsonl")])
        assert rc == 2
        assert "error: IndexNotLoaded:" in capsys.readouterr().err

    def test_global_backend_absence_is_fatal(self, workdir, capsys):
        _index(workdir)
        dead = workdir["root"] / "dead.yaml"
        dead.write_text(yaml.safe_dump({
            "mode": "M2C", "seed": 7,
            "retrieval": {"context_size": 2, "pool_size": 4},
            "backends": {"stub_mode": False, "base_url": "http://127.0.0.1:9",
                          "timeout_ms": 500, "retry": {"attempts": 1}},
        }))
        rc = main(["run", "--claims", workdir["claims"], "--config", str(dead),
                   "--out", str(workdir["root"] / "o.jsonl"), "--index-dir", workdir["index"]])
        assert rc == 1
        assert "backend unreachable" in capsys.readouterr().err

    def test_skipped_embeddings_degrade_dense_retriever(self, workdir):
        assert main(["index", "--corpus", workdir["corpus"], "--index-dir", workdir["index"],
                     "--config", workdir["config"], "--skip-embeddings"]) == 0
        out = str(workdir["root"] / "out.jsonl")
        rc = main(["run", "--claims", workdir["claims"], "--config", workdir["config"],
                   "--out", out, "--index-dir", workdir["index"]])
        assert rc == 0
        for line in open(out):
            row = json.loads(line)
            assert sum(g["count"] for g in row["decision"]["tally"]) == 3
            assert any("no embedding store" in f for f in row["backend_failures"])

    def test_workers_preserve_order_and_bytes(self, workdir):
        _index(workdir)
        out1 = str(workdir["root"] / "out1.jsonl")
        out2 = str(workdir["root"] / "out2.jsonl")
        for out, workers in [(out1, "1"), (out2, "4")]:
            assert main(["run", "--claims", workdir["claims"], "--config", workdir["config"],
                         "--out", out, "--index-dir", workdir["index"],
                         "--workers", workers]) == 0
        assert open(out1, "rb").read() == open(out2, "rb").read()


class TestSweepCommand:
    def test_lambda_grid_rows(self, workdir):
        _index(workdir)
        grid = workdir["root"] / "grid.yaml"
        grid.write_text(yaml.safe_dump({"lambda": [0, 0.2, 0.5, 0.8, 1.0]}))
        out_dir = str(workdir["root"] / "sweep")
        rc = main(["sweep", "--claims", workdir["claims"], "--config", workdir["config"],
                   "--grid", str(grid), "--out-dir", out_dir, "--index-dir", workdir["index"]])
        assert rc == 0
        rows = list(csv.DictReader(open(workdir["root"] / "sweep" / "sweep.csv")))
        assert len(rows) == 5
        assert all(row["status"] == "ok" for row in rows)
        assert all(row["sari"] for row in rows)

    def test_retriever_subsets(self, workdir):
        _index(workdir)
        import itertools

        kinds = ["BM25", "RM3", "DENSE", "RERANK"]
        subsets = [list(c) for c in itertools.combinations(kinds, 3)]
        grid = workdir["root"] / "grid.yaml"
        grid.write_text(yaml.safe_dump({"retrievers": subsets}))
        out_dir = str(workdir["root"] / "sweep2")
        rc = main(["sweep", "--claims", workdir["claims"], "--config", workdir["config"],
                   "--grid", str(grid), "--out-dir", out_dir, "--index-dir", workdir["index"]])
        assert rc == 0
        rows = list(csv.DictReader(open(workdir["root"] / "sweep2" / "sweep.csv")))
        assert len(rows) == 4  # C(4, 3)

    def test_empty_grid_single_default_run(self, workdir):
        _index(workdir)
        grid = workdir["root"] / "grid.yaml"
        grid.write_text("{}")
        out_dir = str(workdir["root"] / "sweep3")
        rc = main(["sweep", "--claims", workdir["claims"], "--config", workdir["config"],
                   "--grid", str(grid), "--out-dir", out_dir, "--index-dir", workdir["index"]])
        assert rc == 0
        rows = list(csv.DictReader(open(workdir["root"] / "sweep3" / "sweep.csv")))
        assert len(rows) == 1

    def test_failing_grid_point_recorded_and_skipped(self, workdir):
        _index(workdir)
        grid = workdir["root"] / "grid.yaml"
        # a two-retriever ensemble is invalid; the other point must still run
        grid.write_text(yaml.safe_dump({
            "retrievers": [["BM25", "DENSE"], ["BM25", "DENSE", "RERANK"]],
            "mode": ["M2C_PLUS"],
        }))
        out_dir = str(workdir["root"] / "sweep4")
        rc = main(["sweep", "--claims", workdir["claims"], "--config", workdir["config"],
                   "--grid", str(grid), "--out-dir", out_dir, "--index-dir", workdir["index"]])
        assert rc == 0
        rows = list(csv.DictReader(open(workdir["root"] / "sweep4" / "sweep.csv")))
        assert len(rows) == 2
        statuses = sorted(row["status"] for row in rows)
        assert statuses[0].startswith("failed") and statuses[1] == "ok"

    def test_missing_config_file(self, workdir, capsys):
        rc = main(["run", "--claims", workdir["claims"],
                   "--config", str(workdir["root"] / "nope.yaml"),
                   "--out", str(workdir["root"] / "o.jsonl")])
        assert rc == 2
        assert "error: ConfigNotFound:" in capsys.readouterr().err

    def test_unknown_axis_rejected(self, workdir, capsys):
        grid = workdir["root"] / "grid.yaml"
        grid.write_text(yaml.safe_dump({"bogus": [1, 2]}))
        rc = main(["sweep", "--claims", workdir["claims"], "--grid", str(grid),
                   "--out-dir", str(workdir["root"] / "s")])
        assert rc == 2
        assert "error: UnknownGridAxis: bogus" in capsys.readouterr().err
