"""Fixtures: tiny valid checkpoints built on the fly.

The sandbox has no route to a model hub, so endpoint contracts are
exercised with miniature randomly initialized (but deterministically
seeded) encoder checkpoints saved to disk. They are real transformers
checkpoints in every structural sense; only their weights are untrained,
so tests assert contracts and determinism, not linguistic quality.
"""

import pytest

VOCAB = [
    "[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]",
    "the", "a", "is", "by", "was", "of", "in", "on", "and",
    "one", "dance", "canadian", "mexican", "song", "film", "giver",
    "pulmonary", "embolism", "blood", "oxygen", "levels", "high", "low",
    "claim", "evidence", "correction", "mill", "barn", "wheat", "golden",
    "fresh", "stale", "tower", "gate", "yard", "korin", "qux", "##s", "##ing",
]


def _tiny_bert_config(num_labels=None, **extra):
    from transformers import BertConfig

    kwargs = dict(
        vocab_size=len(VOCAB),
        hidden_size=16,
        num_hidden_layers=1,
        num_attention_heads=2,
        intermediate_size=32,
        max_position_embeddings=128,
    )
    kwargs.update(extra)
    if num_labels is not None:
        kwargs["num_labels"] = num_labels
    return BertConfig(**kwargs)


def _save_tokenizer(path):
    from transformers import BertTokenizerFast

    vocab_file = path / "vocab.txt"
    vocab_file.write_text("\n".join(VOCAB), encoding="utf-8")
    tokenizer = BertTokenizerFast(vocab_file=str(vocab_file), do_lower_case=True)
    tokenizer.save_pretrained(str(path))


@pytest.fixture(scope="session")
def checkpoints(tmp_path_factory):
    """Build and save the three tiny checkpoints once per session."""
    import torch
    from transformers import BertForSequenceClassification, BertModel

    root = tmp_path_factory.mktemp("tiny-models")
    paths = {}

    torch.manual_seed(7)
    embed_dir = root / "embed"
    BertModel(_tiny_bert_config()).save_pretrained(str(embed_dir))
    _save_tokenizer(embed_dir)
    paths["embed"] = str(embed_dir)

    torch.manual_seed(11)
    nli_dir = root / "nli"
    nli_cfg = _tiny_bert_config(
        num_labels=3,
        id2label={0: "entailment", 1: "neutral", 2: "contradiction"},
        label2id={"entailment": 0, "neutral": 1, "contradiction": 2},
    )
    BertForSequenceClassification(nli_cfg).save_pretrained(str(nli_dir))
    _save_tokenizer(nli_dir)
    paths["nli"] = str(nli_dir)

    torch.manual_seed(13)
    rerank_dir = root / "rerank"
    BertForSequenceClassification(_tiny_bert_config(num_labels=1)).save_pretrained(str(rerank_dir))
    _save_tokenizer(rerank_dir)
    paths["rerank"] = str(rerank_dir)

    return paths


@pytest.fixture(scope="session")
def shim_client(checkpoints):
    from fastapi.testclient import TestClient

    from factfix_shim import ShimConfig, create_app

    cfg = ShimConfig(
        embed_model_id=checkpoints["embed"],
        nli_model_id=checkpoints["nli"],
        rerank_model_id=checkpoints["rerank"],
        max_batch=8,
    )
    app = create_app(cfg)
    with TestClient(app, raise_server_exceptions=False) as client:
        yield client
