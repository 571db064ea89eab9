import json

import pytest

from factfix.backends import BackendClient, BackendProfile
from factfix.core import Claim
from factfix.retrieval import CorpusDoc, InvertedIndex, build_embedding_store


@pytest.fixture
def toy_docs():
    return [
        CorpusDoc("d1", "apple banana apple"),
        CorpusDoc("d2", "banana cherry"),
        CorpusDoc("d3", "cherry cherry cherry durian"),
    ]


@pytest.fixture
def toy_index(toy_docs):
    return InvertedIndex.build(toy_docs)


@pytest.fixture
def wiki_docs():
    """A small encyclopedia-flavored corpus exercising all retrievers."""
    return [
        CorpusDoc("w1", '"One Dance" is a song by Canadian rapper Drake from his fourth studio album.'),
        CorpusDoc("w2", "The Jarabe Tapatio, better known internationally as the Mexican Hat Dance, is a folk dance."),
        CorpusDoc("w3", "Pulmonary embolism is a blockage of an artery in the lungs. Signs of a PE include low blood oxygen levels."),
        CorpusDoc("w4", "The Giver is a 2014 American social science fiction film directed by Phillip Noyce."),
        CorpusDoc("w5", "Aspen Santa Fe Ballet is an American contemporary dance company."),
        CorpusDoc("w6", "One Dance is a 2003 Canadian romantic drama film."),
    ]


@pytest.fixture
def wiki_index(wiki_docs):
    return InvertedIndex.build(wiki_docs)


@pytest.fixture
def stub_client():
    return BackendClient(BackendProfile(stub_mode=True, stub_seed=7))


@pytest.fixture
def wiki_store(wiki_index, stub_client):
    return build_embedding_store(wiki_index, stub_client)


@pytest.fixture
def pe_claim():
    return Claim("pe1", "Pulmonary embolism is indicated by high blood oxygen levels.")


def write_jsonl(path, rows):
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row, ensure_ascii=False) + "\n")
    return path
