from __future__ import annotations

from pathlib import Path

import pytest

from chronosearch.corpus import (
    NormalizationConfig,
    SegmentUnit,
    ingest_corpus,
    segment_paragraphs,
)
from chronosearch.invindex import build_index, persist
from chronosearch.judging import load_topics

FIXTURES = Path(__file__).parent / "fixtures"


@pytest.fixture(scope="session")
def fixtures_dir() -> Path:
    return FIXTURES


@pytest.fixture(scope="session")
def norm_cfg() -> NormalizationConfig:
    return NormalizationConfig()


@pytest.fixture(scope="session")
def corpus_docs():
    return list(ingest_corpus(FIXTURES / "corpus.jsonl"))


@pytest.fixture(scope="session")
def genre_passages(corpus_docs, norm_cfg):
    out = {"fiction": [], "nonfiction": []}
    for doc in corpus_docs:
        out[doc.genre.value].extend(segment_paragraphs(doc, SegmentUnit.PARAGRAPH, norm_cfg))
    return out


@pytest.fixture(scope="session")
def fiction_index(genre_passages, norm_cfg):
    return build_index(genre_passages["fiction"], norm_cfg, SegmentUnit.PARAGRAPH)


@pytest.fixture(scope="session")
def nonfiction_index(genre_passages, norm_cfg):
    return build_index(genre_passages["nonfiction"], norm_cfg, SegmentUnit.PARAGRAPH)


@pytest.fixture(scope="session")
def merged_index(genre_passages, norm_cfg):
    both = genre_passages["fiction"] + genre_passages["nonfiction"]
    return build_index(both, norm_cfg, SegmentUnit.PARAGRAPH, genre="merged")


@pytest.fixture(scope="session")
def indexes(fiction_index, nonfiction_index, merged_index):
    return {
        "fiction": fiction_index,
        "nonfiction": nonfiction_index,
        "merged": merged_index,
    }


@pytest.fixture(scope="session")
def index_dirs(tmp_path_factory, indexes):
    root = tmp_path_factory.mktemp("indexes")
    dirs = {}
    for genre, index in indexes.items():
        path = root / genre
        persist(index, path)
        dirs[genre] = path
    return dirs


@pytest.fixture(scope="session")
def topics():
    return load_topics(FIXTURES / "topics.jsonl")


@pytest.fixture(scope="session")
def passage_texts(corpus_docs, norm_cfg):
    texts = {}
    for doc in corpus_docs:
        for passage in segment_paragraphs(doc, SegmentUnit.PARAGRAPH, norm_cfg):
            texts[passage.passage_id] = passage.text
    return texts


@pytest.fixture(scope="session")
def token_docs(genre_passages):
    """passage_id -> token list maps per genre, for the brute-force oracles."""
    return {
        genre: {p.passage_id: p.tokens for p in passages}
        for genre, passages in genre_passages.items()
    }
