import numpy as np
import pytest

from melclone import corpus as cp


TINY_SPEC = cp.CorpusSpec(
    n_train_speakers=4,
    n_val_speakers=2,
    n_clone_speakers=2,
    utterances_per_speaker=6,
    min_phones=4,
    max_phones=8,
    seed=7,
)


@pytest.fixture(scope="session")
def tiny_corpus_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("tiny_corpus")
    cp.generate_corpus(TINY_SPEC, root)
    return root


@pytest.fixture(scope="session")
def tiny_corpus(tiny_corpus_dir):
    return cp.Corpus(tiny_corpus_dir / "manifest.jsonl")


@pytest.fixture()
def rng():
    return np.random.default_rng(0)
