import os

import pytest

from unstract.lewis.corpus import SPECIALS, TaskStyles, Vocabulary
from unstract.lewis.neural import ModelConfig
from unstract.lewis.toydata import make_toy_corpus

WORDS = "the food staff was is good bad great awful and . !".split()


@pytest.fixture(name="styles", scope="session")
def task_styles():
    return TaskStyles.from_names(["negative", "positive"])


@pytest.fixture(name="vocabulary", scope="session")
def small_vocabulary():
    return Vocabulary([*SPECIALS, *WORDS], [0] * len(SPECIALS) + [1] * len(WORDS))


@pytest.fixture(name="tiny_config")
def tiny_model_config():
    return ModelConfig(layers=2, heads=2, model_dim=16, ff_dim=32, max_len=40, dropout=0.0, decoder_layers=1)


@pytest.fixture(name="toy_dir", scope="session")
def toy_corpus_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("toy")
    make_toy_corpus(out, "sentiment", train_size=60, valid_size=20, test_size=10, seed=0)
    return str(out)


@pytest.fixture(name="write_lines")
def line_writer(tmp_path):
    def write(name, lines):
        path = os.path.join(tmp_path, name)
        with open(path, "w", encoding="utf-8") as f:
            f.write("\n".join(lines) + "\n")
        return path

    return write
