import dataclasses

import numpy as np
import pytest

from unstract.lewis.corpus import SPECIALS, Vocabulary
from unstract.lewis.exceptions import ConfigError, FormatError, LengthError, VocabMismatch
from unstract.lewis.neural import ModelConfig, TrainConfig, encode, gradient_check, load, new_model, save, train
from unstract.lewis.neural.decoding import FreeConstraint, beam_search, sample
from unstract.lewis.neural.model import ClassifierBatch, Seq2SeqBatch, TaggerBatch, pad_batch, pad_labels

VOCAB_SIZE = 20


def classifier_batch():
    ids, mask = pad_batch([[7, 12, 13, 14], [7, 15, 16]], pad_id=0)
    return ClassifierBatch(ids, mask, np.array([0, 1]))


def tagger_batch():
    ids, mask = pad_batch([[9, 12, 13, 3], [10, 14, 3]], pad_id=0)
    insert_labels = pad_labels([[-1, 1, 0, 0], [-1, 0, 1]], ids.shape[1])
    op_labels = pad_labels([[-1, 0, 2, -1], [-1, 1, -1]], ids.shape[1])
    return TaggerBatch(ids, mask, insert_labels, op_labels)


def seq2seq_batch():
    src_ids, src_mask = pad_batch([[12, 13, 3], [14, 3]], pad_id=0)
    dec_ids, dec_mask = pad_batch([[2, 15, 16], [2, 17]], pad_id=0)
    labels = pad_labels([[15, 16, 3], [17, 3]], dec_ids.shape[1])
    return Seq2SeqBatch(src_ids, src_mask, dec_ids, dec_mask, labels)


@pytest.mark.parametrize(
    "role, make_batch",
    [("classifier", classifier_batch), ("tagger", tagger_batch), ("generator", seq2seq_batch)],
)
def test_gradient_check(tiny_config, role, make_batch):
    model = new_model(role, "hash", VOCAB_SIZE, tiny_config, seed=3)
    assert gradient_check(model, make_batch(), num_params=60, seed=1) < 1e-4


def test_attention_rows_are_normalised(tiny_config):
    model = new_model("classifier", "hash", VOCAB_SIZE, tiny_config, seed=0)
    hidden, record = encode(model, [7, 12, 13, 14, 15], record_attention=True)
    assert hidden.shape == (5, tiny_config.model_dim)
    assert len(record.weights) == tiny_config.layers
    assert record.weights[0].shape == (tiny_config.heads, 5, 5)
    assert record.max_normalization_error() < 1e-5


def test_encode_rejects_long_input(tiny_config):
    model = new_model("classifier", "hash", VOCAB_SIZE, tiny_config, seed=0)
    with pytest.raises(LengthError):
        encode(model, [12] * (tiny_config.max_len + 1))


def test_zero_learning_rate_leaves_parameters_unchanged(tiny_config):
    model = new_model("classifier", "hash", VOCAB_SIZE, tiny_config, seed=0)
    before = {name: p.copy() for name, p in model.net.named_parameters()}
    examples = [classifier_batch()] * 4
    train(model, examples, lambda batch: batch[0], TrainConfig(steps=3, batch_size=2, lr=0.0, log_every=0), seed=0)
    for name, p in model.net.named_parameters():
        np.testing.assert_array_equal(p, before[name])
    assert model.metadata["train_steps"] == 3


def test_training_reduces_loss(tiny_config):
    model = new_model("classifier", "hash", VOCAB_SIZE, tiny_config, seed=0)
    result = train(model, [classifier_batch()], lambda batch: batch[0],
                   TrainConfig(steps=60, batch_size=1, lr=1e-2, warmup_steps=0, log_every=0), seed=0)
    assert result.final_loss < result.initial_loss


def test_gradient_check_scores_agreeing_pairs_as_zero(tiny_config):
    model = new_model("tagger", "hash", VOCAB_SIZE, tiny_config, seed=3)
    assert gradient_check(model, tagger_batch(), num_params=20, seed=1, atol=np.inf) == 0.0


def test_same_seed_repeats_loss_curve(tiny_config):
    config = dataclasses.replace(tiny_config, dropout=0.1)
    examples = [seq2seq_batch()] * 3
    train_config = TrainConfig(steps=8, batch_size=2, lr=1e-2, warmup_steps=2, log_every=0)
    curves = [
        train(new_model("generator", "hash", VOCAB_SIZE, config, seed=4), examples, lambda batch: batch[0],
              train_config, seed=11).loss_curve
        for _ in range(2)
    ]
    assert curves[0] == curves[1]


@pytest.mark.slow
@pytest.mark.parametrize(
    "role, make_batch",
    [
        ("classifier", classifier_batch),
        ("tagger", tagger_batch),
        ("generator", seq2seq_batch),
        ("seq2seq", seq2seq_batch),
        ("infiller", seq2seq_batch),
    ],
)
def test_memorizes_a_single_batch(tiny_config, role, make_batch):
    model = new_model(role, "hash", VOCAB_SIZE, tiny_config, seed=0)
    result = train(model, [make_batch()], lambda batch: batch[0],
                   TrainConfig(steps=400, batch_size=1, lr=1e-2, warmup_steps=0, log_every=0), seed=0)
    assert result.final_loss < 0.05


def test_model_config_validation():
    with pytest.raises(ConfigError) as e:
        ModelConfig(layers=1).validate("models.classifier")
    assert e.value.key_path == "models.classifier.layers"
    with pytest.raises(ConfigError):
        ModelConfig(model_dim=10, heads=4).validate()


@pytest.fixture(name="vocab20")
def twenty_token_vocabulary():
    content = [f"w{i}" for i in range(VOCAB_SIZE - len(SPECIALS))]
    return Vocabulary([*SPECIALS, *content], [0] * len(SPECIALS) + [1] * len(content))


def test_save_load_round_trip(tmp_path, tiny_config, vocab20):
    model = new_model("tagger", vocab20.hash, len(vocab20), tiny_config, seed=5)
    model.metadata["note"] = "kept"
    path = tmp_path / "tagger.lewis"
    save(model, path)
    loaded = load(path, vocab20)
    assert loaded.role == "tagger"
    assert loaded.config == tiny_config
    assert loaded.metadata["note"] == "kept"
    original = dict(model.net.named_parameters())
    for name, p in loaded.net.named_parameters():
        np.testing.assert_array_equal(p, original[name])
    ids = [9, 12, 13, 14, 3]
    np.testing.assert_array_equal(encode(loaded, ids)[0], encode(model, ids)[0])


def test_load_rejects_other_vocabulary(tmp_path, tiny_config, vocab20, vocabulary):
    path = tmp_path / "m.lewis"
    save(new_model("classifier", vocab20.hash, len(vocab20), tiny_config, seed=0), path)
    with pytest.raises(VocabMismatch):
        load(path, vocabulary)


def test_load_rejects_corrupt_files(tmp_path, tiny_config, vocab20):
    path = tmp_path / "m.lewis"
    save(new_model("classifier", vocab20.hash, len(vocab20), tiny_config, seed=0), path)
    data = path.read_bytes()
    truncated = tmp_path / "truncated.lewis"
    truncated.write_bytes(data[:-10])
    with pytest.raises(FormatError):
        load(truncated, vocab20)
    bad_magic = tmp_path / "magic.lewis"
    bad_magic.write_bytes(b"NOTMODEL" + data[8:])
    with pytest.raises(FormatError):
        load(bad_magic, vocab20)
    trailing = tmp_path / "trailing.lewis"
    trailing.write_bytes(data + b"\x00\x00\x00\x00")
    with pytest.raises(FormatError):
        load(trailing, vocab20)


def test_beam_search_orders_hypotheses(tiny_config):
    model = new_model("generator", "hash", VOCAB_SIZE, tiny_config, seed=2)
    constraint = FreeConstraint(np.asarray([*range(12, VOCAB_SIZE), 3]), eos_id=3)
    hyps = beam_search(model.net, [12, 13, 3], bos_id=2, constraint=constraint, max_steps=6, beam=3)
    assert 1 <= len(hyps) <= 3
    finished = [h for h in hyps if h.finished]
    assert hyps[: len(finished)] == finished
    scores = [h.score for h in finished]
    assert scores == sorted(scores, reverse=True)
    assert all(h.ids[0] == 2 for h in hyps)


def test_greedy_sampling_is_deterministic(tiny_config):
    model = new_model("generator", "hash", VOCAB_SIZE, tiny_config, seed=2)
    constraint = FreeConstraint(np.asarray([*range(12, VOCAB_SIZE), 3]), eos_id=3)
    first = sample(model.net, [12, 13, 3], 2, constraint, max_steps=5)
    second = sample(model.net, [12, 13, 3], 2, constraint, max_steps=5, rng=np.random.default_rng(9),
                    temperature=0.0)
    assert first.ids == second.ids
    assert len(first.ids) <= 6
