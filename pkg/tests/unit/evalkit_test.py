import csv
import json

import pytest

from unstract.lewis.corpus import TokenSeq
from unstract.lewis.evalkit import (
    CSV_COLUMNS,
    BleuConfig,
    corpus_bleu,
    evaluate,
    self_bleu,
    sentence_bleu,
    transfer_accuracy,
)
from unstract.lewis.exceptions import ConfigError, EmptyInput, ShapeError, VocabMismatch


def seqs(*texts):
    return [TokenSeq.of(t) for t in texts]


def test_copy_scores_full_bleu():
    assert sentence_bleu(TokenSeq.of("the food was good ."), TokenSeq.of("the food was good .")) == 100.0
    # shorter than the n-gram order still scores 100 against itself
    assert sentence_bleu("good .", "good .") == 100.0
    outputs = seqs("the food was good .", "the staff was bad .")
    assert corpus_bleu(outputs, outputs) == 100.0
    assert self_bleu(outputs, outputs) == 100.0


def test_disjoint_scores_zero_without_smoothing():
    assert sentence_bleu("a b c d", "e f g h") == 0.0
    assert sentence_bleu("a b c d", "e f g h", BleuConfig(smoothing="add-epsilon")) > 0.0


def test_add_epsilon_floors_every_order_without_matches():
    # (0.1/4 * 0.1/3 * 0.1/2 * 0.1/1) ** (1/4)
    smoothed = BleuConfig(smoothing="add-epsilon")
    assert sentence_bleu("a b c d", "e f g h", smoothed) == pytest.approx(4.518, abs=0.01)
    assert corpus_bleu(seqs("a b c d"), seqs("e f g h"), smoothed) == pytest.approx(4.518, abs=0.01)


REFERENCE = "great place , great food !"


def test_sentence_bleu_golden_values():
    # (5/6 * 4/5 * 3/4 * 2/3) ** (1/4)
    assert sentence_bleu("pathetic place , great food !", REFERENCE) == pytest.approx(76.0, abs=0.05)
    # no trigram matches
    assert sentence_bleu("amazing place , awesome food !", REFERENCE) == 0.0
    assert sentence_bleu("amazing place , awesome food !", REFERENCE, BleuConfig(smoothing="add-epsilon")) > 0.0


def test_bleu_lowercases():
    assert sentence_bleu(["The", "Food", "."], ["the", "food", "."]) == 100.0


def test_corpus_bleu_checks_shapes():
    with pytest.raises(ShapeError):
        corpus_bleu(seqs("a b"), seqs("a b", "c d"))
    with pytest.raises(EmptyInput):
        corpus_bleu([], [])


def test_bleu_config_validation():
    with pytest.raises(ConfigError) as e:
        BleuConfig(max_n=0)
    assert e.value.key_path == "eval.bleu.max_n"
    with pytest.raises(ConfigError):
        BleuConfig(smoothing="exp")


@pytest.fixture(name="eval_classifier")
def keyword_classifier(mocker, styles, vocabulary):
    """Positive iff the sentence says "good"."""
    classifier = mocker.MagicMock()
    classifier.model.vocab_hash = vocabulary.hash
    classifier.classify.side_effect = lambda seq: (styles.second, 0.9) if "good" in seq else (styles.first, 0.8)
    classifier.style_probability.side_effect = lambda seq, style: (0.9 if "good" in seq else 0.2) if style.index \
        else (0.1 if "good" in seq else 0.8)
    return classifier


def test_transfer_accuracy_counts_target_hits(mocker, styles):
    classifier = mocker.MagicMock()
    classifier.classify.side_effect = [(styles.second, 0.9)] * 19 + [(styles.first, 0.7)] * 6
    outputs = seqs(*["the food was good ."] * 25)
    assert transfer_accuracy(outputs, styles.second, classifier) == 76.0


def test_transfer_accuracy_checks_inputs(eval_classifier, styles, vocabulary):
    with pytest.raises(EmptyInput):
        transfer_accuracy([], styles.second, eval_classifier)
    with pytest.raises(ShapeError):
        transfer_accuracy(seqs("good ."), [styles.first, styles.second], eval_classifier)
    eval_classifier.model.vocab_hash = "another"
    with pytest.raises(VocabMismatch):
        transfer_accuracy(seqs("good ."), styles.second, eval_classifier, vocabulary)


def test_transfer_accuracy_per_output_targets(eval_classifier, styles):
    outputs = seqs("the food was good .", "the food was bad .")
    assert transfer_accuracy(outputs, [styles.second, styles.first], eval_classifier) == 100.0
    assert transfer_accuracy(outputs, styles.first, eval_classifier) == 50.0


def test_evaluate_report(tmp_path, eval_classifier, styles):
    sources = seqs("the food was bad .", "the staff was bad .")
    outputs = seqs("the food was good .", "the staff was bad .")
    report = evaluate(sources, outputs, styles.second, eval_classifier, references=outputs, config_hash="abc")

    assert report.accuracy == 50.0
    assert report.bleu == 100.0
    assert 0.0 < report.sbleu < 100.0
    assert report.count == 2
    first, second = report.rows
    assert first.correct and not second.correct
    assert first.bleu == 100.0
    assert second.sbleu == 100.0
    assert first.cls_prob == pytest.approx(0.9)

    report.write_json(tmp_path / "eval.json")
    with open(tmp_path / "eval.json", encoding="utf-8") as f:
        summary = json.load(f)
    assert summary == {"accuracy": 50.0, "sbleu": report.sbleu, "bleu": 100.0, "count": 2, "config_hash": "abc"}

    report.write_csv(tmp_path / "rows.csv")
    with open(tmp_path / "rows.csv", encoding="utf-8", newline="") as f:
        rows = list(csv.reader(f))
    assert tuple(rows[0]) == CSV_COLUMNS
    assert len(rows) == 3
    assert rows[1][:3] == ["the food was bad .", "the food was good .", "the food was good ."]
    assert rows[1][-1] == "1" and rows[2][-1] == "0"


def test_evaluate_without_references(eval_classifier, styles):
    sources = seqs("the food was bad .")
    report = evaluate(sources, sources, styles.second, eval_classifier)
    assert report.bleu is None
    assert report.rows[0].bleu is None and report.rows[0].reference is None
    assert report.accuracy == 0.0


def test_evaluate_checks_alignment(eval_classifier, styles):
    with pytest.raises(ShapeError):
        evaluate(seqs("a b"), seqs("a b", "c"), styles.second, eval_classifier)
    with pytest.raises(ShapeError):
        evaluate(seqs("a b"), seqs("a b"), styles.second, eval_classifier, references=[])
