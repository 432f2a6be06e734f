import numpy as np
import pytest

from unstract.lewis.classifier import Template
from unstract.lewis.corpus import SLOT, StyleCorpus, TokenSeq
from unstract.lewis.exceptions import FormatError, VocabMismatch
from unstract.lewis.infill import build_ngram_infiller
from unstract.lewis.synthesis import (
    EditRecord,
    Origin,
    SynthesisConfig,
    cap_identity_records,
    label_pairs,
    make_record,
    read_pairs,
    read_records,
    synthesize,
    write_pairs,
    write_records,
)
from unstract.lewis.utils import LewisUtils

NEGATIVE_LINES = ["the food was bad .", "the staff was bad .", "the food is ."]
POSITIVE_LINES = ["the food was good .", "the staff was good ."]


def fake_classifier(mocker, vocabulary, styles):
    """Treats "good"/"great" as positive and "bad"/"awful" as negative
    and slots exactly those words."""
    classifier = mocker.MagicMock()
    classifier.styles = styles
    classifier.model.vocab_hash = vocabulary.hash

    def probabilities(seq):
        if any(t in ("good", "great") for t in seq):
            return np.array([0.1, 0.9])
        if any(t in ("bad", "awful") for t in seq):
            return np.array([0.8, 0.2])
        return np.array([0.5, 0.5])

    classifier.probabilities.side_effect = probabilities
    classifier.extract_template.side_effect = lambda seq, cap=False: Template(
        tuple(SLOT if t in ("good", "great", "bad", "awful") else t for t in seq)
    )
    return classifier


@pytest.fixture(name="corpora")
def style_corpora(write_lines, styles):
    return [
        StyleCorpus(write_lines("train.negative.txt", NEGATIVE_LINES), styles.first),
        StyleCorpus(write_lines("train.positive.txt", POSITIVE_LINES), styles.second),
    ]


@pytest.fixture(name="infillers")
def ngram_infillers(styles):
    return {
        "negative": build_ngram_infiller([TokenSeq.of(s) for s in NEGATIVE_LINES[:2]], 3, styles.first),
        "positive": build_ngram_infiller([TokenSeq.of(s) for s in POSITIVE_LINES], 3, styles.second),
    }


def test_synthesize_both_directions(mocker, vocabulary, styles, corpora, infillers):
    classifier = fake_classifier(mocker, vocabulary, styles)
    pairs, report = synthesize(corpora, classifier, infillers, vocabulary, SynthesisConfig(), seed=4)

    assert report.templates == 5
    assert report.skipped_no_slot == 1
    assert report.generated == 4
    assert report.kept == 4
    assert report.filter_rate == 0.0
    assert report.per_direction == {"negative->positive": 4, "positive->negative": 4}
    assert len(pairs) == 8

    first, second = pairs[0], pairs[1]
    assert first.direction == "negative->positive"
    assert (first.source.text, first.target.text) == ("the food was bad .", "the food was good .")
    assert (second.source, second.target) == (first.target, first.source)
    assert first.origin == second.origin
    assert first.origin.seed == LewisUtils.derive_seed(4, 0, 1)
    assert first.src_prob == pytest.approx(0.8) and first.tgt_prob == pytest.approx(0.9)


def test_synthesize_filters_disagreeing_fills(mocker, vocabulary, styles, corpora, infillers):
    classifier = fake_classifier(mocker, vocabulary, styles)
    # a "negative" infiller that writes positive words
    infillers["negative"] = build_ngram_infiller([TokenSeq.of(s) for s in POSITIVE_LINES], 3, styles.first)
    pairs, report = synthesize(corpora, classifier, infillers, vocabulary, seed=0)
    assert report.generated == 4
    assert report.kept == 0
    assert report.filter_rate == 1.0
    assert not any(p.kept for p in pairs)
    assert label_pairs(pairs) == []
    assert len(label_pairs(pairs, include_rejected=True)) == 8


def test_synthesize_checks_vocabularies(mocker, vocabulary, styles, corpora, infillers):
    classifier = fake_classifier(mocker, vocabulary, styles)
    classifier.model.vocab_hash = "another"
    with pytest.raises(VocabMismatch):
        synthesize(corpora, classifier, infillers, vocabulary)


def test_synthesize_passes_slot_cap(mocker, vocabulary, styles, corpora, infillers):
    classifier = fake_classifier(mocker, vocabulary, styles)
    synthesize(corpora, classifier, infillers, vocabulary, SynthesisConfig(slot_cap=True))
    assert all(call.kwargs["cap"] is True for call in classifier.extract_template.call_args_list)


def test_pairs_and_records_survive_jsonl(tmp_path, mocker, vocabulary, styles, corpora, infillers):
    classifier = fake_classifier(mocker, vocabulary, styles)
    pairs, _ = synthesize(corpora, classifier, infillers, vocabulary)
    write_pairs(tmp_path / "pairs.jsonl", pairs, "cfg")
    assert read_pairs(tmp_path / "pairs.jsonl", styles) == pairs

    records = label_pairs(pairs)
    write_records(tmp_path / "records.jsonl", records, "cfg")
    loaded = read_records(tmp_path / "records.jsonl", styles)
    assert loaded == records
    assert loaded[0].fills[0].tokens == ("good",)
    assert loaded[0].masked.tokens.text == "the food was <MASK> ."


def test_read_records_rejects_malformed_rows(write_lines, styles):
    path = write_lines("records.jsonl", ['{"source": "a"}'])
    with pytest.raises(FormatError):
        read_records(path, styles)


def test_edit_record_json(styles):
    record = make_record(TokenSeq.of("the food was bad ."), TokenSeq.of("the food was really good ."), styles.first,
                         styles.second, Origin("neg.txt", 3, 11))
    row = record.to_json("abc")
    assert row["ops"] == "KKKRKK"
    assert row["insert_before"] == [0, 0, 0, 0, 1, 0]
    assert row["masked"] == "the food was <MASK> ."
    assert row["fills"] == ["really good"]
    assert row["script"] == "K[the food was] R[bad→really] I[good] K[.]"
    assert row["origin"] == {"file": "neg.txt", "line": 3, "seed": 11}
    assert row["direction"] == "negative->positive"
    assert not record.is_identity


def _records(styles, identity_groups, edit_groups):
    records = []
    for i in range(edit_groups):
        origin = Origin("edits.txt", i + 1, 0)
        records.append(make_record(TokenSeq.of("the food was bad ."), TokenSeq.of("the food was good ."),
                                   styles.first, styles.second, origin))
        records.append(make_record(TokenSeq.of("the food was good ."), TokenSeq.of("the food was bad ."),
                                   styles.second, styles.first, origin))
    for i in range(identity_groups):
        origin = Origin("same.txt", i + 1, 0)
        seq = TokenSeq.of("the food is .")
        records.append(make_record(seq, seq, styles.first, styles.second, origin))
        records.append(make_record(seq, seq, styles.second, styles.first, origin))
    return records


@pytest.mark.parametrize("cap, kept_groups", [(0.05, 0), (0.2, 2), (0.5, 10)])
def test_identity_cap(styles, cap, kept_groups):
    records = _records(styles, identity_groups=10, edit_groups=10)
    capped = cap_identity_records(records, cap=cap, seed=1)
    identity = [r for r in capped if r.is_identity]
    assert len(identity) == 2 * kept_groups
    assert len(capped) == 20 + 2 * kept_groups
    lines = [r.origin.line for r in identity]
    assert all(lines.count(line) == 2 for line in lines)
    assert len(identity) / len(capped) <= cap
    directions = [r.direction for r in capped]
    assert directions.count("negative->positive") == directions.count("positive->negative")


def test_identity_cap_is_seeded_and_order_preserving(styles):
    records = _records(styles, identity_groups=10, edit_groups=10)
    first = cap_identity_records(records, cap=0.2, seed=3)
    assert first == cap_identity_records(records, cap=0.2, seed=3)
    assert [r for r in first if not r.is_identity] == [r for r in records if not r.is_identity]
    with pytest.raises(ValueError):
        cap_identity_records(records, cap=1.0)


def test_edit_record_from_json_rebuilds_tags(styles):
    record = make_record(TokenSeq.of("a b c"), TokenSeq.of("a c d"), styles.first, styles.second)
    rebuilt = EditRecord.from_json(record.to_json(), styles)
    assert rebuilt == record
    assert rebuilt.origin is None
