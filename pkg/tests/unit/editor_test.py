import pytest

from unstract.lewis.classifier import Template
from unstract.lewis.corpus import SLOT, TokenSeq
from unstract.lewis.editops import DualTags, OpKind
from unstract.lewis.editor import (
    Candidate,
    DecodeConfig,
    EditTagger,
    FillCandidate,
    FillGenerator,
    choose_candidate,
    lm_fill_baseline,
    train_generator,
    train_seq2seq,
    train_tagger,
    transfer,
)
from unstract.lewis.exceptions import ConstraintFailure, DegenerateData
from unstract.lewis.neural import new_model
from unstract.lewis.synthesis import make_record

K, D, R = OpKind.KEEP, OpKind.DELETE, OpKind.REPLACE

SOURCE = TokenSeq.of("the food was very bad .")


def candidate(text, model_score, cls_prob):
    return Candidate(TokenSeq.of(text), model_score, cls_prob)


def test_choose_candidate_prefers_classifier_then_model_score():
    candidates = [candidate("a", -1.0, 0.6), candidate("b", -0.5, 0.6), candidate("c", -0.1, 0.3)]
    assert choose_candidate(candidates) == 1
    assert choose_candidate(candidates, rerank=False) == 2


def test_choose_candidate_ties_go_to_earlier_beam():
    assert choose_candidate([candidate("a", -1.0, 0.5), candidate("b", -1.0, 0.5)]) == 0
    assert choose_candidate([]) == -1


@pytest.fixture(name="parts")
def mocked_editor_parts(mocker, styles):
    tagger = mocker.MagicMock()
    generator = mocker.MagicMock()
    classifier = mocker.MagicMock()
    classifier.styles = styles
    classifier.style_probability.side_effect = lambda seq, style: 0.95 if "great" in seq else 0.6
    return tagger, generator, classifier


def _tags(*ops):
    return DualTags((False,) * (len(ops) + 1), (*ops, K))


def test_transfer_reranks_reconstructed_candidates(parts, styles):
    tagger, generator, classifier = parts
    tagger.tag.return_value.tags = _tags(K, K, K, D, R, K)
    generator.propose.return_value = (
        [FillCandidate([TokenSeq(("good",))], -0.2), FillCandidate([TokenSeq(("great",))], -0.9)],
        1,
    )
    result = transfer(SOURCE, styles.second, tagger, generator, classifier)
    assert result.output.text == "the food was great ."
    assert result.chosen == 1
    assert [c.text.text for c in result.candidates] == ["the food was good .", "the food was great ."]
    assert not result.fallback
    assert result.direction == "negative->positive"
    masked, slot_count = generator.propose.call_args.args[1:3]
    assert masked.tokens == ("the", "food", "was", "<MASK>", ".")
    assert slot_count == 1

    plain = transfer(SOURCE, styles.second, tagger, generator, classifier, DecodeConfig(rerank=False))
    assert plain.output.text == "the food was good ."


def test_transfer_falls_back_to_deletion_only(parts, styles):
    tagger, generator, classifier = parts
    tagger.tag.return_value.tags = _tags(K, K, K, D, R, K)
    generator.propose.return_value = ([], 5)
    result = transfer(SOURCE, styles.second, tagger, generator, classifier)
    assert result.fallback
    assert result.output.text == "the food was bad ."
    assert result.candidates == [] and result.chosen == -1
    row = result.to_json("h")
    assert row["fallback"] is True
    assert row["config_hash"] == "h"
    assert row["tags"] == "K[the food was] D[very] R[bad] K[.]"


def test_transfer_without_slots_only_deletes(parts, styles):
    tagger, generator, classifier = parts
    tagger.tag.return_value.tags = _tags(K, K, K, D, K, K)
    result = transfer(SOURCE, styles.second, tagger, generator, classifier)
    assert result.output.text == "the food was bad ."
    assert not result.fallback
    assert result.chosen == 0
    assert result.candidates[0].cls_prob == pytest.approx(0.6)
    generator.propose.assert_not_called()


def test_lm_fill_baseline(mocker, styles):
    classifier = mocker.MagicMock()
    classifier.extract_template.return_value = Template.parse(f"the food was {SLOT} .")
    infiller = mocker.MagicMock()
    infiller.fill_template.return_value = TokenSeq.of("the food was good .")
    x = TokenSeq.of("the food was bad .")

    assert lm_fill_baseline(x, styles.second, classifier, infiller, seed=3).text == "the food was good ."
    request = infiller.fill_template.call_args.args[0]
    assert request.style == styles.second
    assert request.temperature == 0.0 and request.seed == 3

    infiller.fill_template.side_effect = ConstraintFailure("too long")
    assert lm_fill_baseline(x, styles.second, classifier, infiller).text == "the food was ."

    classifier.extract_template.return_value = Template.parse("the food was bad .")
    assert lm_fill_baseline(x, styles.second, classifier, infiller) == x


def test_training_rejects_degenerate_records(vocabulary, styles):
    seq = TokenSeq.of("the food was good .")
    identity = [make_record(seq, seq, styles.first, styles.second)]
    with pytest.raises(DegenerateData):
        train_tagger([], vocabulary)
    with pytest.raises(DegenerateData):
        train_tagger(identity, vocabulary)
    with pytest.raises(DegenerateData):
        train_generator(identity, vocabulary)
    with pytest.raises(DegenerateData):
        train_seq2seq([], vocabulary)


def test_fill_generator_splits_on_fill_separator(vocabulary, tiny_config):
    model = new_model("generator", vocabulary.hash, len(vocabulary), tiny_config, seed=0)
    generator = FillGenerator(model, vocabulary)
    ids = vocabulary.encode(["good"]) + [vocabulary.fill_sep_id] + vocabulary.encode(["great", "food"])
    assert [f.tokens for f in generator.split(ids)] == [("good",), ("great", "food")]
    assert [f.tokens for f in generator.split([])] == [()]


def test_untrained_tagger_tags_every_position(vocabulary, tiny_config, styles):
    model = new_model("tagger", vocabulary.hash, len(vocabulary), tiny_config, seed=0)
    tagger = EditTagger(model, vocabulary)
    x = TokenSeq.of("the food was bad .")
    assert tagger.input_ids(x, styles.second)[0] == vocabulary.style_ids[1]
    output = tagger.tag(x, styles.second)
    assert len(output.tags) == len(x) + 1
    assert output.tags.ops[-1] == K
    assert output.insert_probs.shape == (len(x) + 1,)
    assert output.op_probs.shape == (len(x) + 1, 3)


def test_models_check_their_role(vocabulary, tiny_config):
    classifier_model = new_model("classifier", vocabulary.hash, len(vocabulary), tiny_config, seed=0)
    with pytest.raises(ValueError):
        EditTagger(classifier_model, vocabulary)
    with pytest.raises(ValueError):
        FillGenerator(classifier_model, vocabulary)
