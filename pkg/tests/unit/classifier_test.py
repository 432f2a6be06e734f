import numpy as np
import pytest

from unstract.lewis.classifier import (
    AttentionProfile,
    StyleClassifier,
    Template,
    pool_attention,
    slot_cap,
    template_from_profile,
    train_classifier,
)
from unstract.lewis.corpus import SLOT, TokenSeq
from unstract.lewis.exceptions import DegenerateData, EmptyInput
from unstract.lewis.neural import TrainConfig, new_model
from unstract.lewis.neural.model import AttentionRecord

SENTENCE = "the food was great .".split()


def test_template_slots_above_mean():
    profile = AttentionProfile.from_weights([0.1, 0.1, 0.1, 0.9, 0.1])
    template = template_from_profile(SENTENCE, profile)
    assert template.tokens == ("the", "food", "was", SLOT, ".")
    assert template.slot_count == 1
    assert template.content_tokens == ("the", "food", "was", ".")
    assert Template.parse(template.render()) == template


def test_template_boundary_is_inclusive_and_runs_merge():
    profile = AttentionProfile.from_weights([0.2] * 5)
    assert template_from_profile(SENTENCE, profile).tokens == (SLOT,)


def test_template_cap_keeps_top_scores_leftmost_first():
    s = "a b c d e f".split()
    profile = AttentionProfile.from_weights([0.3, 0.3, 0.3, 0.3, 0.3, 0.0])
    assert slot_cap(6) == 2
    assert template_from_profile(s, profile, cap=True).tokens == (SLOT, "c", "d", "e", "f")
    assert template_from_profile(s, profile, cap=False).tokens == (SLOT, "f")


def test_template_rejects_bad_input():
    with pytest.raises(EmptyInput):
        template_from_profile([], AttentionProfile.from_weights([]))
    with pytest.raises(ValueError):
        template_from_profile(["a", "b"], AttentionProfile.from_weights([1.0]))


@pytest.mark.parametrize("profiles", [200, pytest.param(10_000, marks=pytest.mark.slow)])
def test_template_invariants_on_random_profiles(profiles):
    rng = np.random.default_rng(0)
    for _ in range(profiles):
        n = int(rng.integers(1, 15))
        s = [f"t{i}" for i in range(n)]
        profile = AttentionProfile.from_weights(rng.dirichlet(np.ones(n)))
        for cap in (False, True):
            template = template_from_profile(s, profile, cap=cap)
            tokens = template.tokens
            assert all(not (a == SLOT and b == SLOT) for a, b in zip(tokens, tokens[1:]))
            content = list(template.content_tokens)
            assert content == [t for t in s if t in content]
            slotted = n - len(content)
            if cap:
                assert slotted <= slot_cap(n)
            else:
                assert template.slot_count >= 1
                assert slotted == sum(1 for a in profile.a if a >= profile.threshold)


def test_pool_attention_max_over_heads():
    weights = np.zeros((2, 3, 3))
    weights[0, 0] = [0.2, 0.5, 0.3]
    weights[1, 0] = [0.6, 0.1, 0.3]
    record = AttentionRecord([weights, weights])
    profile = pool_attention(record, layer=0)
    np.testing.assert_allclose(profile.a, [0.5, 0.3])
    assert profile.threshold == pytest.approx(0.4)


@pytest.fixture(name="untrained")
def untrained_classifier(vocabulary, tiny_config):
    model = new_model("classifier", vocabulary.hash, len(vocabulary), tiny_config, seed=0)
    model.metadata["styles"] = ["negative", "positive"]
    return StyleClassifier(model, vocabulary)


def test_classifier_outputs(untrained, styles):
    x = TokenSeq.of("the food was good .")
    probs = untrained.probabilities(x)
    assert probs.shape == (2,)
    assert probs.sum() == pytest.approx(1.0)
    label, prob = untrained.classify(x)
    assert prob == pytest.approx(probs.max())
    assert untrained.style_probability(x, styles.second) == pytest.approx(probs[1])
    profile = untrained.attention_profile(x)
    assert len(profile.a) == len(x)
    template = untrained.extract_template(x)
    assert template.slot_count >= 1


def test_classifier_wrong_role(vocabulary, tiny_config):
    model = new_model("tagger", vocabulary.hash, len(vocabulary), tiny_config, seed=0)
    with pytest.raises(ValueError):
        StyleClassifier(model, vocabulary)


def test_train_classifier_needs_both_styles(vocabulary, styles, tiny_config):
    examples = [(TokenSeq.of("the food was bad ."), styles.first)] * 4
    with pytest.raises(DegenerateData):
        train_classifier(examples, styles, vocabulary, tiny_config, TrainConfig(steps=1, log_every=0))


def test_train_classifier_records_heldout_accuracy(vocabulary, styles, tiny_config):
    examples = [(TokenSeq.of("the food was bad ."), styles.first), (TokenSeq.of("the food was good ."), styles.second)]
    classifier = train_classifier(examples * 5, styles, vocabulary, tiny_config,
                                  TrainConfig(steps=5, batch_size=4, log_every=0), seed=1, heldout_fraction=0.2)
    meta = classifier.model.metadata
    assert meta["heldout_size"] == 2
    assert 0.0 <= meta["heldout_accuracy"] <= 1.0
    assert meta["styles"] == ["negative", "positive"]
