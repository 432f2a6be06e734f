import json

import pytest

from unstract.lewis.config import RunConfig, config_from_dict, load_config
from unstract.lewis.exceptions import ConfigError


def test_defaults():
    config = config_from_dict({})
    assert config == RunConfig()
    assert config.styles.task_styles().second.name == "positive"
    assert config.infiller.min_corpus_size == 16
    assert config.synthesis.identity_cap == 0.05


@pytest.mark.parametrize(
    "data, key_path",
    [
        ({"models": {"tagger": {"foo": 1}}}, "models.tagger.foo"),
        ({"unknown": {}}, "unknown"),
        ({"seeds": {"tagger": "five"}}, "seeds.tagger"),
        ({"decode": {"rerank": 1}}, "decode.rerank"),
        ({"paths": {"train": "a.txt"}}, "paths.train"),
        ({"paths": {"train": ["a.txt", 3]}}, "paths.train[1]"),
        ({"models": []}, "models"),
        ({"styles": {"names": ["a", "a"]}}, "styles.names"),
        ({"models": {"classifier": {"layers": 1}}}, "models.classifier.layers"),
        ({"paths": {"test": ["only.txt"]}}, "paths.test"),
        ({"infiller": {"kind": "gpt"}}, "infiller.kind"),
        ({"synthesis": {"identity_cap": 1.0}}, "synthesis.identity_cap"),
        ({"eval": {"smoothing": "exp"}}, "eval.smoothing"),
        ({"training": {"tagger": {"batch_size": 0}}}, "training.tagger"),
    ],
)
def test_invalid_configs_name_the_key(data, key_path):
    with pytest.raises(ConfigError) as e:
        config_from_dict(data)
    assert e.value.key_path == key_path
    assert e.value.exit_code == 2


def test_integers_are_accepted_for_floats():
    config = config_from_dict({"training": {"tagger": {"lr": 1}}})
    assert config.training.tagger.lr == 1.0
    assert isinstance(config.training.tagger.lr, float)


def test_seed_override_offsets_every_seed():
    base = config_from_dict({"seeds": {"tagger": 10}})
    shifted = config_from_dict({"seeds": {"tagger": 10}}, seed_override=100)
    assert shifted.seeds.tagger == 110
    assert shifted.seeds.vocabulary == base.seeds.vocabulary + 100
    assert shifted.hash != base.hash


def test_hash_covers_defaults():
    assert config_from_dict({}).hash == config_from_dict({"seeds": {"tagger": 5}}).hash
    assert config_from_dict({}).hash != config_from_dict({"decode": {"beam": 3}}).hash
    assert len(config_from_dict({}).hash) == 64


def test_load_config(tmp_path):
    path = tmp_path / "config.json"
    path.write_text(json.dumps({"styles": {"names": ["impolite", "polite"]}}), encoding="utf-8")
    assert load_config(path).styles.names == ["impolite", "polite"]
    path.write_text("{not json", encoding="utf-8")
    with pytest.raises(ConfigError):
        load_config(path)


def test_missing_config_file(tmp_path):
    path = tmp_path / "absent.json"
    with pytest.raises(ConfigError) as e:
        load_config(path)
    assert e.value.value["path"] == str(path)
    assert e.value.exit_code == 2
