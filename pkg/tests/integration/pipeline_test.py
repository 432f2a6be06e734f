import csv
import json
import os

import pytest

from unstract.lewis.cli import ABLATION_ROWS, main
from unstract.lewis.synthesis import read_jsonl

TINY_MODEL = {"layers": 2, "heads": 2, "model_dim": 32, "ff_dim": 64, "max_len": 64, "dropout": 0.0,
              "decoder_layers": 1}
SHORT_TRAINING = {"steps": 150, "batch_size": 16, "lr": 3e-3, "warmup_steps": 10, "log_every": 0}
ROLES = ("classifier", "eval_classifier", "infiller", "tagger", "generator", "seq2seq")
STAGES = ("train-classifier", "train-infillers", "synthesize", "train-editor", "transfer", "evaluate", "edit-stats")
OUTPUTS = ("pairs.jsonl", "records.jsonl", "records_unfiltered.jsonl", "transfer.jsonl", "synthesis_report.json",
           "eval_report.json", "eval_rows.csv", "edit_stats.json")


@pytest.fixture(name="pipeline", scope="module")
def toy_pipeline(tmp_path_factory):
    out = tmp_path_factory.mktemp("pipeline")
    assert main(["make-toy-corpus", "--out", str(out), "--train-size", "200", "--valid-size", "60",
                 "--test-size", "6", "--seed", "1"]) == 0
    config_path = out / "config.json"
    config = json.loads(config_path.read_text(encoding="utf-8"))
    config["models"] = {role: dict(TINY_MODEL) for role in ROLES}
    config["training"] = {role: dict(SHORT_TRAINING) for role in ROLES}
    config["infiller"]["kind"] = "ngram"
    config["decode"]["beam"] = 2
    config_path.write_text(json.dumps(config), encoding="utf-8")
    return str(config_path), config["paths"]["workdir"]


def run(stage, config, *extra):
    return main([stage, "--config", config, *extra])


@pytest.mark.slow
def test_full_pipeline(pipeline):
    config, workdir = pipeline
    for stage in STAGES:
        assert run(stage, config) == 0, stage
        assert os.path.exists(os.path.join(workdir, f"{stage}.meta.json"))

    for name in ("vocab.txt", "classifier.lewis", "eval_classifier.lewis", "infiller.negative.ngram",
                 "infiller.positive.ngram", "pairs.jsonl", "records.jsonl", "records_unfiltered.jsonl",
                 "tagger.lewis", "generator.lewis", "transfer.jsonl", "eval_rows.csv", "edit_stats.json"):
        assert os.path.exists(os.path.join(workdir, name)), name

    with open(os.path.join(workdir, "synthesis_report.json"), encoding="utf-8") as f:
        synthesis = json.load(f)
    assert synthesis["records_unfiltered"] >= synthesis["records"] > 0

    rows = read_jsonl(os.path.join(workdir, "transfer.jsonl"))
    assert len(rows) == 12
    assert {row["direction"] for row in rows} == {"negative->positive", "positive->negative"}

    with open(os.path.join(workdir, "eval_report.json"), encoding="utf-8") as f:
        report = json.load(f)
    assert report["count"] == 12
    assert 0.0 <= report["accuracy"] <= 100.0
    assert report["bleu"] is not None
    with open(os.path.join(workdir, "eval_rows.csv"), encoding="utf-8", newline="") as f:
        assert len(list(csv.reader(f))) == 13


@pytest.mark.slow
def test_rerun_with_same_seeds_is_byte_identical(pipeline, tmp_path):
    config, workdir = pipeline
    if not os.path.exists(os.path.join(workdir, "eval_report.json")):
        pytest.skip("needs the outputs of the full pipeline run")
    rerun = str(tmp_path / "rerun")
    for stage in STAGES:
        assert run(stage, config, "--workdir", rerun) == 0, stage
    for name in OUTPUTS:
        with open(os.path.join(workdir, name), "rb") as first, open(os.path.join(rerun, name), "rb") as second:
            assert first.read() == second.read(), name


@pytest.mark.slow
def test_evaluate_rejects_outputs_from_another_config(pipeline):
    config, workdir = pipeline
    if not os.path.exists(os.path.join(workdir, "transfer.jsonl")):
        pytest.skip("needs the transfer outputs of the full pipeline run")
    assert run("evaluate", config, "--seed-override", "1") == 3
    assert run("evaluate", config, "--seed-override", "1", "--force") == 0


@pytest.mark.slow
def test_ablation_table(pipeline):
    config, workdir = pipeline
    if not os.path.exists(os.path.join(workdir, "records_unfiltered.jsonl")):
        pytest.skip("needs the synthesized records of the full pipeline run")
    assert run("ablate", config) == 0
    with open(os.path.join(workdir, "ablation.json"), encoding="utf-8") as f:
        table = json.load(f)
    assert table["order"] == list(ABLATION_ROWS)
    assert set(table["rows"]) == set(ABLATION_ROWS)
    # copying the input scores perfect self-BLEU
    assert table["rows"]["input_copy"]["sbleu"] == 100.0
    for name in ("seq2seq.lewis", "tagger_unfiltered.lewis", "generator_unfiltered.lewis", "ablation.csv"):
        assert os.path.exists(os.path.join(workdir, name)), name
