"""Command line for the LEWIS pipeline.

Usage::

    lewis make-toy-corpus --out data/toy --task sentiment
    lewis train-classifier --config data/toy/config.json
    lewis train-infillers  --config data/toy/config.json
    lewis synthesize       --config data/toy/config.json
    lewis train-editor     --config data/toy/config.json
    lewis transfer         --config data/toy/config.json
    lewis evaluate         --config data/toy/config.json
    lewis ablate           --config data/toy/config.json
    lewis edit-stats       --config data/toy/config.json

Every stage holds a lock on its workdir, checks that its upstream artifacts
exist and writes ``<workdir>/<stage>.meta.json`` when it finishes.
Exit codes: 0 on success, 2 on config errors, 3 on missing upstream
artifacts, 1 for any other toolkit error.
"""

import argparse
import csv
import json
import os
import sys
import time
from typing import Callable, Optional, Sequence

import portalocker

from unstract.lewis import __version__
from unstract.lewis.classifier import StyleClassifier, train_classifier
from unstract.lewis.config import RunConfig, load_config
from unstract.lewis.corpus import (
    StyleCorpus,
    StyleLabel,
    TaskStyles,
    TokenSeq,
    Vocabulary,
    build_vocabulary,
    read_sequences,
)
from unstract.lewis.editops import levenshtein_script, merge_spans, summarize_span_stats
from unstract.lewis.editor import (
    EditTagger,
    FillGenerator,
    lm_fill_baseline,
    train_generator,
    train_seq2seq,
    train_tagger,
    transfer,
    transfer_all,
)
from unstract.lewis.evalkit import BleuConfig, EvalReport, evaluate
from unstract.lewis.exceptions import LewisException, StageDependencyError, StageLockError
from unstract.lewis.infill import Infiller, NgramInfiller, Seq2SeqInfiller, build_ngram_infiller, train_infiller
from unstract.lewis.neural import ModelBundle, load, save
from unstract.lewis.neural.training import WORKERS
from unstract.lewis.synthesis import (
    cap_identity_records,
    label_pairs,
    read_jsonl,
    read_records,
    synthesize,
    write_pairs,
    write_records,
)
from unstract.lewis.toydata import TASKS, make_toy_corpus
from unstract.lewis.utils import LewisUtils

VOCAB = "vocab.txt"
CLASSIFIER = "classifier.lewis"
EVAL_CLASSIFIER = "eval_classifier.lewis"
PAIRS = "pairs.jsonl"
SYNTH_REPORT = "synthesis_report.json"
RECORDS = "records.jsonl"
RECORDS_UNFILTERED = "records_unfiltered.jsonl"
TAGGER = "tagger.lewis"
GENERATOR = "generator.lewis"
TAGGER_UNFILTERED = "tagger_unfiltered.lewis"
GENERATOR_UNFILTERED = "generator_unfiltered.lewis"
SEQ2SEQ = "seq2seq.lewis"
TRANSFER = "transfer.jsonl"
EVAL_REPORT = "eval_report.json"
EVAL_ROWS = "eval_rows.csv"
ABLATION = "ablation.json"
ABLATION_CSV = "ablation.csv"
EDIT_STATS = "edit_stats.json"
LOCK_FILE = ".lewis.lock"
ABLATION_ROWS = ("input_copy", "lm_fill", "seq2seq", "editor_without_filtering", "editor")

logger = LewisUtils.get_logger(__name__)


class Stage:
    """Context for one pipeline stage: workdir lock, upstream checks and
    run metadata."""

    def __init__(self, name: str, config: RunConfig, workdir: str):
        self.name = name
        self.config = config
        self.workdir = workdir
        self.artifacts: list[str] = []
        self._lock: Optional[portalocker.Lock] = None
        self._started = 0.0

    def path(self, name: str) -> str:
        return os.path.join(self.workdir, name)

    def require(self, *paths: str) -> None:
        for path in paths:
            if not os.path.exists(path):
                raise StageDependencyError(f"Stage '{self.name}' needs '{path}'; run the upstream stage first",
                                           missing=path)

    def produced(self, path: str) -> str:
        self.artifacts.append(path)
        return path

    def __enter__(self) -> "Stage":
        os.makedirs(self.workdir, exist_ok=True)
        self._lock = portalocker.Lock(self.path(LOCK_FILE), mode="a", timeout=0, fail_when_locked=True)
        try:
            self._lock.acquire()
        except portalocker.exceptions.LockException as e:
            raise StageLockError("Another stage is running in this workdir", workdir=self.workdir) from e
        self._started = time.monotonic()
        logger.info("Stage '%s' started (config %s)", self.name, self.config.hash[:12])
        return self

    def __exit__(self, exc_type, exc, tb):
        try:
            if exc_type is None:
                self._write_metadata(time.monotonic() - self._started)
        finally:
            self._lock.release()

    def _write_metadata(self, wall_time: float) -> None:
        meta = {
            "stage": self.name,
            "config_hash": self.config.hash,
            "seeds": self.config.to_dict()["seeds"],
            "git_describe": LewisUtils.git_describe(),
            "workers": WORKERS,
            "wall_time_seconds": round(wall_time, 3),
            "version": __version__,
            "attention_query_row": "cls",
            "artifacts": {os.path.basename(p): LewisUtils.sha256_file(p) for p in self.artifacts},
        }
        with open(self.path(f"{self.name}.meta.json"), "w", encoding="utf-8") as f:
            f.write(json.dumps(meta, indent=2, sort_keys=True) + "\n")
        logger.info("Stage '%s' finished in %.1fs", self.name, wall_time)


def _save_model(stage: Stage, model: ModelBundle, name: str) -> None:
    model.metadata["config_hash"] = stage.config.hash
    save(model, stage.produced(stage.path(name)))


def _write_json(stage: Stage, name: str, data: dict) -> None:
    with open(stage.produced(stage.path(name)), "w", encoding="utf-8", newline="\n") as f:
        f.write(json.dumps(data, indent=2, sort_keys=True) + "\n")


def _corpora(stage: Stage, split: str) -> list[StyleCorpus]:
    files = getattr(stage.config.paths, split)
    if not files:
        raise StageDependencyError(f"No '{split}' files configured", missing=f"paths.{split}")
    stage.require(*files)
    styles = stage.config.styles.task_styles()
    return [StyleCorpus(path, label, stage.config.corpus.max_len) for path, label in zip(files, styles)]


def _vocabulary(stage: Stage) -> Vocabulary:
    stage.require(stage.path(VOCAB))
    return Vocabulary.load(stage.path(VOCAB))


def _classifier(stage: Stage, vocabulary: Vocabulary, name: str = CLASSIFIER) -> StyleClassifier:
    stage.require(stage.path(name))
    return StyleClassifier(load(stage.path(name), vocabulary), vocabulary)


def _infiller_name(config: RunConfig, style: StyleLabel) -> str:
    suffix = "ngram" if config.infiller.kind == "ngram" else "lewis"
    return f"infiller.{style.name}.{suffix}"


def _infillers(stage: Stage, vocabulary: Vocabulary) -> dict[str, Infiller]:
    infillers: dict[str, Infiller] = {}
    for style in stage.config.styles.task_styles():
        path = stage.path(_infiller_name(stage.config, style))
        stage.require(path)
        if stage.config.infiller.kind == "ngram":
            infillers[style.name] = NgramInfiller.load(path)
        else:
            infillers[style.name] = Seq2SeqInfiller(load(path, vocabulary), vocabulary)
    return infillers


def _editor(stage: Stage, vocabulary: Vocabulary, tagger: str = TAGGER, generator: str = GENERATOR):
    stage.require(stage.path(tagger), stage.path(generator))
    return (
        EditTagger(load(stage.path(tagger), vocabulary), vocabulary),
        FillGenerator(load(stage.path(generator), vocabulary), vocabulary),
    )


def _test_inputs(stage: Stage) -> list[tuple[TokenSeq, StyleLabel]]:
    """(source, target style) for every test sentence, style files in order."""
    styles = stage.config.styles.task_styles()
    return [(seq, styles.other(label)) for corpus in _corpora(stage, "test") for seq, label in corpus]


def _references(stage: Stage) -> Optional[list[TokenSeq]]:
    files = stage.config.paths.references
    if not files:
        return None
    stage.require(*files)
    return [seq for path in files for seq in read_sequences(path, stage.config.corpus.max_len)]


def _bleu(config: RunConfig) -> BleuConfig:
    return BleuConfig(max_n=config.eval.max_n, smoothing=config.eval.smoothing, epsilon=config.eval.epsilon)


# ---------------------------------------------------------------------------
# Stages
# ---------------------------------------------------------------------------


def cmd_train_classifier(config: RunConfig, args) -> None:
    with Stage("train-classifier", config, args.workdir) as stage:
        styles = config.styles.task_styles()
        train = _corpora(stage, "train")
        vocabulary = build_vocabulary([c.path for c in train], config.corpus.min_count)
        vocabulary.save(stage.produced(stage.path(VOCAB)))
        examples = [ex for corpus in train for ex in corpus]
        classifier = train_classifier(examples, styles, vocabulary, config.models.classifier,
                                      config.training.classifier, config.seeds.classifier,
                                      config.eval.heldout_fraction)
        _save_model(stage, classifier.model, CLASSIFIER)
        # The evaluation judge sees a different split and seed than the pipeline classifier.
        judge_split = "valid" if config.paths.valid else "train"
        judge_examples = [ex for corpus in _corpora(stage, judge_split) for ex in corpus]
        judge = train_classifier(judge_examples, styles, vocabulary, config.models.eval_classifier,
                                 config.training.eval_classifier, config.seeds.eval_classifier,
                                 config.eval.heldout_fraction)
        judge.model.metadata["split"] = judge_split
        _save_model(stage, judge.model, EVAL_CLASSIFIER)


def cmd_train_infillers(config: RunConfig, args) -> None:
    with Stage("train-infillers", config, args.workdir) as stage:
        vocabulary = _vocabulary(stage)
        for corpus in _corpora(stage, "train"):
            style = corpus.label
            seqs = [seq for seq, _ in corpus]
            name = _infiller_name(config, style)
            if config.infiller.kind == "ngram":
                build_ngram_infiller(seqs, config.infiller.ngram_order, style).save(stage.produced(stage.path(name)))
                continue
            infiller = train_infiller(
                seqs,
                style,
                vocabulary,
                config.models.infiller,
                config.training.infiller,
                LewisUtils.derive_seed(config.seeds.infiller, style.index),
                copies=config.infiller.noise_copies,
                min_corpus_size=config.infiller.min_corpus_size,
            )
            _save_model(stage, infiller.model, name)


def cmd_synthesize(config: RunConfig, args) -> None:
    with Stage("synthesize", config, args.workdir) as stage:
        vocabulary = _vocabulary(stage)
        classifier = _classifier(stage, vocabulary)
        infillers = _infillers(stage, vocabulary)
        pairs, report = synthesize(_corpora(stage, "train"), classifier, infillers, vocabulary, config.synthesis,
                                   config.seeds.synthesis)
        write_pairs(stage.produced(stage.path(PAIRS)), pairs, config.hash)
        cap, seed = config.synthesis.identity_cap, config.seeds.synthesis
        records = cap_identity_records(label_pairs(pairs), cap, seed)
        unfiltered = cap_identity_records(label_pairs(pairs, include_rejected=True), cap, seed)
        write_records(stage.produced(stage.path(RECORDS)), records, config.hash)
        write_records(stage.produced(stage.path(RECORDS_UNFILTERED)), unfiltered, config.hash)
        _write_json(stage, SYNTH_REPORT, {**report.as_dict(), "records": len(records),
                                          "records_unfiltered": len(unfiltered), "config_hash": config.hash})


def _train_editor(stage: Stage, vocabulary: Vocabulary, records, tagger_name: str, generator_name: str) -> None:
    config = stage.config
    tagger = train_tagger(records, vocabulary, config.models.tagger, config.training.tagger, config.seeds.tagger,
                          config.eval.heldout_fraction)
    _save_model(stage, tagger.model, tagger_name)
    generator = train_generator(records, vocabulary, config.models.generator, config.training.generator,
                                config.seeds.generator)
    _save_model(stage, generator.model, generator_name)


def cmd_train_editor(config: RunConfig, args) -> None:
    with Stage("train-editor", config, args.workdir) as stage:
        vocabulary = _vocabulary(stage)
        stage.require(stage.path(RECORDS))
        records = read_records(stage.path(RECORDS), config.styles.task_styles())
        _train_editor(stage, vocabulary, records, TAGGER, GENERATOR)


def cmd_transfer(config: RunConfig, args) -> None:
    with Stage("transfer", config, args.workdir) as stage:
        vocabulary = _vocabulary(stage)
        classifier = _classifier(stage, vocabulary)
        tagger, generator = _editor(stage, vocabulary)
        rows = []
        for corpus in _corpora(stage, "test"):
            target = config.styles.task_styles().other(corpus.label)
            sources = [seq for seq, _ in corpus]
            results = transfer_all(sources, target, tagger, generator, classifier, config.decode)
            rows.extend(r.to_json(config.hash) for r in results)
        path = stage.produced(stage.path(TRANSFER))
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            for row in rows:
                f.write(LewisUtils.canonical_json(row) + "\n")


def _target_styles(styles: TaskStyles, rows: Sequence[dict]) -> list[StyleLabel]:
    return [styles.by_name(row["direction"].split("->", 1)[1]) for row in rows]


def cmd_evaluate(config: RunConfig, args) -> None:
    with Stage("evaluate", config, args.workdir) as stage:
        vocabulary = _vocabulary(stage)
        judge = _classifier(stage, vocabulary, EVAL_CLASSIFIER)
        stage.require(stage.path(TRANSFER))
        rows = read_jsonl(stage.path(TRANSFER))
        hashes = {row.get("config_hash", "") for row in rows}
        if hashes != {config.hash} and not args.force:
            raise StageDependencyError(
                "Transfer outputs were produced by a different configuration; rerun 'transfer' or pass --force",
                missing=stage.path(TRANSFER),
                found=sorted(hashes),
                expected=config.hash,
            )
        report = evaluate(
            [TokenSeq.of(row["source"]) for row in rows],
            [TokenSeq.of(row["output"]) for row in rows],
            _target_styles(config.styles.task_styles(), rows),
            judge,
            references=_references(stage),
            cfg=_bleu(config),
            config_hash=config.hash,
        )
        report.write_json(stage.produced(stage.path(EVAL_REPORT)))
        report.write_csv(stage.produced(stage.path(EVAL_ROWS)))


def cmd_ablate(config: RunConfig, args) -> None:
    with Stage("ablate", config, args.workdir) as stage:
        vocabulary = _vocabulary(stage)
        classifier = _classifier(stage, vocabulary)
        judge = _classifier(stage, vocabulary, EVAL_CLASSIFIER)
        infillers = _infillers(stage, vocabulary)
        styles = config.styles.task_styles()
        stage.require(stage.path(RECORDS), stage.path(RECORDS_UNFILTERED))
        records = read_records(stage.path(RECORDS), styles)
        unfiltered = read_records(stage.path(RECORDS_UNFILTERED), styles)
        inputs = _test_inputs(stage)
        sources = [x for x, _ in inputs]
        targets = [t for _, t in inputs]
        references = _references(stage)

        def editor_outputs(tagger: EditTagger, generator: FillGenerator) -> list[TokenSeq]:
            return [transfer(x, t, tagger, generator, classifier, config.decode).output for x, t in inputs]

        systems: dict[str, Callable[[], list[TokenSeq]]] = {
            "input_copy": lambda: list(sources),
            "lm_fill": lambda: [
                lm_fill_baseline(x, t, classifier, infillers[t.name], config.decode,
                                 LewisUtils.derive_seed(config.seeds.transfer, i))
                for i, (x, t) in enumerate(inputs)
            ],
        }

        def seq2seq_outputs() -> list[TokenSeq]:
            baseline = train_seq2seq(records, vocabulary, config.models.seq2seq, config.training.seq2seq,
                                     config.seeds.seq2seq)
            _save_model(stage, baseline.model, SEQ2SEQ)
            return [baseline.transfer(x, t, classifier, config.decode) for x, t in inputs]

        def unfiltered_outputs() -> list[TokenSeq]:
            _train_editor(stage, vocabulary, unfiltered, TAGGER_UNFILTERED, GENERATOR_UNFILTERED)
            return editor_outputs(*_editor(stage, vocabulary, TAGGER_UNFILTERED, GENERATOR_UNFILTERED))

        systems["seq2seq"] = seq2seq_outputs
        systems["editor_without_filtering"] = unfiltered_outputs
        systems["editor"] = lambda: editor_outputs(*_editor(stage, vocabulary))

        results: dict[str, EvalReport] = {}
        for name in ABLATION_ROWS:
            logger.info("Ablation row '%s'", name)
            results[name] = evaluate(sources, systems[name](), targets, judge, references, _bleu(config),
                                     config.hash)
        table = {name: {k: v for k, v in r.summary().items() if k in ("accuracy", "sbleu", "bleu")}
                 for name, r in results.items()}
        _write_json(stage, ABLATION, {"rows": table, "order": list(ABLATION_ROWS), "config_hash": config.hash})
        with open(stage.produced(stage.path(ABLATION_CSV)), "w", encoding="utf-8", newline="") as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(("system", "accuracy", "sbleu", "bleu"))
            for name in ABLATION_ROWS:
                row = table[name]
                writer.writerow((name, row["accuracy"], row["sbleu"], "" if row["bleu"] is None else row["bleu"]))
        ordered = table["editor"]["sbleu"] > table["seq2seq"]["sbleu"] > table["lm_fill"]["sbleu"]
        logger.info("Self-BLEU ordering editor > seq2seq > lm_fill holds: %s", ordered)


def cmd_edit_stats(config: RunConfig, args) -> None:
    with Stage("edit-stats", config, args.workdir) as stage:
        stage.require(stage.path(RECORDS))
        records = read_records(stage.path(RECORDS), config.styles.task_styles())
        rows = [merge_spans(levenshtein_script(r.source, r.target))[1] for r in records]
        summary = summarize_span_stats(rows, [len(r.masked.tokens) for r in records])
        _write_json(stage, EDIT_STATS, {**summary.as_dict(), "config_hash": config.hash})
        for name, mean in summary.means.items():
            logger.info("%-16s mean %.2f std %.2f", name, mean, summary.stds[name])


def cmd_make_toy_corpus(args) -> None:
    paths = make_toy_corpus(args.out, args.task, args.train_size, args.valid_size, args.test_size, args.seed)
    first, second = TASKS[args.task].styles
    config = RunConfig()
    config.styles.names = [first, second]
    config.paths.workdir = os.path.join(args.out, "work")
    for split in ("train", "valid", "test"):
        setattr(config.paths, split, [paths[f"{split}.{first}"], paths[f"{split}.{second}"]])
    config.paths.references = [paths[f"test.{first}.ref"], paths[f"test.{second}.ref"]]
    with open(os.path.join(args.out, "config.json"), "w", encoding="utf-8") as f:
        f.write(json.dumps(config.to_dict(), indent=2) + "\n")


STAGES = {
    "train-classifier": cmd_train_classifier,
    "train-infillers": cmd_train_infillers,
    "synthesize": cmd_synthesize,
    "train-editor": cmd_train_editor,
    "transfer": cmd_transfer,
    "evaluate": cmd_evaluate,
    "ablate": cmd_ablate,
    "edit-stats": cmd_edit_stats,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lewis", description="Levenshtein-edit style transfer pipeline")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in STAGES:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="Run configuration JSON")
        p.add_argument("--workdir", help="Overrides paths.workdir")
        p.add_argument("--seed-override", type=int, default=None, help="Added to every stage seed")
        p.add_argument("--force", action="store_true", help="Accept artifacts from a different config")
    toy = sub.add_parser("make-toy-corpus")
    toy.add_argument("--out", required=True)
    toy.add_argument("--task", choices=sorted(TASKS), default="sentiment")
    toy.add_argument("--train-size", type=int, default=5000)
    toy.add_argument("--valid-size", type=int, default=500)
    toy.add_argument("--test-size", type=int, default=500)
    toy.add_argument("--seed", type=int, default=0)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "make-toy-corpus":
            cmd_make_toy_corpus(args)
            return 0
        config = load_config(args.config, args.seed_override)
        args.workdir = args.workdir or config.paths.workdir
        STAGES[args.command](config, args)
    except LewisException as e:
        logger.error("%s failed: %s", args.command, e)
        return e.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
