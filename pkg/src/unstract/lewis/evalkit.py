"""Evaluation metrics: BLEU against references, Self-BLEU against sources
and transfer accuracy under an independent classifier.

BLEU is computed with sacrebleu over the toolkit's own tokens (its internal
tokenizer is disabled). Sentence-level scores use the effective n-gram
order, so a hypothesis shorter than four tokens still scores 100 against
itself.
"""

import csv
import json
import math
import os
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

from sacrebleu.metrics import BLEU
from sacrebleu.metrics.bleu import BLEUScore

from unstract.lewis.classifier import StyleClassifier
from unstract.lewis.corpus import StyleLabel, TokenSeq, Vocabulary, detokenize
from unstract.lewis.exceptions import ConfigError, EmptyInput, ShapeError, VocabMismatch
from unstract.lewis.utils import LewisUtils

SMOOTHING = {"none": "none", "add-epsilon": "floor"}
SCORE_DECIMALS = 6
CSV_COLUMNS = ("source", "output", "reference", "bleu", "sbleu", "cls_prob", "correct")

logger = LewisUtils.get_logger(__name__)


@dataclass(frozen=True)
class BleuConfig:
    max_n: int = 4
    smoothing: str = "none"
    epsilon: float = 0.1
    lowercase: bool = True

    def __post_init__(self):
        if self.max_n < 1:
            raise ConfigError("max_n must be >= 1", key_path="eval.bleu.max_n")
        if self.smoothing not in SMOOTHING:
            raise ConfigError(f"smoothing must be one of {sorted(SMOOTHING)}", key_path="eval.bleu.smoothing")

    def metric(self) -> BLEU:
        return BLEU(
            lowercase=self.lowercase,
            tokenize="none",
            smooth_method=SMOOTHING[self.smoothing],
            smooth_value=self.epsilon if self.smoothing == "add-epsilon" else None,
            max_ngram_order=self.max_n,
            effective_order=True,
        )

    def score(self, result: BLEUScore) -> float:
        """The result's score, floored when no n-gram matched at all.

        sacrebleu returns 0 before smoothing when there are no matches, but
        ``add-epsilon`` gives every zero-match order ``epsilon / total``.
        """
        if self.smoothing == "none" or any(result.counts):
            return result.score
        floored = [self.epsilon / total for total in result.totals[: self.max_n] if total > 0]
        if not floored:
            return 0.0
        return 100.0 * result.bp * math.exp(sum(math.log(p) for p in floored) / len(floored))


def _text(seq: Union[TokenSeq, Sequence[str], str]) -> str:
    return seq if isinstance(seq, str) else detokenize(seq)


def _round(score: float) -> float:
    return round(float(score), SCORE_DECIMALS)


def sentence_bleu(hyp, ref, cfg: Optional[BleuConfig] = None) -> float:
    """BLEU of one hypothesis against one reference, in [0, 100]."""
    cfg = cfg or BleuConfig()
    return _round(cfg.score(cfg.metric().sentence_score(_text(hyp), [_text(ref)])))


def corpus_bleu(hyps: Sequence, refs: Sequence, cfg: Optional[BleuConfig] = None) -> float:
    """Micro-averaged BLEU with a single brevity penalty.

    Raises:
        ShapeError: If the lists differ in length.
    """
    if len(hyps) != len(refs):
        raise ShapeError("Hypotheses and references differ in length", hyps=len(hyps), refs=len(refs))
    if not hyps:
        raise EmptyInput("corpus_bleu needs at least one hypothesis")
    cfg = cfg or BleuConfig()
    return _round(cfg.score(cfg.metric().corpus_score([_text(h) for h in hyps], [[_text(r) for r in refs]])))


def self_bleu(outputs: Sequence, sources: Sequence, cfg: Optional[BleuConfig] = None) -> float:
    return corpus_bleu(outputs, sources, cfg)


def _targets(target_style, count: int) -> list[StyleLabel]:
    if isinstance(target_style, StyleLabel):
        return [target_style] * count
    if len(target_style) != count:
        raise ShapeError("One target style per output is required", outputs=count, styles=len(target_style))
    return list(target_style)


def transfer_accuracy(
    outputs: Sequence[TokenSeq],
    target_style: Union[StyleLabel, Sequence[StyleLabel]],
    eval_classifier: StyleClassifier,
    vocabulary: Optional[Vocabulary] = None,
) -> float:
    """Percentage of outputs the evaluation classifier assigns to their
    target style.

    Raises:
        EmptyInput: If ``outputs`` is empty.
        VocabMismatch: If the classifier was trained on another vocabulary.
    """
    if not outputs:
        raise EmptyInput("transfer_accuracy needs at least one output")
    if vocabulary is not None and eval_classifier.model.vocab_hash != vocabulary.hash:
        raise VocabMismatch("Evaluation classifier uses a different vocabulary",
                            expected=vocabulary.hash, actual=eval_classifier.model.vocab_hash)
    targets = _targets(target_style, len(outputs))
    hits = sum(eval_classifier.classify(out)[0].index == t.index for out, t in zip(outputs, targets))
    return _round(100.0 * hits / len(outputs))


@dataclass
class EvalRow:
    source: str
    output: str
    reference: Optional[str]
    bleu: Optional[float]
    sbleu: float
    cls_prob: float
    correct: bool


@dataclass
class EvalReport:
    accuracy: float
    sbleu: float
    bleu: Optional[float] = None
    count: int = 0
    config_hash: str = ""
    rows: list[EvalRow] = field(default_factory=list)

    def summary(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "sbleu": self.sbleu,
            "bleu": self.bleu,
            "count": self.count,
            "config_hash": self.config_hash,
        }

    def write_json(self, path: Union[str, os.PathLike]) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            f.write(json.dumps(self.summary(), indent=2, sort_keys=True) + "\n")

    def write_csv(self, path: Union[str, os.PathLike]) -> None:
        with open(path, "w", encoding="utf-8", newline="") as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(CSV_COLUMNS)
            for row in self.rows:
                writer.writerow([
                    row.source,
                    row.output,
                    "" if row.reference is None else row.reference,
                    "" if row.bleu is None else row.bleu,
                    row.sbleu,
                    row.cls_prob,
                    int(row.correct),
                ])


def evaluate(
    sources: Sequence[TokenSeq],
    outputs: Sequence[TokenSeq],
    target_style: Union[StyleLabel, Sequence[StyleLabel]],
    eval_classifier: StyleClassifier,
    references: Optional[Sequence[TokenSeq]] = None,
    cfg: Optional[BleuConfig] = None,
    config_hash: str = "",
) -> EvalReport:
    """Corpus metrics plus per-example rows.

    Raises:
        EmptyInput: If there are no outputs.
        ShapeError: If sources, outputs and references differ in length.
    """
    if len(sources) != len(outputs) or (references is not None and len(references) != len(outputs)):
        raise ShapeError("Sources, outputs and references must align", sources=len(sources), outputs=len(outputs),
                         references=None if references is None else len(references))
    cfg = cfg or BleuConfig()
    targets = _targets(target_style, len(outputs))
    accuracy = transfer_accuracy(outputs, targets, eval_classifier)
    rows = []
    for i, (src, out, tgt) in enumerate(zip(sources, outputs, targets)):
        ref = references[i] if references is not None else None
        prob = eval_classifier.style_probability(out, tgt)
        rows.append(EvalRow(
            source=_text(src),
            output=_text(out),
            reference=None if ref is None else _text(ref),
            bleu=None if ref is None else sentence_bleu(out, ref, cfg),
            sbleu=sentence_bleu(out, src, cfg),
            cls_prob=prob,
            correct=eval_classifier.classify(out)[0].index == tgt.index,
        ))
    report = EvalReport(
        accuracy=accuracy,
        sbleu=self_bleu(outputs, sources, cfg),
        bleu=None if references is None else corpus_bleu(outputs, references, cfg),
        count=len(outputs),
        config_hash=config_hash,
        rows=rows,
    )
    logger.info("Evaluated %d outputs: accuracy %.2f, self-BLEU %.2f, BLEU %s", report.count, report.accuracy,
                report.sbleu, "n/a" if report.bleu is None else f"{report.bleu:.2f}")
    return report
