"""Unsupervised pseudo-parallel pair synthesis.

For every sentence of either style corpus: extract a style-agnostic
template with the classifier's attention, fill it once per style, and keep
the pair only when the classifier agrees that each fill carries its intended
style. Every filled template yields one pair per transfer direction.
Kept pairs are then labelled with Levenshtein edit tags for editor training.
"""

import json
import os
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Mapping, Optional, Sequence, Union

import numpy as np

from unstract.lewis.classifier import StyleClassifier, Template
from unstract.lewis.corpus import StyleCorpus, StyleLabel, TaskStyles, TokenSeq, Vocabulary
from unstract.lewis.editops import (
    DualTags,
    MaskedTarget,
    OpKind,
    apply_coarse,
    gold_fills,
    levenshtein_script,
    render_script,
    to_dual_tags,
)
from unstract.lewis.exceptions import ConstraintFailure, FormatError, VocabMismatch
from unstract.lewis.infill import InfillRequest, Infiller
from unstract.lewis.utils import LewisUtils

# Expected share of synthesized pairs removed by classifier filtering.
REFERENCE_FILTER_RATE = 0.20

logger = LewisUtils.get_logger(__name__)


@dataclass
class SynthesisConfig:
    slot_cap: bool = False
    filter_floor: float = 0.5
    identity_cap: float = 0.05
    beam: int = 1
    max_fill_length: int = 6
    temperature: float = 1.0


@dataclass(frozen=True)
class Origin:
    path: str
    line: int
    seed: int

    def as_dict(self) -> dict:
        return {"file": self.path, "line": self.line, "seed": self.seed}


@dataclass(frozen=True)
class SynthPair:
    """One synthesized pair in one transfer direction."""

    template: Template
    source: TokenSeq
    target: TokenSeq
    source_style: StyleLabel
    target_style: StyleLabel
    src_prob: float
    tgt_prob: float
    kept: bool
    origin: Origin

    @property
    def direction(self) -> str:
        return f"{self.source_style.name}->{self.target_style.name}"

    def to_json(self, config_hash: str = "") -> dict:
        return {
            "template": self.template.render(),
            "source": self.source.text,
            "target": self.target.text,
            "source_style": self.source_style.name,
            "target_style": self.target_style.name,
            "src_prob": self.src_prob,
            "tgt_prob": self.tgt_prob,
            "kept": self.kept,
            "direction": self.direction,
            "origin": self.origin.as_dict(),
            "config_hash": config_hash,
        }

    @classmethod
    def from_json(cls, obj: Mapping, styles: TaskStyles) -> "SynthPair":
        try:
            origin = obj["origin"]
            return cls(
                template=Template.parse(obj["template"]),
                source=TokenSeq.of(obj["source"]),
                target=TokenSeq.of(obj["target"]),
                source_style=styles.by_name(obj["source_style"]),
                target_style=styles.by_name(obj["target_style"]),
                src_prob=float(obj["src_prob"]),
                tgt_prob=float(obj["tgt_prob"]),
                kept=bool(obj["kept"]),
                origin=Origin(origin["file"], int(origin["line"]), int(origin["seed"])),
            )
        except (KeyError, TypeError, ValueError) as e:
            raise FormatError("Malformed synthesized pair", detail=str(e)) from e


@dataclass
class SynthReport:
    templates: int = 0
    generated: int = 0
    kept: int = 0
    skipped_no_slot: int = 0
    constraint_failures: int = 0
    per_direction: dict = field(default_factory=dict)

    @property
    def filter_rate(self) -> float:
        return 1.0 - self.kept / self.generated if self.generated else 0.0

    def as_dict(self) -> dict:
        return {
            "templates": self.templates,
            "generated": self.generated,
            "kept": self.kept,
            "filter_rate": self.filter_rate,
            "reference_filter_rate": REFERENCE_FILTER_RATE,
            "skipped_no_slot": self.skipped_no_slot,
            "constraint_failures": self.constraint_failures,
            "per_direction": dict(sorted(self.per_direction.items())),
        }


def _check_vocabularies(vocabulary: Vocabulary, classifier: StyleClassifier, infillers: Iterable[Infiller]) -> None:
    hashes = {"classifier": classifier.model.vocab_hash}
    for infiller in infillers:
        model = getattr(infiller, "model", None)
        if model is not None:
            hashes[f"infiller:{infiller.style.name}"] = model.vocab_hash
    for name, value in hashes.items():
        if value != vocabulary.hash:
            raise VocabMismatch("Models were trained on different vocabularies", model=name, expected=vocabulary.hash,
                                actual=value)


def _agrees(classifier: StyleClassifier, seq: TokenSeq, style: StyleLabel, floor: float) -> tuple[bool, float]:
    probs = classifier.probabilities(seq)
    predicted = int(np.argmax(probs))
    prob = float(probs[style.index])
    return predicted == style.index and prob >= floor, prob


def iter_synthesized(
    corpora: Sequence[StyleCorpus],
    classifier: StyleClassifier,
    infillers: Mapping[str, Infiller],
    config: SynthesisConfig,
    seed: int,
    report: SynthReport,
) -> Iterator[SynthPair]:
    """Yields pairs in corpus order, both directions per filled template.

    Each sentence draws its fill seeds from ``(seed, corpus index, line)``,
    so output does not depend on how the sentences are scheduled.
    """
    styles = classifier.styles
    first, second = styles.first, styles.second
    for corpus_index, corpus in enumerate(corpora):
        for line_no, seq, _ in corpus.iter_with_lines():
            report.templates += 1
            item_seed = LewisUtils.derive_seed(seed, corpus_index, line_no)
            template = classifier.extract_template(seq, cap=config.slot_cap)
            if template.slot_count == 0:
                report.skipped_no_slot += 1
                continue
            fills = {}
            try:
                for style in (first, second):
                    request = InfillRequest(
                        template,
                        style,
                        beam=config.beam,
                        max_fill_length=config.max_fill_length,
                        seed=LewisUtils.derive_seed(item_seed, style.index),
                        temperature=config.temperature,
                    )
                    fills[style.index] = infillers[style.name].fill_template(request)
            except ConstraintFailure as e:
                report.constraint_failures += 1
                logger.debug("Skipping %s:%d: %s", corpus.path, line_no, e)
                continue
            ok_first, p_first = _agrees(classifier, fills[0], first, config.filter_floor)
            ok_second, p_second = _agrees(classifier, fills[1], second, config.filter_floor)
            kept = ok_first and ok_second
            report.generated += 1
            report.kept += int(kept)
            origin = Origin(corpus.path, line_no, item_seed)
            for src, tgt, p_src, p_tgt in ((first, second, p_first, p_second), (second, first, p_second, p_first)):
                pair = SynthPair(template, fills[src.index], fills[tgt.index], src, tgt, p_src, p_tgt, kept, origin)
                report.per_direction[pair.direction] = report.per_direction.get(pair.direction, 0) + 1
                yield pair


def synthesize(
    corpora: Sequence[StyleCorpus],
    classifier: StyleClassifier,
    infillers: Mapping[str, Infiller],
    vocabulary: Vocabulary,
    config: Optional[SynthesisConfig] = None,
    seed: int = 0,
) -> tuple[list[SynthPair], SynthReport]:
    """Runs synthesis over every corpus.

    Args:
        corpora (list): Style corpora (templates come from both styles).
        classifier (StyleClassifier): Template extractor and filter.
        infillers (dict): Infiller per style name.
        vocabulary (Vocabulary): Vocabulary shared by every model.
        config (SynthesisConfig): Slot cap, filter floor and fill settings.
        seed (int): Stage seed.

    Returns:
        tuple: All pairs (kept and rejected) and the synthesis report.

    Raises:
        VocabMismatch: If a model was trained on another vocabulary.
    """
    config = config or SynthesisConfig()
    _check_vocabularies(vocabulary, classifier, infillers.values())
    report = SynthReport()
    pairs = list(iter_synthesized(corpora, classifier, infillers, config, seed, report))
    logger.info(
        "Synthesized %d templates: %d filled, %d kept, filter rate %.3f (reference %.2f)",
        report.templates,
        report.generated,
        report.kept,
        report.filter_rate,
        REFERENCE_FILTER_RATE,
    )
    if report.skipped_no_slot or report.constraint_failures:
        logger.info("Skipped %d slot-free templates and %d constraint failures", report.skipped_no_slot,
                    report.constraint_failures)
    return pairs, report


@dataclass(frozen=True)
class EditRecord:
    """Editor training example derived from one directional pair."""

    source: TokenSeq
    target: TokenSeq
    source_style: StyleLabel
    target_style: StyleLabel
    tags: DualTags
    fills: tuple[TokenSeq, ...]
    masked: MaskedTarget
    origin: Optional[Origin] = None

    @property
    def direction(self) -> str:
        return f"{self.source_style.name}->{self.target_style.name}"

    @property
    def is_identity(self) -> bool:
        return not any(self.tags.insert_before) and all(op == OpKind.KEEP for op in self.tags.ops)

    def to_json(self, config_hash: str = "") -> dict:
        return {
            "source": self.source.text,
            "target": self.target.text,
            "source_style": self.source_style.name,
            "target_style": self.target_style.name,
            "direction": self.direction,
            "insert_before": [int(b) for b in self.tags.insert_before],
            "ops": "".join(op.value for op in self.tags.ops),
            "masked": self.masked.tokens.text,
            "fills": [fill.text for fill in self.fills],
            "script": render_script(self.source, levenshtein_script(self.source, self.target)),
            "origin": self.origin.as_dict() if self.origin else None,
            "config_hash": config_hash,
        }

    @classmethod
    def from_json(cls, obj: Mapping, styles: TaskStyles) -> "EditRecord":
        try:
            return make_record(
                TokenSeq.of(obj["source"]),
                TokenSeq.of(obj["target"]),
                styles.by_name(obj["source_style"]),
                styles.by_name(obj["target_style"]),
                Origin(obj["origin"]["file"], int(obj["origin"]["line"]), int(obj["origin"]["seed"]))
                if obj.get("origin")
                else None,
            )
        except (KeyError, TypeError, ValueError) as e:
            raise FormatError("Malformed edit record", detail=str(e)) from e


def make_record(
    source: TokenSeq,
    target: TokenSeq,
    source_style: StyleLabel,
    target_style: StyleLabel,
    origin: Optional[Origin] = None,
) -> EditRecord:
    script = levenshtein_script(source, target)
    tags = to_dual_tags(script)
    return EditRecord(
        source, target, source_style, target_style, tags, tuple(gold_fills(script)), apply_coarse(source, tags),
        origin
    )


def label_pairs(pairs: Iterable[SynthPair], include_rejected: bool = False) -> list[EditRecord]:
    """Edit records for kept pairs (every pair with ``include_rejected``)."""
    return [
        make_record(p.source, p.target, p.source_style, p.target_style, p.origin)
        for p in pairs
        if p.kept or include_rejected
    ]


def cap_identity_records(records: Sequence[EditRecord], cap: float = 0.05, seed: int = 0) -> list[EditRecord]:
    """Keeps all-KEEP records at no more than ``cap`` of the output.

    Records sharing an origin (the two directions of one pair) are kept or
    dropped together, so both directions stay the same size. Survivors are
    a seeded uniform sample and keep their input order.
    """
    if not 0.0 <= cap < 1.0:
        raise ValueError("identity cap must be in [0, 1)")
    groups: dict = {}
    for index, record in enumerate(records):
        key = (record.origin.path, record.origin.line) if record.origin else ("", index)
        groups.setdefault(key, []).append(index)
    identity = [key for key, members in groups.items() if all(records[i].is_identity for i in members)]
    others = len(groups) - len(identity)
    allowed = min(len(identity), int(np.floor(cap * others / (1.0 - cap) + 1e-9)))
    rng = np.random.default_rng(seed)
    chosen = {identity[i] for i in rng.choice(len(identity), size=allowed, replace=False)} if allowed else set()
    dropped = {i for key in identity if key not in chosen for i in groups[key]}
    if dropped:
        logger.info("Identity cap dropped %d of %d all-KEEP records", len(dropped),
                    sum(len(groups[k]) for k in identity))
    return [r for i, r in enumerate(records) if i not in dropped]


def write_jsonl(path: Union[str, os.PathLike], rows: Iterable[dict]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for row in rows:
            f.write(LewisUtils.canonical_json(row) + "\n")


def read_jsonl(path: Union[str, os.PathLike]) -> list[dict]:
    rows = []
    with open(path, encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                rows.append(json.loads(line))
            except json.JSONDecodeError as e:
                raise FormatError("Malformed JSON line", path=str(path), line=line_no) from e
    return rows


def write_pairs(path: Union[str, os.PathLike], pairs: Iterable[SynthPair], config_hash: str = "") -> None:
    write_jsonl(path, (p.to_json(config_hash) for p in pairs))


def read_pairs(path: Union[str, os.PathLike], styles: TaskStyles) -> list[SynthPair]:
    return [SynthPair.from_json(row, styles) for row in read_jsonl(path)]


def write_records(path: Union[str, os.PathLike], records: Iterable[EditRecord], config_hash: str = "") -> None:
    write_jsonl(path, (r.to_json(config_hash) for r in records))


def read_records(path: Union[str, os.PathLike], styles: TaskStyles) -> list[EditRecord]:
    return [EditRecord.from_json(row, styles) for row in read_jsonl(path)]
