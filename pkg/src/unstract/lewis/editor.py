"""Coarse-to-fine editor and the two ablation baselines.

The tagger reads ``[STYLE] x EOS`` and predicts, per source position, an
insert-before flag and a KEEP/DELETE/REPLACE op; the EOS position is the
end sentinel. The generator reads ``[STYLE] x SEP x_c`` and writes the fill
of every MASK in x_c, separated by FILL-SEP and terminated by EOS. The
style marker names the target style, so one tagger and one generator serve
both directions.
"""

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from unstract.lewis.classifier import StyleClassifier
from unstract.lewis.corpus import StyleLabel, TokenSeq, Vocabulary
from unstract.lewis.editops import (
    TAG_OPS,
    DualTags,
    OpKind,
    apply_coarse,
    delete_only,
    reconstruct,
    render_tags,
)
from unstract.lewis.exceptions import ConstraintFailure, DegenerateData
from unstract.lewis.infill import InfillRequest, Infiller
from unstract.lewis.neural.decoding import FreeConstraint, beam_search
from unstract.lewis.neural.model import (
    IGNORE,
    ModelBundle,
    ModelConfig,
    Seq2SeqBatch,
    TaggerBatch,
    new_model,
    pad_batch,
    pad_labels,
)
from unstract.lewis.neural.optim import TrainConfig
from unstract.lewis.neural.training import train
from unstract.lewis.synthesis import EditRecord
from unstract.lewis.utils import LewisUtils

OP_INDEX = {op: i for i, op in enumerate(TAG_OPS)}

logger = LewisUtils.get_logger(__name__)


@dataclass
class DecodeConfig:
    beam: int = 5
    rerank: bool = True
    max_fill_length: int = 6


def _split_heldout(items: Sequence, fraction: float, seed: int) -> tuple[list, list]:
    if len(items) < 2 or fraction <= 0:
        return list(items), []
    order = np.random.default_rng(seed).permutation(len(items))
    n_heldout = max(1, int(round(len(items) * fraction)))
    heldout = [items[i] for i in order[:n_heldout]]
    return [items[i] for i in order[n_heldout:]], heldout


# ---------------------------------------------------------------------------
# Tagger
# ---------------------------------------------------------------------------


@dataclass
class TaggerOutput:
    tags: DualTags
    insert_probs: np.ndarray
    op_probs: np.ndarray


class EditTagger:
    """Predicts dual tags for a source sentence and a target style."""

    def __init__(self, model: ModelBundle, vocabulary: Vocabulary):
        if model.role != "tagger":
            raise ValueError(f"Expected a tagger model, got role '{model.role}'")
        self.model = model
        self.vocabulary = vocabulary

    def input_ids(self, x: Sequence[str], target_style: StyleLabel) -> list[int]:
        v = self.vocabulary
        return [v.style_ids[target_style.index], *v.encode(x), v.eos_id]

    def tag(self, x: Sequence[str], target_style: StyleLabel) -> TaggerOutput:
        """Argmax dual tags; the end sentinel's op is always KEEP.

        Raises:
            LengthError: If the input exceeds the model's max_len.
        """
        ids = np.asarray([self.input_ids(x, target_style)], dtype=np.int64)
        ins_probs, op_probs = self.model.net.predict_proba(ids, np.ones_like(ids, dtype=bool))
        ins_probs, op_probs = ins_probs[0, 1:], op_probs[0, 1:]
        inserts = tuple(bool(p[1] > p[0]) for p in ins_probs)
        ops = [TAG_OPS[int(np.argmax(p))] for p in op_probs[:-1]]
        tags = DualTags(inserts, (*ops, OpKind.KEEP))
        return TaggerOutput(tags, ins_probs[:, 1], op_probs)

    def accuracy(self, records: Sequence[EditRecord]) -> dict:
        """Per-head position accuracy and whole-sequence tag accuracy."""
        ins_hits = op_hits = exact = positions = ops = 0
        for record in records:
            predicted = self.tag(record.source, record.target_style).tags
            ins_hits += sum(a == b for a, b in zip(predicted.insert_before, record.tags.insert_before))
            op_hits += sum(a == b for a, b in zip(predicted.ops[:-1], record.tags.ops[:-1]))
            exact += int(predicted == record.tags)
            positions += len(record.tags)
            ops += record.tags.source_length
        if not records:
            return {"insert": float("nan"), "op": float("nan"), "exact": float("nan")}
        return {"insert": ins_hits / positions, "op": op_hits / ops, "exact": exact / len(records)}


def _tagger_collate(vocabulary: Vocabulary):
    def collate(batch: list[EditRecord]) -> TaggerBatch:
        ids, mask = pad_batch(
            [[vocabulary.style_ids[r.target_style.index], *vocabulary.encode(r.source), vocabulary.eos_id]
             for r in batch],
            vocabulary.pad_id,
        )
        insert_labels = pad_labels([[IGNORE, *(int(b) for b in r.tags.insert_before)] for r in batch],
                                   ids.shape[1])
        op_labels = pad_labels([[IGNORE, *(OP_INDEX[op] for op in r.tags.ops[:-1]), IGNORE] for r in batch],
                               ids.shape[1])
        return TaggerBatch(ids, mask, insert_labels, op_labels)

    return collate


def train_tagger(
    records: Sequence[EditRecord],
    vocabulary: Vocabulary,
    model_config: Optional[ModelConfig] = None,
    train_config: Optional[TrainConfig] = None,
    seed: int = 0,
    heldout_fraction: float = 0.1,
) -> EditTagger:
    """Trains the shared dual-tag tagger.

    Raises:
        DegenerateData: If there are no records or every record is all-KEEP.
    """
    if not records or all(r.is_identity for r in records):
        raise DegenerateData("Tagger training needs at least one record with edits", records=len(records))
    directions = sorted({r.direction for r in records})
    if len(directions) < 2:
        logger.warning("Tagger records cover a single direction: %s", directions)
    training, heldout = _split_heldout(records, heldout_fraction, seed)
    model = new_model("tagger", vocabulary.hash, len(vocabulary), model_config or ModelConfig(), seed)
    result = train(model, training, _tagger_collate(vocabulary), train_config or TrainConfig(), seed)
    tagger = EditTagger(result.model, vocabulary)
    scores = tagger.accuracy(heldout)
    model.metadata.update(heldout_accuracy=scores, heldout_size=len(heldout), directions=directions,
                          final_loss=result.final_loss)
    logger.info("Tagger trained: held-out insert %.4f, op %.4f, exact %.4f on %d records", scores["insert"],
                scores["op"], scores["exact"], len(heldout))
    return tagger


# ---------------------------------------------------------------------------
# Fill generator
# ---------------------------------------------------------------------------


@dataclass
class FillCandidate:
    fills: list[TokenSeq]
    score: float


class FillGenerator:
    """Decodes FILL-SEP separated fills for the MASKs of a skeleton."""

    def __init__(self, model: ModelBundle, vocabulary: Vocabulary):
        if model.role != "generator":
            raise ValueError(f"Expected a generator model, got role '{model.role}'")
        self.model = model
        self.vocabulary = vocabulary
        v = vocabulary
        self.constraint = FreeConstraint(np.asarray([*v.content_ids(), v.fill_sep_id, v.eos_id]), v.eos_id)

    def input_ids(self, x: Sequence[str], masked: Sequence[str], target_style: StyleLabel) -> list[int]:
        v = self.vocabulary
        return [v.style_ids[target_style.index], *v.encode(x), v.sep_id, *v.encode(masked)]

    def split(self, ids: Sequence[int]) -> list[TokenSeq]:
        segments: list[list[str]] = [[]]
        for token in ids:
            if token == self.vocabulary.fill_sep_id:
                segments.append([])
            else:
                segments[-1].append(self.vocabulary.surface_of(token))
        return [TokenSeq(tuple(s)) for s in segments]

    def propose(
        self, x: Sequence[str], masked: Sequence[str], slot_count: int, target_style: StyleLabel, decode: DecodeConfig
    ) -> tuple[list[FillCandidate], int]:
        """Beam candidates whose fills match ``slot_count`` non-empty
        segments, plus the number discarded."""
        max_steps = min(slot_count * (decode.max_fill_length + 1) + 1, self.model.config.max_len - 1)
        hyps = beam_search(self.model.net, self.input_ids(x, masked, target_style), self.vocabulary.bos_id,
                           self.constraint, max_steps, decode.beam)
        candidates, discarded = [], 0
        for hyp in hyps:
            if not hyp.finished:
                discarded += 1
                continue
            fills = self.split(hyp.ids[1:-1])
            if len(fills) != slot_count or any(len(f) == 0 for f in fills):
                discarded += 1
                continue
            candidates.append(FillCandidate(fills, hyp.score))
        return candidates, discarded


def _generator_collate(vocabulary: Vocabulary):
    v = vocabulary

    def collate(batch: list[EditRecord]) -> Seq2SeqBatch:
        src_ids, src_mask = pad_batch(
            [[v.style_ids[r.target_style.index], *v.encode(r.source), v.sep_id, *v.encode(r.masked.tokens)]
             for r in batch],
            v.pad_id,
        )
        targets = []
        for r in batch:
            target: list[int] = []
            for i, fill in enumerate(r.fills):
                if i:
                    target.append(v.fill_sep_id)
                target.extend(v.encode(fill))
            targets.append(target)
        dec_ids, dec_mask = pad_batch([[v.bos_id, *t] for t in targets], v.pad_id)
        labels = pad_labels([[*t, v.eos_id] for t in targets], dec_ids.shape[1])
        return Seq2SeqBatch(src_ids, src_mask, dec_ids, dec_mask, labels)

    return collate


def train_generator(
    records: Sequence[EditRecord],
    vocabulary: Vocabulary,
    model_config: Optional[ModelConfig] = None,
    train_config: Optional[TrainConfig] = None,
    seed: int = 0,
) -> FillGenerator:
    """Trains the shared fill generator with teacher forcing.

    Raises:
        DegenerateData: If no record has a slot to fill.
    """
    if not any(r.masked.slot_count for r in records):
        raise DegenerateData("Generator training needs at least one record with slots", records=len(records))
    model = new_model("generator", vocabulary.hash, len(vocabulary), model_config or ModelConfig(), seed)
    result = train(model, list(records), _generator_collate(vocabulary), train_config or TrainConfig(), seed)
    model.metadata["final_loss"] = result.final_loss
    logger.info("Generator trained on %d records, final loss %.4f", len(records), result.final_loss)
    return FillGenerator(result.model, vocabulary)


# ---------------------------------------------------------------------------
# Transfer
# ---------------------------------------------------------------------------


@dataclass
class Candidate:
    text: TokenSeq
    model_score: float
    cls_prob: float

    def as_dict(self) -> dict:
        return {"text": self.text.text, "model_score": self.model_score, "cls_prob": self.cls_prob}


@dataclass
class TransferResult:
    source: TokenSeq
    output: TokenSeq
    source_style: StyleLabel
    target_style: StyleLabel
    tags: DualTags
    candidates: list[Candidate] = field(default_factory=list)
    chosen: int = -1
    fallback: bool = False

    @property
    def direction(self) -> str:
        return f"{self.source_style.name}->{self.target_style.name}"

    def to_json(self, config_hash: str = "") -> dict:
        return {
            "source": self.source.text,
            "output": self.output.text,
            "direction": self.direction,
            "tags": render_tags(self.source, self.tags),
            "candidates": [c.as_dict() for c in self.candidates],
            "chosen": self.chosen,
            "fallback": self.fallback,
            "config_hash": config_hash,
        }


def choose_candidate(candidates: Sequence[Candidate], rerank: bool = True) -> int:
    """Index of the best candidate: highest classifier probability (ties to
    the higher model score, then the earlier beam), or the highest model
    score when reranking is off."""
    if not candidates:
        return -1
    if rerank:
        key = lambda i: (candidates[i].cls_prob, candidates[i].model_score, -i)  # noqa: E731
    else:
        key = lambda i: (candidates[i].model_score, -i)  # noqa: E731
    return max(range(len(candidates)), key=key)


def transfer(
    x: TokenSeq,
    target_style: StyleLabel,
    tagger: EditTagger,
    generator: FillGenerator,
    classifier: StyleClassifier,
    decode: Optional[DecodeConfig] = None,
) -> TransferResult:
    """Edits ``x`` towards ``target_style``.

    Tags the source, builds the masked skeleton, beam-searches the fills and
    reranks the reconstructed candidates. When no candidate survives, the
    deletion-only output is returned with ``fallback`` set.
    """
    decode = decode or DecodeConfig()
    source_style = classifier.styles.other(target_style)
    tags = tagger.tag(x, target_style).tags
    masked = apply_coarse(x, tags)
    if masked.slot_count == 0:
        output = delete_only(x, tags)
        candidate = Candidate(output, 0.0, classifier.style_probability(output, target_style))
        return TransferResult(x, output, source_style, target_style, tags, [candidate], 0)
    proposals, discarded = generator.propose(x, masked.tokens, masked.slot_count, target_style, decode)
    candidates = []
    for proposal in proposals:
        output = reconstruct(x, tags, proposal.fills)
        candidates.append(Candidate(output, proposal.score, classifier.style_probability(output, target_style)))
    if not candidates:
        logger.debug("All %d candidates discarded for '%s'; using deletion-only output", discarded, x.text)
        return TransferResult(x, delete_only(x, tags), source_style, target_style, tags, [], -1, fallback=True)
    chosen = choose_candidate(candidates, decode.rerank)
    return TransferResult(x, candidates[chosen].text, source_style, target_style, tags, candidates, chosen)


def transfer_all(
    sources: Sequence[TokenSeq],
    target_style: StyleLabel,
    tagger: EditTagger,
    generator: FillGenerator,
    classifier: StyleClassifier,
    decode: Optional[DecodeConfig] = None,
) -> list[TransferResult]:
    results = [transfer(x, target_style, tagger, generator, classifier, decode) for x in sources]
    fallbacks = sum(r.fallback for r in results)
    if fallbacks:
        logger.info("Transfer used the deletion-only fallback for %d of %d inputs", fallbacks, len(results))
    return results


# ---------------------------------------------------------------------------
# Baselines
# ---------------------------------------------------------------------------


def lm_fill_baseline(
    x: TokenSeq,
    target_style: StyleLabel,
    classifier: StyleClassifier,
    infiller: Infiller,
    decode: Optional[DecodeConfig] = None,
    seed: int = 0,
) -> TokenSeq:
    """Fills the source's own template with the target-style infiller."""
    decode = decode or DecodeConfig()
    template = classifier.extract_template(x)
    if template.slot_count == 0:
        return x
    request = InfillRequest(template, target_style, beam=decode.beam, max_fill_length=decode.max_fill_length,
                            seed=seed, temperature=0.0)
    try:
        return infiller.fill_template(request)
    except ConstraintFailure:
        return TokenSeq(template.content_tokens)


class Seq2SeqTransfer:
    """Plain encoder-decoder rewriting ``[STYLE] x EOS`` into y."""

    def __init__(self, model: ModelBundle, vocabulary: Vocabulary):
        if model.role != "seq2seq":
            raise ValueError(f"Expected a seq2seq model, got role '{model.role}'")
        self.model = model
        self.vocabulary = vocabulary
        v = vocabulary
        self.constraint = FreeConstraint(np.asarray([*v.content_ids(), v.eos_id]), v.eos_id)

    def transfer(
        self,
        x: TokenSeq,
        target_style: StyleLabel,
        classifier: Optional[StyleClassifier] = None,
        decode: Optional[DecodeConfig] = None,
    ) -> TokenSeq:
        decode = decode or DecodeConfig()
        v = self.vocabulary
        src = [v.style_ids[target_style.index], *v.encode(x), v.eos_id]
        max_steps = min(2 * len(x) + 10, self.model.config.max_len - 1)
        hyps = beam_search(self.model.net, src, v.bos_id, self.constraint, max_steps, decode.beam)
        outputs = [
            Candidate(v.decode(h.ids[1:-1] if h.finished else h.ids[1:]), h.score, 0.0)
            for h in hyps
        ]
        if classifier is not None and decode.rerank:
            for c in outputs:
                c.cls_prob = classifier.style_probability(c.text, target_style)
        return outputs[choose_candidate(outputs, decode.rerank and classifier is not None)].text


def _seq2seq_collate(vocabulary: Vocabulary):
    v = vocabulary

    def collate(batch: list[EditRecord]) -> Seq2SeqBatch:
        src_ids, src_mask = pad_batch(
            [[v.style_ids[r.target_style.index], *v.encode(r.source), v.eos_id] for r in batch], v.pad_id
        )
        targets = [v.encode(r.target) for r in batch]
        dec_ids, dec_mask = pad_batch([[v.bos_id, *t] for t in targets], v.pad_id)
        labels = pad_labels([[*t, v.eos_id] for t in targets], dec_ids.shape[1])
        return Seq2SeqBatch(src_ids, src_mask, dec_ids, dec_mask, labels)

    return collate


def train_seq2seq(
    records: Sequence[EditRecord],
    vocabulary: Vocabulary,
    model_config: Optional[ModelConfig] = None,
    train_config: Optional[TrainConfig] = None,
    seed: int = 0,
) -> Seq2SeqTransfer:
    """Trains the full-rewrite baseline on the same (x, y) records.

    Raises:
        DegenerateData: If there are no records.
    """
    if not records:
        raise DegenerateData("Seq2seq baseline needs at least one record")
    model = new_model("seq2seq", vocabulary.hash, len(vocabulary), model_config or ModelConfig(), seed)
    result = train(model, list(records), _seq2seq_collate(vocabulary), train_config or TrainConfig(), seed)
    model.metadata["final_loss"] = result.final_loss
    logger.info("Seq2seq baseline trained on %d records, final loss %.4f", len(records), result.final_loss)
    return Seq2SeqTransfer(result.model, vocabulary)

