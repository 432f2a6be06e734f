"""Token-level Levenshtein edit scripts and the coarse-to-fine encodings
built on them.

An ``EditScript`` is a list of ops positioned against the source tokens.
KEEP/DELETE/REPLACE cover source tokens ``[src_start, src_end)``; INSERT ops
have ``src_start == src_end == i`` and insert their fill before source
position ``i`` (``i == N`` appends). Gold scripts carry the target tokens in
``fill``; scripts rebuilt from dual tags carry none.

Rendering follows the K/D/R/I abbreviations::

    I[probably] K[the] R[worst→best] K[ribs] D[i've] K[ever] D[had] K[!]
"""

from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Optional, Sequence

import numpy as np

from unstract.lewis.corpus import MASK, TokenSeq
from unstract.lewis.exceptions import EmptyInput, FillMismatch, InvalidScript, TagMismatch
from unstract.lewis.utils import LewisUtils


class OpKind(str, Enum):
    KEEP = "K"
    DELETE = "D"
    REPLACE = "R"
    INSERT = "I"


# Backtrace preference when several moves reach the optimum.
_TIE_ORDER = (OpKind.KEEP, OpKind.REPLACE, OpKind.DELETE, OpKind.INSERT)
TAG_OPS = (OpKind.KEEP, OpKind.DELETE, OpKind.REPLACE)


@dataclass(frozen=True)
class EditOp:
    kind: OpKind
    src_start: int
    src_end: int
    fill: tuple[str, ...] = ()

    @property
    def unit_cost(self) -> int:
        if self.kind == OpKind.KEEP:
            return 0
        if self.kind == OpKind.INSERT:
            return max(len(self.fill), 1)
        return self.src_end - self.src_start


@dataclass(frozen=True)
class EditScript:
    ops: tuple[EditOp, ...]
    source_length: int
    cost: int

    def kinds(self) -> list[OpKind]:
        return [op.kind for op in self.ops]


@dataclass(frozen=True)
class DualTags:
    """Per-position tags; position N is the end sentinel whose op is KEEP."""

    insert_before: tuple[bool, ...]
    ops: tuple[OpKind, ...]

    def __post_init__(self):
        if len(self.insert_before) != len(self.ops):
            raise TagMismatch("insert_before and ops must have the same length")
        if not self.ops or self.ops[-1] != OpKind.KEEP:
            raise TagMismatch("End-sentinel op must be KEEP")
        if any(op not in TAG_OPS for op in self.ops):
            raise TagMismatch("Tag ops are limited to KEEP, DELETE and REPLACE")

    def __len__(self):
        return len(self.ops)

    @property
    def source_length(self) -> int:
        return len(self.ops) - 1

    @classmethod
    def all_keep(cls, n: int) -> "DualTags":
        return cls((False,) * (n + 1), (OpKind.KEEP,) * (n + 1))


@dataclass(frozen=True)
class MaskedTarget:
    tokens: TokenSeq
    slot_count: int


@dataclass(frozen=True)
class SpanStats:
    merged_op_count: int
    source_token_count: int
    output_token_count: int


@dataclass
class SpanStatsSummary:
    """Corpus aggregates (population mean and std) over SpanStats rows."""

    count: int = 0
    means: dict = field(default_factory=dict)
    stds: dict = field(default_factory=dict)
    multi_span_rate: float = 0.0

    def as_dict(self) -> dict:
        return {
            "count": self.count,
            "rows": {k: {"mean": self.means[k], "std": self.stds[k]} for k in self.means},
            "multi_span_rate": self.multi_span_rate,
        }


def levenshtein_distance(src: Sequence[str], tgt: Sequence[str]) -> int:
    """Classic unit-cost Levenshtein distance."""
    return int(_suffix_table(src, tgt)[0, 0])


def _suffix_table(src: Sequence[str], tgt: Sequence[str]) -> np.ndarray:
    n, m = len(src), len(tgt)
    d = np.zeros((n + 1, m + 1), dtype=np.int64)
    d[n, :] = np.arange(m, -1, -1)
    d[:, m] = np.arange(n, -1, -1)
    for i in range(n - 1, -1, -1):
        for j in range(m - 1, -1, -1):
            if src[i] == tgt[j]:
                d[i, j] = d[i + 1, j + 1]
            else:
                d[i, j] = 1 + min(d[i + 1, j + 1], d[i + 1, j], d[i, j + 1])
    return d


def levenshtein_script(src: Sequence[str], tgt: Sequence[str]) -> EditScript:
    """Minimal unit-cost edit script turning ``src`` into ``tgt``.

    The table holds suffix distances so the walk runs left to right; among
    optimal moves KEEP beats REPLACE beats DELETE beats INSERT.

    Raises:
        EmptyInput: If either sequence is empty.
    """
    src, tgt = tuple(src), tuple(tgt)
    if not src or not tgt:
        raise EmptyInput("levenshtein_script needs two non-empty sequences")
    d = _suffix_table(src, tgt)
    n, m = len(src), len(tgt)
    ops: list[EditOp] = []
    i = j = 0
    while i < n or j < m:
        here = d[i, j]
        for kind in _TIE_ORDER:
            if kind == OpKind.KEEP and i < n and j < m and src[i] == tgt[j] and d[i + 1, j + 1] == here:
                ops.append(EditOp(OpKind.KEEP, i, i + 1))
                i, j = i + 1, j + 1
                break
            if kind == OpKind.REPLACE and i < n and j < m and src[i] != tgt[j] and d[i + 1, j + 1] + 1 == here:
                ops.append(EditOp(OpKind.REPLACE, i, i + 1, (tgt[j],)))
                i, j = i + 1, j + 1
                break
            if kind == OpKind.DELETE and i < n and d[i + 1, j] + 1 == here:
                ops.append(EditOp(OpKind.DELETE, i, i + 1))
                i += 1
                break
            if kind == OpKind.INSERT and j < m and d[i, j + 1] + 1 == here:
                ops.append(EditOp(OpKind.INSERT, i, i, (tgt[j],)))
                j += 1
                break
        else:  # pragma: no cover - the table always admits one optimal move
            raise InvalidScript("Backtrace found no optimal move", i=i, j=j)
    return EditScript(tuple(ops), n, int(d[0, 0]))


def _validate(script: EditScript) -> None:
    pos = 0
    for op in script.ops:
        if op.kind == OpKind.INSERT:
            if op.src_start != pos or op.src_end != pos:
                raise InvalidScript("INSERT is out of position", position=pos, op=op.kind.value)
            continue
        if op.src_start != pos or op.src_end <= op.src_start:
            raise InvalidScript("Source coverage is not contiguous", position=pos, op=op.kind.value)
        if op.kind in (OpKind.KEEP, OpKind.DELETE) and op.fill:
            raise InvalidScript("KEEP/DELETE ops carry no fill", position=pos)
        pos = op.src_end
    if pos != script.source_length:
        raise InvalidScript("Script does not cover the source", covered=pos, length=script.source_length)


def to_dual_tags(script: EditScript) -> DualTags:
    """Encodes a script as an insert-before flag plus one op per source token.

    Raises:
        InvalidScript: If the script does not cover the source contiguously.
    """
    _validate(script)
    n = script.source_length
    inserts = [False] * (n + 1)
    kinds = [OpKind.KEEP] * (n + 1)
    for op in script.ops:
        if op.kind == OpKind.INSERT:
            inserts[op.src_start] = True
        else:
            for i in range(op.src_start, op.src_end):
                kinds[i] = op.kind
    return DualTags(tuple(inserts), tuple(kinds))


def from_dual_tags(tags: DualTags) -> EditScript:
    """Fill-free unit script with the coarse structure of ``tags``."""
    ops: list[EditOp] = []
    n = tags.source_length
    for i in range(n + 1):
        if tags.insert_before[i]:
            ops.append(EditOp(OpKind.INSERT, i, i))
        if i < n:
            ops.append(EditOp(tags.ops[i], i, i + 1))
    return EditScript(tuple(ops), n, sum(op.unit_cost for op in ops))


def coarse_signature(script: EditScript) -> list[tuple[str, int]]:
    """(kind, position) per source token and per insertion point; repeated
    insertions at one point count once."""
    signature: list[tuple[str, int]] = []
    for op in script.ops:
        if op.kind == OpKind.INSERT:
            if not signature or signature[-1] != (OpKind.INSERT.value, op.src_start):
                signature.append((OpKind.INSERT.value, op.src_start))
        else:
            signature.extend((op.kind.value, i) for i in range(op.src_start, op.src_end))
    return signature


def apply_coarse(src: Sequence[str], tags: DualTags) -> MaskedTarget:
    """Builds the masked skeleton x_c: kept tokens stay, deleted tokens go,
    and every maximal run of insertions/replacements between kept tokens
    becomes one MASK.

    Raises:
        TagMismatch: If ``len(tags) != len(src) + 1``.
    """
    if len(tags) != len(src) + 1:
        raise TagMismatch("Tags must have one entry per source token plus the end sentinel",
                          tags=len(tags), source=len(src))
    out: list[str] = []
    slots = 0

    def emit_mask():
        nonlocal slots
        if not out or out[-1] != MASK:
            out.append(MASK)
            slots += 1

    for i in range(len(src) + 1):
        if tags.insert_before[i]:
            emit_mask()
        if i == len(src):
            break
        op = tags.ops[i]
        if op == OpKind.KEEP:
            out.append(src[i])
        elif op == OpKind.REPLACE:
            emit_mask()
    return MaskedTarget(TokenSeq(tuple(out)), slots)


def gold_fills(script: EditScript) -> list[TokenSeq]:
    """Target tokens for each MASK of ``apply_coarse(src, to_dual_tags(script))``."""
    fills: list[TokenSeq] = []
    current: Optional[list[str]] = None
    for op in script.ops:
        if op.kind in (OpKind.INSERT, OpKind.REPLACE):
            if current is None:
                current = []
            current.extend(op.fill)
        elif op.kind == OpKind.KEEP and current is not None:
            fills.append(TokenSeq(tuple(current)))
            current = None
    if current is not None:
        fills.append(TokenSeq(tuple(current)))
    return fills


def reconstruct(src: Sequence[str], tags: DualTags, fills: Sequence[Iterable[str]]) -> TokenSeq:
    """Replaces the MASKs of the coarse skeleton with ``fills``, in order.

    Raises:
        FillMismatch: If the number of fills differs from the slot count.
    """
    masked = apply_coarse(src, tags)
    if len(fills) != masked.slot_count:
        raise FillMismatch("Fill count does not match slot count", fills=len(fills), slots=masked.slot_count)
    fill_iter = iter(fills)
    out: list[str] = []
    for tok in masked.tokens:
        if tok == MASK:
            out.extend(next(fill_iter))
        else:
            out.append(tok)
    return TokenSeq(tuple(out))


def apply_script(src: Sequence[str], script: EditScript) -> TokenSeq:
    """Applies a gold script (with fills) to its source."""
    _validate(script)
    out: list[str] = []
    for op in script.ops:
        if op.kind == OpKind.KEEP:
            out.extend(src[op.src_start : op.src_end])
        elif op.kind in (OpKind.INSERT, OpKind.REPLACE):
            out.extend(op.fill)
    return TokenSeq(tuple(out))


def delete_only(src: Sequence[str], tags: DualTags) -> TokenSeq:
    """The source with DELETE tags applied and nothing generated."""
    return TokenSeq(tuple(tok for tok, op in zip(src, tags.ops) if op != OpKind.DELETE))


def merge_spans(script: EditScript) -> tuple[EditScript, SpanStats]:
    """Coalesces adjacent ops of the same kind into spans.

    ``merged_op_count`` counts non-KEEP spans; ``output_token_count`` is the
    length of the script's output when fills are present.
    """
    merged: list[EditOp] = []
    for op in script.ops:
        if merged and merged[-1].kind == op.kind and merged[-1].src_end == op.src_start:
            prev = merged.pop()
            op = EditOp(op.kind, prev.src_start, op.src_end, prev.fill + op.fill)
        merged.append(op)
    output_tokens = sum(
        op.src_end - op.src_start if op.kind == OpKind.KEEP else len(op.fill)
        for op in merged
        if op.kind != OpKind.DELETE
    )
    stats = SpanStats(
        merged_op_count=sum(1 for op in merged if op.kind != OpKind.KEEP),
        source_token_count=script.source_length,
        output_token_count=output_tokens,
    )
    return EditScript(tuple(merged), script.source_length, script.cost), stats


def summarize_span_stats(rows: Sequence[SpanStats], template_lengths: Sequence[int] = ()) -> SpanStatsSummary:
    summary = SpanStatsSummary(count=len(rows))
    columns = {
        "merged_edit_ops": [r.merged_op_count for r in rows],
        "source_tokens": [r.source_token_count for r in rows],
        "output_tokens": [r.output_token_count for r in rows],
    }
    if template_lengths:
        columns["template_tokens"] = list(template_lengths)
    for name, values in columns.items():
        summary.means[name], summary.stds[name] = LewisUtils.mean_std(values)
    if rows:
        summary.multi_span_rate = sum(1 for r in rows if r.merged_op_count > 1) / len(rows)
    return summary


def render_script(src: Sequence[str], script: EditScript) -> str:
    merged, _ = merge_spans(script)
    parts = []
    for op in merged.ops:
        covered = " ".join(src[op.src_start : op.src_end])
        if op.kind == OpKind.INSERT:
            parts.append(f"I[{' '.join(op.fill)}]")
        elif op.kind == OpKind.REPLACE:
            parts.append(f"R[{covered}→{' '.join(op.fill)}]")
        else:
            parts.append(f"{op.kind.value}[{covered}]")
    return " ".join(parts)


def render_tags(src: Sequence[str], tags: DualTags) -> str:
    """Fill-free rendering of dual tags, e.g. ``I K[the] R[worst] K[ribs]``."""
    merged, _ = merge_spans(from_dual_tags(tags))
    parts = []
    for op in merged.ops:
        if op.kind == OpKind.INSERT:
            parts.append("I")
        else:
            parts.append(f"{op.kind.value}[{' '.join(src[op.src_start : op.src_end])}]")
    return " ".join(parts)
