"""Mappings between the source database's conventions and the portable format.

The micro cell encodes six edge operations in node-major digit groups
("...-a_bc_def" covering edges (0,1) | (0,2),(1,2) | (0,3),(1,3),(2,3));
the portable format orders the same edges lexicographically by (src, dst).
Metric names are looked up per task through an ordered candidate table so
minor naming differences across database revisions degrade to the next
candidate instead of failing; entries flagged `negate` store loss-like
metrics whose sign must flip so that higher is always better.
"""

from __future__ import annotations

import re

# edge order inside the arch string's digit groups, node-major
GROUP_EDGES = [(0, 1), (0, 2), (1, 2), (0, 3), (1, 3), (2, 3)]
# portable format order: lexicographic (src, dst)
LEX_EDGES = [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)]

_GROUP_TO_LEX = [LEX_EDGES.index(e) for e in GROUP_EDGES]
_LEX_TO_GROUP = [GROUP_EDGES.index(e) for e in LEX_EDGES]

OP_NAMES = ("none", "skip_connect", "conv1x1", "conv3x3")

_CELL_RE = re.compile(r"^(\d)_(\d{2})_(\d{3})$")


class ExportError(Exception):
    pass


def parse_arch_string(arch_str: str) -> tuple[int, ...]:
    """'<backbone>-a_bc_def' -> op tuple in lexicographic edge order."""
    cell = arch_str.rsplit("-", 1)[-1]
    m = _CELL_RE.match(cell)
    if not m:
        raise ExportError(f"unrecognized architecture string {arch_str!r}")
    digits = [int(c) for c in "".join(m.groups())]
    return tuple(digits[_LEX_TO_GROUP[i]] for i in range(6))


def cell_encoding(ops_lex: tuple[int, ...]) -> str:
    """Op tuple in lexicographic order -> the string's cell part 'a_bc_def'."""
    if len(ops_lex) != 6:
        raise ExportError(f"expected 6 ops, got {len(ops_lex)}")
    g = [ops_lex[_GROUP_TO_LEX[i]] for i in range(6)]
    return f"{g[0]}_{g[1]}{g[2]}_{g[3]}{g[4]}{g[5]}"


# task -> ordered (metric name template, negate) candidates; {split} is one of
# train/valid/test. Confirm against the database docs when pointing this at a
# new revision; --metric overrides take precedence.
METRIC_CANDIDATES: dict[str, list[tuple[str, bool]]] = {
    "class_scene": [("{split}_top1", False)],
    "class_object": [("{split}_top1", False)],
    "jigsaw": [("{split}_top1", False)],
    "room_layout": [("{split}_neg_loss", False), ("{split}_loss", True)],
    "segmentsemantic": [("{split}_mIoU", False), ("{split}_miou", False)],
    "autoencoder": [("{split}_ssim", False)],
    "normal": [("{split}_ssim", False)],
}

METRIC_DISPLAY_NAMES = {
    "class_scene": "top1_accuracy",
    "class_object": "top1_accuracy",
    "jigsaw": "top1_accuracy",
    "room_layout": "negative_loss",
    "segmentsemantic": "mean_iou",
    "autoencoder": "ssim",
    "normal": "ssim",
}

DEFAULT_TASKS = ("class_object", "room_layout", "autoencoder", "segmentsemantic")

SPLITS = ("train", "valid", "test")
