"""Patch algebra: parse, render, invert, apply with fuzz, split."""

from .model import (
    ADD,
    CONTEXT,
    REMOVE,
    AmbiguousAnchor,
    FilePatch,
    FunctionBoundaryUnavailable,
    Granularity,
    Hunk,
    HunkCountMismatch,
    HunkLine,
    HunkRejected,
    MalformedHeader,
    MODE_CREATED,
    MODE_DELETED,
    MODE_NONE,
    PatchApplyError,
    PatchError,
    PatchParseError,
    SourcePatch,
    TruncatedHunk,
    invert,
    join_lines,
    split_lines,
)
from .applier import (
    ApplyReport,
    HunkResult,
    REJECT_AMBIGUOUS,
    REJECT_NO_ANCHOR,
    apply_file_patch,
    apply_source_patch,
)
from .diffgen import diff_texts, diff_trees, whole_file_patch
from .split import locate_functions, split_by_granularity
from .unidiff import parse_unified_diff, render_unified_diff

__all__ = [
    "ADD",
    "CONTEXT",
    "REMOVE",
    "AmbiguousAnchor",
    "ApplyReport",
    "FilePatch",
    "FunctionBoundaryUnavailable",
    "Granularity",
    "Hunk",
    "HunkCountMismatch",
    "HunkLine",
    "HunkRejected",
    "HunkResult",
    "MalformedHeader",
    "MODE_CREATED",
    "MODE_DELETED",
    "MODE_NONE",
    "PatchApplyError",
    "PatchError",
    "PatchParseError",
    "REJECT_AMBIGUOUS",
    "REJECT_NO_ANCHOR",
    "SourcePatch",
    "TruncatedHunk",
    "apply_file_patch",
    "apply_source_patch",
    "diff_texts",
    "diff_trees",
    "invert",
    "join_lines",
    "locate_functions",
    "parse_unified_diff",
    "render_unified_diff",
    "split_by_granularity",
    "split_lines",
    "whole_file_patch",
]
