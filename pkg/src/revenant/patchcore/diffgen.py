"""Generate FilePatch objects by diffing two texts.

difflib does the sequence matching; this module only shapes its opcodes
into the hunk model, carrying the no-trailing-newline property through so
round-trips stay byte-exact.
"""

from __future__ import annotations

import difflib
from typing import List, Optional, Tuple

from .model import (
    ADD,
    CONTEXT,
    MODE_CREATED,
    MODE_DELETED,
    MODE_NONE,
    REMOVE,
    FilePatch,
    Hunk,
    HunkLine,
    SourcePatch,
    split_lines,
)


def _tagged_lines(text: str) -> List[Tuple[str, bool]]:
    lines, final_nl = split_lines(text)
    out = [(ln, True) for ln in lines]
    if out and not final_nl:
        out[-1] = (out[-1][0], False)
    return out


def diff_texts(
    old: str,
    new: str,
    old_path: str = "a",
    new_path: Optional[str] = None,
    context: int = 3,
) -> FilePatch:
    """Unified diff of two texts as a FilePatch (empty hunks list if equal)."""
    if new_path is None:
        new_path = old_path
    a = _tagged_lines(old)
    b = _tagged_lines(new)
    mode = MODE_NONE
    if old == "" and new != "":
        mode = MODE_CREATED
    elif old != "" and new == "":
        mode = MODE_DELETED
    fp = FilePatch(old_path, new_path, [], mode_change=mode)

    matcher = difflib.SequenceMatcher(a=a, b=b, autojunk=False)
    for group in matcher.get_grouped_opcodes(context):
        i1, j1 = group[0][1], group[0][3]
        i2, j2 = group[-1][2], group[-1][4]
        hunk = Hunk(
            old_start=i1 + 1 if i2 > i1 else i1,
            old_len=i2 - i1,
            new_start=j1 + 1 if j2 > j1 else j1,
            new_len=j2 - j1,
        )
        for tag, ai, aj, bi, bj in group:
            if tag == "equal":
                for text, nl in a[ai:aj]:
                    hunk.lines.append(HunkLine(CONTEXT, text, nl))
                continue
            if tag in ("replace", "delete"):
                for text, nl in a[ai:aj]:
                    hunk.lines.append(HunkLine(REMOVE, text, nl))
            if tag in ("replace", "insert"):
                for text, nl in b[bi:bj]:
                    hunk.lines.append(HunkLine(ADD, text, nl))
        fp.hunks.append(hunk)
    return fp


def whole_file_patch(old: str, new: str, path: str) -> FilePatch:
    """A single-hunk patch replacing the full old content with the new."""
    a = _tagged_lines(old)
    b = _tagged_lines(new)
    mode = MODE_NONE
    if old == "" and new != "":
        mode = MODE_CREATED
    elif old != "" and new == "":
        mode = MODE_DELETED
    lines = [HunkLine(REMOVE, t, nl) for t, nl in a]
    lines += [HunkLine(ADD, t, nl) for t, nl in b]
    hunk = Hunk(
        old_start=1 if a else 0,
        old_len=len(a),
        new_start=1 if b else 0,
        new_len=len(b),
        lines=lines,
    )
    fp = FilePatch(path, path, [], mode_change=mode)
    if a or b:
        fp.hunks.append(hunk)
    return fp


def diff_trees(
    old_files: dict,
    new_files: dict,
    context: int = 3,
    provenance: str = "",
) -> SourcePatch:
    """Diff two {path: text} snapshots into a SourcePatch."""
    paths = sorted(set(old_files) | set(new_files))
    files = []
    for p in paths:
        old = old_files.get(p, "")
        new = new_files.get(p, "")
        if old == new:
            continue
        fp = diff_texts(old, new, p, p, context=context)
        if p not in old_files:
            fp.mode_change = MODE_CREATED
        elif p not in new_files:
            fp.mode_change = MODE_DELETED
        files.append(fp)
    return SourcePatch(files=files, provenance=provenance)
