"""Hunk application with offset search and bounded context fuzz.

Anchor search order, per hunk: exact match at the declared position, then an
offset scan alternating +1, -1, +2, -2, ... inside the search window, then
the same again with 1 and finally 2 outer context lines dropped (fuzz).
Two equally distant anchors at the same fuzz level are ambiguous and the
hunk is rejected rather than guessed.

With max_fuzz=0 and search_window=0 the behavior is strict application:
every hunk must match byte-exactly at its declared position.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

from .model import (
    ADD,
    CONTEXT,
    REMOVE,
    FilePatch,
    HunkLine,
    HunkRejected,
    SourcePatch,
    join_lines,
    split_lines,
)

REJECT_NO_ANCHOR = "no-anchor"
REJECT_AMBIGUOUS = "ambiguous-anchor"

_TRAILING_WS = re.compile(r"[ \t\r]+$")


@dataclass(frozen=True)
class HunkResult:
    index: int  # position of the hunk within its FilePatch
    status: str  # "applied" or "rejected"
    offset: int = 0  # signed displacement from the expected position
    fuzz: int = 0  # context lines dropped from each end to anchor
    reason: str = ""  # reject reason, empty when applied

    @property
    def applied(self) -> bool:
        return self.status == "applied"


@dataclass
class ApplyReport:
    path: str
    results: List[HunkResult] = field(default_factory=list)

    @property
    def applied_count(self) -> int:
        return sum(1 for r in self.results if r.applied)

    @property
    def rejected_count(self) -> int:
        return sum(1 for r in self.results if not r.applied)

    @property
    def all_applied(self) -> bool:
        return self.rejected_count == 0

    @property
    def offsets(self) -> List[int]:
        return [r.offset for r in self.results if r.applied]

    @property
    def max_fuzz_used(self) -> int:
        return max((r.fuzz for r in self.results if r.applied), default=0)

    def to_dict(self) -> dict:
        return {
            "path": self.path,
            "results": [
                {
                    "index": r.index,
                    "status": r.status,
                    "offset": r.offset,
                    "fuzz": r.fuzz,
                    "reason": r.reason,
                }
                for r in self.results
            ],
        }


def _norm(text: str, normalize_ws: bool) -> str:
    return _TRAILING_WS.sub("", text) if normalize_ws else text


def _trim_for_fuzz(lines: List[HunkLine], fuzz: int) -> Tuple[List[HunkLine], int]:
    """Drop up to `fuzz` context lines from each end of the hunk body.

    Only context may be dropped; change lines always survive.  Returns the
    trimmed body and how many leading context lines went away (the anchor
    position shifts forward by that much).
    """
    if fuzz == 0:
        return lines, 0
    lo = 0
    while lo < len(lines) and lo < fuzz and lines[lo].kind == CONTEXT:
        lo += 1
    hi = len(lines)
    dropped_back = 0
    while hi > lo and dropped_back < fuzz and lines[hi - 1].kind == CONTEXT:
        hi -= 1
        dropped_back += 1
    return lines[lo:hi], lo


def _pattern(lines: List[HunkLine], kinds: Tuple[str, str]) -> List[HunkLine]:
    return [ln for ln in lines if ln.kind in kinds]


def _matches_at(
    buf: List[str],
    buf_final_nl: bool,
    pos: int,
    pattern: List[HunkLine],
    normalize_ws: bool,
) -> bool:
    if pos < 0 or pos + len(pattern) > len(buf):
        return False
    last_idx = len(buf) - 1
    for k, want in enumerate(pattern):
        if _norm(buf[pos + k], normalize_ws) != _norm(want.text, normalize_ws):
            return False
        # the no-newline property must agree: a pattern line flagged as
        # unterminated matches only the file's unterminated last line
        line_has_nl = not (pos + k == last_idx and not buf_final_nl)
        if line_has_nl != want.newline:
            return False
    return True


def _candidate_positions(center: int, window: int, floor: int, ceil: int):
    """Yield (position, offset) pairs: 0, +1, -1, +2, -2, ... within bounds."""
    if floor <= center <= ceil:
        yield center, 0
    for d in range(1, window + 1):
        up = center + d
        down = center - d
        if up > ceil and down < floor:
            return
        if up <= ceil:
            yield up, d
        if down >= floor:
            yield down, -d


def apply_file_patch(
    content: str,
    fp: FilePatch,
    max_fuzz: int = 0,
    search_window: int = 200,
    normalize_trailing_whitespace: bool = False,
) -> Tuple[str, ApplyReport]:
    """Apply one FilePatch to file content, hunk by hunk.

    A hunk that cannot be anchored is recorded as rejected in the report
    and skipped; the remaining hunks still apply.  Binary patches are
    refused outright.
    """
    if fp.is_binary:
        raise HunkRejected(f"{fp.path}: binary files cannot be patched textually")
    if not 0 <= max_fuzz <= 2:
        raise ValueError("max_fuzz must be 0, 1 or 2")
    if search_window < 0:
        raise ValueError("search_window must be >= 0")

    buf, final_nl = split_lines(content)
    report = ApplyReport(path=fp.path)
    delta = 0  # net line drift caused by already-applied hunks
    floor = 0  # first buffer index not owned by a previous hunk

    for idx, hunk in enumerate(fp.hunks):
        # expected 0-based index of the first old-side line; a pure
        # insertion anchors after line old_start, matching patch(1)
        base = hunk.old_start - 1 if hunk.old_len else hunk.old_start
        expected = base + delta

        placed: Optional[Tuple[int, int, int, List[HunkLine]]] = None
        ambiguous = False
        for fuzz in range(0, max_fuzz + 1):
            body, shift = _trim_for_fuzz(hunk.lines, fuzz)
            old_pat = _pattern(body, (CONTEXT, REMOVE))
            if not old_pat:
                # nothing to anchor on: a contextless insertion goes exactly
                # where the header says, clamped into the legal region
                pos = min(max(expected + shift, floor), len(buf))
                placed = (pos, 0, fuzz, body)
                break
            ceil = len(buf) - len(old_pat)
            hits: List[Tuple[int, int]] = []
            for pos, off in _candidate_positions(expected + shift, search_window, floor, ceil):
                if _matches_at(buf, final_nl, pos, old_pat, normalize_trailing_whitespace):
                    if hits:
                        if abs(hits[0][1]) == abs(off):
                            hits.append((pos, off))
                        # a farther second match never beats the first
                        break
                    hits.append((pos, off))
                    if off <= 0:
                        # the mirror candidate (+|off|) was already visited,
                        # so no equal-distance tie can follow
                        break
            if len(hits) > 1:
                ambiguous = True
                break
            if hits:
                pos, off = hits[0]
                placed = (pos, off, fuzz, body)
                break

        if ambiguous:
            report.results.append(HunkResult(idx, "rejected", reason=REJECT_AMBIGUOUS))
            continue
        if placed is None:
            report.results.append(HunkResult(idx, "rejected", reason=REJECT_NO_ANCHOR))
            continue

        pos, off, fuzz, body = placed
        old_pat = _pattern(body, (CONTEXT, REMOVE))
        new_pat = _pattern(body, (CONTEXT, ADD))
        tail_replaced = pos + len(old_pat) >= len(buf)
        buf[pos : pos + len(old_pat)] = [ln.text for ln in new_pat]
        if tail_replaced and new_pat:
            # the hunk now owns the end of the file; its new side decides
            # whether the file keeps a trailing newline
            final_nl = new_pat[-1].newline
        delta += len(new_pat) - len(old_pat)
        floor = pos + len(new_pat)
        report.results.append(HunkResult(idx, "applied", offset=off, fuzz=fuzz))

    return join_lines(buf, final_nl), report


def apply_source_patch(
    read_file,
    patch: SourcePatch,
    max_fuzz: int = 0,
    search_window: int = 200,
    normalize_trailing_whitespace: bool = False,
) -> dict:
    """Apply every FilePatch via a `read_file(path) -> str` callable.

    Returns {path: (new_content, ApplyReport)} without writing anything;
    all-or-nothing semantics belong to the caller.
    """
    out = {}
    for fp in patch.files:
        content = "" if fp.mode_change == "created" else read_file(fp.path)
        out[fp.path] = apply_file_patch(
            content,
            fp,
            max_fuzz=max_fuzz,
            search_window=search_window,
            normalize_trailing_whitespace=normalize_trailing_whitespace,
        )
    return out
