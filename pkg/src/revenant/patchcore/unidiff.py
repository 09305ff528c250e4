"""Parser and renderer for the unified diff wire format.

The accepted grammar is what `git diff` and `diff -u` emit: `---`/`+++`
headers (with optional a/ b/ prefixes and timestamp suffixes), `@@` hunk
headers, and body lines tagged with space, `-`, `+` or the no-newline
marker.  Git decoration lines (index, mode, similarity, `diff --git`) are
skipped.  Rendering is the inverse minus decoration: parse(render(p))
gives back a structurally equal patch.
"""

from __future__ import annotations

import re
from typing import List, Optional

from .model import (
    ADD,
    CONTEXT,
    REMOVE,
    FilePatch,
    Hunk,
    HunkCountMismatch,
    HunkLine,
    MalformedHeader,
    MODE_CREATED,
    MODE_DELETED,
    MODE_NONE,
    SourcePatch,
    TruncatedHunk,
    _SIGIL_TO_KIND,
)

RE_HUNK = re.compile(
    r"^@@ -(?P<o_start>\d+)(?:,(?P<o_len>\d+))?"
    r" \+(?P<n_start>\d+)(?:,(?P<n_len>\d+))? @@(?: (?P<note>.*))?$"
)
RE_BINARY = re.compile(r"^Binary files (?P<old>.+) and (?P<new>.+) differ$")
NO_NEWLINE_MARKER = "\\ No newline at end of file"

# git decoration that carries no hunk content
_SKIP_PREFIXES = (
    "diff --git ",
    "diff -u ",
    "diff --unified",
    "index ",
    "new file mode",
    "deleted file mode",
    "old mode",
    "new mode",
    "similarity index",
    "dissimilarity index",
    "rename from",
    "rename to",
    "copy from",
    "copy to",
    "GIT binary patch",
)

DEV_NULL = "/dev/null"


def _clean_path(raw: str) -> str:
    # strip "a/" or "b/" prefixes and any "\t<timestamp>" suffix
    path = raw.split("\t", 1)[0].strip()
    if path.startswith(("a/", "b/")):
        path = path[2:]
    return path


def parse_unified_diff(text: str, provenance: str = "") -> SourcePatch:
    """Parse one or many file diffs out of `text`.

    Raises MalformedHeader, HunkCountMismatch or TruncatedHunk on bad input.
    """
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()

    files: List[FilePatch] = []
    current: Optional[FilePatch] = None
    pending_old: Optional[str] = None

    i = 0
    n = len(lines)
    while i < n:
        line = lines[i]

        m = RE_BINARY.match(line)
        if m is not None:
            old = _clean_path(m.group("old"))
            new = _clean_path(m.group("new"))
            mode = MODE_NONE
            if old == DEV_NULL:
                mode, old = MODE_CREATED, new
            elif new == DEV_NULL:
                mode, new = MODE_DELETED, old
            files.append(FilePatch(old, new, [], mode_change=mode, is_binary=True))
            current = None
            pending_old = None
            i += 1
            continue

        if line.startswith("--- "):
            pending_old = _clean_path(line[4:])
            current = None
            i += 1
            continue

        if line.startswith("+++ "):
            if pending_old is None:
                raise MalformedHeader(f"'+++' without preceding '---' at line {i + 1}")
            new = _clean_path(line[4:])
            old = pending_old
            mode = MODE_NONE
            if old == DEV_NULL and new == DEV_NULL:
                raise MalformedHeader("both sides are /dev/null")
            if old == DEV_NULL:
                mode, old = MODE_CREATED, new
            elif new == DEV_NULL:
                mode, new = MODE_DELETED, old
            current = FilePatch(old, new, [], mode_change=mode)
            files.append(current)
            pending_old = None
            i += 1
            continue

        if line.startswith("@@"):
            m = RE_HUNK.match(line)
            if m is None:
                raise MalformedHeader(f"bad hunk header at line {i + 1}: {line!r}")
            if current is None:
                raise MalformedHeader(f"hunk without file header at line {i + 1}")
            hunk = Hunk(
                old_start=int(m.group("o_start")),
                old_len=int(m.group("o_len")) if m.group("o_len") is not None else 1,
                new_start=int(m.group("n_start")),
                new_len=int(m.group("n_len")) if m.group("n_len") is not None else 1,
            )
            i += 1
            need_old, need_new = hunk.old_len, hunk.new_len
            got_old = got_new = 0
            while got_old < need_old or got_new < need_new:
                if i >= n:
                    raise TruncatedHunk(
                        f"input ends inside hunk starting at old line {hunk.old_start}"
                    )
                body = lines[i]
                if body == NO_NEWLINE_MARKER:
                    if not hunk.lines:
                        raise MalformedHeader("no-newline marker before any hunk line")
                    last = hunk.lines[-1]
                    hunk.lines[-1] = HunkLine(last.kind, last.text, newline=False)
                    i += 1
                    continue
                # tolerate context lines whose single leading space was
                # stripped in transit
                sigil, text = (body[0], body[1:]) if body else (" ", "")
                kind = _SIGIL_TO_KIND.get(sigil)
                if kind is None:
                    raise TruncatedHunk(
                        f"unexpected line inside hunk at line {i + 1}: {body!r}"
                    )
                hunk.lines.append(HunkLine(kind, text))
                if kind in (CONTEXT, REMOVE):
                    got_old += 1
                if kind in (CONTEXT, ADD):
                    got_new += 1
                i += 1
            # a trailing no-newline marker belongs to the last hunk line
            if i < n and lines[i] == NO_NEWLINE_MARKER:
                last = hunk.lines[-1]
                hunk.lines[-1] = HunkLine(last.kind, last.text, newline=False)
                i += 1
            # body lines past the declared counts mean the header lied
            if i < n:
                extra = lines[i]
                looks_like_body = extra.startswith("+") or (
                    extra.startswith("-") and not extra.startswith("--- ")
                ) or (extra.startswith(" ") and not extra.strip() == "")
                if looks_like_body:
                    raise HunkCountMismatch(
                        f"hunk body continues past declared counts at line {i + 1}"
                    )
            hunk.validate()
            current.hunks.append(hunk)
            continue

        if line == "" or line.startswith(_SKIP_PREFIXES) or line.startswith("\\"):
            i += 1
            continue
        # unrecognized prose between file sections is tolerated (mail
        # headers, commit messages); anything else inside a file section
        # would have been consumed by the hunk loop above
        i += 1

    patch = SourcePatch(files=files, provenance=provenance)
    patch.validate()
    return patch


def _fmt_range(start: int, length: int) -> str:
    return f"{start}" if length == 1 else f"{start},{length}"


def render_unified_diff(patch: SourcePatch) -> str:
    """Serialize back to the wire format (no git decoration lines)."""
    out: List[str] = []
    for fp in patch.files:
        if fp.is_binary:
            old = DEV_NULL if fp.mode_change == MODE_CREATED else f"a/{fp.old_path}"
            new = DEV_NULL if fp.mode_change == MODE_DELETED else f"b/{fp.new_path}"
            out.append(f"Binary files {old} and {new} differ")
            continue
        old = DEV_NULL if fp.mode_change == MODE_CREATED else f"a/{fp.old_path}"
        new = DEV_NULL if fp.mode_change == MODE_DELETED else f"b/{fp.new_path}"
        out.append(f"--- {old}")
        out.append(f"+++ {new}")
        for h in fp.hunks:
            out.append(
                f"@@ -{_fmt_range(h.old_start, h.old_len)} "
                f"+{_fmt_range(h.new_start, h.new_len)} @@"
            )
            for ln in h.lines:
                out.append(ln.sigil() + ln.text)
                if not ln.newline:
                    out.append(NO_NEWLINE_MARKER)
    if not out:
        return ""
    return "\n".join(out) + "\n"
