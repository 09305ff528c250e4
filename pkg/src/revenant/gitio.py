"""Thin porcelain over a local git checkout.

Everything here shells out to git; no repository state is cached between
calls.  File contents travel as str with surrogateescape so arbitrary
bytes survive the Python layer unchanged.
"""

from __future__ import annotations

import os
import subprocess
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

from .patchcore import (
    ApplyReport,
    MODE_CREATED,
    MODE_DELETED,
    SourcePatch,
    apply_file_patch,
    invert,
    parse_unified_diff,
)

ENCODING = "utf-8"
ERRORS = "surrogateescape"


class GitGatewayError(Exception):
    pass


class UnknownRef(GitGatewayError):
    pass


class ShallowHistory(GitGatewayError):
    pass


class NotAncestor(GitGatewayError):
    pass


class DirtyDestination(GitGatewayError):
    pass


class RootCommit(GitGatewayError):
    pass


class RevertConflict(GitGatewayError):
    def __init__(self, message: str, reports: Optional[List[ApplyReport]] = None):
        super().__init__(message)
        self.reports = reports or []


def read_file(path: Path) -> str:
    return path.read_text(encoding=ENCODING, errors=ERRORS)


def write_file(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding=ENCODING, errors=ERRORS)


def run_git(repo: Path, *args: str, check: bool = True) -> subprocess.CompletedProcess:
    proc = subprocess.run(
        ["git", "-C", str(repo), *args],
        capture_output=True,
        text=True,
        encoding=ENCODING,
        errors=ERRORS,
    )
    if check and proc.returncode != 0:
        raise GitGatewayError(
            f"git {' '.join(args)} failed ({proc.returncode}): {proc.stderr.strip()}"
        )
    return proc


@dataclass(frozen=True)
class CommitRef:
    id: str
    short_id: str
    timestamp: int  # committer date, UTC epoch seconds
    author_timestamp: int  # author date, for histogram consumers that want it
    parents: Tuple[str, ...]
    touched_files: Tuple[str, ...]

    def __str__(self) -> str:
        return self.short_id


@dataclass
class CommitRange:
    base: CommitRef
    tip: CommitRef
    ordered: List[CommitRef] = field(default_factory=list)  # (base, tip], oldest first

    def __len__(self) -> int:
        return len(self.ordered)


@dataclass
class Worktree:
    repo: Path
    commit: str
    path: Path

    def read(self, relpath: str) -> str:
        return read_file(self.path / relpath)

    def write(self, relpath: str, text: str) -> None:
        write_file(self.path / relpath, text)

    def exists(self, relpath: str) -> bool:
        return (self.path / relpath).is_file()

    def remove(self) -> None:
        run_git(self.repo, "worktree", "remove", "--force", str(self.path), check=False)
        run_git(self.repo, "worktree", "prune", check=False)

    def __enter__(self) -> "Worktree":
        return self

    def __exit__(self, *exc) -> None:
        self.remove()


def _touched_files(repo: Path, commit_id: str, parents: Sequence[str]) -> Tuple[str, ...]:
    if parents:
        proc = run_git(
            repo, "diff", "--name-only", "--no-renames", parents[0], commit_id
        )
    else:
        proc = run_git(
            repo, "diff-tree", "--root", "--no-commit-id", "--name-only", "-r",
            commit_id,
        )
    return tuple(ln for ln in proc.stdout.split("\n") if ln)


def _commit_ref(repo: Path, commit_id: str) -> CommitRef:
    proc = run_git(repo, "show", "-s", "--format=%H%x00%h%x00%ct%x00%at%x00%P", commit_id)
    full, short, ct, at, parents_raw = proc.stdout.strip("\n").split("\x00")
    parents = tuple(parents_raw.split()) if parents_raw else ()
    return CommitRef(
        id=full,
        short_id=short,
        timestamp=int(ct),
        author_timestamp=int(at),
        parents=parents,
        touched_files=_touched_files(repo, full, parents),
    )


def resolve_ref(repo: Path, name: str) -> CommitRef:
    """Resolve a branch, tag or abbreviated id to a CommitRef.

    Tags are peeled to the commit they point at.  Shallow clones are
    refused because every range operation here assumes full history.
    """
    repo = Path(repo)
    shallow = run_git(repo, "rev-parse", "--is-shallow-repository")
    if shallow.stdout.strip() == "true":
        raise ShallowHistory(f"{repo} is a shallow clone; fetch full history first")
    proc = run_git(repo, "rev-parse", "--verify", "--quiet", f"{name}^{{commit}}", check=False)
    if proc.returncode != 0:
        raise UnknownRef(f"{name!r} does not name a commit in {repo}")
    return _commit_ref(repo, proc.stdout.strip())


def commits_between(repo: Path, base: str, tip: str) -> CommitRange:
    """First-parent path (base, tip], oldest first."""
    repo = Path(repo)
    base_ref = resolve_ref(repo, base)
    tip_ref = resolve_ref(repo, tip)
    anc = run_git(repo, "merge-base", "--is-ancestor", base_ref.id, tip_ref.id, check=False)
    if anc.returncode != 0:
        raise NotAncestor(f"{base} is not a first-parent ancestor of {tip}")

    proc = run_git(
        repo,
        "log",
        "--first-parent",
        "--reverse",
        "--name-only",
        "--no-renames",
        "--format=%x01%H%x00%h%x00%ct%x00%at%x00%P",
        f"{base_ref.id}..{tip_ref.id}",
    )
    ordered: List[CommitRef] = []
    for block in proc.stdout.split("\x01"):
        if not block.strip():
            continue
        head, _, names_blob = block.partition("\n")
        full, short, ct, at, parents_raw = head.split("\x00")
        names = tuple(ln for ln in names_blob.split("\n") if ln)
        ordered.append(
            CommitRef(
                id=full,
                short_id=short,
                timestamp=int(ct),
                author_timestamp=int(at),
                parents=tuple(parents_raw.split()) if parents_raw else (),
                touched_files=names,
            )
        )
    # guard against the base slipping in (it cannot, with A..B) and make
    # sure the walk ends at the tip we resolved
    if ordered and ordered[-1].id != tip_ref.id:
        raise GitGatewayError("first-parent walk did not end at the tip")
    return CommitRange(base=base_ref, tip=tip_ref, ordered=ordered)


def checkout_worktree(repo: Path, commit: str, dest: Path) -> Worktree:
    """Materialize `commit` in a detached worktree at `dest`.

    Multiple worktrees of the same repository may coexist.
    """
    repo = Path(repo)
    dest = Path(dest)
    if dest.exists() and any(dest.iterdir()):
        raise DirtyDestination(f"{dest} exists and is not empty")
    ref = resolve_ref(repo, commit)
    if dest.exists():
        dest.rmdir()  # `git worktree add` wants to create it
    run_git(repo, "worktree", "add", "--detach", str(dest), ref.id)
    return Worktree(repo=repo, commit=ref.id, path=dest)


def commit_diff(repo: Path, commit: str, context: int = 3) -> SourcePatch:
    """The commit's diff against its first parent, as a SourcePatch."""
    repo = Path(repo)
    ref = resolve_ref(repo, commit)
    if not ref.parents:
        raise RootCommit(f"{ref.short_id} has no parent to diff against")
    proc = run_git(
        repo,
        "diff",
        "--no-color",
        "--no-renames",
        f"-U{context}",
        ref.parents[0],
        ref.id,
    )
    return parse_unified_diff(proc.stdout, provenance=f"commit:{ref.id}")


def revert_onto(
    worktree: Worktree,
    commit: str,
    max_fuzz: int = 0,
    search_window: int = 200,
    normalize_trailing_whitespace: bool = False,
) -> List[ApplyReport]:
    """Apply the inverse of `commit`'s diff to the worktree, atomically.

    Either every hunk of every touched file applies and the files are
    written, or RevertConflict is raised and nothing changes.  Files the
    commit touched that are absent from the worktree are skipped with an
    empty report (filtered checkouts are legitimate).
    """
    inverse = invert(commit_diff(worktree.repo, commit))
    staged: List[Tuple[str, Optional[str]]] = []  # (path, new_content or None=delete)
    reports: List[ApplyReport] = []
    failures: List[ApplyReport] = []

    for fp in inverse.files:
        target = worktree.path / fp.path
        if fp.is_binary:
            report = ApplyReport(path=fp.path)
            failures.append(report)
            reports.append(report)
            continue
        if fp.mode_change == MODE_CREATED:
            if target.exists():
                report = ApplyReport(path=fp.path)
                failures.append(report)
                reports.append(report)
                continue
            content = ""
        elif not target.is_file():
            # the worktree may be a filtered subset; nothing to do here
            reports.append(ApplyReport(path=fp.path))
            continue
        else:
            content = read_file(target)
        new_content, report = apply_file_patch(
            content,
            fp,
            max_fuzz=max_fuzz,
            search_window=search_window,
            normalize_trailing_whitespace=normalize_trailing_whitespace,
        )
        reports.append(report)
        if not report.all_applied:
            failures.append(report)
            continue
        staged.append((fp.path, None if fp.mode_change == MODE_DELETED else new_content))

    if failures:
        paths = ", ".join(r.path for r in failures)
        raise RevertConflict(f"revert of {commit} conflicts in: {paths}", reports)

    for relpath, content in staged:
        target = worktree.path / relpath
        if content is None:
            if target.exists():
                target.unlink()
        else:
            write_file(target, content)
    return reports


@dataclass
class ActivityHistogram:
    bucket_width_days: int
    start: int  # epoch seconds of the first bucket's left edge
    buckets: List[Tuple[int, int, int]] = field(default_factory=list)
    # each bucket: (bucket_start_epoch, total_commits, cve_related_commits)

    @property
    def total(self) -> int:
        return sum(b[1] for b in self.buckets)

    @property
    def related_total(self) -> int:
        return sum(b[2] for b in self.buckets)


def activity_histogram(
    commit_range: CommitRange,
    tracked_files: Iterable[str],
    bucket_width_days: int = 14,
) -> ActivityHistogram:
    """Bucketed commit counts over the range, by committer timestamp.

    Buckets are anchored at the first in-range commit and cover through the
    tip; out-of-order timestamps (rebases, clock skew) are clamped into the
    edge buckets so every commit is counted exactly once.
    """
    tracked = set(tracked_files)
    width = bucket_width_days * 86400
    ordered = commit_range.ordered
    if not ordered:
        return ActivityHistogram(bucket_width_days=bucket_width_days, start=0, buckets=[])
    start = ordered[0].timestamp
    span_end = max(commit_range.tip.timestamp, max(c.timestamp for c in ordered))
    n_buckets = max((span_end - start) // width + 1, 1)
    totals = [0] * n_buckets
    related = [0] * n_buckets
    for c in ordered:
        idx = (c.timestamp - start) // width
        idx = min(max(idx, 0), n_buckets - 1)
        totals[idx] += 1
        if tracked and any(f in tracked for f in c.touched_files):
            related[idx] += 1
    buckets = [
        (start + i * width, totals[i], related[i]) for i in range(n_buckets)
    ]
    return ActivityHistogram(
        bucket_width_days=bucket_width_days, start=start, buckets=buckets
    )
