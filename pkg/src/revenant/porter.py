"""Reverse-porting fix commits and reviving their vulnerabilities.

The core loop: derive the inverse of the fix, apply it to a later tree,
and ask the oracle whether the proof of concept triggers again.  When it
does not, binary-search the history for the commit that broke the port
or the PoC, revert it, and try again, within configured budgets.
"""

from __future__ import annotations

import hashlib
import json
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

from .patchcore import (
    Granularity,
    HunkRejected,
    PatchError,
    SourcePatch,
    apply_file_patch,
    invert,
    render_unified_diff,
    split_by_granularity,
)
from .patchcore.model import MODE_CREATED, MODE_DELETED
from .gitio import (
    CommitRef,
    RevertConflict,
    Worktree,
    checkout_worktree,
    commit_diff,
    commits_between,
    read_file,
    resolve_ref,
    revert_onto,
)
from .oracle import (
    KIND_POC_INCOMPATIBLE,
    KIND_SANDBOX_FAILURE,
    KIND_TRIGGERED,
    BuildRecipe,
    Oracle,
    OracleVerdict,
    PocSpec,
)

KIND_PORT_CONFLICT = "PortConflict"
KIND_REVERT_CONFLICT = "RevertConflict"

FINAL_REVIVED = "Revived"
FINAL_ABORTED = "Aborted"

ABORT_COMPLEXITY = "Complexity"
ABORT_TOO_MANY_FILES = "TooManyFiles"
ABORT_TOO_MANY_CHUNKS = "TooManyChunks"
ABORT_FUNCTIONALITY_REMOVED = "FunctionalityRemoved"

PROBE_GOOD = "good"
PROBE_BAD = "bad"
PROBE_SKIP = "skip"


class PortError(Exception):
    pass


class CompositionConflict(PortError):
    pass


class BisectError(Exception):
    pass


class PreconditionViolated(BisectError):
    pass


class SkipBudgetExhausted(BisectError):
    pass


@dataclass(frozen=True)
class Limits:
    max_reverted_commits: int = 4
    max_files_per_commit: int = 14
    max_chunks_per_file: int = 30


@dataclass(frozen=True)
class PortPolicy:
    granularity: Granularity = Granularity.PatchHunks
    max_fuzz: int = 2
    search_window: int = 200
    normalize_trailing_whitespace: bool = False
    skip_budget: int = 3
    check_origin: bool = True


# ---------- reverse patch derivation ----------


def derive_reverse_patch(repo: Path, fix_commits: Sequence[str]) -> SourcePatch:
    """Inverse of the combined fix, ready to re-open the hole.

    A single fix is simply its commit diff inverted.  Several fixes are
    composed by strictly replaying each one onto the state before the
    first; any replay rejection means the fixes are not a clean sequence
    and raises CompositionConflict.
    """
    if not fix_commits:
        raise PortError("at least one fix commit is required")
    if len(fix_commits) == 1:
        return invert(commit_diff(repo, fix_commits[0]))

    diffs = [commit_diff(repo, c) for c in fix_commits]
    first = resolve_ref(repo, fix_commits[0])
    if not first.parents:
        raise PortError(f"fix {first.short_id} has no parent")
    touched = sorted({fp.path for d in diffs for fp in d.files})

    state: Dict[str, Optional[str]] = {}
    with tempfile.TemporaryDirectory(prefix="compose-") as tmp:
        wt = checkout_worktree(repo, first.parents[0], Path(tmp) / "wt")
        with wt:
            for path in touched:
                full = wt.path / path
                state[path] = read_file(full) if full.is_file() else None
    before = dict(state)

    for commit, diff in zip(fix_commits, diffs):
        for fp in diff.files:
            current = state.get(fp.path)
            if fp.mode_change == MODE_CREATED:
                if current is not None:
                    raise CompositionConflict(
                        f"{commit}: creates {fp.path} which already exists"
                    )
                current = ""
            elif current is None:
                raise CompositionConflict(f"{commit}: {fp.path} is missing")
            new_content, report = apply_file_patch(current, fp)
            if not report.all_applied:
                raise CompositionConflict(
                    f"{commit}: does not apply cleanly to {fp.path}"
                )
            state[fp.path] = None if fp.mode_change == MODE_DELETED else new_content

    from .patchcore import diff_trees

    forward = diff_trees(
        {p: t for p, t in before.items() if t is not None},
        {p: t for p, t in state.items() if t is not None},
    )
    forward = SourcePatch(files=forward.files, provenance="fix:" + "..".join(
        (fix_commits[0], fix_commits[-1])
    ))
    return invert(forward)


def patch_digest(patch: SourcePatch) -> str:
    return hashlib.sha256(render_unified_diff(patch).encode()).hexdigest()


# ---------- bisection ----------


@dataclass
class BisectResult:
    commit: str
    calls: int
    skipped: List[str]
    non_monotone: bool


def find_breaking_commit(
    candidates: Sequence,
    probe: Callable[[str], str],
    skip_budget: int = 3,
) -> BisectResult:
    """Earliest candidate where `probe` says "bad", by binary search.

    `candidates` is oldest first and assumed monotone: good commits, then
    bad ones.  The commit before the range is trusted good; nothing in
    the range is trusted, including the newest entry.  A "skip" answer
    removes that candidate from consideration and consumes skip budget.
    Probe calls stay within ceil(log2(n)) + skip_budget + 1.
    """
    ids = [c.id if isinstance(c, CommitRef) else c for c in candidates]
    if not ids:
        raise PreconditionViolated("empty candidate range")
    active = list(range(len(ids)))
    calls = 0
    budget = skip_budget
    skipped: List[str] = []
    max_good = -1
    min_bad: Optional[int] = None

    lo, hi = 0, len(active) - 1
    first_bad_pos: Optional[int] = None
    while lo <= hi:
        mid = (lo + hi) // 2
        idx = active[mid]
        calls += 1
        res = probe(ids[idx])
        if res == PROBE_SKIP:
            skipped.append(ids[idx])
            budget -= 1
            if budget < 0:
                raise SkipBudgetExhausted(
                    f"more than {skip_budget} unprobeable commits in range"
                )
            del active[mid]
            hi -= 1
            if first_bad_pos is not None and first_bad_pos > mid:
                first_bad_pos -= 1
            continue
        if res == PROBE_BAD:
            min_bad = idx if min_bad is None else min(min_bad, idx)
            first_bad_pos = mid
            hi = mid - 1
        elif res == PROBE_GOOD:
            max_good = max(max_good, idx)
            lo = mid + 1
        else:
            raise BisectError(f"probe returned {res!r}")
    if first_bad_pos is None:
        raise PreconditionViolated("no failing commit in range")
    flip = active[first_bad_pos]
    return BisectResult(
        commit=ids[flip],
        calls=calls,
        skipped=skipped,
        non_monotone=(min_bad is not None and max_good > min_bad),
    )


# ---------- attempts ----------


@dataclass
class AttemptResult:
    verdict: OracleVerdict
    files_touched: int = 0
    hunks_applied: int = 0
    regions: List[dict] = field(default_factory=list)


@dataclass
class TierResult:
    tier: str
    ref: str
    status: str  # kebab-case verdict kind
    detector_class: str = ""

    def to_dict(self) -> dict:
        return {
            "tier": self.tier,
            "ref": self.ref,
            "status": self.status,
            "detector_class": self.detector_class,
        }


_KIND_TO_STATUS = {
    KIND_TRIGGERED: "triggered",
    "NotTriggered": "not-triggered",
    "BuildFailed": "build-failed",
    KIND_POC_INCOMPATIBLE: "poc-incompatible",
    "Hang": "hang",
    KIND_SANDBOX_FAILURE: "sandbox-failure",
    KIND_PORT_CONFLICT: "port-conflict",
    KIND_REVERT_CONFLICT: "revert-conflict",
}


def status_of(kind: str) -> str:
    return _KIND_TO_STATUS.get(kind, kind.lower())


# ---------- revival record ----------


@dataclass
class RevivalRecord:
    cve: str
    project: str
    fix_commits: List[str]
    target: str
    granularity: str
    final: str
    abort_reason: str
    aborted_on: str
    revert_stack: List[str]  # newest first
    verdict: dict
    effort: dict
    flags: dict
    touched_regions: List[dict]
    port_digest: str

    def to_dict(self) -> dict:
        return {
            "schema": "revival-record/1",
            "cve": self.cve,
            "project": self.project,
            "fix_commits": list(self.fix_commits),
            "target": self.target,
            "granularity": self.granularity,
            "final": self.final,
            "abort_reason": self.abort_reason,
            "aborted_on": self.aborted_on,
            "revert_stack": list(self.revert_stack),
            "verdict": dict(self.verdict),
            "effort": dict(self.effort),
            "flags": dict(self.flags),
            "touched_regions": [dict(r) for r in self.touched_regions],
            "port_digest": self.port_digest,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"

    @staticmethod
    def from_dict(d: dict) -> "RevivalRecord":
        return RevivalRecord(
            cve=d["cve"],
            project=d["project"],
            fix_commits=list(d["fix_commits"]),
            target=d["target"],
            granularity=d["granularity"],
            final=d["final"],
            abort_reason=d.get("abort_reason", ""),
            aborted_on=d.get("aborted_on", ""),
            revert_stack=list(d["revert_stack"]),
            verdict=dict(d.get("verdict", {})),
            effort=dict(d.get("effort", {})),
            flags=dict(d.get("flags", {})),
            touched_regions=[dict(r) for r in d.get("touched_regions", [])],
            port_digest=d.get("port_digest", ""),
        )

    @staticmethod
    def from_json(text: str) -> "RevivalRecord":
        return RevivalRecord.from_dict(json.loads(text))


# ---------- the porter ----------


class Porter:
    """Holds one project's repo, build recipe and PoC, and runs ports."""

    def __init__(
        self,
        repo: Path,
        recipe: BuildRecipe,
        poc: PocSpec,
        oracle: Optional[Oracle] = None,
        policy: PortPolicy = PortPolicy(),
        limits: Limits = Limits(),
        scratch_dir: Optional[Path] = None,
    ):
        self.repo = Path(repo)
        self.recipe = recipe
        self.poc = poc
        self.policy = policy
        self.limits = limits
        self._scratch = Path(scratch_dir) if scratch_dir else Path(
            tempfile.mkdtemp(prefix="porter-")
        )
        self._scratch.mkdir(parents=True, exist_ok=True)
        self.oracle = oracle or Oracle(scratch_dir=self._scratch / "oracle")
        self._wt_count = 0
        self.attempt_count = 0
        self._reverse_cache: Dict[Tuple[str, ...], SourcePatch] = {}

    # -- plumbing --

    def reverse_patch(self, fix_commits: Sequence[str]) -> SourcePatch:
        key = tuple(fix_commits)
        if key not in self._reverse_cache:
            self._reverse_cache[key] = derive_reverse_patch(self.repo, fix_commits)
        return self._reverse_cache[key]

    def _new_worktree(self, ref: str) -> Worktree:
        self._wt_count += 1
        dest = self._scratch / f"wt-{self._wt_count}"
        return checkout_worktree(self.repo, ref, dest)

    def _apply_reverse(
        self, wt: Worktree, reverse: SourcePatch
    ) -> Tuple[bool, int, int, List[dict]]:
        """Apply the reverse patch at the configured granularity.

        All units of all files must apply; on any rejection nothing is
        written.  Returns (ok, files, hunks, regions).
        """
        pol = self.policy
        try:
            units = split_by_granularity(
                reverse, pol.granularity, worktree=wt.path, read_file=wt.read
            )
        except (HunkRejected, PatchError):
            return False, 0, 0, []

        state: Dict[str, Optional[str]] = {}
        staged: Dict[str, Optional[str]] = {}
        regions: List[dict] = []
        hunks = 0

        def current(path: str) -> Optional[str]:
            if path in state:
                return state[path]
            full = wt.path / path
            state[path] = read_file(full) if full.is_file() else None
            return state[path]

        for unit in units:
            for fp in unit.files:
                if fp.is_binary:
                    return False, 0, 0, []
                text = current(fp.path)
                if fp.mode_change == MODE_CREATED:
                    if text is not None:
                        return False, 0, 0, []
                    text = ""
                elif text is None:
                    return False, 0, 0, []
                new_text, report = apply_file_patch(
                    text,
                    fp,
                    max_fuzz=pol.max_fuzz,
                    search_window=pol.search_window,
                    normalize_trailing_whitespace=pol.normalize_trailing_whitespace,
                )
                if not report.all_applied:
                    return False, 0, 0, []
                hunks += report.applied_count
                for hunk, res in zip(fp.hunks, report.results):
                    start = max(1, hunk.new_start + (res.offset or 0))
                    regions.append(
                        {
                            "file": fp.path,
                            "start": start,
                            "end": start + max(hunk.new_len, 1) - 1,
                        }
                    )
                value = None if fp.mode_change == MODE_DELETED else new_text
                state[fp.path] = value
                staged[fp.path] = value

        for path, value in staged.items():
            if value is None:
                full = wt.path / path
                if full.exists():
                    full.unlink()
            else:
                wt.write(path, value)
        return True, len(staged), hunks, regions

    def _revert_regions(self, breaker: str) -> List[dict]:
        inverse = invert(commit_diff(self.repo, breaker))
        out = []
        for fp in inverse.files:
            for hunk in fp.hunks:
                out.append(
                    {
                        "file": fp.path,
                        "start": max(1, hunk.new_start),
                        "end": max(1, hunk.new_start) + max(hunk.new_len, 1) - 1,
                    }
                )
        return out

    def attempt(
        self, ref: str, reverts_newest_first: Sequence[str], fix_commits: Sequence[str]
    ) -> AttemptResult:
        """Check out `ref`, revert the given commits, reverse-port the fix,
        and get a verdict.  The worktree is disposable; failures at the
        patching stage come back as synthetic verdict kinds."""
        self.attempt_count += 1
        reverse = self.reverse_patch(fix_commits)
        wt = self._new_worktree(ref)
        with wt:
            for breaker in reverts_newest_first:
                try:
                    revert_onto(
                        wt,
                        breaker,
                        max_fuzz=self.policy.max_fuzz,
                        search_window=self.policy.search_window,
                        normalize_trailing_whitespace=self.policy.normalize_trailing_whitespace,
                    )
                except RevertConflict as exc:
                    return AttemptResult(
                        OracleVerdict(KIND_REVERT_CONFLICT, evidence=str(exc))
                    )
            ok, files, hunks, regions = self._apply_reverse(wt, reverse)
            if not ok:
                return AttemptResult(
                    OracleVerdict(
                        KIND_PORT_CONFLICT,
                        evidence=f"reverse patch does not apply at {ref}",
                    )
                )
            for breaker in reverts_newest_first:
                regions = regions + self._revert_regions(breaker)
            verdict = self.oracle.verdict(wt.path, self.recipe, self.poc)
            return AttemptResult(verdict, files, hunks, regions)

    # -- tier evaluation --

    def evaluate_tiers(
        self, fix_commits: Sequence[str], tiers: Dict[str, str]
    ) -> Dict[str, TierResult]:
        """Trivially reverse-port onto each named tier and classify."""
        out: Dict[str, TierResult] = {}
        for tier, ref in tiers.items():
            if not ref:
                continue
            att = self.attempt(ref, (), fix_commits)
            out[tier] = TierResult(
                tier=tier,
                ref=ref,
                status=status_of(att.verdict.kind),
                detector_class=att.verdict.detector_class,
            )
        return out

    # -- revival --

    def revive(
        self,
        cve: str,
        project: str,
        fix_commits: Sequence[str],
        target: str,
    ) -> RevivalRecord:
        """Revive the vulnerability at `target`, reverting breaking
        commits as needed within the configured limits."""
        reverse = self.reverse_patch(fix_commits)
        cands = commits_between(self.repo, fix_commits[-1], target).ordered
        index = {c.id: i for i, c in enumerate(cands)}
        target_id = resolve_ref(self.repo, target).id
        attempts_before = self.attempt_count

        origin_verified = False
        if self.policy.check_origin:
            origin = self.attempt(fix_commits[-1], (), fix_commits)
            if origin.verdict.kind != KIND_TRIGGERED:
                raise PreconditionViolated(
                    f"PoC does not trigger at the fix commit itself "
                    f"(got {origin.verdict.kind}); nothing to revive"
                )
            origin_verified = True

        stack: List[str] = []  # discovery order, oldest breaker first
        rounds: List[dict] = []
        non_monotone = False
        final = ""
        abort_reason = ""
        aborted_on = ""
        last: AttemptResult = AttemptResult(OracleVerdict("Unknown"))

        def applicable(commit_id: str) -> List[str]:
            pos = index[commit_id]
            usable = [b for b in stack if index[b] <= pos]
            return list(reversed(usable))

        def probe(commit_id: str) -> str:
            att = self.attempt(commit_id, applicable(commit_id), fix_commits)
            if att.verdict.kind == KIND_SANDBOX_FAILURE:
                return PROBE_SKIP
            return PROBE_GOOD if att.verdict.kind == KIND_TRIGGERED else PROBE_BAD

        while True:
            last = self.attempt(target_id, list(reversed(stack)), fix_commits)
            if last.verdict.kind == KIND_TRIGGERED:
                final = FINAL_REVIVED
                break
            if len(stack) >= self.limits.max_reverted_commits:
                final = FINAL_ABORTED
                abort_reason = (
                    ABORT_FUNCTIONALITY_REMOVED
                    if last.verdict.kind == KIND_POC_INCOMPATIBLE
                    else ABORT_COMPLEXITY
                )
                break
            lo = index[stack[-1]] + 1 if stack else 0
            window = cands[lo:]
            try:
                res = find_breaking_commit(
                    window, probe, skip_budget=self.policy.skip_budget
                )
            except PreconditionViolated:
                final = FINAL_ABORTED
                abort_reason = (
                    ABORT_FUNCTIONALITY_REMOVED
                    if last.verdict.kind == KIND_POC_INCOMPATIBLE
                    else ABORT_COMPLEXITY
                )
                break
            non_monotone = non_monotone or res.non_monotone
            rounds.append(
                {"breaker": res.commit, "calls": res.calls, "skipped": res.skipped}
            )
            bdiff = commit_diff(self.repo, res.commit)
            if len(bdiff.files) > self.limits.max_files_per_commit:
                final = FINAL_ABORTED
                abort_reason = ABORT_TOO_MANY_FILES
                aborted_on = res.commit
                break
            if any(len(fp.hunks) > self.limits.max_chunks_per_file for fp in bdiff.files):
                final = FINAL_ABORTED
                abort_reason = ABORT_TOO_MANY_CHUNKS
                aborted_on = res.commit
                break
            stack.append(res.commit)

        return RevivalRecord(
            cve=cve,
            project=project,
            fix_commits=[resolve_ref(self.repo, c).id for c in fix_commits],
            target=target_id,
            granularity=self.policy.granularity.value,
            final=final,
            abort_reason=abort_reason,
            aborted_on=aborted_on,
            revert_stack=list(reversed(stack)),
            verdict=last.verdict.to_dict(),
            effort={
                "oracle_calls": self.attempt_count - attempts_before,
                "commits_reverted": len(stack),
                "files_touched": last.files_touched,
                "hunks_applied": last.hunks_applied,
                "bisect_rounds": len(rounds),
            },
            flags={"origin_verified": origin_verified, "non_monotone": non_monotone},
            touched_regions=last.regions if final == FINAL_REVIVED else [],
            port_digest=patch_digest(reverse),
        )
