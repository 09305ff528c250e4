"""Build a worktree, run a proof-of-concept input, classify the outcome.

The oracle answers one question: does this tree, built this way and fed
this input, still exhibit the vulnerability's detector signal?  Answers
are five-valued (Triggered, NotTriggered, BuildFailed, PocIncompatible,
Hang) plus SandboxFailure for environment trouble, and are cached by
content hash so repeated probes of identical trees are free.
"""

from __future__ import annotations

import hashlib
import json
import os
import re
import resource
import shlex
import shutil
import signal
import subprocess
import tempfile
import time
from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import Dict, List, Optional, Tuple

SANITIZER_ASAN = "AddressSanitizer"
SANITIZER_VALGRIND = "Valgrind"
SANITIZER_NONE = "None"

KIND_TRIGGERED = "Triggered"
KIND_NOT_TRIGGERED = "NotTriggered"
KIND_BUILD_FAILED = "BuildFailed"
KIND_POC_INCOMPATIBLE = "PocIncompatible"
KIND_HANG = "Hang"
KIND_SANDBOX_FAILURE = "SandboxFailure"

HANG_TRIGGER_CLASS = "memory-exhaustion-by-hang"

# a PoC that dies this fast without a detector hit never consumed its input
LAUNCH_FAILURE_WINDOW = 0.1  # seconds
USAGE_EXIT_CODES = (64, 2)

DEFAULT_LOG_TAIL = 4096
DEFAULT_EXCERPT_LINES = 30


class OracleError(Exception):
    pass


@dataclass(frozen=True)
class BuildRecipe:
    steps: Tuple[str, ...]
    artifact_paths: Tuple[str, ...]
    env: Tuple[Tuple[str, str], ...] = ()
    sanitizer: str = SANITIZER_NONE
    timeout: int = 1200  # whole-build budget, seconds

    @staticmethod
    def make(steps, artifact_paths, env=None, sanitizer=SANITIZER_NONE, timeout=1200):
        return BuildRecipe(
            steps=tuple(steps),
            artifact_paths=tuple(artifact_paths),
            env=tuple(sorted((env or {}).items())),
            sanitizer=sanitizer,
            timeout=timeout,
        )

    def stable_hash(self) -> str:
        return _sha(json.dumps(asdict(self), sort_keys=True).encode())


@dataclass(frozen=True)
class PocSpec:
    command: str  # template with {binary} and {input} placeholders
    input_file: str
    expected_detector: str = ""  # empty means any detector hit counts
    run_timeout: float = 30.0
    hang_is_trigger: bool = False

    def stable_hash(self) -> str:
        return _sha(json.dumps(asdict(self), sort_keys=True).encode())


@dataclass
class BuildOutcome:
    ok: bool
    artifacts: List[str] = field(default_factory=list)
    log_excerpt: str = ""


@dataclass
class OracleVerdict:
    kind: str
    detector_class: str = ""
    evidence: str = ""
    wall_time: float = 0.0

    @property
    def triggered(self) -> bool:
        return self.kind == KIND_TRIGGERED

    def to_dict(self) -> dict:
        # wall_time is deliberately absent: serialized verdicts must be
        # byte-identical across reruns of the same inputs
        return {
            "kind": self.kind,
            "detector_class": self.detector_class,
            "evidence": self.evidence,
        }

    @staticmethod
    def from_dict(d: dict) -> "OracleVerdict":
        return OracleVerdict(
            kind=d["kind"],
            detector_class=d.get("detector_class", ""),
            evidence=d.get("evidence", ""),
        )


@dataclass(frozen=True)
class DetectorHit:
    weakness_class: str
    excerpt: str


def _sha(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


# ---------- detector grammars ----------

RE_ASAN = re.compile(r"ERROR: AddressSanitizer:?\s+([A-Za-z0-9_-]+)")
RE_ASAN_END = re.compile(r"==\d+==ABORTING|SUMMARY: AddressSanitizer")
RE_VALGRIND_INVALID = re.compile(r"==\d+==\s+Invalid (read|write) of size \d+")
RE_VALGRIND_SIGNAL = re.compile(
    r"==\d+==\s+Process terminating with default action of signal \d+ \(SIG([A-Z]+)\)"
)


def _excerpt(lines: List[str], start: int, stop_re: Optional[re.Pattern] = None) -> str:
    end = min(len(lines), start + DEFAULT_EXCERPT_LINES)
    if stop_re is not None:
        for k in range(start, end):
            if stop_re.search(lines[k]):
                end = k + 1
                break
    return "\n".join(lines[start:end])


def classify_detector_output(text: str) -> Optional[DetectorHit]:
    """Recognize a sanitizer or Valgrind error report in program output.

    Returns the weakness class and a bounded excerpt, or None if no
    recognizable report is present.  Clean runs, usage chatter, and
    ordinary test output all yield None.
    """
    lines = text.split("\n")
    for i, line in enumerate(lines):
        m = RE_ASAN.search(line)
        if m is not None:
            return DetectorHit(m.group(1), _excerpt(lines, i, RE_ASAN_END))
        m = RE_VALGRIND_INVALID.search(line)
        if m is not None:
            return DetectorHit(f"invalid-{m.group(1)}", _excerpt(lines, i))
        m = RE_VALGRIND_SIGNAL.search(line)
        if m is not None:
            return DetectorHit(m.group(1), _excerpt(lines, i))
    return None


# ---------- process running ----------


def _set_limits():
    # no core dumps, bounded output files; address space is left alone
    # because sanitizer runtimes reserve huge shadow mappings
    resource.setrlimit(resource.RLIMIT_CORE, (0, 0))
    resource.setrlimit(resource.RLIMIT_FSIZE, (1 << 30, 1 << 30))


@dataclass
class RunResult:
    returncode: int
    output: str
    wall_time: float
    timed_out: bool
    spawn_error: str = ""


def run_limited(
    argv: List[str],
    cwd: Path,
    env: Dict[str, str],
    timeout: float,
    counters: Optional[Dict[str, int]] = None,
) -> RunResult:
    """Run a command with a wall-clock budget in its own process group."""
    if counters is not None:
        counters["subprocess_launches"] = counters.get("subprocess_launches", 0) + 1
    t0 = time.monotonic()
    try:
        proc = subprocess.Popen(
            argv,
            cwd=str(cwd),
            env=env,
            stdout=subprocess.PIPE,
            stderr=subprocess.STDOUT,
            start_new_session=True,
            preexec_fn=_set_limits,
        )
    except OSError as exc:
        return RunResult(-1, "", time.monotonic() - t0, False, spawn_error=str(exc))
    try:
        out, _ = proc.communicate(timeout=timeout)
        timed_out = False
    except subprocess.TimeoutExpired:
        try:
            os.killpg(proc.pid, signal.SIGKILL)
        except ProcessLookupError:
            pass
        out, _ = proc.communicate()
        timed_out = True
    wall = time.monotonic() - t0
    text = out.decode("utf-8", errors="replace") if out else ""
    return RunResult(proc.returncode, text, wall, timed_out)


def _merged_env(extra: Tuple[Tuple[str, str], ...]) -> Dict[str, str]:
    env = dict(os.environ)
    env.update(dict(extra))
    # make sanitizer reports land on stdout/stderr, never in log files
    env.setdefault("ASAN_OPTIONS", "log_path=stderr:abort_on_error=0")
    return env


def build(
    workdir: Path,
    recipe: BuildRecipe,
    counters: Optional[Dict[str, int]] = None,
) -> BuildOutcome:
    """Run the recipe's steps in order inside `workdir`.

    Ok iff every step exits zero within the shared budget and every
    declared artifact exists afterwards.
    """
    workdir = Path(workdir)
    env = _merged_env(recipe.env)
    deadline = time.monotonic() + recipe.timeout
    log_parts: List[str] = []
    if counters is not None:
        counters["builds"] = counters.get("builds", 0) + 1
    for step in recipe.steps:
        budget = deadline - time.monotonic()
        if budget <= 0:
            log_parts.append("BUILD TIMEOUT: budget exhausted before step ran")
            return BuildOutcome(False, [], _tail("\n".join(log_parts)))
        res = run_limited(
            ["sh", "-c", step], cwd=workdir, env=env, timeout=budget, counters=counters
        )
        log_parts.append(f"$ {step}\n{res.output}")
        if res.spawn_error:
            log_parts.append(f"SPAWN FAILURE: {res.spawn_error}")
            return BuildOutcome(False, [], _tail("\n".join(log_parts)))
        if res.timed_out:
            log_parts.append(f"BUILD TIMEOUT after {res.wall_time:.1f}s in: {step}")
            return BuildOutcome(False, [], _tail("\n".join(log_parts)))
        if res.returncode != 0:
            log_parts.append(f"step failed with exit {res.returncode}")
            return BuildOutcome(False, [], _tail("\n".join(log_parts)))
    artifacts = []
    for rel in recipe.artifact_paths:
        p = workdir / rel
        if not p.exists():
            log_parts.append(f"MISSING ARTIFACT: {rel}")
            return BuildOutcome(False, [], _tail("\n".join(log_parts)))
        artifacts.append(str(p))
    return BuildOutcome(True, artifacts, _tail("\n".join(log_parts)))


def _tail(text: str, limit: int = DEFAULT_LOG_TAIL) -> str:
    return text[-limit:] if len(text) > limit else text


_USAGE_PATTERNS = (
    re.compile(r"(?im)^\s*usage:"),
    re.compile(r"(?i)\b(invalid|unknown|unrecognized|illegal) option\b"),
    re.compile(r"(?i)\bmissing (required )?(argument|operand)\b"),
)


def looks_like_usage_error(text: str) -> bool:
    return any(p.search(text) for p in _USAGE_PATTERNS)


def run_poc(
    artifacts: List[str],
    poc: PocSpec,
    cwd: Path,
    env: Optional[Dict[str, str]] = None,
    sanitizer: str = SANITIZER_NONE,
    counters: Optional[Dict[str, int]] = None,
) -> OracleVerdict:
    """Execute the PoC command against the built artifacts and classify.

    Precedence: a detector report always wins; then timeout handling; then
    the launch-incompatibility heuristics; anything else is NotTriggered.
    """
    if counters is not None:
        counters["poc_runs"] = counters.get("poc_runs", 0) + 1
    binary = artifacts[0] if artifacts else ""
    if not binary or not Path(binary).exists():
        return OracleVerdict(
            KIND_POC_INCOMPATIBLE,
            evidence=f"missing binary: {binary or '(no artifact)'}",
        )
    command = poc.command.format(binary=binary, input=poc.input_file)
    argv = shlex.split(command)
    if sanitizer == SANITIZER_VALGRIND:
        argv = ["valgrind", "-q", "--error-exitcode=96"] + argv
    run_env = dict(os.environ)
    if env:
        run_env.update(env)
    res = run_limited(
        argv, cwd=cwd, env=run_env, timeout=poc.run_timeout, counters=counters
    )
    if res.spawn_error:
        return OracleVerdict(KIND_SANDBOX_FAILURE, evidence=res.spawn_error)

    hit = classify_detector_output(res.output)
    if hit is not None:
        if poc.expected_detector and hit.weakness_class != poc.expected_detector:
            return OracleVerdict(
                KIND_NOT_TRIGGERED,
                detector_class=hit.weakness_class,
                evidence=hit.excerpt,
                wall_time=res.wall_time,
            )
        return OracleVerdict(
            KIND_TRIGGERED,
            detector_class=hit.weakness_class,
            evidence=hit.excerpt,
            wall_time=res.wall_time,
        )
    if res.timed_out:
        if poc.hang_is_trigger:
            return OracleVerdict(
                KIND_TRIGGERED,
                detector_class=HANG_TRIGGER_CLASS,
                evidence=f"no exit within {poc.run_timeout:.0f}s",
                wall_time=res.wall_time,
            )
        return OracleVerdict(
            KIND_HANG,
            evidence=f"no exit within {poc.run_timeout:.0f}s",
            wall_time=res.wall_time,
        )
    if looks_like_usage_error(res.output) or (
        res.returncode in USAGE_EXIT_CODES and res.wall_time < LAUNCH_FAILURE_WINDOW
    ):
        return OracleVerdict(
            KIND_POC_INCOMPATIBLE,
            evidence=_tail(res.output, 1024) or f"exit {res.returncode} at launch",
            wall_time=res.wall_time,
        )
    return OracleVerdict(
        KIND_NOT_TRIGGERED,
        evidence=_tail(res.output, 1024),
        wall_time=res.wall_time,
    )


# ---------- content-addressed verdict cache ----------


def tree_hash(root: Path) -> str:
    """Order-independent content hash of a directory tree, skipping .git."""
    root = Path(root)
    h = hashlib.sha256()
    for path in sorted(root.rglob("*")):
        rel = path.relative_to(root)
        if ".git" in rel.parts or rel.name == ".git":
            continue
        if path.is_symlink() or not path.is_file():
            continue
        h.update(str(rel).encode())
        h.update(b"\x00")
        h.update(path.read_bytes())
        h.update(b"\x01")
    return h.hexdigest()


class Oracle:
    """Verdict runner with a content-hash cache and call counters.

    A verdict never mutates the worktree it is given: the build and the
    PoC run happen in a disposable copy.
    """

    def __init__(self, scratch_dir: Optional[Path] = None):
        self.cache: Dict[Tuple[str, str, str], OracleVerdict] = {}
        self.counters: Dict[str, int] = {}
        self.scratch_dir = Path(scratch_dir) if scratch_dir else None
        if self.scratch_dir:
            self.scratch_dir.mkdir(parents=True, exist_ok=True)

    def verdict(self, worktree_path: Path, recipe: BuildRecipe, poc: PocSpec) -> OracleVerdict:
        worktree_path = Path(worktree_path)
        key = (tree_hash(worktree_path), recipe.stable_hash(), poc.stable_hash())
        cached = self.cache.get(key)
        if cached is not None:
            self.counters["cache_hits"] = self.counters.get("cache_hits", 0) + 1
            return cached
        self.counters["verdicts"] = self.counters.get("verdicts", 0) + 1
        tmp = tempfile.mkdtemp(
            prefix="oracle-", dir=str(self.scratch_dir) if self.scratch_dir else None
        )
        try:
            stage = Path(tmp) / "tree"
            shutil.copytree(
                worktree_path,
                stage,
                ignore=shutil.ignore_patterns(".git"),
                symlinks=True,
            )
            outcome = build(stage, recipe, counters=self.counters)
            if not outcome.ok:
                verdict = OracleVerdict(KIND_BUILD_FAILED, evidence=outcome.log_excerpt)
            else:
                verdict = run_poc(
                    outcome.artifacts,
                    poc,
                    cwd=stage,
                    sanitizer=recipe.sanitizer,
                    counters=self.counters,
                )
        finally:
            shutil.rmtree(tmp, ignore_errors=True)
        self.cache[key] = verdict
        return verdict
