"""External tool orchestration: synthesis, place-and-route, simulation.

Tools run as subprocesses built from command templates, each invocation in
its own scratch directory. Scratch dirs are kept on failure so the raw logs
can feed repair prompts, and removed on success. A process-group kill plus a
grace period bounds every invocation at timeout_s + 5 s of wall clock.
"""

from __future__ import annotations

import os
import re
import shlex
import shutil
import signal
import subprocess
import tempfile
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path

from . import reports
from .model import (
    CradleError,
    ResourceMetrics,
    VerdictStatus,
    VerificationVerdict,
)
from .reports import StatsUnparseable, UtilizationNotFound  # noqa: F401 (re-export)

LOG_EXCERPT_LINES = 50
KILL_GRACE_S = 5.0


class ToolMissing(CradleError):
    """A tool binary could not be launched."""


class CompileError(CradleError):
    """Synthesis rejected the input (nonzero exit), excerpt attached."""


class Timeout(CradleError):
    """An external invocation exceeded its time budget."""


class PnrFailed(CradleError):
    """Place-and-route exited nonzero."""


class Cancelled(CradleError):
    """A cancel token fired while a tool invocation was pending."""


DEFAULT_SYNTH_CMD = (
    'yosys -q -p "read_verilog {src}; synth_ecp5 -top {top} -json {out}; '
    'tee -o {out}.stats.json stat -json"'
)
DEFAULT_PNR_CMD = "nextpnr-ecp5 --25k --json {src} --textcfg {out}"
DEFAULT_SIM_COMPILE_CMD = "iverilog -g2012 -o {out} {src} {tb}"
DEFAULT_SIM_RUN_CMD = "vvp {out}"

_REQUIRED_PLACEHOLDERS = {
    "synth_cmd": ("{src}", "{top}", "{out}"),
    "pnr_cmd": ("{src}",),
    "sim_compile_cmd": ("{src}", "{tb}", "{out}"),
    "sim_run_cmd": ("{out}",),
}


@dataclass(frozen=True)
class ToolConfig:
    """Command templates and knobs for the external flow."""

    synth_cmd: str = DEFAULT_SYNTH_CMD
    pnr_cmd: str = DEFAULT_PNR_CMD
    sim_compile_cmd: str = DEFAULT_SIM_COMPILE_CMD
    sim_run_cmd: str = DEFAULT_SIM_RUN_CMD
    target: str = "ecp5"
    timeout_s: float = 120.0
    class_map: tuple = reports.DEFAULT_CLASS_MAP

    def __post_init__(self):
        if self.timeout_s <= 0:
            raise ValueError("timeout_s must be > 0")
        for attr, needed in _REQUIRED_PLACEHOLDERS.items():
            template = getattr(self, attr)
            for ph in needed:
                if ph not in template:
                    raise ValueError(f"{attr} must contain the {ph} placeholder")


@dataclass(frozen=True)
class VerdictRules:
    """Line-level classification rules for simulation output.

    fail_patterns: ordered (name, regex) pairs, matched case-insensitively
    per line; the first hit names the verdict. pass_pattern, when set, must
    match some line for a Pass.
    """

    fail_patterns: tuple = (
        ("error", r"\berror\b"),
        ("fail", r"\bfail\b"),
        ("mismatch", r"\bmismatch\b"),
    )
    pass_pattern: str | None = None

    @classmethod
    def from_manifest(cls, manifest: dict) -> "VerdictRules":
        rules = cls()
        if "fail_patterns" in manifest:
            rules = VerdictRules(
                fail_patterns=tuple((k, v) for k, v in manifest["fail_patterns"].items()),
                pass_pattern=rules.pass_pattern,
            )
        if "pass_pattern" in manifest:
            rules = VerdictRules(
                fail_patterns=rules.fail_patterns,
                pass_pattern=manifest["pass_pattern"],
            )
        return rules


DEFAULT_RULES = VerdictRules()


@dataclass(frozen=True)
class SynthReport:
    cell_counts: dict
    netlist_path: str

    def __post_init__(self):
        if any(v < 0 for v in self.cell_counts.values()):
            raise ValueError("cell counts must be >= 0")


class CancelToken:
    """Cooperative cancellation; also force-kills registered tool processes."""

    def __init__(self):
        self._event = threading.Event()
        self._lock = threading.Lock()
        self._pgids: set[int] = set()

    def cancel(self):
        self._event.set()
        with self._lock:
            pgids = list(self._pgids)
        for pgid in pgids:
            _kill_pgid(pgid, signal.SIGTERM)

    @property
    def cancelled(self) -> bool:
        return self._event.is_set()

    def raise_if_cancelled(self):
        if self.cancelled:
            raise Cancelled("operation cancelled")

    def _register(self, pgid: int):
        with self._lock:
            self._pgids.add(pgid)

    def _unregister(self, pgid: int):
        with self._lock:
            self._pgids.discard(pgid)


_semaphore_lock = threading.Lock()
_tool_semaphore = threading.BoundedSemaphore(2 * (os.cpu_count() or 1))


def set_tool_concurrency(n: int):
    """Resize the global bound on concurrent external tool processes."""
    global _tool_semaphore
    if n < 1:
        raise ValueError("concurrency must be >= 1")
    with _semaphore_lock:
        _tool_semaphore = threading.BoundedSemaphore(n)


def _kill_pgid(pgid: int, sig):
    try:
        os.killpg(pgid, sig)
    except (ProcessLookupError, PermissionError):
        pass


def build_argv(template: str, *, src, tb=None, top: str = "", out: str = "") -> list[str]:
    """Expand a command template into argv.

    A token that is exactly {src} or {tb} splices the file list as separate
    arguments; inside longer tokens (quoted tool scripts) the lists join with
    spaces.
    """
    src_list = [str(p) for p in (src if isinstance(src, (list, tuple)) else [src])]
    tb_list = [str(p) for p in (tb if isinstance(tb, (list, tuple)) else ([tb] if tb else []))]
    mapping = {"src": " ".join(src_list), "tb": " ".join(tb_list), "top": top, "out": str(out)}
    argv: list[str] = []
    for token in shlex.split(template):
        if token == "{src}":
            argv.extend(src_list)
        elif token == "{tb}":
            argv.extend(tb_list)
        else:
            try:
                argv.append(token.format(**mapping))
            except (KeyError, IndexError) as e:
                raise ValueError(f"unknown placeholder in template token {token!r}") from e
    return argv


@dataclass
class RunResult:
    returncode: int
    output: str
    duration_s: float


def run_command(argv: list[str], *, cwd, timeout_s: float, cancel: CancelToken | None = None) -> RunResult:
    """Run one external tool with merged output, under the global semaphore.

    On timeout the whole process group gets SIGTERM, then SIGKILL after a
    grace period; Timeout is raised. A missing binary raises ToolMissing.
    """
    if cancel is not None:
        cancel.raise_if_cancelled()
    with _tool_semaphore:
        if cancel is not None:
            cancel.raise_if_cancelled()
        start = time.monotonic()
        try:
            proc = subprocess.Popen(
                argv,
                cwd=str(cwd),
                stdout=subprocess.PIPE,
                stderr=subprocess.STDOUT,
                text=True,
                start_new_session=True,
            )
        except FileNotFoundError as e:
            raise ToolMissing(f"{argv[0]}: not found") from e
        pgid = proc.pid
        if cancel is not None:
            cancel._register(pgid)
        try:
            try:
                output, _ = proc.communicate(timeout=timeout_s)
            except subprocess.TimeoutExpired:
                _kill_pgid(pgid, signal.SIGTERM)
                try:
                    output, _ = proc.communicate(timeout=KILL_GRACE_S)
                except subprocess.TimeoutExpired:
                    _kill_pgid(pgid, signal.SIGKILL)
                    output, _ = proc.communicate()
                raise Timeout(f"{argv[0]} exceeded {timeout_s}s")
        finally:
            if cancel is not None:
                cancel._unregister(pgid)
        if cancel is not None and cancel.cancelled:
            raise Cancelled(f"{argv[0]} cancelled")
        return RunResult(proc.returncode, output or "", time.monotonic() - start)


def tail_lines(text: str, n: int = LOG_EXCERPT_LINES) -> str:
    lines = text.splitlines()
    return "\n".join(lines[-n:])


def classify_sim_output(output: str, exit_code: int, rules: VerdictRules = DEFAULT_RULES) -> VerificationVerdict:
    """Pure classification of a simulation run into a verdict.

    Fail patterns are checked line by line first; then a nonzero exit code;
    then the pass pattern requirement (when configured).
    """
    compiled = [(name, re.compile(pat, re.IGNORECASE)) for name, pat in rules.fail_patterns]
    pass_re = re.compile(rules.pass_pattern, re.IGNORECASE) if rules.pass_pattern else None
    saw_pass = pass_re is None
    excerpt = tail_lines(output)
    for line in output.splitlines():
        for name, regex in compiled:
            if regex.search(line):
                return VerificationVerdict(VerdictStatus.SIM_FAIL, excerpt, matched_rule=name)
        if pass_re is not None and pass_re.search(line):
            saw_pass = True
    if exit_code != 0:
        return VerificationVerdict(VerdictStatus.SIM_FAIL, excerpt, matched_rule=f"exit:{exit_code}")
    if not saw_pass:
        return VerificationVerdict(VerdictStatus.SIM_FAIL, excerpt, matched_rule="no_pass_line")
    return VerificationVerdict(VerdictStatus.PASS, excerpt)


def _scratch_dir(label: str) -> Path:
    return Path(tempfile.mkdtemp(prefix=f"cradle-{label}-"))


def _write_files(scratch: Path, files) -> list[Path]:
    paths = []
    for rel, text in files:
        p = scratch / Path(rel).name
        p.write_text(text)
        paths.append(p)
    return paths


def synthesize(sources, top: str, cfg: ToolConfig = ToolConfig(), cancel: CancelToken | None = None) -> SynthReport:
    """Synthesize (path, text) sources; returns cell counts and the netlist
    artifact path. The netlist lives in the scratch dir, which survives until
    place_and_route consumes it."""
    if not sources:
        raise ValueError("sources must be non-empty")
    # scratch survives this call: on success the netlist inside it feeds
    # place_and_route; on failure it is retained for inspection
    scratch = _scratch_dir("synth")
    src_paths = _write_files(scratch, sources)
    netlist = scratch / "netlist.json"
    argv = build_argv(cfg.synth_cmd, src=src_paths, top=top, out=netlist)
    result = run_command(argv, cwd=scratch, timeout_s=cfg.timeout_s, cancel=cancel)
    if result.returncode != 0:
        raise CompileError(tail_lines(result.output))
    stats_path = Path(str(netlist) + ".stats.json")
    if stats_path.is_file():
        counts = reports.parse_synth_stats(stats_path.read_text())
    else:
        doc = reports.find_json_object(result.output)
        if doc is None:
            raise StatsUnparseable("no statistics JSON in output or stats file")
        counts = reports.parse_synth_stats(doc)
    return SynthReport(cell_counts=counts, netlist_path=str(netlist))


def place_and_route(netlist, cfg: ToolConfig = ToolConfig(), cancel: CancelToken | None = None) -> ResourceMetrics:
    """Place-and-route a netlist; utilization comes from the tool log."""
    netlist = Path(netlist)
    if not netlist.is_file():
        raise FileNotFoundError(str(netlist))
    scratch = _scratch_dir("pnr")
    ok = False
    try:
        out = scratch / "routed.cfg"
        argv = build_argv(cfg.pnr_cmd, src=netlist, out=out)
        result = run_command(argv, cwd=scratch, timeout_s=cfg.timeout_s, cancel=cancel)
        if result.returncode != 0:
            raise PnrFailed(tail_lines(result.output))
        metrics = reports.utilization_metrics(result.output, cfg.class_map)
        ok = True
        return metrics
    finally:
        if ok:
            shutil.rmtree(scratch, ignore_errors=True)


def simulate(
    sources,
    testbench_files,
    cfg: ToolConfig = ToolConfig(),
    rules: VerdictRules = DEFAULT_RULES,
    cancel: CancelToken | None = None,
) -> VerificationVerdict:
    """Compile design + testbench, run the simulation, classify the output.

    Compile failures and timeouts come back as verdict values, not
    exceptions; only a missing tool binary raises.
    """
    if not testbench_files:
        raise ValueError("testbench_files must be non-empty")
    scratch = _scratch_dir("sim")
    ok = False
    try:
        src_paths = _write_files(scratch, sources)
        tb_paths = _write_files(scratch, testbench_files)
        sim_bin = scratch / "sim.out"
        argv = build_argv(cfg.sim_compile_cmd, src=src_paths, tb=tb_paths, out=sim_bin)
        try:
            compiled = run_command(argv, cwd=scratch, timeout_s=cfg.timeout_s, cancel=cancel)
        except Timeout:
            return VerificationVerdict(VerdictStatus.TIMEOUT, "compile step timed out")
        if compiled.returncode != 0:
            return VerificationVerdict(
                VerdictStatus.COMPILE_ERROR, tail_lines(compiled.output)
            )
        run_argv = build_argv(cfg.sim_run_cmd, src=[], out=sim_bin)
        try:
            ran = run_command(run_argv, cwd=scratch, timeout_s=cfg.timeout_s, cancel=cancel)
        except Timeout:
            return VerificationVerdict(VerdictStatus.TIMEOUT, "simulation exceeded time budget")
        verdict = classify_sim_output(ran.output, ran.returncode, rules)
        ok = verdict.passed
        return verdict
    finally:
        if ok:
            shutil.rmtree(scratch, ignore_errors=True)


@dataclass
class ExternalToolAdapter:
    """Bundles a ToolConfig + VerdictRules behind the three flow calls, so
    the loop can treat live tools and the replay substitute uniformly."""

    cfg: ToolConfig = field(default_factory=ToolConfig)
    rules: VerdictRules = DEFAULT_RULES

    def simulate(self, sources, testbench_files, cancel: CancelToken | None = None) -> VerificationVerdict:
        return simulate(sources, testbench_files, self.cfg, self.rules, cancel)

    def synthesize(self, sources, top: str, cancel: CancelToken | None = None) -> SynthReport:
        return synthesize(sources, top, self.cfg, cancel)

    def place_and_route(self, netlist, cancel: CancelToken | None = None) -> ResourceMetrics:
        return place_and_route(netlist, self.cfg, cancel)

    def measure(self, sources, top: str, cancel: CancelToken | None = None) -> ResourceMetrics:
        """synthesize + place_and_route, cleaning the synth scratch after."""
        report = self.synthesize(sources, top, cancel)
        try:
            return self.place_and_route(report.netlist_path, cancel)
        finally:
            shutil.rmtree(Path(report.netlist_path).parent, ignore_errors=True)
