"""Benchmark harness: run the loop across a suite of designs and report
per-design and aggregate reduction statistics as CSV/JSON."""

from __future__ import annotations

import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from . import workspace
from .agent import LoopConfig, RefFailsVerification, run_loop
from .llm import GatewayError
from .model import (
    FF,
    LUT,
    CradleError,
    DesignUnit,
    ResourceMetrics,
    objective_value,
)

CSV_HEADER = "design,ref_lut,best_lut,lut_reduction_pct,ref_ff,best_ff,ff_reduction_pct,improved"


class EmptySuite(CradleError):
    """The suite directory yielded no loadable design."""


class IoError(CradleError):
    """Result file could not be written."""


@dataclass(frozen=True)
class DesignOutcome:
    ref: ResourceMetrics
    best: ResourceMetrics
    improved: bool
    reductions: dict
    verdict_trail: tuple = ()
    best_variant_id: int = 0
    wall_clock_s: float = 0.0
    usage: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "ref": dict(self.ref.counts),
            "best": dict(self.best.counts),
            "improved": self.improved,
            "reductions": dict(self.reductions),
            "verdict_trail": list(self.verdict_trail),
            "best_variant_id": self.best_variant_id,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "DesignOutcome":
        return cls(
            ref=ResourceMetrics(data["ref"]),
            best=ResourceMetrics(data["best"]),
            improved=bool(data["improved"]),
            reductions=dict(data["reductions"]),
            verdict_trail=tuple(data.get("verdict_trail", ())),
            best_variant_id=int(data.get("best_variant_id", 0)),
        )


@dataclass
class SuiteResult:
    per_design: dict = field(default_factory=dict)  # name -> DesignOutcome
    failures: dict = field(default_factory=dict)  # name -> error summary

    def sorted_names(self) -> list[str]:
        return sorted(self.per_design)


@dataclass(frozen=True)
class ReductionStats:
    mean_reduction: dict | None
    mean_reduction_clamped: dict | None
    improved_count: int
    total_count: int

    def __post_init__(self):
        if not (0 <= self.improved_count <= self.total_count):
            raise ValueError("improved_count must lie within [0, total_count]")

    def to_dict(self) -> dict:
        return {
            "mean_reduction": self.mean_reduction,
            "mean_reduction_clamped": self.mean_reduction_clamped,
            "improved_count": self.improved_count,
            "total_count": self.total_count,
        }


def discover_suite(suite_dir, skipped: dict | None = None) -> list[DesignUnit]:
    """Load every design under a suite directory, sorted by name.

    The directory either IS a designs/ directory or contains one. Designs
    that fail to load are skipped; pass a dict as `skipped` to collect
    name -> error for reporting.
    """
    suite_dir = Path(suite_dir)
    root = suite_dir
    if (suite_dir / "designs").is_dir():
        names = workspace.list_designs(suite_dir)
    else:
        # treat the directory itself as designs/: wrap it in a fake root view
        names = sorted(p.name for p in suite_dir.iterdir() if p.is_dir()) if suite_dir.is_dir() else []
        root = None
    units: list[DesignUnit] = []
    for name in names:
        try:
            if root is not None:
                units.append(workspace.load_design(root, name))
            else:
                units.append(_load_bare(suite_dir, name))
        except CradleError as e:
            if skipped is not None:
                skipped[name] = f"{e.code}: {e}"
    if not units:
        raise EmptySuite(f"no loadable designs under {suite_dir}")
    return units


def _load_bare(designs_parent: Path, name: str) -> DesignUnit:
    """Load `<designs_parent>/<name>/...` when the suite dir is the designs
    dir itself (no `designs/` wrapper)."""
    import tempfile

    # load_design only ever reads below <root>/designs, so present the
    # parent as that directory through a symlinked root
    with tempfile.TemporaryDirectory(prefix="cradle-suite-") as tmp:
        root = Path(tmp)
        (root / "designs").symlink_to(designs_parent.resolve())
        return workspace.load_design(root, name)


def run_suite(
    suite: list[DesignUnit],
    cfg: LoopConfig,
    parallelism: int = 1,
    adapter_factory=None,
    gateway_factory=None,
) -> SuiteResult:
    """Run the loop on every design, up to `parallelism` designs at once.

    Output ordering is by design name regardless of completion order.
    Designs whose reference fails verification (or whose gateway dies) land
    in failures; everything else gets a per-design outcome. Never raises for
    a single design's sake.
    """
    if adapter_factory is None or gateway_factory is None:
        raise ValueError("adapter_factory and gateway_factory are required")
    result = SuiteResult()

    def one(design: DesignUnit):
        start = time.monotonic()
        adapter = adapter_factory(design)
        gateway = gateway_factory(design)
        try:
            exploration = run_loop(design, cfg, adapter, gateway)
        except RefFailsVerification as e:
            return design.name, None, f"RefFailsVerification: {e}"
        except GatewayError as e:
            return design.name, None, f"{e.code}: {e}"
        except CradleError as e:
            return design.name, None, f"{e.code}: {e}"
        wall = time.monotonic() - start
        reference = exploration.reference
        if reference is None or reference.metrics is None:
            return design.name, None, exploration.aborted or "reference not measured"
        usage = getattr(gateway, "usage", None)
        outcome = outcome_from_result(exploration, cfg, wall,
                                      usage.to_dict() if usage else {})
        return design.name, outcome, None

    if parallelism <= 1 or len(suite) <= 1:
        rows = [one(d) for d in suite]
    else:
        with ThreadPoolExecutor(max_workers=parallelism) as pool:
            rows = list(pool.map(one, suite))

    for name, outcome, failure in sorted(rows, key=lambda r: r[0]):
        if outcome is not None:
            result.per_design[name] = outcome
        else:
            result.failures[name] = failure
    return result


def outcome_from_result(exploration, cfg: LoopConfig, wall_clock_s: float = 0.0,
                        usage: dict | None = None) -> DesignOutcome:
    ref = exploration.reference.metrics
    best = exploration.best.metrics if exploration.best.metrics is not None else ref
    improved = objective_value(best, cfg.objective) < objective_value(ref, cfg.objective)
    trail = []
    for record in exploration.iterations:
        for v in record.variants:
            trail.append(f"{v.id}:{v.verdict.status.value}")
    if exploration.aborted:
        trail.append(f"aborted:{exploration.aborted}")
    return DesignOutcome(
        ref=ref,
        best=best,
        improved=improved,
        reductions=dict(exploration.reductions),
        verdict_trail=tuple(trail),
        best_variant_id=exploration.best.id,
        wall_clock_s=wall_clock_s,
        usage=usage or {},
    )


def aggregate(results: SuiteResult) -> ReductionStats:
    """Arithmetic means per resource class over ALL designs in per_design.

    Unimproved designs count at their actual reduction (0 when best is the
    reference); classes missing from a design's reductions count as 0. The
    clamped variant floors each per-design reduction at 0 before averaging.
    An empty result has no defined means (None).
    """
    # sorted so the means do not depend on insertion order (float addition
    # is not associative)
    outcomes = [results.per_design[name] for name in results.sorted_names()]
    n = len(outcomes)
    improved_count = sum(1 for o in outcomes if o.improved)
    if n == 0:
        return ReductionStats(None, None, 0, 0)
    classes = sorted({cls for o in outcomes for cls in o.reductions})
    mean = {
        cls: sum(o.reductions.get(cls, 0.0) for o in outcomes) / n for cls in classes
    }
    clamped = {
        cls: sum(max(0.0, o.reductions.get(cls, 0.0)) for o in outcomes) / n
        for cls in classes
    }
    return ReductionStats(mean, clamped, improved_count, n)


def emit(results: SuiteResult, fmt: str, out_path, include_timing: bool = False) -> Path:
    """Write suite results to disk.

    CSV gets exactly the fixed column set with one-decimal percentages; JSON
    mirrors the SuiteResult plus aggregate stats. Timing/usage figures vary
    run to run, so they only appear in JSON when include_timing is set.
    """
    out_path = Path(out_path)
    if fmt == "csv":
        text = render_csv(results)
    elif fmt == "json":
        text = render_json(results, include_timing=include_timing)
    else:
        raise ValueError(f"unknown format {fmt!r}")
    try:
        out_path.parent.mkdir(parents=True, exist_ok=True)
        out_path.write_text(text)
    except OSError as e:
        raise IoError(f"{out_path}: {e}") from e
    return out_path


def render_csv(results: SuiteResult) -> str:
    lines = [CSV_HEADER]
    for name in results.sorted_names():
        o = results.per_design[name]
        lines.append(
            f"{name},{o.ref.lut},{o.best.lut},{o.reductions.get(LUT, 0.0):.1f},"
            f"{o.ref.ff},{o.best.ff},{o.reductions.get(FF, 0.0):.1f},"
            f"{'true' if o.improved else 'false'}"
        )
    return "\n".join(lines) + "\n"


def render_json(results: SuiteResult, include_timing: bool = False) -> str:
    per_design = {}
    for name in results.sorted_names():
        o = results.per_design[name]
        entry = o.to_dict()
        if include_timing:
            entry["wall_clock_s"] = round(o.wall_clock_s, 3)
            entry["usage"] = dict(o.usage)
        per_design[name] = entry
    doc = {
        "per_design": per_design,
        "failures": dict(sorted(results.failures.items())),
        "stats": aggregate(results).to_dict(),
    }
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def suite_result_from_json(doc) -> SuiteResult:
    """Inverse of the JSON emitter (stats and timing are derived, ignored)."""
    if isinstance(doc, (str, Path)):
        doc = json.loads(Path(doc).read_text())
    result = SuiteResult()
    for name, entry in doc.get("per_design", {}).items():
        result.per_design[name] = DesignOutcome.from_dict(entry)
    result.failures = dict(doc.get("failures", {}))
    return result
