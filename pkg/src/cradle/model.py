"""Core domain types: designs, resource metrics, objectives, variants, hierarchy.

Everything in this module is an immutable value. Instances may be shared
freely between threads; all mutation happens by constructing new values.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Iterable, Mapping

from . import verilog

LUT = "LUT"
FF = "FF"

REFERENCE_VARIANT_ID = 0


class CradleError(Exception):
    """Base class for all errors raised by this package."""

    #: machine-readable code, used by the HTTP API error envelope
    @property
    def code(self) -> str:
        return type(self).__name__


class UndefinedReduction(CradleError):
    """Reference count is zero while the candidate count is not."""


class CyclicHierarchy(CradleError):
    """A module appears on its own instantiation path."""


class ParseGaveNothing(CradleError):
    """No module declarations could be found in the given sources."""


def _normalize_counts(counts: Mapping[str, int]) -> dict[str, int]:
    out: dict[str, int] = {}
    for cls, n in counts.items():
        if not isinstance(cls, str) or not cls:
            raise ValueError(f"resource class must be a non-empty string, got {cls!r}")
        n = int(n)
        if n < 0:
            raise ValueError(f"count for {cls} must be >= 0, got {n}")
        out[cls] = n
    out.setdefault(LUT, 0)
    out.setdefault(FF, 0)
    return out


@dataclass(frozen=True)
class ResourceMetrics:
    """Post-place-and-route resource counts per resource class.

    Classes are open strings; LUT and FF are always present (possibly 0).
    """

    counts: dict[str, int]

    def __post_init__(self):
        object.__setattr__(self, "counts", _normalize_counts(self.counts))

    def get(self, cls: str) -> int:
        return self.counts.get(cls, 0)

    @property
    def lut(self) -> int:
        return self.counts[LUT]

    @property
    def ff(self) -> int:
        return self.counts[FF]

    def classes(self) -> list[str]:
        return sorted(self.counts)

    def to_dict(self) -> dict:
        return {"counts": dict(self.counts)}

    @classmethod
    def from_dict(cls, data: Mapping) -> "ResourceMetrics":
        return cls(dict(data["counts"]))


@dataclass(frozen=True)
class Objective:
    """Ordering over metrics. Lexicographic (primary, then secondary) by
    default; a weights map switches to a weighted sum. Lower is better."""

    primary_class: str = LUT
    secondary_class: str = FF
    weights: dict[str, float] | None = None

    def __post_init__(self):
        if self.primary_class == self.secondary_class:
            raise ValueError("primary and secondary resource classes must differ")
        if self.weights is not None:
            if any(w < 0 for w in self.weights.values()):
                raise ValueError("objective weights must be >= 0")
            if not any(w > 0 for w in self.weights.values()):
                raise ValueError("at least one objective weight must be > 0")

    def to_dict(self) -> dict:
        return {
            "primary_class": self.primary_class,
            "secondary_class": self.secondary_class,
            "weights": dict(self.weights) if self.weights is not None else None,
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "Objective":
        weights = data.get("weights")
        return cls(
            primary_class=data.get("primary_class", LUT),
            secondary_class=data.get("secondary_class", FF),
            weights=dict(weights) if weights is not None else None,
        )


def objective_value(metrics: ResourceMetrics, objective: Objective):
    """Comparable key for a metrics value under an objective; lower is better.

    Lexicographic mode returns (primary, secondary); weighted mode returns the
    weighted sum. Missing classes read as 0.
    """
    if objective.weights is not None:
        return sum(w * metrics.get(cls) for cls, w in objective.weights.items())
    return (metrics.get(objective.primary_class), metrics.get(objective.secondary_class))


def reduction(reference: ResourceMetrics, candidate: ResourceMetrics, cls: str) -> float:
    """Signed percentage reduction of `cls` from reference to candidate.

    100*(ref-cand)/ref; 0 when both are 0. Negative values are regressions.
    """
    ref = reference.get(cls)
    cand = candidate.get(cls)
    if ref == 0:
        if cand == 0:
            return 0.0
        raise UndefinedReduction(f"reference count for {cls} is 0 but candidate has {cand}")
    return 100.0 * (ref - cand) / ref


def reductions_vs_reference(
    reference: ResourceMetrics, candidate: ResourceMetrics
) -> dict[str, float]:
    """Per-class reductions over the union of classes, skipping undefined ones
    (reference 0 with a nonzero candidate count)."""
    out: dict[str, float] = {}
    for cls in sorted(set(reference.counts) | set(candidate.counts)):
        try:
            out[cls] = reduction(reference, candidate, cls)
        except UndefinedReduction:
            continue
    return out


class VerdictStatus(str, Enum):
    PASS = "Pass"
    COMPILE_ERROR = "CompileError"
    SIM_FAIL = "SimFail"
    TIMEOUT = "Timeout"
    TOOL_MISSING = "ToolMissing"


@dataclass(frozen=True)
class VerificationVerdict:
    """Outcome of compiling and simulating a design against its testbench."""

    status: VerdictStatus
    log_excerpt: str = ""
    matched_rule: str | None = None

    @property
    def passed(self) -> bool:
        return self.status is VerdictStatus.PASS

    def to_dict(self) -> dict:
        return {
            "status": self.status.value,
            "log_excerpt": self.log_excerpt,
            "matched_rule": self.matched_rule,
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "VerificationVerdict":
        return cls(
            status=VerdictStatus(data["status"]),
            log_excerpt=data.get("log_excerpt", ""),
            matched_rule=data.get("matched_rule"),
        )


@dataclass(frozen=True)
class Variant:
    """One candidate implementation of a design. Id 0 is the reference."""

    id: int
    source_text: str
    iteration: int
    verdict: VerificationVerdict
    metrics: ResourceMetrics | None = None
    plan_ref: int | None = None

    def __post_init__(self):
        if self.id < 0:
            raise ValueError("variant id must be >= 0")
        if self.id != REFERENCE_VARIANT_ID and self.iteration < 1:
            raise ValueError("candidate variants must carry iteration >= 1")
        if self.metrics is not None and not self.verdict.passed:
            raise ValueError("only verified (Pass) variants may carry metrics")

    @property
    def is_reference(self) -> bool:
        return self.id == REFERENCE_VARIANT_ID


@dataclass(frozen=True)
class HierarchyNode:
    """Instantiation tree node: a module and its named child instances."""

    module_name: str
    instances: tuple = ()  # tuple of (instance_name, HierarchyNode)

    def node_count(self) -> int:
        return 1 + sum(child.node_count() for _, child in self.instances)

    def edge_count(self) -> int:
        return len(self.instances) + sum(child.edge_count() for _, child in self.instances)

    def to_dict(self) -> dict:
        return {
            "module": self.module_name,
            "instances": [
                {"instance": name, **child.to_dict()} for name, child in self.instances
            ],
        }


def extract_hierarchy(sources: Iterable[str], top: str | None = None) -> HierarchyNode:
    """Build the instantiation tree for a set of Verilog sources.

    The scan is heuristic (comment- and string-aware lexing, no elaboration):
    declarations come from `module <id>` headers, edges from
    `<module> [#(...)] <instance> (...);` statements. Instantiations of
    modules not declared in `sources` (library cells, primitives) are ignored.
    """
    decls = verilog.scan_modules(list(sources))
    if not decls:
        raise ParseGaveNothing("no module declarations found")
    known = list(decls)
    edges: dict[str, list[tuple[str, str]]] = {
        name: verilog.instantiations(body, known) for name, body in decls.items()
    }
    root = top if top is not None else _pick_root(known, edges)
    if root not in decls:
        raise ParseGaveNothing(f"top module {root!r} is not declared in the sources")

    def build(name: str, path: tuple[str, ...]) -> HierarchyNode:
        if name in path:
            raise CyclicHierarchy(" -> ".join(path + (name,)))
        children = tuple(
            (inst, build(child, path + (name,))) for child, inst in edges[name]
        )
        return HierarchyNode(name, children)

    return build(root, ())


def uninstantiated_modules(sources: Iterable[str]) -> list[str]:
    """Declared modules never instantiated by another declared module, in
    declaration order. Used for top-module resolution."""
    decls = verilog.scan_modules(list(sources))
    known = list(decls)
    instantiated: set[str] = set()
    for body in decls.values():
        instantiated.update(child for child, _ in verilog.instantiations(body, known))
    return [name for name in decls if name not in instantiated]


def _pick_root(known: list[str], edges: dict[str, list[tuple[str, str]]]) -> str:
    instantiated = {child for kids in edges.values() for child, _ in kids}
    roots = [name for name in known if name not in instantiated]
    # No uninstantiated module means everything sits on a cycle; start anywhere
    # and let the tree builder report it.
    return roots[0] if roots else known[0]


@dataclass(frozen=True)
class DesignUnit:
    """A named RTL design: sources, top module, testbench, reference metrics."""

    name: str
    source_files: tuple = ()  # tuple of (relative path, text)
    top_module: str = ""
    testbench_files: tuple = ()
    reference_metrics: ResourceMetrics | None = None

    def __post_init__(self):
        object.__setattr__(self, "source_files", tuple(tuple(f) for f in self.source_files))
        object.__setattr__(self, "testbench_files", tuple(tuple(f) for f in self.testbench_files))
        if not self.name:
            raise ValueError("design name must be non-empty")
        src_paths = {p for p, _ in self.source_files}
        tb_paths = {p for p, _ in self.testbench_files}
        if src_paths & tb_paths:
            raise ValueError(f"source and testbench file sets overlap: {src_paths & tb_paths}")
        declared = set()
        for _, text in self.source_files:
            declared.update(verilog.module_names(text))
        if self.top_module not in declared:
            raise ValueError(
                f"top module {self.top_module!r} is not declared in any source file"
            )

    @property
    def source_texts(self) -> list[str]:
        return [text for _, text in self.source_files]

    @property
    def testbench_texts(self) -> list[str]:
        return [text for _, text in self.testbench_files]

    def joined_source(self) -> str:
        """All source texts concatenated, in file order."""
        return "\n".join(text.rstrip("\n") + "\n" for _, text in self.source_files)

    def hierarchy(self) -> HierarchyNode:
        return extract_hierarchy(self.source_texts, top=self.top_module)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "source_files": [[p, t] for p, t in self.source_files],
            "top_module": self.top_module,
            "testbench_files": [[p, t] for p, t in self.testbench_files],
            "reference_metrics": (
                self.reference_metrics.to_dict() if self.reference_metrics else None
            ),
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "DesignUnit":
        ref = data.get("reference_metrics")
        return cls(
            name=data["name"],
            source_files=tuple((p, t) for p, t in data["source_files"]),
            top_module=data["top_module"],
            testbench_files=tuple((p, t) for p, t in data["testbench_files"]),
            reference_metrics=ResourceMetrics.from_dict(ref) if ref else None,
        )


def with_metrics(variant: Variant, metrics: ResourceMetrics) -> Variant:
    return replace(variant, metrics=metrics)
