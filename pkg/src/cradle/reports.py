"""Parsers for synthesis statistics and place-and-route utilization reports.

All functions here are pure: same text in, same counts out. They never touch
the filesystem or spawn anything.
"""

from __future__ import annotations

import json
import re
from typing import Mapping

from .model import FF, LUT, CradleError, ResourceMetrics


class StatsUnparseable(CradleError):
    """Synthesis statistics document not in any recognized shape."""


class UtilizationNotFound(CradleError):
    """No utilization line matched in the place-and-route log."""


# `Info:          TRELLIS_FF:     8/24288     0%`
UTILIZATION_RE = re.compile(
    r"^\s*Info:\s+([A-Za-z_][A-Za-z0-9_$]*):\s+(\d+)\s*/\s*(\d+)\s+([0-9.]+)\s*%",
    re.MULTILINE,
)


def parse_utilization(log_text: str) -> dict[str, int]:
    """Used counts per cell name from utilization lines.

    When a name repeats (some tools print the table more than once), the
    last occurrence wins.
    """
    counts: dict[str, int] = {}
    for m in UTILIZATION_RE.finditer(log_text):
        counts[m.group(1)] = int(m.group(2))
    if not counts:
        raise UtilizationNotFound("no utilization lines in log")
    return counts


DEFAULT_CLASS_MAP = (("COMB", LUT),)


def classify_cell(name: str, class_map=DEFAULT_CLASS_MAP) -> str:
    """Resource class for a raw cell-type name.

    Explicit class_map substrings are checked first (case-insensitive, in
    order), then the builtin rules: names containing LUT fold to LUT, names
    containing FF or DFF fold to FF, anything else stays verbatim.
    """
    upper = name.upper()
    for pattern, cls in class_map:
        if pattern.upper() in upper:
            return cls
    if "LUT" in upper:
        return LUT
    if "FF" in upper or "DFF" in upper:
        return FF
    return name


def fold_resource_classes(counts: Mapping[str, int], class_map=DEFAULT_CLASS_MAP) -> dict[str, int]:
    """Fold raw cell counts into resource classes. Totals are conserved:
    the sum over folded classes equals the sum over the input names."""
    folded: dict[str, int] = {}
    for name, used in counts.items():
        cls = classify_cell(name, class_map)
        folded[cls] = folded.get(cls, 0) + int(used)
    folded.setdefault(LUT, 0)
    folded.setdefault(FF, 0)
    return folded


def utilization_metrics(log_text: str, class_map=DEFAULT_CLASS_MAP) -> ResourceMetrics:
    return ResourceMetrics(fold_resource_classes(parse_utilization(log_text), class_map))


def _counts_from_cells(cells: Mapping) -> dict[str, int]:
    counts: dict[str, int] = {}
    for cell in cells.values():
        ctype = cell.get("type") if isinstance(cell, Mapping) else None
        if not isinstance(ctype, str):
            continue
        counts[ctype] = counts.get(ctype, 0) + 1
    return counts


def parse_synth_stats(doc) -> dict[str, int]:
    """Cell-type counts from a synthesis statistics document.

    Accepts the text of a JSON document or an already-decoded object, in any
    of these shapes:
      * {"design": {"num_cells_by_type": {...}}}
      * {"modules": {<name>: {"num_cells_by_type": {...}}}}  (summed)
      * {"modules": {<name>: {"cells": {<inst>: {"type": ...}}}}}  (netlist)
      * {"num_cells_by_type": {...}}
    """
    if isinstance(doc, str):
        try:
            doc = json.loads(doc)
        except json.JSONDecodeError as e:
            raise StatsUnparseable(f"not a JSON document: {e}") from e
    if not isinstance(doc, Mapping):
        raise StatsUnparseable("statistics document is not a JSON object")

    design = doc.get("design")
    if isinstance(design, Mapping) and isinstance(design.get("num_cells_by_type"), Mapping):
        return {k: int(v) for k, v in design["num_cells_by_type"].items()}

    modules = doc.get("modules")
    if isinstance(modules, Mapping) and modules:
        summed: dict[str, int] = {}
        saw_counts = False
        for mod in modules.values():
            if not isinstance(mod, Mapping):
                continue
            by_type = mod.get("num_cells_by_type")
            if isinstance(by_type, Mapping):
                saw_counts = True
                for k, v in by_type.items():
                    summed[k] = summed.get(k, 0) + int(v)
            elif isinstance(mod.get("cells"), Mapping):
                cell_counts = _counts_from_cells(mod["cells"])
                if cell_counts:
                    saw_counts = True
                for k, v in cell_counts.items():
                    summed[k] = summed.get(k, 0) + v
        if saw_counts:
            return summed

    by_type = doc.get("num_cells_by_type")
    if isinstance(by_type, Mapping):
        return {k: int(v) for k, v in by_type.items()}

    raise StatsUnparseable("no cell-count section found")


def parse_metrics_json(doc) -> ResourceMetrics:
    """ResourceMetrics from `{"counts": {...}}` or a plain `{class: count}`
    object (tool-agnostic pipelines feed the latter)."""
    if isinstance(doc, str):
        try:
            doc = json.loads(doc)
        except json.JSONDecodeError as e:
            raise StatsUnparseable(f"not a JSON document: {e}") from e
    if not isinstance(doc, Mapping):
        raise StatsUnparseable("metrics document is not a JSON object")
    counts = doc.get("counts", doc)
    if not isinstance(counts, Mapping) or not all(
        isinstance(v, int) and not isinstance(v, bool) for v in counts.values()
    ):
        raise StatsUnparseable("metrics counts must be an object of integers")
    return ResourceMetrics(dict(counts))


def find_json_object(text: str):
    """First complete top-level JSON object embedded in `text`, or None.

    Used to dig a statistics document out of mixed tool stdout. Scans for
    balanced braces (string-aware) and returns the first span that decodes.
    """
    i = text.find("{")
    while i != -1:
        end = _balanced_end(text, i)
        if end is not None:
            try:
                return json.loads(text[i:end])
            except json.JSONDecodeError:
                pass
        i = text.find("{", i + 1)
    return None


def _balanced_end(text: str, start: int) -> int | None:
    depth = 0
    in_str = False
    i = start
    n = len(text)
    while i < n:
        c = text[i]
        if in_str:
            if c == "\\":
                i += 2
                continue
            if c == '"':
                in_str = False
        elif c == '"':
            in_str = True
        elif c == "{":
            depth += 1
        elif c == "}":
            depth -= 1
            if depth == 0:
                return i + 1
        i += 1
    return None
