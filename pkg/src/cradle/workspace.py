"""Filesystem workspace: design directories, session storage, variant files.

Layout:
    <root>/designs/<name>/src/*.v
    <root>/designs/<name>/tb/*.v
    <root>/designs/<name>/design.json        optional manifest
    <root>/designs/<name>/work/<name>.v      written by /accept, never read back
    <root>/sessions/<session-id>/events.jsonl
    <root>/sessions/<session-id>/variants/<id>/candidate.v
    <root>/sessions/<session-id>/variants/<id>/metrics.json

`src/` and `tb/` contents are treated as immutable inputs; accepting a
variant only ever writes under `work/`.
"""

from __future__ import annotations

import json
import shutil
from pathlib import Path

from .model import CradleError, DesignUnit, ResourceMetrics, Variant, uninstantiated_modules


class MissingDesign(CradleError):
    """The named design directory does not exist."""


class EmptyDesign(CradleError):
    """The design has no source files (or no testbench files)."""


class AmbiguousTop(CradleError):
    """No manifest and the uninstantiated-module scan is not unique."""


class BadManifest(CradleError):
    """design.json exists but cannot be parsed."""


def designs_dir(root) -> Path:
    return Path(root) / "designs"


def sessions_dir(root) -> Path:
    return Path(root) / "sessions"


def list_designs(root) -> list[str]:
    base = designs_dir(root)
    if not base.is_dir():
        return []
    return sorted(p.name for p in base.iterdir() if p.is_dir())


def load_manifest(design_dir) -> dict:
    path = Path(design_dir) / "design.json"
    if not path.is_file():
        return {}
    try:
        data = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise BadManifest(f"{path}: {e}") from e
    if not isinstance(data, dict):
        raise BadManifest(f"{path}: manifest must be a JSON object")
    return data


def _read_sorted(dir_path: Path, prefix: str) -> list[tuple[str, str]]:
    if not dir_path.is_dir():
        return []
    out = []
    for p in sorted(dir_path.glob("*.v")):
        out.append((f"{prefix}/{p.name}", p.read_text()))
    return out


def load_design(root, name: str) -> DesignUnit:
    """Read a design from `<root>/designs/<name>/`.

    Top module comes from the manifest when present, otherwise from the
    unique module no other source module instantiates.
    """
    ddir = designs_dir(root) / name
    if not ddir.is_dir():
        raise MissingDesign(f"no design directory {ddir}")
    sources = _read_sorted(ddir / "src", "src")
    if not sources:
        raise EmptyDesign(f"{name}: no .v files under src/")
    testbenches = _read_sorted(ddir / "tb", "tb")
    if not testbenches:
        raise EmptyDesign(f"{name}: no .v files under tb/")
    manifest = load_manifest(ddir)

    top = manifest.get("top")
    if top is None:
        roots = uninstantiated_modules(text for _, text in sources)
        if len(roots) != 1:
            raise AmbiguousTop(
                f"{name}: no manifest top and {len(roots)} uninstantiated modules "
                f"({', '.join(roots) or 'none'})"
            )
        top = roots[0]

    ref = manifest.get("reference_counts")
    try:
        return DesignUnit(
            name=name,
            source_files=tuple(sources),
            top_module=top,
            testbench_files=tuple(testbenches),
            reference_metrics=ResourceMetrics(ref) if ref else None,
        )
    except ValueError as e:
        # a manifest naming a nonexistent top or bogus counts is a manifest
        # problem, not a caller bug
        raise BadManifest(f"{name}: {e}") from e


def session_dir(root, session_id: str) -> Path:
    return sessions_dir(root) / session_id


def ensure_session_dir(root, session_id: str) -> Path:
    d = session_dir(root, session_id)
    d.mkdir(parents=True, exist_ok=True)
    return d


def events_path(sess_dir) -> Path:
    return Path(sess_dir) / "events.jsonl"


def list_sessions(root) -> list[str]:
    base = sessions_dir(root)
    if not base.is_dir():
        return []
    return sorted(p.name for p in base.iterdir() if (p / "events.jsonl").is_file())


def variant_dir(sess_dir, variant_id: int) -> Path:
    return Path(sess_dir) / "variants" / str(variant_id)


def write_variant(sess_dir, variant: Variant) -> Path:
    vdir = variant_dir(sess_dir, variant.id)
    vdir.mkdir(parents=True, exist_ok=True)
    (vdir / "candidate.v").write_text(variant.source_text)
    if variant.metrics is not None:
        (vdir / "metrics.json").write_text(
            json.dumps(variant.metrics.to_dict(), indent=2) + "\n"
        )
    return vdir


def read_variant_source(sess_dir, variant_id: int) -> str | None:
    path = variant_dir(sess_dir, variant_id) / "candidate.v"
    if not path.is_file():
        return None
    return path.read_text()


def read_variant_metrics(sess_dir, variant_id: int) -> ResourceMetrics | None:
    path = variant_dir(sess_dir, variant_id) / "metrics.json"
    if not path.is_file():
        return None
    return ResourceMetrics.from_dict(json.loads(path.read_text()))


def work_path(root, design_name: str) -> Path:
    return designs_dir(root) / design_name / "work" / f"{design_name}.v"


def accept_variant(root, design_name: str, sess_dir, variant_id: int) -> Path:
    """Copy a variant's source over the design's working copy.

    The reference inputs under src/ are never touched.
    """
    src = variant_dir(sess_dir, variant_id) / "candidate.v"
    if not src.is_file():
        raise FileNotFoundError(str(src))
    dest = work_path(root, design_name)
    dest.parent.mkdir(parents=True, exist_ok=True)
    shutil.copyfile(src, dest)
    return dest
