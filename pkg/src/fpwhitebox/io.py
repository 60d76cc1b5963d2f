"""Template and image files, run manifests, and report emission."""
from __future__ import annotations

import csv
import io
import json
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np
from PIL import Image

from .core import (
    CaptureCondition,
    ConditionMetadata,
    DataError,
    Minutia,
    MinutiaeSet,
    GrayscaleImage,
)
from .matcher import ExternalSystem
from .perturb import PerturbationSpec

EVAL_KINDS = ("reader", "extractor", "matcher", "blackbox")


class TemplateFormatError(DataError):
    """A template file violates the text format; ``kind`` names the rule broken."""

    def __init__(self, path: str | os.PathLike, line: int, kind: str, message: str):
        super().__init__(f"{path}:{line}: {kind}: {message}")
        self.path = str(path)
        self.line = line
        self.kind = kind


class ManifestError(DataError):
    pass


# ---------------------------------------------------------------- templates
#
# line 1   MINUTIAE <count> <width> <height> <dpi>
# then     <count> lines "x y theta [quality]"
# '#' starts a comment line; blank lines are ignored.


def parse_template(text: str, source: str = "<string>") -> MinutiaeSet:
    header: tuple[int, int, int, int] | None = None
    header_line = 0
    rows: list[tuple[int, Minutia]] = []
    for lineno, raw in enumerate(text.split("\n"), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        fields = line.split()
        if header is None:
            if len(fields) != 5 or fields[0] != "MINUTIAE":
                raise TemplateFormatError(source, lineno, "header",
                                          "expected 'MINUTIAE <count> <width> <height> <dpi>'")
            try:
                count, width, height, dpi = (int(f) for f in fields[1:])
            except ValueError as exc:
                raise TemplateFormatError(source, lineno, "header", "header fields must be integers") from exc
            if count < 0 or width <= 0 or height <= 0 or dpi <= 0:
                raise TemplateFormatError(source, lineno, "header", "count must be >= 0, dimensions and dpi > 0")
            header, header_line = (count, width, height, dpi), lineno
            continue
        if len(fields) not in (3, 4):
            raise TemplateFormatError(source, lineno, "value", "expected 'x y theta [quality]'")
        try:
            x, y = int(fields[0]), int(fields[1])
            theta = float(fields[2])
            quality = float(fields[3]) if len(fields) == 4 else None
        except ValueError as exc:
            raise TemplateFormatError(source, lineno, "value", f"cannot parse {line!r}") from exc
        if x < 0 or y < 0:
            raise TemplateFormatError(source, lineno, "bounds", "coordinates must be non-negative")
        if not math.isfinite(theta) or not 0.0 <= theta < 2 * math.pi:
            raise TemplateFormatError(source, lineno, "value", f"theta {theta} outside [0, 2π)")
        if quality is not None and not 0.0 <= quality <= 1.0:
            raise TemplateFormatError(source, lineno, "value", f"quality {quality} outside [0, 1]")
        if x >= header[1] or y >= header[2]:
            raise TemplateFormatError(source, lineno, "bounds",
                                      f"({x}, {y}) outside {header[1]}x{header[2]} image")
        rows.append((lineno, Minutia(float(x), float(y), theta, quality)))
    if header is None:
        raise TemplateFormatError(source, 1, "header", "missing MINUTIAE header")
    count, width, height, dpi = header
    if len(rows) != count:
        line = rows[count][0] if len(rows) > count else header_line
        raise TemplateFormatError(source, line, "count", f"header declares {count} minutiae, found {len(rows)}")
    return MinutiaeSet(tuple(m for _, m in rows), width, height, dpi)


def load_template(path: str | os.PathLike) -> MinutiaeSet:
    p = Path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except UnicodeDecodeError as exc:
        raise TemplateFormatError(p, 1, "encoding", "template is not UTF-8") from exc
    return parse_template(text, str(p))


def format_template(s: MinutiaeSet, drop_out_of_bounds: bool = False, comment: str | None = None) -> str:
    """Serialise a set; coordinates round to the nearest pixel.

    Minutiae outside the image cannot be written; they raise unless
    ``drop_out_of_bounds`` is set, in which case they are omitted.
    """
    lines = []
    for i, m in enumerate(s):
        x, y = int(round(m.x)), int(round(m.y))
        if not (0 <= x < s.width and 0 <= y < s.height):
            if drop_out_of_bounds:
                continue
            raise DataError(f"minutia {i} at ({m.x}, {m.y}) lies outside the image")
        fields = [str(x), str(y), repr(float(m.theta))]
        if m.quality is not None:
            fields.append(repr(float(m.quality)))
        lines.append(" ".join(fields))
    head = [f"# {comment}"] if comment else []
    head.append(f"MINUTIAE {len(lines)} {s.width} {s.height} {s.resolution}")
    return "\n".join(head + lines) + "\n"


def save_template(s: MinutiaeSet, path: str | os.PathLike, drop_out_of_bounds: bool = False,
                  comment: str | None = None) -> Path:
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    with open(p, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(format_template(s, drop_out_of_bounds, comment))
    return p


# ---------------------------------------------------------------- images


def load_image(path: str | os.PathLike, resolution: int = 500) -> GrayscaleImage:
    """Read an 8-bit grayscale PNG or PGM."""
    try:
        with Image.open(path) as im:
            if im.mode != "L":
                im = im.convert("L")
            px = np.asarray(im, dtype=np.uint8).copy()
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot read image {path}: {exc}") from exc
    return GrayscaleImage(px, resolution)


def save_image(img: GrayscaleImage | np.ndarray, path: str | os.PathLike) -> Path:
    px = img.pixels if isinstance(img, GrayscaleImage) else np.asarray(img)
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(np.ascontiguousarray(px, dtype=np.uint8), mode="L").save(p)
    return p


# ---------------------------------------------------------------- manifests


@dataclass(frozen=True)
class Record:
    id: str
    finger: str
    image: Path | None
    template: Path | None = None
    ground_truth: Path | None = None
    impression: int = 1
    reader: str = "default"
    condition: CaptureCondition | None = None
    metadata: ConditionMetadata | None = None


@dataclass(frozen=True)
class SystemSpec:
    """A system under test: the built-in baseline or an external executable.

    ``inputs`` says what an external matcher receives in black-box runs:
    ``"template"`` (the records' templates) or ``"image"``.
    """

    name: str
    type: str = "baseline"
    role: str = "matcher"
    external: ExternalSystem | None = None
    inputs: str = "template"

    @property
    def score_range(self) -> tuple[float, float]:
        return self.external.score_range if self.external else (0.0, 1.0)


@dataclass
class RunManifest:
    kind: str
    records: list[Record]
    systems: list[SystemSpec] = field(default_factory=list)
    perturbations: list[PerturbationSpec] = field(default_factory=list)
    seed: int = 0
    output_dir: Path = Path("out")
    dataset_root: Path = Path(".")
    resolution: int = 500
    far: float = 0.001
    trials: int = 1
    source: Path | None = None

    def systems_for(self, role: str) -> list[SystemSpec]:
        return [s for s in self.systems if s.role == role]


def _resolve(base: Path, value: str | None) -> Path | None:
    if value is None:
        return None
    p = Path(value)
    return p if p.is_absolute() else base / p


def _parse_system(d: dict[str, Any], base: Path) -> SystemSpec:
    if "name" not in d:
        raise ManifestError(f"system entry lacks a name: {d!r}")
    stype = d.get("type", "baseline")
    role = d.get("role", "matcher")
    inputs = d.get("inputs", "template")
    if inputs not in ("template", "image"):
        raise ManifestError(f"system {d['name']}: inputs must be 'template' or 'image'")
    if stype == "baseline":
        if role not in ("matcher", "quality"):
            raise ManifestError(f"system {d['name']}: the baseline only provides matcher and quality roles")
        return SystemSpec(d["name"], "baseline", role, None, "template")
    if stype != "external":
        raise ManifestError(f"system {d['name']}: unknown type {stype!r}")
    if "executable" not in d:
        raise ManifestError(f"system {d['name']}: external systems need an executable")
    exe = _resolve(base, d["executable"])
    if not exe.exists():
        raise ManifestError(f"system {d['name']}: executable {exe} not found")
    lo, hi = d.get("score_range", (0.0, 1.0))
    ext = ExternalSystem(str(exe), (float(lo), float(hi)), float(d.get("timeout", 30.0)), role, d["name"])
    return SystemSpec(d["name"], "external", role, ext, inputs)


def parse_manifest(doc: dict[str, Any], base_dir: str | os.PathLike, check_paths: bool = True) -> RunManifest:
    base = Path(base_dir)
    kind = doc.get("kind")
    if kind not in EVAL_KINDS:
        raise ManifestError(f"manifest kind must be one of {EVAL_KINDS}, got {kind!r}")
    root = _resolve(base, doc.get("dataset_root", "."))
    resolution = int(doc.get("resolution", 500))
    records = []
    seen: set[str] = set()
    for i, r in enumerate(doc.get("records", [])):
        rid = str(r.get("id", f"record{i:05d}"))
        if rid in seen:
            raise ManifestError(f"duplicate record id {rid!r}")
        seen.add(rid)
        finger = str(r.get("finger", "")).strip()
        if not finger:
            raise ManifestError(f"record {rid}: finger id must be non-empty")
        cond = r.get("condition")
        meta = r.get("metadata")
        rec = Record(
            id=rid,
            finger=finger,
            image=_resolve(root, r.get("image")),
            template=_resolve(root, r.get("template")),
            ground_truth=_resolve(root, r.get("ground_truth")),
            impression=int(r.get("impression", 1)),
            reader=str(r.get("reader", "default")),
            condition=CaptureCondition.parse(cond) if cond is not None else None,
            metadata=ConditionMetadata(**meta) if meta else None,
        )
        if check_paths:
            for attr in ("image", "template", "ground_truth"):
                p = getattr(rec, attr)
                if p is not None and not p.exists():
                    raise ManifestError(f"record {rid}: {attr} {p} does not exist")
        records.append(rec)
    systems = [_parse_system(s, base) for s in doc.get("systems", [])]
    names = [s.name for s in systems]
    if len(set(names)) != len(names):
        raise ManifestError("system names must be unique")
    perts = [PerturbationSpec.from_dict(p) for p in doc.get("perturbations", [])]
    far = float(doc.get("far", 0.001))
    if not 0.0 < far < 1.0:
        raise ManifestError(f"far must lie in (0, 1), got {far}")
    trials = int(doc.get("trials", 1))
    if trials < 1:
        raise ManifestError("trials must be >= 1")
    return RunManifest(
        kind=kind,
        records=records,
        systems=systems,
        perturbations=perts,
        seed=int(doc.get("seed", 0)),
        output_dir=_resolve(base, doc.get("output_dir", "out")),
        dataset_root=root,
        resolution=resolution,
        far=far,
        trials=trials,
    )


def load_manifest(path: str | os.PathLike, check_paths: bool = True) -> RunManifest:
    p = Path(path)
    try:
        doc = json.loads(p.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ManifestError(f"{p}: invalid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ManifestError(f"{p}: manifest must be a JSON object")
    m = parse_manifest(doc, p.parent, check_paths)
    m.source = p
    return m


# ---------------------------------------------------------------- reports


@dataclass
class Table:
    name: str
    columns: list[str]
    rows: list[list[Any]]


def _cell(v: Any) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        if math.isnan(v):
            return ""
        return f"{v:.6f}"
    return str(v)


def table_csv(t: Table) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(t.columns)
    for row in t.rows:
        w.writerow([_cell(v) for v in row])
    return buf.getvalue()


def jsonable(obj: Any) -> Any:
    """Convert to plain JSON types; NaN/inf become ``None``."""
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.ndarray):
        return jsonable(obj.tolist())
    if isinstance(obj, Path):
        return obj.as_posix()
    if isinstance(obj, (CaptureCondition,)):
        return obj.value
    return obj


def dumps_report(doc: dict) -> str:
    return json.dumps(jsonable(doc), sort_keys=True, indent=2, allow_nan=False) + "\n"


def write_reports(out_dir: str | os.PathLike, report: dict, tables: Sequence[Table]) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    p = out / "report.json"
    with open(p, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(dumps_report(report))
    written.append(p)
    for t in tables:
        p = out / f"{t.name}.csv"
        with open(p, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(table_csv(t))
        written.append(p)
    return written
