"""File formats: PGM images, landmark text, HMAP stacks, manifests, reports.

Every format is fixed bit-exactly so outputs are reproducible byte for byte:

* images: binary PGM (P5), 8-bit, maxval 255
* landmarks: text, header ``#count=N`` then one ``index,x,y`` line per point
* heatmap stacks, "HMAP v1": magic ``HMAP``, three little-endian uint32
  (channels, height, width), then channels*height*width little-endian
  float32, row-major within a channel, channel-major overall
* manifests, reports, simulation configs: line-oriented key/value and table
  sections (grammar below)

All writers go through :func:`atomic_write` (temp file + rename) so partial
runs never leave corrupt artifacts.
"""
from __future__ import annotations

import math
import os
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import GrayImage, LandmarkSet, PixelFrame, ValidationError
from .evaluate import ComparisonReport, EvalReport, LandmarkStats
from .fusion import DecodeMethod, FusionConfig
from .heatmap import Heatmap
from .simulate import (
    CoordPredictorModel,
    HeatmapPredictorModel,
    PhantomConfig,
    TrialConfig,
)


def atomic_write(path: str | Path, data: bytes) -> None:
    """Write via a sibling temp file and rename, so readers never see a
    half-written file."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(data)
    os.replace(tmp, path)


def _fmt_float(x: float) -> str:
    # repr round-trips doubles exactly and is the shortest such form
    return repr(float(x))


# ---------------------------------------------------------------------------
# PGM (P5)
# ---------------------------------------------------------------------------

def write_pgm(path: str | Path, img: GrayImage) -> None:
    header = f"P5\n{img.width} {img.height}\n255\n".encode("ascii")
    atomic_write(path, header + img.pixels.tobytes())


def read_pgm(path: str | Path, spacing: float = 1.0) -> GrayImage:
    """Parse a binary PGM. Only 8-bit (maxval <= 255) images are accepted;
    ``spacing`` is attached from the caller since PGM carries no physical
    metadata."""
    data = Path(path).read_bytes()
    pos = 0

    def token() -> bytes:
        nonlocal pos
        while pos < len(data):
            if data[pos:pos + 1].isspace():
                pos += 1
            elif data[pos:pos + 1] == b"#":
                while pos < len(data) and data[pos] != 0x0A:
                    pos += 1
            else:
                break
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ValidationError(f"{path}: truncated PGM header")
        return data[start:pos]

    if token() != b"P5":
        raise ValidationError(f"{path}: not a binary PGM (P5)")
    try:
        width, height, maxval = int(token()), int(token()), int(token())
    except ValueError as exc:
        raise ValidationError(f"{path}: malformed PGM header") from exc
    if maxval != 255:
        raise ValidationError(f"{path}: unsupported maxval {maxval}, need 255")
    pos += 1  # single whitespace byte after maxval
    raster = data[pos:pos + width * height]
    if len(raster) != width * height:
        raise ValidationError(
            f"{path}: raster holds {len(raster)} bytes, expected {width * height}"
        )
    return GrayImage.from_flat(width, height, np.frombuffer(raster, dtype=np.uint8), spacing)


# ---------------------------------------------------------------------------
# landmark text files
# ---------------------------------------------------------------------------

def write_landmarks(path: str | Path, lms: LandmarkSet) -> None:
    lines = [f"#count={len(lms)}"]
    lines += [f"{i},{_fmt_float(x)},{_fmt_float(y)}" for i, (x, y) in enumerate(lms.points)]
    atomic_write(path, ("\n".join(lines) + "\n").encode("ascii"))


def read_landmarks(path: str | Path, frame: PixelFrame | None = None) -> LandmarkSet:
    """Parse a landmark file; ``frame`` attaches pixel-grid bounds when the
    caller knows the image dimensions (a 1x1 placeholder frame otherwise)."""
    text = Path(path).read_text(encoding="ascii")
    lines = [ln.strip() for ln in text.splitlines() if ln.strip()]
    if not lines or not lines[0].startswith("#count="):
        raise ValidationError(f"{path}: missing #count= header")
    try:
        count = int(lines[0][len("#count="):])
    except ValueError as exc:
        raise ValidationError(f"{path}: bad count header {lines[0]!r}") from exc
    rows = lines[1:]
    if len(rows) != count:
        raise ValidationError(f"{path}: header says {count} landmarks, file has {len(rows)}")
    pts = np.empty((count, 2))
    for i, row in enumerate(rows):
        parts = row.split(",")
        if len(parts) != 3:
            raise ValidationError(f"{path}: line {i + 2}: expected index,x,y")
        try:
            idx, x, y = int(parts[0]), float(parts[1]), float(parts[2])
        except ValueError as exc:
            raise ValidationError(f"{path}: line {i + 2}: {row!r}") from exc
        if idx != i:
            raise ValidationError(f"{path}: line {i + 2}: index {idx}, expected {i}")
        pts[i] = (x, y)
    return LandmarkSet(pts, frame if frame is not None else _unbounded_frame(pts))


def _unbounded_frame(pts: np.ndarray) -> PixelFrame:
    # a frame just large enough to contain the points keeps them in bounds
    if pts.size == 0:
        return PixelFrame(1, 1)
    w = max(1, int(math.floor(pts[:, 0].max())) + 1)
    h = max(1, int(math.floor(pts[:, 1].max())) + 1)
    return PixelFrame(w, h)


# ---------------------------------------------------------------------------
# HMAP v1 heatmap stacks
# ---------------------------------------------------------------------------

_HMAP_MAGIC = b"HMAP"


def write_heatmap_stack(path: str | Path, stack: list[Heatmap]) -> None:
    if not stack:
        raise ValidationError("refusing to write an empty heatmap stack")
    h, w = stack[0].values.shape
    for k, hm in enumerate(stack):
        if hm.values.shape != (h, w):
            raise ValidationError(f"channel {k} shape differs from channel 0")
    header = _HMAP_MAGIC + struct.pack("<III", len(stack), h, w)
    body = b"".join(hm.values.astype("<f4").tobytes() for hm in stack)
    atomic_write(path, header + body)


def read_heatmap_stack(path: str | Path) -> list[Heatmap]:
    data = Path(path).read_bytes()
    if len(data) < 16 or data[:4] != _HMAP_MAGIC:
        raise ValidationError(f"{path}: not an HMAP v1 file")
    channels, h, w = struct.unpack("<III", data[4:16])
    expected = 16 + channels * h * w * 4
    if len(data) != expected:
        raise ValidationError(
            f"{path}: {len(data)} bytes, expected {expected} for {channels}x{h}x{w}"
        )
    flat = np.frombuffer(data[16:], dtype="<f4").astype(np.float64)
    return [Heatmap(flat[k * h * w:(k + 1) * h * w].reshape(h, w)) for k in range(channels)]


# ---------------------------------------------------------------------------
# key/value + table section text grammar
# ---------------------------------------------------------------------------
#
# A document is a sequence of lines. Blank lines and lines starting with '#'
# are ignored. '[name]' opens a section; 'key = value' lines belong to the
# current section ('' before any header); any other non-empty line in a
# section is a table row of comma-separated cells.

def _parse_sections(text: str, origin: str) -> dict[str, tuple[dict[str, str], list[list[str]]]]:
    sections: dict[str, tuple[dict[str, str], list[list[str]]]] = {"": ({}, [])}
    current = ""
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if line.startswith("[") and line.endswith("]"):
            current = line[1:-1].strip()
            if current in sections:
                raise ValidationError(f"{origin}: line {lineno}: duplicate section [{current}]")
            sections[current] = ({}, [])
        elif "=" in line:
            key, _, value = line.partition("=")
            sections[current][0][key.strip()] = value.strip()
        else:
            sections[current][1].append([cell.strip() for cell in line.split(",")])
    return sections


def _need(kv: dict[str, str], key: str, origin: str) -> str:
    if key not in kv:
        raise ValidationError(f"{origin}: missing key {key!r}")
    return kv[key]


# ---------------------------------------------------------------------------
# dataset manifests
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ManifestRecord:
    image_path: Path
    landmarks_path: Path
    spacing_mm_per_px: float


@dataclass(frozen=True)
class Manifest:
    """A dataset: per-image records plus global defaults.

    Record paths are stored resolved; in the file they are relative to the
    manifest's own directory, so corpus directories are relocatable.
    """

    records: tuple[ManifestRecord, ...]
    landmark_count: int = 11
    working_size: tuple[int, int] = (512, 512)
    coord_size: tuple[int, int] = (299, 299)


def write_manifest(path: str | Path, manifest: Manifest) -> None:
    path = Path(path)
    lines = [
        "# spinefuse manifest v1",
        f"landmark_count = {manifest.landmark_count}",
        f"working_size = {manifest.working_size[0]} {manifest.working_size[1]}",
        f"coord_size = {manifest.coord_size[0]} {manifest.coord_size[1]}",
        "[images]",
        "# image_path, landmarks_path, spacing_mm_per_px",
    ]
    base = path.parent.resolve()
    for rec in manifest.records:
        img = os.path.relpath(rec.image_path.resolve(), base)
        lmk = os.path.relpath(rec.landmarks_path.resolve(), base)
        lines.append(f"{img}, {lmk}, {_fmt_float(rec.spacing_mm_per_px)}")
    atomic_write(path, ("\n".join(lines) + "\n").encode())


def read_manifest(path: str | Path) -> Manifest:
    path = Path(path)
    sections = _parse_sections(path.read_text(), str(path))
    kv = sections[""][0]
    landmark_count = int(kv.get("landmark_count", "11"))
    if landmark_count < 0:
        raise ValidationError(f"{path}: negative landmark_count")

    def _size(key: str, default: tuple[int, int]) -> tuple[int, int]:
        if key not in kv:
            return default
        parts = kv[key].split()
        if len(parts) != 2:
            raise ValidationError(f"{path}: {key} needs two integers")
        w, h = int(parts[0]), int(parts[1])
        if w <= 0 or h <= 0:
            raise ValidationError(f"{path}: non-positive {key}")
        return w, h

    if "images" not in sections:
        raise ValidationError(f"{path}: missing [images] section")
    base = path.parent
    records = []
    for row in sections["images"][1]:
        if len(row) != 3:
            raise ValidationError(
                f"{path}: image row needs image_path, landmarks_path, spacing, got {row}"
            )
        spacing = float(row[2])
        if not (math.isfinite(spacing) and spacing > 0):
            raise ValidationError(f"{path}: non-positive spacing {row[2]}")
        img = (base / row[0]).resolve()
        lmk = (base / row[1]).resolve()
        for p in (img, lmk):
            if not p.is_file():
                raise FileNotFoundError(f"{path}: referenced file missing: {p}")
        records.append(ManifestRecord(img, lmk, spacing))
    return Manifest(
        records=tuple(records),
        landmark_count=landmark_count,
        working_size=_size("working_size", (512, 512)),
        coord_size=_size("coord_size", (299, 299)),
    )


# ---------------------------------------------------------------------------
# evaluation reports
# ---------------------------------------------------------------------------

_PER_LANDMARK_HEADER = "# index, total, hits, mean_error_mm, max_error_mm"


def _report_body(report: EvalReport) -> tuple[list[str], list[str]]:
    lines = [
        f"total = {report.total}",
        f"hits = {report.hits}",
        f"accuracy = {report.accuracy:.6f}",
        f"threshold_mm = {_fmt_float(report.threshold_mm)}",
        f"spacing_mm_per_px = {_fmt_float(report.spacing_mm_per_px)}",
    ]
    rows = [_PER_LANDMARK_HEADER]
    for row in report.per_landmark:
        rows.append(
            f"{row.index}, {row.total}, {row.hits}, "
            f"{row.mean_error_mm:.6f}, {row.max_error_mm:.6f}"
        )
    return lines, rows


def write_report(path: str | Path, report: EvalReport) -> None:
    kv, rows = _report_body(report)
    lines = ["# spinefuse report v1", "[summary]"] + kv + ["[per_landmark]"] + rows
    atomic_write(path, ("\n".join(lines) + "\n").encode())


def format_report(report: EvalReport) -> str:
    kv, rows = _report_body(report)
    return "\n".join(["# spinefuse report v1", "[summary]"] + kv + ["[per_landmark]"] + rows) + "\n"


def _parse_report_sections(kv: dict[str, str], rows: list[list[str]], origin: str) -> EvalReport:
    per = []
    for row in rows:
        if len(row) != 5:
            raise ValidationError(f"{origin}: per-landmark row needs 5 cells, got {row}")
        per.append(LandmarkStats(int(row[0]), int(row[1]), int(row[2]),
                                 float(row[3]), float(row[4])))
    return EvalReport(
        total=int(_need(kv, "total", origin)),
        hits=int(_need(kv, "hits", origin)),
        threshold_mm=float(_need(kv, "threshold_mm", origin)),
        spacing_mm_per_px=float(_need(kv, "spacing_mm_per_px", origin)),
        per_landmark=tuple(per),
    )


def read_report(path: str | Path) -> EvalReport:
    path = Path(path)
    sections = _parse_sections(path.read_text(), str(path))
    if "summary" not in sections or "per_landmark" not in sections:
        raise ValidationError(f"{path}: report needs [summary] and [per_landmark]")
    return _parse_report_sections(sections["summary"][0],
                                  sections["per_landmark"][1], str(path))


def format_comparison(report: ComparisonReport) -> str:
    lines = [
        "# spinefuse comparison report v1",
        f"images = {report.images}",
        f"landmarks_per_image = {report.landmarks_per_image}",
        f"threshold_mm = {_fmt_float(report.threshold_mm)}",
        f"spacing_mm_per_px = {_fmt_float(report.spacing_mm_per_px)}",
    ]
    for name, rep in report.methods.items():
        kv, rows = _report_body(rep)
        lines += [f"[method {name}]"] + kv
        lines += [f"[method {name} per_landmark]"] + rows
    deltas = report.deltas()
    if deltas:
        lines.append("[deltas]")
        for name, (absolute, relative) in deltas.items():
            lines.append(f"{name}_absolute = {absolute:.6f}")
            lines.append(f"{name}_relative = {relative:.6f}")
    return "\n".join(lines) + "\n"


def write_comparison(path: str | Path, report: ComparisonReport) -> None:
    atomic_write(path, format_comparison(report).encode())


def read_comparison(path: str | Path) -> ComparisonReport:
    path = Path(path)
    sections = _parse_sections(path.read_text(), str(path))
    kv = sections[""][0]
    methods: dict[str, EvalReport] = {}
    for name in sections:
        if name.startswith("method ") and not name.endswith(" per_landmark"):
            method = name[len("method "):]
            rows_section = f"method {method} per_landmark"
            if rows_section not in sections:
                raise ValidationError(f"{path}: missing [{rows_section}]")
            methods[method] = _parse_report_sections(
                sections[name][0], sections[rows_section][1], str(path)
            )
    if not methods:
        raise ValidationError(f"{path}: no [method ...] sections")
    return ComparisonReport(
        images=int(_need(kv, "images", str(path))),
        landmarks_per_image=int(_need(kv, "landmarks_per_image", str(path))),
        threshold_mm=float(_need(kv, "threshold_mm", str(path))),
        spacing_mm_per_px=float(_need(kv, "spacing_mm_per_px", str(path))),
        methods=methods,
    )


# ---------------------------------------------------------------------------
# simulation configs
# ---------------------------------------------------------------------------

def write_sim_config(path: str | Path, config: TrialConfig) -> None:
    f = config.fusion
    sigma = (" ".join(_fmt_float(s) for s in f.prior_sigma)
             if isinstance(f.prior_sigma, tuple) else _fmt_float(f.prior_sigma))
    lines = [
        "# spinefuse sim config v1",
        "[phantom]",
        f"landmarks = {config.phantom.landmarks}",
        f"grid = {config.phantom.width} {config.phantom.height}",
        f"spacing_mm_per_px = {_fmt_float(config.phantom.spacing_mm_per_px)}",
        f"chain_spacing_px = {_fmt_float(config.phantom.chain_spacing_px)}",
        f"wobble_px = {_fmt_float(config.phantom.wobble_px)}",
        "[coords_model]",
        f"noise_sigma_px = {_fmt_float(config.coords.noise_sigma)}",
        f"outlier_rate = {_fmt_float(config.coords.outlier_rate)}",
        f"outlier_sigma_px = {_fmt_float(config.coords.outlier_sigma)}",
        "[heatmap_model]",
        f"peak_jitter_sigma_px = {_fmt_float(config.heatmaps.peak_jitter_sigma)}",
        f"heatmap_sigma_px = {_fmt_float(config.heatmaps.heatmap_sigma)}",
        f"adjacent_confusion_prob = {_fmt_float(config.heatmaps.adjacent_confusion_prob)}",
        f"spurious_amplitude = {_fmt_float(config.heatmaps.spurious_amplitude[0])} "
        f"{_fmt_float(config.heatmaps.spurious_amplitude[1])}",
        "[fusion]",
        f"prior_sigma_px = {sigma}",
        f"floor_epsilon = {_fmt_float(f.floor_epsilon)}",
        f"decode = {f.decode.value}",
        "[run]",
        f"images = {config.images}",
        f"threshold_mm = {_fmt_float(config.threshold_mm)}",
    ]
    atomic_write(path, ("\n".join(lines) + "\n").encode())


def read_sim_config(path: str | Path) -> TrialConfig:
    path = Path(path)
    sections = _parse_sections(path.read_text(), str(path))
    for name in ("phantom", "coords_model", "heatmap_model", "fusion", "run"):
        if name not in sections:
            raise ValidationError(f"{path}: missing [{name}] section")
    ph = sections["phantom"][0]
    grid = _need(ph, "grid", str(path)).split()
    if len(grid) != 2:
        raise ValidationError(f"{path}: grid needs two integers")
    cm = sections["coords_model"][0]
    hm = sections["heatmap_model"][0]
    amp = _need(hm, "spurious_amplitude", str(path)).split()
    if len(amp) != 2:
        raise ValidationError(f"{path}: spurious_amplitude needs two values")
    fu = sections["fusion"][0]
    sigma_parts = _need(fu, "prior_sigma_px", str(path)).split()
    prior_sigma = (float(sigma_parts[0]) if len(sigma_parts) == 1
                   else tuple(float(s) for s in sigma_parts))
    decode_raw = fu.get("decode", "argmax")
    try:
        decode = DecodeMethod(decode_raw)
    except ValueError as exc:
        raise ValidationError(f"{path}: unknown decode method {decode_raw!r}") from exc
    run = sections["run"][0]
    return TrialConfig(
        phantom=PhantomConfig(
            landmarks=int(_need(ph, "landmarks", str(path))),
            width=int(grid[0]),
            height=int(grid[1]),
            spacing_mm_per_px=float(_need(ph, "spacing_mm_per_px", str(path))),
            chain_spacing_px=float(_need(ph, "chain_spacing_px", str(path))),
            wobble_px=float(_need(ph, "wobble_px", str(path))),
        ),
        coords=CoordPredictorModel(
            noise_sigma=float(_need(cm, "noise_sigma_px", str(path))),
            outlier_rate=float(cm.get("outlier_rate", "0")),
            outlier_sigma=float(cm.get("outlier_sigma_px", "0")),
        ),
        heatmaps=HeatmapPredictorModel(
            peak_jitter_sigma=float(_need(hm, "peak_jitter_sigma_px", str(path))),
            heatmap_sigma=float(_need(hm, "heatmap_sigma_px", str(path))),
            adjacent_confusion_prob=float(_need(hm, "adjacent_confusion_prob", str(path))),
            spurious_amplitude=(float(amp[0]), float(amp[1])),
        ),
        fusion=FusionConfig(
            prior_sigma=prior_sigma,
            floor_epsilon=float(fu.get("floor_epsilon", "1e-12")),
            decode=decode,
        ),
        threshold_mm=float(_need(run, "threshold_mm", str(path))),
        images=int(_need(run, "images", str(path))),
    )
