"""Distillation dataset building: time-aligned (event slice, proxy label)
pairs, manifest files, per-sample training-step computation, stack export.

A manifest is a pure function of the input directories: frames give the
reference timestamps (each slice ends exactly at its frame's time), proxies
pair with frames by filename stem, and records are ordered by timestamp no
matter how the filesystem lists them. Proxy labels are consumed as files;
producing them (running a teacher model) is out of scope, so the teacher is
recorded as provenance only. Frames whose slice is empty stay in the
manifest, flagged, because static intervals are exactly what the recurrent
runner is for; ``drop_empty`` removes them.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import ENCODER_DEFAULTS, LOSS_DEFAULTS
from .errors import BuildError, ContractError, FormatError, ParameterError
from .events import EventStream, read_events, slice_sbn, slice_sbt
from .imgio import depth_valid_mask, load_depth, load_mask_pgm
from .losses import LossReport, loss_total
from .naming import timestamped_files
from .stacks import StackLayout, encode, save_stack_pfm, save_stack_ppm

MANIFEST_VERSION = 1
FRAME_SUFFIXES = (".pgm", ".ppm", ".pfm", ".png", ".jpg")
DEPTH_SUFFIXES = (".pfm", ".pgm")


@dataclass(frozen=True)
class SampleRecord:
    t_d_us: int
    events_path: str
    t_start_us: int
    t_end_us: int
    proxy_path: str
    gt_path: str | None
    mask_path: str | None  # None = fully valid proxy mask
    width: int
    height: int
    empty_slice: bool


@dataclass(frozen=True)
class EncoderSpec:
    layout: str  # voxel | imagelike | tencode
    mode: str  # sbt | sbn
    window_us: int | None = None
    count: int | None = None
    bins: int | None = None


@dataclass(frozen=True)
class Provenance:
    teacher: str
    lam: float
    k_scales: int


@dataclass(frozen=True)
class DatasetManifest:
    encoder: EncoderSpec
    provenance: Provenance
    records: tuple[SampleRecord, ...]


def _find_by_stem(directory: Path | None, stem: str, suffixes) -> Path | None:
    if directory is None:
        return None
    for suffix in suffixes:
        candidate = directory / (stem + suffix)
        if candidate.is_file():
            return candidate
    return None


def build_manifest(
    events_path,
    frames_dir,
    proxy_dir,
    *,
    window_us: int = ENCODER_DEFAULTS.window_us,
    mode: str = "sbt",
    count: int | None = None,
    layout: str = "tencode",
    bins: int | None = None,
    gt_dir=None,
    mask_dir=None,
    teacher: str = "unspecified",
    lam: float = LOSS_DEFAULTS.lam,
    k_scales: int = LOSS_DEFAULTS.k_scales,
    drop_empty: bool = False,
) -> DatasetManifest:
    """One record per frame, slices ending at the frame timestamps."""
    if mode not in ("sbt", "sbn"):
        raise ParameterError(f"mode must be 'sbt' or 'sbn', got {mode!r}")
    if mode == "sbn" and (count is None or count < 1):
        raise ParameterError("sbn mode needs a positive event count")
    if layout not in [lay.value for lay in StackLayout]:
        raise ParameterError(f"unknown layout {layout!r}")
    if layout == "voxel" and bins is None:
        bins = ENCODER_DEFAULTS.voxel_bins

    events_path = Path(events_path).resolve()
    proxy_dir = Path(proxy_dir)
    gt_dir = Path(gt_dir) if gt_dir else None
    mask_dir = Path(mask_dir) if mask_dir else None
    stream = read_events(events_path)
    frames = timestamped_files(frames_dir, suffixes=FRAME_SUFFIXES)
    if not frames:
        raise BuildError(f"no frames found under {frames_dir}")

    records = []
    missing = []
    for t_d, frame_path in frames:
        stem = frame_path.stem
        proxy = _find_by_stem(proxy_dir, stem, DEPTH_SUFFIXES)
        if proxy is None:
            missing.append(f"{stem} (t_d={t_d})")
            continue
        mask_path = None
        if mask_dir is not None:
            mask = _find_by_stem(mask_dir, stem, (".pgm",))
            if mask is None:
                missing.append(f"{stem} (t_d={t_d}, mask)")
                continue
            mask_path = str(mask.resolve())
        gt = _find_by_stem(gt_dir, stem, DEPTH_SUFFIXES)
        sl = (
            slice_sbt(stream, t_d, window_us)
            if mode == "sbt"
            else slice_sbn(stream, t_d, count)
        )
        records.append(
            SampleRecord(
                t_d_us=t_d,
                events_path=str(events_path),
                t_start_us=sl.t_start_us,
                t_end_us=sl.t_end_us,
                proxy_path=str(proxy.resolve()),
                gt_path=str(gt.resolve()) if gt else None,
                mask_path=mask_path,
                width=stream.width,
                height=stream.height,
                empty_slice=len(sl) == 0,
            )
        )
    if missing:
        raise BuildError("missing proxy/mask files for frames: " + ", ".join(missing))
    if drop_empty:
        records = [r for r in records if not r.empty_slice]
    encoder = EncoderSpec(
        layout=layout,
        mode=mode,
        window_us=window_us if mode == "sbt" else None,
        count=count if mode == "sbn" else None,
        bins=bins if layout == "voxel" else None,
    )
    return DatasetManifest(
        encoder=encoder,
        provenance=Provenance(teacher=teacher, lam=lam, k_scales=k_scales),
        records=tuple(records),
    )


# ---------------------------------------------------------------------------
# Manifest file format (versioned JSON)


def save_manifest(manifest: DatasetManifest, path) -> None:
    payload = {
        "version": MANIFEST_VERSION,
        "encoder": {
            "layout": manifest.encoder.layout,
            "mode": manifest.encoder.mode,
            "window_us": manifest.encoder.window_us,
            "count": manifest.encoder.count,
            "bins": manifest.encoder.bins,
        },
        "provenance": {
            "teacher": manifest.provenance.teacher,
            "lambda": manifest.provenance.lam,
            "k_scales": manifest.provenance.k_scales,
        },
        "records": [
            {
                "t_d_us": r.t_d_us,
                "events_path": r.events_path,
                "t_start_us": r.t_start_us,
                "t_end_us": r.t_end_us,
                "proxy_path": r.proxy_path,
                "gt_path": r.gt_path,
                "mask_path": r.mask_path,
                "width": r.width,
                "height": r.height,
                "empty_slice": r.empty_slice,
            }
            for r in manifest.records
        ],
    }
    with open(path, "w", encoding="ascii") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_manifest(path) -> DatasetManifest:
    with open(path, "r", encoding="ascii") as fh:
        payload = json.load(fh)
    if payload.get("version") != MANIFEST_VERSION:
        raise FormatError(f"{path}: unsupported manifest version {payload.get('version')!r}")
    enc = payload["encoder"]
    prov = payload["provenance"]
    records = tuple(
        SampleRecord(
            t_d_us=r["t_d_us"],
            events_path=r["events_path"],
            t_start_us=r["t_start_us"],
            t_end_us=r["t_end_us"],
            proxy_path=r["proxy_path"],
            gt_path=r.get("gt_path"),
            mask_path=r.get("mask_path"),
            width=r["width"],
            height=r["height"],
            empty_slice=r["empty_slice"],
        )
        for r in payload["records"]
    )
    prev = None
    for r in records:
        if prev is not None and r.t_d_us <= prev:
            raise FormatError(f"{path}: record timestamps must strictly increase at {r.t_d_us}")
        prev = r.t_d_us
    return DatasetManifest(
        encoder=EncoderSpec(
            layout=enc["layout"],
            mode=enc["mode"],
            window_us=enc.get("window_us"),
            count=enc.get("count"),
            bins=enc.get("bins"),
        ),
        provenance=Provenance(
            teacher=prov["teacher"], lam=prov["lambda"], k_scales=prov["k_scales"]
        ),
        records=records,
    )


# ---------------------------------------------------------------------------
# Per-sample supervision


@dataclass(frozen=True)
class TrainingStep:
    proxy_report: LossReport | None
    gt_report: LossReport | None
    total: float
    grad: np.ndarray


def _record_mask(record: SampleRecord, shape) -> np.ndarray:
    if record.mask_path is None:
        return np.ones(shape, dtype=bool)
    mask = load_mask_pgm(record.mask_path)
    if mask.shape != shape:
        raise ContractError(f"mask {record.mask_path} shape {mask.shape}, expected {shape}")
    return mask


def _load_target(path_str: str, record: SampleRecord, kind: str) -> np.ndarray:
    path = Path(path_str)
    if not path.is_file():
        raise FileNotFoundError(f"record t_d={record.t_d_us}: missing {kind} file {path}")
    target = load_depth(path)
    if target.shape != (record.height, record.width):
        raise ContractError(
            f"record t_d={record.t_d_us}: {kind} shape {target.shape}, "
            f"expected {(record.height, record.width)}"
        )
    return target


def training_step(
    record: SampleRecord,
    pred: np.ndarray,
    lam: float = LOSS_DEFAULTS.lam,
    k_scales: int = LOSS_DEFAULTS.k_scales,
    mode: str = "proxy",
) -> TrainingStep:
    """Loss and gradient of a prediction against a record's targets.

    ``proxy`` supervises on the distilled label under the record mask;
    ``gt`` on the ground-truth depth under its own validity; ``combined``
    adds both (the record must carry both targets).
    """
    if mode not in ("proxy", "gt", "combined"):
        raise ParameterError(f"mode must be proxy|gt|combined, got {mode!r}")
    pred = np.asarray(pred, dtype=np.float64)
    if pred.shape != (record.height, record.width):
        raise ContractError(
            f"prediction shape {pred.shape}, sensor is {(record.height, record.width)}"
        )
    proxy_report = gt_report = None
    total = 0.0
    grad = np.zeros(pred.shape, dtype=np.float64)
    if mode in ("proxy", "combined"):
        proxy = _load_target(record.proxy_path, record, "proxy")
        mask = _record_mask(record, pred.shape)
        proxy_report, proxy_grad = loss_total(pred, proxy, mask, lam, k_scales)
        total += proxy_report.total
        grad += proxy_grad
    if mode in ("gt", "combined"):
        if record.gt_path is None:
            raise ParameterError(f"record t_d={record.t_d_us} has no ground-truth target")
        gt = _load_target(record.gt_path, record, "ground-truth")
        gt_mask = depth_valid_mask(gt) & _record_mask(record, pred.shape)
        gt_report, gt_grad = loss_total(pred, gt, gt_mask, lam, k_scales)
        total += gt_report.total
        grad += gt_grad
    return TrainingStep(proxy_report, gt_report, total, grad)


# ---------------------------------------------------------------------------
# Stack export


def _rebuild_slice(stream: EventStream, record: SampleRecord, encoder: EncoderSpec):
    if encoder.mode == "sbt":
        sl = slice_sbt(stream, record.t_d_us, encoder.window_us)
    else:
        sl = slice_sbn(stream, record.t_d_us, encoder.count)
    if sl.t_start_us != record.t_start_us or (len(sl) == 0) != record.empty_slice:
        raise ContractError(
            f"record t_d={record.t_d_us}: events file no longer matches manifest interval"
        )
    return sl


def export_stacks(manifest: DatasetManifest, out_dir, fmt: str = "pfm") -> list[Path]:
    """Encode every record to ``<t_d:012>.pfm/.ppm``; reruns are byte-identical."""
    if fmt not in ("pfm", "ppm"):
        raise ParameterError(f"format must be pfm or ppm, got {fmt!r}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    layout = StackLayout(manifest.encoder.layout)
    streams: dict[str, EventStream] = {}
    written = []
    for record in manifest.records:
        stream = streams.get(record.events_path)
        if stream is None:
            stream = read_events(record.events_path)
            streams[record.events_path] = stream
        sl = _rebuild_slice(stream, record, manifest.encoder)
        stack = encode(sl, layout, bins=manifest.encoder.bins or ENCODER_DEFAULTS.voxel_bins)
        target = out_dir / f"{record.t_d_us:012d}.{fmt}"
        if fmt == "pfm":
            written.extend(save_stack_pfm(stack, target))
        else:
            written.append(save_stack_ppm(stack, target))
    return written


def export_tencode_set(manifest: DatasetManifest, out_dir, fmt: str = "pfm") -> list[Path]:
    """Tencode-specific export; the manifest's encoder layout must agree."""
    if manifest.encoder.layout != StackLayout.TENCODE.value:
        raise ParameterError(
            f"manifest encodes {manifest.encoder.layout!r}, expected tencode"
        )
    return export_stacks(manifest, out_dir, fmt=fmt)
