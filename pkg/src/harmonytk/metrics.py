"""Evaluation metrics and report tables: MSE, PSNR, fMSE, ratio buckets.

All metrics run on the 0-255 scale after a bilinear resize to 256x256 and
8-bit quantization, so numbers are comparable across source resolutions.
"""
from __future__ import annotations

import csv
import json
import logging
import sys
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from .imgcore import (
    ImageRGB,
    MaskImage,
    MaskError,
    foreground_ratio,
    from_u8,
    quantize_u8,
    read_image,
    read_mask,
    resize_bilinear,
    resize_nearest,
)

log = logging.getLogger(__name__)

EVAL_SIZE = 256
PSNR_CAP = 100.0
PEAK_SQ = 255.0 ** 2
BUCKET_EDGES = (0.0, 0.05, 0.15, 1.0)


@dataclass(frozen=True)
class ImagePairEval:
    record_id: str
    mse: float
    psnr: float
    fmse: float
    foreground_ratio: float
    method: str = ""
    category: str = ""
    sub_dataset: str = ""


@dataclass
class MetricsReport:
    per_image: list[ImagePairEval]
    aggregates: dict
    bucket_edges: tuple
    skipped: int = 0


def _check_dims(a: ImageRGB, b: ImageRGB) -> None:
    if a.data.shape != b.data.shape:
        raise ValueError(f"dimension mismatch {a.data.shape} vs {b.data.shape}")


def mse(a: ImageRGB, b: ImageRGB) -> float:
    """Mean squared difference over all H*W*3 entries, 0-255 scale."""
    _check_dims(a, b)
    diff = (a.data - b.data) * 255.0
    return float(np.mean(diff * diff))


def psnr_from_mse(value: float) -> float:
    if value < PEAK_SQ * 1e-10:
        return PSNR_CAP
    return float(10.0 * np.log10(PEAK_SQ / value))


def psnr(a: ImageRGB, b: ImageRGB) -> float:
    return psnr_from_mse(mse(a, b))


def fmse(a: ImageRGB, b: ImageRGB, mask: MaskImage) -> float:
    """MSE restricted to foreground pixels; denominator is fg_count * 3."""
    _check_dims(a, b)
    if (a.height, a.width) != (mask.height, mask.width):
        raise MaskError("image/mask dimension mismatch")
    n = mask.foreground_count()
    if n == 0:
        raise MaskError("mask has no foreground pixels")
    diff = (a.data[mask.data] - b.data[mask.data]) * 255.0
    return float((diff * diff).sum() / (n * 3))


def bucket_index(ratio: float, edges=BUCKET_EDGES) -> int:
    """Bucket containing the ratio; boundary values go to the upper bucket,
    except the final edge which closes the last bucket."""
    if not 0.0 <= ratio <= 1.0:
        raise ValueError(f"ratio {ratio} outside [0,1]")
    idx = int(np.searchsorted(edges, ratio, side="right")) - 1
    return min(max(idx, 0), len(edges) - 2)


def bucket_label(i: int, edges=BUCKET_EDGES) -> str:
    return f"{edges[i] * 100:g}%-{edges[i + 1] * 100:g}%"


def _prepare(img: ImageRGB) -> ImageRGB:
    """Evaluation-scale view of an image: 256x256 bilinear + 8-bit rounding."""
    resized = resize_bilinear(img, EVAL_SIZE, EVAL_SIZE)
    return ImageRGB(from_u8(quantize_u8(resized.data)), resized.space)


def evaluate_pair(real: ImageRGB, candidate: ImageRGB, mask: MaskImage,
                  record_id: str = "", **tags) -> ImagePairEval:
    ratio = foreground_ratio(mask)
    real_p = _prepare(real)
    cand_p = _prepare(candidate)
    mask_p = resize_nearest(mask, EVAL_SIZE, EVAL_SIZE)
    m = mse(real_p, cand_p)
    return ImagePairEval(
        record_id=record_id,
        mse=m,
        psnr=psnr_from_mse(m),
        fmse=fmse(real_p, cand_p, mask_p),
        foreground_ratio=ratio,
        method=tags.get("method", ""),
        category=tags.get("category", ""),
        sub_dataset=tags.get("sub_dataset", ""),
    )


def _mean(vals) -> float:
    vals = list(vals)
    return float(sum(vals) / len(vals)) if vals else float("nan")


def _agg(evals: list[ImagePairEval]) -> dict:
    return {
        "count": len(evals),
        "mse": _mean(e.mse for e in evals),
        "psnr": _mean(e.psnr for e in evals),
        "fmse": _mean(e.fmse for e in evals),
    }


def bucket_by_ratio(evals: list[ImagePairEval], edges=BUCKET_EDGES) -> MetricsReport:
    """Group per-image evals into foreground-ratio buckets and aggregate."""
    edges = tuple(edges)
    if list(edges) != sorted(set(edges)) or edges[0] != 0.0 or edges[-1] != 1.0:
        raise ValueError("edges must be strictly increasing from 0 to 1")
    evals = sorted(evals, key=lambda e: e.record_id)
    buckets: dict[str, list[ImagePairEval]] = {
        bucket_label(i, edges): [] for i in range(len(edges) - 1)
    }
    for e in evals:
        buckets[bucket_label(bucket_index(e.foreground_ratio, edges), edges)].append(e)
    aggregates = {
        "all": _agg(evals),
        "by_bucket": {label: _agg(group) for label, group in buckets.items()},
        "by_method": _group_agg(evals, lambda e: e.method),
        "by_sub_dataset": _group_agg(evals, lambda e: e.sub_dataset),
    }
    return MetricsReport(per_image=evals, aggregates=aggregates, bucket_edges=edges)


def _group_agg(evals, key) -> dict:
    groups: dict[str, list] = {}
    for e in evals:
        groups.setdefault(key(e) or "unspecified", []).append(e)
    return {k: _agg(v) for k, v in sorted(groups.items())}


def evaluate_set(records: list[dict], candidate_dir=None, root=None,
                 edges=BUCKET_EDGES) -> MetricsReport:
    """Evaluate every manifest record; candidates default to the composites.

    Each record carries paths for the real image, composite, and mask. When
    `candidate_dir` is given, the candidate for record `id` is
    `<candidate_dir>/<id>.png`; otherwise the composite itself is scored
    (the baseline row). Records whose candidate file is missing are skipped
    with a warning and counted in `report.skipped`.
    """
    base = Path(root) if root else Path(".")
    evals = []
    skipped = 0
    for rec in sorted(records, key=lambda r: r["record_id"]):
        rid = rec["record_id"]
        if candidate_dir is not None:
            cand_path = Path(candidate_dir) / f"{rid}.png"
        else:
            cand_path = base / rec["composite_path"]
        if not Path(cand_path).exists():
            log.warning("candidate missing for %s: %s", rid, cand_path)
            skipped += 1
            continue
        real = read_image(base / rec["real_path"])
        cand = read_image(cand_path)
        mask = read_mask(base / rec["mask_path"])
        evals.append(
            evaluate_pair(
                real, cand, mask, record_id=rid,
                method=rec.get("method", ""),
                category=rec.get("category", ""),
                sub_dataset=rec.get("sub_dataset", ""),
            )
        )
    report = bucket_by_ratio(evals, edges)
    report.skipped = skipped
    return report


# ---------------------------------------------------------------------------
# Report emission: stdout table, per-image JSONL, aggregate JSON, bucket CSV.
# ---------------------------------------------------------------------------


def format_table(report: MetricsReport, row_label: str = "Candidate") -> str:
    lines = []
    header = f"{'':<18}{'count':>7}{'MSE':>12}{'PSNR':>10}{'fMSE':>12}"
    lines.append(header)
    lines.append("-" * len(header))

    def row(name, agg):
        return (f"{name:<18}{agg['count']:>7}{agg['mse']:>12.2f}"
                f"{agg['psnr']:>10.2f}{agg['fmse']:>12.2f}")

    lines.append(row(row_label, report.aggregates["all"]))
    for label, agg in report.aggregates["by_bucket"].items():
        if agg["count"]:
            lines.append(row(f"  {label}", agg))
    for label, agg in report.aggregates["by_method"].items():
        if agg["count"] and label != "unspecified":
            lines.append(row(f"  {label}", agg))
    if report.skipped:
        lines.append(f"skipped (missing candidates): {report.skipped}")
    return "\n".join(lines)


def write_report(report: MetricsReport, out_dir, stream=None) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "per_image.jsonl", "w") as fh:
        for e in report.per_image:
            fh.write(json.dumps(asdict(e), sort_keys=True) + "\n")
    with open(out / "report.json", "w") as fh:
        json.dump(
            {
                "aggregates": report.aggregates,
                "bucket_edges": list(report.bucket_edges),
                "skipped": report.skipped,
            },
            fh, indent=2, sort_keys=True,
        )
        fh.write("\n")
    with open(out / "buckets.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["bucket", "count", "mse", "psnr", "fmse"])
        for label, agg in report.aggregates["by_bucket"].items():
            writer.writerow(
                [label, agg["count"], f"{agg['mse']:.6f}",
                 f"{agg['psnr']:.6f}", f"{agg['fmse']:.6f}"]
            )
    print(format_table(report), file=stream or sys.stdout)
