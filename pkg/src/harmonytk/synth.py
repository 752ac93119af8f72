"""Composite dataset synthesis: reference pairing, generation, filtering, splits.

Builds the training corpus: for every source photo + foreground mask, pick a
reference object of the same category, re-color the foreground toward the
reference (or overlay an aligned capture), screen the result with cheap
heuristic filters, and persist everything as a line-delimited manifest with a
grouped train/test split so no real image straddles the two sides.
"""

from __future__ import annotations

import hashlib
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from .imgcore import (
    ImageRGB,
    MaskImage,
    foreground_ratio,
    overlay_composite,
    read_image,
    read_mask,
    write_image,
    write_mask,
)
from .transfer import METHOD_TAGS, apply_transfer

log = logging.getLogger(__name__)

OVERLAY = "OVERLAY"
TRANSFER = "TRANSFER"

RATIO_BOUNDS = (0.01, 0.80)
HUE_THRESHOLD_DEG = 60.0
CLIP_THRESHOLD = 0.10
SATURATION_FLOOR = 0.10

TRAIN = "train"
TEST = "test"


@dataclass(frozen=True)
class SynthConfig:
    """Knobs for generation, filtering, and splitting."""

    composites_per_target: int = 4
    method_plan: str = "cycle"      # "cycle" walks the method families, "random" draws
    ratio_bounds: tuple[float, float] = RATIO_BOUNDS
    hue_threshold_deg: float = HUE_THRESHOLD_DEG
    clip_threshold: float = CLIP_THRESHOLD
    saturation_floor: float = SATURATION_FLOOR
    split_fraction: float = 0.8
    seed: int = 0
    workers: int = 1

    def __post_init__(self):
        if self.composites_per_target < 1:
            raise ValueError("composites_per_target must be >= 1")
        if self.method_plan not in ("cycle", "random"):
            raise ValueError(f"unknown method plan {self.method_plan!r}")
        lo, hi = self.ratio_bounds
        if not (0.0 <= lo < hi <= 1.0):
            raise ValueError("ratio_bounds must satisfy 0 <= lo < hi <= 1")
        if not (0.0 <= self.split_fraction <= 1.0):
            raise ValueError("split_fraction must lie in [0, 1]")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")

    def snapshot(self) -> dict:
        snap = asdict(self)
        snap["ratio_bounds"] = list(self.ratio_bounds)
        # Statistics conventions baked into the transfer stage; recorded here
        # so downstream consumers of the manifest know what they are getting.
        snap["statistics_region"] = "foreground"
        snap["color_encoding"] = "stored values, no gamma linearization"
        return snap


@dataclass(frozen=True)
class SourceRecord:
    """One real photo with its foreground mask."""

    record_id: str
    image_path: str
    mask_path: str
    category_label: str
    scene_id: str | None = None


@dataclass(frozen=True)
class FilterVerdict:
    name: str
    passed: bool
    score: float

    def as_row(self) -> list:
        return [self.name, bool(self.passed), float(self.score)]


@dataclass
class CompositeRecord:
    """One synthesized composite and its full provenance."""

    record_id: str
    composite_path: str
    real_path: str
    mask_path: str
    method: str
    reference_id: str
    seed: int
    filter_verdicts: list[FilterVerdict] = field(default_factory=list)
    human_verdict: str | None = None
    category_label: str = ""

    def passed_filters(self) -> bool:
        return all(v.passed for v in self.filter_verdicts)

    def to_row(self) -> dict:
        return {
            "record_id": self.record_id,
            "composite_path": self.composite_path,
            "real_path": self.real_path,
            "mask_path": self.mask_path,
            "method": self.method,
            "reference_id": self.reference_id,
            "seed": self.seed,
            "filter_verdicts": [v.as_row() for v in self.filter_verdicts],
            "human_verdict": self.human_verdict,
            "category_label": self.category_label,
        }

    @classmethod
    def from_row(cls, row: dict) -> "CompositeRecord":
        verdicts = [FilterVerdict(n, bool(p), float(s))
                    for n, p, s in row.get("filter_verdicts", [])]
        return cls(
            record_id=row["record_id"],
            composite_path=row["composite_path"],
            real_path=row["real_path"],
            mask_path=row["mask_path"],
            method=row["method"],
            reference_id=row["reference_id"],
            seed=int(row["seed"]),
            filter_verdicts=verdicts,
            human_verdict=row.get("human_verdict"),
            category_label=row.get("category_label", ""),
        )


@dataclass
class Manifest:
    records: list[CompositeRecord]
    split: dict[str, str]
    config: dict

    def rows(self) -> list[dict]:
        out = []
        for rec in sorted(self.records, key=lambda r: r.record_id):
            row = rec.to_row()
            row["split"] = self.split[rec.record_id]
            out.append(row)
        return out

    def write(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for row in self.rows():
                fh.write(json.dumps(row, sort_keys=True) + "\n")

    @classmethod
    def read(cls, path, config: dict | None = None) -> "Manifest":
        records, split = [], {}
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                row = json.loads(line)
                rec = CompositeRecord.from_row(row)
                records.append(rec)
                split[rec.record_id] = row.get("split", TRAIN)
        return cls(records=records, split=split, config=config or {})


def derive_seed(global_seed: int, record_id: str) -> int:
    """Stable per-record seed so parallel generation order cannot matter."""
    digest = hashlib.sha256(f"{global_seed}:{record_id}".encode()).digest()
    return int.from_bytes(digest[:8], "big")


# ---------------------------------------------------------------------------
# hue helpers


def hue_saturation(pixels: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """HSV hue (degrees, [0, 360)) and saturation for an (N, 3) pixel array."""
    px = np.asarray(pixels, dtype=np.float64)
    if px.ndim != 2 or px.shape[1] != 3:
        raise ValueError(f"expected (N, 3) pixels, got {px.shape}")
    mx = px.max(axis=1)
    mn = px.min(axis=1)
    chroma = mx - mn
    sat = np.zeros(len(px))
    pos = mx > 0
    sat[pos] = chroma[pos] / mx[pos]
    hue = np.zeros(len(px))
    nz = chroma > 0
    r, g, b = px[:, 0], px[:, 1], px[:, 2]
    amax = px.argmax(axis=1)
    sel = nz & (amax == 0)
    hue[sel] = ((g - b)[sel] / chroma[sel]) % 6.0
    sel = nz & (amax == 1)
    hue[sel] = (b - r)[sel] / chroma[sel] + 2.0
    sel = nz & (amax == 2)
    hue[sel] = (r - g)[sel] / chroma[sel] + 4.0
    return hue * 60.0, sat


def circular_mean_deg(angles_deg: np.ndarray) -> float:
    """Mean direction of angles in degrees."""
    theta = np.radians(np.asarray(angles_deg, dtype=np.float64))
    if theta.size == 0:
        raise ValueError("no angles to average")
    mean = np.arctan2(np.sin(theta).mean(), np.cos(theta).mean())
    return float(np.degrees(mean) % 360.0)


def hue_shift_degrees(real_fg: np.ndarray, comp_fg: np.ndarray,
                      saturation_floor: float = SATURATION_FLOOR) -> float:
    """Angular distance between the mean foreground hues of real and composite.

    Low-saturation pixels carry no stable hue, so each side averages only its
    own pixels above the saturation floor; if either side has none the object
    has no hue identity and the shift is reported as zero.
    """
    hue_r, sat_r = hue_saturation(real_fg)
    hue_c, sat_c = hue_saturation(comp_fg)
    keep_r = sat_r > saturation_floor
    keep_c = sat_c > saturation_floor
    if not keep_r.any() or not keep_c.any():
        return 0.0
    mean_r = circular_mean_deg(hue_r[keep_r])
    mean_c = circular_mean_deg(hue_c[keep_c])
    diff = abs(mean_r - mean_c) % 360.0
    return min(diff, 360.0 - diff)


# ---------------------------------------------------------------------------
# reference selection and composite generation


def select_reference(pool: list[SourceRecord], target: SourceRecord,
                     seed: int) -> SourceRecord:
    """Seeded uniform pick of a reference for `target`.

    Aligned-capture sources (shared scene_id) prefer a sibling capture of the
    same scene; everything else draws from the same category. The target
    itself is never eligible.
    """
    others = [p for p in pool if p.record_id != target.record_id]
    candidates: list[SourceRecord] = []
    if target.scene_id is not None:
        candidates = [p for p in others if p.scene_id == target.scene_id]
    if not candidates:
        candidates = [p for p in others
                      if p.category_label == target.category_label]
    if not candidates:
        raise ValueError(
            f"no reference candidate for {target.record_id!r} "
            f"(category {target.category_label!r})")
    candidates.sort(key=lambda p: p.record_id)
    rng = np.random.default_rng(seed)
    return candidates[int(rng.integers(len(candidates)))]


def generate_composite(target: SourceRecord, reference: SourceRecord,
                       mode: str, seed: int, composite_path,
                       method: str | None = None) -> CompositeRecord:
    """Produce one composite file plus its provenance record.

    TRANSFER re-colors the target foreground toward the reference foreground;
    `method=None` draws one of the registered methods from `seed`, and
    re-running with the recorded (method, seed) reproduces the file
    bit-exactly. OVERLAY pastes the reference pixels into the foreground and
    requires pixel-aligned captures (same scene_id and dimensions).
    Background pixels always equal the real image exactly.
    """
    target_img = read_image(target.image_path)
    mask = read_mask(target.mask_path)
    if mode == OVERLAY:
        if target.scene_id is None or target.scene_id != reference.scene_id:
            raise ValueError("overlay requires target and reference to share "
                             "a scene_id")
        ref_img = read_image(reference.image_path)
        if ref_img.data.shape != target_img.data.shape:
            raise ValueError(
                f"overlay dimension mismatch: {target_img.data.shape} vs "
                f"{ref_img.data.shape}")
        composite = overlay_composite(target_img, ref_img, mask)
        tag = OVERLAY
    elif mode == TRANSFER:
        ref_img = read_image(reference.image_path)
        ref_mask = read_mask(reference.mask_path)
        if method is None:
            rng = np.random.default_rng(seed)
            tag = METHOD_TAGS[int(rng.integers(len(METHOD_TAGS)))]
        else:
            tag = method
        outcome = apply_transfer(tag, target_img, mask, ref_img, ref_mask,
                                 seed=seed)
        composite = outcome.image
    else:
        raise ValueError(f"unknown generation mode {mode!r}")
    composite_path = Path(composite_path)
    composite_path.parent.mkdir(parents=True, exist_ok=True)
    write_image(composite, composite_path)
    return CompositeRecord(
        record_id=composite_path.stem,
        composite_path=str(composite_path),
        real_path=str(target.image_path),
        mask_path=str(target.mask_path),
        method=tag,
        reference_id=reference.record_id,
        seed=seed,
        category_label=target.category_label,
    )


# ---------------------------------------------------------------------------
# heuristic filters


def filter_images(composite: ImageRGB, real: ImageRGB, mask: MaskImage,
                  config: SynthConfig) -> list[FilterVerdict]:
    """Run the three screening filters on in-memory images."""
    ratio = foreground_ratio(mask)
    lo, hi = config.ratio_bounds
    verdicts = [FilterVerdict("ratio", lo <= ratio <= hi, ratio)]

    fg = mask.data
    real_fg = real.data[fg]
    comp_fg = composite.data[fg]
    shift = hue_shift_degrees(real_fg, comp_fg, config.saturation_floor)
    verdicts.append(FilterVerdict("hue", shift <= config.hue_threshold_deg,
                                  shift))

    # Clipped = sitting on the gamut boundary in the composite but not in the
    # real image; a large clipped share means the transfer blew out the range.
    at_edge = ((comp_fg <= 0.0) | (comp_fg >= 1.0)).any(axis=1)
    was_edge = ((real_fg <= 0.0) | (real_fg >= 1.0)).any(axis=1)
    clipped = float(np.logical_and(at_edge, ~was_edge).sum()) / max(len(comp_fg), 1)
    verdicts.append(FilterVerdict("clip", clipped <= config.clip_threshold,
                                  clipped))
    return verdicts


def heuristic_filter(record: CompositeRecord,
                     config: SynthConfig) -> list[FilterVerdict]:
    """Screen one record from its files; verdicts depend only on (record, config)."""
    composite = read_image(record.composite_path)
    real = read_image(record.real_path)
    mask = read_mask(record.mask_path)
    return filter_images(composite, real, mask, config)


# ---------------------------------------------------------------------------
# split + manifest


def build_manifest(records: list[CompositeRecord], split_fraction: float,
                   seed: int, config: dict | None = None) -> Manifest:
    """Assign whole real-image groups to train/test by seeded shuffle."""
    if not records:
        raise ValueError("no records to split")
    if not (0.0 <= split_fraction <= 1.0):
        raise ValueError("split_fraction must lie in [0, 1]")
    groups: dict[str, list[str]] = {}
    for rec in records:
        groups.setdefault(rec.real_path, []).append(rec.record_id)
    keys = sorted(groups)
    rng = np.random.default_rng(seed)
    order = [keys[i] for i in rng.permutation(len(keys))]
    n_train = int(np.floor(split_fraction * len(order) + 0.5))
    split: dict[str, str] = {}
    for pos, key in enumerate(order):
        side = TRAIN if pos < n_train else TEST
        for rid in groups[key]:
            split[rid] = side
    return Manifest(records=list(records), split=split, config=config or {})


# ---------------------------------------------------------------------------
# full pipeline


def load_sources(src_dir) -> list[SourceRecord]:
    """Discover source records under `src_dir`.

    Reads `sources.jsonl` rows {record_id, image, mask, category, scene_id}
    when present, otherwise pairs `<src>/image/*.png` with the same stem in
    `<src>/mask/`. Masks outside the allowed foreground-ratio band are
    rejected outright.
    """
    src_dir = Path(src_dir)
    records: list[SourceRecord] = []
    listing = src_dir / "sources.jsonl"
    if listing.exists():
        with open(listing, encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                row = json.loads(line)
                records.append(SourceRecord(
                    record_id=row["record_id"],
                    image_path=str(src_dir / row["image"]),
                    mask_path=str(src_dir / row["mask"]),
                    category_label=row.get("category", "default"),
                    scene_id=row.get("scene_id"),
                ))
    else:
        image_dir = src_dir / "image"
        mask_dir = src_dir / "mask"
        for img in sorted(image_dir.glob("*.png")):
            mask = mask_dir / img.name
            if not mask.exists():
                log.warning("no mask for %s, skipping", img.name)
                continue
            records.append(SourceRecord(
                record_id=img.stem,
                image_path=str(img),
                mask_path=str(mask),
                category_label="default",
            ))
    seen = set()
    for rec in records:
        if rec.record_id in seen:
            raise ValueError(f"duplicate source id {rec.record_id!r}")
        seen.add(rec.record_id)
        ratio = foreground_ratio(read_mask(rec.mask_path))
        if not (RATIO_BOUNDS[0] <= ratio <= RATIO_BOUNDS[1]):
            raise ValueError(
                f"source {rec.record_id!r} foreground ratio {ratio:.4f} "
                f"outside {RATIO_BOUNDS}")
    if not records:
        raise ValueError(f"no sources found under {src_dir}")
    return records


def _stage_sources(sources: list[SourceRecord], root: Path) -> list[SourceRecord]:
    """Re-encode sources into `<root>/real` and `<root>/mask` as 8-bit PNG."""
    (root / "real").mkdir(parents=True, exist_ok=True)
    (root / "mask").mkdir(parents=True, exist_ok=True)
    staged = []
    for rec in sorted(sources, key=lambda r: r.record_id):
        real_path = root / "real" / f"{rec.record_id}.png"
        mask_path = root / "mask" / f"{rec.record_id}.png"
        write_image(read_image(rec.image_path), real_path)
        write_mask(read_mask(rec.mask_path), mask_path)
        staged.append(SourceRecord(
            record_id=rec.record_id,
            image_path=str(real_path),
            mask_path=str(mask_path),
            category_label=rec.category_label,
            scene_id=rec.scene_id,
        ))
    return staged


def _synthesize_one(args) -> list[dict]:
    """Generate and screen all candidates for one target (worker-safe)."""
    target, pool, config, root = args
    root = Path(root)
    rec_seed = derive_seed(config.seed, target.record_id)
    rng = np.random.default_rng(rec_seed)
    siblings = [p for p in pool
                if target.scene_id is not None
                and p.scene_id == target.scene_id
                and p.record_id != target.record_id]
    if siblings:
        # Aligned captures of the same scene: paste the sibling foreground
        # directly; distinct siblings only, so no duplicate composites.
        siblings.sort(key=lambda p: p.record_id)
        order = rng.permutation(len(siblings))
        n = min(config.composites_per_target, len(siblings))
        plan = [(OVERLAY, None, siblings[int(order[k])]) for k in range(n)]
    else:
        plan = []
        for k in range(config.composites_per_target):
            ref_seed = int(rng.integers(2**31))
            reference = select_reference(pool, target, seed=ref_seed)
            if config.method_plan == "cycle":
                tag = METHOD_TAGS[k % len(METHOD_TAGS)]
            else:
                tag = METHOD_TAGS[int(rng.integers(len(METHOD_TAGS)))]
            plan.append((TRANSFER, tag, reference))
    rows = []
    for k, (mode, tag, reference) in enumerate(plan):
        rid = f"{target.record_id}-c{k}"
        comp_path = root / "composite" / f"{rid}.png"
        record = generate_composite(
            target, reference, mode=mode,
            seed=derive_seed(config.seed, rid),
            composite_path=comp_path, method=tag)
        record.filter_verdicts = heuristic_filter(record, config)
        rows.append(record.to_row())
    return rows


def synthesize_dataset(sources: list[SourceRecord], out_root,
                       config: SynthConfig | None = None
                       ) -> tuple[Manifest, list[CompositeRecord]]:
    """Run the full pipeline and persist the dataset under `out_root`.

    Layout: `<root>/{real,composite,mask}/<id>.png`, `manifest.jsonl` for the
    accepted records (with their split), `rejected.jsonl` for composites that
    failed a filter, and `synth_config.json` with the effective settings.
    Per-record seeds are derived from (global seed, record id), so the result
    is byte-identical regardless of worker count or scheduling.
    """
    config = config or SynthConfig()
    root = Path(out_root)
    root.mkdir(parents=True, exist_ok=True)
    staged = _stage_sources(sources, root)
    jobs = [(target, staged, config, str(root)) for target in staged]
    if config.workers > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            per_target = list(pool.map(_synthesize_one, jobs))
    else:
        per_target = [_synthesize_one(job) for job in jobs]

    accepted, rejected = [], []
    for rows in per_target:
        for row in rows:
            # store root-relative paths so the dataset is relocatable
            for key in ("composite_path", "real_path", "mask_path"):
                row[key] = str(Path(row[key]).relative_to(root))
            record = CompositeRecord.from_row(row)
            (accepted if record.passed_filters() else rejected).append(record)
    log.info("synthesized %d composites (%d accepted, %d rejected)",
             len(accepted) + len(rejected), len(accepted), len(rejected))

    if not accepted:
        raise ValueError("every composite failed the filters")
    manifest = build_manifest(accepted, config.split_fraction,
                              seed=derive_seed(config.seed, "split"),
                              config=config.snapshot())
    manifest.write(root / "manifest.jsonl")
    with open(root / "rejected.jsonl", "w", encoding="utf-8") as fh:
        for rec in sorted(rejected, key=lambda r: r.record_id):
            fh.write(json.dumps(rec.to_row(), sort_keys=True) + "\n")
    with open(root / "synth_config.json", "w", encoding="utf-8") as fh:
        json.dump(config.snapshot(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return manifest, rejected
