"""Corpus ingestion, HR/LR/reference pair materialization, and splits.

The manifest is JSON Lines, one record per line, UTF-8, sorted by id. Image
paths are stored relative to the manifest's directory so run directories
stay relocatable.
"""

import dataclasses
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .degradation import (DegradationConfig, DegradationPolicy, ImagePair,
                          apply_degradation, bicubic_upsample, center_crop)
from .image_io import load_image, quantize, save_image
from .seeding import derive_seed

log = logging.getLogger(__name__)

SPLITS = ("train", "val", "test")
IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg", ".bmp")

MANIFEST_FIELDS = ("id", "name", "category", "hr_path", "lr_path", "ref_path", "split")


@dataclass
class ShipRecord:
    id: str
    name: str
    category: str
    hr_path: str | None = None
    lr_path: str | None = None
    ref_path: str | None = None
    split: str = "train"

    def to_json(self) -> str:
        return json.dumps({f: getattr(self, f) for f in MANIFEST_FIELDS},
                          ensure_ascii=False, sort_keys=True)


@dataclass
class Manifest:
    records: list[ShipRecord]
    meta: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.records)

    def by_split(self, split: str) -> list[ShipRecord]:
        if split not in SPLITS:
            raise ValueError(f"unknown split {split!r}")
        return [r for r in self.records if r.split == split]

    def counts(self) -> dict:
        per_category: dict[str, int] = {}
        per_split: dict[str, int] = {}
        for r in self.records:
            per_category[r.category] = per_category.get(r.category, 0) + 1
            per_split[r.split] = per_split.get(r.split, 0) + 1
        return {"total": len(self.records),
                "per_category": dict(sorted(per_category.items())),
                "per_split": per_split}


def default_namer(stem: str) -> str:
    """Derive a ship name from a file stem."""
    return stem.replace("_", " ").replace("-", " ").strip()


def build_manifest(root, taxonomy, namer=default_namer) -> Manifest:
    """Scan category-named subdirectories of ``root`` into a manifest.

    Unreadable files are logged and skipped (and listed in meta["skipped"]).
    Record order is lexicographic by source path; ids are source-relative
    paths without the suffix.
    """
    root = Path(root)
    taxonomy = tuple(taxonomy)
    if not root.is_dir():
        raise ValueError(f"corpus root {root} is not a directory")

    records: list[ShipRecord] = []
    skipped: list[str] = []
    for sub in sorted(p for p in root.iterdir() if p.is_dir()):
        if sub.name not in taxonomy:
            log.warning("skipping directory %s: not in taxonomy", sub.name)
            continue
        for path in sorted(sub.iterdir()):
            if path.suffix.lower() not in IMAGE_SUFFIXES:
                continue
            try:
                with Image.open(path) as im:
                    im.verify()
            except Exception:
                log.warning("skipping unreadable image %s", path)
                skipped.append(path.relative_to(root).as_posix())
                continue
            rel = path.relative_to(root).as_posix()
            rec_id = rel.rsplit(".", 1)[0]
            records.append(ShipRecord(
                id=rec_id, name=namer(path.stem), category=sub.name,
                hr_path=str(path)))
    if not records:
        raise ValueError(f"no readable images found under {root}")
    records.sort(key=lambda r: r.id)
    return Manifest(records=records,
                    meta={"taxonomy": list(taxonomy), "source_root": str(root),
                          "skipped": skipped})


def make_pair(rec: ShipRecord, hr_side: int, factor: int,
              deg: DegradationPolicy | DegradationConfig,
              out_dir, manifest_dir=None) -> ImagePair | None:
    """Materialize the HR crop, degraded LR, and bicubic reference for one
    record, writing PNGs under ``out_dir`` and updating the record's paths.

    Returns None (and logs) when the source is smaller than ``hr_side``.
    Stored paths are relative to ``manifest_dir`` when given.
    """
    src = load_image(rec.hr_path)
    if min(src.shape[:2]) < hr_side:
        log.warning("skipping undersized source %s (%sx%s < %s)",
                    rec.hr_path, src.shape[0], src.shape[1], hr_side)
        return None
    if hr_side % factor:
        raise ValueError(f"hr_side {hr_side} not divisible by factor {factor}")

    hr = center_crop(src, hr_side)
    cfg = deg.config_for(rec.id) if isinstance(deg, DegradationPolicy) else deg
    lr = apply_degradation(hr, cfg)
    # Work with the quantized LR so in-memory pairs match the stored bytes.
    lr = quantize(lr).astype(np.float32) / 255.0
    reference = bicubic_upsample(lr, factor)

    out_dir = Path(out_dir)
    slug = rec.id.replace("/", "__")
    paths = {}
    for kind, img in (("hr", hr), ("lr", lr), ("ref", reference)):
        p = out_dir / f"{slug}_{kind}.png"
        save_image(img, p)
        paths[kind] = p
    base = Path(manifest_dir) if manifest_dir is not None else None
    rec.hr_path = _store_path(paths["hr"], base)
    rec.lr_path = _store_path(paths["lr"], base)
    rec.ref_path = _store_path(paths["ref"], base)
    return ImagePair(hr=hr, lr=lr, reference=reference)


def _store_path(path: Path, base: Path | None) -> str:
    if base is None:
        return str(path)
    try:
        return path.relative_to(base).as_posix()
    except ValueError:
        return str(path)


def _largest_remainder(total: int, fractions: np.ndarray) -> np.ndarray:
    """Integer allocation of ``total`` by fractions, remainders first."""
    quotas = fractions * total
    alloc = np.floor(quotas).astype(int)
    remainder = total - alloc.sum()
    # Ties break toward earlier splits (train before val before test).
    order = np.argsort(-(quotas - alloc), kind="stable")
    for i in range(remainder):
        alloc[order[i]] += 1
    return alloc


def split_manifest(m: Manifest, fractions=(0.8, 0.1, 0.1), seed: int = 0,
                   test_count: int | None = None) -> Manifest:
    """Assign train/val/test splits, stratified by category.

    With ``test_count``, the test split gets exactly that many records
    (allocated across categories by size) and ``fractions[:2]`` set the
    train/val ratio over the remainder.
    """
    fractions = np.asarray(fractions, dtype=np.float64)
    if test_count is None:
        if fractions.shape != (3,) or abs(fractions.sum() - 1.0) > 1e-9 or (fractions < 0).any():
            raise ValueError("fractions must be three non-negative values summing to 1")
    else:
        if test_count > len(m.records):
            raise ValueError(f"test_count {test_count} exceeds record count {len(m.records)}")

    by_category: dict[str, list[ShipRecord]] = {}
    for rec in m.records:
        by_category.setdefault(rec.category, []).append(rec)
    categories = sorted(by_category)
    rng = np.random.default_rng(seed)

    if test_count is not None:
        sizes = np.array([len(by_category[c]) for c in categories], dtype=np.float64)
        test_alloc = _largest_remainder(test_count, sizes / sizes.sum())
        tv = fractions[:2]
        tv = tv / tv.sum() if tv.sum() > 0 else np.array([1.0, 0.0])

    out_records = []
    for ci, cat in enumerate(categories):
        recs = sorted(by_category[cat], key=lambda r: r.id)
        order = rng.permutation(len(recs))
        if test_count is None:
            alloc = _largest_remainder(len(recs), fractions)
        else:
            n_test = int(test_alloc[ci])
            rest = len(recs) - n_test
            train_val = _largest_remainder(rest, tv)
            alloc = np.array([train_val[0], train_val[1], n_test])
        bounds = np.cumsum(alloc)
        for j, idx in enumerate(order):
            split = SPLITS[int(np.searchsorted(bounds, j, side="right"))]
            out_records.append(dataclasses.replace(recs[idx], split=split))

    out_records.sort(key=lambda r: r.id)
    meta = dict(m.meta)
    meta["split_seed"] = int(seed)
    out = Manifest(records=out_records, meta=meta)
    out.meta["counts"] = out.counts()
    return out


def write_manifest(m: Manifest, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    records = sorted(m.records, key=lambda r: r.id)
    with path.open("w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(rec.to_json() + "\n")


def read_manifest(path, meta: dict | None = None) -> Manifest:
    records = []
    with Path(path).open("r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            data = json.loads(line)
            records.append(ShipRecord(**{f: data.get(f) for f in MANIFEST_FIELDS}))
    return Manifest(records=records, meta=meta or {})


def write_corpus_meta(m: Manifest, path, factor: int, seed: int) -> None:
    meta = {
        "taxonomy": m.meta.get("taxonomy"),
        "factor": factor,
        "seed": seed,
        "counts": m.counts(),
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8")
