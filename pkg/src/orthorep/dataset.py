"""Dataset manifest: labeling, augmentation, leakage-safe splits, batch render.

The manifest is a JSON-lines file, one entry per line. Every entry keeps a
group_id naming the un-augmented shape it descends from; splits are assigned
to groups, never to individual entries, so an original and all of its
augmented variants always land in the same partition.

Augmented entries do not get their own mesh files. They reference the source
mesh path plus an ordered list of augmentation steps, which batch rendering
replays on load. Width-resized entries carry a null label by default: the
resize changes the drag coefficient and we refuse to fabricate one (labels
can be joined later from an external CSV).
"""

from __future__ import annotations

import concurrent.futures
import csv
import json
import logging
import os
import time
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .mesh import Augmentation, AugKind, apply_augmentations, load_mesh
from .represent import render_six_views_pair, write_integrated_png

logger = logging.getLogger(__name__)

SPLITS = ("train", "val", "test", "unassigned")

MESH_SUFFIXES = (".obj", ".stl")

DRAG_SANITY_MIN = 0.0
DRAG_SANITY_MAX = 2.0

FLAG_UNLABELED = "unlabeled"
FLAG_RENDER_FAILED = "render_failed"


class DatasetError(ValueError):
    pass


@dataclass(frozen=True)
class ManifestEntry:
    """One shape variant: a source mesh plus the augmentations applied to it.

    ``augmentation`` is an ordered tuple; original entries carry the single
    identity step. ``drag_coefficient`` is None until labeled.
    """

    id: str
    group_id: str
    augmentation: tuple = (Augmentation.identity(),)
    mesh_path: str = ""
    normal_img_path: str | None = None
    depth_img_path: str | None = None
    drag_coefficient: float | None = None
    split: str = "unassigned"
    flags: tuple = ()

    def __post_init__(self):
        if self.split not in SPLITS:
            raise DatasetError(f"unknown split {self.split!r}")
        if self.drag_coefficient is not None:
            c = self.drag_coefficient
            if not (DRAG_SANITY_MIN <= c <= DRAG_SANITY_MAX):
                raise DatasetError(
                    f"entry {self.id}: drag coefficient {c} outside sanity "
                    f"bound [{DRAG_SANITY_MIN}, {DRAG_SANITY_MAX}]")
        object.__setattr__(self, "augmentation", tuple(self.augmentation))
        object.__setattr__(self, "flags", tuple(self.flags))

    @property
    def is_original(self) -> bool:
        return all(a.kind is AugKind.IDENTITY for a in self.augmentation)

    def to_json(self) -> dict:
        return {
            "id": self.id,
            "group_id": self.group_id,
            "augmentation": [a.to_json() for a in self.augmentation],
            "mesh_path": self.mesh_path,
            "normal_img_path": self.normal_img_path,
            "depth_img_path": self.depth_img_path,
            "drag_coefficient": self.drag_coefficient,
            "split": self.split,
            "flags": list(self.flags),
        }

    @staticmethod
    def from_json(d: dict) -> "ManifestEntry":
        return ManifestEntry(
            id=d["id"],
            group_id=d["group_id"],
            augmentation=tuple(Augmentation.from_json(a)
                               for a in d["augmentation"]),
            mesh_path=d["mesh_path"],
            normal_img_path=d.get("normal_img_path"),
            depth_img_path=d.get("depth_img_path"),
            drag_coefficient=d.get("drag_coefficient"),
            split=d.get("split", "unassigned"),
            flags=tuple(d.get("flags", ())),
        )


@dataclass(frozen=True)
class SplitSpec:
    """Seeded train/val/test ratios applied to groups."""

    ratios: tuple = (0.7, 0.15, 0.15)
    seed: int = 0

    def __post_init__(self):
        r = tuple(float(x) for x in self.ratios)
        if len(r) != 3 or any(not (0.0 < x < 1.0) for x in r):
            raise DatasetError(f"ratios must be three fractions in (0,1): {r}")
        if abs(sum(r) - 1.0) > 1e-9:
            raise DatasetError(f"ratios must sum to 1, got {sum(r)}")
        object.__setattr__(self, "ratios", r)


@dataclass
class DatasetManifest:
    entries: tuple = ()

    def __post_init__(self):
        self.entries = tuple(self.entries)
        seen = set()
        for e in self.entries:
            if e.id in seen:
                raise DatasetError(f"duplicate manifest id {e.id!r}")
            seen.add(e.id)

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def by_split(self, split: str) -> tuple:
        return tuple(e for e in self.entries if e.split == split)

    def group_ids(self) -> tuple:
        """Unique group ids in first-appearance order."""
        out, seen = [], set()
        for e in self.entries:
            if e.group_id not in seen:
                seen.add(e.group_id)
                out.append(e.group_id)
        return tuple(out)

    def save(self, path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w") as fh:
            for e in self.entries:
                fh.write(json.dumps(e.to_json()) + "\n")

    @staticmethod
    def load(path) -> "DatasetManifest":
        entries = []
        with open(path) as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.strip()
                if not line:
                    continue
                try:
                    entries.append(ManifestEntry.from_json(json.loads(line)))
                except (json.JSONDecodeError, KeyError, ValueError) as exc:
                    raise DatasetError(
                        f"{path}: line {lineno}: bad manifest entry: {exc}"
                    ) from exc
        return DatasetManifest(tuple(entries))


# ---------------------------------------------------------------------------
# Building and labeling

def read_labels_csv(path) -> dict:
    """Parse an `id,drag_coefficient` CSV into a dict.

    Malformed rows (wrong field count, unparseable or out-of-bound values)
    are skipped with a warning naming the line. Duplicate ids are an error.

    Returns:
        Mapping id -> drag coefficient.
    """
    labels: dict = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        for lineno, row in enumerate(reader, start=1):
            if lineno == 1:
                if [c.strip().lower() for c in row] != ["id", "drag_coefficient"]:
                    raise DatasetError(
                        f"{path}: expected header 'id,drag_coefficient', "
                        f"got {','.join(row)!r}")
                continue
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) != 2:
                logger.warning("%s: line %d: expected 2 fields, got %d; "
                               "row skipped", path, lineno, len(row))
                continue
            ident = row[0].strip()
            try:
                value = float(row[1])
            except ValueError:
                logger.warning("%s: line %d: unparseable drag coefficient "
                               "%r; row skipped", path, lineno, row[1])
                continue
            if not (DRAG_SANITY_MIN <= value <= DRAG_SANITY_MAX):
                logger.warning("%s: line %d: drag coefficient %g outside "
                               "[%g, %g]; row skipped", path, lineno, value,
                               DRAG_SANITY_MIN, DRAG_SANITY_MAX)
                continue
            if ident in labels:
                raise DatasetError(f"{path}: duplicate id {ident!r} at line "
                                   f"{lineno}")
            labels[ident] = value
    return labels


def build_manifest(mesh_dir, labels_csv=None) -> DatasetManifest:
    """Scan a directory of meshes and join labels by file stem.

    Every *.obj / *.stl file becomes one identity entry whose id is the
    file stem. Meshes without a label are kept, flagged, and left null.
    """
    mesh_dir = Path(mesh_dir)
    if not mesh_dir.is_dir():
        raise DatasetError(f"mesh directory {mesh_dir} does not exist")
    paths = sorted(p for p in mesh_dir.iterdir()
                   if p.suffix.lower() in MESH_SUFFIXES)
    if not paths:
        raise DatasetError(f"no mesh files (*.obj, *.stl) under {mesh_dir}")
    stems = [p.stem for p in paths]
    dupes = {s for s in stems if stems.count(s) > 1}
    if dupes:
        raise DatasetError(f"duplicate mesh ids: {sorted(dupes)}")
    labels = read_labels_csv(labels_csv) if labels_csv else {}
    entries = []
    unlabeled = 0
    for p in paths:
        label = labels.get(p.stem)
        flags = ()
        if label is None:
            flags = (FLAG_UNLABELED,)
            unlabeled += 1
        entries.append(ManifestEntry(id=p.stem, group_id=p.stem,
                                     mesh_path=str(p),
                                     drag_coefficient=label, flags=flags))
    unused = set(labels) - set(stems)
    if unused:
        logger.warning("%d label rows have no matching mesh (e.g. %r)",
                       len(unused), sorted(unused)[0])
    if unlabeled:
        logger.info("%d of %d meshes have no label", unlabeled, len(entries))
    return DatasetManifest(tuple(entries))


def join_labels(manifest: DatasetManifest, labels_csv) -> DatasetManifest:
    """Attach labels from a CSV to matching unlabeled entries by id."""
    labels = read_labels_csv(labels_csv)
    out = []
    joined = 0
    for e in manifest:
        if e.drag_coefficient is None and e.id in labels:
            flags = tuple(f for f in e.flags if f != FLAG_UNLABELED)
            out.append(replace(e, drag_coefficient=labels[e.id], flags=flags))
            joined += 1
        else:
            out.append(e)
    logger.info("joined %d labels onto %d entries", joined, len(out))
    return DatasetManifest(tuple(out))


# ---------------------------------------------------------------------------
# Augmentation

def _with_step(entry: ManifestEntry, step: Augmentation, suffix: str,
               label) -> ManifestEntry:
    base = tuple(a for a in entry.augmentation
                 if a.kind is not AugKind.IDENTITY)
    flags = tuple(f for f in entry.flags if f != FLAG_UNLABELED)
    if label is None:
        flags = flags + (FLAG_UNLABELED,)
    return replace(entry, id=entry.id + suffix, augmentation=base + (step,),
                   drag_coefficient=label, flags=flags,
                   normal_img_path=None, depth_img_path=None)


def augment_manifest(manifest: DatasetManifest,
                     resize_seed: int = 0) -> DatasetManifest:
    """Grow N originals to 4N entries: width resize then bilateral flip.

    Each original gains one width-resized variant with a factor drawn
    uniformly from [1/1.2, 1.2] under resize_seed (resized labels are
    null). Then every entry, original and resized alike, gains a flipped
    variant whose label is copied verbatim.

    Errors:
        DatasetError: If the manifest already contains augmented entries.
    """
    if any(not e.is_original for e in manifest):
        raise DatasetError("manifest is already augmented")
    rng = np.random.default_rng(resize_seed)
    resized = []
    for e in manifest:
        factor = float(rng.uniform(1.0 / 1.2, 1.2))
        resized.append(_with_step(e, Augmentation.width_resize(factor),
                                  "__resized", None))
    widened = list(manifest.entries) + resized
    flipped = [_with_step(e, Augmentation.bilateral_flip(), "__flipped",
                          e.drag_coefficient)
               for e in widened]
    return DatasetManifest(tuple(widened + flipped))


# ---------------------------------------------------------------------------
# Splits

def _largest_remainder_counts(total: int, ratios) -> list:
    """Apportion `total` by ratios; leftovers go to the largest remainders,
    ties broken in (train, val, test) order."""
    quotas = [r * total for r in ratios]
    counts = [int(np.floor(q)) for q in quotas]
    leftover = total - sum(counts)
    order = sorted(range(len(ratios)),
                   key=lambda i: (-(quotas[i] - counts[i]), i))
    for i in range(leftover):
        counts[order[i]] += 1
    return counts


def assign_splits(manifest: DatasetManifest, spec: SplitSpec) -> DatasetManifest:
    """Partition groups (not entries) into train/val/test.

    Groups are shuffled under spec.seed and cut by the largest-remainder
    counts, so any entry and its augmented variants share a split.
    """
    groups = manifest.group_ids()
    if len(groups) < 3:
        raise DatasetError(f"need at least 3 groups to split, have "
                           f"{len(groups)}")
    rng = np.random.default_rng(spec.seed)
    shuffled = [groups[i] for i in rng.permutation(len(groups))]
    n_train, n_val, n_test = _largest_remainder_counts(len(groups),
                                                       spec.ratios)
    assignment = {}
    for g in shuffled[:n_train]:
        assignment[g] = "train"
    for g in shuffled[n_train:n_train + n_val]:
        assignment[g] = "val"
    for g in shuffled[n_train + n_val:]:
        assignment[g] = "test"
    out = tuple(replace(e, split=assignment[e.group_id]) for e in manifest)
    logger.info("split %d groups into %d/%d/%d (train/val/test)",
                len(groups), n_train, n_val, n_test)
    return DatasetManifest(out)


# ---------------------------------------------------------------------------
# Batch rendering

def _render_entry(entry: ManifestEntry, out_dir: Path, resolution: int,
                  bit_depth: int) -> ManifestEntry:
    mesh = load_mesh(entry.mesh_path)
    mesh = apply_augmentations(mesh, entry.augmentation)
    normal_img, depth_img = render_six_views_pair(mesh, resolution,
                                                  bit_depth=bit_depth)
    npath = out_dir / f"{entry.id}_normal.png"
    dpath = out_dir / f"{entry.id}_depth.png"
    write_integrated_png(normal_img, npath)
    write_integrated_png(depth_img, dpath)
    flags = tuple(f for f in entry.flags if f != FLAG_RENDER_FAILED)
    return replace(entry, normal_img_path=str(npath),
                   depth_img_path=str(dpath), flags=flags)


def batch_render(manifest: DatasetManifest, out_dir, resolution: int = 384,
                 bit_depth: int = 8, workers: int | None = None
                 ) -> DatasetManifest:
    """Render normal/depth images for every entry; isolate per-entry failures.

    Entries render in a thread pool; a failing entry is flagged
    render_failed and logged while the rest complete. The updated manifest
    is assembled (and should be saved) by the single calling thread.
    """
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        probe = out_dir / ".write_probe"
        probe.touch()
        probe.unlink()
    except OSError as exc:
        raise DatasetError(f"output directory {out_dir} is not writable: "
                           f"{exc}") from exc
    if workers is None:
        workers = min(8, os.cpu_count() or 1)
    t0 = time.monotonic()
    results = []
    with concurrent.futures.ThreadPoolExecutor(max_workers=workers) as pool:
        futures = [pool.submit(_render_entry, e, out_dir, resolution,
                               bit_depth) for e in manifest]
        for entry, fut in zip(manifest, futures):
            try:
                results.append(fut.result())
            except Exception as exc:
                logger.error("entry %s: render failed: %s", entry.id, exc)
                flags = entry.flags
                if FLAG_RENDER_FAILED not in flags:
                    flags = flags + (FLAG_RENDER_FAILED,)
                results.append(replace(entry, flags=flags))
    failures = sum(1 for e in results if FLAG_RENDER_FAILED in e.flags)
    logger.info("rendered %d entries (%d failed) in %.1fs",
                len(results), failures, time.monotonic() - t0)
    return DatasetManifest(tuple(results))
