"""Scene corpora: canonical JSONL interchange, COCO import, filtering, splits,
and a synthetic themed world with a known generative process."""
from __future__ import annotations

import json
import logging
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import DomainError, IntegrityError, LookupFailure, ParseError, UsageError
from .scene_lang import GridSpec, SceneObject, SceneSentence, SceneWord, Vocabulary, encode_scene

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SceneRecord:
    scene_id: str
    objects: tuple[SceneObject, ...]

    def __len__(self):
        return len(self.objects)

    def to_json(self) -> dict:
        return {
            "scene_id": self.scene_id,
            "objects": [{"category": o.category, "bbox": list(o.bbox)} for o in self.objects],
        }


def _record_from_json(doc, lineno) -> SceneRecord:
    try:
        objs = tuple(
            SceneObject(str(o["category"]), tuple(float(x) for x in o["bbox"])) for o in doc["objects"]
        )
        return SceneRecord(str(doc["scene_id"]), objs)
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, DomainError):
            raise ParseError(f"line {lineno}: {exc.args[0]}") from None
        raise ParseError(f"line {lineno}: malformed scene record ({exc!r})") from None


def read_records(path) -> list[SceneRecord]:
    records = []
    seen = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                doc = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"line {lineno}: {exc.msg}") from None
            rec = _record_from_json(doc, lineno)
            if rec.scene_id in seen:
                raise ParseError(f"line {lineno}: duplicate scene_id {rec.scene_id!r}")
            seen.add(rec.scene_id)
            records.append(rec)
    return records


def write_records(records: Sequence[SceneRecord], path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for rec in records:
            fh.write(json.dumps(rec.to_json()) + "\n")


def load_scenes(path, v: Vocabulary) -> list[tuple[str, SceneSentence]]:
    out = []
    for rec in read_records(path):
        try:
            out.append((rec.scene_id, encode_scene(rec.objects, v.grid, v)))
        except LookupFailure as exc:
            raise LookupFailure(f"{exc.args[0]} in scene {rec.scene_id!r}") from None
    return out


def coco_category_names(doc: dict) -> list[str]:
    """Category names ordered by COCO category id."""
    return [c["name"] for c in sorted(doc.get("categories", []), key=lambda c: c["id"])]


def import_coco(instances_json, out) -> int:
    """Convert a COCO instances file into canonical scenes JSONL; returns scenes written.

    Images without annotations produce no scene.
    """
    with open(instances_json, encoding="utf-8") as fh:
        doc = json.load(fh)
    images = {img["id"]: img for img in doc.get("images", [])}
    cat_names = {c["id"]: c["name"] for c in doc.get("categories", [])}

    per_image = defaultdict(list)
    for ann in doc.get("annotations", []):
        img = images.get(ann["image_id"])
        if img is None:
            raise IntegrityError(f"annotation {ann.get('id')} refers to missing image {ann['image_id']}")
        width, height = float(img.get("width", 0)), float(img.get("height", 0))
        if width <= 0 or height <= 0:
            raise IntegrityError(f"image {img['id']} has zero width or height")
        if ann["category_id"] not in cat_names:
            raise IntegrityError(f"annotation {ann.get('id')} has unknown category id {ann['category_id']}")
        x, y, w, h = (float(t) for t in ann["bbox"])
        box = (x / width, y / height, (x + w) / width, (y + h) / height)
        box = tuple(min(max(t, 0.0), 1.0) for t in box)
        per_image[ann["image_id"]].append(SceneObject(cat_names[ann["category_id"]], box))

    # scenes follow the file's image order
    records = [SceneRecord(str(i), tuple(per_image[i])) for i in images if i in per_image]
    write_records(records, out)
    return len(records)


def filter_min_objects(scenes, min_n: int = 2) -> list:
    """Keep scenes with at least ``min_n`` objects. Accepts records, sentences or (id, sentence) pairs."""

    def size(s):
        return len(s[1]) if isinstance(s, tuple) and len(s) == 2 and isinstance(s[1], SceneSentence) else len(s)

    return [s for s in scenes if size(s) >= min_n]


def split(scenes: Sequence, train_fraction: float, seed: int):
    if not 0.0 < train_fraction < 1.0:
        raise UsageError(f"train_fraction must lie in (0, 1), got {train_fraction}", module="corpus")
    order = np.random.default_rng(seed).permutation(len(scenes))
    n_train = int(round(train_fraction * len(scenes)))
    return [scenes[i] for i in order[:n_train]], [scenes[i] for i in order[n_train:]]


@dataclass(frozen=True)
class SyntheticWorldSpec:
    """Disjoint category themes with a per-category home cell.

    Theme t owns categories t*group_size .. (t+1)*group_size - 1. A category's
    home cell is (category mod H*W) + 1.
    """

    n_themes: int = 5
    group_size: int = 4
    grid: GridSpec = field(default_factory=lambda: GridSpec(3, 3))
    home_prob: float = 0.6
    object_count_range: tuple[int, int] = (2, 6)
    seed: int = 0

    def __post_init__(self):
        lo, hi = self.object_count_range
        if self.n_themes < 1 or self.group_size < 1:
            raise UsageError("n_themes and group_size must be positive", module="corpus")
        if not 0.0 < self.home_prob < 1.0:
            raise UsageError(f"home_prob must lie in (0, 1), got {self.home_prob}", module="corpus")
        if lo < 2 or hi < lo:
            raise UsageError(f"object_count_range {self.object_count_range} invalid (min must be >= 2)", module="corpus")

    @property
    def n_categories(self) -> int:
        return self.n_themes * self.group_size

    def category_names(self) -> tuple[str, ...]:
        return tuple(f"t{c // self.group_size}_c{c % self.group_size}" for c in range(self.n_categories))

    def vocabulary(self) -> Vocabulary:
        return Vocabulary(self.category_names(), self.grid)

    def theme_of(self, category: int) -> int:
        return category // self.group_size

    def theme_categories(self, theme: int) -> range:
        return range(theme * self.group_size, (theme + 1) * self.group_size)

    def home_cell(self, category: int) -> int:
        return category % self.grid.n_cells + 1

    def word_prob(self, word: SceneWord, theme: int) -> float:
        """P(word | theme) under the generator."""
        if self.theme_of(word.category) != theme:
            return 0.0
        n = self.grid.n_cells
        if n == 1:
            loc = 1.0
        elif word.cell == self.home_cell(word.category):
            loc = self.home_prob
        else:
            loc = (1.0 - self.home_prob) / (n - 1)
        return loc / self.group_size

    def to_json(self) -> dict:
        return {
            "n_themes": self.n_themes,
            "group_size": self.group_size,
            "grid": {"h": self.grid.h, "w": self.grid.w},
            "home_prob": self.home_prob,
            "object_count_range": list(self.object_count_range),
            "seed": self.seed,
        }

    @classmethod
    def from_json(cls, doc: dict) -> "SyntheticWorldSpec":
        return cls(
            n_themes=int(doc["n_themes"]),
            group_size=int(doc["group_size"]),
            grid=GridSpec(int(doc["grid"]["h"]), int(doc["grid"]["w"])),
            home_prob=float(doc["home_prob"]),
            object_count_range=tuple(int(x) for x in doc["object_count_range"]),
            seed=int(doc["seed"]),
        )


def generate_synthetic(spec: SyntheticWorldSpec, n_scenes: int) -> list[SceneSentence]:
    rng = np.random.default_rng(spec.seed)
    lo, hi = spec.object_count_range
    n_cells = spec.grid.n_cells
    themes = rng.integers(0, spec.n_themes, size=n_scenes)
    counts = rng.integers(lo, hi + 1, size=n_scenes)
    total = int(counts.sum())
    scene_of = np.repeat(np.arange(n_scenes), counts)
    cats = themes[scene_of] * spec.group_size + rng.integers(0, spec.group_size, size=total)
    home = cats % n_cells
    at_home = rng.random(total) < spec.home_prob
    if n_cells > 1:
        other = rng.integers(0, n_cells - 1, size=total)
        other = np.where(other >= home, other + 1, other)
        cells = np.where(at_home, home, other) + 1
    else:
        cells = np.ones(total, dtype=np.int64)

    bounds = np.concatenate([[0], np.cumsum(counts)])
    cells_l, cats_l = cells.tolist(), cats.tolist()
    return [
        SceneSentence.from_words(zip(cells_l[a:b], cats_l[a:b]))
        for a, b in zip(bounds[:-1].tolist(), bounds[1:].tolist())
    ]


def cell_box(cell: int, grid: GridSpec, size: float = 0.5) -> tuple[float, float, float, float]:
    """A box centered in ``cell`` spanning ``size`` of the cell's extent."""
    row, col = divmod(cell - 1, grid.w)
    cx, cy = (col + 0.5) / grid.w, (row + 0.5) / grid.h
    hw, hh = size / (2 * grid.w), size / (2 * grid.h)
    return (cx - hw, cy - hh, cx + hw, cy + hh)


def sentence_to_record(scene_id: str, s: SceneSentence, v: Vocabulary) -> SceneRecord:
    return SceneRecord(
        scene_id, tuple(SceneObject(v.categories[w.category], cell_box(w.cell, v.grid)) for w in s)
    )
