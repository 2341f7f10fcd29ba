"""Scene sentences: detections encoded as sorted (grid cell, category) words.

Token layout for a vocabulary with categories C on an H x W grid::

    0            PAD
    1            MASK
    2 + c*H*W + (cell - 1)   object word (cell, c)
"""
from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, NamedTuple, Sequence

from .errors import DecodeError, DomainError, LookupFailure, UsageError

PAD = 0
MASK = 1
N_SPECIAL = 2


@dataclass(frozen=True)
class GridSpec:
    h: int
    w: int

    def __post_init__(self):
        if not (isinstance(self.h, int) and isinstance(self.w, int)) or self.h < 1 or self.w < 1:
            raise UsageError(f"grid must be positive integers, got {self.h}x{self.w}", module="scene_lang")

    @property
    def n_cells(self) -> int:
        return self.h * self.w

    @classmethod
    def parse(cls, text: str) -> "GridSpec":
        m = re.fullmatch(r"\s*(\d+)\s*[xX]\s*(\d+)\s*", text)
        if m is None:
            raise UsageError(f"malformed grid {text!r}, expected HxW", module="scene_lang")
        return cls(int(m.group(1)), int(m.group(2)))

    def __str__(self):
        return f"{self.h}x{self.w}"


@dataclass(frozen=True)
class SceneObject:
    category: str
    bbox: tuple[float, float, float, float]

    def __post_init__(self):
        x0, y0, x1, y1 = self.bbox
        if not (0.0 <= x0 <= x1 <= 1.0 and 0.0 <= y0 <= y1 <= 1.0):
            raise DomainError(f"bbox {self.bbox} for {self.category!r} is not a normalized corner box")

    @property
    def center(self) -> tuple[float, float]:
        x0, y0, x1, y1 = self.bbox
        return (x0 + x1) / 2.0, (y0 + y1) / 2.0


class SceneWord(NamedTuple):
    cell: int
    category: int


@dataclass(frozen=True)
class SceneSentence:
    """Words ordered by (cell, category); equal words keep input order."""

    words: tuple[SceneWord, ...] = ()

    def __post_init__(self):
        for a, b in zip(self.words, self.words[1:]):
            if (a.cell, a.category) > (b.cell, b.category):
                raise DomainError(f"sentence not in canonical order: {a} before {b}")

    @classmethod
    def from_words(cls, words: Iterable[Sequence[int]]) -> "SceneSentence":
        ws = [SceneWord(int(c), int(k)) for c, k in words]
        # list.sort is stable, so duplicates keep their relative order
        ws.sort(key=lambda w: (w.cell, w.category))
        return cls(tuple(ws))

    def __len__(self):
        return len(self.words)

    def __iter__(self):
        return iter(self.words)

    def __getitem__(self, i):
        return self.words[i]

    def to_list(self) -> list[list[int]]:
        return [[w.cell, w.category] for w in self.words]


@dataclass(frozen=True)
class Vocabulary:
    categories: tuple[str, ...]
    grid: GridSpec

    def __post_init__(self):
        if len(self.categories) == 0:
            raise UsageError("vocabulary needs at least one category", module="scene_lang")
        if len(set(self.categories)) != len(self.categories):
            raise UsageError("duplicate category names in vocabulary", module="scene_lang")
        object.__setattr__(self, "_index", {c: i for i, c in enumerate(self.categories)})

    @property
    def n_categories(self) -> int:
        return len(self.categories)

    @property
    def n_object_tokens(self) -> int:
        return self.n_categories * self.grid.n_cells

    @property
    def size(self) -> int:
        return N_SPECIAL + self.n_object_tokens

    def category_index(self, name: str) -> int:
        try:
            return self._index[name]
        except KeyError:
            raise LookupFailure(f"unknown category {name!r}") from None

    def token_of(self, word: SceneWord) -> int:
        cell, cat = word
        if not (1 <= cell <= self.grid.n_cells) or not (0 <= cat < self.n_categories):
            raise DomainError(f"word {tuple(word)} outside vocabulary range")
        return N_SPECIAL + cat * self.grid.n_cells + (cell - 1)

    def word_of(self, token: int) -> SceneWord:
        token = int(token)
        if not (N_SPECIAL <= token < self.size):
            raise DecodeError(f"token {token} is not an object token (valid: {N_SPECIAL}..{self.size - 1})")
        cat, off = divmod(token - N_SPECIAL, self.grid.n_cells)
        return SceneWord(off + 1, cat)

    def category_tokens(self, category: int) -> range:
        start = N_SPECIAL + category * self.grid.n_cells
        return range(start, start + self.grid.n_cells)

    def to_json(self) -> dict:
        return {"categories": list(self.categories), "grid": {"h": self.grid.h, "w": self.grid.w}}

    @classmethod
    def from_json(cls, doc: dict) -> "Vocabulary":
        try:
            return cls(tuple(doc["categories"]), GridSpec(int(doc["grid"]["h"]), int(doc["grid"]["w"])))
        except (KeyError, TypeError) as exc:
            raise UsageError(f"malformed vocabulary document: {exc}", module="scene_lang") from None

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=2) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        return cls.from_json(json.loads(Path(path).read_text(encoding="utf-8")))


def grid_cell_of(center: tuple[float, float], grid: GridSpec) -> int:
    """Row-major cell label in 1..H*W; origin top-left, coordinate 1.0 clamps to the last row/col."""
    x, y = center
    if not (0.0 <= x <= 1.0 and 0.0 <= y <= 1.0) or math.isnan(x) or math.isnan(y):
        raise DomainError(f"center {center} outside the unit square")
    col = min(int(math.floor(x * grid.w)), grid.w - 1)
    row = min(int(math.floor(y * grid.h)), grid.h - 1)
    return row * grid.w + col + 1


def encode_scene(objects: Iterable[SceneObject], grid: GridSpec, categories) -> SceneSentence:
    """One word per object, keyed by its bbox center. Detection confidences are not encoded."""
    if isinstance(categories, Vocabulary):
        index = categories.category_index
    else:
        lookup = {c: i for i, c in enumerate(categories)}

        def index(name):
            try:
                return lookup[name]
            except KeyError:
                raise LookupFailure(f"unknown category {name!r}") from None

    return SceneSentence.from_words((grid_cell_of(o.center, grid), index(o.category)) for o in objects)


def tokenize(s: SceneSentence, v: Vocabulary) -> list[int]:
    return [v.token_of(w) for w in s.words]


def detokenize(tokens: Iterable[int], v: Vocabulary) -> SceneSentence:
    # tokens come from a tokenized sentence, so they are already in canonical order
    return SceneSentence(tuple(v.word_of(t) for t in tokens))
