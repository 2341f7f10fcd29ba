"""Comparison scorers: a context-free unigram model, a category
co-occurrence table, and the exact Bayes scorer for the synthetic world."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .corpus import SyntheticWorldSpec
from .errors import UsageError
from .scene_lang import SceneSentence, SceneWord, Vocabulary


@dataclass(frozen=True)
class CooccurrenceTable:
    categories: tuple[str, ...]
    n_cells: int
    unigram: np.ndarray  # counts per object word, index = category * n_cells + cell - 1
    pair: np.ndarray  # symmetric [C x C] co-occurrence counts
    alpha: float = 1.0
    n_sentences: int = 0

    @property
    def n_categories(self) -> int:
        return len(self.categories)

    def to_json(self) -> dict:
        return {
            "categories": list(self.categories),
            "n_cells": self.n_cells,
            "alpha": self.alpha,
            "n_sentences": self.n_sentences,
            "unigram": self.unigram.astype(int).tolist(),
            "pair": self.pair.astype(int).reshape(-1).tolist(),
        }

    @classmethod
    def from_json(cls, doc: dict) -> "CooccurrenceTable":
        c = len(doc["categories"])
        return cls(
            tuple(doc["categories"]),
            int(doc["n_cells"]),
            np.asarray(doc["unigram"], dtype=np.int64),
            np.asarray(doc["pair"], dtype=np.int64).reshape(c, c),
            float(doc["alpha"]),
            int(doc["n_sentences"]),
        )

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json()) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "CooccurrenceTable":
        return cls.from_json(json.loads(Path(path).read_text(encoding="utf-8")))


def fit_counts(corpus: Sequence[SceneSentence], vocab: Vocabulary, alpha: float = 1.0) -> CooccurrenceTable:
    if len(corpus) == 0:
        raise UsageError("cannot fit counts on an empty corpus", module="baselines")
    n_cells, n_cat = vocab.grid.n_cells, vocab.n_categories
    unigram = np.zeros(n_cat * n_cells, dtype=np.int64)
    pair = np.zeros((n_cat, n_cat), dtype=np.int64)
    for s in corpus:
        cats = [w.category for w in s]
        for w in s:
            unigram[w.category * n_cells + w.cell - 1] += 1
        # every unordered pair of distinct occurrences, counted in both cells
        for a in range(len(cats)):
            for b in range(a + 1, len(cats)):
                pair[cats[a], cats[b]] += 1
                pair[cats[b], cats[a]] += 1
    return CooccurrenceTable(vocab.categories, n_cells, unigram, pair, alpha, len(corpus))


def unigram_score(table: CooccurrenceTable, sentence: Iterable[SceneWord]) -> float:
    """Smallest smoothed marginal word probability in the sentence."""
    total = int(table.unigram.sum())
    denom = total + table.alpha * len(table.unigram)
    probs = [
        (table.unigram[w.category * table.n_cells + w.cell - 1] + table.alpha) / denom for w in sentence
    ]
    return float(min(probs)) if probs else 1.0


def conditional(table: CooccurrenceTable) -> np.ndarray:
    """cond[i, j] = smoothed P(category i | category j) from pair counts."""
    c = table.n_categories
    num = table.pair + table.alpha
    return num / num.sum(axis=0, keepdims=True)


def cooccurrence_score(table: CooccurrenceTable, sentence: Sequence[SceneWord], cond=None) -> float:
    """Each word needs one supporting neighbour: min over words of max over others of P(c_i | c_j)."""
    if len(sentence) < 2:
        raise UsageError("co-occurrence scoring needs at least two words", module="baselines")
    if cond is None:
        cond = conditional(table)
    cats = [w.category for w in sentence]
    support = [max(cond[ci, cj] for j, cj in enumerate(cats) if j != i) for i, ci in enumerate(cats)]
    return float(min(support))


def _theme_likelihoods(world: SyntheticWorldSpec, words: Sequence[SceneWord]) -> np.ndarray:
    """lik[w, theme] = P(word w | theme)."""
    return np.array([[world.word_prob(w, th) for th in range(world.n_themes)] for w in words], dtype=np.float64)


def oracle_position_confidences(world: SyntheticWorldSpec, sentence: Sequence[SceneWord]) -> list[float]:
    """P(word_i | other words) under the generator, theme marginalized exactly.

    When no theme can explain the other words the conditional is taken as 0.
    """
    lik = _theme_likelihoods(world, sentence)
    out = []
    for i in range(len(lik)):
        post = np.prod(np.delete(lik, i, axis=0), axis=0)  # uniform theme prior cancels
        z = post.sum()
        out.append(float((post / z) @ lik[i]) if z > 0 else 0.0)
    return out


def bayes_oracle_score(world: SyntheticWorldSpec, sentence: Sequence[SceneWord]) -> float:
    for w in sentence:
        if not 0 <= w.category < world.n_categories:
            raise UsageError(f"category {w.category} outside the synthetic world", module="baselines")
    conf = oracle_position_confidences(world, sentence)
    return float(min(conf)) if conf else 1.0


def _word_table(world: SyntheticWorldSpec) -> tuple[list[SceneWord], np.ndarray]:
    words = [SceneWord(cell, c) for c in range(world.n_categories) for cell in range(1, world.grid.n_cells + 1)]
    return words, _theme_likelihoods(world, words)


def sorted_slot_conditional(world: SyntheticWorldSpec, sentence: SceneSentence, i: int) -> np.ndarray:
    """Exact P(word at slot i = w | all other slots of the sorted sentence) over object words.

    Unlike ``oracle_position_confidences`` this also uses what the sorted
    order reveals: the hidden word must sort between its neighbours. With
    multiset probability proportional to n!/prod(mult!) * prod P(w|theme),
    candidate w gains a factor 1/(count of w among the others + 1).
    Index of the result = category * n_cells + cell - 1.
    """
    words, lik = _word_table(world)
    others = [w for j, w in enumerate(sentence) if j != i]
    post = np.ones(world.n_themes)
    for w in others:
        post = post * np.array([world.word_prob(w, th) for th in range(world.n_themes)])
    weight = lik @ post
    lo = (sentence[i - 1].cell, sentence[i - 1].category) if i > 0 else None
    hi = (sentence[i + 1].cell, sentence[i + 1].category) if i + 1 < len(sentence) else None
    mult = {}
    for w in others:
        mult[w] = mult.get(w, 0) + 1
    for idx, w in enumerate(words):
        key = (w.cell, w.category)
        if (lo is not None and key < lo) or (hi is not None and key > hi):
            weight[idx] = 0.0
        else:
            weight[idx] /= mult.get(w, 0) + 1
    z = weight.sum()
    return weight / z if z > 0 else weight


def oracle_nll(world: SyntheticWorldSpec, corpus: Sequence[SceneSentence], use_order: bool = False) -> float:
    """Mean -log P(true word | rest) over every position of every sentence.

    ``use_order=False`` uses the order-free conditional of ``bayes_oracle_score``;
    ``use_order=True`` uses the exact conditional given the sorted layout, which
    is the true lower bound for a model that sees positions.
    """
    n_cells = world.grid.n_cells
    total, count = 0.0, 0
    for s in corpus:
        if use_order:
            for i, w in enumerate(s):
                p = sorted_slot_conditional(world, s, i)[w.category * n_cells + w.cell - 1]
                total -= math.log(p)
                count += 1
        else:
            for c in oracle_position_confidences(world, list(s)):
                total -= math.log(c)
                count += 1
    return total / count
