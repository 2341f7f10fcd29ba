"""Label-space attack simulation on benign sentences.

Three edits: relabel one object (misclassification), drop one (hiding),
add one (appearing). Which replacement categories are allowed is decided by
a pool policy:

``uniform``
    any category (minus the victim's own, for relabeling).
``cross_theme``
    synthetic world only: categories from themes absent in the sentence,
    so the edit is a guaranteed context violation.
``in_theme_off_home``
    synthetic world only, misclassification only: another category of the
    victim's theme, placed in any cell except that category's home cell.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .corpus import SyntheticWorldSpec
from .errors import AttackInfeasible, GenerationError, UsageError
from .scene_lang import GridSpec, SceneSentence, SceneWord

log = logging.getLogger(__name__)

MISCLASSIFICATION = "misclassification"
HIDING = "hiding"
APPEARING = "appearing"
ATTACK_TYPES = (MISCLASSIFICATION, HIDING, APPEARING)
POOL_POLICIES = ("uniform", "cross_theme", "in_theme_off_home")
APPEAR_MAX_TRIES = 100


@dataclass(frozen=True)
class AttackRecord:
    scene_id: str
    attack_type: str
    benign: SceneSentence
    attacked: SceneSentence
    target: dict
    seed: int
    pool: str = "uniform"

    @property
    def tag(self) -> str:
        return f"{self.attack_type}.{self.pool}"

    def to_json(self) -> dict:
        return {
            "scene_id": self.scene_id,
            "attack_type": self.attack_type,
            "pool": self.pool,
            "seed": self.seed,
            "benign": self.benign.to_list(),
            "attacked": self.attacked.to_list(),
            "target": self.target,
        }

    @classmethod
    def from_json(cls, doc: dict) -> "AttackRecord":
        return cls(
            scene_id=str(doc["scene_id"]),
            attack_type=doc["attack_type"],
            benign=SceneSentence.from_words(doc["benign"]),
            attacked=SceneSentence.from_words(doc["attacked"]),
            target=doc["target"],
            seed=int(doc["seed"]),
            pool=doc.get("pool", "uniform"),
        )


@dataclass(frozen=True)
class PoolPolicy:
    """Candidate categories (and, optionally, cells) for an edit."""

    name: str
    n_categories: int
    grid: GridSpec
    world: SyntheticWorldSpec | None = None

    def __post_init__(self):
        if self.name not in POOL_POLICIES:
            raise UsageError(f"unknown pool policy {self.name!r}", module="attacks")
        if self.name != "uniform" and self.world is None:
            raise UsageError(f"pool policy {self.name!r} needs a synthetic world", module="attacks")

    def relabel_pool(self, s: SceneSentence, i: int) -> list[int]:
        victim = s[i].category
        if self.name == "uniform":
            return [c for c in range(self.n_categories) if c != victim]
        w = self.world
        if self.name == "cross_theme":
            present = {w.theme_of(x.category) for x in s}
            return [c for c in range(self.n_categories) if w.theme_of(c) not in present]
        return [c for c in w.theme_categories(w.theme_of(victim)) if c != victim]

    def relabel_cells(self) -> Callable[[int], list[int]] | None:
        if self.name != "in_theme_off_home":
            return None
        w = self.world
        return lambda c: [cell for cell in range(1, w.grid.n_cells + 1) if cell != w.home_cell(c)]

    def insert_pool(self, s: SceneSentence) -> list[int]:
        if self.name == "uniform":
            return list(range(self.n_categories))
        if self.name == "cross_theme":
            w = self.world
            present = {w.theme_of(x.category) for x in s}
            return [c for c in range(self.n_categories) if w.theme_of(c) not in present]
        raise UsageError("in_theme_off_home applies to misclassification only", module="attacks")


def _as_pool(pool, s, i=None):
    if callable(pool):
        return list(pool(s) if i is None else pool(s, i))
    return list(pool)


def attack_misclassify(s: SceneSentence, seed: int, pool, cells=None, scene_id: str = "") -> AttackRecord:
    """Relabel one uniformly chosen word; its cell is kept unless ``cells`` maps the new category to allowed cells."""
    if len(s) < 1:
        raise AttackInfeasible("misclassification needs a non-empty sentence")
    rng = np.random.default_rng(seed)
    i = int(rng.integers(len(s)))
    victim = s[i]
    candidates = [c for c in _as_pool(pool, s, i) if c != victim.category]
    if not candidates:
        raise AttackInfeasible(f"no replacement category for {tuple(victim)}")
    new_cat = candidates[int(rng.integers(len(candidates)))]
    cell = victim.cell
    if cells is not None:
        allowed = list(cells(new_cat))
        if not allowed:
            raise AttackInfeasible(f"no allowed cell for category {new_cat}")
        cell = allowed[int(rng.integers(len(allowed)))]
    new = SceneWord(cell, new_cat)
    words = list(s.words)
    words[i] = new
    return AttackRecord(
        scene_id, MISCLASSIFICATION, s, SceneSentence.from_words(words),
        {"index": i, "from": list(victim), "to": list(new)}, seed,
    )


def attack_hide(s: SceneSentence, seed: int, scene_id: str = "") -> AttackRecord:
    if len(s) < 2:
        raise AttackInfeasible("hiding needs at least two words so the result stays scoreable")
    rng = np.random.default_rng(seed)
    i = int(rng.integers(len(s)))
    words = list(s.words)
    removed = words.pop(i)
    return AttackRecord(scene_id, HIDING, s, SceneSentence(tuple(words)), {"index": i, "removed": list(removed)}, seed)


def attack_appear(
    s: SceneSentence, seed: int, pool, grid: GridSpec, scene_id: str = "", max_tries: int = APPEAR_MAX_TRIES
) -> AttackRecord:
    """Insert one word with a uniform pool category and a uniform cell, avoiding exact duplicates."""
    cats = _as_pool(pool, s)
    existing = set(s.words)
    if not cats or all(SceneWord(cell, c) in existing for c in cats for cell in range(1, grid.n_cells + 1)):
        raise AttackInfeasible("every (cell, category) slot of the pool is already occupied")
    rng = np.random.default_rng(seed)
    for _ in range(max_tries):
        new = SceneWord(int(rng.integers(1, grid.n_cells + 1)), cats[int(rng.integers(len(cats)))])
        if new not in existing:
            attacked = SceneSentence.from_words(list(s.words) + [new])
            return AttackRecord(
                scene_id, APPEARING, s, attacked,
                {"inserted": list(new), "index": attacked.words.index(new)}, seed,
            )
    raise AttackInfeasible(f"no free slot found in {max_tries} draws")


def derive_seed(master: int, index: int, stream: int = 1) -> int:
    """Per-draw 63-bit seed from (master seed, draw index, stream) via numpy's SeedSequence hash."""
    state = np.random.SeedSequence([master, index, stream]).generate_state(2, dtype=np.uint32)
    return (int(state[0]) << 31) ^ int(state[1])


def apply_attack(attack_type: str, s: SceneSentence, seed: int, policy: PoolPolicy, scene_id: str = "") -> AttackRecord:
    if attack_type == MISCLASSIFICATION:
        rec = attack_misclassify(s, seed, policy.relabel_pool, policy.relabel_cells(), scene_id)
    elif attack_type == HIDING:
        rec = attack_hide(s, seed, scene_id)
    elif attack_type == APPEARING:
        rec = attack_appear(s, seed, policy.insert_pool, policy.grid, scene_id)
    else:
        raise UsageError(f"unknown attack type {attack_type!r}", module="attacks")
    return AttackRecord(rec.scene_id, rec.attack_type, rec.benign, rec.attacked, rec.target, rec.seed, policy.name)


def replay(record: AttackRecord, policy: PoolPolicy) -> AttackRecord:
    return apply_attack(record.attack_type, record.benign, record.seed, policy, record.scene_id)


def generate_attack_set(
    corpus: Sequence[tuple[str, SceneSentence]],
    attack_type: str,
    n_attacks: int,
    seed: int,
    policy: PoolPolicy,
    max_draws: int | None = None,
) -> list[AttackRecord]:
    """Sample scenes with replacement and attack each draw.

    Draw d picks its scene with ``derive_seed(seed, d, 0)`` and attacks with
    ``derive_seed(seed, d, 1)``, which is stored on the record for replay.
    Infeasible draws are skipped and logged.
    """
    if attack_type not in ATTACK_TYPES:
        raise UsageError(f"unknown attack type {attack_type!r}", module="attacks")
    if len(corpus) == 0:
        raise GenerationError("empty corpus", achieved=0)
    if max_draws is None:
        max_draws = 10 * n_attacks + 100
    out: list[AttackRecord] = []
    skipped = 0
    d = 0
    while len(out) < n_attacks:
        if d >= max_draws:
            raise GenerationError(
                f"only {len(out)} of {n_attacks} {attack_type} attacks after {max_draws} draws", achieved=len(out)
            )
        scene_rng = np.random.default_rng(derive_seed(seed, d, 0))
        scene_id, s = corpus[int(scene_rng.integers(len(corpus)))]
        try:
            out.append(apply_attack(attack_type, s, derive_seed(seed, d, 1), policy, scene_id))
        except AttackInfeasible as exc:
            skipped += 1
            log.debug("draw %d on scene %s skipped: %s", d, scene_id, exc)
        d += 1
    if skipped:
        log.info("%s: skipped %d infeasible draws", attack_type, skipped)
    return out


def write_attacks(records: Sequence[AttackRecord], path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for r in records:
            fh.write(json.dumps(r.to_json()) + "\n")


def read_attacks(path) -> list[AttackRecord]:
    with open(path, encoding="utf-8") as fh:
        return [AttackRecord.from_json(json.loads(line)) for line in fh if line.strip()]
