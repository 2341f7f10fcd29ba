from collections import Counter

import pytest
from hypothesis import given
from hypothesis import strategies as st

from scenectx.attacks import (
    APPEARING,
    HIDING,
    MISCLASSIFICATION,
    AttackRecord,
    PoolPolicy,
    apply_attack,
    attack_appear,
    attack_hide,
    attack_misclassify,
    generate_attack_set,
    read_attacks,
    replay,
    write_attacks,
)
from scenectx.baselines import bayes_oracle_score
from scenectx.corpus import SyntheticWorldSpec, generate_synthetic
from scenectx.errors import AttackInfeasible, GenerationError, UsageError
from scenectx.scene_lang import GridSpec, SceneSentence, SceneWord

WORLD = SyntheticWorldSpec(seed=1)
G33 = GridSpec(3, 3)
CORPUS = [(f"s{i}", s) for i, s in enumerate(generate_synthetic(WORLD, 2000))]


def S(*words):
    return SceneSentence.from_words(words)


def test_misclassify_example():
    # victim index 0 (bus=5) relabeled to bird=2; the seed is searched so the victim is index 0
    s = S((5, 5), (6, 9))
    for seed in range(100):
        rec = attack_misclassify(s, seed, [2])
        if rec.target["index"] == 0:
            break
    assert rec.attacked.to_list() == [[5, 2], [6, 9]]
    assert rec.target == {"index": 0, "from": [5, 5], "to": [5, 2]}


def test_misclassify_infeasible_single_category():
    with pytest.raises(AttackInfeasible):
        attack_misclassify(S((1, 0), (2, 0)), 0, [0])


def test_misclassify_cross_theme_mixes_themes():
    policy = PoolPolicy("cross_theme", 20, G33, WORLD)
    for sid, s in CORPUS[:200]:
        rec = apply_attack(MISCLASSIFICATION, s, 7, policy, sid)
        assert len({WORLD.theme_of(w.category) for w in rec.attacked}) == 2
        assert bayes_oracle_score(WORLD, rec.attacked) == 0.0


def test_in_theme_off_home_policy():
    policy = PoolPolicy("in_theme_off_home", 20, G33, WORLD)
    for sid, s in CORPUS[:200]:
        rec = apply_attack(MISCLASSIFICATION, s, 3, policy, sid)
        new = SceneWord(*rec.target["to"])
        assert WORLD.theme_of(new.category) == WORLD.theme_of(rec.target["from"][1])
        assert new.category != rec.target["from"][1]
        assert new.cell != WORLD.home_cell(new.category)
    with pytest.raises(UsageError):
        apply_attack(APPEARING, CORPUS[0][1], 0, policy)


def test_hide():
    s = S((1, 0), (4, 2), (9, 3))
    rec = attack_hide(s, 5)
    assert len(rec.attacked) == 2
    assert not (Counter(rec.attacked.words) - Counter(s.words))
    with pytest.raises(AttackInfeasible):
        attack_hide(S((1, 0)), 0)


def test_hide_uniform_target():
    s = S((1, 0), (2, 1), (3, 2), (4, 3))
    counts = Counter(attack_hide(s, seed).target["index"] for seed in range(10_000))
    assert set(counts) == {0, 1, 2, 3}
    assert all(abs(c - 2500) <= 150 for c in counts.values())


def test_appear_example():
    s = S((5, 7))
    for seed in range(500):
        rec = attack_appear(s, seed, [0], GridSpec(3, 3))
        if rec.target["inserted"] == [1, 0]:
            break
    assert rec.attacked.to_list() == [[1, 0], [5, 7]]


def test_appear_saturated():
    g = GridSpec(1, 2)
    s = S((1, 0), (2, 0), (1, 1), (2, 1))
    with pytest.raises(AttackInfeasible):
        attack_appear(s, 0, [0, 1], g)


def test_appear_cross_theme_breaks_context():
    policy = PoolPolicy("cross_theme", 20, G33, WORLD)
    for sid, s in CORPUS[:200]:
        rec = apply_attack(APPEARING, s, 11, policy, sid)
        assert bayes_oracle_score(WORLD, rec.attacked) == 0.0


@given(st.integers(0, 1999), st.integers(0, 2**32), st.sampled_from([MISCLASSIFICATION, HIDING, APPEARING]),
       st.sampled_from(["uniform", "cross_theme"]))
def test_edit_signatures_and_replay(idx, seed, kind, pool):
    sid, s = CORPUS[idx]
    policy = PoolPolicy(pool, 20, G33, WORLD)
    rec = apply_attack(kind, s, seed, policy, sid)
    delta = {MISCLASSIFICATION: 0, HIDING: -1, APPEARING: 1}[kind]
    assert len(rec.attacked) - len(rec.benign) == delta
    a, b = Counter(rec.attacked.words), Counter(rec.benign.words)
    if kind == MISCLASSIFICATION:
        assert Counter(w.cell for w in rec.attacked) == Counter(w.cell for w in rec.benign)
    elif kind == HIDING:
        assert not (a - b) and sum((b - a).values()) == 1
    else:
        assert not (b - a) and sum((a - b).values()) == 1
    keys = [(w.cell, w.category) for w in rec.attacked]
    assert keys == sorted(keys)
    assert replay(rec, policy) == rec


def test_generate_attack_set_deterministic(tmp_path):
    policy = PoolPolicy("uniform", 20, G33)
    a = generate_attack_set(CORPUS, MISCLASSIFICATION, 100, 42, policy)
    b = generate_attack_set(CORPUS, MISCLASSIFICATION, 100, 42, policy)
    assert a == b and len(a) == 100
    write_attacks(a, tmp_path / "a.jsonl")
    write_attacks(b, tmp_path / "b.jsonl")
    assert (tmp_path / "a.jsonl").read_bytes() == (tmp_path / "b.jsonl").read_bytes()
    assert read_attacks(tmp_path / "a.jsonl") == a
    assert len({r.scene_id for r in a}) > 50


def test_generate_hiding_two_word_corpus():
    corpus = [(f"x{i}", S((1, i % 4), (5, (i + 1) % 4))) for i in range(50)]
    recs = generate_attack_set(corpus, HIDING, 40, 1, PoolPolicy("uniform", 4, G33))
    assert all(len(r.attacked) == 1 for r in recs)


def test_generate_skips_infeasible_then_fails():
    corpus = [("one", S((1, 0))), ("two", S((1, 0), (2, 0)))]
    recs = generate_attack_set(corpus, HIDING, 10, 3, PoolPolicy("uniform", 1, G33))
    assert {r.scene_id for r in recs} == {"two"}
    with pytest.raises(GenerationError) as info:
        generate_attack_set([("one", S((1, 0)))], HIDING, 5, 0, PoolPolicy("uniform", 1, G33), max_draws=20)
    assert info.value.achieved == 0


def test_ten_thousand_cross_theme_misclassifications():
    corpus = [(f"s{i}", s) for i, s in enumerate(generate_synthetic(SyntheticWorldSpec(seed=2), 20000))]
    recs = generate_attack_set(corpus, MISCLASSIFICATION, 10_000, 0, PoolPolicy("cross_theme", 20, G33, WORLD),
                               max_draws=10_000)
    assert len(recs) == 10_000


def test_record_json_round_trip():
    rec = apply_attack(APPEARING, CORPUS[3][1], 9, PoolPolicy("uniform", 20, G33), "s3")
    assert AttackRecord.from_json(rec.to_json()) == rec
    doc = rec.to_json()
    assert set(doc) >= {"scene_id", "attack_type", "seed", "benign", "attacked", "target"}
