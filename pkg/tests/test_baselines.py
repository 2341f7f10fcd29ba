import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from scenectx.baselines import (
    CooccurrenceTable,
    bayes_oracle_score,
    conditional,
    cooccurrence_score,
    fit_counts,
    oracle_nll,
    oracle_position_confidences,
    sorted_slot_conditional,
    unigram_score,
)
from scenectx.corpus import SyntheticWorldSpec, generate_synthetic
from scenectx.errors import UsageError
from scenectx.scene_lang import GridSpec, SceneSentence, SceneWord, Vocabulary

WORLD = SyntheticWorldSpec(seed=1)
V = WORLD.vocabulary()
AB = Vocabulary(("A", "B", "C"), GridSpec(3, 3))


def S(*words):
    return SceneSentence.from_words(words)


def test_fit_counts_single_pair():
    t = fit_counts([S((1, 0), (2, 1))], AB)
    assert t.pair[0, 1] == t.pair[1, 0] == 1
    assert t.pair.sum() == 2
    assert t.unigram[0 * 9 + 0] == 1 and t.unigram[1 * 9 + 1] == 1


def test_fit_counts_singletons_and_empty():
    t = fit_counts([S((1, 0)), S((4, 2))], AB)
    assert t.pair.sum() == 0
    with pytest.raises(UsageError):
        fit_counts([], AB)


def test_fit_counts_order_invariant_and_symmetric():
    corpus = generate_synthetic(WORLD, 300)
    a = fit_counts(corpus, V)
    b = fit_counts(corpus[::-1], V)
    assert np.array_equal(a.pair, b.pair) and np.array_equal(a.unigram, b.unigram)
    assert np.array_equal(a.pair, a.pair.T)


def test_synthetic_counts_have_no_cross_theme_mass():
    t = fit_counts(generate_synthetic(WORLD, 20000), V)
    for i, j in itertools.product(range(20), repeat=2):
        if WORLD.theme_of(i) != WORLD.theme_of(j):
            assert t.pair[i, j] == 0


def test_unigram_score():
    t = fit_counts([S((1, 0), (2, 1))], AB)
    total, vocab = 2, 27
    assert unigram_score(t, [SceneWord(5, 2)]) == pytest.approx(1 / (total + vocab))
    uniform = fit_counts([S(*[(c, k) for k in range(3) for c in range(1, 10)])], AB)
    assert unigram_score(uniform, S((1, 0), (2, 1))) == unigram_score(uniform, S((9, 2)))


@given(st.lists(st.tuples(st.integers(1, 9), st.integers(0, 2)), min_size=1, max_size=5), st.integers(1, 9), st.integers(0, 2))
def test_unigram_min_monotone(words, cell, cat):
    t = fit_counts([S((1, 0), (2, 1), (2, 1), (5, 2))], AB)
    s = S(*words)
    assert unigram_score(t, S(*words, (cell, cat))) <= unigram_score(t, s)


def test_cooccurrence_score():
    t = fit_counts([S((1, 0), (2, 1))] * 50, AB)
    assert cooccurrence_score(t, S((1, 0), (2, 1))) > 0.9
    with pytest.raises(UsageError):
        cooccurrence_score(t, S((1, 0)))
    # category-level: cells and order do not matter
    assert cooccurrence_score(t, S((1, 0), (2, 1))) == cooccurrence_score(t, S((9, 0), (3, 1)))


def test_cooccurrence_cross_theme_at_floor():
    t = fit_counts(generate_synthetic(WORLD, 5000), V)
    cond = conditional(t)
    s = S((1, 0), (5, 4))  # themes 0 and 1
    floor = t.alpha / (t.pair[:, 4] + t.alpha).sum()
    assert cooccurrence_score(t, s) <= max(floor, t.alpha / (t.pair[:, 0] + t.alpha).sum()) + 1e-12
    assert cond[0, 4] == pytest.approx(floor)


def test_table_json_round_trip(tmp_path):
    t = fit_counts(generate_synthetic(WORLD, 100), V)
    t.save(tmp_path / "c.json")
    u = CooccurrenceTable.load(tmp_path / "c.json")
    assert np.array_equal(u.pair, t.pair) and np.array_equal(u.unigram, t.unigram)
    assert (u.alpha, u.n_cells, u.categories) == (t.alpha, t.n_cells, t.categories)


def test_count_conditionals_converge():
    t = fit_counts(generate_synthetic(SyntheticWorldSpec(seed=21), 100_000), V)
    cond = (t.pair) / t.pair.sum(axis=0, keepdims=True)
    # analytic: partner of a theme member is uniform over its 4 categories
    worst = 0.0
    for i, j in itertools.product(range(20), repeat=2):
        if WORLD.theme_of(i) == WORLD.theme_of(j):
            worst = max(worst, abs(cond[i, j] - 0.25))
    assert worst <= 0.02


def test_oracle_closed_form_home_cells():
    s = S(*[(WORLD.home_cell(c), c) for c in (0, 1, 2)])
    for c in oracle_position_confidences(WORLD, list(s)):
        assert c == pytest.approx(0.6 / 4)


def test_oracle_mixed_themes_score_zero():
    assert bayes_oracle_score(WORLD, S((1, 0), (5, 4))) == 0.0
    assert bayes_oracle_score(WORLD, S((1, 0), (2, 1), (5, 4))) == 0.0


def test_oracle_enumeration_matches_brute_force():
    # brute force over themes without the closed-form shortcut
    s = S((1, 0), (3, 2), (7, 3))
    theme_post = [math.prod(WORLD.word_prob(w, th) for w in s.words[1:]) for th in range(5)]
    z = sum(theme_post)
    expected = sum(p / z * WORLD.word_prob(s[0], th) for th, p in enumerate(theme_post))
    assert oracle_position_confidences(WORLD, list(s))[0] == pytest.approx(expected)


def _enumerate_sorted_conditional(world, n, slot, context):
    """P(slot word | other slots) by enumerating every theme and every ordered draw."""
    words = [SceneWord(cell, c) for c in range(world.n_categories) for cell in range(1, world.grid.n_cells + 1)]
    probs = {}
    for th in range(world.n_themes):
        members = [w for w in words if world.word_prob(w, th) > 0]
        for draw in itertools.product(members, repeat=n):
            s = SceneSentence.from_words(draw)
            others = tuple(w for j, w in enumerate(s) if j != slot)
            if others != context:
                continue
            p = math.prod(world.word_prob(w, th) for w in draw)
            probs[s[slot]] = probs.get(s[slot], 0.0) + p
    z = sum(probs.values())
    return {w: p / z for w, p in probs.items()}


def test_sorted_slot_conditional_matches_enumeration():
    world = SyntheticWorldSpec(n_themes=2, group_size=2, grid=GridSpec(1, 3), home_prob=0.5, object_count_range=(2, 3))
    sentences = [S((1, 0), (2, 1), (3, 1)), S((1, 0), (1, 0), (2, 1)), S((2, 2), (3, 3))]
    for s in sentences:
        for i in range(len(s)):
            ctx = tuple(w for j, w in enumerate(s) if j != i)
            exact = _enumerate_sorted_conditional(world, len(s), i, ctx)
            got = sorted_slot_conditional(world, s, i)
            for w, p in exact.items():
                assert got[w.category * 3 + w.cell - 1] == pytest.approx(p, abs=1e-12)
            assert got.sum() == pytest.approx(1.0)


def test_ordered_oracle_is_sharper():
    held = generate_synthetic(SyntheticWorldSpec(seed=99), 300)
    assert oracle_nll(WORLD, held, use_order=True) < oracle_nll(WORLD, held)


@given(st.lists(st.tuples(st.integers(1, 9), st.integers(0, 19)), min_size=1, max_size=6))
@settings(max_examples=50)
def test_baseline_scores_in_unit_interval(words):
    s = S(*words)
    t = fit_counts(generate_synthetic(WORLD, 50), V)
    assert 0.0 <= unigram_score(t, s) <= 1.0
    assert 0.0 <= bayes_oracle_score(WORLD, s) <= 1.0
    if len(s) >= 2:
        assert 0.0 <= cooccurrence_score(t, s) <= 1.0
