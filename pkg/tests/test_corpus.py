import json
from collections import Counter

import numpy as np
import pytest

from scenectx.corpus import (
    SceneRecord,
    SyntheticWorldSpec,
    filter_min_objects,
    generate_synthetic,
    import_coco,
    load_scenes,
    read_records,
    sentence_to_record,
    split,
    write_records,
)
from scenectx.errors import IntegrityError, LookupFailure, ParseError, UsageError
from scenectx.scene_lang import GridSpec, SceneObject, SceneSentence, Vocabulary, encode_scene

WORLD = SyntheticWorldSpec(seed=1)


def _coco(tmp_path, images, annotations, categories=({"id": 1, "name": "cat"}, {"id": 3, "name": "dog"})):
    path = tmp_path / "instances.json"
    path.write_text(json.dumps({"images": images, "annotations": annotations, "categories": list(categories)}))
    return path


def test_import_coco_normalizes(tmp_path):
    src = _coco(
        tmp_path,
        [{"id": 7, "width": 100, "height": 200}],
        [{"id": 1, "image_id": 7, "category_id": 3, "bbox": [10, 20, 30, 40]}],
    )
    assert import_coco(src, tmp_path / "out.jsonl") == 1
    (rec,) = read_records(tmp_path / "out.jsonl")
    assert rec.scene_id == "7"
    assert rec.objects[0].category == "dog"
    assert rec.objects[0].bbox == pytest.approx((0.1, 0.1, 0.4, 0.3), abs=1e-12)


def test_import_coco_clamps(tmp_path):
    src = _coco(
        tmp_path,
        [{"id": 1, "width": 10, "height": 10}],
        [{"id": 1, "image_id": 1, "category_id": 1, "bbox": [-2, 5, 20, 8]}],
    )
    import_coco(src, tmp_path / "out.jsonl")
    (rec,) = read_records(tmp_path / "out.jsonl")
    assert rec.objects[0].bbox == (0.0, 0.5, 1.0, 1.0)


def test_import_coco_integrity(tmp_path):
    src = _coco(tmp_path, [{"id": 1, "width": 10, "height": 10}],
                [{"id": 1, "image_id": 2, "category_id": 1, "bbox": [0, 0, 1, 1]}])
    with pytest.raises(IntegrityError):
        import_coco(src, tmp_path / "out.jsonl")
    src = _coco(tmp_path, [{"id": 1, "width": 0, "height": 10}],
                [{"id": 1, "image_id": 1, "category_id": 1, "bbox": [0, 0, 1, 1]}])
    with pytest.raises(IntegrityError):
        import_coco(src, tmp_path / "out.jsonl")


def test_import_coco_empty(tmp_path):
    src = _coco(tmp_path, [{"id": 1, "width": 10, "height": 10}], [])
    assert import_coco(src, tmp_path / "out.jsonl") == 0
    assert (tmp_path / "out.jsonl").read_text() == ""


def test_load_scenes(tmp_path):
    v = Vocabulary(("cat", "dog"), GridSpec(3, 3))
    path = tmp_path / "s.jsonl"
    path.write_text(
        '{"scene_id": "a", "objects": [{"category": "cat", "bbox": [0.1, 0.1, 0.2, 0.2]}]}\n'
        '{"scene_id": "b", "objects": [{"category": "dog", "bbox": [0.8, 0.8, 0.9, 0.9]},'
        ' {"category": "cat", "bbox": [0.4, 0.4, 0.6, 0.6]}]}\n'
    )
    out = load_scenes(path, v)
    assert [sid for sid, _ in out] == ["a", "b"]
    assert out[1][1].to_list() == [[5, 0], [9, 1]]


def test_load_scenes_errors(tmp_path):
    v = Vocabulary(("cat",), GridSpec(3, 3))
    path = tmp_path / "s.jsonl"
    path.write_text('{"scene_id": "x1", "objects": [{"category": "dragon", "bbox": [0, 0, 1, 1]}]}\n')
    with pytest.raises(LookupFailure) as info:
        load_scenes(path, v)
    assert "dragon" in str(info.value) and "x1" in str(info.value)
    path.write_text('{"scene_id": "ok", "objects": []}\n{not json\n')
    with pytest.raises(ParseError, match="line 2"):
        load_scenes(path, v)
    path.write_text("")
    assert load_scenes(path, v) == []


def test_filter_min_objects():
    s = [SceneSentence.from_words([(1, 0)] * n) for n in (1, 2, 3)]
    assert filter_min_objects(s, 2) == s[1:]
    assert filter_min_objects(s, 5) == []
    assert filter_min_objects(s, 0) == s
    pairs = [(str(i), x) for i, x in enumerate(s)]
    assert [p[0] for p in filter_min_objects(pairs)] == ["1", "2"]


def test_split():
    items = list(range(10))
    tr, ev = split(items, 0.8, seed=7)
    assert (len(tr), len(ev)) == (8, 2)
    assert sorted(tr + ev) == items
    assert split(items, 0.8, seed=7) == (tr, ev)
    tr8, ev8 = split(items, 0.8, seed=8)
    assert sorted(tr8 + ev8) == items
    assert tr8 != tr
    with pytest.raises(UsageError):
        split(items, 1.0, seed=1)


def test_filter_then_split_keeps_min():
    scenes = generate_synthetic(SyntheticWorldSpec(seed=3, object_count_range=(2, 4)), 200)
    scenes = [SceneSentence(s.words[:1]) if i % 3 == 0 else s for i, s in enumerate(scenes)]
    tr, ev = split(filter_min_objects(scenes, 2), 0.5, seed=0)
    assert all(len(s) >= 2 for s in tr + ev)


def test_synthetic_single_theme():
    for s in generate_synthetic(WORLD, 1000):
        assert len({WORLD.theme_of(w.category) for w in s}) == 1
        assert 2 <= len(s) <= 6


def test_synthetic_home_frequency():
    scenes = generate_synthetic(SyntheticWorldSpec(seed=11), 25000)
    words = [w for s in scenes for w in s]
    assert len(words) > 100_000
    frac = np.mean([w.cell == WORLD.home_cell(w.category) for w in words])
    assert abs(frac - 0.6) <= 0.01


def test_synthetic_off_home_cells_uniform():
    scenes = generate_synthetic(SyntheticWorldSpec(seed=5), 20000)
    off = Counter((w.cell - WORLD.home_cell(w.category)) % 9 for s in scenes for w in s
                  if w.cell != WORLD.home_cell(w.category))
    assert set(off) == set(range(1, 9))
    counts = np.array([off[k] for k in range(1, 9)])
    expected = counts.sum() / 8
    chi2 = ((counts - expected) ** 2 / expected).sum()
    assert chi2 < 26.1  # chi-square(7) 0.9995 quantile


def test_synthetic_within_theme_pairs_uniform():
    scenes = generate_synthetic(SyntheticWorldSpec(seed=9), 20000)
    rng = np.random.default_rng(0)
    pairs = Counter()
    # one random pair per scene keeps the observations independent
    for s in scenes:
        a, b = rng.choice(len(s), size=2, replace=False)
        pairs[tuple(sorted((s[a].category % 4, s[b].category % 4)))] += 1
    # unordered pairs (i<j) have twice the mass of (i,i)
    expected_w = {(i, j): (2 if i != j else 1) for i in range(4) for j in range(i, 4)}
    total = sum(pairs.values())
    z = sum(expected_w.values())
    chi2 = sum((pairs[k] - total * w / z) ** 2 / (total * w / z) for k, w in expected_w.items())
    assert chi2 < 32.9  # chi-square(9) 0.9999 quantile


def test_synthetic_deterministic(tmp_path):
    a = generate_synthetic(WORLD, 300)
    b = generate_synthetic(WORLD, 300)
    assert a == b
    v = WORLD.vocabulary()
    write_records([sentence_to_record(str(i), s, v) for i, s in enumerate(a)], tmp_path / "a.jsonl")
    write_records([sentence_to_record(str(i), s, v) for i, s in enumerate(b)], tmp_path / "b.jsonl")
    assert (tmp_path / "a.jsonl").read_bytes() == (tmp_path / "b.jsonl").read_bytes()


def test_sentence_record_round_trip():
    v = WORLD.vocabulary()
    for s in generate_synthetic(WORLD, 200):
        rec = sentence_to_record("x", s, v)
        assert encode_scene(rec.objects, v.grid, v) == s


def test_world_spec_validation():
    with pytest.raises(UsageError):
        SyntheticWorldSpec(home_prob=1.0)
    with pytest.raises(UsageError):
        SyntheticWorldSpec(object_count_range=(1, 3))
    assert SyntheticWorldSpec.from_json(WORLD.to_json()) == WORLD


def test_duplicate_scene_ids_rejected(tmp_path):
    write_records([SceneRecord("a", ()), SceneRecord("a", ())], tmp_path / "d.jsonl")
    with pytest.raises(ParseError, match="duplicate"):
        read_records(tmp_path / "d.jsonl")
