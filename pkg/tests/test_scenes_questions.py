import hashlib
import itertools
import math
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spatial_psl.netpbm import read_pgm, read_ppm, write_pgm, write_ppm
from spatial_psl.questions import (
    ANSWERS,
    CLEVR_ANSWERS,
    CLEVR_VOCAB,
    SORT_VOCAB,
    TEMPLATES,
    QuestionGenerationError,
    QuestionRecord,
    Vocabulary,
    chain_text,
    encode_question,
    evaluate,
    generate_clevr_lite_questions,
    generate_questions,
    read_questions,
    tokenize,
    write_questions,
)
from spatial_psl.scenes import (
    BACKGROUND,
    CLEVR_LITE,
    COLORS,
    PALETTE,
    SORT_OF_CLEVR,
    Scene,
    SceneConfig,
    SceneGenerationError,
    SceneObject,
    generate_scene,
    read_scenes,
    render,
    spatial_relations,
    write_scenes,
)

GOLDEN = Path(__file__).parent / "golden"


def sort_scene(objs, sid="fx"):
    return Scene(sid, SORT_OF_CLEVR, tuple(objs))


def six(shapes=("circle",) * 6, centers=((10, 10), (30, 10), (50, 10), (10, 50), (30, 50), (50, 50))):
    return sort_scene(SceneObject(f"o{i + 1}", s, c, xy, 5) for i, (s, c, xy) in enumerate(zip(shapes, COLORS, centers)))


def _gaps_ok(scene, min_gap=2):
    for a, b in itertools.combinations(scene.objects, 2):
        d = math.hypot(a.center[0] - b.center[0], a.center[1] - b.center[1])
        if d < a.radius + b.radius + min_gap:
            return False
    return True


# scenes -------------------------------------------------------------------


def test_seed_determinism():
    assert generate_scene(42) == generate_scene(42)
    assert generate_scene(42).to_dict() == generate_scene(42).to_dict()
    assert generate_scene(42, CLEVR_LITE) == generate_scene(42, CLEVR_LITE)


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 10**9))
def test_sort_of_clevr_scene_invariants(seed):
    s = generate_scene(seed)
    assert len(s.objects) == 6
    assert sorted(o.color for o in s.objects) == sorted(COLORS)
    assert all(o.shape in ("circle", "rectangle") for o in s.objects)
    assert all(o.radius <= o.center[k] <= 63 - o.radius for o in s.objects for k in (0, 1))
    assert _gaps_ok(s)


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 10**9))
def test_clevr_lite_scene_invariants(seed):
    s = generate_scene(seed, CLEVR_LITE)
    assert 4 <= len(s.objects) <= 10
    assert all(o.size in ("small", "large") and o.material in ("metal", "matte") for o in s.objects)
    assert _gaps_ok(s)


def test_placement_failure_reports_seed():
    with pytest.raises(SceneGenerationError, match="seed 7"):
        generate_scene(7, config=SceneConfig(image_size=24, max_retries=5))


def test_scene_jsonl_round_trip(tmp_path):
    scenes = [generate_scene(i) for i in range(3)] + [generate_scene(5, CLEVR_LITE)]
    write_scenes(tmp_path / "s.jsonl", scenes)
    assert read_scenes(tmp_path / "s.jsonl") == scenes
    bad = (tmp_path / "s.jsonl").read_text().replace("spatial-psl/scene/1", "spatial-psl/scene/0")
    (tmp_path / "bad.jsonl").write_text(bad)
    with pytest.raises(ValueError, match="schema"):
        read_scenes(tmp_path / "bad.jsonl")


def test_render_examples():
    empty = render(sort_scene([]))
    assert (empty == np.array(BACKGROUND, dtype=np.uint8)).all()
    one = render(sort_scene([SceneObject("o1", "circle", "red", (32, 32), 5)]))
    assert tuple(one[32, 32]) == PALETTE["red"]
    assert tuple(one[32, 38]) == BACKGROUND
    with pytest.raises(ValueError):
        render(generate_scene(1, CLEVR_LITE))


def test_render_golden_hash():
    digest = hashlib.sha256(render(generate_scene(42)).tobytes()).hexdigest()
    assert digest == (GOLDEN / "seed42_render.sha256").read_text().strip()


def test_render_pixel_counts_match_shapes():
    s = generate_scene(42)
    img = render(s)
    for o in s.objects:
        n = int((img == np.array(PALETTE[o.color], dtype=np.uint8)).all(-1).sum())
        # lattice points within radius 5 (Gauss circle count) or an 11x11 square
        assert n == (81 if o.shape == "circle" else 121)


def test_relation_examples():
    s = sort_scene(
        [SceneObject("a", "circle", "red", (10, 20), 5), SceneObject("b", "circle", "blue", (50, 20), 5)]
    )
    rel = spatial_relations(s)
    assert rel.left_of("a", "b") and rel.right_of("b", "a")
    # equal y: neither above nor below
    assert not rel.above_of("a", "b") and not rel.below_of("a", "b")


def test_three_object_neighbour_ranking():
    s = sort_scene(
        [
            SceneObject("a", "circle", "red", (10, 10), 5),
            SceneObject("b", "circle", "blue", (25, 10), 5),
            SceneObject("c", "circle", "green", (10, 50), 5),
        ]
    )
    rel = spatial_relations(s)
    # distances: ab 15, ac 40, bc sqrt(15^2 + 40^2) ~ 42.7
    assert rel.closest("a") == "b" and rel.furthest("a") == "c"
    assert rel.closest("b") == "a" and rel.furthest("b") == "c"
    assert rel.closest("c") == "a" and rel.furthest("c") == "b"


def test_relation_antisymmetry_over_random_scenes():
    for seed in range(1000):
        s = generate_scene(seed, CLEVR_LITE if seed % 2 else SORT_OF_CLEVR)
        rel = spatial_relations(s)
        xy = {o.id: o.center for o in s.objects}
        for a, b in itertools.permutations(rel.ids, 2):
            assert rel.left_of(a, b) == rel.right_of(b, a)
            assert rel.above_of(a, b) == rel.below_of(b, a)
            assert not (rel.left_of(a, b) and rel.left_of(b, a))
            # totality except on ties
            assert rel.left_of(a, b) or rel.left_of(b, a) or xy[a][0] == xy[b][0]
            assert rel.above_of(a, b) or rel.above_of(b, a) or xy[a][1] == xy[b][1]


# questions ----------------------------------------------------------------


def test_closest_question_fixture():
    s = six(centers=((10, 10), (22, 10), (50, 10), (10, 50), (30, 50), (50, 50)))
    answer, relevant = evaluate(s, "closest", {"color": "red"})
    # red at (10,10); green at (22,10) is 12 px away, nearest by hand
    assert relevant == ("o1", "o2")
    assert answer == "circle"


def test_count_with_single_circle():
    s = six(shapes=("circle",) + ("rectangle",) * 5)
    assert evaluate(s, "count", {"color": "red"}) == ("1", ("o1",))
    assert evaluate(s, "count", {"color": "blue"})[0] == "5"


def test_horizontal_threshold_at_midline():
    s = six()
    assert evaluate(s, "horizontal", {"color": "red"})[0] == "left"
    assert evaluate(s, "horizontal", {"color": "blue"})[0] == "right"
    assert evaluate(s, "vertical", {"color": "yellow"})[0] == "bottom"


def test_generated_questions_are_consistent():
    for seed in range(300):
        s = generate_scene(seed)
        qs = generate_questions(s, seed)
        assert len(qs) == 10
        assert [q.kind for q in qs] == ["non-relational", "relational"] * 5
        for q in qs:
            assert evaluate(s, q.template, q.slots) == (q.answer, q.relevant_objects)
            assert q.answer in ANSWERS
            assert q.relevant_objects
            assert q.text == next(t for t in TEMPLATES if t.name == q.template).pattern.format(**q.slots)
            assert sum(q.onehot) == 1 and len(q.onehot) == 36
            ids, _ = encode_question(q.text, Vocabulary(SORT_VOCAB))
            assert Vocabulary(SORT_VOCAB).decode(ids) == q.text


def test_question_determinism_and_round_trip(tmp_path):
    s = generate_scene(3)
    qs = generate_questions(s, 3)
    assert qs == generate_questions(s, 3)
    write_questions(tmp_path / "q.jsonl", qs)
    assert read_questions(tmp_path / "q.jsonl") == qs
    with pytest.raises(ValueError):
        generate_questions(generate_scene(3, CLEVR_LITE), 3)


TWO = Scene(
    "two",
    CLEVR_LITE,
    (
        SceneObject("o1", "cube", "red", (40, 30), 5, "large", "metal"),
        SceneObject("o2", "sphere", "blue", (15, 30), 3, "small", "matte"),
    ),
)


def test_clevr_lite_two_object_chain():
    chain = [{"attrs": {"shape": "sphere"}, "relation": "left"}, {"attrs": {"color": "red", "shape": "cube"}, "relation": None}]
    assert chain_text(chain) == "the sphere left of the red cube"
    answer, relevant = evaluate(TWO, "chain", {"query": "size", "chain": chain})
    assert answer == "small" and relevant == ("o1", "o2")
    qs = generate_clevr_lite_questions(TWO, 0, k=5)
    assert all(set(q.relevant_objects) == {"o1", "o2"} for q in qs)
    assert qs == generate_clevr_lite_questions(TWO, 0, k=5)


def test_clevr_lite_ambiguous_scene_fails():
    twins = Scene(
        "twins",
        CLEVR_LITE,
        (
            SceneObject("o1", "cube", "red", (15, 30), 5, "large", "metal"),
            SceneObject("o2", "cube", "red", (45, 30), 5, "large", "metal"),
        ),
    )
    with pytest.raises(QuestionGenerationError):
        generate_clevr_lite_questions(twins, 0, k=1, max_retries=20)


def test_clevr_lite_questions_resolve_uniquely():
    vocab = Vocabulary(CLEVR_VOCAB)
    for seed in range(100):
        s = generate_scene(seed, CLEVR_LITE)
        for q in generate_clevr_lite_questions(s, seed):
            assert 2 <= len(q.slots["chain"]) <= 3
            assert evaluate(s, "chain", q.slots) == (q.answer, q.relevant_objects)
            assert q.answer in CLEVR_ANSWERS
            encode_question(q.text, vocab)


def test_encoding_examples():
    vocab = Vocabulary(SORT_VOCAB)
    red = "what is the shape of the red object?"
    blue = "what is the shape of the blue object?"
    ids_r, bow_r = encode_question(red, vocab)
    ids_b, bow_b = encode_question(blue, vocab)
    assert encode_question(red, vocab)[0] == ids_r
    diff = [i for i, (a, b) in enumerate(zip(ids_r, ids_b)) if a != b]
    assert len(diff) == 1 and tokenize(red)[diff[0]] == "red"
    assert bow_r.sum() == pytest.approx(1.0)
    with pytest.raises(KeyError):
        encode_question("what is the shape of the purple object?", vocab)


def test_vocabulary_is_exactly_the_template_tokens():
    tokens = {t for tpl in TEMPLATES for c in COLORS for t in tokenize(tpl.pattern.format(color=c))}
    assert tokens == set(SORT_VOCAB) - {"<pad>"}


def test_question_schema_checked():
    q = generate_questions(generate_scene(0), 0)[0].to_dict()
    q["schema"] = "other"
    with pytest.raises(ValueError, match="schema"):
        QuestionRecord.from_dict(q)


# netpbm -------------------------------------------------------------------


def test_netpbm_round_trip(tmp_path):
    rgb = np.random.default_rng(0).integers(0, 256, (7, 5, 3), dtype=np.uint8)
    gray = rgb[..., 0]
    write_ppm(tmp_path / "a.ppm", rgb)
    write_pgm(tmp_path / "a.pgm", gray)
    np.testing.assert_array_equal(read_ppm(tmp_path / "a.ppm"), rgb)
    np.testing.assert_array_equal(read_pgm(tmp_path / "a.pgm"), gray)
    assert (tmp_path / "a.ppm").read_bytes().startswith(b"P6\n5 7\n255\n")
    with pytest.raises(ValueError):
        read_pgm(tmp_path / "a.ppm")
