import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from memeguard.exemplar import (
    ALPHA_GRID,
    ExemplarError,
    SelectionStrategy,
    score_pool,
    select_exemplars,
    tag_set_similarity,
    tune_alpha,
    with_alpha,
)
from memeguard.gateway import hash_unit_vector

from .conftest import make_record


def basis_embedder(dim=32):
    index = {}

    def embed(text):
        i = index.setdefault(text, len(index))
        v = np.zeros(dim)
        v[i] = 1.0
        return v

    return embed


def random_image_embedder(dim=16):
    return lambda rec: np.asarray(hash_unit_vector("img:" + rec.id, dim))


def random_text_embedder(dim=16):
    return lambda text: np.asarray(hash_unit_vector("txt:" + text, dim))


# ---------------------------------------------------------------- strategy type

def test_strategy_validation():
    SelectionStrategy(kind="image", k=2)
    SelectionStrategy(kind="image_gt_combined", k=4, alpha=0.3)
    SelectionStrategy(kind="random", k=2, seed=7)
    with pytest.raises(ValueError):
        SelectionStrategy(kind="image", k=2, alpha=0.5)  # alpha only for combined
    with pytest.raises(ValueError):
        SelectionStrategy(kind="image_gt_combined", k=2)  # missing alpha
    with pytest.raises(ValueError):
        SelectionStrategy(kind="random", k=2)  # missing seed
    with pytest.raises(ValueError):
        SelectionStrategy(kind="nope", k=2)
    with pytest.raises(ValueError):
        SelectionStrategy(kind="image", k=0)


# ---------------------------------------------------------------- tag similarity

def test_tag_similarity_self_is_one():
    embed = basis_embedder()
    assert tag_set_similarity(["x"], ["x"], embed) == pytest.approx(1.0, abs=1e-6)


def test_tag_similarity_two_by_three():
    embed = basis_embedder()
    # t1 == e2, t2 orthogonal to all: mean(1, 0) = 0.5
    assert tag_set_similarity(["t1", "t2"], ["e1", "t1", "e3"], embed) == pytest.approx(0.5)


def test_tag_similarity_candidate_order_free():
    embed = random_text_embedder()
    a = tag_set_similarity(["q1", "q2"], ["a", "b", "c"], embed)
    b = tag_set_similarity(["q1", "q2"], ["c", "a", "b"], embed)
    assert a == pytest.approx(b)


def test_tag_similarity_empty_is_zero():
    embed = basis_embedder()
    assert tag_set_similarity([], ["a"], embed) == 0.0
    assert tag_set_similarity(["a"], [], embed) == 0.0


@given(st.lists(st.sampled_from("abcdef"), min_size=1, max_size=4, unique=True))
def test_tag_similarity_self_identity_property(tags):
    embed = random_text_embedder()
    assert tag_set_similarity(tags, tags, embed) == pytest.approx(1.0, abs=1e-6)


# ---------------------------------------------------------------- selection

def _pool(n=10, tags=True, split="train"):
    records = []
    for i in range(1, n + 1):
        records.append(make_record(
            i,
            tags=(f"t{i % 4}", f"u{i % 3}") if tags else (),
            split=split,
            stage1_label="toxic" if i % 2 else "normal",
        ))
    return records


def test_random_kind_reproducible():
    pool = _pool()
    query = make_record(0)
    s = SelectionStrategy(kind="random", k=3, seed=11)
    a = select_exemplars(query, pool, s)
    b = select_exemplars(query, pool, s)
    assert [r.id for r in a] == [r.id for r in b]


def test_random_kind_distinct_seeds_differ():
    pool = _pool(n=100)
    query = make_record(0)
    draws = {
        tuple(r.id for r in select_exemplars(query, pool, SelectionStrategy(kind="random", k=2, seed=s)))
        for s in range(10)
    }
    assert len(draws) > 1


def test_select_excludes_query_and_test_posts():
    pool = _pool() + [make_record(50, split="test")]
    query = pool[0]
    s = SelectionStrategy(kind="random", k=5, seed=1)
    chosen = select_exemplars(query, pool, s)
    ids = {r.id for r in chosen}
    assert query.id not in ids
    assert "p0050" not in ids


def test_pool_smaller_than_k_errors():
    with pytest.raises(ExemplarError):
        select_exemplars(make_record(0), _pool(n=2), SelectionStrategy(kind="random", k=3, seed=0))


def test_missing_predicted_tags_names_post():
    pool = _pool(n=4)
    query = make_record(0, tags=("q",))
    s = SelectionStrategy(kind="pred_tags", k=2)
    with pytest.raises(ExemplarError, match="p000"):
        select_exemplars(query, pool, s, embed_text=random_text_embedder(), predicted_tags={})


def test_alpha_one_equals_image_ranking():
    pool = _pool()
    query = make_record(0, tags=("q1", "q2"))
    img, txt = random_image_embedder(), random_text_embedder()
    image_rank = select_exemplars(query, pool, SelectionStrategy(kind="image", k=4),
                                  embed_image=img, embed_text=txt)
    combo_rank = select_exemplars(query, pool, SelectionStrategy(kind="image_gt_combined", k=4, alpha=1.0),
                                  embed_image=img, embed_text=txt)
    assert [r.id for r in image_rank] == [r.id for r in combo_rank]


def test_alpha_zero_equals_tag_ranking():
    pool = _pool()
    query = make_record(0, tags=("q1", "t1"))
    img, txt = random_image_embedder(), random_text_embedder()
    tag_rank = select_exemplars(query, pool, SelectionStrategy(kind="gt_tags", k=4),
                                embed_text=txt)
    combo_rank = select_exemplars(query, pool, SelectionStrategy(kind="image_gt_combined", k=4, alpha=0.0),
                                  embed_image=img, embed_text=txt)
    assert [r.id for r in tag_rank] == [r.id for r in combo_rank]


def test_topk_matches_bruteforce():
    pool = _pool(n=3)
    query = make_record(0, tags=("t1", "u1"))
    img, txt = random_image_embedder(), random_text_embedder()
    s = SelectionStrategy(kind="image_gt_combined", k=2, alpha=0.4)
    chosen = select_exemplars(query, pool, s, embed_image=img, embed_text=txt)

    scored = score_pool(query, pool, s, embed_image=img, embed_text=txt)
    expected = sorted(scored, key=lambda c: (-c.combined, c.post_id))[:2]
    assert [r.id for r in chosen] == [c.post_id for c in expected]


def test_combined_is_convex_combination():
    pool = _pool(n=6)
    query = make_record(0, tags=("t1",))
    img, txt = random_image_embedder(), random_text_embedder()
    for alpha in (0.0, 0.3, 0.7, 1.0):
        s = SelectionStrategy(kind="image_gt_combined", k=2, alpha=alpha)
        for cand in score_pool(query, pool, s, embed_image=img, embed_text=txt):
            assert cand.combined == pytest.approx(
                alpha * cand.image_sim + (1 - alpha) * cand.tag_sim, abs=1e-12
            )


def test_score_scaling_leaves_ranking_unchanged():
    pool = _pool(n=8)
    query = make_record(0, tags=("t1",))
    txt = random_text_embedder()
    s = SelectionStrategy(kind="gt_tags", k=3)
    base = score_pool(query, pool, s, embed_text=txt)
    ranked = [c.post_id for c in sorted(base, key=lambda c: (-c.combined, c.post_id))]
    scaled = [c.post_id for c in sorted(base, key=lambda c: (-3.7 * c.combined, c.post_id))]
    assert ranked == scaled


def test_fully_tagless_pool_errors():
    pool = _pool(tags=False)
    query = make_record(0, tags=("q",))
    with pytest.raises(ExemplarError, match="tagless"):
        select_exemplars(query, pool, SelectionStrategy(kind="gt_tags", k=2),
                         embed_text=random_text_embedder())


def test_tie_break_by_post_id():
    # identical tags -> identical scores; lexicographically smallest ids win
    pool = [make_record(i, tags=("same",), split="train") for i in (5, 3, 9, 1)]
    query = make_record(0, tags=("same",))
    chosen = select_exemplars(query, pool, SelectionStrategy(kind="gt_tags", k=2),
                              embed_text=random_text_embedder())
    assert [r.id for r in chosen] == ["p0001", "p0003"]


# ---------------------------------------------------------------- alpha tuning

def test_tune_alpha_grid_has_11_rows(tmp_path):
    result = tune_alpha(lambda a: (50.0, 10), table_path=tmp_path / "table.jsonl")
    assert len(result.table) == 11
    lines = (tmp_path / "table.jsonl").read_text().strip().splitlines()
    assert len(lines) == 11
    assert json.loads(lines[0]) == {"alpha": 0.0, "macro_f1": 50.0, "n_eval": 10}


def test_tune_alpha_constant_objective_ties_to_zero():
    assert tune_alpha(lambda a: (42.0, 5)).best_alpha == 0.0


def test_tune_alpha_peaked_objective():
    result = tune_alpha(lambda a: (100.0 - abs(a - 0.3) * 50, 5))
    assert result.best_alpha == pytest.approx(0.3)


def test_tune_alpha_invalid_alphas_skipped():
    def objective(a):
        if a < 0.5:
            raise RuntimeError("boom")
        return (10.0 + a, 5)

    result = tune_alpha(objective)
    assert result.best_alpha == 1.0
    assert sum(1 for row in result.table if not row.valid) == 5


def test_tune_alpha_all_invalid_errors():
    def objective(a):
        raise RuntimeError("always")

    with pytest.raises(ExemplarError):
        tune_alpha(objective)


def test_with_alpha():
    s = SelectionStrategy(kind="image_pred_combined", k=2, alpha=0.5)
    assert with_alpha(s, 0.9).alpha == 0.9
    with pytest.raises(ValueError):
        with_alpha(SelectionStrategy(kind="image", k=2), 0.5)


def test_alpha_grid_definition():
    assert ALPHA_GRID == (0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0)
