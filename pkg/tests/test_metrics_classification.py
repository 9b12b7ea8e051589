from itertools import product

import pytest
from hypothesis import given
from hypothesis import strategies as st

from memeguard.evalmetrics import macro_f1, majority_vote


def test_macro_f1_all_correct():
    report = macro_f1([("toxic", "toxic"), ("normal", "normal")])
    assert report.metrics["macro_f1"] == 100.0


def test_macro_f1_hand_confusion():
    # gold (A,A,B,B), pred (A,B,B,B): F1_A = 2/3, F1_B = 0.8
    pairs = [("A", "A"), ("A", "B"), ("B", "B"), ("B", "B")]
    report = macro_f1(pairs)
    assert report.per_class["A"]["f1"] == pytest.approx(2 / 3)
    assert report.per_class["B"]["f1"] == pytest.approx(0.8)
    assert report.metrics["macro_f1"] == pytest.approx(100 * (2 / 3 + 0.8) / 2)


def test_macro_f1_absent_class_warns():
    report = macro_f1([("A", "A")], classes=["A", "B"])
    assert report.per_class["A"]["f1"] == 1.0
    assert report.per_class["B"]["f1"] == 0.0
    assert report.metrics["macro_f1"] == pytest.approx(50.0)
    assert report.warnings


def test_macro_f1_empty_errors():
    with pytest.raises(ValueError):
        macro_f1([])


def test_macro_f1_out_of_set_prediction_counts_as_wrong():
    pairs = [("A", None), ("A", "A"), ("B", "B")]
    report = macro_f1(pairs, classes=["A", "B"])
    assert report.per_class["A"]["recall"] == pytest.approx(0.5)
    assert report.per_class["A"]["precision"] == 1.0


def test_macro_f1_is_unweighted_mean_of_per_class():
    pairs = [("A", "A")] * 5 + [("B", "A")] * 3 + [("B", "B")]
    report = macro_f1(pairs, classes=["A", "B"])
    mean = sum(v["f1"] for v in report.per_class.values()) / 2
    assert report.metrics["macro_f1"] == pytest.approx(100 * mean)


@given(
    st.lists(
        st.tuples(st.sampled_from("ABC"), st.sampled_from("ABC")),
        min_size=1,
        max_size=30,
    )
)
def test_macro_f1_relabel_invariance(pairs):
    perm = {"A": "B", "B": "C", "C": "A"}
    renamed = [(perm[g], perm[p]) for g, p in pairs]
    before = macro_f1(pairs, classes=list("ABC"))
    after = macro_f1(renamed, classes=list("ABC"))
    assert before.metrics["macro_f1"] == pytest.approx(after.metrics["macro_f1"])


# ---------------------------------------------------------------- majority vote

def test_majority_stage1():
    assert majority_vote(["toxic", "toxic", "normal"], "I") == "toxic"
    assert majority_vote(["normal", "normal", "toxic"], "I") == "normal"


def test_majority_stage2_three_way_is_undecided():
    assert majority_vote(["hateful", "dangerous", "offensive"], "II") == "undecided"


def test_majority_stage2_unanimous():
    assert majority_vote(["dangerous", "dangerous", "dangerous"], "II") == "dangerous"


def test_majority_wrong_arity():
    with pytest.raises(ValueError):
        majority_vote(["toxic", "toxic"], "I")


def test_majority_rejects_undecided_vote():
    with pytest.raises(ValueError):
        majority_vote(["undecided", "hateful", "hateful"], "II")


def test_majority_exhaustive_27_cases():
    # independent rule: the label seen at least twice, else undecided
    labels = ("hateful", "dangerous", "offensive")
    undecided_seen = 0
    for triple in product(labels, repeat=3):
        expected = next((l for l in labels if triple.count(l) >= 2), "undecided")
        got = majority_vote(list(triple), "II")
        assert got == expected, triple
        if got == "undecided":
            undecided_seen += 1
    assert undecided_seen == 6  # the 3! orderings of three distinct labels
