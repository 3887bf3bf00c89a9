import math
import random
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mmbt.errors import EmptyInput, IdMismatch, ParseError, ShapeMismatch
from mmbt.evaluation import (
    PredictionRecord,
    accuracy,
    build_hard_set,
    evaluate_probs,
    f1_scores,
    hardness_disagreement,
    hardness_ground_truth,
    hardness_ground_truth_01,
    read_ids,
    read_predictions,
    score_predictions,
    to_bits,
    write_ids,
    write_predictions,
)


def brute_force_f1(p, t):
    """Per-class confusion counts by explicit loops, in exact rationals."""
    B, C = len(p), len(p[0])
    per, TP, FP, FN = [], 0, 0, 0
    for c in range(C):
        tp = fp = fn = 0
        for b in range(B):
            if p[b][c] and t[b][c]:
                tp += 1
            elif p[b][c]:
                fp += 1
            elif t[b][c]:
                fn += 1
        prec = Fraction(tp, tp + fp) if tp + fp else Fraction(0)
        rec = Fraction(tp, tp + fn) if tp + fn else Fraction(0)
        per.append(2 * prec * rec / (prec + rec) if prec + rec else Fraction(0))
        TP, FP, FN = TP + tp, FP + fp, FN + fn
    prec = Fraction(TP, TP + FP) if TP + FP else Fraction(0)
    rec = Fraction(TP, TP + FN) if TP + FN else Fraction(0)
    micro = 2 * prec * rec / (prec + rec) if prec + rec else Fraction(0)
    return float(sum(per) / C), float(micro)


# -- accuracy and F1 ------------------------------------------------------------------


def test_accuracy_examples():
    assert accuracy([1, 2, 3], [1, 2, 3]) == 1.0
    assert accuracy([0, 0], [1, 1]) == 0.0
    assert accuracy([1, 1, 0, 1], [1, 1, 1, 1]) == 0.75


def test_accuracy_errors():
    with pytest.raises(EmptyInput):
        accuracy([], [])
    with pytest.raises(ShapeMismatch):
        accuracy([1], [1, 2])


def test_f1_perfect():
    t = np.eye(3, dtype=bool)
    assert f1_scores(t, t) == (1.0, 1.0)


def test_f1_hand_counts():
    # class 0: TP=1 FP=1 FN=0; class 1: TP=1 FP=0 FN=1
    p = np.array([[1, 1], [1, 0]], dtype=bool)
    t = np.array([[1, 1], [0, 1]], dtype=bool)
    macro, micro = f1_scores(p, t)
    assert abs(macro - 2 / 3) < 1e-15 and abs(micro - 2 / 3) < 1e-15


def test_f1_absent_class_counts_zero_in_macro():
    p = np.array([[1, 0], [0, 0]], dtype=bool)
    t = np.array([[1, 0], [0, 0]], dtype=bool)
    macro, micro = f1_scores(p, t)
    assert macro == 0.5 and micro == 1.0


def test_f1_shape_mismatch():
    with pytest.raises(ShapeMismatch):
        f1_scores(np.zeros((2, 3)), np.zeros((2, 2)))


def test_f1_matches_brute_force_oracle():
    r = np.random.default_rng(0)
    for _ in range(200):
        p = r.random((8, 5)) < 0.4
        t = r.random((8, 5)) < 0.4
        assert f1_scores(p, t) == brute_force_f1(p.tolist(), t.tolist())


@given(st.integers(1, 20), st.integers(2, 6), st.integers(0, 10_000))
def test_micro_f1_equals_accuracy_single_label(n, C, seed):
    r = np.random.default_rng(seed)
    pred = r.integers(0, C, size=n)
    gold = r.integers(0, C, size=n)
    _, micro = f1_scores(to_bits([[c] for c in pred], C), to_bits([[c] for c in gold], C))
    assert abs(micro - accuracy(pred.tolist(), gold.tolist())) < 1e-12


def test_to_bits():
    np.testing.assert_array_equal(to_bits([[0, 2], []], 3), [[1, 0, 1], [0, 0, 0]])


def test_evaluate_probs_multiclass():
    probs = np.array([[0.7, 0.3], [0.4, 0.6], [0.9, 0.1]])
    rep = evaluate_probs(["a", "b", "c"], probs, [0, 0, 0], "multiclass")
    assert rep.metrics == {"accuracy": 2 / 3}
    assert rep.predictions == [0, 1, 0]
    assert [r.target for r in rep.records] == [0, 0, 0]
    assert all(abs(sum(r.probs) - 1) < 1e-9 for r in rep.records)


def test_evaluate_probs_multilabel():
    probs = np.array([[0.9, 0.2, 0.6], [0.1, 0.8, 0.3]])
    t = np.array([[1, 0, 1], [0, 1, 1]], dtype=bool)
    rep = evaluate_probs(["a", "b"], probs, t, "multilabel")
    assert rep.predictions == [[0, 2], [1]]
    assert set(rep.metrics) == {"macro_f1", "micro_f1"}
    assert rep.metrics["micro_f1"] == pytest.approx(2 * 3 / (2 * 3 + 0 + 1))
    assert rep.records[1].target == [0, 1, 1]


# -- hardness ----------------------------------------------------------------------------


def test_ground_truth_examples():
    assert hardness_ground_truth([0.1, 0.9], [0.8, 0.2], 1) == pytest.approx(0.08)
    assert hardness_ground_truth([0, 1.0, 0], [0, 1.0, 0], 1) == 0.0
    assert hardness_ground_truth([0.25] * 4, [0.25] * 4, 2) == 0.5625


@given(st.integers(2, 30), st.data())
def test_ground_truth_uniform_closed_form(C, data):
    t = data.draw(st.integers(0, C - 1))
    u = [1.0 / C] * C
    assert abs(hardness_ground_truth(u, u, t) - ((C - 1) / C) ** 2) < 1e-12


def test_ground_truth_multilabel():
    # mean abs error 0.2 for image, 0.5 for text
    assert hardness_ground_truth([0.8, 0.2], [0.5, 0.5], [1, 0]) == pytest.approx(0.2 * 0.5)


def test_ground_truth_01_hook():
    assert hardness_ground_truth_01([0.9, 0.1], [0.8, 0.2], 1) == 1.0
    assert hardness_ground_truth_01([0.9, 0.1], [0.2, 0.8], 1) == 0.0


def test_disagreement_examples():
    assert hardness_disagreement([0.3, 0.7], [0.3, 0.7]) == 0.0
    assert hardness_disagreement([1.0, 0.0], [0.0, 1.0]) == 1.0
    assert hardness_disagreement([0.6, 0.4], [0.1, 0.9]) == pytest.approx(0.5)
    assert hardness_disagreement([0.9, 0.1, 0.5], [0.1, 0.1, 0.2], multilabel=True) == pytest.approx((0.8 + 0.3) / 3)


probs = st.integers(2, 6).flatmap(
    lambda C: st.tuples(
        st.lists(st.floats(0.01, 1), min_size=C, max_size=C),
        st.lists(st.floats(0.01, 1), min_size=C, max_size=C),
        st.integers(0, C - 1),
    )
)


@given(probs)
def test_scores_in_unit_interval(case):
    a, b, t = case
    pa, pb = np.array(a) / sum(a), np.array(b) / sum(b)
    for s in (hardness_ground_truth(pa, pb, t), hardness_disagreement(pa, pb)):
        assert -1e-12 <= s <= 1 + 1e-12


# -- hard set -------------------------------------------------------------------------------


def test_hard_set_top_ten_of_hundred():
    r = np.random.default_rng(1)
    scores = r.permutation(100) / 100.0
    scored = [(f"x{i:03d}", float(s)) for i, s in enumerate(scores)]
    oracle = [i for i, _ in sorted(scored, key=lambda kv: kv[1], reverse=True)[:10]]
    assert build_hard_set(scored) == oracle


def test_hard_set_ties_by_id():
    scored = [(f"e{i}", 0.5) for i in (3, 1, 2, 0, 9, 8, 7, 6, 5, 4, 10)]
    assert build_hard_set(scored, 0.1) == ["e0", "e1"]


def test_hard_set_fraction_one_and_ceil():
    scored = [("b", 0.1), ("a", 0.2), ("c", 0.3)]
    assert build_hard_set(scored, 1.0) == ["c", "a", "b"]
    assert build_hard_set(scored, 0.1) == ["c"]


def test_hard_set_errors():
    with pytest.raises(EmptyInput):
        build_hard_set([])
    for bad in (0.0, 1.5):
        with pytest.raises(ValueError):
            build_hard_set([("a", 1.0)], bad)


@given(st.lists(st.tuples(st.text("abc", min_size=1, max_size=4), st.sampled_from([0.0, 0.25, 0.5, 1.0])), min_size=1, max_size=30, unique_by=lambda kv: kv[0]), st.randoms(use_true_random=False), st.floats(0.05, 1.0))
def test_hard_set_permutation_invariant(scored, r, fraction):
    shuffled = list(scored)
    r.shuffle(shuffled)
    out = build_hard_set(scored, fraction)
    assert out == build_hard_set(shuffled, fraction)
    assert len(out) == math.ceil(fraction * len(scored))


# -- prediction files ------------------------------------------------------------------------


def records(ids, C=2, seed=0):
    r = random.Random(seed)
    out = []
    for i in ids:
        p = [r.random() for _ in range(C)]
        out.append(PredictionRecord(i, [x / sum(p) for x in p], r.randrange(C)))
    return out


def test_prediction_round_trip(tmp_path):
    recs = records(["a", "b", "c"]) + [PredictionRecord("m", [0.2, 0.9], [0, 1])]
    write_predictions(recs, tmp_path / "p.jsonl")
    back = read_predictions(tmp_path / "p.jsonl")
    assert back == recs
    assert back[-1].multilabel and not back[0].multilabel


def test_prediction_parse_error_line(tmp_path):
    path = tmp_path / "p.jsonl"
    path.write_text('{"id": "a", "probs": [1.0], "target": 0}\n{"id": "b"}\n')
    with pytest.raises(ParseError) as info:
        read_predictions(path)
    assert info.value.line == 2


def test_score_predictions_pairs_by_id():
    img = records(["a", "b", "c"], seed=1)
    txt = list(reversed(records(["a", "b", "c"], seed=2)))
    scored = dict(score_predictions(img, txt))
    by = {r.id: r for r in txt}
    for r in img:
        assert scored[r.id] == hardness_ground_truth(r.probs, by[r.id].probs, r.target)
    dis = dict(score_predictions(img, txt, "disagreement"))
    assert dis["a"] == hardness_disagreement(img[0].probs, by["a"].probs)


def test_score_predictions_custom_scorer():
    img, txt = records(["a", "b"]), records(["a", "b"], seed=3)
    assert score_predictions(img, txt, scorer=hardness_ground_truth_01)[0][1] in (0.0, 1.0)


def test_score_predictions_id_mismatch():
    with pytest.raises(IdMismatch):
        score_predictions(records(["a", "b"]), records(["a", "c"]))
    with pytest.raises(IdMismatch):
        score_predictions(records(["a", "b"]), records(["a", "a", "b"]))
    with pytest.raises(ValueError):
        score_predictions(records(["a"]), records(["a"]), "nope")


def test_ids_round_trip(tmp_path):
    write_ids(["x1", "y2"], tmp_path / "ids.txt")
    assert (tmp_path / "ids.txt").read_text() == "x1\ny2\n"
    assert read_ids(tmp_path / "ids.txt") == ["x1", "y2"]
