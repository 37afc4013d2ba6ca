import dataclasses
import math
from types import SimpleNamespace

import numpy as np
import pytest
import torch
from hypothesis import assume, given, settings
from hypothesis import strategies as st
from sklearn.metrics import roc_auc_score

import oracles
from sslosr import losses
from sslosr.data import Dataset, Pool, Synth2DSpec, gen_synth2d, make_ssl_split
from sslosr.errors import ArgumentError
from sslosr.evaluation import (
    EvalReport,
    auroc,
    evaluate,
    format_cell,
    metrics_csv,
    roc_curve,
    score_arp,
    score_fm,
    trapezoid_area,
)
from sslosr.nets import ClassifierReadout
from sslosr.training import TrainConfig, init_state

scores = st.lists(st.sampled_from([0.0, 0.25, 0.5, 0.75, 1.0]) | st.floats(-5, 5), min_size=1, max_size=60)


def test_score_fm_examples():
    s = score_fm(np.zeros((1, 3)))
    assert s.known_score[0] == pytest.approx(0.75, abs=1e-15)
    s = score_fm(np.log([[2.0, 3.0, 4.0]]))
    assert s.known_score[0] == pytest.approx(0.9, abs=1e-15) and s.predicted_label[0] == 3
    logits = np.random.default_rng(0).normal(0, 3, (50, 4))
    np.testing.assert_allclose(score_fm(logits).known_score + losses.p_fm_fake(logits).numpy(), 1.0, atol=1e-12)


@given(st.lists(st.floats(-5, 5), min_size=2, max_size=6), st.integers(0, 5), st.floats(0.1, 3))
def test_score_fm_monotone_in_each_logit(logits, i, bump):
    i %= len(logits)
    up = list(logits)
    up[i] += bump
    assert score_fm(np.array([up])).known_score[0] > score_fm(np.array([logits])).known_score[0]


def test_score_arp_equidistant_tie():
    rp = losses.RPTensors(torch.tensor([[1.0, 0.0], [0.0, 1.0]], dtype=torch.float64), torch.zeros(2, dtype=torch.float64))
    s = score_arp(np.array([[0.0, 0.0]]), rp)
    assert s.known_score[0] == 0.5 and s.predicted_label[0] == 1


def test_score_arp_worked_example():
    # d_1 = 0.5, d_2 = 0 for embedding [1, 0]
    rp = losses.RPTensors(torch.tensor([[0.0, 0.0], [1.0, math.sqrt(2)]], dtype=torch.float64), torch.zeros(2))
    d, _ = losses.arp_logits(np.array([[1.0, 0.0]]), rp.points)
    np.testing.assert_allclose(d.numpy(), [[0.5, 0.0]], atol=1e-15)
    s = score_arp(np.array([[1.0, 0.0]]), rp)
    assert s.predicted_label[0] == 1
    assert s.known_score[0] == pytest.approx(1 / (1 + math.exp(-0.5)), abs=1e-12)
    assert round(s.known_score[0], 4) == 0.6225


def test_score_arp_maxdist_mode():
    rp = losses.RPTensors(torch.tensor([[0.0, 0.0], [1.0, math.sqrt(2)]], dtype=torch.float64), torch.zeros(2))
    assert score_arp(np.array([[1.0, 0.0]]), rp, "maxdist").known_score[0] == pytest.approx(0.5)


# -- AUROC -------------------------------------------------------------------------------

def test_auroc_examples():
    assert auroc([2, 3], [0, 1]) == 1.0
    assert auroc([0.4] * 5, [0.4] * 3) == 0.5
    assert auroc([0.35, 0.8], [0.1, 0.4]) == 0.75
    with pytest.raises(ArgumentError):
        auroc([], [1.0])


@given(scores, scores)
@settings(max_examples=200)
def test_auroc_two_routes_and_oracle(known, novel):
    a = auroc(known, novel)
    assert abs(a - trapezoid_area(roc_curve(known, novel))) < 1e-9
    assert a == pytest.approx(oracles.mann_whitney(known, novel), abs=1e-12)


@given(scores, scores)
@settings(max_examples=100)
def test_auroc_matches_sklearn(known, novel):
    y = [1] * len(known) + [0] * len(novel)
    assert auroc(known, novel) == pytest.approx(roc_auc_score(y, known + novel), abs=1e-12)


@given(scores, scores)
@settings(max_examples=100)
def test_auroc_invariant_under_increasing_transform(known, novel):
    f = lambda v: [math.atan(x) * 3 + 7 for x in v]
    assume(len(set(f(known + novel))) == len(set(known + novel)))
    assert auroc(known, novel) == pytest.approx(auroc(f(known), f(novel)), abs=1e-12)


@given(scores, scores)
def test_roc_points_shape(known, novel):
    pts = roc_curve(known, novel)
    assert tuple(pts[0]) == (0.0, 0.0) and tuple(pts[-1]) == (1.0, 1.0)
    assert np.all(np.diff(pts, axis=0) >= 0)


# -- evaluate -----------------------------------------------------------------------------

class Oracle(torch.nn.Module):
    """Labels x by its nearest integer on the first axis; novels sit far left."""

    def __init__(self):
        super().__init__()
        self.unused = torch.nn.Parameter(torch.zeros(1, dtype=torch.float64))

    def forward(self, x):
        centers = torch.tensor([1.0, 2.0], dtype=x.dtype)
        logits = 10 - 20 * (x[:, :1] - centers) ** 2
        return ClassifierReadout(logits=logits, features=x)


def test_perfect_classifier():
    known = Dataset("k", np.array([[1.0, 0], [2.0, 0], [1.1, 0], [1.9, 0]]), [1, 2, 1, 2])
    novel = Dataset("n", np.array([[-5.0, 0], [-6.0, 0]]), [1, 1])
    split = make_ssl_split(known, novel, 1, None, 0, labelled_test=known)
    state = SimpleNamespace(nets={"classifier": Oracle()}, config=SimpleNamespace(model_kind="fm-gan", seed=0))
    r = evaluate(state, split)
    assert (r.closed_accuracy, r.auroc) == (1.0, 1.0)
    assert r.counts == {"test_known": 4, "test_novel": 2}
    assert r.table_cell() == "100.00 | 100.00"


@pytest.mark.parametrize("kind", ["softmax", "arp", "fm-gan", "arp-gan"])
def test_untrained_classifier_is_a_null_model(kind):
    centers = ((0, 0.6), (-0.52, -0.3), (0.52, -0.3))
    for s in range(10):
        lab, _ = gen_synth2d(Synth2DSpec(centers, 0.25, 50), s)
        test, _ = gen_synth2d(Synth2DSpec(centers, 0.25, 100), s + 1)
        other, _ = gen_synth2d(Synth2DSpec(centers, 0.25, 100), s + 2)
        # novels drawn from the same mixture as the knowns
        split = make_ssl_split(lab, Dataset("null", other.samples, np.ones(len(other), int)), 10, None, s, labelled_test=test)
        st = init_state(TrainConfig(kind, seed=s), (2,), 3)
        assert abs(evaluate(st, split).auroc - 0.5) <= 0.1


def test_no_novels_reports_absent_auroc():
    known = Dataset("k", np.array([[1.0, 0], [2.0, 0]]), [1, 2])
    novel = Dataset("n", np.array([[-5.0, 0]]), [1])
    split = make_ssl_split(known, novel, 1, None, 0, labelled_test=known)
    split = dataclasses.replace(split, test=Pool(split.test.samples[:2], split.test.labels[:2]))
    state = SimpleNamespace(nets={"classifier": Oracle()}, config=SimpleNamespace(model_kind="fm-gan", seed=0))
    r = evaluate(state, split)
    assert r.closed_accuracy == 1.0 and r.auroc is None and r.table_cell() == "100.00 | - - -"


def test_accuracy_ignores_novel_samples():
    known = Dataset("k", np.array([[1.0, 0], [2.0, 0], [1.4, 0]]), [1, 2, 2])
    state = SimpleNamespace(nets={"classifier": Oracle()}, config=SimpleNamespace(model_kind="fm-gan", seed=0))
    accs = set()
    for novel_x in ([[-5.0, 0]], [[1.0, 0]], [[2.0, 0]]):
        split = make_ssl_split(known, Dataset("n", np.array(novel_x), [1]), 1, None, 0, labelled_test=known)
        accs.add(evaluate(state, split).closed_accuracy)
    assert accs == {2 / 3}


def test_report_round_trip(tmp_path):
    r = EvalReport(0.91234, 0.87, [(0.0, 0.0), (0.5, 0.75), (1.0, 1.0)], {"test_known": 3, "test_novel": 2},
                   {"run_id": "x/1", "model_kind": "fm-gan", "seed": 3}, 0.87)
    r.save(tmp_path / "r.json")
    assert EvalReport.load(tmp_path / "r.json") == r
    assert r.table_cell() == "91.23 | 87.00"


def test_format_cell_and_csv():
    assert format_cell(0.834, 0.88021) == "83.40 | 88.02"
    assert format_cell(None, None) == "- - - | - - -"
    r = EvalReport(0.5, 0.25, [], {}, {"run_id": "a", "model_kind": "arp", "dataset": "d", "labels_per_category": 10, "seed": 1})
    text = metrics_csv([r.metrics_row()])
    assert text.splitlines() == ["run_id,model_kind,dataset,labels_per_category,seed,accuracy,auroc", "a,arp,d,10,1,0.5,0.25"]
