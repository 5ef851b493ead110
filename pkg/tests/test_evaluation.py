import io
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from carealgebra.data import Cohort, PatientRecord, Visit, build_vocab
from carealgebra.errors import EvaluationError, UndefinedMetricError
from carealgebra.evaluation import (
    ModelSpec,
    cross_validate,
    evaluate,
    gradient_suite,
    trace_header,
    trace_states,
    write_trace_csv,
)
from carealgebra.metrics import ScoredExample, auc, mean_nll, roc_auc
from carealgebra.model import RiskConfig, RiskModel, forward, predict_risk
from carealgebra.optim import TrainConfig


def pair_oracle(scores, labels):
    pos = [s for s, y in zip(scores, labels) if y == 1]
    neg = [s for s, y in zip(scores, labels) if y == 0]
    wins = sum(1.0 if p > n else 0.5 if p == n else 0.0 for p in pos for n in neg)
    return wins / (len(pos) * len(neg))


def test_auc_examples():
    assert roc_auc([0.9, 0.8, 0.2, 0.1], [1, 1, 0, 0]) == 1.0
    assert roc_auc([0.4] * 6, [1, 0, 1, 0, 0, 1]) == 0.5
    ex = [ScoredExample(0.9, 1, "a", 0), ScoredExample(0.8, 0, "b", 0),
          ScoredExample(0.7, 1, "c", 0), ScoredExample(0.3, 0, "d", 0)]
    assert auc(ex) == 0.75


def test_auc_single_class_raises():
    with pytest.raises(UndefinedMetricError):
        roc_auc([0.1, 0.2], [1, 1])
    with pytest.raises(UndefinedMetricError):
        roc_auc([], [])


def test_auc_matches_oracle_200_instances():
    rng = np.random.default_rng(2024)
    for _ in range(200):
        n = int(rng.integers(2, 201))
        scores = np.round(rng.normal(size=n), int(rng.integers(0, 3)))  # rounding forces ties
        labels = rng.integers(0, 2, size=n)
        labels[0], labels[1] = 0, 1
        a = roc_auc(scores, labels)
        assert abs(a - pair_oracle(scores, labels)) <= 1e-12
        assert roc_auc(np.exp(scores), labels) == a
        assert roc_auc(2 * scores + 1, labels) == a


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.integers(-5, 5), st.integers(0, 1)), min_size=2, max_size=60))
def test_auc_property_oracle(pairs):
    scores = [float(s) for s, _ in pairs]
    labels = [y for _, y in pairs]
    if len(set(labels)) < 2:
        with pytest.raises(UndefinedMetricError):
            roc_auc(scores, labels)
        return
    assert abs(roc_auc(scores, labels) - pair_oracle(scores, labels)) <= 1e-12


def test_mean_nll():
    assert mean_nll([0.5, 0.5], [1, 0]) == pytest.approx(np.log(2))


def test_cv_report_and_determinism(small_cohort):
    cfg = TrainConfig(epochs=2)
    spec = ModelSpec("mdmt", {"dim": 6, "hidden": 6})
    a = cross_validate(small_cohort, spec, k=3, seed=1, train_cfg=cfg)
    b = cross_validate(small_cohort, spec, k=3, seed=1, train_cfg=cfg)
    assert a.to_json() == b.to_json()
    d = a.to_dict()
    assert d["n_folds"] == 3 and len(d["folds"]) == 3
    assert d["auc"] == np.mean([f["auc"] for f in d["folds"]])
    assert d["auc_std"] == np.std([f["auc"] for f in d["folds"]])
    for f in d["folds"]:
        assert {"auc", "auc_final", "nll", "positives", "negatives"} <= set(f)
        assert 0 <= f["auc"] <= 1
    assert d["seed"] == 1 and len(d["config_digest"]) == 16
    c = cross_validate(small_cohort, spec, k=3, seed=2, train_cfg=cfg)
    assert c.to_json() != a.to_json()


@pytest.mark.parametrize("kind", ["bow-lr", "deepr-mini", "mdmtp"])
def test_cv_other_models(small_cohort, kind):
    params = {"bow-lr": {"steps": 50}, "deepr-mini": {"dim": 4, "filters": 3}, "mdmtp": {"dim": 4, "hidden": 4}}[kind]
    rep = cross_validate(small_cohort, ModelSpec(kind, params), k=2, seed=0, train_cfg=TrainConfig(epochs=1))
    assert 0 <= rep.mean_auc <= 1


def test_cv_parallel_matches_serial(small_cohort):
    spec = ModelSpec("mdmt", {"dim": 4, "hidden": 4})
    cfg = TrainConfig(epochs=1)
    serial = cross_validate(small_cohort, spec, k=2, seed=3, train_cfg=cfg)
    parallel = cross_validate(small_cohort, spec, k=2, seed=3, train_cfg=cfg, jobs=2)
    assert serial.to_json() == parallel.to_json()


def test_cv_single_class_fold_names_fold():
    recs = [PatientRecord(f"p{i}", (Visit(0, ("A",), (), label=0), Visit(3, ("B",), (), label=0)))
            for i in range(6)]
    recs[0] = PatientRecord("p0", (Visit(0, ("A",), (), label=1), Visit(3, ("B",), (), label=1)))
    cohort = Cohort(recs, build_vocab(recs), {})
    with pytest.raises(EvaluationError, match="fold"):
        cross_validate(cohort, ModelSpec("mdmt", {"dim": 2, "hidden": 2}), k=2, train_cfg=TrainConfig(epochs=1))


def test_model_spec_validation():
    with pytest.raises(Exception):
        ModelSpec("svm")


def test_trace_properties(small_cohort):
    m = RiskModel(small_cohort.vocabulary, RiskConfig(dim=5, hidden=4, seed=0))
    r = small_cohort.records[7]
    rows = trace_states(m, r)
    assert len(rows) == len(r.visits)
    assert all((np.abs(row["h"]) < 1).all() for row in rows)
    assert rows[-1]["risk"] == predict_risk(m, r)
    assert [row["risk"] for row in rows] == list(forward(m, r).probs)
    buf = io.StringIO()
    write_trace_csv(rows, buf, {"seed": 0, "config_digest": "abc"})
    lines = buf.getvalue().splitlines()
    assert lines[0] == "# config_digest=abc" and lines[1] == "# seed=0"
    assert lines[2] == "visit,time,h_0,h_1,h_2,h_3,h_norm,risk"
    assert trace_header(4) == lines[2].split(",")
    assert len(lines) == 3 + len(r.visits)


def test_evaluate_fields(small_cohort):
    m = RiskModel(small_cohort.vocabulary, RiskConfig(dim=4, hidden=4))
    out = evaluate(m, small_cohort.records)
    assert 0 <= out["auc"] <= 1 and 0 <= out["auc_final"] <= 1
    assert out["positives"] + out["negatives"] == sum(len(r.visits) for r in small_cohort.records)


def test_gradient_suite_subset():
    results = gradient_suite(seed=1, poolings=("expsmooth",), variants=("MDMTP",), rhos=("tanh",))
    assert len(results) == 1
    label, rep = results[0]
    assert label == "expsmooth/MDMTP/tanh" and rep.passed
