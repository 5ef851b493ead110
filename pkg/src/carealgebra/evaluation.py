"""Cross-validation, metrics reports, state traces and the full-model gradient suite."""

from __future__ import annotations

import csv
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import diffcore as dc
from .baselines import BowConfig, DeeprConfig, DeeprMiniModel, train_bow_lr
from .data import Cohort, PatientRecord, Visit, kfold_split
from .embedding import Vocabulary
from .errors import ConfigurationError, EvaluationError, UndefinedMetricError
from .metrics import auc, mean_nll
from .model import RiskConfig, RiskModel, encode_batch, forward
from .optim import TrainConfig, train
from .serialization import config_digest
from .synth import disease_code, treatment_code

log = logging.getLogger(__name__)

MODEL_KINDS = ("mdmt", "mdmtp", "bow-lr", "deepr-mini")


@dataclass(frozen=True)
class ModelSpec:
    """Which model to build plus its hyperparameters (constructor keyword arguments)."""

    kind: str = "mdmt"
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in MODEL_KINDS:
            raise ConfigurationError(f"model must be one of {MODEL_KINDS}, got {self.kind!r}")

    def to_dict(self):
        return {"kind": self.kind, "params": dict(sorted(self.params.items()))}


def build_model(spec, vocab, seed=0):
    p = dict(spec.params)
    p.setdefault("seed", seed)
    if spec.kind in ("mdmt", "mdmtp"):
        p["variant"] = spec.kind.upper()
        return RiskModel(vocab, RiskConfig(**p))
    if spec.kind == "deepr-mini":
        return DeeprMiniModel(vocab, DeeprConfig(**p))
    return None  # bow-lr is built by its trainer


def fit(spec, vocab, train_records, val_records=(), train_cfg=TrainConfig(), seed=0, progress=None):
    """Build and train a model of ``spec.kind``; returns ``(model, history)``."""
    if spec.kind == "bow-lr":
        p = dict(spec.params)
        p.setdefault("seed", seed)
        return train_bow_lr(train_records, vocab, cfg=BowConfig(**p)), []
    model = build_model(spec, vocab, seed)
    return train(model, train_records, val_records, train_cfg, progress=progress)


@dataclass
class MetricsReport:
    """Per-fold and aggregate AUC/NLL with the seed and config digest that produced them."""

    folds: list
    seed: int
    config_digest: str
    config: dict

    @property
    def fold_aucs(self):
        return [f["auc"] for f in self.folds]

    @property
    def mean_auc(self):
        return float(np.mean(self.fold_aucs))

    @property
    def std_auc(self):
        return float(np.std(self.fold_aucs))

    @property
    def mean_auc_final(self):
        return float(np.mean([f["auc_final"] for f in self.folds]))

    def to_dict(self):
        return {
            "folds": self.folds,
            "n_folds": len(self.folds),
            "auc": self.mean_auc,
            "auc_std": self.std_auc,
            "auc_final": self.mean_auc_final,
            "auc_final_std": float(np.std([f["auc_final"] for f in self.folds])),
            "nll": float(np.mean([f["nll"] for f in self.folds])),
            "seed": self.seed,
            "config_digest": self.config_digest,
            "config": self.config,
        }

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)


def _fold_seed(seed, fold):
    return int(np.random.SeedSequence([seed, fold, 0x6376]).generate_state(1)[0])


def _score(model, records, final_only=False):
    return model.score_visits(records, final_only=final_only)


def _run_fold(args):
    fold, train_records, test_records, vocab, spec, train_cfg, seed, val_fraction = args
    train_ids = {r.patient_id for r in train_records}
    test_ids = {r.patient_id for r in test_records}
    assert not train_ids & test_ids, f"fold {fold}: patients leak between train and test"

    fseed = _fold_seed(seed, fold)
    rng = np.random.default_rng(fseed)
    order = rng.permutation(len(train_records))
    n_val = int(round(val_fraction * len(train_records))) if spec.kind != "bow-lr" else 0
    val = [train_records[i] for i in order[:n_val]]
    fit_records = [train_records[i] for i in order[n_val:]]
    cfg = TrainConfig(**{**train_cfg.to_dict(), "seed": fseed})
    model, history = fit(spec, vocab, fit_records, val, cfg, seed=fseed)

    pooled = _score(model, test_records)
    final = _score(model, test_records, final_only=True)
    try:
        a_pooled, a_final = auc(pooled), auc(final)
    except UndefinedMetricError as exc:
        raise EvaluationError(f"fold {fold} lacks both outcome classes: {exc}") from None
    labels = [e.label for e in pooled]
    return {
        "fold": fold,
        "auc": a_pooled,
        "auc_final": a_final,
        "nll": mean_nll([e.score for e in pooled], labels),
        "positives": int(sum(labels)),
        "negatives": int(len(labels) - sum(labels)),
        "test_patients": len(test_records),
        "epochs": len(history),
    }


def cross_validate(cohort, spec=ModelSpec(), k=5, seed=0, train_cfg=TrainConfig(), val_fraction=0.1, jobs=1):
    """k-fold patient-level cross-validation of one model spec.

    Each fold trains on the other folds (holding out ``val_fraction`` of
    them for early stopping) and scores the held-out patients on every
    labeled visit (headline ``auc``) and on final visits (``auc_final``).
    """
    folds = kfold_split(cohort, k, seed)
    vocab = cohort.vocabulary
    tasks = []
    for i in range(k):
        test = folds[i]
        train_records = [r for j, f in enumerate(folds) if j != i for r in f]
        tasks.append((i, train_records, test, vocab, spec, train_cfg, seed, val_fraction))
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_fold, tasks))
    else:
        results = []
        for t in tasks:
            results.append(_run_fold(t))
            log.info("fold %d: auc %.4f", t[0], results[-1]["auc"])
    config = {"model": spec.to_dict(), "train": train_cfg.to_dict(), "k": k,
              "val_fraction": val_fraction, "cohort": cohort.provenance.get("config_digest", "")}
    return MetricsReport(results, seed, config_digest(config), config)


def evaluate(model, records):
    """Pooled and final-visit AUC plus NLL of a trained model on ``records``."""
    pooled = model.score_visits(records)
    final = model.score_visits(records, final_only=True)
    out = {"n_patients": len(records)}
    for name, ex in (("", pooled), ("_final", final)):
        labels = [e.label for e in ex]
        try:
            out["auc" + name] = auc(ex)
        except UndefinedMetricError:
            out["auc" + name] = None
        out["nll" + name] = mean_nll([e.score for e in ex], labels) if ex else None
        out["positives" + name] = int(sum(labels))
        out["negatives" + name] = int(len(labels) - sum(labels))
    return out


def trace_states(model, record):
    """One row per visit: index, time, every component of h_t, its norm, and the risk."""
    pred = forward(model, record)
    rows = []
    for t, v in enumerate(record.visits):
        h = pred.states[t]
        rows.append({"visit": t, "time": v.time, "h": h.copy(),
                     "h_norm": float(np.linalg.norm(h)), "risk": float(pred.probs[t])})
    return rows


def trace_header(hidden):
    return ["visit", "time"] + [f"h_{j}" for j in range(hidden)] + ["h_norm", "risk"]


def write_trace_csv(rows, stream, meta=None):
    """CSV with header ``visit,time,h_0..h_{H-1},h_norm,risk``; ``meta`` goes in leading ``#`` lines."""
    for key, value in sorted((meta or {}).items()):
        stream.write(f"# {key}={value}\n")
    hidden = len(rows[0]["h"]) if rows else 0
    w = csv.writer(stream, lineterminator="\n")
    w.writerow(trace_header(hidden))
    for r in rows:
        w.writerow([r["visit"], r["time"], *(repr(float(x)) for x in r["h"]), repr(r["h_norm"]), repr(r["risk"])])


# ---------------------------------------------------------------------------
# full-model gradient suite


def tiny_cohort(seed=0, n_diseases=12, n_treatments=20, n_records=3, max_visits=4):
    """Small random labeled cohort over a fixed vocabulary, for gradient checks."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x6763]))
    vocab = Vocabulary(tuple(disease_code(i) for i in range(n_diseases)),
                       tuple(treatment_code(j) for j in range(n_treatments)))
    records = []
    for p in range(n_records):
        visits = []
        for t in range(int(rng.integers(2, max_visits + 1))):
            d = rng.choice(n_diseases, size=int(rng.integers(1, 4)), replace=False)
            tr = rng.integers(0, n_treatments, size=int(rng.integers(0, 4)))
            visits.append(Visit(time=30 * t, diseases=tuple(disease_code(i) for i in d),
                                treatments=tuple(treatment_code(j) for j in tr),
                                label=int(rng.integers(0, 2))))
        records.append(PatientRecord(f"G{p}", tuple(visits)))
    return Cohort(records, vocab, {"seed": seed})


def gradient_suite(seed=0, step=1e-5, tolerance=1e-4, poolings=("mean", "last", "expsmooth"),
                   variants=("MDMT", "MDMTP"), rhos=("square_shift", "tanh")):
    """Finite-difference check of every parameter for each pooling x variant x rho.

    Returns a list of ``(label, GradCheckReport)`` pairs.
    """
    cohort = tiny_cohort(seed)
    out = []
    for pooling in poolings:
        for variant in variants:
            for rho in rhos:
                cfg = RiskConfig(variant=variant, dim=8, hidden=8, pooling=pooling, rho=rho,
                                 beta=0.5, embed_init=0.5, seed=seed)
                model = RiskModel(cohort.vocabulary, cfg)
                batch = encode_batch(cohort.records, cohort.vocabulary)
                report = dc.grad_check(lambda: model.loss_terms(batch).total, model.parameters(),
                                       step=step, tolerance=tolerance)
                out.append((f"{pooling}/{variant}/{rho}", report))
    return out
