"""Comparison models: bag-of-words logistic regression and a small Deepr-style CNN."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import diffcore as dc
from .data import stable_hash
from .embedding import DISEASE, TREATMENT, Vocabulary
from .errors import (
    ConfigurationError,
    DegenerateBatchError,
    ModelParseError,
    VocabularyError,
    VocabularyMismatchError,
)
from .metrics import ScoredExample
from .optim import AdamState, adam_step
from .serialization import config_digest, decode_array, dump_envelope, read_envelope

_P_LOW = np.finfo(np.float64).tiny
_P_HIGH = 1.0 - np.finfo(np.float64).epsneg


def _probs(scores):
    return np.clip(dc.sigmoid_value(scores), _P_LOW, _P_HIGH)


def _load_params(model, doc):
    params = {p.name: p for p in model.parameters()}
    stored = doc["parameters"]
    if set(stored) != set(params):
        raise ModelParseError(f"parameter set mismatch: {sorted(set(stored) ^ set(params))}")
    for name, p in params.items():
        arr = decode_array(stored[name], name)
        if arr.shape != p.value.shape:
            if name in ("bow.w", "deepr.embedding"):
                raise VocabularyMismatchError(f"{name} shape {arr.shape} does not fit the vocabulary")
            raise ModelParseError(f"parameter {name!r} has shape {arr.shape}, expected {p.value.shape}")
        p.value[...] = arr
    return model


# ---------------------------------------------------------------------------
# bag of words + L2 logistic regression


def bow_features(record, vocab, upto=None):
    """Code counts over the whole history (or its first ``upto`` visits)."""
    x = np.zeros(len(vocab))
    for v in record.visits[:upto]:
        for c in v.diseases:
            x[vocab.index(DISEASE, c)] += 1.0
        for c in v.treatments:
            x[vocab.index(TREATMENT, c)] += 1.0
    return x


@dataclass(frozen=True)
class BowConfig:
    lam: float = 1e-3
    lr: float = 0.01
    steps: int = 2000
    seed: int = 0

    def __post_init__(self):
        if self.lam < 0:
            raise ConfigurationError("lambda must be nonnegative")
        if self.steps < 1 or not self.lr > 0:
            raise ConfigurationError("steps and lr must be positive")


class BowLrModel:
    model_type = "bow-lr"

    def __init__(self, vocab, config=BowConfig()):
        self.vocab = vocab
        self.config = config
        self.w = dc.Parameter(np.zeros(len(vocab)), name="bow.w")
        self.b = dc.Parameter(np.zeros(()), name="bow.b")

    @property
    def lam(self):
        return self.config.lam

    def parameters(self):
        return [self.w, self.b]

    def objective(self, X, y):
        """Mean NLL plus ``lam / 2 * |w|^2`` as a graph node."""
        s = dc.add(dc.matmul(X, self.w), self.b)
        nll = dc.scale(dc.total(dc.sub(dc.elementwise("softplus", s), dc.mul(s, y))), 1.0 / len(y))
        return dc.add(nll, dc.scale(dc.total(dc.mul(self.w, self.w)), 0.5 * self.lam))

    def predict_proba(self, X):
        return _probs(X @ self.w.value + self.b.value)

    def score_visits(self, records, final_only=False):
        out = []
        for r in records:
            ts = [len(r.visits) - 1] if final_only else range(len(r.visits))
            for t in ts:
                y = r.visits[t].label
                if y is None:
                    continue
                p = self.predict_proba(bow_features(r, self.vocab, t + 1)[None, :])[0]
                out.append(ScoredExample(float(p), int(y), r.patient_id, int(t)))
        return out

    def to_json(self, provenance=None):
        cfg = asdict(self.config)
        prov = {"seed": self.config.seed, "config_digest": config_digest(cfg), **(provenance or {})}
        return dump_envelope(self.model_type, cfg, self.vocab, self.parameters(), prov)

    @classmethod
    def from_document(cls, doc):
        try:
            model = cls(Vocabulary.from_dict(doc["vocabulary"]), BowConfig(**doc["config"]))
        except (TypeError, KeyError, ConfigurationError, VocabularyError) as exc:
            raise ModelParseError(f"invalid bow-lr config or vocabulary: {exc}") from None
        return _load_params(model, doc)

    @classmethod
    def from_json(cls, text):
        return cls.from_document(read_envelope(text))


def _final_labeled(records, vocab):
    rows, ys = [], []
    for r in records:
        y = r.final_label
        if y is not None:
            rows.append(bow_features(r, vocab))
            ys.append(float(y))
    if not ys:
        raise DegenerateBatchError("no record has a final-visit label")
    return np.array(rows), np.array(ys)


def train_bow_lr(records, vocab, lam=None, cfg=BowConfig(), init=None):
    """Fit BoW logistic regression on final-visit labels with full-batch Adam."""
    if lam is not None:
        cfg = BowConfig(lam=lam, lr=cfg.lr, steps=cfg.steps, seed=cfg.seed)
    X, y = _final_labeled(records, vocab)
    model = BowLrModel(vocab, cfg)
    if init is not None:
        model.w.value[...] = init[0]
        model.b.value[...] = init[1]
    params = model.parameters()
    state = AdamState(lr=cfg.lr)
    for _ in range(cfg.steps):
        for p in params:
            p.zero_grad()
        with dc.GradProgram() as prog:
            obj = model.objective(X, y)
        prog.backward(obj)
        adam_step(state, params)
    return model


def bow_objective(model, records):
    X, y = _final_labeled(records, model.vocab)
    return float(model.objective(X, y).value)


# ---------------------------------------------------------------------------
# Deepr-style 1D CNN over randomly ordered intra-visit tokens

PAD = -1


def deepr_sequence(record, seed=0, vocab=None, upto=None):
    """Flatten a record into tokens: visits in time order, codes shuffled within each visit.

    Tokens are ``(namespace, code)`` pairs, or table rows when ``vocab`` is given.
    """
    tokens = []
    pid_hash = stable_hash(record.patient_id)
    for t, v in enumerate(record.visits[:upto]):
        items = [(DISEASE, c) for c in v.diseases] + [(TREATMENT, c) for c in v.treatments]
        rng = np.random.default_rng(np.random.SeedSequence([seed, pid_hash, t]))
        order = rng.permutation(len(items))
        tokens.extend(items[i] for i in order)
    if vocab is not None:
        return [vocab.index(ns, c) for ns, c in tokens]
    return tokens


@dataclass(frozen=True)
class DeeprConfig:
    dim: int = 32
    filters: int = 16
    width: int = 3
    embed_init: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.width < 1 or self.filters < 1 or self.dim < 1:
            raise ConfigurationError("width, filters and dim must be positive")


class DeeprMiniModel:
    """Token embeddings, one valid 1D convolution with rectifier, max-pool over time, logistic output."""

    model_type = "deepr-mini"

    def __init__(self, vocab, config=DeeprConfig()):
        self.vocab = vocab
        self.config = config
        rng = np.random.default_rng(np.random.SeedSequence([config.seed, 0x6470]))
        m, F, w = config.dim, config.filters, config.width
        self.embedding = dc.Parameter(
            rng.uniform(-config.embed_init, config.embed_init, (len(vocab), m)), name="deepr.embedding")
        lim = np.sqrt(6.0 / (w * m + F))
        self.filters = [dc.Parameter(rng.uniform(-lim, lim, (F, m)), name=f"deepr.conv_{k}") for k in range(w)]
        self.conv_bias = dc.Parameter(np.zeros(F), name="deepr.conv_bias")
        lim = np.sqrt(6.0 / (F + 1))
        self.w_out = dc.Parameter(rng.uniform(-lim, lim, F), name="deepr.w_out")
        self.b_out = dc.Parameter(np.zeros(()), name="deepr.b_out")

    def parameters(self):
        return [self.embedding, *self.filters, self.conv_bias, self.w_out, self.b_out]

    def _scores(self, token_lists):
        """Pre-logistic scores for a batch of row-index token lists."""
        w = self.config.width
        n = max(max(len(t) for t in token_lists), w)
        B = len(token_lists)
        tok = np.full((B, n), PAD)
        for b, t in enumerate(token_lists):
            if t:
                tok[b, :len(t)] = t
        if tok.max() >= len(self.vocab) or tok.min() < PAD:
            raise VocabularyError("token outside the vocabulary")
        P = n - w + 1
        lengths = np.array([max(len(t), w) for t in token_lists])
        valid = np.arange(P)[None, :] < (lengths - w + 1)[:, None]
        conv = None
        for k in range(w):
            idx = tok[:, k:k + P]
            emb = dc.mul(dc.take(self.embedding, np.where(idx == PAD, 0, idx)), (idx != PAD)[..., None])
            part = dc.matvec(self.filters[k], emb)
            conv = part if conv is None else dc.add(conv, part)
        act = dc.elementwise("rectifier", dc.add(conv, self.conv_bias))
        pooled = dc.masked_max(act, valid[..., None], axis=1)
        return dc.add(dc.matmul(pooled, self.w_out), self.b_out), pooled

    def pooled_features(self, tokens):
        return self._scores([list(tokens)])[1].value[0]

    def batch_loss(self, records, epoch=0):
        seqs, ys = [], []
        for r in records:
            if r.final_label is None:
                continue
            seqs.append(deepr_sequence(r, seed=self.config.seed + 1 + epoch, vocab=self.vocab))
            ys.append(float(r.final_label))
        if not ys:
            raise DegenerateBatchError("batch has no final-visit labels")
        s, _ = self._scores(seqs)
        y = np.array(ys)
        nll = dc.sub(dc.elementwise("softplus", s), dc.mul(s, y))
        return dc.scale(dc.total(nll), 1.0 / len(ys))

    def predict_tokens(self, token_lists):
        return _probs(self._scores([list(t) for t in token_lists])[0].value)

    def score_visits(self, records, final_only=False, chunk=256):
        """Scores each labeled visit by re-sequencing the record's prefix."""
        items = []
        for r in records:
            ts = [len(r.visits) - 1] if final_only else range(len(r.visits))
            for t in ts:
                y = r.visits[t].label
                if y is not None:
                    toks = deepr_sequence(r, seed=self.config.seed, vocab=self.vocab, upto=t + 1)
                    items.append((toks, int(y), r.patient_id, int(t)))
        out = []
        for start in range(0, len(items), chunk):
            part = items[start:start + chunk]
            probs = self.predict_tokens([it[0] for it in part])
            out += [ScoredExample(float(p), y, pid, t) for p, (_, y, pid, t) in zip(probs, part)]
        return out

    def to_json(self, provenance=None):
        cfg = asdict(self.config)
        prov = {"seed": self.config.seed, "config_digest": config_digest(cfg), **(provenance or {})}
        return dump_envelope(self.model_type, cfg, self.vocab, self.parameters(), prov)

    @classmethod
    def from_document(cls, doc):
        try:
            model = cls(Vocabulary.from_dict(doc["vocabulary"]), DeeprConfig(**doc["config"]))
        except (TypeError, KeyError, ConfigurationError, VocabularyError) as exc:
            raise ModelParseError(f"invalid deepr-mini config or vocabulary: {exc}") from None
        return _load_params(model, doc)

    @classmethod
    def from_json(cls, text):
        return cls.from_document(read_envelope(text))


def deepr_forward(model, tokens):
    """Readmission probability for one token sequence (table rows or ``(namespace, code)`` pairs)."""
    tokens = [t if isinstance(t, (int, np.integer)) else model.vocab.index(*t) for t in tokens]
    return float(model.predict_tokens([tokens])[0])
