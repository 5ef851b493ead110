"""End-to-end risk model: code bags -> visit vectors -> LSTM -> pooling -> classifier."""

from __future__ import annotations

from dataclasses import asdict, dataclass, replace
from typing import NamedTuple

import numpy as np

from . import diffcore as dc
from .embedding import DISEASE, RHO_KINDS, TREATMENT, EmbeddingTable, Vocabulary, embed_bags, visit_vector
from .errors import (
    ConfigurationError,
    DegenerateBatchError,
    ModelParseError,
    ProtocolError,
    ValidationError,
    VocabularyError,
    VocabularyMismatchError,
)
from .metrics import ScoredExample
from .recurrent import LstmParams, PoolingConfig, RegularizerConfig, pooled_prefixes, regularizer, unroll
from .serialization import config_digest, decode_array, dump_envelope, read_envelope

VARIANTS = ("MDMT", "MDMTP")
_P_LOW = np.finfo(np.float64).tiny
_P_HIGH = 1.0 - np.finfo(np.float64).epsneg


@dataclass(frozen=True)
class RiskConfig:
    variant: str = "MDMT"
    dim: int = 32
    hidden: int = 32
    epsilon: float = 1e-3
    rho: str = "square_shift"
    pooling: str = "last"
    alpha: float = 0.5
    beta: float = 0.01
    classifier_depth: int = 1
    embed_init: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigurationError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.dim < 1 or self.hidden < 1:
            raise ConfigurationError("dim and hidden must be positive")
        if not self.epsilon > 0:
            raise ConfigurationError("epsilon must be positive")
        if self.rho not in RHO_KINDS:
            raise ConfigurationError(f"rho must be one of {RHO_KINDS}")
        if self.classifier_depth not in (0, 1):
            raise ConfigurationError("classifier_depth must be 0 or 1")
        if self.variant == "MDMTP" and not self.beta > 0:
            raise ConfigurationError("MDMTP needs beta > 0")
        PoolingConfig(self.pooling, self.alpha)

    @property
    def pooling_config(self):
        return PoolingConfig(self.pooling, self.alpha)

    @property
    def regularizer_config(self):
        if self.variant == "MDMT":
            return RegularizerConfig("none", 0.0)
        return RegularizerConfig("norm_stabilizer", self.beta)

    def to_dict(self):
        return asdict(self)


class EncodedBatch(NamedTuple):
    disease_counts: np.ndarray    # (T, B, V)
    treatment_counts: np.ndarray  # (T, B, V)
    labels: np.ndarray            # (T, B); 0 where unlabeled or padded
    labeled: np.ndarray           # (T, B) 1.0 where a label exists
    lengths: np.ndarray           # (B,)
    patient_ids: tuple


class LossTerms(NamedTuple):
    nll: dc.Node
    reg: dc.Node
    total: dc.Node


@dataclass
class Prediction:
    """Per-visit risk for one record, plus the illness states that produced it."""

    probs: np.ndarray
    states: np.ndarray  # (T, H)

    def __len__(self):
        return len(self.probs)

    def __getitem__(self, t):
        return self.probs[t]


def encode_batch(records, vocab):
    """Dense per-visit code counts for a padded batch of records."""
    records = list(records)
    if not records:
        raise ValidationError("empty batch")
    B, V = len(records), len(vocab)
    lengths = np.array([len(r.visits) for r in records])
    if lengths.min() < 1:
        raise ValidationError("record without visits")
    T = int(lengths.max())
    dcnt = np.zeros((T, B, V))
    tcnt = np.zeros((T, B, V))
    labels = np.zeros((T, B))
    labeled = np.zeros((T, B))
    for b, r in enumerate(records):
        for t, v in enumerate(r.visits):
            for c in v.diseases:
                dcnt[t, b, vocab.index(DISEASE, c)] += 1.0
            for c in v.treatments:
                tcnt[t, b, vocab.index(TREATMENT, c)] += 1.0
            if v.label is not None:
                labels[t, b] = v.label
                labeled[t, b] = 1.0
    return EncodedBatch(dcnt, tcnt, labels, labeled, lengths, tuple(r.patient_id for r in records))


class RiskModel:
    """Multi-disease multi-treatment LSTM risk model (MDMT / MDMTP)."""

    def __init__(self, vocab, config=RiskConfig()):
        self.vocab = vocab
        self.config = config
        rng = np.random.default_rng(np.random.SeedSequence([config.seed, 0x726D]))
        self.embedding = EmbeddingTable(vocab, config.dim, rng=rng, init_range=config.embed_init)
        self.lstm = LstmParams(config.dim, config.hidden, rng=rng)
        H = config.hidden
        if config.classifier_depth == 1:
            lim = np.sqrt(6.0 / (2 * H))
            self.classifier = [
                dc.Parameter(rng.uniform(-lim, lim, (H, H)), name="clf.W_hidden"),
                dc.Parameter(np.zeros(H), name="clf.b_hidden"),
                dc.Parameter(rng.uniform(-lim, lim, H), name="clf.w_out"),
                dc.Parameter(np.zeros(()), name="clf.b_out"),
            ]
        else:
            lim = np.sqrt(6.0 / (H + 1))
            self.classifier = [
                dc.Parameter(rng.uniform(-lim, lim, H), name="clf.w_out"),
                dc.Parameter(np.zeros(()), name="clf.b_out"),
            ]
        self._pending = None

    @property
    def model_type(self):
        return self.config.variant.lower()

    def parameters(self):
        return self.embedding.parameters() + self.lstm.parameters() + list(self.classifier)

    def named_parameters(self):
        return {p.name: p for p in self.parameters()}

    def zero_grad(self):
        for p in self.parameters():
            p.zero_grad()

    # -- forward pieces -----------------------------------------------------

    def _classify(self, pooled):
        if self.config.classifier_depth == 1:
            W, b, w, c = self.classifier
            hidden = dc.elementwise("tanh", dc.affine([(W, pooled)], b))
        else:
            w, c = self.classifier
            hidden = pooled
        return dc.add(dc.matmul(hidden, w), c)

    def run(self, batch):
        """Scores (T, B) and the LSTM state list for an encoded batch."""
        T, B, V = batch.disease_counts.shape
        cfg = self.config
        d = embed_bags(self.embedding, batch.disease_counts.reshape(T * B, V), cfg.epsilon)
        p = embed_bags(self.embedding, batch.treatment_counts.reshape(T * B, V), cfg.epsilon)
        v = dc.reshape(visit_vector(d, p, cfg.rho), (T, B, cfg.dim))
        inputs = [dc.take(v, t) for t in range(T)]
        states = unroll(self.lstm, inputs)
        pooled = dc.stack(pooled_prefixes(states, cfg.pooling_config))
        return self._classify(pooled), states

    def loss_terms(self, batch):
        """Mean NLL over labeled visits plus, for MDMTP, the mean per-record regularizer."""
        n_labeled = batch.labeled.sum()
        if n_labeled == 0:
            raise DegenerateBatchError("batch has no labeled visits")
        scores, states = self.run(batch)
        nll_each = dc.sub(dc.elementwise("softplus", scores), dc.mul(scores, batch.labels))
        nll = dc.scale(dc.total(dc.mul(nll_each, batch.labeled)), 1.0 / n_labeled)
        reg_cfg = self.config.regularizer_config
        if reg_cfg.kind == "none":
            reg = dc.Node(np.zeros(()))
            return LossTerms(nll, reg, nll)
        per_record = regularizer(states, reg_cfg, lengths=batch.lengths)
        reg = dc.scale(dc.total(per_record), 1.0 / len(batch.lengths))
        return LossTerms(nll, reg, dc.add(nll, reg))

    def batch_loss(self, records, epoch=0):
        return self.loss_terms(encode_batch(records, self.vocab)).total

    # -- scoring ------------------------------------------------------------

    def predict_batch(self, records):
        """Per-visit probabilities (T, B) and states (T, B, H) for a batch."""
        batch = encode_batch(records, self.vocab)
        scores, states = self.run(batch)
        probs = np.clip(dc.sigmoid_value(scores.value), _P_LOW, _P_HIGH)
        hs = np.stack([s.h.value for s in states]) if states else np.zeros((0, len(records), self.config.hidden))
        return probs, hs, batch.lengths

    def score_visits(self, records, final_only=False, chunk=256):
        """Scored examples for every labeled visit (or only final visits)."""
        out = []
        records = list(records)
        for start in range(0, len(records), chunk):
            part = records[start:start + chunk]
            probs, _, lengths = self.predict_batch(part)
            for b, r in enumerate(part):
                ts = [lengths[b] - 1] if final_only else range(lengths[b])
                for t in ts:
                    y = r.visits[t].label
                    if y is not None:
                        out.append(ScoredExample(float(probs[t, b]), int(y), r.patient_id, int(t)))
        return out

    # -- serialization --------------------------------------------------------

    def to_json(self, provenance=None):
        cfg = self.config.to_dict()
        prov = {"seed": self.config.seed, "config_digest": config_digest(cfg), **(provenance or {})}
        return dump_envelope(self.model_type, cfg, self.vocab, self.parameters(), prov)

    @classmethod
    def from_document(cls, doc):
        try:
            config = RiskConfig(**doc["config"])
            vocab = Vocabulary.from_dict(doc["vocabulary"])
        except (TypeError, KeyError, ConfigurationError, VocabularyError) as exc:
            raise ModelParseError(f"invalid model config or vocabulary: {exc}") from None
        if config.variant.lower() != doc["model_type"]:
            raise ModelParseError("model_type disagrees with config variant")
        model = cls(vocab, config)
        params = model.named_parameters()
        stored = doc["parameters"]
        if set(stored) != set(params):
            raise ModelParseError(f"parameter set mismatch: {sorted(set(stored) ^ set(params))}")
        for name, p in params.items():
            arr = decode_array(stored[name], name)
            if arr.shape != p.value.shape:
                if name == "embedding":
                    raise VocabularyMismatchError(
                        f"embedding has {arr.shape[0] if arr.ndim else 0} rows but vocabulary has {len(vocab)} codes")
                raise ModelParseError(f"parameter {name!r} has shape {arr.shape}, expected {p.value.shape}")
            p.value[...] = arr
        return model

    @classmethod
    def from_json(cls, text):
        return cls.from_document(read_envelope(text))

    def with_config(self, **changes):
        """A copy of this model sharing no state, with some config fields changed."""
        clone = RiskModel(self.vocab, replace(self.config, **changes))
        ours = self.named_parameters()
        for name, p in clone.named_parameters().items():
            if name in ours and ours[name].value.shape == p.value.shape:
                p.value[...] = ours[name].value
        return clone


def _batch_key(records):
    return tuple(r.patient_id for r in records), tuple(len(r.visits) for r in records)


def forward(model, record):
    """Per-visit risks for one record; risk at visit t uses visits 1..t only."""
    if not record.visits:
        raise ValidationError(f"record {record.patient_id!r} has no visits")
    probs, hs, _ = model.predict_batch([record])
    return Prediction(probs[:, 0].copy(), hs[:, 0, :].copy())


def predict_risk(model, record):
    """Risk at the final discharge of ``record``."""
    return float(forward(model, record).probs[-1])


def loss(model, records):
    """Training loss on ``records``; records the computation for :func:`backward`."""
    records = list(records)
    if not records:
        raise DegenerateBatchError("empty batch")
    batch = encode_batch(records, model.vocab)
    with dc.GradProgram() as prog:
        terms = model.loss_terms(batch)
    model._pending = (prog, terms.total, _batch_key(records))
    return float(terms.total.value)


def backward(model, records, scale=1.0):
    """Accumulate gradients of ``scale * loss`` from the matching :func:`loss` call."""
    pending = model._pending
    if pending is None:
        raise ProtocolError("backward called before loss on this batch")
    prog, out, key = pending
    if key != _batch_key(list(records)):
        raise ProtocolError("backward batch differs from the batch passed to loss")
    model._pending = None
    prog.backward(out, seed=scale)


def save(model, path, provenance=None):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(model.to_json(provenance))


def load(path):
    with open(path, encoding="utf-8") as fh:
        return RiskModel.from_json(fh.read())
