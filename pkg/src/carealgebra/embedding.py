"""Code vocabulary, embedding table, bag set function and visit interaction."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import diffcore as dc
from .errors import ConfigurationError, ShapeError, UndefinedSimilarityError, VocabularyError

DISEASE = "disease"
TREATMENT = "treatment"
RHO_KINDS = ("square_shift", "identity", "tanh")


@dataclass(frozen=True)
class Vocabulary:
    """Disease and treatment codes, each namespace sorted lexicographically.

    Diseases occupy table rows ``0 .. n_d - 1`` and treatments the rows
    after them, so the two namespaces never share an index.
    """

    disease_codes: tuple
    treatment_codes: tuple
    _disease_index: dict = field(init=False, repr=False, compare=False)
    _treatment_index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        d, t = tuple(self.disease_codes), tuple(self.treatment_codes)
        if len(set(d)) != len(d) or len(set(t)) != len(t):
            raise VocabularyError("duplicate code within a namespace")
        if list(d) != sorted(d) or list(t) != sorted(t):
            raise VocabularyError("vocabulary codes must be sorted lexicographically")
        object.__setattr__(self, "disease_codes", d)
        object.__setattr__(self, "treatment_codes", t)
        object.__setattr__(self, "_disease_index", {c: i for i, c in enumerate(d)})
        object.__setattr__(self, "_treatment_index", {c: i + len(d) for i, c in enumerate(t)})

    @classmethod
    def from_codes(cls, diseases, treatments):
        return cls(tuple(sorted(set(diseases))), tuple(sorted(set(treatments))))

    @property
    def n_diseases(self):
        return len(self.disease_codes)

    @property
    def n_treatments(self):
        return len(self.treatment_codes)

    def __len__(self):
        return self.n_diseases + self.n_treatments

    def index(self, namespace, code):
        """Table row of ``code`` in ``namespace``."""
        table = self._disease_index if namespace == DISEASE else self._treatment_index
        if namespace not in (DISEASE, TREATMENT):
            raise VocabularyError(f"unknown namespace {namespace!r}")
        try:
            return table[code]
        except KeyError:
            raise VocabularyError(f"unknown {namespace} code {code!r}") from None

    def indices(self, namespace, codes):
        return [self.index(namespace, c) for c in codes]

    def entry(self, row):
        """Inverse of :meth:`index`: ``(namespace, code)`` for a table row."""
        if not 0 <= row < len(self):
            raise VocabularyError(f"row {row} out of range")
        if row < self.n_diseases:
            return DISEASE, self.disease_codes[row]
        return TREATMENT, self.treatment_codes[row - self.n_diseases]

    def to_dict(self):
        return {"diseases": list(self.disease_codes), "treatments": list(self.treatment_codes)}

    @classmethod
    def from_dict(cls, d):
        return cls(tuple(d["diseases"]), tuple(d["treatments"]))


class EmbeddingTable:
    """One trainable row of length ``dim`` per vocabulary entry.

    Rows are held in a single (len(vocab), dim) Parameter; row ``i`` is the
    vector for ``vocab.entry(i)``.
    """

    def __init__(self, vocab, dim=32, rng=None, init_range=0.1):
        if dim < 1:
            raise ConfigurationError("embedding dim must be positive")
        self.vocab = vocab
        self.dim = dim
        rng = np.random.default_rng(0) if rng is None else rng
        self.weight = dc.Parameter(
            rng.uniform(-init_range, init_range, size=(len(vocab), dim)), name="embedding")

    def parameters(self):
        return [self.weight]

    def row(self, key):
        return self.weight.value[self._resolve(key)]

    def _resolve(self, key):
        if isinstance(key, (int, np.integer)):
            if not 0 <= key < len(self.vocab):
                raise VocabularyError(f"row {key} out of range")
            return int(key)
        namespace, code = key
        return self.vocab.index(namespace, code)

    def counts(self, bag):
        """Occurrence counts of a bag of row indices over the whole table."""
        bag = np.asarray(bag, dtype=np.intp).reshape(-1)
        if bag.size and (bag.min() < 0 or bag.max() >= len(self.vocab)):
            raise VocabularyError("bag index out of range")
        return np.bincount(bag, minlength=len(self.vocab)).astype(np.float64)


def set_function(summed, epsilon=1e-3):
    """Rectify a summed embedding and softly normalise it.

    Returns ``r / (epsilon + |r|)`` with ``r = max(0, summed)``; works on a
    single vector or on rows of a batch.
    """
    if not epsilon > 0:
        raise ConfigurationError("epsilon must be positive")
    rect = dc.elementwise("rectifier", summed)
    n = dc.norm(rect)
    denom = dc.add(dc.as_node(np.asarray(epsilon)), n)
    if rect.value.ndim > 1:
        denom = dc.reshape(denom, denom.shape + (1,))
    return dc.div(rect, denom)


def embed_bags(table, counts, epsilon=1e-3):
    """Batched set function. ``counts`` has shape (B, len(vocab))."""
    counts = np.asarray(counts, dtype=np.float64)
    if counts.shape[-1] != len(table.vocab):
        raise ShapeError(f"count matrix {counts.shape} does not match vocabulary size {len(table.vocab)}")
    summed = dc.matmul(counts, table.weight)
    return set_function(summed, epsilon)


def embed_bag(table, bag, epsilon=1e-3):
    """Set-function representation of one bag of table rows.

    Duplicates count twice; order never matters; the empty bag maps to the
    zero vector.
    """
    out = embed_bags(table, table.counts(bag)[None, :], epsilon=epsilon)
    return dc.reshape(out, (table.dim,))


def visit_vector(d_vec, p_vec, rho="square_shift"):
    """Interaction of disease and treatment bags: ``rho(d_vec - p_vec)``."""
    if rho not in RHO_KINDS:
        raise ConfigurationError(f"unknown rho {rho!r}; expected one of {RHO_KINDS}")
    d_vec, p_vec = dc.as_node(d_vec), dc.as_node(p_vec)
    if d_vec.shape != p_vec.shape:
        raise ShapeError(f"disease vector {d_vec.shape} and treatment vector {p_vec.shape} differ")
    return dc.elementwise(rho, dc.sub(d_vec, p_vec))


def code_similarity(table, code_a, code_b):
    """Cosine similarity of two embedding rows.

    Codes are row indices or ``(namespace, code)`` pairs.
    """
    a, b = table.row(code_a), table.row(code_b)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise UndefinedSimilarityError("cosine similarity undefined for a zero-norm embedding")
    return float(np.clip(a @ b / (na * nb), -1.0, 1.0))


def nearest_codes(table, code, k=5, namespace=None):
    """The ``k`` rows most cosine-similar to ``code``, optionally within one namespace."""
    q = table.row(code)
    W = table.weight.value
    norms = np.linalg.norm(W, axis=1) * np.linalg.norm(q)
    sims = np.where(norms > 0, W @ q / np.where(norms > 0, norms, 1.0), -np.inf)
    self_row = table._resolve(code)
    sims[self_row] = -np.inf
    if namespace is not None:
        nd = table.vocab.n_diseases
        if namespace == DISEASE:
            sims[nd:] = -np.inf
        else:
            sims[:nd] = -np.inf
    order = np.argsort(-sims, kind="stable")[:k]
    return [(table.vocab.entry(int(i)), float(sims[i])) for i in order if np.isfinite(sims[i])]
