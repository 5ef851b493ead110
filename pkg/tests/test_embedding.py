import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from carealgebra import diffcore as dc
from carealgebra.embedding import (
    DISEASE,
    TREATMENT,
    EmbeddingTable,
    Vocabulary,
    code_similarity,
    embed_bag,
    nearest_codes,
    set_function,
    visit_vector,
)
from carealgebra.errors import ConfigurationError, ShapeError, UndefinedSimilarityError, VocabularyError


def table_with(rows):
    rows = np.asarray(rows, dtype=float)
    vocab = Vocabulary.from_codes([f"D{i}" for i in range(len(rows))], [])
    t = EmbeddingTable(vocab, dim=rows.shape[1])
    t.weight.value[...] = rows
    return t


def random_table(n=12, m=6, seed=0):
    vocab = Vocabulary.from_codes([f"D{i:02d}" for i in range(n)], [f"P{i:02d}" for i in range(n)])
    return EmbeddingTable(vocab, dim=m, rng=np.random.default_rng(seed))


def test_vocabulary_layout():
    v = Vocabulary.from_codes(["X10", "A01", "X10"], ["X10", "B2"])
    assert v.disease_codes == ("A01", "X10")
    assert len(v) == 4
    assert v.index(DISEASE, "X10") == 1
    assert v.index(TREATMENT, "X10") == 3
    assert v.entry(2) == (TREATMENT, "B2")
    assert Vocabulary.from_dict(v.to_dict()) == v
    with pytest.raises(VocabularyError):
        v.index(DISEASE, "ZZZ")


def test_embed_bag_examples():
    t = table_with([[3.0, 4.0], [1.0, -2.0], [-3.0, 1.0]])
    np.testing.assert_array_equal(embed_bag(t, []).value, [0.0, 0.0])
    np.testing.assert_allclose(embed_bag(t, [0], epsilon=1.0).value, [0.5, 2 / 3])
    np.testing.assert_array_equal(embed_bag(t, [1, 2]).value, [0.0, 0.0])


def test_embed_bag_errors():
    t = random_table()
    with pytest.raises(VocabularyError):
        embed_bag(t, [len(t.vocab)])
    with pytest.raises(ConfigurationError):
        embed_bag(t, [0], epsilon=0.0)


def test_duplicates_are_bag_semantics():
    t = random_table(seed=3)
    a = 4
    np.testing.assert_allclose(embed_bag(t, [a, a]).value, set_function(2 * t.weight.value[a]).value, rtol=0, atol=1e-15)
    assert not np.array_equal(embed_bag(t, [a, a]).value, embed_bag(t, [a]).value) or \
        not np.maximum(t.weight.value[a], 0).any()


@settings(max_examples=60, deadline=None)
@given(st.lists(st.integers(0, 23), max_size=10), st.randoms(use_true_random=False))
def test_permutation_invariance_and_bounds(bag, rnd):
    t = random_table(seed=1)
    shuffled = list(bag)
    rnd.shuffle(shuffled)
    out = embed_bag(t, bag).value
    assert out.tobytes() == embed_bag(t, shuffled).value.tobytes()
    assert (out >= 0).all()
    assert np.linalg.norm(out) < 1


def test_norm_tends_to_one_for_huge_rows():
    t = random_table(seed=2)
    t.weight.value[5] = np.abs(t.weight.value[5]) * 1e6
    assert np.linalg.norm(embed_bag(t, [5]).value) > 0.999


def test_visit_vector_examples():
    d = np.array([0.3, 0.1, 0.7])
    np.testing.assert_array_equal(visit_vector(d, d).value, np.ones(3))
    assert visit_vector(np.array([0.0]), np.array([1.0])).value[0] == 0.0
    np.testing.assert_allclose(visit_vector(np.array([0.6, 0.0]), np.array([0.1, 0.3])).value, [2.25, 0.49])
    np.testing.assert_allclose(visit_vector(np.array([0.6]), np.array([0.1]), rho="identity").value, [0.5])
    np.testing.assert_allclose(visit_vector(np.array([0.6]), np.array([0.1]), rho="tanh").value, [np.tanh(0.5)])


def test_visit_vector_errors():
    with pytest.raises(ShapeError):
        visit_vector(np.zeros(2), np.zeros(3))
    with pytest.raises(ConfigurationError):
        visit_vector(np.zeros(2), np.zeros(2), rho="cube")


def test_code_similarity():
    t = table_with([[1.0, 0.0], [0.0, 1.0], [1.0, 1.0], [2.0, 2.0], [0.0, 0.0]])
    assert code_similarity(t, 2, 2) == pytest.approx(1.0)
    assert code_similarity(t, 0, 1) == 0.0
    assert code_similarity(t, 2, 3) == pytest.approx(1.0)
    assert code_similarity(t, (DISEASE, "D0"), (DISEASE, "D2")) == pytest.approx(np.sqrt(0.5))
    with pytest.raises(UndefinedSimilarityError):
        code_similarity(t, 0, 4)


def test_nearest_codes_excludes_self():
    t = table_with([[1.0, 0.0], [0.9, 0.1], [0.0, 1.0]])
    near = nearest_codes(t, 0, k=2)
    assert near[0][0] == (DISEASE, "D1")
    assert all(code != (DISEASE, "D0") for code, _ in near)


def test_composite_gradcheck():
    t = random_table(n=6, m=4, seed=9)
    t.weight.value *= 5
    w = np.random.default_rng(0).normal(size=4)

    def f():
        v = visit_vector(embed_bag(t, [0, 1, 1, 3]), embed_bag(t, [6, 8, 10]))
        return dc.total(dc.mul(v, w))

    rep = dc.grad_check(f, t.parameters(), tolerance=1e-5)
    assert rep.passed, rep.summary()
