"""A visit as a bag of codes, and the disease-minus-treatment interaction."""

import numpy as np

from carealgebra.embedding import DISEASE, TREATMENT, EmbeddingTable, Vocabulary, embed_bag, visit_vector

vocab = Vocabulary.from_codes(["E11", "F32", "I10"], ["P01", "P02"])
table = EmbeddingTable(vocab, dim=4, rng=np.random.default_rng(0))
rows = {code: vocab.index(ns, code) for ns, code in map(vocab.entry, range(len(vocab)))}
print("rows:", rows)

# Two diabetes codes and one hypertension code in the same stay.
bag = [rows["E11"], rows["I10"], rows["E11"]]
d = embed_bag(table, bag).value
print("disease bag  ", np.round(d, 4), "norm", round(float(np.linalg.norm(d)), 4))

# Order never matters; the sum is taken before anything else happens.
print("same when shuffled:", np.array_equal(d, embed_bag(table, bag[::-1]).value))

# Components are nonnegative and the norm stays below one.
print("all >= 0:", bool((d >= 0).all()))

# An empty bag (no treatment given) maps to zero.
print("empty bag ->", embed_bag(table, []).value)

# Blow one row up and the soft normalisation saturates near unit length.
table.weight.value[rows["F32"]] = np.abs(table.weight.value[rows["F32"]]) * 1e6
print("huge row norm:", float(np.linalg.norm(embed_bag(table, [rows["F32"]]).value)))

# Treatments pull the visit vector toward the root of (1 + delta)^2.
p = embed_bag(table, [rows["P01"], rows["P02"]]).value
for rho in ("square_shift", "identity", "tanh"):
    print(f"{rho:13s}", np.round(visit_vector(d, p, rho).value, 4))
print("fully treated (p == d):", visit_vector(d, d).value)
