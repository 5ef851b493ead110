"""What the embedding table learns: nearest codes after training."""

import numpy as np

from carealgebra.embedding import DISEASE, code_similarity, nearest_codes
from carealgebra.model import RiskConfig, RiskModel
from carealgebra.optim import TrainConfig, train
from carealgebra.synth import SynthConfig, gen_synthetic

cfg = SynthConfig(patients=400, seed=1)
cohort = gen_synthetic(cfg)
model = RiskModel(cohort.vocabulary, RiskConfig(dim=16, hidden=16, seed=1))
train(model, cohort.records, cfg=TrainConfig(epochs=10, seed=1))
table = model.embedding

# In the simulator the first fifth of the disease list tracks severity.
n_linked = int(round(cfg.linked_fraction * cfg.disease_vocab))
codes = cohort.vocabulary.disease_codes
print("severity-linked codes:", codes[:n_linked])

for code in codes[:3]:
    near = nearest_codes(table, (DISEASE, code), k=4, namespace=DISEASE)
    print(code, "->", ", ".join(f"{c} ({s:+.2f})" for (_, c), s in near))

linked = [code_similarity(table, (DISEASE, a), (DISEASE, b))
          for i, a in enumerate(codes[:n_linked]) for b in codes[i + 1:n_linked]]
mixed = [code_similarity(table, (DISEASE, a), (DISEASE, b)) for a in codes[:n_linked] for b in codes[n_linked:]]
print(f"mean cosine within linked group {np.mean(linked):+.3f}, linked vs rest {np.mean(mixed):+.3f}")
