"""Five-fold comparison of the LSTM model against the two baselines."""

import time

from carealgebra.evaluation import ModelSpec, cross_validate
from carealgebra.optim import TrainConfig
from carealgebra.synth import SynthConfig, gen_synthetic

cohort = gen_synthetic(SynthConfig(patients=400, seed=42))
specs = {
    "BoW+LR": ModelSpec("bow-lr"),
    "Deepr-mini": ModelSpec("deepr-mini", {"dim": 16, "filters": 8}),
    "MDMT": ModelSpec("mdmt", {"dim": 16, "hidden": 16}),
    "MDMTP": ModelSpec("mdmtp", {"dim": 16, "hidden": 16}),
}
cfg = TrainConfig(epochs=10, seed=42)

print(f"{'model':12s} {'pooled AUC':>16s} {'final AUC':>16s} {'time':>6s}")
for name, spec in specs.items():
    t0 = time.perf_counter()
    rep = cross_validate(cohort, spec, k=5, seed=42, train_cfg=cfg)
    d = rep.to_dict()
    print(f"{name:12s} {d['auc']:.3f} +- {d['auc_std']:.3f}   {d['auc_final']:.3f} +- {d['auc_final_std']:.3f}"
          f" {time.perf_counter() - t0:5.1f}s")
