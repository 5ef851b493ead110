"""Simulate a cohort, fit the risk model, and follow one patient's illness state."""

import io

import numpy as np

from carealgebra.evaluation import evaluate, trace_states, write_trace_csv
from carealgebra.model import RiskConfig, RiskModel
from carealgebra.optim import TrainConfig, train
from carealgebra.synth import SynthConfig, gen_synthetic

cohort = gen_synthetic(SynthConfig(patients=300, seed=7))
labels = [v.label for r in cohort.records for v in r.visits]
print(f"{len(cohort)} patients, {len(labels)} visits, readmission rate {np.mean(labels):.3f}")
print(f"vocabulary: {cohort.vocabulary.n_diseases} diseases, {cohort.vocabulary.n_treatments} treatments")

train_recs, val_recs, test_recs = cohort.records[:200], cohort.records[200:240], cohort.records[240:]
model = RiskModel(cohort.vocabulary, RiskConfig(variant="MDMTP", dim=16, hidden=16, beta=0.01, seed=7))
model, history = train(model, train_recs, val_recs, TrainConfig(epochs=15, seed=7))
for h in history:
    print(f"epoch {h['epoch']:2d} loss {h['train_loss']:.4f} val AUC {h['val_auc']:.3f}")

print("held-out:", {k: round(v, 3) for k, v in evaluate(model, test_recs).items() if isinstance(v, float)})

# The longest held-out history, row by row.
patient = max(test_recs, key=lambda r: len(r.visits))
rows = trace_states(model, patient)
print(f"\npatient {patient.patient_id}")
for row, visit in zip(rows, patient.visits):
    print(f"  day {row['time']:5d}  |h|={row['h_norm']:.3f}  risk={row['risk']:.3f}  "
          f"observed={visit.label}  diseases={len(visit.diseases)} treatments={len(visit.treatments)}")

buf = io.StringIO()
write_trace_csv(rows, buf, {"patient": patient.patient_id})
print("\nCSV preview:\n" + "\n".join(line[:90] for line in buf.getvalue().splitlines()[:4]))
