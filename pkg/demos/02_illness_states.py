"""Running an LSTM over visit vectors, pooling its states, and penalising jumps."""

import numpy as np

from carealgebra.recurrent import (
    LstmParams,
    PoolingConfig,
    coherence_penalty,
    lstm_step,
    norm_stabilizer,
    pool,
    unroll,
)

rng = np.random.default_rng(3)
params = LstmParams(input_dim=4, hidden_dim=3, rng=rng)

# Five visits worth of inputs; in the full model these come from visit_vector.
visits = list(rng.uniform(0, 2, size=(5, 4)))
states = unroll(params, visits)
for t, s in enumerate(states, 1):
    print(f"t={t} h={np.round(s.h.value, 3)} |h|={np.linalg.norm(s.h.value):.3f}")

# One step with its gate activations exposed.
_, gates = lstm_step(params, visits[0], params.zero_state(), return_gates=True)
print("gates at t=1:", {k: np.round(v, 3) for k, v in gates.items()})

# Three ways to summarise the history at the last discharge.
for kind in ("mean", "last", "expsmooth"):
    print(f"{kind:10s}", np.round(pool(states, PoolingConfig(kind, alpha=0.5)).value, 3))

hs = [s.h for s in states]
print("norm stabilizer (beta=1):", float(norm_stabilizer(hs, 1.0).value))
print("coherence       (beta=1):", float(coherence_penalty(hs, 1.0).value))

# Hand example: states of norm 1 then 3 give (1/2) * (3 - 1)^2.
print("worked example:", float(norm_stabilizer([np.array([1.0, 0]), np.array([0, 3.0])], 1.0).value))
