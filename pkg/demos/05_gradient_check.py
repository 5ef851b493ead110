"""Checking reverse-mode gradients against central differences."""

import numpy as np

from carealgebra import diffcore as dc
from carealgebra.evaluation import gradient_suite

# A scalar warm-up: d/dx x^2 at 3.
x = dc.Parameter(np.array(3.0), "x")
rep = dc.grad_check(lambda: dc.mul(x, x), [x])
print("x^2 at 3: analytic", x.grad, "max rel err", rep.max_error["x"])


# A deliberately broken operation is caught.
def bad_square(a):
    return dc.record_op(a.value ** 2, (a,), lambda g: (4.0 * g * a.value,))


rep = dc.grad_check(lambda: dc.total(bad_square(x)), [x])
print("broken backward flagged:", rep.flagged, f"error {rep.max_error['x']:.3f}")

# The full model, every pooling kind, both variants, both nonlinearities.
for label, report in gradient_suite(seed=0):
    print(f"{label:28s} {report.worst:.2e} {'ok' if report.passed else 'FAIL'}")
