"""Check tape gradients against central finite differences on a small MLP.

    python scripts/gradient_check.py
"""

import numpy as np

from lfssd import autodiff as ad
from lfssd.model import ModelSpec, ParameterVector, flat_grad, forward, forward_tensors, init_model, param_tensors

spec = ModelSpec((3, 5, 4), init_seed=0)
rng = np.random.default_rng(1)
theta = init_model(spec).values + 0.1 * rng.normal(size=spec.n_params)
x = rng.normal(size=3)

for name, objective in [("cross-entropy", lambda z: ad.cross_entropy(z, 2)), ("squared norm", ad.l2_squared_norm)]:
    tensors = param_tensors(ParameterVector(spec, theta))
    with ad.Tape() as tape:
        out = objective(forward_tensors(spec, tensors, x))
    ad.backward(out, tape)
    analytic = flat_grad(spec, tensors)
    numeric = ad.finite_difference_gradient(
        lambda v: float(objective(ad.Tensor(forward(spec, v, x))).data), theta
    )
    err = np.max(np.abs(analytic - numeric) / np.maximum(np.abs(analytic), 1e-6))
    print(f"{name:>14}: {spec.n_params} parameters, max relative error {err:.2e}")
