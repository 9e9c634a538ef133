"""The gradient contract: every differentiable op, and both composite training
losses, agree with central finite differences in 64-bit mode.

Run:  python demos/03_gradient_checks.py
"""

import numpy as np

from melclone import autodiff as ad
from melclone import diagnostics, nn
from melclone.autodiff import Tensor

# A finite-difference check by hand, for one convolution weight.
rng = np.random.default_rng(0)
x = Tensor(rng.normal(size=(1, 2, 6)))
w = Tensor(rng.normal(size=(3, 2, 3)) * 0.4, requires_grad=True)
proj = Tensor(rng.normal(size=(1, 3, 6)))


def loss():
    return ad.tsum(ad.mul(ad.conv1d(x, w), proj))


out = loss()
out.backward()
analytic = w.grad[1, 0, 2]

h = 1e-6
orig = w.data[1, 0, 2]
w.data[1, 0, 2] = orig + h
f_plus = loss().item()
w.data[1, 0, 2] = orig - h
f_minus = loss().item()
w.data[1, 0, 2] = orig
numeric = (f_plus - f_minus) / (2 * h)
print("one conv weight, by hand:")
print(f"  analytic {analytic:+.10f}")
print(f"  numeric  {numeric:+.10f}")
print(f"  |diff|   {abs(analytic - numeric):.2e}\n")

# The full suite used by `melclone grad-check` and the acceptance tests.
print("full suite (tiny config, hidden 16, 2 levels):")
suite = diagnostics.run_gradient_suite(hidden=16, levels=2, seed=0)
for name, err in suite.items():
    print(f"  {name:20s} max relative error {err:.3e}")
print(f"\nworst: {max(suite.values()):.3e}  (contract: < 1e-4)")

# finite_diff_check skips coordinates whose probe crosses a relu kink; the
# sign-pattern log is what detects the crossing.
block = nn.ResCnn1d(4, 3, np.random.default_rng(1))
x2 = Tensor(rng.normal(size=(1, 4, 8)), requires_grad=True)
proj2 = rng.normal(size=(1, 4, 8))
err = nn.finite_diff_check(
    lambda: ad.tsum(ad.mul(block(x2), Tensor(proj2))),
    {"x": x2, **block.named_parameters()})
print(f"residual block wrt input + all parameters: {err:.3e}")
