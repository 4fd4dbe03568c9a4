"""A backward Gronwall-type bound for second-order inequalities.

If xi(t) = xi'(t) = 0 and |xi''| <= c1 + c2 |xi| + c3 |xi'| with c3
nonincreasing, then |xi(s)| <= (int_s^t sigma c1) exp(int_s^t sigma c2 + c3).
We integrate the extremal equation xi'' = +-(c1 + c2|xi| + c3|xi'|) for random
piecewise-linear coefficients and compare.  Run with ``python demos/gronwall_bound.py``.
"""

import numpy as np

from vlasov_darwin.diagnostics import GronwallProblem, random_gronwall_problems, verify_gronwall

rng = np.random.default_rng(3)

# %% one problem in detail
prob = GronwallProblem.random(rng, pattern="plus", pieces=4)
s = np.linspace(0.0, prob.t, 9)
xi = prob.solve(s)[0]
for si, x, b in zip(s, xi, prob.bound(s)):
    print(f"s = {si:5.2f}   |xi| = {abs(x):.4e}   bound = {b:.4e}")

# %% constant c1 only: the ratio is (t - s) / (t + s)
t = 2.0
flat = GronwallProblem(t, [0.0, t], [1.0, 1.0], [0.0, 0.0], [0.0, 0.0])
s = np.array([0.0, 0.5, 1.0, 1.5])
print("ratio:", np.round(np.abs(flat.solve(s)[0]) / flat.bound(s), 6), "closed form:", (t - s) / (t + s))

# %% many problems, three sign patterns of the forcing
rep = verify_gronwall(random_gronwall_problems(rng, 100))
print(f"{rep.trials} problems, {len(rep.violations)} violations, worst |xi| / bound = {rep.worst_ratio:.3f}")
