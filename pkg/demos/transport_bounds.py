"""The transport-distance toolbox on finite metric spaces: exact small
instances sandwiched between the cheap bounds.

Run:  python3 demos/transport_bounds.py
"""

import numpy as np

from pottsgas import transport as tr

rng = np.random.default_rng(7)

print("=== one random 5-point instance ===\n")
pts = rng.uniform(0, 1, size=(5, 3))
metric = np.sqrt(((pts[:, None, :] - pts[None, :, :]) ** 2).sum(axis=2))
w1 = rng.uniform(0.05, 1, 5)
w0 = rng.uniform(0.05, 1, 5)
mu1 = tr.FiniteMetricMeasure(w1 / w1.sum(), metric)
mu0 = tr.FiniteMetricMeasure(w0 / w0.sum(), metric)

plan, exact = tr.exact_transport(mu1, mu0)
overlap = tr.overlap_coupling(mu1, mu0)
cost = tr.coupling_cost(overlap, metric)
l1 = float(np.sum(mu1.sizes * np.abs(mu1.weights - mu0.weights)))
events = [rng.uniform(size=5) < 0.5 for _ in range(8)]
lower = tr.tv_lower_bound(mu1, mu0, events)
print(f"tv lower bound     {lower:.6f}")
print(f"exact distance     {exact:.6f}")
print(f"overlap coupling   {cost:.6f}")
print(f"anchored-size L1   {l1:.6f}")
print("ordering holds:", lower <= exact <= cost <= l1)

print("\n=== tilt-path bound for an exponential family ===\n")
h = rng.normal(size=5)
v = rng.normal(size=5)
nu = rng.uniform(0.5, 1.5, size=5)
out = tr.perturbation_bound(h, v, nu, mu1)
_, exact_t = tr.exact_transport(out["mu_1"], out["mu_0"])
print(f"exact distance   {exact_t:.6f}")
print(f"grid bound       {out['grid_bound']:.6f}")
print(f"crude bound      {out['crude_bound']:.6f}")

print("\n=== conditioning and the Gaussian mean-shift bound ===\n")
event = np.array([True, True, False, True, False])
coupling, bound = tr.conditioning_bound(mu1, event)
cond = mu1.like(np.where(event, mu1.weights, 0.0) / mu1.weights[event].sum())
_, exact_c = tr.exact_transport(mu1, cond)
print(f"conditioning: exact {exact_c:.6f} <= bound {bound:.6f}")

tv = tr.gaussian_tv_1d(1.0, 1.0)
gb = tr.gaussian_variation_bound(np.eye(1), np.zeros(1), np.ones(1))
print(f"1-d Gaussians one sigma apart: TV = {tv:.6f} <= mean-shift bound {gb:.3f}")
