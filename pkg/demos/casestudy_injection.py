# Inject mismatches into a linked file where atypical x values are less likely to be
# mismatched, then compare least squares with the adjusted fits as the mismatch share grows.
#
# Run: python demos/casestudy_injection.py

import numpy as np

from linkadjust import EmConfig, LinkedDataset, fit_extended, fit_naive, fit_plain
from linkadjust.simulate import casestudy_intercept_for_rate, income_like_data, inject_casestudy_mismatch

rng = np.random.default_rng(7)
x, y = income_like_data(1000, rng)
X = np.column_stack([np.ones(x.size), x])
clean = np.linalg.lstsq(X, y, rcond=None)[0]
print(f"clean-file slope: {clean[1]:.4f}")

settings = [(2.0, 3.0)]
for rate, slope in ((0.15, 3.0), (0.30, 0.1), (0.50, -0.4)):
    settings.append((casestudy_intercept_for_rate(x, slope, rate), slope))

print(f"{'gamma':>18}{'share':>8}{'naive':>10}{'plain':>10}{'extended':>10}")
for gamma in settings:
    y_linked, m, dist2 = inject_casestudy_mismatch(x, y, gamma, rng)
    data = LinkedDataset(y_linked, X, np.column_stack([np.ones(x.size), dist2]),
                         x_names=["intercept", "income"], z_names=["intercept", "dist2"])
    slopes = [
        fit_naive(data).theta.beta[1],
        fit_plain(data, EmConfig(), inference=False).theta.beta[1],
        fit_extended(data, EmConfig(), inference=False).theta.beta[1],
    ]
    g = f"({gamma[0]:.2f}, {gamma[1]:.1f})"
    print(f"{g:>18}{m.mean():>8.3f}" + "".join(f"{s:>10.4f}" for s in slopes))
