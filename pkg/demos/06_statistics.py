"""
Comparing groups, curves and raters
===================================
"""

import numpy as np

from aarchive.stats import RocData, auc_confidence_interval, delong_test, icc, ks_compare, occc, \
    ttest_with_auto_checks

rng = np.random.default_rng(11)

# the test is picked from normality and variance checks
for label, a, b in [
    ("normal, equal spread", rng.normal(0, 1, 60), rng.normal(0.5, 1, 60)),
    ("normal, unequal spread", rng.normal(0, 1, 200), rng.normal(0.5, 4, 200)),
    ("skewed", rng.lognormal(0, 1, 60), rng.lognormal(0.3, 1, 60)),
    ("small groups", rng.normal(0, 1, 12), rng.normal(1, 1, 12)),
]:
    rep = ttest_with_auto_checks(a, b, include_f=True)
    print(f"{label:24} {rep.chosen_mean_test:16} p={rep.p:.4f}  variance: {rep.chosen_variance_test}")

# two scores on the same cases
truth = np.r_[np.ones(50), np.zeros(50)].astype(int)
strong = rng.normal(truth * 1.5, 1)
weak = rng.normal(truth * 0.5, 1)
r1, r2 = RocData(strong, truth), RocData(weak, truth)
res = delong_test(r1, r2)
print(f"AUC {res['auc1']:.3f} vs {res['auc2']:.3f}, z={res['z']:.2f}, p={res['p']:.4f}")
print("95% CI of the first:", tuple(round(v, 3) for v in auc_confidence_interval(r1)))
print("KS between score distributions:", ks_compare(strong, weak))

# agreement of three readers
x = rng.normal(size=40)
readers = np.column_stack([x, x + rng.normal(0, 0.3, 40), 1.1 * x + 0.2])
print(f"OCCC {occc(readers):.3f}, ICC(2,1) {icc(readers):.3f}, ICC(3,k) {icc(readers, 'ICC(3,k)'):.3f}")
