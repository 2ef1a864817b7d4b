"""
Checking the formulas
=====================

The posterior is compared with brute-force Bayes quadrature, the B-map
chain with a plain DDPM written separately, and the network gradients
with finite differences. `bmapdiff verify` runs the same checks.
"""

from bmapdiff.diffusion import posterior_bayes_oracle, posterior_from_coeffs
from bmapdiff.verify import check_posterior, check_reduction, posterior_as_printed

a_step, a_prev, x_t, x0 = 0.9, 0.8, 0.5, 0.2
print("closed form:", posterior_from_coeffs(x_t, x0, a_step, a_prev))
print("quadrature: ", posterior_bayes_oracle(x_t, x0, a_step, a_prev))

# with both factors under one square root the mean no longer matches Bayes
print("misplaced roots:", posterior_as_printed(x_t, x0, a_step, a_prev))

for check in check_posterior(seed=0) + check_posterior(seed=0, posterior=posterior_as_printed):
    print(check.line())
for check in check_reduction(seed=0):
    print(check.line())
