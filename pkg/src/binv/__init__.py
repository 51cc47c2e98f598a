"""Desk-scale Bayesian inversion toolkit.

Conditional-WGAN posterior sampling with a paired critic, direct neural
estimation of posterior mean and pointwise variance, handcrafted Gibbs
priors, a 2-D parallel-beam CT simulator, and an analytic Gaussian-linear
posterior oracle used to validate everything end to end.
"""

__version__ = "0.1.0"

# Images travel through run directories and the HTTP API in scaled model
# units where a value of 1.0 corresponds to 1000 HU (so 0 <-> 0 HU and
# -1 <-> -1000 HU).  Analysis thresholds and display windows are quoted in
# HU and converted at the boundary with this constant.
HU_PER_UNIT = 1000.0
