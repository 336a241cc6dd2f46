"""Tolerance constants used by the estimators and the acceptance checks.

The analysed bounds are asymptotic (O(.) with unstated constants), so these
numbers are harness choices.  Changing them here changes every report and
every pass/fail verdict.
"""

from fractions import Fraction

#: Monte Carlo checks allow this many standard errors of slack.
SIGMA = 3

#: Median stopping time must not exceed this multiple of the analytic scale.
STOPPING_FACTOR = 3

#: Finite-memory median stopping time over the paired unlimited-memory median.
BASELINE_FACTOR = 2

#: Median stopping time must lie within this factor of n/C (both directions).
CUT_FACTOR = 4

#: Largest total-variation distance accepted between an exact and an
#: empirical distribution.
TV_TOLERANCE = Fraction(1, 100)

#: Random directions tracked on top of the k unit vectors.
EXTRA_TRACKED_DIRECTIONS = 64

#: Default round budget is this many times (n + k).
BUDGET_FACTOR = 50
