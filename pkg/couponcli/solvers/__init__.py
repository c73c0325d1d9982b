from .coupon_dependent import CouponDependentSolver
from .threshold import ThresholdSolver
from .value_iteration import MultiStateValueIteration, TwoStateValueIteration

SOLVERS = {
    "threshold": ThresholdSolver,
    "coupon_dependent": CouponDependentSolver,
    "value_iteration": TwoStateValueIteration,
    "simplex": MultiStateValueIteration,
}
