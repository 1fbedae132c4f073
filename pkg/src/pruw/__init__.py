"""Private read-update-write over heterogeneous storage-constrained databases."""

from .errors import *  # noqa: F401,F403
from .ffield import DEFAULT_Q, FieldCtx, gen_constants, inv, solve_linear
from .planner import (
    StorageProfile,
    build_plan,
    decide_mixture,
    derive_profile,
    plan_to_json,
    profile_from_kp,
    total_cost,
)
from .scheme import ClassGeometry
from .sim import install_plan, privacy_probe, run_session

__version__ = "0.1.0"
