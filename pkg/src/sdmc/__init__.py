"""Co-design and simulation toolkit for control loops over state-dependent Markov channels."""

from ._core import BACKEND
from .channel import (
    FadingModelError,
    FadingSpec,
    JointConditional,
    SdMcChannel,
    StationaryError,
    channel_from_fading,
    induced_rate_chain,
    stationary_distribution,
    validate_channel,
)
from .environment import (
    ControlPolicy,
    EnvMdp,
    InfeasibleError,
    induced_env_chain,
    solve_control_lp,
)
from .stability import (
    StabilityParams,
    lambda_bar_threshold_inf,
    lambda_bar_threshold_one,
    mati_bound,
    mati_via_phi_ode,
)

__version__ = "0.1.0"

__all__ = [
    "BACKEND", "ControlPolicy", "EnvMdp", "FadingModelError", "FadingSpec", "InfeasibleError",
    "JointConditional", "SdMcChannel", "StabilityParams", "StationaryError", "channel_from_fading",
    "induced_env_chain", "induced_rate_chain", "lambda_bar_threshold_inf", "lambda_bar_threshold_one",
    "mati_bound", "mati_via_phi_ode", "solve_control_lp", "stationary_distribution", "validate_channel",
]
