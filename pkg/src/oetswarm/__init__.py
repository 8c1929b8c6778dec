"""Non-contact micromanipulation toolkit: pusher-pair physics, tracking
control, multi-agent path planning, and the simulation harness around them."""

from oetswarm.model import (
    ModelParams,
    PairState,
    SimplifiedState,
    SingularSeparation,
    Trajectory,
)

__all__ = [
    "ModelParams",
    "PairState",
    "SimplifiedState",
    "SingularSeparation",
    "Trajectory",
]

__version__ = "0.1.0"
