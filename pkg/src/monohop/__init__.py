"""Deterministic simulator and controllers for an underactuated monopedal
robot with two canted reaction wheels: point balancing, aerial reorientation,
rolling, jumping, landing, and self-righting."""

__version__ = "0.1.0"

from .params import (AerialGains, BalanceGains, ConfigError, RobotParams,
                     load_params, pole_placement, reference_params)
from .dynamics import (BodyState, Command, Contact, Event, EventKind,
                       TiltState, compute_H, detect_events, flight_dynamics,
                       rolling_dynamics, stance_dynamics, step,
                       total_angular_momentum)

__all__ = [
    "AerialGains", "BalanceGains", "BodyState", "Command", "ConfigError",
    "Contact", "Event", "EventKind", "RobotParams", "TiltState",
    "compute_H", "detect_events", "flight_dynamics", "load_params",
    "pole_placement", "reference_params", "rolling_dynamics",
    "stance_dynamics", "step", "total_angular_momentum",
]
