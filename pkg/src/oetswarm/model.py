"""Planar physics of light-driven pusher robots and the objects they herd.

A pusher is a microsphere trapped by a projected light spot; a nearby target
object is repelled by it through an inverse-quartic dipole interaction, so the
pair behaves like an underactuated, overdamped two-body system.  This module
holds the parameter set, the exact two-body dynamics, the reduced rigid-link
model used by the controller and planners, and a fixed-step RK4 integrator.

Units are micrometres and seconds throughout; force units are arbitrary but
consistent (only the ratios k_d/b and k_e/b enter the motion).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

TWO_PI = 2.0 * math.pi


class SingularSeparation(ValueError):
    """Robot and object centroids are close enough that the force law diverges."""


def wrap_angle(theta):
    """Wrap an angle (scalar or array) to (-pi, pi]."""
    w = np.mod(np.asarray(theta, dtype=float), TWO_PI)
    w = np.where(w > math.pi, w - TWO_PI, w)
    if np.ndim(theta) == 0:
        return float(w)
    return w


def vec2(x: float, y: float) -> np.ndarray:
    """Build a finite 2-vector; rejects NaN/Inf components."""
    v = np.array([x, y], dtype=float)
    if not np.all(np.isfinite(v)):
        raise ValueError(f"non-finite vector components: ({x}, {y})")
    return v


def saturate(u: np.ndarray, u_max: float) -> np.ndarray:
    """Clip a control to the per-axis box |u_i| <= u_max."""
    return np.clip(u, -u_max, u_max)


@dataclass(frozen=True)
class ModelParams:
    """Physical coefficients of one pusher/object pair.

    Attributes
    ----------
    k_d : isotropic trap stiffness (force per um of spot offset).
    k_e : dipole repulsion coefficient (force * um^4).
    b_o, b_r : translational damping of object and robot (force * s / um).
    d : virtual link length used by the reduced model (um).
    u_max : per-axis bound on the light-spot offset (um).
    r_e : effective repulsion radius; interaction is ignored beyond it (um).
    r_a : body radius of robot and object (um).
    """

    k_d: float = 1.0
    k_e: float = 759375.0  # calibrated: b_o * 15 um/s * (15 um)^4
    b_o: float = 1.0
    b_r: float = 1.0
    d: float = 15.0
    u_max: float = 40.0
    r_e: float = 30.0
    r_a: float = 5.0

    def __post_init__(self):
        for name in ("k_d", "k_e", "b_o", "b_r", "d", "u_max", "r_e", "r_a"):
            if not getattr(self, name) > 0.0:
                raise ValueError(f"{name} must be strictly positive")
        if not self.r_e > 2.0 * self.r_a:
            raise ValueError("r_e must exceed the contact distance 2*r_a")
        if not self.d >= 2.0 * self.r_a:
            raise ValueError("link length d must be at least 2*r_a")

    @property
    def eps_sing(self) -> float:
        """Separation below which the repulsion law is treated as singular."""
        return 0.1 * self.r_a

    @classmethod
    def calibrated(cls, push_speed: float = 15.0, **overrides) -> "ModelParams":
        """Parameters with k_e chosen so the equilibrium pushing separation
        at `push_speed` equals the link length d."""
        base = cls(**{k: v for k, v in overrides.items() if k != "k_e"})
        k_e = base.b_o * push_speed * base.d**4
        return cls(**{**overrides, "k_e": k_e})


@dataclass(frozen=True)
class PairState:
    """Positions of one object/robot pair in the full nonlinear model."""

    x_o: np.ndarray
    x_r: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "x_o", np.asarray(self.x_o, dtype=float))
        object.__setattr__(self, "x_r", np.asarray(self.x_r, dtype=float))
        if not (np.all(np.isfinite(self.x_o)) and np.all(np.isfinite(self.x_r))):
            raise ValueError("non-finite pair state")
        if self.separation == 0.0:
            raise SingularSeparation("coincident robot and object centroids")

    @property
    def separation(self) -> float:
        return float(np.linalg.norm(self.x_o - self.x_r))

    @property
    def link_angle(self) -> float:
        """Direction of the link from robot toward object, in (-pi, pi]."""
        r = self.x_o - self.x_r
        return wrap_angle(math.atan2(r[1], r[0]))

    def as_array(self) -> np.ndarray:
        return np.concatenate((self.x_o, self.x_r))

    @classmethod
    def from_array(cls, x: np.ndarray) -> "PairState":
        x = np.asarray(x, dtype=float)
        return cls(x[:2].copy(), x[2:4].copy())


@dataclass(frozen=True)
class SimplifiedState:
    """Object position plus link orientation of the reduced rigid-link model."""

    x_o: np.ndarray
    theta: float

    def __post_init__(self):
        object.__setattr__(self, "x_o", np.asarray(self.x_o, dtype=float))
        object.__setattr__(self, "theta", wrap_angle(float(self.theta)))
        if not np.all(np.isfinite(self.x_o)):
            raise ValueError("non-finite object position")

    def as_array(self) -> np.ndarray:
        return np.array([self.x_o[0], self.x_o[1], self.theta])

    @classmethod
    def from_array(cls, x: np.ndarray) -> "SimplifiedState":
        x = np.asarray(x, dtype=float)
        return cls(x[:2].copy(), float(x[2]))


@dataclass
class Trajectory:
    """Uniformly sampled states with the controls applied between them."""

    dt: float
    states: np.ndarray  # (T, n)
    controls: np.ndarray  # (T - 1, m)

    def __post_init__(self):
        self.states = np.asarray(self.states, dtype=float)
        self.controls = np.asarray(self.controls, dtype=float)
        if self.dt <= 0.0:
            raise ValueError("dt must be positive")
        if len(self.controls) != len(self.states) - 1:
            raise ValueError("controls must align with state transitions")

    def __len__(self) -> int:
        return len(self.states)


def dep_force(x_l: np.ndarray, x_r: np.ndarray, p: ModelParams) -> np.ndarray:
    """Trap force pulling the robot toward the light spot at x_l."""
    return p.k_d * (np.asarray(x_l, dtype=float) - np.asarray(x_r, dtype=float))


def _repulsion(r: np.ndarray, p: ModelParams) -> np.ndarray:
    dist = np.linalg.norm(r)
    if dist < p.eps_sing:
        raise SingularSeparation(
            f"separation {dist:.4g} um below singular guard {p.eps_sing:.4g} um"
        )
    return p.k_e * r / dist**5


def electrostatic_force(x_o: np.ndarray, x_r: np.ndarray, p: ModelParams) -> np.ndarray:
    """Dipole repulsion on the object: magnitude k_e / dist^4 along the
    centroid line, pointing away from the robot."""
    return _repulsion(np.asarray(x_o, dtype=float) - np.asarray(x_r, dtype=float), p)


def pair_dynamics(x: np.ndarray, u: np.ndarray, p: ModelParams) -> np.ndarray:
    """Time derivative of the stacked pair state [x_o, x_r].

    The object feels only the repulsion; the robot feels the reaction plus the
    trap force k_d * u.  There is no direct control path to the object.
    """
    f = _repulsion(x[:2] - x[2:4], p)
    return np.concatenate((f / p.b_o, (p.k_d * u - f) / p.b_r))


def full_dynamics(s: PairState, u: np.ndarray, p: ModelParams):
    """Velocities (dx_o, dx_r) of the full two-body model."""
    dx = pair_dynamics(s.as_array(), np.asarray(u, dtype=float), p)
    return dx[:2], dx[2:4]


def simplified_jacobian(theta: float, d: float) -> np.ndarray:
    """Maps link-frame velocities (v_n, v_t) to (dx_o, dtheta)."""
    if d <= 0.0:
        raise ValueError("link length must be positive")
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, 0.0], [s, 0.0], [0.0, -1.0 / d]])


def rotation_to_link_frame(theta: float) -> np.ndarray:
    """World-to-link rotation; first row is the link direction."""
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, s], [-s, c]])


def gain_matrix(p: ModelParams) -> np.ndarray:
    """Diagonal map from link-frame control to link-frame velocity."""
    return np.array([p.k_d / (p.b_o + p.b_r), p.k_d / p.b_r])


def simplified_dynamics(x_s: np.ndarray, u: np.ndarray, p: ModelParams) -> np.ndarray:
    """Time derivative of the reduced state [x_o, theta] under control u.

    Driftless: with u = 0 the reduced model does not move, unlike the full
    model whose residual repulsion self-propels the pair.
    """
    x_s = np.asarray(x_s, dtype=float)
    theta = x_s[2]
    v_link = gain_matrix(p) * (rotation_to_link_frame(theta) @ np.asarray(u, dtype=float))
    return simplified_jacobian(theta, p.d) @ v_link


def robot_position_from_simplified(x_s: np.ndarray, d: float) -> np.ndarray:
    """Robot centroid implied by the rigid link: d behind the object."""
    x_s = np.asarray(x_s, dtype=float)
    theta = x_s[2]
    return np.array([x_s[0] - d * math.cos(theta), x_s[1] - d * math.sin(theta)])


def simplified_from_pair(s: PairState) -> SimplifiedState:
    """Reduced state read off the pair geometry."""
    return SimplifiedState(s.x_o.copy(), s.link_angle)


def pair_from_simplified(x_s: np.ndarray, d: float) -> PairState:
    return PairState(np.asarray(x_s[:2], dtype=float).copy(),
                     robot_position_from_simplified(x_s, d))


def rk4_step(f, x: np.ndarray, u: np.ndarray, dt: float) -> np.ndarray:
    """One classical Runge-Kutta step with u held constant over [t, t+dt]."""
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    k1 = f(x, u)
    k2 = f(x + 0.5 * dt * k1, u)
    k3 = f(x + 0.5 * dt * k2, u)
    k4 = f(x + dt * k3, u)
    x_next = x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    if not np.all(np.isfinite(x_next)):
        raise ValueError("integration step produced a non-finite state")
    return x_next
