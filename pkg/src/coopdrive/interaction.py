"""Relative-state kinematics, the MDP state transition, and the world integrator.

The planning model lives entirely in relative coordinates (LCV minus LKV).
The world integrator is its absolute-frame counterpart, ordered so that
relative_state(step_world(...)) equals step_mdp(relative_state(...)) exactly:
positions advance by the pre-update velocities, then velocities by the
accelerations (semi-implicit, position first).
"""

from __future__ import annotations

from dataclasses import dataclass

from .grid import Role


@dataclass(frozen=True)
class VehicleState:
    """Absolute planar kinematic state of one vehicle."""

    x: float
    y: float
    vx: float
    vy: float


@dataclass(frozen=True)
class RelativeState:
    """The five MDP state components (see grid.STATE_AXES for units)."""

    x_rel: float
    y_rel: float
    vx_rel: float
    vy_rel: float
    v_int: float

    def as_tuple(self) -> tuple[float, float, float, float, float]:
        return (self.x_rel, self.y_rel, self.vx_rel, self.vy_rel, self.v_int)


@dataclass(frozen=True)
class ActionPair:
    """Joint commanded accelerations; the LKV has no lateral action."""

    a_lkv_x: float
    a_lcv_x: float
    a_lcv_y: float


def relative_state(lkv: VehicleState, lcv: VehicleState, own_vx: float, v0: float) -> RelativeState:
    """Relative state observed by one agent; own_vx/v0 are the observer's."""
    return RelativeState(
        x_rel=lcv.x - lkv.x,
        y_rel=lcv.y - lkv.y,
        vx_rel=lcv.vx - lkv.vx,
        vy_rel=lcv.vy - lkv.vy,
        v_int=own_vx - v0,
    )


def step_mdp(
    s: RelativeState,
    own_action: tuple[float, float],
    opponent_action: tuple[float, float],
    role: Role,
    dt: float,
) -> RelativeState:
    """One planning step of the relative-state model.

    Actions are (ax, ay) pairs; the LKV side's ay is ignored (held at 0 by
    construction). `role` maps own/opponent onto the LKV/LCV slots.
    """
    if dt <= 0:
        raise ValueError(f"dt must be positive, got {dt}")
    if role is Role.LKV:
        a_lkv_x = own_action[0]
        a_lcv_x, a_lcv_y = opponent_action
    else:
        a_lcv_x, a_lcv_y = own_action
        a_lkv_x = opponent_action[0]
    return RelativeState(
        x_rel=s.x_rel + s.vx_rel * dt,
        y_rel=s.y_rel + s.vy_rel * dt,
        vx_rel=s.vx_rel + (a_lcv_x - a_lkv_x) * dt,
        vy_rel=s.vy_rel + a_lcv_y * dt,
        v_int=s.v_int + own_action[0] * dt,
    )


def step_world(
    lkv: VehicleState, lcv: VehicleState, actions: ActionPair, dt: float
) -> tuple[VehicleState, VehicleState]:
    """Advance both vehicles one integration step.

    Point-mass, position-first update. Longitudinal speeds are floored at 0
    (no reversing); the LKV never moves laterally.
    """
    if dt <= 0:
        raise ValueError(f"dt must be positive, got {dt}")
    new_lkv = VehicleState(
        x=lkv.x + lkv.vx * dt,
        y=lkv.y,
        vx=max(0.0, lkv.vx + actions.a_lkv_x * dt),
        vy=0.0,
    )
    new_lcv = VehicleState(
        x=lcv.x + lcv.vx * dt,
        y=lcv.y + lcv.vy * dt,
        vx=max(0.0, lcv.vx + actions.a_lcv_x * dt),
        vy=lcv.vy + actions.a_lcv_y * dt,
    )
    return new_lkv, new_lcv
