"""Reference opponents: IDM car following and a Stackelberg lane-change controller.

The IDM drives the lane keeper with the standard desired-gap law. The
game-theoretic (GT) agent drives the lane changer: it enumerates candidate
longitudinal accelerations as the Stackelberg leader, assumes the keeper
best-responds from the same candidate set, scores outcomes with a payoff
built from time-headway and spacing terms wrapped by an acceleration-change
penalty, and commits to the lane change once the predicted merge gap clears
its threshold with positive payoff. Lateral motion tracks the target lane
with a PI controller plus lateral-rate feedback.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass


@dataclass(frozen=True)
class IdmParams:
    a_max: float = 3.0  # m/s^2, matches the policy action envelope
    v0: float = 11.11  # m/s target speed (overridden per episode)
    delta: float = 4.0  # acceleration exponent
    s0: float = 2.0  # m minimum jam distance
    T: float = 0.7  # s desired time headway
    b: float = 2.0  # m/s^2 comfortable deceleration
    b_hard: float = 6.0  # m/s^2 emergency clamp

    def __post_init__(self):
        for name in ("a_max", "v0", "delta", "s0", "T", "b", "b_hard"):
            if getattr(self, name) <= 0:
                raise ValueError(f"IDM parameter {name} must be positive")


def idm_accel(vx: float, gap: float, dv: float, p: IdmParams) -> float:
    """IDM acceleration for bumper gap `gap` and closing speed `dv` (= own - lead).

    gap <= 0 returns the emergency floor -b_hard (caller should flag the
    episode). Output is clamped to [-b_hard, a_max].
    """
    if gap <= 0.0:
        return -p.b_hard
    s_star = p.s0 + vx * p.T + vx * dv / (2.0 * math.sqrt(p.a_max * p.b))
    s_star = max(s_star, p.s0)
    a = p.a_max * (1.0 - (vx / p.v0) ** p.delta - (s_star / gap) ** 2)
    return min(max(a, -p.b_hard), p.a_max)


def idm_free_accel(vx: float, p: IdmParams) -> float:
    """Free-road IDM acceleration (no lead vehicle)."""
    a = p.a_max * (1.0 - (vx / p.v0) ** p.delta)
    return min(max(a, -p.b_hard), p.a_max)


@dataclass(frozen=True)
class GtParams:
    q: float = 0.8  # aggressiveness in [0, 1]
    beta_mu: float = 0.5
    beta_sigma: float = 0.15
    thw_min: float = 0.6  # s
    gap_min: float = 2.0  # m, required predicted forward margin at the merge point
    gap_commit_frac: float = 0.3  # of gap_min already open now (stabilizer)
    dive_guard: float = -8.0  # m, required arrival margin if the keeper does NOT yield
    gap_yield: float = 8.0  # m, backward margin that triggers a merge-behind commit
    warmup: float = 1.5  # s before the first commit is allowed
    c_safety: float = 1.0
    c_space: float = 0.25
    c_smooth: float = 0.1  # acceleration-change penalty rate
    t_pred: float = 2.0  # s constant-acceleration prediction horizon (~ the merge point)
    candidate_ax: tuple[float, ...] = (-3.0, -1.0, 0.0, 1.0, 3.0)
    pi_kp: float = 4.0
    pi_ki: float = 0.2
    pi_kd_rate: float = 3.6
    ay_max: float = 3.0
    integ_limit: float = 1.0  # anti-windup clamp on the error integral

    def __post_init__(self):
        if not (0.0 <= self.q <= 1.0):
            raise ValueError(f"q must be in [0, 1], got {self.q}")
        if not self.candidate_ax:
            raise ValueError("candidate_ax must be non-empty")
        if self.beta_sigma <= 0:
            raise ValueError("beta_sigma must be positive")


def beta_weight(q: float, p: GtParams) -> float:
    """Normal-CDF weighting of space vs safety payoff; increasing in q."""
    z = (q - p.beta_mu) / p.beta_sigma
    return 0.5 * (1.0 + math.erf(z / math.sqrt(2.0)))


@dataclass(frozen=True)
class GtContext:
    """Planar two-vehicle observation for the GT decision (leader = changer)."""

    x_rel: float  # leader minus follower, m
    v_leader: float
    v_follower: float
    length: float = 4.8  # vehicle length for bumper gaps


def _predict(ctx: GtContext, a_leader: float, a_follower: float, t: float):
    """Constant-acceleration prediction; speeds floored at 0."""
    vl = max(ctx.v_leader + a_leader * t, 0.0)
    vf = max(ctx.v_follower + a_follower * t, 0.0)
    # average-speed integration consistent with the velocity floor
    xl = (ctx.v_leader + vl) * 0.5 * t
    xf = (ctx.v_follower + vf) * 0.5 * t
    x_rel = ctx.x_rel + xl - xf
    return x_rel, vl, vf


def gt_payoff(a_x: float, ctx: GtContext, prev_a: float, p: GtParams,
              a_follower: float = 0.0) -> float:
    """Leader payoff of a candidate acceleration under a fixed follower reply.

    Safety grows with the predicted time headway of whoever is behind; space
    grows with the predicted FORWARD margin of the leader (overtaking beats
    yielding when there is room to merge ahead).
    """
    x_rel, vl, vf = _predict(ctx, a_x, a_follower, p.t_pred)
    gap = abs(x_rel) - ctx.length
    rear_speed = vf if x_rel >= 0 else vl
    thw = gap / max(rear_speed, 0.1)
    u_safety = math.tanh(p.c_safety * (thw - p.thw_min))
    u_space = math.tanh(p.c_space * (x_rel - ctx.length))
    f_w = math.exp(-p.c_smooth * abs(a_x - prev_a))
    b = beta_weight(p.q, p)
    return f_w * ((1.0 - b) * u_safety + b * u_space + 1.0) - 1.0


def gt_decide(ctx: GtContext, prev_a: float, p: GtParams,
              follower_prev_a: float = 0.0) -> tuple[float, bool]:
    """Stackelberg step: leader candidate vs follower best response.

    The follower plays the mirrored payoff with a lane keeper's aggressiveness
    (q = 0): it values headway and smoothness but has no merge-space goal, so
    its predicted best response to a cut-in is to brake. Ties prefer the
    smaller |a_x|. Returns (a_x, commit_lane_change).
    """
    mirrored = GtContext(x_rel=-ctx.x_rel, v_leader=ctx.v_follower,
                         v_follower=ctx.v_leader, length=ctx.length)
    keeper = dataclasses.replace(p, q=0.0)
    best_a, best_u = None, -math.inf
    order = sorted(p.candidate_ax, key=lambda a: (abs(a), a))
    for a_l in order:
        # follower best response to a_l
        best_f, best_fu = None, -math.inf
        for a_f in order:
            u_f = gt_payoff(a_f, mirrored, follower_prev_a, keeper, a_follower=a_l)
            if u_f > best_fu:
                best_fu, best_f = u_f, a_f
        u_l = gt_payoff(a_l, ctx, prev_a, p, a_follower=best_f)
        if u_l > best_u:
            best_u, best_a, best_reply = u_l, a_l, best_f
    # commit on the forward margin forecast AT the merge point UNDER the
    # follower's modeled best response -- i.e. assuming the keeper yields as
    # the game predicts. A fraction of the gap must already be physically
    # open. Against a keeper that does not actually yield, these commits are
    # exactly the over-optimistic cut-ins the game is known for.
    x_pred, _, _ = _predict(ctx, best_a, best_reply, p.t_pred)
    x_nocoop, _, _ = _predict(ctx, best_a, 0.0, p.t_pred)
    commit_ahead = ((x_pred - ctx.length) >= p.gap_min
                    and (x_nocoop - ctx.length) >= p.dive_guard
                    and (ctx.x_rel - ctx.length) >= p.gap_commit_frac * p.gap_min
                    and best_u > 0.0)
    commit_behind = (-ctx.x_rel - ctx.length) >= p.gap_yield
    return best_a, (commit_ahead or commit_behind)


def lateral_pi(y_err: float, vy: float, integ: float, p: GtParams, dt: float) -> tuple[float, float]:
    """PI lateral-acceleration command with rate feedback and anti-windup.

    y_err is target minus current lateral position. Returns (a_y, new integral
    state); the caller owns the integral.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    integ = integ + y_err * dt
    integ = min(max(integ, -p.integ_limit), p.integ_limit)
    a_y = p.pi_kp * y_err + p.pi_ki * integ - p.pi_kd_rate * vy
    return min(max(a_y, -p.ay_max), p.ay_max), integ
