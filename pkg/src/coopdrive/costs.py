"""Stage costs for both roles: safety, comfort, intention, lane change, character.

The safety term is the reciprocal of a weighted distance and would diverge at
zero separation; the denominator is clamped at EPS_SAFE so stage costs stay
finite everywhere (the solver needs totality).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .interaction import RelativeState

# Equivalent-distance clamp on the safety denominator [m].
EPS_SAFE = 0.25

# Collision-footprint surcharge: a piecewise-linear tent over an enlarged
# vehicle footprint. The reciprocal safety term has an integrable singularity
# (crossing it gets cheaper the faster you close), so on a discounted grid it
# cannot by itself make pass-through worse than car-following; the tent makes
# the footprint genuinely impassable at any speed.
COLLISION_WEIGHT = 10.0
COLLISION_X = 5.5  # m half-extent of the tent (vehicle length 4.8 + margin)
COLLISION_Y = 2.7  # m half-extent (vehicle width 1.8 + margin)

# The character cost is linear in x_rel and would otherwise keep paying until
# x_rel clamps at the grid edge; saturating it inside the grid leaves a
# character-free settle zone where the speed intention can win.
CHARACTER_SAT = 12.0  # m


@dataclass(frozen=True)
class LkvWeights:
    """Lane-keeping cost weights; alpha_agg is signed (aggressive > 0).

    Safety weights below 1 widen the reciprocal-distance bubble: the default
    pair reads as a vehicle-shaped widened metric under
    which sitting beside the opponent stays expensive and lane crossings only
    pay off once the longitudinal gap clears the collision footprint.
    """

    alpha_safe_x: float = 0.1
    alpha_safe_y: float = 0.0625
    alpha_conf: float = 0.1
    alpha_int: float = 0.06
    alpha_agg: float = 0.0

    def __post_init__(self):
        _check_magnitudes(self, ("alpha_safe_x", "alpha_safe_y", "alpha_conf", "alpha_int"))


@dataclass(frozen=True)
class LcvWeights:
    """Lane-changing cost weights; beta_agg is signed (aggressive > 0)."""

    beta_safe_x: float = 0.1
    beta_safe_y: float = 0.0625
    beta_conf_x: float = 0.1
    beta_conf_y: float = 0.1
    beta_int: float = 0.06
    beta_lc: float = 0.04
    beta_agg: float = 0.0

    def __post_init__(self):
        _check_magnitudes(
            self,
            ("beta_safe_x", "beta_safe_y", "beta_conf_x", "beta_conf_y", "beta_int", "beta_lc"),
        )


def _check_magnitudes(w, names):
    for name in names:
        v = getattr(w, name)
        if not math.isfinite(v) or v < 0:
            raise ValueError(f"{name} must be finite and non-negative, got {v}")
    for name in ("alpha_agg", "beta_agg"):
        if hasattr(w, name) and not math.isfinite(getattr(w, name)):
            raise ValueError(f"{name} must be finite")


def safety_term(wx: float, wy: float, x_rel: float, y_rel: float) -> float:
    """1 / max(sqrt(wx*x^2 + wy*y^2), EPS_SAFE) plus the footprint surcharge."""
    recip = 1.0 / max(math.sqrt(wx * x_rel * x_rel + wy * y_rel * y_rel), EPS_SAFE)
    tent = 1.0 - max(abs(x_rel) / COLLISION_X, abs(y_rel) / COLLISION_Y)
    return recip + (COLLISION_WEIGHT * tent if tent > 0.0 else 0.0)


def character_term(agg: float, x_rel: float) -> float:
    """Signed preference on relative position, saturated inside the grid."""
    return agg * min(max(x_rel, -CHARACTER_SAT), CHARACTER_SAT)


def stage_cost_lkv(s: RelativeState, a_x: float, w: LkvWeights) -> float:
    """One-step cost incurred by the lane keeper for action a_x in state s."""
    return (
        safety_term(w.alpha_safe_x, w.alpha_safe_y, s.x_rel, s.y_rel)
        + w.alpha_conf * a_x * a_x
        + w.alpha_int * s.v_int * s.v_int
        + character_term(w.alpha_agg, s.x_rel)
    )


def stage_cost_lcv(s: RelativeState, a_x: float, a_y: float, w: LcvWeights) -> float:
    """One-step cost incurred by the lane changer for action (a_x, a_y) in state s."""
    return (
        safety_term(w.beta_safe_x, w.beta_safe_y, s.x_rel, s.y_rel)
        + w.beta_conf_x * a_x * a_x
        + w.beta_conf_y * a_y * a_y
        + w.beta_int * s.v_int * s.v_int
        + w.beta_lc * s.y_rel * s.y_rel
        + character_term(w.beta_agg, -s.x_rel)
    )


def stage_cost_lkv_array(states: np.ndarray, a_x: float, w: LkvWeights) -> np.ndarray:
    """Vectorized stage_cost_lkv over an (N, 5) state array."""
    x, y, vi = states[:, 0], states[:, 1], states[:, 4]
    dist = np.sqrt(w.alpha_safe_x * x * x + w.alpha_safe_y * y * y)
    tent = 1.0 - np.maximum(np.abs(x) / COLLISION_X, np.abs(y) / COLLISION_Y)
    return (
        1.0 / np.maximum(dist, EPS_SAFE)
        + COLLISION_WEIGHT * np.maximum(tent, 0.0)
        + w.alpha_conf * a_x * a_x
        + w.alpha_int * vi * vi
        + w.alpha_agg * np.clip(x, -CHARACTER_SAT, CHARACTER_SAT)
    )


def stage_cost_lcv_array(states: np.ndarray, a_x: float, a_y: float, w: LcvWeights) -> np.ndarray:
    """Vectorized stage_cost_lcv over an (N, 5) state array."""
    x, y, vi = states[:, 0], states[:, 1], states[:, 4]
    dist = np.sqrt(w.beta_safe_x * x * x + w.beta_safe_y * y * y)
    tent = 1.0 - np.maximum(np.abs(x) / COLLISION_X, np.abs(y) / COLLISION_Y)
    return (
        1.0 / np.maximum(dist, EPS_SAFE)
        + COLLISION_WEIGHT * np.maximum(tent, 0.0)
        + w.beta_conf_x * a_x * a_x
        + w.beta_conf_y * a_y * a_y
        + w.beta_int * vi * vi
        + w.beta_lc * y * y
        + w.beta_agg * np.clip(-x, -CHARACTER_SAT, CHARACTER_SAT)
    )


# Character presets: the signed weight on relative longitudinal position.
CHARACTER_PRESETS = {"conservative": -0.02, "neutral": 0.0, "aggressive": 0.02}


def lkv_preset(name: str = "neutral", **overrides) -> LkvWeights:
    try:
        agg = CHARACTER_PRESETS[name]
    except KeyError:
        raise ValueError(f"unknown weight preset {name!r}; choose from {sorted(CHARACTER_PRESETS)}")
    return replace(LkvWeights(alpha_agg=agg), **overrides)


def lcv_preset(name: str = "neutral", **overrides) -> LcvWeights:
    try:
        agg = CHARACTER_PRESETS[name]
    except KeyError:
        raise ValueError(f"unknown weight preset {name!r}; choose from {sorted(CHARACTER_PRESETS)}")
    return replace(LcvWeights(beta_agg=agg), **overrides)
