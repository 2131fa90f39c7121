"""Deterministic synthetic interaction corpus: scripted yield/overtake encounters.

Each encounter puts a lane keeper (lane center y=0) next to a lane changer
(adjacent lane) and scripts an interactive episode in three phases: a
longitudinal adjustment (the changer opens a gap forward or backward while
the keeper responds in the opposite sense), a smooth lane change once the gap
suffices, and relaxation back to the target speeds. Encounters are spatially
separated so scenario extraction pairs the intended vehicles.

Every encounter is also emitted mirrored about the keeper's lane axis
(y -> -y), which makes estimated behavior models exactly symmetric in the
lane side.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .tpm import TrajectoryRecord

LANE_WIDTH = 3.5


@dataclass(frozen=True)
class CorpusParams:
    n_encounters: int = 150
    dt: float = 0.1  # s, sample period
    # long enough that the settled tail (both back at target speed) dominates
    # the large-gap cells; without it the estimated model keeps predicting
    # maneuvering there and solved policies trail the opponent forever
    duration: float = 24.0  # s per encounter
    speed_lo: float = 9.5  # m/s
    speed_hi: float = 12.5
    gap_span: float = 10.0  # m, initial |x_lcv - x_lkv| upper bound
    accel_jitter: float = 0.12  # m/s^2, longitudinal command noise
    lc_time: float = 3.5  # s, lane-change duration
    gap_required: float = 7.0  # m, gap opened before committing the lane change
    cooperation_prob: float = 1.0  # fraction of keepers that yield during the adjustment
    # share of "approach-yield" encounters: the keeper closes fast from behind
    # and brakes courteously as the changer merges ahead of it
    approach_share: float = 0.22
    mirror: bool = True
    encounter_spacing: float = 500.0  # m between encounter corridors


def _lane_id(y: float) -> int:
    return int(round(y / LANE_WIDTH)) + 1


def _scripted_encounter(rng: np.random.Generator, x_base: float, p: CorpusParams):
    """Simulate one keeper/changer pair; returns (t, lkv arrays, lcv arrays)."""
    steps = int(round(p.duration / p.dt)) + 1
    approach = rng.uniform() < p.approach_share
    v0_lkv = rng.uniform(p.speed_lo, p.speed_hi)
    if approach:
        # keeper closes fast from behind; most brake courteously and the
        # changer merges ahead, the rest just pass and the changer slots in
        # behind -- so closing-keeper cooperation is a bet, not a certainty
        v0_lcv = v0_lkv - rng.uniform(1.5, 3.5)
        gap0 = rng.uniform(7.0, 13.0)
        overtake = True
        approach_brakes = rng.uniform() < 0.85
    else:
        v0_lcv = v0_lkv + rng.uniform(-0.5, 0.5)
        gap0 = rng.uniform(-p.gap_span, p.gap_span)
        approach_brakes = False
    aggressiveness = rng.uniform(0.3, 1.0)
    a_mag = 0.8 + 1.6 * aggressiveness
    if not approach:
        if gap0 > 2.0:
            overtake = True
        elif gap0 < -2.0:
            overtake = False
        else:
            overtake = aggressiveness > 0.55
    # a minority of keepers never yield; the estimated model then prices
    # cooperation as a bet rather than a certainty
    cooperative = rng.uniform() < p.cooperation_prob
    jit = rng.normal(0.0, p.accel_jitter, size=(steps, 2))

    t = np.arange(steps) * p.dt
    lkv_x = np.empty(steps)
    lkv_vx = np.empty(steps)
    lcv_x = np.empty(steps)
    lcv_vx = np.empty(steps)
    lcv_y = np.empty(steps)
    lcv_vy = np.empty(steps)

    x_lkv, v_lkv = x_base, v0_lkv
    x_lcv, v_lcv = x_base + gap0, v0_lcv
    t_adjust = 2.0
    t_merge = None  # set once the gap suffices
    sign = 1.0 if overtake else -1.0

    for i in range(steps):
        ti = t[i]
        gap = x_lcv - x_lkv
        if t_merge is None and ti >= t_adjust:
            if approach:
                # braking keeper: merge ahead right away; passing keeper:
                # wait until it has gone by, then slot in behind
                if approach_brakes or gap <= -p.gap_required:
                    t_merge = ti
            elif sign * gap >= p.gap_required:
                t_merge = ti
        merging = t_merge is not None and ti < t_merge + p.lc_time
        merged = t_merge is not None and ti >= t_merge + p.lc_time

        if approach:
            a_lcv = _relax(v0_lcv, v_lcv)
            if approach_brakes and gap < 14.0:
                a_lkv = _relax(min(v_lcv, v0_lkv), v_lkv, gain=2.5, limit=3.0)
            else:
                a_lkv = _relax(v0_lkv, v_lkv)
        elif ti < t_adjust:
            a_lcv = 0.0
            a_lkv = 0.0
        elif t_merge is None:
            a_lcv = sign * a_mag
            a_lkv = -sign * 0.85 * a_mag if cooperative else _relax(v0_lkv, v_lkv)
        elif merging:
            # the keeper eases off as soon as the changer commits, so its
            # recovery happens near the merge point, not in the settled tail
            a_lcv = 0.35 * a_mag if overtake else _relax(v0_lcv, v_lcv)
            a_lkv = _relax(v0_lkv, v_lkv)
        else:
            a_lcv = _relax(v0_lcv, v_lcv)
            a_lkv = _relax(v0_lkv, v_lkv)

        if t_merge is not None and ti < t_merge + p.lc_time:
            tau = (ti - t_merge) / p.lc_time
            y = LANE_WIDTH * 0.5 * (1.0 + math.cos(math.pi * tau))
            vy = -LANE_WIDTH * math.pi / (2.0 * p.lc_time) * math.sin(math.pi * tau)
        elif merged:
            y, vy = 0.0, 0.0
        else:
            y, vy = LANE_WIDTH, 0.0

        lkv_x[i], lkv_vx[i] = x_lkv, v_lkv
        lcv_x[i], lcv_vx[i] = x_lcv, v_lcv
        lcv_y[i], lcv_vy[i] = y, vy

        a_lkv += jit[i, 0]
        a_lcv += jit[i, 1]
        x_lkv += v_lkv * p.dt
        v_lkv = max(0.0, v_lkv + a_lkv * p.dt)
        x_lcv += v_lcv * p.dt
        v_lcv = max(0.0, v_lcv + a_lcv * p.dt)

    return t, (lkv_x, lkv_vx), (lcv_x, lcv_vx, lcv_y, lcv_vy)


def _relax(v_target: float, v: float, gain: float = 1.0, limit: float = 1.5) -> float:
    return min(max(gain * (v_target - v), -limit), limit)


def generate_corpus(params: CorpusParams = CorpusParams(), seed: int = 0) -> list[TrajectoryRecord]:
    """Emit TrajectoryRecords for n_encounters scripted pairs (plus mirrors)."""
    records: list[TrajectoryRecord] = []
    corridor = 0
    for e in range(params.n_encounters):
        rng = np.random.Generator(np.random.Philox(key=[seed, e]))
        x_base = corridor * params.encounter_spacing
        corridor += 1
        t, (kx, kvx), (cx, cvx, cy, cvy) = _scripted_encounter(rng, x_base, params)
        sides = [1.0, -1.0] if params.mirror else [1.0]
        for side in sides:
            suffix = "" if side > 0 else "m"
            if side < 0:
                x_off = corridor * params.encounter_spacing - x_base
                corridor += 1
            else:
                x_off = 0.0
            kid, cid = f"E{e}K{suffix}", f"E{e}C{suffix}"
            for i in range(len(t)):
                records.append(
                    TrajectoryRecord(kid, float(t[i]), float(kx[i] + x_off), 0.0,
                                     float(kvx[i]), 0.0, _lane_id(0.0)))
                records.append(
                    TrajectoryRecord(cid, float(t[i]), float(cx[i] + x_off),
                                     float(side * cy[i]), float(cvx[i]),
                                     float(side * cvy[i]), _lane_id(side * cy[i])))
    records.sort(key=lambda r: (r.vehicle_id, r.t))
    return records
