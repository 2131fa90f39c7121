"""Markov-chain opponent behavior model estimated from trajectory data.

Pipeline: ingest per-vehicle trajectory records -> extract two-vehicle
lane-change interaction scenarios -> count opponent accelerations per
quantized (x_rel, y_rel, vx_rel) cell -> normalize and smooth.

The model for the LKV role distributes over the LCV's (ax, ay) action pairs;
the model for the LCV role distributes over the LKV's ax alone.
"""

from __future__ import annotations

import hashlib
import io
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .grid import ActionSet, AxisSpec, Role

CSV_COLUMNS = ("vehicle_id", "t", "x", "y", "vx", "vy", "lane_id")


class IngestionError(ValueError):
    """Malformed trajectory input; carries the offending line number."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(message if line is None else f"line {line}: {message}")


@dataclass(frozen=True)
class TrajectoryRecord:
    vehicle_id: str
    t: float
    x: float
    y: float
    vx: float
    vy: float
    lane_id: int


@dataclass(frozen=True)
class ScenarioSample:
    """One time step of an interaction: relative geometry plus both accelerations."""

    x_rel: float
    y_rel: float
    vx_rel: float
    a_lkv_x: float
    a_lcv_x: float
    a_lcv_y: float


@dataclass(frozen=True)
class InteractionScenario:
    lcv_id: str
    lkv_id: str
    t_start: float
    t_end: float
    samples: tuple[ScenarioSample, ...]


@dataclass(frozen=True)
class ExtractionParams:
    """Thresholds for the interaction filter around a lane-boundary crossing."""

    window: float = 4.0  # s, half-width around the crossing
    min_speed_change: float = 1.0  # m/s, either vehicle, within the window


def read_trajectory_csv(source, column_map: dict[str, str] | None = None) -> list[TrajectoryRecord]:
    """Parse `vehicle_id,t,x,y,vx,vy,lane_id` CSV (UTF-8, '.' decimal, SI units).

    `column_map` renames raw headers to the canonical ones, e.g.
    {"Vehicle_ID": "vehicle_id", "Global_Time": "t", ...} for NGSIM exports.
    """
    close = False
    if isinstance(source, (str, bytes)) or hasattr(source, "__fspath__"):
        fh = open(source, "r", encoding="utf-8")
        close = True
    else:
        fh = source
    try:
        header_line = fh.readline()
        if not header_line.strip():
            raise IngestionError("empty input, expected a header row", line=1)
        names = [c.strip() for c in header_line.strip().split(",")]
        if column_map:
            names = [column_map.get(c, c) for c in names]
        try:
            cols = {c: names.index(c) for c in CSV_COLUMNS}
        except ValueError as e:
            raise IngestionError(f"missing required column: {e}", line=1)
        records = []
        for lineno, line in enumerate(fh, start=2):
            if not line.strip():
                continue
            parts = line.rstrip("\n").split(",")
            if len(parts) < len(names):
                raise IngestionError(f"expected {len(names)} fields, got {len(parts)}", lineno)
            try:
                records.append(
                    TrajectoryRecord(
                        vehicle_id=parts[cols["vehicle_id"]].strip(),
                        t=float(parts[cols["t"]]),
                        x=float(parts[cols["x"]]),
                        y=float(parts[cols["y"]]),
                        vx=float(parts[cols["vx"]]),
                        vy=float(parts[cols["vy"]]),
                        lane_id=int(float(parts[cols["lane_id"]])),
                    )
                )
            except ValueError as e:
                raise IngestionError(f"unparseable field ({e})", lineno)
        return records
    finally:
        if close:
            fh.close()


def write_trajectory_csv(records, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(CSV_COLUMNS) + "\n")
        for r in records:
            fh.write(
                f"{r.vehicle_id},{r.t:.3f},{r.x:.6f},{r.y:.6f},{r.vx:.6f},{r.vy:.6f},{r.lane_id}\n"
            )


@dataclass
class _Track:
    """One vehicle's samples as arrays, validated monotone at a fixed period."""

    vehicle_id: str
    t: np.ndarray
    x: np.ndarray
    y: np.ndarray
    vx: np.ndarray
    vy: np.ndarray
    lane: np.ndarray
    period: float

    def index_at(self, t: float) -> int:
        i = int(round((t - self.t[0]) / self.period))
        return min(max(i, 0), len(self.t) - 1)

    def covers(self, t: float) -> bool:
        return self.t[0] - 1e-9 <= t <= self.t[-1] + 1e-9


def _build_tracks(records) -> dict[str, _Track]:
    by_vehicle: dict[str, list[tuple[int, TrajectoryRecord]]] = {}
    for lineno, r in enumerate(records, start=2):
        by_vehicle.setdefault(r.vehicle_id, []).append((lineno, r))
    tracks = {}
    for vid, rows in by_vehicle.items():
        ts = [r.t for _, r in rows]
        for k in range(1, len(ts)):
            if ts[k] <= ts[k - 1]:
                raise IngestionError(
                    f"vehicle {vid}: non-monotone time {ts[k]} after {ts[k - 1]}",
                    line=rows[k][0],
                )
        if len(ts) < 2:
            continue
        period = ts[1] - ts[0]
        for k in range(1, len(ts)):
            if abs((ts[k] - ts[k - 1]) - period) > 1e-6:
                raise IngestionError(
                    f"vehicle {vid}: sample period {ts[k] - ts[k - 1]:.6f} differs from {period:.6f}",
                    line=rows[k][0],
                )
        tracks[vid] = _Track(
            vehicle_id=vid,
            t=np.array(ts),
            x=np.array([r.x for _, r in rows]),
            y=np.array([r.y for _, r in rows]),
            vx=np.array([r.vx for _, r in rows]),
            vy=np.array([r.vy for _, r in rows]),
            lane=np.array([r.lane_id for _, r in rows]),
            period=period,
        )
    return tracks


def extract_interaction_scenarios(
    records, params: ExtractionParams = ExtractionParams()
) -> list[InteractionScenario]:
    """Find lane changes, pair each with the nearest target-lane keeper, filter.

    A scenario is kept iff either vehicle's longitudinal speed changes by at
    least `min_speed_change` within +/- `window` seconds of the lane-boundary
    crossing (the objective proxy for "clear indication of interaction"), the
    changer crosses exactly once inside the window, and the keeper holds its
    lane throughout.
    """
    tracks = _build_tracks(records)
    scenarios = []
    for vid in sorted(tracks):
        trk = tracks[vid]
        changes = np.nonzero(np.diff(trk.lane) != 0)[0] + 1  # index of first sample in new lane
        for c in changes:
            t_c = float(trk.t[c])
            target_lane = int(trk.lane[c])
            t_start = t_c - params.window
            t_end = t_c + params.window
            lo = trk.index_at(max(t_start, trk.t[0]))
            hi = trk.index_at(min(t_end, trk.t[-1]))
            # exactly one crossing inside the window
            if np.count_nonzero(np.diff(trk.lane[lo : hi + 1]) != 0) != 1:
                continue
            partner = _nearest_lane_keeper(tracks, vid, t_c, target_lane, t_start, t_end)
            if partner is None:
                continue
            samples = _collect_samples(lcv=trk, lkv=partner, t_start=t_start, t_end=t_end)
            if len(samples) < 3:
                continue
            if not _interactive(trk, partner, t_start, t_end, params.min_speed_change):
                continue
            scenarios.append(
                InteractionScenario(
                    lcv_id=vid,
                    lkv_id=partner.vehicle_id,
                    t_start=t_start,
                    t_end=t_end,
                    samples=tuple(samples),
                )
            )
    return scenarios


def _nearest_lane_keeper(tracks, lcv_id, t_c, target_lane, t_start, t_end):
    best = None
    best_gap = math.inf
    for vid in sorted(tracks):
        if vid == lcv_id:
            continue
        trk = tracks[vid]
        if not (trk.covers(t_c)):
            continue
        i = trk.index_at(t_c)
        if int(trk.lane[i]) != target_lane:
            continue
        lo = trk.index_at(max(t_start, trk.t[0]))
        hi = trk.index_at(min(t_end, trk.t[-1]))
        if np.any(trk.lane[lo : hi + 1] != target_lane):
            continue  # keeper must hold its lane throughout
        lcv = tracks[lcv_id]
        gap = abs(lcv.x[lcv.index_at(t_c)] - trk.x[i])
        if gap < best_gap:
            best_gap = gap
            best = trk
    return best


def _interactive(lcv: _Track, lkv: _Track, t_start, t_end, min_change) -> bool:
    for trk in (lcv, lkv):
        lo = trk.index_at(max(t_start, trk.t[0]))
        hi = trk.index_at(min(t_end, trk.t[-1]))
        seg = trk.vx[lo : hi + 1]
        if len(seg) and (seg.max() - seg.min()) >= min_change:
            return True
    return False


def _collect_samples(lcv: _Track, lkv: _Track, t_start, t_end) -> list[ScenarioSample]:
    """Per-step relative geometry plus central-difference acceleration labels.

    Window endpoints and track endpoints are dropped (no central difference
    there). Times are aligned on the LCV's clock; the LKV sample is the one
    nearest in time.
    """
    out = []
    lo = max(lcv.index_at(max(t_start, lcv.t[0])), 1)
    hi = min(lcv.index_at(min(t_end, lcv.t[-1])), len(lcv.t) - 2)
    for i in range(lo, hi + 1):
        t = float(lcv.t[i])
        if not lkv.covers(t):
            continue
        j = lkv.index_at(t)
        if j < 1 or j > len(lkv.t) - 2:
            continue
        a_lcv_x = (lcv.vx[i + 1] - lcv.vx[i - 1]) / (2 * lcv.period)
        a_lcv_y = (lcv.vy[i + 1] - lcv.vy[i - 1]) / (2 * lcv.period)
        a_lkv_x = (lkv.vx[j + 1] - lkv.vx[j - 1]) / (2 * lkv.period)
        out.append(
            ScenarioSample(
                x_rel=float(lcv.x[i] - lkv.x[j]),
                y_rel=float(lcv.y[i] - lkv.y[j]),
                vx_rel=float(lcv.vx[i] - lkv.vx[j]),
                a_lkv_x=float(a_lkv_x),
                a_lcv_x=float(a_lcv_x),
                a_lcv_y=float(a_lcv_y),
            )
        )
    return out


@dataclass(frozen=True)
class Tpm:
    """Conditional distribution of opponent acceleration given relative state.

    probs[i, j, k] is a probability vector over opponent action indices for
    the condition cell (x_rel_i, y_rel_j, vx_rel_k); counts holds the raw
    per-cell per-action sample counts it was estimated from.
    """

    role: Role
    condition_axes: tuple[AxisSpec, AxisSpec, AxisSpec]
    opponent_actions: ActionSet
    probs: np.ndarray  # (ni, nj, nk, n_opponent_actions) float64
    counts: np.ndarray  # same shape, int64
    provenance: str = ""

    @property
    def n_actions(self) -> int:
        return self.probs.shape[-1]

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.probs.shape[:3]

    def support(self) -> np.ndarray:
        """Total raw samples per condition cell."""
        return self.counts.sum(axis=-1)

    def coverage(self) -> float:
        """Fraction of condition cells with at least one raw sample."""
        return float((self.support() > 0).mean())

    def opponent_dist(self, i: int, j: int, k: int) -> np.ndarray:
        for axis, c in zip(self.condition_axes, (i, j, k)):
            if not (0 <= c < axis.n):
                raise IndexError(f"axis {axis.name}: cell index {c} out of range [0, {axis.n - 1}]")
        return self.probs[i, j, k]

    def save(self, path) -> None:
        """JSON header line + dense float64 probability table + int64 counts."""
        header = {
            "format": "coopdrive-tpm-v1",
            "role": self.role.value,
            "condition_axes": [
                {"name": a.name, "lo": a.lo, "hi": a.hi, "step": a.step}
                for a in self.condition_axes
            ],
            "opponent_actions": {
                "ax": list(self.opponent_actions.ax_values),
                "ay": list(self.opponent_actions.ay_values),
            },
            "shape": list(self.probs.shape),
            "provenance": self.provenance,
        }
        with open(path, "wb") as fh:
            fh.write(json.dumps(header, sort_keys=True).encode() + b"\n")
            fh.write(np.ascontiguousarray(self.probs, dtype="<f8").tobytes())
            fh.write(np.ascontiguousarray(self.counts, dtype="<i8").tobytes())

    @classmethod
    def load(cls, path) -> "Tpm":
        with open(path, "rb") as fh:
            header = json.loads(fh.readline().decode())
            if header.get("format") != "coopdrive-tpm-v1":
                raise ValueError(f"{path}: not a coopdrive TPM file")
            shape = tuple(header["shape"])
            n = int(np.prod(shape))
            probs = np.frombuffer(fh.read(8 * n), dtype="<f8").reshape(shape).copy()
            counts = np.frombuffer(fh.read(8 * n), dtype="<i8").reshape(shape).copy()
        axes = tuple(
            AxisSpec(a["name"], a["lo"], a["hi"], a["step"]) for a in header["condition_axes"]
        )
        acts = header["opponent_actions"]
        return cls(
            role=Role(header["role"]),
            condition_axes=axes,
            opponent_actions=ActionSet(tuple(acts["ax"]), tuple(acts["ay"])),
            probs=probs,
            counts=counts,
            provenance=header.get("provenance", ""),
        )


def hash_records(records) -> str:
    """Stable provenance hash of an ingested record list."""
    h = hashlib.sha256()
    for r in records:
        h.update(
            f"{r.vehicle_id},{r.t!r},{r.x!r},{r.y!r},{r.vx!r},{r.vy!r},{r.lane_id}".encode()
        )
    return h.hexdigest()


def build_tpm(
    scenarios,
    role: Role,
    condition_axes: tuple[AxisSpec, AxisSpec, AxisSpec],
    opponent_actions: ActionSet,
    provenance: str = "",
) -> Tpm:
    """Count opponent accelerations per condition cell and normalize.

    For role=LKV the opponent is the LCV and samples are (ax, ay) pairs;
    for role=LCV the opponent is the LKV and samples are ax alone. Cells with
    no samples get a zero vector (smooth() makes the table total).
    """
    if not scenarios:
        raise ValueError("need at least one interaction scenario")
    opp = role.opponent()
    n_act = opponent_actions.count(opp)
    ax3, ay3 = condition_axes[0], condition_axes[1]
    shape = tuple(a.n for a in condition_axes) + (n_act,)
    counts = np.zeros(shape, dtype=np.int64)
    for sc in scenarios:
        for s in sc.samples:
            i = condition_axes[0].quantize(s.x_rel)
            j = condition_axes[1].quantize(s.y_rel)
            k = condition_axes[2].quantize(s.vx_rel)
            if role is Role.LKV:
                m = opponent_actions.quantize(Role.LCV, s.a_lcv_x, s.a_lcv_y)
            else:
                m = opponent_actions.quantize(Role.LKV, s.a_lkv_x)
            counts[i, j, k, m] += 1
    totals = counts.sum(axis=-1, keepdims=True)
    with np.errstate(invalid="ignore"):
        probs = np.where(totals > 0, counts / np.maximum(totals, 1), 0.0)
    return Tpm(
        role=role,
        condition_axes=condition_axes,
        opponent_actions=opponent_actions,
        probs=probs,
        counts=counts,
        provenance=provenance,
    )


def action_prior(actions: ActionSet, opponent_role: Role) -> np.ndarray:
    """Triangular prior peaked at zero acceleration, weights 1/(1+|a|).

    For paired (ax, ay) opponents the weight is the product of the per-axis
    factors; the vector is normalized to sum to 1.
    """
    pairs = actions.actions(opponent_role)
    w = np.array([1.0 / ((1.0 + abs(ax)) * (1.0 + abs(ay))) for ax, ay in pairs])
    return w / w.sum()


def smooth(tpm: Tpm, prior_strength: float = 1.0) -> Tpm:
    """Blend counts with the zero-peaked prior: (counts + s*prior) / (total + s).

    Zero-support cells become exactly the prior; prior_strength 0 is the
    identity. Raw counts are preserved unchanged.
    """
    if prior_strength < 0:
        raise ValueError(f"prior_strength must be >= 0, got {prior_strength}")
    if prior_strength == 0:
        return tpm
    prior = action_prior(tpm.opponent_actions, tpm.role.opponent())
    totals = tpm.counts.sum(axis=-1, keepdims=True)
    probs = (tpm.counts + prior_strength * prior) / (totals + prior_strength)
    empty = (totals == 0)[..., 0]
    probs[empty] = prior
    return Tpm(
        role=tpm.role,
        condition_axes=tpm.condition_axes,
        opponent_actions=tpm.opponent_actions,
        probs=probs,
        counts=tpm.counts,
        provenance=tpm.provenance,
    )
