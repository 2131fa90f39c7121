"""Quantized state and action spaces shared by the behavior model, solver and policies.

The five state axes are, in fixed order:
    x_rel   relative longitudinal position  [m]      (LCV minus LKV)
    y_rel   relative lateral position       [m]
    vx_rel  relative longitudinal velocity  [m/s]
    vy_rel  relative lateral velocity       [m/s]
    v_int   own speed minus own target speed [m/s]

All grids are uniform. Quantization clamps out-of-range values to the boundary
so that table lookups are total functions.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

STATE_AXES = ("x_rel", "y_rel", "vx_rel", "vy_rel", "v_int")


class Role(str, enum.Enum):
    """Which side of the interaction an agent (or a model) belongs to."""

    LKV = "LKV"  # lane keeping: longitudinal action only
    LCV = "LCV"  # lane changing: longitudinal + lateral actions

    def opponent(self) -> "Role":
        return Role.LCV if self is Role.LKV else Role.LKV


class GridError(ValueError):
    """Invalid grid definition or out-of-range index."""


@dataclass(frozen=True)
class AxisSpec:
    """One uniformly quantized axis: points lo, lo+step, ..., hi."""

    name: str
    lo: float
    hi: float
    step: float

    def __post_init__(self):
        if not (self.hi > self.lo):
            raise GridError(f"axis {self.name}: hi ({self.hi}) must exceed lo ({self.lo})")
        if not (self.step > 0):
            raise GridError(f"axis {self.name}: step must be positive, got {self.step}")
        intervals = (self.hi - self.lo) / self.step
        if abs(intervals - round(intervals)) > 1e-9:
            raise GridError(
                f"axis {self.name}: span {self.hi - self.lo} is not a whole number "
                f"of steps of {self.step}"
            )

    @property
    def n(self) -> int:
        """Number of grid points (>= 2)."""
        return int(round((self.hi - self.lo) / self.step)) + 1

    def values(self) -> np.ndarray:
        return self.lo + self.step * np.arange(self.n)

    def value(self, i: int) -> float:
        return self.lo + self.step * i

    def clamp(self, v: float) -> float:
        return min(max(v, self.lo), self.hi)

    def quantize(self, v: float) -> int:
        """Index of the nearest grid point; exact midpoints round to the larger index.

        Total: values outside [lo, hi] clamp to the boundary point.
        """
        u = (v - self.lo) / self.step
        i = math.floor(u + 0.5)
        return min(max(i, 0), self.n - 1)

    def locate(self, v: float) -> tuple[int, float]:
        """Lower bracketing index i and fraction t in [0, 1] for linear interpolation.

        The clamped value equals (1 - t) * value(i) + t * value(i + 1); i <= n - 2.
        """
        u = (self.clamp(v) - self.lo) / self.step
        i = min(int(math.floor(u)), self.n - 2)
        i = max(i, 0)
        return i, u - i


@dataclass(frozen=True)
class StateGrid:
    """Five AxisSpecs in the fixed (x_rel, y_rel, vx_rel, vy_rel, v_int) order."""

    axes: tuple[AxisSpec, ...]

    def __post_init__(self):
        if len(self.axes) != 5:
            raise GridError(f"state grid needs exactly 5 axes, got {len(self.axes)}")
        names = tuple(a.name for a in self.axes)
        if names != STATE_AXES:
            raise GridError(f"axis order must be {STATE_AXES}, got {names}")
        object.__setattr__(self, "axes", tuple(self.axes))

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(a.n for a in self.axes)

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))

    def cell_index(self, coords) -> int:
        """Row-major flat index of a 5-tuple of per-axis indices."""
        flat = 0
        for axis, c in zip(self.axes, coords):
            c = int(c)
            if not (0 <= c < axis.n):
                raise GridError(
                    f"axis {axis.name}: index {c} out of range [0, {axis.n - 1}]"
                )
            flat = flat * axis.n + c
        return flat

    def cell_coords(self, flat: int) -> tuple[int, ...]:
        """Inverse of cell_index."""
        if not (0 <= flat < self.size):
            raise GridError(f"flat index {flat} out of range [0, {self.size - 1}]")
        out = []
        for axis in reversed(self.axes):
            out.append(flat % axis.n)
            flat //= axis.n
        return tuple(reversed(out))

    def cell_values(self, coords) -> tuple[float, ...]:
        """Physical state at a cell (per-axis grid values)."""
        return tuple(a.value(c) for a, c in zip(self.axes, coords))

    def quantize(self, point) -> tuple[int, ...]:
        """Nearest cell of an arbitrary 5-component state (clamped per axis)."""
        return tuple(a.quantize(v) for a, v in zip(self.axes, point))

    def interp_weights(self, point) -> list[tuple[int, float]]:
        """Multilinear interpolation support of a point: [(flat cell, weight), ...].

        At most 2^5 entries; zero-weight corners are dropped, so a point on a
        grid node returns a single entry of weight 1. Weights are >= 0 and sum
        to 1 (within roundoff). Out-of-range coordinates clamp per axis.
        """
        brackets = []
        for axis, v in zip(self.axes, point):
            i, t = axis.locate(v)
            if t == 0.0:
                brackets.append(((i, 1.0),))
            elif t == 1.0:
                brackets.append(((i + 1, 1.0),))
            else:
                brackets.append(((i, 1.0 - t), (i + 1, t)))
        out = [(0, 1.0)]
        for axis, options in zip(self.axes, brackets):
            nxt = []
            for base, w in out:
                for idx, wa in options:
                    nxt.append((base * axis.n + idx, w * wa))
            out = nxt
        return out


@dataclass(frozen=True)
class ActionSet:
    """Discrete acceleration menu; lateral list is empty for pure lane keeping.

    LKV actions are the ax values alone; LCV actions are the ax x ay product,
    enumerated row-major (ax outer, ay inner).
    """

    ax_values: tuple[float, ...]
    ay_values: tuple[float, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "ax_values", tuple(float(v) for v in self.ax_values))
        object.__setattr__(self, "ay_values", tuple(float(v) for v in self.ay_values))
        for label, vals in (("ax", self.ax_values), ("ay", self.ay_values)):
            if label == "ax" and not vals:
                raise GridError("ax_values must be non-empty")
            if any(b <= a for a, b in zip(vals, vals[1:])):
                raise GridError(f"{label} values must be strictly increasing: {vals}")
            if vals and 0.0 not in vals:
                raise GridError(f"{label} values must contain 0: {vals}")

    def count(self, role: Role) -> int:
        if role is Role.LKV or not self.ay_values:
            return len(self.ax_values)
        return len(self.ax_values) * len(self.ay_values)

    def actions(self, role: Role) -> list[tuple[float, float]]:
        """Enumerated (ax, ay) pairs for a role, in index order."""
        if role is Role.LKV or not self.ay_values:
            return [(ax, 0.0) for ax in self.ax_values]
        return [(ax, ay) for ax in self.ax_values for ay in self.ay_values]

    def action(self, role: Role, index: int) -> tuple[float, float]:
        if role is Role.LKV or not self.ay_values:
            return (self.ax_values[index], 0.0)
        n_ay = len(self.ay_values)
        return (self.ax_values[index // n_ay], self.ay_values[index % n_ay])

    def quantize_value(self, values: tuple[float, ...], a: float) -> int:
        """Nearest member of an increasing value list; midpoint ties go up."""
        best = 0
        for i in range(1, len(values)):
            mid = 0.5 * (values[i - 1] + values[i])
            if a >= mid:
                best = i
        return best

    def quantize(self, role: Role, ax: float, ay: float = 0.0) -> int:
        """Index of the nearest action for a role."""
        m = self.quantize_value(self.ax_values, ax)
        if role is Role.LKV or not self.ay_values:
            return m
        n = self.quantize_value(self.ay_values, ay)
        return m * len(self.ay_values) + n


def _axes(specs) -> tuple[AxisSpec, ...]:
    return tuple(AxisSpec(name, lo, hi, step) for name, (lo, hi, step) in zip(STATE_AXES, specs))


def desk_grid() -> StateGrid:
    """Tiny grid (1215 cells) for oracle cross-checks and fast tests."""
    return StateGrid(_axes([(-20, 20, 5), (-4, 4, 4), (-8, 8, 4), (-2, 2, 2), (-4, 4, 4)]))


def mid_grid() -> StateGrid:
    """Intermediate grid (68445 cells); the default for solving usable policies.

    The x_rel range is deliberately tight: the character cost is linear in
    x_rel, so relative drift stays rewarding until x_rel saturates at the grid
    edge; +/-20 m lets characterful agents finish drifting and return to their
    target speed within one episode. vx_rel and v_int share the same step so
    a common own-speed offset quantizes consistently on both axes.
    """
    return StateGrid(
        _axes([(-18, 18, 3), (-3.5, 3.5, 0.875), (-6, 6, 1), (-2, 2, 1), (-4, 4, 1)])
    )


def full_grid() -> StateGrid:
    """Full-resolution grid (966735 cells); slow to solve, finest lookup tables."""
    return StateGrid(
        _axes([(-30, 30, 2), (-3.5, 3.5, 0.5), (-10, 10, 1), (-2, 2, 0.5), (-5, 5, 1)])
    )


GRID_PRESETS = {"desk": desk_grid, "mid": mid_grid, "full": full_grid}


def grid_preset(name: str) -> StateGrid:
    try:
        return GRID_PRESETS[name]()
    except KeyError:
        raise GridError(f"unknown grid preset {name!r}; choose from {sorted(GRID_PRESETS)}")


def default_actions() -> ActionSet:
    """Comfortable-driving acceleration menu used throughout."""
    return ActionSet(ax_values=(-3.0, -1.0, 0.0, 1.0, 3.0), ay_values=(-1.0, -0.5, 0.0, 0.5, 1.0))


def condition_axes(grid: StateGrid) -> tuple[AxisSpec, AxisSpec, AxisSpec]:
    """The (x_rel, y_rel, vx_rel) projection that conditions the behavior model."""
    return grid.axes[0], grid.axes[1], grid.axes[2]
