"""Vectorized one-step lookahead backups over the whole state grid.

Computes Q[a, s] = g(s, a) + gamma * E_w[ J(succ(s, a, w)) ] for every cell at
once, with the successor value multilinearly interpolated. The successor map
is separable per axis, so the 5-D interpolation factorizes into a chain of
1-D gathers:

  - vx_rel / vy_rel / v_int move by constant per-(action, disturbance) shifts;
  - x_rel / y_rel move by the source cell's own velocity, handled by gather
    tables conditioned on the velocity axes.

Ordering matters: a position gather must run while its conditioning velocity
axis is still source-indexed, i.e. after that axis' own shift. The v_int
shift and the stage cost depend only on the own action, so they are applied
after the opponent expectation. Opponent (ax, +ay)/(ax, -ay) pairs are
accumulated pairwise, which makes the expectation exactly invariant under
mirroring the lane side (exploited by the symmetry tests).
"""

from __future__ import annotations

import numpy as np

from .grid import ActionSet, Role, StateGrid


def _shift_table(n: int, delta_cells: float):
    """Gather indices and fraction for a constant 1-D shift, clamped at the ends."""
    f = int(np.floor(delta_cells))
    t = delta_cells - f
    idx = np.arange(n) + f
    lo = np.clip(idx, 0, n - 1)
    hi = np.clip(idx + 1, 0, n - 1)
    return lo, hi, t


class BackupEngine:
    """Whole-grid Bellman lookahead for one role, one behavior model, one cost table."""

    def __init__(
        self,
        grid: StateGrid,
        role: Role,
        actions: ActionSet,
        opponent_probs: np.ndarray,
        cost_table: np.ndarray,
        gamma: float,
        dt: float,
    ):
        self.grid = grid
        self.role = role
        self.actions = actions
        self.gamma = float(gamma)
        self.dt = float(dt)
        self.shape = grid.shape
        self.n = grid.size
        nx, ny, nk, nl, nm = self.shape

        self.own = actions.actions(role)
        self.opp = actions.actions(role.opponent())
        if opponent_probs.shape != (nx, ny, nk, len(self.opp)):
            raise ValueError(
                f"opponent probability table shape {opponent_probs.shape} does not match "
                f"grid projection {(nx, ny, nk)} x {len(self.opp)} opponent actions"
            )
        if cost_table.shape != (len(self.own), self.n):
            raise ValueError(
                f"cost table shape {cost_table.shape} must be ({len(self.own)}, {self.n})"
            )
        self.cost_table = np.ascontiguousarray(cost_table, dtype=np.float64)
        self._probs = np.ascontiguousarray(opponent_probs, dtype=np.float64)

        ax_x, ax_y, ax_vx, ax_vy, ax_vi = grid.axes
        self._x_op = self._position_op(ax_vx.values(), nx, ax_x.step, pos_axis=0, cond_axis=2)
        self._y_op = self._position_op(ax_vy.values(), ny, ax_y.step, pos_axis=1, cond_axis=3)

        dt_ = self.dt
        own_ax = sorted({a for a, _ in self.own})
        opp_ax = sorted({a for a, _ in self.opp})
        if role is Role.LKV:
            dvx_values = {(w - a) * dt_ for a in own_ax for w in opp_ax}
            dvy_values = {ay * dt_ for _, ay in self.opp}
        else:
            dvx_values = {(a - w) * dt_ for a in own_ax for w in opp_ax}
            dvy_values = {ay * dt_ for _, ay in self.own}
        self._dvx = {d: _shift_table(nk, d / ax_vx.step) for d in sorted(dvx_values)}
        self._dvy = {d: _shift_table(nl, d / ax_vy.step) for d in sorted(dvy_values)}
        self._dvi = {a * dt_: _shift_table(nm, a * dt_ / ax_vi.step) for a in own_ax}

        # opponent iteration order: ax-major; within ax, ay = 0 then (+|ay|, -|ay|) pairs
        self._opp_groups: list[tuple[float, list[int]]] = []
        ay_set = sorted({ay for _, ay in self.opp})
        ay_groups = ([(0.0,)] if 0.0 in ay_set else []) + [(v, -v) for v in ay_set if v > 0]
        index_of = {a: i for i, a in enumerate(self.opp)}
        for w_ax in sorted({a for a, _ in self.opp}):
            for grp in ay_groups:
                members = [index_of[(w_ax, ay)] for ay in grp if (w_ax, ay) in index_of]
                if members:
                    self._opp_groups.append((w_ax, members))

        self._pools: dict = {}

    def _position_op(self, cond_vals, n_pos, step, pos_axis, cond_axis):
        """Flat gather indices + broadcast weights for pos' = pos + vel * dt."""
        u = np.arange(n_pos)[:, None] + cond_vals[None, :] * (self.dt / step)
        f = np.floor(u)
        t = u - f
        lo = np.clip(f.astype(np.int64), 0, n_pos - 1)
        hi = np.clip(f.astype(np.int64) + 1, 0, n_pos - 1)

        strides = [1] * 5
        for a in range(3, -1, -1):
            strides[a] = strides[a + 1] * self.shape[a + 1]
        grids = []
        for a, s in enumerate(self.shape):
            shp = [1] * 5
            shp[a] = s
            grids.append(np.arange(s, dtype=np.int64).reshape(shp) * strides[a])
        bshape = [1] * 5
        bshape[pos_axis] = n_pos
        bshape[cond_axis] = len(cond_vals)

        def flatten(pos_idx):
            total = (pos_idx.reshape(bshape) * strides[pos_axis]).astype(np.int64)
            for a in range(5):
                if a != pos_axis:
                    total = total + grids[a]
            return np.ascontiguousarray(np.broadcast_to(total, self.shape)).ravel()

        return flatten(lo), flatten(hi), (1.0 - t).reshape(bshape), t.reshape(bshape)

    def _buf(self, key, dtype):
        pool = self._pools.setdefault(np.dtype(dtype).name, {})
        if key not in pool:
            pool[key] = np.empty(self.shape, dtype=dtype)
        return pool[key]

    def _const(self, key, array, dtype):
        pool = self._pools.setdefault("const-" + np.dtype(dtype).name, {})
        if key not in pool:
            pool[key] = np.ascontiguousarray(array, dtype=dtype)
        return pool[key]

    def _apply_position(self, op, src5, out5, tmp5, which):
        lo_f, hi_f, w_lo, w_hi = op
        dtype = out5.dtype
        np.take(src5.reshape(-1), lo_f, out=out5.reshape(-1))
        np.take(src5.reshape(-1), hi_f, out=tmp5.reshape(-1))
        out5 *= self._const(("wlo", which), w_lo, dtype)
        tmp5 *= self._const(("whi", which), w_hi, dtype)
        out5 += tmp5
        return out5

    def _apply_shift(self, table, src5, axis, out5, tmp5):
        lo, hi, t = table
        np.take(src5, lo, axis=axis, out=out5)
        if t != 0.0:
            np.take(src5, hi, axis=axis, out=tmp5)
            out5 *= 1.0 - t
            tmp5 *= t
            out5 += tmp5
        return out5

    def _prob_slab(self, w, dtype):
        return self._const(("p", w), self._probs[..., w, None, None], dtype)

    def q_table(self, value: np.ndarray, out: np.ndarray | None = None) -> np.ndarray:
        """Q array of shape (n_own_actions, n_cells) in value's dtype."""
        dtype = value.dtype
        shape = self.shape
        v5 = np.ascontiguousarray(value, dtype=dtype).reshape(shape)
        tmp = self._buf("tmp", dtype)
        xbuf = self._buf("xbuf", dtype)

        # lateral axes first (vy shift, then the y gather it conditions), once
        # per distinct shift; then the longitudinal pair per (dvx, dvy) combo
        yv_cache = {}
        for d, tbl in self._dvy.items():
            self._apply_shift(tbl, v5, 3, xbuf, tmp)
            yv_cache[d] = self._apply_position(self._y_op, xbuf, self._buf(("yv", d), dtype),
                                               tmp, "y")
        z_cache = {}
        for dvx, tbl in self._dvx.items():
            for dvy in self._dvy:
                z = self._buf(("z", dvx, dvy), dtype)
                self._apply_shift(tbl, yv_cache[dvy], 2, xbuf, tmp)
                self._apply_position(self._x_op, xbuf, z, tmp, "x")
                z_cache[dvx, dvy] = z

        nA = len(self.own)
        Q = out if out is not None else np.empty((nA, self.n), dtype=dtype)
        E = self._buf("E", dtype)
        pair = self._buf("pair", dtype)
        lkv_side = self.role is Role.LKV
        dt_ = self.dt
        for ia, (a_ax, a_ay) in enumerate(self.own):
            E[:] = 0.0
            if lkv_side:
                for w_ax, members in self._opp_groups:
                    dvx = (w_ax - a_ax) * dt_
                    if len(members) == 1:
                        w = members[0]
                        np.multiply(z_cache[dvx, self.opp[w][1] * dt_],
                                    self._prob_slab(w, dtype), out=tmp)
                        E += tmp
                    else:
                        w_pos, w_neg = members
                        np.multiply(z_cache[dvx, self.opp[w_pos][1] * dt_],
                                    self._prob_slab(w_pos, dtype), out=pair)
                        np.multiply(z_cache[dvx, self.opp[w_neg][1] * dt_],
                                    self._prob_slab(w_neg, dtype), out=tmp)
                        pair += tmp
                        E += pair
            else:
                for w, (w_ax, _) in enumerate(self.opp):
                    z = z_cache[(a_ax - w_ax) * dt_, a_ay * dt_]
                    np.multiply(z, self._prob_slab(w, dtype), out=tmp)
                    E += tmp
            self._apply_shift(self._dvi[a_ax * dt_], E, 4, xbuf, tmp)
            np.multiply(xbuf.reshape(-1), dtype.type(self.gamma), out=tmp.reshape(-1))
            np.add(self._const("g" + str(ia), self.cost_table[ia], dtype),
                   tmp.reshape(-1), out=Q[ia])
        return Q
