"""Human-editable INI configuration shared by the CLI and the duet server.

Schema (all values SI unless noted; every key optional, defaults shown):

    [grid]
    preset = mid                ; desk | mid | full
    ; or explicit axes as "lo hi step":
    ; x_rel  = -15 15 3         ; m
    ; y_rel  = -3.5 3.5 0.875   ; m
    ; vx_rel = -8 8 1           ; m/s
    ; vy_rel = -2 2 1           ; m/s
    ; v_int  = -4 4 1           ; m/s

    [actions]
    ax = -3 -1.5 0 1.5 3        ; m/s^2, both roles
    ay = -1 -0.5 0 0.5 1        ; m/s^2, lane changer only

    [weights.lkv]
    preset = neutral            ; neutral | aggressive | conservative
    ; alpha_safe_x = 0.25  alpha_safe_y = 0.0625  alpha_conf = 0.1
    ; alpha_int = 0.05  alpha_agg = 0.0
    [weights.lcv]
    preset = neutral
    ; beta_safe_x = 0.25  beta_safe_y = 0.0625  beta_conf_x = 0.1
    ; beta_conf_y = 0.1  beta_int = 0.05  beta_lc = 0.02  beta_agg = 0.0

    [solver]
    gamma = 0.95
    eval_tol = 5e-4
    max_eval_sweeps = 20000
    max_policy_iters = 100
    dt = 0.5                    ; s, planning step

    [tpm]
    window = 4.0                ; s around the lane crossing
    min_speed_change = 1.0      ; m/s interaction filter
    prior_strength = 1.0        ; smoothing pseudo-counts

    [scenario]
    duration = 20               ; s
    dt_sim = 0.1
    dt_plan = 0.5
    lane_width = 3.5
    gap = 0                     ; m, initial x_lcv - x_lkv
    speed_kph = 40              ; initial speed of both vehicles [km/h]
    lane_side = 1               ; +1: LCV starts above the target lane

    [noise]
    sigma_pos = 0.5             ; m
    sigma_vel = 0.3             ; m/s
    initial_gap_shrink = 2.0    ; m

    [idm] / [gt]                ; baseline parameters, field names as in baselines
"""

from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass, field

from .baselines import GtParams, IdmParams
from .costs import LcvWeights, LkvWeights, lcv_preset, lkv_preset
from .grid import ActionSet, AxisSpec, GridError, STATE_AXES, StateGrid, default_actions, grid_preset
from .interaction import VehicleState
from .sdp import SolverConfig
from .sim import NoiseSpec, Scenario
from .tpm import ExtractionParams

KPH = 1.0 / 3.6


class ConfigError(ValueError):
    """Unusable configuration file contents."""


@dataclass
class ConfigBundle:
    grid: StateGrid
    actions: ActionSet
    lkv_weights: LkvWeights
    lcv_weights: LcvWeights
    solver: SolverConfig
    extraction: ExtractionParams
    prior_strength: float
    scenario_kw: dict
    noise: NoiseSpec
    idm: IdmParams
    gt: GtParams

    def scenario(self, noise: bool = False, seed: int = 0) -> Scenario:
        kw = dict(self.scenario_kw)
        gap = kw.pop("gap", 0.0)
        speed = kw.pop("speed_kph", 40.0) * KPH
        side = kw.pop("lane_side", 1.0)
        lane_width = kw.get("lane_width", 3.5)
        return Scenario(
            lkv_init=VehicleState(x=0.0, y=0.0, vx=speed, vy=0.0),
            lcv_init=VehicleState(x=gap, y=side * lane_width, vx=speed, vy=0.0),
            noise=self.noise if noise else None,
            seed=seed,
            **kw,
        )


def _floats(raw: str) -> list[float]:
    return [float(tok) for tok in raw.replace(",", " ").split()]


def _section(parser, name) -> dict:
    return dict(parser[name]) if parser.has_section(name) else {}


def _build(cls, sec: dict, context: str, base=None):
    """Instantiate a dataclass from string fields, starting from `base`."""
    fields = {f.name: f for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, raw in sec.items():
        if key == "preset":
            continue
        if key not in fields:
            raise ConfigError(f"[{context}] unknown key {key!r} (valid: {sorted(fields)})")
        typ = str(fields[key].type)
        try:
            if "str" in typ:
                kwargs[key] = raw.strip()
            elif "int" in typ and "float" not in typ:
                kwargs[key] = int(raw)
            elif "tuple" in typ:
                kwargs[key] = tuple(_floats(raw))
            else:
                kwargs[key] = float(raw)
        except ValueError as e:
            raise ConfigError(f"[{context}] {key}: {e}")
    if base is not None:
        return dataclasses.replace(base, **kwargs)
    return cls(**kwargs)


def load_config(path=None) -> ConfigBundle:
    """Parse an INI file into typed parameter objects (defaults when path is None)."""
    parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    if path is not None:
        read = parser.read(path)
        if not read:
            raise ConfigError(f"config file not found: {path}")

    gsec = _section(parser, "grid")
    explicit = [k for k in gsec if k in STATE_AXES]
    if explicit:
        if set(explicit) != set(STATE_AXES):
            raise ConfigError(f"[grid] give all five axes or none, missing "
                              f"{sorted(set(STATE_AXES) - set(explicit))}")
        axes = []
        for name in STATE_AXES:
            vals = _floats(gsec[name])
            if len(vals) != 3:
                raise ConfigError(f"[grid] {name} needs 'lo hi step', got {gsec[name]!r}")
            axes.append(AxisSpec(name, *vals))
        grid = StateGrid(tuple(axes))
    else:
        grid = grid_preset(gsec.get("preset", "mid"))

    asec = _section(parser, "actions")
    if asec:
        actions = ActionSet(
            ax_values=tuple(_floats(asec.get("ax", "-3 -1.5 0 1.5 3"))),
            ay_values=tuple(_floats(asec.get("ay", "-1 -0.5 0 0.5 1"))),
        )
    else:
        actions = default_actions()

    wk = _section(parser, "weights.lkv")
    lkv_w = _build(LkvWeights, wk, "weights.lkv", base=lkv_preset(wk.get("preset", "neutral")))
    wc = _section(parser, "weights.lcv")
    lcv_w = _build(LcvWeights, wc, "weights.lcv", base=lcv_preset(wc.get("preset", "neutral")))

    ssec = _section(parser, "solver")
    solver = _build(SolverConfig, ssec, "solver", base=SolverConfig(eval_tol=5e-4))

    tsec = _section(parser, "tpm")
    prior = float(tsec.pop("prior_strength", 1.0))
    extraction = _build(ExtractionParams, tsec, "tpm", base=ExtractionParams())

    scsec = _section(parser, "scenario")
    scenario_kw = {}
    for key, raw in scsec.items():
        if key not in ("duration", "dt_sim", "dt_plan", "lane_width", "gap",
                       "speed_kph", "lane_side", "veh_length", "veh_width"):
            raise ConfigError(f"[scenario] unknown key {key!r}")
        scenario_kw[key] = float(raw)

    nsec = _section(parser, "noise")
    noise = _build(NoiseSpec, nsec, "noise", base=NoiseSpec(sigma_pos=0.5, sigma_vel=0.3,
                                                            initial_gap_shrink=2.0))
    idm = _build(IdmParams, _section(parser, "idm"), "idm", base=IdmParams())
    gt = _build(GtParams, _section(parser, "gt"), "gt", base=GtParams())

    return ConfigBundle(
        grid=grid, actions=actions, lkv_weights=lkv_w, lcv_weights=lcv_w,
        solver=solver, extraction=extraction, prior_strength=prior,
        scenario_kw=scenario_kw, noise=noise, idm=idm, gt=gt,
    )
