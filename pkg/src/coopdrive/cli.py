"""Command-line entry point wiring all pipelines.

Subcommands: corpus, tpm build, solve, sim, eval, serve. Stochastic commands
require an explicit --seed (no wall-clock seeding). Exit codes: 0 success,
2 usage, 3 validation/configuration, 4 runtime failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
import time
from dataclasses import replace
from pathlib import Path

from . import __version__
from .config import ConfigBundle, ConfigError, load_config
from .costs import lcv_preset, lkv_preset
from .grid import GridError, Role, condition_axes, grid_preset
from .sdp import Policy, SolverError, make_cost_fn, policy_iteration
from .sim import (AgentConfig, ConfigurationError, GtController, IdmController, SdpController,
                  monte_carlo, run_episode, scripted)
from .synth import CorpusParams, generate_corpus
from .tpm import IngestionError, Tpm, build_tpm, extract_interaction_scenarios, hash_records, \
    read_trajectory_csv, smooth, write_trajectory_csv

EXIT_VALIDATION = 3
EXIT_RUNTIME = 4


def _file_sha(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_manifest(out_path: Path, command: str, args: dict, inputs: dict, seed=None):
    manifest = {
        "command": command,
        "args": {k: str(v) for k, v in args.items() if v is not None},
        "input_hashes": inputs,
        "seed": seed,
        "tool_version": __version__,
        "timestamp": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
    }
    path = out_path / "manifest.json" if out_path.is_dir() else \
        out_path.with_name(out_path.name + ".manifest.json")
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def cmd_corpus(args) -> int:
    params = CorpusParams(n_encounters=args.encounters)
    records = generate_corpus(params, seed=args.seed)
    write_trajectory_csv(records, args.out)
    print(f"wrote {len(records)} records ({args.encounters} encounters + mirrors) to {args.out}")
    _write_manifest(Path(args.out), "corpus", vars(args), {}, seed=args.seed)
    return 0


def cmd_tpm_build(args) -> int:
    cfgb = load_config(args.config)
    records = read_trajectory_csv(args.input)
    scenarios = extract_interaction_scenarios(records, cfgb.extraction)
    if not scenarios:
        print("error: no interaction scenarios found in the input", file=sys.stderr)
        return EXIT_VALIDATION
    grid = grid_preset(args.preset) if args.preset else cfgb.grid
    role = Role(args.role)
    tpm = build_tpm(scenarios, role, condition_axes(grid), cfgb.actions,
                    provenance=hash_records(records))
    tpm = smooth(tpm, cfgb.prior_strength)
    tpm.save(args.out)
    print(f"{len(scenarios)} scenarios, {sum(len(s.samples) for s in scenarios)} samples")
    print(f"cell coverage: {tpm.coverage():.1%} of {tpm.shape} conditioning cells")
    print(f"wrote {args.out}")
    _write_manifest(Path(args.out), "tpm build", vars(args),
                    {"input": _file_sha(args.input)})
    return 0


def cmd_solve(args) -> int:
    cfgb = load_config(args.config)
    grid = grid_preset(args.preset) if args.preset else cfgb.grid
    role = Role(args.role)
    tpm = Tpm.load(args.tpm)
    if args.weights in ("neutral", "aggressive", "conservative"):
        weights = lkv_preset(args.weights) if role is Role.LKV else lcv_preset(args.weights)
        preset_name = args.weights
    else:
        wb = load_config(args.weights)
        weights = wb.lkv_weights if role is Role.LKV else wb.lcv_weights
        preset_name = str(args.weights)
    solver = cfgb.solver
    if args.eval_tol:
        solver = replace(solver, eval_tol=args.eval_tol)
    t0 = time.time()
    policy = policy_iteration(
        grid, cfgb.actions, tpm, make_cost_fn(role, weights), solver, role,
        meta={"weights_preset": preset_name}, verbose=args.verbose,
    )
    wall = time.time() - t0
    policy.save(args.out)
    m = policy.meta
    print(f"{m['iterations']} policy iterations, {m['eval_sweeps']} evaluation sweeps, "
          f"Bellman residual {m['bellman_residual']:.2e}, {wall:.1f}s")
    print(f"wrote {args.out}")
    _write_manifest(Path(args.out), "solve", vars(args), {"tpm": _file_sha(args.tpm)})
    return 0


def _agent(spec: str, role: Role, cfgb: ConfigBundle) -> AgentConfig:
    kind, _, arg = spec.partition(":")
    if kind == "sdp":
        if not arg:
            raise ConfigurationError("sdp agent needs a policy file: sdp:PATH")
        ctrl = SdpController(Policy.load(arg))
    elif kind == "idm":
        ctrl = IdmController(cfgb.idm)
    elif kind == "gt":
        ctrl = GtController(cfgb.gt)
    elif kind == "scripted":
        ctrl = scripted(arg or "zero")
    else:
        raise ConfigurationError(
            f"unknown controller kind {kind!r} (use sdp:FILE, idm, gt, scripted:NAME)")
    return AgentConfig(role=role, controller=ctrl)


def cmd_sim(args) -> int:
    cfgb = load_config(args.config)
    lkv = _agent(args.lkv, Role.LKV, cfgb)
    lcv = _agent(args.lcv, Role.LCV, cfgb)
    scenario = cfgb.scenario(noise=args.harsh, seed=args.seed)
    trace = run_episode(lkv, lcv, scenario)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    trace_path = out / "trace.csv"
    trace.to_csv(trace_path)
    print(f"episode: collision={trace.collided} "
          f"final x_rel={trace.lcv[-1, 0] - trace.lkv[-1, 0]:.2f} m, wrote {trace_path}")
    if args.plot_data:
        plot_path = out / "plot_data.csv"
        with open(plot_path, "w", encoding="utf-8") as fh:
            fh.write("t,lkv_vx,lcv_vx,x_rel,y_rel\n")
            for i in range(len(trace.t)):
                fh.write(f"{trace.t[i]:.2f},{trace.lkv[i, 2]:.6f},{trace.lcv[i, 2]:.6f},"
                         f"{trace.lcv[i, 0] - trace.lkv[i, 0]:.6f},"
                         f"{trace.lcv[i, 1] - trace.lkv[i, 1]:.6f}\n")
        print(f"wrote {plot_path}")
    inputs = {}
    for spec in (args.lkv, args.lcv):
        kind, _, arg = spec.partition(":")
        if kind == "sdp":
            inputs[arg] = _file_sha(arg)
    _write_manifest(out, "sim", vars(args), inputs, seed=args.seed)
    return 0


def cmd_eval(args) -> int:
    cfgb = load_config(args.config)
    pairs = [p.strip() for p in args.pairs.split(",") if p.strip()]
    results = {}
    for pair in pairs:
        try:
            lkv_kind, lcv_kind = pair.split(":")
        except ValueError:
            raise ConfigurationError(f"pair {pair!r} must look like LKV:LCV, e.g. sdp:gt")
        lkv_spec = f"sdp:{args.lkv_policy}" if lkv_kind == "sdp" else lkv_kind
        lcv_spec = f"sdp:{args.lcv_policy}" if lcv_kind == "sdp" else lcv_kind
        if lkv_kind == "sdp" and not args.lkv_policy:
            raise ConfigurationError("--lkv-policy is required for sdp LKV pairings")
        if lcv_kind == "sdp" and not args.lcv_policy:
            raise ConfigurationError("--lcv-policy is required for sdp LCV pairings")
        lkv = _agent(lkv_spec, Role.LKV, cfgb)
        lcv = _agent(lcv_spec, Role.LCV, cfgb)
        scenario = cfgb.scenario(noise=args.harsh, seed=args.seed)
        report = monte_carlo((lkv, lcv), args.n, scenario, args.seed, workers=args.workers)
        results[pair] = report.to_dict()
        print(f"{pair}: collision_rate={report.collision_rate:.3f} "
              f"mean_distance={report.mean_distance:.2f} m "
              f"jerk lkv [{report.jerk_min_lkv:.1f}, {report.jerk_max_lkv:.1f}] "
              f"lcv [{report.jerk_min_lcv:.1f}, {report.jerk_max_lcv:.1f}] m/s^3")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    metrics_path = out / "metrics.json"
    payload = {"pairs": results, "n": args.n, "seed": args.seed, "harsh": bool(args.harsh)}
    metrics_path.write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n")
    print(f"wrote {metrics_path}")
    inputs = {p: _file_sha(p) for p in (args.lkv_policy, args.lcv_policy) if p}
    _write_manifest(out, "eval", vars(args), inputs, seed=args.seed)
    return 0


def cmd_serve(args) -> int:
    from .duet_server import DuetServer, ServerConfig

    cfgb = load_config(args.config)
    policy = Policy.load(args.policy)
    server = ServerConfig(
        port=args.port,
        policy=policy,
        human_role=Role(args.human_role),
        scenario=cfgb.scenario(seed=args.seed),
        log_dir=args.log_dir,
        web_root=args.web_root,
    )
    print(f"duet server on port {args.port}: human drives the {args.human_role}, "
          f"policy drives the {policy.role.value}")
    DuetServer(server).run_forever()
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="coopdrive",
                                description="cooperative lane-change decision making toolkit")
    p.add_argument("--version", action="version", version=f"coopdrive {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    c = sub.add_parser("corpus", help="generate the synthetic interaction corpus CSV")
    c.add_argument("--out", required=True)
    c.add_argument("--encounters", type=int, default=150)
    c.add_argument("--seed", type=int, required=True)
    c.set_defaults(fn=cmd_corpus)

    t = sub.add_parser("tpm", help="behavior-model commands")
    tsub = t.add_subparsers(dest="tpm_command", required=True)
    tb = tsub.add_parser("build", help="extract scenarios and estimate the model")
    tb.add_argument("--input", required=True, help="trajectory CSV")
    tb.add_argument("--role", required=True, choices=["LKV", "LCV"])
    tb.add_argument("--out", required=True)
    tb.add_argument("--preset", choices=["desk", "mid", "full"])
    tb.add_argument("--config")
    tb.set_defaults(fn=cmd_tpm_build)

    s = sub.add_parser("solve", help="policy iteration for one role")
    s.add_argument("--role", required=True, choices=["LKV", "LCV"])
    s.add_argument("--tpm", required=True)
    s.add_argument("--weights", default="neutral",
                   help="preset name (neutral|aggressive|conservative) or a config file")
    s.add_argument("--out", required=True)
    s.add_argument("--preset", choices=["desk", "mid", "full"])
    s.add_argument("--config")
    s.add_argument("--eval-tol", type=float)
    s.add_argument("--verbose", action="store_true")
    s.set_defaults(fn=cmd_solve)

    si = sub.add_parser("sim", help="run one closed-loop episode")
    si.add_argument("--lkv", required=True, help="sdp:FILE | idm | scripted:NAME")
    si.add_argument("--lcv", required=True, help="sdp:FILE | gt | scripted:NAME")
    si.add_argument("--out", required=True)
    si.add_argument("--seed", type=int, required=True)
    si.add_argument("--config")
    si.add_argument("--harsh", action="store_true")
    si.add_argument("--plot-data", action="store_true")
    si.set_defaults(fn=cmd_sim)

    e = sub.add_parser("eval", help="Monte-Carlo evaluation of controller pairings")
    e.add_argument("--pairs", required=True, help="comma list of LKV:LCV, e.g. sdp:sdp,idm:gt")
    e.add_argument("--n", type=int, default=1000)
    e.add_argument("--seed", type=int, required=True)
    e.add_argument("--out", required=True)
    e.add_argument("--lkv-policy")
    e.add_argument("--lcv-policy")
    e.add_argument("--config")
    e.add_argument("--harsh", action="store_true")
    e.add_argument("--workers", type=int, default=1)
    e.set_defaults(fn=cmd_eval)

    sv = sub.add_parser("serve", help="real-time duet session server")
    sv.add_argument("--port", type=int, default=8707)
    sv.add_argument("--policy", required=True)
    sv.add_argument("--human-role", required=True, choices=["LKV", "LCV"])
    sv.add_argument("--scenario", dest="config")
    sv.add_argument("--log-dir")
    sv.add_argument("--web-root")
    sv.add_argument("--seed", type=int, default=0)
    sv.set_defaults(fn=cmd_serve)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (ConfigError, ConfigurationError, GridError, IngestionError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_VALIDATION
    except (SolverError, OSError) as e:
        print(f"runtime error: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
