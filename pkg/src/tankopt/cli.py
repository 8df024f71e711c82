"""Command-line front end.

Subcommands cover the whole pipeline: simulate, census, build-grids, solve,
evaluate-baseline, evaluate-policy, policy-stream, and pipeline (census ->
grids -> solve -> campaigns with hash-checked skipping).  Flags override the
config file, which overrides built-in defaults.

Exit codes: 0 success, 2 config error, 3 artifact-chain mismatch, 4 model
contract violation.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import _kernels as _k
from . import artifacts, evaluate
from .config import load_settings, write_default_config
from .errors import ArtifactMismatchError, ConfigError, ModelContractError
from .policy import StoppingPolicy
from .quantizer import ChainQuantizer, sample_chain_bank
from .tank import TankModel
from .value import ValueSolver

_KIND_NAMES = {_k.K_INIT: "init", _k.K_RANDOM: "random",
               _k.K_CTRL_LOW: "control_low", _k.K_CTRL_HIGH: "control_high",
               _k.K_TOP_DRY: "top_dry", _k.K_TOP_OVER: "top_over",
               _k.K_TOP_HOT: "top_hot", _k.K_HORIZON: "horizon",
               _k.K_FROZEN: "frozen", _k.K_BUDGET: "budget"}


def _add_common(p):
    p.add_argument("--config", help="INI config file")
    p.add_argument("--seed", type=int, default=0, help="master seed")
    p.add_argument("--out-dir", default=".", help="artifact directory")
    p.add_argument("--threads", type=int, default=1,
                   help="worker threads for trajectory batches")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="tankopt",
        description="optimal maintenance dates for the heated hold-up tank")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="write embedded-chain trajectories as CSV")
    _add_common(p)
    p.add_argument("-n", "--runs", type=int, default=10)
    p.add_argument("--out", default=None, help="output CSV path")

    p = sub.add_parser("census", help="observed vs theoretical modes per jump index")
    _add_common(p)
    p.add_argument("--runs", type=int, default=None)

    p = sub.add_parser("build-grids", help="calibrate and train quantization grids")
    _add_common(p)
    p.add_argument("--points", type=int, default=None)

    p = sub.add_parser("solve", help="backward value recursion over saved grids")
    _add_common(p)
    p.add_argument("--points", type=int, default=None)
    p.add_argument("--grids", default=None, help="grids npz (default from out-dir)")

    p = sub.add_parser("evaluate-baseline", help="no-maintenance campaign")
    _add_common(p)
    p.add_argument("--runs", type=int, default=None)

    p = sub.add_parser("evaluate-policy", help="stopping-rule campaign")
    _add_common(p)
    p.add_argument("--points", type=int, default=None)
    p.add_argument("--runs", type=int, default=None)
    p.add_argument("--grids", default=None)
    p.add_argument("--value", default=None)

    p = sub.add_parser("policy-stream",
                       help="read jump events on stdin, emit decisions")
    _add_common(p)
    p.add_argument("--points", type=int, default=None)
    p.add_argument("--grids", default=None)
    p.add_argument("--value", default=None)

    p = sub.add_parser("pipeline",
                       help="census -> grids -> solve -> campaigns, idempotent")
    _add_common(p)
    p.add_argument("--points", type=int, default=None)
    p.add_argument("--runs", type=int, default=None)

    p = sub.add_parser("write-config", help="emit a config file with defaults")
    p.add_argument("path")
    return ap


def _setup(args):
    settings = load_settings(args.config)
    model = TankModel(settings.tank)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    return settings, model, out_dir


def _grids_path(out_dir, k) -> Path:
    return out_dir / f"grids-k{k}.npz"


def _value_path(out_dir, k) -> Path:
    return out_dir / f"value-k{k}.npz"


def _points(args, settings) -> int:
    return args.points if args.points is not None else settings.quantizer.n_points


def cmd_simulate(args) -> int:
    settings, model, out_dir = _setup(args)
    bank = sample_chain_bank(model, args.runs, seed=args.seed,
                             path=("simulate",), threads=args.threads)
    out = Path(args.out) if args.out else out_dir / "simulate.csv"
    with open(out, "w") as fh:
        fh.write("run,jump_index,t,mode,h,theta,s,kind,cause\n")
        for i in range(bank.n_traj):
            kinds = bank.kinds[i]
            cause = "budget"
            for n in range(bank.n_steps + 1):
                if kinds[n] in (_k.K_TOP_DRY, _k.K_TOP_OVER, _k.K_TOP_HOT,
                                _k.K_HORIZON):
                    cause = _KIND_NAMES[kinds[n]]
            for n in range(bank.n_steps + 1):
                if kinds[n] == _k.K_FROZEN:
                    break
                c = bank.coords[i, n]
                fh.write(f"{i},{n},{c[2]:.9g},{int(bank.modes[i, n])},"
                         f"{c[0]:.9g},{c[1]:.9g},{c[3]:.9g},"
                         f"{_KIND_NAMES[kinds[n]]},{cause}\n")
    print(f"wrote {out}")
    return 0


def _census_meta(settings, runs, seed) -> dict:
    return {"dynamics": settings.tank.dynamics_hash(), "runs": runs,
            "seed": seed}


def cmd_census(args) -> int:
    settings, model, out_dir = _setup(args)
    runs = args.runs if args.runs is not None else settings.evaluate.census_runs
    report = evaluate.mode_census(model, runs, seed=args.seed)
    out = out_dir / "census.csv"
    evaluate.write_census_csv(out, report, meta=_census_meta(settings, runs,
                                                             args.seed))
    print(f"wrote {out}")
    return 0


def _fit_quantizer(settings, model, args, k) -> ChainQuantizer:
    qs = settings.quantizer
    q = ChainQuantizer(n_points=k, calib_sims=qs.calib_sims,
                       train_sims=qs.train_sims, freeze_sims=qs.freeze_sims,
                       gamma0=qs.gamma0, decay=qs.decay,
                       threads=args.threads, random_state=args.seed)
    return q.fit(model)


def cmd_build_grids(args) -> int:
    settings, model, out_dir = _setup(args)
    k = _points(args, settings)
    q = _fit_quantizer(settings, model, args, k)
    path = _grids_path(out_dir, k)
    artifacts.save_grids(path, q, args.seed)
    artifacts.export_grids_csv(path.with_suffix(".csv"), q, model.params)
    print(f"wrote {path} (digest {q.digest_})")
    return 0


def cmd_solve(args) -> int:
    settings, model, out_dir = _setup(args)
    k = _points(args, settings)
    gpath = Path(args.grids) if args.grids else _grids_path(out_dir, k)
    if not gpath.is_file():
        raise ArtifactMismatchError(f"grids file not found: {gpath}")
    q = artifacts.load_grids(gpath, model.params)
    solver = ValueSolver(n_nodes=settings.value.n_nodes).fit(q, model)
    vpath = _value_path(out_dir, k)
    artifacts.save_value_table(vpath, solver.table_,
                               extra={"seed": args.seed, "n_points": k})
    artifacts.export_value_csv(vpath.with_suffix(".csv"), solver.table_)
    print(f"wrote {vpath} (v0 = {solver.v0_:.4f})")
    return 0


def cmd_evaluate_baseline(args) -> int:
    settings, model, out_dir = _setup(args)
    runs = args.runs if args.runs is not None else settings.evaluate.n_runs
    stats = evaluate.baseline_campaign(model, runs, seed=args.seed)
    evaluate.write_stats_csv(out_dir / "baseline-stats.csv", stats, "baseline",
                             meta={"seed": args.seed})
    evaluate.write_histograms_csv(out_dir / "baseline-hist.csv", stats)
    print(f"baseline mean reward {stats.mean_reward:.4f} "
          f"(null gain {stats.frac_null:.2%})")
    return 0


def _load_policy(args, settings, model, out_dir) -> StoppingPolicy:
    k = _points(args, settings)
    gpath = Path(args.grids) if args.grids else _grids_path(out_dir, k)
    vpath = Path(args.value) if args.value else _value_path(out_dir, k)
    for p in (gpath, vpath):
        if not p.is_file():
            raise ArtifactMismatchError(f"artifact not found: {p}")
    q = artifacts.load_grids(gpath, model.params)
    table = artifacts.load_value_table(vpath, q, model.params)
    return StoppingPolicy(model, q, table)


def cmd_evaluate_policy(args) -> int:
    settings, model, out_dir = _setup(args)
    runs = args.runs if args.runs is not None else settings.evaluate.n_runs
    pol = _load_policy(args, settings, model, out_dir)
    stats = evaluate.policy_campaign(model, pol.table, pol.quantizer, runs,
                                     seed=args.seed)
    evaluate.write_stats_csv(out_dir / "policy-stats.csv", stats, "policy",
                             meta={"seed": args.seed})
    evaluate.write_histograms_csv(out_dir / "policy-hist.csv", stats)
    print(f"policy mean reward {stats.mean_reward:.4f} "
          f"(top events {stats.frac_top_total:.2%})")
    return 0


def cmd_policy_stream(args) -> int:
    settings, model, out_dir = _setup(args)
    pol = _load_policy(args, settings, model, out_dir)
    for reply in pol.stream(sys.stdin):
        print(reply, flush=True)
    return 0


def cmd_pipeline(args) -> int:
    settings, model, out_dir = _setup(args)
    k = _points(args, settings)
    runs = args.runs if args.runs is not None else settings.evaluate.n_runs
    manifest = artifacts.RunManifest(
        seed=args.seed, config_path=args.config, command=" ".join(sys.argv),
        dynamics_hash=model.params.dynamics_hash(),
        reward_hash=model.params.reward_hash())
    mpath = out_dir / "manifest.json"

    def fail(stage, exc):
        manifest.record(stage, "failed", error=str(exc))
        for later in _STAGES[_STAGES.index(stage) + 1:]:
            manifest.record(later, "stale")
        manifest.save(mpath)

    _STAGES = ["census", "grids", "solve", "baseline", "policy"]

    # census
    census_path = out_dir / "census.csv"
    census_meta = _census_meta(settings, settings.evaluate.census_runs, args.seed)
    expected_first = "# " + ", ".join(f"{k2}={v}" for k2, v in census_meta.items())
    try:
        if (census_path.is_file()
                and census_path.read_text().splitlines()[0] == expected_first):
            manifest.record("census", "skipped", path=str(census_path))
        else:
            report = evaluate.mode_census(model, settings.evaluate.census_runs,
                                          seed=args.seed)
            evaluate.write_census_csv(census_path, report, meta=census_meta)
            manifest.record("census", "done", path=str(census_path))
    except Exception as exc:
        fail("census", exc)
        raise

    # grids (reward-independent: depends only on dynamics, budgets and seed)
    gpath = _grids_path(out_dir, k)
    qs = settings.quantizer
    want = {"dynamics_hash": model.params.dynamics_hash(), "n_points": k,
            "calib_sims": qs.calib_sims, "train_sims": qs.train_sims,
            "freeze_sims": qs.freeze_sims, "gamma0": qs.gamma0,
            "decay": qs.decay, "seed": args.seed}
    try:
        if gpath.is_file():
            meta = artifacts.grids_meta(gpath)
            hit = all(meta.get(key) == val for key, val in want.items())
        else:
            hit = False
        if hit:
            quantizer = artifacts.load_grids(gpath, model.params)
            manifest.record("grids", "skipped", path=str(gpath),
                            digest=quantizer.digest_)
        else:
            quantizer = _fit_quantizer(settings, model, args, k)
            artifacts.save_grids(gpath, quantizer, args.seed)
            artifacts.export_grids_csv(gpath.with_suffix(".csv"), quantizer,
                                       model.params)
            manifest.record("grids", "done", path=str(gpath),
                            digest=quantizer.digest_)
    except Exception as exc:
        fail("grids", exc)
        raise

    # solve (depends on grids digest + reward + time-grid resolution)
    vpath = _value_path(out_dir, k)
    try:
        hit = False
        if vpath.is_file():
            vmeta = artifacts.value_meta(vpath)
            hit = (vmeta.get("grids_digest") == quantizer.digest_
                   and vmeta.get("reward_hash") == model.params.reward_hash()
                   and vmeta.get("n_nodes") == settings.value.n_nodes)
        if hit:
            table = artifacts.load_value_table(vpath, quantizer, model.params)
            manifest.record("solve", "skipped", path=str(vpath), v0=table.v0)
        else:
            solver = ValueSolver(n_nodes=settings.value.n_nodes).fit(quantizer,
                                                                     model)
            table = solver.table_
            artifacts.save_value_table(vpath, table,
                                       extra={"seed": args.seed, "n_points": k})
            artifacts.export_value_csv(vpath.with_suffix(".csv"), table)
            manifest.record("solve", "done", path=str(vpath), v0=table.v0)
    except Exception as exc:
        fail("solve", exc)
        raise

    # campaigns
    try:
        bmeta_path = out_dir / "baseline-stats.meta.json"
        want_b = {"dynamics": model.params.dynamics_hash(),
                  "reward": model.params.reward_hash(),
                  "runs": runs, "seed": args.seed}
        if (bmeta_path.is_file()
                and json.loads(bmeta_path.read_text()) == want_b):
            manifest.record("baseline", "skipped")
            base_stats = None
        else:
            base_stats = evaluate.baseline_campaign(model, runs, seed=args.seed)
            evaluate.write_stats_csv(out_dir / "baseline-stats.csv", base_stats,
                                     "baseline", meta={"seed": args.seed})
            evaluate.write_histograms_csv(out_dir / "baseline-hist.csv",
                                          base_stats)
            bmeta_path.write_text(json.dumps(want_b))
            manifest.record("baseline", "done",
                            mean_reward=base_stats.mean_reward)
    except Exception as exc:
        fail("baseline", exc)
        raise

    try:
        pmeta_path = out_dir / "policy-stats.meta.json"
        want_p = {"value_digest": quantizer.digest_,
                  "reward": model.params.reward_hash(),
                  "runs": runs, "seed": args.seed,
                  "n_nodes": settings.value.n_nodes}
        if (pmeta_path.is_file()
                and json.loads(pmeta_path.read_text()) == want_p):
            manifest.record("policy", "skipped")
        else:
            pol_stats = evaluate.policy_campaign(model, table, quantizer, runs,
                                                 seed=args.seed)
            evaluate.write_stats_csv(out_dir / "policy-stats.csv", pol_stats,
                                     "policy", meta={"seed": args.seed})
            evaluate.write_histograms_csv(out_dir / "policy-hist.csv", pol_stats)
            pmeta_path.write_text(json.dumps(want_p))
            manifest.record("policy", "done",
                            mean_reward=pol_stats.mean_reward)
    except Exception as exc:
        fail("policy", exc)
        raise

    manifest.record("summary", "done", v0=table.v0)
    manifest.save(mpath)
    print(f"pipeline complete: v0 = {table.v0:.4f}; manifest at {mpath}")
    return 0


def cmd_write_config(args) -> int:
    write_default_config(args.path)
    print(f"wrote {args.path}")
    return 0


_COMMANDS = {
    "simulate": cmd_simulate,
    "census": cmd_census,
    "build-grids": cmd_build_grids,
    "solve": cmd_solve,
    "evaluate-baseline": cmd_evaluate_baseline,
    "evaluate-policy": cmd_evaluate_policy,
    "policy-stream": cmd_policy_stream,
    "pipeline": cmd_pipeline,
    "write-config": cmd_write_config,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except ArtifactMismatchError as exc:
        print(f"artifact mismatch: {exc}", file=sys.stderr)
        return 3
    except ModelContractError as exc:
        print(f"model contract violation: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
