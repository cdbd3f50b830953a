"""Command line entry point: ``sagaocp <command> [options]``.

Commands
--------
solve-cg      CG reference solution of one (m, q) problem
run-sg        one SG-IS trajectory
run-saga      one SAGA-IS trajectory
study NAME    one of the studies in :data:`sagaocp.studies.STUDIES`
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

from .fem import write_field_csv
from .optim import (CgConfig, DivergenceError, SagaConfig, SgConfig, run_saga_is, run_sg_is,
                    save_saga_state, solve_cg)
from .studies import STUDIES, StudyConfig, reference_control, spawn_seeds, write_result


def _config(args) -> StudyConfig:
    cfg = StudyConfig.from_json(args.config) if args.config else StudyConfig()
    updates = {}
    if args.seed is not None:
        updates["seed"] = args.seed
    if args.out is not None:
        updates["out"] = args.out
    if args.threads is not None:
        updates["threads"] = args.threads
    for name in ("m", "q", "tau", "tau0", "k_max", "repetitions"):
        value = getattr(args, name, None)
        if value is not None:
            updates[name] = value
    return dataclasses.replace(cfg, **updates)


def _solve_cg(cfg: StudyConfig) -> int:
    inst = cfg.make_instance()
    ocp = reference_control(inst, cfg.m, cfg.q, cfg.cg_tol)[0]
    res = solve_cg(ocp, CgConfig(tol_grad=cfg.cg_tol))
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    res.trace.to_csv(out / f"solve-cg_m{cfg.m}_q{cfg.q}.csv")
    write_field_csv(out / f"control_m{cfg.m}_q{cfg.q}.csv", ocp.space, res.u)
    print(f"CG: {res.iterations} iterations, |grad J| = {res.grad_norm:.3e}, "
          f"J = {ocp.objective(res.u):.10e}")
    return 0


def _run_stochastic(cfg: StudyConfig, method: str, checkpoint: str | None) -> int:
    inst = cfg.make_instance()
    ocp, u_ref = reference_control(inst, cfg.m, cfg.q, cfg.cg_tol)
    seed = spawn_seeds(cfg.seed, 1)[0]
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    try:
        if method == "sg":
            trace = run_sg_is(ocp, SgConfig(tau0=cfg.tau0, k_max=cfg.k_max, seed=seed),
                              u_ref=u_ref)
        else:
            sc = SagaConfig(tau=cfg.tau, k_max=cfg.k_max, seed=seed,
                            init_policy=cfg.init_policy)
            trace = run_saga_is(ocp, sc, u_ref=u_ref)
            if checkpoint:
                save_saga_state(checkpoint, trace.state)
    except DivergenceError as exc:
        exc.trace.to_csv(out / f"run-{method}_m{cfg.m}_q{cfg.q}.csv")
        print(f"diverged: {exc}", file=sys.stderr)
        return 3
    trace.to_csv(out / f"run-{method}_m{cfg.m}_q{cfg.q}.csv")
    print(f"{method.upper()}: k = {trace.k[-1]}, error = {trace.err_l2[-1]:.4e}, "
          f"PDE solves = {trace.pde_solves[-1]}")
    return 0


def _study(cfg: StudyConfig, name: str) -> int:
    scfg = cfg.for_study(name)
    result = STUDIES[name](scfg)
    files = write_result(result, scfg)
    for path in files:
        print(path)
    if result.fit:
        print(json.dumps({k: v for k, v in result.fit.items() if not isinstance(v, dict)},
                         default=str))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sagaocp",
                                     description="SAGA, SG and CG for the random transport OCP")
    parser.add_argument("--config", help="JSON file with StudyConfig fields")
    parser.add_argument("--seed", type=int, help="master seed")
    parser.add_argument("--out", help="output directory")
    parser.add_argument("--threads", type=int, help="worker threads for independent runs")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("-m", type=int, help="mesh subdivisions per side")
        p.add_argument("-q", type=int, help="Gauss-Legendre points per parameter")
        return p

    common(sub.add_parser("solve-cg", help="CG reference solution"))
    p = common(sub.add_parser("run-sg", help="one SG-IS run"))
    p.add_argument("--tau0", type=float)
    p.add_argument("--k-max", dest="k_max", type=int)
    p = common(sub.add_parser("run-saga", help="one SAGA-IS run"))
    p.add_argument("--tau", type=float)
    p.add_argument("--k-max", dest="k_max", type=int)
    p.add_argument("--checkpoint", help="write the final SAGA state here")
    p = sub.add_parser("study", help="run a study and write CSV tables")
    p.add_argument("name", choices=sorted(STUDIES))
    p.add_argument("--repetitions", type=int)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    cfg = _config(args)
    if args.command == "solve-cg":
        return _solve_cg(cfg)
    if args.command == "run-sg":
        return _run_stochastic(cfg, "sg", None)
    if args.command == "run-saga":
        return _run_stochastic(cfg, "saga", args.checkpoint)
    return _study(cfg, args.name)


if __name__ == "__main__":
    sys.exit(main())
