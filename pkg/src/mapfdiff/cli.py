"""Command-line entry points for the full pipeline.

Subcommands cover scenario generation, expert data synthesis, training,
sampling, batch evaluation, and plotting.  Exit codes: 0 success, 2 bad
arguments or malformed files, 3 infeasible instance, 4 non-convergence.
"""

import argparse
import json
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .core import (
    ConstraintSpec,
    ContractError,
    InfeasibleError,
    TrajectorySet,
    make_schedule,
)
from .expert import (
    DATASET_VERSION,
    DEFAULT_HORIZON,
    ExpertConfig,
    load_dataset,
    path_cost,
    solve_expert,
)
from .harness import ExperimentConfig, plot, run_experiment, write_csv
from .projection import OracleFailure
from .samplers import Method, SamplerConfig, sample
from .scenario import (
    FamilyKind,
    FormatError,
    GenerationError,
    ScenarioFamily,
    generate,
    load_scenario,
    load_trajectories,
    save_scenario,
    save_trajectories,
    scenario_to_json,
)
from .score_model import ScoreNetwork, TrainConfig, load_network, save_network, train

EXIT_OK = 0
EXIT_CONTRACT = 2
EXIT_INFEASIBLE = 3
EXIT_NONCONVERGED = 4

# Schedule defaults shared by `train`; `sample` and `eval` always reuse the
# schedule stored in the checkpoint they load.
DEFAULT_LEVELS = 50
DEFAULT_INNER_STEPS = 10
DEFAULT_BETA_MIN = 0.01
DEFAULT_BETA_MAX = 1.0
DEFAULT_GUIDANCE_WEIGHT = 50.0


def _family_kind(name: str) -> FamilyKind:
    try:
        return FamilyKind(name)
    except ValueError:
        raise ContractError(
            f"unknown family {name!r}; choose from "
            f"{[k.value for k in FamilyKind]}") from None


def _cmd_gen_scenarios(args) -> int:
    kind = _family_kind(args.family)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    params = {} if args.n_agents is None else {"n_agents": args.n_agents}
    for i in range(args.count):
        fam = ScenarioFamily(kind, seed=args.seed + i, params=dict(params))
        scen = generate(fam)
        save_scenario(scen, out / f"{kind.value}-{i:04d}.scenario.json")
    print(f"wrote {args.count} {kind.value} scenarios to {out}")
    return EXIT_OK


def _cmd_gen_expert(args) -> int:
    src = Path(args.scenarios)
    files = sorted(src.glob("*.scenario.json")) if src.is_dir() else [src]
    if not files:
        raise ContractError(f"no *.scenario.json files under {src}")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cfg = ExpertConfig(restarts=args.restarts)

    instances, skipped = [], []
    for i, f in enumerate(files):
        scen = load_scenario(f)
        spec = ConstraintSpec.from_scenario(scen)
        result = solve_expert(scen, spec, cfg, horizon=args.horizon)
        suffix = ".scenario.json"
        base = f.name[:-len(suffix)] if f.name.endswith(suffix) else f.stem
        if isinstance(result, TrajectorySet):
            sname, tname = base + ".scenario.json", base + ".traj.bin"
            with open(out / sname, "w") as fh:
                fh.write(scenario_to_json(scen))
            save_trajectories(result, out / tname)
            instances.append({"family": None, "index": i, "seed": None,
                              "scenario": sname, "trajectory": tname,
                              "cost": path_cost(result)})
        else:
            print(f"skipping {f.name}: infeasible, best residual "
                  f"{result.max_residual:.3e}", file=sys.stderr)
            skipped.append({"family": None, "index": i, "seed": None,
                            "reason": "infeasible",
                            "max_residual": result.max_residual})
    if 2 * len(instances) < len(files):
        print(f"error: only {len(instances)} of {len(files)} scenarios "
              "solved feasibly", file=sys.stderr)
        return EXIT_INFEASIBLE
    manifest = {
        "version": DATASET_VERSION,
        "master_seed": None,
        "horizon": args.horizon,
        "solver": asdict(cfg),
        "families": [],
        "counts": {"kept": len(instances), "skipped": len(skipped)},
        "instances": instances,
        "skipped": skipped,
    }
    with open(out / "manifest.json", "w") as fh:
        fh.write(json.dumps(manifest, sort_keys=True, indent=2) + "\n")
    print(f"solved {len(instances)}/{len(files)} scenarios into {out}")
    return EXIT_OK


def _cmd_train(args) -> int:
    manifest, pairs = load_dataset(args.data)
    dataset = [(traj, scen) for scen, traj in pairs]
    na, horizon = dataset[0][0].n_agents, dataset[0][0].horizon
    hidden = tuple(int(w) for w in args.hidden.split(",") if w)
    net = ScoreNetwork.create(na, horizon, hidden=hidden, seed=args.seed)
    schedule = make_schedule(args.beta_min, args.beta_max, args.levels,
                             args.inner_steps)
    cfg = TrainConfig(learning_rate=args.lr, batch_size=args.batch_size,
                      epochs=args.epochs, weight_fn=args.weight_fn)
    rng = np.random.Generator(np.random.PCG64(args.seed))
    net, history = train(net, dataset, schedule, cfg, rng)
    save_network(net, schedule, args.out, cfg)
    if history:
        print(f"trained {len(history)} epochs on {len(dataset)} trajectories; "
              f"loss {history[0]:.4f} -> {history[-1]:.4f}; saved {args.out}")
    if len(history) < args.epochs:
        print("error: training diverged; checkpoint holds the last finite "
              "parameters", file=sys.stderr)
        return EXIT_NONCONVERGED
    return EXIT_OK


def _cmd_sample(args) -> int:
    net, schedule = load_network(args.model)
    scen = load_scenario(args.scenario)
    spec = ConstraintSpec.from_scenario(scen)
    method = Method(args.method)
    cfg = SamplerConfig(
        method=method, schedule=schedule,
        guidance_weight=(args.guidance_weight if method is Method.GDM else 0.0),
        guidance_clip=args.guidance_clip,
        seed=args.seed, project_every=args.project_every)
    result = sample(net, scen, spec, cfg)
    if result.trajectory is None:
        print(f"error: {result.error}", file=sys.stderr)
        return EXIT_INFEASIBLE
    save_trajectories(result.trajectory, args.out)
    print(f"{method.value} sample seed={args.seed} feasible={result.feasible} "
          f"wall={result.wall_ms:.0f}ms -> {args.out}")
    if method is Method.PDM and not result.feasible:
        print("error: final projection did not converge; wrote best iterate",
              file=sys.stderr)
        return EXIT_NONCONVERGED
    return EXIT_OK


def _cmd_eval(args) -> int:
    net, schedule = load_network(args.model)
    methods = [m.strip() for m in args.methods.split(",") if m.strip()]
    params = {} if args.n_agents is None else {"n_agents": args.n_agents}
    families = [ScenarioFamily(_family_kind(name.strip()), seed=args.family_seed,
                               params=dict(params))
                for name in args.families.split(",") if name.strip()]
    config = ExperimentConfig(
        schedule=schedule, master_seed=args.master_seed,
        guidance_weight=args.guidance_weight,
        guidance_clip=args.guidance_clip,
        project_every=args.project_every, timing=args.timing)
    report = run_experiment(methods, families, args.per_family, net, config)
    write_csv(report, args.out_csv)
    for (method, family), row in report.summary().items():
        print(f"{family:>14s} {method:>4s}: violation "
              f"{row['violation_rate_mean']:7.3f}% +- {row['violation_rate_std']:.3f}, "
              f"path length {row['path_length_mean']:7.3f} +- {row['path_length_std']:.3f}, "
              f"feasible {row['feasible_fraction']:.2f}")
    print(f"wrote {args.out_csv}")
    return EXIT_OK


def _cmd_plot(args) -> int:
    scen = load_scenario(args.scenario)
    traj = load_trajectories(args.traj)
    plot(traj, scen, args.out)
    print(f"wrote {args.out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="mapfdiff",
        description="Collision-free multi-agent trajectories by projected "
                    "diffusion sampling.")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-scenarios", help="draw scenarios from a family")
    g.add_argument("--family", required=True,
                   help="NarrowCorridor, ObstacleDense, or AgentDense")
    g.add_argument("--count", type=int, required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True, help="output directory")
    g.add_argument("--n-agents", type=int, default=None,
                   help="override the family's agent count")
    g.set_defaults(func=_cmd_gen_scenarios)

    g = sub.add_parser("gen-expert", help="solve scenarios into a training set")
    g.add_argument("--scenarios", required=True,
                   help="scenario file or directory of *.scenario.json")
    g.add_argument("--out", required=True, help="output dataset directory")
    g.add_argument("--restarts", type=int, default=4)
    g.add_argument("--horizon", type=int, default=DEFAULT_HORIZON)
    g.set_defaults(func=_cmd_gen_expert)

    g = sub.add_parser("train", help="fit the score network on a dataset")
    g.add_argument("--data", required=True, help="dataset directory or manifest")
    g.add_argument("--epochs", type=int, default=200)
    g.add_argument("--out", required=True, help="checkpoint path")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--lr", type=float, default=1e-3)
    g.add_argument("--batch-size", type=int, default=32)
    g.add_argument("--hidden", default="256,256,256")
    g.add_argument("--weight-fn", choices=("one", "beta"), default="one")
    g.add_argument("--levels", type=int, default=DEFAULT_LEVELS)
    g.add_argument("--inner-steps", type=int, default=DEFAULT_INNER_STEPS)
    g.add_argument("--beta-min", type=float, default=DEFAULT_BETA_MIN)
    g.add_argument("--beta-max", type=float, default=DEFAULT_BETA_MAX)
    g.set_defaults(func=_cmd_train)

    g = sub.add_parser("sample", help="generate one trajectory set")
    g.add_argument("--model", required=True)
    g.add_argument("--scenario", required=True)
    g.add_argument("--method", choices=("pdm", "dm", "gdm"), required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True, help="trajectory output path")
    g.add_argument("--guidance-weight", type=float,
                   default=DEFAULT_GUIDANCE_WEIGHT)
    g.add_argument("--guidance-clip", type=float, default=10.0)
    g.add_argument("--project-every", type=int, default=1)
    g.set_defaults(func=_cmd_sample)

    g = sub.add_parser("eval", help="run the metrics protocol over families")
    g.add_argument("--model", required=True)
    g.add_argument("--families", required=True,
                   help="comma-separated family names")
    g.add_argument("--per-family", type=int, required=True)
    g.add_argument("--methods", default="pdm,dm,gdm")
    g.add_argument("--out-csv", required=True)
    g.add_argument("--master-seed", type=int, default=0)
    g.add_argument("--family-seed", type=int, default=0)
    g.add_argument("--n-agents", type=int, default=None,
                   help="override every family's agent count")
    g.add_argument("--guidance-weight", type=float,
                   default=DEFAULT_GUIDANCE_WEIGHT)
    g.add_argument("--guidance-clip", type=float, default=10.0)
    g.add_argument("--project-every", type=int, default=1)
    g.add_argument("--timing", action="store_true",
                   help="record real projection wall times in the CSV "
                        "(breaks byte-level determinism)")
    g.set_defaults(func=_cmd_eval)

    g = sub.add_parser("plot", help="render a trajectory set to SVG")
    g.add_argument("--traj", required=True)
    g.add_argument("--scenario", required=True)
    g.add_argument("--out", required=True)
    g.set_defaults(func=_cmd_plot)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ContractError, FormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONTRACT
    except (InfeasibleError, GenerationError, OracleFailure) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
