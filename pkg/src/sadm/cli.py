"""Command-line surface: instance generation, training, evaluation,
dilation ablation, and reference solvers, all reproducible from a run
manifest written next to every output.

Exit codes: 0 ok, 2 usage error, 3 validation failure, 4 training divergence.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
import time

import numpy as np

from . import __version__
from . import augment as A
from . import baselines as B
from . import model as M
from . import trainer as TR
from . import vrp

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_VALIDATION = 3
EXIT_DIVERGENCE = 4

DEFAULT_AUGS = "rot=0,45,90,135,180,225,270,315;dil=1.0,1.1,1.2,1.6,1.8"


def _threads_default() -> int:
    env = os.environ.get("SADM_THREADS")
    try:
        return max(1, int(env)) if env else 1
    except ValueError:
        return 1


def parse_augs(spec: str) -> A.AugmentationSet:
    """Parse 'rot=<degrees,...>;dil=<factors,...>' into an AugmentationSet."""
    rotations, dilations = (), (1.0,)
    for part in spec.split(";"):
        part = part.strip()
        if not part:
            continue
        key, _, values = part.partition("=")
        items = [float(v) for v in values.split(",") if v.strip()]
        if key == "rot":
            rotations = tuple(math.radians(v) for v in items)
        elif key == "dil":
            dilations = tuple(items)
        else:
            raise ValueError(f"unknown augmentation key {key!r} (use rot=/dil=)")
    return A.AugmentationSet(rotations=rotations, dilations=dilations)


def write_manifest(path: str, payload: dict):
    payload = dict(payload)
    payload["code_version"] = __version__
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=1, sort_keys=True)


def _group_rollouts(params, instances, mode, augset, threads):
    """Greedy or augmented inference; returns (tours, costs, aug_rows)."""
    tours = [None] * len(instances)
    costs = np.empty(len(instances))
    aug_rows = []
    if mode == "greedy":
        by_size = {}
        for i, inst in enumerate(instances):
            by_size.setdefault(inst.n, []).append(i)
        for n in sorted(by_size):
            idxs = by_size[n]
            for lo in range(0, len(idxs), 256):
                part = idxs[lo:lo + 256]
                results = M.rollout_batch(params, [instances[i] for i in part],
                                          mode="greedy", bn_mode="eval")
                for i, r in zip(part, results):
                    tours[i] = r.tour
                    costs[i] = vrp.tour_cost(instances[i], r.tour)
    else:
        for i, inst in enumerate(instances):
            res = A.augmented_infer(params, inst, augset, threads=threads)
            tours[i] = res.best_tour
            costs[i] = res.best_cost
            aug_rows.extend(
                (inst.seed, theta, k, cost) for theta, k, cost in res.table
            )
    return tours, costs, aug_rows


def cmd_gen(args) -> int:
    t0 = time.time()
    instances = [
        vrp.generate(args.n, args.seed + i) for i in range(args.count)
    ]
    vrp.write_instances(args.out, instances)
    write_manifest(args.out + ".manifest.json", {
        "command": "gen",
        "config": {"n": args.n, "count": args.count, "seed": args.seed},
        "outputs": {"instances": args.out},
        "wall_seconds": time.time() - t0,
    })
    print(f"wrote {args.count} instances (n={args.n}, capacity="
          f"{instances[0].capacity}) to {args.out}")
    return EXIT_OK


def cmd_train(args) -> int:
    t0 = time.time()
    beta = args.beta
    if beta is None:
        beta = 0.01 if args.activation == "entmax-both" else 0.0
    if args.activation == "entmax-both" and beta == 0.0:
        print("warning: entmax output without entropy regularization tends to "
              "collapse onto a few actions early in training; continuing anyway",
              file=sys.stderr)
    cfg = TR.TrainConfig(
        sizes=[int(s) for s in args.sizes.split(",")],
        batch_size=args.batch,
        batches_per_epoch=args.batches_per_epoch,
        epochs=args.epochs,
        beta=beta,
        activation=args.activation,
        baseline=args.baseline,
        normalize_cost=args.normalize_cost,
        seed=args.seed,
        lr=args.lr,
        eval_instances_per_size=args.eval_instances,
    )
    attn, out_act = M.ACTIVATION_PRESETS[args.activation]
    model_cfg = M.ModelConfig(
        d_h=args.d_h, n_layers=args.layers, n_heads=args.heads, ff_dim=args.ff,
        attn_activation=attn, out_activation=out_act,
    )
    os.makedirs(args.out, exist_ok=True)
    trainer = TR.Trainer(cfg, model_cfg)
    log_path = os.path.join(args.out, "log.csv")
    try:
        trainer.train(log_path=log_path, checkpoint_dir=args.out)
    except TR.DivergenceError as exc:
        print(f"divergence: {exc}", file=sys.stderr)
        return EXIT_DIVERGENCE
    write_manifest(os.path.join(args.out, "manifest.json"), {
        "command": "train",
        "config": {
            "sizes": cfg.sizes, "batch_size": cfg.batch_size,
            "batches_per_epoch": cfg.batches_per_epoch, "epochs": cfg.epochs,
            "beta": beta, "activation": cfg.activation, "baseline": cfg.baseline,
            "normalize_cost": cfg.normalize_cost, "lr": cfg.lr,
            "d_h": model_cfg.d_h, "n_layers": model_cfg.n_layers,
            "n_heads": model_cfg.n_heads, "ff_dim": model_cfg.ff_dim,
        },
        "seeds": {"root": cfg.seed},
        "outputs": {"log": log_path, "checkpoint": os.path.join(args.out, "final.json")},
        "wall_seconds": time.time() - t0,
    })
    print(f"training finished; checkpoint at {os.path.join(args.out, 'final.json')}")
    return EXIT_OK


def _read_reference(path: str) -> dict:
    refs = {}
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("instance_seed"):
                continue
            seed, cost = line.split(",")[:2]
            refs[int(seed)] = float(cost)
    return refs


def cmd_eval(args) -> int:
    t0 = time.time()
    instances = vrp.read_instances(args.instances)

    if args.check:
        failures = 0
        by_seed = {inst.seed: inst for inst in instances}
        for seed, tour, cost in vrp.read_tours(args.check):
            if seed not in by_seed:
                print(f"tour references unknown instance seed {seed}", file=sys.stderr)
                failures += 1
                continue
            violations = vrp.validate(by_seed[seed], tour)
            if violations:
                print(f"instance {seed}: " + "; ".join(violations), file=sys.stderr)
                failures += 1
        if failures:
            return EXIT_VALIDATION
        print(f"all tours in {args.check} are valid")
        return EXIT_OK

    if args.checkpoint is None:
        print("--checkpoint is required unless --check is used", file=sys.stderr)
        return EXIT_USAGE
    params = M.load_checkpoint(args.checkpoint)
    augset = parse_augs(args.augs) if args.mode == "augmented" else None
    tours, costs, aug_rows = _group_rollouts(
        params, instances, args.mode, augset, args.threads
    )
    for inst, tour in zip(instances, tours):
        violations = vrp.validate(inst, tour)
        if violations:
            print(f"instance {inst.seed} produced an invalid tour: "
                  + "; ".join(violations), file=sys.stderr)
            return EXIT_VALIDATION

    os.makedirs(args.out, exist_ok=True)
    tours_path = os.path.join(args.out, "tours.jsonl")
    with open(tours_path, "w") as fh:
        for inst, tour, cost in zip(instances, tours, costs):
            fh.write(vrp.tour_to_json(inst, tour, float(cost)) + "\n")

    seeds = [inst.seed for inst in instances]
    if args.reference:
        refs = _read_reference(args.reference)
        missing = [s for s in seeds if s not in refs]
        if missing:
            print(f"reference file {args.reference} is missing seeds: "
                  f"{missing[:10]}", file=sys.stderr)
            return EXIT_VALIDATION
        report = B.gap_report(costs, [refs[s] for s in seeds], labels=seeds)
        csv_text = report.to_csv()
        json_text = report.to_json()
    else:
        lines = ["instance_seed,cost"]
        lines += [f"{s},{c:.6f}" for s, c in zip(seeds, costs)]
        lines.append(f"mean,{np.mean(costs):.6f}")
        csv_text = "\n".join(lines) + "\n"
        json_text = json.dumps({
            "instances": [{"instance_seed": s, "cost": float(c)}
                          for s, c in zip(seeds, costs)],
            "mean_cost": float(np.mean(costs)),
        }, indent=1)

    with open(os.path.join(args.out, "costs.csv"), "w") as fh:
        fh.write(csv_text)
    with open(os.path.join(args.out, "report.json"), "w") as fh:
        fh.write(json_text)
    if aug_rows:
        with open(os.path.join(args.out, "aug_costs.csv"), "w") as fh:
            fh.write("instance_seed,theta,k,cost\n")
            for seed, theta, k, cost in aug_rows:
                fh.write(f"{seed},{theta:.6f},{k:.6f},{cost:.6f}\n")

    write_manifest(os.path.join(args.out, "manifest.json"), {
        "command": "eval",
        "config": {"mode": args.mode, "augs": args.augs if args.mode == "augmented" else None,
                   "threads": args.threads},
        "inputs": {"checkpoint": args.checkpoint, "instances": args.instances,
                   "reference": args.reference},
        "outputs": {"costs": os.path.join(args.out, "costs.csv"),
                    "tours": tours_path},
        "wall_seconds": time.time() - t0,
    })
    print(f"mean cost {np.mean(costs):.6f} over {len(instances)} instances; "
          f"outputs in {args.out}")
    return EXIT_OK


def cmd_ablate_dilation(args) -> int:
    t0 = time.time()
    if args.kmin > args.kmax or args.step <= 0:
        print("require kmin <= kmax and step > 0", file=sys.stderr)
        return EXIT_USAGE
    params = M.load_checkpoint(args.checkpoint)
    instances = vrp.read_instances(args.instances)
    grid = []
    k = args.kmin
    while k <= args.kmax + 1e-9:
        grid.append(round(k, 10))
        k += args.step
    rows = A.dilation_ablation(params, instances, grid, threads=args.threads)
    os.makedirs(args.out, exist_ok=True)
    out_csv = os.path.join(args.out, "dilation_ablation.csv")
    with open(out_csv, "w") as fh:
        fh.write(A.ablation_csv(rows))
    write_manifest(os.path.join(args.out, "manifest.json"), {
        "command": "ablate-dilation",
        "config": {"kmin": args.kmin, "kmax": args.kmax, "step": args.step,
                   "threads": args.threads},
        "inputs": {"checkpoint": args.checkpoint, "instances": args.instances},
        "outputs": {"csv": out_csv},
        "wall_seconds": time.time() - t0,
    })
    print(f"wrote {len(rows)} grid points to {out_csv}")
    return EXIT_OK


def cmd_oracle(args) -> int:
    t0 = time.time()
    instances = vrp.read_instances(args.instances)
    if args.method == "brute":
        oversize = [inst.seed for inst in instances if inst.n > B.BRUTE_FORCE_LIMIT]
        if oversize:
            print(f"brute force requires n <= {B.BRUTE_FORCE_LIMIT}; offending "
                  f"instance seeds: {oversize}", file=sys.stderr)
            return EXIT_VALIDATION
    lines = ["instance_seed,cost"]
    for inst in instances:
        if args.method == "brute":
            _, cost = B.brute_force_optimal(inst)
        else:
            cost = vrp.tour_cost(inst, B.clarke_wright(inst))
        lines.append(f"{inst.seed},{cost:.6f}")
    with open(args.out, "w") as fh:
        fh.write("\n".join(lines) + "\n")
    write_manifest(args.out + ".manifest.json", {
        "command": "oracle",
        "config": {"method": args.method},
        "inputs": {"instances": args.instances},
        "outputs": {"costs": args.out},
        "wall_seconds": time.time() - t0,
    })
    print(f"wrote {len(instances)} reference costs to {args.out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sadm",
        description="Sparse adaptive dynamic attention solver for CVRP",
    )
    parser.add_argument("--threads", type=int, default=_threads_default(),
                        help="worker cap for parallel sections "
                             "(default: SADM_THREADS or 1)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate instances")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("train", help="train a policy")
    p.add_argument("--sizes", required=True, help="comma-separated instance sizes")
    p.add_argument("--epochs", type=int, default=10)
    p.add_argument("--batch", type=int, default=128)
    p.add_argument("--batches-per-epoch", type=int, default=250)
    p.add_argument("--beta", type=float, default=None,
                   help="entropy coefficient (default 0.01 for entmax-both, else 0)")
    p.add_argument("--activation", choices=sorted(M.ACTIVATION_PRESETS),
                   default="entmax-both")
    p.add_argument("--baseline", choices=["greedy_rollout", "ema"],
                   default="greedy_rollout")
    p.add_argument("--normalize-cost", action="store_true",
                   help="divide costs by instance size (off by default)")
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--eval-instances", type=int, default=128)
    p.add_argument("--d-h", type=int, default=128, dest="d_h")
    p.add_argument("--layers", type=int, default=3)
    p.add_argument("--heads", type=int, default=8)
    p.add_argument("--ff", type=int, default=512)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on an instance file")
    p.add_argument("--checkpoint")
    p.add_argument("--instances", required=True)
    p.add_argument("--mode", choices=["greedy", "augmented"], default="greedy")
    p.add_argument("--augs", default=DEFAULT_AUGS,
                   help="augmentation grid, e.g. 'rot=0,90;dil=1.0,1.2' (degrees)")
    p.add_argument("--reference", help="CSV of (instance_seed, cost) for gaps")
    p.add_argument("--check", metavar="TOURS",
                   help="validate an emitted tour file and exit")
    p.add_argument("--out", default="eval_out", help="output directory")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate-dilation", help="sweep dilation factors")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--instances", required=True)
    p.add_argument("--kmin", type=float, default=1.0)
    p.add_argument("--kmax", type=float, default=1.8)
    p.add_argument("--step", type=float, default=0.1)
    p.add_argument("--out", default="ablation_out", help="output directory")
    p.set_defaults(func=cmd_ablate_dilation)

    p = sub.add_parser("oracle", help="write reference costs")
    p.add_argument("--instances", required=True)
    p.add_argument("--method", choices=["brute", "cw"], required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_oracle)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "gen":
        if args.count < 1:
            parser.error("--count must be >= 1")
        if args.n < 1:
            parser.error("--n must be >= 1")
    try:
        return args.func(args)
    except (vrp.ValidationError, B.SizeLimitError) as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_VALIDATION
    except TR.DivergenceError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_DIVERGENCE
    except (M.CheckpointError, ValueError) as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_USAGE
    except FileNotFoundError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_USAGE


def entrypoint():
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
