"""Command-line harness: build/upcycle checkpoints, run forwards, simulate
routing and load balance, verify gradients, and run the toy training loop.

Exit codes: 0 success, 1 validation failure, 2 I/O error, 3 check failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from grovemoe import balance, figures, training
from grovemoe.accounting import (
    adjugate_eval_bounds,
    conditional_params,
    expected_distinct_groups,
    flops_per_token,
    active_params,
    routing_histogram,
)
from grovemoe.checkpoint import CheckpointError, load_layer, save_layer, upcycle
from grovemoe.config import GroveConfig
from grovemoe.layer import (
    GroveLayer,
    MoeLayer,
    grove_forward_dedup,
    moe_forward,
    random_grove_layer,
    random_moe_layer,
)
from grovemoe.mathutils import make_rng

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_IO = 2
EXIT_CHECK = 3


def _load_config(path: str, seed: int | None) -> GroveConfig:
    cfg = GroveConfig.from_file(path)
    if seed is not None:
        cfg = GroveConfig.from_dict({**cfg.to_dict(), "seed": seed})
    return cfg


def _outdir(path: str) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_init(args) -> int:
    cfg = _load_config(args.config, args.seed)
    if args.kind == "moe":
        layer = random_moe_layer(cfg)
    else:
        layer = random_grove_layer(cfg)
    save_layer(layer, args.out, dtype=args.dtype)
    print(f"wrote {args.kind} checkpoint: {args.out} (seed={cfg.seed})")
    return EXIT_OK


def cmd_upcycle(args) -> int:
    moe = load_layer(args.ckpt)
    if not isinstance(moe, MoeLayer):
        raise ValueError(f"{args.ckpt} is not a plain MoE checkpoint")
    grove = upcycle(moe, g=args.g, h=args.h, lam=args.lam,
                    sigma_init=args.sigma_init, seed=args.seed)
    save_layer(grove, args.out, dtype=args.dtype)

    rng = make_rng(grove.config.seed + 1)
    residual = 0.0
    for _ in range(16):
        x = rng.standard_normal(grove.config.d)
        y_grove, _ = grove_forward_dedup(grove, x)
        y_moe = moe_forward(moe, x)
        residual = max(residual, float(np.max(np.abs(y_grove - y_moe))))
    print(f"wrote grove checkpoint: {args.out}")
    print(f"function-preservation residual over 16 probes: {residual:.3e}")
    return EXIT_OK


def cmd_forward(args) -> int:
    layer = load_layer(args.ckpt)
    out = _outdir(args.out)
    rng = make_rng(args.seed)
    rows = []
    for t in range(args.samples):
        x = rng.standard_normal(layer.config.d)
        if isinstance(layer, GroveLayer):
            y, stats = grove_forward_dedup(layer, x)
            n_adj = stats.n_adjugate_evals
        else:
            y = moe_forward(layer, x)
            n_adj = 0
        rows.append((t, n_adj, y))
    path = out / "forward_outputs.csv"
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["token", "n_adjugate_evals"] + [f"y{i}" for i in range(layer.config.d)])
        for t, n_adj, y in rows:
            writer.writerow([t, n_adj] + [repr(v) for v in y])
    print(f"wrote {path} ({args.samples} tokens)")
    return EXIT_OK


def cmd_simulate_routing(args) -> int:
    layer = load_layer(args.ckpt)
    out = _outdir(args.out)
    rng = make_rng(args.seed)
    tokens = rng.standard_normal((args.samples, layer.config.d))
    report = routing_histogram(layer, tokens)

    report.write_json(out / "routing_report.json")
    if args.format == "csv":
        report.write_histogram_csv(out / "routing_histogram.csv")
    else:
        with open(out / "routing_histogram.json", "w") as f:
            json.dump({str(k): v for k, v in sorted(report.histogram.items())}, f, indent=2)
            f.write("\n")
    cfg = layer.config
    figures.render_histogram(
        report.histogram, out / "routing_histogram.png",
        title=f"n={cfg.n} g={cfg.g} k={cfg.k}",
    )
    analytic = expected_distinct_groups(cfg.n, cfg.g, cfg.k)
    saving = 1.0 - report.mean_distinct_groups / cfg.k
    print(f"mean distinct groups: {report.mean_distinct_groups:.4f} (uniform oracle {analytic:.4f})")
    print(f"adjugate-eval saving vs no dedup: {saving:.1%}")
    return EXIT_OK


def cmd_simulate_balance(args) -> int:
    cfg = _load_config(args.config, args.seed)
    out = _outdir(args.out)
    rng = make_rng(cfg.seed)
    # Stationary scenario: one fixed skewed logit batch replayed every step.
    z0 = balance.skewed_logit_batch(cfg.n, args.batch, args.skew, rng)
    trajectory = balance.simulate_balance(
        cfg.n, cfg.k, lambda step: z0, args.steps, alpha=cfg.alpha,
    )
    if args.format == "csv":
        balance.write_trajectory_csv(trajectory, out / "balance_trajectory.csv")
    else:
        with open(out / "balance_trajectory.json", "w") as f:
            json.dump(trajectory, f, indent=2)
            f.write("\n")
    figures.render_trajectory(trajectory, out / "balance_trajectory.png",
                              title=f"n={cfg.n} k={cfg.k} alpha={cfg.alpha} skew={args.skew}")
    first, last = trajectory[0], trajectory[-1]
    print(f"initial max violation: {first['max_violation']:.6f}")
    print(f"final max violation:   {last['max_violation']:.6f}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    if args.probes < 1:
        raise ValueError("probes must be >= 1")
    layer = load_layer(args.ckpt)
    if not isinstance(layer, GroveLayer):
        raise ValueError("gradcheck needs a grove checkpoint")
    rng = make_rng(args.seed)
    max_coords = None if args.max_coords == 0 else args.max_coords
    args.max_coords = max_coords
    worst = 0.0
    for p in range(args.probes):
        x = rng.standard_normal(layer.config.d)
        upstream = rng.standard_normal(layer.config.d)
        err = training.finite_difference_check(layer, x, upstream,
                                               max_coords=args.max_coords, coord_seed=p)
        worst = max(worst, err)
        print(f"probe {p}: max relative error {err:.3e}")
    print(f"overall max relative error: {worst:.3e} (threshold 1e-4)")
    if worst > 1e-4:
        print("gradcheck FAILED")
        return EXIT_CHECK
    print("gradcheck passed")
    return EXIT_OK


def cmd_train_toy(args) -> int:
    layer = load_layer(args.ckpt)
    if not isinstance(layer, GroveLayer):
        raise ValueError("train-toy needs a grove checkpoint")
    out = _outdir(args.out)
    result = training.toy_train(layer, steps=args.steps, seed=args.seed)
    save_layer(layer, out / "trained.ckpt")
    with open(out / "train_curves.csv", "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["step", "loss", "max_violation"])
        for s, (lo, im) in enumerate(zip(result.loss_curve, result.imbalance_curve)):
            writer.writerow([s, repr(lo), repr(im)])
    figures.render_curves({"loss": result.loss_curve}, out / "train_loss.png",
                          ylabel="mean squared error", logy=True)
    figures.render_curves({"max |F - Q|": result.imbalance_curve}, out / "train_imbalance.png",
                          ylabel="imbalance")
    print(f"loss: {result.loss_curve[0]:.6f} -> {result.loss_curve[-1]:.6f}")
    return EXIT_OK


def cmd_stats(args) -> int:
    if args.ckpt:
        cfg = load_layer(args.ckpt).config
    elif args.config:
        cfg = _load_config(args.config, None)
    else:
        raise ValueError("stats needs --config or --ckpt")
    lo, hi = adjugate_eval_bounds(cfg)
    per = conditional_params(cfg)
    report = {
        "config": cfg.to_dict(),
        "per_expert_params": per["per_expert"],
        "per_adjugate_params": per["per_adjugate"],
        "router_params": cfg.n * cfg.d,
        "adjugate_evals_min": lo,
        "adjugate_evals_max": hi,
        "min_active_params": active_params(cfg, lo),
        "max_active_params": active_params(cfg, hi),
        "min_flops_per_token": flops_per_token(cfg, lo),
        "max_flops_per_token": flops_per_token(cfg, hi),
        "expected_distinct_groups_uniform": expected_distinct_groups(cfg.n, cfg.g, cfg.k),
    }
    text = json.dumps(report, indent=2, sort_keys=True)
    if args.out:
        out = _outdir(args.out)
        with open(out / "stats.json", "w") as f:
            f.write(text + "\n")
    print(text)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="grovemoe", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("init", help="write a random checkpoint from a config file")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--kind", choices=["moe", "grove"], default="grove")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--dtype", choices=["f32", "f64"], default="f64")
    p.set_defaults(func=cmd_init)

    p = sub.add_parser("upcycle", help="grow a plain MoE checkpoint into a Grove one")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--g", type=int, default=None)
    p.add_argument("--h", type=int, default=None)
    p.add_argument("--lam", "--lambda", dest="lam", type=float, default=None)
    p.add_argument("--sigma-init", type=float, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--dtype", choices=["f32", "f64"], default="f64")
    p.set_defaults(func=cmd_upcycle)

    p = sub.add_parser("forward", help="run the layer on random tokens")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--samples", type=int, default=16)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_forward)

    p = sub.add_parser("simulate-routing", help="adjugate-activation histogram over random tokens")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--samples", type=int, default=100000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--format", choices=["csv", "json"], default="csv")
    p.set_defaults(func=cmd_simulate_routing)

    p = sub.add_parser("simulate-balance", help="closed-loop bias controller on skewed logits")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--steps", type=int, default=20000)
    p.add_argument("--skew", type=float, default=1.0)
    p.add_argument("--batch", type=int, default=256)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--format", choices=["csv", "json"], default="csv")
    p.set_defaults(func=cmd_simulate_balance)

    p = sub.add_parser("gradcheck", help="finite-difference verification of the backward pass")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--probes", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--max-coords", type=int, default=48,
                   help="coordinates probed per tensor; 0 checks all")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("train-toy", help="gradient descent on a synthetic regression task")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--steps", type=int, default=200)
    p.add_argument("--seed", type=int, default=1234)
    p.set_defaults(func=cmd_train_toy)

    p = sub.add_parser("stats", help="parameter/FLOP accounting for a config or checkpoint")
    p.add_argument("--config", default=None)
    p.add_argument("--ckpt", default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_stats)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except CheckpointError as exc:
        print(f"error [{exc.code}]: {exc}", file=sys.stderr)
        return EXIT_IO
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"invalid input: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
