"""Command-line surface: train, sweep, verify, norms, sharpness.

Exit codes: 0 on success, 1 when a verification invariant fails, 2 on
configuration errors.
"""

from __future__ import annotations

import argparse
import json
import math
import sys

from .arch import ArchSpec, build_architecture
from .harness import ConfigError, RunConfig, sweep, train_run, write_records
from .norms import compute_scales
from .sharpness import loss_smoothness, tree_sharpness

ARCH_KEYS = {
    "arch": str, "width": int, "depth": int, "block_depth": int, "kernel": int,
    "heads": int, "context": int, "vocab": int, "block_mass": float,
    "d_in": int, "d_out": int,
}
RUN_KEYS = {
    "optimizer": str, "normed": bool, "lr0": float, "total_steps": int,
    "batch_size": int, "seed": int, "dataset": str, "cifar_path": str,
    "loss": str, "log_interval": int, "n_train": int, "n_test": int,
}


def parse_config_file(path: str) -> dict:
    """Flat key = value lines; # comments; bare or quoted strings."""
    out = {}
    try:
        with open(path) as f:
            lines = f.readlines()
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    for lineno, raw in enumerate(lines, 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key = value, got {raw.strip()!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        out[key] = value.strip("\"'")
    return out


def _coerce(key: str, value, kind):
    try:
        if kind is bool:
            if isinstance(value, bool):
                return value
            if str(value).lower() in ("true", "1", "yes"):
                return True
            if str(value).lower() in ("false", "0", "no"):
                return False
            raise ValueError(value)
        return kind(value)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"config key {key}={value!r} is not a valid {kind.__name__}") from e


def build_run_config(raw: dict) -> RunConfig:
    arch_kwargs = {}
    run_kwargs = {}
    for key, value in raw.items():
        if key in ARCH_KEYS:
            target = "family" if key == "arch" else key
            arch_kwargs[target] = _coerce(key, value, ARCH_KEYS[key])
        elif key in RUN_KEYS:
            run_kwargs[key] = _coerce(key, value, RUN_KEYS[key])
        else:
            raise ConfigError(f"unknown config key {key!r}")
    try:
        spec = ArchSpec(**arch_kwargs)
        cfg = RunConfig(arch=spec, **run_kwargs)
    except (ValueError, TypeError) as e:
        raise ConfigError(str(e)) from e
    return cfg.validate()


def _collect_config(args) -> RunConfig:
    raw = parse_config_file(args.config) if args.config else {}
    for item in args.set or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        raw[key.strip()] = value.strip()
    return build_run_config(raw)


def _arch_from_flags(args) -> ArchSpec:
    kwargs = {"family": args.arch}
    for key in ("width", "depth", "block_depth", "kernel", "heads", "context",
                "vocab", "block_mass", "d_in", "d_out"):
        value = getattr(args, key, None)
        if value is not None:
            kwargs[key] = value
    try:
        return ArchSpec(**kwargs)
    except ValueError as e:
        raise ConfigError(str(e)) from e


def cmd_train(args) -> int:
    cfg = _collect_config(args)
    records = train_run(cfg)
    write_records(records, args.out, args.format, config_echo=cfg.echo())
    final = records[-1]
    status = "diverged" if final.diverged else f"train_loss {final.train_loss:.6f}"
    print(f"{final.run_id}: {len(records)} records, {status} -> {args.out}")
    return 0


def _parse_grid_axis(text):
    return [float(v) if "." in v or "e" in v.lower() else int(v)
            for v in text.split(",") if v != ""]


def cmd_sweep(args) -> int:
    cfg = _collect_config(args)
    grid = {}
    if args.widths:
        grid["widths"] = [int(v) for v in _parse_grid_axis(args.widths)]
    if args.depths:
        grid["depths"] = [int(v) for v in _parse_grid_axis(args.depths)]
    if args.masses:
        grid["masses"] = [float(v) for v in _parse_grid_axis(args.masses)]
    if args.lrs:
        grid["lrs"] = [float(v) for v in _parse_grid_axis(args.lrs)]
    if not grid:
        raise ConfigError("sweep needs at least one of --widths/--depths/--masses/--lrs")
    records = sweep(grid, cfg)
    write_records(records, args.out, args.format, config_echo=cfg.echo())
    print(f"{len(records)} records from {len(set(r.run_id for r in records))} runs -> {args.out}")
    return 0


def cmd_verify(args) -> int:
    from .verify import verify_suite

    level = "full" if args.full else "fast"
    results = verify_suite(level)
    for r in results:
        print(r.line())
    failed = [r for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} checks passed ({level} level)")
    return 1 if failed else 0


def cmd_norms(args) -> int:
    spec = _arch_from_flags(args)
    tree = build_architecture(spec)
    scales = compute_scales(tree)
    atoms = list(tree.atoms())
    rows = [
        {
            "leaf": s.leaf_index,
            "kind": atoms[s.leaf_index].kind,
            "dims": "x".join(str(d) for d in atoms[s.leaf_index].weight_shape),
            "mass": atoms[s.leaf_index].mass,
            "norm": s.norm_kind,
            "scale": None if s.frozen else s.scale,
            "frozen": s.frozen,
        }
        for s in scales
    ]
    if args.json:
        print(json.dumps({"arch": spec.family, "mass": tree.mass, "leaves": rows}, indent=1))
        return 0
    print(f"{spec.family}: mass {tree.mass:g}, sensitivity {float(tree.sensitivity):g}, "
          f"{len(rows)} weight leaves")
    print(f"{'leaf':>4}  {'kind':<8} {'dims':<14} {'mass':>8}  {'norm':<19} {'scale':>12}")
    for r in rows:
        scale = "frozen" if r["frozen"] else f"{r['scale']:.6g}"
        print(f"{r['leaf']:>4}  {r['kind']:<8} {r['dims']:<14} {r['mass']:>8.4g}  "
              f"{r['norm']:<19} {scale:>12}")
    return 0


def cmd_sharpness(args) -> int:
    spec = _arch_from_flags(args)
    tree = build_architecture(spec)
    triple = tree_sharpness(tree, broadcast_mode=args.broadcast_mode)
    loss_value = args.loss_value
    if loss_value is None:
        loss_value = 0.5 if args.error == "square" else math.log(spec.d_out)
    est = loss_smoothness(triple, args.error, loss_value, spec.d_out,
                          conservative_tau=not args.generic_tau)
    if args.json:
        print(json.dumps({
            "arch": spec.family,
            "alpha": triple.alpha, "beta": triple.beta, "gamma": triple.gamma,
            "sensitivity": float(triple.sensitivity), "mass": triple.mass,
            "error": args.error, "observed_loss": loss_value,
            "sigma": est.sigma, "tau": est.tau, "lipschitz": est.lipschitz,
        }, indent=1))
        return 0
    print(f"{spec.family}: alpha {triple.alpha:.6g}, beta {triple.beta:.6g}, "
          f"gamma {triple.gamma:.6g} (sensitivity {float(triple.sensitivity):g}, "
          f"mass {triple.mass:g})")
    print(f"{args.error} at loss {loss_value:.4g}: sigma {est.sigma:.6g}, tau {est.tau:.6g}, "
          f"gradient Lipschitz constant {est.lipschitz:.6g}")
    return 0


def _add_arch_flags(p: argparse.ArgumentParser):
    p.add_argument("--arch", required=True, choices=["resmlp", "resnet", "gpt"])
    p.add_argument("--width", type=int)
    p.add_argument("--depth", type=int)
    p.add_argument("--block-depth", dest="block_depth", type=int)
    p.add_argument("--kernel", type=int)
    p.add_argument("--heads", type=int)
    p.add_argument("--context", type=int)
    p.add_argument("--vocab", type=int)
    p.add_argument("--block-mass", dest="block_mass", type=float)
    p.add_argument("--d-in", dest="d_in", type=int)
    p.add_argument("--d-out", dest="d_out", type=int)


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="modnorm")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="run one training configuration")
    p.add_argument("--config", help="flat key=value config file")
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override a config key (repeatable)")
    p.add_argument("--out", default="records.csv")
    p.add_argument("--format", choices=["csv", "json"], default="csv")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("sweep", help="grid of runs over widths/depths/masses/lrs")
    p.add_argument("--config", help="flat key=value config file")
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.add_argument("--widths")
    p.add_argument("--depths")
    p.add_argument("--masses")
    p.add_argument("--lrs")
    p.add_argument("--out", default="sweep.csv")
    p.add_argument("--format", choices=["csv", "json"], default="csv")
    p.set_defaults(fn=cmd_sweep)

    p = sub.add_parser("verify", help="run the numerical invariant suite")
    group = p.add_mutually_exclusive_group()
    group.add_argument("--fast", action="store_true")
    group.add_argument("--full", action="store_true")
    p.set_defaults(fn=cmd_verify)

    p = sub.add_parser("norms", help="print the per-leaf scale table of an architecture")
    _add_arch_flags(p)
    p.add_argument("--json", action="store_true")
    p.set_defaults(fn=cmd_norms)

    p = sub.add_parser("sharpness", help="print the propagated sharpness of an architecture")
    _add_arch_flags(p)
    p.add_argument("--error", choices=["square", "cross_entropy"], default="cross_entropy")
    p.add_argument("--loss-value", dest="loss_value", type=float,
                   help="observed loss (default: loss of a constant predictor)")
    p.add_argument("--generic-tau", action="store_true",
                   help="use the optimistic curvature estimate for cross entropy")
    p.add_argument("--broadcast-mode", dest="broadcast_mode", default="linf",
                   choices=["linf", "lp_standard", "rms_pessimistic", "rms_sqrt3"])
    p.add_argument("--json", action="store_true")
    p.set_defaults(fn=cmd_sharpness)
    return parser


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
