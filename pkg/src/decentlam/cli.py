"""Command-line entry point: ``decentlam {topo,run,sweep,verify}``.

Exit codes: 0 success, 1 invalid input, 2 divergence or non-convergence,
3 I/O failure.
"""

from __future__ import annotations

import argparse
import sys
from collections import Counter
from dataclasses import replace
from importlib import resources
from pathlib import Path

from .config import SweepSpec, parse_config
from .errors import ConfigError, DecentLaMError, DivergenceError
from .runner import emit_csv, run_experiment, run_sweep, write_config_snapshot
from .topology import build_topology, metropolis_weights

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME, EXIT_IO = 0, 1, 2, 3


def _read_config_text(path: str) -> str:
    candidate = Path(path)
    if candidate.exists():
        return candidate.read_text(encoding="utf-8")
    shipped = resources.files("decentlam") / "configs" / candidate.name
    if shipped.is_file():
        return shipped.read_text(encoding="utf-8")
    raise FileNotFoundError(f"config file not found: {path}")


def _load_config(path: str, seed: int | None):
    cfg = parse_config(_read_config_text(path))
    if seed is not None:
        cfg = replace(cfg, problem=replace(cfg.problem, seed=seed), topology=replace(cfg.topology, seed=seed))
    return cfg


def cmd_topo(args) -> int:
    g = build_topology(args.kind, args.n, seed=args.seed)
    w = metropolis_weights(g)
    evals = w.eigenvalues
    hist = Counter(int(d) for d in g.degrees())
    print(f"kind: {g.kind.value}")
    print(f"n: {g.n}")
    print(f"edges: {len(g.edges)}")
    print("degree histogram: " + ", ".join(f"{deg}:{cnt}" for deg, cnt in sorted(hist.items())))
    print(f"rho: {w.rho!r}")
    print(f"lambda_2: {float(evals[1]) if g.n > 1 else float('nan')!r}")
    print(f"lambda_n: {float(evals[-1])!r}")
    if args.emit_w:
        lines = [",".join(format(v, ".17g") for v in row) for row in w.w]
        Path(args.emit_w).write_bytes(("\n".join(lines) + "\n").encode("utf-8"))
    return EXIT_OK


def cmd_run(args) -> int:
    cfg = _load_config(args.config, args.seed)
    out = Path(args.out or cfg.run.output or "out")
    result = run_experiment(cfg, workers=args.workers)
    out.mkdir(parents=True, exist_ok=True)
    emit_csv(result.trajectories, out / "trajectories.csv", kind="trajectory")
    if cfg.run.bias_mode:
        emit_csv(result.bias, out / "bias.csv", kind="bias")
    write_config_snapshot(cfg, out / "config.cfg")
    for traj in result.trajectories:
        print(f"{traj.algo}: final relative error {traj.final.relative_error:.6e} at iteration {traj.final.k}")
    for est in result.bias:
        state = "converged" if est.converged else "NOT converged"
        print(f"{est.algo}: limiting bias {est.limiting_bias:.6e} ({state}, residual {est.fixed_point_residual:.1e})")
    return EXIT_OK if all(b.converged for b in result.bias) else EXIT_RUNTIME


def _parse_axis(text: str):
    path, sep, values = text.partition("=")
    if not sep or not values.strip():
        raise ConfigError([(text, "axis must look like path=v1,v2,...")])
    return path.strip(), tuple(v.strip() for v in values.split(","))


def cmd_sweep(args) -> int:
    cfg = _load_config(args.config, args.seed)
    spec = SweepSpec(base=cfg, axes=tuple(_parse_axis(a) for a in args.axis or ()), cross=not args.zip)
    rows = run_sweep(spec, workers=args.workers)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    emit_csv(rows, out / "sweep.csv", kind="sweep")
    failed = sum(1 for r in rows if r.get("error"))
    print(f"{len(rows)} rows written to {out / 'sweep.csv'}" + (f" ({failed} failed cells)" if failed else ""))
    return EXIT_RUNTIME if failed else EXIT_OK


def cmd_verify(args) -> int:
    from .verify import run_checks

    results = run_checks(quick=args.quick)
    for check in results:
        print(f"{'PASS' if check.passed else 'FAIL'}  {check.name}: {check.detail} [{check.seconds:.1f}s]")
    return EXIT_OK if all(c.passed for c in results) else EXIT_RUNTIME


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="decentlam", description="Decentralized momentum SGD simulator")
    sub = parser.add_subparsers(dest="command", required=True)

    topo = sub.add_parser("topo", help="inspect a topology and its Metropolis weights")
    topo.add_argument("--kind", required=True, choices=["ring", "mesh", "sym-exp", "bipartite", "full"])
    topo.add_argument("--n", type=int, required=True)
    topo.add_argument("--seed", type=int, default=0)
    topo.add_argument("--emit-w", metavar="PATH")
    topo.set_defaults(func=cmd_topo)

    run = sub.add_parser("run", help="run one experiment configuration")
    run.add_argument("--config", required=True)
    run.add_argument("--out")
    run.add_argument("--seed", type=int)
    run.add_argument("--workers", type=int, default=1)
    run.set_defaults(func=cmd_run)

    sweep = sub.add_parser("sweep", help="run a parameter grid")
    sweep.add_argument("--config", required=True)
    sweep.add_argument("--axis", action="append", metavar="PATH=V1,V2,...")
    sweep.add_argument("--zip", action="store_true", help="zip the axes instead of taking their product")
    sweep.add_argument("--workers", type=int, default=1)
    sweep.add_argument("--seed", type=int)
    sweep.add_argument("--out", required=True)
    sweep.set_defaults(func=cmd_sweep)

    verify = sub.add_parser("verify", help="run the built-in property checks")
    verify.add_argument("--quick", action="store_true")
    verify.set_defaults(func=cmd_verify)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(exc, file=sys.stderr)
        return EXIT_INVALID
    except DivergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (DecentLaMError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
