"""Command-line driver: run | sweep-n | sweep-delta | oracle | identities.

Every invocation that produces files writes them into a fresh output
directory together with a manifest naming each file, the config
snapshot, the seed, timestamps, and the exit status.  Exit codes:
0 success, 1 ledger violation, 2 configuration/usage error.
"""

from __future__ import annotations

import argparse
import datetime
import os
import sys

import numpy as np

from . import __version__
from . import fields as fl
from . import galerkin as gk
from . import solver as sv
from . import tensor_algebra as ta
from .config import ConfigError, config_snapshot, parse_config
from .tensor_algebra import MaterialConstants

USAGE = "usage: nemcol {run,sweep-n,sweep-delta,oracle,identities} [options]"


def _now() -> str:
    return datetime.datetime.now(datetime.timezone.utc).isoformat()


def _prepare_outdir(path: str, force: bool) -> None:
    if os.path.isdir(path) and os.listdir(path):
        if not force:
            raise ConfigError(
                f"output directory {path!r} is not empty (use --force to overwrite)"
            )
        for name in os.listdir(path):
            os.remove(os.path.join(path, name))
    os.makedirs(path, exist_ok=True)


def _write_manifest(outdir, command, config_lines, seed, started, files,
                    exit_status, max_residual) -> None:
    path = os.path.join(outdir, "manifest.txt")
    lines = [
        f"command = {command}",
        f"version = nemcol {__version__}",
        f"started = {started}",
        f"finished = {_now()}",
        f"output_dir = {os.path.abspath(outdir)}",
        f"seed = {seed}",
        f"exit_status = {exit_status}",
        f"max_ledger_residual = {max_residual:.17g}",
        "",
        "[files]",
    ]
    lines += sorted(set(files) | {"manifest.txt"})
    lines += ["", "[config]"] + list(config_lines)
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def _cmd_run(args) -> int:
    started = _now()
    try:
        config = parse_config(args.config)
        if args.seed is not None:
            config.seed = args.seed
        _prepare_outdir(args.output_dir, args.force)
    except (ConfigError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    result = sv.run(config, output_dir=args.output_dir)
    status = 0 if result.aborted is None else 1
    _write_manifest(
        args.output_dir, "run", config_snapshot(config), config.seed, started,
        result.files, status, result.ledger.max_residual,
    )
    if result.aborted is not None:
        print(f"run aborted: {result.aborted}", file=sys.stderr)
    else:
        print(
            f"run finished at t = {result.state.t:.6g}; "
            f"max ledger residual {result.ledger.max_residual:.3e}"
        )
    return status


def _cmd_sweep(args, which: str) -> int:
    started = _now()
    try:
        config = parse_config(args.config)
        if args.seed is not None:
            config.seed = args.seed
        values = [float(v) for v in args.values.split(",") if v.strip()]
        if not values:
            raise ConfigError("--values must list at least one number")
        _prepare_outdir(args.output_dir, args.force)
    except (ConfigError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    sweep = sv.sweep_penalty if which == "n" else sv.sweep_delta
    rows = sweep(config, values)
    fl.write_csv(os.path.join(args.output_dir, "sweep.csv"), sv.SWEEP_COLUMNS, rows)
    failed = any(row[-1] != 0.0 for row in rows)
    status = 1 if failed else 0
    _write_manifest(
        args.output_dir, f"sweep-{which}", config_snapshot(config), config.seed,
        started, ["sweep.csv"], status, float("nan"),
    )
    for row in rows:
        print(", ".join(f"{v:.6g}" for v in row))
    return status


def _cmd_oracle(args) -> int:
    started = _now()
    try:
        _prepare_outdir(args.output_dir, args.force)
    except (ConfigError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    mc = MaterialConstants(a=-1.0, b=1.0, c=1.0, gamma=0.5, mu=0.05)
    try:
        config = gk.OracleConfig(mc=mc, k=args.k)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    if args.seed is None:
        args.seed = 1234
    rng = np.random.default_rng(args.seed)
    basis = gk.SpectralBasis(config)
    state = gk.GalerkinState(
        0.2 * rng.standard_normal(args.k), 0.2 * rng.standard_normal(args.k)
    )
    try:
        traj = gk.integrate(state, config, args.dt, args.steps, basis)
    except gk.BlowUpError as exc:
        print(f"oracle aborted: {exc}", file=sys.stderr)
        return 1
    rows = gk.oracle_ledger_rows(traj)
    fl.write_csv(
        os.path.join(args.output_dir, "oracle_ledger.csv"),
        ["t", "E", "residual"], rows,
    )
    config_lines = [
        f"oracle.k = {args.k}", f"oracle.dt = {args.dt:.17g}",
        f"oracle.steps = {args.steps}",
        f"material = a={mc.a} b={mc.b} c={mc.c} gamma={mc.gamma} mu={mc.mu}",
    ]
    max_res = max(abs(r[2]) for r in rows)
    _write_manifest(args.output_dir, "oracle", config_lines, args.seed, started,
                    ["oracle_ledger.csv"], 0, max_res)
    print(f"oracle: {args.steps} steps, max |energy-identity residual| = {max_res:.3e}")
    return 0


def run_identity_suite(samples: int = 10_000, seed: int = 1234) -> dict[str, bool]:
    """Random-sample checks of the pointwise tensor identities."""
    rng = np.random.default_rng(seed)
    q = ta.random_qten(rng, (samples,))
    h = ta.random_qten(rng, (samples,))
    g = rng.standard_normal((3, 3, samples))
    checks: dict[str, bool] = {}

    res = ta.cancellation_residual(q, h, g)
    scale = np.sqrt(ta.qnormsq(q) * ta.qnormsq(h) * ta.matdot(g, g))
    checks["cancellation_residual <= 1e-12 relative"] = bool(
        np.all(np.abs(res) <= 1e-12 * scale)
    )

    sig = 0.5 * (g - np.swapaxes(g, 0, 1))
    for name, out in (
        ("corotation", ta.corotation(sig, q)),
        ("bulk_derivative", ta.bulk_derivative(q, MaterialConstants(1.0, 2.0, 3.0, 1.0, 1.0))),
        ("molecular_field", ta.molecular_field(h, q, 1.5, MaterialConstants(1.0, 2.0, 3.0, 1.0, 1.0))),
    ):
        m = ta.qten_to_mat(out)
        sym = np.abs(m - np.swapaxes(m, 0, 1)).max()
        tr = np.abs(m[0, 0] + m[1, 1] + m[2, 2]).max()
        checks[f"{name} closure (symmetric traceless)"] = bool(sym == 0.0 and tr < 1e-13)

    sigma = ta.antisym_stress(q, h)
    checks["antisym_stress antisymmetry"] = bool(
        np.abs(sigma + np.swapaxes(sigma, 0, 1)).max() == 0.0
    )

    grad_q = np.stack([ta.random_qten(rng, (samples,)) for _ in range(3)])
    tau = ta.ericksen_stress(grad_q)
    tsym = np.abs(tau - np.swapaxes(tau, 0, 1)).max()
    eigs = np.linalg.eigvalsh(np.moveaxis(tau, -1, 0))
    checks["ericksen_stress symmetric negative semidefinite"] = bool(
        tsym == 0.0 and eigs.max() <= 1e-12 * np.abs(eigs).max()
    )

    d_part, s_part = ta.sym_antisym(g)
    checks["sym_antisym reassembly"] = bool(
        np.abs(d_part + s_part - g).max() <= 1e-14 * np.abs(g).max()
    )
    return checks


def _cmd_identities(args) -> int:
    checks = run_identity_suite(samples=10_000, seed=args.seed or 1234)
    failed = 0
    for name, ok in checks.items():
        print(f"[{'PASS' if ok else 'FAIL'}] {name} (10000 samples)")
        failed += 0 if ok else 1
    print(f"{len(checks) - failed}/{len(checks)} identity checks passed")
    return 0 if failed == 0 else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="nemcol", usage=USAGE)
    sub = parser.add_subparsers(dest="command")

    def common(p, needs_config=True):
        if needs_config:
            p.add_argument("--config", required=True)
        p.add_argument("--output-dir", default="nemcol_out")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--force", action="store_true")

    common(sub.add_parser("run"))
    p_n = sub.add_parser("sweep-n")
    common(p_n)
    p_n.add_argument("--values", required=True)
    p_d = sub.add_parser("sweep-delta")
    common(p_d)
    p_d.add_argument("--values", required=True)
    p_o = sub.add_parser("oracle")
    common(p_o, needs_config=False)
    p_o.add_argument("--k", type=int, default=8)
    p_o.add_argument("--dt", type=float, default=1e-3)
    p_o.add_argument("--steps", type=int, default=200)
    p_i = sub.add_parser("identities")
    p_i.add_argument("--seed", type=int, default=None)
    return parser


def dispatch(argv) -> int:
    argv = list(argv)
    known = {"run", "sweep-n", "sweep-delta", "oracle", "identities"}
    if not argv or argv[0] not in known:
        print(USAGE, file=sys.stderr)
        return 2
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit:
        return 2
    if args.command == "run":
        return _cmd_run(args)
    if args.command == "sweep-n":
        return _cmd_sweep(args, "n")
    if args.command == "sweep-delta":
        return _cmd_sweep(args, "delta")
    if args.command == "oracle":
        return _cmd_oracle(args)
    return _cmd_identities(args)


def main() -> None:
    sys.exit(dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()
