"""Batch command line interface.

Subcommands cover the full experimental workflow: generate clean cubes,
degrade them, train, denoise, evaluate, and inspect gradients and solver
behavior. Every failure exits nonzero with a single machine-parseable
line on stderr of the form: error type=<ExceptionName> detail="...".
"""

import argparse
import csv
import dataclasses
import glob
import os
import sys

import numpy as np

from . import cubeio, noise, synthetic
from .config import load_config
from .errors import ConfigError
from .grad import finite_diff_grad, phantom_backward, unroll_forward
from .metrics import evaluate, psnr
from .model import DeqState, ModelConfig, init_model_params, reconstruct
from .solver import SolverConfig, solve_equilibrium
from .train import TrainConfig, train, validation_psnr


def _write_rows(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def _float_cell(v):
    return repr(float(v))


def _load_configs(path):
    if path is None:
        return TrainConfig(), ModelConfig()
    return load_config(path)


# ---------------------------------------------------------------- subcommands


def _cmd_make_synthetic(args):
    cubes = synthetic.make_dataset(
        args.count, args.b, args.h, args.w, seed=args.seed, patterns=args.patterns
    )
    os.makedirs(args.out_dir, exist_ok=True)
    for i, cube in enumerate(cubes):
        cubeio.save_cube(os.path.join(args.out_dir, f"clean_{i:03d}.hsic"), cube)
    print(f"wrote {len(cubes)} cubes to {args.out_dir}")
    return 0


def _cmd_add_noise(args):
    x = cubeio.load_cube(args.in_path)
    spec = noise.NoiseSpec(
        pattern=args.pattern, lo=args.lo, hi=args.hi,
        beta=args.beta, eta=args.eta, seed=args.seed,
    )
    y, report = spec.apply(x)
    cubeio.save_cube(args.out, y)
    report_path = args.report_csv or os.path.splitext(args.out)[0] + ".report.csv"
    report.write_csv(report_path)
    print(f"wrote {args.out} and {report_path}")
    return 0


def _load_pairs(data_dir):
    cleans = sorted(glob.glob(os.path.join(data_dir, "clean_*.hsic")))
    if not cleans:
        raise FileNotFoundError(f"no clean_*.hsic cubes in {data_dir}")
    pairs = []
    for clean_path in cleans:
        noisy_path = os.path.join(
            data_dir, os.path.basename(clean_path).replace("clean_", "noisy_", 1)
        )
        if not os.path.exists(noisy_path):
            raise FileNotFoundError(f"{clean_path} has no matching {noisy_path}")
        pairs.append((cubeio.load_cube(noisy_path), cubeio.load_cube(clean_path)))
    return pairs


def _cmd_train(args):
    train_cfg, model_cfg = _load_configs(args.config)
    pairs = _load_pairs(args.data_dir)
    params, log = train(pairs, train_cfg, model_cfg=model_cfg)
    cubeio.save_checkpoint(args.out_checkpoint, params)
    log_path = args.log_csv or os.path.splitext(args.out_checkpoint)[0] + ".log.csv"
    log.write_csv(log_path)
    last = log.epochs[-1]
    print(
        f"trained {len(log.steps)} steps, final epoch loss {last.mean_loss!r}; "
        f"wrote {args.out_checkpoint} and {log_path}"
    )
    return 0


def _solver_from_args(args):
    return SolverConfig(method=args.method, tol=args.tol, max_iter=args.max_iter)


def _cmd_denoise(args):
    y = cubeio.load_cube(args.in_path)
    params, _ = cubeio.load_checkpoint(args.checkpoint)
    cfg = _solver_from_args(args)
    ref = cubeio.load_cube(args.ref) if args.ref else None
    rows = []
    s_shape, h_shape = params.state_shapes(y.shape[1], y.shape[2])

    def trace_cb(k, vec, resid):
        row = [k, _float_cell(resid)]
        if ref is not None:
            state = DeqState.unpack(vec, s_shape, h_shape)
            row.append(_float_cell(psnr(reconstruct(state, params), ref)))
        rows.append(row)

    state, trace = solve_equilibrium(
        params, y, cfg, callback=trace_cb if args.trace_csv else None
    )
    xhat = reconstruct(state, params)
    cubeio.save_cube(args.out, xhat)
    if args.trace_csv:
        header = ["iteration", "residual"] + (["psnr"] if ref is not None else [])
        _write_rows(args.trace_csv, header, rows)
    print(
        f"wrote {args.out}: {trace.iterations} iterations, "
        f"final residual {trace.residuals[-1]!r}, converged={trace.converged}"
    )
    return 0


def _cmd_eval(args):
    pred = cubeio.load_cube(args.pred)
    ref = cubeio.load_cube(args.ref)
    report = evaluate(pred, ref)
    report.write_csv(args.out_csv)
    print(report.summary())
    return 0


def _cmd_grad_check(args):
    train_cfg, model_cfg = _load_configs(args.config)
    if args.config is None:
        # default tiny instance: small enough for exhaustive central differences
        model_cfg = ModelConfig(
            atoms2d=4, atoms3d=2, kernel2d=3, attn_stages=2, attn_heads=2,
            window=2, theta_init=0.05,
        )
    rng = np.random.default_rng(args.seed)
    params = init_model_params(model_cfg, bands=args.bands, rng=rng)
    # move every leaf off its init so no gradient path is vacuously zero
    params = params.with_leaves(
        [a + 0.05 * rng.standard_normal(a.shape) for _, a in params.leaves()]
    )
    y = 0.3 * rng.standard_normal((args.bands, args.size, args.size))
    target = 0.3 * rng.standard_normal((args.bands, args.size, args.size))
    s_shape, h_shape = params.state_shapes(args.size, args.size)
    start = DeqState(
        0.2 * rng.standard_normal(s_shape), 0.2 * rng.standard_normal(h_shape)
    )
    length = train_cfg.phantom_len

    final, tape = unroll_forward(start, y, length, params)
    xhat = reconstruct(final, params)
    grads = phantom_backward(tape, 2.0 * (xhat - target), params)

    def loss_fn(p):
        out, _ = unroll_forward(start, y, length, p)
        return float(np.sum((reconstruct(out, p) - target) ** 2))

    fd = finite_diff_grad(loss_fn, params, eps=args.eps)
    rows, worst = [], 0.0
    for name, g in grads.items():
        ref_g = fd[name]
        mask = np.abs(ref_g) > args.floor
        rel = 0.0
        if np.any(mask):
            rel = float(
                np.max(np.abs(g[mask] - ref_g[mask]) / np.abs(ref_g[mask]))
            )
        worst = max(worst, rel)
        rows.append([name, _float_cell(rel)])
        print(f"{name}: rel_err {rel:.3e}")
    if args.out_csv:
        _write_rows(args.out_csv, ["leaf", "rel_err"], rows)
    ok = worst <= args.tol
    print(
        f"grad-check max_rel_err={worst!r} tol={args.tol!r} "
        f"status={'ok' if ok else 'fail'}"
    )
    return 0 if ok else 1


def _cmd_solve_trace(args):
    y = cubeio.load_cube(args.in_path)
    params, _ = cubeio.load_checkpoint(args.checkpoint)
    methods = ("naive", "anderson") if args.method == "both" else (args.method,)
    rows = []
    for method in methods:
        cfg = SolverConfig(method=method, tol=args.tol, max_iter=args.max_iter)
        _, trace = solve_equilibrium(params, y, cfg)
        for k, resid in enumerate(trace.residuals, start=1):
            rows.append([method, k, _float_cell(resid)])
    _write_rows(args.out_csv, ["method", "iteration", "residual"], rows)
    print(f"wrote {args.out_csv} ({len(rows)} rows)")
    return 0


def _cmd_sweep(args):
    train_cfg, model_cfg = _load_configs(args.config)
    pairs = _load_pairs(args.data_dir)
    val_pairs = _load_pairs(args.val_dir) if args.val_dir else pairs
    atoms_list = [int(v) for v in args.atoms.split(",")]
    unroll_list = [int(v) for v in args.unroll.split(",")]
    rows = []
    for atoms in atoms_list:
        for length in unroll_list:
            mc = dataclasses.replace(model_cfg, atoms2d=atoms)
            tc = dataclasses.replace(
                train_cfg, phantom_len=length,
                max_steps=args.steps or train_cfg.max_steps,
            )
            params, log = train(pairs, tc, model_cfg=mc)
            val = validation_psnr(params, val_pairs, tc)
            rows.append([atoms, length, len(log.steps), _float_cell(val)])
            print(f"atoms={atoms} unroll={length}: val psnr {val:.4f}")
    _write_rows(args.out_csv, ["atoms", "unroll", "steps", "psnr"], rows)
    print(f"wrote {args.out_csv}")
    return 0


# --------------------------------------------------------------------- parser


def build_parser():
    parser = argparse.ArgumentParser(
        prog="eqcsc",
        description="Equilibrium convolutional sparse coding denoiser for "
        "hyperspectral cubes.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("make-synthetic", help="generate smooth random clean cubes")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--h", type=int, required=True)
    p.add_argument("--w", type=int, required=True)
    p.add_argument("--b", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--patterns", type=int, default=6)
    p.set_defaults(func=_cmd_make_synthetic)

    p = sub.add_parser("add-noise", help="degrade a cube and write a report CSV")
    p.add_argument("--in", dest="in_path", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--pattern", choices=("noniid", "mixture", "corr"), required=True)
    p.add_argument("--lo", type=float, default=0.0)
    p.add_argument("--hi", type=float, default=55.0)
    p.add_argument("--beta", type=float, default=23.08)
    p.add_argument("--eta", type=float, default=0.157)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--report-csv", default=None)
    p.set_defaults(func=_cmd_add_noise)

    p = sub.add_parser("train", help="train on clean/noisy cube pairs")
    p.add_argument("--data-dir", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--out-checkpoint", required=True)
    p.add_argument("--log-csv", default=None)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("denoise", help="equilibrium solve and reconstruct")
    p.add_argument("--in", dest="in_path", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--trace-csv", default=None)
    p.add_argument("--ref", default=None, help="clean cube for per-iteration psnr")
    p.add_argument("--method", choices=("naive", "anderson"), default="anderson")
    p.add_argument("--tol", type=float, default=1e-4)
    p.add_argument("--max-iter", type=int, default=30)
    p.set_defaults(func=_cmd_denoise)

    p = sub.add_parser("eval", help="psnr/ssim/spectral-angle report")
    p.add_argument("--pred", required=True)
    p.add_argument("--ref", required=True)
    p.add_argument("--out-csv", required=True)
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser(
        "grad-check", help="unrolled gradient vs central finite differences"
    )
    p.add_argument("--config", default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--bands", type=int, default=3)
    p.add_argument("--size", type=int, default=4)
    p.add_argument("--eps", type=float, default=1e-6)
    p.add_argument("--tol", type=float, default=1e-3)
    p.add_argument("--floor", type=float, default=1e-8)
    p.add_argument("--out-csv", default=None)
    p.set_defaults(func=_cmd_grad_check)

    p = sub.add_parser("solve-trace", help="per-iteration residual comparison")
    p.add_argument("--in", dest="in_path", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--method", choices=("naive", "anderson", "both"), default="both")
    p.add_argument("--tol", type=float, default=0.0)
    p.add_argument("--max-iter", type=int, default=30)
    p.add_argument("--out-csv", required=True)
    p.set_defaults(func=_cmd_solve_trace)

    p = sub.add_parser(
        "sweep", help="train across atom counts and unroll lengths, report psnr"
    )
    p.add_argument("--data-dir", required=True)
    p.add_argument("--val-dir", default=None)
    p.add_argument("--config", default=None)
    p.add_argument("--atoms", default="32,64")
    p.add_argument("--unroll", default="1,3,5")
    p.add_argument("--steps", type=int, default=0, help="0 keeps the config value")
    p.add_argument("--out-csv", required=True)
    p.set_defaults(func=_cmd_sweep)

    return parser


def cli_run(argv):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse already printed usage or help
        return int(exc.code or 0)
    try:
        return args.func(args)
    except Exception as exc:  # single-line machine-parseable failure report
        detail = str(exc).replace('"', "'").replace("\n", " ")
        print(f'error type={type(exc).__name__} detail="{detail}"', file=sys.stderr)
        return 1


def main():
    sys.exit(cli_run(sys.argv[1:]))


if __name__ == "__main__":
    main()
