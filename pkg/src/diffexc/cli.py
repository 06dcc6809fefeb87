"""Command-line interface: simulate | fit | sample | eval | intensity.

Every run logs its fully resolved configuration (including the seed) as one
JSON line on stderr so any artifact can be regenerated. Exit codes: 2 for
argument errors (argparse), 1 for runtime failures with a structured
message on stderr.
"""
from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys

import numpy as np

from .core import (MarkedArrivals, RngSeed, TimeGrid, per_mark_interarrivals,
                   read_arrivals_csv, write_arrivals_csv)
from .drift import DriftSpec, ParamVector, eval_drift, param_count
from .excursions import AcceptanceError
from .inference import (CheckpointError, FitConfig, FitDivergedError, fit,
                        fit_baseline_bridge, load_checkpoint, save_checkpoint)
from .likelihood import SaturatedIntensityError, conditional_intensity
from .metrics import (gen_renewal, ks_statistic, qq_points, renewal_reference,
                      w1_distance)
from .sde import (CensoredSampleError, SimulationDivergedError, euler_maruyama,
                  sample_arrivals, sample_arrivals_multidim, sample_arrivals_until)

_RUNTIME_ERRORS = (AcceptanceError, CheckpointError, FitDivergedError,
                   SaturatedIntensityError, CensoredSampleError,
                   SimulationDivergedError, ValueError, OSError)


def _existing_file(p):
    if not os.path.isfile(p):
        raise argparse.ArgumentTypeError(f"file not found: {p}")
    return p


def _load_spec(arg):
    """Drift spec from a JSON file path or an inline JSON string."""
    if os.path.isfile(arg):
        with open(arg) as fh:
            return DriftSpec.from_dict(json.load(fh))
    try:
        return DriftSpec.from_dict(json.loads(arg))
    except json.JSONDecodeError as e:
        raise argparse.ArgumentTypeError(
            f"--spec must be a JSON file or inline JSON: {e}")


def _parse_params(spec, arg):
    if arg is None:
        vals = np.zeros(param_count(spec))
    else:
        vals = np.array([float(s) for s in arg.split(",")]) if arg.strip() else np.empty(0)
    return ParamVector(vals)


def _parse_reference(arg):
    """'family:key=val,key=val' -> (cdf, quantile)."""
    name, _, rest = arg.partition(":")
    params = {}
    if rest:
        for kv in rest.split(","):
            k, _, v = kv.partition("=")
            params[k.strip()] = float(v)
    return renewal_reference(name.strip(), params)


def _log_config(cmd, args):
    cfg = {k: v for k, v in vars(args).items() if k != "func" and not callable(v)}
    print("diffexc-config " + json.dumps({"command": cmd, **cfg}, sort_keys=True,
                                         default=str), file=sys.stderr)


def _write_path_csv(path_obj, out):
    d = path_obj.dim
    t = path_obj.times()
    with open(out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t"] + [f"x{i + 1}" for i in range(d)])
        for i in range(t.size):
            w.writerow([repr(float(t[i]))] + [repr(float(v)) for v in path_obj.values[i]])


def _gaps(seqs, mode):
    durs = []
    for a in seqs.values():
        if mode == "per-mark":
            d, _ = per_mark_interarrivals(a)
        else:
            prev = np.concatenate([[a.origin], a.times[:-1]])
            d = a.times - prev
        durs.append(d)
    return np.concatenate(durs) if durs else np.empty(0)


# ---------------------------------------------------------------------------
# subcommands


def _cmd_simulate(args):
    spec = args.spec
    params = _parse_params(spec, args.params)
    rng = RngSeed(args.seed)
    n_steps = args.steps if args.steps else int(round(args.horizon / args.dt))
    grid = TimeGrid(0.0, args.dt, n_steps)
    if args.out_path:
        path = euler_maruyama(spec, params, [args.x0] * spec.input_dim, grid,
                              args.sigma, rng.child(100))
        _write_path_csv(path, args.out_path)
    if args.out_arrivals:
        if spec.input_dim > 1:
            arr = sample_arrivals_multidim(spec, params, [args.x0] * spec.input_dim,
                                           grid, args.sigma, args.delta, rng)
        else:
            arr = sample_arrivals(spec, params, args.x0, grid, args.sigma,
                                  args.delta, rng)
        write_arrivals_csv(args.out_arrivals, {"0": arr})
    return 0


def _cmd_fit(args):
    seqs = read_arrivals_csv(args.data)
    spec = args.spec
    config = FitConfig(
        epochs=args.epochs, lr_drift=args.lr, lr_delta=args.lr_delta, K=args.k,
        n_steps=args.n_steps, delta_init=args.delta0,
        train_delta=not args.freeze_delta, lambda_reg=args.lambda_reg,
        resample_every=args.resample_every, seed=RngSeed(args.seed),
        interarrival_mode=args.gaps.replace("-", "_"),
        include_first=not args.drop_first)
    runner = fit_baseline_bridge if args.estimator == "bridge" else fit
    report = runner(list(seqs.values()), spec, config)
    save_checkpoint(report, spec, args.out, config)
    if args.loss_csv:
        with open(args.loss_csv, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "loss", "grad_norm", "penalty"])
            for i, (l, g) in enumerate(zip(report.loss_history,
                                           report.grad_norm_history)):
                w.writerow([i, repr(float(l)), repr(float(g)),
                            repr(report.diagnostics.get("final_penalty", 0.0))
                            if i == len(report.loss_history) - 1 else ""])
    print(json.dumps({"checkpoint": args.out,
                      "final_delta": report.final_delta,
                      "final_loss": float(report.loss_history[-1])
                      if len(report.loss_history) else None}))
    return 0


def _cmd_sample(args):
    spec, params, delta = load_checkpoint(args.checkpoint)
    rng = RngSeed(args.seed)
    seqs = sample_arrivals_until(spec, params, args.dt, args.horizon, args.sigma,
                                 delta, rng, args.n_arrivals, x0=args.x0,
                                 max_paths=args.max_paths)
    write_arrivals_csv(args.out, {str(i): a for i, a in enumerate(seqs)})
    total = sum(len(a) for a in seqs)
    print(json.dumps({"arrivals": total, "paths": len(seqs), "delta": delta}))
    return 0


def _cmd_eval(args):
    if args.stimulus:
        return _eval_stimulus(args)
    seqs_a = read_arrivals_csv(args.data_a)
    xa = _gaps(seqs_a, args.gaps)
    if args.data_b:
        xb = _gaps(read_arrivals_csv(args.data_b), args.gaps)
        bs = np.sort(xb)

        def ref_cdf(x):
            return np.searchsorted(bs, x, side="right") / bs.size

        def ref_q(l):
            return float(np.quantile(bs, l))
        n_b = xb.size
        w1 = w1_distance(xa, xb)
    else:
        ref_cdf, ref_q = _parse_reference(args.reference)
        gen = RngSeed(args.seed).generator()
        u = gen.random(max(xa.size, 2000))
        xb = np.asarray([ref_q(v) for v in u])
        n_b = xb.size
        w1 = w1_distance(xa, xb)
    ks = ks_statistic(xa, ref_cdf)
    qq = qq_points(xa, ref_q, args.n_quantiles)
    with open(args.qq_file, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["theoretical", "empirical"])
        for th, em in qq:
            w.writerow([repr(float(th)), repr(float(em))])
    doc = {"ks": ks, "w1": w1, "n_a": int(xa.size), "n_b": int(n_b),
           "qq_file": args.qq_file}
    with open(args.out, "w") as fh:
        json.dump(doc, fh, indent=1)
    print(json.dumps(doc))
    return 0


def _eval_stimulus(args):
    """Average sampled paths, align a*log(mean) + b to a reference signal."""
    spec, params, delta = load_checkpoint(args.checkpoint)
    ref_t, ref_v = [], []
    with open(args.signal, newline="") as fh:
        for row in csv.DictReader(fh):
            ref_t.append(float(row["t"]))
            ref_v.append(float(row["value"]))
    ref_t = np.asarray(ref_t)
    ref_v = np.asarray(ref_v)
    horizon = float(ref_t[-1])
    dt = args.dt
    grid = TimeGrid(0.0, dt, int(round(horizon / dt)))
    acc = np.zeros(grid.n_steps + 1)
    rng = RngSeed(args.seed)
    for m in range(args.paths):
        p = euler_maruyama(spec, params, [args.x0] * spec.input_dim, grid, args.sigma,
                           rng.child(m))
        acc += p.values[:, 0]
    mean_path = acc / args.paths
    z = np.log(np.maximum(np.interp(ref_t, grid.times(), mean_path), 1e-8))
    A = np.stack([z, np.ones_like(z)], axis=1)
    coef, *_ = np.linalg.lstsq(A, ref_v, rcond=None)
    aligned = A @ coef
    with open(args.out_aligned, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "aligned", "reference"])
        for i in range(ref_t.size):
            w.writerow([repr(float(ref_t[i])), repr(float(aligned[i])),
                        repr(float(ref_v[i]))])
    resid = float(np.linalg.norm(aligned - ref_v))
    doc = {"residual_norm": resid, "a": float(coef[0]), "b": float(coef[1]),
           "aligned_file": args.out_aligned}
    with open(args.out, "w") as fh:
        json.dump(doc, fh, indent=1)
    print(json.dumps(doc))
    return 0


def _cmd_intensity(args):
    spec, params, delta = load_checkpoint(args.checkpoint)
    t = np.arange(args.grid_dt, args.t_max + 0.5 * args.grid_dt, args.grid_dt)
    lam = conditional_intensity(spec, params, delta, t, args.k, RngSeed(args.seed))
    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "lambda"])
        for ti, li in zip(t, lam):
            w.writerow([repr(float(ti)), repr(float(li))])
    print(json.dumps({"points": int(t.size), "out": args.out}))
    return 0


# ---------------------------------------------------------------------------


def _build_parser():
    p = argparse.ArgumentParser(prog="diffexc",
                                description="Point processes from diffusion excursions")
    sub = p.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="simulate a path and its arrivals")
    sim.add_argument("--spec", type=_load_spec, required=True)
    sim.add_argument("--params", default=None,
                     help="comma-separated values (default zeros)")
    sim.add_argument("--x0", type=float, default=0.0)
    sim.add_argument("--dt", type=float, default=0.01)
    sim.add_argument("--horizon", type=float, default=10.0)
    sim.add_argument("--steps", type=int, default=0)
    sim.add_argument("--sigma", type=float, default=1.0)
    sim.add_argument("--delta", type=float, default=0.0)
    sim.add_argument("--seed", type=int, default=0)
    sim.add_argument("--out-path", default=None)
    sim.add_argument("--out-arrivals", default=None)
    sim.set_defaults(func=_cmd_simulate)

    ft = sub.add_parser("fit", help="fit a drift to arrival data")
    ft.add_argument("--data", type=_existing_file, required=True)
    ft.add_argument("--spec", type=_load_spec, required=True)
    ft.add_argument("--out", required=True)
    ft.add_argument("--loss-csv", default=None)
    ft.add_argument("--epochs", type=int, default=200)
    ft.add_argument("--lr", type=float, default=1e-3)
    ft.add_argument("--lr-delta", type=float, default=1e-2)
    ft.add_argument("--k", type=int, default=128)
    ft.add_argument("--n-steps", type=int, default=100)
    ft.add_argument("--delta0", type=float, default=None,
                    help="initial delta (default: closed-form MLE of the data)")
    ft.add_argument("--freeze-delta", action="store_true")
    ft.add_argument("--lambda-reg", type=float, default=1.0)
    ft.add_argument("--resample-every", type=int, default=1)
    ft.add_argument("--gaps", choices=["pooled", "per-mark"], default="pooled")
    ft.add_argument("--drop-first", action="store_true")
    ft.add_argument("--estimator", choices=["excursion", "bridge"],
                    default="excursion")
    ft.add_argument("--seed", type=int, default=0)
    ft.set_defaults(func=_cmd_fit)

    sp = sub.add_parser("sample", help="sample arrivals from a fitted drift")
    sp.add_argument("--checkpoint", type=_existing_file, required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--dt", type=float, default=1e-3)
    sp.add_argument("--horizon", type=float, default=50.0,
                    help="horizon per path")
    sp.add_argument("--n-arrivals", type=int, default=1000)
    sp.add_argument("--max-paths", type=int, default=256)
    sp.add_argument("--x0", type=float, default=0.0)
    sp.add_argument("--sigma", type=float, default=1.0)
    sp.add_argument("--seed", type=int, default=0)
    sp.set_defaults(func=_cmd_sample)

    ev = sub.add_parser("eval", help="compare arrival data (KS, W1, QQ)")
    ev.add_argument("--data-a", type=_existing_file)
    ev.add_argument("--data-b", type=_existing_file, default=None)
    ev.add_argument("--reference", default=None,
                    help="named reference, e.g. exponential:lam=1")
    ev.add_argument("--gaps", choices=["pooled", "per-mark"], default="per-mark")
    ev.add_argument("--n-quantiles", type=int, default=100)
    ev.add_argument("--qq-file", default="qq.csv")
    ev.add_argument("--out", default="metrics.json")
    ev.add_argument("--seed", type=int, default=0)
    ev.add_argument("--stimulus", action="store_true",
                    help="align averaged sampled paths to a reference signal")
    ev.add_argument("--checkpoint", type=_existing_file, default=None)
    ev.add_argument("--signal", type=_existing_file, default=None)
    ev.add_argument("--paths", type=int, default=64)
    ev.add_argument("--dt", type=float, default=0.01)
    ev.add_argument("--x0", type=float, default=0.0)
    ev.add_argument("--sigma", type=float, default=1.0)
    ev.add_argument("--out-aligned", default="aligned.csv")
    ev.set_defaults(func=_cmd_eval)

    it = sub.add_parser("intensity", help="conditional intensity on a grid")
    it.add_argument("--checkpoint", type=_existing_file, required=True)
    it.add_argument("--t-max", type=float, default=3.0)
    it.add_argument("--grid-dt", type=float, default=0.01)
    it.add_argument("--k", type=int, default=256)
    it.add_argument("--seed", type=int, default=0)
    it.add_argument("--out", default="intensity.csv")
    it.set_defaults(func=_cmd_intensity)
    return p


def _validate(args, parser):
    if args.command == "eval":
        if args.stimulus:
            if not (args.checkpoint and args.signal):
                parser.error("--stimulus needs --checkpoint and --signal")
        else:
            if not args.data_a:
                parser.error("eval needs --data-a")
            if (args.data_b is None) == (args.reference is None):
                parser.error("eval needs exactly one of --data-b or --reference")
    if args.command == "simulate" and not (args.out_path or args.out_arrivals):
        parser.error("simulate needs --out-path and/or --out-arrivals")


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    _validate(args, parser)
    _log_config(args.command, args)
    try:
        return args.func(args)
    except _RUNTIME_ERRORS as e:
        print(json.dumps({"error": type(e).__name__, "message": str(e)}),
              file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
