"""Command-line interface.

Exit codes: 0 success, 1 validation error, 2 numerical/training error,
3 I/O error.
"""

import argparse
import json
import logging
import os
import sys
from dataclasses import replace

import numpy as np

from . import data, kernels, persist
from .errors import MTOCError
from .experiment import (
    DEFAULT_GRID,
    ExperimentConfig,
    cross_validate_gamma,
    evaluate_model,
    run_experiment,
    sweep_regularization,
    train_model,
)
from .gradcheck import CHECKS, FAIL_LINE, gradcheck
from .model import LINEAR, NONLINEAR, SPARSE, VARIANTS
from .nonlinear import training_responses

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERICAL, EXIT_IO = 0, 1, 2, 3


def _config(args):
    overrides = {"seed": args.seed, "workers": args.workers}
    if getattr(args, "variant", None):
        overrides["variant"] = args.variant
    if args.config:
        return ExperimentConfig.from_file(args.config, **overrides)
    cfg = ExperimentConfig()
    return replace(cfg, **{k: v for k, v in overrides.items() if v is not None}).validate()


def _out_dir(args):
    os.makedirs(args.out_dir, exist_ok=True)
    return args.out_dir


def cmd_synth(args):
    rho = [float(r) for r in args.rho.split(",")]
    bundle = data.synth_tasks(
        args.tasks, args.n_per_task, args.dim, rho if len(rho) > 1 else rho[0],
        args.seed or 0,
    )
    path = os.path.join(_out_dir(args), args.name)
    data.write_csv(bundle, path)
    print(path)


def _select_gamma(cfg, bundle, args):
    if not args.cv_folds:
        return cfg
    gamma, errors = cross_validate_gamma(cfg, bundle, k=args.cv_folds)
    for g, e in errors.items():
        print(f"cv gamma={g:g}: held-out squared error {e:.6g}")
    print(f"selected gamma={gamma:g}")
    return replace(cfg, gamma=gamma)


def cmd_train(args):
    cfg = _config(args)
    bundle = data.load_csv(args.data)
    cfg = _select_gamma(cfg, bundle, args)
    model = train_model(cfg, bundle)
    path = os.path.join(_out_dir(args), f"{cfg.variant}.mtoc")
    persist.persist_model(model, path)
    q = model.trace.objective
    msg = f"saved {path}"
    if q:
        msg += f" (objective {q[0]:.6g} -> {q[-1]:.6g} in {model.trace.iterations} iterations)"
    print(msg)


def cmd_eval(args):
    bundle = data.load_csv(args.data)
    if args.model:
        model = persist.load_model(args.model)
        aucs = evaluate_model(model, bundle)
        for t, a in enumerate(aucs):
            print(f"task {t}: AUC {a:.4f}")
        print(f"mean AUC {np.mean(aucs):.4f}")
        return
    cfg = _select_gamma(_config(args), bundle, args)
    table = run_experiment(cfg, bundle, out_dir=_out_dir(args))
    for variant, m in table.means().items():
        print(f"{variant}: mean AUC {m:.4f}")
    if table.failures:
        print(f"{len(table.failures)} result rows failed", file=sys.stderr)
        return EXIT_NUMERICAL


def cmd_sweep(args):
    cfg = _config(args)
    bundle = data.load_csv(args.data)
    grid = [float(g) for g in args.grid.split(",")] if args.grid else DEFAULT_GRID
    variants = args.variants.split(",") if args.variants else [cfg.variant]
    _, curves = sweep_regularization(cfg, bundle, grid, variants, out_dir=_out_dir(args))
    for c in curves:
        print(f"gamma={c['gamma']:g} {c['variant']}: AUC {c['mean_auc']:.4f} SSE {c['sse']:.4g}")


def cmd_gradcheck(args):
    checks = CHECKS if args.check == "all" else [args.check]
    worst = 0.0
    for check in checks:
        rep = gradcheck(check, args.n, args.tasks, args.seed or 0, args.h, zero=args.zero)
        status = "skipped" if rep.skipped else ("ok" if rep.passed else "FAIL")
        print(f"{check}: max relative error {rep.max_rel_error:.3e} [{status}]")
        for note in rep.notes:
            print(f"  note: {note}")
        worst = max(worst, rep.max_rel_error)
    return EXIT_OK if worst < FAIL_LINE else EXIT_NUMERICAL


def cmd_export(args):
    """Write a model's matrices as CSV plus a JSON summary."""
    model = persist.load_model(args.model)
    out = _out_dir(args)
    mats = {"A": model.A}
    if model.variant == LINEAR:
        mats.update(B=model.B, C=model.C)
    elif model.variant in (NONLINEAR, SPARSE):
        E, _ = kernels.pairwise_sq_dist(model.Y)
        mats.update(B=model.B, Y=model.Y, J=np.exp(-model.theta * E))
        mats["JB"] = training_responses(model)
    for name, M in mats.items():
        np.savetxt(os.path.join(out, f"{name}.csv"), M, delimiter=",", fmt="%.17g")
    summary = {
        "variant": model.variant,
        "sigma": model.sigma,
        "theta": model.theta,
        "target_means": None if model.target_means is None else model.target_means.tolist(),
        "fingerprint": model.fingerprint,
        "trace": model.trace.to_dict(),
    }
    with open(os.path.join(out, "model.json"), "w") as fh:
        json.dump(summary, fh, indent=1, sort_keys=True)
    print(f"exported {', '.join(sorted(mats))} to {out}")


def build_parser():
    p = argparse.ArgumentParser(prog="mtocc", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="INI-style key-value config file")
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--out-dir", default=".")
        sp.add_argument("--workers", type=int, default=None)

    sp = sub.add_parser("synth", help="generate a synthetic multi-task dataset CSV")
    common(sp)
    sp.add_argument("--tasks", type=int, default=5)
    sp.add_argument("--n-per-task", type=int, default=15)
    sp.add_argument("--dim", type=int, default=5)
    sp.add_argument("--rho", default="0.8", help="relatedness, or comma list per task")
    sp.add_argument("--name", default="synth.csv")
    sp.set_defaults(func=cmd_synth)

    sp = sub.add_parser("train", help="train one variant and save the model")
    common(sp)
    sp.add_argument("--data", required=True)
    sp.add_argument("--variant", choices=VARIANTS)
    sp.add_argument("--cv-folds", type=int, help="choose gamma by k-fold cross-validation")
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("eval", help="run an experiment, or score a saved model")
    common(sp)
    sp.add_argument("--data", required=True)
    sp.add_argument("--variant", choices=VARIANTS)
    sp.add_argument("--model", help="evaluate this saved model instead of training")
    sp.add_argument("--cv-folds", type=int, help="choose gamma by k-fold cross-validation")
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("sweep", help="first-layer regularisation sweep")
    common(sp)
    sp.add_argument("--data", required=True)
    sp.add_argument("--variant", choices=VARIANTS)
    sp.add_argument("--variants", help="comma-separated variants (default: config variant)")
    sp.add_argument("--grid", help="comma-separated gamma values")
    sp.set_defaults(func=cmd_sweep)

    sp = sub.add_parser("gradcheck", help="finite-difference gradient verification")
    common(sp)
    sp.add_argument("--check", choices=CHECKS + ("all",), default="all")
    sp.add_argument("-n", type=int, default=10)
    sp.add_argument("--tasks", type=int, default=3)
    sp.add_argument("--h", type=float, default=1e-6)
    sp.add_argument("--zero", action="store_true", help="use the all-zero instance")
    sp.set_defaults(func=cmd_gradcheck)

    sp = sub.add_parser("export", help="dump a saved model's matrices to CSV")
    common(sp)
    sp.add_argument("--model", required=True)
    sp.set_defaults(func=cmd_export)
    return p


def main(argv=None):
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(message)s")
    args = build_parser().parse_args(argv)
    try:
        code = args.func(args)
    except MTOCError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK if code is None else code


if __name__ == "__main__":
    sys.exit(main())
