"""Command-line interface.

Every subcommand accepts ``--config FILE`` holding flat ``key=value`` lines
that mirror the long flags (``lr=0.5``, ``batch-bags=16``). Values from the
file are applied first, so explicit flags win.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import List, Optional

import pandas as pd

from .core import load_bags, load_csv, save_bags
from .exact import minimize
from .gradient import ParametricModel, TrainConfig, train
from .harness import SweepSpec, estimation_vs_learning, fit_rate, run_sweep, verdict_json, verify_suite, write_table
from .losses import LossRule
from .synthetic import INSTANCE_NAMES, get_problem

logger = logging.getLogger("llp")

BOOLEAN_KEYS = {"timing", "k-scaled"}


def _int_list(text: str) -> List[int]:
    return [int(v) for v in str(text).split(",") if v.strip()]


def _str_list(text: str) -> List[str]:
    return [v.strip() for v in str(text).split(",") if v.strip()]


def read_config(path) -> List[str]:
    """Translate a ``key=value`` file into command-line tokens."""
    tokens = []
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise SystemExit(f"{path}:{lineno}: expected key=value, got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        key = key.replace("_", "-")
        if key in BOOLEAN_KEYS:
            if value.lower() in ("1", "true", "yes", "on"):
                tokens.append(f"--{key}")
            elif value.lower() not in ("0", "false", "no", "off"):
                raise SystemExit(f"{path}:{lineno}: {key} expects a boolean, got {value!r}")
        else:
            tokens += [f"--{key}", value]
    return tokens


def _instance_params(args) -> dict:
    params = {}
    if getattr(args, "eps", None) is not None and args.instance == "eprm-expfail":
        params["eps"] = args.eps
    if getattr(args, "noise", None):
        params["noise"] = args.noise
    if getattr(args, "m", None) is not None:
        params["m"] = args.m
    if getattr(args, "gamma", None) is not None:
        params["gamma"] = args.gamma
    if getattr(args, "d", None) is not None:
        params["d"] = args.d
    return params


def _emit(obj, out: Optional[str]) -> None:
    text = json.dumps(obj, indent=1, sort_keys=True) + "\n"
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def _load_dataset(args):
    path = args.bags
    if path.endswith(".csv"):
        if not args.label_col:
            raise SystemExit("--label-col is required for CSV input")
        return load_csv(path, args.label_col, args.k, seed=args.seed)
    return load_bags(path)


def cmd_generate(args) -> int:
    problem = get_problem(args.instance, **_instance_params(args))
    D = problem.sample(_int_list(args.n)[0], args.k, args.seed)
    if not args.out:
        raise SystemExit("generate needs --out")
    save_bags(D, args.out, include_labels=not args.no_labels)
    logger.info("wrote %d bags of size %d to %s", D.n, D.k, args.out)
    return 0


def cmd_minimize(args) -> int:
    problem = get_problem(args.instance, **_instance_params(args))
    if problem.cls is None:
        raise SystemExit(f"instance {args.instance!r} has no finite class; use train")
    D = _load_dataset(args) if args.bags else problem.sample(_int_list(args.n)[0], args.k, args.seed)
    rule = LossRule(args.rule)
    if rule.tag == "EZ":
        rule = LossRule("EZ", p_mode=args.p_mode, p=problem.p if args.p_mode == "known" else None)
    res = minimize(rule, problem.cls, D)
    names = getattr(problem.cls, "names", None)
    out = {
        "instance": args.instance,
        "rule": str(rule),
        "k": D.k,
        "n": D.n,
        "chosen_index": res.best_index,
        "chosen_name": names[res.best_index] if names else None,
        "emp_risk": res.best_value,
        "tie_count": len(res.tie_set),
        "excess_risk": problem.excess_risk(res.best_index) if problem.risks is not None else None,
    }
    _emit(out, args.out)
    return 0


def cmd_train(args) -> int:
    if args.bags:
        D = _load_dataset(args)
        test = load_bags(args.test_bags) if args.test_bags else (D if D.has_labels else None)
    else:
        problem = get_problem("separable")
        D = problem.sample(_int_list(args.n)[0], args.k, args.seed)
        test = problem.sample(2000, args.k, args.seed + 1)
    cfg = TrainConfig(
        rule=args.rule,
        learning_rate=args.lr,
        batch_bags=args.batch_bags,
        epochs=args.epochs,
        beta=args.beta,
        seed=args.seed,
        p_mode=args.p_mode,
        p=args.p,
        k_scaled=args.k_scaled,
    )
    model = ParametricModel(D.feature_dim, args.hidden, seed=args.seed)
    model, trace = train(model, D, test, cfg)
    if args.model_out:
        model.save(args.model_out)
    text = trace.to_csv(timing=args.timing)
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    if trace.status != "ok":
        logger.warning("training %s", trace.status)
        return 2
    return 0


def _sweep_spec(args) -> SweepSpec:
    train_cfg = {"lr": args.lr, "epochs": args.epochs, "batch_bags": args.batch_bags, "beta": args.beta}
    return SweepSpec(
        instance=args.instance,
        rules=tuple(_str_list(args.rule)),
        k=args.k,
        n_grid=tuple(_int_list(args.n)),
        trials=args.trials,
        eps=args.eps if args.eps is not None else 0.05,
        delta=args.delta,
        seed_base=args.seed,
        p_mode=args.p_mode,
        params=_instance_params(args),
        train=train_cfg,
    )


def cmd_sweep(args) -> int:
    table = run_sweep(_sweep_spec(args), n_jobs=args.jobs, timing=args.timing)
    if args.out:
        write_table(table, args.out)
    else:
        table.to_csv(sys.stdout, index=False, lineterminator="\n")
    return 0


def cmd_rate_fit(args) -> int:
    table = pd.read_csv(args.input)
    fits = {}
    for rule, group in table.groupby("rule", sort=True):
        try:
            fits[rule] = fit_rate(group, seed=args.seed).as_dict()
        except ValueError as exc:
            fits[rule] = {"error": str(exc)}
    _emit(fits, args.out)
    return 0


def cmd_verify(args) -> int:
    report = verify_suite(args.seed, faults=tuple(args.inject or ()))
    text = verdict_json(report)
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return 0 if report["passed"] else 1


def cmd_estimation_gap(args) -> int:
    _emit(estimation_vs_learning(trials=args.trials, seed=args.seed), args.out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="llp", description="Learning from label proportions: experiments and checks.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, n_default="500"):
        p.add_argument("--config", help="key=value file of default flags")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--out", help="output path; format follows the extension")
        p.add_argument("--k", type=int, default=7)
        p.add_argument("--n", default=n_default, help="bag count (comma list for sweeps)")

    def instance(p, default="prop32"):
        p.add_argument("--instance", default=default, choices=INSTANCE_NAMES)
        p.add_argument("--eps", type=float, help="bias of the eprm-expfail instance; target accuracy for sweeps")
        p.add_argument("--noise", type=float, default=0.0, help="label flip rate for the threshold instance")
        p.add_argument("--m", type=int, help="threshold grid size")
        p.add_argument("--gamma", type=float, help="lower-bound family margin")
        p.add_argument("--d", type=int, help="lower-bound family dimension")

    def trainer(p):
        p.add_argument("--lr", type=float, default=1.0)
        p.add_argument("--epochs", type=int, default=200)
        p.add_argument("--batch-bags", type=int, default=16)
        p.add_argument("--beta", type=float, default=0.9)

    p = sub.add_parser("generate", help="sample an instance and write a bag file")
    common(p)
    instance(p)
    p.add_argument("--no-labels", action="store_true", help="omit instance labels")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("minimize", help="run a learning rule over a finite class")
    common(p)
    instance(p)
    p.add_argument("--rule", default="PM_SQ")
    p.add_argument("--p-mode", default="known", choices=("known", "plugin", "split"))
    p.add_argument("--bags", help="read bags from a .jsonl or .csv file instead of sampling")
    p.add_argument("--label-col")
    p.set_defaults(func=cmd_minimize)

    p = sub.add_parser("train", help="train a sigmoid model with a gradient rule")
    common(p)
    trainer(p)
    p.add_argument("--rule", default="PM.Sq")
    p.add_argument("--p-mode", default="plugin", choices=("known", "plugin", "split"))
    p.add_argument("--p", type=float)
    p.add_argument("--k-scaled", action="store_true")
    p.add_argument("--hidden", type=int, help="ReLU hidden units (default: linear model)")
    p.add_argument("--bags", help="training bags (.jsonl or .csv); default samples the separable task")
    p.add_argument("--label-col")
    p.add_argument("--test-bags", help="labelled bags for per-epoch 0-1 error")
    p.add_argument("--model-out", help="write the trained parameters as JSON")
    p.add_argument("--timing", action="store_true", help="record wall times in the trace")
    p.set_defaults(func=cmd_train, k=10)

    p = sub.add_parser("sweep", help="sample-complexity sweep over a grid of n")
    common(p, n_default="128,256,512")
    instance(p)
    trainer(p)
    p.add_argument("--rule", default="PM_SQ", help="comma list of rules")
    p.add_argument("--trials", type=int, default=20)
    p.add_argument("--delta", type=float, default=0.05)
    p.add_argument("--p-mode", default="known", choices=("known", "plugin", "split"))
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--timing", action="store_true", help="fill wall_ms (breaks byte-identical reruns)")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("rate-fit", help="fit log-log slopes to a sweep CSV")
    p.add_argument("--config")
    p.add_argument("input", help="sweep CSV")
    p.add_argument("--seed", type=int, default=0, help="bootstrap seed")
    p.add_argument("--out")
    p.set_defaults(func=cmd_rate_fit)

    p = sub.add_parser("verify", help="run the built-in property checks")
    p.add_argument("--config")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.add_argument("--inject", action="append", choices=("dsq-bias-sign", "ez-wrong-p"), help="inject a known fault")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("estimation-gap", help="estimation vs learning rates on the two-point instance")
    p.add_argument("--config")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--trials", type=int, default=400)
    p.add_argument("--out")
    p.set_defaults(func=cmd_estimation_gap)
    return parser


def _expand_config(argv: List[str]) -> List[str]:
    """Splice config-file tokens in right after the subcommand."""
    for i, tok in enumerate(argv):
        if tok == "--config" and i + 1 < len(argv):
            path, rest = argv[i + 1], argv[:i] + argv[i + 2 :]
        elif tok.startswith("--config="):
            path, rest = tok.split("=", 1)[1], argv[:i] + argv[i + 1 :]
        else:
            continue
        cmd_pos = next((j for j, t in enumerate(rest) if not t.startswith("-")), len(rest))
        return rest[: cmd_pos + 1] + read_config(path) + rest[cmd_pos + 1 :]
    return argv


def main(argv: Optional[List[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    args = build_parser().parse_args(_expand_config(argv))
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ValueError, TypeError, MemoryError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
