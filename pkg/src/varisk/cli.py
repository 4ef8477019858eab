"""``varisk`` command line.

Exit status: 0 success, 1 usage error, 2 data/validation error,
3 infeasible instance.  Failures print one JSON line to stderr.
"""
from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from . import dataset as ds
from .estimators import PolicyNetRegressor, decode_prediction, train
from .inventory import InventoryParams, build_inventory_mdp, feature_bounds
from .mdp import induce_chain, mdp_from_dict, policy_at, validate_mdp
from .nn import AdamState, model_from_dict, model_to_dict
from .risk import (Objective, RiskSpec, optimize, policy_moments, ratio_gt,
                   var_function, var_threshold)
from .sim import SimConfig, simulate_stats

EXIT_USAGE, EXIT_DATA, EXIT_INFEASIBLE = 1, 2, 3


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _read_json(path):
    with open(path) as fh:
        return json.load(fh)


def _emit(text: str, path: str | None):
    if path:
        with open(path, "w", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def load_instance(path):
    """Instance JSON is either an MDP document or inventory parameters."""
    doc = _read_json(path)
    if "states" in doc:
        m = mdp_from_dict(doc)
        params = None
    elif "p_r" in doc:
        params = InventoryParams.from_dict(doc)
        m = build_inventory_mdp(params)
    else:
        raise DataError("instance JSON is neither an MDP nor inventory parameters")
    report = validate_mdp(m)
    if not report.ok:
        shown = "; ".join(str(v) for v in report.violations[:5])
        raise DataError(f"invalid MDP ({len(report.violations)} violations): {shown}")
    return m, params, doc


def _risk_spec(args, params, doc) -> RiskSpec:
    spec = RiskSpec.from_dict(doc["risk"]) if "risk" in doc else None
    if args.objective:
        objective = Objective(args.objective, args.param)
    elif args.alpha is not None:
        objective = var_threshold(args.alpha)
    elif spec is not None:
        objective = spec.objective
    elif params is not None:
        objective = var_threshold(params.alpha)
    else:
        raise DataError("no objective: pass --alpha/--objective or add 'risk' to the instance")
    if args.q is not None:
        constraints = (ratio_gt(args.q),)
    elif spec is not None:
        constraints = spec.constraints
    else:
        constraints = (ratio_gt(0.0),)
    maximize = (args.sense == "max") if args.sense else (spec.maximize if spec else True)
    return RiskSpec(objective, tuple(constraints), maximize)


def cmd_solve(args) -> int:
    m, params, doc = load_instance(args.instance)
    spec = _risk_spec(args, params, doc)
    rep = optimize(m, spec, args.method)
    _emit(json.dumps(rep.to_dict(m, records=args.records), indent=2) + "\n", args.out)
    return EXIT_INFEASIBLE if rep.infeasible else 0


def cmd_var_function(args) -> int:
    m, _, _ = load_instance(args.instance)
    E, V = policy_moments(m, args.method)
    sd = np.sqrt(V)
    lo = args.tau_min if args.tau_min is not None else float(np.min(E - 4 * sd))
    hi = args.tau_max if args.tau_max is not None else float(np.max(E + 4 * sd))
    if hi < lo or args.points < 1:
        raise UsageError("need tau-min <= tau-max and points >= 1")
    grid = np.linspace(lo, hi, args.points)
    rows = var_function(list(zip(E, V)), grid)
    _emit("tau,p\n" + "".join(f"{t:.17g},{p:.17g}\n" for t, p in rows), args.out)
    return 0


def cmd_gen_data(args) -> int:
    doc = _read_json(args.config) if args.config else {}
    for key, flag in (("n", args.n), ("M", args.M), ("seed", args.seed), ("gamma", args.gamma),
                      ("q", args.q), ("label_mode", args.label_mode),
                      ("max_resample_attempts", args.max_resample)):
        if flag is not None:
            doc[key] = flag
    for key in ("n", "seed"):
        if key not in doc:
            raise UsageError(f"--{key} is required (flag or config)")
    cfg = ds.GenConfig.from_dict(doc)
    rows, report = ds.generate_dataset(cfg, threads=args.threads)
    with open(args.out, "w", newline="") as fh:
        ds.write_dataset(rows, cfg.M, cfg.label_mode, fh)
    if args.report:
        _emit(ds.report_json(report) + "\n", args.report)
    return 0


def estimator_to_dict(est: PolicyNetRegressor) -> dict:
    codec = est.policy_decoder
    extra = {"label_codec": {"M": codec.M, "mode": codec.mode} if codec else None,
             "training": {"epochs": est.epochs, "batch_size": est.batch_size,
                          "validation_fraction": est.validation_fraction,
                          "random_state": est.random_state,
                          "hidden_layer_sizes": list(est.hidden_layer_sizes)}}
    adam = AdamState(est.learning_rate, est.beta1, est.beta2, est.epsilon).config()
    return model_to_dict(est.model_, adam=adam, extra=extra)


def estimator_from_dict(doc: dict) -> PolicyNetRegressor:
    model = model_from_dict(doc)
    codec = doc.get("label_codec")
    est = PolicyNetRegressor(hidden_layer_sizes=tuple(model.dims[1:-1]),
                             policy_decoder=ds.LabelCodec(codec["M"], codec["mode"])
                             if codec else None)
    est.model_ = model
    est.n_features_in_ = model.dims[0]
    return est


def cmd_train(args) -> int:
    with open(args.data) as fh:
        X, Y, codec = ds.read_dataset(fh)
    hidden = tuple(int(h) for h in args.hidden.split(",") if h)
    est = train(X, Y, validation_fraction=args.val_frac, epochs=args.epochs,
                batch_size=args.batch_size, seed=args.seed, codec=codec, hidden=hidden,
                feature_bounds=feature_bounds(codec.M), learning_rate=args.lr)
    _emit(json.dumps(estimator_to_dict(est), indent=1) + "\n", args.out)
    if args.history:
        _emit(est.history_.to_csv(), args.history)
    return 0


def cmd_predict(args) -> int:
    est = estimator_from_dict(_read_json(args.model))
    if args.features:
        rows = [[float(v) for v in args.features.split(",")]]
    else:
        data = _read_json(args.features_file)
        rows = data if data and isinstance(data[0], list) else [data]
    raw = est.predict(np.array(rows, float))
    codec = est.policy_decoder
    out = [decode_prediction(r, codec).to_dict(codec) if codec else
           {"raw": [float(v) for v in r]} for r in raw]
    _emit(json.dumps(out[0] if len(out) == 1 else out, indent=2) + "\n", args.out)
    return 0


def cmd_simulate(args) -> int:
    m, _, _ = load_instance(args.instance)
    if not 0 <= args.policy_index < m.n_policies:
        raise DataError(f"policy index {args.policy_index} outside [0, {m.n_policies})")
    chain = induce_chain(m, policy_at(m, args.policy_index))
    rep = simulate_stats(chain, SimConfig(args.episodes, args.tail_epsilon, args.seed))
    doc = {"policy_index": args.policy_index, "seed": args.seed, **rep.to_dict()}
    _emit(json.dumps(doc, indent=2) + "\n", args.out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="varisk", description="Risk-sensitive tabular MDP toolkit.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def risk_flags(sp):
        sp.add_argument("--instance", required=True, help="MDP or inventory-parameter JSON")
        sp.add_argument("--method", choices=("direct", "sat"), default="direct")

    sp = sub.add_parser("solve", help="optimal risk value and policy for one instance")
    risk_flags(sp)
    sp.add_argument("--alpha", type=float, help="VaR level; objective var_threshold(alpha)")
    sp.add_argument("--q", type=float, help="constraint E/V > q (default 0)")
    sp.add_argument("--objective", choices=("var_threshold", "var_quantile", "exp_utility",
                                            "mean_sd", "mean"))
    sp.add_argument("--param", type=float, help="parameter for --objective")
    sp.add_argument("--sense", choices=("max", "min"))
    sp.add_argument("--records", action="store_true", help="include per-policy records")
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_solve)

    sp = sub.add_parser("var-function", help="VaR function curve as CSV (tau,p)")
    risk_flags(sp)
    sp.add_argument("--tau-min", type=float)
    sp.add_argument("--tau-max", type=float)
    sp.add_argument("--points", type=int, default=201)
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_var_function)

    sp = sub.add_parser("gen-data", help="generate a labelled dataset CSV")
    sp.add_argument("--config", help="GenConfig JSON; flags override its fields")
    sp.add_argument("--n", type=int)
    sp.add_argument("--M", type=int)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--gamma", type=float)
    sp.add_argument("--q", type=float)
    sp.add_argument("--label-mode", choices=ds.LABEL_MODES)
    sp.add_argument("--max-resample", type=int)
    sp.add_argument("--threads", type=int, default=1)
    sp.add_argument("--out", required=True)
    sp.add_argument("--report")
    sp.set_defaults(func=cmd_gen_data)

    sp = sub.add_parser("train", help="train the policy network on a dataset CSV")
    sp.add_argument("--data", required=True)
    sp.add_argument("--out", required=True, help="model JSON")
    sp.add_argument("--history", help="per-epoch loss CSV")
    sp.add_argument("--seed", type=int, required=True)
    sp.add_argument("--epochs", type=int, default=50)
    sp.add_argument("--batch-size", type=int, default=50)
    sp.add_argument("--val-frac", type=float, default=0.2)
    sp.add_argument("--lr", type=float, default=1e-3)
    sp.add_argument("--hidden", default="12,8", help="comma-separated hidden widths")
    sp.add_argument("--threads", type=int, default=1, help="accepted; training is sequential")
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("predict", help="predict risk and policy from features")
    sp.add_argument("--model", required=True)
    g = sp.add_mutually_exclusive_group(required=True)
    g.add_argument("--features", help="comma-separated feature vector")
    g.add_argument("--features-file", help="JSON vector or list of vectors")
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_predict)

    sp = sub.add_parser("simulate", help="Monte-Carlo return statistics for one policy")
    sp.add_argument("--instance", required=True)
    sp.add_argument("--policy-index", type=int, required=True)
    sp.add_argument("--seed", type=int, required=True)
    sp.add_argument("--episodes", type=int, default=200_000)
    sp.add_argument("--tail-epsilon", type=float, default=1e-6)
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_simulate)
    return p


def _fail(kind: str, reason, code: int) -> int:
    sys.stderr.write(json.dumps({"error": kind, "reason": str(reason)}) + "\n")
    return code


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        return _fail("usage", exc, EXIT_USAGE)
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    except ds.ResampleExhausted as exc:
        return _fail("infeasible", exc, EXIT_INFEASIBLE)
    except (DataError, ValueError, KeyError, TypeError, OSError, ArithmeticError) as exc:
        return _fail("data", exc, EXIT_DATA)


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
