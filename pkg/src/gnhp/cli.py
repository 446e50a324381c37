"""Command line: simulate, fit, select, influence, replicate.

Progress goes to stderr; results go only to files. Exit codes: 0 success,
2 data error, 3 infeasible or unstable model, 4 no convergence.
"""

import argparse
import csv
import json
import logging
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor

import numpy as np
from scipy.stats import norm

from .estimate import FitConfig, fit
from .influence import influence_report
from .metrics import (
    group_accuracy,
    matched_errors,
    parameter_permutation,
    pd_baseline,
    pd_parameter,
    pd_transition,
)
from .model import EventData, GnhpModel, InfeasibleModelError
from .network import InstabilityError, Network, build_transition, generate_power_law, generate_sbm, transition_from_arrays
from .presets import PRESETS, preset_model
from .select import select_groups
from .simulate import simulate_branching, simulate_thinning

log = logging.getLogger("gnhp")

EXIT_OK, EXIT_DATA, EXIT_MODEL, EXIT_CONVERGENCE = 0, 2, 3, 4


class DataError(Exception):
    pass


# ----------------------------------------------------------------------
# helpers


def read_config(path):
    """key=value lines (``#`` comments allowed) or a JSON object."""
    if path is None:
        return {}
    with open(path) as fh:
        text = fh.read()
    if text.lstrip().startswith("{"):
        return json.loads(text)
    out = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise DataError(f"{path}:{n}: expected key=value")
        k, v = line.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def make_config(args, extra=None):
    mapping = read_config(getattr(args, "config", None))
    for key in ("n_starts", "seed", "num_basis", "period", "truncation", "tol", "max_iter"):
        val = getattr(args, key, None)
        if val is not None:
            mapping[key] = val
    mapping.update(extra or {})
    try:
        return FitConfig.from_mapping(mapping)
    except (TypeError, ValueError) as exc:
        raise DataError(str(exc)) from exc


def out_path(args, name):
    os.makedirs(args.out_dir, exist_ok=True)
    return os.path.join(args.out_dir, name)


def load_inputs(args):
    for p in (args.events, args.edges):
        if not os.path.exists(p):
            raise DataError(f"no such file: {p}")
    try:
        net = Network.from_csv(args.edges, args.m)
        data = EventData.from_csv(args.events, net.m, args.T, args.period)
    except (KeyError, ValueError) as exc:
        raise DataError(str(exc)) from exc
    if data.n_events == 0:
        raise DataError("the events file is empty")
    return net, data


def write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)


def model_document(result):
    d = result.model.to_dict()
    if result.refinement is not None:
        d["refined_phi_row"] = result.refinement.varphi_row.tolist()
    return d


def write_baselines(path, model, minutes=1.0):
    grid = np.arange(0.0, model.period, minutes / 60.0)
    mu = model.baseline.evaluate(grid)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "group", "mu"])
        for g in range(model.n_groups):
            for t, v in zip(grid, mu[g]):
                w.writerow([f"{t:.6f}", g, f"{v:.10g}"])


def write_se_table(path, model, inference):
    est = np.concatenate([model.theta().ravel(), model.phi.ravel()])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["parameter", "estimate", "se", "z", "p_value"])
        for name, e, s in zip(inference.names, est, inference.standard_errors):
            z = e / s if s > 0 and np.isfinite(s) else float("nan")
            p = 2.0 * norm.sf(abs(z)) if np.isfinite(z) else float("nan")
            w.writerow([name, f"{e:.10g}", f"{s:.10g}", f"{z:.6g}", f"{p:.6g}"])


def build_network(kind, m, rng, edges=None):
    if edges is not None:
        return Network.from_csv(edges, m)
    if kind == "sbm":
        return generate_sbm(m, rng=rng)[0]
    if kind == "power-law":
        return generate_power_law(m, rng=rng)
    raise DataError(f"unknown network kind {kind!r}")


# ----------------------------------------------------------------------
# subcommands


def cmd_simulate(args):
    rng = np.random.default_rng(args.seed)
    if args.model:
        truth = GnhpModel.from_json(args.model)
        m = truth.m
    else:
        m = args.m
        truth = None
    net = build_network(args.network, m, rng, args.edges)
    if truth is None:
        truth = preset_model(args.preset, m=net.m, rng=rng, period=args.period, truncation=args.truncation)
    if truth.m != net.m:
        raise DataError("model membership length differs from the network size")
    sim = simulate_branching if args.method == "branching" else simulate_thinning
    out = sim(truth, net, args.T, rng)
    if not args.provenance:
        out.parent_node = None
    out.to_csv(out_path(args, "events.csv"))
    net.to_csv(out_path(args, "edges.csv"))
    truth.to_json(out_path(args, "truth.json"))
    log.info("simulated %d events on %d nodes", out.data.n_events, net.m)
    return EXIT_OK


def cmd_fit(args):
    net, data = load_inputs(args)
    config = make_config(args)
    result = fit(net, data, args.groups, config)
    write_json(out_path(args, "model.json"), model_document(result))
    diag = result.diagnostics()
    if args.truth:
        truth = GnhpModel.from_json(args.truth)
        diag["gar"] = group_accuracy(result.membership, truth.membership,
                                     max(args.groups, truth.n_groups), max(args.groups, truth.n_groups))
    write_json(out_path(args, "diagnostics.json"), diag)
    write_baselines(out_path(args, "baseline.csv"), result.model)
    if result.inference is not None:
        write_se_table(out_path(args, "se.csv"), result.model, result.inference)
    log.info("G=%d loglik=%.6f converged=%s", args.groups, result.loglik, result.converged)
    return EXIT_OK if result.converged else EXIT_CONVERGENCE


def cmd_select(args):
    net, data = load_inputs(args)
    config = make_config(args)
    res = select_groups(net, data, args.g_min, args.g_max, config, variant=args.penalty)
    res.to_csv(out_path(args, "lic.csv"))
    best = res.fit_for(res.chosen)
    write_json(out_path(args, "model.json"), model_document(best))
    write_json(out_path(args, "diagnostics.json"),
               {"chosen": res.chosen, "lambda": res.lam, "flags": res.flags, "fit": best.diagnostics()})
    log.info("selected G=%d", res.chosen)
    converged = all(r.converged for r in res.rows if r.fit is not None)
    return EXIT_OK if converged else EXIT_CONVERGENCE


def cmd_influence(args):
    with open(args.model) as fh:
        doc = json.load(fh)
    model = GnhpModel.from_dict(doc)
    net = Network.from_csv(args.edges, model.m)
    if net.m != model.m:
        raise DataError("model membership length differs from the network size")
    g = model.membership
    if "refined_phi_row" in doc:
        row = np.asarray(doc["refined_phi_row"], np.int64)
        src = np.repeat(np.arange(net.m), net.out_degree)
        B = transition_from_arrays(net, model.beta[g], model.phi[row[src], g[net.out_idx]])
    else:
        B = build_transition(net, model)
    grid = np.arange(0.0, model.period, args.grid_minutes / 60.0)
    rep = influence_report(model, net, B, g, grid)
    rep.ranking_to_csv(out_path(args, "ranking.csv"))
    rep.curves_to_csv(out_path(args, "gif.csv"))
    for i, grp, val in rep.top(args.top):
        log.info("node %d (group %d): %.4f", i, grp, val)
    return EXIT_OK


# replicate ------------------------------------------------------------


def _replicate_one(task):
    k, seed_seq, opts = task
    rng = np.random.default_rng(seed_seq)
    net = build_network(opts["network"], opts["m"], rng)
    truth = preset_model(opts["preset"], m=net.m, rng=rng, period=opts["period"])
    sim = simulate_branching(truth, net, opts["T"], rng)
    config = FitConfig.from_mapping(opts["config"])
    row = {"replicate": k, "events": sim.data.n_events}
    if opts["g_range"]:
        lo, hi = opts["g_range"]
        sel = select_groups(net, sim.data, lo, hi, config)
        row["G_hat"] = sel.chosen
        res = sel.fit_for(opts["groups"]) if lo <= opts["groups"] <= hi else sel.fit_for(sel.chosen)
    else:
        res = fit(net, sim.data, opts["groups"], config)
    est = res.model
    G = est.n_groups
    row["gar"] = group_accuracy(est.membership, truth.membership, max(G, 3), max(G, 3))
    row["pd_beta"] = pd_parameter(est, truth, "beta")
    row["pd_eta"] = pd_parameter(est, truth, "eta")
    row["pd_gamma"] = pd_parameter(est, truth, "gamma")
    row["pd_mu"] = pd_baseline(est, truth)
    row["pd_B"] = pd_transition(res.refined_transition, build_transition(net, truth), net)
    if G == truth.n_groups:
        perm = parameter_permutation(est, truth)
        err = matched_errors(est, truth, perm)
        for name in ("beta", "eta", "gamma"):
            for g in range(G):
                row[f"err_{name}_{g}"] = float(err[name][g])
        for a in range(G):
            for b in range(G):
                row[f"err_phi_{a}{b}"] = float(err["phi"][a, b])
        if res.inference is not None:
            se = res.inference.standard_errors[: 3 * G].reshape(G, 3)[perm]
            th_err = np.column_stack([err["beta"], err["eta"], err["gamma"]])
            cover = np.abs(th_err) <= norm.ppf(0.975) * se
            for j, name in enumerate(("beta", "eta", "gamma")):
                for g in range(G):
                    row[f"cover_{name}_{g}"] = int(cover[g, j])
    return row


def summarize(rows, truth_groups=3):
    summary = []
    keys = sorted({k for r in rows for k in r})
    for key in keys:
        vals = np.array([r[key] for r in rows if key in r], float)
        if key.startswith("err_"):
            summary.append(("rmse_" + key[4:], float(np.sqrt(np.mean(vals ** 2)))))
        elif key.startswith("cover_"):
            summary.append((key, float(np.mean(vals))))
        elif key.startswith("pd_"):
            summary.append((key, float(np.median(vals))))
        elif key in ("gar", "events"):
            summary.append((key, float(np.mean(vals))))
        elif key == "G_hat":
            for G in sorted(set(vals.astype(int))):
                summary.append((f"SR({G})", float(np.mean(vals == G))))
    summary.append(("replicates", float(len(rows))))
    return summary


def cmd_replicate(args):
    if args.preset not in PRESETS:
        raise DataError(f"unknown preset {args.preset!r}")
    cfg = read_config(args.config)
    cfg.setdefault("n_starts", args.n_starts)
    cfg["seed"] = args.seed
    opts = dict(network=args.network, m=args.m, T=args.T, preset=args.preset, period=args.period,
                groups=args.groups, g_range=args.g_range, config=cfg)
    seeds = np.random.SeedSequence(args.seed).spawn(args.K)
    tasks = [(k, s, opts) for k, s in enumerate(seeds)]
    rows, failed = [], 0
    if args.workers > 1:
        with ProcessPoolExecutor(args.workers) as pool:
            results = list(pool.map(_safe_replicate, tasks))
    else:
        results = [_safe_replicate(t) for t in tasks]
    for r in results:
        if isinstance(r, str):
            failed += 1
            log.warning("replicate failed: %s", r)
        else:
            rows.append(r)
    if not rows:
        raise DataError("every replicate failed")
    keys = sorted({k for r in rows for k in r}, key=lambda k: (k != "replicate", k))
    with open(out_path(args, "replicates.csv"), "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=keys)
        w.writeheader()
        for r in rows:
            w.writerow(r)
    with open(out_path(args, "summary.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["metric", "value"])
        for k, v in summarize(rows):
            w.writerow([k, f"{v:.10g}"])
        w.writerow(["failed", failed])
    return EXIT_OK


def _safe_replicate(task):
    try:
        return _replicate_one(task)
    except (InstabilityError, InfeasibleModelError, ValueError, RuntimeError) as exc:
        return f"replicate {task[0]}: {exc}"


# ----------------------------------------------------------------------
# parser


def _common_fit_args(p):
    p.add_argument("--events", required=True, help="events CSV (node,time[,...])")
    p.add_argument("--edges", required=True, help="edges CSV (src,dst)")
    p.add_argument("--T", type=float, required=True, help="observation horizon in hours")
    p.add_argument("--m", type=int, help="number of nodes (default: largest id in edges + 1)")
    p.add_argument("--period", type=float, default=12.0, help="baseline period in hours")
    p.add_argument("--truncation", type=float, help="kernel truncation b in hours")
    p.add_argument("--num-basis", dest="num_basis", type=int, help="spline basis size")
    p.add_argument("--n-starts", dest="n_starts", type=int, help="number of EM starts")
    p.add_argument("--tol", type=float, help="relative log-likelihood tolerance")
    p.add_argument("--max-iter", dest="max_iter", type=int, help="EM iteration cap")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--config", help="key=value or JSON file with fit settings")
    p.add_argument("--out-dir", default=".", help="directory for outputs")


def build_parser():
    parser = argparse.ArgumentParser(prog="gnhp", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="simulate events from a preset or a model JSON")
    p.add_argument("--preset", default="paper-t1", choices=PRESETS)
    p.add_argument("--model", help="model JSON instead of the preset")
    p.add_argument("--network", default="sbm", choices=("sbm", "power-law"))
    p.add_argument("--edges", help="use this edges CSV instead of generating a network")
    p.add_argument("--m", type=int, default=100)
    p.add_argument("--T", type=float, required=True)
    p.add_argument("--period", type=float, default=12.0)
    p.add_argument("--truncation", type=float, default=5.0)
    p.add_argument("--method", default="branching", choices=("branching", "thinning"))
    p.add_argument("--provenance", action="store_true", help="write parent and generation columns")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out-dir", default=".")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("fit", help="fit a model with a given number of groups")
    _common_fit_args(p)
    p.add_argument("--groups", type=int, required=True)
    p.add_argument("--truth", help="truth model JSON; adds group accuracy to diagnostics")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("select", help="choose the number of groups")
    _common_fit_args(p)
    p.add_argument("--g-min", dest="g_min", type=int, default=1)
    p.add_argument("--g-max", dest="g_max", type=int, default=5)
    p.add_argument("--penalty", default="median", choices=("median", "mean"))
    p.set_defaults(func=cmd_select)

    p = sub.add_parser("influence", help="node rankings and group impact curves")
    p.add_argument("--model", required=True)
    p.add_argument("--edges", required=True)
    p.add_argument("--grid-minutes", dest="grid_minutes", type=float, default=5.0)
    p.add_argument("--top", type=int, default=10)
    p.add_argument("--out-dir", default=".")
    p.set_defaults(func=cmd_influence)

    p = sub.add_parser("replicate", help="seeded simulate-and-fit replicates")
    p.add_argument("--preset", default="paper-t1", choices=PRESETS)
    p.add_argument("--network", default="sbm", choices=("sbm", "power-law"))
    p.add_argument("--m", type=int, default=100)
    p.add_argument("--T", type=float, required=True)
    p.add_argument("--period", type=float, default=12.0)
    p.add_argument("--K", type=int, default=20)
    p.add_argument("--groups", type=int, default=3)
    p.add_argument("--g-range", dest="g_range", type=int, nargs=2, metavar=("LO", "HI"))
    p.add_argument("--n-starts", dest="n_starts", type=int, default=3)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--config")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out-dir", default=".")
    p.set_defaults(func=cmd_replicate)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except (DataError, FileNotFoundError) as exc:
        log.error("%s", exc)
        return EXIT_DATA
    except (InstabilityError, InfeasibleModelError) as exc:
        log.error("%s", exc)
        return EXIT_MODEL
    except ValueError as exc:
        log.error("%s", exc)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
