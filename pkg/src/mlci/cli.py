"""Command line interface: ``mlci {infer,sample,render,eval,learn-reward}``.

Exit codes: 0 success, 2 infeasible demonstrations / no feasible trajectory /
divergence, 3 schema errors, 64 usage errors.
"""

from __future__ import annotations

import argparse
import csv
import io as _io
import json
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from . import io
from .accrual import feature_accrual_history
from .gridworld import InvalidConfig, load_config, paper_experiment
from .inference import false_positive_rate, greedy_iterative_inference
from .maxent import (Divergence, InfeasibleDemo, NoFeasibleTrajectory, backward_pass,
                     learn_reward_weights, sample_trajectories)
from .mdp import ConstraintKind, ConstraintSet, FullyConstrained, apply_constraints, augment_features
from .render import render_ascii, render_svg

EXIT_OK, EXIT_INFEASIBLE, EXIT_SCHEMA, EXIT_USAGE = 0, 2, 3, 64
DEFAULT_SEED = 0


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _write_output(path, text: str, run_info: dict):
    io.write_atomic(path, text)
    io.write_atomic(f"{path}.run.json", io.dumps(run_info))


def _run_info(manifest: dict, started: float) -> dict:
    return dict(manifest, wall_clock_seconds=round(time.perf_counter() - started, 6))


def _kinds(spec: str):
    try:
        return [ConstraintKind[k.strip().upper()] for k in spec.split(",") if k.strip()]
    except KeyError as e:
        raise UsageError(f"unknown hypothesis kind {e.args[0].lower()!r}; use state, action, feature")


def cmd_infer(args) -> int:
    started = time.perf_counter()
    if args.threshold < 0:
        raise UsageError("--threshold must be >= 0")
    kinds = _kinds(args.hypothesis)
    mdp = io.load_mdp(args.mdp)
    demos = io.load_demos(args.demos)
    aug = augment_features(mdp)
    result = greedy_iterative_inference(mdp, demos, args.threshold, args.max_iters, kinds, aug)
    params = {"threshold": args.threshold, "hypothesis": sorted(k.name.lower() for k in kinds),
              "max_iters": args.max_iters, "n_demos": len(demos)}
    man = io.manifest("infer", [io.RESULT_SCHEMA], {"mdp": args.mdp, "demos": args.demos},
                      args.seed, params, result.stop_reason)
    _write_output(args.out, io.dumps(io.result_to_json(result, mdp, man)), _run_info(man, started))
    if args.accrual_out:
        final_mdp = apply_constraints(mdp, result.constraint_set, aug)
        pol, _ = backward_pass(final_mdp)
        hist = feature_accrual_history(final_mdp, aug, pol)
        man_acc = dict(man, schemas=[io.ACCRUAL_SCHEMA])
        _write_output(args.accrual_out, io.dumps(io.accrual_to_json(hist, aug, result.selected, man_acc)),
                      _run_info(man_acc, started))
    names = [io.constraint_to_json(c, mdp).get("name", str(c)) for c in result.selected]
    print(f"selected {len(result.selected)} constraint(s): {', '.join(map(str, names)) or '-'}; "
          f"stop: {result.stop_reason}; final KL {result.final_kl:.6g}", file=sys.stderr)
    return EXIT_OK


def cmd_sample(args) -> int:
    started = time.perf_counter()
    if args.n < 1:
        raise UsageError("--n must be >= 1")
    mdp = io.load_mdp(args.mdp)
    if args.constraints:
        mdp = apply_constraints(mdp, io.load_constraints(args.constraints))
    pol, _ = backward_pass(mdp)
    demos = sample_trajectories(mdp, pol, args.n, args.seed)
    man = io.manifest("sample", [io.DEMOS_SCHEMA], {"mdp": args.mdp, "constraints": args.constraints},
                      args.seed, {"n": args.n})
    _write_output(args.out, io.dumps(io.demos_to_json(demos, man)), _run_info(man, started))
    return EXIT_OK


def cmd_render(args) -> int:
    mdp = io.load_mdp(args.mdp) if args.mdp else None
    if bool(args.result) == bool(args.accrual):
        raise UsageError("give exactly one of --result or --accrual")
    if args.accrual:
        final, layout, marked = io.accrual_from_json(io.read_json(args.accrual))
    else:
        if mdp is None:
            raise UsageError("--result needs --mdp to compute accruals")
        result, _ = io.load_result(args.result)
        aug = augment_features(mdp)
        final_mdp = apply_constraints(mdp, result.constraint_set, aug)
        pol, _ = backward_pass(final_mdp)
        final = feature_accrual_history(final_mdp, aug, pol).final
        layout = {"n_native": aug.n_native, "n_states": aug.n_states, "n_actions": aug.n_actions}
        marked = result.selected
    kw = {}
    if mdp is not None:
        kw = dict(grid_shape=mdp.grid_shape, action_names=mdp.action_names,
                  feature_names=mdp.feature_names)
    text = (render_svg if args.format == "svg" else render_ascii)(final, layout, marked, **kw)
    if args.out:
        io.write_atomic(args.out, text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


RUN_FIELDS = ["n_demos", "threshold", "seed", "fp_rate", "final_KL", "n_selected"]


def _sweep_job(job):
    grid, n, th, seed = job
    rep = paper_experiment(seed, n, th, cfg=grid)
    return {"n_demos": n, "threshold": th, "seed": seed, "fp_rate": rep.false_positive_rate,
            "final_KL": rep.final_kl, "n_selected": len(rep.result.selected)}


def run_sweep(grid: str, n_demos, thresholds, seeds, workers: int = 1) -> list[dict]:
    """One row per (threshold, n_demos, seed), in that sort order regardless of workers."""
    jobs = [(grid, int(n), float(th), int(s)) for th in thresholds for n in n_demos for s in seeds]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            rows = list(ex.map(_sweep_job, jobs))
    else:
        rows = [_sweep_job(j) for j in jobs]
    return rows


def summarize(rows: list[dict]) -> list[dict]:
    """Mean and standard error per (n_demos, threshold) cell."""
    cells: dict[tuple, list[dict]] = {}
    for r in rows:
        cells.setdefault((r["threshold"], r["n_demos"]), []).append(r)
    out = []
    for (th, n), rs in sorted(cells.items()):
        row = {"n_demos": n, "threshold": th, "n_runs": len(rs)}
        for key in ("fp_rate", "final_KL", "n_selected"):
            v = np.array([r[key] for r in rs], dtype=float)
            row[f"{key}_mean"] = float(v.mean())
            row[f"{key}_se"] = float(v.std(ddof=1) / np.sqrt(len(v))) if len(v) > 1 else 0.0
        out.append(row)
    return out


def _csv(rows: list[dict], fields: list[str]) -> str:
    buf = _io.StringIO()
    w = csv.DictWriter(buf, fieldnames=fields, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})
    return buf.getvalue()


def _workers() -> int:
    try:
        cap = int(os.environ.get("MLCI_THREADS", "1"))
    except ValueError:
        raise UsageError("MLCI_THREADS must be an integer")
    return max(1, min(cap, os.cpu_count() or 1))


def cmd_eval(args) -> int:
    if args.sweep:
        cfg = io.read_json(args.sweep)
        try:
            grid = cfg["grid"]
            rows = run_sweep(grid, cfg["n_demos"], cfg["thresholds"],
                             cfg.get("seeds", list(range(cfg.get("n_seeds", 10)))), _workers())
        except (KeyError, TypeError) as e:
            raise io.SchemaError(f"invalid sweep config: {e}") from None
        except InvalidConfig as e:
            raise io.SchemaError(str(e)) from None
    else:
        if not (args.result and args.truth and args.mdp):
            raise UsageError("single-run eval needs --result, --truth and --mdp (or use --sweep)")
        mdp = io.load_mdp(args.mdp)
        result, doc = io.load_result(args.result)
        truth = io.load_constraints(args.truth)
        params = (doc.get("manifest") or {}).get("parameters", {})
        rows = [{"n_demos": params.get("n_demos"), "threshold": params.get("threshold"),
                 "seed": (doc.get("manifest") or {}).get("seed"),
                 "fp_rate": false_positive_rate(result, truth, mdp),
                 "final_KL": result.final_kl, "n_selected": len(result.selected)}]
    io.write_atomic(args.out, _csv(rows, RUN_FIELDS))
    if args.summary:
        summary = summarize(rows)
        io.write_atomic(args.summary, _csv(summary, list(summary[0])))
    return EXIT_OK


def cmd_learn_reward(args) -> int:
    started = time.perf_counter()
    mdp = io.load_mdp(args.mdp_skeleton)
    demos = io.load_demos(args.demos)
    try:
        w, hist = learn_reward_weights(mdp, demos, args.lr, args.iters, return_history=True,
                                       patience=args.patience)
    except Divergence as e:
        json.dump({"error": str(e), "history": e.history}, sys.stderr, indent=1)
        print(file=sys.stderr)
        return EXIT_INFEASIBLE
    man = io.manifest("learn-reward", [io.WEIGHTS_SCHEMA],
                      {"mdp_skeleton": args.mdp_skeleton, "demos": args.demos},
                      None, {"lr": args.lr, "iters": args.iters, "patience": args.patience})
    _write_output(args.out, io.dumps(io.weights_to_json(w, hist, mdp, man)), _run_info(man, started))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="mlci", description="Maximum likelihood constraint inference on tabular MDPs.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("infer", help="infer constraints from demonstrations")
    s.add_argument("--mdp", required=True, help="mlci-mdp/1 file, grid config, or shipped config name")
    s.add_argument("--demos", required=True, help="mlci-demos/1 file")
    s.add_argument("--threshold", type=float, default=0.1, help="KL reduction threshold (default 0.1)")
    s.add_argument("--hypothesis", default="state,action,feature",
                   help="comma-separated constraint kinds to consider")
    s.add_argument("--max-iters", type=int, default=None, help="default: number of minimal constraints")
    s.add_argument("--seed", type=int, default=DEFAULT_SEED)
    s.add_argument("--out", required=True)
    s.add_argument("--accrual-out", help="also write the final mlci-accrual/1 history")
    s.set_defaults(func=cmd_infer)

    s = sub.add_parser("sample", help="sample demonstrations from the MaxEnt policy")
    s.add_argument("--mdp", required=True)
    s.add_argument("--n", type=int, required=True)
    s.add_argument("--seed", type=int, default=DEFAULT_SEED)
    s.add_argument("--constraints", help="mlci-constraints/1 file or grid config with planted truth")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_sample)

    s = sub.add_parser("render", help="ASCII or SVG accrual heatmaps")
    s.add_argument("--mdp")
    s.add_argument("--result")
    s.add_argument("--accrual")
    s.add_argument("--format", choices=("ascii", "svg"), default="ascii")
    s.add_argument("--out")
    s.set_defaults(func=cmd_render)

    s = sub.add_parser("eval", help="false-positive rate and KL tables")
    s.add_argument("--result")
    s.add_argument("--truth")
    s.add_argument("--mdp")
    s.add_argument("--sweep", help="JSON sweep config: grid, n_demos, thresholds, seeds")
    s.add_argument("--out", required=True, help="per-run CSV")
    s.add_argument("--summary", help="per-cell mean/standard-error CSV")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("learn-reward", help="MaxEnt IRL for the nominal reward weights")
    s.add_argument("--mdp-skeleton", required=True)
    s.add_argument("--demos", required=True)
    s.add_argument("--lr", type=float, default=0.1)
    s.add_argument("--iters", type=int, default=100)
    s.add_argument("--patience", type=int, default=10,
                   help="stop with exit code 2 after this many consecutive likelihood drops")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_learn_reward)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as e:
        parser.print_usage(sys.stderr)
        print(f"mlci: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (InfeasibleDemo, NoFeasibleTrajectory, FullyConstrained) as e:
        print(f"mlci: {e}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (io.SchemaError, InvalidConfig) as e:
        print(f"mlci: schema error: {e}", file=sys.stderr)
        return EXIT_SCHEMA


if __name__ == "__main__":
    sys.exit(main())
