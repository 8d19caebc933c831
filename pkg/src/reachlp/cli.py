"""Command-line front end.

Every subcommand writes its results under ``--out`` together with a
``manifest.json`` holding the arguments, input hashes, seeds, tolerances and
library versions; ``reachlp replay manifest.json`` reruns it.

Exit codes: 0 success, 1 infeasible constrained problem, 2 input error,
3 numerical failure.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import math
import platform
import re
import sys
from pathlib import Path

import numpy as np
import scipy

from . import __version__, kernels
from .avg import CERT_TOL, SolverError
from .grid import GridSpec, build_grid, cell_label, desk_experiments, parse_rect
from .lp import FEAS_TOL, OPT_TOL, PIVOT_TOL, LpFormatError
from .model import (ModelError, load_model, model_from_dict, policy_from_dict, policy_to_dict,
                    save_model, validate_model)
from .oracle import random_model, random_sets, reach_avoid_oracle
from .reach import (FEASIBILITY_TOL, ZERO_TOL, constrained_reach, p_domain, reach_avoid,
                    result_to_dict)
from .sim import estimate_hitting, simulate_paths, trajectories_csv

EXIT_OK, EXIT_INFEASIBLE, EXIT_INPUT, EXIT_NUMERICAL = 0, 1, 2, 3
_RECT = re.compile(r"\d+:\d+,\d+:\d+")


class InputError(Exception):
    pass


# ---------------------------------------------------------------------------
# output formatting

def fmt_float(x):
    x = float(x)
    return format(x, ".17g") if math.isfinite(x) else "null"


def _scalar(v):
    if isinstance(v, (bool, np.bool_)) or v is None:
        return json.dumps(None if v is None else bool(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return fmt_float(v)
    if isinstance(v, str):
        return json.dumps(v)
    return None


def dumps(obj, level=0):
    """JSON text with every float written to 17 significant digits."""
    s = _scalar(obj)
    if s is not None:
        return s
    pad, inner = " " * level, " " * (level + 1)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{inner}{json.dumps(str(k))}: {dumps(v, level + 1)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + pad + "}"
    if isinstance(obj, (list, tuple, np.ndarray)):
        seq = list(obj)
        if not seq:
            return "[]"
        flat = [_scalar(v) for v in seq]
        if all(f is not None for f in flat):
            return "[" + ", ".join(flat) + "]"
        return "[\n" + ",\n".join(inner + dumps(v, level + 1) for v in seq) + "\n" + pad + "]"
    raise TypeError(f"cannot serialize {type(obj).__name__}")


class Run:
    """Output directory plus the bookkeeping that goes into the manifest."""

    def __init__(self, out):
        self.out = Path(out)
        self.inputs = {}
        self.outputs = []
        self.seeds = {}
        self.grid = None

    def read(self, path, role):
        p = Path(path)
        try:
            data = p.read_bytes()
        except OSError as e:
            raise InputError(f"cannot read {role} file {path}: {e.strerror}") from None
        self.inputs[role] = {"path": str(path), "sha256": hashlib.sha256(data).hexdigest()}
        return data.decode("utf-8")

    def write(self, name, text):
        self.out.mkdir(parents=True, exist_ok=True)
        (self.out / name).write_text(text if text.endswith("\n") else text + "\n")
        self.outputs.append(name)

    def write_json(self, name, obj):
        self.write(name, dumps(obj))

    def write_values(self, name, m, values):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        if self.grid is not None:
            w.writerow(["row", "col", "value"])
            for x, v in enumerate(values):
                r, c = self.grid[m.labels[x]]
                w.writerow([r, c, fmt_float(v)])
        else:
            w.writerow(["state", "value"])
            for x, v in enumerate(values):
                w.writerow([m.labels[x], fmt_float(v)])
        self.write(name, buf.getvalue())


# ---------------------------------------------------------------------------
# input helpers

def _load_model(run, path):
    text = run.read(path, "model")
    return load_model(text)


def _load_grid(run, path):
    if path is None:
        return None
    try:
        doc = json.loads(run.read(path, "grid"))
        return {lbl: (int(rc[0]), int(rc[1])) for lbl, rc in doc["cell"].items()}
    except (KeyError, TypeError, ValueError, IndexError) as e:
        raise InputError(f"bad grid sidecar {path}: {e}") from None


def _parse_set(run, m, spec, role):
    """Inline ``"1,2"``, a JSON file of labels/ids, or ``r0:r1,c0:c1`` rectangles."""
    if spec is None or spec == "":
        return frozenset()
    if spec.endswith(".json") or Path(spec).is_file():
        doc = json.loads(run.read(spec, role))
        tokens = doc.get("states", []) if isinstance(doc, dict) else doc
        if not isinstance(tokens, list):
            raise InputError(f"{role} file must hold a list of states")
        return frozenset(m.state_id(t) for t in tokens)
    parts = spec.split(";")
    if run.grid is not None and all(_RECT.fullmatch(p.strip()) for p in parts):
        by_cell = {rc: lbl for lbl, rc in run.grid.items()}
        cells = frozenset().union(*(parse_rect(p.strip()) for p in parts))
        missing = [c for c in cells if c not in by_cell]
        if missing:
            raise InputError(f"{role} rectangle leaves the grid at cell {sorted(missing)[0]}")
        return frozenset(m.state_id(by_cell[c]) for c in cells)
    return frozenset(m.state_id(t) for t in spec.split(",") if t.strip())


def _parse_nu(run, m, spec):
    n = m.n_states
    if spec == "uniform":
        return np.full(n, 1.0 / n)
    nu = np.zeros(n)
    if spec.endswith(".json") or Path(spec).is_file():
        doc = json.loads(run.read(spec, "nu"))
        if isinstance(doc, list):
            if len(doc) != n:
                raise InputError(f"nu has {len(doc)} entries for {n} states")
            nu[:] = [float(v) for v in doc]
        else:
            for k, v in doc.items():
                nu[m.state_id(k)] += float(v)
    else:
        for item in spec.split(","):
            k, sep, v = item.partition("=")
            if not sep:
                raise InputError(f"bad nu entry {item!r}; use label=weight, a file or 'uniform'")
            nu[m.state_id(k)] += float(v)
    if not np.all(np.isfinite(nu)) or nu.min() < 0 or abs(nu.sum() - 1.0) > 1e-9:
        raise InputError("nu must be a probability vector (nonnegative, summing to 1)")
    return nu


def _labels(m, states):
    return [m.labels[x] for x in sorted(states)]


# ---------------------------------------------------------------------------
# subcommands

def cmd_validate(args, run):
    try:
        doc = json.loads(run.read(args.model, "model"))
    except json.JSONDecodeError as e:
        report = [f"JSON parse error at line {e.lineno}, column {e.colno}: {e.msg}"]
    else:
        try:
            m = model_from_dict(doc)
            report = validate_model(m)
        except ModelError as e:
            report = list(e.violations) or [str(e)]
    run.write_json("validation.json", {"valid": not report, "violations": report})
    for line in report:
        print(line, file=sys.stderr)
    return EXIT_OK if not report else EXIT_INPUT


def cmd_p_domain(args, run):
    m = _load_model(run, args.model)
    run.grid = _load_grid(run, args.grid)
    A = _parse_set(run, m, args.target, "target")
    ps = [float(p) for p in args.p.split(",")]
    if any(not 0.0 <= p <= 1.0 for p in ps):
        raise InputError("p values must lie in [0, 1]")
    res = p_domain(m, A, ps=ps, threshold=args.threshold, absorb=not args.no_absorb)
    doc = {"target": _labels(m, A), **result_to_dict(m, res), "checks": res.gain.checks}
    run.write_json("p_domain.json", doc)
    run.write_values("v_star.csv", m, res.v_star)
    return EXIT_OK


def cmd_reach_avoid(args, run):
    m = _load_model(run, args.model)
    run.grid = _load_grid(run, args.grid)
    A = _parse_set(run, m, args.target, "target")
    B = _parse_set(run, m, args.avoid, "avoid")
    nu = _parse_nu(run, m, args.nu)
    res = reach_avoid(m, A, B, nu)
    doc = {"target": _labels(m, A), "avoid": _labels(m, B), "nu": nu.tolist(),
           **result_to_dict(m, res), "checks": res.gain.checks}
    run.write_json("reach_avoid.json", doc)
    run.write_values("v_tilde.csv", m, res.v_tilde)
    return EXIT_OK


def cmd_constrained(args, run):
    m = _load_model(run, args.model)
    run.grid = _load_grid(run, args.grid)
    A = _parse_set(run, m, args.target, "target")
    B = _parse_set(run, m, args.avoid, "avoid")
    nu = _parse_nu(run, m, args.nu)
    if not args.eps >= 0:
        raise InputError("--eps must be nonnegative")
    res = constrained_reach(m, A, B, nu, args.eps)
    doc = {"target": _labels(m, A), "avoid": _labels(m, B), "nu": nu.tolist(),
           **result_to_dict(m, res)}
    if res.feasible:
        doc["checks"] = res.gain.checks
    run.write_json("constrained.json", doc)
    if not res.feasible:
        print(f"INFEASIBLE: no policy keeps the avoid probability within {args.eps!r}",
              file=sys.stderr)
        return EXIT_INFEASIBLE
    run.write_json("policy.json", policy_to_dict(m, res.policy))
    if not res.attained:
        print(f"note: the two-phase policy alone reaches {fmt_float(res.policy_value)}; "
              "constrained.json lists a start-time mixture attaining the value",
              file=sys.stderr)
    return EXIT_OK


def cmd_simulate(args, run):
    m = _load_model(run, args.model)
    doc = json.loads(run.read(args.policy, "policy"))
    if isinstance(doc, dict) and "mode" not in doc and "policy" in doc:
        doc = doc["policy"]
    policy = policy_from_dict(m, doc)
    A = _parse_set(run, m, args.target, "target")
    B = (_parse_set(run, m, args.avoid, "avoid") if args.avoid is not None
         else frozenset(getattr(policy, "avoid_set", ())))
    nu = _parse_nu(run, m, args.nu)
    if args.n < 1 or args.horizon < 0:
        raise InputError("need --n >= 1 and --horizon >= 0")
    run.seeds["simulate"] = args.seed
    est = estimate_hitting(m, policy, nu, A, B, args.n, args.horizon, args.seed,
                           workers=args.workers)
    run.write_json("estimate.json", {"target": _labels(m, A), "avoid": _labels(m, B),
                                     **est.to_dict(),
                                     "std_error_A": est.std_error("A"),
                                     "std_error_B": est.std_error("B")})
    if args.paths > 0:
        trajs = simulate_paths(m, policy, nu, min(args.paths, args.n), args.horizon, args.seed,
                               stop=A)
        run.write("trajectories.csv", trajectories_csv(m, trajs))
    return EXIT_OK


def cmd_grid_gen(args, run):
    if args.preset:
        spec = desk_experiments(args.wind)[args.preset]
    else:
        if args.rows is None or args.cols is None:
            raise InputError("grid gen needs --rows and --cols (or --preset)")
        target = frozenset().union(*(parse_rect(r) for r in args.target))
        obstacles = frozenset().union(*(parse_rect(r) for r in args.obstacles))
        spec = GridSpec(args.rows, args.cols, args.wind, target, obstacles,
                        absorbing_top=not args.no_absorbing_top)
    m, cmap = build_grid(spec)
    run.write("model.json", save_model(m))
    run.write_json("grid.json", cmap.sidecar(m))
    run.write_json("target.json", {"states": [cell_label(*c) for c in sorted(spec.target_cells)]})
    run.write_json("avoid.json", {"states": [cell_label(*c) for c in sorted(spec.obstacle_cells)]})
    return EXIT_OK


def cmd_oracle(args, run):
    rows = []
    if args.random:
        run.seeds["oracle"] = args.seed
        for i in range(args.random):
            rng = np.random.default_rng([args.seed, i])
            m = random_model(rng)
            A, B = random_sets(rng, m.n_states)
            rows.append(_oracle_row(m, A, B, f"random[{i}]"))
    if args.model:
        m = _load_model(run, args.model)
        A = _parse_set(run, m, args.target, "target")
        B = _parse_set(run, m, args.avoid, "avoid")
        rows.append(_oracle_row(m, A, B, args.model))
    if not rows:
        raise InputError("oracle needs --model or --random N")
    dev = max(r["max_deviation"] for r in rows)
    gap = max(r["duality_gap"] for r in rows)
    ok = dev <= args.tol and gap <= CERT_TOL
    run.write_json("oracle.json", {"max_deviation": dev, "max_duality_gap": gap,
                                   "tolerance": args.tol, "passed": ok, "cases": rows})
    print(f"max deviation {fmt_float(dev)}, max duality gap {fmt_float(gap)}")
    return EXIT_OK if ok else EXIT_NUMERICAL


def _oracle_row(m, A, B, name):
    lp = reach_avoid(m, A, B, np.ones(m.n_states))
    vi = reach_avoid_oracle(m, A, B)
    return {"case": name, "n_states": m.n_states,
            "max_deviation": float(np.max(np.abs(lp.v_tilde - vi))),
            "duality_gap": float(lp.gain.checks["duality_gap"])}


def cmd_replay(args, run):
    try:
        man = json.loads(Path(args.manifest).read_text())
        argv = list(man["argv"])
        inputs = man.get("inputs", {})
    except (OSError, ValueError, KeyError, TypeError) as e:
        raise InputError(f"cannot use manifest {args.manifest}: {e}") from None
    for role, rec in inputs.items():
        try:
            digest = hashlib.sha256(Path(rec["path"]).read_bytes()).hexdigest()
        except OSError:
            raise InputError(f"{role} input {rec['path']} is missing") from None
        if digest != rec["sha256"]:
            raise InputError(f"{role} input {rec['path']} changed since the recorded run")
    return main(argv + ["--out", args.out])


# ---------------------------------------------------------------------------
# parser

def build_parser():
    ap = argparse.ArgumentParser(prog="reachlp", description=__doc__.split("\n")[0])
    sub = ap.add_subparsers(dest="command", required=True)
    out = argparse.ArgumentParser(add_help=False)
    out.add_argument("--out", default="reachlp-out", help="output directory")

    def model_args(p, grid=True):
        p.add_argument("--model", required=True, help="model JSON file")
        if grid:
            p.add_argument("--grid", help="grid sidecar; enables rectangles and row,col CSV")

    p = sub.add_parser("validate", parents=[out], help="check a model file")
    p.add_argument("--model", required=True)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("p-domain", parents=[out], help="domains of attraction of a target")
    model_args(p)
    p.add_argument("--target", required=True)
    p.add_argument("--p", default="1", help="comma list of levels for the p-domains")
    p.add_argument("--threshold", type=float, default=ZERO_TOL)
    p.add_argument("--no-absorb", action="store_true", help="solve on the original kernel")
    p.set_defaults(func=cmd_p_domain)

    p = sub.add_parser("reach-avoid", parents=[out], help="reach target before avoid set")
    model_args(p)
    p.add_argument("--target", required=True)
    p.add_argument("--avoid", default="")
    p.add_argument("--nu", default="uniform")
    p.set_defaults(func=cmd_reach_avoid)

    p = sub.add_parser("constrained", parents=[out], help="reach target with an avoid budget")
    model_args(p)
    p.add_argument("--target", required=True)
    p.add_argument("--avoid", required=True)
    p.add_argument("--nu", default="uniform")
    p.add_argument("--eps", type=float, required=True)
    p.set_defaults(func=cmd_constrained)

    p = sub.add_parser("simulate", parents=[out], help="Monte Carlo check of a policy")
    model_args(p, grid=False)
    p.add_argument("--policy", required=True, help="policy JSON (or a constrained.json)")
    p.add_argument("--target", required=True)
    p.add_argument("--avoid", help="defaults to the policy's avoid set")
    p.add_argument("--nu", default="uniform")
    p.add_argument("--n", type=int, default=100_000)
    p.add_argument("--horizon", type=int, default=100)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--paths", type=int, default=20, help="trajectories written to CSV")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("grid", help="wind-grid models")
    gsub = p.add_subparsers(dest="grid_command", required=True)
    g = gsub.add_parser("gen", parents=[out], help="write a grid model and its sidecar")
    g.add_argument("--preset", choices=sorted(desk_experiments()))
    g.add_argument("--rows", type=int)
    g.add_argument("--cols", type=int)
    g.add_argument("--wind", type=float, default=0.3)
    g.add_argument("--target", action="append", default=[], help="rectangle r0:r1,c0:c1")
    g.add_argument("--obstacles", action="append", default=[], help="rectangle r0:r1,c0:c1")
    g.add_argument("--no-absorbing-top", action="store_true")
    g.set_defaults(func=cmd_grid_gen)

    p = sub.add_parser("oracle", parents=[out], help="LP versus value iteration")
    p.add_argument("--model")
    p.add_argument("--target", default="")
    p.add_argument("--avoid", default="")
    p.add_argument("--random", type=int, default=0, help="also check N random models")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tol", type=float, default=1e-6)
    p.set_defaults(func=cmd_oracle)

    p = sub.add_parser("replay", parents=[out], help="rerun from a manifest")
    p.add_argument("manifest")
    p.set_defaults(func=cmd_replay)
    return ap


def _strip_out(argv):
    out, skip = [], False
    for tok in argv:
        if skip:
            skip = False
        elif tok == "--out":
            skip = True
        elif not tok.startswith("--out="):
            out.append(tok)
    return out


def _manifest(args, argv, run, code):
    config = {k: v for k, v in sorted(vars(args).items()) if k not in ("func", "out")}
    return {
        "tool": "reachlp",
        "argv": _strip_out(argv),
        "config": config,
        "exit_code": code,
        "inputs": run.inputs,
        "seeds": run.seeds,
        "tolerances": {"lp_pivot": PIVOT_TOL, "lp_feasibility": FEAS_TOL,
                       "lp_optimality": OPT_TOL, "certificate": CERT_TOL,
                       "zero_threshold": getattr(args, "threshold", ZERO_TOL),
                       "budget_feasibility": FEASIBILITY_TOL},
        "versions": {"reachlp": __version__, "python": platform.python_version(),
                     "numpy": np.__version__, "scipy": scipy.__version__,
                     "kernels": kernels.backend()},
        "outputs": sorted(run.outputs),
    }


def main(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    args = build_parser().parse_args(argv)
    run = Run(args.out)
    try:
        code = args.func(args, run)
    except (InputError, ModelError, LpFormatError, json.JSONDecodeError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INPUT
    except SolverError as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERICAL
    if args.command != "replay":
        run.write_json("manifest.json", _manifest(args, argv, run, code))
    return code


if __name__ == "__main__":
    sys.exit(main())
