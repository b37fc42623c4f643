"""Command line front end.

Exit codes: 0 success, 1 other solver failure, 2 bad configuration or
arguments, 3 budget exceeded, 4 no ergodicity certificate (use --force).
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
import tempfile
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import bounds, ergodicity, inforate, optimize
from .config import fingerprint, load_model, model_fingerprint
from .errors import (AlphabetTooLarge, BudgetExceeded, ConfigError, EhcapError,
                     NoErgodicityCertificate)
from .model import bsc_capacity, zero_battery_capacity
from .surrogate import (MarkovInputProcess, build_fsc_sc1, build_fsc_sc2,
                        enumerate_policies)

CSV_COLUMNS = ("kind", "q", "p", "N", "bits", "tolerance", "seed", "fingerprint")


class UsageError(Exception):
    pass


def _threads(args) -> int:
    if args.threads is not None:
        n = args.threads
    elif os.environ.get("EHCAP_THREADS"):
        try:
            n = int(os.environ["EHCAP_THREADS"])
        except ValueError:
            raise UsageError("EHCAP_THREADS must be an integer") from None
    else:
        n = os.cpu_count() or 1
    if n < 1:
        raise UsageError("thread count must be >= 1")
    return n


def write_atomic(path, text: str):
    """Write through a temporary file in the same directory, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _emit(args, payload: dict, text: str):
    out = json.dumps(payload, indent=2, sort_keys=True, default=_plain) + "\n"
    if getattr(args, "out", None):
        write_atomic(args.out, out if args.json or str(args.out).endswith(".json") else text)
    print(out if args.json else text, end="")


def _plain(x):
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, (np.integer, np.floating)):
        return x.item()
    if isinstance(x, tuple):
        return list(x)
    raise TypeError(f"cannot serialize {type(x).__name__}")


def _positive(name):
    def conv(s):
        try:
            v = int(float(s))
        except ValueError:
            raise argparse.ArgumentTypeError(f"{name} must be an integer") from None
        if v < 1 or v != float(s):
            raise argparse.ArgumentTypeError(f"{name} must be a positive integer")
        return v
    return conv


def _surrogate(model, raw, args):
    m = int(raw.get("memory_m", 1))
    l = int(raw.get("memory_l", 0))
    b1 = getattr(args, "b1", None)
    if l:
        return build_fsc_sc2(model, m, l, b1)
    return build_fsc_sc1(model, m, b1)


def _input(spec: str, n_symbols: int) -> MarkovInputProcess:
    if spec == "iud":
        return MarkovInputProcess.iud(n_symbols, 0)
    if spec.startswith("iud:"):
        return MarkovInputProcess.iud(n_symbols, int(spec[4:]))
    if spec.startswith("markov:"):
        try:
            d = json.loads(Path(spec[7:]).read_text())
        except (OSError, ValueError) as exc:
            raise ConfigError(f"cannot read input process {spec[7:]}: {exc}") from None
        proc = MarkovInputProcess.from_dict(d)
        if proc.n_symbols != n_symbols:
            raise ConfigError(f"input process has {proc.n_symbols} symbols, channel has {n_symbols}")
        return proc
    raise UsageError(f"unknown input spec {spec!r}; use iud, iud:<k> or markov:<file>")


# subcommands ---------------------------------------------------------------

def cmd_model_info(args):
    model, raw = load_model(args.config)
    m = int(raw.get("memory_m", 1))
    l = int(raw.get("memory_l", 0))
    pol = enumerate_policies(model, m, l)
    feas = {str(s): list(model.input_alphabet[i] for i in model.feasible_index(s))
            for s in model.states}
    payload = {"states": list(model.states), "batteries": list(model.batteries),
               "feasible": feas, "memory_m": m, "memory_l": l, "policies": len(pol),
               "scenario": model.scenario, "fingerprint": fingerprint(raw)}
    lines = [f"S={{{','.join(map(str, model.states))}}}",
             f"E_B={{{','.join(map(str, model.batteries))}}}",
             f"|V(m={m})|={len(pol)}"]
    lines += [f"X({s})={{{','.join(map(str, xs))}}}" for s, xs in feas.items()]
    lines.append(f"fingerprint={payload['fingerprint']}")
    _emit(args, payload, "\n".join(lines) + "\n")
    return 0


def cmd_ergodicity(args):
    model, raw = load_model(args.config)
    fsc = _surrogate(model, raw, args)
    inp = _input(args.input, fsc.n_inputs) if args.input else None
    ind = ergodicity.check_indecomposable(fsc, args.depth)
    suff = ergodicity.check_sufficient_conditions(model, fsc, inp, args.depth)
    payload = {"indecomposable": ind.to_dict(), "sufficient": suff.to_dict()}
    text = (f"indecomposable: {ind.verdict} ({ind.condition_used})\n"
            f"sufficient: {suff.verdict} ({suff.condition_used})\n")
    _emit(args, payload, text)
    return 0


def cmd_rate(args):
    model, raw = load_model(args.config)
    fsc = _surrogate(model, raw, args)
    inp = _input(args.input, fsc.n_inputs)
    est = inforate.estimate_info_rate_workers(fsc, inp, args.length, args.seed, args.blocks,
                                              _threads(args), force=args.force)
    payload = est.to_dict()
    payload["fingerprint"] = fingerprint(raw)
    text = f"rate {est.rate_bits:.6f} bits/use  stderr {est.stderr:.2e}  N={est.sample_length}\n"
    if args.exact_n:
        seq = inforate.exact_block_mi_sequence(fsc, inp, args.exact_n)
        payload["exact_block_mi"] = seq.tolist()
        text += f"exact (1/N) I(V^N;Y^N) at N={args.exact_n}: {seq[-1]:.6f}\n"
    _emit(args, payload, text)
    return 0


def cmd_optimize(args):
    model, raw = load_model(args.config)
    fsc = _surrogate(model, raw, args)
    proc = None
    for k in range(args.order + 1):
        proc, est, trace = optimize.gbaa_optimize(fsc, k, args.iters, args.seed, init=proc,
                                                  path_length=args.path_length,
                                                  rate_length=args.length)
    payload = {"order": args.order, "rate": est.to_dict(), "trace": trace.to_dict(),
               "input": proc.to_dict(), "fingerprint": fingerprint(raw)}
    if args.save_input:
        write_atomic(args.save_input, json.dumps(proc.to_dict(), sort_keys=True) + "\n")
    text = (f"order {args.order}: rate {est.rate_bits:.6f} bits/use  stderr {est.stderr:.2e}"
            f"  iterations {len(trace.iterates) - 1}  converged {trace.converged}\n")
    _emit(args, payload, text)
    return 0


def cmd_dirinfo(args):
    model, raw = load_model(args.config)
    pres = model.harvest.prehistories() if model.harvest.order else [None]
    best, best_trace, best_pre = -1.0, None, None
    for pre in pres:
        v, _, tr = optimize.extended_ba_directed_info(model, args.block, pre, args.tol)
        if v > best:
            best, best_trace, best_pre = v, tr, pre
    payload = {"N": args.block, "bits": best, "bits_per_use": best / args.block,
               "prehistory": best_pre, "trace": best_trace.to_dict(),
               "fingerprint": fingerprint(raw)}
    _emit(args, payload, f"N={args.block}: {best:.6f} bits, {best / args.block:.6f} bits/use\n")
    return 0


def _parse_grid(specs):
    axes = {"q": [None], "p": [None]}
    for spec in specs or []:
        try:
            key, rng = spec.split("=", 1)
            if key not in axes:
                raise ValueError
            if ":" in rng:
                a, b, step = (float(t) for t in rng.split(":"))
                if step <= 0 or b < a:
                    raise ValueError
                vals = list(np.round(np.arange(a, b + step / 2, step), 10))
            else:
                vals = [float(t) for t in rng.split(",")]
        except ValueError:
            raise UsageError(f"bad grid spec {spec!r}; use q=0:0.5:0.1 or p=0.1,0.5") from None
        axes[key] = [float(v) for v in vals]
    return [(q, p) for q in axes["q"] for p in axes["p"]]


def _rows(curves, seed):
    rows = []
    for c in curves:
        for n, bits in c.points:
            rows.append((c.kind, c.settings.get("q"), c.settings.get("p"), n, bits,
                         c.settings.get("tolerance"), seed, c.fingerprint))
    return rows


def _csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in rows:
        w.writerow(["" if v is None else (repr(float(v)) if isinstance(v, float) else v)
                    for v in r])
    return buf.getvalue()


def cmd_bounds(args):
    model, raw = load_model(args.config)
    kinds = [k.strip() for k in args.kinds.split(",") if k.strip()]
    for k in kinds:
        if k not in bounds.ALIASES and k not in bounds.KINDS:
            raise UsageError(f"unknown bound kind {k!r}")
    if args.seed is None and any(bounds.ALIASES.get(k, k) == "LB_RATE" for k in kinds):
        raise UsageError("--seed is required for lb-rate")
    grid = _parse_grid(args.grid)
    budgets = {"ub_sc2_n": args.block_n, "lb_sc2_n": args.lb_n, "ub_sc1_n": args.ub_sc1_n,
               "dp_n": max(args.n)}
    curves = bounds.bound_sweep(model, grid, kinds, args.n, budgets, args.seed or 0,
                                _threads(args))
    text = _csv(_rows(curves, args.seed))
    if args.out:
        write_atomic(args.out, text)
    errors = [f"{c.kind} q={c.settings.get('q')} p={c.settings.get('p')}: {e}"
              for c in curves for e in c.errors]
    for e in errors:
        print(e, file=sys.stderr)
    if args.json:
        print(json.dumps([c.to_dict() for c in curves], indent=2, sort_keys=True,
                         default=_plain))
    else:
        print(text, end="")
    if any("BudgetExceeded" in e or "AlphabetTooLarge" in e for e in errors):
        return 3
    return 0


# figures -------------------------------------------------------------------

FIXTURES = Path(__file__).resolve().parents[2] / "fixtures"


def _fig3_point(job):
    model, q, orders, length, iters, seed = job
    m = model.with_params(q=q)
    fp = model_fingerprint(m)
    fsc = build_fsc_sc1(m, 1)
    rows = [("C-BSC", q, None, 1, bsc_capacity(q), 0.0, seed, fp),
            ("C-ZB", q, None, 1, zero_battery_capacity(q), 0.0, seed, fp)]
    iud = inforate.estimate_info_rate(fsc, MarkovInputProcess.iud(fsc.n_inputs), length, seed)
    rows.append(("IR-IUD", q, None, length, iud.rate_bits, 2 * iud.stderr, seed, fp))
    proc = None
    for k in range(orders + 1):
        proc, est, _ = optimize.gbaa_optimize(fsc, k, iters, seed, init=proc,
                                              rate_length=length)
        rows.append((f"IR-r{k}", q, None, length, est.rate_bits, 2 * est.stderr, seed, fp))
    return rows


def _fig45_point(job):
    model, p, budgets, length, iters, seed = job
    m = model.with_params(p=p)
    q = float(m.dmc[0, 1])
    fp = model_fingerprint(m)
    rows, errs = [], []
    dp_n = budgets["dp_n"]
    for kind, fn in (("UB-SC1", lambda: bounds.ub_sc1_dp(m, dp_n)[0]),
                     ("UB-LNX", lambda: bounds.ub_lnx(m, dp_n)[0]),
                     ("UB-SC2-LN", lambda: bounds.ub_sc2_ln(m, dp_n)[0])):
        rows.append((kind, q, p, dp_n, fn(), 1e-10, seed, fp))
    try:
        n = budgets["block_n"]
        rows.append(("UB-SC2", q, p, n, bounds.ub_sc2_block(m, n), 1e-9, seed, fp))
    except BudgetExceeded as exc:
        errs.append(f"UB-SC2 p={p}: {exc}")
    fsc = build_fsc_sc1(m, 1)
    proc = None
    for k in (0, 1):
        proc, est, _ = optimize.gbaa_optimize(fsc, k, iters, seed, init=proc, rate_length=length)
        rows.append((f"LB-r{k}", q, p, length, est.rate_bits, 2 * est.stderr, seed, fp))
    try:
        n = budgets["lb_n"]
        rows.append(("LB-SC2", q, p, n, bounds.lb_sc2_block(m, n), 1e-9, seed, fp))
    except BudgetExceeded as exc:
        errs.append(f"LB-SC2 p={p}: {exc}")
    return rows, errs


def _map(fn, jobs, threads):
    if threads > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=min(threads, len(jobs))) as ex:
            return list(ex.map(fn, jobs))
    return [fn(j) for j in jobs]


def cmd_reproduce_fig(args):
    which = args.which
    if which not in ("3", "4", "5"):
        raise UsageError(f"unknown figure {which!r}; choose 3, 4 or 5")
    threads = _threads(args)
    cfg = args.config or FIXTURES / f"fig{which}.cfg"
    model, raw = load_model(cfg)
    notes = {"figure": which, "config": Path(cfg).name, "seed": args.seed,
             "rate_length": args.length}
    errs = []
    if which == "3":
        qs = _parse_grid(args.grid or ["q=0:0.5:0.05"])
        jobs = [(model, q, 2, args.length, args.iters, args.seed) for q, _ in qs]
        rows = [r for part in _map(_fig3_point, jobs, threads) for r in part]
        notes["curves"] = ["C-BSC", "C-ZB", "IR-IUD", "IR-r0", "IR-r1", "IR-r2"]
    else:
        ps = _parse_grid(args.grid or ["p=0.1:0.9:0.1"])
        budgets = {"dp_n": args.dp_n, "block_n": args.budget_n, "lb_n": args.lb_n}
        jobs = [(model, p, budgets, args.length, args.iters, args.seed) for _, p in ps]
        parts = _map(_fig45_point, jobs, threads)
        rows = [r for part, _ in parts for r in part]
        errs = [e for _, part in parts for e in part]
        notes["curves"] = ["UB-SC1", "UB-LNX", "UB-SC2-LN", "UB-SC2", "LB-r0", "LB-r1", "LB-SC2"]
        notes["excluded"] = {"UB'-SC1": "bound from outside the artifact's scope; not computed"}
        notes["budgets"] = {"UB-SC1/UB-LNX/UB-SC2-LN": args.dp_n, "UB-SC2": args.budget_n,
                            "LB-SC2": args.lb_n}
        notes["paper_budgets"] = {"UB-SC1/UB-LNX/UB-SC2-LN": 10000, "UB-SC2": 16, "LB-SC2": 4}
    notes["errors"] = errs
    order = {k: i for i, k in enumerate(notes["curves"])}
    rows.sort(key=lambda r: (order[r[0]], r[1] if r[1] is not None else -1,
                             r[2] if r[2] is not None else -1))
    text = _csv(rows)
    out_dir = Path(args.out_dir)
    write_atomic(out_dir / f"fig{which}.csv", text)
    write_atomic(out_dir / f"fig{which}_meta.json", json.dumps(notes, indent=2, sort_keys=True) + "\n")
    for e in errs:
        print(e, file=sys.stderr)
    print(text, end="")
    return 3 if errs else 0


# entry point ---------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="ehcap", description=__doc__.splitlines()[0])
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--json", action="store_true", help="structured output")
    common.add_argument("--threads", type=int, default=None,
                        help="worker processes (default: EHCAP_THREADS or all cores)")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("model-info", parents=[common], help="alphabets and policy counts")
    p.add_argument("config")
    p.add_argument("--out")
    p.set_defaults(func=cmd_model_info)

    p = sub.add_parser("ergodicity", parents=[common], help="ergodicity certificates")
    p.add_argument("config")
    p.add_argument("--input", help="iud, iud:<k> or markov:<file>")
    p.add_argument("--depth", type=_positive("depth"), default=32)
    p.add_argument("--b1", type=int, default=None)
    p.add_argument("--out")
    p.set_defaults(func=cmd_ergodicity)

    p = sub.add_parser("rate", parents=[common], help="estimate an information rate")
    p.add_argument("config")
    p.add_argument("--input", default="iud")
    p.add_argument("--length", type=_positive("length"), default=10**6)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--blocks", type=_positive("blocks"), default=20)
    p.add_argument("--exact-n", type=_positive("exact-n"), default=None)
    p.add_argument("--b1", type=int, default=None)
    p.add_argument("--force", action="store_true", help="estimate without a certificate")
    p.add_argument("--out")
    p.set_defaults(func=cmd_rate)

    p = sub.add_parser("optimize", parents=[common], help="optimize a Markov input")
    p.add_argument("config")
    p.add_argument("--order", type=int, default=0)
    p.add_argument("--iters", type=_positive("iters"), default=30)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--path-length", type=_positive("path-length"), default=10**5)
    p.add_argument("--length", type=_positive("length"), default=2 * 10**5)
    p.add_argument("--b1", type=int, default=None)
    p.add_argument("--save-input")
    p.add_argument("--out")
    p.set_defaults(func=cmd_optimize)

    p = sub.add_parser("dirinfo", parents=[common], help="maximal directed information")
    p.add_argument("config")
    p.add_argument("--block", type=_positive("block"), required=True)
    p.add_argument("--tol", type=float, default=1e-6)
    p.add_argument("--out")
    p.set_defaults(func=cmd_dirinfo)

    p = sub.add_parser("bounds", parents=[common], help="capacity bounds over a grid")
    p.add_argument("config")
    p.add_argument("--kinds", default="ub-sc1-dp,ub-lnx,ub-sc2-ln")
    p.add_argument("--grid", action="append")
    p.add_argument("--n", type=lambda s: [_positive("n")(t) for t in s.split(",")],
                   default=[10**4], help="block lengths for the recursions")
    p.add_argument("--block-n", type=_positive("block-n"), default=16)
    p.add_argument("--lb-n", type=_positive("lb-n"), default=4)
    p.add_argument("--ub-sc1-n", type=_positive("ub-sc1-n"), default=2)
    p.add_argument("--seed", type=int, default=None, help="required for lb-rate")
    p.add_argument("--out")
    p.set_defaults(func=cmd_bounds)

    p = sub.add_parser("reproduce-fig", parents=[common], help="curve data for a figure")
    p.add_argument("which")
    p.add_argument("--config")
    p.add_argument("--grid", action="append")
    p.add_argument("--budget-n", type=_positive("budget-n"), default=16)
    p.add_argument("--dp-n", type=_positive("dp-n"), default=10**4)
    p.add_argument("--lb-n", type=_positive("lb-n"), default=4)
    p.add_argument("--length", type=_positive("length"), default=10**6)
    p.add_argument("--iters", type=_positive("iters"), default=30)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out-dir", default="results")
    p.set_defaults(func=cmd_reproduce_fig)
    return ap


def run(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except (ConfigError, UsageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (BudgetExceeded, AlphabetTooLarge) as exc:
        print(f"budget exceeded: {exc}", file=sys.stderr)
        return 3
    except NoErgodicityCertificate as exc:
        print(f"no ergodicity certificate: {exc}", file=sys.stderr)
        return 4
    except EhcapError as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


def main():
    sys.exit(run())
