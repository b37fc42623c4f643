"""Capacity bounds for constrained state channels and energy harvesting systems.

Block bounds materialize an equivalent memoryless channel over input
functions and run Blahut-Arimoto on it; their cost grows doubly
exponentially in the block length. The dynamic programs run in time linear in
the block length: one concave step per state and stage, or, after replacing
mutual information by input entropy, a closed-form log-sum-exp
recursion.
"""
from __future__ import annotations

import itertools
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import BudgetExceeded, EhcapError, RequiresIidHarvest
from .model import FscxChannel, SystemModel, model_to_fscx
from .optimize import (LOG2, ba_dmc_capacity, extended_ba_directed_info,
                       inner_concave_step)

KINDS = ("UB_SC1_BLOCK", "LB_SC2_BLOCK", "UB_SC2_BLOCK", "UB_SC1_DP", "UB_LNX",
         "UB_SC2_LN", "LB_RATE")
UPPER = ("UB_SC1_BLOCK", "UB_SC2_BLOCK", "UB_SC1_DP", "UB_LNX", "UB_SC2_LN")
ALIASES = {"ub-sc1": "UB_SC1_BLOCK", "lb-sc2": "LB_SC2_BLOCK", "ub-sc2": "UB_SC2_BLOCK",
           "ub-sc1-dp": "UB_SC1_DP", "ub-lnx": "UB_LNX", "ub-sc2-ln": "UB_SC2_LN",
           "lb-rate": "LB_RATE"}


@dataclass
class BoundCurve:
    kind: str
    points: list
    fingerprint: str = ""
    settings: dict = field(default_factory=dict)
    errors: list = field(default_factory=list)

    @property
    def is_upper(self) -> bool:
        return self.kind in UPPER

    def to_dict(self) -> dict:
        return {"kind": self.kind, "points": [[int(n), float(v)] for n, v in self.points],
                "fingerprint": self.fingerprint, "settings": self.settings,
                "errors": self.errors}


@dataclass
class DpTable:
    """``values[n, z]`` in nats for n = 0..N and the maximizing laws ``policies[n-1, z, x]``."""

    values: np.ndarray
    policies: np.ndarray
    state_labels: tuple
    relaxed: bool = False

    def per_use_bits(self, n: int, init=None) -> float:
        """(1/n) of the value at stage n for point-mass starts (max) or a start law."""
        v = self.values[n]
        if init is None:
            return float(v.max() / n / LOG2)
        init = np.asarray(init, float)
        return float(init @ v / n / LOG2)


# state-channel views ---------------------------------------------------------

def _as_fscx(model) -> FscxChannel:
    if isinstance(model, FscxChannel):
        return model
    return model_to_fscx(model)


def sc2_state_channel(model: SystemModel):
    """Constrained state channel with state (last r harvests, energy) and output (y, e').

    Returns the channel and a map from a prehistory to the law of the first
    state when the battery starts full.
    """
    h = model.harvest
    E, S, r = h.alphabet, model.states, h.order
    zs = [(eh, s) for eh in itertools.product(E, repeat=r) for s in S]
    zi = {z: i for i, z in enumerate(zs)}
    nx, ny, ne, nz = model.n_inputs, model.n_outputs, len(E), len(zs)
    kernel = np.zeros((nx, nz, ny * ne, nz))
    feasible = []
    for k, (eh, s) in enumerate(zs):
        fx = model.feasible_index(s)
        feasible.append(fx)
        row = h.kernel[h.history_index(eh)] if r else h.kernel[0]
        for xi in range(nx):
            if xi not in fx:
                kernel[xi, k, :, k] = np.repeat(model.dmc[xi], ne) / ne
                continue
            for j, (e, w) in enumerate(zip(E, row)):
                if w == 0:
                    continue
                t = zi[((eh + (e,))[1:] if r else (), model.successor(xi, s, e))]
                kernel[xi, k, j::ne, t] += w * model.dmc[xi]
    fscx = FscxChannel(kernel, tuple(feasible), tuple(zs))

    def start(pre=None):
        pre = tuple(pre) if r else ()
        row = h.kernel[h.history_index(pre)] if r else h.kernel[0]
        pi = np.zeros(nz)
        for e, w in zip(E, row):
            z = ((pre + (e,))[1:] if r else (),
                 model.energy_rule(model.battery_cap, e, model.battery_cap))
            pi[zi[z]] += w
        return pi

    return fscx, start


# dynamic programs ------------------------------------------------------------

def dp_table(fscx: FscxChannel, N: int, tol: float = 1e-10) -> DpTable:
    """Backward recursion c[n, z] = max_p I(p, z) + sum_x p(x) sum_w Q(w|x,z) c[n-1, w]."""
    k = fscx.kernel
    nx, nz = k.shape[0], k.shape[1]
    W = [k[:, z].reshape(nx, -1) for z in range(nz)]
    Q = fscx.state_kernel()
    vals = np.zeros((N + 1, nz))
    pols = np.zeros((N, nz, nx))
    prev = [None] * nz
    for n in range(1, N + 1):
        for z in range(nz):
            lin = Q[:, z, :] @ vals[n - 1]
            p, v = inner_concave_step(W[z], lin, fscx.feasible[z], prev[z], tol)
            vals[n, z], pols[n - 1, z], prev[z] = v, p, p
    return DpTable(vals, pols, fscx.state_labels)


def lnx_table(fscx: FscxChannel, N: int) -> DpTable:
    """Entropy relaxation: c'[n, z] = log sum_{x in X(z)} exp(sum_w Q(w|x,z) c'[n-1, w])."""
    Q = fscx.state_kernel()
    nx, nz = Q.shape[0], Q.shape[1]
    mask = np.zeros((nx, nz), dtype=bool)
    for z, f in enumerate(fscx.feasible):
        mask[list(f), z] = True
    vals = np.zeros((N + 1, nz))
    pols = np.zeros((N, nz, nx))
    for n in range(1, N + 1):
        a = np.einsum("xzw,w->xz", Q, vals[n - 1])
        a = np.where(mask, a, -np.inf)
        amax = a.max(axis=0)
        e = np.exp(a - amax)
        tot = e.sum(axis=0)
        vals[n] = np.log(tot) + amax
        pols[n - 1] = (e / tot).T
    return DpTable(vals, pols, fscx.state_labels, relaxed=True)


def ub_sc1_dp(model, N: int, tol: float = 1e-10):
    """Linear-complexity upper bound with the receiver seeing the next state; max over start states."""
    table = dp_table(_as_fscx(model), N, tol)
    return table.per_use_bits(N), table


def ub_lnx(model, N: int):
    """Entropy-relaxed recursion in closed form.

    For an explicit state channel the start is the worst point mass. For an
    energy harvesting system the recursion runs on (recent harvests, energy)
    states and starts from a full battery, maximized over prehistories.
    """
    if isinstance(model, FscxChannel):
        table = lnx_table(model, N)
        return table.per_use_bits(N), table
    fscx, start = sc2_state_channel(model)
    table = lnx_table(fscx, N)
    best = max(table.per_use_bits(N, start(pre)) for pre in model.harvest.prehistories())
    return best, table


def ub_sc2_ln(model: SystemModel, N: int, tol: float = 1e-10):
    """Linear-complexity upper bound with the receiver seeing harvests and energy states."""
    fscx, start = sc2_state_channel(model)
    table = dp_table(fscx, N, tol)
    best = max(table.per_use_bits(N, start(pre)) for pre in model.harvest.prehistories())
    return best, table


# block bounds ----------------------------------------------------------------

def _dedupe(Q: np.ndarray) -> np.ndarray:
    return np.unique(np.round(Q, 15), axis=0)


def ub_fscx_block(model, N: int, cap: int = 10**5, tol: float = 1e-9) -> float:
    """Block bound over state-history strategies, maximized over the first state.

    For each first state, inputs are tables choosing an allowed input for
    every state history; the channel output is the block of outputs and next
    states.
    """
    fscx = _as_fscx(model)
    k = fscx.kernel
    nx, ns, ny, _ = k.shape
    best = 0.0
    for s1 in range(ns):
        # tree nodes: state histories (s_2..s_n) for n = 1..N
        nodes = [(s1,) + h for n in range(N) for h in itertools.product(range(ns), repeat=n)]
        count = 1
        for nd in nodes:
            count *= len(fscx.feasible[nd[-1]])
            if count > cap:
                raise BudgetExceeded(f"more than {cap} strategies at N={N}")
        index = {nd: i for i, nd in enumerate(nodes)}
        choice = np.array(list(itertools.product(*[fscx.feasible[nd[-1]] for nd in nodes])),
                          dtype=np.int64).reshape(count, len(nodes))
        # out[:, col] with columns (y_1 s_2 ... y_n s_{n+1}); track histories per column
        out = np.ones((count, 1))
        hist = [(s1,)]
        for n in range(N):
            cols, new_hist = [], []
            for c, h in enumerate(hist):
                x = choice[:, index[h]]
                block = k[x, h[-1]].reshape(count, ny * ns)
                cols.append(out[:, c:c + 1] * block)
                for y in range(ny):
                    for t in range(ns):
                        new_hist.append(h + (t,))
            out = np.hstack(cols)
            hist = new_hist
        C, _ = ba_dmc_capacity(_dedupe(out), tol)
        best = max(best, C / N)
    return best


def _harvest_rows(model: SystemModel, N: int, cap: int):
    """Output laws over Y^n of harvest-driven strategies, keyed by (steps left, battery)."""
    h = model.harvest
    E, pe = h.alphabet, h.marginal
    W = model.dmc
    ny = model.n_outputs
    memo = {}

    def rows(n, b):
        if n == 0:
            return np.ones((1, 1))
        if (n, b) in memo:
            return memo[(n, b)]
        per_e = []
        for e, w in zip(E, pe):
            if w == 0:
                continue
            s = model.energy_rule(b, e, model.battery_cap)
            opts = []
            for xi in model.feasible_index(s):
                sub = rows(n - 1, min(s - model.cost[xi], model.battery_cap))
                opts.append(np.einsum("y,kr->kyr", W[xi], sub).reshape(len(sub), -1))
            per_e.append((w, np.vstack(opts)))
        total = 1
        for _, o in per_e:
            total *= len(o)
        if total > cap:
            raise BudgetExceeded(f"{total} strategies from battery {b} with {n} uses left")
        acc = np.zeros((1, ny ** n))
        for w, o in per_e:
            acc = (acc[:, None, :] + w * o[None, :, :]).reshape(-1, ny ** n)
        acc = _dedupe(acc)
        memo[(n, b)] = acc
        return acc

    return rows(N, 0)


def lb_sc2_block(model: SystemModel, N: int, cap: int = 5 * 10**6, tol: float = 1e-9) -> float:
    """Lower bound from block strategies driven by harvests with an empty battery.

    Each strategy maps every harvest sequence e^N to an energy-feasible input
    block; averaging over harvests gives a memoryless channel from strategies
    to output blocks. Strategies with the same output law are merged.
    """
    if not model.harvest.is_iid:
        raise RequiresIidHarvest("block lower bound needs i.i.d. harvest")
    Q = _harvest_rows(model, N, cap)
    C, _ = ba_dmc_capacity(Q, tol)
    return C / N


def ub_sc2_block(model: SystemModel, N: int, tol: float = 1e-9, budget: int = 2**24) -> float:
    """Directed-information block bound with a full battery, maximized over prehistories."""
    pres = model.harvest.prehistories() if model.harvest.order else [None]
    best = 0.0
    for pre in pres:
        v, _, _ = extended_ba_directed_info(model, N, pre, tol=tol, budget=budget)
        best = max(best, v / N)
    return best


# sweeps ----------------------------------------------------------------------

def consistency_gate(curves, tol: float = 1e-6) -> list:
    """Pairs (upper, lower) where an upper bound sits below a lower bound."""
    last = {c.kind: c.points[-1][1] for c in curves if c.points}
    bad = []
    for u, vu in last.items():
        if u not in UPPER:
            continue
        for l, vl in last.items():
            if l not in UPPER and vu < vl - tol:
                bad.append((u, l, vu, vl))
    return bad


def _crossover(m):
    d = m.dmc
    if d.shape == (2, 2) and np.isclose(d[0, 1], d[1, 0]):
        return float(d[0, 1])
    return None


def _harvest_p(m):
    h = m.harvest
    if h.is_iid and len(h.alphabet) == 2:
        return float(h.marginal[1])
    return None


def _point(args):
    model, q, p, kinds, ns, budgets, seed = args
    from .config import model_fingerprint
    m = model.with_params(q=q, p=p)
    fp = model_fingerprint(m)
    curves = []
    for kind in kinds:
        kind = ALIASES.get(kind, kind)
        settings = {"q": q if q is not None else _crossover(m),
                    "p": p if p is not None else _harvest_p(m)}
        curve = BoundCurve(kind, [], fp, settings)
        try:
            curve.points, settings["tolerance"] = _evaluate(m, kind, ns, budgets, seed)
        except EhcapError as exc:
            curve.errors.append(f"{type(exc).__name__}: {exc}")
        curves.append(curve)
    for u, l, vu, vl in consistency_gate(curves, budgets.get("gate_tol", 1e-6)):
        for c in curves:
            if c.kind == u:
                c.errors.append(f"GateViolation: {u}={vu:.6g} below {l}={vl:.6g}")
    return curves


def _evaluate(m, kind, ns, budgets, seed):
    ns = sorted(ns)
    if kind in ("UB_SC1_DP", "UB_LNX", "UB_SC2_LN"):
        N = budgets.get("dp_n", ns[-1])
        grid = [n for n in ns if n <= N] or [N]
        if kind == "UB_SC1_DP":
            _, t = ub_sc1_dp(m, grid[-1])
            return [(n, t.per_use_bits(n)) for n in grid], 1e-10
        fscx, start = sc2_state_channel(m)
        t = lnx_table(fscx, grid[-1]) if kind == "UB_LNX" else dp_table(fscx, grid[-1])
        pres = m.harvest.prehistories() if m.harvest.order else [None]
        return [(n, max(t.per_use_bits(n, start(pre)) for pre in pres)) for n in grid], 1e-10
    if kind == "UB_SC2_BLOCK":
        N = budgets.get("ub_sc2_n", 16)
        return [(n, ub_sc2_block(m, n)) for n in ns if n <= N] or [(N, ub_sc2_block(m, N))], 1e-9
    if kind == "LB_SC2_BLOCK":
        N = budgets.get("lb_sc2_n", 4)
        return [(N, lb_sc2_block(m, N))], 1e-9
    if kind == "UB_SC1_BLOCK":
        N = budgets.get("ub_sc1_n", 2)
        return [(N, ub_fscx_block(m, N))], 1e-9
    if kind == "LB_RATE":
        from .surrogate import build_fsc_sc1
        from .optimize import gbaa_optimize
        order = budgets.get("rate_order", 0)
        fsc = build_fsc_sc1(m, 1)
        proc = None
        for k in range(order + 1):
            proc, est, _ = gbaa_optimize(fsc, k, iterations=budgets.get("gbaa_iters", 30),
                                         seed=seed, init=proc)
        return [(est.sample_length, est.rate_bits)], 2 * est.stderr
    raise ValueError(f"unknown bound kind {kind!r}")


def bound_sweep(model: SystemModel, grid, kinds, ns=(16,), budgets=None, seed: int = 0,
                threads: int = 1) -> list:
    """Evaluate ``kinds`` at every ``(q, p)`` of ``grid``; returns curves in grid order.

    Errors at one point are recorded on its curves and the sweep goes on.
    """
    budgets = dict(budgets or {})
    if not kinds:
        return []
    jobs = [(model, q, p, tuple(kinds), tuple(ns), budgets, seed) for q, p in grid]
    if threads > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=threads) as ex:
            parts = list(ex.map(_point, jobs))
    else:
        parts = [_point(j) for j in jobs]
    return [c for part in parts for c in part]
