"""Blahut-Arimoto style optimizers.

* :func:`ba_dmc_capacity` - capacity of a discrete memoryless channel.
* :func:`inner_concave_step` - maximize I(p) + <p, lin> over a face of the simplex.
* :func:`gbaa_optimize` - ascent over Markov policy inputs with stochastic T-values.
* :func:`extended_ba_directed_info` - directed information over energy-feasible
  causally conditioned inputs when the receiver sees the harvests.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .errors import BudgetExceeded, ErgodicityLost, NonConvergence, RequiresIidHarvest
from .inforate import estimate_info_rate, rate_certificate, simulate_path
from .model import SystemModel
from .surrogate import MarkovInputProcess, SurrogateFsc

LOG2 = np.log(2.0)


@dataclass
class OptimizationTrace:
    iterates: list = field(default_factory=list)
    converged: bool = False
    tolerance: float = 0.0

    def to_dict(self) -> dict:
        return {"iterates": [[int(i), float(v)] for i, v in self.iterates],
                "converged": self.converged, "tolerance": self.tolerance}


def _negentropy(W: np.ndarray) -> np.ndarray:
    """sum_y W log W per row (nats)."""
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(W > 0, W * np.log(W), 0.0).sum(axis=1)


def _divergences(W, nW, p):
    q = p @ W
    logq = np.log(np.where(q > 0, q, 1.0))
    return nW - W @ logq


def _removable(W, q, g, val, gap) -> np.ndarray:
    """Inputs that cannot carry an optimal law (capacity problems only).

    With I_L = <p, D> and gap = max D - I_L, the optimal output law q* obeys
    D(q*||q) <= gap, so by Pinsker |q*(y) - q(y)| <= eps = sqrt(gap / 2).
    Every x in an optimal support has D(W_x||q*) = C >= I_L, hence
    D(W_x||q) >= I_L + sum_y W_x(y) log(1 - eps / q(y)). Inputs below that
    are not needed.
    """
    eps = np.sqrt(gap / 2)
    with np.errstate(divide="ignore", invalid="ignore"):
        r = np.where(q > eps, np.log1p(-eps / np.where(q > 0, q, 1.0)), -np.inf)
        slack = np.where(W > 0, W * r[None, :], 0.0).sum(axis=1)
    return g < val + slack


def _ascent(W, nW, lin, p, tol, max_iter, eliminate=False):
    """Maximize sum_x p(x) (D_p(x) + lin(x)) over the simplex.

    Steps are p <- p exp(mu g) / Z with g the current gradient. mu = 1 is the
    classic alternating-maximization step and never decreases the objective;
    larger steps are tried first and kept only when they do not lose ground,
    which matters for nearly useless channels where plain iteration crawls.
    Stops when max g - <p, g> (optimum minus current value, bounded) < tol.
    With ``eliminate`` inputs proven useless are dropped along the way.
    """
    idx = np.arange(len(p))
    g = _divergences(W, nW, p) + lin
    val = float(p @ g)
    mu = 1.0
    for it in range(max_iter):
        gmax = g.max()
        if gmax - val < tol:
            break
        if eliminate and it % 10 == 9 and len(idx) > W.shape[1]:
            drop = _removable(W, p @ W, g, val, gmax - val)
            if drop.any() and not drop.all():
                keep = ~drop
                idx, W, nW, lin, p, g = idx[keep], W[keep], nW[keep], lin[keep], p[keep], g[keep]
                p = p / p.sum()
                g = _divergences(W, nW, p) + lin
                val = float(p @ g)
                continue
        while True:
            cand = p * np.exp(mu * (g - gmax))
            cand /= cand.sum()
            gc = _divergences(W, nW, cand) + lin
            vc = float(cand @ gc)
            if vc >= val or mu == 1.0:
                break
            mu = max(1.0, mu / 4)
        p, g, val = cand, gc, vc
        mu = min(mu * 2, 1e12)
    return idx, p, val, bool(g.max() - val < tol)


def _objective(W, nW, lin, p):
    g = _divergences(W, nW, p) + lin
    return g, float(p @ g)


def _newton_face(W, nW, lin, p, iters: int = 200, tol: float = 1e-14):
    """Newton ascent of I(p) + <p, lin> on the face spanned by the rows of ``W``.

    Coordinates that reach zero leave the face. Returns the new law.
    """
    p = p.copy()
    for _ in range(iters):
        live = np.flatnonzero(p > 0)
        Wl, nWl, ll, pl = W[live], nW[live], lin[live], p[live]
        a = len(live)
        g, val = _objective(Wl, nWl, ll, pl)
        if a == 1:
            break
        q = pl @ Wl
        Wq = np.where(q > 0, Wl / np.where(q > 0, q, 1.0), 0.0)
        K = np.zeros((a + 1, a + 1))
        H = Wq @ Wl.T
        # a small shift keeps the system solvable when rows are affinely
        # dependent; along such directions the objective is linear and the
        # step then runs to the boundary of the face
        K[:a, :a] = H + 1e-12 * np.trace(H) / a * np.eye(a)
        K[:a, a] = K[a, :a] = 1.0
        d = np.linalg.lstsq(K, np.append(g, 0.0), rcond=None)[0][:a]
        d -= d.mean()
        dec = float(g @ d)
        if not np.isfinite(dec) or dec <= 0 or g.max() - g.min() < tol:
            break
        # below this the gain is not visible in the objective, so the step is
        # taken on the strength of the local model alone
        blind = dec < 1e-11 * max(1.0, abs(val))
        neg = d < 0
        ratio = np.full(a, np.inf)
        ratio[neg] = -pl[neg] / d[neg]
        step = min(1.0, float(ratio.min()))
        if step < 1e-12:
            # a nearly vanished coordinate blocks the step: drop it from the face
            p[live[ratio < 1e-12]] = 0.0
            p /= p.sum()
            continue
        while step > 1e-12:
            cand = pl + step * d
            cand[cand < 1e-300] = 0.0
            cand /= cand.sum()
            if blind or _objective(Wl, nWl, ll, cand)[1] >= val:
                break
            step /= 2
        else:
            break
        p[live] = cand
    return p


def _maximize(W, lin, p, tol, max_iter, eliminate):
    """Capacity-type maximization with a certified gap below ``tol`` (nats).

    A few hundred ascent steps find the rough support, then rounds of Newton
    on the current support plus the most violating inputs finish the job.
    """
    nW = _negentropy(W)
    idx, p, val, ok = _ascent(W, nW, lin, p, tol, min(max_iter, 300), eliminate=eliminate)
    if ok:
        return idx, p, val, True
    W, nW, lin = W[idx], nW[idx], lin[idx]
    k = max(W.shape[1], 4)
    for _ in range(max_iter // 10):
        g, val = _objective(W, nW, lin, p)
        if g.max() - val < tol:
            return idx, p, val, True
        act = p > 1e-12 * p.max()
        if act.sum() > 4 * k:
            act[:] = False
            act[np.argsort(p)[-4 * k:]] = True
        act[np.argsort(g)[-k:]] = True
        sub = p[act] + np.where(p[act] > 0, 0.0, 1e-3 / act.sum())
        sub = _newton_face(W[act], nW[act], lin[act], sub / sub.sum())
        new = np.zeros_like(p)
        new[act] = sub
        if _objective(W, nW, lin, new)[1] < val:
            # Newton stalled; fall back to ascent steps from the current point
            _, new, _, _ = _ascent(W, nW, lin, p, tol, 50)
        p = new
    g, val = _objective(W, nW, lin, p)
    return idx, p, val, bool(g.max() - val < tol)


def ba_dmc_capacity(W, tol: float = 1e-9, max_iter: int = 100000, p0=None):
    """Capacity in bits and an optimal input law of the channel ``W[x, y]``.

    Stops when ``max D - <p, D>`` (an upper minus a lower bound on the
    capacity) is below ``tol`` bits.
    """
    W = np.asarray(W, dtype=float)
    p = np.full(W.shape[0], 1.0 / W.shape[0]) if p0 is None else np.asarray(p0, float).copy()
    idx, pk, lo, ok = _maximize(W, np.zeros(W.shape[0]), p, tol * LOG2, max_iter, True)
    if not ok:
        raise NonConvergence(f"BA did not reach {tol} bits in {max_iter} iterations")
    p = np.zeros(W.shape[0])
    p[idx] = pk
    return max(lo, 0.0) / LOG2, p


def inner_concave_step(W, lin, feasible, p0=None, tol: float = 1e-10,
                       max_iter: int = 200000):
    """Maximize ``I(p; W) + sum_x p(x) lin(x)`` over laws supported on ``feasible``.

    ``W`` is the channel of the step (rows indexed by input) and ``lin`` is in
    nats. Returns the full-length optimal law and the optimal value in nats.
    """
    W = np.asarray(W, dtype=float)
    lin = np.asarray(lin, dtype=float)
    idx = np.asarray(feasible, dtype=np.int64)
    Wf, lf = W[idx], lin[idx]
    p = np.zeros(W.shape[0])
    if len(idx) == 1:
        p[idx[0]] = 1.0
        return p, float(lf[0])
    if p0 is None:
        pf = np.full(len(idx), 1.0 / len(idx))
    else:
        pf = np.asarray(p0, dtype=float)[idx] + 1e-12
        pf /= pf.sum()
    _, pf, val, ok = _maximize(Wf, lf, pf, tol, max_iter, False)
    if not ok:
        raise NonConvergence(f"inner step did not reach {tol} in {max_iter} iterations")
    p[idx] = pf
    return p, val


# Markov-input ascent ---------------------------------------------------------

def _perron_update(T: np.ndarray, proc: MarkovInputProcess) -> np.ndarray:
    """Kernel maximizing sum Q (log 1/p + T) over stationary chains on the context graph."""
    nc, nv = T.shape
    nxt = proc.next_context()
    E = np.exp(T - T.max())
    A = np.zeros((nc, nc))
    np.add.at(A, (np.repeat(np.arange(nc), nv), nxt.ravel()), E.ravel())
    b = np.ones(nc)
    rho = 1.0
    for _ in range(10000):
        nb = A @ b
        rho = nb.max()
        nb /= rho
        if np.abs(nb - b).max() < 1e-14:
            b = nb
            break
        b = nb
    K = E * b[nxt] / (rho * b[:, None])
    return K / K.sum(axis=1, keepdims=True)


def tvalues(fsc: SurrogateFsc, proc: MarkovInputProcess, y: np.ndarray) -> np.ndarray:
    """Per-branch T-values estimated from one output path.

    With P_n the posterior of (context, input) at use n given the whole path,
    T[c, v] = (1/N) sum_n [P_n(c,v) log P_n(c,v) / Q(c,v) - P_n(c) log P_n(c) / mu(c)]
    where mu and Q = mu * p are stationary context and branch probabilities.
    """
    a0 = np.ascontiguousarray(proc.initial[:, None] * fsc.initial[None, :])
    A, B = _kernels.branch_statistics(a0, proc.kernel, proc.next_context(),
                                      np.ascontiguousarray(fsc.kernel), y)
    N = len(y)
    mu = proc.stationary()
    Q = mu[:, None] * proc.kernel
    with np.errstate(divide="ignore", invalid="ignore"):
        T = np.where(Q > 0, A / (N * Q), 0.0) - np.where(mu > 0, B / (N * mu), 0.0)[:, None]
    return T


def gbaa_optimize(fsc: SurrogateFsc, order: int = 0, iterations: int = 30, seed: int = 0,
                  init: MarkovInputProcess | None = None, path_length: int = 10**5,
                  rate_length: int = 2 * 10**5, n_blocks: int = 20, floor: float = 1e-9,
                  plateau: int = 5):
    """Ascent over order-``order`` Markov inputs; returns the best cross-checked iterate.

    Each iteration estimates T-values on a fixed-seed path, applies the
    exponentiated-T update, floors the kernel and re-estimates the rate with
    the same seed, so successive rates differ by a low-variance amount.
    """
    proc = init.lift(order) if init is not None else MarkovInputProcess.iud(fsc.n_inputs, order)
    if np.any(proc.kernel <= 0):
        k = np.maximum(proc.kernel, floor)
        proc = MarkovInputProcess(proc.n_symbols, order, k / k.sum(axis=1, keepdims=True),
                                  proc.initial)
    cert = rate_certificate(fsc, proc)
    if not cert.certified:
        raise ErgodicityLost("initial input process does not give an ergodic joint chain")
    best = estimate_info_rate(fsc, proc, rate_length, seed, n_blocks, certificate=cert)
    best_proc = proc
    trace = OptimizationTrace([(0, best.rate_bits)], tolerance=2 * best.stderr)
    history = [best.rate_bits]
    for it in range(1, iterations + 1):
        _, _, y = simulate_path(fsc, proc, path_length, seed, worker=1)
        T = tvalues(fsc, proc, y)
        K = np.maximum(_perron_update(T, proc), floor)
        K /= K.sum(axis=1, keepdims=True)
        proc = MarkovInputProcess.from_kernel(K, order)
        cert = rate_certificate(fsc, proc)
        if not cert.certified:
            raise ErgodicityLost(f"iterate {it} left the ergodic class")
        est = estimate_info_rate(fsc, proc, rate_length, seed, n_blocks, certificate=cert)
        trace.iterates.append((it, est.rate_bits))
        history.append(est.rate_bits)
        if est.rate_bits > best.rate_bits:
            best, best_proc = est, proc
        recent = history[-plateau:]
        if len(history) > plateau and max(recent) - min(recent) < 2 * est.stderr:
            trace.converged = True
            break
    return best_proc, best, trace


# extended BA over causal conditionings -------------------------------------

def _contract(t: np.ndarray, M: np.ndarray, n: int) -> np.ndarray:
    """Apply matrix ``M`` along axes 1..n of ``t`` (axis 0 indexes tree nodes)."""
    for a in range(1, n + 1):
        t = np.moveaxis(np.tensordot(t, M, axes=([a], [0])), -1, a)
    return t


@dataclass
class _Level:
    parent: np.ndarray      # index into previous level
    w: np.ndarray           # probability of reaching the node
    ws: np.ndarray          # weight of the block ending at this node
    const: np.ndarray       # policy-independent reward attached to the node
    s: np.ndarray           # energy state per prefix x^{n-1}, shape (K, nx^{n-1})
    mask: np.ndarray        # feasibility of x_n, shape (K, nx^{n-1}, nx)
    paths: dict             # harvest path -> node index


class _TreeProblem:
    """Causal input tree over harvest paths with block rewards at chosen nodes."""

    def __init__(self, model: SystemModel, roots, depth: int, children, stop):
        self.model = model
        W = model.dmc
        self.W, self.nW = W, _negentropy(W)
        self.nx = nx = model.n_inputs
        cost = np.array(model.cost)
        E = model.harvest.alphabet
        rule = np.array([[model.energy_rule(b, e, model.battery_cap) for e in E]
                         for b in model.batteries])
        levels = []
        w = np.array([r[0] for r in roots])
        s = np.array([[r[1]] for r in roots])
        paths = {r[2]: i for i, r in enumerate(roots)}
        parent = np.full(len(roots), -1)
        hist = [r[2] for r in roots]
        for n in range(1, depth + 1):
            mask = cost[None, None, :] <= s[:, :, None]
            ws, const = stop(n, w)
            levels.append(_Level(parent, w, ws, const, s, mask, paths))
            if n == depth:
                break
            b = s[:, :, None] - cost[None, None, :]
            b = np.where(b >= 0, np.minimum(b, model.battery_cap), 0).reshape(len(w), -1)
            par, ws_new, s_new, hist_new, paths = [], [], [], [], {}
            for k, h in enumerate(hist):
                for e, pe in children(h):
                    paths[h + (e,)] = len(par)
                    par.append(k)
                    ws_new.append(w[k] * pe)
                    s_new.append(rule[b[k], E.index(e)])
                    hist_new.append(h + (e,))
            parent, w, s, hist = np.array(par), np.array(ws_new), np.array(s_new), hist_new
        self.levels = levels
        self.depth = len(levels)
        self.size = sum(len(L.w) * nx ** (n + 1) for n, L in enumerate(levels))

    def initial_conditionals(self):
        return [L.mask / L.mask.sum(axis=2, keepdims=True) for L in self.levels]

    def _forward(self, cond):
        P = []
        for n, L in enumerate(self.levels):
            K = len(L.w)
            if n == 0:
                P.append(cond[0].reshape(K, -1))
            else:
                P.append((P[-1][L.parent][:, :, None] * cond[n]).reshape(K, -1))
        return P

    def _reward(self, n, Pn):
        """D(x^n) for every node: per-block divergence of the output law."""
        K = Pn.shape[0]
        shape = (K,) + (self.nx,) * n
        Py = _contract(Pn.reshape(shape), self.W, n)
        logPy = np.log(np.maximum(Py, 1e-300))
        cross = _contract(logPy, self.W.T, n).reshape(K, -1)
        neg = np.zeros((self.nx,) * n)
        for a in range(n):
            neg = neg + self.nW.reshape((1,) * a + (-1,) + (1,) * (n - a - 1))
        return neg.reshape(1, -1) - cross

    def iterate(self, cond):
        """One sweep: objective of ``cond``, an upper bound on the optimum, updated conditionals."""
        P = self._forward(cond)
        const = sum(float(L.const.sum()) for L in self.levels)
        obj = const
        D = []
        for n, L in enumerate(self.levels):
            if np.any(L.ws > 0):
                Dn = self._reward(n + 1, P[n])
                obj += float(np.sum(L.ws[:, None] * P[n] * Dn))
                D.append(Dn)
            else:
                D.append(None)
        new = [None] * self.depth
        soft_up = hard_up = None
        for n in range(self.depth - 1, -1, -1):
            L = self.levels[n]
            K = len(L.w)
            G = np.zeros((K, self.nx ** (n + 1)))
            if D[n] is not None:
                G += (L.ws / L.w)[:, None] * D[n]
            Gh = G.copy()
            if soft_up is not None:
                G += soft_up
                Gh += hard_up
            G = np.where(L.mask, G.reshape(K, -1, self.nx), -np.inf)
            Gh = np.where(L.mask, Gh.reshape(K, -1, self.nx), -np.inf)
            gmax = G.max(axis=2, keepdims=True)
            e = cond[n] * np.exp(G - gmax)
            tot = e.sum(axis=2, keepdims=True)
            new[n] = e / tot
            V = np.log(tot[:, :, 0]) + gmax[:, :, 0]
            Vh = Gh.max(axis=2)
            if n > 0:
                prev = self.levels[n - 1]
                soft_up = np.zeros((len(prev.w), V.shape[1]))
                hard_up = np.zeros_like(soft_up)
                scale = (L.w / prev.w[L.parent])[:, None]
                np.add.at(soft_up, L.parent, scale * V)
                np.add.at(hard_up, L.parent, scale * Vh)
        ub = const + float(np.sum(self.levels[0].w * Vh[:, 0]))
        return obj, ub, new

    def solve(self, tol_nats, max_iter, cond=None):
        cond = self.initial_conditionals() if cond is None else cond
        trace = []
        for it in range(max_iter):
            obj, ub, new = self.iterate(cond)
            trace.append((it, obj))
            if ub - obj < tol_nats:
                return obj, ub, cond, trace, True
            cond = new
        return obj, ub, cond, trace, False


class CausalConditioning:
    """Energy-feasible conditionals p(x_n | x^{n-1}, e^n) for a block of length N.

    Stored per tree node for the harvest paths that matter; with renewal
    letters the block is split into independent segments and the segment in
    force is looked up from the last renewal.
    """

    def __init__(self, model, N, segments, resets, rooted):
        self.model = model
        self.N = N
        self._segments = segments
        self._resets = resets
        self._rooted = rooted

    def _locate(self, e_hist):
        m = self.model
        n = len(e_hist)
        if self._rooted is not None:
            return self._rooted, tuple(e_hist), 0
        s1 = m.energy_rule(m.battery_cap, e_hist[0], m.battery_cap)
        start, key = 0, (self.N, s1)
        for t in range(1, n):
            if e_hist[t] in self._resets:
                start = t
                key = (self.N - t, m.energy_rule(0, e_hist[t], m.battery_cap))
        return self._segments[key], tuple(e_hist[start + 1:]), start

    def conditional(self, x_hist, e_hist) -> np.ndarray:
        """Distribution over input indices given past input indices and harvests."""
        if len(x_hist) != len(e_hist) - 1:
            raise ValueError("need one more harvest than past inputs")
        (levels, conds), path, start = self._locate(e_hist)
        d = len(e_hist) - start - 1
        k = levels[d].paths[path]
        code = 0
        for x in x_hist[start:]:
            code = code * self.model.n_inputs + x
        return conds[d][k, code]

    def mask(self, x_hist, e_hist) -> np.ndarray:
        (levels, _), path, start = self._locate(e_hist)
        d = len(e_hist) - start - 1
        k = levels[d].paths[path]
        code = 0
        for x in x_hist[start:]:
            code = code * self.model.n_inputs + x
        return levels[d].mask[k, code]

    def tables(self):
        """Yield ``(levels, conditionals)`` for every stored segment."""
        if self._rooted is not None:
            yield self._rooted
        else:
            yield from self._segments.values()


def reset_letters(model: SystemModel) -> tuple:
    """Harvests after which the energy state no longer depends on the battery."""
    out = []
    for e in model.harvest.alphabet:
        if len({model.energy_rule(b, e, model.battery_cap) for b in model.batteries}) == 1:
            out.append(e)
    return tuple(out)


def extended_ba_directed_info(model: SystemModel, N: int, prehistory=None,
                              tol: float = 1e-6, max_iter: int = 20000,
                              budget: int = 2**24, renewal: bool = True):
    """Maximal I(X^N -> Y^N E_2^{N+1} | E_1) over legal causal conditionings, in bits.

    The receiver knows the harvests, so the objective is the harvest-averaged
    block mutual information of the inputs chosen causally from the harvests,
    starting from a full battery. With i.i.d. harvests, a harvest that fixes
    the next energy state regardless of the battery (a renewal letter) cuts the
    block into independent pieces; the optimum is then assembled from optimal
    segments by a recursion over the remaining length. Segment values are
    certified upper bounds, so the reported value is an upper bound on the
    maximum within ``tol``.
    """
    h = model.harvest
    tol_n = tol * LOG2
    if N < 1:
        raise ValueError("block length must be >= 1")
    if h.is_iid:
        pe = dict(zip(h.alphabet, h.marginal))
        R = reset_letters(model) if renewal else ()
        nonreset = [e for e in h.alphabet if e not in R and pe[e] > 0]
        pR = sum(pe[e] for e in R)
        F, segments, traces = {0: {}}, {}, {}

        def value(L, s, table):
            return 0.0 if L == 0 else table[L][s]

        for L in range(1, N + 1):
            F[L] = {}
        top_states = sorted({model.energy_rule(model.battery_cap, e, model.battery_cap)
                             for e in h.alphabet if pe[e] > 0})
        reset_states = sorted({model.energy_rule(0, e, model.battery_cap) for e in R})
        for L in range(1, N + 1):
            states = sorted(set(reset_states) | (set(top_states) if L == N else set()))
            for s in states:
                def stop(n, w, L=L):
                    if n < L:
                        c = sum(pe[e] * value(L - n, model.energy_rule(0, e, model.battery_cap), F)
                                for e in R)
                        return w * pR, w * c
                    return w.copy(), np.zeros_like(w)

                tree = _TreeProblem(model, [(1.0, s, ())], L,
                                    lambda hh: [(e, pe[e]) for e in nonreset], stop)
                if tree.size > budget:
                    raise BudgetExceeded(f"tree of size {tree.size} exceeds budget {budget}")
                obj, ub, cond, trace, ok = tree.solve(tol_n, max_iter)
                if not ok:
                    raise NonConvergence(f"extended BA did not converge for segment {L}, {s}")
                F[L][s] = ub
                segments[(L, s)] = (tree.levels, cond)
                traces[(L, s)] = trace
        e_pos = [e for e in h.alphabet if pe[e] > 0]
        top = [(pe[e], model.energy_rule(model.battery_cap, e, model.battery_cap)) for e in e_pos]
        ub_total = sum(w * F[N][s] for w, s in top)
        # combined trace of the top-level segments, padded with final values
        length = max(len(traces[(N, s)]) for _, s in top)
        tr = OptimizationTrace(tolerance=tol, converged=True)
        for it in range(length):
            v = 0.0
            for w, s in top:
                t = traces[(N, s)]
                v += w * t[min(it, len(t) - 1)][1]
            tr.iterates.append((it, v / LOG2))
        cc = CausalConditioning(model, N, segments, set(R), None)
        return ub_total / LOG2, cc, tr
    # Markov harvest: one tree rooted at the first harvest
    pre = tuple(prehistory) if prehistory is not None else h.prehistory
    if pre is None:
        raise RequiresIidHarvest("a Markov harvest needs a prehistory")
    r = h.order

    def kids(hist):
        full = (pre + hist)[-r:]
        row = h.kernel[h.history_index(full)]
        return [(e, p) for e, p in zip(h.alphabet, row) if p > 0]

    roots = [(p, model.energy_rule(model.battery_cap, e, model.battery_cap), (e,))
             for e, p in kids(())]

    def stop(n, w):
        return (w.copy() if n == N else np.zeros_like(w)), np.zeros_like(w)

    tree = _TreeProblem(model, roots, N, kids, stop)
    if tree.size > budget:
        raise BudgetExceeded(f"tree of size {tree.size} exceeds budget {budget}")
    obj, ub, cond, trace, ok = tree.solve(tol_n, max_iter)
    if not ok:
        raise NonConvergence("extended BA did not converge")
    tr = OptimizationTrace([(i, v / LOG2) for i, v in trace], True, tol)
    return ub / LOG2, CausalConditioning(model, N, {}, set(), (tree.levels, cond)), tr
