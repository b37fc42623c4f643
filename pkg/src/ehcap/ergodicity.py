"""Finitely checkable stationarity and ergodicity certificates.

Everything here works on supports of stochastic matrices: the Dobrushin
coefficient, scrambling and positive-column tests, a search for the strong
positive column property of a finite-state channel, and irreducibility of a
Markov chain on the support of its stationary mean.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.sparse.csgraph import connected_components

from .errors import NotStochastic
from .model import SystemModel
from .surrogate import MarkovInputProcess, SurrogateFsc

CERTIFIED_AMS = "CertifiedAMSErgodic"
CERTIFIED_INDECOMPOSABLE = "CertifiedIndecomposable"
INCONCLUSIVE = "Inconclusive"


@dataclass(frozen=True)
class ErgodicityReport:
    verdict: str
    condition_used: str | None = None
    witness: dict | None = None
    decomposable: bool = False
    satisfied: tuple = field(default=())

    @property
    def certified(self) -> bool:
        return self.verdict != INCONCLUSIVE

    def to_dict(self) -> dict:
        return {"verdict": self.verdict, "condition_used": self.condition_used,
                "witness": self.witness, "decomposable": self.decomposable,
                "satisfied": list(self.satisfied)}


def _stochastic(P, atol=1e-10) -> np.ndarray:
    P = np.asarray(P, dtype=float)
    if P.ndim != 2 or np.any(P < -atol) or not np.allclose(P.sum(axis=1), 1.0, rtol=0, atol=atol):
        raise NotStochastic("matrix is not row-stochastic")
    return P


def dobrushin_delta(P) -> float:
    """Largest total-variation distance between two rows."""
    P = _stochastic(P)
    diff = P[None, :, :] - P[:, None, :]
    return float(np.clip(diff, 0, None).sum(axis=2).max())


def is_scrambling(P) -> bool:
    """Every pair of rows shares a positive column."""
    S = (_stochastic(P) > 0).astype(np.int64)
    return bool(np.all(S @ S.T > 0))


def has_positive_column(P) -> bool:
    return bool(np.any(np.all(_stochastic(P) > 0, axis=0)))


# strong positive column search ---------------------------------------------

def _successor_masks(phi: np.ndarray) -> list:
    """succ[v][z] = bitmask of states reachable from z under input v."""
    nv, nz, _ = phi.shape
    out = []
    for v in range(nv):
        row = []
        for z in range(nz):
            m = 0
            for t in np.flatnonzero(phi[v, z] > 0):
                m |= 1 << int(t)
            row.append(m)
        out.append(row)
    return out


def _step(node: tuple, succ_v: list) -> tuple:
    out = []
    for mask in node:
        m, z = 0, 0
        while mask:
            if mask & 1:
                m |= succ_v[z]
            mask >>= 1
            z += 1
        out.append(m)
    return tuple(out)


def _common(node: tuple) -> int:
    m = -1
    for r in node:
        m &= r
    return m


def _word_product(phi, word):
    P = np.eye(phi.shape[1])
    for v in word:
        P = P @ phi[v]
    return P


def _disjoint_forever(succ: list, nz: int, nv: int):
    """Two initial states plus an input word keeping their supports apart forever.

    Nodes are pairs of disjoint supports. Nodes with no disjoint successor are
    pruned until nothing changes; a surviving start pair can be steered
    forever, giving total-variation distance one at every length. Returns
    ``(z1, z2, prefix, cycle)`` or None.
    """
    edges = {}
    todo = [(1 << a, 1 << b) for a in range(nz) for b in range(a + 1, nz)]
    while todo:
        node = todo.pop()
        if node in edges:
            continue
        out = {}
        for v in range(nv):
            a, b = _step(node, succ[v])
            if not a & b:
                out[v] = (a, b)
                todo.append((a, b))
        edges[node] = out
    alive = set(edges)
    changed = True
    while changed:
        changed = False
        for node in list(alive):
            if not any(c in alive for c in edges[node].values()):
                alive.discard(node)
                changed = True
    for a in range(nz):
        for b in range(a + 1, nz):
            node = (1 << a, 1 << b)
            if node not in alive:
                continue
            path, word = [node], []
            while True:
                v, node = min((v, c) for v, c in edges[node].items() if c in alive)
                word.append(v)
                if node in path:
                    i = path.index(node)
                    return a, b, word[:i], word[i:]
                path.append(node)
    return None


def check_indecomposable(fsc: SurrogateFsc, depth_cap: int = 64) -> ErgodicityReport:
    """Search for a length n such that every input word gives a positive column.

    A node records which states each initial state can reach. Once a node has
    a common reachable state it stays that way, so only nodes without one are
    expanded. If that frontier empties at depth n, every word of length n has a
    positive column. If it repeats, no depth will do. The report is flagged
    decomposable only when two initial states can be kept apart forever.
    """
    phi = fsc.state_marginal()
    nv, nz, _ = phi.shape
    succ = _successor_masks(phi)
    start = tuple(1 << z for z in range(nz))
    frontier = {start: ()}
    seen = {frozenset(frontier): 0}
    for n in range(1, depth_cap + 1):
        nxt = {}
        for node, word in frontier.items():
            for v in range(nv):
                child = _step(node, succ[v])
                if not _common(child) and child not in nxt:
                    nxt[child] = word + (v,)
        if not nxt:
            word = (0,) * n
            return ErgodicityReport(CERTIFIED_INDECOMPOSABLE, "strong-positive-column",
                                    {"n": n, "word": list(word),
                                     "product": _word_product(phi, word).tolist()})
        key = frozenset(nxt)
        if key in seen:
            # the frontier is periodic from here on, so no depth certifies
            node, word = min(nxt.items(), key=lambda kv: kv[1])
            wit = {"n": n, "period": n - seen[key], "word": list(word),
                   "product": _word_product(phi, word).tolist()}
            return _inconclusive("frontier-cycle", wit, succ, nz, nv)
        seen[key] = n
        frontier = nxt
    return _inconclusive(None, {"depth_cap": depth_cap}, succ, nz, nv)


def _inconclusive(tag, wit, succ, nz, nv) -> ErgodicityReport:
    apart = _disjoint_forever(succ, nz, nv)
    if apart is None:
        return ErgodicityReport(INCONCLUSIVE, tag, wit)
    a, b, prefix, cycle = apart
    wit = dict(wit, states=[a, b], prefix=prefix, cycle=cycle)
    return ErgodicityReport(INCONCLUSIVE, tag, wit, decomposable=True)


# theorem-based conditions ------------------------------------------------------

def _harvest_always_reaches(model: SystemModel):
    """Letters with positive probability after every harvest history."""
    k = model.harvest.kernel
    return [e for j, e in enumerate(model.harvest.alphabet) if np.all(k[:, j] > 0)]


def _markov_condition(model: SystemModel, fsc: SurrogateFsc):
    rule = model.energy_rule.kind
    if rule not in ("additive", "store_first"):
        return None
    m = fsc.policies.memory_m
    r = model.harvest.order
    gmax = max(model.cost)
    for alpha in sorted(_harvest_always_reaches(model), reverse=True):
        if rule == "store_first" and alpha >= model.battery_cap:
            return "erg-conds-Markov(i)", {"alpha": alpha, "N": max(m, r) + 1}
        if alpha > gmax:
            return "erg-conds-Markov(ii)", {"alpha": alpha,
                                             "N": max(m, r) + model.battery_cap + 1}
    return None


def _iid_conditions(model: SystemModel, fsc: SurrogateFsc):
    h = model.harvest
    rule = model.energy_rule.kind
    if not h.is_iid or fsc.policies.memory_m != 1 or rule not in ("additive", "store_first"):
        return []
    if np.any(h.marginal <= 0):
        return []
    E = sorted(h.alphabet)
    found = []
    interval = E == list(range(E[0], E[-1] + 1))
    spread = E[-1] - E[0] if rule == "additive" else E[-1]
    if interval and spread >= model.battery_cap:
        found.append(("erg-conds-iid(ii)", {"N": 2, "spread": spread,
                                             "battery_cap": model.battery_cap}))
    if E[-1] > max(model.cost):
        found.append(("erg-conds-iid(iv)", {"max_harvest": E[-1],
                                             "max_cost": max(model.cost),
                                             "N": model.battery_cap + 1}))
    return found


def _merging_word(fsc: SurrogateFsc, inp: MarkovInputProcess, depth_cap: int):
    """Shortest positive-probability word whose state product is scrambling."""
    phi = fsc.state_marginal()
    nz = phi.shape[1]
    succ = _successor_masks(phi)
    proc = inp
    nxt = proc.next_context()
    allowed = proc.kernel > 0

    def scrambles(node):
        return all(node[a] & node[b] for a in range(nz) for b in range(a + 1, nz))

    start = tuple(1 << z for z in range(nz))
    frontier = {(c, start): () for c in np.flatnonzero(proc.initial > 0)}
    seen = set(frontier)
    for n in range(1, depth_cap + 1):
        new = {}
        for (c, node), word in frontier.items():
            for v in np.flatnonzero(allowed[c]):
                child = (int(nxt[c, v]), _step(node, succ[v]))
                if child in seen:
                    continue
                w = word + (int(v),)
                if scrambles(child[1]):
                    return w
                seen.add(child)
                new[child] = w
        if not new:
            return None
        frontier = new
    return None


def check_sufficient_conditions(model: SystemModel, fsc: SurrogateFsc,
                                inp: MarkovInputProcess | None = None,
                                depth_cap: int = 32) -> ErgodicityReport:
    """First satisfied sufficient condition, plus the list of all that hold.

    For i.i.d. harvests with one-state memory the specialised i.i.d. items are
    tried before the general Markov-harvest theorem, so the tag names the
    sharpest applicable statement.
    """
    found = list(_iid_conditions(model, fsc))
    mk = _markov_condition(model, fsc)
    if mk:
        found.append(mk)
    ams = []
    if inp is not None:
        word = _merging_word(fsc, inp, depth_cap)
        if word is not None:
            ams.append(("merging-word", {"word": list(word), "product":
                                         _word_product(fsc.state_marginal(), word).tolist()}))
        ok, support = irreducible_on_support(*_joint(fsc, inp))
        if ok:
            ams.append(("joint-chain-irreducible", {"support_size": len(support)}))
    tags = tuple(t for t, _ in found + ams)
    if found:
        tag, wit = found[0]
        return ErgodicityReport(CERTIFIED_INDECOMPOSABLE, tag, wit, satisfied=tags)
    if ams:
        tag, wit = ams[0]
        return ErgodicityReport(CERTIFIED_AMS, tag, wit, satisfied=tags)
    return ErgodicityReport(INCONCLUSIVE, None, None)


def _joint(fsc, inp):
    from .surrogate import joint_chain, joint_initial
    return joint_chain(fsc, inp), joint_initial(fsc, inp)


# irreducibility on the stationary support ----------------------------------

def irreducible_on_support(chain, initial):
    """Whether the chain is irreducible on the support of its stationary mean.

    The Cesaro limit of ``initial @ chain^n`` is a mixture of the stationary
    laws of the recurrent classes reached from ``initial``; its support is the
    union of those classes. Returns ``(irreducible, support)``.
    """
    P = _stochastic(chain)
    init = np.asarray(initial, dtype=float)
    n = P.shape[0]
    ncomp, label = connected_components(P > 0, directed=True, connection="strong")
    closed = np.ones(ncomp, dtype=bool)
    rows, cols = np.nonzero(P > 0)
    closed[label[rows][label[rows] != label[cols]]] = False
    # states reachable from the initial support
    reach = init > 0
    frontier = reach.copy()
    A = P > 0
    while frontier.any():
        new = A[frontier].any(axis=0) & ~reach
        reach |= new
        frontier = new
    classes = sorted({int(label[i]) for i in np.flatnonzero(reach) if closed[label[i]]})
    support = tuple(int(i) for i in range(n) if label[i] in classes)
    if support:
        sub = P[np.ix_(support, support)]
        assert np.allclose(sub.sum(axis=1), 1.0, atol=1e-9), "support is not closed"
    return len(classes) == 1, support


def stationary_mean(chain, initial) -> np.ndarray:
    """Cesaro limit of ``initial @ chain^n`` by absorption into recurrent classes."""
    P = _stochastic(chain)
    init = np.asarray(initial, dtype=float)
    n = P.shape[0]
    ncomp, label = connected_components(P > 0, directed=True, connection="strong")
    closed = np.ones(ncomp, dtype=bool)
    rows, cols = np.nonzero(P > 0)
    closed[label[rows][label[rows] != label[cols]]] = False
    rec = closed[label]
    trans = np.flatnonzero(~rec)
    pi = np.zeros(n)
    # mass entering each recurrent state from the transient part
    entry = init.copy()
    if trans.size:
        Q = P[np.ix_(trans, trans)]
        visits = np.linalg.solve((np.eye(trans.size) - Q).T, init[trans])
        entry[trans] = 0
        entry += visits @ P[trans]
        entry[trans] = 0
    for c in np.flatnonzero(closed):
        idx = np.flatnonzero(label == c)
        mass = entry[idx].sum()
        if mass <= 0:
            continue
        sub = P[np.ix_(idx, idx)]
        A = np.vstack([sub.T - np.eye(idx.size), np.ones((1, idx.size))])
        b = np.zeros(idx.size + 1)
        b[-1] = 1
        pi[idx] = mass * np.clip(np.linalg.lstsq(A, b, rcond=None)[0], 0, None)
    return pi / pi.sum()
