"""Bounded-memory policy alphabets and the finite-state channels they induce.

A policy is a table mapping the last ``m`` energy states (and, for EH-SC2,
the last ``l`` harvests) to an input symbol that is affordable at the most
recent state. Using policies as channel inputs turns the constrained system
into an unconstrained finite-state channel whose state collects the
remembered states and harvests.
"""
from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass

import numpy as np

from .errors import AlphabetTooLarge, ConfigError, IncompatibleDimensions
from .model import FscxChannel, SystemModel

POLICY_CAP = 10**6
DENSE_CAP = 5 * 10**7


@dataclass(frozen=True, eq=False)
class PolicyAlphabet:
    """Enumerated constrained policy tables.

    ``args`` lists argument tuples ``(s^m, e^l)`` in lexicographic order and
    ``table[v, a]`` is the input index that policy ``v`` sends on argument ``a``.
    """

    memory_m: int
    memory_l: int
    args: tuple
    table: np.ndarray
    input_labels: tuple
    prehistory_state: int = 0
    prehistory_harvest: int = 0

    def __len__(self):
        return self.table.shape[0]

    @property
    def policies(self) -> list:
        """Policies as tuples of input symbols, one entry per argument."""
        lab = self.input_labels
        return [tuple(lab[i] for i in row) for row in self.table]

    def arg_index(self, s_hist, e_hist=()) -> int:
        return self._index[(tuple(s_hist), tuple(e_hist))]

    def __post_init__(self):
        object.__setattr__(self, "_index", {a: i for i, a in enumerate(self.args)})
        self.table.setflags(write=False)


def policy_count(n_feasible, n_states: int, n_harvest: int, m: int, l: int) -> int:
    """Closed-form number of constrained tables."""
    reps = n_states ** (m - 1) * n_harvest ** l
    return math.prod(k ** reps for k in n_feasible)


def _enumerate(states, feasible, harvests, m, l, input_labels, cap):
    if m < 1 or l < 0:
        raise ConfigError("need m >= 1 and l >= 0")
    n = policy_count([len(f) for f in feasible], len(states), len(harvests), m, l)
    if n > cap:
        raise AlphabetTooLarge(f"{n} policies exceed the cap {cap}")
    args = [(s, e) for s in itertools.product(states, repeat=m)
            for e in itertools.product(harvests, repeat=l)]
    choices = [feasible[states.index(s[-1])] for s, _ in args]
    table = np.array(list(itertools.product(*choices)), dtype=np.int64).reshape(n, len(args))
    return PolicyAlphabet(m, l, tuple(args), table, tuple(input_labels),
                          prehistory_state=states[0],
                          prehistory_harvest=harvests[0] if harvests else 0)


def enumerate_policies(model: SystemModel, m: int = 1, l: int = 0,
                       cap: int = POLICY_CAP) -> PolicyAlphabet:
    """All constrained tables for ``model`` in lexicographic order."""
    if l and model.scenario != "EH-SC2":
        raise ConfigError("harvest memory needs the EH-SC2 scenario")
    feasible = [model.feasible_index(s) for s in model.states]
    harvests = model.harvest.alphabet if l else ()
    return _enumerate(model.states, feasible, harvests, m, l, model.input_alphabet, cap)


@dataclass(frozen=True, eq=False)
class SurrogateFsc:
    """Time-invariant finite-state channel ``kernel[v, z, y, z'] = p(y, z' | v, z)``."""

    state_labels: tuple
    policies: PolicyAlphabet
    output_labels: tuple
    kernel: np.ndarray
    separable: bool
    initial: np.ndarray

    def __post_init__(self):
        k = self.kernel
        nv, nz = len(self.policies), len(self.state_labels)
        if k.shape != (nv, nz, len(self.output_labels), nz):
            raise IncompatibleDimensions(f"kernel shape {k.shape} does not match alphabets")
        if not np.allclose(k.sum(axis=(2, 3)), 1.0, rtol=0, atol=1e-10):
            raise ConfigError("kernel slices must sum to one")
        if self.initial.shape != (nz,) or abs(self.initial.sum() - 1) > 1e-10:
            raise ConfigError("initial state distribution is not a probability vector")
        k.setflags(write=False)

    @property
    def n_inputs(self) -> int:
        return self.kernel.shape[0]

    @property
    def n_states(self) -> int:
        return self.kernel.shape[1]

    @property
    def n_outputs(self) -> int:
        return self.kernel.shape[2]

    def state_marginal(self) -> np.ndarray:
        """p(z' | v, z), shape (V, Z, Z)."""
        return self.kernel.sum(axis=2)

    def output_marginal(self) -> np.ndarray:
        """p(y | v, z), shape (V, Z, Y)."""
        return self.kernel.sum(axis=3)

    def to_dict(self) -> dict:
        nz = np.argwhere(self.kernel > 0)
        return {
            "states": [list(map(_plain, z)) if isinstance(z, tuple) else _plain(z)
                       for z in self.state_labels],
            "policies": [list(map(_plain, p)) for p in self.policies.policies],
            "outputs": [_plain(y) for y in self.output_labels],
            "separable": bool(self.separable),
            "initial": self.initial.tolist(),
            "kernel": [[int(v), int(z), int(y), int(t), float(self.kernel[v, z, y, t])]
                       for v, z, y, t in nz],
        }

    def to_json(self, **kw) -> str:
        """Dump of labels and nonzero kernel entries ``[v, z, y, z', p]``."""
        return json.dumps(self.to_dict(), **kw)


def _plain(x):
    if isinstance(x, tuple):
        return [_plain(t) for t in x]
    return x.item() if hasattr(x, "item") else x


def _is_separable(kernel: np.ndarray, atol: float = 1e-12) -> bool:
    py = kernel.sum(axis=-1, keepdims=True)
    pz = kernel.sum(axis=-2, keepdims=True)
    return bool(np.allclose(kernel, py * pz, rtol=0, atol=atol))


def _check_dense(*dims):
    if math.prod(dims) > DENSE_CAP:
        raise AlphabetTooLarge(f"surrogate kernel with dims {dims} is too large")


def build_fsc_sc1(model: SystemModel, m: int = 1, b1: int | None = None,
                  prehistory=None, cap: int = POLICY_CAP) -> SurrogateFsc:
    """Policies of the last ``m`` energy states driving the physical channel."""
    return _build_eh(model, m, 0, b1, prehistory, cap)


def build_fsc_sc2(model: SystemModel, m: int = 1, l: int = 0, b1: int | None = None,
                  prehistory=None, cap: int = POLICY_CAP) -> SurrogateFsc:
    """As :func:`build_fsc_sc1` with policies also reading the last ``l`` harvests."""
    return _build_eh(model, m, l, b1, prehistory, cap)


def _build_eh(model, m, l, b1, prehistory, cap):
    h = model.harvest
    S, E = model.states, h.alphabet
    feasible = [model.feasible_index(s) for s in S]
    pol = _enumerate(S, feasible, E if l else (), m, l, model.input_alphabet, cap)
    r = h.order
    he = max(l, r)
    states = [(eh, sh) for eh in itertools.product(E, repeat=he)
              for sh in itertools.product(S, repeat=m)]
    zindex = {z: i for i, z in enumerate(states)}
    nv, nz, ny = len(pol), len(states), model.n_outputs
    _check_dense(nv, nz, ny, nz)
    arg_of = np.empty((nz,), dtype=np.int64)
    for zi, (eh, sh) in enumerate(states):
        arg_of[zi] = pol.arg_index(sh, eh[he - l:] if l else ())
    # p(z' | x, z) for every input index, then pick x = v(z)
    trans = np.zeros((model.n_inputs, nz, nz))
    for zi, (eh, sh) in enumerate(states):
        row = h.kernel[h.history_index(eh[he - r:]) if r else 0]
        for xi in feasible[S.index(sh[-1])]:
            for e, w in zip(E, row):
                if w == 0:
                    continue
                s2 = model.successor(xi, sh[-1], e)
                z2 = ((eh + (e,))[1:] if he else (), sh[1:] + (s2,))
                trans[xi, zi, zindex[z2]] += w
    x_of = pol.table[:, arg_of]                      # (V, Z) input index
    state_t = trans[x_of, np.arange(nz)[None, :], :]  # (V, Z, Z)
    out = model.dmc[x_of]                             # (V, Z, Y)
    kernel = out[:, :, :, None] * state_t[:, :, None, :]
    # initial state
    if b1 is None:
        b1 = model.initial_battery if model.initial_battery is not None else 0
    pre = prehistory if prehistory is not None else h.prehistory
    if r and pre is None:
        raise ConfigError("a Markov harvest needs a prehistory")
    pre = tuple(pre) if r else ()
    dummy_e = (E[0],) * he
    pad = (dummy_e + pre)[len(pre):] if he else ()
    row = h.kernel[h.history_index(pre) if r else 0]
    init = np.zeros(nz)
    for e, w in zip(E, row):
        eh = (pad + (e,))[1:] if he else ()
        s1 = model.energy_rule(b1, e, model.battery_cap)
        init[zindex[(eh, (S[0],) * (m - 1) + (s1,))]] += w
    return SurrogateFsc(tuple(states), pol, model.output_alphabet, kernel, True, init)


def build_fsc_x(fscx: FscxChannel, m: int = 1, cap: int = POLICY_CAP) -> SurrogateFsc:
    """Surrogate channel of an explicit constrained state channel, state = last ``m`` states."""
    k = fscx.kernel
    nx, ns, ny, _ = k.shape
    labels = tuple(range(ns))
    pol = _enumerate(labels, fscx.feasible, (), m, 0, tuple(range(nx)), cap)
    states = list(itertools.product(labels, repeat=m))
    zindex = {z: i for i, z in enumerate(states)}
    nv, nz = len(pol), len(states)
    _check_dense(nv, nz, ny, nz)
    kernel = np.zeros((nv, nz, ny, nz))
    arg_of = np.array([pol.arg_index(z) for z in states])
    x_of = pol.table[:, arg_of]
    for zi, z in enumerate(states):
        for t in range(ns):
            kernel[:, zi, :, zindex[z[1:] + (t,)]] = k[x_of[:, zi], z[-1], :, t]
    init0 = fscx.initial if fscx.initial is not None else np.full(ns, 1.0 / ns)
    init = np.zeros(nz)
    for s in range(ns):
        init[zindex[(0,) * (m - 1) + (s,)]] = init0[s]
    return SurrogateFsc(tuple(states), pol, tuple(range(ny)), kernel,
                        _is_separable(k), init)


@dataclass(frozen=True, eq=False)
class MarkovInputProcess:
    """Order-``k`` Markov chain over policy indices.

    ``kernel[c, v]`` is the probability of policy ``v`` after context ``c``,
    where a context encodes the last ``k`` policies (oldest most significant).
    ``initial`` is the distribution of the context before the first use.
    """

    n_symbols: int
    order: int
    kernel: np.ndarray
    initial: np.ndarray

    def __post_init__(self):
        k = np.array(self.kernel, dtype=float)
        nc = self.n_symbols ** self.order
        if k.shape != (nc, self.n_symbols):
            raise IncompatibleDimensions(f"input kernel shape {k.shape}, expected {(nc, self.n_symbols)}")
        if np.any(k < 0) or not np.allclose(k.sum(axis=1), 1.0, rtol=0, atol=1e-12):
            raise ConfigError("input kernel rows must be probability vectors")
        init = np.array(self.initial, dtype=float)
        if init.shape != (nc,) or abs(init.sum() - 1) > 1e-12:
            raise ConfigError("input initial distribution has wrong shape or mass")
        k.setflags(write=False)
        init.setflags(write=False)
        object.__setattr__(self, "kernel", k)
        object.__setattr__(self, "initial", init)

    @property
    def n_contexts(self) -> int:
        return self.n_symbols ** self.order

    @classmethod
    def iud(cls, n_symbols: int, order: int = 0) -> "MarkovInputProcess":
        nc = n_symbols ** order
        return cls(n_symbols, order, np.full((nc, n_symbols), 1.0 / n_symbols),
                   np.full(nc, 1.0 / nc))

    @classmethod
    def from_kernel(cls, kernel, order: int) -> "MarkovInputProcess":
        """Process started from the stationary context distribution."""
        kernel = np.asarray(kernel, dtype=float)
        nv = kernel.shape[1]
        pi = stationary_distribution(_context_matrix(kernel, nv, order))
        return cls(nv, order, kernel, pi)

    def next_context(self) -> np.ndarray:
        """Table ``[c, v] -> c'`` of context updates."""
        nc, nv = self.n_contexts, self.n_symbols
        return (np.arange(nc)[:, None] * nv + np.arange(nv)[None, :]) % nc

    def context_matrix(self) -> np.ndarray:
        return _context_matrix(self.kernel, self.n_symbols, self.order)

    def stationary(self) -> np.ndarray:
        return stationary_distribution(self.context_matrix())

    def lift(self, order: int) -> "MarkovInputProcess":
        """The same process written as an order-``order`` chain (``order >= self.order``)."""
        if order < self.order:
            raise ConfigError("cannot lower the order of a Markov process")
        nv, extra = self.n_symbols, order - self.order
        c = np.arange(nv ** order)
        kernel = self.kernel[c % self.n_contexts]
        # initial: old context padded on the left by the old marginal-free choice
        init = np.zeros(nv ** order)
        pad = np.full(nv ** extra, 1.0 / nv ** extra)
        for hi in range(nv ** extra):
            init[hi * self.n_contexts:(hi + 1) * self.n_contexts] = pad[hi] * self.initial
        return MarkovInputProcess(nv, order, kernel, init)

    def to_dict(self) -> dict:
        return {"n_symbols": self.n_symbols, "order": self.order,
                "kernel": self.kernel.tolist(), "initial": self.initial.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "MarkovInputProcess":
        return cls(int(d["n_symbols"]), int(d["order"]), np.array(d["kernel"]),
                   np.array(d["initial"]))


def _context_matrix(kernel, nv, order):
    nc = nv ** order
    T = np.zeros((nc, nc))
    nxt = (np.arange(nc)[:, None] * nv + np.arange(nv)[None, :]) % nc
    np.add.at(T, (np.repeat(np.arange(nc), nv), nxt.ravel()), kernel.ravel())
    return T


def stationary_distribution(P: np.ndarray) -> np.ndarray:
    """A stationary row vector of ``P`` (the unique one when ``P`` is irreducible)."""
    n = P.shape[0]
    A = np.vstack([P.T - np.eye(n), np.ones((1, n))])
    b = np.zeros(n + 1)
    b[-1] = 1.0
    pi = np.linalg.lstsq(A, b, rcond=None)[0]
    pi = np.clip(pi, 0, None)
    return pi / pi.sum()


def joint_chain(fsc: SurrogateFsc, inp: MarkovInputProcess) -> np.ndarray:
    """Transition matrix of the joint chain over (input context, channel state).

    The context has length ``max(k, 1)``, so the state at time n is
    ``(v_{n-k'+1..n}, z_{n+1})``. For channels that do not factor, the last
    output is kept in the state as well: ``(context, y_n, z_{n+1})``.
    """
    if inp.n_symbols != fsc.n_inputs:
        raise IncompatibleDimensions("input process and channel disagree on |V|")
    proc = inp.lift(max(inp.order, 1))
    nc, nv, nz, ny = proc.n_contexts, proc.n_symbols, fsc.n_states, fsc.n_outputs
    nxt = proc.next_context()
    if fsc.separable:
        phi = fsc.state_marginal()
        P = np.zeros((nc, nz, nc, nz))
        for c in range(nc):
            for v in range(nv):
                P[c, :, nxt[c, v], :] += proc.kernel[c, v] * phi[v]
        return P.reshape(nc * nz, nc * nz)
    P = np.zeros((nc, ny, nz, nc, ny, nz))
    for c in range(nc):
        for v in range(nv):
            P[c, :, :, nxt[c, v], :, :] += proc.kernel[c, v] * fsc.kernel[v][None]
    n = nc * ny * nz
    return P.reshape(n, n)


def joint_initial(fsc: SurrogateFsc, inp: MarkovInputProcess) -> np.ndarray:
    """Distribution of the first joint-chain state (after one channel use)."""
    proc = inp.lift(max(inp.order, 1))
    nc, nz = proc.n_contexts, fsc.n_states
    nxt = proc.next_context()
    phi = fsc.state_marginal()
    if fsc.separable:
        out = np.zeros((nc, nz))
        for c in range(nc):
            for v in range(proc.n_symbols):
                out[nxt[c, v]] += proc.initial[c] * proc.kernel[c, v] * (fsc.initial @ phi[v])
        return out.ravel()
    out = np.zeros((nc, fsc.n_outputs, nz))
    for c in range(nc):
        for v in range(proc.n_symbols):
            out[nxt[c, v]] += proc.initial[c] * proc.kernel[c, v] * np.einsum(
                "z,zyt->yt", fsc.initial, fsc.kernel[v])
    return out.ravel()
