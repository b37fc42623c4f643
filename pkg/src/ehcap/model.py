"""System model of a discrete energy-harvesting channel with a finite battery.

Energies are integers (the quantization step is normalized to one unit).
The energy state ``s`` is what the transmitter may spend at the current
channel use; it combines the stored battery level ``b`` and the fresh
harvest ``e`` according to an energy rule.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigError, InfeasibleInput, RequiresIidHarvest

SCENARIOS = ("FSC-X", "EH-SC1", "EH-SC2")
RULES = ("additive", "store_first", "lossy_store_first")


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


def _check_rows(mat: np.ndarray, what: str, atol: float = 1e-12):
    if mat.ndim != 2:
        raise ConfigError(f"{what} must be a matrix, got shape {mat.shape}")
    if np.any(mat < 0) or not np.allclose(mat.sum(axis=1), 1.0, rtol=0, atol=atol):
        raise ConfigError(f"{what} rows must be probability vectors")


@dataclass(frozen=True)
class EnergyRule:
    """How battery level and harvest combine into the available energy."""

    kind: str = "additive"
    beta: float = 1.0
    eta: float = 1.0

    def __post_init__(self):
        if self.kind not in RULES:
            raise ConfigError(f"unknown energy rule {self.kind!r}")
        if not (0 < self.beta <= 1 and 0 < self.eta <= 1):
            raise ConfigError("lossy efficiencies must lie in (0, 1]")

    def __call__(self, b: int, e: int, cap: int) -> int:
        if self.kind == "additive":
            return b + e
        if self.kind == "store_first":
            return min(b + e, cap)
        # floor keeps the state space integral
        return min(math.floor(self.beta * b + self.eta * e + 1e-12), cap)


ADDITIVE = EnergyRule("additive")
STORE_FIRST = EnergyRule("store_first")


def lossy_store_first(beta: float, eta: float) -> EnergyRule:
    return EnergyRule("lossy_store_first", beta, eta)


@dataclass(frozen=True, eq=False)
class HarvestProcess:
    """Homogeneous Markov harvest chain of order ``order`` (0 means i.i.d.).

    ``kernel[h]`` is the distribution of the next harvest given the history
    index ``h`` of the last ``order`` letters (oldest letter most significant).
    """

    alphabet: tuple
    kernel: np.ndarray
    order: int = 0
    prehistory: tuple | None = None

    def __post_init__(self):
        alphabet = tuple(int(e) for e in self.alphabet)
        object.__setattr__(self, "alphabet", alphabet)
        if len(alphabet) == 0 or len(set(alphabet)) != len(alphabet):
            raise ConfigError("harvest alphabet must be a nonempty set")
        if any(e < 0 for e in alphabet):
            raise ConfigError("harvested energy must be nonnegative")
        if self.order < 0:
            raise ConfigError("harvest order must be >= 0")
        k = _frozen(np.atleast_2d(self.kernel))
        if k.shape != (len(alphabet) ** self.order, len(alphabet)):
            raise ConfigError(f"harvest kernel has shape {k.shape}, expected "
                              f"{(len(alphabet) ** self.order, len(alphabet))}")
        _check_rows(k, "harvest kernel")
        object.__setattr__(self, "kernel", k)
        if self.prehistory is not None:
            pre = tuple(int(e) for e in self.prehistory)
            if len(pre) != self.order or any(e not in alphabet for e in pre):
                raise ConfigError("prehistory must be `order` letters of the alphabet")
            object.__setattr__(self, "prehistory", pre)

    @classmethod
    def iid(cls, alphabet, probs) -> "HarvestProcess":
        return cls(tuple(alphabet), np.asarray(probs, dtype=float)[None, :], 0)

    @classmethod
    def bernoulli(cls, p: float) -> "HarvestProcess":
        """P(E=1) = p on the alphabet {0, 1}."""
        return cls.iid((0, 1), [1.0 - p, p])

    @property
    def is_iid(self) -> bool:
        return self.order == 0

    @property
    def marginal(self) -> np.ndarray:
        if not self.is_iid:
            raise RequiresIidHarvest("marginal only defined for i.i.d. harvest")
        return self.kernel[0]

    def letter_index(self, e: int) -> int:
        return self.alphabet.index(e)

    def history_index(self, hist) -> int:
        """Row of ``kernel`` for a history given as letters (oldest first)."""
        h = 0
        for e in hist:
            h = h * len(self.alphabet) + self.letter_index(e)
        return h

    def histories(self):
        """All histories of length ``order`` in kernel-row order."""
        return list(itertools.product(self.alphabet, repeat=self.order))

    def prehistories(self):
        """Prehistories to maximize over: the fixed one, else all of them."""
        if self.prehistory is not None:
            return [self.prehistory]
        return self.histories()


@dataclass(frozen=True, eq=False)
class SystemModel:
    """Alphabets, channel, cost table, battery and harvest of the physical system."""

    input_alphabet: tuple
    output_alphabet: tuple
    dmc: np.ndarray
    cost: tuple
    battery_cap: int
    energy_rule: EnergyRule
    harvest: HarvestProcess
    scenario: str = "EH-SC1"
    feasible_sets: tuple | None = None
    initial_battery: int | None = None
    states: tuple = field(init=False)
    batteries: tuple = field(init=False)

    def __post_init__(self):
        xs = tuple(int(x) for x in self.input_alphabet)
        object.__setattr__(self, "input_alphabet", xs)
        object.__setattr__(self, "output_alphabet", tuple(self.output_alphabet))
        if 0 not in xs or len(set(xs)) != len(xs):
            raise ConfigError("input alphabet must be a set containing 0")
        dmc = _frozen(self.dmc)
        if dmc.shape != (len(xs), len(self.output_alphabet)):
            raise ConfigError(f"dmc has shape {dmc.shape}, expected "
                              f"{(len(xs), len(self.output_alphabet))}")
        _check_rows(dmc, "dmc")
        object.__setattr__(self, "dmc", dmc)
        cost = tuple(int(c) for c in self.cost)
        if len(cost) != len(xs) or any(c < 0 for c in cost):
            raise ConfigError("cost table must give a nonnegative integer per input")
        if cost[xs.index(0)] != 0:
            raise ConfigError("transmitting 0 must cost no energy")
        object.__setattr__(self, "cost", cost)
        if self.battery_cap < 0:
            raise ConfigError("battery capacity must be >= 0")
        if self.scenario not in SCENARIOS:
            raise ConfigError(f"unknown scenario {self.scenario!r}")
        if self.initial_battery is not None and not 0 <= self.initial_battery <= self.battery_cap:
            raise ConfigError("initial battery outside [0, battery_cap]")
        batteries = tuple(range(self.battery_cap + 1))
        states = sorted({self.energy_rule(b, e, self.battery_cap)
                         for b in batteries for e in self.harvest.alphabet})
        object.__setattr__(self, "batteries", batteries)
        object.__setattr__(self, "states", tuple(states))
        if self.feasible_sets is not None:
            fs = tuple(tuple(int(i) for i in f) for f in self.feasible_sets)
            if len(fs) != len(states) or any(not f for f in fs):
                raise ConfigError("need one nonempty feasible set per energy state")
            object.__setattr__(self, "feasible_sets", fs)

    # index helpers -------------------------------------------------------
    @property
    def n_inputs(self) -> int:
        return len(self.input_alphabet)

    @property
    def n_outputs(self) -> int:
        return len(self.output_alphabet)

    def state_index(self, s: int) -> int:
        return self.states.index(s)

    def feasible_index(self, s: int) -> tuple:
        """Indices into ``input_alphabet`` of the inputs allowed at energy ``s``."""
        if self.feasible_sets is not None:
            return self.feasible_sets[self.state_index(s)]
        return tuple(i for i, c in enumerate(self.cost) if c <= s)

    def successor(self, xi: int, s: int, e: int) -> int:
        """Next energy state after input index ``xi`` at energy ``s`` and harvest ``e``."""
        b = min(s - self.cost[xi], self.battery_cap)
        if b < 0:
            raise InfeasibleInput(f"input {self.input_alphabet[xi]} needs "
                                  f"{self.cost[xi]} units but only {s} are available")
        return self.energy_rule(b, e, self.battery_cap)

    def with_params(self, q: float | None = None, p: float | None = None) -> "SystemModel":
        """Copy with BSC crossover ``q`` and/or Bernoulli harvest ``p`` replaced."""
        kw = {}
        if q is not None:
            if self.dmc.shape != (2, 2):
                raise ConfigError("crossover override needs a binary channel")
            kw["dmc"] = bsc(q)
        if p is not None:
            if len(self.harvest.alphabet) != 2 or not self.harvest.is_iid:
                raise ConfigError("harvest override needs a binary i.i.d. harvest")
            kw["harvest"] = HarvestProcess.iid(self.harvest.alphabet, [1 - p, p])
        return replace(self, **kw) if kw else self


def state_alphabets(model: SystemModel):
    """Energy-state alphabet S and battery alphabet E_B."""
    return model.states, model.batteries


def available_energy(b: int, e: int, model: SystemModel) -> int:
    return model.energy_rule(b, e, model.battery_cap)


def next_state(x: int, s: int, e_next: int, model: SystemModel) -> int:
    """Energy state at the next use after sending ``x`` with ``s`` units available."""
    return model.successor(model.input_alphabet.index(x), s, e_next)


def feasible_inputs(s: int, model: SystemModel) -> tuple:
    return tuple(model.input_alphabet[i] for i in model.feasible_index(s))


# closed-form baselines -------------------------------------------------------

def binary_entropy(p: float) -> float:
    if p <= 0.0 or p >= 1.0:
        return 0.0
    return float(-p * np.log2(p) - (1 - p) * np.log2(1 - p))


def bsc(q: float) -> np.ndarray:
    return np.array([[1 - q, q], [q, 1 - q]], dtype=float)


def bsc_capacity(q: float) -> float:
    return 1.0 - binary_entropy(q)


def zero_battery_capacity(q: float) -> float:
    """Capacity of the binary system with no battery and fair-coin harvests.

    The transmitter either must send 0 (no harvest) or may send anything, so
    the channel reduces to a two-letter DMC whose capacity has closed form.
    """
    if abs(q - 0.5) < 1e-12:
        return 0.0
    c = 1.0 - binary_entropy(q)
    alpha = 2.0 ** (-c / (0.5 - q))
    t = 1.0 / (1.0 + alpha)
    r = (t - 0.5) / (0.5 - q)
    return binary_entropy(t) - 1.0 + r * c


# reference models ------------------------------------------------------------

def additive_binary_model(q: float, battery_cap: int = 1, p: float = 0.5) -> SystemModel:
    """Binary input over BSC(q), quadratic cost, additive energy rule."""
    return SystemModel((0, 1), (0, 1), bsc(q), (0, 1), battery_cap, ADDITIVE,
                       HarvestProcess.bernoulli(p))


def store_first_binary_model(q: float, p: float, battery_cap: int = 1,
                             scenario: str = "EH-SC2") -> SystemModel:
    """Binary input over BSC(q), store-first energy rule, Bernoulli(p) harvest."""
    return SystemModel((0, 1), (0, 1), bsc(q), (0, 1), battery_cap, STORE_FIRST,
                       HarvestProcess.bernoulli(p), scenario=scenario)


# state-channel view ----------------------------------------------------------

@dataclass(frozen=True, eq=False)
class FscxChannel:
    """Finite-state channel with transmitter state knowledge and input constraints.

    ``kernel[x, s, y, t]`` is p(y, s'=t | x, s); ``feasible[s]`` lists the input
    indices allowed in state index ``s``. The receiver is assumed to see the
    state sequence, so outputs of the equivalent channel are pairs (y, s').
    """

    kernel: np.ndarray
    feasible: tuple
    state_labels: tuple | None = None
    initial: np.ndarray | None = None

    def __post_init__(self):
        k = _frozen(self.kernel)
        if k.ndim != 4 or k.shape[1] != k.shape[3]:
            raise ConfigError(f"kernel must have shape (X, S, Y, S), got {k.shape}")
        nx, ns = k.shape[0], k.shape[1]
        sums = k.sum(axis=(2, 3))
        fs = tuple(tuple(int(i) for i in f) for f in self.feasible)
        if len(fs) != ns or any(not f for f in fs):
            raise ConfigError("need one nonempty feasible set per state")
        if any(i < 0 or i >= nx for f in fs for i in f):
            raise ConfigError("feasible set refers to an unknown input")
        if np.any(k < 0) or not np.allclose(sums, 1.0, rtol=0, atol=1e-10):
            raise ConfigError("kernel slices must sum to one")
        object.__setattr__(self, "kernel", k)
        object.__setattr__(self, "feasible", fs)
        if self.state_labels is None:
            object.__setattr__(self, "state_labels", tuple(range(ns)))
        if self.initial is not None:
            init = _frozen(self.initial)
            if init.shape != (ns,):
                raise ConfigError("initial distribution has wrong length")
            object.__setattr__(self, "initial", init)

    @property
    def n_inputs(self) -> int:
        return self.kernel.shape[0]

    @property
    def n_states(self) -> int:
        return self.kernel.shape[1]

    @property
    def n_outputs(self) -> int:
        return self.kernel.shape[2]

    def state_kernel(self) -> np.ndarray:
        """p(s' | x, s) with shape (X, S, S)."""
        return self.kernel.sum(axis=2)


def model_to_fscx(model: SystemModel) -> FscxChannel:
    """State-channel view of a system whose transmitter sees energy states only.

    With i.i.d. harvests the energy state is itself a Markov state driven by
    the input, so the system is an ordinary constrained finite-state channel.
    """
    if not model.harvest.is_iid:
        raise RequiresIidHarvest("state-channel view needs i.i.d. harvest")
    S = model.states
    ns, nx, ny = len(S), model.n_inputs, model.n_outputs
    pe = model.harvest.marginal
    trans = np.zeros((nx, ns, ns))
    feasible = []
    for si, s in enumerate(S):
        fx = model.feasible_index(s)
        feasible.append(fx)
        for xi in range(nx):
            if xi not in fx:
                trans[xi, si, si] = 1.0  # never used; keeps slices stochastic
                continue
            for e, w in zip(model.harvest.alphabet, pe):
                trans[xi, si, model.state_index(model.successor(xi, s, e))] += w
    kernel = model.dmc[:, None, :, None] * trans[:, :, None, :]
    init = None
    if model.initial_battery is not None:
        init = initial_state_distribution(model, model.initial_battery)
    return FscxChannel(kernel, tuple(feasible), S, init)


def initial_state_distribution(model: SystemModel, b1: int, prehistory=None) -> np.ndarray:
    """Distribution of the first energy state given battery ``b1``."""
    h = model.harvest
    pre = prehistory if prehistory is not None else h.prehistory
    if h.order and pre is None:
        raise ConfigError("a Markov harvest needs a prehistory to start from")
    row = h.kernel[h.history_index(pre)] if h.order else h.kernel[0]
    out = np.zeros(len(model.states))
    for e, w in zip(h.alphabet, row):
        out[model.state_index(model.energy_rule(b1, e, model.battery_cap))] += w
    return out
