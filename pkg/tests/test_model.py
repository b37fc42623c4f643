import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ehcap.config import build_model, parse_config, read_config, fingerprint
from ehcap.errors import ConfigError, InfeasibleInput
from ehcap.model import (ADDITIVE, STORE_FIRST, HarvestProcess, SystemModel,
                         additive_binary_model, available_energy, binary_entropy, bsc,
                         bsc_capacity, feasible_inputs, initial_state_distribution,
                         lossy_store_first, model_to_fscx, next_state, state_alphabets,
                         store_first_binary_model, zero_battery_capacity)

FIX = __import__("pathlib").Path(__file__).resolve().parents[1] / "fixtures"


def _model(cap, harvest, rule, xs=(0, 1), cost=(0, 1)):
    n = len(xs)
    return SystemModel(xs, (0, 1), np.full((n, 2), 0.5), cost, cap, rule,
                       HarvestProcess.iid(harvest, np.full(len(harvest), 1 / len(harvest))))


def test_state_alphabets():
    assert state_alphabets(additive_binary_model(0.0)) == ((0, 1, 2), (0, 1))
    assert state_alphabets(_model(0, (0, 1, 3), STORE_FIRST))[0] == (0,)
    assert state_alphabets(_model(2, (0, 1, 2), STORE_FIRST))[0] == (0, 1, 2)


def test_available_energy():
    m = additive_binary_model(0.0)
    assert available_energy(1, 1, m) == 2
    assert available_energy(1, 1, store_first_binary_model(0.0, 0.5)) == 1
    lossy = _model(1, (0, 1), lossy_store_first(0.5, 0.5))
    assert available_energy(1, 1, lossy) == 1
    assert available_energy(1, 0, lossy) == 0


def test_next_state():
    assert next_state(0, 2, 0, additive_binary_model(0.0)) == 1
    assert next_state(1, 1, 1, store_first_binary_model(0.0, 0.5)) == 1
    m = _model(2, (0, 1), ADDITIVE, xs=(0, 1, 2), cost=(0, 1, 4))
    with pytest.raises(InfeasibleInput):
        next_state(2, 1, 0, m)


def test_feasible_inputs():
    m = additive_binary_model(0.0)
    assert feasible_inputs(0, m) == (0,)
    assert feasible_inputs(1, m) == (0, 1)
    m = _model(2, (0, 1), ADDITIVE, xs=(0, 1, 2), cost=(0, 1, 4))
    assert feasible_inputs(3, m) == (0, 1)


def test_closed_forms():
    assert bsc_capacity(0.0) == 1.0
    assert bsc_capacity(0.5) == pytest.approx(0.0, abs=1e-15)
    assert bsc_capacity(0.1) == pytest.approx(0.531004, abs=1e-6)
    assert zero_battery_capacity(0.0) == pytest.approx(0.321928, abs=1e-6)
    assert zero_battery_capacity(0.5) == 0.0
    assert zero_battery_capacity(0.1) == pytest.approx(0.1475894182010089, abs=1e-12)


def _two_letter_capacity(q, grid=200001):
    # no battery: the strategies are "always 0" and "send the harvest bit",
    # the latter giving a uniform output whatever the crossover
    a = np.linspace(0, 1, grid)
    py1 = (1 - a) * q + a * 0.5
    H = np.vectorize(binary_entropy)
    return float(np.max(H(py1) - (1 - a) * binary_entropy(q) - a))


@pytest.mark.parametrize("q", [0.0, 0.05, 0.1, 0.3])
def test_zero_battery_matches_grid(q):
    assert zero_battery_capacity(q) == pytest.approx(_two_letter_capacity(q), abs=1e-8)


@given(st.floats(0, 1))
def test_entropy_symmetric(p):
    assert binary_entropy(p) == pytest.approx(binary_entropy(1 - p), abs=1e-12)


@given(st.floats(0, 1))
def test_zero_battery_below_bsc(q):
    assert zero_battery_capacity(q) <= bsc_capacity(q) + 1e-12


@settings(max_examples=60)
@given(cap=st.integers(0, 3), emax=st.integers(0, 3),
       rule=st.sampled_from([ADDITIVE, STORE_FIRST, lossy_store_first(0.5, 0.7)]))
def test_transitions_stay_in_alphabet(cap, emax, rule):
    m = _model(cap, tuple(range(emax + 1)), rule, xs=(0, 1, 2), cost=(0, 1, 4))
    S = m.states
    for s in S:
        for xi in m.feasible_index(s):
            for e in m.harvest.alphabet:
                assert m.successor(xi, s, e) in S
    if rule is STORE_FIRST:
        assert max(S) <= cap
    assert max(S) <= cap + emax
    for s, t in zip(S, S[1:]):
        assert set(feasible_inputs(s, m)) <= set(feasible_inputs(t, m))


def test_invalid_models():
    with pytest.raises(ConfigError):
        SystemModel((0, 1), (0, 1), bsc(0.1), (1, 1), 1, ADDITIVE, HarvestProcess.bernoulli(0.5))
    with pytest.raises(ConfigError):
        SystemModel((0, 1), (0, 1), [[0.5, 0.4], [0, 1]], (0, 1), 1, ADDITIVE,
                    HarvestProcess.bernoulli(0.5))
    with pytest.raises(ConfigError):
        HarvestProcess((0, 1), [[0.5, 0.5]], order=1)


def test_fscx_view_marginal():
    m = additive_binary_model(0.1)
    f = model_to_fscx(m)
    assert f.feasible == ((0,), (0, 1), (0, 1))
    # x=1 at s=2 leaves b=1, then e in {0,1} uniformly
    assert np.allclose(f.state_kernel()[1, 2], [0, 0.5, 0.5])
    assert np.allclose(f.kernel.sum(axis=(2, 3)), 1)


def test_initial_distribution():
    m = additive_binary_model(0.0)
    assert np.allclose(initial_state_distribution(m, 0), [0.5, 0.5, 0])
    assert np.allclose(initial_state_distribution(m, 1), [0, 0.5, 0.5])


def test_config_roundtrip():
    m, raw = build_model(read_config(FIX / "fig3.cfg")), read_config(FIX / "fig3.cfg")
    assert m.states == (0, 1, 2)
    assert m.energy_rule.kind == "additive"
    a = fingerprint(raw)
    spaced = parse_config((FIX / "fig3.cfg").read_text().replace("0, 1", "0 ,  1"))
    assert fingerprint(spaced) == a
    with pytest.raises(ConfigError):
        parse_config("bogus = 1\n")
    with pytest.raises(ConfigError):
        build_model(parse_config("input_alphabet = 0, 1\n"))


def test_markov_fixture():
    m = build_model(read_config(FIX / "markov_harvest.cfg"))
    assert m.harvest.order == 1 and m.harvest.prehistory == (1,)
    assert np.allclose(initial_state_distribution(m, 1), [0, 1.0])
