import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ehcap.bounds import (BoundCurve, bound_sweep, consistency_gate, dp_table, lb_sc2_block,
                          lnx_table, sc2_state_channel, ub_fscx_block, ub_lnx, ub_sc1_dp,
                          ub_sc2_block, ub_sc2_ln)
from ehcap.errors import RequiresIidHarvest
from ehcap.model import (STORE_FIRST, FscxChannel, HarvestProcess, SystemModel,
                         additive_binary_model, bsc, model_to_fscx, store_first_binary_model,
                         zero_battery_capacity)
from ehcap.optimize import ba_dmc_capacity
from oracles import grid_sc1, toy_fscx


def markov_model(q=0.1):
    h = HarvestProcess((0, 1), [[0.8, 0.2], [0.3, 0.7]], order=1, prehistory=(1,))
    return SystemModel((0, 1), (0, 1), bsc(q), (0, 1), 1, STORE_FIRST, h, scenario="EH-SC2")


def per_state_capacity(f: FscxChannel):
    return max(ba_dmc_capacity(f.kernel[list(fs), s].reshape(len(fs), -1))[0]
               for s, fs in enumerate(f.feasible))


# explicit state channels ------------------------------------------------------

def test_fscx_block_single_use():
    f = toy_fscx()
    assert ub_fscx_block(f, 1) == pytest.approx(per_state_capacity(f), abs=1e-8)


@pytest.mark.parametrize("make", [toy_fscx, lambda: model_to_fscx(additive_binary_model(0.1))])
def test_fscx_block_equals_dp(make):
    f = make()
    for N in (1, 2):
        assert ub_fscx_block(f, N) == pytest.approx(ub_sc1_dp(f, N)[0], abs=1e-7)


def test_fscx_block_input_free_state():
    # constant output and a state chain the input cannot steer: nothing gets through
    k = np.zeros((2, 2, 2, 2))
    k[:, :, :, :] = 0.25
    f = FscxChannel(k, ((0, 1), (0, 1)))
    assert ub_fscx_block(f, 2) == pytest.approx(0.0, abs=1e-9)
    # ... but a next state that copies the input carries a bit per use
    k = np.zeros((2, 2, 2, 2))
    for s in range(2):
        k[0, s, :, 0] = k[1, s, :, 1] = 0.5
    assert ub_fscx_block(FscxChannel(k, ((0, 1), (0, 1))), 2) == pytest.approx(1.0, abs=1e-7)


@pytest.mark.parametrize("N", [1, 2, 3])
def test_dp_matches_grid(N):
    f = toy_fscx()
    dp = ub_sc1_dp(f, N)[0]
    grid = grid_sc1(f, N)
    assert dp == pytest.approx(grid, abs=1e-3)
    assert dp >= grid - 1e-9


def test_dp_single_use():
    f = toy_fscx()
    assert ub_sc1_dp(f, 1)[0] == pytest.approx(per_state_capacity(f), abs=1e-8)


def test_lnx_examples():
    f = toy_fscx()
    assert ub_lnx(f, 1)[0] == pytest.approx(1.0)
    m = model_to_fscx(additive_binary_model(0.1))
    assert ub_lnx(m, 1)[0] == pytest.approx(1.0)
    for N in (1, 5, 50):
        assert ub_lnx(f, N)[0] == pytest.approx(1.0, abs=1e-12)


@settings(max_examples=15, deadline=None)
@given(q=st.floats(0, 0.5), p=st.floats(0.05, 0.95), N=st.integers(1, 12))
def test_relaxation_and_monotone_tables(q, p, N):
    m = store_first_binary_model(q, p)
    f = model_to_fscx(m)
    assert ub_lnx(f, N)[0] >= ub_sc1_dp(f, N)[0] - 1e-9
    fx, _ = sc2_state_channel(m)
    t, tl = dp_table(fx, N), lnx_table(fx, N)
    assert np.all(t.values[0] == 0) and np.all(np.diff(t.values, axis=0) >= -1e-12)
    assert np.all(tl.values >= t.values - 1e-9)


# energy harvesting systems ------------------------------------------------------

def test_lb_single_use_enumeration():
    for q, p in [(0.0, 0.5), (0.1, 0.5), (0.2, 0.3)]:
        W = bsc(q)
        # empty battery: x = 0 without a harvest, free choice with one
        Q = np.array([W[0], (1 - p) * W[0] + p * W[1]])
        ref = ba_dmc_capacity(np.vstack([W[0], Q[1]]))[0]
        assert lb_sc2_block(store_first_binary_model(q, p), 1) == pytest.approx(ref, abs=1e-8)
    assert lb_sc2_block(store_first_binary_model(0.1, 0.5), 1) == pytest.approx(
        zero_battery_capacity(0.1), abs=1e-8)


def test_lb_zero_battery_model():
    m = additive_binary_model(0.0, battery_cap=0)
    assert lb_sc2_block(m, 1) == pytest.approx(0.321928094887, abs=1e-9)


def test_lb_requires_iid():
    with pytest.raises(RequiresIidHarvest):
        lb_sc2_block(markov_model(), 1)


def test_constant_output_bounds():
    m = SystemModel((0, 1), (0, 1), np.full((2, 2), 0.5), (0, 1), 1, STORE_FIRST,
                    HarvestProcess.bernoulli(0.4), scenario="EH-SC2")
    assert lb_sc2_block(m, 2) == pytest.approx(0.0, abs=1e-9)
    assert ub_sc2_block(m, 2) == pytest.approx(0.0, abs=1e-7)


def test_ub_block_single_use():
    # a full battery lets either input through whatever the harvest
    assert ub_sc2_block(store_first_binary_model(0.1, 0.3), 1) == pytest.approx(
        ba_dmc_capacity(bsc(0.1))[0], abs=1e-7)
    assert ub_sc2_block(markov_model(), 1) == pytest.approx(ba_dmc_capacity(bsc(0.1))[0],
                                                            abs=1e-7)


@pytest.mark.parametrize("q,p", [(0.1, 0.3), (0.0, 0.5)])
def test_sub_and_superadditivity(q, p):
    m = store_first_binary_model(q, p)
    ub = {n: ub_sc2_block(m, n) for n in range(1, 5)}
    lb = {n: lb_sc2_block(m, n) for n in range(1, 5)}
    for N in range(2, 5):
        for a in range(1, N):
            assert N * ub[N] <= a * ub[a] + (N - a) * ub[N - a] + 1e-6
            assert N * lb[N] >= a * lb[a] + (N - a) * lb[N - a] - 1e-6
        assert lb[N] <= ub[N]


@pytest.mark.parametrize("N", [1, 2, 4, 8])
def test_ln_dominates_block(N):
    m = store_first_binary_model(0.1, 0.3)
    assert ub_sc2_ln(m, N)[0] >= ub_sc2_block(m, N) - 1e-7
    mk = markov_model()
    if N <= 4:
        assert ub_sc2_ln(mk, N)[0] >= ub_sc2_block(mk, N) - 1e-7


@pytest.mark.parametrize("N", [1, 10, 100])
def test_noiseless_collapse(N):
    m = store_first_binary_model(0.0, 0.5)
    a, b, c = ub_sc1_dp(m, N)[0], ub_lnx(m, N)[0], ub_sc2_ln(m, N)[0]
    assert a == pytest.approx(b, abs=1e-9) and b == pytest.approx(c, abs=1e-9)


def test_paper_value_ln():
    v, _ = ub_sc2_ln(store_first_binary_model(0.1, 0.01), 10**4)
    assert v == pytest.approx(0.0492, abs=1e-3)


# sweeps -------------------------------------------------------------------

def test_sweep_empty_and_gate():
    m = store_first_binary_model(0.1, 0.5)
    assert bound_sweep(m, [(0.1, 0.5)], []) == []
    kinds = ["ub-sc1-dp", "ub-lnx", "ub-sc2-ln", "ub-sc2", "lb-sc2", "ub-sc1"]
    curves = bound_sweep(m, [(0.1, 0.5)], kinds, ns=(1, 2, 4),
                         budgets={"ub_sc2_n": 4, "lb_sc2_n": 3})
    assert [c.kind for c in curves] == ["UB_SC1_DP", "UB_LNX", "UB_SC2_LN", "UB_SC2_BLOCK",
                                        "LB_SC2_BLOCK", "UB_SC1_BLOCK"]
    assert all(not c.errors for c in curves)
    assert consistency_gate(curves) == []
    lo = min(c.points[-1][1] for c in curves if c.is_upper)
    assert all(c.points[-1][1] <= lo + 1e-6 for c in curves if not c.is_upper)
    d = curves[0].to_dict()
    assert d["points"][0][0] == 1 and len(d["fingerprint"]) == 16


def test_gate_flags_violation():
    c = [BoundCurve("UB_LNX", [(4, 0.2)]), BoundCurve("LB_SC2_BLOCK", [(4, 0.3)])]
    assert consistency_gate(c) == [("UB_LNX", "LB_SC2_BLOCK", 0.2, 0.3)]


def test_sweep_records_errors():
    curves = bound_sweep(markov_model(), [(None, None)], ["lb-sc2", "ub-sc2-ln"], ns=(4,))
    assert curves[0].errors and "RequiresIidHarvest" in curves[0].errors[0]
    assert curves[1].points and not curves[1].errors


def test_sweep_threads_identical():
    m = store_first_binary_model(0.1, 0.5)
    grid = [(0.1, p) for p in (0.2, 0.5, 0.8)]
    a = bound_sweep(m, grid, ["ub-sc2-ln", "lb-sc2"], ns=(8,), budgets={"lb_sc2_n": 2})
    b = bound_sweep(m, grid, ["ub-sc2-ln", "lb-sc2"], ns=(8,), budgets={"lb_sc2_n": 2},
                    threads=3)
    assert [x.to_dict() for x in a] == [x.to_dict() for x in b]
