"""Brute-force reference computations shared by the tests."""
import numpy as np

from ehcap.model import FscxChannel, bsc


def toy_fscx() -> FscxChannel:
    """Two states, two inputs; sending 1 tends to push the state up."""
    W = np.stack([bsc(0.1), np.array([[0.7, 0.3], [0.2, 0.8]])])   # W[s, x, y]
    T = np.array([[[0.8, 0.2], [0.3, 0.7]],                         # T[x, s, t]
                  [[0.4, 0.6], [0.1, 0.9]]])
    k = np.einsum("sxy,xst->xsyt", W, T)
    return FscxChannel(k, ((0, 1), (0, 1)))


def _mi_curve(rows: np.ndarray, a: np.ndarray) -> np.ndarray:
    """I(X; out) in bits for P(X=1) = a over a two-row channel."""
    P = np.stack([1 - a, a], axis=-1)
    q = P @ rows
    with np.errstate(divide="ignore", invalid="ignore"):
        negH = np.where(rows > 0, rows * np.log2(rows), 0).sum(axis=1)
        Hq = -np.where(q > 0, q * np.log2(q), 0).sum(axis=-1)
    return P @ negH + Hq


def grid_sc1(fscx: FscxChannel, N: int, step: float = 1e-2) -> float:
    """max over first state and per-step laws p_n(x|s) of sum_n I(Y_n S_{n+1}; X_n | S_n).

    Steps before the last are searched on a grid; the last step separates over
    states, so it contributes the per-state capacities exactly (fine 1-D grid).
    """
    k = fscx.kernel
    nx, ns = k.shape[:2]
    assert nx == 2 and ns == 2 and N <= 3
    rows = [k[:, s].reshape(2, -1) for s in range(2)]
    Q = fscx.state_kernel()                                 # Q[x, s, t]
    fine = np.linspace(0, 1, 10**6 + 1)
    C = np.array([_mi_curve(r, fine).max() for r in rows])
    g = np.linspace(0, 1, int(round(1 / step)) + 1)
    I = [_mi_curve(r, g) for r in rows]                     # I[s][grid]
    # P(t | s, a) for a on the grid
    Pt = [np.outer(1 - g, Q[0, s]) + np.outer(g, Q[1, s]) for s in range(2)]
    if N == 1:
        return float(C.max())
    if N == 2:
        return float(max((I[s] + Pt[s] @ C).max() for s in range(2))) / 2
    best = 0.0
    # a: first step law at s1; b0, b1: second step laws at states 0 and 1
    tail = [I[t] + Pt[t] @ C for t in range(2)]             # value of stage 2 from t
    for s in range(2):
        tot = (I[s][:, None, None]
               + Pt[s][:, 0][:, None, None] * tail[0][None, :, None]
               + Pt[s][:, 1][:, None, None] * tail[1][None, None, :])
        best = max(best, float(tot.max()))
    return best / 3


def random_stochastic(rng, n, m=None, sparsity=0.0):
    """Random row-stochastic matrix with roughly ``sparsity`` zeros."""
    m = m or n
    P = rng.random((n, m)) * (rng.random((n, m)) >= sparsity)
    P[np.arange(n), rng.integers(0, m, n)] += 1e-3
    return P / P.sum(axis=1, keepdims=True)


def brute_irreducible(P, init):
    """Single recurrent class reached from ``init``, by transitive closure."""
    n = len(P)
    A = (np.asarray(P) > 0) | np.eye(n, dtype=bool)
    R = A.copy()
    for _ in range(n):
        R = R | ((R.astype(int) @ R.astype(int)) > 0)
    recurrent = [i for i in range(n) if all(R[j, i] for j in range(n) if R[i, j])]
    start = np.flatnonzero(np.asarray(init) > 0)
    reached = {i for i in recurrent if any(R[s, i] for s in start)}
    classes = {frozenset(j for j in reached if R[i, j] and R[j, i]) for i in reached}
    return len(classes) == 1, tuple(sorted(reached))


def frozen_state_fsc(ns=2):
    """States never move: the channel is decomposable."""
    from ehcap.surrogate import build_fsc_x
    k = np.zeros((2, ns, 2, ns))
    for s in range(ns):
        k[:, s, :, s] = bsc(0.1)
    return build_fsc_x(FscxChannel(k, ((0, 1),) * ns), 1)
