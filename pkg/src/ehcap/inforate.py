"""Information rates of Markov policy inputs over surrogate channels.

The rate estimate uses sample entropies along one long simulated path:
-log p(v^N)/N, -log p(y^N)/N and -log p(v^N, y^N)/N, each computed by a
normalized forward recursion. For small N the block mutual information is
computed exactly by aggregating identical posterior beliefs.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import BudgetExceeded, IncompatibleDimensions, NoErgodicityCertificate
from .surrogate import MarkovInputProcess, SurrogateFsc, joint_chain, joint_initial

LOG2 = np.log(2.0)


@dataclass(frozen=True)
class RateEstimate:
    rate_bits: float
    sample_length: int
    seed: int
    components: tuple
    stderr: float
    n_blocks: int

    def to_dict(self) -> dict:
        hv, hy, hvy = self.components
        return {"rate_bits": self.rate_bits, "sample_length": self.sample_length,
                "seed": self.seed, "H_V": hv, "H_Y": hy, "H_VY": hvy,
                "stderr": self.stderr, "n_blocks": self.n_blocks}


def _check(fsc: SurrogateFsc, inp: MarkovInputProcess):
    if inp.n_symbols != fsc.n_inputs:
        raise IncompatibleDimensions("input process and channel disagree on |V|")


def _streams(seed: int, worker: int = 0):
    return (np.random.default_rng([seed, worker, 0]),
            np.random.default_rng([seed, worker, 1]))


def _initial_context(inp: MarkovInputProcess, rng) -> int:
    """Draw the starting context newest letter first.

    Drawing in this order means a process lifted to a higher order produces
    the same path for the same seed, since the extra letters only matter
    after the letters the original process uses.
    """
    k, nv = inp.order, inp.n_symbols
    if k == 0:
        return 0
    p = inp.initial.reshape((nv,) * k)
    letters = []
    for j in range(k):
        # marginal over the newest j+1 letters, conditioned on those drawn
        axes = tuple(range(k - j - 1))
        m = p.sum(axis=axes) if axes else p
        for d in letters:
            m = m[..., d]
        m = m.reshape(-1)
        m = m / m.sum()
        letters.append(int(min(np.searchsorted(np.cumsum(m), rng.random(), side="right"),
                               nv - 1)))
    c = 0
    for d in reversed(letters):
        c = c * nv + d
    return c


def simulate_path(fsc: SurrogateFsc, inp: MarkovInputProcess, N: int, seed: int,
                  worker: int = 0):
    """Sample ``(v^N, z^{N+1}, y^N)`` as index arrays."""
    _check(fsc, inp)
    rng, rng0 = _streams(seed, worker)
    c0 = _initial_context(inp, rng0)
    z0 = int(min(np.searchsorted(np.cumsum(fsc.initial), rng0.random(), side="right"),
                 fsc.n_states - 1))
    nv, nz, ny = fsc.n_inputs, fsc.n_states, fsc.n_outputs
    ctx_cum = np.cumsum(inp.kernel, axis=1)
    K_cum = np.cumsum(np.ascontiguousarray(fsc.kernel).reshape(nv, nz, ny * nz), axis=2)
    u = rng.random((N, 2))
    v, y, z = _kernels.simulate(c0, z0, ctx_cum, inp.next_context(), K_cum, u, ny, nz)
    return v, z, y


def _alpha0(fsc, inp):
    return np.ascontiguousarray(inp.initial[:, None] * fsc.initial[None, :])


def step_logs(fsc: SurrogateFsc, inp: MarkovInputProcess, v, y):
    """Per-use conditional log-probabilities (nats) of inputs, outputs and both."""
    _check(fsc, inp)
    K = np.ascontiguousarray(fsc.kernel)
    nxt = inp.next_context()
    a0 = _alpha0(fsc, inp)
    lv = _kernels.forward_input(np.ascontiguousarray(inp.initial), inp.kernel, nxt, v)
    ly = _kernels.forward_output(a0, inp.kernel, nxt, K, y)
    lvy = _kernels.forward_joint(a0, inp.kernel, nxt, K, v, y)
    return lv, ly, lvy


def sample_entropies(fsc: SurrogateFsc, inp: MarkovInputProcess, path):
    """Sample entropies of V, Y and (V, Y) in bits per use along ``path``."""
    v, _, y = path
    lv, ly, lvy = step_logs(fsc, inp, np.asarray(v), np.asarray(y))
    N = len(v)
    return (-lv.sum() / N / LOG2, -ly.sum() / N / LOG2, -lvy.sum() / N / LOG2)


def rate_certificate(fsc: SurrogateFsc, inp: MarkovInputProcess):
    """Irreducibility of the joint (context, state) chain on its stationary support."""
    from .ergodicity import CERTIFIED_AMS, INCONCLUSIVE, ErgodicityReport, irreducible_on_support
    ok, support = irreducible_on_support(joint_chain(fsc, inp), joint_initial(fsc, inp))
    if ok:
        return ErgodicityReport(CERTIFIED_AMS, "joint-chain-irreducible",
                                {"support_size": len(support)})
    return ErgodicityReport(INCONCLUSIVE, None, {"support_size": len(support)})


def estimate_info_rate(fsc: SurrogateFsc, inp: MarkovInputProcess, N: int = 10**6,
                       seed: int = 0, n_blocks: int = 20, force: bool = False,
                       certificate=None, worker: int = 0) -> RateEstimate:
    """Sample-entropy estimate of the information rate with a block standard error."""
    if certificate is None:
        certificate = rate_certificate(fsc, inp)
    if not certificate.certified:
        if not force:
            raise NoErgodicityCertificate("no ergodicity certificate for this input; "
                                          "pass force=True to estimate anyway")
        warnings.warn("estimating a rate without an ergodicity certificate")
    parts = [_worker_pass((fsc, inp, N, seed, worker, max(1, min(n_blocks, N))))]
    return _pool(parts, N, seed)


def _worker_pass(args):
    fsc, inp, n, seed, worker, nb = args
    v, _, y = simulate_path(fsc, inp, n, seed, worker)
    lv, ly, lvy = step_logs(fsc, inp, v, y)
    dens = (lvy - lv - ly) / LOG2
    blocks = [b.mean() for b in np.array_split(dens, nb)]
    return float(lv.sum()), float(ly.sum()), float(lvy.sum()), blocks


def _pool(parts, N, seed) -> RateEstimate:
    hv = -sum(p[0] for p in parts) / N / LOG2
    hy = -sum(p[1] for p in parts) / N / LOG2
    hvy = -sum(p[2] for p in parts) / N / LOG2
    blocks = np.array([b for p in parts for b in p[3]])
    nb = len(blocks)
    stderr = float(blocks.std(ddof=1) / np.sqrt(nb)) if nb > 1 else float("nan")
    return RateEstimate(float(hv + hy - hvy), int(N), int(seed),
                        (float(hv), float(hy), float(hvy)), stderr, nb)


def estimate_info_rate_workers(fsc: SurrogateFsc, inp: MarkovInputProcess, N: int = 10**6,
                               seed: int = 0, n_blocks: int = 20, workers: int = 1,
                               force: bool = False, certificate=None) -> RateEstimate:
    """Split the run over ``workers`` independent paths, one RNG stream each.

    The result depends on ``(seed, workers)`` and nothing else; with one
    worker it equals :func:`estimate_info_rate`.
    """
    if workers <= 1:
        return estimate_info_rate(fsc, inp, N, seed, n_blocks, force, certificate)
    if certificate is None:
        certificate = rate_certificate(fsc, inp)
    if not certificate.certified and not force:
        raise NoErgodicityCertificate("no ergodicity certificate for this input; "
                                      "pass force=True to estimate anyway")
    lengths = [len(c) for c in np.array_split(np.arange(N), workers)]
    per = max(1, -(-n_blocks // workers))
    jobs = [(fsc, inp, n, seed, w, max(1, min(per, n))) for w, n in enumerate(lengths) if n]
    from concurrent.futures import ProcessPoolExecutor
    with ProcessPoolExecutor(max_workers=workers) as ex:
        parts = list(ex.map(_worker_pass, jobs))
    return _pool(parts, N, seed)


# exact block mutual information --------------------------------------------

def _observation_matrices(fsc: SurrogateFsc, inp: MarkovInputProcess):
    """M[v, y] over hidden (context, state): P(v, y, h' | h)."""
    nc, nv = inp.n_contexts, inp.n_symbols
    nz, ny = fsc.n_states, fsc.n_outputs
    nxt = inp.next_context()
    M = np.zeros((nv, ny, nc, nz, nc, nz))
    for c in range(nc):
        for v in range(nv):
            M[v, :, c, :, nxt[c, v], :] += inp.kernel[c, v] * fsc.kernel[v].transpose(1, 0, 2)
    return M.reshape(nv, ny, nc * nz, nc * nz)


def block_entropies(mats: np.ndarray, init: np.ndarray, N: int, budget: int = 2 * 10**6,
                    decimals: int = 12) -> np.ndarray:
    """H(O^n) in bits for n = 1..N of a hidden Markov process.

    ``mats[o]`` maps a belief over hidden states to the unnormalized belief
    after observing ``o``. Histories leading to the same belief are merged,
    which is exact because the future law depends on the past only through it.
    """
    beliefs = init[None, :].astype(float)
    mass = np.ones(1)
    out = np.empty(N)
    H = 0.0
    for n in range(N):
        U = np.einsum("mh,ohk->omk", beliefs, mats)
        po = U.sum(axis=2)
        w = mass[None, :] * po
        keep = po > 0
        H -= float(np.sum(w[keep] * np.log2(po[keep])))
        out[n] = H
        U, po, w = U[keep], po[keep], w[keep]
        B = np.round(U / po[:, None], decimals)
        B, inv = np.unique(B, axis=0, return_inverse=True)
        mass = np.bincount(inv.ravel(), weights=w)
        beliefs = B
        if len(beliefs) * mats.shape[0] > budget:
            raise BudgetExceeded(f"{len(beliefs)} distinct beliefs at length {n + 1}")
    return out


def exact_block_mi_sequence(fsc: SurrogateFsc, inp: MarkovInputProcess, N: int,
                            budget: int = 2 * 10**6) -> np.ndarray:
    """(1/n) I(V^n; Y^n) in bits for n = 1..N."""
    _check(fsc, inp)
    M = _observation_matrices(fsc, inp)
    nv, ny, nh, _ = M.shape
    init = _alpha0(fsc, inp).ravel()
    hvy = block_entropies(M.reshape(nv * ny, nh, nh), init, N, budget)
    hy = block_entropies(M.sum(axis=0), init, N, budget)
    hv = block_entropies(M.sum(axis=1), init, N, budget)
    n = np.arange(1, N + 1)
    return (hv + hy - hvy) / n


def exact_block_mi(fsc: SurrogateFsc, inp: MarkovInputProcess, N: int,
                   budget: int = 2 * 10**6) -> float:
    """(1/N) I(V^N; Y^N) in bits."""
    return float(exact_block_mi_sequence(fsc, inp, N, budget)[-1])
