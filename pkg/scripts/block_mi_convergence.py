"""Compare the simulated i.u.d. rate on the empty-battery noiseless model with
the exact block averages (1/N) I(V^N; Y^N) and their increments.

The block averages climb slowly toward the rate, while the increments
N v_N - (N-1) v_{N-1} get there much sooner.
"""
import numpy as np

from ehcap.inforate import estimate_info_rate, exact_block_mi_sequence
from ehcap.model import additive_binary_model
from ehcap.surrogate import MarkovInputProcess, build_fsc_sc1

fsc = build_fsc_sc1(additive_binary_model(0.0), b1=0)
inp = MarkovInputProcess.iud(4)
est = estimate_info_rate(fsc, inp, 10**6, seed=1)
seq = exact_block_mi_sequence(fsc, inp, 12)
n = np.arange(1, 13)
inc = np.r_[seq[0], n[1:] * seq[1:] - n[:-1] * seq[:-1]]
print(f"estimate {est.rate_bits:.5f} +- {est.stderr:.5f}")
print(" N   (1/N)I       increment")
for k, v, d in zip(n, seq, inc):
    print(f"{k:2d}  {v:.8f}  {d:.8f}")
