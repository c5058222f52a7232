"""Time the numba conv kernels against the pure-numpy fallback.

The shapes mirror the spatial embedding chain of the default model: 190 ROI
sequences, kernel width 5, channel counts growing 1 -> 32 -> 64 -> 256 with
average pooling shrinking the padded time axis between rounds.

Run as ``python3 benchmarks/bench_kernels.py``; pass ``--repeats`` to change
the sample count.  Each cell reports the best wall time over the repeats.
"""

import argparse
import time

import numpy as np

from roiformer import backend
from roiformer.kernels import (
    conv1d_backward_nb,
    conv1d_backward_np,
    conv1d_forward_nb,
    conv1d_forward_np,
)

# (label, n, c_in, c_out, l_pad, k)
CASES = [
    ("conv0 190x1x64", 190, 1, 32, 64, 5),
    ("conv1 190x32x34", 190, 32, 64, 34, 5),
    ("conv2 190x64x19", 190, 64, 256, 19, 5),
    ("conv3 190x256x19", 190, 256, 256, 19, 5),
]


def best_of(fn, repeats: int) -> float:
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeats", type=int, default=7,
                        help="timing samples per cell (best is reported)")
    args = parser.parse_args()

    have_numba = backend.NUMBA_AVAILABLE
    print(f"numba available: {have_numba}")
    header = f"{'case':<20} {'dir':<9} {'numpy ms':>9}"
    if have_numba:
        header += f" {'numba ms':>9} {'speedup':>8}"
    print(header)

    rng = np.random.default_rng(0)
    for label, n, c_in, c_out, l_pad, k in CASES:
        x = rng.standard_normal((n, c_in, l_pad))
        w = rng.standard_normal((c_out, c_in, k))
        dout = rng.standard_normal(conv1d_forward_np(x, w, 1).shape)
        if have_numba:  # compile outside the timed region
            conv1d_forward_nb(x, w, 1)
            conv1d_backward_nb(dout, x, w, 1)
        for direction, np_fn, nb_fn in (
                ("forward",
                 lambda: conv1d_forward_np(x, w, 1),
                 (lambda: conv1d_forward_nb(x, w, 1)) if have_numba else None),
                ("backward",
                 lambda: conv1d_backward_np(dout, x, w, 1),
                 (lambda: conv1d_backward_nb(dout, x, w, 1))
                 if have_numba else None)):
            t_np = best_of(np_fn, args.repeats)
            line = f"{label:<20} {direction:<9} {t_np * 1e3:>9.3f}"
            if have_numba:
                t_nb = best_of(nb_fn, args.repeats)
                line += f" {t_nb * 1e3:>9.3f} {t_np / t_nb:>7.2f}x"
            print(line)


if __name__ == "__main__":
    main()
