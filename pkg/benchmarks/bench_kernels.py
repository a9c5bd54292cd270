"""Compare the compiled and pure-Python kernels.

    python benchmarks/bench_kernels.py [--sizes 8 32 128] [--repeat 5]

Prints the best-of-``repeat`` time per call for matmul, masked softmax and a
full causal attention forward pass, and checks the two backends agree bit for
bit on every input.
"""

import argparse
import timeit

import numpy as np

from attnbias import _pykernels
from attnbias.linalg import Rng

try:
    from attnbias import _ckernels
except ImportError:
    _ckernels = None


def _attend_with(kernels, x, params, spec):
    # swap the backend module used by linalg for one call
    import attnbias.linalg as linalg

    saved = linalg._kernels
    linalg._kernels = kernels
    try:
        from attnbias import attend

        return attend(x, params, spec)
    finally:
        linalg._kernels = saved


def bench(sizes, repeat=5):
    from attnbias import AttentionParams, Causal

    rows = []
    rng = Rng(0)
    backends = {"python": _pykernels}
    if _ckernels is not None:
        backends["compiled"] = _ckernels
    for n in sizes:
        d = max(1, n // 4)
        a = rng.uniform(-1, 1, (n, n))
        b = rng.uniform(-1, 1, (n, n))
        mask = np.ascontiguousarray(np.tril(np.ones((n, n), dtype=bool))).view(np.uint8)
        x = rng.uniform(-1, 1, (n, d))
        params = AttentionParams.random(d, rng)
        spec = Causal(n)
        results = {}
        for name, k in backends.items():
            number = max(1, 2000 // (n * n))
            cases = {
                "matmul": lambda k=k: k.matmul(a, b),
                "masked_softmax": lambda k=k: k.masked_row_softmax(a, mask),
                "attend": lambda k=k: _attend_with(k, x, params, spec),
            }
            for op, fn in cases.items():
                t = min(timeit.repeat(fn, number=number, repeat=repeat)) / number
                results[(op, name)] = t
        if _ckernels is not None:
            assert np.array_equal(_ckernels.matmul(a, b), _pykernels.matmul(a, b))
            assert np.array_equal(_ckernels.masked_row_softmax(a, mask)[0], _pykernels.masked_row_softmax(a, mask)[0])
        for op in ("matmul", "masked_softmax", "attend"):
            py = results[(op, "python")]
            cc = results.get((op, "compiled"))
            rows.append((n, op, py, cc))
    return rows


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--sizes", type=int, nargs="+", default=[8, 32, 128])
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args(argv)
    if _ckernels is None:
        print("compiled kernels not built; reporting the Python backend only")
    print(f"{'n':>5}  {'op':<15} {'python (s)':>12} {'compiled (s)':>13} {'speedup':>8}")
    for n, op, py, cc in bench(args.sizes, args.repeat):
        if cc is None:
            print(f"{n:>5}  {op:<15} {py:>12.3e} {'-':>13} {'-':>8}")
        else:
            print(f"{n:>5}  {op:<15} {py:>12.3e} {cc:>13.3e} {py / cc:>7.1f}x")


if __name__ == "__main__":
    main()
