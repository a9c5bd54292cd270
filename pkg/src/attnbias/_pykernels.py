"""Pure-Python inner loops, used when the compiled extension is unavailable.

Every loop mirrors ``_ckernels.pyx`` term for term so both backends produce
bit-identical doubles.
"""

import math

import numpy as np

_NEG_INF = -math.inf


def matmul(a, b):
    rows = a.tolist()
    cols = b.T.tolist()
    out = []
    for row in rows:
        out_row = []
        for col in cols:
            acc = 0.0
            for x, y in zip(row, col):
                acc = acc + x * y
            out_row.append(acc)
        out.append(out_row)
    return np.array(out, dtype=np.float64).reshape(a.shape[0], b.shape[1])


def masked_row_softmax(scores, mask):
    n, m = scores.shape
    out = np.zeros((n, m), dtype=np.float64)
    for i, (srow, mrow) in enumerate(zip(scores.tolist(), mask.tolist())):
        work = [s if keep else _NEG_INF for s, keep in zip(srow, mrow)]
        top = max(work) if work else _NEG_INF
        if top == _NEG_INF:
            return out, i
        work = [math.exp(s - top) for s in work]
        total = 0.0
        for e in work:
            total = total + e
        out[i, :] = [e / total for e in work]
    return out, -1
