"""Straight-line reference interpreter for the layer recursion.

Deliberately written with scalar Python loops, independent of the package's
vectorized forward pass, so tests can cross-check the two implementations.
"""

import math


def naive_forward(widths, activation, weights, x):
    act = {
        "relu": lambda v: v if v > 0 else 0.0,
        "tanh": math.tanh,
        "identity": lambda v: v,
    }[activation]
    h = [float(v) for v in x]
    m_total = len(widths) - 1
    for m in range(1, m_total + 1):
        prev = h + [1.0]
        scale = math.sqrt(len(prev))
        z = []
        for j in range(widths[m]):
            acc = 0.0
            for t, hv in enumerate(prev):
                acc += float(weights[m - 1][j][t]) * hv
            z.append(acc / scale)
        h = [act(v) for v in z] if m < m_total else z
    return h[0]
