"""Slow, obviously-correct reference implementations used as test oracles."""

import sympy
from itertools import combinations


def naive_convolve(x, weights, d, padded):
    x = [float(v) for v in x]
    if padded:
        x = [0.0] * (4 * d) + x + [0.0] * (4 * d)
    n_out = len(x) - 8 * d
    out = []
    for i in range(n_out):
        acc = 0.0
        for m in range(9):
            acc += weights[m] * x[i + m * d]
        out.append(acc)
    return out


def naive_kernels():
    out = []
    for idx in combinations(range(9), 3):
        out.append(tuple(2 if i in idx else -1 for i in range(9)))
    return out


def naive_dilations(T, per_kernel, max_slots):
    """Merged dilation -> slot count for one kernel, straight from the formula."""
    slots = min(per_kernel, max_slots)
    counts = [per_kernel // slots + (1 if i < per_kernel % slots else 0) for i in range(slots)]
    merged = {}
    for i in range(slots):
        # 2 ** (i * log2(r) / n) == r ** (i / n), floored exactly
        exponent = sympy.Rational(i, slots - 1) if slots > 1 else 0
        d = int(sympy.floor(sympy.Rational(T - 1, 8) ** exponent))
        d = max(1, min(d, (T - 1) // 8))
        merged[d] = merged.get(d, 0) + counts[i]
    return merged
