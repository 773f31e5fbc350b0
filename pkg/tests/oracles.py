"""Independent reference implementations used by the tests."""

import math


def brute_force_fps(points, k, seed, rtol=1e-12):
    """Greedy farthest point sampling recomputing every distance from scratch."""
    selected = [seed]
    while len(selected) < k:
        best, best_i = -1.0, None
        for i, p in enumerate(points):
            if i in selected:
                continue
            d = min(math.dist(p, points[s]) for s in selected)
            # lowest index wins among distances equal within rtol
            if best_i is None or d > best + rtol * max(1.0, best):
                best, best_i = d, i
        selected.append(best_i)
    return selected


def numeric_gradient(f, params, h=1e-5):
    """Central finite differences of the scalar ``f()`` w.r.t. every entry of ``params``."""
    grads = []
    for p in params:
        g = [0.0] * p.size
        flat = p.reshape(-1)
        for i in range(p.size):
            old = flat[i]
            flat[i] = old + h
            fp = f()
            flat[i] = old - h
            fm = f()
            flat[i] = old
            g[i] = (fp - fm) / (2 * h)
        grads.append(g)
    return grads


def conv1d_scalar(x, w, b, padding):
    """Direct cross-correlation over nested lists; ``x[l][c]``, ``w[k][c][f]``."""
    k = len(w)
    cin, cout = len(w[0]), len(w[0][0])
    length = len(x)
    if padding == "same":
        left = (k - 1) // 2
        right = k - 1 - left
        x = [[0.0] * cin] * left + [list(r) for r in x] + [[0.0] * cin] * right
    lout = len(x) - k + 1
    out = []
    for t in range(lout):
        row = []
        for f in range(cout):
            s = b[f]
            for i in range(k):
                for c in range(cin):
                    s += x[t + i][c] * w[i][c][f]
            row.append(s)
        out.append(row)
    assert padding != "same" or lout == length
    return out
