import numpy as np


def rel_err(a, b, floor=1e-6):
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)


def central_diff(fn, x, idx, h=1e-5):
    """Central differences of scalar ``fn`` w.r.t. selected entries of ``x``."""
    out = []
    for i in idx:
        xp = x.copy()
        xm = x.copy()
        xp[i] += h
        xm[i] -= h
        out.append((fn(xp) - fn(xm)) / (2 * h))
    return np.array(out)
