"""Independent reference implementations the library is checked against."""
import numpy as np


def oracle_eer(genuine, replay):
    """Intersection of FAR = FRR with the (FAR, FRR) polyline over all pooled thresholds."""
    pooled = sorted(set(genuine) | set(replay))
    thresholds = pooled + [pooled[-1] + 1.0]
    pts = []
    for th in thresholds:
        far = sum(1 for s in replay if s < th) / len(replay)
        frr = sum(1 for s in genuine if s >= th) / len(genuine)
        pts.append((far, frr))
    for (x0, y0), (x1, y1) in zip([pts[0]] + pts, pts):
        d0, d1 = x0 - y0, x1 - y1
        if d1 >= 0:
            if d1 == d0:
                return x1
            a = -d0 / (d1 - d0)
            return x0 + a * (x1 - x0)
    raise AssertionError("polyline never crosses the diagonal")


def random_score_set(rng):
    """2-50 scores per class, coarsely rounded so ties occur."""
    ng, nr = rng.integers(2, 51, size=2)
    decimals = rng.integers(1, 4)
    g = np.round(rng.normal(0.0, 1.0, ng), decimals)
    r = np.round(rng.normal(rng.uniform(-1, 2), 1.0, nr), decimals)
    return g, r


def loop_beamform(X, W):
    """Scalar triple loop over (t, f, n)."""
    N, T, F = X.shape
    out = np.zeros((T, F), dtype=complex)
    for t in range(T):
        for f in range(F):
            acc = 0j
            for n in range(N):
                acc += X[n, t, f] * W[n, t, f]
            out[t, f] = acc
    return out


def leakage_oracle(a, b):
    if set(a) == set(b):
        return "matched"
    if not set(a) & set(b):
        return "disjoint"
    return "leak"


def t_interval_half_width(values, t_quantile):
    v = np.asarray(values, dtype=float)
    return t_quantile * v.std(ddof=1) / np.sqrt(len(v))
