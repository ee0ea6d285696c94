"""Independent reference implementations used as test oracles.

Each one is written directly from the definition with explicit Python
loops, sharing no code with the package.
"""
import math

import numpy as np


def brute_force_staple(masks, tol=1e-6, max_iter=100):
    """Pixel-by-pixel EM with explicit loops over raters (pure Python floats)."""
    raters = [[int(v) for v in np.asarray(m).ravel()] for m in masks]
    j = len(raters)
    npx = len(raters[0])
    prior = sum(sum(r) for r in raters) / (j * npx)
    p = [0.99999] * j
    q = [0.99999] * j
    w = [0.0] * npx
    iters = 0
    for iters in range(1, max_iter + 1):
        for i in range(npx):
            a = prior
            b = 1.0 - prior
            for r in range(j):
                d = raters[r][i]
                a *= p[r] if d else (1.0 - p[r])
                b *= (1.0 - q[r]) if d else q[r]
            w[i] = a / (a + b) if a + b > 0 else prior
        new_p, new_q = [], []
        sw = sum(w)
        sv = npx - sw
        for r in range(j):
            tp = sum(w[i] for i in range(npx) if raters[r][i])
            tn = sum(1.0 - w[i] for i in range(npx) if not raters[r][i])
            new_p.append(tp / sw if sw > 0 else p[r])
            new_q.append(tn / sv if sv > 0 else q[r])
        delta = max(abs(a - b) + abs(c - d) for a, b, c, d in zip(new_p, p, new_q, q))
        p, q = new_p, new_q
        if delta < tol:
            break
    return np.array(w).reshape(np.shape(masks[0])), iters


def brute_boundary(mask):
    h, w = mask.shape
    pts = []
    for i in range(h):
        for j in range(w):
            if not mask[i, j]:
                continue
            for di, dj in ((1, 0), (-1, 0), (0, 1), (0, -1)):
                a, b = i + di, j + dj
                if not (0 <= a < h and 0 <= b < w) or not mask[a, b]:
                    pts.append((i, j))
                    break
    return pts


def brute_mhd(a, b, spacing=(1.0, 1.0)):
    xa = brute_boundary(a)
    xb = brute_boundary(b)

    def d(p, q):
        return math.hypot((p[0] - q[0]) * spacing[0], (p[1] - q[1]) * spacing[1])

    d_ab = sum(min(d(p, q) for q in xb) for p in xa) / len(xa)
    d_ba = sum(min(d(q, p) for p in xa) for q in xb) / len(xb)
    return max(d_ab, d_ba)


def naive_stats(outputs, skip):
    """Per-pixel loops; two-pass variance, explicit two-term entropies."""
    probs = outputs.probs[skip:]
    k, h, w = probs[0].shape
    var = np.zeros((h, w))
    ent = np.zeros((h, w))
    mi = np.zeros((h, w))
    clamp = lambda v: min(max(v, 1e-7), 1 - 1e-7)
    for i in range(h):
        for j in range(w):
            if k == 1:
                dists = [[1 - p[0, i, j], p[0, i, j]] for p in probs]
                channels = [[p[0, i, j] for p in probs]]
            else:
                dists = [[p[c, i, j] for c in range(k)] for p in probs]
                channels = [[p[c, i, j] for p in probs] for c in range(k)]
            vs = []
            for vals in channels:
                m = sum(vals) / len(vals)
                vs.append(sum((v - m) ** 2 for v in vals) / len(vals))
            var[i, j] = sum(vs) / len(vs)
            mean = [sum(d[c] for d in dists) / len(dists) for c in range(len(dists[0]))]
            h_mean = -sum(clamp(m) * math.log(clamp(m)) for m in mean)
            h_each = [-sum(clamp(v) * math.log(clamp(v)) for v in d) for d in dists]
            ent[i, j] = h_mean
            mi[i, j] = max(h_mean - sum(h_each) / len(h_each), 0.0)
    return var, ent, mi
