"""Slow, direct reference implementations used only by the tests."""

import itertools
import math

import numpy as np


def hungarian(cost):
    """Minimum-cost perfect matching via shortest augmenting paths with potentials.

    Returns the total cost and the column assigned to each row.
    """
    cost = np.asarray(cost, dtype=float)
    n = len(cost)
    inf = float("inf")
    u = [0.0] * (n + 1)
    v = [0.0] * (n + 1)
    match = [0] * (n + 1)  # match[col] = row, 1-based, 0 = free
    way = [0] * (n + 1)
    for i in range(1, n + 1):
        match[0] = i
        j0 = 0
        minv = [inf] * (n + 1)
        used = [False] * (n + 1)
        while True:
            used[j0] = True
            i0, delta, j1 = match[j0], inf, 0
            for j in range(1, n + 1):
                if not used[j]:
                    cur = cost[i0 - 1][j - 1] - u[i0] - v[j]
                    if cur < minv[j]:
                        minv[j], way[j] = cur, j0
                    if minv[j] < delta:
                        delta, j1 = minv[j], j
            for j in range(n + 1):
                if used[j]:
                    u[match[j]] += delta
                    v[j] -= delta
                else:
                    minv[j] -= delta
            j0 = j1
            if match[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            match[j0] = match[j1]
            j0 = j1
    cols = [0] * n
    for j in range(1, n + 1):
        cols[match[j] - 1] = j - 1
    return sum(cost[i][cols[i]] for i in range(n)), cols


def brute_matching(cost):
    n = len(cost)
    return min(sum(cost[i][p[i]] for i in range(n)) for p in itertools.permutations(range(n)))


def euclid_cost(a, b):
    return [[math.dist(p, q) for q in b] for p in a]


def brute_chamfer(a, b):
    ab = sum(min(math.dist(p, q) ** 2 for q in b) for p in a) / len(a)
    ba = sum(min(math.dist(p, q) ** 2 for p in a) for q in b) / len(b)
    return ab + ba


def naive_psnr(x, y):
    mse = float(np.mean((np.asarray(x, float) - np.asarray(y, float)) ** 2))
    return 100.0 if mse == 0 else min(100.0, 10 * math.log10(1 / mse))


def naive_ssim(x, y, size=11, sigma=1.5, k1=0.01, k2=0.03):
    x, y = np.asarray(x, float), np.asarray(y, float)
    if x.ndim == 2:
        x, y = x[..., None], y[..., None]
    ax = np.arange(size) - (size - 1) / 2
    g1 = np.exp(-ax ** 2 / (2 * sigma ** 2))
    w = np.outer(g1, g1)
    w /= w.sum()
    c1, c2 = k1 ** 2, k2 ** 2
    per_channel = []
    for ch in range(x.shape[2]):
        vals = []
        for r in range(x.shape[0] - size + 1):
            for c in range(x.shape[1] - size + 1):
                a = x[r:r + size, c:c + size, ch]
                b = y[r:r + size, c:c + size, ch]
                ma, mb = np.sum(w * a), np.sum(w * b)
                va = np.sum(w * (a - ma) ** 2)
                vb = np.sum(w * (b - mb) ** 2)
                cov = np.sum(w * (a - ma) * (b - mb))
                vals.append((2 * ma * mb + c1) * (2 * cov + c2) / ((ma ** 2 + mb ** 2 + c1) * (va + vb + c2)))
        per_channel.append(np.mean(vals))
    return float(np.mean(per_channel))
