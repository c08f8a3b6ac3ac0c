"""Independent naive reference implementations used as test oracles.

Everything here is deliberately written the slow, obvious way (explicit
loops, no shared code with the package) so the fast paths are checked
against a genuinely independent route.
"""

import itertools
import math

import numpy as np


def rigid_transform_homogeneous(point, rotation, translation):
    """Camera-space point via an explicit 4x4 homogeneous product."""
    m = np.zeros((4, 4))
    m[:3, :3] = rotation
    m[:3, 3] = translation
    m[3, 3] = 1.0
    out = m @ np.array([point[0], point[1], point[2], 1.0])
    return out[:3]


def conv3d_naive(x, kernels, bias):
    """Six nested loops, zero padding 1, cross-correlation."""
    cin, l, w, h = x.shape
    f = kernels.shape[0]
    out = np.zeros((f, l, w, h), np.float64)
    for fo in range(f):
        for i in range(l):
            for j in range(w):
                for k in range(h):
                    acc = float(bias[fo])
                    for c in range(cin):
                        for di in range(-1, 2):
                            for dj in range(-1, 2):
                                for dk in range(-1, 2):
                                    ii, jj, kk = i + di, j + dj, k + dk
                                    if 0 <= ii < l and 0 <= jj < w and 0 <= kk < h:
                                        acc += float(x[c, ii, jj, kk]) * \
                                            float(kernels[fo, c, di + 1, dj + 1, dk + 1])
                    out[fo, i, j, k] = acc
    return out.astype(np.float32)


def maxpool3d_naive(x):
    c, l, w, h = x.shape
    out = np.zeros((c, l // 2, w // 2, h // 2), np.float32)
    for ci in range(c):
        for i in range(l // 2):
            for j in range(w // 2):
                for k in range(h // 2):
                    block = [x[ci, 2 * i + a, 2 * j + b, 2 * k + d]
                             for a in range(2) for b in range(2) for d in range(2)]
                    out[ci, i, j, k] = max(block)
    return out


def global_maxpool_naive(x):
    return np.array([max(x[c].reshape(-1)) for c in range(x.shape[0])], np.float32)


def softmax_naive(logits):
    m = max(float(v) for v in logits)
    exps = [math.exp(float(v) - m) for v in logits]
    s = sum(exps)
    return np.array([e / s for e in exps])


def lstm_naive(x, h_prev, c_prev, w_x, w_h, b):
    """Scalar-by-scalar LSTM cell, gates in i, f, g, o order."""
    d = len(h_prev)

    def row(m, r, v):
        return sum(float(m[r, i]) * float(v[i]) for i in range(len(v)))

    def sig(v):
        return 1.0 / (1.0 + math.exp(-v))

    h, c = np.zeros(d), np.zeros(d)
    for r in range(d):
        zi = row(w_x, r, x) + row(w_h, r, h_prev) + float(b[r])
        zf = row(w_x, d + r, x) + row(w_h, d + r, h_prev) + float(b[d + r])
        zg = row(w_x, 2 * d + r, x) + row(w_h, 2 * d + r, h_prev) + float(b[2 * d + r])
        zo = row(w_x, 3 * d + r, x) + row(w_h, 3 * d + r, h_prev) + float(b[3 * d + r])
        c[r] = sig(zf) * float(c_prev[r]) + sig(zi) * math.tanh(zg)
        h[r] = sig(zo) * math.tanh(c[r])
    return h, c


def mlp_naive(x, layers):
    out = [float(v) for v in x]
    for idx, (w, b) in enumerate(layers):
        nxt = []
        for r in range(w.shape[0]):
            acc = float(b[r])
            for i in range(w.shape[1]):
                acc += float(w[r, i]) * out[i]
            nxt.append(acc)
        if idx < len(layers) - 1:
            nxt = [max(v, 0.0) for v in nxt]
        out = nxt
    return np.array(out)


def attention_naive(v, h_prev, u):
    """Explicit per-cell beta, softmax and weighted sum."""
    f, l, w, h = v.shape
    betas = np.zeros((l, w, h))
    for i in range(l):
        for j in range(w):
            for k in range(h):
                betas[i, j, k] = float(h_prev @ (u @ v[:, i, j, k]))
    alpha = softmax_naive(betas.reshape(-1)).reshape(l, w, h)
    pooled = np.zeros(f)
    for i in range(l):
        for j in range(w):
            for k in range(h):
                pooled += alpha[i, j, k] * v[:, i, j, k]
    return pooled, alpha


def gaussian_smooth_naive(grid, sigma):
    """Direct 2-d convolution with a normalized Gaussian, radius ceil(3*sigma),
    replicate border."""
    if sigma == 0:
        return grid.astype(np.float64)
    radius = math.ceil(3 * sigma)
    coords = np.arange(-radius, radius + 1)
    k1 = np.exp(-0.5 * (coords / sigma) ** 2)
    k1 /= k1.sum()
    kernel = np.outer(k1, k1)
    lx, ly = grid.shape
    out = np.zeros((lx, ly))
    for m in range(lx):
        for n in range(ly):
            acc = 0.0
            for dm in range(-radius, radius + 1):
                for dn in range(-radius, radius + 1):
                    mm = min(max(m + dm, 0), lx - 1)
                    nn = min(max(n + dn, 0), ly - 1)
                    acc += kernel[dm + radius, dn + radius] * grid[mm, nn]
            out[m, n] = acc
    return out


def envelope_naive(occupancy):
    lx, ly, lz = occupancy.shape
    out = np.zeros((lx, ly))
    for m in range(lx):
        for n in range(ly):
            best = 0
            for k in range(lz):
                if occupancy[m, n, k]:
                    best = max(best, k)
            out[m, n] = best
    return out


def local_maxima_naive(env, radius, min_height):
    """Cells strictly greater than every other cell within the Chebyshev
    radius, value >= min_height, sorted by descending value then position."""
    lx, ly = env.shape
    peaks = []
    for m in range(lx):
        for n in range(ly):
            v = env[m, n]
            if v < min_height:
                continue
            strict = True
            for dm in range(-radius, radius + 1):
                for dn in range(-radius, radius + 1):
                    if dm == 0 and dn == 0:
                        continue
                    mm, nn = m + dm, n + dn
                    if 0 <= mm < lx and 0 <= nn < ly and env[mm, nn] >= v:
                        strict = False
                        break
                if not strict:
                    break
            if strict:
                peaks.append(((m, n), float(v)))
    peaks.sort(key=lambda p: (-p[1], p[0]))
    return peaks


def enumerate_disjoint_paths(graph):
    """Brute-force optimum over all node-disjoint path combinations.

    Returns (best_total_cost, best_paths) where paths are node-index lists
    aligned with graph.trajectory_nodes, or (None, None) if infeasible.
    """
    num_layers = len(graph.layers)

    def paths_from(start):
        found = []

        def walk(node, path, cost):
            layer = graph.nodes[node].layer
            if layer == num_layers - 1:
                found.append((path, cost))
                return
            for nxt, ecost in graph.edges[node]:
                walk(nxt, path + [nxt], cost + ecost + graph.nodes[nxt].node_cost)

        walk(start, [start], graph.nodes[start].node_cost)
        return found

    all_paths = [paths_from(s) for s in graph.trajectory_nodes]
    best_cost, best = None, None
    for combo in itertools.product(*all_paths):
        nodes_used = list(itertools.chain.from_iterable(p for p, _ in combo))
        if len(nodes_used) != len(set(nodes_used)):
            continue
        total = sum(c for _, c in combo)
        if best_cost is None or total < best_cost:
            best_cost, best = total, [p for p, _ in combo]
    return best_cost, best
