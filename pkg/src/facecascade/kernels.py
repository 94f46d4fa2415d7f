"""Hot inner loops.

Every kernel exists twice: a ``*_loop`` version compiled with numba and a
``*_numpy`` version written with array operations. The public name is bound
to one of them at import time according to :data:`facecascade._accel.USE_NUMBA`.
Both versions take and return the same dtypes so either can be swapped in.
"""

import numpy as np
import scipy.sparse

from facecascade._accel import USE_NUMBA, njit

# ---------------------------------------------------------------- fern descent


@njit
def _descend_loop(X, pix_i, pix_j, thr):
    n = X.shape[0]
    k_ferns, depth = pix_i.shape
    out = np.empty((n, k_ferns), dtype=np.int64)
    for s in range(n):
        for k in range(k_ferns):
            leaf = 0
            for b in range(depth):
                if X[s, pix_i[k, b]] - X[s, pix_j[k, b]] > thr[k, b]:
                    leaf |= 1 << b
            out[s, k] = leaf
    return out


def _descend_numpy(X, pix_i, pix_j, thr):
    depth = pix_i.shape[1]
    bits = (X[:, pix_i] - X[:, pix_j]) > thr[None, :, :]
    weights = (1 << np.arange(depth, dtype=np.int64))
    return bits.astype(np.int64) @ weights


# ----------------------------------------------------------- split pair search


@njit
def _best_pair_loop(cov_y, pixel_cov, eps):
    m = cov_y.shape[0]
    best = 0.0
    bi = -1
    bj = -1
    for i in range(m):
        vi = pixel_cov[i, i]
        ci = cov_y[i]
        for j in range(i + 1, m):
            var = vi + pixel_cov[j, j] - 2.0 * pixel_cov[i, j]
            if var <= eps:
                continue
            score = abs(ci - cov_y[j]) / np.sqrt(var)
            if score > best:
                best = score
                bi = i
                bj = j
    return bi, bj, best


def _best_pair_numpy(cov_y, pixel_cov, eps):
    diag = np.diag(pixel_cov)
    var = diag[:, None] + diag[None, :] - 2.0 * pixel_cov
    num = np.abs(cov_y[:, None] - cov_y[None, :])
    upper = np.triu(np.ones(var.shape, dtype=bool), k=1) & (var > eps)
    score = np.zeros(var.shape)
    score[upper] = num[upper] / np.sqrt(var[upper])
    flat = int(np.argmax(score))
    best = float(score.flat[flat])
    if best <= 0.0:
        return -1, -1, 0.0
    i, j = divmod(flat, var.shape[1])
    return i, j, best


# ---------------------------------------------------------------- leaf sums


@njit
def _leaf_sums_loop(leaf_idx, R, n_leaves):
    n, d = R.shape
    sums = np.zeros((n_leaves, d))
    counts = np.zeros(n_leaves, dtype=np.int64)
    for s in range(n):
        b = leaf_idx[s]
        counts[b] += 1
        for c in range(d):
            sums[b, c] += R[s, c]
    return sums, counts


def _leaf_sums_numpy(leaf_idx, R, n_leaves):
    onehot = np.zeros((R.shape[0], n_leaves))
    onehot[np.arange(R.shape[0]), leaf_idx] = 1.0
    return onehot.T @ R, np.bincount(leaf_idx, minlength=n_leaves).astype(np.int64)


# ------------------------------------------------ sparse indicator products


@njit
def _gram_loop(cols, n_cols):
    n, k = cols.shape
    G = np.zeros((n_cols, n_cols))
    # Upper pairs only, mirrored below; each sample's columns are distinct.
    for s in range(n):
        for a in range(k):
            ca = cols[s, a]
            G[ca, ca] += 1.0
            for b in range(a + 1, k):
                G[ca, cols[s, b]] += 1.0
    for i in range(n_cols):
        for j in range(i + 1, n_cols):
            total = G[i, j] + G[j, i]
            G[i, j] = total
            G[j, i] = total
    return G


def _gram_numpy(cols, n_cols, chunk=512):
    n, k = cols.shape
    counts = np.zeros(n_cols * n_cols, dtype=np.int64)
    for start in range(0, n, chunk):
        c = cols[start:start + chunk]
        pairs = (c[:, :, None] * n_cols + c[:, None, :]).ravel()
        counts += np.bincount(pairs, minlength=n_cols * n_cols)
    return counts.reshape(n_cols, n_cols).astype(np.float64)


@njit
def _indicator_rhs_loop(cols, Y, n_cols):
    n, k = cols.shape
    d = Y.shape[1]
    B = np.zeros((n_cols, d))
    for s in range(n):
        for a in range(k):
            ca = cols[s, a]
            for c in range(d):
                B[ca, c] += Y[s, c]
    return B


def _indicator_rhs_numpy(cols, Y, n_cols):
    n, k = cols.shape
    Phi = scipy.sparse.csr_matrix((np.ones(n * k), cols.ravel(), np.arange(0, n * k + 1, k)), shape=(n, n_cols))
    return np.asarray(Phi.T @ Y)


@njit
def _gather_sum_loop(WT, cols):
    n, k = cols.shape
    d = WT.shape[1]
    out = np.zeros((n, d))
    for s in range(n):
        for a in range(k):
            ca = cols[s, a]
            for c in range(d):
                out[s, c] += WT[ca, c]
    return out


def _gather_sum_numpy(WT, cols):
    out = np.zeros((cols.shape[0], WT.shape[1]))
    for a in range(cols.shape[1]):
        out += WT[cols[:, a]]
    return out


# ---------------------------------------------------------------- imaging


@njit
def _splat_loop(points, albedo, height, width, sigma, radius):
    img = np.zeros((height, width))
    inv = 1.0 / (2.0 * sigma * sigma)
    r = int(np.ceil(radius))
    for v in range(points.shape[0]):
        px = points[v, 0]
        py = points[v, 1]
        cx = int(np.floor(px + 0.5))
        cy = int(np.floor(py + 0.5))
        for y in range(max(cy - r, 0), min(cy + r + 1, height)):
            dy = y - py
            for x in range(max(cx - r, 0), min(cx + r + 1, width)):
                dx = x - px
                d2 = dx * dx + dy * dy
                if d2 <= radius * radius:
                    img[y, x] += albedo[v] * np.exp(-d2 * inv)
    return img


def _splat_numpy(points, albedo, height, width, sigma, radius):
    img = np.zeros((height, width))
    r = int(np.ceil(radius))
    offs = np.arange(-r, r + 1)
    centers = np.floor(points + 0.5).astype(np.int64)
    xs = centers[:, 0:1] + offs[None, :]
    ys = centers[:, 1:2] + offs[None, :]
    dx = xs - points[:, 0:1]
    dy = ys - points[:, 1:2]
    d2 = dy[:, :, None] ** 2 + dx[:, None, :] ** 2
    w = albedo[:, None, None] * np.exp(-d2 / (2.0 * sigma * sigma))
    ok = (d2 <= radius * radius)
    ok &= ((ys >= 0) & (ys < height))[:, :, None]
    ok &= ((xs >= 0) & (xs < width))[:, None, :]
    yy = np.broadcast_to(ys[:, :, None], d2.shape)
    xx = np.broadcast_to(xs[:, None, :], d2.shape)
    # Sequential accumulation in vertex order, same as the loop kernel.
    flat = (yy[ok] * width + xx[ok])
    np.add.at(img.ravel(), flat, w[ok])
    return img


@njit
def _sample_nearest_loop(images, image_idx, points):
    n, m, _ = points.shape
    h = images.shape[1]
    w = images.shape[2]
    out = np.empty((n, m))
    for s in range(n):
        im = image_idx[s]
        for p in range(m):
            x = int(np.floor(points[s, p, 0] + 0.5))
            y = int(np.floor(points[s, p, 1] + 0.5))
            x = min(max(x, 0), w - 1)
            y = min(max(y, 0), h - 1)
            out[s, p] = images[im, y, x]
    return out


def _sample_nearest_numpy(images, image_idx, points):
    h, w = images.shape[1:]
    x = np.clip(np.floor(points[..., 0] + 0.5).astype(np.int64), 0, w - 1)
    y = np.clip(np.floor(points[..., 1] + 0.5).astype(np.int64), 0, h - 1)
    return images[image_idx[:, None], y, x]


if USE_NUMBA:
    descend = _descend_loop
    best_pair = _best_pair_loop
    leaf_sums = _leaf_sums_loop
    gram = _gram_loop
    indicator_rhs = _indicator_rhs_loop
    gather_sum = _gather_sum_loop
    splat = _splat_loop
    sample_nearest = _sample_nearest_loop
else:
    descend = _descend_numpy
    best_pair = _best_pair_numpy
    leaf_sums = _leaf_sums_numpy
    gram = _gram_numpy
    indicator_rhs = _indicator_rhs_numpy
    gather_sum = _gather_sum_numpy
    splat = _splat_numpy
    sample_nearest = _sample_nearest_numpy

BACKEND = "numba" if USE_NUMBA else "numpy"

#: name -> (compiled loop, numpy version); used by the tests and the benchmark.
PAIRS = {
    "descend": (_descend_loop, _descend_numpy),
    "best_pair": (_best_pair_loop, _best_pair_numpy),
    "leaf_sums": (_leaf_sums_loop, _leaf_sums_numpy),
    "gram": (_gram_loop, _gram_numpy),
    "indicator_rhs": (_indicator_rhs_loop, _indicator_rhs_numpy),
    "gather_sum": (_gather_sum_loop, _gather_sum_numpy),
    "splat": (_splat_loop, _splat_numpy),
    "sample_nearest": (_sample_nearest_loop, _sample_nearest_numpy),
}
