"""Independent dense reference computations.

Nothing here imports the package: every quantity is evaluated from its
defining formula with explicit projectors, so agreement with the library is a
genuine cross-check rather than a tautology.
"""

import numpy as np


def projector(x):
    x = np.asarray(x, dtype=float)
    n = x.shape[0]
    if x.ndim == 1:
        x = x[:, None]
    if x.shape[1] == 0:
        return np.zeros((n, n))
    return x @ np.linalg.solve(x.T @ x, x.T)


def annihilator(x):
    n = np.asarray(x).shape[0]
    return np.eye(n) - projector(x)


def row_std(a):
    a = np.asarray(a, dtype=float)
    return a / a.sum(axis=1, keepdims=True)


def lattice_adjacency(rows, cols, queen=True):
    n = rows * cols
    a = np.zeros((n, n))
    for i in range(n):
        r1, c1 = divmod(i, cols)
        for j in range(n):
            r2, c2 = divmod(j, cols)
            dr, dc = abs(r1 - r2), abs(c1 - c2)
            if i != j and dr <= 1 and dc <= 1 and (queen or dr + dc == 1):
                a[i, j] = 1
    return a


def cycle_adjacency(n):
    a = np.zeros((n, n))
    for i in range(n):
        a[i, (i + 1) % n] = a[(i + 1) % n, i] = 1
    return a


def resaple_dense(z, x, w):
    """Basis-free evaluation through ``M``; traces over the residual space are
    traces of ``M``-sandwiched operators."""
    m = annihilator(x)
    r = np.trace(m)
    k = (w + w.T) / 2
    mu = np.trace(m @ k) / r
    nu = np.trace(m @ w @ m @ w) / r
    mz = m @ z
    num = mz @ k @ mz - mu * (mz @ mz)
    den = mz @ w.T @ m @ w @ mz + nu * (mz @ mz)
    return num / den


def aple_dense(z, w):
    n = len(z)
    k = (w + w.T) / 2
    nu = np.trace(w @ w) / n
    return (z @ k @ z) / (z @ (w.T @ w + nu * np.eye(n)) @ z)


def maple_dense(z, x, w):
    n = len(z)
    p = projector(x)
    m = np.eye(n) - p
    k = (w + w.T) / 2
    nu = np.trace(w @ w) / n
    wtw = w.T @ w
    den = m @ wtw @ m - m @ (w.T + w) @ p @ wtw @ m + nu * m
    return (z @ m @ k @ m @ z) / (z @ den @ z)


def moran_dense(z, x, w):
    r = annihilator(x) @ z
    return (r @ w @ r) / (r @ r)


def restricted_information_dense(x, w):
    m = annihilator(x)
    k = (w + w.T) / 2
    return 2 * np.trace(m @ k @ m @ k)


def reml_loglik_gls(x, w, z, rho):
    """Restricted profile log-likelihood from the GLS form with
    ``V = R^{-1} R^{-T}``; constants dropped."""
    n = len(z)
    ri = np.linalg.inv(np.eye(n) - rho * w)
    v = ri @ ri.T
    vi = np.linalg.inv(v)
    r = n - x.shape[1]
    if x.shape[1]:
        xvx = x.T @ vi @ x
        q = vi - vi @ x @ np.linalg.solve(xvx, x.T @ vi)
        logdet_x = np.linalg.slogdet(xvx)[1]
    else:
        q = vi
        logdet_x = 0.0
    return -0.5 * np.linalg.slogdet(v)[1] - 0.5 * logdet_x - 0.5 * r * np.log(z @ q @ z / r)


def scatter_dense(z, x, w):
    """Scatterplot coordinates with ``H`` from a complete QR of ``X``."""
    n = len(z)
    if x.shape[1]:
        q, _ = np.linalg.qr(x, mode="complete")
        h = q[:, x.shape[1]:]
    else:
        h = np.eye(n)
    r = h.shape[1]
    e = h.T @ z
    wr = h.T @ w @ h
    kr = (wr + wr.T) / 2
    a = kr - np.trace(kr) / r * np.eye(r)
    b = wr.T @ wr + np.trace(wr @ wr) / r * np.eye(r)
    vals, vecs = np.linalg.eigh(b)
    root = vecs @ np.diag(np.sqrt(vals)) @ vecs.T
    inv_root = vecs @ np.diag(1 / np.sqrt(vals)) @ vecs.T
    return h @ root @ e, h @ inv_root @ a @ e, e, a, b


def quadform_tail_mc(weights, x, draws, seed):
    rng = np.random.default_rng(seed)
    chi = rng.standard_normal((draws, len(weights))) ** 2
    return float(np.mean(chi @ np.asarray(weights) >= x))


def knn_bruteforce(coords, k):
    """Directed k nearest neighbours by full sorting with ties to the lower
    index, then the union of both directions as a set of undirected edges."""
    n = len(coords)
    edges = set()
    for i in range(n):
        cand = sorted(
            (float(np.hypot(*(np.asarray(coords[i]) - np.asarray(coords[j])))), j)
            for j in range(n) if j != i
        )
        for _, j in cand[:k]:
            edges.add(frozenset((i, j)))
    return edges
