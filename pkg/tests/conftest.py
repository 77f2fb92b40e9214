import numpy as np

from sgm import graph as gm
from sgm.resistance import components


def edges_graph(n, p, q, w):
    return gm._edges_from_pairs(n, np.asarray(p), np.asarray(q), np.asarray(w, dtype=np.float64))


def random_connected_graph(rng, n_lo=60, n_hi=400, deg_lo=5.0, deg_hi=20.0):
    """Erdos-Renyi-style weighted graph, resampled until connected."""
    while True:
        n = int(rng.integers(n_lo, n_hi))
        prob = rng.uniform(deg_lo, deg_hi) / (n - 1)
        upper = np.triu(rng.random((n, n)) < prob, 1)
        p, q = np.nonzero(upper)
        if len(p) == 0:
            continue
        w = rng.random(len(p)) + 0.5
        g = edges_graph(n, p, q, w)
        if components(g)[0] == 1:
            return g


def random_tree(rng, n):
    parents = np.array([int(rng.integers(0, i)) for i in range(1, n)])
    w = rng.random(n - 1) * 2.0 + 0.1
    return edges_graph(n, parents, np.arange(1, n), w)


def grid_graph(side):
    edges = []
    for i in range(side):
        for j in range(side):
            a = i * side + j
            if j < side - 1:
                edges.append((a, a + 1))
            if i < side - 1:
                edges.append((a, a + side))
    e = np.array(edges)
    return edges_graph(side * side, e[:, 0], e[:, 1], np.ones(len(e)))
