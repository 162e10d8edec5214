"""Pure-Python matching kernels.

Same signatures and results as the compiled ``_matching`` extension; used
when the extension is not built or ``SWBCE_PURE_PYTHON=1`` is set.
"""

import numpy as np


def hopcroft_karp(indptr, indices, n_right):
    """Maximum-cardinality bipartite matching.

    ``indptr``/``indices`` is the CSR adjacency of the left vertices.
    Returns ``match_left`` with the matched right vertex or -1.
    """
    indptr = [int(v) for v in indptr]
    indices = [int(v) for v in indices]
    n_left = len(indptr) - 1
    inf = n_left + 1
    pair_u = [-1] * n_left
    pair_v = [-1] * n_right
    dist = [0] * n_left

    while True:
        queue = []
        for u in range(n_left):
            if pair_u[u] == -1:
                dist[u] = 0
                queue.append(u)
            else:
                dist[u] = inf
        found = False
        head = 0
        while head < len(queue):
            u = queue[head]
            head += 1
            for k in range(indptr[u], indptr[u + 1]):
                w = pair_v[indices[k]]
                if w == -1:
                    found = True
                elif dist[w] == inf:
                    dist[w] = dist[u] + 1
                    queue.append(w)
        if not found:
            break

        it = indptr[:-1]
        for root in range(n_left):
            if pair_u[root] != -1:
                continue
            stack = [root]
            while stack:
                x = stack[-1]
                if it[x] == indptr[x + 1]:
                    dist[x] = inf
                    stack.pop()
                    continue
                v = indices[it[x]]
                w = pair_v[v]
                if w == -1:
                    for y in stack:
                        vv = indices[it[y]]
                        pair_u[y] = vv
                        pair_v[vv] = y
                    break
                if dist[w] == dist[x] + 1:
                    stack.append(w)
                else:
                    it[x] += 1

    return np.asarray(pair_u, dtype=np.int64)


def greedy_match(left, right, n_left, n_right):
    """Accept candidate pairs in the given order whenever both ends are free."""
    used_l = [False] * n_left
    used_r = [False] * n_right
    match_left = [-1] * n_left
    for u, v in zip(left.tolist(), right.tolist()):
        if not used_l[u] and not used_r[v]:
            used_l[u] = used_r[v] = True
            match_left[u] = v
    return np.asarray(match_left, dtype=np.int64)
