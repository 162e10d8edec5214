# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled matching kernels; see ``_matching_py`` for the reference twin."""

import numpy as np
cimport numpy as cnp

cnp.import_array()


def hopcroft_karp(indptr, indices, Py_ssize_t n_right):
    cdef const cnp.int64_t[::1] ip = np.ascontiguousarray(indptr, dtype=np.int64)
    cdef const cnp.int64_t[::1] ix = np.ascontiguousarray(indices, dtype=np.int64)
    cdef Py_ssize_t n_left = ip.shape[0] - 1
    cdef Py_ssize_t inf = n_left + 1
    out = np.full(n_left, -1, dtype=np.int64)
    cdef cnp.int64_t[::1] pair_u = out
    cdef cnp.int64_t[::1] pair_v = np.full(max(n_right, 1), -1, dtype=np.int64)
    cdef cnp.int64_t[::1] dist = np.zeros(max(n_left, 1), dtype=np.int64)
    cdef cnp.int64_t[::1] queue = np.zeros(max(n_left, 1), dtype=np.int64)
    cdef cnp.int64_t[::1] it = np.zeros(max(n_left, 1), dtype=np.int64)
    cdef cnp.int64_t[::1] stack = np.zeros(max(n_left, 1), dtype=np.int64)
    cdef Py_ssize_t u, k, w, v, x, y, vv, head, tail, root, top
    cdef bint found

    with nogil:
        while True:
            tail = 0
            for u in range(n_left):
                if pair_u[u] == -1:
                    dist[u] = 0
                    queue[tail] = u
                    tail += 1
                else:
                    dist[u] = inf
            found = False
            head = 0
            while head < tail:
                u = queue[head]
                head += 1
                for k in range(ip[u], ip[u + 1]):
                    w = pair_v[ix[k]]
                    if w == -1:
                        found = True
                    elif dist[w] == inf:
                        dist[w] = dist[u] + 1
                        queue[tail] = w
                        tail += 1
            if not found:
                break

            for u in range(n_left):
                it[u] = ip[u]
            for root in range(n_left):
                if pair_u[root] != -1:
                    continue
                top = 0
                stack[0] = root
                while top >= 0:
                    x = stack[top]
                    if it[x] == ip[x + 1]:
                        dist[x] = inf
                        top -= 1
                        continue
                    v = ix[it[x]]
                    w = pair_v[v]
                    if w == -1:
                        for k in range(top + 1):
                            y = stack[k]
                            vv = ix[it[y]]
                            pair_u[y] = vv
                            pair_v[vv] = y
                        break
                    if dist[w] == dist[x] + 1:
                        top += 1
                        stack[top] = w
                    else:
                        it[x] += 1
    return out


def greedy_match(left, right, Py_ssize_t n_left, Py_ssize_t n_right):
    cdef const cnp.int64_t[::1] lv = np.ascontiguousarray(left, dtype=np.int64)
    cdef const cnp.int64_t[::1] rv = np.ascontiguousarray(right, dtype=np.int64)
    out = np.full(n_left, -1, dtype=np.int64)
    cdef cnp.int64_t[::1] match_left = out
    cdef cnp.uint8_t[::1] used_r = np.zeros(max(n_right, 1), dtype=np.uint8)
    cdef Py_ssize_t k, u, v
    with nogil:
        for k in range(lv.shape[0]):
            u = lv[k]
            v = rv[k]
            if match_left[u] == -1 and not used_r[v]:
                match_left[u] = v
                used_r[v] = 1
    return out
