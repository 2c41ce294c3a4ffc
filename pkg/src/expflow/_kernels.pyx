# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels: blocking-flow max flow and flow path peeling."""
import numpy as np
cimport numpy as cnp

cnp.import_array()


cdef void _out_csr(Py_ssize_t n, const long long[:] tail, const long long[:] head,
                   long long[:] optr, long long[:] oarc):
    cdef Py_ssize_t m = tail.shape[0], e, i
    cdef long long[:] fill
    for i in range(n + 1):
        optr[i] = 0
    for e in range(m):
        optr[tail[e] + 1] += 1
        optr[head[e] + 1] += 1
    for i in range(n):
        optr[i + 1] += optr[i]
    fill = np.array(optr[:n], dtype=np.int64)
    for e in range(m):
        oarc[fill[tail[e]]] = 2 * e
        fill[tail[e]] += 1
        oarc[fill[head[e]]] = 2 * e + 1
        fill[head[e]] += 1


cdef bint _bfs(Py_ssize_t n, long long s, long long t, const long long[:] optr, const long long[:] oarc,
               const long long[:] to, const double[:] res, long long[:] level, long long[:] queue, double tol):
    cdef Py_ssize_t i, qh = 0, qt = 0, p
    cdef long long u, w, a
    for i in range(n):
        level[i] = -1
    level[s] = 0
    queue[qt] = s
    qt += 1
    while qh < qt:
        u = queue[qh]
        qh += 1
        for p in range(optr[u], optr[u + 1]):
            a = oarc[p]
            if res[a] > tol:
                w = to[a]
                if level[w] < 0:
                    level[w] = level[u] + 1
                    queue[qt] = w
                    qt += 1
    return level[t] >= 0


def max_flow(Py_ssize_t n, tail, head, cap_fwd, cap_bwd, long long s, long long t, double tol):
    cdef const long long[:] tl = np.ascontiguousarray(tail, dtype=np.int64)
    cdef const long long[:] hd = np.ascontiguousarray(head, dtype=np.int64)
    cdef const double[:] cf = np.ascontiguousarray(cap_fwd, dtype=np.float64)
    cdef const double[:] cb = np.ascontiguousarray(cap_bwd, dtype=np.float64)
    cdef Py_ssize_t m = tl.shape[0], e, i, top, cut_at
    cdef double[:] res = np.empty(2 * m)
    cdef long long[:] to = np.empty(2 * m, dtype=np.int64)
    cdef long long[:] optr = np.empty(n + 1, dtype=np.int64)
    cdef long long[:] oarc = np.empty(2 * m, dtype=np.int64)
    cdef long long[:] level = np.empty(n, dtype=np.int64)
    cdef long long[:] queue = np.empty(n, dtype=np.int64)
    cdef long long[:] ptr = np.empty(n, dtype=np.int64)
    cdef long long[:] stack = np.empty(n + 1, dtype=np.int64)
    cdef double value = 0.0, push
    cdef long long u, a, p, lu
    for e in range(m):
        res[2 * e] = cf[e]
        res[2 * e + 1] = cb[e]
        to[2 * e] = hd[e]
        to[2 * e + 1] = tl[e]
    _out_csr(n, tl, hd, optr, oarc)
    if s != t:
        while _bfs(n, s, t, optr, oarc, to, res, level, queue, tol):
            for i in range(n):
                ptr[i] = optr[i]
            top = 0
            u = s
            while True:
                if u == t:
                    push = res[stack[0]]
                    for i in range(1, top):
                        if res[stack[i]] < push:
                            push = res[stack[i]]
                    cut_at = -1
                    for i in range(top):
                        a = stack[i]
                        res[a] -= push
                        res[a ^ 1] += push
                        if cut_at < 0 and res[a] <= tol:
                            cut_at = i
                    value += push
                    top = cut_at
                    u = to[stack[top - 1]] if top > 0 else s
                    continue
                p = ptr[u]
                lu = level[u] + 1
                while p < optr[u + 1]:
                    a = oarc[p]
                    if res[a] > tol and level[to[a]] == lu:
                        break
                    p += 1
                ptr[u] = p
                if p < optr[u + 1]:
                    a = oarc[p]
                    stack[top] = a
                    top += 1
                    u = to[a]
                else:
                    level[u] = -1
                    if top == 0:
                        break
                    top -= 1
                    a = stack[top]
                    u = to[a ^ 1]
                    ptr[u] += 1
    _bfs(n, s, t, optr, oarc, to, res, level, queue, tol)
    reach = np.asarray(level) >= 0
    flow = np.empty(m)
    cdef double[:] fl = flow
    for e in range(m):
        fl[e] = cf[e] - res[2 * e]
    return value, flow, reach


def decompose(Py_ssize_t n, tail, head, adj_ptr, adj_edge, f, double tol):
    cdef const long long[:] tl = np.ascontiguousarray(tail, dtype=np.int64)
    cdef const long long[:] hd = np.ascontiguousarray(head, dtype=np.int64)
    cdef const long long[:] ptr = np.ascontiguousarray(adj_ptr, dtype=np.int64)
    cdef const long long[:] inc = np.ascontiguousarray(adj_edge, dtype=np.int64)
    fv = np.ascontiguousarray(f, dtype=np.float64)
    cdef Py_ssize_t m = tl.shape[0], e, i, k, first, keep, sp, ep, root, s
    cdef double[:] amt = np.abs(fv)
    cdef long long[:] src = np.where(fv > 0, np.asarray(tl), np.asarray(hd)).astype(np.int64)
    cdef long long[:] dst = np.where(fv > 0, np.asarray(hd), np.asarray(tl)).astype(np.int64)
    cdef long long[:] state = np.zeros(n, dtype=np.int64)
    cdef long long[:] pos = np.zeros(n, dtype=np.int64)
    cdef long long[:] cur = np.array(ptr[:n], dtype=np.int64)
    cdef long long[:] vstack = np.empty(n + 1, dtype=np.int64)
    cdef long long[:] estack = np.empty(n + 1, dtype=np.int64)
    cdef double[:] exc = np.zeros(n)
    cdef long long u, w, p, end, found
    cdef double x
    cdef long long ncycles = 0
    for root in range(n):
        if state[root]:
            continue
        sp = 0
        ep = 0
        vstack[sp] = root
        sp += 1
        pos[root] = 0
        state[root] = 1
        while sp > 0:
            u = vstack[sp - 1]
            p = cur[u]
            end = ptr[u + 1]
            found = -1
            while p < end:
                e = inc[p]
                if amt[e] > tol and src[e] == u and state[dst[e]] != 2:
                    found = e
                    break
                p += 1
            cur[u] = p
            if found < 0:
                state[u] = 2
                sp -= 1
                if ep > 0:
                    ep -= 1
                continue
            w = dst[found]
            if state[w] == 0:
                state[w] = 1
                pos[w] = sp
                vstack[sp] = w
                sp += 1
                estack[ep] = found
                ep += 1
                continue
            k = pos[w]
            estack[ep] = found
            x = amt[found]
            for i in range(k, ep + 1):
                if amt[estack[i]] < x:
                    x = amt[estack[i]]
            first = -1
            for i in range(k, ep + 1):
                e = estack[i]
                amt[e] -= x
                if amt[e] <= tol:
                    amt[e] = 0.0
                    if first < 0:
                        first = i - k
            ncycles += 1
            keep = k + first
            for i in range(keep + 1, sp):
                state[vstack[i]] = 0
            sp = keep + 1
            ep = keep

    for e in range(m):
        if amt[e] > 0:
            exc[src[e]] += amt[e]
            exc[dst[e]] -= amt[e]
    for i in range(n):
        cur[i] = ptr[i]
    path_ptr = [0]
    verts = []
    edges = []
    signs = []
    weights = []
    cdef list pv, pe
    for s in range(n):
        while exc[s] > tol:
            pv = [s]
            pe = []
            u = s
            while True:
                p = cur[u]
                end = ptr[u + 1]
                while p < end:
                    e = inc[p]
                    if amt[e] > tol and src[e] == u:
                        break
                    p += 1
                cur[u] = p
                if p == end:
                    break
                e = inc[p]
                pe.append(e)
                u = dst[e]
                pv.append(u)
            if not pe:
                exc[s] = 0.0
                break
            x = exc[s]
            for e in pe:
                if amt[e] < x:
                    x = amt[e]
            for e in pe:
                amt[e] -= x
                if amt[e] <= tol:
                    amt[e] = 0.0
            exc[s] -= x
            exc[u] += x
            verts.extend(pv)
            edges.extend(pe)
            for e in pe:
                signs.append(1.0 if src[e] == tl[e] else -1.0)
            weights.append(x)
            path_ptr.append(len(edges))
    return (np.array(path_ptr, dtype=np.int64), np.array(verts, dtype=np.int64),
            np.array(edges, dtype=np.int64), np.array(signs, dtype=np.float64),
            np.array(weights, dtype=np.float64), ncycles)
