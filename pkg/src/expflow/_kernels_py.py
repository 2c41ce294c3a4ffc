"""Pure-Python kernels: blocking-flow max flow and flow path peeling.

Same signatures and results as the compiled ``_kernels`` module.
"""
from __future__ import annotations

from collections import deque

import numpy as np


def _out_arcs(n, tail, head):
    m = len(tail)
    buckets = [[] for _ in range(n)]
    for e in range(m):
        buckets[tail[e]].append(2 * e)
        buckets[head[e]].append(2 * e + 1)
    return buckets


def max_flow(n, tail, head, cap_fwd, cap_bwd, s, t, tol):
    """Dinic max flow on a graph given as edge arrays.

    Arc ``2e`` runs tail->head with capacity ``cap_fwd[e]``, arc ``2e+1``
    runs head->tail with ``cap_bwd[e]``.  Returns the flow value, the net
    tail->head flow per edge and the mask of vertices reachable from ``s``
    in the final residual graph.
    """
    tail = np.asarray(tail, dtype=np.int64).tolist()
    head = np.asarray(head, dtype=np.int64).tolist()
    cf = np.asarray(cap_fwd, dtype=np.float64).tolist()
    cb = np.asarray(cap_bwd, dtype=np.float64).tolist()
    m = len(tail)
    res = [0.0] * (2 * m)
    to = [0] * (2 * m)
    for e in range(m):
        res[2 * e] = cf[e]
        res[2 * e + 1] = cb[e]
        to[2 * e] = head[e]
        to[2 * e + 1] = tail[e]
    out = _out_arcs(n, tail, head)
    value = 0.0

    def bfs():
        level = [-1] * n
        level[s] = 0
        dq = deque([s])
        while dq:
            u = dq.popleft()
            for a in out[u]:
                if res[a] > tol:
                    w = to[a]
                    if level[w] < 0:
                        level[w] = level[u] + 1
                        dq.append(w)
        return level

    if s != t:
        while True:
            level = bfs()
            if level[t] < 0:
                break
            ptr = [0] * n
            stack = []  # arcs on the current path
            u = s
            while True:
                if u == t:
                    push = min(res[a] for a in stack)
                    cut_at = -1
                    for i, a in enumerate(stack):
                        res[a] -= push
                        res[a ^ 1] += push
                        if cut_at < 0 and res[a] <= tol:
                            cut_at = i
                    value += push
                    del stack[cut_at:]
                    u = to[stack[-1]] if stack else s
                    continue
                arcs = out[u]
                p = ptr[u]
                lu = level[u] + 1
                while p < len(arcs):
                    a = arcs[p]
                    if res[a] > tol and level[to[a]] == lu:
                        break
                    p += 1
                ptr[u] = p
                if p < len(arcs):
                    a = arcs[p]
                    stack.append(a)
                    u = to[a]
                else:
                    level[u] = -1
                    if not stack:
                        break
                    a = stack.pop()
                    u = to[a ^ 1]
                    ptr[u] += 1
    level = bfs()
    reach = np.array([lv >= 0 for lv in level], dtype=bool)
    flow = np.array([cf[e] - res[2 * e] for e in range(m)], dtype=np.float64)
    return value, flow, reach


def decompose(n, tail, head, adj_ptr, adj_edge, f, tol):
    """Cancel flow cycles, then peel source-to-sink paths.

    Returns ``(path_ptr, verts, edges, signs, weights)`` in flat form: path
    ``i`` visits ``verts[path_ptr[i] + i : path_ptr[i+1] + i + 1]`` and uses
    ``edges[path_ptr[i]:path_ptr[i+1]]``.  Also returns the number of
    cancelled cycles.
    """
    tail = np.asarray(tail, dtype=np.int64).tolist()
    head = np.asarray(head, dtype=np.int64).tolist()
    ptr = np.asarray(adj_ptr, dtype=np.int64).tolist()
    inc = np.asarray(adj_edge, dtype=np.int64).tolist()
    fv = np.asarray(f, dtype=np.float64)
    amt = np.abs(fv).tolist()
    src = np.where(fv > 0, np.asarray(tail), np.asarray(head)).tolist()
    m = len(tail)

    def dst(e):
        return head[e] if src[e] == tail[e] else tail[e]

    # cycle cancellation: depth-first scan with colours 0 new, 1 on stack, 2 done
    state = [0] * n
    cur = ptr[:n]
    ncycles = 0
    for root in range(n):
        if state[root]:
            continue
        vstack = [root]
        estack: list[int] = []
        pos = {root: 0}
        state[root] = 1
        while vstack:
            u = vstack[-1]
            p = cur[u]
            end = ptr[u + 1]
            found = -1
            while p < end:
                e = inc[p]
                if amt[e] > tol and src[e] == u and state[dst(e)] != 2:
                    found = e
                    break
                p += 1
            cur[u] = p
            if found < 0:
                state[u] = 2
                vstack.pop()
                del pos[u]
                if estack:
                    estack.pop()
                continue
            w = dst(found)
            if state[w] == 0:
                state[w] = 1
                pos[w] = len(vstack)
                vstack.append(w)
                estack.append(found)
                continue
            # back arc closes a cycle starting at w
            k = pos[w]
            cyc = estack[k:] + [found]
            x = min(amt[e] for e in cyc)
            first = -1
            for i, e in enumerate(cyc):
                amt[e] -= x
                if amt[e] <= tol:
                    amt[e] = 0.0
                    if first < 0:
                        first = i
            ncycles += 1
            # unwind to the tail of the first saturated arc
            keep = k + first
            for v in vstack[keep + 1:]:
                state[v] = 0
                del pos[v]
            del vstack[keep + 1:]
            del estack[keep:]

    exc = [0.0] * n
    for e in range(m):
        if amt[e] > 0:
            exc[src[e]] += amt[e]
            exc[dst(e)] -= amt[e]
    cur = ptr[:n]
    path_ptr = [0]
    verts: list[int] = []
    edges: list[int] = []
    signs: list[float] = []
    weights: list[float] = []
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
                u = dst(e)
                pv.append(u)
            if not pe:
                exc[s] = 0.0
                break
            x = min(min(amt[e] for e in pe), exc[s])
            for e in pe:
                amt[e] -= x
                if amt[e] <= tol:
                    amt[e] = 0.0
            exc[s] -= x
            exc[u] += x
            verts.extend(pv)
            edges.extend(pe)
            signs.extend(1.0 if src[e] == tail[e] else -1.0 for e in pe)
            weights.append(x)
            path_ptr.append(len(edges))
    return (np.array(path_ptr, dtype=np.int64), np.array(verts, dtype=np.int64),
            np.array(edges, dtype=np.int64), np.array(signs, dtype=np.float64),
            np.array(weights, dtype=np.float64), ncycles)
