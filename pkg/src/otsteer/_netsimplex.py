"""Primal network simplex for the balanced transportation problem.

The bipartite graph (sources -> sinks, one arc per cost entry) is augmented
with an artificial root node; every node starts attached to the root by an
artificial arc so that the initial spanning tree is feasible.  The tree is
stored with parent/thread/successor-count arrays and pivots keep it
strongly feasible, which rules out cycling on degenerate pivots.

Arcs ``0 .. nx*ny-1`` are the real arcs, ``e = i*ny + j`` running from source
``i`` to sink node ``nx + j``.  Arcs ``nx*ny + u`` are the artificial arcs of
node ``u``.
"""

import numpy as np
from numba import njit

STATE_TREE = 0
STATE_LOWER = 1
DIR_UP = 1
DIR_DOWN = -1


@njit(cache=True)
def _arc_cost(e, cost, n_real, art_cost):
    if e < n_real:
        return cost[e]
    return art_cost[e - n_real]


@njit(cache=True)
def _recompute_potentials(pi, parent, pred, pred_dir, thread, root,
                          cost, n_real, art_cost):
    pi[root] = 0.0
    u = thread[root]
    while u != root:
        e = pred[u]
        c = _arc_cost(e, cost, n_real, art_cost)
        # reduced cost c + pi[s] - pi[t] vanishes on tree arcs
        if pred_dir[u] == DIR_UP:
            pi[u] = pi[parent[u]] - c
        else:
            pi[u] = pi[parent[u]] + c
        u = thread[u]


@njit(cache=True)
def _recompute_flows(flow, supply, parent, pred, pred_dir, thread, root,
                     n_all):
    n_nodes = supply.size
    order = np.empty(n_nodes + 1, dtype=np.int64)
    order[0] = root
    u = thread[root]
    k = 1
    while u != root:
        order[k] = u
        k += 1
        u = thread[u]
    for e in range(n_all):
        flow[e] = 0.0
    excess = np.zeros(n_nodes + 1)
    for u in range(n_nodes):
        excess[u] = supply[u]
    for idx in range(n_nodes, 0, -1):
        u = order[idx]
        e = pred[u]
        f = excess[u] if pred_dir[u] == DIR_UP else -excess[u]
        flow[e] = f if f > 0.0 else 0.0
        excess[parent[u]] += excess[u]


@njit(cache=True)
def network_simplex(cost, supply_src, demand_dst, tol, max_iter):
    """Solve min <C, P> s.t. P 1 = a, P^T 1 = b, P >= 0.

    ``cost`` is the flattened (row-major) cost matrix, assumed scaled to
    [0, 1].  Returns ``(flow, potentials, n_iter, status)`` where status is
    0 on optimality, 1 if ``max_iter`` was hit and 2 if a pivot was
    unbounded (which cannot happen for finite balanced data).
    """
    nx = supply_src.size
    ny = demand_dst.size
    n_nodes = nx + ny
    n_real = nx * ny
    n_all = n_real + n_nodes
    root = n_nodes

    supply = np.empty(n_nodes)
    for i in range(nx):
        supply[i] = supply_src[i]
    for j in range(ny):
        supply[nx + j] = -demand_dst[j]

    max_cost = 0.0
    for e in range(n_real):
        if cost[e] > max_cost:
            max_cost = cost[e]
    art_cost_value = (max_cost + 1.0) * n_nodes

    parent = np.empty(n_nodes + 1, dtype=np.int64)
    pred = np.empty(n_nodes + 1, dtype=np.int64)
    thread = np.empty(n_nodes + 1, dtype=np.int64)
    rev_thread = np.empty(n_nodes + 1, dtype=np.int64)
    succ_num = np.empty(n_nodes + 1, dtype=np.int64)
    last_succ = np.empty(n_nodes + 1, dtype=np.int64)
    pred_dir = np.empty(n_nodes + 1, dtype=np.int64)
    dirty_revs = np.empty(n_nodes + 1, dtype=np.int64)
    pi = np.zeros(n_nodes + 1)

    flow = np.zeros(n_all)
    state = np.ones(n_all, dtype=np.int8)
    art_cost = np.empty(n_nodes)

    for u in range(n_nodes):
        e = n_real + u
        parent[u] = root
        pred[u] = e
        thread[u] = u + 1
        rev_thread[u + 1] = u
        succ_num[u] = 1
        last_succ[u] = u
        state[e] = STATE_TREE
        if supply[u] >= 0.0:
            pred_dir[u] = DIR_UP
            pi[u] = 0.0
            flow[e] = supply[u]
            art_cost[u] = 0.0
        else:
            pred_dir[u] = DIR_DOWN
            pi[u] = art_cost_value
            flow[e] = -supply[u]
            art_cost[u] = art_cost_value
    parent[root] = -1
    pred[root] = -1
    thread[root] = 0
    rev_thread[0] = root
    succ_num[root] = n_nodes + 1
    last_succ[root] = root - 1
    pi[root] = 0.0

    block_size = max(int(np.sqrt(n_real)), 10)
    next_arc = 0
    n_iter = 0
    fresh = False
    status = 0

    while True:
        # block search pricing over real arcs
        in_arc = -1
        min_rc = 0.0
        cnt = block_size
        e = next_arc
        for _ in range(n_real):
            if state[e] == STATE_LOWER:
                rc = cost[e] + pi[e // ny] - pi[nx + e % ny]
                if rc < min_rc:
                    min_rc = rc
                    in_arc = e
            cnt -= 1
            e += 1
            if e == n_real:
                e = 0
            if cnt == 0:
                if min_rc < -tol:
                    break
                cnt = block_size
        if min_rc >= -tol:
            in_arc = -1
        if in_arc < 0:
            # confirm optimality against freshly propagated potentials
            if not fresh:
                fresh = True
                _recompute_potentials(pi, parent, pred, pred_dir, thread,
                                      root, cost, n_real, art_cost)
                continue
            break
        next_arc = e
        fresh = False
        if n_iter >= max_iter:
            status = 1
            break
        n_iter += 1

        # join node of the cycle closed by in_arc
        s_in = in_arc // ny
        t_in = nx + in_arc % ny
        u = s_in
        v = t_in
        while u != v:
            if succ_num[u] < succ_num[v]:
                u = parent[u]
            else:
                v = parent[v]
        join = u

        # leaving arc (strongly feasible tree rule)
        first = s_in
        second = t_in
        delta = np.inf
        result = 0
        u_out = -1
        u = first
        while u != join:
            if pred_dir[u] == DIR_UP:
                d = flow[pred[u]]
                if d < delta:
                    delta = d
                    u_out = u
                    result = 1
            u = parent[u]
        u = second
        while u != join:
            if pred_dir[u] == DIR_DOWN:
                d = flow[pred[u]]
                if d <= delta:
                    delta = d
                    u_out = u
                    result = 2
            u = parent[u]
        if result == 0:
            status = 2
            break
        if result == 1:
            u_in = first
            v_in = second
        else:
            u_in = second
            v_in = first

        # augment along the cycle
        if delta > 0.0:
            flow[in_arc] += delta
            u = s_in
            while u != join:
                flow[pred[u]] -= pred_dir[u] * delta
                u = parent[u]
            u = t_in
            while u != join:
                flow[pred[u]] += pred_dir[u] * delta
                u = parent[u]
        state[in_arc] = STATE_TREE
        out_arc = pred[u_out]
        state[out_arc] = STATE_LOWER
        flow[out_arc] = 0.0

        # update the spanning tree
        old_rev_thread = rev_thread[u_out]
        old_succ_num = succ_num[u_out]
        old_last_succ = last_succ[u_out]
        v_out = parent[u_out]

        if u_in == u_out:
            parent[u_in] = v_in
            pred[u_in] = in_arc
            pred_dir[u_in] = DIR_UP if u_in == s_in else DIR_DOWN
            if thread[v_in] != u_out:
                after = thread[old_last_succ]
                thread[old_rev_thread] = after
                rev_thread[after] = old_rev_thread
                after = thread[v_in]
                thread[v_in] = u_out
                rev_thread[u_out] = v_in
                thread[old_last_succ] = after
                rev_thread[after] = old_last_succ
        else:
            if old_rev_thread == v_in:
                thread_continue = thread[old_last_succ]
            else:
                thread_continue = thread[v_in]

            stem = u_in
            par_stem = v_in
            last = last_succ[u_in]
            after = thread[last]
            thread[v_in] = u_in
            n_dirty = 0
            dirty_revs[n_dirty] = v_in
            n_dirty += 1
            while stem != u_out:
                next_stem = parent[stem]
                thread[last] = next_stem
                dirty_revs[n_dirty] = last
                n_dirty += 1

                before = rev_thread[stem]
                thread[before] = after
                rev_thread[after] = before

                parent[stem] = par_stem
                par_stem = stem
                stem = next_stem

                if last_succ[stem] == last_succ[par_stem]:
                    last = rev_thread[par_stem]
                else:
                    last = last_succ[stem]
                after = thread[last]
            parent[u_out] = par_stem
            thread[last] = thread_continue
            rev_thread[thread_continue] = last
            last_succ[u_out] = last

            if old_rev_thread != v_in:
                thread[old_rev_thread] = after
                rev_thread[after] = old_rev_thread

            for k in range(n_dirty):
                w = dirty_revs[k]
                rev_thread[thread[w]] = w

            tmp_sc = 0
            tmp_ls = last_succ[u_out]
            u = u_out
            p = parent[u]
            while u != u_in:
                pred[u] = pred[p]
                pred_dir[u] = -pred_dir[p]
                tmp_sc += succ_num[u] - succ_num[p]
                succ_num[u] = tmp_sc
                last_succ[p] = tmp_ls
                u = p
                p = parent[u]
            pred[u_in] = in_arc
            pred_dir[u_in] = DIR_UP if u_in == s_in else DIR_DOWN
            succ_num[u_in] = old_succ_num

        up_limit_out = join if last_succ[join] == v_in else -1
        last_succ_out = last_succ[u_out]
        u = v_in
        while u != -1 and last_succ[u] == v_in:
            last_succ[u] = last_succ_out
            u = parent[u]

        if join != old_rev_thread and v_in != old_rev_thread:
            u = v_out
            while u != up_limit_out and last_succ[u] == old_last_succ:
                last_succ[u] = old_rev_thread
                u = parent[u]
        elif last_succ_out != old_last_succ:
            u = v_out
            while u != up_limit_out and last_succ[u] == old_last_succ:
                last_succ[u] = last_succ_out
                u = parent[u]

        u = v_in
        while u != join:
            succ_num[u] += old_succ_num
            u = parent[u]
        u = v_out
        while u != join:
            succ_num[u] -= old_succ_num
            u = parent[u]

        # shift potentials of the re-hung subtree
        c_in = cost[in_arc]
        if pred_dir[u_in] == DIR_UP:
            sigma = pi[v_in] - pi[u_in] - c_in
        else:
            sigma = pi[v_in] - pi[u_in] + c_in
        end = thread[last_succ[u_in]]
        u = u_in
        while u != end:
            pi[u] += sigma
            u = thread[u]

    _recompute_flows(flow, supply, parent, pred, pred_dir, thread, root, n_all)
    _recompute_potentials(pi, parent, pred, pred_dir, thread, root,
                          cost, n_real, art_cost)
    return flow[:n_real], pi[:n_nodes], n_iter, status
