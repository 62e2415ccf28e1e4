"""Hot loops: random walks, Wilson sampling, toppling, burning, traversals.

Every function here is written in loop-oriented single-source style and is
compiled with numba when enabled (see ``_accel``).  Conventions:

* ``P`` is an int64 parameter vector:
  ``P = [backend, d, S, degree, radius, n_all, sink, n_main]``
  where ``backend`` is 0 box (wired, unit conductances), 1 torus (unit),
  2 tree ball (wired, unit), 3 explicit CSR.  ``n_main`` counts non-sink
  vertices; ``sink = n_main`` for wired nets and ``-1`` for sinkless ones.
* ``aux`` is an int64 array: box/torus strides (``S**(d-1-i)``), tree layer
  start offsets (length radius+2), empty for CSR.
* CSR arrays: ``indptr`` int64[n_all+1], ``indices`` int32[m], ``cond``
  float64[m], ``cum`` float64[m] (running conductance sum within each row),
  ``rev`` int32[m] (slot index of the reverse copy of each edge at its head).
  Structured backends pass zero-length arrays.
* Edge identity is (vertex, slot): slot is the position of the edge in the
  vertex's incident list (direction index for lattices/trees, CSR offset for
  explicit nets).  Parallel edges to the sink keep distinct slots.
* RNG: splitmix64 on a shared uint64[1] state (see ``rng``); all float
  derivations are exact in IEEE double, so the compiled and fallback paths
  produce bitwise identical streams.
"""

import numpy as np

from ._accel import kernel

U64 = np.uint64

BACKEND_BOX = 0
BACKEND_TORUS = 1
BACKEND_TREE = 2
BACKEND_CSR = 3


# ---------------------------------------------------------------------------
# RNG core (splitmix64)
# ---------------------------------------------------------------------------

@kernel
def rng_next(state):
    s = state[0] + U64(0x9E3779B97F4A7C15)
    state[0] = s
    z = (s ^ (s >> U64(30))) * U64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> U64(27))) * U64(0x94D049BB133111EB)
    return z ^ (z >> U64(31))


@kernel
def rng_u01(state):
    return (rng_next(state) >> U64(11)) * (2.0 ** -53)


@kernel
def rng_below(state, n):
    j = int(rng_u01(state) * n)
    if j >= n:
        j = n - 1
    return j


# ---------------------------------------------------------------------------
# Topology: slot enumeration per backend
# ---------------------------------------------------------------------------

@kernel
def slot_count(P, indptr, v):
    b = P[0]
    if b == 3:
        return int(indptr[v + 1] - indptr[v])
    if b == 2:
        return int(P[3])
    return int(2 * P[1])


@kernel
def tree_parent_of(degree, v):
    if v <= degree:
        return 0
    return (v - degree - 1) // (degree - 1) + 1


@kernel
def tree_depth_of(aux, v):
    # aux = layer starts; find l with aux[l] <= v < aux[l+1]
    lo = 0
    hi = aux.size - 1
    while lo + 1 < hi:
        mid = (lo + hi) // 2
        if aux[mid] <= v:
            lo = mid
        else:
            hi = mid
    return lo


@kernel
def slot_target(P, aux, indptr, indices, v, slot):
    """Endpoint of the edge (v, slot); the sink id for boundary slots."""
    b = P[0]
    if b == 3:
        return int(indices[indptr[v] + slot])
    if b == 2:
        degree = P[3]
        n_main = P[7]
        if v == 0:
            return 1 + slot
        if slot == 0:
            return tree_parent_of(degree, v)
        w = degree + 1 + (v - 1) * (degree - 1) + (slot - 1)
        if w >= n_main:
            return int(P[6])
        return int(w)
    # box / torus
    S = P[2]
    axis = slot >> 1
    stride = aux[axis]
    c = (v // stride) % S
    if slot & 1:
        if c == S - 1:
            if b == BACKEND_TORUS:
                return int(v - (S - 1) * stride)
            return int(P[6])
        return int(v + stride)
    else:
        if c == 0:
            if b == BACKEND_TORUS:
                return int(v + (S - 1) * stride)
            return int(P[6])
        return int(v - stride)


@kernel
def draw_step(P, aux, indptr, indices, cum, state, v):
    """One conductance-proportional step from v; returns (target, slot)."""
    b = P[0]
    if b == 3:
        lo = indptr[v]
        hi = indptr[v + 1]
        r = rng_u01(state) * cum[hi - 1]
        # first e with cum[e] > r
        a = lo
        z = hi
        while a < z:
            mid = (a + z) // 2
            if cum[mid] > r:
                z = mid
            else:
                a = mid + 1
        if a >= hi:
            a = hi - 1
        return int(indices[a]), int(a - lo)
    ns = slot_count(P, indptr, v)
    slot = rng_below(state, ns)
    return slot_target(P, aux, indptr, indices, v, slot), slot


# ---------------------------------------------------------------------------
# Random walk collection
# ---------------------------------------------------------------------------

@kernel
def walk_collect(P, aux, indptr, indices, cum, state, start, stopmask, budget,
                 outv, outs):
    """Walk from start until stopmask fires (checked from step 1) or budget.

    Fills outv[0..L] / outs[0..L-1]; returns (L, fired).
    """
    v = start
    outv[0] = v
    length = 0
    while length < budget:
        w, slot = draw_step(P, aux, indptr, indices, cum, state, v)
        outs[length] = slot
        outv[length + 1] = w
        length += 1
        if stopmask[w] != 0:
            return length, 1
        v = w
    return length, 0


@kernel
def walk_to_sink_record(P, aux, indptr, indices, cum, state, start, outv):
    """Walk from start until absorbed at the sink, recording every vertex
    (outv[0]=start, outv[L]=sink).  Returns L, or -1 if the buffer fills.
    Works on huge virtual nets since no per-vertex mask is needed."""
    sink = P[6]
    v = start
    outv[0] = v
    length = 0
    cap = outv.size - 1
    while length < cap:
        w, _slot = draw_step(P, aux, indptr, indices, cum, state, v)
        length += 1
        outv[length] = w
        if w == sink:
            return length
        v = w
    return -1


@kernel
def dist_to_vertex(P, aux, center, v):
    """Graph distance between non-sink vertices on a virtual lattice/tree."""
    b = P[0]
    if b == 2:
        degree = P[3]
        x = center
        y = v
        dx = tree_depth_of(aux, x)
        dy = tree_depth_of(aux, y)
        dist = 0
        while dx > dy:
            x = tree_parent_of(degree, x)
            dx -= 1
            dist += 1
        while dy > dx:
            y = tree_parent_of(degree, y)
            dy -= 1
            dist += 1
        while x != y:
            x = tree_parent_of(degree, x)
            y = tree_parent_of(degree, y)
            dist += 2
        return dist
    # box: l1 coordinate distance
    d = P[1]
    S = P[2]
    dist = 0
    for a in range(d):
        stride = aux[a]
        ca = (center // stride) % S
        cv = (v // stride) % S
        if ca > cv:
            dist += ca - cv
        else:
            dist += cv - ca
    return int(dist)


@kernel
def last_visit_kernel(P, aux, indptr, indices, cum, state, start, r, budget):
    """Last time a sink-absorbed walk from start occupies B(start, r).

    Returns (last_time, total_steps); total_steps = -1 if the budget ran out.
    """
    v = start
    last = 0
    step = 0
    sink = P[6]
    while step < budget:
        w, _slot = draw_step(P, aux, indptr, indices, cum, state, v)
        step += 1
        if w == sink:
            return last, step
        if dist_to_vertex(P, aux, start, w) <= r:
            last = step
        v = w
    return last, -1


# ---------------------------------------------------------------------------
# Wilson's algorithm
# ---------------------------------------------------------------------------

@kernel
def wilson_kernel(P, aux, indptr, indices, cum, state, order,
                  parent, pslot, in_forest, pos, pathv, paths):
    """Loop-erased walks from ``order``, attached to the growing forest.

    ``in_forest`` must be preset to 1 on the root set; ``pos`` all -1.
    parent[x]/pslot[x] give the oriented edge out of x toward its root.
    Returns total walk steps (diagnostic).
    """
    total = 0
    for oi in range(order.size):
        u = order[oi]
        if in_forest[u] == 1:
            continue
        pos[u] = 0
        pathv[0] = u
        plen = 1
        v = u
        while True:
            w, slot = draw_step(P, aux, indptr, indices, cum, state, v)
            total += 1
            if in_forest[w] == 1:
                paths[plen - 1] = slot
                pathv[plen] = w
                plen += 1
                break
            pw = pos[w]
            if pw >= 0:
                # chronological loop erasure: cut back to w
                for i in range(pw + 1, plen):
                    pos[pathv[i]] = -1
                plen = pw + 1
                v = w
            else:
                paths[plen - 1] = slot
                pos[w] = plen
                pathv[plen] = w
                plen += 1
                v = w
        for i in range(plen - 1):
            x = pathv[i]
            parent[x] = pathv[i + 1]
            pslot[x] = paths[i]
            in_forest[x] = 1
            pos[x] = -1
    return total


@kernel
def aldous_broder_kernel(indptr, indices, cum, rev, state, root,
                         parent, pslot, visited, n_cover, budget):
    """First-entry tree of a single walk from root (CSR backend only)."""
    v = root
    visited[root] = 1
    seen = 1
    steps = 0
    while seen < n_cover:
        lo = indptr[v]
        hi = indptr[v + 1]
        r = rng_u01(state) * cum[hi - 1]
        a = lo
        z = hi
        while a < z:
            mid = (a + z) // 2
            if cum[mid] > r:
                z = mid
            else:
                a = mid + 1
        if a >= hi:
            a = hi - 1
        w = indices[a]
        steps += 1
        if visited[w] == 0:
            visited[w] = 1
            seen += 1
            parent[w] = v
            pslot[w] = rev[a]
        if steps >= budget:
            return -1
        v = w
    return steps


@kernel
def fill_depth_kernel(parent, depth, stack):
    """depth[v] preset to 0 on roots, -1 elsewhere; fills by chain chasing."""
    n = parent.size
    for v0 in range(n):
        if depth[v0] >= 0:
            continue
        v = v0
        top = 0
        while depth[v] < 0:
            stack[top] = v
            top += 1
            v = parent[v]
        d = depth[v]
        while top > 0:
            top -= 1
            d += 1
            depth[stack[top]] = d
    return 0


@kernel
def fill_root_kernel(parent, root_of, stack):
    """root_of[v] preset to v on roots, -1 elsewhere."""
    n = parent.size
    for v0 in range(n):
        if root_of[v0] >= 0:
            continue
        v = v0
        top = 0
        while root_of[v] < 0:
            stack[top] = v
            top += 1
            v = parent[v]
        r = root_of[v]
        while top > 0:
            top -= 1
            root_of[stack[top]] = r
    return 0


@kernel
def children_csr_kernel(parent, cptr, cidx, cursor):
    n = parent.size
    for i in range(n + 1):
        cptr[i] = 0
    for v in range(n):
        p = parent[v]
        if p >= 0:
            cptr[p + 1] += 1
    for i in range(n):
        cptr[i + 1] += cptr[i]
    for i in range(n):
        cursor[i] = cptr[i]
    for v in range(n):
        p = parent[v]
        if p >= 0:
            cidx[cursor[p]] = v
            cursor[p] += 1
    return 0


@kernel
def bfs_past_kernel(cptr, cidx, start, outv, outd):
    """Descendant closure of start via the child lists; returns count."""
    outv[0] = start
    outd[0] = 0
    head = 0
    count = 1
    while head < count:
        x = outv[head]
        dx = outd[head]
        head += 1
        for e in range(cptr[x], cptr[x + 1]):
            outv[count] = cidx[e]
            outd[count] = dx + 1
            count += 1
    return count


@kernel
def subtree_diam_kernel(cptr, cidx, members, count, h):
    """Diameter of the subtree spanned by members (a BFS-ordered closure).

    ``h`` is an int32 scratch over all vertices; entries touched here are
    reset before returning.
    """
    best = 0
    for i in range(count - 1, -1, -1):
        x = members[i]
        m1 = -1
        m2 = -1
        for e in range(cptr[x], cptr[x + 1]):
            hc = h[cidx[e]]
            if hc > m1:
                m2 = m1
                m1 = hc
            elif hc > m2:
                m2 = hc
        if m1 >= 0:
            h[x] = m1 + 1
            if m2 >= 0:
                cand = m1 + m2 + 2
            else:
                cand = m1 + 1
        else:
            h[x] = 0
            cand = 0
        if cand > best:
            best = cand
    for i in range(count):
        h[members[i]] = 0
    return best


@kernel
def bfs_ball_kernel(cptr, cidx, parent, is_root, start, radius,
                    outv, outd, mark):
    """Intrinsic ball around start via parent+child moves, not passing roots.

    Returns (count, touched_root): touched_root=1 if a member is adjacent to
    a root (finite-volume truncation).  ``mark`` scratch is reset on exit.
    """
    outv[0] = start
    outd[0] = 0
    mark[start] = 1
    head = 0
    count = 1
    touched = 0
    while head < count:
        x = outv[head]
        dx = outd[head]
        head += 1
        if dx >= radius:
            continue
        p = parent[x]
        if p >= 0:
            if is_root[p] != 0:
                touched = 1
            elif mark[p] == 0:
                mark[p] = 1
                outv[count] = p
                outd[count] = dx + 1
                count += 1
        for e in range(cptr[x], cptr[x + 1]):
            c = cidx[e]
            if mark[c] == 0:
                mark[c] = 1
                outv[count] = c
                outd[count] = dx + 1
                count += 1
    for i in range(count):
        mark[outv[i]] = 0
    return count, touched


# ---------------------------------------------------------------------------
# Sandpile
# ---------------------------------------------------------------------------

@kernel
def boundary_multiplicity_kernel(P, aux, indptr, indices, out):
    """Number of edges from each non-sink vertex to the sink."""
    n_main = P[7]
    sink = P[6]
    for v in range(n_main):
        m = 0
        for slot in range(slot_count(P, indptr, v)):
            if slot_target(P, aux, indptr, indices, v, slot) == sink:
                m += 1
        out[v] = m
    return 0


@kernel
def stabilize_kernel(P, aux, indptr, indices, deg_const, deg_arr,
                     h, odo, seed, queue, inq, dirty, touched):
    """Add one grain at seed and topple (FIFO, batched) until stable.

    h is mutated in place; odo/dirty are scratch that the caller resets over
    ``touched[:tcount]``.  Returns (av_size, tcount, ok); ok=0 flags odometer
    overflow.
    """
    sink = P[6]
    h[seed] += 1
    tcount = 0
    if dirty[seed] == 0:
        dirty[seed] = 1
        touched[tcount] = seed
        tcount += 1
    cap = queue.size
    head = 0
    tail = 0
    dseed = deg_const if deg_const > 0 else deg_arr[seed]
    if h[seed] >= dseed:
        queue[tail] = seed
        tail = (tail + 1) % cap
        inq[seed] = 1
    av = 0
    ok = 1
    while head != tail:
        u = queue[head]
        head = (head + 1) % cap
        inq[u] = 0
        du = deg_const if deg_const > 0 else deg_arr[u]
        t = h[u] // du
        if t <= 0:
            continue
        if odo[u] > 2147483647 - t:
            ok = 0
            break
        h[u] -= t * du
        odo[u] += t
        av += t
        for slot in range(slot_count(P, indptr, u)):
            w = slot_target(P, aux, indptr, indices, u, slot)
            if w == sink:
                continue
            h[w] += t
            if dirty[w] == 0:
                dirty[w] = 1
                touched[tcount] = w
                tcount += 1
            dw = deg_const if deg_const > 0 else deg_arr[w]
            if h[w] >= dw and inq[w] == 0:
                queue[tail] = w
                tail = (tail + 1) % cap
                inq[w] = 1
    return av, tcount, ok


@kernel
def forest_to_sandpile_kernel(P, aux, indptr, indices, parent, pslot, depth,
                              h_out, nb_id, nb_slot):
    """Burning-bijection image of a spanning tree rooted at the sink.

    Neighbors of each vertex are ranked ascending by (vertex id, slot); with
    t(u) = tree depth, B' = edges to depth < t(u)-1 and the parent edge ranked
    within the depth t(u)-1 edges, the height is deg - |B'| - 1 - rank.
    Returns 0, or -1 if some parent edge is inconsistent.
    """
    n_main = P[7]
    for u in range(n_main):
        du = slot_count(P, indptr, u)
        for s in range(du):
            nb_id[s] = slot_target(P, aux, indptr, indices, u, s)
            nb_slot[s] = s
        # insertion sort by (id, slot)
        for i in range(1, du):
            ki = nb_id[i]
            ks = nb_slot[i]
            j = i - 1
            while j >= 0 and (nb_id[j] > ki or (nb_id[j] == ki and nb_slot[j] > ks)):
                nb_id[j + 1] = nb_id[j]
                nb_slot[j + 1] = nb_slot[j]
                j -= 1
            nb_id[j + 1] = ki
            nb_slot[j + 1] = ks
        tu = depth[u]
        bprime = 0
        prank = -1
        pcount = 0
        for i in range(du):
            w = nb_id[i]
            tw = depth[w]
            if tw < tu - 1:
                bprime += 1
            elif tw == tu - 1:
                if w == parent[u] and nb_slot[i] == pslot[u]:
                    prank = pcount
                pcount += 1
        if prank < 0:
            return -1
        h_out[u] = du - bprime - 1 - prank
    return 0


@kernel
def sandpile_to_forest_kernel(P, aux, indptr, indices, h,
                              t_out, parent_out, pslot_out,
                              cburn, nextf, candflag, cand,
                              nb_id, nb_slot):
    """Parallel burning of a stable configuration; recovers the tree.

    Returns the number of burnt vertices (== n_main iff recurrent; parents
    are only recovered in that case, and -1 is returned on an internal rank
    inconsistency, which cannot happen for recurrent inputs).
    """
    sink = P[6]
    n_main = P[7]
    n_all = P[5]
    for v in range(n_all):
        t_out[v] = -1
        cburn[v] = 0
        candflag[v] = 0
    t_out[sink] = 0
    # seed burn counts with sink edges
    ncand = 0
    for v in range(n_main):
        m = 0
        for slot in range(slot_count(P, indptr, v)):
            if slot_target(P, aux, indptr, indices, v, slot) == sink:
                m += 1
        if m > 0:
            cburn[v] = m
            cand[ncand] = v
            candflag[v] = 1
            ncand += 1
    burnt = 0
    rnd = 1
    while ncand > 0:
        nnew = 0
        for i in range(ncand):
            c = cand[i]
            candflag[c] = 0
            du = slot_count(P, indptr, c)
            if t_out[c] < 0 and h[c] >= du - cburn[c]:
                t_out[c] = rnd
                nextf[nnew] = c
                nnew += 1
        if nnew == 0:
            break
        burnt += nnew
        ncand = 0
        for i in range(nnew):
            x = nextf[i]
            for slot in range(slot_count(P, indptr, x)):
                w = slot_target(P, aux, indptr, indices, x, slot)
                if w == sink:
                    continue
                if t_out[w] < 0:
                    cburn[w] += 1
                    if candflag[w] == 0:
                        candflag[w] = 1
                        cand[ncand] = w
                        ncand += 1
        rnd += 1
    if burnt < n_main:
        return burnt
    # recover parents: rank within the depth t(u)-1 edges, ascending (id, slot)
    for u in range(n_main):
        du = slot_count(P, indptr, u)
        for s in range(du):
            nb_id[s] = slot_target(P, aux, indptr, indices, u, s)
            nb_slot[s] = s
        for i in range(1, du):
            ki = nb_id[i]
            ks = nb_slot[i]
            j = i - 1
            while j >= 0 and (nb_id[j] > ki or (nb_id[j] == ki and nb_slot[j] > ks)):
                nb_id[j + 1] = nb_id[j]
                nb_slot[j + 1] = nb_slot[j]
                j -= 1
            nb_id[j + 1] = ki
            nb_slot[j + 1] = ks
        tu = t_out[u]
        bprime = 0
        for i in range(du):
            if t_out[nb_id[i]] < tu - 1:
                bprime += 1
        rank = du - bprime - 1 - h[u]
        if rank < 0:
            return -1
        pcount = 0
        found = 0
        for i in range(du):
            if t_out[nb_id[i]] == tu - 1:
                if pcount == rank:
                    parent_out[u] = nb_id[i]
                    pslot_out[u] = nb_slot[i]
                    found = 1
                    break
                pcount += 1
        if found == 0:
            return -1
    return burnt


# ---------------------------------------------------------------------------
# Interlacement excursions (CSR only)
# ---------------------------------------------------------------------------

@kernel
def excursion_kernel(indptr, indices, cum, rev, is_root,
                     root_edge_pos, root_edge_cum, state,
                     outv, outs, resume_v, resume_len):
    """One sink-to-sink excursion; starts along a root out-edge drawn with
    probability proportional to conductance over all root out-edges.

    outv[i]/outs[i]: i-th vertex and the slot at it of the edge used to enter
    it (outs[0] = rev slot of the start edge at its head; outv[0] is the
    starting root).  Returns (length, done).  If the buffer fills, returns
    done=0 with the partial walk recorded; call again with resume_v/resume_len
    to continue deterministically.
    """
    cap = outv.size
    if resume_len == 0:
        r = rng_u01(state) * root_edge_cum[root_edge_cum.size - 1]
        a = 0
        z = root_edge_cum.size
        while a < z:
            mid = (a + z) // 2
            if root_edge_cum[mid] > r:
                z = mid
            else:
                a = mid + 1
        if a >= root_edge_cum.size:
            a = root_edge_cum.size - 1
        e = root_edge_pos[a]
        w = indices[e]
        # locate the tail root of edge e
        lo = 0
        hi = indptr.size - 1
        while lo + 1 < hi:
            mid = (lo + hi) // 2
            if indptr[mid] <= e:
                lo = mid
            else:
                hi = mid
        outv[0] = lo
        outs[0] = -1
        outv[1] = w
        outs[1] = rev[e]
        length = 2
        if is_root[w] != 0:
            return length, 1
        v = w
    else:
        v = resume_v
        length = resume_len
    while length < cap:
        lo = indptr[v]
        hi = indptr[v + 1]
        r = rng_u01(state) * cum[hi - 1]
        a = lo
        z = hi
        while a < z:
            mid = (a + z) // 2
            if cum[mid] > r:
                z = mid
            else:
                a = mid + 1
        if a >= hi:
            a = hi - 1
        w = indices[a]
        outv[length] = w
        outs[length] = rev[a]
        length += 1
        if is_root[w] != 0:
            return length, 1
        v = w
    return length, 0


@kernel
def first_entries_kernel(exc_v, exc_s, offsets, is_root, stamp,
                         out_item, out_vertex, out_slot):
    """Per-item first entries: (item, vertex, entry slot at vertex)."""
    cnt = 0
    m = offsets.size - 1
    for j in range(m):
        for p in range(offsets[j] + 1, offsets[j + 1]):
            w = exc_v[p]
            if is_root[w] != 0:
                continue
            if stamp[w] != j:
                stamp[w] = j
                out_item[cnt] = j
                out_vertex[cnt] = w
                out_slot[cnt] = exc_s[p]
                cnt += 1
    return cnt


# ---------------------------------------------------------------------------
# Heat kernel / spectral helpers
# ---------------------------------------------------------------------------

@kernel
def push_matvec_kernel(indptr, indices, cond, cvert, absorb, x, y):
    """y = x P for the conductance walk; mass entering absorbing states drops."""
    n = x.size
    for v in range(n):
        y[v] = 0.0
    for v in range(n):
        xv = x[v]
        if xv == 0.0 or absorb[v] != 0:
            continue
        share = xv / cvert[v]
        for e in range(indptr[v], indptr[v + 1]):
            w = indices[e]
            if absorb[w] == 0:
                y[w] += cond[e] * share
    return 0


@kernel
def unit_matvec_kernel(aptr, aidx, x, y):
    """y = x P for the simple random walk on a graph given by symmetric CSR."""
    n = x.size
    for v in range(n):
        y[v] = 0.0
    for v in range(n):
        xv = x[v]
        if xv == 0.0:
            continue
        deg = aptr[v + 1] - aptr[v]
        share = xv / deg
        for e in range(aptr[v], aptr[v + 1]):
            y[aidx[e]] += share
    return 0


@kernel
def tree_walk_maxdisp_kernel(aptr, aidx, dist, state, start, marks, out):
    """Running max displacement of a simple walk; sampled at ``marks`` steps."""
    v = start
    best = 0
    mj = 0
    nmarks = marks.size
    last = marks[nmarks - 1]
    for step in range(1, last + 1):
        deg = aptr[v + 1] - aptr[v]
        v = aidx[aptr[v] + rng_below(state, deg)]
        dv = dist[v]
        if dv > best:
            best = dv
        if step == marks[mj]:
            out[mj] = best
            mj += 1
    return 0


# ---------------------------------------------------------------------------
# Kesten tree sampler (spine + critical Binomial(2, 1/2) bushes)
# ---------------------------------------------------------------------------

@kernel
def kesten_kernel(state, horizon, par, dep):
    """Spine of ``horizon``+1 vertices; spine vertex gets a bush child with
    probability 1/2 (size-biased Binomial(2,1/2) minus the spine child); bush
    vertices branch Binomial(2, 1/2), truncated at depth ``horizon``.

    Returns node count, or -1 if the buffers are too small.
    """
    cap = par.size
    if horizon + 1 > cap:
        return -1
    for i in range(horizon + 1):
        par[i] = i - 1
        dep[i] = i
    count = horizon + 1
    for i in range(horizon):
        if rng_u01(state) < 0.5:
            if count >= cap:
                return -1
            par[count] = i
            dep[count] = i + 1
            count += 1
    head = horizon + 1
    while head < count:
        x = head
        head += 1
        dx = dep[x]
        if dx >= horizon:
            continue
        bits = rng_next(state)
        k = int(bits & U64(1)) + int((bits >> U64(1)) & U64(1))
        for _ in range(k):
            if count >= cap:
                return -1
            par[count] = x
            dep[count] = dx + 1
            count += 1
    return count


# ---------------------------------------------------------------------------
# Lazy Wilson sampling of the past on the infinite regular tree
# ---------------------------------------------------------------------------

@kernel
def _arena_neighbor(k, tpar, tchild, tdep, v, slot, used):
    """Neighbor of arena node v along slot, allocating it if needed.

    Node 0 (the origin) has k child slots; other nodes have slot 0 = parent
    and k-1 child slots.  Returns (neighbor, new_used) or (-1, used) if the
    arena is full.
    """
    if v != 0 and slot == 0:
        return int(tpar[v]), used
    j = slot if v == 0 else slot - 1
    c = tchild[v * k + j]
    if c >= 0:
        return int(c), used
    if used >= tpar.size:
        return -1, used
    c = used
    used += 1
    tpar[c] = v
    tdep[c] = tdep[v] + 1
    for jj in range(k):
        tchild[c * k + jj] = -1
    tchild[v * k + j] = c
    return int(c), used


@kernel
def _arena_tree_dist(tpar, tdep, a, b):
    x = a
    y = b
    d = 0
    while tdep[x] > tdep[y]:
        x = tpar[x]
        d += 1
    while tdep[y] > tdep[x]:
        y = tpar[y]
        d += 1
    while x != y:
        x = tpar[x]
        y = tpar[y]
        d += 2
    return d


@kernel
def tree_past_kernel(k, margin, state, tpar, tchild, tdep, fpar, inP, proc,
                     pos, pathv, queue, qflag, members):
    """Past of the origin in the wired forest of the infinite k-regular tree.

    Adaptive-order Wilson sampling: the origin first, then every neighbor of
    a confirmed past member.  A walk is declared escaped once it runs
    ``margin`` levels deeper than any forest vertex (return probability at
    most (k-1)**-margin).  Returns
    (status, volume, extrinsic radius, intrinsic diameter, nodes_used):
    status 0 ok, 1 arena full, 2 queue/member buffers full.
    """
    used = 1
    tpar[0] = -1
    tdep[0] = 0
    for jj in range(k):
        tchild[jj] = -1
    fpar[0] = -2
    inP[0] = 0
    proc[0] = 0
    pos[0] = -1
    qflag[0] = 0

    qhead = 0
    qtail = 0
    mcount = 0
    maxfdep = 0
    queue[qtail] = 0
    qtail += 1
    qflag[0] = 1

    status = 0
    while qhead < qtail:
        u = queue[qhead]
        qhead += 1
        if proc[u] != 0:
            continue
        # Wilson walk from u
        pos[u] = 0
        pathv[0] = u
        plen = 1
        v = u
        hit = -1  # -1: escaped; else forest vertex hit
        while True:
            if tdep[v] > maxfdep + margin:
                break
            slot = rng_below(state, k)
            w, used = _arena_neighbor(k, tpar, tchild, tdep, v, slot, used)
            if w < 0:
                status = 1
                break
            if w >= pos.size:
                status = 1
                break
            if proc[w] != 0:
                if plen >= pathv.size:
                    status = 2
                    break
                pathv[plen] = w
                plen += 1
                hit = w
                break
            pw = pos[w]
            if pw >= 0:
                for i in range(pw + 1, plen):
                    pos[pathv[i]] = -1
                plen = pw + 1
                v = w
            else:
                if plen >= pathv.size:
                    status = 2
                    break
                pos[w] = plen
                pathv[plen] = w
                plen += 1
                v = w
        if status != 0:
            break
        # commit loop-erased path
        if hit >= 0:
            inherit = inP[hit]
            last = plen - 1
        else:
            inherit = 0
            last = plen
        for i in range(plen):
            pos[pathv[i]] = -1
        for i in range(last - 1, -1, -1):
            x = pathv[i]
            if i + 1 < plen:
                fpar[x] = pathv[i + 1]
            else:
                fpar[x] = -1
            proc[x] = 1
            if tdep[x] > maxfdep:
                maxfdep = tdep[x]
            if u == 0 and i == 0:
                inP[x] = 1
            else:
                inP[x] = inherit
        # enqueue neighbors of new past members
        for i in range(last - 1, -1, -1):
            x = pathv[i]
            if inP[x] == 0:
                continue
            if mcount >= members.size:
                status = 2
                break
            members[mcount] = x
            mcount += 1
            nslots = k if x == 0 else k
            for slot in range(nslots):
                if x != 0 and slot == 0:
                    nb = tpar[x]
                else:
                    nb, used = _arena_neighbor(k, tpar, tchild, tdep, x, slot, used)
                    if nb < 0:
                        status = 1
                        break
                if nb >= qflag.size:
                    status = 1
                    break
                if proc[nb] == 0 and qflag[nb] == 0:
                    if qtail >= queue.size:
                        status = 2
                        break
                    qflag[nb] = 1
                    queue[qtail] = nb
                    qtail += 1
            if status != 0:
                break
        if status != 0:
            break
    if status != 0:
        return status, 0, 0, 0, used
    # statistics over members
    radius = 0
    for i in range(mcount):
        if tdep[members[i]] > radius:
            radius = tdep[members[i]]
    # tree diameter of the member set by double sweep (tree metric)
    a = members[0]
    b = members[0]
    besta = -1
    for i in range(mcount):
        dd = _arena_tree_dist(tpar, tdep, a, members[i])
        if dd > besta:
            besta = dd
            b = members[i]
    diam = 0
    for i in range(mcount):
        dd = _arena_tree_dist(tpar, tdep, b, members[i])
        if dd > diam:
            diam = dd
    return 0, mcount, radius, diam, used
