"""Wired and v-wired uniform spanning forests.

Sampling is Wilson's algorithm (loop-erased walks attached to the root set);
Aldous-Broder and exhaustive weighted enumeration serve as distribution
oracles on small graphs.  A forest is stored as flat parent/slot/depth arrays
sized for 10^7..10^8-vertex boxes.
"""

from __future__ import annotations

from fractions import Fraction
from itertools import product
from typing import Iterable, Optional, Sequence

import numpy as np

from . import _kernels as K
from .network import Network
from .rng import RngStream
from .walk import WalkPath


class OrientedForest:
    """Forest oriented toward its root set: ``parent[v]`` is the next vertex
    toward v's root and ``pslot[v]`` the slot at v of that edge (-1 at
    roots).  ``depth[v]`` is the distance to the root."""

    def __init__(self, net: Network, parent, pslot, depth, root_set,
                 origin_order=None):
        self.net = net
        self.parent = parent
        self.pslot = pslot
        self.depth = depth
        self.root_set = tuple(root_set)
        self.origin_order = origin_order
        self._cptr = None
        self._cidx = None
        self._root_of = None
        self._scratch = None

    # -- lazy indexes ---------------------------------------------------

    def children_csr(self):
        if self._cptr is None:
            n = self.net.n
            cptr = np.zeros(n + 1, dtype=np.int64)
            cidx = np.empty(n, dtype=np.int32)
            cursor = np.empty(n, dtype=np.int64)
            K.children_csr_kernel(self.parent, cptr, cidx, cursor)
            self._cptr, self._cidx = cptr, cidx
        return self._cptr, self._cidx

    def root_of(self):
        if self._root_of is None:
            r = np.full(self.net.n, -1, dtype=np.int32)
            for root in self.root_set:
                r[root] = root
            stack = np.empty(self.net.n, dtype=np.int32)
            K.fill_root_kernel(self.parent, r, stack)
            self._root_of = r
        return self._root_of

    def scratch(self):
        if self._scratch is None:
            n = self.net.n
            self._scratch = (np.empty(n, dtype=np.int32),
                             np.empty(n, dtype=np.int32),
                             np.zeros(n, dtype=np.int32))
        return self._scratch

    def is_root(self, v: int) -> bool:
        return v in self.root_set

    def key(self) -> tuple:
        """Canonical identity of the sampled forest (for distribution tests)."""
        items = []
        for v in range(self.net.n):
            if v in self.root_set:
                continue
            items.append((v, int(self.parent[v]), int(self.pslot[v])))
        return tuple(items)


def _init_forest_arrays(net: Network, root_set):
    n = net.n
    parent = np.full(n, -1, dtype=np.int32)
    pslot = np.full(n, -1, dtype=np.int16)
    in_forest = np.zeros(n, dtype=np.uint8)
    for r in root_set:
        in_forest[r] = 1
    return parent, pslot, in_forest


def _fill_depth(net: Network, parent, root_set):
    depth = np.full(net.n, -1, dtype=np.int32)
    for r in root_set:
        depth[r] = 0
    stack = np.empty(net.n, dtype=np.int32)
    K.fill_depth_kernel(parent, depth, stack)
    return depth


def default_order(net: Network, root_set) -> np.ndarray:
    order = np.arange(net.n, dtype=np.int32)
    mask = np.ones(net.n, dtype=bool)
    for r in root_set:
        mask[r] = False
    return order[mask]


def shuffled_order(net: Network, root_set, rng: RngStream) -> np.ndarray:
    order = default_order(net, root_set)
    for i in range(len(order) - 1, 0, -1):
        j = rng.integers(i + 1)
        order[i], order[j] = order[j], order[i]
    return order


def wilson_sample(net: Network, rng: RngStream,
                  root_set: Optional[Iterable[int]] = None,
                  order: Optional[Sequence[int]] = None) -> OrientedForest:
    """Weighted uniform spanning forest with one root per component.

    ``root_set`` defaults to the network root set ({sink}, or {v, sink}
    after merge_with_sink).  The law does not depend on ``order``."""
    roots = tuple(net.root_set if root_set is None else root_set)
    if not roots:
        raise ValueError("root set must be nonempty")
    parent, pslot, in_forest = _init_forest_arrays(net, roots)
    if order is None:
        order_arr = default_order(net, roots)
    else:
        order_arr = np.asarray(order, dtype=np.int32)
    pos = np.full(net.n, -1, dtype=np.int32)
    pathv = np.empty(net.n + 1, dtype=np.int32)
    paths = np.empty(net.n + 1, dtype=np.int32)
    P, aux, indptr, indices, cum = net.kernel_args()
    pslot32 = np.full(net.n, -1, dtype=np.int32)
    K.wilson_kernel(P, aux, indptr, indices, cum, rng.state_array(),
                    order_arr, parent, pslot32, in_forest, pos, pathv, paths)
    if not in_forest.all():
        raise ValueError("network is disconnected: some vertices never reached the roots")
    pslot[:] = pslot32
    depth = _fill_depth(net, parent, roots)
    return OrientedForest(net, parent, pslot, depth, roots, order_arr)


def aldous_broder_sample(net: Network, rng: RngStream,
                         root: Optional[int] = None,
                         budget: int = 50_000_000) -> OrientedForest:
    """First-entry-edge tree of one walk from the root (oracle use; the net
    must be small enough to cover)."""
    if root is None:
        if len(net.root_set) != 1:
            raise ValueError("aldous_broder_sample needs a single root")
        root = net.root_set[0]
    if net.n > 200_000:
        raise ValueError("aldous_broder_sample is an oracle for small nets")
    csr = net.to_csr()
    parent = np.full(net.n, -1, dtype=np.int32)
    pslot32 = np.full(net.n, -1, dtype=np.int32)
    visited = np.zeros(net.n, dtype=np.uint8)
    steps = K.aldous_broder_kernel(csr.indptr, csr.indices, csr.cum, csr.rev,
                                   rng.state_array(), root, parent, pslot32,
                                   visited, net.n, budget)
    if steps < 0:
        raise RuntimeError("cover budget exceeded before the walk covered the graph")
    pslot = pslot32.astype(np.int16)
    depth = _fill_depth(net, parent, (root,))
    return OrientedForest(net, parent, pslot, depth, (root,))


# ---------------------------------------------------------------------------
# Structural queries
# ---------------------------------------------------------------------------

def past_of(forest: OrientedForest, v: int) -> np.ndarray:
    """{v} plus all descendants of v (vertices whose root path passes v)."""
    if forest.is_root(v):
        raise ValueError("the past of a root is not defined")
    cptr, cidx = forest.children_csr()
    outv, outd, _ = forest.scratch()
    count = K.bfs_past_kernel(cptr, cidx, v, outv, outd)
    return outv[:count].copy()


def past_summary_raw(forest: OrientedForest, v: int):
    """(members, dists from v, intrinsic diameter) of the past of v."""
    cptr, cidx = forest.children_csr()
    outv, outd, hscratch = forest.scratch()
    count = K.bfs_past_kernel(cptr, cidx, v, outv, outd)
    diam = int(K.subtree_diam_kernel(cptr, cidx, outv, count, hscratch))
    return outv[:count], outd[:count], diam


def future_of(forest: OrientedForest, v: int) -> WalkPath:
    """The oriented path from v to its root."""
    verts = [v]
    slots = []
    x = v
    while not forest.is_root(x):
        slots.append(int(forest.pslot[x]))
        x = int(forest.parent[x])
        verts.append(x)
    return WalkPath(np.asarray(verts, dtype=np.int64),
                    np.asarray(slots, dtype=np.int64))


def intrinsic_ball(forest: OrientedForest, v: int, n: int):
    """Tree-metric ball of radius n around v (parents + children traversal,
    not passing through roots).

    Returns (members, dists, touched_root): touched_root flags adjacency to a
    root, i.e. finite-volume truncation of the infinite component."""
    if forest.is_root(v):
        raise ValueError("balls are rooted at non-root vertices")
    cptr, cidx = forest.children_csr()
    outv, outd, mark = forest.scratch()
    is_root = np.zeros(forest.net.n, dtype=np.uint8)
    for r in forest.root_set:
        is_root[r] = 1
    count, touched = K.bfs_ball_kernel(cptr, cidx, forest.parent, is_root,
                                       v, n, outv, outd, mark)
    return outv[:count].copy(), outd[:count].copy(), bool(touched)


def component_of(forest: OrientedForest, v: int) -> np.ndarray:
    """All vertices whose root path ends at the same root as v's."""
    root_of = forest.root_of()
    return np.flatnonzero(root_of == root_of[v]).astype(np.int32)


def validate_forest(forest: OrientedForest) -> None:
    """OrientedForest invariants by full scan (debug/oracle use)."""
    net = forest.net
    P, aux, indptr, indices, cum = net.kernel_args()
    for v in range(net.n):
        if forest.is_root(v):
            assert forest.parent[v] == -1 and forest.depth[v] == 0
            continue
        p = int(forest.parent[v])
        assert p >= 0, f"vertex {v} has no parent"
        tgt = K.slot_target(P, aux, indptr, indices, v, int(forest.pslot[v]))
        assert tgt == p, f"parent edge of {v} does not exist"
        assert forest.depth[v] == forest.depth[p] + 1
    assert int(forest.depth.max()) <= net.n


# ---------------------------------------------------------------------------
# Exhaustive enumeration oracle
# ---------------------------------------------------------------------------

def enumerate_spanning_structures(net: Network,
                                  root_set: Optional[Iterable[int]] = None):
    """All spanning forests with one root per component, with weights
    proportional to the product of edge conductances.

    Returns a list of (key, weight) where key matches
    :meth:`OrientedForest.key`.  Limited to 9 non-root vertices."""
    roots = set(net.root_set if root_set is None else root_set)
    non_roots = [v for v in range(net.n) if v not in roots]
    if len(non_roots) > 9:
        raise ValueError("enumeration is limited to 9 non-root vertices")
    choices = []
    for v in non_roots:
        opts = []
        for (w, c, slot) in net.neighbors(v):
            opts.append((v, w, slot, Fraction(c)))
        choices.append(opts)
    out = []
    for combo in product(*choices):
        parent = {v: (w, slot) for (v, w, slot, _c) in combo}
        # acyclicity: every chain must reach a root
        ok = True
        for v in non_roots:
            seen = set()
            x = v
            while x not in roots:
                if x in seen:
                    ok = False
                    break
                seen.add(x)
                x = parent[x][0]
            if not ok:
                break
        if not ok:
            continue
        weight = Fraction(1)
        for (_v, _w, _slot, c) in combo:
            weight *= c
        key = tuple((v, parent[v][0], parent[v][1]) for v in sorted(parent))
        out.append((key, weight))
    return out


def dump_forest(forest: OrientedForest, path, seed: int, spec_hash: str) -> None:
    """Text dump: one ``v parent depth`` line per vertex, with a seed and
    network-hash header."""
    with open(path, "w") as fh:
        fh.write(f"# wusfsim forest dump seed={seed} net={spec_hash} "
                 f"roots={','.join(map(str, forest.root_set))}\n")
        for v in range(forest.net.n):
            fh.write(f"{v} {int(forest.parent[v])} {int(forest.depth[v])}\n")
