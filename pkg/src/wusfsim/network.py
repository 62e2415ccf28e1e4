"""Finite weighted networks with a wired boundary.

Vertices are dense 0-based integers; the wired boundary vertex sits at the
last index.  Lattice boxes, tori, and regular-tree balls are *virtual*: their
adjacency is generated arithmetically inside the kernels (slot = direction
index), so nothing per-edge is stored until :meth:`Network.to_csr` is called.
Generic networks parsed from edge lists are CSR-backed from the start, with
parallel edges kept as distinct entries so that edge identity (vertex, slot)
survives.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Optional, Sequence

import numpy as np

from ._kernels import BACKEND_BOX, BACKEND_CSR, BACKEND_TORUS, BACKEND_TREE

_MAX_VERTICES = 2**31 - 2


class ConstructionError(ValueError):
    pass


@dataclass(frozen=True)
class LatticeSpec:
    """Hypercubic lattice box: wired mode adds one boundary vertex adjacent to
    every face site with one unit edge per missing lattice neighbor."""

    dimension: int
    side: int
    boundary: str = "wired"  # "wired" | "torus"
    conductances: Optional[dict] = None  # explicit {(u, w): c} table, else unit

    def __post_init__(self):
        if self.dimension < 1:
            raise ConstructionError("dimension must be >= 1")
        if self.side < 2:
            raise ConstructionError("side must be >= 2")
        if self.boundary not in ("wired", "torus"):
            raise ConstructionError(f"unknown boundary {self.boundary!r}")


class _Csr:
    __slots__ = ("indptr", "indices", "cond", "cum", "rev")

    def __init__(self, indptr, indices, cond, cum, rev):
        self.indptr = indptr
        self.indices = indices
        self.cond = cond
        self.cum = cum
        self.rev = rev


_EMPTY_I64 = np.empty(0, dtype=np.int64)
_EMPTY_I32 = np.empty(0, dtype=np.int32)
_EMPTY_F64 = np.empty(0, dtype=np.float64)


class Network:
    """Immutable (by convention) weighted network; safe to share across
    workers.  ``root_set`` is the set the samplers wire together; it defaults
    to the sink and grows to {v, sink} under :func:`merge_with_sink`."""

    def __init__(self, mode, n_main, sink, dim=0, side=0, degree=0, radius=0,
                 csr=None, root_set=None):
        self.mode = mode
        self.n_main = int(n_main)
        self.sink = None if sink is None else int(sink)
        self.n = self.n_main + (0 if sink is None else 1)
        self.dim = dim
        self.side = side
        self.degree = degree
        self.radius = radius
        self._csr = csr
        self.sink_set = frozenset() if sink is None else frozenset([self.sink])
        self.root_set = tuple(root_set) if root_set is not None else (
            () if sink is None else (self.sink,))
        if self.n > _MAX_VERTICES:
            raise ConstructionError(f"{self.n} vertices exceed the supported range")

    # -- kernel plumbing ----------------------------------------------------

    @property
    def backend(self) -> int:
        if self._csr is not None:
            return BACKEND_CSR
        return {"box": BACKEND_BOX, "torus": BACKEND_TORUS,
                "tree": BACKEND_TREE}[self.mode]

    def params(self) -> np.ndarray:
        return np.array(
            [self.backend, self.dim, self.side, self.degree, self.radius,
             self.n, -1 if self.sink is None else self.sink, self.n_main],
            dtype=np.int64)

    def aux(self) -> np.ndarray:
        if self._csr is not None:
            return _EMPTY_I64
        if self.mode in ("box", "torus"):
            d, S = self.dim, self.side
            return np.array([S ** (d - 1 - i) for i in range(d)], dtype=np.int64)
        if self.mode == "tree":
            return np.array(_tree_layer_starts(self.degree, self.radius),
                            dtype=np.int64)
        raise AssertionError("generic networks must be CSR backed")

    def kernel_args(self):
        """(P, aux, indptr, indices, cum) for the walk kernels."""
        if self._csr is not None:
            c = self._csr
            return self.params(), self.aux(), c.indptr, c.indices, c.cum
        return self.params(), self.aux(), _EMPTY_I64, _EMPTY_I32, _EMPTY_F64

    # -- local structure ----------------------------------------------------

    def is_sink(self, v: int) -> bool:
        return v in self.sink_set

    def degree_of(self, v: int) -> int:
        """Number of incident edge slots (parallel edges counted)."""
        if self._csr is not None:
            return int(self._csr.indptr[v + 1] - self._csr.indptr[v])
        if self.mode in ("box", "torus"):
            if v == self.sink:
                return 2 * self.dim * self.side ** (self.dim - 1) if self.dim > 0 else 0
            return 2 * self.dim
        if self.mode == "tree":
            if v == self.sink:
                return self.degree * (self.degree - 1) ** self.radius
            return self.degree
        raise AssertionError

    def vertex_conductance(self, v: int) -> float:
        if self._csr is not None:
            c = self._csr
            lo, hi = c.indptr[v], c.indptr[v + 1]
            return float(c.cum[hi - 1]) if hi > lo else 0.0
        return float(self.degree_of(v))

    def conductance_bounds(self, include_sink: bool = False):
        """(inf, sup) of c(v); by default over non-sink vertices, matching the
        bulk of the approximated infinite network."""
        if self._csr is None:
            c = float(2 * self.dim) if self.mode in ("box", "torus") else float(self.degree)
            if include_sink and self.sink is not None:
                return min(c, self.vertex_conductance(self.sink)), \
                    max(c, self.vertex_conductance(self.sink))
            return c, c
        vals = [self.vertex_conductance(v) for v in range(self.n)
                if include_sink or not self.is_sink(v)]
        return min(vals), max(vals)

    def neighbors(self, v: int):
        """List of (neighbor, conductance, slot)."""
        if self._csr is not None:
            c = self._csr
            lo, hi = int(c.indptr[v]), int(c.indptr[v + 1])
            return [(int(c.indices[e]), float(c.cond[e]), e - lo)
                    for e in range(lo, hi)]
        from ._kernels import slot_target
        P, aux = self.params(), self.aux()
        if v == self.sink:
            out = []
            for u in range(self.n_main):
                for s in range(self.degree_of(u)):
                    if slot_target(P, aux, _EMPTY_I64, _EMPTY_I32, u, s) == self.sink:
                        out.append((u, 1.0, len(out)))
            return out
        return [(int(slot_target(P, aux, _EMPTY_I64, _EMPTY_I32, v, s)), 1.0, s)
                for s in range(self.degree_of(v))]

    def coords(self, v: int) -> np.ndarray:
        if self.mode not in ("box", "torus"):
            raise ValueError("coordinates only exist in box/torus mode")
        if self.sink is not None and v == self.sink:
            raise ValueError("the wired boundary has no coordinates")
        d, S = self.dim, self.side
        out = np.empty(d, dtype=np.int64)
        for i in range(d - 1, -1, -1):
            out[i] = v % S
            v //= S
        return out

    def flat_index(self, coord: Sequence[int]) -> int:
        if self.mode not in ("box", "torus"):
            raise ValueError("coordinates only exist in box/torus mode")
        v = 0
        for c in coord:
            if not (0 <= c < self.side):
                raise ValueError("coordinate out of range")
            v = v * self.side + int(c)
        return v

    # -- materialization ----------------------------------------------------

    def to_csr(self, max_edges: int = 30_000_000) -> _Csr:
        """Explicit CSR adjacency with slot-faithful ordering.

        Refuses beyond ``max_edges`` directed entries; virtual lattices keep
        the direction-index slot order, so edge identities agree with the
        structured kernels."""
        if self._csr is not None:
            return self._csr
        twice_edges = sum(self.degree_of(v) for v in range(self.n))
        if twice_edges > max_edges:
            raise ConstructionError(
                f"materialization needs {twice_edges} directed edges; "
                f"raise max_edges to allow")
        rows = [self.neighbors(v) for v in range(self.n)]
        self._csr = _csr_from_neighbor_rows(rows, self.n)
        return self._csr

    # -- global checks (test-sized instances) --------------------------------

    def validate(self) -> None:
        """Full-scan invariants: positivity, symmetry, connectivity."""
        csr = self.to_csr()
        if np.any(~np.isfinite(csr.cond)) or np.any(csr.cond <= 0):
            raise AssertionError("conductances must be positive and finite")
        # symmetry via rev pairing
        for v in range(self.n):
            for e in range(csr.indptr[v], csr.indptr[v + 1]):
                w = csr.indices[e]
                r = csr.rev[e] + csr.indptr[w]
                if csr.indices[r] != v or csr.cond[r] != csr.cond[e]:
                    raise AssertionError("adjacency is not symmetric")
        # connectivity
        seen = np.zeros(self.n, dtype=bool)
        stack = [0]
        seen[0] = True
        while stack:
            v = stack.pop()
            for e in range(csr.indptr[v], csr.indptr[v + 1]):
                w = int(csr.indices[e])
                if not seen[w]:
                    seen[w] = True
                    stack.append(w)
        if not seen.all():
            raise AssertionError("network is not connected")

    def __repr__(self):  # pragma: no cover
        extra = {"box": f"d={self.dim},S={self.side}",
                 "torus": f"d={self.dim},S={self.side}",
                 "tree": f"k={self.degree},r={self.radius}"}.get(self.mode, "")
        return f"Network({self.mode},{extra},n={self.n})"


def _csr_from_neighbor_rows(rows, n) -> _Csr:
    indptr = np.zeros(n + 1, dtype=np.int64)
    for v, row in enumerate(rows):
        indptr[v + 1] = indptr[v] + len(row)
    m = int(indptr[-1])
    indices = np.empty(m, dtype=np.int32)
    cond = np.empty(m, dtype=np.float64)
    for v, row in enumerate(rows):
        base = indptr[v]
        for j, (w, c, _slot) in enumerate(row):
            indices[base + j] = w
            cond[base + j] = c
    rev = _pair_reverse_slots(indptr, indices, cond)
    cum = np.empty(m, dtype=np.float64)
    for v in range(n):
        lo, hi = indptr[v], indptr[v + 1]
        if hi > lo:
            cum[lo:hi] = np.cumsum(cond[lo:hi])
    return _Csr(indptr, indices, cond, cum, rev)


def _pair_reverse_slots(indptr, indices, cond) -> np.ndarray:
    """Match each directed entry with its reverse copy (parallel edges pair in
    order of appearance)."""
    n = indptr.size - 1
    m = indices.size
    rev = np.full(m, -1, dtype=np.int32)
    from collections import defaultdict
    pending = defaultdict(list)  # (w, v) -> slots at w waiting for a (v, w) copy
    for v in range(n):
        for e in range(int(indptr[v]), int(indptr[v + 1])):
            w = int(indices[e])
            slot = e - int(indptr[v])
            if pending[(v, w)]:
                s2 = pending[(v, w)].pop(0)
                e2 = int(indptr[w]) + s2
                rev[e] = s2
                rev[e2] = slot
            else:
                pending[(w, v)].append(slot)
    if np.any(rev < 0):
        raise ConstructionError("adjacency is not symmetric (unpaired edge copies)")
    return rev


def _tree_layer_starts(degree, radius):
    starts = [0, 1]
    width = degree
    for _ in range(1, radius + 1):
        starts.append(starts[-1] + width)
        width *= degree - 1
    return starts  # length radius + 2; starts[-1] == n_main


def build_lattice_box(spec: LatticeSpec) -> Network:
    """Wired box (or torus) of Z^d; vertex v = row-major flat coordinate index,
    boundary vertex = S**d."""
    d, S = spec.dimension, spec.side
    n_main = S ** d
    if n_main > _MAX_VERTICES:
        raise ConstructionError(f"S**d = {n_main} overflows the vertex range")
    mode = "torus" if spec.boundary == "torus" else "box"
    sink = None if mode == "torus" else n_main
    net = Network(mode, n_main, sink, dim=d, side=S)
    if spec.conductances is not None:
        net = _apply_conductance_table(net, spec.conductances)
    return net


def _apply_conductance_table(net: Network, table) -> Network:
    """Materialize a small box with explicit per-edge conductances."""
    if net.n_main > 100_000:
        raise ConstructionError("explicit conductance tables only on small boxes")
    rows = [[] for _ in range(net.n)]
    for v in range(net.n_main):
        for (w, _c, slot) in net.neighbors(v):
            c = table.get((v, w), table.get((w, v), 1.0))
            rows[v].append((w, float(c), slot))
    # sink row mirrors the boundary entries in scan order
    if net.sink is not None:
        sink_row = []
        for u in range(net.n_main):
            for (t, cc, _s) in rows[u]:
                if t == net.sink:
                    sink_row.append((u, cc, len(sink_row)))
        rows[net.sink] = sink_row
    csr = _csr_from_neighbor_rows(rows, net.n)
    return Network(net.mode, net.n_main, net.sink, dim=net.dim, side=net.side,
                   csr=csr, root_set=net.root_set)


def build_regular_tree_ball(degree: int, radius: int) -> Network:
    """Ball of the infinite degree-regular tree; depth-``radius`` leaves wire
    to the boundary vertex with one unit edge per missing tree neighbor."""
    if degree < 3:
        raise ConstructionError("degree must be >= 3")
    if radius < 1:
        raise ConstructionError("radius must be >= 1")
    starts = _tree_layer_starts(degree, radius)
    n_main = starts[-1]
    if n_main > _MAX_VERTICES:
        raise ConstructionError("tree ball overflows the vertex range")
    return Network("tree", n_main, n_main, degree=degree, radius=radius)


def merge_with_sink(net: Network, v: int) -> Network:
    """The v-wired network: v joins the sampling root set {v, sink}.

    Vertices stay distinct; samplers treat the pair as one wired root, which
    is distribution-equivalent to identification for spanning forests."""
    if not net.sink_set:
        raise ValueError("merge_with_sink needs a wired network")
    if net.is_sink(v):
        raise ValueError(f"vertex {v} is already a sink")
    if not (0 <= v < net.n_main):
        raise ValueError(f"vertex {v} out of range")
    return Network(net.mode, net.n_main, net.sink, dim=net.dim, side=net.side,
                   degree=net.degree, radius=net.radius, csr=net._csr,
                   root_set=(v, net.sink))


def graph_distance(net: Network, u: int, w: int) -> int:
    """Graph distance between non-sink vertices: O(d) in box mode (the box is
    l1-convex), parent climbs on the tree, BFS otherwise."""
    if net.is_sink(u) or net.is_sink(w):
        raise ValueError("graph_distance is undefined at the wired boundary")
    if u == w:
        return 0
    if net.mode == "box":
        return int(np.abs(net.coords(u) - net.coords(w)).sum())
    if net.mode == "tree":
        return tree_distance(net.degree, u, w)
    # torus / generic: breadth-first search
    csr = net.to_csr()
    dist = {u: 0}
    frontier = [u]
    while frontier:
        nxt = []
        for x in frontier:
            for e in range(int(csr.indptr[x]), int(csr.indptr[x + 1])):
                y = int(csr.indices[e])
                if net.is_sink(y) or y in dist:
                    continue
                dist[y] = dist[x] + 1
                if y == w:
                    return dist[y]
                nxt.append(y)
        frontier = nxt
    raise ValueError("vertices are not connected off the boundary")


def tree_depth(degree: int, v: int) -> int:
    d = 0
    while v != 0:
        v = (v - degree - 1) // (degree - 1) + 1 if v > degree else 0
        d += 1
    return d


def tree_distance(degree: int, u: int, w: int) -> int:
    du, dw = tree_depth(degree, u), tree_depth(degree, w)
    dist = 0
    while du > dw:
        u = (u - degree - 1) // (degree - 1) + 1 if u > degree else 0
        du -= 1
        dist += 1
    while dw > du:
        w = (w - degree - 1) // (degree - 1) + 1 if w > degree else 0
        dw -= 1
        dist += 1
    while u != w:
        u = (u - degree - 1) // (degree - 1) + 1 if u > degree else 0
        w = (w - degree - 1) // (degree - 1) + 1 if w > degree else 0
        dist += 2
    return dist


def parse_edge_list(text: str) -> Network:
    """Generic network from an edge-list: ``u w conductance`` per line,
    ``#`` comments, sinks declared in a header line ``sinks: i j ...``.

    Parallel edges stay distinct; the declared sinks are relabeled to the top
    indices (merged to a single boundary vertex when several are declared)."""
    edges = []
    declared_sinks: list[int] = []
    for raw in text.splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("sinks:"):
            declared_sinks = [int(tok) for tok in line[len("sinks:"):].split()]
            continue
        parts = line.split()
        if len(parts) not in (2, 3):
            raise ConstructionError(f"bad edge line: {raw!r}")
        u, w = int(parts[0]), int(parts[1])
        c = float(parts[2]) if len(parts) == 3 else 1.0
        if u == w:
            raise ConstructionError("self-loops are not supported")
        if c <= 0 or not np.isfinite(c):
            raise ConstructionError("conductances must be positive and finite")
        edges.append((u, w, c))
    if not edges:
        raise ConstructionError("empty edge list")
    ids = sorted({u for u, _, _ in edges} | {w for _, w, _ in edges})
    sinkset = set(declared_sinks)
    for s in sinkset:
        if s not in ids:
            raise ConstructionError(f"declared sink {s} has no edges")
    mains = [i for i in ids if i not in sinkset]
    relabel = {old: new for new, old in enumerate(mains)}
    n_main = len(mains)
    sink = n_main if sinkset else None
    for s in sinkset:
        relabel[s] = n_main  # all declared sinks merge into one boundary vertex
    n = n_main + (1 if sinkset else 0)
    rows = [[] for _ in range(n)]
    for (u, w, c) in edges:
        a, b = relabel[u], relabel[w]
        if a == b:
            continue  # edge between two declared sinks: self-loop at the boundary, dropped
        rows[a].append((b, c, len(rows[a])))
        rows[b].append((a, c, len(rows[b])))
    csr = _csr_from_neighbor_rows(rows, n)
    net = Network("generic", n_main, sink, csr=csr)
    net.validate()
    return net


def network_from_rows(rows, sink=None, mode="generic",
                      **kw) -> Network:
    """Small generic network from per-vertex neighbor rows
    [(w, conductance), ...]; used by tests and oracles."""
    full = [[(w, c, j) for j, (w, c) in enumerate(r)] for r in rows]
    csr = _csr_from_neighbor_rows(full, len(rows))
    n_main = len(rows) - (1 if sink is not None else 0)
    net = Network(mode, n_main, sink, csr=csr, **kw)
    return net


def weighted_tree_count(net: Network, roots: Optional[Iterable[int]] = None) -> Fraction:
    """Total conductance weight of spanning forests with one root per
    component, by exact rational elimination of the root-reduced Laplacian."""
    roots = set(net.root_set if roots is None else roots)
    if not roots:
        raise ValueError("need at least one root")
    keep = [v for v in range(net.n) if v not in roots]
    if len(keep) > 12:
        raise ValueError("exact rational elimination is limited to 12 vertices")
    csr = net.to_csr()
    idx = {v: i for i, v in enumerate(keep)}
    k = len(keep)
    L = [[Fraction(0) for _ in range(k)] for _ in range(k)]
    for v in keep:
        i = idx[v]
        for e in range(int(csr.indptr[v]), int(csr.indptr[v + 1])):
            w = int(csr.indices[e])
            c = Fraction(csr.cond[e])
            L[i][i] += c
            if w in idx:
                L[i][idx[w]] -= c
    det = Fraction(1)
    for col in range(k):
        piv = next((r for r in range(col, k) if L[r][col] != 0), None)
        if piv is None:
            return Fraction(0)
        if piv != col:
            L[col], L[piv] = L[piv], L[col]
            det = -det
        det *= L[col][col]
        inv = Fraction(1) / L[col][col]
        for r in range(col + 1, k):
            f = L[r][col] * inv
            if f:
                for cc in range(col, k):
                    L[r][cc] -= f * L[col][cc]
    return det
