"""Finite-volume interlacement process: a time-stamped Poisson soup of
boundary-to-boundary excursions, the forest-valued first-entry dynamics, and
pathwise checks of how the past evolves under those dynamics.

Only the finite-volume construction is represented: excursions start from the
root set along an edge drawn with probability proportional to conductance
(rate = total root conductance) and stop on returning to the root set.  In
v-wired mode the root set is {v, boundary} и excursions may start or end at
either, matching identification of v with the boundary.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import _kernels as K
from . import walk as walkmod
from .forest import OrientedForest, _fill_depth, past_of
from .network import Network
from .rng import RngStream
from .walk import WalkPath


class CoverageError(RuntimeError):
    pass


@dataclass
class TrajectorySoup:
    net: Network
    mode: str                 # "wired" | "v-wired"
    v: Optional[int]
    window: tuple             # requested [a, b]
    cover_b: float            # extended end; items beyond b ensure coverage
    timestamps: np.ndarray    # increasing, one per item
    offsets: np.ndarray       # int64, item j occupies [offsets[j], offsets[j+1])
    exc_v: np.ndarray         # concatenated excursion vertices
    exc_s: np.ndarray         # slot at exc_v[i] of the edge toward exc_v[i-1]
    covered: bool
    fe_ptr: np.ndarray        # per-vertex slice into the first-entry table
    fe_item: np.ndarray       # item index of each first entry (ts-ascending)
    fe_slot: np.ndarray       # entry slot at the vertex

    @property
    def rate(self) -> float:
        return sum(self.net.vertex_conductance(r) for r in self.root_set)

    @property
    def root_set(self):
        if self.mode == "v-wired":
            return (self.v, self.net.sink)
        return (self.net.sink,)

    def item_count(self) -> int:
        return len(self.timestamps)

    def excursion(self, j: int) -> WalkPath:
        lo, hi = int(self.offsets[j]), int(self.offsets[j + 1])
        return WalkPath(self.exc_v[lo:hi].copy(), self.exc_s[lo:hi].copy())

    def items_in(self, a: float, b: float) -> np.ndarray:
        """Indices of items with timestamp in [a, b)."""
        lo = int(np.searchsorted(self.timestamps, a, side="left"))
        hi = int(np.searchsorted(self.timestamps, b, side="left"))
        return np.arange(lo, hi)

    def vertices_hit_between(self, a: float, b: float) -> np.ndarray:
        """Non-root vertices visited by trajectories with timestamp in [a, b)."""
        idx = self.items_in(a, b)
        if len(idx) == 0:
            return np.empty(0, dtype=np.int64)
        parts = [self.exc_v[int(self.offsets[j]): int(self.offsets[j + 1])]
                 for j in idx]
        verts = np.unique(np.concatenate(parts))
        roots = np.array(sorted(self.root_set))
        return np.setdiff1d(verts, roots, assume_unique=True)


def _poisson_draw(rng: RngStream, lam: float) -> int:
    """Knuth multiplication in chunks (stable for large rates)."""
    total = 0
    while lam > 500.0:
        total += _poisson_draw(rng, 500.0)
        lam -= 500.0
    limit = math.exp(-lam)
    prod = rng.random()
    count = 0
    while prod > limit:
        prod *= rng.random()
        count += 1
    return total + count


def _sorted_uniform(rng: RngStream, count: int, a: float, b: float) -> np.ndarray:
    ts = np.array([a + (b - a) * rng.random() for _ in range(count)])
    ts.sort()
    # duplicate timestamps are rejected at sampling (ties would need an
    # item-index rule; probability ~0 in double precision)
    while len(ts) > 1 and (np.diff(ts) == 0).any():
        dup = int(np.flatnonzero(np.diff(ts) == 0)[0]) + 1
        ts[dup] = a + (b - a) * rng.random()
        ts.sort()
    return ts


def _root_edge_tables(net: Network, roots):
    csr = net.to_csr()
    pos = []
    for r in roots:
        pos.extend(range(int(csr.indptr[r]), int(csr.indptr[r + 1])))
    pos = np.asarray(pos, dtype=np.int64)
    cum = np.cumsum(csr.cond[pos])
    return pos, cum


def _sample_excursions(net: Network, roots, count: int, rng: RngStream):
    csr = net.to_csr()
    is_root = np.zeros(net.n, dtype=np.uint8)
    for r in roots:
        is_root[r] = 1
    pos, cum = _root_edge_tables(net, roots)
    bufs_v = []
    bufs_s = []
    lengths = []
    cap = max(4 * net.n, 4096)
    outv = np.empty(cap, dtype=np.int32)
    outs = np.empty(cap, dtype=np.int32)
    for _ in range(count):
        length, done = K.excursion_kernel(csr.indptr, csr.indices, csr.cum,
                                          csr.rev, is_root, pos, cum,
                                          rng.state_array(), outv, outs, 0, 0)
        while not done:
            grown_v = np.empty(2 * outv.size, dtype=np.int32)
            grown_s = np.empty(2 * outs.size, dtype=np.int32)
            grown_v[:length] = outv[:length]
            grown_s[:length] = outs[:length]
            outv, outs = grown_v, grown_s
            length, done = K.excursion_kernel(csr.indptr, csr.indices, csr.cum,
                                              csr.rev, is_root, pos, cum,
                                              rng.state_array(), outv, outs,
                                              int(outv[length - 1]), length)
        bufs_v.append(outv[:length].copy())
        bufs_s.append(outs[:length].copy())
        lengths.append(length)
    return bufs_v, bufs_s, lengths


def sample_soup(net: Network, window: tuple, mode: str, rng: RngStream,
                v: Optional[int] = None, cover: bool = True,
                max_excursions: int = 1_000_000) -> TrajectorySoup:
    """Poisson soup of root excursions on [a, b].

    With ``cover=True`` the window is extended past b until every non-root
    vertex is visited by some trajectory with timestamp >= b, so that
    ``ab_forest(soup, t)`` is defined for every t in [a, b].
    """
    a, b = float(window[0]), float(window[1])
    if b < a:
        raise ValueError("window must have nonnegative length")
    if mode == "v-wired":
        if v is None:
            raise ValueError("v-wired mode needs v")
        roots = (v, net.sink)
    elif mode == "wired":
        roots = (net.sink,)
    else:
        raise ValueError(f"unknown soup mode {mode!r}")
    if net.sink is None:
        raise ValueError("interlacement soup needs a wired network")
    rate = sum(net.vertex_conductance(r) for r in roots)

    count = _poisson_draw(rng, rate * (b - a))
    ts = _sorted_uniform(rng, count, a, b)
    bufs_v, bufs_s, _ = _sample_excursions(net, roots, count, rng)
    all_ts = [ts]
    cover_b = b
    if cover:
        root_arr = np.array(sorted(roots))
        need = np.setdiff1d(np.arange(net.n), root_arr, assume_unique=True)
        covered_set = np.zeros(net.n, dtype=bool)
        total = count
        width = max(b - a, 1.0)
        while True:
            missing = need[~covered_set[need]]
            if len(missing) == 0:
                break
            if total > max_excursions:
                raise CoverageError(
                    f"coverage not reached within {max_excursions} excursions")
            c2 = _poisson_draw(rng, rate * width)
            ts2 = _sorted_uniform(rng, c2, cover_b, cover_b + width)
            v2, s2, _ = _sample_excursions(net, roots, c2, rng)
            for arr in v2:
                covered_set[arr] = True
            bufs_v.extend(v2)
            bufs_s.extend(s2)
            all_ts.append(ts2)
            cover_b += width
            total += c2
    timestamps = np.concatenate(all_ts) if all_ts else np.empty(0)
    offsets = np.zeros(len(bufs_v) + 1, dtype=np.int64)
    for j, arr in enumerate(bufs_v):
        offsets[j + 1] = offsets[j] + len(arr)
    exc_v = (np.concatenate(bufs_v).astype(np.int32)
             if bufs_v else np.empty(0, dtype=np.int32))
    exc_s = (np.concatenate(bufs_s).astype(np.int32)
             if bufs_s else np.empty(0, dtype=np.int32))

    # first-entry table, grouped by vertex, item-ascending (= ts-ascending)
    is_root = np.zeros(net.n, dtype=np.uint8)
    for r in roots:
        is_root[r] = 1
    stamp = np.full(net.n, -1, dtype=np.int64)
    cap = len(exc_v)
    fi = np.empty(cap, dtype=np.int64)
    fv = np.empty(cap, dtype=np.int64)
    fs = np.empty(cap, dtype=np.int64)
    cnt = K.first_entries_kernel(exc_v, exc_s, offsets, is_root, stamp,
                                 fi, fv, fs) if cap else 0
    fi, fv, fs = fi[:cnt], fv[:cnt], fs[:cnt]
    order = np.argsort(fv, kind="stable")
    fv_sorted = fv[order]
    fe_ptr = np.zeros(net.n + 1, dtype=np.int64)
    np.add.at(fe_ptr[1:], fv_sorted, 1)
    np.cumsum(fe_ptr, out=fe_ptr)
    nonroot = ~is_root.astype(bool)
    covered_flag = bool((np.diff(fe_ptr)[nonroot] > 0).all())

    return TrajectorySoup(net, mode, v, (a, b), cover_b, timestamps, offsets,
                          exc_v, exc_s, covered_flag, fe_ptr,
                          fi[order].astype(np.int32),
                          fs[order].astype(np.int32))


def ab_forest(soup: TrajectorySoup, t: float) -> OrientedForest:
    """First-entry forest at time t: each non-root vertex points back along
    the edge by which the earliest trajectory with timestamp >= t first
    entered it."""
    net = soup.net
    roots = soup.root_set
    parent = np.full(net.n, -1, dtype=np.int32)
    pslot = np.full(net.n, -1, dtype=np.int16)
    csr = net.to_csr()
    ts_of_item = soup.timestamps
    for u in range(net.n):
        if u in roots:
            continue
        lo, hi = int(soup.fe_ptr[u]), int(soup.fe_ptr[u + 1])
        items = soup.fe_item[lo:hi]
        j = int(np.searchsorted(ts_of_item[items], t, side="left"))
        if j >= hi - lo:
            raise CoverageError(
                f"vertex {u} is not covered by any trajectory at time >= {t}")
        slot = int(soup.fe_slot[lo + j])
        parent[u] = csr.indices[csr.indptr[u] + slot]
        pslot[u] = slot
    depth = _fill_depth(net, parent, roots)
    return OrientedForest(net, parent, pslot, depth, roots)


@dataclass
class PastDynamicsReport:
    applicable: bool
    equal: bool
    past_before: int
    past_after_component: int


def past_dynamics_check(soup: TrajectorySoup, v: int, s: float, t: float) -> PastDynamicsReport:
    """Pathwise check: when v is untouched on [s, t), the earlier past equals
    the component of v in the later past with the [s, t)-visited vertices
    removed."""
    if not s < t:
        if s == t:
            return PastDynamicsReport(True, True, -1, -1)
        raise ValueError("need s <= t")
    hit = set(int(x) for x in soup.vertices_hit_between(s, t))
    if v in hit:
        return PastDynamicsReport(False, False, -1, -1)
    f_s = ab_forest(soup, s)
    f_t = ab_forest(soup, t)
    past_s = set(int(x) for x in past_of(f_s, v))
    past_t = set(int(x) for x in past_of(f_t, v))
    # component of v in past_t restricted to unvisited vertices: the past is
    # the subtree under v, so walk child edges avoiding visited vertices
    cptr, cidx = f_t.children_csr()
    comp = {v}
    stack = [v]
    while stack:
        x = stack.pop()
        for e in range(int(cptr[x]), int(cptr[x + 1])):
            c = int(cidx[e])
            if c in hit or c in comp or c not in past_t:
                continue
            comp.add(c)
            stack.append(c)
    return PastDynamicsReport(True, past_s == comp, len(past_s), len(comp))


@dataclass
class PoissonCapacityReport:
    expected_rate: float
    observed_mean: float
    mean_sigma: float
    p_value: float
    soups: int

    @property
    def mean_ok(self) -> bool:
        return abs(self.observed_mean - self.expected_rate) <= 3 * self.mean_sigma


def capacity_poisson_check(net: Network, Kset, mode: str, window_len: float,
                           n_soups: int, rng: RngStream,
                           v: Optional[int] = None) -> PoissonCapacityReport:
    """The number of window trajectories hitting K against
    Poisson(window_len * Cap(K)) (or Cap_v in v-wired mode): chi-square
    p-value plus a 3-sigma check of the mean."""
    from scipy.stats import chisquare, poisson

    Kset = sorted(set(int(x) for x in Kset))
    if mode == "v-wired":
        cap = walkmod.capacity_v(net, v, Kset)
    else:
        cap = walkmod.capacity(net, Kset)
    lam = window_len * cap
    counts = np.zeros(n_soups, dtype=np.int64)
    for i in range(n_soups):
        soup = sample_soup(net, (0.0, window_len), mode, rng, v=v, cover=False)
        seen = set()
        for u in Kset:
            lo, hi = int(soup.fe_ptr[u]), int(soup.fe_ptr[u + 1])
            for j in soup.fe_item[lo:hi]:
                seen.add(int(j))
        counts[i] = len(seen)
    kmax = int(counts.max()) if n_soups else 0
    obs = np.bincount(counts, minlength=kmax + 1).astype(float)
    probs = poisson.pmf(np.arange(kmax + 1), lam)
    probs = np.append(probs, 1.0 - probs.sum())
    obs = np.append(obs, 0.0)
    exp = probs * n_soups
    # merge low-expectation tail bins for the chi-square validity rule
    keep_obs, keep_exp = [], []
    acc_o = acc_e = 0.0
    for o, e in zip(obs, exp):
        acc_o += o
        acc_e += e
        if acc_e >= 5.0:
            keep_obs.append(acc_o)
            keep_exp.append(acc_e)
            acc_o = acc_e = 0.0
    if acc_e > 0:
        if keep_exp:
            keep_obs[-1] += acc_o
            keep_exp[-1] += acc_e
        else:
            keep_obs.append(acc_o)
            keep_exp.append(acc_e)
    keep_exp = np.asarray(keep_exp) * (sum(keep_obs) / sum(keep_exp))
    stat, p = chisquare(keep_obs, keep_exp)
    if len(keep_obs) < 2:
        p = 1.0
    mean_sigma = math.sqrt(lam / n_soups)
    return PoissonCapacityReport(lam, float(counts.mean()), mean_sigma,
                                 float(p), n_soups)
