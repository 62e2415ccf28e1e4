"""Random-walk engine: weighted steps, loop erasure, heat kernels, Green
functions, capacities, and the bubble diagram.

Escape to infinity is everywhere operationalized as "reaches the wired
boundary first"; Monte Carlo estimators report (estimate, stderr, samples)
triples so callers can run box-doubling stability diagnostics.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import _kernels as K
from .network import Network
from .rng import RngStream


@dataclass
class WalkPath:
    """A walk recorded as vertices plus per-step edge slots (slot at the
    step's source vertex, so parallel edges stay distinguishable)."""

    vertices: np.ndarray
    slots: Optional[np.ndarray]
    stopped: bool = True

    def __len__(self) -> int:
        return len(self.vertices) - 1


@dataclass
class LoopDecomposition:
    erased_path: WalkPath
    ell: np.ndarray  # contributing times, ell[0] == 0

    def rho(self, n: int) -> int:
        """Number of times <= n contributing to the loop erasure."""
        return int(np.searchsorted(self.ell, n, side="right") - 1)

    def eta(self, n: int) -> int:
        """Largest contributing time <= n."""
        return int(self.ell[self.rho(n)])


@dataclass
class BubbleReport:
    partial_sums: np.ndarray  # s_N = sum_{n<=N} (n+1) p_n(v,v)
    alpha: float              # 4 (sup c / inf c) s_N at the final cutoff
    diverged: bool
    diagonal: np.ndarray = field(repr=False, default=None)


@dataclass
class MCResult:
    estimate: float
    stderr: float
    samples: int

    def within(self, target: float, nsigma: float = 4.0) -> bool:
        return abs(self.estimate - target) <= nsigma * self.stderr


# ---------------------------------------------------------------------------
# Walking
# ---------------------------------------------------------------------------

def run_walk(net: Network, start: int, stop, rng: RngStream,
             budget: int = 1_000_000) -> WalkPath:
    """Conductance-proportional walk from ``start`` truncated at a stop rule.

    ``stop`` is one of ``("hit_sink",)``, ``("hit_set", K)``,
    ``("first_revisit", K)`` or ``("budget", n)``.  The returned path records
    whether the stop fired before the budget ran out.
    """
    if net.is_sink(start):
        raise ValueError("walks must start off the boundary")
    kind = stop[0]
    mask = np.zeros(net.n, dtype=np.uint8)
    if kind == "hit_sink":
        if not net.sink_set:
            raise ValueError("network has no sink")
        for s in net.sink_set:
            mask[s] = 1
    elif kind in ("hit_set", "first_revisit"):
        for v in stop[1]:
            mask[v] = 1
    elif kind == "budget":
        budget = int(stop[1])
    else:
        raise ValueError(f"unknown stop rule {kind!r}")
    outv = np.empty(budget + 1, dtype=np.int64)
    outs = np.empty(budget, dtype=np.int64)
    P, aux, indptr, indices, cum = net.kernel_args()
    length, fired = K.walk_collect(P, aux, indptr, indices, cum,
                                   rng.state_array(), start, mask, budget,
                                   outv, outs)
    return WalkPath(outv[:length + 1].copy(), outs[:length].copy(),
                    stopped=bool(fired) or kind == "budget")


def ell_times(vertices: Sequence[int]) -> np.ndarray:
    """Times contributing to the loop erasure: ell_0 = 0 and
    ell_{k+1} = 1 + max{m : w_m = w_{ell_k}}."""
    last = {}
    for i, v in enumerate(vertices):
        last[v] = i
    L = len(vertices) - 1
    ell = [0]
    while ell[-1] < L:
        nxt = last[vertices[ell[-1]]] + 1
        if nxt > L:
            break
        ell.append(nxt)
    return np.asarray(ell, dtype=np.int64)


def loop_erase(path) -> LoopDecomposition:
    """Chronological loop erasure of a finite path (WalkPath or vertex list)."""
    if isinstance(path, WalkPath):
        vs = path.vertices
        slots = path.slots
    else:
        vs = np.asarray(path, dtype=np.int64)
        slots = None
    ell = ell_times(list(vs))
    le_v = vs[ell]
    le_s = None
    if slots is not None and len(ell) > 1:
        le_s = slots[ell[1:] - 1]
    elif slots is not None:
        le_s = slots[:0]
    return LoopDecomposition(WalkPath(np.asarray(le_v), le_s), ell)


# ---------------------------------------------------------------------------
# Heat kernels
# ---------------------------------------------------------------------------

def heat_kernel(net: Network, v: int, T: int,
                memory_budget: int = 2 * 1024**3) -> np.ndarray:
    """Distributions p_n(v, .) for n <= T by exact sparse vector iteration.

    The sink is absorbing (entering mass is dropped), so row sums are <= 1;
    on a torus they stay 1.  Refuses if (T+1) * n doubles exceed the budget.
    """
    need = (T + 1) * net.n * 8
    if need > memory_budget:
        raise MemoryError(
            f"heat kernel needs {need} bytes (> budget {memory_budget}); "
            f"lower T or raise memory_budget")
    csr = net.to_csr()
    cvert = np.array([net.vertex_conductance(u) for u in range(net.n)])
    absorb = np.zeros(net.n, dtype=np.uint8)
    for s in net.sink_set:
        absorb[s] = 1
    out = np.zeros((T + 1, net.n), dtype=np.float64)
    out[0, v] = 1.0
    x = out[0].copy()
    y = np.empty_like(x)
    for n in range(1, T + 1):
        K.push_matvec_kernel(csr.indptr, csr.indices, csr.cond, cvert,
                             absorb, x, y)
        out[n] = y
        x, y = y, x
    return out


def tree_return_probabilities(degree: int, N: int) -> np.ndarray:
    """Exact p_n(v,v), n <= N, on the infinite degree-regular tree via the
    lumped distance-from-start birth-death chain."""
    k = degree
    p = np.zeros(N + 1)
    p[0] = 1.0
    out = np.empty(N + 1)
    out[0] = 1.0
    for n in range(1, N + 1):
        q = np.zeros_like(p)
        q[1:] += p[:-1] * np.where(np.arange(N)[:] == 0, 1.0, (k - 1) / k)
        q[:-1] += p[1:] / k
        p = q
        out[n] = p[0]
    return out


def torus_return_probabilities(dim: int, side: int, N: int) -> np.ndarray:
    """Exact p_n(0,0), n <= N, on the Z^dim torus of the given side.

    Steps pick an axis uniformly; conditional on the axis split (binomial),
    the axes are independent circle walks, so the diagonal kernel is a
    d-fold binomial convolution of the one-dimensional return sequence."""
    from scipy.stats import binom

    S = side
    # 1-D circle return probabilities by exact iteration
    p = np.zeros(S)
    p[0] = 1.0
    r = np.empty(N + 1)
    r[0] = 1.0
    for n in range(1, N + 1):
        p = 0.5 * (np.roll(p, 1) + np.roll(p, -1))
        r[n] = p[0]
    g = r.copy()
    for j in range(2, dim + 1):
        gnew = np.empty(N + 1)
        gnew[0] = 1.0
        ks = np.arange(N + 1)
        for n in range(1, N + 1):
            w = binom.pmf(ks[: n + 1], n, 1.0 / j)
            gnew[n] = float(np.dot(w, r[: n + 1] * g[n::-1]))
        g = gnew
    return g


def diagonal_return_probabilities(net: Network, v: int, N: int) -> np.ndarray:
    """p_n(v,v) for n <= N at a bulk vertex, choosing the cheapest exact
    route: lumped radial chain on trees, factorized kernel on unit tori,
    dense iteration otherwise."""
    if net.mode == "tree" and net._csr is None:
        # interior kernel of the infinite tree via the lumped radial chain;
        # the chain never reaches the wired leaves, so this is the bulk
        # diagonal the ball approximates, at every cutoff
        return tree_return_probabilities(net.degree, N)
    if net.mode == "torus" and net._csr is None:
        return torus_return_probabilities(net.dim, net.side, N)
    kern = heat_kernel(net, v, N)
    return kern[:, v].copy()


def _tree_depth_py(net: Network, v: int) -> int:
    from .network import tree_depth
    return tree_depth(net.degree, v)


def bubble_diagram(net: Network, v: int, cutoff: int) -> BubbleReport:
    """Partial sums s_N of (n+1) p_n(v,v) and a dyadic-interval divergence
    test: converged iff s_N - s_{N/2} < 0.8 (s_{N/2} - s_{N/4}).

    The threshold separates log divergence (interval ratio near 1, as on Z^4)
    from convergent power tails: the slowest convergent case, Z^5, has
    partial-sum tails of order N^{-1/2} and interval ratio 2^{-1/2} ~ 0.707,
    so the cut sits between 0.71 and the divergent ratios.
    """
    diag = diagonal_return_probabilities(net, v, cutoff)
    terms = (np.arange(cutoff + 1) + 1.0) * diag
    partial = np.cumsum(terms)
    sN = partial[cutoff]
    sH = partial[cutoff // 2]
    sQ = partial[cutoff // 4]
    diverged = not (sN - sH < 0.8 * (sH - sQ))
    lo, hi = net.conductance_bounds()
    alpha = 4.0 * (hi / lo) * sN
    return BubbleReport(partial, float(alpha), bool(diverged), diag)


# ---------------------------------------------------------------------------
# Green functions and capacities (exact linear algebra)
# ---------------------------------------------------------------------------

def _reduced_laplacian(net: Network, keep: np.ndarray) -> sp.csr_matrix:
    """Conductance Laplacian restricted to ``keep`` rows/columns; diagonal
    carries the full vertex conductance (edges leaving ``keep`` ground it)."""
    csr = net.to_csr()
    pos = -np.ones(net.n, dtype=np.int64)
    pos[keep] = np.arange(len(keep))
    rows, cols, vals = [], [], []
    for i, v in enumerate(keep):
        rows.append(i)
        cols.append(i)
        vals.append(net.vertex_conductance(int(v)))
        for e in range(int(csr.indptr[v]), int(csr.indptr[v + 1])):
            w = int(csr.indices[e])
            if pos[w] >= 0:
                rows.append(i)
                cols.append(int(pos[w]))
                vals.append(-float(csr.cond[e]))
    L = sp.coo_matrix((vals, (rows, cols)), shape=(len(keep), len(keep)))
    return L.tocsr()


def _solve_spd(L: sp.csr_matrix, b: np.ndarray, rtol: float = 1e-12) -> np.ndarray:
    if L.shape[0] <= 20_000:
        x = spla.spsolve(L.tocsc(), b)
    else:
        M = sp.diags(1.0 / L.diagonal())
        x, info = spla.cg(L, b, rtol=rtol, maxiter=20 * L.shape[0], M=M)
        if info != 0:
            res = np.linalg.norm(L @ x - b) / max(np.linalg.norm(b), 1e-300)
            raise RuntimeError(f"linear solve did not converge (residual {res:.2e})")
    res = np.linalg.norm(L @ x - b) / max(np.linalg.norm(b), 1e-300)
    if res > 1e-10:
        raise RuntimeError(f"linear solve residual {res:.2e} exceeds 1e-10")
    return x


def green_density(net: Network, v: int) -> np.ndarray:
    """g(v, .) with g = (reduced Laplacian)^-1: the conductance-normalized
    Green kernel (g(v,u) = G(v,u)/c(u)).  Length-n array, zero at the sink."""
    if not net.sink_set:
        raise ValueError("the Green function needs an absorbing boundary")
    keep = np.array([u for u in range(net.n) if not net.is_sink(u)],
                    dtype=np.int64)
    L = _reduced_laplacian(net, keep)
    b = np.zeros(len(keep))
    b[np.searchsorted(keep, v)] = 1.0
    x = _solve_spd(L, b)
    out = np.zeros(net.n)
    out[keep] = x
    return out


def green_function(net: Network, v: int) -> np.ndarray:
    """Expected visit counts G(v, .) of the sink-absorbed walk from v."""
    g = green_density(net, v)
    out = np.zeros(net.n)
    for u in range(net.n):
        if not net.is_sink(u):
            out[u] = g[u] * net.vertex_conductance(u)
    return out


def _escape_probabilities(net: Network, success: set, failure: set) -> np.ndarray:
    """h(x) = P_x(hit ``success`` before ``failure``) for all vertices
    (h = 1 on success, 0 on failure, harmonic elsewhere)."""
    if success & failure:
        raise ValueError("success and failure sets overlap")
    csr = net.to_csr()
    keep = np.array([u for u in range(net.n)
                     if u not in success and u not in failure], dtype=np.int64)
    h = np.zeros(net.n)
    for s in success:
        h[s] = 1.0
    if len(keep):
        L = _reduced_laplacian(net, keep)
        b = np.zeros(len(keep))
        for i, u in enumerate(keep):
            for e in range(int(csr.indptr[u]), int(csr.indptr[u + 1])):
                w = int(csr.indices[e])
                if w in success:
                    b[i] += float(csr.cond[e])
        x = _solve_spd(L, b)
        h[keep] = x
    return h


def capacity(net: Network, Kset: Iterable[int]) -> float:
    """Cap(K) = sum_{v in K} c(v) P_v(hits the boundary before returning to K),
    via one exact solve of the escape problem."""
    Kset = set(int(v) for v in Kset)
    if not Kset:
        raise ValueError("K must be nonempty")
    if Kset & net.sink_set:
        raise ValueError("K must be disjoint from the sink")
    h = _escape_probabilities(net, set(net.sink_set), Kset)
    csr = net.to_csr()
    total = 0.0
    for v in Kset:
        for e in range(int(csr.indptr[v]), int(csr.indptr[v + 1])):
            total += float(csr.cond[e]) * h[int(csr.indices[e])]
    return total


def capacity_v(net: Network, v: int, Kset: Iterable[int]) -> float:
    """Effective conductance from K to {boundary, v}:

    Cap_v(K) = sum_{u in K} c(u) P_u(tau+_K > tau_v)
               + c(v) 1(v in K) [1 + P_v(tau+_K = infinity)],

    with "tau+_K > tau_v" holding when both escape (reach the boundary)."""
    Kset = set(int(u) for u in Kset)
    if not Kset:
        raise ValueError("K must be nonempty")
    if Kset & net.sink_set:
        raise ValueError("K must be disjoint from the sink")
    csr = net.to_csr()
    success = set(net.sink_set)
    if v not in Kset:
        success.add(v)
    h = _escape_probabilities(net, success, Kset)
    hstar = h.copy()
    for u in Kset:
        hstar[u] = 0.0
    for s in success:
        hstar[s] = 1.0
    total = 0.0
    for u in Kset - {v}:
        acc = 0.0
        for e in range(int(csr.indptr[u]), int(csr.indptr[u + 1])):
            acc += float(csr.cond[e]) * hstar[int(csr.indices[e])]
        total += acc
    if v in Kset:
        h2 = _escape_probabilities(net, set(net.sink_set), Kset)
        esc = 0.0
        for e in range(int(csr.indptr[v]), int(csr.indptr[v + 1])):
            w = int(csr.indices[e])
            val = 1.0 if net.is_sink(w) else (0.0 if w in Kset else h2[w])
            esc += float(csr.cond[e]) * val
        total += net.vertex_conductance(v) + esc
    return total


def cap_k(net: Network, A: Iterable[int], B: Iterable[int], k,
          rng: RngStream, samples: int = 2000,
          budget: int = 1_000_000) -> MCResult:
    """Monte Carlo k-truncated capacity sum_{v in A} c(v) P_v(tau+_B >= k).

    ``k=None`` means infinity (absorption at the boundary counts as >= k).
    A must be contained in B."""
    A = sorted(set(int(x) for x in A))
    Bset = set(int(x) for x in B)
    if not A:
        raise ValueError("A must be nonempty")
    if not set(A) <= Bset:
        raise ValueError("A must be a subset of B")
    mask = np.zeros(net.n, dtype=np.uint8)
    for b in Bset:
        mask[b] = 1
    P, aux, indptr, indices, cum = net.kernel_args()
    est = 0.0
    var = 0.0
    cap_steps = budget if k is None else int(k)
    outv = np.empty(max(cap_steps, 1) + 1, dtype=np.int64)
    outs = np.empty(max(cap_steps, 1), dtype=np.int64)
    m2 = mask.copy()
    for s in net.sink_set:
        m2[s] = 1
    for v in A:
        cv = net.vertex_conductance(v)
        if k is not None and k <= 0:
            est += cv  # tau+ >= 0 always
            continue
        hits = 0
        for _ in range(samples):
            if k is None:
                # walk until hitting B or the sink
                length, fired = K.walk_collect(P, aux, indptr, indices, cum,
                                               rng.state_array(), v, m2,
                                               budget, outv, outs)
                end = int(outv[length])
                if not fired or net.is_sink(end):
                    hits += 1
            else:
                length, fired = K.walk_collect(P, aux, indptr, indices, cum,
                                               rng.state_array(), v, mask,
                                               cap_steps, outv, outs)
                end = int(outv[length])
                if not fired or net.is_sink(end) or length >= k:
                    hits += 1
        p = hits / samples
        est += cv * p
        var += (cv ** 2) * p * (1.0 - p) / samples
    return MCResult(est, float(np.sqrt(var)), samples * len(A))


def i_functional(net: Network, A: Iterable[int]) -> float:
    """I(A) = sum_{u,v in A} c(u) c(v) G(u,v) via |A| exact Green solves."""
    A = sorted(set(int(x) for x in A))
    if not A:
        raise ValueError("A must be nonempty")
    total = 0.0
    for u in A:
        G = green_function(net, u)
        cu = net.vertex_conductance(u)
        for v in A:
            total += cu * net.vertex_conductance(v) * G[v]
    return total


def total_conductance(net: Network, A: Iterable[int]) -> float:
    return sum(net.vertex_conductance(int(v)) for v in A)


# ---------------------------------------------------------------------------
# Monte Carlo estimators on virtual nets
# ---------------------------------------------------------------------------

def _record_walk_to_sink(net: Network, start: int, rng: RngStream,
                         buf: np.ndarray) -> np.ndarray:
    P, aux, indptr, indices, cum = net.kernel_args()
    length = K.walk_to_sink_record(P, aux, indptr, indices, cum,
                                   rng.state_array(), start, buf)
    if length < 0:
        raise RuntimeError("walk budget exhausted before absorption")
    return buf[:length + 1]


def estimate_q(net: Network, v: int, rng: RngStream, samples: int = 2000,
               budget: int = 4_000_000) -> MCResult:
    """Fraction of independent walk pairs from v, run to the boundary, that
    neither return to v nor intersect each other after time zero."""
    buf1 = np.empty(budget, dtype=np.int64)
    buf2 = np.empty(budget, dtype=np.int64)
    good = 0
    for _ in range(samples):
        p1 = _record_walk_to_sink(net, v, rng, buf1)
        p2 = _record_walk_to_sink(net, v, rng, buf2)
        a = p1[1:-1]  # positive times, excluding the absorbing boundary
        b = p2[1:-1]
        if len(a) and (a == v).any():
            continue
        if len(b) and (b == v).any():
            continue
        if len(a) and len(b):
            if np.intersect1d(a, b).size:
                continue
        good += 1
    p = good / samples
    se = float(np.sqrt(p * (1.0 - p) / samples))
    return MCResult(p, se, samples)


def estimate_L_r(net: Network, v: int, r: int, rng: RngStream,
                 samples: int = 400, budget: int = 8_000_000) -> MCResult:
    """Mean of the last time the boundary-absorbed walk from v occupies
    B(v, r) (diffusive geometries give L(r) of order r^2)."""
    if net.mode == "box" and r > net.side // 4:
        raise ValueError("r must be at most side/4")
    P, aux, indptr, indices, cum = net.kernel_args()
    vals = np.empty(samples)
    for i in range(samples):
        last, steps = K.last_visit_kernel(P, aux, indptr, indices, cum,
                                          rng.state_array(), v, r, budget)
        if steps < 0:
            raise RuntimeError("walk budget exhausted before absorption")
        vals[i] = last
    return MCResult(float(vals.mean()),
                    float(vals.std(ddof=1) / np.sqrt(samples)), samples)


def capacity_mc(net: Network, Kset, rng: RngStream,
                samples: int = 2000) -> MCResult:
    """Monte Carlo version of :func:`capacity` (escape frequencies)."""
    Kset = sorted(set(int(x) for x in Kset))
    mask = np.zeros(net.n, dtype=np.uint8)
    for x in Kset:
        mask[x] = 1
    for s in net.sink_set:
        mask[s] = 1
    P, aux, indptr, indices, cum = net.kernel_args()
    budget = 4_000_000
    outv = np.empty(budget + 1, dtype=np.int64)
    outs = np.empty(budget, dtype=np.int64)
    est = 0.0
    var = 0.0
    for v in Kset:
        cv = net.vertex_conductance(v)
        esc = 0
        for _ in range(samples):
            length, fired = K.walk_collect(P, aux, indptr, indices, cum,
                                           rng.state_array(), v, mask,
                                           budget, outv, outs)
            if fired and net.is_sink(int(outv[length])):
                esc += 1
        p = esc / samples
        est += cv * p
        var += cv * cv * p * (1 - p) / samples
    return MCResult(est, float(np.sqrt(var)), samples * len(Kset))
