"""Brute-force ground truth at tiny scale.

Everything here favours transparency over speed: O(N^2) connectivity,
nested adaptive Simpson quadrature with two-resolution (Richardson)
acceptance, and closed forms where they exist.

Quadrature layout.  In d=1 the ordered sector turns connectivity into a
product domain: sorting the particles, a configuration is R-connected
exactly when all consecutive gaps are <= R, and the pair energy depends
only on the gaps.  Cluster and box partition integrals therefore reduce to
smooth integrals over gap vectors (with an (L - sum g)+ placement factor
for boxes), which adaptive Simpson resolves to 1e-6 and beyond.  The
generic representation with an explicit connectivity indicator per node is
kept as well (it is the only option in d=2) and cross-checked against the
gap form in the tests.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import product

import numpy as np

from .cluster_geometry import ClusterDecomposition, Configuration
from .common import CapabilityError, DomainError, ParameterError
from .potential import PotentialSpec, pair_energy

__all__ = [
    "brute_force_decompose",
    "quadrature_z_cluster",
    "quadrature_z_cluster_box",
    "quadrature_constrained_partition",
    "quadrature_partition_1d",
    "check_supermultiplicativity",
    "geometric_entropy",
    "gibbs_pair_link_probability_1d",
    "QuadratureRefusal",
]

_REFUSE_REL = 1e-6


class QuadratureRefusal(CapabilityError):
    """Successive refinements disagreed; no value is reported."""


def brute_force_decompose(config: Configuration, R: float) -> ClusterDecomposition:
    """Reference semantics: full pairwise adjacency plus BFS."""
    if config.n > 2000:
        raise CapabilityError("brute force decomposition capped at N=2000")
    pos = config.positions
    n = config.n
    if n == 0:
        return ClusterDecomposition(R, np.empty(0, dtype=np.int64), ())
    diff = pos[:, None, :] - pos[None, :, :]
    adj = (diff * diff).sum(axis=-1) <= R * R
    labels = np.full(n, -1, dtype=np.int64)
    sizes = []
    for start in range(n):
        if labels[start] >= 0:
            continue
        lab = len(sizes)
        frontier = [start]
        labels[start] = lab
        count = 0
        while frontier:
            i = frontier.pop()
            count += 1
            for j in np.nonzero(adj[i])[0]:
                if labels[j] < 0:
                    labels[j] = lab
                    frontier.append(int(j))
        sizes.append(count)
    return ClusterDecomposition(R, labels, tuple(sizes))


# ---------------------------------------------------------------------------
# adaptive Simpson engine
# ---------------------------------------------------------------------------


def adaptive_simpson(f_vec, lo: float, hi: float, breakpoints=(), rel_tol: float = 1e-8,
                     max_depth: int = 48, max_intervals: int = 60000) -> tuple[float, float]:
    """Integrate a nonnegative vectorized integrand over [lo, hi].

    The interval is pre-split at the supplied breakpoints (kinks or
    discontinuity loci), then refined by batched adaptive Simpson with a
    length-proportional error budget.  Returns (value, error estimate).
    """
    if hi <= lo:
        return 0.0, 0.0
    pts = [lo] + sorted({float(x) for x in breakpoints if lo < x < hi}) + [hi]
    a = np.asarray(pts[:-1])
    b = np.asarray(pts[1:])
    m = 0.5 * (a + b)
    fa, fb, fm = f_vec(a), f_vec(b), f_vec(m)
    S = (b - a) / 6.0 * (fa + 4.0 * fm + fb)
    total_len = hi - lo
    depth = np.zeros(len(a), dtype=np.int32)
    val = 0.0
    err = 0.0
    while len(a):
        lm = 0.5 * (a + m)
        rm = 0.5 * (m + b)
        flm, frm = f_vec(lm), f_vec(rm)
        Sl = (m - a) / 6.0 * (fa + 4.0 * flm + fm)
        Sr = (b - m) / 6.0 * (fm + 4.0 * frm + fb)
        S2 = Sl + Sr
        e = np.abs(S2 - S) / 15.0
        scale = abs(val + float(np.sum(S2)))
        budget = rel_tol * scale * (b - a) / total_len + 1e-300
        done = (e <= budget) | (depth >= max_depth)
        if len(a) > max_intervals:
            done = np.ones_like(done)
        val += float(np.sum(S2[done] + (S2[done] - S[done]) / 15.0))
        err += float(np.sum(e[done]))
        keep = ~done
        a, mid, b = a[keep], m[keep], b[keep]
        fa_k, fm_k, fb_k = fa[keep], fm[keep], fb[keep]
        lm_k, rm_k = lm[keep], rm[keep]
        flm_k, frm_k = flm[keep], frm[keep]
        Sl_k, Sr_k = Sl[keep], Sr[keep]
        d_k = depth[keep] + 1
        a = np.concatenate([a, mid])
        b = np.concatenate([mid, b])
        m = np.concatenate([lm_k, rm_k])
        fa = np.concatenate([fa_k, fm_k])
        fb = np.concatenate([fm_k, fb_k])
        fm = np.concatenate([flm_k, frm_k])
        S = np.concatenate([Sl_k, Sr_k])
        depth = np.concatenate([d_k, d_k])
    return val, err


def _nested(levels, rel_tol: float) -> tuple[float, float]:
    """Recursively integrate; ``levels[i]`` maps the fixed outer coordinates to
    (lo, hi, breakpoints) and the last level also provides the integrand."""

    n = len(levels)

    def go(i: int, fixed: tuple) -> float:
        lo, hi, brk = levels[i].domain(fixed)
        if i == n - 1:
            f = lambda xs: levels[i].integrand(fixed, xs)
        else:
            f = lambda xs: np.array([go(i + 1, fixed + (float(x),)) for x in xs])
        v, _ = adaptive_simpson(f, lo, hi, brk, rel_tol)
        return v

    v = go(0, ())
    return v, 0.0


def _two_resolution(run, resolution: float) -> tuple[float, float]:
    """Run at the requested and an 8x tighter tolerance; refuse on mismatch."""
    coarse = run(resolution)
    fine = run(resolution / 8.0)
    scale = max(abs(fine), abs(coarse), 1e-300)
    rel = abs(fine - coarse) / scale
    if rel > _REFUSE_REL:
        raise QuadratureRefusal(
            f"refinements disagree by {rel:.3e} relative (> {_REFUSE_REL:.0e})")
    return fine, rel * scale


# ---------------------------------------------------------------------------
# d=1 gap-representation integrals
# ---------------------------------------------------------------------------


def _gap_energy(spec: PotentialSpec, gaps: list, axis: np.ndarray, axis_index: int):
    """Total pair energy of sorted 1-d particles from consecutive gaps, where
    gap ``axis_index`` runs over the vector ``axis``; returns array over axis.

    Pair (i, j), i<j, sits at distance gap_i + ... + gap_{j-1}.  Hard-core
    overlaps give +inf, which the caller turns into exp(-beta inf) = 0.
    """
    k = len(gaps) + 2  # particles; gaps has the axis slot omitted
    full = gaps[:axis_index] + [None] + gaps[axis_index:]
    total = np.zeros_like(axis)
    for i in range(k - 1):
        for j in range(i, k - 1):
            seg = full[i : j + 1]
            const = sum(g for g in seg if g is not None)
            if any(g is None for g in seg):
                r = const + axis
            else:
                r = np.full_like(axis, const)
            total = total + pair_energy(spec, np.maximum(r, 1e-300))
    return total


class _GapLevel:
    """One gap coordinate of a d=1 ordered-sector integral."""

    def __init__(self, spec, beta, index, n_gaps, lo, hi, box_len=None, last=False, radii=()):
        self.spec, self.beta, self.index, self.n_gaps = spec, beta, index, n_gaps
        self.lo, self.hi, self.box_len, self.last = lo, hi, box_len, last
        self.radii = radii

    def domain(self, fixed):
        brk = set()
        # kinks of v along any run sum ending at this gap
        prefix = 0.0
        for g in reversed(fixed):
            for c in self.radii:
                brk.add(c - prefix)
            prefix += g
        for c in self.radii:
            brk.add(c - prefix)
        hi = self.hi
        if self.box_len is not None:
            room = self.box_len - sum(fixed)
            if room <= self.lo:
                return 0.0, 0.0, ()
            brk.add(room)
            hi = min(hi, room) if self.hi < math.inf else room
        return self.lo, hi, brk

    def integrand(self, fixed, xs):
        u = _gap_energy(self.spec, list(fixed), xs, self.index)
        w = np.exp(-self.beta * u)
        if self.box_len is not None:
            w = w * np.clip(self.box_len - sum(fixed) - xs, 0.0, None)
        return w


def _gap_levels(spec, beta, bounds, box_len):
    radii = (spec.r_hc, spec.b - spec.taper_width, spec.b)
    n = len(bounds)
    return [
        _GapLevel(spec, beta, i, n, lo, hi, box_len=box_len, last=(i == n - 1), radii=radii)
        for i, (lo, hi) in enumerate(bounds)
    ]


# ---------------------------------------------------------------------------
# cluster partition functions
# ---------------------------------------------------------------------------


def _z_cluster_free_1d(spec, k, beta, R, rel_tol):
    # ordered sector: Z_k = integral over gaps in [0, R]^(k-1)
    levels = _gap_levels(spec, beta, [(0.0, R)] * (k - 1), box_len=None)
    v, _ = _nested(levels, rel_tol)
    return v


def _connect_indicator(fixed_pts: np.ndarray, nodes: np.ndarray, R: float) -> np.ndarray:
    """For each candidate last point, is {fixed} + {candidate} R-connected?

    Uses the brute-force decomposition of the fixed subset: the whole graph
    is connected exactly when the candidate links every fixed component.
    """
    n_fixed = fixed_pts.shape[0]
    if n_fixed == 0:
        return np.ones(nodes.shape[0], dtype=bool)
    span = float(np.max(np.abs(fixed_pts))) + float(np.max(np.abs(nodes))) + 1.0
    cfg = Configuration(dim=fixed_pts.shape[1], box_side=2 * span + 1,
                        positions=fixed_pts + span)
    labels = brute_force_decompose(cfg, R).labels
    ncomp = labels.max() + 1
    d2 = ((nodes[:, None, :] - fixed_pts[None, :, :]) ** 2).sum(axis=-1)
    within = d2 <= R * R
    ok = np.ones(nodes.shape[0], dtype=bool)
    for c in range(ncomp):
        ok &= within[:, labels == c].any(axis=1)
    return ok


class _Level:
    """One scalar coordinate: a (lo, hi, breakpoints) provider plus, for the
    innermost coordinate, the vectorized integrand."""

    def __init__(self, domain, integrand=None):
        self.domain = domain
        self.integrand = integrand


def _pair_u(spec, pts: np.ndarray) -> float:
    if pts.shape[0] < 2:
        return 0.0
    iu = np.triu_indices(pts.shape[0], k=1)
    dd = np.sqrt(((pts[:, None, :] - pts[None, :, :]) ** 2).sum(axis=-1))[iu]
    return float(np.sum(pair_energy(spec, np.maximum(dd, 1e-300))))


def _last_particle_weight(spec, beta, R, pts, cand):
    """exp(-beta U) * connectivity for the full config pts + one candidate row."""
    u = np.full(cand.shape[0], _pair_u(spec, pts))
    for p in pts:
        r = np.sqrt(((cand - p) ** 2).sum(axis=1))
        u = u + pair_energy(spec, np.maximum(r, 1e-300))
    w = np.exp(-beta * u)
    w[~_connect_indicator(pts, cand, R)] = 0.0
    return w


def _z_cluster_direct(spec, k, beta, R, d, rel_tol):
    """Generic representation: relative coordinates, indicator per node."""
    radii = (spec.r_hc, spec.b - spec.taper_width, spec.b, R)
    span = (k - 1) * R

    def line_breaks(centers):
        out = set()
        for c in centers:
            for rad in radii:
                out.add(c - rad)
                out.add(c + rad)
        return out

    if d == 1:
        if k == 1:
            return 1.0

        def domain(i):
            def dom(fixed):
                lo = 0.0 if i == 0 else -span  # x2 >= 0 by reflection symmetry
                return lo, span, line_breaks([0.0, *fixed])

            return dom

        def inner(fixed, xs):
            pts = np.array([[0.0], *[[v] for v in fixed]])
            return _last_particle_weight(spec, beta, R, pts, xs[:, None])

        levels = [_Level(domain(i)) for i in range(k - 1)]
        levels[-1].integrand = inner
        v, _ = _nested(levels, rel_tol)
        return 2.0 * v / math.factorial(k)

    if d == 2 and k == 2:

        def run_radial(tol):
            f = lambda r: r * np.exp(-beta * pair_energy(spec, np.maximum(r, 1e-300)))
            v, _ = adaptive_simpson(f, 0.0, R, radii, tol)
            return v

        return math.pi * run_radial(rel_tol)

    if d == 2 and k == 3:
        # particle 2 on the positive axis (rotation symmetry: 2 pi r dr),
        # particle 3 in the upper half plane (reflection: factor 2)
        def dom_r(fixed):
            return 0.0, 2 * R, set(radii)

        def dom_x(fixed):
            (r,) = fixed
            return -2 * R, r + 2 * R, line_breaks([0.0, r])

        def dom_y(fixed):
            r, x = fixed
            brk = set()
            for cx in (0.0, r):
                for rad in radii:
                    h2 = rad * rad - (x - cx) ** 2
                    if h2 >= 0:
                        brk.add(math.sqrt(h2))
            return 0.0, 2 * R, brk

        def inner(fixed, ys):
            r, x = fixed
            pts = np.array([[0.0, 0.0], [r, 0.0]])
            cand = np.column_stack([np.full_like(ys, x), ys])
            return r * _last_particle_weight(spec, beta, R, pts, cand)

        levels = [_Level(dom_r), _Level(dom_x), _Level(dom_y, inner)]
        v, _ = _nested(levels, rel_tol)
        return 2.0 * math.pi * 2.0 * v / math.factorial(3)

    raise CapabilityError(f"direct quadrature unsupported for d={d}, k={k}")


def quadrature_z_cluster(spec: PotentialSpec, k: int, beta: float, d: int,
                         resolution: float = 1e-7, R: float | None = None,
                         representation: str = "auto") -> tuple[float, float]:
    """Unconstrained k-cluster configuration integral with two-resolution check.

    Supported: (d=1, k<=4) and (d=2, k<=3).  Returns (value, error estimate)
    and raises QuadratureRefusal when refinements disagree beyond 1e-6.
    """
    if beta <= 0:
        raise ParameterError("beta must be positive")
    if R is None:
        R = 1.1 * spec.b
    if R <= spec.b:
        raise ParameterError("connectivity radius R must exceed the support b")
    if not ((d == 1 and 1 <= k <= 4) or (d == 2 and 1 <= k <= 3)):
        raise CapabilityError(f"quadrature limited to d=1,k<=4 or d=2,k<=3 (got d={d}, k={k})")
    if k == 1:
        return 1.0, 0.0
    if representation == "auto":
        representation = "gaps" if d == 1 else "direct"
    if representation == "gaps":
        if d != 1:
            raise CapabilityError("gap representation exists only in d=1")
        run = lambda tol: _z_cluster_free_1d(spec, k, beta, R, tol)
    elif representation == "direct":
        run = lambda tol: _z_cluster_direct(spec, k, beta, R, d, tol)
    else:
        raise ParameterError(f"unknown representation {representation!r}")
    return _two_resolution(run, resolution)


def quadrature_z_cluster_box(spec: PotentialSpec, k: int, beta: float, a: float,
                             R: float, resolution: float = 1e-7) -> tuple[float, float]:
    """Volume-constrained cluster integral in [0, a]^1 with the 1/a factor.

    d=1 only; ordered sector with consecutive gaps <= R and an (a - sum g)+
    placement factor for the leftmost particle.
    """
    if k > 4:
        raise CapabilityError("box quadrature capped at k=4")
    if a <= 0:
        raise ParameterError("box side a must be positive")
    if k == 1:
        return 1.0, 0.0

    def run(tol):
        levels = _gap_levels(spec, beta, [(0.0, R)] * (k - 1), box_len=a)
        v, _ = _nested(levels, tol)
        return v / a

    return _two_resolution(run, resolution)


# ---------------------------------------------------------------------------
# box partition functions (d=1)
# ---------------------------------------------------------------------------


def _pattern_sizes(pattern: tuple[int, ...]) -> list[int]:
    """Cluster sizes of the ordered configuration with link pattern s_i = 1{gap_i <= R}."""
    sizes = []
    run = 1
    for s in pattern:
        if s:
            run += 1
        else:
            sizes.append(run)
            run = 1
    sizes.append(run)
    return sizes


def quadrature_partition_1d(spec: PotentialSpec, N: int, L: float, beta: float,
                            resolution: float = 1e-7) -> tuple[float, float]:
    """Canonical partition function Z over [0, L] for N <= 4 particles."""
    if N > 4:
        raise CapabilityError("partition quadrature capped at N=4")
    if N < 1:
        raise ParameterError("N must be >= 1")
    if N == 1:
        return L, 0.0

    def run(tol):
        levels = _gap_levels(spec, beta, [(0.0, L)] * (N - 1), box_len=L)
        v, _ = _nested(levels, tol)
        return v

    return _two_resolution(run, resolution)


def quadrature_constrained_partition(spec: PotentialSpec, N: int, box_side: float,
                                     counts, beta: float, R: float,
                                     resolution: float = 1e-7) -> tuple[float, float]:
    """Partition function with the numbers of k-clusters fixed for k <= j.

    ``counts`` is (N_1, ..., N_j).  Cluster sizes above j are unconstrained.
    Exact zero when sum k N_k > N.  d=1 only: the ordered sector decomposes
    into link patterns (gap <= R or > R), each a smooth product-domain
    integral; the decomposition indicator is what selects the patterns.
    """
    if N > 4:
        raise CapabilityError("constrained partition quadrature capped at N=4")
    counts = tuple(int(c) for c in counts)
    j = len(counts)
    if sum((ki + 1) * c for ki, c in enumerate(counts)) > N:
        return 0.0, 0.0
    if N == 1:
        want_one = counts[0] if j >= 1 else None
        if want_one is None or want_one == 1:
            return box_side, 0.0
        return 0.0, 0.0
    if R <= spec.b:
        raise ParameterError("connectivity radius R must exceed the support b")

    matching = []
    for pattern in product((0, 1), repeat=N - 1):
        sizes = _pattern_sizes(pattern)
        ok = all(sizes.count(kk) == counts[kk - 1] for kk in range(1, j + 1))
        if ok:
            matching.append(pattern)
    if not matching:
        return 0.0, 0.0

    def run(tol):
        total = 0.0
        for pattern in matching:
            bounds = [(0.0, R) if s else (R, box_side) for s in pattern]
            if any(lo >= box_side for lo, _ in bounds):
                continue
            levels = _gap_levels(spec, beta, bounds, box_len=box_side)
            v, _ = _nested(levels, tol)
            total += v
        return total

    return _two_resolution(run, resolution)


@dataclass(frozen=True)
class SupermultReport:
    joint: float
    joint_err: float
    split: float
    split_err: float

    @property
    def margin(self) -> float:
        return self.joint - self.split

    @property
    def holds(self) -> bool:
        return self.joint >= self.split - (self.joint_err + self.split_err)


def check_supermultiplicativity(spec: PotentialSpec, N1: int, N2: int,
                                box1: tuple[float, float], box2: tuple[float, float],
                                ambient: tuple[float, float], beta: float,
                                resolution: float = 1e-7) -> SupermultReport:
    """Verify Z_ambient(N1+N2) >= Z_box1(N1) * Z_box2(N2) by quadrature.

    The two sub-boxes must be disjoint, lie inside the ambient box and keep
    a mutual distance larger than the interaction range b.
    """
    if N1 + N2 > 4:
        raise CapabilityError("supermultiplicativity oracle capped at N1+N2=4")
    (a1, b1), (a2, b2) = sorted([tuple(box1), tuple(box2)])
    lo, hi = ambient
    if not (lo <= a1 < b1 <= a2 < b2 <= hi):
        raise ParameterError("sub-boxes must be disjoint and inside the ambient box")
    if a2 - b1 <= spec.b:
        raise ParameterError(f"gap between boxes must exceed b={spec.b}")
    zj, ej = quadrature_partition_1d(spec, N1 + N2, hi - lo, beta, resolution)
    z1, e1 = quadrature_partition_1d(spec, N1, b1 - a1, beta, resolution)
    z2, e2 = quadrature_partition_1d(spec, N2, b2 - a2, beta, resolution)
    split = z1 * z2
    split_err = abs(z1) * e2 + abs(z2) * e1
    return SupermultReport(joint=zj, joint_err=ej, split=split, split_err=split_err)


def geometric_entropy(u: float) -> tuple[float, float]:
    """(entropy, mean) of the geometric law p_k = (1-u) u^(k-1) on k >= 1."""
    if not 0.0 < u < 1.0:
        raise DomainError("u must lie in (0, 1)")
    mean = 1.0 / (1.0 - u)
    entropy = -math.log(1.0 - u) - u * math.log(u) / (1.0 - u)
    return entropy, mean


def gibbs_pair_link_probability_1d(spec: PotentialSpec, L: float, beta: float, R: float,
                                   resolution: float = 1e-8) -> float:
    """P(|x - y| <= R) for two particles in [0, L] under the pair Gibbs density."""
    radii = [spec.r_hc, spec.b - spec.taper_width, spec.b, R]

    def run(tol):
        f = lambda g: (L - g) * np.exp(-beta * pair_energy(spec, np.maximum(g, 1e-300)))
        num, _ = adaptive_simpson(f, 0.0, min(R, L), radii, tol)
        den, _ = adaptive_simpson(f, 0.0, L, radii, tol)
        return num / den

    v, _ = _two_resolution(run, resolution)
    return v
