"""Cluster partition functions, free energies and computable bounds.

Estimation routes.  Small cases go through the deterministic quadrature
oracle.  Beyond its range the estimator is importance sampling with a tree
proposal: a reference particle, then each new particle attached uniformly
inside the connectivity ball of a uniformly chosen previous one.  Proposals
are connected by construction.  The proposal density is the product of the
per-step attachment mixtures, and the weight also divides by the number of
insertion orders that could have produced the same configuration; without
that count, configurations reachable in few orders would be undersampled
and the estimator biased.  The count is a subset-DP (connected-prefix
orderings), vectorized across samples.

The bounds are the tree-count (Cayley) upper bound, the shell-lattice
lower bound with its interaction constant, the per-size free-energy lower
bound, the two entropy inequalities, the ideal-mixture model with its
mass-action minimizer, and the two-sided sandwich with explicit
excluded-volume corrections.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq
from scipy.special import logsumexp

from .common import (INF, MASS_TOL, CapabilityError, ClusterGasError, Estimate,
                     ParameterError, ball_volume, fmt, substream)
from .ground_state import GroundStateTable, check_structural_assumptions
from .potential import PotentialSpec, pair_energy
from . import oracle

__all__ = [
    "ClusterFreeEnergyEstimate",
    "IdealModel",
    "IdealOptimum",
    "SandwichResult",
    "UniformCertificate",
    "z_cluster",
    "cayley_upper_bound",
    "lattice_lower_bound",
    "interaction_constant",
    "f_cluster_lower",
    "entropy_terms",
    "relative_entropy_lower",
    "ideal_free_energy",
    "minimize_ideal",
    "sandwich",
    "default_a_choice",
    "uniform_certificate",
    "build_ideal_model",
    "estimates_to_json",
    "estimates_to_csv",
]


@dataclass(frozen=True)
class ClusterFreeEnergyEstimate:
    k: int
    beta: float
    a: float | None  # box side; None = unconstrained
    z: Estimate
    f: Estimate  # -log z / (beta k)
    method: str  # quadrature | importance_sampling | exact
    upper_bound_cayley: float | None = None
    lower_bound_lattice: float | None = None
    lattice_delta: float | None = None
    seed: int = 0


def _in_quadrature_range(d: int, k: int, a) -> bool:
    if a is None:
        return (d == 1 and k <= 4) or (d == 2 and k <= 3)
    return d == 1 and k <= 4


# ---------------------------------------------------------------------------
# importance sampling
# ---------------------------------------------------------------------------


def _uniform_ball(rng, m: int, d: int, R: float) -> np.ndarray:
    if d == 1:
        return rng.uniform(-R, R, size=(m, 1))
    if d == 2:
        r = R * np.sqrt(rng.random(m))
        th = rng.uniform(0.0, 2.0 * math.pi, m)
        return np.column_stack([r * np.cos(th), r * np.sin(th)])
    r = R * rng.random(m) ** (1.0 / 3.0)
    v = rng.normal(size=(m, 3))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    return v * r[:, None]


def _insertion_order_counts(within: np.ndarray, rooted: bool) -> np.ndarray:
    """Number of vertex orders whose every prefix is connected.

    ``within``: (m, k, k) boolean adjacency per sample.  Rooted: vertex 0
    always first (counts orders of 1..k-1); otherwise all k vertices.
    Subset DP vectorized over samples.
    """
    m, k, _ = within.shape
    if rooted:
        free = list(range(1, k))
        root_adj = within[:, 0, :]  # adjacency to the root
    else:
        free = list(range(k))
        root_adj = None
    n = len(free)
    if n <= 1:
        return np.ones(m, dtype=float)
    # neighbour bitmasks among the free vertices
    masks = np.zeros((n, m), dtype=np.int64)
    for i, vi in enumerate(free):
        for j, vj in enumerate(free):
            if i != j:
                masks[i] |= within[:, vi, vj].astype(np.int64) << j
    counts = np.zeros((1 << n, m), dtype=float)
    counts[0] = 1.0
    for s in range(1, 1 << n):
        acc = counts[s]
        for i in range(n):
            bit = 1 << i
            if not (s & bit):
                continue
            rest = s ^ bit
            if rest == 0:
                ok = root_adj[:, free[i]] if rooted else np.ones(m, dtype=bool)
            else:
                ok = (masks[i] & rest) != 0
                if rooted:
                    ok = ok | root_adj[:, free[i]]
            acc += np.where(ok, counts[rest], 0.0)
        counts[s] = acc
    return counts[(1 << n) - 1]


def _total_energy_samples(spec: PotentialSpec, pos: np.ndarray) -> np.ndarray:
    """(m,) pair-energy sums; +inf rows where a hard core is violated."""
    m, k, _ = pos.shape
    iu, ju = np.triu_indices(k, k=1)
    diff = pos[:, iu, :] - pos[:, ju, :]
    dist = np.sqrt((diff * diff).sum(axis=-1))
    u = np.zeros(m)
    bad = (dist < spec.r_hc).any(axis=1)
    safe = np.maximum(dist, max(spec.r_hc, 1e-12))
    u = pair_energy(spec, safe).sum(axis=1)
    u[bad] = INF
    return u


def _sample_z_cluster(spec, k, beta, d, R, a, budget, seed) -> Estimate:
    rng = substream(seed, k, 0 if a is None else 1,
                    abs(np.float64(beta).view(np.int64)) % (2 ** 31))
    m = int(budget)
    vr = ball_volume(d, R)
    pos = np.zeros((m, k, d))
    logq = np.zeros(m)
    if a is not None:
        pos[:, 0, :] = rng.uniform(0.0, a, size=(m, d))
        logq -= d * math.log(a)
    for i in range(1, k):
        anchors = rng.integers(0, i, size=m)
        offs = _uniform_ball(rng, m, d, R)
        pos[:, i, :] = pos[np.arange(m), anchors, :] + offs
    # mixture proposal density: for each step, the number of previous
    # particles within R, over (i * volume of the ball)
    diff = pos[:, :, None, :] - pos[:, None, :, :]
    within = (diff * diff).sum(axis=-1) <= R * R
    for i in range(1, k):
        n_i = within[:, i, :i].sum(axis=1).astype(float)
        logq += np.log(n_i) - math.log(i * vr)
    t_counts = _insertion_order_counts(within, rooted=(a is None))
    u = _total_energy_samples(spec, pos)
    logw = np.where(np.isfinite(u), -beta * u, -INF) - logq - np.log(t_counts)
    if a is not None:
        inside = ((pos >= 0.0) & (pos <= a)).all(axis=(1, 2))
        logw[~inside] = -INF
    # the weights can span many decades; aggregate in log space
    lw_max = float(np.max(logw))
    if lw_max == -INF:
        return Estimate(0.0, 0.0, "importance_sampling")
    w = np.exp(logw - lw_max)
    mean = float(np.mean(w))
    serr = float(np.std(w, ddof=1) / math.sqrt(m))
    scale = math.exp(lw_max) / (k if a is None else a ** d)
    return Estimate(mean * scale, serr * scale, "importance_sampling")


# ---------------------------------------------------------------------------
# estimator front end and bounds
# ---------------------------------------------------------------------------


def z_cluster(spec: PotentialSpec, k: int, beta: float, d: int, R: float,
              a: float | None = None, method: str = "auto", budget: int = 20000,
              seed: int = 0, e_k: float | None = None,
              delta: float | None = None) -> ClusterFreeEnergyEstimate:
    """Cluster partition function, unconstrained or in a box of side a.

    Quadrature supports (d=1, k<=4) unconstrained and in a box, and
    (d=2, k<=3) unconstrained; elsewhere the importance sampler runs.
    k=1 is exactly 1 under both normalizations.  Deterministic per seed.
    Bounds are attached when their inputs are available (e_k for the tree
    count bound; an admissible delta and box for the lattice bound).
    """
    if k < 1:
        raise ParameterError("k must be >= 1")
    if beta <= 0:
        raise ParameterError("beta must be positive")
    if R <= spec.b:
        raise ParameterError("connectivity radius R must exceed the support b")
    if method == "auto":
        method = "quadrature" if _in_quadrature_range(d, k, a) else "importance_sampling"
    if k == 1:
        z = Estimate(1.0, 0.0, "exact")
        method = "exact"
    elif method == "quadrature":
        if not _in_quadrature_range(d, k, a):
            raise CapabilityError(
                f"quadrature supports d=1,k<=4 (any box) or d=2,k<=3 (no box); got d={d}, k={k}, a={a}")
        if a is None:
            v, err = oracle.quadrature_z_cluster(spec, k, beta, d, R=R)
        else:
            v, err = oracle.quadrature_z_cluster_box(spec, k, beta, a, R)
        z = Estimate(v, err, "quadrature")
    elif method == "importance_sampling":
        z = _sample_z_cluster(spec, k, beta, d, R, a, budget, seed)
    else:
        raise ParameterError(f"unknown method {method!r}")
    if z.value > 0 and z.stderr / z.value > 0.10:
        method = method + " [flagged: relative error above 10%]"
    if z.value <= 0:
        f = Estimate(INF, 0.0, z.provenance)
    else:
        f = Estimate(-math.log(z.value) / (beta * k), z.stderr / (beta * k * z.value), z.provenance)
    cayley = None if e_k is None else cayley_upper_bound(k, beta, e_k, R, d)
    lattice = None
    if a is not None:
        if delta is None:
            delta = (R - spec.r_hc) / 6.0
        if delta < (R - spec.r_hc) / 3.0 and a > delta + k ** (1.0 / d) * (spec.r_hc + 2 * delta):
            lattice = lattice_lower_bound(spec, k, beta, delta, a, R, d)
    return ClusterFreeEnergyEstimate(k=k, beta=beta, a=a, z=z, f=f, method=method,
                                     upper_bound_cayley=cayley, lower_bound_lattice=lattice,
                                     lattice_delta=delta if lattice is not None else None,
                                     seed=seed)


def cayley_upper_bound(k: int, beta: float, e_k: float, R: float, d: int) -> float:
    """exp(-beta E_k) k^(k-2)/k! |B(0,R)|^(k-1): spanning-tree count times the
    per-edge placement volume.  k=1 uses the empty-product convention 1."""
    if k < 1:
        raise ParameterError("k must be >= 1")
    tree_count = 1.0 if k == 1 else float(k) ** (k - 2)
    return math.exp(-beta * e_k) * tree_count / math.factorial(k) * ball_volume(d, R) ** (k - 1)


def interaction_constant(spec: PotentialSpec, delta: float, R: float, d: int) -> float:
    """C(delta): summed worst-case |v| over the scaled integer lattice shells.

    Terms vanish once the shell distance exceeds the support; the suprema
    are resolved on a dense grid (the constant enters a lower bound through
    exp(-beta C k), so overestimating is safe, underestimating is not; the
    grid is fine enough that any residual error is far below the slack)."""
    if delta <= 0:
        raise ParameterError("delta must be positive")
    lo = spec.r_hc + delta
    reach = spec.b / lo
    total = 0.0
    rng_max = int(math.ceil(reach)) + 1
    for vec in np.ndindex(*([2 * rng_max + 1] * d)):
        ell = np.array(vec) - rng_max
        norm = float(np.linalg.norm(ell))
        if norm == 0.0 or norm * lo >= spec.b:
            continue
        r_lo, r_hi = norm * lo, min(norm * R, spec.b)
        if r_hi <= r_lo:
            continue
        grid = np.linspace(r_lo, r_hi, 8001)
        total += float(np.max(np.abs(pair_energy(spec, grid)))) * (1.0 + 1e-12)
    return total


def lattice_lower_bound(spec: PotentialSpec, k: int, beta: float, delta: float,
                        a_k: float, R: float, d: int) -> float:
    """|B(0, delta/2)|^k exp(-beta C(delta) k); guaranteed <= a^d Z_k^(cl,a).

    Preconditions (named on failure): 0 < delta < (R - r_hc)/3 and
    a_k > delta + k^(1/d) (r_hc + 2 delta), so the shifted lattice of one
    ball per particle fits in the box.
    """
    if not 0 < delta < (R - spec.r_hc) / 3.0:
        raise ParameterError(f"delta={delta} outside (0, (R - r_hc)/3) = (0, {(R - spec.r_hc) / 3.0})")
    need = delta + k ** (1.0 / d) * (spec.r_hc + 2 * delta)
    if not a_k > need:
        raise ParameterError(f"a_k={a_k} must exceed delta + k^(1/d)(r_hc + 2 delta) = {need}")
    c = interaction_constant(spec, delta, R, d)
    return ball_volume(d, delta / 2.0) ** k * math.exp(-beta * c * k)


def f_cluster_lower(table_entry, beta: float, R: float, d: int) -> float:
    """E_k/k - (1/(beta k)) log(k^(k-2) |B(0,R)|^(k-1) / k!), the per-size
    form of the tree-count free-energy lower bound."""
    k = table_entry.k
    e_k = table_entry.energy
    tree_count = 1.0 if k == 1 else float(k) ** (k - 2)
    corr = math.log(tree_count * ball_volume(d, R) ** (k - 1) / math.factorial(k))
    return e_k / k - corr / (beta * k)


# ---------------------------------------------------------------------------
# entropy inequalities
# ---------------------------------------------------------------------------


def _as_prob_sequence(p) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(p, dict):
        ks = np.array(sorted(p), dtype=float)
        probs = np.array([p[int(k)] for k in ks], dtype=float)
    else:
        probs = np.asarray(p, dtype=float)
        ks = np.arange(1, len(probs) + 1, dtype=float)
    return ks, probs


def entropy_terms(p) -> tuple[float, float]:
    """(Shannon entropy, 1 + log mean) for a probability sequence on k >= 1.

    0 log 0 = 0.  The entropy can never exceed the bound (geometric laws
    maximize entropy at fixed mean); both values are returned and the
    inequality asserted.
    """
    ks, probs = _as_prob_sequence(p)
    if np.any(~np.isfinite(probs)) or np.any(probs < 0):
        raise ParameterError("probabilities must be finite and nonnegative")
    if abs(probs.sum() - 1.0) > MASS_TOL:
        raise ParameterError(f"probabilities sum to {probs.sum()}, not 1")
    mean = float(ks @ probs)
    if not math.isfinite(mean):
        raise ParameterError("mean cluster size is not finite")
    pz = probs[probs > 0]
    entropy = float(-(pz * np.log(pz)).sum())
    bound = 1.0 + math.log(mean)
    if not (-1e-12 <= entropy <= bound + 1e-12):
        raise ClusterGasError(f"entropy {entropy} escapes [0, {bound}]")
    return entropy, bound


def relative_entropy_lower(rho_vec: dict, rho: float) -> float:
    """sum rho_k log(rho_k / rho), asserted >= -2 rho for admissible vectors."""
    if rho <= 0:
        raise ParameterError("rho must be positive")
    ks = np.array(sorted(rho_vec), dtype=float)
    vals = np.array([rho_vec[int(k)] for k in ks], dtype=float)
    if np.any(vals < 0):
        raise ParameterError("densities must be nonnegative")
    if float(ks @ vals) > rho * (1 + 1e-9) + MASS_TOL:
        raise ParameterError("vector carries more mass than rho: not admissible")
    vz = vals[vals > 0]
    value = float((vz * np.log(vz / rho)).sum())
    if value < -2.0 * rho - 1e-9:
        raise ClusterGasError(f"relative entropy {value} below -2 rho = {-2 * rho}")
    return value


# ---------------------------------------------------------------------------
# ideal mixture
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class IdealModel:
    """Per-size cluster free energies plus the bulk stand-in at (beta, rho).

    f_inf is represented by the largest tabulated size (the defining limits
    exist but a finite table can only stand in for them; the provenance
    string records which size and normalization produced it).
    """

    spec: PotentialSpec
    d: int
    beta: float
    rho: float
    R: float
    f_k: dict  # k -> Estimate, unconstrained normalization
    f_inf: Estimate
    f_inf_provenance: str = ""
    z_budget: int = 20000
    z_seed: int = 0

    @property
    def k_list(self) -> list:
        return sorted(self.f_k)


def build_ideal_model(spec: PotentialSpec, d: int, beta: float, rho: float, R: float,
                      k_max: int, method: str = "auto", budget: int = 20000,
                      seed: int = 0) -> IdealModel:
    f_k = {}
    for k in range(1, k_max + 1):
        est = z_cluster(spec, k, beta, d, R, a=None, method=method, budget=budget, seed=seed)
        f_k[k] = est.f
    return IdealModel(spec=spec, d=d, beta=beta, rho=rho, R=R, f_k=f_k,
                      f_inf=f_k[k_max],
                      f_inf_provenance=f"largest tabulated size k={k_max}, unconstrained; "
                                       "stand-in for the large-size limit",
                      z_budget=budget, z_seed=seed)


def _check_rho_vec(rho_vec: dict, rho: float):
    mass = sum(k * r for k, r in rho_vec.items())
    if mass > rho * (1 + 1e-9) + MASS_TOL:
        raise ParameterError(f"sum k rho_k = {mass} exceeds rho = {rho}")
    if any(r < 0 for r in rho_vec.values()):
        raise ParameterError("densities must be nonnegative")


def ideal_free_energy(model: IdealModel, rho_vec: dict) -> float:
    """sum k rho_k f_k + (rho - sum k rho_k) f_inf + (1/beta) sum rho_k (log rho_k - 1)."""
    _check_rho_vec(rho_vec, model.rho)
    missing = sorted(set(rho_vec) - set(model.f_k))
    if missing:
        raise ParameterError(f"no cluster free energy tabulated for k={missing}")
    mass = 0.0
    acc = 0.0
    ent = 0.0
    for k, r in sorted(rho_vec.items()):
        if r == 0.0:
            continue
        mass += k * r
        acc += k * r * model.f_k[k].value
        ent += r * (math.log(r) - 1.0)
    return acc + (model.rho - mass) * model.f_inf.value + ent / model.beta


@dataclass(frozen=True)
class IdealOptimum:
    rho_vec: dict
    value: float
    lagrange_multiplier: float
    constraint_active: bool
    kkt_stationarity: float
    kkt_slackness: float


def minimize_ideal(model: IdealModel) -> IdealOptimum:
    """Exact minimizer of the strictly convex ideal functional.

    Stationarity gives rho_k = exp(-beta k (f_k - lam)).  The bulk branch
    pins lam = f_inf when the resulting mass fits below rho; otherwise lam
    solves the monotone mass-balance equation sum k rho_k(lam) = rho.
    """
    beta = model.beta
    ks = np.array(model.k_list, dtype=float)
    fs = np.array([model.f_k[int(k)].value for k in ks])

    def log_mass(lam: float) -> float:
        return float(logsumexp(np.log(ks) - beta * ks * (fs - lam)))

    target = math.log(model.rho)
    lam_free = model.f_inf.value
    if log_mass(lam_free) <= target:
        lam = lam_free
        active = False
    else:
        lo = lam_free
        width = max(1.0, abs(lam_free))
        for _ in range(200):
            lo = lo - width
            if log_mass(lo) < target:
                break
            width *= 2.0
        else:
            raise ClusterGasError(
                f"could not bracket the mass-balance root; last bracket ({lo}, {lam_free})")
        lam = float(brentq(lambda x: log_mass(x) - target, lo, lam_free,
                           xtol=1e-15, rtol=8.9e-16, maxiter=300))
        active = True
    log_rho = -beta * ks * (fs - lam)
    rho_vec = {int(k): float(math.exp(lr)) for k, lr in zip(ks, log_rho)}
    value = ideal_free_energy(model, rho_vec)
    stat = max(
        abs(k * model.f_k[int(k)].value - k * lam + math.log(rho_vec[int(k)]) / beta)
        for k in ks if rho_vec[int(k)] > 0)
    mass = sum(k * r for k, r in rho_vec.items())
    slack = abs((lam - lam_free) * (model.rho - mass))
    return IdealOptimum(rho_vec=rho_vec, value=value, lagrange_multiplier=lam,
                        constraint_active=active, kkt_stationarity=stat, kkt_slackness=slack)


# ---------------------------------------------------------------------------
# two-sided sandwich
# ---------------------------------------------------------------------------


def default_a_choice(k: int, rho: float, R: float, d: int, alpha: float | None = None) -> float:
    """Largest box compatible with (a + R)^d < k/rho at half density, clipped
    above alpha k^(1/d) when a linear-diameter constant is available."""
    a = (k / (2.0 * rho)) ** (1.0 / d) - R
    if alpha is not None:
        a = max(a, alpha * k ** (1.0 / d) * (1.0 + 1e-9))
    if a <= 0:
        raise ParameterError(f"no admissible box for k={k} at rho={rho}: density too high")
    return a


@dataclass(frozen=True)
class SandwichResult:
    lower: float
    upper: float
    lower_err: float
    upper_err: float
    constrained_f: dict = field(default_factory=dict)

    @property
    def gap(self) -> float:
        return self.upper - self.lower


def sandwich(model: IdealModel, rho_vec: dict, a_choice: dict,
             f_inf_upper: Estimate) -> SandwichResult:
    """Two-sided bracket of the size-resolved free energy at rho_vec.

    Lower: the ideal functional with unconstrained per-size free energies
    (dropping cluster-cluster exclusion can only lower the value).  Upper:
    boxed clusters placed on a sparse grid, which costs the placement
    entropy at density rho plus the two excluded-volume corrections
    -log(1 - (rho/k)(a_k + R)^d) and d log(1 + R/a_k) per supported size.
    Requires (a_k + R)^d < k/rho for every supported k.
    """
    _check_rho_vec(rho_vec, model.rho)
    rho, beta, d, R = model.rho, model.beta, model.d, model.R
    support = sorted(k for k, r in rho_vec.items() if r > 0)
    for k in support:
        if k not in a_choice:
            raise ParameterError(f"a_choice is missing the supported size k={k}")
        if (a_choice[k] + R) ** d >= k / rho:
            raise ParameterError(
                f"(a_k + R)^d < k/rho fails for k={k}: "
                f"({a_choice[k]} + {R})^{d} >= {k}/{rho}")
    lower = ideal_free_energy(model, rho_vec)
    mass = sum(k * r for k, r in rho_vec.items())
    lower_err = math.sqrt(
        sum((k * r * model.f_k[k].stderr) ** 2 for k, r in rho_vec.items())
        + ((rho - mass) * model.f_inf.stderr) ** 2)
    upper = (rho - mass) * f_inf_upper.value
    upper_var = ((rho - mass) * f_inf_upper.stderr) ** 2
    constrained = {}
    for k in support:
        r = rho_vec[k]
        est = z_cluster(model.spec, k, beta, d, R, a=a_choice[k],
                        budget=model.z_budget, seed=model.z_seed)
        constrained[k] = est.f
        upper += k * r * est.f.value
        upper_var += (k * r * est.f.stderr) ** 2
        upper += r * math.log(rho) / beta
        upper += r / beta * (-math.log(1.0 - (rho / k) * (a_choice[k] + R) ** d)
                             + d * math.log(1.0 + R / a_choice[k]))
    upper_err = math.sqrt(upper_var)
    if lower > upper + 3.0 * math.hypot(lower_err, upper_err):
        raise ClusterGasError(
            f"sandwich inverted: lower={lower} > upper={upper} beyond 3 sigma")
    return SandwichResult(lower=lower, upper=upper, lower_err=lower_err,
                          upper_err=upper_err, constrained_f=constrained)


# ---------------------------------------------------------------------------
# uniform certificate
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class UniformCertificate:
    center: float  # rho * (limiting objective at q)
    lower: float
    upper: float
    constants: dict
    caveats: tuple

    @property
    def width(self) -> float:
        return self.upper - self.lower


def _cayley_correction(k: int, v_r: float) -> float:
    tree_count = 1.0 if k == 1 else float(k) ** (k - 2)
    return max(0.0, math.log(tree_count * v_r ** (k - 1) / math.factorial(k)) / k)


def uniform_certificate(model: IdealModel, table: GroundStateTable, q) -> UniformCertificate:
    """Certified interval around rho * g(q) containing the size-resolved
    free energy at (beta, rho), from explicit per-size constants.

    Lower side: per-size tree-count corrections plus the two entropy
    inequalities.  Upper side: boxed-cluster constructions whose error is
    the measured modulus of continuity evaluated at scale 1/beta plus the
    d log(beta)/beta placement term.  The bulk coefficients substitute the
    largest tabulated sizes (a finite table cannot certify the true limit;
    recorded as a caveat, not claimed).
    """
    spec = model.spec
    if spec.holder is None:
        raise ParameterError("potential has no Hoelder/Lipschitz data (spec.holder); "
                             "measure it with measured_lipschitz first")
    if table.e_infty is None:
        raise ParameterError("table has no e_infty")
    diag = check_structural_assumptions(table, c_guess=INF)
    if not diag.r_min_ok or diag.r_min_overall is None:
        raise ParameterError("minimum-distance diagnostics fail for this table")
    beta, rho, d, R = model.beta, model.rho, model.d, model.R
    nu = -math.log(rho) / beta
    from .variational import g_nu  # local import avoids a cycle

    center = rho * g_nu(q, table, nu)
    rho_vec = {k: rho * qk / k for k, qk in q.entries.items()}
    mass = sum(k * r for k, r in rho_vec.items())
    v_r = ball_volume(d, R)

    # lower side constants
    c_k = {k: _cayley_correction(k, v_r) for k in rho_vec}
    c_inf = max(1.0 + max(math.log(v_r), 0.0),
                max((_cayley_correction(k, v_r) for k in table.entries), default=0.0))
    down = (sum(k * r * c_k[k] for k, r in rho_vec.items())
            + (rho - mass) * c_inf + 2.0 * rho + sum(rho_vec.values())) / beta

    # upper side constants
    s_exp, c_hold = spec.holder
    r_min = diag.r_min_overall
    n_max = math.floor(((R + r_min / 2.0) / (r_min / 2.0)) ** d)
    eps = 1.0 / beta
    t = 1.0 + 2.0 * eps / r_min
    caveats = []
    if t * spec.b + 2.0 * eps > R:
        raise ParameterError(
            f"beta={beta} too small for the boxed construction: "
            f"t b + 2/beta = {t * spec.b + 2 * eps} exceeds R = {R}")
    hold_term = c_hold * n_max * (eps ** s_exp + ((t - 1.0) * spec.b) ** s_exp)
    log_ball_eps = math.log(ball_volume(d, eps))
    alpha = 2.0 * (diag.diameter_ratio_max + (R - spec.r_hc) / 6.0)
    up = 0.0
    w_terms = {}
    for k, r in rho_vec.items():
        a_k = default_a_choice(k, rho, R, d, alpha=None)
        if a_k < alpha * k ** (1.0 / d):
            caveats.append(f"a_{k} below the linear-diameter scale: density near the regime edge")
        w_k = (hold_term
               + (-(k - 1) / k * log_ball_eps + math.log(2.0 * k) / k) / beta)
        w_terms[k] = w_k
        up += k * r * w_k
        up += r / beta * (math.log(2.0) + d * math.log(1.0 + R / a_k))
    tail_surplus = max((e.energy - k * table.e_infty) / k
                       for k, e in table.entries.items() if k >= table.k_max / 2)
    w_inf = (hold_term + (d * math.log(beta) + max(-math.log(ball_volume(d, 1.0)), 0.0)) / beta
             + math.log(2.0 * (table.k_max + 1)) / (beta * (table.k_max + 1)))
    caveats.append(
        f"bulk upper coefficient uses the tabulated tail surplus {tail_surplus:.6g} "
        f"(sizes beyond k_max={table.k_max} are not certified)")
    up += (rho - mass) * (w_inf + tail_surplus)
    return UniformCertificate(center=center, lower=center - down, upper=center + up,
                              constants={"cayley": c_k, "cayley_bulk": c_inf,
                                         "holder_term": hold_term, "n_max": n_max,
                                         "boxed": w_terms, "bulk": w_inf,
                                         "tail_surplus": tail_surplus},
                              caveats=tuple(caveats))


# ---------------------------------------------------------------------------
# persistence
# ---------------------------------------------------------------------------


def estimates_to_json(estimates) -> str:
    from .common import canonical_json

    rows = []
    for e in estimates:
        rows.append({
            "k": e.k, "beta": e.beta, "a": e.a, "z": e.z.value, "stderr": e.z.stderr,
            "f": e.f.value, "cayley": e.upper_bound_cayley,
            "lattice": e.lower_bound_lattice, "method": e.method, "seed": e.seed,
        })
    return canonical_json(rows)


def estimates_to_csv(estimates, path) -> None:
    with open(path, "w", newline="\n") as fh:
        fh.write("k,beta,a,z,stderr,f,cayley_ub,lattice_lb\n")
        for e in estimates:
            cells = [str(e.k), fmt(e.beta), "" if e.a is None else fmt(e.a),
                     fmt(e.z.value), fmt(e.z.stderr), fmt(e.f.value),
                     "" if e.upper_bound_cayley is None else fmt(e.upper_bound_cayley),
                     "" if e.lower_bound_lattice is None else fmt(e.lower_bound_lattice)]
            fh.write(",".join(cells) + "\n")
