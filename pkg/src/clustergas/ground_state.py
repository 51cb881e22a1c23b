"""Cluster ground-state energies E_k, the bulk energy per particle and the
excess threshold derived from them.

Minimization is multistart basin hopping: random connected starts (plus
deterministic warm starts grown or merged from smaller optima), local
gradient descent with Barzilai-Borwein steps and Armijo backtracking
(step halving also covers hard-core violations), followed by perturbation
hops.  Every reported E_k is an upper bound on the true infimum; the
downstream bounds and caveats treat it as such.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .common import INF, ClusterGasError, ParameterError, canonical_json, substream
from .potential import PotentialSpec, energy_and_gradient, pair_minimum

__all__ = [
    "MinimizeOpts",
    "GroundStateEntry",
    "GroundStateTable",
    "minimize_cluster",
    "build_table",
    "estimate_e_infty",
    "compute_nu_star",
    "check_structural_assumptions",
    "table_to_json",
    "table_from_json",
]


@dataclass(frozen=True)
class MinimizeOpts:
    multistarts: int | None = None  # default 200 * k
    hops: int = 4
    perturbation_scale: float = 0.35
    tol: float = 1e-9  # gradient inf-norm threshold, units epsilon/sigma
    max_iters: int = 1500
    connect_radius: float | None = None  # default: potential range b

    def starts_for(self, k: int) -> int:
        return self.multistarts if self.multistarts is not None else 200 * k


@dataclass(frozen=True)
class GroundStateEntry:
    k: int
    energy: float
    coords: np.ndarray | None
    r_min_observed: float | None
    diameter: float
    multistart_count: int
    converged: bool


@dataclass
class GroundStateTable:
    spec_id: str
    d: int
    entries: dict
    e_infty: float | None = None
    e_infty_residual: float | None = None
    nu_star: float | None = None
    seed: int = 0
    nu_star_argmin: int | None = None  # in-memory diagnostics, not serialized
    nu_star_truncated: bool = False
    low_confidence: bool = False
    warning: str | None = None
    spec: PotentialSpec | None = None

    @property
    def k_max(self) -> int:
        return max(self.entries)

    def energy(self, k: int) -> float:
        if k not in self.entries:
            raise ParameterError(f"cluster size k={k} not tabulated (k_max={self.k_max})")
        return self.entries[k].energy

    @classmethod
    def from_energies(cls, energies: dict, e_infty: float, d: int = 1) -> "GroundStateTable":
        """Synthetic table from bare energy values (tests, toy models)."""
        entries = {
            int(k): GroundStateEntry(int(k), float(e), None, None, 0.0, 0, True)
            for k, e in energies.items()
        }
        table = cls(spec_id="synthetic", d=d, entries=entries, e_infty=float(e_infty))
        table.nu_star = compute_nu_star(table)
        return table


def _unit_direction(rng, d: int) -> np.ndarray:
    if d == 1:
        return np.array([1.0 if rng.random() < 0.5 else -1.0])
    v = rng.normal(size=d)
    n = np.linalg.norm(v)
    while n < 1e-12:
        v = rng.normal(size=d)
        n = np.linalg.norm(v)
    return v / n


def _random_connected_start(rng, spec: PotentialSpec, k: int, d: int, r_star: float,
                            attach_radius: float) -> np.ndarray:
    pts = [np.zeros(d)]
    lo = max(spec.r_hc * 1.02, 0.55 * r_star)
    hi = max(attach_radius, lo * 1.05)
    while len(pts) < k:
        placed = False
        for _ in range(80):
            anchor = pts[int(rng.integers(len(pts)))]
            cand = anchor + rng.uniform(lo, hi) * _unit_direction(rng, d)
            if all(np.linalg.norm(cand - p) > spec.r_hc * 1.01 for p in pts):
                pts.append(cand)
                placed = True
                break
        if not placed:  # crowded in d=1: restart the whole growth
            pts = [np.zeros(d)]
    return np.asarray(pts)


def _descend(spec: PotentialSpec, x0: np.ndarray, tol_abs: float, max_iters: int):
    """BB gradient descent with Armijo backtracking; (x, U, grad_ok)."""
    x = np.array(x0, dtype=float)
    u, g = energy_and_gradient(spec, x)
    if not math.isfinite(u):
        return x, u, False
    base = 0.01 * spec.sigma ** 2 / spec.epsilon
    step = base
    xp = gp = None
    for _ in range(max_iters):
        gn = float(np.max(np.abs(g)))
        if gn < tol_abs:
            return x, u, True
        if xp is not None:
            s = (x - xp).ravel()
            y = (g - gp).ravel()
            sy = float(s @ y)
            step = float(s @ s) / sy if sy > 1e-300 else base
            step = min(max(step, 1e-7 * base), 1e6 * base)
        gsq = float((g * g).sum())
        t = step
        accepted = False
        for _ in range(60):
            xn = x - t * g
            un, gnn = energy_and_gradient(spec, xn)
            if math.isfinite(un) and un <= u - 1e-4 * t * gsq:
                accepted = True
                break
            t *= 0.5
        if not accepted:
            return x, u, gn < 1e4 * tol_abs
        xp, gp = x, g
        x, u, g = xn, un, gnn
    return x, u, float(np.max(np.abs(g))) < 1e4 * tol_abs


def _is_connected(pts: np.ndarray, radius: float) -> bool:
    n = pts.shape[0]
    if n <= 1:
        return True
    diff = pts[:, None, :] - pts[None, :, :]
    adj = (diff * diff).sum(axis=-1) <= radius * radius
    seen = np.zeros(n, dtype=bool)
    stack = [0]
    seen[0] = True
    while stack:
        i = stack.pop()
        for j in np.nonzero(adj[i])[0]:
            if not seen[j]:
                seen[j] = True
                stack.append(int(j))
    return bool(seen.all())


def _canonical_coords(pts: np.ndarray) -> np.ndarray:
    """Translate the first coordinate-sorted particle to the origin and order
    rows lexicographically, so equal minima serialize identically."""
    pts = pts - pts.min(axis=0, keepdims=True)
    order = np.lexsort(tuple(pts[:, c] for c in range(pts.shape[1] - 1, -1, -1)))
    return pts[order]


def _pair_stats(pts: np.ndarray):
    n = pts.shape[0]
    if n < 2:
        return None, 0.0
    diff = pts[:, None, :] - pts[None, :, :]
    dist = np.sqrt((diff * diff).sum(axis=-1))
    iu = np.triu_indices(n, k=1)
    return float(dist[iu].min()), float(dist[iu].max())


def _grow_starts(spec, k, d, best_coords, r_star):
    """Deterministic warm starts: augment the best (k-1)-cluster by one
    particle at the pair-optimal distance, and merge best j + (k-j) blocks
    with a pair-optimal bounding gap (the subadditive construction)."""
    starts = []
    prev = best_coords.get(k - 1)
    if prev is not None and k >= 2:
        centroid = prev.mean(axis=0)
        ranked = sorted(range(prev.shape[0]),
                        key=lambda i: -float(np.linalg.norm(prev[i] - centroid)))
        for host in ranked[:3]:
            away = prev[host] - centroid
            nrm = np.linalg.norm(away)
            direction = away / nrm if nrm > 1e-12 else np.eye(d)[0]
            cand = np.vstack([prev, prev[host] + r_star * direction])
            starts.append(cand)
    for j in {k // 2, k - 1} - {0, k}:
        a, bb = best_coords.get(j), best_coords.get(k - j)
        if a is None or bb is None or j < 1:
            continue
        shift = np.zeros(d)
        shift[0] = a[:, 0].max() - bb[:, 0].min() + r_star
        host = a[np.argmax(a[:, 0])]
        other = bb[np.argmin(bb[:, 0])]
        align = host - (other + shift)
        align[0] = 0.0
        starts.append(np.vstack([a, bb + shift + align]))
    return starts


def _minimize_full(spec: PotentialSpec, k: int, opts: MinimizeOpts, seed: int, d: int,
                   warm_starts=()) -> GroundStateEntry:
    if k < 1:
        raise ParameterError("cluster size k must be >= 1")
    if k == 1:
        return GroundStateEntry(1, 0.0, np.zeros((1, d)), None, 0.0, 0, True)
    r_star, _ = pair_minimum(spec)
    radius = opts.connect_radius if opts.connect_radius is not None else spec.b
    attach = min(spec.b, radius) * 0.95
    tol_abs = opts.tol * spec.epsilon / spec.sigma
    n_starts = opts.starts_for(k)
    best_u, best_x, best_ok = INF, None, False
    for idx in range(n_starts + len(warm_starts)):
        rng = substream(seed, k, idx)
        if idx < len(warm_starts):
            x0 = np.array(warm_starts[idx], dtype=float)
        else:
            x0 = _random_connected_start(rng, spec, k, d, r_star, attach)
        x, u, ok = _descend(spec, x0, tol_abs, opts.max_iters)
        for _ in range(opts.hops):
            x1 = x + opts.perturbation_scale * spec.sigma * rng.normal(size=x.shape)
            x1, u1, ok1 = _descend(spec, x1, tol_abs, opts.max_iters)
            if u1 < u and _is_connected(x1, radius):
                x, u, ok = x1, u1, ok1
        if not _is_connected(x, radius):
            continue
        if u < best_u:
            best_u, best_x, best_ok = u, x, ok
    if best_x is None:
        raise ClusterGasError(f"no connected minimum found for k={k} within budget")
    coords = _canonical_coords(best_x)
    r_min, diam = _pair_stats(coords)
    return GroundStateEntry(k, float(best_u), coords, r_min, diam, n_starts, bool(best_ok))


def minimize_cluster(spec: PotentialSpec, k: int, opts: MinimizeOpts | None = None,
                     seed: int = 0, d: int = 2, warm_starts=()) -> tuple[float, np.ndarray]:
    entry = _minimize_full(spec, k, opts or MinimizeOpts(), seed, d, warm_starts)
    return entry.energy, entry.coords


def build_table(spec: PotentialSpec, k_max: int, opts: MinimizeOpts | None = None,
                seed: int = 0, d: int = 2) -> GroundStateTable:
    """Tabulate k = 1..k_max; fit the bulk energy and the excess threshold
    when enough sizes are available (k_max >= 6).  Deterministic per seed."""
    if k_max < 2:
        raise ParameterError("k_max must be >= 2")
    opts = opts or MinimizeOpts()
    entries = {}
    best_coords = {}
    warning = None
    r_star, _ = pair_minimum(spec)
    for k in range(1, k_max + 1):
        warm = _grow_starts(spec, k, d, best_coords, r_star) if k >= 2 else []
        entry = _minimize_full(spec, k, opts, seed, d, warm_starts=warm)
        entries[k] = entry
        best_coords[k] = entry.coords
        if not entry.converged:
            warning = f"k={k} did not reach the gradient tolerance within budget"
    table = GroundStateTable(spec_id=spec.spec_id, d=d, entries=entries, seed=seed,
                             warning=warning, spec=spec)
    if k_max >= 6:
        e_inf, residual = estimate_e_infty(table)
        table.e_infty = e_inf
        table.e_infty_residual = residual
        table.nu_star = compute_nu_star(table)
    return table


def estimate_e_infty(table: GroundStateTable, method: str = "surface_fit",
                     residual_threshold: float = 1e-3) -> tuple[float, float]:
    """Bulk energy per particle from the large-k tail of the table.

    surface_fit: least squares on E_k ~ e k + c k^((d-1)/d) over the upper
    half of the tabulated sizes, the expected surface-term shape.  The plain
    tail_difference alternative (mean of the last first-differences) is only
    meaningful in d=1 where the surface term is flat.
    """
    ks = sorted(table.entries)
    if len(ks) < 6 or table.k_max < 6:
        raise ParameterError("e_infty estimation needs k_max >= 6")
    sel = [k for k in ks if k >= ks[-1] / 2]
    e = np.array([table.entries[k].energy for k in sel])
    kv = np.array(sel, dtype=float)
    if method == "surface_fit":
        expo = (table.d - 1) / table.d
        design = np.column_stack([kv, kv ** expo]) if expo > 0 else np.column_stack(
            [kv, np.ones_like(kv)])
        coef, *_ = np.linalg.lstsq(design, e, rcond=None)
        e_inf = float(coef[0])
        residual = float(np.sqrt(np.mean((design @ coef - e) ** 2)))
    elif method == "tail_difference":
        diffs = np.diff(e)
        e_inf = float(np.mean(diffs))
        residual = float(np.std(diffs))
    else:
        raise ParameterError(f"unknown e_infty method {method!r}")
    if not e_inf < 0:
        raise ClusterGasError(f"bulk energy estimate {e_inf} is not negative; table looks broken")
    scale = abs(e_inf) * float(np.mean(kv))
    table.low_confidence = residual > residual_threshold * scale
    return e_inf, residual


def compute_nu_star(table: GroundStateTable) -> float:
    """min over tabulated k of E_k - k e_infty; must come out positive.

    When the argmin sits at k_max the infimum may lie beyond the table; the
    value is then a tabulation-limited upper bound (flagged, not guessed).
    """
    if table.e_infty is None:
        raise ParameterError("table has no e_infty; run estimate_e_infty first")
    cands = {k: entry.energy - k * table.e_infty for k, entry in table.entries.items()}
    k_best = min(cands, key=lambda k: (cands[k], k))
    value = cands[k_best]
    if not value > 0:
        raise ClusterGasError(
            f"nonpositive excess threshold {value} at k={k_best}: broken table or bad e_infty")
    table.nu_star = float(value)
    table.nu_star_argmin = int(k_best)
    table.nu_star_truncated = k_best == table.k_max
    return float(value)


@dataclass(frozen=True)
class StructuralReport:
    r_min_overall: float | None
    diameter_ratio_max: float
    r_min_ok: bool
    diameter_ok: bool
    violations: tuple


def check_structural_assumptions(table: GroundStateTable, c_guess: float,
                                 r_hc: float | None = None) -> StructuralReport:
    """Diagnostics for the minimum-distance and linear-diameter assumptions."""
    if not table.entries:
        raise ParameterError("table is empty")
    if r_hc is None:
        r_hc = table.spec.r_hc if table.spec is not None else 0.0
    r_mins = [e.r_min_observed for e in table.entries.values() if e.r_min_observed is not None]
    ratios = {k: e.diameter / k ** (1.0 / table.d)
              for k, e in table.entries.items() if k >= 2}
    violations = []
    for k, e in table.entries.items():
        if e.r_min_observed is not None and e.r_min_observed < r_hc:
            violations.append((k, "r_min", e.r_min_observed))
        if k >= 2 and ratios[k] > c_guess:
            violations.append((k, "diameter", ratios[k]))
    return StructuralReport(
        r_min_overall=min(r_mins) if r_mins else None,
        diameter_ratio_max=max(ratios.values()) if ratios else 0.0,
        r_min_ok=all(v[1] != "r_min" for v in violations),
        diameter_ok=all(v[1] != "diameter" for v in violations),
        violations=tuple(violations),
    )


def table_to_json(table: GroundStateTable) -> str:
    payload = {
        "spec_id": table.spec_id,
        "d": table.d,
        "entries": [
            {
                "k": e.k,
                "E": e.energy,
                "coords": None if e.coords is None else e.coords.tolist(),
                "r_min": e.r_min_observed,
                "diameter": e.diameter,
                "converged": e.converged,
            }
            for _, e in sorted(table.entries.items())
        ],
        "e_infty": table.e_infty,
        "residual": table.e_infty_residual,
        "nu_star": table.nu_star,
        "seed": table.seed,
    }
    return canonical_json(payload)


def table_from_json(text: str) -> GroundStateTable:
    import json

    data = json.loads(text)
    for key in ("spec_id", "d", "entries", "e_infty", "residual", "nu_star", "seed"):
        if key not in data:
            raise ParameterError(f"table JSON is missing required key {key!r}")
    entries = {}
    for row in data["entries"]:
        coords = None if row["coords"] is None else np.asarray(row["coords"], dtype=float)
        entries[int(row["k"])] = GroundStateEntry(
            int(row["k"]), float(row["E"]), coords, row["r_min"], row["diameter"],
            0, bool(row["converged"]))
    table = GroundStateTable(
        spec_id=data["spec_id"], d=int(data["d"]), entries=entries,
        e_infty=data["e_infty"], e_infty_residual=data["residual"],
        nu_star=data["nu_star"], seed=int(data["seed"]))
    if table.e_infty is not None and table.nu_star is not None:
        cands = {k: e.energy - k * table.e_infty for k, e in entries.items()}
        table.nu_star_argmin = min(cands, key=lambda k: (cands[k], k))
        table.nu_star_truncated = table.nu_star_argmin == table.k_max
    return table
