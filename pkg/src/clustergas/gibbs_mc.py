"""Canonical-ensemble Metropolis sampling with cluster-size observables.

Moves are single-particle uniform displacements; proposals leaving the box
or touching a hard core are rejected outright, which preserves detailed
balance for the hard-wall measure.  Energy bookkeeping is incremental via
the same hash-grid cells used for cluster decomposition (cell size R >= b,
so interaction neighbours are always inside the 3^d surrounding cells),
with a full recompute every 100 sweeps as a drift guard.  The step size
adapts toward a 0.3-0.5 acceptance window during burn-in only and is
frozen afterwards.  Replicas run as independent derived-seed streams and
merge deterministically by index.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from itertools import product

import numpy as np

from .cluster_geometry import Configuration, decompose
from .common import INF, ClusterGasError, ParameterError, canonical_json, substream
from .ground_state import GroundStateTable
from .potential import PotentialSpec, pair_energy, total_energy
from .variational import BULK, mu

__all__ = [
    "MCParams",
    "MCResult",
    "ReplicaTrace",
    "run_canonical",
    "lln_experiment",
    "LLNReport",
    "equilibration_check",
    "close_packing_density",
    "result_to_json",
]


@dataclass(frozen=True)
class MCParams:
    n_sweeps: int = 20000
    burn_in_sweeps: int = 4000
    step_size: float = 0.5
    measure_every: int = 20
    replicas: int = 2
    seed: int = 0
    adapt_step: bool = True
    track_k_max: int = 10

    def __post_init__(self):
        if self.burn_in_sweeps >= self.n_sweeps:
            raise ParameterError("burn_in_sweeps must be smaller than n_sweeps")
        if self.replicas < 1:
            raise ParameterError("need at least one replica")


@dataclass(frozen=True)
class ReplicaTrace:
    sweeps: np.ndarray
    energies: np.ndarray
    q: np.ndarray  # frames x track_k_max
    overflow: np.ndarray  # mass in clusters larger than track_k_max
    acceptance: float
    step_size_final: float
    max_energy_drift: float
    final_positions: np.ndarray


@dataclass(frozen=True)
class MCResult:
    q_bar: dict  # k -> (mean, stderr across replicas)
    acceptance_rate: float
    energy_summary: dict
    equilibration: dict
    provenance: dict
    traces: tuple


def close_packing_density(r_hc: float, d: int) -> float:
    """Densest hard-sphere number density for core diameter r_hc."""
    if r_hc <= 0:
        return INF
    if d == 1:
        return 1.0 / r_hc
    if d == 2:
        return (math.pi / math.sqrt(12.0)) * 4.0 / (math.pi * r_hc ** 2)
    return (math.pi / math.sqrt(18.0)) * 6.0 / (math.pi * r_hc ** 3)


def _initial_placement(rng, spec, n, L, d, attempts_per_particle=400):
    pos = np.empty((n, d))
    placed = 0
    restarts = 0
    while placed < n:
        ok = False
        for _ in range(attempts_per_particle):
            cand = rng.uniform(0.0, L, size=d)
            if placed == 0 or (np.linalg.norm(pos[:placed] - cand, axis=1) >= spec.r_hc).all():
                pos[placed] = cand
                placed += 1
                ok = True
                break
        if not ok:
            placed = 0
            restarts += 1
            if restarts > 40:
                rho_cp = close_packing_density(spec.r_hc, d)
                raise ClusterGasError(
                    f"could not place {n} hard cores in box {L}^{d}: density "
                    f"{n / L ** d:.4g} too close to the close packing value {rho_cp:.4g}")
    return pos


class _CellGrid:
    """Sparse hash grid over [0, L]^d with cell size R."""

    def __init__(self, pos, L, R, d):
        self.R = R
        self.d = d
        self.cells: dict = {}
        self.keys = [None] * pos.shape[0]
        self.offsets = list(product((-1, 0, 1), repeat=d))
        for i, x in enumerate(pos):
            self.insert(i, x)

    def key_of(self, x):
        return tuple(int(math.floor(c / self.R)) for c in x)

    def insert(self, i, x):
        key = self.key_of(x)
        self.cells.setdefault(key, []).append(i)
        self.keys[i] = key

    def move(self, i, x_new):
        key = self.key_of(x_new)
        old = self.keys[i]
        if key != old:
            self.cells[old].remove(i)
            if not self.cells[old]:
                del self.cells[old]
            self.cells.setdefault(key, []).append(i)
            self.keys[i] = key

    def neighbours(self, x, exclude=-1):
        key = self.key_of(x)
        out = []
        for off in self.offsets:
            got = self.cells.get(tuple(k + o for k, o in zip(key, off)))
            if got:
                out.extend(got)
        if exclude >= 0:
            out = [j for j in out if j != exclude]
        return out


def _local_energy(spec, pos, grid, i, x):
    nb = grid.neighbours(x, exclude=i)
    if not nb:
        return 0.0
    r = np.linalg.norm(pos[nb] - x, axis=1)
    if (r < spec.r_hc).any() or (r == 0.0).any():
        return INF
    return float(pair_energy(spec, r).sum())


def _run_replica(spec, n, L, beta, R, params: MCParams, replica_idx: int, d: int):
    rng = substream(params.seed, replica_idx)
    pos = _initial_placement(rng, spec, n, L, d)
    grid = _CellGrid(pos, L, R, d)
    energy = total_energy(spec, pos)
    step = params.step_size
    accepted = attempted = 0
    window_acc = window_att = 0
    max_drift = 0.0
    frames_sweep, frames_e, frames_q, frames_over = [], [], [], []
    kmax_track = params.track_k_max
    for sweep in range(1, params.n_sweeps + 1):
        for _ in range(n):
            i = int(rng.integers(n))
            disp = rng.uniform(-step, step, size=d)
            x_new = pos[i] + disp
            attempted += 1
            window_att += 1
            if (x_new < 0.0).any() or (x_new > L).any():
                continue
            u_old = _local_energy(spec, pos, grid, i, pos[i])
            u_new = _local_energy(spec, pos, grid, i, x_new)
            if u_new == INF:
                continue
            du = u_new - u_old
            if du <= 0.0 or rng.random() < math.exp(-beta * du):
                pos[i] = x_new
                grid.move(i, x_new)
                energy += du
                accepted += 1
                window_acc += 1
        if params.adapt_step and sweep <= params.burn_in_sweeps and sweep % 50 == 0:
            rate = window_acc / max(window_att, 1)
            if rate > 0.5:
                step = min(step * 1.15, L)
            elif rate < 0.3:
                step = max(step / 1.15, 1e-6 * L)
            window_acc = window_att = 0
        if sweep % 100 == 0:
            exact = total_energy(spec, pos)
            max_drift = max(max_drift, abs(exact - energy))
            energy = exact
        if sweep > params.burn_in_sweeps and sweep % params.measure_every == 0:
            decomp = decompose(Configuration(dim=d, box_side=L, positions=pos), R)
            qvec = np.zeros(kmax_track)
            over = 0.0
            for size in decomp.sizes:
                if size <= kmax_track:
                    qvec[size - 1] += size / n
                else:
                    over += size / n
            total = qvec.sum() + over
            if abs(total - 1.0) > 1e-12:
                raise ClusterGasError(f"per-frame mass identity broken: {total}")
            frames_sweep.append(sweep)
            frames_e.append(energy)
            frames_q.append(qvec)
            frames_over.append(over)
    return ReplicaTrace(
        sweeps=np.array(frames_sweep), energies=np.array(frames_e),
        q=np.array(frames_q), overflow=np.array(frames_over),
        acceptance=accepted / max(attempted, 1), step_size_final=step,
        max_energy_drift=max_drift, final_positions=pos.copy())


def run_canonical(spec: PotentialSpec, N: int, L: float, beta: float, R: float,
                  params: MCParams, d: int = 2) -> MCResult:
    """Sample the canonical Gibbs measure and average the size frequencies.

    Standard errors come from the scatter of per-replica means (so at least
    two replicas are needed for a nonzero error bar).  Bit-identical per
    (seed, replica count).
    """
    if N < 1 or L <= 0 or beta <= 0:
        raise ParameterError("need N >= 1, L > 0, beta > 0")
    if R <= spec.b:
        raise ParameterError("connectivity radius R must exceed the support b")
    rho = N / L ** d
    rho_cp = close_packing_density(spec.r_hc, d)
    if rho > 0.8 * rho_cp:
        raise ClusterGasError(
            f"density {rho:.4g} above 0.8 of the close packing value {rho_cp:.4g}")
    traces = [_run_replica(spec, N, L, beta, R, params, r, d)
              for r in range(params.replicas)]
    kt = params.track_k_max
    rep_means = np.array([t.q.mean(axis=0) for t in traces])  # replicas x kt
    rep_over = np.array([t.overflow.mean() for t in traces])
    grand = rep_means.mean(axis=0)
    if params.replicas >= 2:
        se = rep_means.std(axis=0, ddof=1) / math.sqrt(params.replicas)
        se_over = float(rep_over.std(ddof=1) / math.sqrt(params.replicas))
    else:
        se = np.zeros(kt)
        se_over = 0.0
    q_bar = {k + 1: (float(grand[k]), float(se[k])) for k in range(kt)}
    q_bar["overflow"] = (float(rep_over.mean()), se_over)
    energies = np.concatenate([t.energies for t in traces])
    energy_summary = {
        "mean": float(energies.mean()), "std": float(energies.std()),
        "first": float(energies[0]), "last": float(energies[-1]),
        "max_incremental_drift": max(t.max_energy_drift for t in traces),
    }
    result = MCResult(
        q_bar=q_bar,
        acceptance_rate=float(np.mean([t.acceptance for t in traces])),
        energy_summary=energy_summary,
        equilibration={},
        provenance={
            "spec_id": spec.spec_id, "N": N, "L": L, "beta": beta, "R": R, "d": d,
            "n_sweeps": params.n_sweeps, "burn_in_sweeps": params.burn_in_sweeps,
            "step_size": params.step_size, "measure_every": params.measure_every,
            "replicas": params.replicas, "seed": params.seed,
            "track_k_max": params.track_k_max,
        },
        traces=tuple(traces))
    return replace(result, equilibration=equilibration_check(result))


def equilibration_check(result: MCResult) -> dict:
    """Split-half and cross-replica discrepancies on the size frequencies.

    Fails when any observable moves by more than 5 pooled standard errors;
    replicas with identical position streams are flagged as a degenerate
    zero-variance anomaly rather than passed.
    """
    traces = result.traces
    if len(traces) < 2:
        return {"pass": True, "note": "single replica: only split-half applies",
            "max_split_sigma": 0.0, "max_cross_sigma": 0.0, "anomaly": False}
    anomaly = False
    for i in range(len(traces)):
        for j in range(i + 1, len(traces)):
            a, bb = traces[i].final_positions, traces[j].final_positions
            if a.shape == bb.shape and np.array_equal(a, bb):
                anomaly = True
    max_split = 0.0
    max_cross = 0.0
    kt = traces[0].q.shape[1]
    rep_means = np.array([t.q.mean(axis=0) for t in traces])
    grand = rep_means.mean(axis=0)
    pooled = rep_means.std(axis=0, ddof=1) / math.sqrt(len(traces))
    for t in traces:
        half = t.q.shape[0] // 2
        if half < 1:
            continue
        first, second = t.q[:half].mean(axis=0), t.q[half:].mean(axis=0)
        for k in range(kt):
            se = max(pooled[k], 1e-15) if pooled[k] > 0 else None
            disc = abs(first[k] - second[k])
            if se is None:
                if disc > 0:
                    max_split = INF
                continue
            max_split = max(max_split, disc / (se * math.sqrt(2.0)))
    for k in range(kt):
        if pooled[k] > 0:
            for r in range(len(traces)):
                max_cross = max(max_cross, abs(rep_means[r, k] - grand[k]) / pooled[k])
        elif any(abs(rep_means[r, k] - grand[k]) > 0 for r in range(len(traces))):
            max_cross = INF
    passed = (max_split <= 5.0) and (max_cross <= 5.0 * math.sqrt(len(traces))) and not anomaly
    return {"pass": bool(passed), "max_split_sigma": float(max_split),
            "max_cross_sigma": float(max_cross), "anomaly": bool(anomaly)}


@dataclass(frozen=True)
class LLNReport:
    nu: float
    nu_star: float
    regime: str  # "dominant_size" (nu above threshold) or "escaping" (below)
    target_k: int | None
    prediction: tuple
    K: int
    rows: tuple  # (beta, rho, L, observable, stderr)
    improvements: tuple  # pairwise trend comparisons (i, j, improved)

    @property
    def final_observable(self) -> float:
        return self.rows[-1][3]


def lln_experiment(spec: PotentialSpec, table: GroundStateTable, nu: float,
                   beta_list, N: int, params: MCParams, d: int = 2,
                   K: int = 3) -> LLNReport:
    """Limit-law trend experiment along rho = exp(-beta nu).

    Above the threshold the predicted dominant size k(nu) should carry
    frequency approaching 1 as beta grows; below it, the mass in sizes
    <= K should fade.  Observables are reported per beta together with the
    variational prediction; the improvement flags compare every pair of
    betas (larger beta should sit closer to the limit).
    """
    if table.nu_star is None:
        raise ParameterError("table has no nu_star")
    res = mu(nu, table)
    kinks_guard = min(abs(nu - table.nu_star), 1e9)
    if kinks_guard < 1e-9:
        raise ParameterError("nu sits on the threshold kink; pick it off the kink set")
    betas = sorted(float(b) for b in beta_list)
    if nu > table.nu_star:
        regime = "dominant_size"
        finite = sorted(k for k in res.argmin if k != BULK)
        if not finite:
            raise ParameterError("no finite dominant size at this nu")
        target = finite[0]
    else:
        regime = "escaping"
        target = None
    rows = []
    for bi, beta in enumerate(betas):
        rho = math.exp(-beta * nu)
        rho_cp = close_packing_density(spec.r_hc, d)
        if rho > 0.8 * rho_cp:
            raise ClusterGasError(f"rho = {rho:.4g} at beta={beta} exceeds the feasibility guard")
        L = (N / rho) ** (1.0 / d)
        track = max(params.track_k_max, K, (target or 1) + 2)
        result = run_canonical(spec, N, L, beta, R=1.1 * spec.b,
                               params=replace(params, seed=params.seed + 7919 * bi,
                                              track_k_max=track), d=d)
        if regime == "dominant_size":
            obs, se = result.q_bar[target]
        else:
            obs = sum(result.q_bar[k][0] for k in range(1, K + 1))
            se = math.sqrt(sum(result.q_bar[k][1] ** 2 for k in range(1, K + 1)))
        rows.append((beta, rho, L, obs, se))
    # distance to the limiting value: 1 for the dominant size, 0 for escape
    err = [abs(1.0 - r[3]) if regime == "dominant_size" else abs(r[3]) for r in rows]
    improvements = []
    for i in range(len(rows)):
        for j in range(i + 1, len(rows)):
            improvements.append((i, j, bool(err[j] <= err[i] + 1e-12)))
    return LLNReport(nu=nu, nu_star=table.nu_star, regime=regime, target_k=target,
                     prediction=tuple(sorted((str(b) if b == BULK else int(b))
                                             for b in res.argmin)),
                     K=K, rows=tuple(rows), improvements=tuple(improvements))


def result_to_json(result: MCResult) -> str:
    payload = {
        "q_bar": {str(k): list(v) for k, v in result.q_bar.items()},
        "acceptance_rate": result.acceptance_rate,
        "energy_summary": result.energy_summary,
        "equilibration": result.equilibration,
        "provenance": result.provenance,
    }
    return canonical_json(payload)


def trace_to_csv(result: MCResult, path, replica: int = 0) -> None:
    t = result.traces[replica]
    kt = t.q.shape[1]
    header = ["sweep", "energy"] + [f"q_{k}" for k in range(1, kt + 1)] + ["overflow_mass"]
    with open(path, "w", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for i in range(len(t.sweeps)):
            cells = [str(int(t.sweeps[i])), format(t.energies[i], ".17g")]
            cells += [format(v, ".17g") for v in t.q[i]]
            cells.append(format(t.overflow[i], ".17g"))
            fh.write(",".join(cells) + "\n")
