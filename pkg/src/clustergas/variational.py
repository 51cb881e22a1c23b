"""The limiting variational problem over cluster-size frequency vectors.

For a tabulated energy sequence the objective is linear in the frequency
vector, so its minimum over the simplex-like feasible set is the lower
envelope of finitely many affine branches of the control parameter nu:
one branch (E_k - nu)/k per tabulated size plus the constant bulk branch.
All kinks are computed in closed form from pairwise branch crossings,
never by grid scanning.  Sizes beyond the table are represented by the
bulk branch; since (E_k - nu)/k decreases toward the bulk value along
admissible tables, truncation can only overestimate the envelope, which
is the documented bias direction.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .common import INF, MASS_TOL, ParameterError
from .ground_state import GroundStateTable

__all__ = [
    "BULK",
    "QVector",
    "MuResult",
    "Kink",
    "VariationalProfile",
    "g_nu",
    "mu",
    "profile",
    "minimizer",
    "concentration_bound",
    "profile_to_csv",
    "kinks_to_csv",
]

BULK = "BULK"
_TIE_TOL = 1e-12


@dataclass(frozen=True)
class QVector:
    """Frequencies q_k on a finite support; the rest of the mass escaped."""

    entries: dict

    def __post_init__(self):
        clean = {}
        for k, v in self.entries.items():
            k = int(k)
            v = float(v)
            if k < 1:
                raise ParameterError("cluster sizes must be >= 1")
            if v < -MASS_TOL or v > 1.0 + MASS_TOL:
                raise ParameterError(f"q_{k}={v} outside [0, 1]")
            if v != 0.0:
                clean[k] = v
        object.__setattr__(self, "entries", dict(sorted(clean.items())))
        if self.total > 1.0 + MASS_TOL:
            raise ParameterError(f"total mass {self.total} exceeds 1")

    @property
    def total(self) -> float:
        return float(sum(self.entries.values()))

    @property
    def escaped_mass(self) -> float:
        return 1.0 - self.total

    @classmethod
    def unit(cls, k: int) -> "QVector":
        return cls({int(k): 1.0})

    @classmethod
    def zero(cls) -> "QVector":
        return cls({})


def g_nu(q: QVector, table: GroundStateTable, nu: float) -> float:
    """sum_k q_k (E_k - nu)/k plus the escaped mass at the bulk value."""
    if table.e_infty is None:
        raise ParameterError("table has no e_infty")
    acc = 0.0
    for k, qk in q.entries.items():
        if k not in table.entries:
            raise ParameterError(f"q is supported on k={k}, beyond the table (k_max={table.k_max})")
        acc += qk * (table.entries[k].energy - nu) / k
    return acc + q.escaped_mass * table.e_infty


@dataclass(frozen=True)
class MuResult:
    value: float
    argmin: frozenset  # ints and possibly BULK
    gap: float  # second-lowest branch minus the value; inf if none


def _branch_values(table: GroundStateTable, nu: float) -> dict:
    vals = {k: (e.energy - nu) / k for k, e in table.entries.items()}
    vals[BULK] = table.e_infty
    return vals


def mu(nu: float, table: GroundStateTable) -> MuResult:
    """Envelope value, argmin set (ties within 1e-12) and gap above it."""
    if table.e_infty is None:
        raise ParameterError("table has no e_infty")
    vals = _branch_values(table, nu)
    value = min(vals.values())
    argmin = frozenset(b for b, v in vals.items() if v <= value + _TIE_TOL)
    others = [v for b, v in vals.items() if b not in argmin]
    gap = min(others) - value if others else INF
    return MuResult(value=value, argmin=argmin, gap=gap)


@dataclass(frozen=True)
class Kink:
    nu: float
    left_branch: object  # active for smaller nu
    right_branch: object


def _crossing(left, right, table: GroundStateTable) -> float:
    """Closed-form crossing of two branches (no grid resolution involved)."""
    if left == BULK:
        k = right
        return table.entries[k].energy - k * table.e_infty
    if right == BULK:
        k = left
        return table.entries[k].energy - k * table.e_infty
    k, m = left, right
    ek, em = table.entries[k].energy, table.entries[m].energy
    return (k * em - m * ek) / (k - m)


def _envelope_branches(table: GroundStateTable) -> list:
    """Active branches from the largest slope (bulk) down to slope -1 (k=1),
    by the standard lower-envelope sweep over lines sorted by slope."""
    lines = [(0.0, table.e_infty, BULK)] + [
        (-1.0 / k, e.energy / k, k) for k, e in sorted(table.entries.items(), reverse=True)
    ]  # sorted by decreasing slope: bulk, k_max, ..., 1
    stack: list = []  # (slope, intercept, id), crossing nus between neighbours
    nus: list = []
    for line in lines:
        while stack:
            s0, c0, _ = stack[-1]
            s1, c1, _ = line
            x = (c1 - c0) / (s0 - s1)
            if nus and x <= nus[-1] + 1e-15:
                stack.pop()
                nus.pop()
            else:
                stack.append(line)
                nus.append(x)
                break
        if not stack:
            stack.append(line)
    return [b for _, _, b in stack]


def profile(table: GroundStateTable, nu_min: float, nu_max: float,
            grid_count: int) -> "VariationalProfile":
    if not nu_min < nu_max:
        raise ParameterError("need nu_min < nu_max")
    if grid_count < 3:
        raise ParameterError("grid_count must be >= 3")
    if table.e_infty is None:
        raise ParameterError("table has no e_infty")
    active = _envelope_branches(table)
    kinks = []
    for left, right in zip(active[:-1], active[1:]):
        kinks.append(Kink(_crossing(left, right, table), left, right))
    grid = np.linspace(nu_min, nu_max, grid_count)
    values = np.empty(grid_count)
    argmins = []
    gaps = np.empty(grid_count)
    for i, nu in enumerate(grid):
        res = mu(float(nu), table)
        values[i] = res.value
        argmins.append(res.argmin)
        gaps[i] = res.gap
    nu_star = kinks[0].nu if kinks else None
    return VariationalProfile(nu_grid=grid, mu=values, argmin_sets=argmins,
                              gaps=gaps, kinks=tuple(kinks), nu_star=nu_star)


@dataclass(frozen=True)
class VariationalProfile:
    nu_grid: np.ndarray
    mu: np.ndarray
    argmin_sets: list
    gaps: np.ndarray
    kinks: tuple
    nu_star: float | None


def minimizer(nu: float, table: GroundStateTable) -> list:
    """Extreme minimizers of the objective at this nu.

    A single element off the kink set (a unit mass, or the zero vector for
    the bulk regime); at a kink, every extreme point of the optimal face.
    """
    res = mu(nu, table)
    out = []
    for b in sorted(res.argmin, key=lambda x: (x == BULK, x if x != BULK else 0)):
        out.append(QVector.zero() if b == BULK else QVector.unit(b))
    return out


@dataclass(frozen=True)
class ConcentrationBound:
    regime: str  # "below_threshold" or "above_threshold"
    nu: float
    eta: float
    nu_star: float
    bound: float
    argmin: frozenset | None = None
    gap: float | None = None

    def describe(self) -> str:
        if self.regime == "below_threshold":
            return f"sum_k q_k/k <= {self.bound}"
        ks = sorted(k for k in self.argmin if k != BULK)
        return f"mass on argmin sizes {ks} >= {self.bound}"


def concentration_bound(nu: float, table: GroundStateTable, eta: float) -> ConcentrationBound:
    """Constraints implied for any q with objective excess at most eta.

    Below the threshold every finite branch exceeds the bulk value by at
    least (nu* - nu)/k, so the per-size mass obeys sum q_k / k <= eta
    divided by that margin.  Above it, every non-optimal branch exceeds the
    minimum by the gap, so the optimal sizes keep mass 1 - eta/gap.
    Pure algebra on the table; nothing is estimated.
    """
    if eta < 0:
        raise ParameterError("eta must be >= 0")
    if table.nu_star is None:
        raise ParameterError("table has no nu_star")
    nu_star = table.nu_star
    if abs(nu - nu_star) < 1e-9:
        raise ParameterError("nu within 1e-9 of the threshold: both bounds degenerate")
    if nu < nu_star:
        return ConcentrationBound(regime="below_threshold", nu=nu, eta=eta,
                                  nu_star=nu_star, bound=eta / (nu_star - nu))
    res = mu(nu, table)
    finite_argmin = frozenset(b for b in res.argmin if b != BULK)
    if not finite_argmin:
        raise ParameterError("above the threshold but no finite optimal size; table inconsistent")
    return ConcentrationBound(regime="above_threshold", nu=nu, eta=eta, nu_star=nu_star,
                              bound=1.0 - eta / res.gap, argmin=finite_argmin, gap=res.gap)


def _branch_label(b) -> str:
    return BULK if b == BULK else f"k={b}"


def profile_to_csv(prof: VariationalProfile, path) -> None:
    from .common import fmt

    with open(path, "w", newline="\n") as fh:
        fh.write("nu,mu,argmin,gap\n")
        for nu, m, am, gp in zip(prof.nu_grid, prof.mu, prof.argmin_sets, prof.gaps):
            label = ";".join(_branch_label(b) for b in
                             sorted(am, key=lambda x: (x == BULK, x if x != BULK else 0)))
            fh.write(f"{fmt(float(nu))},{fmt(float(m))},{label},{fmt(float(gp))}\n")


def kinks_to_csv(prof: VariationalProfile, path) -> None:
    from .common import fmt

    with open(path, "w", newline="\n") as fh:
        fh.write("nu_kink,left_branch,right_branch\n")
        for kink in prof.kinks:
            fh.write(f"{fmt(kink.nu)},{_branch_label(kink.left_branch)},"
                     f"{_branch_label(kink.right_branch)}\n")
