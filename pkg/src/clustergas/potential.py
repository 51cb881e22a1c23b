"""Pair potentials with a hard core, compact support and an attractive tail.

The default family is a 12-6 form cut off by a C1 cubic taper so that the
potential reaches zero continuously at the support radius ``b``:

    v(r) = +inf                                 0 < r < r_hc
    v(r) = lj(r)                                r_hc <= r <= b - w
    v(r) = lj(r) * taper((r - (b-w)) / w)       b - w < r < b
    v(r) = 0                                    r >= b

with ``lj(r) = 4 eps [ (sigma/r)^12 - (sigma/r)^6 ]`` and
``taper(t) = 1 - 3 t^2 + 2 t^3`` (value 1 / slope 0 at t=0, value 0 /
slope 0 at t=1).  A raw 12-6 power law has unbounded support, hence the
cutoff; the energy scale stays exactly linear in ``eps``.

Energies are extended reals: the hard core is represented by ``math.inf``
returned directly, never by a large finite sentinel entering arithmetic.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .common import INF, DomainError, ParameterError, canonical_json

__all__ = [
    "PotentialSpec",
    "ValidationReport",
    "default_spec",
    "evaluate",
    "pair_energy",
    "pair_derivative",
    "pair_minimum",
    "inverse_power_12_6",
    "total_energy",
    "stability_constant",
    "measured_lipschitz",
    "validate_assumption_v",
    "spec_to_mapping",
    "spec_from_mapping",
]

_FORM = "tapered_lj_12_6"
_CONFIG_KEYS = ("r_hc", "b", "epsilon", "sigma", "taper_width")


@dataclass(frozen=True)
class PotentialSpec:
    """Parameters of one tapered 12-6 pair potential.

    ``attractive_window`` is an open interval (lo, b) on which v < 0 is
    certified by the validator; ``holder`` optionally carries a measured
    (exponent, constant) pair of a Hoelder/Lipschitz modulus on
    [r_min, infinity), needed by the uniform free-energy certificates.
    """

    r_hc: float
    b: float
    epsilon: float = 1.0
    sigma: float = 1.0
    taper_width: float = 0.5
    form: str = _FORM
    attractive_window: tuple[float, float] | None = None
    holder: tuple[float, float] | None = None

    def __post_init__(self):
        if self.form != _FORM:
            raise ParameterError(f"unknown potential form {self.form!r}")
        if self.r_hc < 0:
            raise ParameterError("r_hc must be >= 0")
        if self.b <= self.r_hc:
            raise ParameterError("support radius b must exceed r_hc")
        if not (0 < self.taper_width <= self.b - self.r_hc):
            raise ParameterError("taper_width must lie in (0, b - r_hc]")
        if self.epsilon <= 0 or self.sigma <= 0:
            raise ParameterError("epsilon and sigma must be positive")
        if self.attractive_window is None:
            object.__setattr__(self, "attractive_window", (self.b - self.taper_width, self.b))

    @property
    def spec_id(self) -> str:
        digest = hashlib.sha256(canonical_json(spec_to_mapping(self)).encode()).hexdigest()
        return digest[:12]

    def scaled(self, lam: float) -> "PotentialSpec":
        """Same shape with the energy scale multiplied by lam > 0."""
        return replace(self, epsilon=lam * self.epsilon)


def default_spec() -> PotentialSpec:
    return PotentialSpec(r_hc=0.8, b=2.5, epsilon=1.0, sigma=1.0, taper_width=0.5)


def inverse_power_12_6(r, c12: float, c6: float):
    """Untapered reference kernel c12 r^-12 - c6 r^-6 (no hard core, no cutoff)."""
    r = np.asarray(r, dtype=float)
    return c12 * r ** -12.0 - c6 * r ** -6.0


def _lj(spec: PotentialSpec, r: np.ndarray) -> np.ndarray:
    s6 = (spec.sigma / r) ** 6
    return 4.0 * spec.epsilon * (s6 * s6 - s6)


def _lj_prime(spec: PotentialSpec, r: np.ndarray) -> np.ndarray:
    s6 = (spec.sigma / r) ** 6
    return (24.0 * spec.epsilon / r) * (s6 - 2.0 * s6 * s6)


def pair_energy(spec: PotentialSpec, r) -> np.ndarray:
    """Vectorized v(r); +inf inside the hard core, exact 0 for r >= b."""
    r = np.asarray(r, dtype=float)
    if np.any(r <= 0):
        raise DomainError("pair distance must be positive")
    out = np.zeros_like(r)
    core = r < spec.r_hc
    live = (~core) & (r < spec.b)
    rl = np.where(live, r, spec.b)  # dummy value keeps power laws finite
    v = _lj(spec, rl)
    t0 = spec.b - spec.taper_width
    t = np.clip((rl - t0) / spec.taper_width, 0.0, 1.0)
    v *= 1.0 - t * t * (3.0 - 2.0 * t)
    out[live] = v[live]
    out[core] = INF
    return out


def pair_derivative(spec: PotentialSpec, r) -> np.ndarray:
    """dv/dr on (r_hc, infinity); caller guarantees r is outside the core."""
    r = np.asarray(r, dtype=float)
    out = np.zeros_like(r)
    live = (r >= spec.r_hc) & (r < spec.b)
    rl = np.where(live, r, spec.b)
    t0 = spec.b - spec.taper_width
    t = np.clip((rl - t0) / spec.taper_width, 0.0, 1.0)
    h = 1.0 - t * t * (3.0 - 2.0 * t)
    hp = -6.0 * t * (1.0 - t) / spec.taper_width
    d = _lj_prime(spec, rl) * h + _lj(spec, rl) * hp
    out[live] = d[live]
    return out


def evaluate(spec: PotentialSpec, r: float) -> float:
    """v(r) as an extended real.  r <= 0 is a domain error."""
    if r <= 0:
        raise DomainError("pair distance must be positive")
    return float(pair_energy(spec, np.asarray([r]))[0])


def pair_minimum(spec: PotentialSpec, tol: float = 1e-14) -> tuple[float, float]:
    """Golden-section minimum of v over [r_hc, b]; (argmin, min value).

    v is unimodal there for this family: 12-6 decreasing/increasing around
    its well, and on the taper the product of a negative increasing factor
    with a positive decreasing one keeps increasing toward 0.
    """
    lo = spec.r_hc if spec.r_hc > 0 else 1e-6 * spec.sigma
    hi = spec.b
    phi = (math.sqrt(5.0) - 1.0) / 2.0
    a, c = lo, hi
    x1 = c - phi * (c - a)
    x2 = a + phi * (c - a)
    f1 = evaluate(spec, x1)
    f2 = evaluate(spec, x2)
    while c - a > tol * spec.sigma:
        if f1 <= f2:
            c, x2, f2 = x2, x1, f1
            x1 = c - phi * (c - a)
            f1 = evaluate(spec, x1)
        else:
            a, x1, f1 = x1, x2, f2
            x2 = a + phi * (c - a)
            f2 = evaluate(spec, x2)
    xm = 0.5 * (a + c)
    return xm, evaluate(spec, xm)


def total_energy(spec: PotentialSpec, config) -> float:
    """Sum of v over all unordered pairs; +inf on any hard-core contact.

    ``config`` is a Configuration or a plain (N, d) position array.
    Single particles (empty pair sum) give exactly 0.
    """
    pos = np.asarray(getattr(config, "positions", config), dtype=float)
    if pos.ndim == 1:
        pos = pos[:, None]
    n = pos.shape[0]
    if n < 1:
        raise DomainError("total_energy needs at least one particle")
    if n == 1:
        return 0.0
    diff = pos[:, None, :] - pos[None, :, :]
    dist = np.sqrt((diff * diff).sum(axis=-1))
    iu = np.triu_indices(n, k=1)
    r = dist[iu]
    if np.any(r < spec.r_hc):
        return INF
    if np.any(r == 0.0):
        return INF if spec.r_hc > 0 else float(np.sum(pair_energy(spec, r[r > 0])))
    return float(np.sum(pair_energy(spec, r)))


def energy_and_gradient(spec: PotentialSpec, pos: np.ndarray) -> tuple[float, np.ndarray]:
    """(U, dU/dx) for a feasible configuration; U=+inf gives a zero gradient."""
    pos = np.asarray(pos, dtype=float)
    n = pos.shape[0]
    grad = np.zeros_like(pos)
    if n < 2:
        return 0.0, grad
    diff = pos[:, None, :] - pos[None, :, :]
    dist = np.sqrt((diff * diff).sum(axis=-1))
    iu = np.triu_indices(n, k=1)
    r = dist[iu]
    if np.any(r < spec.r_hc) or np.any(r == 0.0):
        return INF, grad
    u = float(np.sum(pair_energy(spec, r)))
    dv = pair_derivative(spec, dist[iu]) / r
    w = np.zeros((n, n))
    w[iu] = dv
    w = w + w.T
    grad = (w[:, :, None] * diff).sum(axis=1)
    return u, grad


def stability_constant(spec: PotentialSpec, d: int) -> float:
    """Rigorous lower bound on U_N/N when r_hc > 0.

    Disjoint r_hc/2-balls around the particles within distance b of a tagged
    one fit inside a ball of radius b + r_hc/2, so a particle has at most
    K - 1 interacting neighbours with K = ((b + r_hc/2)/(r_hc/2))^d, and
    U_N/N >= (K - 1) min(v) / 2.
    """
    if spec.r_hc <= 0:
        return -INF
    _, vmin = pair_minimum(spec)
    kmax = math.floor(((spec.b + spec.r_hc / 2.0) / (spec.r_hc / 2.0)) ** d)
    return 0.5 * (kmax - 1) * min(vmin, 0.0)


def measured_lipschitz(spec: PotentialSpec, r_min: float, samples: int = 20001) -> tuple[float, float]:
    """(exponent, constant) with exponent 1: max |v'| on [r_min, b] by dense scan."""
    if r_min < spec.r_hc:
        raise ParameterError("r_min below the hard core: modulus undefined there")
    grid = np.linspace(max(r_min, 1e-9), spec.b, samples)
    c = float(np.max(np.abs(pair_derivative(spec, grid))))
    return 1.0, c


@dataclass(frozen=True)
class ValidationReport:
    """Outcome of the structural checks, one entry per assumption clause."""

    checks: list = field(default_factory=list)  # (name, passed, witness)
    stability_evidence: list = field(default_factory=list)  # (N, E_N/N)

    @property
    def all_passed(self) -> bool:
        return all(ok for _, ok, _ in self.checks)


def validate_assumption_v(
    spec: PotentialSpec,
    probe_sizes=(2, 3, 4, 5, 6),
    probe_budget: int = 40,
    d: int = 2,
    seed: int = 0,
) -> ValidationReport:
    """Check the structural clauses exactly; report stability evidence only.

    Clauses (1) hard core, (3) compact support, (4) attractive tail and
    (5) continuity are decidable from the spec and are checked directly.
    Clause (2), stability, is not decidable numerically: the report carries
    min E_N/N over multistart minimization at the probe sizes together with
    the packing-bound constant (finite iff r_hc > 0), and flags divergence.
    """
    if not probe_sizes:
        raise ParameterError("probe_sizes must be nonempty")
    checks = []

    # (1) hard core
    hc_ok = spec.r_hc >= 0 and math.isfinite(evaluate(spec, spec.r_hc + 1e-12))
    if spec.r_hc > 0:
        hc_ok = hc_ok and evaluate(spec, 0.5 * spec.r_hc) == INF
    checks.append(("hard_core", bool(hc_ok), spec.r_hc))

    # (2) stability: evidence only
    from . import ground_state  # local import avoids a module cycle

    evidence = []
    for n in probe_sizes:
        e_n, _ = ground_state.minimize_cluster(
            spec, int(n), opts=ground_state.MinimizeOpts(multistarts=probe_budget), seed=seed, d=d
        )
        evidence.append((int(n), e_n / n))
    per_particle = [e for _, e in evidence]
    c_pack = stability_constant(spec, d)
    if spec.r_hc > 0:
        stable_ok = all(e >= c_pack - 1e-9 for e in per_particle)
    else:
        diffs = np.diff(per_particle)
        blow_up = len(diffs) >= 2 and np.all(diffs < 0) and abs(diffs[-1]) > abs(diffs[0])
        stable_ok = not blow_up
    checks.append(("stability_evidence", bool(stable_ok), c_pack))

    # (3) compact support
    sup_ok = (
        math.isfinite(spec.b)
        and evaluate(spec, spec.b) == 0.0
        and evaluate(spec, 1.5 * spec.b) == 0.0
        and abs(evaluate(spec, spec.b - 1e-9 * spec.sigma)) < 1e-6 * spec.epsilon
    )
    checks.append(("compact_support", bool(sup_ok), spec.b))

    # (4) attractive tail, plus the nondegenerate negative part
    lo, hi = spec.attractive_window
    window = np.linspace(lo + 1e-9 * spec.sigma, hi - 1e-9 * spec.sigma, 2001)
    wmax = float(np.max(pair_energy(spec, window)))
    _, vmin = pair_minimum(spec)
    tail_ok = hi == spec.b and lo < hi and wmax < 0.0 and vmin < 0.0
    checks.append(("attractive_tail", bool(tail_ok), wmax))

    # (5) continuity on [r_hc, infinity): sampled jump bound
    grid = np.linspace(spec.r_hc if spec.r_hc > 0 else 1e-3 * spec.sigma, 1.1 * spec.b, 4001)
    vals = pair_energy(spec, grid)
    cont_ok = bool(np.all(np.isfinite(vals)))
    if cont_ok:
        spread = float(np.max(vals) - np.min(vals))
        jump = float(np.max(np.abs(np.diff(vals))))
        cont_ok = jump <= 0.05 * spread + 1e-12
    checks.append(("continuity", bool(cont_ok), jump if cont_ok or math.isfinite(vals[0]) else INF))

    return ValidationReport(checks=checks, stability_evidence=evidence)


def spec_to_mapping(spec: PotentialSpec) -> dict:
    """The documented five-key config section (reduced units, decimal)."""
    return {
        "r_hc": spec.r_hc,
        "b": spec.b,
        "epsilon": spec.epsilon,
        "sigma": spec.sigma,
        "taper_width": spec.taper_width,
    }


def spec_from_mapping(mapping: dict) -> PotentialSpec:
    unknown = set(mapping) - set(_CONFIG_KEYS)
    if unknown:
        raise ParameterError(f"unknown potential key(s): {sorted(unknown)}")
    missing = [k for k in _CONFIG_KEYS if k not in mapping]
    if missing:
        raise ParameterError(f"missing potential key(s): {missing}")
    return PotentialSpec(**{k: float(mapping[k]) for k in _CONFIG_KEYS})
