"""Shared small utilities: extended-real energies, d-ball volumes, seeded RNG
streams and canonical (reproducible) JSON/CSV formatting."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

INF = math.inf

# Absolute tolerance for simplex/mass identities throughout the package.
MASS_TOL = 1e-12


class ClusterGasError(Exception):
    """Base class for errors raised by this package."""


class DomainError(ClusterGasError):
    """An argument is outside the mathematical domain of an operation."""


class ParameterError(ClusterGasError):
    """A parameter violates a stated precondition; the message names it."""


class CapabilityError(ClusterGasError):
    """The requested case is outside the supported (dimension, size) range."""


def ball_volume(d: int, r: float) -> float:
    """Volume of the d-dimensional Euclidean ball of radius r, d in {1,2,3}."""
    if d == 1:
        return 2.0 * r
    if d == 2:
        return math.pi * r * r
    if d == 3:
        return 4.0 / 3.0 * math.pi * r ** 3
    raise CapabilityError(f"dimension d={d} not supported (expected 1, 2 or 3)")


def substream(seed: int, *key: int) -> np.random.Generator:
    """Deterministic child RNG for (seed, key...); keys are small nonneg ints.

    Independent streams for e.g. multistart index or replica index, so that
    parallel execution order can never change results.
    """
    return np.random.default_rng(np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(k) for k in key)))


@dataclass(frozen=True)
class Estimate:
    """A scalar estimate with a one-sigma error bar and provenance tag."""

    value: float
    stderr: float = 0.0
    provenance: str = ""

    def within(self, other: "Estimate", nsigma: float = 3.0, atol: float = 0.0) -> bool:
        tol = nsigma * math.hypot(self.stderr, other.stderr) + atol
        return abs(self.value - other.value) <= tol


def fmt(x: float) -> str:
    """Decimal, 17 significant digits: round-trip safe and stable."""
    if x == INF:
        return "inf"
    if x == -INF:
        return "-inf"
    return format(float(x), ".17g")


def _jsonable(obj):
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    return obj


def canonical_json(obj) -> str:
    """Serialize with sorted keys and fixed separators; byte-stable per input."""
    return json.dumps(_jsonable(obj), sort_keys=True, separators=(",", ":"), allow_nan=True)


def write_csv(path, header: list[str], rows) -> None:
    """Comma separated, LF newlines, 17-significant-digit floats."""
    with open(path, "w", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(fmt(v) if isinstance(v, float) else str(v) for v in row) + "\n")
