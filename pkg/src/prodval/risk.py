"""Lower quantiles, value-at-risk, and lower expected shortfall on finite
discrete distributions.

Conventions follow the regulatory usage: for a random variable Y with
negative realizations meaning losses,

    q_u(Y)   = inf{y : P[Y <= y] >= u}            (lower quantile)
    VaR_a(Y) = q_{1-a}(-Y)
    ES_a(Y)  = -(1/a) * integral_0^a q_u(Y) du    (lower expected shortfall)

The quantile function of a finite distribution is piecewise constant, so
the ES integral is evaluated exactly (no sampling).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

from .errors import BadLevel, EmptyDistribution

_PROB_TOL = 1e-12


@dataclass(frozen=True)
class DiscreteDistribution:
    """Finite distribution given by atoms (value, probability).

    Values may repeat; ``normalized()`` merges equal values. Optional
    ``labels`` tag each atom with the tree node it came from, which the
    state-price capital bound needs to match weights to outcomes.
    """

    values: tuple
    probs: tuple
    labels: Optional[tuple] = field(default=None)

    def __post_init__(self):
        if len(self.values) == 0:
            raise EmptyDistribution("distribution has no atoms")
        if len(self.values) != len(self.probs):
            raise ValueError("values and probs must have equal length")
        if self.labels is not None and len(self.labels) != len(self.values):
            raise ValueError("labels must match atom count")
        if any(p <= 0 for p in self.probs):
            raise ValueError("atom probabilities must be strictly positive")
        total = math.fsum(self.probs)
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"probabilities sum to {total}, not 1")

    @staticmethod
    def from_atoms(atoms: Sequence[tuple], labels=None) -> "DiscreteDistribution":
        values = tuple(float(v) for v, _ in atoms)
        probs = tuple(float(p) for _, p in atoms)
        return DiscreteDistribution(values, probs, tuple(labels) if labels else None)

    @staticmethod
    def point(value: float) -> "DiscreteDistribution":
        return DiscreteDistribution((float(value),), (1.0,))

    def normalized(self) -> "DiscreteDistribution":
        """Merge repeated values and rescale probabilities to sum to one."""
        total = math.fsum(self.probs)
        merged: dict = {}
        for v, p in zip(self.values, self.probs):
            merged[v] = merged.get(v, 0.0) + p / total
        items = sorted(merged.items())
        return DiscreteDistribution(
            tuple(v for v, _ in items), tuple(p for _, p in items)
        )

    def negated(self) -> "DiscreteDistribution":
        return DiscreteDistribution(
            tuple(-v for v in self.values), self.probs, self.labels
        )

    def shifted(self, a: float) -> "DiscreteDistribution":
        return DiscreteDistribution(
            tuple(v + a for v in self.values), self.probs, self.labels
        )

    def scaled(self, a: float) -> "DiscreteDistribution":
        if a < 0:
            raise ValueError("scale must be non-negative")
        return DiscreteDistribution(
            tuple(a * v for v in self.values), self.probs, self.labels
        )

    def mean(self) -> float:
        return math.fsum(v * p for v, p in zip(self.values, self.probs))

    def min(self) -> float:
        return min(self.values)

    def prob_at_least(self, threshold: float) -> float:
        return math.fsum(p for v, p in zip(self.values, self.probs) if v >= threshold)

    def _sorted(self):
        return sorted(zip(self.values, self.probs))


@dataclass(frozen=True)
class RiskMeasureSpec:
    """Risk-measure selector: ``full`` (worst case, rho = -min), ``var``
    or ``es`` at level ``alpha`` in (0, 1)."""

    variant: str
    alpha: Optional[float] = None

    def __post_init__(self):
        if self.variant not in ("full", "var", "es"):
            raise BadLevel(f"unknown risk measure variant {self.variant!r}")
        if self.variant in ("var", "es"):
            if self.alpha is None or not (0.0 < self.alpha < 1.0):
                raise BadLevel(f"alpha must lie in (0,1), got {self.alpha}")


def lower_quantile(dist: DiscreteDistribution, u: float) -> float:
    """Smallest atom value whose cumulative probability reaches u.

    Applies the infimum definition literally: the atom where the cumulative
    probability first reaches u (>= u, no interpolation).
    """
    if not (0.0 < u <= 1.0):
        raise BadLevel(f"quantile level must lie in (0,1], got {u}")
    cum = 0.0
    atoms = dist._sorted()
    for value, p in atoms:
        cum += p
        if cum >= u - _PROB_TOL:
            return value
    return atoms[-1][0]


def value_at_risk(dist: DiscreteDistribution, alpha: float) -> float:
    """VaR_alpha(Y) = q_{1-alpha}(-Y)."""
    if not (0.0 < alpha < 1.0):
        raise BadLevel(f"alpha must lie in (0,1), got {alpha}")
    return lower_quantile(dist.negated(), 1.0 - alpha)


def expected_shortfall(dist: DiscreteDistribution, alpha: float) -> float:
    """ES_alpha(Y) = -(1/alpha) * integral over (0, alpha] of q_u(Y) du.

    The quantile function is piecewise constant on the cumulative
    probability segments, so the integral is a finite sum of segment
    lengths clipped to (0, alpha].
    """
    if not (0.0 < alpha < 1.0):
        raise BadLevel(f"alpha must lie in (0,1), got {alpha}")
    integral = 0.0
    cum = 0.0
    for value, p in dist._sorted():
        lo = min(cum, alpha)
        cum += p
        hi = min(cum, alpha)
        if hi > lo:
            integral += value * (hi - lo)
        if cum >= alpha:
            break
    return -integral / alpha


def apply_measure(spec: RiskMeasureSpec, dist: DiscreteDistribution) -> float:
    """Dispatch rho(Y): full -> -min Y, var -> VaR, es -> ES."""
    if spec.variant == "full":
        return -dist.min()
    if spec.variant == "var":
        return value_at_risk(dist, spec.alpha)
    return expected_shortfall(dist, spec.alpha)
