"""Regulatory special cases: one-period SCR and the three-stage
decomposition of production cost into best estimate and risk margin.

All three stages assume annual-only cash flows and a one-year risk
measure rho that is translation-invariant and positively homogeneous
(worst case, value-at-risk, or expected shortfall). Stage 1 values the
liability as a whole: invest A_0 risk-free so the fulfillment condition
binds, then solve the expected-excess-return condition for the capital
SCR_0. Stage 2 splits A_0 = BEL_0 + RM_0 + SCR_0, defining the best
estimate by a conditional-expectation separation on the fulfillment set
M_1. Stage 3 drops the positive part from the financiability condition,
which lowers SCR_0 and raises the reported cost; with deterministic
SCRs and flat rates its risk-margin recursion unrolls to the familiar
summation formula RM_0 = CoC * sum_i SCR_i / (1+r)^(i+1).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Mapping, Optional, Sequence, Tuple

from .engine import LiabilitySpec
from .errors import (
    BadRate,
    FixedPointDivergence,
    InteriorFlowsPresent,
    MassOutsideM1,
)
from .lattice import ScenarioTree
from .market import TradableSet
from .risk import DiscreteDistribution, RiskMeasureSpec, apply_measure

TOL = 1e-9


@dataclass(frozen=True)
class RateCurve:
    """One-period risk-free rate per annual node (dates 0 .. T-1)."""

    values: Mapping[int, float]

    def __post_init__(self):
        for node, r in self.values.items():
            if 1.0 + r <= 0.0:
                raise BadRate(f"1 + r must be positive, got r = {r} at node {node}")

    def at(self, node: int) -> float:
        return float(self.values[node])

    @staticmethod
    def flat(tree: ScenarioTree, r: float) -> "RateCurve":
        nodes = [
            n
            for i in range(tree.grid.horizon)
            for n in tree.nodes_at(i)
        ]
        return RateCurve({n: r for n in nodes})

    @staticmethod
    def from_market(market: TradableSet, tree: ScenarioTree) -> "RateCurve":
        values = {}
        for i in range(tree.grid.horizon):
            for node in tree.nodes_at(i):
                values[node] = market.period_rate(node)
        return RateCurve(values)

    def is_flat(self) -> bool:
        vs = list(self.values.values())
        return all(abs(v - vs[0]) <= 1e-12 for v in vs)


@dataclass(frozen=True)
class PeriodState:
    """Per child state at the period end: probability, net liability
    outflow, and the continuation values."""

    prob: float
    x: float
    bel: float
    rm: float

    @property
    def liability(self) -> float:
        return self.x + self.bel + self.rm


def _check_rates(r: float, eta: float) -> None:
    if 1.0 + r <= 0.0:
        raise BadRate(f"1 + r must be positive, got r = {r}")
    if 1.0 + r + eta <= 0.0:
        raise BadRate(f"1 + r + eta must be positive, got {1.0 + r + eta}")


def _liability_dist(states: Sequence[PeriodState]) -> DiscreteDistribution:
    return DiscreteDistribution.from_atoms(
        [(s.liability, s.prob) for s in states]
    )


def stage1_value(
    states: Sequence[PeriodState], r: float, eta: float, rho: RiskMeasureSpec
) -> Tuple[float, float, float, float]:
    """First stage: value as a whole with risk-free investment.

    A_0 = rho(-L_1)/(1+r) makes the fulfillment condition bind; on
    M_1 = {L_1 <= rho(-L_1)} the capital payoff is (1+r)A_0 - L_1 and
    SCR_0 solves the expected-excess-return condition with equality.
    Returns (A_0, SCR_0, vbar_0, P[M_1]).
    """
    _check_rates(r, eta)
    l_dist = _liability_dist(states)
    threshold = apply_measure(rho, l_dist.negated())
    a0 = threshold / (1.0 + r)
    p_m1 = 0.0
    excess = 0.0
    for s in states:
        if s.liability <= threshold + TOL:
            p_m1 += s.prob
            excess += s.prob * (threshold - s.liability)
    scr = excess / (1.0 + r + eta)
    return a0, scr, a0 - scr, p_m1


def stage1_closed_form(
    states: Sequence[PeriodState], r: float, eta: float, rho: RiskMeasureSpec
) -> float:
    """The introductory closed form, valid only when P[M_1] = 1:

    vbar_0 = E[L_1]/(1+r) + eta/(1+r+eta) * rho((E[L_1] - L_1)/(1+r)).
    """
    _check_rates(r, eta)
    l_dist = _liability_dist(states)
    threshold = apply_measure(rho, l_dist.negated())
    outside = sum(s.prob for s in states if s.liability > threshold + TOL)
    if outside > 1e-12:
        raise MassOutsideM1(
            f"closed form needs P[M_1] = 1; mass {outside} lies above rho(-L)"
        )
    mean = l_dist.mean()
    deviation = DiscreteDistribution.from_atoms(
        [((mean - s.liability) / (1.0 + r), s.prob) for s in states]
    )
    return mean / (1.0 + r) + eta / (1.0 + r + eta) * apply_measure(rho, deviation)


def stage2_decompose(
    states: Sequence[PeriodState],
    r: float,
    eta: float,
    rho: RiskMeasureSpec,
    bel_shape: Optional[Sequence[float]] = None,
    damping: float = 0.5,
    tol: float = 1e-10,
    max_iter: int = 200,
) -> Tuple[float, float, float, float]:
    """Second stage: split the value into BEL_0 + RM_0 with SCR_0.

    The best estimate solves E[1_M (A_1^BEL - X_1 - BEL_1)] = 0. With the
    default risk-free BEL investment, M_1 = {L_1 <= rho(-L_1)} does not
    depend on BEL_0 and everything is explicit. A non-risk-free shape
    (per-state gross return of one unit invested for BEL) couples M_1 to
    BEL_0 and is resolved by damped fixed-point iteration.
    Returns (BEL_0, RM_0, SCR_0, P[M_1]).
    """
    _check_rates(r, eta)
    if bel_shape is None:
        shape = [1.0 + r] * len(states)
    else:
        shape = list(bel_shape)
        if len(shape) != len(states):
            raise ValueError("bel_shape must give one gross return per state")

    def split(bel0: float):
        a1 = [bel0 * g for g in shape]
        mismatch_dist = DiscreteDistribution.from_atoms(
            [(a - s.liability, s.prob) for a, s in zip(a1, states)]
        )
        mismatch = apply_measure(rho, mismatch_dist)
        member = [
            a - s.liability >= -mismatch - TOL for a, s in zip(a1, states)
        ]
        p_m1 = sum(s.prob for s, m in zip(states, member) if m)
        num = sum(s.prob * (s.x + s.bel) for s, m in zip(states, member) if m)
        den = sum(s.prob * g for s, g, m in zip(states, shape, member) if m)
        new_bel0 = num / den if den > 0 else 0.0
        return new_bel0, mismatch, member, p_m1

    bel0, mismatch, member, p_m1 = split(0.0)
    if bel_shape is None:
        # Risk-free: M_1 is independent of BEL_0, one pass is exact.
        bel0, mismatch, member, p_m1 = split(bel0)
    else:
        for _ in range(max_iter):
            new_bel0, mismatch, member, p_m1 = split(bel0)
            if abs(new_bel0 - bel0) <= tol:
                bel0 = new_bel0
                break
            bel0 = (1.0 - damping) * bel0 + damping * new_bel0
        else:
            raise FixedPointDivergence("stage-2 BEL fixed point did not converge")
        _, mismatch, member, p_m1 = split(bel0)

    e_rm1 = sum(s.prob * s.rm for s, m in zip(states, member) if m)
    rm0 = ((1.0 + r + eta) - p_m1 * (1.0 + r)) * mismatch / (
        (1.0 + r + eta) * (1.0 + r)
    ) + e_rm1 / (1.0 + r + eta)
    scr0 = mismatch / (1.0 + r) - rm0
    return bel0, rm0, scr0, p_m1


def stage3_decompose(
    states: Sequence[PeriodState], r: float, eta: float, rho: RiskMeasureSpec
) -> Tuple[float, float, float, float]:
    """Third stage: drop the positive part from the financiability
    condition and invest everything risk-free.

    BEL_0 = (E[X_1] + E[BEL_1])/(1+r); the risk margin picks up the
    discounted capital cost plus the discounted expected future margin;
    SCR_0 comes from the mismatch equation and is floored at zero.
    Returns (BEL_0, RM_0, SCR_0, P[M_1]).
    """
    _check_rates(r, eta)
    bel0 = sum(s.prob * (s.x + s.bel) for s in states) / (1.0 + r)
    a1 = (1.0 + r) * bel0
    mismatch_dist = DiscreteDistribution.from_atoms(
        [(a1 - s.liability, s.prob) for s in states]
    )
    mismatch = apply_measure(rho, mismatch_dist)
    e_rm1 = sum(s.prob * s.rm for s in states)
    rm0 = eta * mismatch / ((1.0 + r + eta) * (1.0 + r)) + e_rm1 / (1.0 + r + eta)
    scr0 = mismatch / (1.0 + r) - rm0
    if scr0 < 0.0:
        scr0 = 0.0
        rm0 = mismatch / (1.0 + r)
    p_m1 = sum(
        s.prob for s in states if a1 - s.liability >= -mismatch - TOL
    )
    return bel0, rm0, scr0, p_m1


@dataclass(frozen=True)
class SolvencyRow:
    node: int
    date: int
    bel: float
    rm: float
    scr: float
    p_m1: float
    stage: int

    @property
    def total(self) -> float:
        return self.bel + self.rm


@dataclass
class SolvencyReport:
    stage: int
    rows: Dict[int, SolvencyRow]
    sii_formula_rm0: Optional[float] = None  # set in the deterministic case

    def row_at_root(self) -> SolvencyRow:
        return self.rows[0]


def solvency_ii_risk_margin(
    scr_path: Sequence[float], r: float, eta: float
) -> float:
    """RM_0 = CoC * sum_i SCR_i / (1+r)^(i+1) for a deterministic SCR
    path under flat rates."""
    return eta * sum(
        scr / (1.0 + r) ** (i + 1) for i, scr in enumerate(scr_path)
    )


def multi_period_solvency(
    liab: LiabilitySpec,
    rates: RateCurve,
    eta: float,
    rho: RiskMeasureSpec,
    stage: int,
    tree: ScenarioTree,
) -> SolvencyReport:
    """Backward recursion applying the chosen stage at every annual node.

    Liability flows must sit on annual dates only (inflows are netted
    against outflows). Leaves start from BEL = terminal value, RM = 0.
    In the stage-3 case with per-date deterministic SCRs and flat rates
    the report also carries the Solvency II summation formula value for
    cross-checking.
    """
    if stage not in (1, 2, 3):
        raise ValueError(f"stage must be 1, 2, or 3, got {stage}")
    for node, v in list(liab.outflows.items()) + list(liab.inflows.items()):
        if v != 0.0 and tree.date_of(node).denominator != 1:
            raise InteriorFlowsPresent(
                f"cash flow at interior date {tree.date_of(node)} (node {node})"
            )
    T = tree.grid.horizon
    J = len(tree.grid.dates) - 1
    bel: Dict[int, float] = {}
    rm: Dict[int, float] = {}
    rows: Dict[int, SolvencyRow] = {}
    for leaf in tree.by_date[J]:
        bel[leaf] = liab.y(leaf)
        rm[leaf] = 0.0

    for i in range(T - 1, -1, -1):
        j1 = tree.grid.index(i + 1)
        for node in tree.nodes_at(i):
            kids = tree.descendants_at(node, j1)
            total_p = sum(tree.path_probability(node, c) for c in kids)
            states = [
                PeriodState(
                    tree.path_probability(node, c) / total_p,
                    liab.x(c) - liab.z(c),
                    bel[c],
                    rm[c],
                )
                for c in kids
            ]
            r = rates.at(node)
            if stage == 1:
                a0, scr, vbar, p_m1 = stage1_value(states, r, eta, rho)
                bel[node], rm[node] = vbar, 0.0
                rows[node] = SolvencyRow(node, i, vbar, 0.0, scr, p_m1, 1)
            elif stage == 2:
                b, m, scr, p_m1 = stage2_decompose(states, r, eta, rho)
                bel[node], rm[node] = b, m
                rows[node] = SolvencyRow(node, i, b, m, scr, p_m1, 2)
            else:
                b, m, scr, p_m1 = stage3_decompose(states, r, eta, rho)
                bel[node], rm[node] = b, m
                rows[node] = SolvencyRow(node, i, b, m, scr, p_m1, 3)

    report = SolvencyReport(stage, rows)
    if stage == 3 and rates.is_flat():
        per_date = []
        deterministic = True
        for i in range(T):
            scrs = [rows[n].scr for n in tree.nodes_at(i)]
            if max(scrs) - min(scrs) > 1e-9:
                deterministic = False
                break
            per_date.append(scrs[0])
        if deterministic:
            r0 = rates.at(tree.root)
            report.sii_formula_rm0 = solvency_ii_risk_margin(per_date, r0, eta)
    return report
