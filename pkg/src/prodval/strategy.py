"""Investment strategies as predictable portfolio processes on the tree.

The portfolio chosen at a node is the holding over the following grid
interval, so the assignment at node n at date t is phi_{gamma(t)} on the
paths through n; nodes at t_max carry the extra assignment required by
the gamma(t_max) convention. Cash-flow accounting follows the portfolio
conversion equation

    phi_{gamma(t)} . S_t = phi_t . S_t + Z^phi_t + Z_t - X_t

whose left-minus-right residual is the basic bookkeeping check.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Dict, Iterable, Mapping, Optional, Set, Tuple

import numpy as np

from .errors import (
    CloseOutUnavailable,
    NodeOutsideSpan,
    StopNotAntichain,
    UnderlyingHasInflows,
)
from .lattice import ScenarioTree
from .market import RestrictionSet, TradableSet

SIGN_CLASSES = ("nonneg", "value_nonneg", "unrestricted")


@dataclass(frozen=True)
class CashflowProcess:
    """Non-negative inflows and outflows per node; missing nodes mean zero."""

    inflow: Mapping[int, float] = field(default_factory=dict)
    outflow: Mapping[int, float] = field(default_factory=dict)

    def __post_init__(self):
        for name, flows in (("inflow", self.inflow), ("outflow", self.outflow)):
            for node, v in flows.items():
                if v < 0:
                    raise ValueError(f"negative {name} {v} at node {node}")

    def z(self, node: int) -> float:
        return float(self.inflow.get(node, 0.0))

    def x(self, node: int) -> float:
        return float(self.outflow.get(node, 0.0))

    def net(self, node: int) -> float:
        return self.z(node) - self.x(node)

    def plus(self, other: "CashflowProcess") -> "CashflowProcess":
        inflow = dict(self.inflow)
        for n, v in other.inflow.items():
            inflow[n] = inflow.get(n, 0.0) + v
        outflow = dict(self.outflow)
        for n, v in other.outflow.items():
            outflow[n] = outflow.get(n, 0.0) + v
        return CashflowProcess(inflow, outflow)


@dataclass(frozen=True)
class Strategy:
    """Predictable portfolio process over a date span.

    ``assignment[n]`` is the portfolio chosen at node n (held over the
    next interval); ``initial[n]`` at t_min nodes is the portfolio held
    into the span start (defaults to zero).
    """

    tree: ScenarioTree
    n_assets: int
    assignment: Mapping[int, Tuple[float, ...]]
    initial: Mapping[int, Tuple[float, ...]] = field(default_factory=dict)
    sign_class: str = "nonneg"
    t_min: Fraction = Fraction(0)
    t_max: Optional[Fraction] = None

    def __post_init__(self):
        if self.sign_class not in SIGN_CLASSES:
            raise ValueError(f"unknown sign class {self.sign_class!r}")
        if self.t_max is None:
            object.__setattr__(self, "t_max", Fraction(self.tree.grid.horizon))
        for node in self.span_nodes():
            if node not in self.assignment:
                raise NodeOutsideSpan(f"assignment missing at node {node}")
        if self.sign_class == "nonneg":
            for node, x in self.assignment.items():
                if min(x, default=0.0) < -1e-12:
                    raise ValueError(
                        f"non-negative strategy has a negative unit at node {node}"
                    )

    @staticmethod
    def zero(tree: ScenarioTree, n_assets: int, sign_class: str = "nonneg") -> "Strategy":
        z = (0.0,) * n_assets
        return Strategy(
            tree, n_assets, {n: z for n in range(tree.n_nodes)}, sign_class=sign_class
        )

    def span_nodes(self) -> Iterable[int]:
        for node in range(self.tree.n_nodes):
            if self.in_span(node):
                yield node

    def in_span(self, node: int) -> bool:
        t = self.tree.date_of(node)
        return self.t_min <= t <= self.t_max

    def held_out(self, node: int) -> np.ndarray:
        if not self.in_span(node):
            raise NodeOutsideSpan(f"node {node} outside span")
        return np.asarray(self.assignment[node], dtype=float)

    def held_into(self, node: int) -> np.ndarray:
        if not self.in_span(node):
            raise NodeOutsideSpan(f"node {node} outside span")
        if self.tree.date_of(node) == self.t_min:
            x = self.initial.get(node)
            return np.zeros(self.n_assets) if x is None else np.asarray(x, dtype=float)
        return np.asarray(self.assignment[self.tree.parent[node]], dtype=float)

    def scaled(self, a: float) -> "Strategy":
        return Strategy(
            self.tree,
            self.n_assets,
            {n: tuple(a * v for v in x) for n, x in self.assignment.items()},
            {n: tuple(a * v for v in x) for n, x in self.initial.items()},
            self.sign_class if a >= 0 else "unrestricted",
            self.t_min,
            self.t_max,
        )

    def plus(self, other: "Strategy", sign_class: Optional[str] = None) -> "Strategy":
        if (self.t_min, self.t_max) != (other.t_min, other.t_max):
            raise NodeOutsideSpan("cannot add strategies with different spans")
        assignment = {
            n: tuple(
                a + b for a, b in zip(self.assignment[n], other.assignment[n])
            )
            for n in self.assignment
        }
        initial: Dict[int, Tuple[float, ...]] = {}
        for n in set(self.initial) | set(other.initial):
            a = self.initial.get(n, (0.0,) * self.n_assets)
            b = other.initial.get(n, (0.0,) * self.n_assets)
            initial[n] = tuple(x + y for x, y in zip(a, b))
        if sign_class is None:
            sign_class = (
                "nonneg"
                if self.sign_class == other.sign_class == "nonneg"
                else "unrestricted"
            )
        return Strategy(
            self.tree, self.n_assets, assignment, initial, sign_class, self.t_min, self.t_max
        )


def strategy_value(strategy: Strategy, market: TradableSet, node: int) -> float:
    """Market price of the portfolio held out of the node, after its flows."""
    return float(strategy.held_out(node) @ market.price(node))


def conversion_residual(
    strategy: Strategy,
    market: TradableSet,
    tree: ScenarioTree,
    flows: CashflowProcess,
    node: int,
) -> float:
    """Left minus right side of the conversion equation at the node."""
    held_in = strategy.held_into(node)
    held_out = strategy.held_out(node)
    s = market.price(node)
    lhs = float(held_out @ s)
    rhs = (
        float(held_in @ s)
        + float(held_in @ market.inflow(node))
        + flows.net(node)
    )
    return lhs - rhs


def is_self_financing(
    strategy: Strategy,
    market: TradableSet,
    tree: ScenarioTree,
    flows: CashflowProcess,
    tol: float = 1e-9,
) -> Dict[int, bool]:
    """Per node: the strategy's flows cancel and the conversion balances."""
    out = {}
    for node in strategy.span_nodes():
        balanced = abs(flows.z(node) - flows.x(node)) <= tol
        out[node] = balanced and abs(
            conversion_residual(strategy, market, tree, flows, node)
        ) <= tol
    return out


def _validate_stop(tree: ScenarioTree, stop: Set[int]) -> None:
    stop = set(stop)
    if not stop:
        raise StopNotAntichain("stop set is empty")
    for node in stop:
        m = tree.parent[node]
        while m is not None:
            if m in stop:
                raise StopNotAntichain(
                    f"stop node {node} is a descendant of stop node {m}"
                )
            m = tree.parent[m]
    # A stopping time must trigger on every path.
    for leaf in tree.by_date[len(tree.grid.dates) - 1]:
        m = leaf
        hit = False
        while m is not None:
            if m in stop:
                hit = True
                break
            m = tree.parent[m]
        if not hit:
            raise StopNotAntichain(f"no stop node on the path to leaf {leaf}")


def stop_status(tree: ScenarioTree, stop: Set[int], node: int) -> str:
    """'before', 'at', or 'after' the stopping time along this node's path."""
    if node in stop:
        return "at"
    m = tree.parent[node]
    while m is not None:
        if m in stop:
            return "after"
        m = tree.parent[m]
    return "before"


def stopped(strategy: Strategy, tree: ScenarioTree, stop: Set[int]) -> Strategy:
    """phi' with phi'_t = phi_t for t <= tau and zero afterwards.

    The assignment at a stop node is zeroed: it is the portfolio held out
    of tau, and the liability is extinguished there.
    """
    _validate_stop(tree, stop)
    zero = (0.0,) * strategy.n_assets
    assignment = {}
    for node in strategy.span_nodes():
        status = stop_status(tree, stop, node)
        assignment[node] = strategy.assignment[node] if status == "before" else zero
    return Strategy(
        strategy.tree,
        strategy.n_assets,
        assignment,
        dict(strategy.initial),
        strategy.sign_class,
        strategy.t_min,
        strategy.t_max,
    )


def short_position_cashflows(
    underlying: Strategy,
    stop: Set[int],
    market: TradableSet,
    tree: ScenarioTree,
    flows: CashflowProcess,
    pay_at_tmax: bool = False,
) -> CashflowProcess:
    """Cash flows of the short-position liability L(phi).

    Outflows are the underlying's X_t before the stop, the liquidation
    value phi_tau.S_tau + Z^phi_tau at the stop, and zero afterwards.
    With ``pay_at_tmax`` the liquidation is deferred to the span end
    instead (the close-out argument makes the two interchangeable).
    """
    for node, v in flows.inflow.items():
        if v > 0:
            raise UnderlyingHasInflows(f"underlying has inflow {v} at node {node}")
    if pay_at_tmax:
        stop = set(tree.nodes_at(underlying.t_max))
    _validate_stop(tree, stop)
    outflow: Dict[int, float] = {}
    for node in underlying.span_nodes():
        status = stop_status(tree, stop, node)
        if status == "before":
            x = flows.x(node)
        elif status == "at":
            held = underlying.held_into(node)
            x = float(held @ market.payoff(node))
        else:
            x = 0.0
        if x != 0.0:
            outflow[node] = x
    return CashflowProcess({}, outflow)


@dataclass(frozen=True)
class GeneralStrategyDecomposition:
    """phi = phi+ - phi- with the star liability of the short side."""

    plus: Strategy
    minus: Strategy
    star_outflow: Dict[int, float]
    star_inflow: Dict[int, float]

    def star_flows(self) -> CashflowProcess:
        return CashflowProcess(self.star_inflow, self.star_outflow)


def decompose_general(
    strategy: Strategy, market: TradableSet, tree: ScenarioTree
) -> GeneralStrategyDecomposition:
    """Split a signed strategy into phi+ plus the liability L*(phi-).

    X*_t prices closing out the short portfolio held into t (price plus
    inflows); Z*_t prices taking on the new short portfolio held out of
    t, zero at the span end.
    """
    if not market.close_out:
        raise CloseOutUnavailable(
            "general strategies need short positions available with close out"
        )
    pos = {
        n: tuple(max(v, 0.0) for v in x) for n, x in strategy.assignment.items()
    }
    neg = {
        n: tuple(max(-v, 0.0) for v in x) for n, x in strategy.assignment.items()
    }
    pos_init = {
        n: tuple(max(v, 0.0) for v in x) for n, x in strategy.initial.items()
    }
    neg_init = {
        n: tuple(max(-v, 0.0) for v in x) for n, x in strategy.initial.items()
    }
    plus = Strategy(
        tree, strategy.n_assets, pos, pos_init, "nonneg", strategy.t_min, strategy.t_max
    )
    minus = Strategy(
        tree, strategy.n_assets, neg, neg_init, "nonneg", strategy.t_min, strategy.t_max
    )
    star_out: Dict[int, float] = {}
    star_in: Dict[int, float] = {}
    for node in strategy.span_nodes():
        held_in = minus.held_into(node)
        star_out[node] = float(
            held_in @ market.price(node) + held_in @ market.inflow(node)
        )
        if tree.date_of(node) < strategy.t_max:
            star_in[node] = float(minus.held_out(node) @ market.price(node))
        else:
            star_in[node] = 0.0
    return GeneralStrategyDecomposition(plus, minus, star_out, star_in)


def general_value(
    strategy: Strategy, market: TradableSet, tree: ScenarioTree, node: int
) -> float:
    """v(phi) = v(phi+) - v(phi-); equals the signed portfolio's price."""
    return strategy_value(strategy, market, node)


def restriction_membership(
    strategy: Strategy,
    restriction: RestrictionSet,
    market: TradableSet,
    tol: float = 1e-9,
) -> Dict[int, Dict[str, bool]]:
    """Per node: membership in R, R^{>=0}, and R' (value non-negative)."""
    out = {}
    for node in strategy.span_nodes():
        x = strategy.held_out(node)
        in_r = restriction.contains(x, tol)
        in_r_nonneg = in_r and bool(x.min(initial=0.0) >= -tol)
        in_r_prime = in_r and strategy_value(strategy, market, node) >= -tol
        out[node] = {"R": in_r, "R_nonneg": in_r_nonneg, "R_prime": in_r_prime}
    return out
