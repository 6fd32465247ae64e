"""Core production machinery.

Valuation runs backward over one-year periods. At each annual node the
one-period builder does two steps: (1) find the smallest scale of the
configured strategy family whose year-end assets satisfy the fulfillment
condition, funding interior outflows along the way; (2) solve the
financiability condition with equality for the largest capital the
year-end excess (A' - L)_+ can raise. The production cost at the node is
the strategy value minus that capital; mode B clamps it at zero by
reducing the capital, mode A allows negative cost (which requires short
positions with close out on the market).

Cost is computed and stored at every node, including nodes reachable
only through failure, because the failure-resolution machinery scales
liabilities state by state.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .conditions import (
    CapitalSchedule,
    FinanciabilitySpec,
    FulfillmentSpec,
    audit_neutrality_to_tradables,
    fulfillment_satisfied,
    max_capital,
)
from .errors import (
    CloseOutUnavailable,
    MissingCost,
    NeutralityAuditFailed,
    NoBondAvailable,
    SpanMismatch,
    ValidationFailed,
)
from .lattice import ScenarioTree
from .market import RestrictionSet, TradableSet
from .risk import DiscreteDistribution
from .strategy import (
    CashflowProcess,
    Strategy,
    conversion_residual,
    short_position_cashflows,
    stopped,
    strategy_value,
)

TOL = 1e-9
INF = math.inf


# --- inputs ------------------------------------------------------------------


@dataclass(frozen=True)
class LiabilitySpec:
    """Contractual outflows, actual inflows, and terminal values per leaf."""

    outflows: Mapping[int, float] = field(default_factory=dict)
    inflows: Mapping[int, float] = field(default_factory=dict)
    terminal: Mapping[int, float] = field(default_factory=dict)

    def __post_init__(self):
        for name, flows in (("outflow", self.outflows), ("inflow", self.inflows)):
            for node, v in flows.items():
                if v < 0:
                    raise ValueError(f"negative liability {name} {v} at node {node}")
        for node, v in self.terminal.items():
            if not math.isfinite(v):
                raise ValueError(f"terminal value at node {node} must be finite")

    def x(self, node: int) -> float:
        return float(self.outflows.get(node, 0.0))

    def z(self, node: int) -> float:
        return float(self.inflows.get(node, 0.0))

    def y(self, node: int) -> float:
        return float(self.terminal.get(node, 0.0))

    def plus(self, other: "LiabilitySpec") -> "LiabilitySpec":
        out = dict(self.outflows)
        for n, v in other.outflows.items():
            out[n] = out.get(n, 0.0) + v
        inf_ = dict(self.inflows)
        for n, v in other.inflows.items():
            inf_[n] = inf_.get(n, 0.0) + v
        term = dict(self.terminal)
        for n, v in other.terminal.items():
            term[n] = term.get(n, 0.0) + v
        return LiabilitySpec(out, inf_, term)


@dataclass(frozen=True)
class IlliquidPortfolio:
    """Held-to-maturity assets, reduced to their aggregate inflow stream."""

    inflows: Mapping[int, float] = field(default_factory=dict)

    def __post_init__(self):
        for node, v in self.inflows.items():
            if v < 0:
                raise ValueError(f"negative illiquid inflow {v} at node {node}")

    def z(self, node: int) -> float:
        return float(self.inflows.get(node, 0.0))

    @staticmethod
    def none() -> "IlliquidPortfolio":
        return IlliquidPortfolio({})


@dataclass(frozen=True)
class StrategyFamily:
    """risk_free | fixed_mix over coordinate weights | explicit base."""

    variant: str
    mix_indices: Optional[Tuple[int, ...]] = None
    base: Optional[Strategy] = None

    def __post_init__(self):
        if self.variant not in ("risk_free", "fixed_mix", "explicit"):
            raise ValueError(f"unknown family variant {self.variant!r}")
        if self.variant == "explicit" and self.base is None:
            raise ValueError("explicit family needs a base strategy")
        if self.variant == "fixed_mix" and not self.mix_indices:
            raise ValueError("fixed_mix family needs asset indices to mix over")

    @staticmethod
    def risk_free() -> "StrategyFamily":
        return StrategyFamily("risk_free")

    @staticmethod
    def fixed_mix(indices: Sequence[int]) -> "StrategyFamily":
        return StrategyFamily("fixed_mix", mix_indices=tuple(indices))

    @staticmethod
    def explicit(base: Strategy) -> "StrategyFamily":
        return StrategyFamily("explicit", base=base)


@dataclass(frozen=True)
class EngineConfig:
    """Mode A allows negative production cost (needs close out); mode B
    clamps it at zero. ``grid_depth`` sets the fixed-mix simplex
    resolution 2**depth; ``bisection_tol`` is absolute on the scale."""

    mode: str = "B"
    family: StrategyFamily = field(default_factory=StrategyFamily.risk_free)
    bisection_tol: float = 1e-10
    grid_depth: int = 3

    def __post_init__(self):
        if self.mode not in ("A", "B"):
            raise ValueError(f"mode must be 'A' or 'B', got {self.mode!r}")


# --- outputs -----------------------------------------------------------------


@dataclass(frozen=True)
class BalanceSheetRow:
    node: int
    assets: float
    liabilities: float
    capital_payoff: float
    failure: str  # "none" | "default" | "cannot_continue"


@dataclass
class ProductionCostProcess:
    values: Dict[int, float]
    capital: Dict[int, float]
    params: Dict[int, tuple]
    strategy: Strategy
    rows: Dict[int, BalanceSheetRow]
    mode: str
    infeasible_nodes: List[int]

    @property
    def feasible(self) -> bool:
        return not self.infeasible_nodes

    def value_at(self, node: int) -> float:
        try:
            return self.values[node]
        except KeyError:
            raise MissingCost(f"no production cost stored at node {node}") from None


# --- balance sheet and failure -------------------------------------------------


def liability_flows(
    liab: LiabilitySpec,
    psi: IlliquidPortfolio,
    extra_inflows: Optional[Mapping[int, float]] = None,
) -> CashflowProcess:
    """Company-level flows for the conversion equation: liability and
    illiquid inflows in, contractual outflows out."""
    inflow: Dict[int, float] = {}
    for n, v in liab.inflows.items():
        inflow[n] = inflow.get(n, 0.0) + v
    for n, v in psi.inflows.items():
        inflow[n] = inflow.get(n, 0.0) + v
    for n, v in (extra_inflows or {}).items():
        inflow[n] = inflow.get(n, 0.0) + v
    return CashflowProcess(inflow, dict(liab.outflows))


def balance_sheet(
    node: int,
    liab: LiabilitySpec,
    strategy: Strategy,
    psi: IlliquidPortfolio,
    cost: float,
    market: TradableSet,
    mode: str = "B",
    extra_inflow: float = 0.0,
) -> BalanceSheetRow:
    """Assets and liabilities between the cash inflows and the liability
    payment at an annual date: A' = phi.S + inflows + (-vbar)_+ and
    L = X + (vbar)_+.

    In mode A the borrowed tradables worth (-vbar)_+ count as liquid
    resources when classifying a failure as default versus
    cannot-continue; in mode B they do not exist.
    """
    held = strategy.held_into(node)
    tradables = float(held @ market.payoff(node))
    inflows = liab.z(node) + psi.z(node) + extra_inflow
    assets = tradables + inflows + max(0.0, -cost)
    liabilities = liab.x(node) + max(0.0, cost)
    payoff = max(0.0, assets - liabilities)
    resources = tradables + inflows + (max(0.0, -cost) if mode == "A" else 0.0)
    kind = classify_failure(assets, liabilities, resources, liab.x(node))
    return BalanceSheetRow(node, assets, liabilities, payoff, kind)


def classify_failure(
    assets: float, liabilities: float, tradable_resources: float, outflow: float
) -> str:
    """No failure when A' >= L; otherwise default if the tradable
    resources cannot pay the liability outflow, else cannot-continue."""
    if assets >= liabilities - TOL:
        return "none"
    if tradable_resources < outflow - TOL:
        return "default"
    return "cannot_continue"


def detect_failure(row: BalanceSheetRow) -> str:
    return row.failure


# --- one-period construction ----------------------------------------------------


@dataclass
class OnePeriodResult:
    feasible: bool
    scale: float = INF
    capital: float = 0.0
    vbar: float = INF
    value: float = INF
    params: tuple = ()
    portfolios: Dict[int, Tuple[float, ...]] = field(default_factory=dict)


def _year_layers(tree: ScenarioTree, node_i: int, j0: int, j1: int) -> List[List[int]]:
    layers = [[node_i]]
    for _ in range(j1 - j0):
        layers.append([c for m in layers[-1] for c in tree.children[m]])
    return layers


def _roll_mix_linear(
    tree: ScenarioTree,
    market: TradableSet,
    node_i: int,
    j0: int,
    j1: int,
    weights: Mapping[int, float],
    scale: float,
    interior_net: Callable[[int], float],
):
    """Value-rebalanced mix without feasibility clamping.

    Pots and payoffs are affine in the scale, which the closed-form
    solver exploits; the result only has physical meaning where the pots
    are non-negative. Returns None if a weighted asset has no positive
    price somewhere in the year.
    """
    n = market.n_assets
    layers = _year_layers(tree, node_i, j0, j1)
    pot = {node_i: scale}
    portfolios: Dict[int, np.ndarray] = {}
    payoff: Dict[int, float] = {}
    for depth, layer in enumerate(layers[:-1]):
        last_step = depth + 1 == len(layers) - 1
        for m in layer:
            p = pot[m]
            x = np.zeros(n)
            for k, w in weights.items():
                if w == 0.0:
                    continue
                price = market.prices[m][k]
                if price <= 0.0:
                    return None
                x[k] = p * w / price
            portfolios[m] = x
            for c in tree.children[m]:
                res = float(x @ market.payoff(c))
                if last_step:
                    payoff[c] = res
                else:
                    pot[c] = res + interior_net(c)
    return pot, payoff, portfolios


def _mix_interior_feasible(pot: Mapping[int, float], node_i: int) -> bool:
    return all(v >= -TOL for m, v in pot.items() if m != node_i)


def _solve_affine_scale(
    tree, market, node_i, j0, j1, weights, ell, interior_net, fulfillment
):
    """Closed-form step 1 for the risk-free family.

    pot(s) and payoff(s) are affine in s; the bond's year payoff slope is
    the same constant g = 1 + R on every path, so translation solvability
    of the fulfillment condition gives s directly. Interior feasibility
    adds a lower bound from the zero-scale flow roll.
    """
    lin0 = _roll_mix_linear(tree, market, node_i, j0, j1, weights, 0.0, interior_net)
    lin1 = _roll_mix_linear(tree, market, node_i, j0, j1, weights, 1.0, interior_net)
    if lin0 is None or lin1 is None:
        return None
    pot0, payoff0, _ = lin0
    pot1, payoff1, _ = lin1

    s_feas = 0.0
    for m, b in pot0.items():
        if m == node_i:
            continue
        a = pot1[m] - b
        if b < -TOL:
            if a <= TOL * max(1.0, abs(b)):
                return None
            s_feas = max(s_feas, -b / a)

    gs = [payoff1[nu] - payoff0[nu] for nu in payoff1]
    g = gs[0]
    if g <= 0 or any(abs(x - g) > 1e-9 * max(1.0, g) for x in gs):
        return None
    surplus0 = _surplus_dist(tree, node_i, payoff0, ell)
    buffer = fulfillment.required_buffer(surplus0)
    if math.isinf(buffer) and buffer > 0:
        return None
    s_star = max(0.0, s_feas, buffer / g)

    lin = _roll_mix_linear(tree, market, node_i, j0, j1, weights, s_star, interior_net)
    pot, payoff, portfolios = lin
    if not _mix_interior_feasible(pot, node_i):
        return None
    return s_star, payoff, portfolios


def _bisect_scale(
    tree, market, node_i, j0, j1, weights, ell, interior_net, fulfillment, tol
):
    """Smallest scale satisfying interior feasibility and fulfillment.

    Both are monotone in the scale (pots and payoffs are non-decreasing),
    so the feasible set is an upper half line; bracket by doubling, then
    bisect to ``tol`` and return the feasible endpoint.
    """

    def ok(s: float) -> bool:
        lin = _roll_mix_linear(tree, market, node_i, j0, j1, weights, s, interior_net)
        if lin is None:
            return False
        pot, payoff, _ = lin
        if not _mix_interior_feasible(pot, node_i):
            return False
        return fulfillment_satisfied(
            fulfillment, _surplus_dist(tree, node_i, payoff, ell)
        )

    if any(math.isinf(v) for v in ell.values()) and fulfillment.variant == "full":
        return None
    if ok(0.0):
        return 0.0
    hi = 1.0
    while not ok(hi):
        hi *= 2.0
        if hi > 2.0**60:
            return None
    lo = 0.0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if ok(mid):
            hi = mid
        else:
            lo = mid
    return hi


def _explicit_with_addon(
    tree, market, node_i, j0, j1, base: Strategy, ell, interior_net, fulfillment
):
    """The base strategy's own year slice, topped up by s units of value
    in the period bond when its surplus misses the fulfillment condition.

    The base must already fund interior dates exactly (residual zero);
    the bond add-on is held through the year, so it leaves the interior
    conversion untouched and shifts every year-end payoff by s(1+R).
    """
    if not base.in_span(node_i):
        return None
    layers = _year_layers(tree, node_i, j0, j1)
    portfolios: Dict[int, np.ndarray] = {}
    payoff: Dict[int, float] = {}
    for depth, layer in enumerate(layers[:-1]):
        last_step = depth + 1 == len(layers) - 1
        for m in layer:
            x = base.held_out(m)
            if float(x @ market.price(m)) < -TOL:
                return None
            if m != node_i:
                held_in = base.held_out(tree.parent[m])
                resources = float(held_in @ market.payoff(m)) + interior_net(m)
                if abs(float(x @ market.price(m)) - resources) > 1e-7:
                    return None
            portfolios[m] = x
            for c in tree.children[m]:
                if last_step:
                    payoff[c] = float(x @ market.payoff(c))
    surplus0 = _surplus_dist(tree, node_i, payoff, ell)
    buffer = fulfillment.required_buffer(surplus0)
    base_value = float(base.held_out(node_i) @ market.price(node_i))
    if buffer <= 0.0:
        return 0.0, base_value, payoff, {m: x.copy() for m, x in portfolios.items()}
    if math.isinf(buffer):
        return None
    i = int(tree.date_of(node_i))
    try:
        k = market.bond_for_period(i)
    except NoBondAvailable:
        return None
    price_i = market.prices[node_i][k]
    g = 1.0 / price_i
    s_star = buffer / g
    units = s_star / price_i
    out_portfolios = {}
    for m, x in portfolios.items():
        x2 = x.copy()
        x2[k] += units
        out_portfolios[m] = x2
    payoff2 = {nu: v + units for nu, v in payoff.items()}
    return s_star, base_value + s_star, payoff2, out_portfolios


def _surplus_dist(
    tree: ScenarioTree,
    node_i: int,
    payoff: Mapping[int, float],
    ell: Mapping[int, float],
) -> DiscreteDistribution:
    targets = sorted(payoff)
    atoms = []
    for nu in targets:
        p = tree.path_probability(node_i, nu)
        atoms.append((payoff[nu] - ell[nu], p))
    total = sum(p for _, p in atoms)
    return DiscreteDistribution.from_atoms(
        [(v, p / total) for v, p in atoms], labels=targets
    )


def build_one_period(
    node_i: int,
    ell: Mapping[int, float],
    interior_net: Callable[[int], float],
    family: StrategyFamily,
    fulfillment: FulfillmentSpec,
    financiability: FinanciabilitySpec,
    market: TradableSet,
    tree: ScenarioTree,
    rate: float,
    mode: str = "B",
    bisection_tol: float = 1e-10,
    mix_weights: Optional[Mapping[int, float]] = None,
) -> OnePeriodResult:
    """Two-step construction over one year from a date-i node.

    ``ell`` maps each date-(i+1) descendant to the effective liability
    X + vbar_next - inflows there; ``interior_net`` gives net flows at
    interior nodes of the year. Step 1 finds the smallest admissible
    scale: closed form for translation families (risk-free; explicit
    base plus bond add-on), monotone bisection for fixed mixes. Step 2
    solves the financiability condition with equality on the capital
    payoff (A' - L)_+. Returns the infeasible sentinel (vbar = +inf)
    when no scale works.
    """
    i = int(tree.date_of(node_i))
    j0 = tree.grid.index(i)
    j1 = tree.grid.index(i + 1)

    if family.variant == "risk_free":
        try:
            k = market.bond_for_period(i)
        except NoBondAvailable:
            return OnePeriodResult(False, params=("risk_free", INF))
        solved = _solve_affine_scale(
            tree, market, node_i, j0, j1, {k: 1.0}, ell, interior_net, fulfillment
        )
        if solved is None:
            return OnePeriodResult(False, params=("risk_free", INF))
        s_star, payoff, portfolios = solved
        value = s_star
        params = ("risk_free", s_star)
    elif family.variant == "fixed_mix":
        weights = dict(mix_weights or {})
        s_star = _bisect_scale(
            tree, market, node_i, j0, j1, weights, ell, interior_net,
            fulfillment, bisection_tol,
        )
        if s_star is None:
            return OnePeriodResult(False, params=("fixed_mix", _wkey(weights), INF))
        lin = _roll_mix_linear(
            tree, market, node_i, j0, j1, weights, s_star, interior_net
        )
        _, payoff, portfolios = lin
        value = s_star
        params = ("fixed_mix", _wkey(weights), s_star)
    else:
        solved = _explicit_with_addon(
            tree, market, node_i, j0, j1, family.base, ell, interior_net, fulfillment
        )
        if solved is None:
            return OnePeriodResult(False, params=("explicit", INF))
        s_star, value, payoff, portfolios = solved
        params = ("explicit", s_star)

    surplus = _surplus_dist(tree, node_i, payoff, ell)
    if not fulfillment_satisfied(fulfillment, surplus):
        return OnePeriodResult(False, params=params)
    plus_part = DiscreteDistribution(
        tuple(max(0.0, v) for v in surplus.values), surplus.probs, surplus.labels
    )
    capital = max_capital(financiability, plus_part, rate, node_i, j1)
    vbar = value - capital
    if mode == "B" and vbar < 0.0:
        # Zero-cost variant of the same strategy: reduce the capital to
        # the strategy value; monotonicity keeps financiability intact.
        capital = value
        vbar = 0.0
    return OnePeriodResult(
        True,
        scale=s_star,
        capital=capital,
        vbar=vbar,
        value=value,
        params=params,
        portfolios={m: tuple(float(v) for v in x) for m, x in portfolios.items()},
    )


def _wkey(weights: Mapping[int, float]) -> tuple:
    return tuple(sorted(weights.items()))


def _simplex_grid(indices: Tuple[int, ...], depth: int) -> List[Dict[int, float]]:
    """All weight vectors with denominators 2**depth over the indices."""
    n = 2**depth
    m = len(indices)
    if m == 1:
        return [{indices[0]: 1.0}]
    out = []
    def rec(prefix, remaining, pos):
        if pos == m - 1:
            out.append(prefix + [remaining])
            return
        for k in range(remaining + 1):
            rec(prefix + [k], remaining - k, pos + 1)
    rec([], n, 0)
    return [
        {k: num / n for k, num in zip(indices, combo) if num}
        for combo in out
    ]


def _thread_count() -> int:
    try:
        return max(1, int(os.environ.get("PRODVAL_THREADS", "1")))
    except ValueError:
        return 1


def _map_nodes(fn, nodes):
    threads = _thread_count()
    if threads <= 1 or len(nodes) <= 1:
        return [fn(n) for n in nodes]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, nodes))


def backward_value(
    liab: LiabilitySpec,
    psi: IlliquidPortfolio,
    config: EngineConfig,
    fulfillment: FulfillmentSpec,
    financiability: FinanciabilitySpec,
    market: TradableSet,
    tree: ScenarioTree,
    rates: Mapping[int, float],
) -> ProductionCostProcess:
    """Backward-recursive production cost over the whole horizon.

    Initializes vbar at the leaves with the liability's terminal values,
    then for i = T-1 .. 0 sets the next liability value X + vbar at every
    date-(i+1) node (for all states, failed ones included) and runs the
    one-period builder at every date-i node, minimizing vbar over the
    family's parameter grid. Ties pick the lexicographically smallest
    parameter vector. Infeasible nodes carry +inf and propagate.
    """
    if config.mode == "A" and not market.close_out:
        raise CloseOutUnavailable("mode A requires short positions with close out")
    T = tree.grid.horizon
    J = len(tree.grid.dates) - 1
    values: Dict[int, float] = {}
    capital: Dict[int, float] = {}
    params: Dict[int, tuple] = {}
    portfolios: Dict[int, Tuple[float, ...]] = {}
    infeasible: List[int] = []

    for leaf in tree.by_date[J]:
        values[leaf] = liab.y(leaf)

    candidates = _family_candidates(config)

    for i in range(T - 1, -1, -1):
        j1 = tree.grid.index(i + 1)
        ell_all = {
            nu: liab.x(nu) + values[nu] - liab.z(nu) - psi.z(nu)
            for nu in tree.by_date[j1]
        }

        def interior_net(m: int) -> float:
            return liab.z(m) + psi.z(m) - liab.x(m)

        def build(node_i: int) -> OnePeriodResult:
            best: Optional[OnePeriodResult] = None
            for fam, weights in candidates:
                res = build_one_period(
                    node_i,
                    ell_all,
                    interior_net,
                    fam,
                    fulfillment,
                    financiability,
                    market,
                    tree,
                    rates[node_i],
                    config.mode,
                    config.bisection_tol,
                    weights,
                )
                if not res.feasible:
                    continue
                if (
                    best is None
                    or res.vbar < best.vbar - 1e-12
                    or (abs(res.vbar - best.vbar) <= 1e-12 and res.params < best.params)
                ):
                    best = res
            return best if best is not None else OnePeriodResult(False)

        nodes_i = list(tree.by_date[tree.grid.index(i)])
        results = _map_nodes(build, nodes_i)
        for node_i, res in zip(nodes_i, results):
            if not res.feasible:
                values[node_i] = INF
                infeasible.append(node_i)
                params[node_i] = ("infeasible",)
                continue
            values[node_i] = res.vbar
            capital[node_i] = res.capital
            params[node_i] = res.params
            portfolios.update(res.portfolios)

    zero = (0.0,) * market.n_assets
    assignment = {}
    signed = False
    for n in range(tree.n_nodes):
        vec = portfolios.get(n, zero)
        # Scales from the bisection endpoint can leave pots, and hence
        # units, a hair below zero; snap those while keeping genuinely
        # signed explicit bases intact.
        vec = tuple(0.0 if -TOL < v < 0.0 else v for v in vec)
        signed = signed or min(vec, default=0.0) < 0.0
        assignment[n] = vec
    strategy = Strategy(
        tree,
        market.n_assets,
        assignment,
        sign_class="unrestricted" if signed else "nonneg",
    )
    rows: Dict[int, BalanceSheetRow] = {}
    for i in range(1, T + 1):
        for node in tree.nodes_at(i):
            rows[node] = balance_sheet(
                node, liab, strategy, psi, values[node], market, config.mode
            )
    return ProductionCostProcess(
        values, capital, params, strategy, rows, config.mode, sorted(infeasible)
    )


def _family_candidates(config: EngineConfig):
    fam = config.family
    if fam.variant == "fixed_mix":
        grids = _simplex_grid(fam.mix_indices, config.grid_depth)
        return [(fam, w) for w in grids]
    return [(fam, None)]


# --- validation ----------------------------------------------------------------


@dataclass(frozen=True)
class PeriodCheck:
    node: int
    period: int
    interior_max_residual: float
    interior_min_value: float
    fulfillment_ok: bool
    capital: float
    capital_bound: float
    financiability_ok: bool
    cost_sign_ok: bool

    @property
    def ok(self) -> bool:
        return (
            self.interior_max_residual <= 1e-9
            and self.interior_min_value >= -TOL
            and self.fulfillment_ok
            and self.financiability_ok
            and self.cost_sign_ok
        )


@dataclass
class ValidationReport:
    checks: List[PeriodCheck]
    skipped: List[Tuple[int, int, str]]  # (node, period, reason)

    @property
    def ok(self) -> bool:
        return all(c.ok for c in self.checks)

    def failures(self) -> List[PeriodCheck]:
        return [c for c in self.checks if not c.ok]


def validate_production_strategy(
    strategy: Strategy,
    psi: IlliquidPortfolio,
    capital: CapitalSchedule,
    liab: LiabilitySpec,
    fulfillment: FulfillmentSpec,
    financiability: FinanciabilitySpec,
    market: TradableSet,
    tree: ScenarioTree,
    rates: Mapping[int, float],
    mode: str = "B",
    start_set: Optional[Sequence[int]] = None,
    i_min: int = 0,
    i_max: Optional[int] = None,
    terminal: Optional[Mapping[int, float]] = None,
    extra_annual_inflows: Optional[Mapping[int, float]] = None,
) -> ValidationReport:
    """Check conditions (a) interior funding, (b) financiability, and
    (c) fulfillment per one-year period, on the start set and wherever no
    failure has occurred; mode B additionally checks vbar >= 0.

    The cost process is derived from the strategy and capital schedule:
    vbar_i = v_i(phi) - C_i, with terminal values at i_max. Periods after
    a balance-sheet failure are skipped (the strategy stops there).
    """
    if i_max is None:
        i_max = tree.grid.horizon
    if not (0 <= i_min < i_max <= tree.grid.horizon):
        raise SpanMismatch(f"bad period range [{i_min}, {i_max}]")
    if strategy.sign_class == "value_nonneg" and not (
        fulfillment.variant == "full" and market.close_out
    ):
        raise CloseOutUnavailable(
            "general (value non-negative) production strategies need the full "
            "fulfillment condition and close out"
        )
    extra = dict(extra_annual_inflows or {})

    vbar: Dict[int, float] = {}
    for node in tree.nodes_at(i_max):
        if terminal is not None:
            vbar[node] = float(terminal.get(node, 0.0))
        else:
            vbar[node] = liab.y(node)
    for i in range(i_min, i_max):
        for node in tree.nodes_at(i):
            vbar[node] = strategy_value(strategy, market, node) - capital.at(node)

    flows = liability_flows(liab, psi, extra)

    live: Dict[int, bool] = {}
    start = set(start_set) if start_set is not None else set(tree.nodes_at(i_min))
    for node in tree.nodes_at(i_min):
        live[node] = node in start

    checks: List[PeriodCheck] = []
    skipped: List[Tuple[int, int, str]] = []
    for i in range(i_min, i_max):
        j0 = tree.grid.index(i)
        j1 = tree.grid.index(i + 1)
        for node_i in tree.nodes_at(i):
            if not live[node_i]:
                reason = "outside start set" if i == i_min else "prior failure"
                skipped.append((node_i, i, reason))
                for nu in tree.descendants_at(node_i, j1):
                    live[nu] = False
                continue
            layers = _year_layers(tree, node_i, j0, j1)
            max_res = 0.0
            min_val = INF
            for layer in layers[1:-1]:
                for m in layer:
                    res = conversion_residual(strategy, market, tree, flows, m)
                    max_res = max(max_res, abs(res))
                    min_val = min(min_val, strategy_value(strategy, market, m))
            if min_val is INF:
                min_val = 0.0
            surplus_atoms = {}
            for nu in tree.descendants_at(node_i, j1):
                held = strategy.held_into(nu)
                a_trad = float(held @ market.payoff(nu))
                a = a_trad + liab.z(nu) + psi.z(nu) + extra.get(nu, 0.0)
                l_eff = liab.x(nu) + vbar[nu]
                surplus_atoms[nu] = a - l_eff
            dist = _surplus_dist(
                tree, node_i, surplus_atoms, {nu: 0.0 for nu in surplus_atoms}
            )
            ful_ok = fulfillment_satisfied(fulfillment, dist)
            plus_part = DiscreteDistribution(
                tuple(max(0.0, v) for v in dist.values), dist.probs, dist.labels
            )
            c_i = capital.at(node_i)
            bound = max_capital(financiability, plus_part, rates[node_i], node_i, j1)
            fin_ok = c_i <= bound + TOL
            cost_ok = mode == "A" or vbar[node_i] >= -TOL
            checks.append(
                PeriodCheck(
                    node_i, i, max_res, min_val, ful_ok, c_i, bound, fin_ok, cost_ok
                )
            )
            for nu in tree.descendants_at(node_i, j1):
                live[nu] = surplus_atoms[nu] >= -TOL
    return ValidationReport(checks, skipped)


# --- illiquid replica shift ------------------------------------------------------


@dataclass
class ShiftReport:
    per_node: Dict[int, Tuple[float, float, float]]  # (vbar*, vbar - v(psi), diff)
    validation: ValidationReport

    @property
    def max_abs_diff(self) -> float:
        return max((abs(d) for _, _, d in self.per_node.values()), default=0.0)

    @property
    def ok(self) -> bool:
        return self.validation.ok and self.max_abs_diff <= TOL


def illiquid_replica_shift(
    liab: LiabilitySpec,
    psi_units: Sequence[float],
    base_strategy: Strategy,
    base_capital: CapitalSchedule,
    fulfillment: FulfillmentSpec,
    financiability: FinanciabilitySpec,
    market: TradableSet,
    tree: ScenarioTree,
    rates: Mapping[int, float],
    restriction: Optional[RestrictionSet] = None,
    policy_index: Optional[int] = None,
) -> ShiftReport:
    """Treat a static tradable position as illiquid and verify that the
    production cost drops by exactly its market value.

    ``psi_units`` is the static portfolio (held unchanged, paying out its
    inflows, worthless at the horizon). The financiability condition must
    pass the neutrality audit on the restriction used. The augmented
    strategy adds the within-year accumulation of the illiquid inflows
    and raises capital C_i + v_i(psi); the report compares its cost to
    the base cost minus v_i(psi) at every annual node.
    """
    neutrality = audit_neutrality_to_tradables(
        financiability, market, tree, restriction, rates
    )
    if neutrality.flagged:
        raise NeutralityAuditFailed("financiability fails the neutrality audit")
    units = np.asarray(psi_units, dtype=float)
    if units.min(initial=0.0) < 0:
        raise ValueError("static illiquid position must be non-negative")
    J = len(tree.grid.dates) - 1
    for leaf in tree.by_date[J]:
        if abs(float(units @ market.price(leaf))) > TOL:
            raise ValueError("static position must be worthless at the horizon")

    psi = IlliquidPortfolio(
        {
            n: float(units @ market.inflow(n))
            for n in range(tree.n_nodes)
            if float(units @ market.inflow(n)) != 0.0
        }
    )

    # xi accumulates the illiquid inflows within each year and is flat at
    # annual nodes; it never owns anything across year ends.
    n_assets = market.n_assets
    xi_assign: Dict[int, Tuple[float, ...]] = {}
    zero = (0.0,) * n_assets
    T = tree.grid.horizon
    for i in range(T):
        j0 = tree.grid.index(i)
        j1 = tree.grid.index(i + 1)
        for node in tree.nodes_at(i):
            xi_assign[node] = zero
        layers = _year_layers_multi(tree, i, j0, j1)
        for layer in layers[1:-1]:
            for m in layer:
                held_in = np.asarray(xi_assign[tree.parent[m]], dtype=float)
                balance = float(held_in @ market.payoff(m)) + psi.z(m)
                k = policy_index if policy_index is not None else market.bond_for_period(i)
                price = market.prices[m][k]
                if price <= 0.0:
                    raise NoBondAvailable(
                        f"accumulation asset {k} has no positive price at node {m}"
                    )
                x = np.zeros(n_assets)
                x[k] = balance / price
                xi_assign[m] = tuple(float(v) for v in x)
    for leaf in tree.by_date[J]:
        xi_assign[leaf] = zero
    xi = Strategy(tree, n_assets, xi_assign)

    augmented = base_strategy.plus(xi)
    cap_star = {
        node: base_capital.at(node) + float(units @ market.price(node))
        for i in range(T)
        for node in tree.nodes_at(i)
    }
    validation = validate_production_strategy(
        augmented,
        psi,
        CapitalSchedule(cap_star),
        liab,
        fulfillment,
        financiability,
        market,
        tree,
        rates,
        mode="A" if market.close_out else "B",
    )
    per_node: Dict[int, Tuple[float, float, float]] = {}
    for i in range(T):
        for node in tree.nodes_at(i):
            v_star = strategy_value(augmented, market, node) - cap_star[node]
            v_base = strategy_value(base_strategy, market, node) - base_capital.at(node)
            v_psi = float(units @ market.price(node))
            per_node[node] = (v_star, v_base - v_psi, v_star - (v_base - v_psi))
    return ShiftReport(per_node, validation)


def _year_layers_multi(tree: ScenarioTree, i: int, j0: int, j1: int) -> List[List[int]]:
    layers = [list(tree.nodes_at(i))]
    for _ in range(j1 - j0):
        layers.append([c for m in layers[-1] for c in tree.children[m]])
    return layers


# --- short position additivity ----------------------------------------------------


@dataclass
class AdditivityReport:
    per_node: Dict[int, Tuple[float, float, float]]  # (combined, base + v(phi'), diff)
    validation: ValidationReport

    @property
    def max_abs_diff(self) -> float:
        return max((abs(d) for _, _, d in self.per_node.values()), default=0.0)

    @property
    def ok(self) -> bool:
        return self.validation.ok and self.max_abs_diff <= TOL


def add_short_position(
    liab: LiabilitySpec,
    base_strategy: Strategy,
    base_capital: CapitalSchedule,
    phi: Strategy,
    stop: set,
    phi_outflows: CashflowProcess,
    fulfillment: FulfillmentSpec,
    financiability: FinanciabilitySpec,
    market: TradableSet,
    tree: ScenarioTree,
    rates: Mapping[int, float],
    psi: Optional[IlliquidPortfolio] = None,
) -> AdditivityReport:
    """Add the short-position liability L(phi) on top of a produced
    liability and verify cost additivity.

    Runs theta + phi' (phi stopped at tau) with the unchanged capital
    schedule against the combined liability; the production cost must
    shift by v_i(phi) 1{i < tau} at every annual node. Requires the full
    fulfillment condition and close out.
    """
    if fulfillment.variant != "full":
        raise ValidationFailed("short-position additivity needs full fulfillment")
    if not market.close_out:
        raise CloseOutUnavailable("short positions need close out availability")
    psi = psi or IlliquidPortfolio.none()
    l_phi = short_position_cashflows(phi, stop, market, tree, phi_outflows)
    combined_liab = liab.plus(LiabilitySpec(outflows=dict(l_phi.outflow)))
    phi_p = stopped(phi, tree, stop)
    combined = base_strategy.plus(phi_p)
    validation = validate_production_strategy(
        combined,
        psi,
        base_capital,
        combined_liab,
        fulfillment,
        financiability,
        market,
        tree,
        rates,
        mode="A" if market.close_out else "B",
    )
    per_node: Dict[int, Tuple[float, float, float]] = {}
    for i in range(tree.grid.horizon):
        for node in tree.nodes_at(i):
            v_comb = strategy_value(combined, market, node) - base_capital.at(node)
            v_base = strategy_value(base_strategy, market, node) - base_capital.at(node)
            shift = strategy_value(phi_p, market, node)
            per_node[node] = (v_comb, v_base + shift, v_comb - (v_base + shift))
    return AdditivityReport(per_node, validation)
