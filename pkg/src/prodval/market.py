"""Tradables with per-node prices and cash inflows, plus consistency
checking via non-negative state-price certificates.

The consistency condition quantifies over pairs of strategies; per
period it reduces to a cone-membership problem at each non-terminal
node: the node's price vector must lie in the convex cone generated by
the children's payoff vectors S_c + Z_c (restricted to the admissible
subspace). Membership produces non-negative weights that reconstruct
the price vector; non-membership produces a Farkas certificate, a
portfolio with non-negative payoffs at every child and strictly
negative price.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Mapping, Optional, Sequence, Tuple

import numpy as np

from .errors import (
    CrossRefError,
    DimensionMismatch,
    NoBondAvailable,
    NumericalFailure,
)
from .lattice import ScenarioTree
from . import lp

_TOL = 1e-9


@dataclass(frozen=True)
class TradableSet:
    """d+1 tradables with per-node price and inflow vectors.

    Prices are quoted immediately after the node's cash inflow. A
    tradable flagged in ``bond_periods`` as {asset index: period i} is
    the one-period risk-free zero-coupon bond for (i, i+1): it pays 1 at
    every date-(i+1) node and its date-i price is 1/(1+R).
    """

    tree: ScenarioTree
    prices: Mapping[int, Tuple[float, ...]]
    inflows: Mapping[int, Tuple[float, ...]]
    bond_periods: Mapping[int, int] = field(default_factory=dict)
    close_out: bool = False

    def __post_init__(self):
        n_assets = None
        for node in range(self.tree.n_nodes):
            if node not in self.prices:
                raise CrossRefError(f"missing price vector at node {node}")
            if node not in self.inflows:
                raise CrossRefError(f"missing inflow vector at node {node}")
            s = np.asarray(self.prices[node], dtype=float)
            z = np.asarray(self.inflows[node], dtype=float)
            if n_assets is None:
                n_assets = s.shape[0]
            if s.shape[0] != n_assets or z.shape[0] != n_assets:
                raise DimensionMismatch(f"vector length mismatch at node {node}")
            if s.min(initial=0.0) < 0 or z.min(initial=0.0) < 0:
                raise ValueError(f"negative price or inflow at node {node}")
            # S != 0 wherever trading still happens; at the horizon the
            # whole market may have matured (for example a single bond).
            if not self.tree.is_leaf(node) and not s.any():
                raise ValueError(f"price vector is identically zero at node {node}")
        object.__setattr__(self, "_n_assets", n_assets)
        self._check_bonds()

    def _check_bonds(self):
        for k, i in self.bond_periods.items():
            j_end = self.tree.grid.index(i + 1)
            for node in self.tree.by_date[j_end]:
                if abs(self.prices[node][k]) > 1e-12 or abs(self.inflows[node][k] - 1.0) > 1e-12:
                    raise ValueError(
                        f"tradable {k} flagged as period-{i} bond must have price 0 "
                        f"and inflow 1 at date {i + 1}"
                    )
            for node in self.tree.nodes_at(i):
                if self.prices[node][k] <= 0:
                    raise ValueError(
                        f"period-{i} bond must have positive price at date {i}"
                    )

    @property
    def n_assets(self) -> int:
        return self._n_assets

    def price(self, node: int) -> np.ndarray:
        return np.asarray(self.prices[node], dtype=float)

    def inflow(self, node: int) -> np.ndarray:
        return np.asarray(self.inflows[node], dtype=float)

    def payoff(self, node: int) -> np.ndarray:
        """S + Z at the node: what one unit bought before pays here."""
        return self.price(node) + self.inflow(node)

    def bond_for_period(self, i: int) -> int:
        for k, period in self.bond_periods.items():
            if period == i:
                return k
        raise NoBondAvailable(f"no flagged risk-free bond for period ({i}, {i + 1})")

    def period_rate(self, node: int) -> float:
        """R_{i,i+1} implied by the flagged bond's price at a date-i node."""
        i = int(self.tree.date_of(node))
        k = self.bond_for_period(i)
        return 1.0 / self.prices[node][k] - 1.0


def portfolio_price(market: TradableSet, node: int, portfolio) -> float:
    x = np.asarray(portfolio, dtype=float)
    if x.shape[0] != market.n_assets:
        raise DimensionMismatch(
            f"portfolio has {x.shape[0]} entries, market has {market.n_assets}"
        )
    return float(x @ market.price(node))


def portfolio_inflow(market: TradableSet, node: int, portfolio) -> float:
    x = np.asarray(portfolio, dtype=float)
    if x.shape[0] != market.n_assets:
        raise DimensionMismatch(
            f"portfolio has {x.shape[0]} entries, market has {market.n_assets}"
        )
    return float(x @ market.inflow(node))


@dataclass(frozen=True)
class RestrictionSet:
    """Admissible portfolio subspace: a coordinate subset or an explicit
    basis of column vectors."""

    dim_full: int
    indices: Optional[Tuple[int, ...]] = None
    basis: Optional[Tuple[Tuple[float, ...], ...]] = None  # rows are basis vectors

    def __post_init__(self):
        if (self.indices is None) == (self.basis is None):
            raise ValueError("give exactly one of indices or basis")
        if self.basis is not None:
            B = np.asarray(self.basis, dtype=float)
            if np.linalg.matrix_rank(B) != B.shape[0]:
                raise ValueError("basis vectors must be linearly independent")

    @staticmethod
    def full(dim: int) -> "RestrictionSet":
        return RestrictionSet(dim, indices=tuple(range(dim)))

    @staticmethod
    def of_indices(dim: int, indices: Sequence[int]) -> "RestrictionSet":
        return RestrictionSet(dim, indices=tuple(sorted(indices)))

    def matrix(self) -> np.ndarray:
        """Basis matrix with one column per basis vector, shape (d+1, m)."""
        if self.indices is not None:
            B = np.zeros((self.dim_full, len(self.indices)))
            for col, k in enumerate(self.indices):
                B[k, col] = 1.0
            return B
        return np.asarray(self.basis, dtype=float).T

    @property
    def dim(self) -> int:
        return len(self.indices) if self.indices is not None else len(self.basis)

    def contains(self, x, tol: float = 1e-9) -> bool:
        x = np.asarray(x, dtype=float)
        if self.indices is not None:
            outside = [k for k in range(self.dim_full) if k not in self.indices]
            return all(abs(x[k]) <= tol for k in outside)
        B = self.matrix()
        coef, *_ = np.linalg.lstsq(B, x, rcond=None)
        return float(np.abs(B @ coef - x).max(initial=0.0)) <= tol


@dataclass(frozen=True)
class NodeVerdict:
    consistent: bool
    weights: Optional[Dict[int, float]] = None  # child node -> lambda
    violation: Optional[Tuple[float, ...]] = None  # full-space portfolio

    def __post_init__(self):
        if self.consistent == (self.violation is not None):
            raise ValueError("exactly one of weights/violation must be present")


@dataclass(frozen=True)
class ConsistencyCertificate:
    """Per non-terminal node: state-price weights or a violating portfolio."""

    verdicts: Dict[int, NodeVerdict]

    @property
    def consistent(self) -> bool:
        return all(v.consistent for v in self.verdicts.values())

    def violations(self) -> Dict[int, Tuple[float, ...]]:
        return {
            n: v.violation for n, v in self.verdicts.items() if not v.consistent
        }

    def weights_at(self, node: int) -> Dict[int, float]:
        v = self.verdicts[node]
        if not v.consistent:
            raise NumericalFailure(f"no weights at inconsistent node {node}")
        return v.weights


def check_consistency(
    market: TradableSet,
    tree: ScenarioTree,
    restriction: Optional[RestrictionSet] = None,
) -> ConsistencyCertificate:
    """Decide per node whether non-negative child payoffs force a
    non-negative price on the restriction subspace.

    Returns weights lambda_c >= 0 with sum_c lambda_c (S_c + Z_c) = S_node
    (in restricted coordinates) where the implication holds, otherwise a
    violating portfolio x with x.(S_c + Z_c) >= 0 for all children and
    x.S_node < 0.
    """
    if restriction is None:
        restriction = RestrictionSet.full(market.n_assets)
    B = restriction.matrix()
    verdicts: Dict[int, NodeVerdict] = {}
    for node in range(tree.n_nodes):
        children = tree.children[node]
        if not children:
            continue
        Y = np.column_stack([B.T @ market.payoff(c) for c in children])
        s = B.T @ market.price(node)
        primal = lp.solve_lp(
            c=np.zeros(len(children)), A_eq=Y, b_eq=s, nonneg=True
        )
        if primal.status == "optimal":
            lam = {c: float(primal.x[k]) for k, c in enumerate(children)}
            verdicts[node] = NodeVerdict(True, weights=lam)
            continue
        # Farkas alternative: u with u.y_c >= 0 for all c and u.s = -1.
        m = B.shape[1]
        alt = lp.solve_lp(
            c=np.zeros(m),
            A_eq=s.reshape(1, -1),
            b_eq=np.array([-1.0]),
            A_ub=-Y.T,
            b_ub=np.zeros(len(children)),
            nonneg=False,
        )
        if alt.status != "optimal":
            raise NumericalFailure(
                f"neither cone membership nor a violation certified at node {node}"
            )
        # x.S_node = u.s = -1 exactly, so the breach margin is unit sized.
        x_full = B @ alt.x
        verdicts[node] = NodeVerdict(False, violation=tuple(float(v) for v in x_full))
    return ConsistencyCertificate(verdicts)


def compose_state_prices(
    cert: ConsistencyCertificate, tree: ScenarioTree, node: int, j_end: int
) -> Dict[int, float]:
    """Price of one unit of cash at each date-j_end descendant, obtained
    by multiplying per-step certificate weights along the path."""
    out: Dict[int, float] = {}
    for target in tree.descendants_at(node, j_end):
        q = 1.0
        m = target
        while m != node:
            par = tree.parent[m]
            q *= cert.weights_at(par)[m]
            m = par
        out[target] = q
    return out
