"""Config ingestion: a JSON document describing the whole valuation
problem, validated into engine-ready objects.

Top-level keys: grid, tree, market, liability, illiquid, restriction,
fulfillment, financiability, engine. Node references use the labels from
the tree section; every tradable must price every node.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Dict, Mapping, Optional

from .conditions import FinanciabilitySpec, FulfillmentSpec
from .engine import EngineConfig, IlliquidPortfolio, LiabilitySpec, StrategyFamily
from .errors import CrossRefError, ParseError, SchemaViolation
from .lattice import DateGrid, ScenarioTree, build_tree
from .market import RestrictionSet, TradableSet
from .strategy import Strategy


@dataclass
class ValuationProblem:
    doc: dict
    grid: DateGrid
    tree: ScenarioTree
    market: TradableSet
    liability: LiabilitySpec
    illiquid: IlliquidPortfolio
    restriction: Optional[RestrictionSet]
    fulfillment: FulfillmentSpec
    financiability_cfg: dict
    engine: EngineConfig

    def node_id(self, label: str) -> int:
        try:
            return self.tree.labels.index(label)
        except ValueError:
            raise CrossRefError(f"unknown node {label!r}") from None


def load_config(path: str) -> ValuationProblem:
    """Read and validate a config file; all structural invariants are
    checked here so the engine can assume a coherent problem."""
    with open(path, "r", encoding="utf-8") as fh:
        text = fh.read()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise ParseError(f"invalid JSON at line {e.lineno}, column {e.colno}: {e.msg}")
    return problem_from_dict(doc)


def _need(doc: Mapping, key: str, path: str = "") -> object:
    if key not in doc:
        raise SchemaViolation(f"missing required key {path}{key}")
    return doc[key]


def problem_from_dict(doc: dict) -> ValuationProblem:
    if not isinstance(doc, dict):
        raise SchemaViolation("config root must be an object")

    grid_doc = _need(doc, "grid")
    tree_doc = _need(doc, "tree")
    market_doc = _need(doc, "market")
    liab_doc = _need(doc, "liability")

    try:
        grid = DateGrid.build(_need(grid_doc, "dates", "grid."), int(_need(grid_doc, "T", "grid.")))
    except (TypeError, ValueError) as e:
        raise SchemaViolation(f"grid: {e}") from None

    tree = build_tree(grid, _need(tree_doc, "nodes", "tree."))
    label_to_id = {lab: n for n, lab in enumerate(tree.labels)}

    def node_of(label, where):
        if str(label) not in label_to_id:
            raise CrossRefError(f"{where} references unknown node {label!r}")
        return label_to_id[str(label)]

    tradables = _need(market_doc, "tradables", "market.")
    if not isinstance(tradables, list) or not tradables:
        raise SchemaViolation("market.tradables must be a non-empty list")
    n_assets = len(tradables)
    prices = {n: [0.0] * n_assets for n in range(tree.n_nodes)}
    inflows = {n: [0.0] * n_assets for n in range(tree.n_nodes)}
    bond_periods: Dict[int, int] = {}
    for k, spec in enumerate(tradables):
        price_map = _need(spec, "prices", f"market.tradables[{k}].")
        for lab in tree.labels:
            if lab not in price_map:
                raise CrossRefError(
                    f"market.tradables[{k}].prices is missing node {lab!r}"
                )
        for lab, v in price_map.items():
            prices[node_of(lab, f"market.tradables[{k}].prices")][k] = float(v)
        for lab, v in spec.get("inflows", {}).items():
            inflows[node_of(lab, f"market.tradables[{k}].inflows")][k] = float(v)
        if "bond_period" in spec:
            bond_periods[k] = int(spec["bond_period"])
    close_out = bool(market_doc.get("close_out", False))
    market = TradableSet(
        tree=tree,
        prices={n: tuple(v) for n, v in prices.items()},
        inflows={n: tuple(v) for n, v in inflows.items()},
        bond_periods=bond_periods,
        close_out=close_out,
    )

    def flow_map(section: Mapping, key: str, where: str) -> Dict[int, float]:
        return {
            node_of(lab, f"{where}.{key}"): float(v)
            for lab, v in section.get(key, {}).items()
        }

    liability = LiabilitySpec(
        outflows=flow_map(liab_doc, "outflows", "liability"),
        inflows=flow_map(liab_doc, "inflows", "liability"),
        terminal=flow_map(liab_doc, "terminal", "liability"),
    )
    illiquid = IlliquidPortfolio(
        flow_map(doc.get("illiquid", {}), "inflows", "illiquid")
    )

    restriction = None
    if "restriction" in doc:
        r_doc = doc["restriction"]
        if "indices" in r_doc:
            restriction = RestrictionSet.of_indices(n_assets, r_doc["indices"])
        elif "basis" in r_doc:
            restriction = RestrictionSet(
                n_assets, basis=tuple(tuple(map(float, row)) for row in r_doc["basis"])
            )
        else:
            raise SchemaViolation("restriction needs indices or basis")

    fulfillment = _fulfillment_from(doc.get("fulfillment", {"type": "full"}))
    financiability_cfg = doc.get("financiability", {"type": "coc", "eta": 0.06})
    if financiability_cfg.get("type") not in ("coc", "state_price", "zero"):
        raise SchemaViolation(
            f"financiability.type must be coc, state_price, or zero, "
            f"got {financiability_cfg.get('type')!r}"
        )

    engine_doc = doc.get("engine", {})
    mode = str(engine_doc.get("mode", "B")).upper()
    if mode not in ("A", "B"):
        raise SchemaViolation(f"engine.mode must be 'A' or 'B', got {mode!r}")
    if mode == "A" and not close_out:
        raise SchemaViolation("engine.mode 'A' requires market.close_out = true")
    family_doc = engine_doc.get("family", {"type": "risk_free"})
    family = _family_from(family_doc, tree, market, label_to_id, restriction)
    tolerances = engine_doc.get("tolerances", {})
    engine = EngineConfig(
        mode=mode,
        family=family,
        bisection_tol=float(tolerances.get("bisection", 1e-10)),
        grid_depth=int(family_doc.get("grid_depth", 3)),
    )

    return ValuationProblem(
        doc=doc,
        grid=grid,
        tree=tree,
        market=market,
        liability=liability,
        illiquid=illiquid,
        restriction=restriction,
        fulfillment=fulfillment,
        financiability_cfg=dict(financiability_cfg),
        engine=engine,
    )


def _fulfillment_from(doc: Mapping) -> FulfillmentSpec:
    kind = doc.get("type", "full")
    if kind == "full":
        return FulfillmentSpec.full()
    if kind == "var":
        return FulfillmentSpec.var(float(_need(doc, "alpha", "fulfillment.")))
    if kind == "es":
        return FulfillmentSpec.es(float(_need(doc, "alpha", "fulfillment.")))
    if kind == "prob":
        return FulfillmentSpec.probability(float(_need(doc, "p", "fulfillment.")))
    raise SchemaViolation(f"fulfillment.type must be full, var, es, or prob, got {kind!r}")


def _family_from(doc, tree, market, label_to_id, restriction) -> StrategyFamily:
    kind = doc.get("type", "risk_free")
    if kind == "risk_free":
        return StrategyFamily.risk_free()
    if kind == "fixed_mix":
        if "indices" in doc:
            indices = tuple(int(k) for k in doc["indices"])
        elif restriction is not None and restriction.indices is not None:
            indices = restriction.indices
        else:
            indices = tuple(range(market.n_assets))
        return StrategyFamily.fixed_mix(indices)
    if kind == "explicit":
        strat_doc = _need(doc, "strategy", "engine.family.")
        assignment = {}
        for lab, vec in _need(strat_doc, "assignments", "engine.family.strategy.").items():
            if lab not in label_to_id:
                raise CrossRefError(f"strategy assignment references unknown node {lab!r}")
            assignment[label_to_id[lab]] = tuple(float(v) for v in vec)
        initial = {}
        for lab, vec in strat_doc.get("initial", {}).items():
            if lab not in label_to_id:
                raise CrossRefError(f"strategy initial references unknown node {lab!r}")
            initial[label_to_id[lab]] = tuple(float(v) for v in vec)
        base = Strategy(tree, market.n_assets, assignment, initial)
        return StrategyFamily.explicit(base)
    raise SchemaViolation(
        f"engine.family.type must be risk_free, fixed_mix, or explicit, got {kind!r}"
    )


def financiability_of(problem: ValuationProblem) -> FinanciabilitySpec:
    """Materialize the financiability condition; the state-price variant
    runs the consistency check on the restriction actually used."""
    cfg = problem.financiability_cfg
    kind = cfg["type"]
    if kind == "coc":
        return FinanciabilitySpec.cost_of_capital(float(cfg.get("eta", 0.06)))
    if kind == "zero":
        return FinanciabilitySpec.zero()
    from .market import check_consistency

    cert = check_consistency(problem.market, problem.tree, problem.restriction)
    return FinanciabilitySpec.state_price(cert, problem.tree)


def problem_to_dict(problem: ValuationProblem) -> dict:
    """Serialize back to the config schema; reloading gives an
    equivalent problem."""
    tree, grid, market = problem.tree, problem.grid, problem.market
    labels = tree.labels

    def label_map(flows: Mapping[int, float]) -> Dict[str, float]:
        return {labels[n]: v for n, v in sorted(flows.items())}

    nodes = []
    for n in range(tree.n_nodes):
        par = tree.parent[n]
        nodes.append(
            {
                "id": labels[n],
                "date": str(tree.date_of(n)),
                "parent": None if par is None else labels[par],
                "p": tree.prob[n],
            }
        )
    tradables = []
    for k in range(market.n_assets):
        spec = {
            "prices": {labels[n]: market.prices[n][k] for n in range(tree.n_nodes)},
            "inflows": {
                labels[n]: market.inflows[n][k]
                for n in range(tree.n_nodes)
                if market.inflows[n][k] != 0.0
            },
        }
        if k in market.bond_periods:
            spec["bond_period"] = market.bond_periods[k]
        tradables.append(spec)
    doc = {
        "grid": {"T": grid.horizon, "dates": [str(d) for d in grid.dates]},
        "tree": {"nodes": nodes},
        "market": {"tradables": tradables, "close_out": market.close_out},
        "liability": {
            "outflows": label_map(problem.liability.outflows),
            "inflows": label_map(problem.liability.inflows),
            "terminal": label_map(problem.liability.terminal),
        },
        "illiquid": {"inflows": label_map(problem.illiquid.inflows)},
        "fulfillment": dict(problem.doc.get("fulfillment", {"type": "full"})),
        "financiability": dict(problem.financiability_cfg),
        "engine": dict(problem.doc.get("engine", {"mode": problem.engine.mode})),
    }
    if problem.restriction is not None:
        if problem.restriction.indices is not None:
            doc["restriction"] = {"indices": list(problem.restriction.indices)}
        else:
            doc["restriction"] = {
                "basis": [list(row) for row in problem.restriction.basis]
            }
    return doc
