"""Syntactic MEV detectors and degree-capped address clustering."""

from __future__ import annotations

from collections import Counter, defaultdict
from dataclasses import dataclass, field
from decimal import Decimal
from typing import Iterable, Mapping

import networkx as nx

from .amm import ZERO
from .errors import UnknownAsset
from .features import Incident, value_in_usd
from .ledger import LedgerTx, ordered

CO_INCLUSION = "co-inclusion: arbitrage shares a block with its rate-inflating transaction"


@dataclass(frozen=True)
class DetectedIncident:
    mev_type: str
    extractor: str
    extractee: str
    tx_ids: tuple[str, ...]
    block: int
    chain: str
    extractor_net: dict  # asset -> Decimal balance change
    extractor_profit_usd: Decimal
    extractee_capital_usd: Decimal
    extractee_loss_usd: Decimal
    warnings: tuple[str, ...] = field(default=())

    def to_incident(self, incident_id: str | None = None) -> Incident:
        return Incident(
            id=incident_id or ":".join(self.tx_ids),
            chain=self.chain,
            mev_type=self.mev_type,
            block=self.block,
            extractor=self.extractor,
            extractee=self.extractee,
            profit_usd=max(self.extractor_profit_usd, ZERO),
            capital_usd=self.extractee_capital_usd,
            loss_usd=self.extractee_loss_usd,
            extra={"tx_ids": list(self.tx_ids), "warnings": list(self.warnings)},
        )


def _net(legs) -> Counter:
    net: Counter = Counter()
    for leg in legs:
        net[leg.token_in] -= leg.amount_in
        net[leg.token_out] += leg.amount_out
    return net


def _usd(net: Mapping[str, Decimal], prices) -> Decimal:
    return sum((value_in_usd(amount, asset, prices) for asset, amount in net.items()), ZERO)


def _loss_and_capital(tx: LedgerTx, prices) -> tuple[Decimal, Decimal]:
    leg = tx.swaps[0]
    capital = value_in_usd(leg.amount_in, leg.token_in, prices)
    received = value_in_usd(leg.amount_out, leg.token_out, prices)
    return capital, max(ZERO, capital - received)


def is_sandwich(t1: LedgerTx, t2: LedgerTx, t3: LedgerTx) -> bool:
    if not (len(t1.swaps) == len(t2.swaps) == len(t3.swaps) == 1):
        return False
    a, b, c = t1.swaps[0], t2.swaps[0], t3.swaps[0]
    return (
        t1.sender == t3.sender
        and t2.sender != t1.sender
        and a.pool_id == b.pool_id == c.pool_id
        and a.direction == b.direction
        and c.direction == a.direction.reverse
    )


def _by_block(ledger: Iterable[LedgerTx]) -> dict[int, list[LedgerTx]]:
    blocks = defaultdict(list)
    for tx in ordered(ledger):
        blocks[tx.block].append(tx)
    return blocks


def detect_sandwich(ledger: Iterable[LedgerTx], prices, excluded: Counter | None = None) -> list[DetectedIncident]:
    """Flag every adjacent (p, p+1, p+2) triple matching the sandwich pattern.

    Incidents touching an unpriced asset are skipped and tallied per chain in
    ``excluded``.
    """
    found = []
    for block, txs in sorted(_by_block(ledger).items()):
        for i in range(len(txs) - 2):
            t1, t2, t3 = txs[i:i + 3]
            if t2.position != t1.position + 1 or t3.position != t2.position + 1:
                continue
            if not is_sandwich(t1, t2, t3):
                continue
            try:
                net = _net([t1.swaps[0], t3.swaps[0]])
                profit = _usd(net, prices)
                capital, loss = _loss_and_capital(t2, prices)
            except UnknownAsset:
                if excluded is not None:
                    excluded[t2.chain] += 1
                continue
            found.append(DetectedIncident(
                "Sandwich", t1.sender, t2.sender, (t1.tx_id, t2.tx_id, t3.tx_id), block, t2.chain,
                dict(net), profit, capital, loss,
            ))
    return found


def closed_cycle_gain(tx: LedgerTx) -> Decimal | None:
    """Net gain of a chained swap list that starts and ends in one asset."""
    legs = tx.swaps
    if len(legs) < 2:
        return None
    for prev, nxt in zip(legs, legs[1:]):
        if prev.token_out != nxt.token_in:
            return None
    if legs[0].token_in != legs[-1].token_out:
        return None
    return legs[-1].amount_out - legs[0].amount_in


def detect_arbitrage(ledger: Iterable[LedgerTx], prices, excluded: Counter | None = None) -> list[DetectedIncident]:
    """Flag profitable closed cycles that follow a rate-inflating swap on one of their pools."""
    txs = ordered(ledger)
    found = []
    for idx, tx in enumerate(txs):
        gain = closed_cycle_gain(tx)
        if gain is None or gain <= 0:
            continue
        pools = {leg.pool_id for leg in tx.swaps}
        inflating = None
        for prev in reversed(txs[:idx]):
            if prev.sender != tx.sender and any(leg.pool_id in pools for leg in prev.swaps):
                inflating = prev
                break
        if inflating is None:
            continue
        warnings = (CO_INCLUSION,) if inflating.block == tx.block else ()
        try:
            net = _net(tx.swaps)
            profit = _usd(net, prices)
            capital, loss = _loss_and_capital(inflating, prices)
        except UnknownAsset:
            if excluded is not None:
                excluded[tx.chain] += 1
            continue
        found.append(DetectedIncident(
            "Arbitrage", tx.sender, inflating.sender, (inflating.tx_id, tx.tx_id), tx.block, tx.chain,
            {k: v for k, v in net.items() if v != 0}, profit, capital, loss, warnings,
        ))
    return found


def detect(ledger: Iterable[LedgerTx], prices, excluded: Counter | None = None) -> list[DetectedIncident]:
    ledger = list(ledger)
    return detect_sandwich(ledger, prices, excluded) + detect_arbitrage(ledger, prices, excluded)


def transfer_graph(ledger: Iterable[LedgerTx], extra_edges: Iterable[tuple[str, str]] = ()) -> nx.Graph:
    """Undirected address graph: one edge per value transfer or contract call."""
    g = nx.Graph()
    for tx in ledger:
        g.add_edge(tx.sender, tx.to)
    g.add_edges_from(extra_edges)
    return g


@dataclass
class ClusterResult:
    clusters: list[set]
    suppressed_edges: int
    removed: set

    def cluster_of(self, address: str) -> set | None:
        for cluster in self.clusters:
            if address in cluster:
                return cluster
        return None

    def linked(self, a: str, b: str) -> bool:
        ca = self.cluster_of(a)
        return ca is not None and b in ca


def cluster_addresses(graph, degree_threshold: float | None = 50) -> ClusterResult:
    """Connected components after dropping nodes of degree above the threshold.

    ``degree_threshold=None`` keeps every node, so high-traffic contracts
    glue their users together.
    """
    g = graph if isinstance(graph, nx.Graph) else nx.Graph(list(graph))
    removed = set()
    if degree_threshold is not None:
        removed = {n for n, deg in g.degree() if deg > degree_threshold}
    suppressed = sum(1 for u, v in g.edges() if u in removed or v in removed)
    kept = g.subgraph(n for n in g.nodes if n not in removed)
    clusters = sorted((set(c) for c in nx.connected_components(kept)), key=lambda c: (-len(c), min(c)))
    return ClusterResult(clusters, suppressed, removed)
