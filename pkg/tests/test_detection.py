from collections import Counter
from decimal import Decimal

import networkx as nx
import numpy as np
import pytest
from hypothesis import given, strategies as st

from covertflow.amm import Direction, PoolState
from covertflow.detection import (CO_INCLUSION, closed_cycle_gain, cluster_addresses, detect, detect_arbitrage,
                                  detect_sandwich, transfer_graph)
from covertflow.ledger import LedgerTx, SwapLeg
from covertflow.staging import execute_sandwich, plan_sandwich
from covertflow.synth import PRICES_USD, benign_block, scenario_graph, staged_arbitrage, staged_sandwich

B2Q, Q2B = Direction.BASE_FOR_QUOTE, Direction.QUOTE_FOR_BASE
TOY = PoolState(100, 1000, pool_id="pool1", base_asset="BTC", quote_asset="ETH")
PRICES = {"BTC": Decimal(10), "ETH": Decimal(1)}


def swap(tx_id, pos, sender, direction, a_in, a_out, pool="pool1", block=1):
    tin, tout = ("BTC", "ETH") if direction is B2Q else ("ETH", "BTC")
    return LedgerTx(tx_id, block, pos, sender, f"dex:{pool}",
                    (SwapLeg(pool, direction, tin, tout, a_in, a_out),))


def test_toy_sandwich_attributes_extraction():
    ledger = execute_sandwich(plan_sandwich(TOY, 50, 50, 167), TOY).ledger
    (inc,) = detect_sandwich(ledger, PRICES)
    assert inc.extractor == "R" and inc.extractee == "S"
    assert inc.tx_ids == ("tx-front", "tx-victim", "tx-back")
    # Victim paid 50 BTC (500 USD) and received 166.67 ETH.
    assert float(inc.extractee_capital_usd) == pytest.approx(500.0)
    assert float(inc.extractee_loss_usd) == pytest.approx(333.3333, abs=1e-3)
    assert inc.extractor_profit_usd <= inc.extractee_loss_usd


def test_reversed_backrun_is_not_a_sandwich():
    ledger = [swap("a", 0, "R", B2Q, 50, 333), swap("b", 1, "S", B2Q, 50, 166), swap("c", 2, "R", B2Q, 1, 3)]
    assert detect_sandwich(ledger, PRICES) == []


def test_non_adjacent_or_cross_pool_triples_ignored():
    gap = [swap("a", 0, "R", B2Q, 50, 333), swap("b", 1, "S", B2Q, 50, 166), swap("c", 3, "R", Q2B, 333, 60)]
    assert detect_sandwich(gap, PRICES) == []
    cross = [swap("a", 0, "R", B2Q, 50, 333), swap("b", 1, "S", B2Q, 50, 166, pool="pool2"),
             swap("c", 2, "R", Q2B, 333, 60)]
    assert detect_sandwich(cross, PRICES) == []


def test_unpriced_assets_are_tallied():
    ledger = execute_sandwich(plan_sandwich(TOY, 50, 50, 167), TOY).ledger
    excluded = Counter()
    assert detect_sandwich(ledger, {"BTC": Decimal(10)}, excluded) == []
    assert excluded == {"Ethereum": 1}


def test_benign_traffic_has_no_detections():
    rng = np.random.default_rng(0)
    ledger = [tx for b in range(300) for tx in benign_block(rng, b)]
    assert detect(ledger, PRICES_USD) == []


def test_staged_scenarios_are_found():
    rng = np.random.default_rng(1)
    for i in range(25):
        s = staged_sandwich(rng, str(i), block=i)
        (inc,) = detect(s.ledger, PRICES_USD)
        assert (inc.mev_type, inc.extractor, inc.extractee) == ("Sandwich", s.receiver, s.sender)
        a = staged_arbitrage(rng, str(i))
        found = detect(a.ledger, PRICES_USD)
        assert [(f.mev_type, f.extractor, f.extractee) for f in found] == [("Arbitrage", a.receiver, a.sender)]


@given(st.integers(20, 2000), st.integers(2, 40), st.floats(0.02, 0.5), st.floats(0.5, 1.5), st.integers(0, 30))
def test_profit_never_exceeds_loss(base, spot, frac, rb_frac, fee):
    # Prices consistent with the pool's pre-attack spot.
    pool = PoolState(base, base * spot, fee, pool_id="p", base_asset="A", quote_asset="Q")
    cap = Decimal(repr(round(base * frac, 6)))
    plan = plan_sandwich(pool, cap, cap * Decimal(repr(rb_frac)), 0)
    prices = {"A": Decimal(spot), "Q": Decimal(1)}
    for inc in detect_sandwich(execute_sandwich(plan, pool).ledger, prices):
        assert inc.extractor_profit_usd <= inc.extractee_loss_usd + Decimal("1e-20")


# --- arbitrage ------------------------------------------------------------


def cycle(tx_id, block, pos, sender, a_in, a_out):
    legs = (SwapLeg("p1", Q2B, "USDC", "ETH", a_in, 10), SwapLeg("p2", B2Q, "ETH", "USDC", 10, a_out))
    return LedgerTx(tx_id, block, pos, sender, "router:arb", legs)


def inflate(block, pos=0):
    return LedgerTx("inf", block, pos, "S", "dex:p1", (SwapLeg("p1", B2Q, "ETH", "USDC", 50, 333),))


def test_closed_cycle_gain():
    assert closed_cycle_gain(cycle("x", 1, 0, "R", 100, 130)) == 30
    assert closed_cycle_gain(inflate(1)) is None


def test_zero_gain_cycle_is_ignored():
    assert detect_arbitrage([inflate(1), cycle("x", 3, 0, "R", 100, 100)], {"ETH": 1, "USDC": 1}) == []


def test_cycle_without_inflating_swap_is_ignored():
    assert detect_arbitrage([cycle("x", 3, 0, "R", 100, 130)], {"ETH": 1, "USDC": 1}) == []


def test_arbitrage_after_inflation():
    (inc,) = detect_arbitrage([inflate(1), cycle("x", 3, 0, "R", 100, 130)], {"ETH": 3, "USDC": 1})
    assert (inc.extractor, inc.extractee, inc.warnings) == ("R", "S", ())
    assert inc.extractor_profit_usd == 30
    assert inc.extractee_capital_usd == 150 and inc.extractee_loss_usd == 0


def test_same_block_arbitrage_warns():
    (inc,) = detect_arbitrage([inflate(3), cycle("x", 3, 1, "R", 100, 130)], {"ETH": 1, "USDC": 1})
    assert inc.warnings == (CO_INCLUSION,)


# --- clustering -----------------------------------------------------------


def test_dex_hub_does_not_link_colluders():
    rng = np.random.default_rng(5)
    for i in range(20):
        s = staged_sandwich(rng, str(i))
        res = cluster_addresses(scenario_graph(rng, s), degree_threshold=50)
        assert s.dex in res.removed
        assert not res.linked(s.sender, s.receiver)
        assert res.suppressed_edges > 50


def test_direct_transfer_links_parties():
    rng = np.random.default_rng(6)
    s = staged_sandwich(rng, "x")
    g = scenario_graph(rng, s)
    g.add_edge(s.sender, s.receiver)
    assert cluster_addresses(g, 50).linked(s.sender, s.receiver)


def test_no_threshold_collapses_graph():
    rng = np.random.default_rng(7)
    s = staged_sandwich(rng, "y")
    g = scenario_graph(rng, s)
    res = cluster_addresses(g, None)
    assert len(res.clusters[0]) >= 0.9 * g.number_of_nodes()
    assert res.linked(s.sender, s.receiver)


def test_degree_counts_distinct_neighbours():
    g = transfer_graph([LedgerTx(f"t{i}", 0, i, "a", "b") for i in range(100)])
    assert g.degree("a") == 1
    assert cluster_addresses(g, 1).linked("a", "b")


def test_cluster_accepts_edge_list():
    res = cluster_addresses([("a", "b"), ("c", "d")], None)
    assert sorted(map(sorted, res.clusters)) == [["a", "b"], ["c", "d"]]
    assert isinstance(transfer_graph([]), nx.Graph)
