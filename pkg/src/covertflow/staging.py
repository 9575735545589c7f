"""Planning and executing staged sandwich and arbitrage transfers.

All value accounting is in base units at the pool's spot rate before the
first staged swap.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from decimal import Decimal, localcontext
from typing import Sequence

import numpy as np

from . import amm
from .amm import BPS, D, ZERO, Direction, PoolState, SwapOrder, SwapOutcome
from .chain import (
    Bundle,
    PbsConfig,
    SequencerConfig,
    SimBlock,
    SimTx,
    TrialResult,
    run_pbs_round,
    run_trial,
)
from .errors import InsufficientCapital, ValidationError
from .ledger import LedgerTx, leg_from_outcome, pool_address


def _value_in_base(net_base: Decimal, net_quote: Decimal, spot: Decimal) -> Decimal:
    with localcontext() as ctx:
        ctx.prec = amm.PRECISION
        return net_base + net_quote / spot


@dataclass(frozen=True)
class SandwichPlan:
    sender: str
    receiver: str
    sender_capital: Decimal
    receiver_base: Decimal
    receiver_quote: Decimal
    frontrun: SwapOrder | None
    victim: SwapOrder | None
    backrun: SwapOrder | None
    predicted_transfer: Decimal
    effectiveness: Decimal
    stranded: Decimal
    recovered: Decimal
    spot: Decimal


def _backrun_amount(pool_now: PoolState, pool_start: PoolState, available: Decimal) -> Decimal:
    """Quote to sell so the quote reserve returns to its pre-frontrun level."""
    need = pool_start.reserve_quote - pool_now.reserve_quote
    return max(ZERO, min(available, need))


def plan_sandwich(
    pool: PoolState,
    sender_capital,
    receiver_base,
    receiver_quote,
    sender: str = "S",
    receiver: str = "R",
) -> SandwichPlan:
    """Size a frontrun/victim/backrun triple that moves value from sender to receiver."""
    sender_capital, receiver_base, receiver_quote = D(sender_capital), D(receiver_base), D(receiver_quote)
    if min(sender_capital, receiver_base, receiver_quote) < 0:
        raise ValidationError("capitals must be non-negative")
    spot = pool.spot  # raises DegeneratePool

    frontrun = victim = backrun = None
    state = pool
    front_out = ZERO
    if receiver_base > 0:
        frontrun = SwapOrder(receiver, Direction.BASE_FOR_QUOTE, receiver_base)
        res = amm.swap_exact_in(state, frontrun)
        front_out, state = res.amount_out, res.pool_after
    if sender_capital > 0:
        victim = SwapOrder(sender, Direction.BASE_FOR_QUOTE, sender_capital, ZERO)
        state = amm.swap_exact_in(state, victim).pool_after

    recovered = ZERO
    with localcontext() as ctx:
        ctx.prec = amm.PRECISION
        back_in = _backrun_amount(state, pool, front_out + receiver_quote)
        if back_in > 0:
            backrun = SwapOrder(receiver, Direction.QUOTE_FOR_BASE, back_in)
            res = amm.swap_exact_in(state, backrun)
            recovered, state = res.amount_out, res.pool_after
        transfer = _value_in_base(recovered - receiver_base, front_out - back_in, spot)
        stranded = max(ZERO, state.reserve_base - pool.reserve_base)
        effectiveness = transfer / sender_capital if sender_capital > 0 else ZERO
    return SandwichPlan(
        sender, receiver, sender_capital, receiver_base, receiver_quote,
        frontrun, victim, backrun, transfer, effectiveness, stranded, recovered, spot,
    )


@dataclass(frozen=True)
class SwapPayload:
    pool_id: str
    order: SwapOrder
    # Backrun legs are re-sized on execution to restore this quote reserve.
    restore_quote_to: Decimal | None = None


@dataclass
class SandwichExecution:
    outcomes: list[SwapOutcome]
    block: SimBlock
    ledger: list[LedgerTx]
    included: bool
    adversary_cost: float
    realized_transfer: Decimal
    sender_loss: Decimal
    pool_after: PoolState


def execute_sandwich(
    plan: SandwichPlan,
    pool: PoolState,
    pbs: PbsConfig = PbsConfig(),
    block_index: int = 0,
    chain: str = "Ethereum",
    victim_min_out=None,
) -> SandwichExecution:
    """Run the plan through a PBS round and replay the resulting block.

    ``victim_min_out`` overrides the victim's (permissive) slippage guard.
    """
    if plan.victim is None:
        raise ValidationError("plan has no victim swap")
    victim_order = plan.victim
    if victim_min_out is not None:
        victim_order = SwapOrder(victim_order.trader, victim_order.direction,
                                 victim_order.amount_in, D(victim_min_out))
    victim_tx = SimTx("tx-victim", plan.sender, payload=SwapPayload(pool.pool_id, victim_order))
    txs = []
    if plan.frontrun is not None:
        txs.append(SimTx("tx-front", plan.receiver, payload=SwapPayload(pool.pool_id, plan.frontrun)))
    txs.append(victim_tx)
    if plan.backrun is not None:
        txs.append(SimTx("tx-back", plan.receiver,
                         payload=SwapPayload(pool.pool_id, plan.backrun, pool.reserve_quote)))
    if len(txs) != 3:
        raise ValidationError("sandwich plan needs frontrun and backrun legs")
    outcome = run_pbs_round(victim_tx, Bundle(tuple(txs), pbs.bid), pbs.colluding_validator,
                            pbs.competing_bid, index=block_index)

    state = pool
    outcomes, ledger = [], []
    net_base = net_quote = ZERO
    sender_base = sender_quote = ZERO
    front_proceeds = ZERO
    with localcontext() as ctx:
        ctx.prec = amm.PRECISION
        for pos, tx in enumerate(outcome.block.transactions):
            payload: SwapPayload = tx.payload
            order = payload.order
            if payload.restore_quote_to is not None:
                available = front_proceeds + plan.receiver_quote
                target = replace(state, reserve_quote=payload.restore_quote_to)
                amount = _backrun_amount(state, target, available)
                if amount <= 0:
                    continue
                order = SwapOrder(order.trader, order.direction, amount, order.min_amount_out)
            before = state
            res = amm.swap_exact_in(state, order)
            state = res.pool_after
            outcomes.append(res)
            swaps = (leg_from_outcome(before, order.direction, res),) if res.executed else ()
            ledger.append(LedgerTx(tx.id, block_index, pos, tx.submitter, pool_address(pool.pool_id),
                                   swaps, chain=chain, extra={} if res.executed else {"reverted": True}))
            if not res.executed:
                continue
            d_base, d_quote = _trader_deltas(order.direction, res)
            if tx.submitter == plan.receiver:
                net_base += d_base
                net_quote += d_quote
                if tx.id == "tx-front":
                    front_proceeds = res.amount_out
            elif tx.submitter == plan.sender:
                sender_base += d_base
                sender_quote += d_quote
    realized = _value_in_base(net_base, net_quote, plan.spot)
    sender_loss = -_value_in_base(sender_base, sender_quote, plan.spot)
    return SandwichExecution(outcomes, outcome.block, ledger, outcome.included,
                             outcome.adversary_cost, realized, sender_loss, state)


def _trader_deltas(direction: Direction, res: SwapOutcome) -> tuple[Decimal, Decimal]:
    """(base, quote) balance change of the trader."""
    if direction is Direction.BASE_FOR_QUOTE:
        return -res.amount_in, res.amount_out
    return res.amount_out, -res.amount_in


@dataclass(frozen=True)
class ArbitragePlan:
    sender: str
    receiver: str
    inflating: SwapOrder | None
    arb_cycle: tuple[tuple[str, SwapOrder], ...]  # (pool_id, order)
    block_gap: int
    predicted_transfer: Decimal
    cycle_input: Decimal
    sender_loss: Decimal
    spot: Decimal

    def __post_init__(self):
        if self.block_gap < 1:
            raise ValidationError("block_gap must be >= 1")


def optimal_cycle_input(p1: PoolState, p2: PoolState) -> Decimal:
    """Quote input maximising quote->base on ``p1`` then base->quote on ``p2``.

    The composed output is E*a / (F + G*a), maximised at a = (sqrt(EF) - F) / G.
    """
    with localcontext() as ctx:
        ctx.prec = amm.PRECISION
        g1 = (BPS - p1.fee_bps) / BPS
        g2 = (BPS - p2.fee_bps) / BPS
        e = g1 * g2 * p1.reserve_base * p2.reserve_quote
        f = p2.reserve_base * p1.reserve_quote
        g = g1 * (p2.reserve_base + g2 * p1.reserve_base)
        if e <= f:
            return ZERO
        return ((e * f).sqrt() - f) / g


def plan_arbitrage(
    pools: Sequence[PoolState],
    sender_capital,
    receiver_capital,
    sender: str = "S",
    receiver: str = "R",
    block_gap: int = 2,
) -> ArbitragePlan:
    """Rate-inflating sell on pool 1 followed by a two-pool quote cycle.

    ``receiver_capital`` is in quote units; the cycle is capped by it.
    """
    p1, p2 = pools
    sender_capital, receiver_capital = D(sender_capital), D(receiver_capital)
    if sender_capital < 0 or receiver_capital < 0:
        raise ValidationError("capitals must be non-negative")
    spot = p1.spot
    p2.spot  # tradability check
    if sender_capital == 0:
        return ArbitragePlan(sender, receiver, None, (), block_gap, ZERO, ZERO, ZERO, spot)

    inflating = SwapOrder(sender, Direction.BASE_FOR_QUOTE, sender_capital)
    inflate_res = amm.swap_exact_in(p1, inflating)
    p1_inflated = inflate_res.pool_after
    sender_loss = sender_capital - inflate_res.amount_out / spot

    a_star = optimal_cycle_input(p1_inflated, p2)
    if a_star <= 0:
        return ArbitragePlan(sender, receiver, inflating, (), block_gap, ZERO, ZERO, sender_loss, spot)
    if receiver_capital <= 0:
        raise InsufficientCapital("receiver has no capital to fund the arbitrage cycle")
    a = min(a_star, receiver_capital)
    leg1 = SwapOrder(receiver, Direction.QUOTE_FOR_BASE, a)
    base_mid = amm.quote_exact_in(p1_inflated, leg1.direction, a)
    leg2 = SwapOrder(receiver, Direction.BASE_FOR_QUOTE, base_mid)
    quote_back = amm.quote_exact_in(p2, leg2.direction, base_mid)
    with localcontext() as ctx:
        ctx.prec = amm.PRECISION
        transfer = (quote_back - a) / spot
    return ArbitragePlan(sender, receiver, inflating, ((p1.pool_id, leg1), (p2.pool_id, leg2)),
                         block_gap, transfer, a, sender_loss, spot)


@dataclass
class ArbitrageExecution:
    ledger: list[LedgerTx]
    blocks: list[SimBlock]
    success: bool
    co_included: bool
    profitable: bool
    realized_transfer: Decimal
    trial: TrialResult
    pools_after: dict[str, PoolState] = field(default_factory=dict)


def execute_arbitrage(
    plan: ArbitragePlan,
    pools: Sequence[PoolState],
    seq: SequencerConfig,
    delay_ms: float,
    rng: np.random.Generator | None = None,
    chain: str = "Arbitrum",
) -> ArbitrageExecution:
    """Time both legs on the FCFS sequencer and replay them in block order.

    Landing both legs in one block is reported via ``co_included``: a
    same-block inflate/arbitrage pair is itself evidence of collusion.
    """
    if plan.inflating is None or not plan.arb_cycle:
        raise ValidationError("plan has nothing to execute")
    if rng is None:
        rng = np.random.default_rng(seq.seed)
    trial = run_trial(seq, delay_ms, rng, competitor_reaction_ms=None)
    state = {p.pool_id: p for p in pools}
    p1_id = plan.arb_cycle[0][0]

    inflate_tx = SimTx("tx-inflate", plan.sender, payload=SwapPayload(p1_id, plan.inflating))
    arb_tx = SimTx("tx-arb", plan.receiver, payload=plan.arb_cycle)
    same = trial.inflate_block == trial.arb_block
    placements = [(inflate_tx, trial.inflate_block, 0), (arb_tx, trial.arb_block, 1 if same else 0)]

    ledger, blocks = [], []
    quote_spent = quote_got = ZERO
    for tx, blk, pos in placements:
        if tx is inflate_tx:
            before = state[p1_id]
            res = amm.swap_exact_in(before, plan.inflating)
            state[p1_id] = res.pool_after
            legs = (leg_from_outcome(before, plan.inflating.direction, res),)
            to = pool_address(p1_id)
        else:
            legs_list = []
            for pool_id, order in plan.arb_cycle:
                before = state[pool_id]
                if legs_list:
                    # Later legs spend exactly what the previous leg produced.
                    order = SwapOrder(order.trader, order.direction, legs_list[-1].amount_out)
                res = amm.swap_exact_in(before, order)
                state[pool_id] = res.pool_after
                legs_list.append(leg_from_outcome(before, order.direction, res))
            legs = tuple(legs_list)
            quote_spent, quote_got = legs[0].amount_in, legs[-1].amount_out
            to = "router:arb"
        ledger.append(LedgerTx(tx.id, blk, pos, tx.submitter, to, legs, chain=chain))
        if not blocks or blocks[-1].index != blk:
            blocks.append(SimBlock(blk, seq.close_time(blk - 1), (tx,)))
        else:
            blocks[-1] = SimBlock(blk, blocks[-1].open_time_ms, blocks[-1].transactions + (tx,))

    with localcontext() as ctx:
        ctx.prec = amm.PRECISION
        realized = (quote_got - quote_spent) / plan.spot
    profitable = realized > 0
    if seq.success_criterion == "exact_two":
        placed = trial.arb_block - trial.inflate_block == plan.block_gap
    else:
        placed = trial.arb_block > trial.inflate_block
    return ArbitrageExecution(ledger, blocks, bool(placed and profitable), same, profitable,
                              realized, trial, state)
