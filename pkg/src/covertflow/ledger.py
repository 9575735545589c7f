"""Decoded on-chain transactions as seen by the forensic side."""

from __future__ import annotations

from dataclasses import dataclass, field
from decimal import Decimal

from .amm import D, Direction, PoolState, SwapOutcome


@dataclass(frozen=True)
class SwapLeg:
    pool_id: str
    direction: Direction
    token_in: str
    token_out: str
    amount_in: Decimal
    amount_out: Decimal

    def __post_init__(self):
        object.__setattr__(self, "direction", Direction(self.direction))
        object.__setattr__(self, "amount_in", D(self.amount_in))
        object.__setattr__(self, "amount_out", D(self.amount_out))


@dataclass(frozen=True)
class LedgerTx:
    tx_id: str
    block: int
    position: int
    sender: str
    to: str
    swaps: tuple[SwapLeg, ...] = ()
    transfer_amount: Decimal | None = None
    transfer_asset: str | None = None
    chain: str = "Ethereum"
    extra: dict = field(default_factory=dict, compare=False)

    @property
    def is_swap(self) -> bool:
        return bool(self.swaps)


def leg_from_outcome(pool_before: PoolState, direction: Direction, outcome: SwapOutcome) -> SwapLeg:
    token_in, token_out = pool_before.assets_for(Direction(direction))
    return SwapLeg(
        pool_before.pool_id, direction, token_in, token_out, outcome.amount_in, outcome.amount_out
    )


def pool_address(pool_id: str) -> str:
    """Contract address that swaps on ``pool_id`` are sent to."""
    return f"dex:{pool_id}"


def ordered(ledger) -> list[LedgerTx]:
    return sorted(ledger, key=lambda tx: (tx.block, tx.position))
