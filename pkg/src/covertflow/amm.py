"""Constant-product (x * y = k) pool math in exact decimal arithmetic."""

from __future__ import annotations

import enum
from dataclasses import dataclass, replace
from decimal import Decimal, localcontext

from .errors import DegeneratePool, ValidationError

# 40 significant digits keeps the toy-example arithmetic exact well past 1e-12.
PRECISION = 40
ZERO = Decimal(0)
BPS = Decimal(10000)


def D(value) -> Decimal:
    """Coerce ints, strings and floats to Decimal (floats via their repr)."""
    if isinstance(value, Decimal):
        return value
    if isinstance(value, float):
        return Decimal(repr(value))
    return Decimal(value)


class Direction(str, enum.Enum):
    BASE_FOR_QUOTE = "BaseForQuote"
    QUOTE_FOR_BASE = "QuoteForBase"

    @property
    def reverse(self) -> "Direction":
        if self is Direction.BASE_FOR_QUOTE:
            return Direction.QUOTE_FOR_BASE
        return Direction.BASE_FOR_QUOTE


@dataclass(frozen=True)
class PoolState:
    reserve_base: Decimal
    reserve_quote: Decimal
    fee_bps: int = 0
    pool_id: str = "pool"
    base_asset: str = "BASE"
    quote_asset: str = "QUOTE"

    def __post_init__(self):
        object.__setattr__(self, "reserve_base", D(self.reserve_base))
        object.__setattr__(self, "reserve_quote", D(self.reserve_quote))
        if self.reserve_base < 0 or self.reserve_quote < 0:
            raise ValidationError("reserves must be non-negative")
        if not 0 <= int(self.fee_bps) < 10000:
            raise ValidationError(f"fee_bps out of range: {self.fee_bps}")

    @property
    def tradable(self) -> bool:
        return self.reserve_base > 0 and self.reserve_quote > 0

    @property
    def k(self) -> Decimal:
        with localcontext() as ctx:
            ctx.prec = PRECISION
            return self.reserve_base * self.reserve_quote

    @property
    def spot(self) -> Decimal:
        """Quote units per base unit."""
        _check_tradable(self)
        with localcontext() as ctx:
            ctx.prec = PRECISION
            return self.reserve_quote / self.reserve_base

    def reserves_for(self, direction: Direction) -> tuple[Decimal, Decimal]:
        """(reserve_in, reserve_out) for a swap in ``direction``."""
        if direction is Direction.BASE_FOR_QUOTE:
            return self.reserve_base, self.reserve_quote
        return self.reserve_quote, self.reserve_base

    def assets_for(self, direction: Direction) -> tuple[str, str]:
        if direction is Direction.BASE_FOR_QUOTE:
            return self.base_asset, self.quote_asset
        return self.quote_asset, self.base_asset


@dataclass(frozen=True)
class SwapOrder:
    trader: str
    direction: Direction
    amount_in: Decimal
    min_amount_out: Decimal = ZERO

    def __post_init__(self):
        object.__setattr__(self, "direction", Direction(self.direction))
        object.__setattr__(self, "amount_in", D(self.amount_in))
        object.__setattr__(self, "min_amount_out", D(self.min_amount_out))
        if self.amount_in <= 0:
            raise ValidationError("amount_in must be positive")
        if self.min_amount_out < 0:
            raise ValidationError("min_amount_out must be non-negative")


@dataclass(frozen=True)
class SwapOutcome:
    amount_in: Decimal
    amount_out: Decimal
    pool_after: PoolState
    executed: bool


def _check_tradable(pool: PoolState) -> None:
    if not pool.tradable:
        raise DegeneratePool(
            f"pool {pool.pool_id} has a zero reserve "
            f"({pool.reserve_base}, {pool.reserve_quote})"
        )


def quote_exact_in(pool: PoolState, direction: Direction, amount_in) -> Decimal:
    """Output of swapping ``amount_in`` against ``pool``; pure."""
    _check_tradable(pool)
    amount_in = D(amount_in)
    if amount_in < 0:
        raise ValidationError("amount_in must be non-negative")
    if amount_in == 0:
        return ZERO
    r_in, r_out = pool.reserves_for(Direction(direction))
    with localcontext() as ctx:
        ctx.prec = PRECISION
        effective = amount_in * (BPS - pool.fee_bps) / BPS
        return r_out - (r_in * r_out) / (r_in + effective)


def amount_in_for_out(pool: PoolState, direction: Direction, amount_out) -> Decimal:
    """Input needed to receive exactly ``amount_out`` (inverse of quote_exact_in)."""
    _check_tradable(pool)
    amount_out = D(amount_out)
    r_in, r_out = pool.reserves_for(Direction(direction))
    if not 0 <= amount_out < r_out:
        raise ValidationError("amount_out must lie in [0, reserve_out)")
    with localcontext() as ctx:
        ctx.prec = PRECISION
        effective = r_in * amount_out / (r_out - amount_out)
        return effective * BPS / (BPS - pool.fee_bps)


def apply_swap(pool: PoolState, direction: Direction, amount_in, amount_out) -> PoolState:
    amount_in, amount_out = D(amount_in), D(amount_out)
    with localcontext() as ctx:
        ctx.prec = PRECISION
        if Direction(direction) is Direction.BASE_FOR_QUOTE:
            return replace(
                pool,
                reserve_base=pool.reserve_base + amount_in,
                reserve_quote=pool.reserve_quote - amount_out,
            )
        return replace(
            pool,
            reserve_base=pool.reserve_base - amount_out,
            reserve_quote=pool.reserve_quote + amount_in,
        )


def swap_exact_in(pool: PoolState, order: SwapOrder) -> SwapOutcome:
    """Execute ``order``; a failed slippage guard leaves the pool untouched."""
    out = quote_exact_in(pool, order.direction, order.amount_in)
    if out < order.min_amount_out:
        return SwapOutcome(order.amount_in, ZERO, pool, executed=False)
    after = apply_swap(pool, order.direction, order.amount_in, out)
    return SwapOutcome(order.amount_in, out, after, executed=True)


def spot_shortfall(pool: PoolState, direction: Direction, amount_in) -> Decimal:
    """Relative loss versus the spot rate: 1 - out / (amount_in * spot)."""
    amount_in = D(amount_in)
    out = quote_exact_in(pool, direction, amount_in)
    r_in, r_out = pool.reserves_for(Direction(direction))
    with localcontext() as ctx:
        ctx.prec = PRECISION
        return 1 - out / (amount_in * r_out / r_in)
