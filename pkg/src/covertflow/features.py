"""Incident records, USD pricing and the four per-incident features.

f1  extraction volume (extractor profit, USD)
f2  capital-extraction ratio (extractee loss / swapped capital)
f3  bilateral frequency (incidents sharing the extractor/extractee pair)
f4  extractee frequency (incidents sharing the extractee)
"""

from __future__ import annotations

import csv
from collections import Counter
from dataclasses import dataclass, field
from decimal import Decimal, InvalidOperation
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

from .amm import D
from .errors import EmptyInput, MissingFile, UnknownAsset, ValidationError, ZeroCapital

FEATURE_NAMES = ("f1_volume_usd", "f2_ratio", "f3_bilateral_freq", "f4_extractee_freq")
CHAINS = ("Ethereum", "Arbitrum")
MEV_TYPES = ("Sandwich", "Arbitrage")


@dataclass(frozen=True)
class Incident:
    id: str
    chain: str
    mev_type: str
    block: int
    extractor: str
    extractee: str
    profit_usd: Decimal
    capital_usd: Decimal
    loss_usd: Decimal
    extra: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        for name in ("profit_usd", "capital_usd", "loss_usd"):
            object.__setattr__(self, name, D(getattr(self, name)))

    def validate(self) -> None:
        if self.capital_usd <= 0:
            raise ZeroCapital(f"incident {self.id}: capital must be positive")
        if self.profit_usd < 0 or self.loss_usd < 0:
            raise ValidationError(f"incident {self.id}: profit and loss must be non-negative")
        if self.loss_usd >= self.capital_usd:
            raise ValidationError(f"incident {self.id}: loss must be below capital (ratio in [0, 1))")


@dataclass(frozen=True)
class FeatureVector:
    f1_volume_usd: float
    f2_ratio: float
    f3_bilateral_freq: int
    f4_extractee_freq: int

    def as_tuple(self) -> tuple:
        return (self.f1_volume_usd, self.f2_ratio, self.f3_bilateral_freq, self.f4_extractee_freq)


def compute_features(dataset: Iterable[Incident]) -> dict[str, FeatureVector]:
    dataset = list(dataset)
    if not dataset:
        raise EmptyInput("no incidents")
    for inc in dataset:
        inc.validate()
    pairs = Counter((inc.extractor, inc.extractee) for inc in dataset)
    extractees = Counter(inc.extractee for inc in dataset)
    return {
        inc.id: FeatureVector(
            float(inc.profit_usd),
            float(inc.loss_usd / inc.capital_usd),
            pairs[(inc.extractor, inc.extractee)],
            extractees[inc.extractee],
        )
        for inc in dataset
    }


def feature_matrix(dataset: Iterable[Incident]) -> tuple[list[str], np.ndarray]:
    """Ids and an (n, 4) float array in dataset order."""
    dataset = list(dataset)
    feats = compute_features(dataset)
    ids = [inc.id for inc in dataset]
    return ids, np.array([feats[i].as_tuple() for i in ids], dtype=float)


def split_valid(dataset: Iterable[Incident]) -> tuple[list[Incident], list[tuple[Incident, str]]]:
    """Partition into valid incidents and (incident, reason) rejections."""
    good, bad = [], []
    for inc in dataset:
        try:
            inc.validate()
        except ValidationError as exc:
            bad.append((inc, str(exc)))
        else:
            good.append(inc)
    return good, bad


class PriceTable(dict):
    """Asset symbol -> USD price."""

    def price(self, asset: str) -> Decimal:
        try:
            return self[asset]
        except KeyError:
            raise UnknownAsset(f"no USD price for asset {asset!r}") from None


def load_price_table(path) -> PriceTable:
    path = Path(path)
    if not path.exists():
        raise MissingFile(f"price table not found: {path}")
    table = PriceTable()
    with path.open(newline="") as fh:
        for row in csv.reader(fh):
            if not row or row[0].startswith("#") or row[0].strip().lower() == "asset":
                continue
            if len(row) != 2:
                raise ValidationError(f"{path}: expected 'asset,usd_price', got {row!r}")
            try:
                table[row[0].strip()] = Decimal(row[1].strip())
            except InvalidOperation:
                raise ValidationError(f"{path}: bad price {row[1]!r}") from None
    return table


def value_in_usd(amount, asset: str, table: Mapping[str, Decimal]) -> Decimal:
    if isinstance(table, PriceTable):
        return D(amount) * table.price(asset)
    if asset not in table:
        raise UnknownAsset(f"no USD price for asset {asset!r}")
    return D(amount) * D(table[asset])
