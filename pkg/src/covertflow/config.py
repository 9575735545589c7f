"""Sectioned key=value scenario configuration.

Every key is optional and falls back to the module default; unknown
sections or keys are rejected so typos do not pass silently.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field
from decimal import Decimal, InvalidOperation
from pathlib import Path

from .amm import PoolState
from .chain import PbsConfig, RegionLatency, SequencerConfig
from .errors import ConfigError, MissingFile, ValidationError
from .synth import DEFAULT_ALPHAS, CampaignType

SCHEMA = {
    "global": {"seed"},
    "pool": {"reserve_base", "reserve_quote", "fee_bps", "pool_id", "base_asset", "quote_asset"},
    "chain": {"processing_delay_ms", "block_interval_ms", "feed_latency_ms", "probe_cadence_ms",
              "probe_blocks", "inflate_lead_ms", "success_criterion", "competitor_reaction_ms",
              "adversary_latency_ms", "adversary_jitter_ms", "probe_latency_ms", "probe_jitter_ms",
              "competitor_latency_ms", "competitor_jitter_ms",
              "colluding_validator", "bid", "competing_bid"},
    "staging.sandwich": {"sender_capital", "receiver_base", "receiver_quote", "sender", "receiver"},
    "staging.arbitrage": {"sender_capital", "receiver_capital", "sender", "receiver", "block_gap", "delay_ms",
                          "pool2_reserve_base", "pool2_reserve_quote", "pool2_fee_bps", "pool2_id"},
    "fit": {"family", "min_tail", "jitter_eps"},
    "triage": {"screen_pairs", "refine_top", "refine_pairs", "top_k", "audit_q"},
    "eval": {"n", "alphas", "campaign", "percentile", "count"},
}


@dataclass
class SandwichSettings:
    sender_capital: Decimal = Decimal(50)
    receiver_base: Decimal = Decimal(50)
    receiver_quote: Decimal = Decimal(167)
    sender: str = "S"
    receiver: str = "R"


@dataclass
class ArbitrageSettings:
    pool2: PoolState = field(default_factory=lambda: PoolState(Decimal(100), Decimal(1000), pool_id="pool2"))
    sender_capital: Decimal = Decimal(50)
    receiver_capital: Decimal = Decimal(1000)
    sender: str = "S"
    receiver: str = "R"
    block_gap: int = 2
    delay_ms: float = 330.0


@dataclass
class FitSettings:
    family: str = "auto"
    min_tail: int = 50
    jitter_eps: float = 0.4


@dataclass
class TriageSettings:
    screen_pairs: int = 128
    refine_top: int = 1000
    refine_pairs: int = 4096
    top_k: int = 500
    audit_q: float = 0.90


@dataclass
class EvalSettings:
    n: int = 100_000
    alphas: tuple = DEFAULT_ALPHAS
    campaign: str = "JointlyElevated"
    percentile: float = 0.85
    count: int = 5


@dataclass
class ScenarioConfig:
    seed: int | None = None
    pool: PoolState = field(default_factory=lambda: PoolState(Decimal(100), Decimal(1000), pool_id="pool1"))
    sequencer: SequencerConfig = field(default_factory=SequencerConfig)
    pbs: PbsConfig = field(default_factory=PbsConfig)
    competitor_reaction_ms: float = 0.0
    sandwich: SandwichSettings = field(default_factory=SandwichSettings)
    arbitrage: ArbitrageSettings = field(default_factory=ArbitrageSettings)
    fit: FitSettings = field(default_factory=FitSettings)
    triage: TriageSettings = field(default_factory=TriageSettings)
    eval: EvalSettings = field(default_factory=EvalSettings)


class _Section:
    def __init__(self, parser: configparser.ConfigParser, name: str):
        self.name = name
        self.items = dict(parser.items(name)) if parser.has_section(name) else {}

    def _raw(self, key):
        return self.items.get(key)

    def dec(self, key, default, lo=None, strict_lo=False):
        raw = self._raw(key)
        if raw is None:
            return default
        try:
            val = Decimal(raw)
        except InvalidOperation:
            raise ConfigError(f"[{self.name}] {key}: not a number: {raw!r}") from None
        if not val.is_finite() or (lo is not None and (val <= lo if strict_lo else val < lo)):
            raise ConfigError(f"[{self.name}] {key} = {raw} out of range")
        return val

    def num(self, key, default, lo=None, hi=None, strict_lo=False, strict_hi=False, integer=False):
        raw = self._raw(key)
        if raw is None:
            return default
        try:
            val = int(raw) if integer else float(raw)
        except ValueError:
            raise ConfigError(f"[{self.name}] {key}: not a{'n integer' if integer else ' number'}: {raw!r}") from None
        bad = (lo is not None and (val <= lo if strict_lo else val < lo)) or \
              (hi is not None and (val >= hi if strict_hi else val > hi))
        if bad or val != val:
            raise ConfigError(f"[{self.name}] {key} = {raw} out of range")
        return val

    def text(self, key, default, choices=None):
        raw = self._raw(key)
        if raw is None:
            return default
        if choices is not None and raw not in choices:
            raise ConfigError(f"[{self.name}] {key} must be one of {sorted(choices)}, got {raw!r}")
        return raw

    def flag(self, key, default):
        raw = self._raw(key)
        if raw is None:
            return default
        low = raw.strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"[{self.name}] {key}: not a boolean: {raw!r}")


def parse_config(text: str, source: str = "<config>") -> ScenarioConfig:
    parser = configparser.ConfigParser(interpolation=None, default_section="__none__")
    try:
        parser.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}") from None
    for name in parser.sections():
        if name not in SCHEMA:
            raise ConfigError(f"{source}: unknown section [{name}]")
        unknown = set(parser.options(name)) - SCHEMA[name]
        if unknown:
            raise ConfigError(f"{source}: unknown keys in [{name}]: {sorted(unknown)}")

    cfg = ScenarioConfig()
    g = _Section(parser, "global")
    cfg.seed = g.num("seed", None, lo=0, integer=True)

    p = _Section(parser, "pool")
    try:
        cfg.pool = PoolState(
            p.dec("reserve_base", Decimal(100), lo=0, strict_lo=True),
            p.dec("reserve_quote", Decimal(1000), lo=0, strict_lo=True),
            p.num("fee_bps", 0, lo=0, hi=10_000, strict_hi=True, integer=True),
            pool_id=p.text("pool_id", "pool1"),
            base_asset=p.text("base_asset", "BASE"),
            quote_asset=p.text("quote_asset", "QUOTE"),
        )
        c = _Section(parser, "chain")
        d = SequencerConfig()
        regions = {}
        for name, reg in d.regions.items():
            regions[name] = RegionLatency(c.num(f"{name}_latency_ms", reg.mean_ms, lo=0),
                                          c.num(f"{name}_jitter_ms", reg.jitter_ms, lo=0))
        cfg.sequencer = SequencerConfig(
            processing_delay_ms=c.num("processing_delay_ms", d.processing_delay_ms, lo=0, strict_lo=True),
            block_interval_ms=c.num("block_interval_ms", d.block_interval_ms, lo=0, strict_lo=True),
            regions=regions,
            seed=cfg.seed or 0,
            feed_latency_ms=c.num("feed_latency_ms", d.feed_latency_ms, lo=0),
            probe_cadence_ms=c.num("probe_cadence_ms", d.probe_cadence_ms, lo=0, strict_lo=True),
            probe_blocks=c.num("probe_blocks", d.probe_blocks, lo=2, integer=True),
            inflate_lead_ms=c.num("inflate_lead_ms", d.inflate_lead_ms),
            success_criterion=c.text("success_criterion", d.success_criterion, {"exact_two", "later_block"}),
        )
        cfg.competitor_reaction_ms = c.num("competitor_reaction_ms", 0.0, lo=0)
        cfg.pbs = PbsConfig(c.flag("colluding_validator", True), c.num("bid", 0.0, lo=0),
                            c.num("competing_bid", 0.0, lo=0))

        s = _Section(parser, "staging.sandwich")
        cfg.sandwich = SandwichSettings(
            s.dec("sender_capital", Decimal(50), lo=0), s.dec("receiver_base", Decimal(50), lo=0),
            s.dec("receiver_quote", Decimal(167), lo=0), s.text("sender", "S"), s.text("receiver", "R"),
        )
        a = _Section(parser, "staging.arbitrage")
        cfg.arbitrage = ArbitrageSettings(
            PoolState(a.dec("pool2_reserve_base", cfg.pool.reserve_base, lo=0, strict_lo=True),
                      a.dec("pool2_reserve_quote", cfg.pool.reserve_quote, lo=0, strict_lo=True),
                      a.num("pool2_fee_bps", cfg.pool.fee_bps, lo=0, hi=10_000, strict_hi=True, integer=True),
                      pool_id=a.text("pool2_id", "pool2"), base_asset=cfg.pool.base_asset,
                      quote_asset=cfg.pool.quote_asset),
            a.dec("sender_capital", Decimal(50), lo=0), a.dec("receiver_capital", Decimal(1000), lo=0),
            a.text("sender", "S"), a.text("receiver", "R"),
            a.num("block_gap", 2, lo=1, integer=True), a.num("delay_ms", 330.0, lo=0),
        )
        if cfg.arbitrage.pool2.pool_id == cfg.pool.pool_id:
            raise ConfigError("[staging.arbitrage] pool2_id must differ from [pool] pool_id")

        f = _Section(parser, "fit")
        cfg.fit = FitSettings(f.text("family", "auto", {"gaussian", "t", "auto"}),
                              f.num("min_tail", 50, lo=2, integer=True),
                              f.num("jitter_eps", 0.4, lo=0, hi=0.5, strict_lo=True, strict_hi=True))
        t = _Section(parser, "triage")
        cfg.triage = TriageSettings(
            t.num("screen_pairs", 128, lo=2, integer=True), t.num("refine_top", 1000, lo=0, integer=True),
            t.num("refine_pairs", 4096, lo=2, integer=True), t.num("top_k", 500, lo=1, integer=True),
            t.num("audit_q", 0.90, lo=0, hi=1, strict_lo=True, strict_hi=True),
        )
        e = _Section(parser, "eval")
        alphas = DEFAULT_ALPHAS
        if e._raw("alphas") is not None:
            try:
                alphas = tuple(float(v) for v in e._raw("alphas").split(","))
            except ValueError:
                raise ConfigError("[eval] alphas: expected four comma-separated numbers") from None
            if len(alphas) != 4 or any(not a > 1 for a in alphas):
                raise ConfigError("[eval] alphas: need four values, each > 1")
        cfg.eval = EvalSettings(
            e.num("n", 100_000, lo=1, integer=True), alphas,
            e.text("campaign", "JointlyElevated", {c.value for c in CampaignType}),
            e.num("percentile", 0.85, lo=0, hi=1, strict_lo=True, strict_hi=True),
            e.num("count", 5, lo=1, integer=True),
        )
    except ConfigError:
        raise
    except ValidationError as exc:
        raise ConfigError(f"{source}: {exc}") from None
    return cfg


def load_config(path) -> ScenarioConfig:
    path = Path(path)
    if not path.exists():
        raise MissingFile(f"config not found: {path}")
    return parse_config(path.read_text(encoding="utf-8"), str(path))
