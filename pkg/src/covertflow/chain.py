"""Transaction inclusion under a PBS auction and an FCFS sequencer.

The sequencer model: a transaction submitted at ``t`` from a region with
latency ``L`` becomes ready at ``t + L + processing_delay`` and is published
in the first block whose close time is at or after its ready time.  Blocks
close on a fixed grid ``phase + k * block_interval``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Any, Sequence

import numpy as np

from .errors import BundleError, EstimationFailed, ValidationError


@dataclass(frozen=True)
class Probe:
    """Payload marker for a boundary-probing transaction."""


@dataclass(frozen=True)
class SimTx:
    id: str
    submitter: str
    submit_time_ms: float = 0.0
    payload: Any = None
    region: str = "adversary"

    def __post_init__(self):
        if self.submit_time_ms < 0:
            raise ValidationError(f"{self.id}: submit_time_ms must be >= 0")


@dataclass(frozen=True)
class Bundle:
    txs: tuple[SimTx, ...]
    bid: float = 0.0

    @property
    def victim(self) -> SimTx:
        return self.txs[1]


@dataclass(frozen=True)
class RegionLatency:
    mean_ms: float
    jitter_ms: float = 0.0  # uniform half-width

    @property
    def min_ms(self) -> float:
        return max(0.0, self.mean_ms - self.jitter_ms)

    @property
    def max_ms(self) -> float:
        return self.mean_ms + self.jitter_ms


def default_regions() -> dict[str, RegionLatency]:
    return {
        "adversary": RegionLatency(5.0, 8.0),
        "probe": RegionLatency(15.0, 8.0),
        "competitor": RegionLatency(5.0, 8.0),
    }


@dataclass(frozen=True)
class SequencerConfig:
    processing_delay_ms: float = 200.0
    block_interval_ms: float = 250.0
    phase_ms: float = 0.0
    regions: dict[str, RegionLatency] = field(default_factory=default_regions)
    seed: int = 0
    # Time from block close until watchers can act on it (feed + polling).
    feed_latency_ms: float = 150.0
    probe_cadence_ms: float = 5.0
    probe_blocks: int = 4
    # Inflating tx aims this far before the estimated boundary.
    inflate_lead_ms: float = 10.0
    # "exact_two": arbitrage exactly two blocks later; "later_block": any later block.
    success_criterion: str = "exact_two"

    def __post_init__(self):
        if self.processing_delay_ms <= 0:
            raise ValidationError("processing_delay_ms must be > 0")
        if self.block_interval_ms <= 0:
            raise ValidationError("block_interval_ms must be > 0")
        if self.probe_cadence_ms <= 0 or self.probe_cadence_ms >= self.block_interval_ms:
            raise ValidationError("probe cadence must lie in (0, block_interval_ms)")
        if self.success_criterion not in ("exact_two", "later_block"):
            raise ValidationError(f"unknown success_criterion {self.success_criterion!r}")
        for name, reg in self.regions.items():
            if reg.mean_ms < 0 or reg.jitter_ms < 0:
                raise ValidationError(f"region {name}: latency must be non-negative")

    def region(self, name: str) -> RegionLatency:
        try:
            return self.regions[name]
        except KeyError:
            raise ValidationError(f"unknown latency region {name!r}") from None

    def close_time(self, index: int) -> float:
        return self.phase_ms + index * self.block_interval_ms

    def block_index(self, ready_ms):
        """Index of the first block closing at or after ``ready_ms``."""
        return np.ceil((np.asarray(ready_ms, dtype=float) - self.phase_ms) / self.block_interval_ms).astype(np.int64)


@dataclass(frozen=True)
class SimBlock:
    index: int
    open_time_ms: float
    transactions: tuple[SimTx, ...]
    ready_times_ms: tuple[float, ...] = ()

    @property
    def tx_ids(self) -> list[str]:
        return [tx.id for tx in self.transactions]

    def position(self, tx_id: str) -> int:
        return self.tx_ids.index(tx_id)


@dataclass(frozen=True)
class PbsConfig:
    colluding_validator: bool = True
    bid: float = 0.0
    competing_bid: float = 0.0


@dataclass(frozen=True)
class PbsOutcome:
    block: SimBlock
    included: bool
    adversary_cost: float


def trial_rng(seed: int, trial: int) -> np.random.Generator:
    """Independent stream for trial ``trial`` derived from ``seed``."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(trial)]))


def run_pbs_round(
    victim: SimTx,
    bundle: Bundle,
    colluding_validator: bool,
    competing_bid: float = 0.0,
    index: int = 0,
) -> PbsOutcome:
    """Two-bidder sealed auction for the top-of-block slot.

    A colluding validator includes the bundle whatever the bid, and the bid
    flows back to the adversary, so the net cost is zero.
    """
    if len(bundle.txs) != 3:
        raise BundleError(f"sandwich bundle needs 3 transactions, got {len(bundle.txs)}")
    if bundle.victim.id != victim.id:
        raise BundleError(f"bundle victim {bundle.victim.id!r} does not match mempool tx {victim.id!r}")
    if bundle.bid < 0:
        raise BundleError("bid must be non-negative")
    if colluding_validator:
        included, cost = True, 0.0
    else:
        included = bundle.bid >= competing_bid
        cost = float(bundle.bid) if included else 0.0
    txs = bundle.txs if included else (victim,)
    return PbsOutcome(SimBlock(index, 0.0, tuple(txs)), included, cost)


def sample_latency(seq: SequencerConfig, region: str, rng: np.random.Generator, size=None):
    reg = seq.region(region)
    draw = reg.mean_ms + rng.uniform(-reg.jitter_ms, reg.jitter_ms, size=size)
    return np.maximum(draw, 0.0)


def _ready_times(seq: SequencerConfig, submit, region: str, rng: np.random.Generator) -> np.ndarray:
    submit = np.asarray(submit, dtype=float)
    return submit + sample_latency(seq, region, rng, size=submit.shape) + seq.processing_delay_ms


def run_fcfs(
    seq: SequencerConfig,
    txs: Sequence[SimTx],
    rng: np.random.Generator | None = None,
) -> list[SimBlock]:
    """Publish ``txs`` in FCFS order; returns the non-empty blocks by index."""
    if rng is None:
        rng = np.random.default_rng(seq.seed)
    order = sorted(range(len(txs)), key=lambda i: (txs[i].submit_time_ms, txs[i].id))
    ready = np.empty(len(txs))
    # Latencies are drawn in submit order so results do not depend on input order.
    for i in order:
        ready[i] = _ready_times(seq, txs[i].submit_time_ms, txs[i].region, rng)
    blocks_of = seq.block_index(ready) if len(txs) else np.array([], dtype=np.int64)
    rank = {i: r for r, i in enumerate(order)}
    by_block: dict[int, list[int]] = {}
    for i in order:
        by_block.setdefault(int(blocks_of[i]), []).append(i)
    blocks = []
    for idx in sorted(by_block):
        members = sorted(by_block[idx], key=lambda i: (ready[i], rank[i]))
        blocks.append(
            SimBlock(
                index=idx,
                open_time_ms=seq.close_time(idx - 1),
                transactions=tuple(txs[i] for i in members),
                ready_times_ms=tuple(float(ready[i]) for i in members),
            )
        )
    return blocks


def probe_stream(seq: SequencerConfig, start_ms: float = 0.0, submitter: str = "prober") -> list[SimTx]:
    n = int(seq.probe_blocks * seq.block_interval_ms / seq.probe_cadence_ms)
    return [
        SimTx(f"probe-{j}", submitter, start_ms + j * seq.probe_cadence_ms, Probe(), region="probe")
        for j in range(n)
    ]


def _boundary_from_probes(seq: SequencerConfig, sends: np.ndarray, blocks: np.ndarray, region: str) -> float:
    """Close time of the first block whose final probe is confirmed.

    A probe known to sit in block k bounds that block's close from below by
    its earliest possible ready time; one in block k+1 bounds it from above
    by its latest.  Bounds from every later boundary are folded onto the
    first one through the fixed block interval.
    """
    reg = seq.region(region)
    d, interval = seq.processing_delay_ms, seq.block_interval_ms
    present = np.unique(blocks)
    confirmed = [k for k in present[:-1] if k + 1 in present]
    if not confirmed:
        raise EstimationFailed("no probe was confirmed as the final transaction of a block")
    k0 = confirmed[0]
    lower, upper = -math.inf, math.inf
    for k in confirmed:
        shift = (k - k0) * interval
        lower = max(lower, sends[blocks == k].max() + reg.min_ms + d - shift)
        upper = min(upper, sends[blocks == k + 1].min() + reg.max_ms + d - shift)
    # The final probe is taken to have been ready at the close, moved back
    # inside the feasible interval when the later bounds rule that out.
    final_send = sends[blocks == k0].max()
    estimate = final_send + reg.mean_ms + d
    return float(min(max(estimate, lower), upper))


def estimate_boundary(
    seq: SequencerConfig,
    probes: Sequence[SimTx],
    rng: np.random.Generator | None = None,
) -> float:
    """Phase (ms offset in ``[0, block_interval)``) of the block grid."""
    if not probes:
        raise EstimationFailed("empty probe stream")
    blocks = run_fcfs(seq, probes, rng)
    sends, idx = [], []
    for block in blocks:
        for tx in block.transactions:
            sends.append(tx.submit_time_ms)
            idx.append(block.index)
    region = probes[0].region
    close = _boundary_from_probes(seq, np.asarray(sends), np.asarray(idx), region)
    return close % seq.block_interval_ms


def phase_error(estimate: float, truth: float, interval: float) -> float:
    """Signed circular difference on the block grid."""
    return (estimate - truth + interval / 2) % interval - interval / 2


@dataclass(frozen=True)
class TrialResult:
    inflate_block: int
    arb_block: int
    success: bool
    adversary_wins: bool
    inflate_ready_ms: float
    arb_ready_ms: float
    competitor_ready_ms: float | None


def run_trial(
    seq: SequencerConfig,
    delay_ms: float,
    rng: np.random.Generator,
    competitor_reaction_ms: float | None = 0.0,
) -> TrialResult:
    """One probe -> inflate -> arbitrage round on a freshly phased grid."""
    interval, d = seq.block_interval_ms, seq.processing_delay_ms
    seq = replace(seq, phase_ms=float(rng.uniform(0.0, interval)))
    sends = np.arange(int(seq.probe_blocks * interval / seq.probe_cadence_ms)) * seq.probe_cadence_ms
    ready = _ready_times(seq, sends, "probe", rng)
    blocks = seq.block_index(ready)
    close0 = _boundary_from_probes(seq, sends, blocks, "probe")

    adv = seq.region("adversary")
    # First estimated boundary that can still be reached after probing ends.
    earliest = sends[-1] + adv.mean_ms + d + seq.inflate_lead_ms
    n_ahead = max(1, math.ceil((earliest - close0) / interval))
    inflate_submit = close0 + n_ahead * interval - adv.mean_ms - d - seq.inflate_lead_ms
    inflate_ready, arb_ready = _ready_times(
        seq, [inflate_submit, inflate_submit + delay_ms], "adversary", rng
    )
    inflate_block, arb_block = (int(b) for b in seq.block_index([inflate_ready, arb_ready]))
    # Equal ready times go to the earlier submission.
    if arb_block == inflate_block and arb_ready < inflate_ready:
        arb_ready = inflate_ready

    gap = arb_block - inflate_block
    if seq.success_criterion == "exact_two":
        success = gap == 2
    else:
        success = gap >= 1

    comp_ready = None
    wins = True
    if competitor_reaction_ms is not None:
        observed = seq.close_time(inflate_block) + seq.feed_latency_ms
        comp_ready = float(_ready_times(seq, observed + competitor_reaction_ms, "competitor", rng))
        wins = (arb_block, arb_ready) < (int(seq.block_index(comp_ready)), comp_ready)
    return TrialResult(inflate_block, arb_block, bool(success), bool(wins),
                       float(inflate_ready), float(arb_ready), comp_ready)


@dataclass(frozen=True)
class TimingResult:
    delay_ms: float
    trials: int
    success_rate: float
    adversary_wins_rate: float
    seed: int

    def as_row(self) -> dict:
        return {
            "delay_ms": self.delay_ms,
            "trials": self.trials,
            "success_rate": self.success_rate,
            "adversary_wins_rate": self.adversary_wins_rate,
            "seed": self.seed,
        }


def run_timing_experiment(
    seq: SequencerConfig,
    delay_ms: float,
    trials: int,
    competitor_reaction_ms: float = 0.0,
) -> TimingResult:
    if trials < 1:
        raise ValidationError("trials must be >= 1")
    results = [
        run_trial(seq, delay_ms, trial_rng(seq.seed, i), competitor_reaction_ms)
        for i in range(trials)
    ]
    return TimingResult(
        delay_ms=float(delay_ms),
        trials=trials,
        success_rate=sum(r.success for r in results) / trials,
        adversary_wins_rate=sum(r.adversary_wins for r in results) / trials,
        seed=seq.seed,
    )


def sweep_delays(
    seq: SequencerConfig,
    delays: Sequence[float],
    trials: int,
    competitor_reaction_ms: float = 0.0,
) -> list[TimingResult]:
    return [run_timing_experiment(seq, dl, trials, competitor_reaction_ms) for dl in delays]
