"""Synthetic incident baselines, planted campaigns and triage evaluation.

Also hosts the scenario generators used to exercise the detectors: staged
sandwich/arbitrage ledgers, benign background blocks and address graphs.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from decimal import Decimal
from enum import Enum
from typing import Sequence

import networkx as nx
import numpy as np
from scipy import special

from .amm import D, Direction, PoolState
from .chain import PbsConfig, SequencerConfig
from .copula import GAUSSIAN, CopulaModel, rank_incidents, fit_copula, to_uniform_scores, validate_model
from .errors import EmptyInput, ValidationError
from .features import Incident, feature_matrix
from .ledger import LedgerTx, SwapLeg, pool_address
from .staging import execute_arbitrage, execute_sandwich, plan_arbitrage, plan_sandwich

# Ethereum fits: volume, ratio proxy 1/(1 - f2), bilateral and extractee frequency.
DEFAULT_ALPHAS = (2.23, 2.36, 2.61, 2.57)
RECALL_KS = (100, 500, 1000)


@dataclass(frozen=True)
class BaselineSpec:
    n: int
    alphas: tuple[float, float, float, float] = DEFAULT_ALPHAS
    volume_x_min: float = 10.0
    dependence: CopulaModel | None = None
    seed: int = 0
    chain: str = "Ethereum"
    mev_type: str = "Sandwich"

    def __post_init__(self):
        if self.n < 0:
            raise ValidationError("n must be non-negative")
        if len(self.alphas) != 4 or any(a <= 1 for a in self.alphas):
            raise ValidationError("every marginal needs alpha > 1")
        if self.volume_x_min <= 0:
            raise ValidationError("volume_x_min must be positive")
        if self.dependence is not None:
            validate_model(self.dependence)
            if self.dependence.dim != 4:
                raise ValidationError("dependence model must be 4-dimensional")


def _pareto(u: np.ndarray, alpha: float, x_min: float = 1.0) -> np.ndarray:
    """Inverse CCDF of density ~ x^-alpha on [x_min, inf), evaluated at survival 1 - u."""
    return x_min * (1.0 - u) ** (-1.0 / (alpha - 1.0))


def sample_copula(model: CopulaModel | None, n: int, rng: np.random.Generator, d: int = 4) -> np.ndarray:
    if model is None:
        return rng.random((n, d))
    z = rng.standard_normal((n, model.dim)) @ np.linalg.cholesky(model.corr).T
    if model.family == GAUSSIAN:
        return special.ndtr(z)
    s = np.sqrt(rng.chisquare(model.nu, n) / model.nu)
    return special.stdtr(model.nu, z / s[:, None])


def _latent(spec: BaselineSpec, rng: np.random.Generator) -> np.ndarray:
    u = sample_copula(spec.dependence, spec.n, rng)
    a1, a2, a3, a4 = spec.alphas
    return np.column_stack([
        _pareto(u[:, 0], a1, spec.volume_x_min),
        1.0 - (1.0 - u[:, 1]) ** (1.0 / (a2 - 1.0)),
        _pareto(u[:, 2], a3),
        _pareto(u[:, 3], a4),
    ])


def sample_baseline_features(spec: BaselineSpec) -> np.ndarray:
    """Continuous per-incident features (f1, f2, f3 proxy, f4 proxy).

    The same draws seed ``generate_baseline``; f2's proxy 1/(1 - f2) is
    Pareto(alpha_2).
    """
    return _latent(spec, np.random.default_rng(spec.seed))


def _group_sizes(n: int, alpha: float, rng: np.random.Generator) -> np.ndarray:
    """Extractee group sizes whose size-biased law has tail exponent ``alpha``.

    An incident in a group of size k has f4 = k, so sizes are drawn with
    exponent alpha + 1; the last group is trimmed to total exactly n.
    """
    sizes, total = [], 0
    while total < n:
        batch = np.floor(_pareto(rng.random(max(64, n // 2)), alpha + 1.0)).astype(np.int64)
        for s in batch:
            s = int(min(s, n - total))
            sizes.append(s)
            total += s
            if total == n:
                break
    return np.array(sizes, dtype=np.int64)


def generate_baseline(spec: BaselineSpec) -> list[Incident]:
    """Incidents whose computed features follow the requested marginals and dependence.

    Extractee groups are built so that f4 (incidents per extractee) is
    realised exactly; group members are assigned by the f4 copula score.
    Inside each group, pair chunks realise f3 <= f4 from the f3 proxy.
    """
    if spec.n == 0:
        return []
    rng = np.random.default_rng(spec.seed)
    lat = _latent(spec, rng)
    n = spec.n

    sizes = _group_sizes(n, spec.alphas[3], rng)
    f4 = np.empty(n, dtype=np.int64)
    f4[np.argsort(lat[:, 3], kind="stable")] = np.sort(np.repeat(sizes, sizes))
    f3_target = np.minimum(np.floor(lat[:, 2]).astype(np.int64), f4)

    extractee = np.empty(n, dtype=object)
    extractor = np.empty(n, dtype=object)
    group_no = 0
    for k in np.unique(f4):
        members = np.nonzero(f4 == k)[0]
        for start in range(0, members.size, k):
            group = members[start:start + k]
            extractee[group] = f"V{spec.seed}-{group_no}"
            # Largest f3 targets claim their chunks first.
            queue = list(group[np.lexsort((group, -f3_target[group]))])
            chunk_no = 0
            while queue:
                m = max(1, int(f3_target[queue[0]]))
                chunk, queue = queue[:m], queue[m:]
                extractor[chunk] = f"X{spec.seed}-{group_no}.{chunk_no}"
                chunk_no += 1
            group_no += 1

    capital = np.exp(rng.normal(9.0, 1.5, n))
    out = []
    for i in range(n):
        cap = D(float(capital[i]))
        out.append(Incident(
            id=f"b{spec.seed}-{i:06d}", chain=spec.chain, mev_type=spec.mev_type, block=i,
            extractor=extractor[i], extractee=extractee[i],
            profit_usd=D(float(lat[i, 0])), capital_usd=cap, loss_usd=D(float(lat[i, 1])) * cap,
        ))
    return out


class CampaignType(str, Enum):
    EXTREME_VOLUME = "ExtremeVolume"
    REPEATED_PAIR = "RepeatedPair"
    JOINTLY_ELEVATED = "JointlyElevated"


@dataclass(frozen=True)
class PlantSpec:
    """``percentile`` drives every non-signature feature; ``count`` is the number of campaigns
    (RepeatedPair: incidents on the one pair)."""

    campaign: CampaignType
    percentile: float = 0.85
    count: int = 1
    extractor: str | None = None
    extractee: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "campaign", CampaignType(self.campaign))
        if not 0 < self.percentile < 1:
            raise ValidationError("percentile must lie in (0, 1)")
        if self.count < 1:
            raise ValidationError("count must be at least 1")


@dataclass
class PlantResult:
    dataset: list[Incident]
    ground_truth: list[str]
    support: list[str] = field(default_factory=list)
    targets: dict = field(default_factory=dict)


def plant_campaign(baseline: Sequence[Incident], plant: PlantSpec, tag: str = "c") -> PlantResult:
    """Append a campaign whose features sit at the requested baseline percentiles.

    JointlyElevated campaigns need f3 pair-mates and f4 extractee-mates to
    realise their frequency features; only the pair incidents carry the
    joint signature and count as ground truth.
    """
    baseline = list(baseline)
    if not baseline:
        raise EmptyInput("cannot plant into an empty baseline")
    _, x = feature_matrix(baseline)
    p = plant.percentile
    q = [float(np.quantile(x[:, j], p, method="higher")) for j in range(4)]
    block = max(inc.block for inc in baseline) + 1
    chain, mev = baseline[0].chain, baseline[0].mev_type
    capital = D(10_000)
    planted, truth, support = [], [], []

    def add(iid, extractor, extractee, volume, ratio, is_truth=True):
        nonlocal block
        planted.append(Incident(iid, chain, mev, block, extractor, extractee,
                                D(volume), capital, D(ratio) * capital))
        (truth if is_truth else support).append(iid)
        block += 1

    kind = plant.campaign
    if kind is CampaignType.EXTREME_VOLUME:
        # The signature is a record volume: strictly above every baseline value.
        top = float(x[:, 0].max())
        for c in range(plant.count):
            add(f"{tag}-ev{c}", f"{tag}-EVX{c}", f"{tag}-EVV{c}", top * (1.01 + 0.01 * c), q[1])
        targets = {"f1": top * 1.01}
    elif kind is CampaignType.REPEATED_PAIR:
        xr = plant.extractor or f"{tag}-RPX"
        xe = plant.extractee or f"{tag}-RPV"
        for c in range(plant.count):
            add(f"{tag}-rp{c}", xr, xe, q[0], q[1])
        targets = {"f3_planted": plant.count}
    else:
        f3, f4 = int(q[2]), max(int(q[3]), int(q[2]))
        for c in range(plant.count):
            xe = f"{tag}-JEV{c}"
            for m in range(f3):
                add(f"{tag}-je{c}.{m}", f"{tag}-JEX{c}", xe, q[0], q[1])
            for m in range(f4 - f3):
                add(f"{tag}-je{c}.s{m}", f"{tag}-JEX{c}.s{m}", xe, q[0], q[1], is_truth=False)
        targets = {"f1": q[0], "f2": q[1], "f3": f3, "f4": f4}
    return PlantResult(baseline + planted, truth, support, targets)


@dataclass
class TriageEvaluation:
    multivariate_ranks: dict[str, int]
    single_feature_ranks: dict[str, int]
    recall_multivariate: dict[int, float | None]
    recall_single: dict[int, float | None]
    model: CopulaModel | None = None

    @property
    def median_multivariate(self) -> float | None:
        return float(np.median(list(self.multivariate_ranks.values()))) if self.multivariate_ranks else None

    @property
    def median_single(self) -> float | None:
        return float(np.median(list(self.single_feature_ranks.values()))) if self.single_feature_ranks else None

    def summary(self) -> dict:
        return {
            "n_ground_truth": len(self.multivariate_ranks),
            "median_multivariate_rank": self.median_multivariate,
            "median_best_single_feature_rank": self.median_single,
            "recall_multivariate": {str(k): v for k, v in self.recall_multivariate.items()},
            "recall_single_feature": {str(k): v for k, v in self.recall_single.items()},
            "family": self.model.family if self.model else None,
            "nu": self.model.nu if self.model else None,
        }


def descending_ranks(x: np.ndarray) -> np.ndarray:
    """1 + number of strictly larger values, per column (ties share the best rank)."""
    out = np.empty(x.shape, dtype=np.int64)
    for j in range(x.shape[1]):
        col = np.sort(x[:, j])
        out[:, j] = 1 + col.size - np.searchsorted(col, x[:, j], side="right")
    return out


def _recall(ranks: dict[str, int], ks) -> dict[int, float | None]:
    if not ranks:
        return {k: None for k in ks}
    vals = np.array(list(ranks.values()))
    return {k: float(np.mean(vals <= k)) for k in ks}


def evaluate_triage(
    dataset: Sequence[Incident],
    ground_truth: Sequence[str],
    seed: int = 0,
    family: str = "auto",
    jitter_seed: int = 0,
    ks: Sequence[int] = RECALL_KS,
    n_pairs: int = 128,
    refine_top: int = 1000,
    refine_pairs: int = 4096,
    threads: int = 1,
) -> TriageEvaluation:
    """Multivariate (ascending p) versus best single-feature (descending value) ranks."""
    ids, x = feature_matrix(dataset)
    missing = set(ground_truth) - set(ids)
    if missing:
        raise ValidationError(f"ground-truth ids not in dataset: {sorted(missing)[:5]}")
    scores = to_uniform_scores(x, ids, jitter_seed=jitter_seed)
    model = fit_copula(scores, family)
    ranking = rank_incidents(model, scores, seed=seed, n_pairs=n_pairs,
                             refine_top=refine_top, refine_pairs=refine_pairs, threads=threads)
    multi = {s.id: s.rank for s in ranking}
    single = descending_ranks(x).min(axis=1)
    row = {iid: r for r, iid in enumerate(ids)}
    mv = {g: multi[g] for g in ground_truth}
    sf = {g: int(single[row[g]]) for g in ground_truth}
    return TriageEvaluation(mv, sf, _recall(mv, ks), _recall(sf, ks), model)


# --- detector scenarios ---------------------------------------------------


@dataclass
class StagedScenario:
    kind: str
    ledger: list[LedgerTx]
    sender: str
    receiver: str
    dex: str


def staged_sandwich(rng: np.random.Generator, tag: str = "0", block: int = 0) -> StagedScenario:
    base = float(rng.uniform(50, 500))
    pool = PoolState(D(round(base, 6)), D(round(base * rng.uniform(5, 20), 6)), int(rng.integers(0, 31)),
                     pool_id=f"pool{tag}", base_asset="BTC", quote_asset="USDC")
    sender, receiver = f"S{tag}", f"R{tag}"
    capital = D(round(base * rng.uniform(0.05, 0.5), 6))
    r_base = D(round(float(capital) * rng.uniform(0.5, 1.5), 6))
    plan = plan_sandwich(pool, capital, r_base, D(0), sender=sender, receiver=receiver)
    ex = execute_sandwich(plan, pool, PbsConfig(), block_index=block)
    return StagedScenario("Sandwich", ex.ledger, sender, receiver, pool_address(pool.pool_id))


def staged_arbitrage(rng: np.random.Generator, tag: str = "0", seq: SequencerConfig | None = None,
                     delay_ms: float = 330.0) -> StagedScenario:
    seq = seq or SequencerConfig()
    base = float(rng.uniform(50, 500))
    spot = rng.uniform(5, 20)
    p1 = PoolState(D(round(base, 6)), D(round(base * spot, 6)), pool_id=f"poolA{tag}",
                   base_asset="ETH", quote_asset="USDC")
    scale = rng.uniform(0.5, 2.0)
    p2 = PoolState(D(round(base * scale, 6)), D(round(base * scale * spot, 6)), pool_id=f"poolB{tag}",
                   base_asset="ETH", quote_asset="USDC")
    sender, receiver = f"S{tag}", f"R{tag}"
    capital = D(round(base * rng.uniform(0.1, 0.5), 6))
    plan = plan_arbitrage([p1, p2], capital, D(round(base * spot * 10, 6)), sender=sender, receiver=receiver)
    ex = execute_arbitrage(plan, [p1, p2], seq, delay_ms, rng=rng)
    return StagedScenario("Arbitrage", ex.ledger, sender, receiver, pool_address(p1.pool_id))


_ASSETS = ("ETH", "USDC", "DAI", "WBTC")


def benign_block(rng: np.random.Generator, block: int, n_tx: int = 12, chain: str = "Ethereum") -> list[LedgerTx]:
    """Organic-looking traffic: single swaps, one-way multi-hop routes and plain
    transfers, each from a distinct sender."""
    txs = []
    for pos in range(n_tx):
        sender = f"u{block}.{pos}"
        kind = rng.integers(0, 3)
        if kind == 2:
            txs.append(LedgerTx(f"t{block}.{pos}", block, pos, sender, f"u{block}.{pos}.dst",
                                transfer_amount=D(round(float(rng.uniform(1, 100)), 6)),
                                transfer_asset=str(rng.choice(_ASSETS)), chain=chain))
            continue
        hops = 1 if kind == 0 else int(rng.integers(2, 4))
        path = list(rng.permutation(_ASSETS)[: hops + 1])
        amount = D(round(float(rng.uniform(1, 100)), 6))
        legs = []
        for h in range(hops):
            out = D(round(float(amount) * float(rng.uniform(0.5, 2.0)), 6))
            pool_id = "-".join(sorted(path[h:h + 2]))
            direction = Direction.BASE_FOR_QUOTE if path[h] < path[h + 1] else Direction.QUOTE_FOR_BASE
            legs.append(SwapLeg(pool_id, direction, str(path[h]), str(path[h + 1]), amount, out))
            amount = out
        to = pool_address(legs[0].pool_id) if hops == 1 else "router:agg"
        txs.append(LedgerTx(f"t{block}.{pos}", block, pos, sender, to, tuple(legs), chain=chain))
    return txs


def scenario_graph(rng: np.random.Generator, scenario: StagedScenario, n_users: int = 80) -> nx.Graph:
    """Address graph around one staged scenario.

    Background users trade on the same DEX (pushing its degree above the
    clustering threshold) and some share funding sources with each other;
    the colluding parties are funded from unrelated sources.
    """
    g = nx.Graph()
    for tx in scenario.ledger:
        g.add_edge(tx.sender, tx.to)
    for i in range(n_users):
        user = f"{scenario.dex}/user{i}"
        g.add_edge(user, scenario.dex)
        g.add_edge(user, f"{scenario.dex}/funder{int(rng.integers(0, 10))}")
    g.add_edge(scenario.sender, f"cex:{scenario.sender}")
    g.add_edge(scenario.receiver, f"bridge:{scenario.receiver}")
    return g


PRICES_USD = {"BTC": Decimal(60000), "ETH": Decimal(3000), "USDC": Decimal(1), "DAI": Decimal(1),
              "WBTC": Decimal(60000)}
