"""Elliptical-copula triage: uniform scores, Gaussian/t fits, joint survival ranking.

An incident's joint survival probability is ``p = P(X_1 > x_1, ..., X_d > x_d)``.
For elliptical copulas the survival copula equals the copula itself, so
``p = C(1 - u)``: a lower-orthant probability of the latent Gaussian or t
vector at ``quantile(1 - u)``.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np
from scipy import special, stats

from .errors import DegenerateModel, SingularCorrelation, ValidationError
from .tails import kendall_matrix, upper_tail_dependence

GAUSSIAN = "gaussian"
STUDENT_T = "t"
NU_GRID = range(3, 51)
EIG_FLOOR = 1e-6
DISCRETE_FEATURES = (2, 3)


@dataclass
class UniformScores:
    ids: list[str]
    u: np.ndarray  # (n, d), strictly inside (0, 1)
    jitter_seed: int
    jitter_eps: float
    sorted_raw: list[np.ndarray] = field(default_factory=list, repr=False)
    u_mid: np.ndarray | None = field(default=None, repr=False)  # tie-averaged ranks / (n + 1)

    @property
    def n(self) -> int:
        return self.u.shape[0]

    @property
    def ranking_u(self) -> np.ndarray:
        """Scores used for survival ranking: tied raw values share their block's mean rank."""
        return self.u if self.u_mid is None else self.u_mid

    def percentiles(self, raw: np.ndarray) -> np.ndarray:
        """Raw-value ECDF percentile (0-100) of each feature of ``raw``."""
        raw = np.atleast_2d(raw)
        out = np.empty_like(raw, dtype=float)
        for j, col in enumerate(self.sorted_raw):
            out[:, j] = 100.0 * np.searchsorted(col, raw[:, j], side="right") / col.size
        return out


def to_uniform_scores(
    features,
    ids: Sequence[str] | None = None,
    jitter_seed: int = 0,
    jitter_eps: float = 0.4,
    discrete: Sequence[int] = DISCRETE_FEATURES,
) -> UniformScores:
    """Rank-transform each feature to ``rank / (n + 1)``.

    Integer-valued columns get uniform(0, jitter_eps) noise first so that
    ties break at random while distinct integers keep their order.  The
    jittered ``u`` feeds model fitting; ``u_mid`` (mean rank of each tied
    block) feeds ranking, so the ranking does not depend on the jitter seed.
    """
    x = np.array(features, dtype=float, copy=True)
    if x.ndim != 2:
        raise ValidationError("features must be an (n, d) array")
    if not 0 < jitter_eps < 0.5:
        raise ValidationError("jitter_eps must lie in (0, 0.5)")
    n, d = x.shape
    ids = [str(i) for i in range(n)] if ids is None else list(ids)
    if len(ids) != n:
        raise ValidationError("ids and features differ in length")
    sorted_raw = [np.sort(x[:, j]) for j in range(d)]
    u_mid = np.column_stack([stats.rankdata(x[:, j]) for j in range(d)]) / (n + 1) if n else np.empty((0, d))
    rng = np.random.default_rng(jitter_seed)
    for j in discrete:
        if j < d:
            x[:, j] += rng.uniform(0.0, jitter_eps, size=n)
    ranks = np.empty((n, d))
    for j in range(d):
        ranks[np.argsort(x[:, j], kind="stable"), j] = np.arange(1, n + 1)
    return UniformScores(ids, ranks / (n + 1), jitter_seed, jitter_eps, sorted_raw, u_mid)


@dataclass
class CopulaModel:
    family: str
    corr: np.ndarray
    nu: int | None
    loglik: float
    aic: float
    bic: float
    n: int
    tau: np.ndarray | None = None
    jitter_seed: int | None = None
    jitter_eps: float | None = None

    @property
    def dim(self) -> int:
        return self.corr.shape[0]

    @property
    def n_params(self) -> int:
        d = self.dim
        return d * (d - 1) // 2 + (1 if self.family == STUDENT_T else 0)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["corr"] = self.corr.tolist()
        out["tau"] = None if self.tau is None else self.tau.tolist()
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "CopulaModel":
        data = dict(data)
        data["corr"] = np.asarray(data["corr"], dtype=float)
        if data.get("tau") is not None:
            data["tau"] = np.asarray(data["tau"], dtype=float)
        model = cls(**{k: data.get(k) for k in cls.__dataclass_fields__})
        validate_model(model)
        return model


def validate_model(model: CopulaModel) -> None:
    r = model.corr
    if model.family not in (GAUSSIAN, STUDENT_T):
        raise DegenerateModel(f"unknown family {model.family!r}")
    if r.ndim != 2 or r.shape[0] != r.shape[1]:
        raise DegenerateModel("correlation matrix must be square")
    if not np.allclose(r, r.T) or not np.allclose(np.diag(r), 1.0):
        raise DegenerateModel("correlation matrix must be symmetric with unit diagonal")
    if np.linalg.eigvalsh(r).min() <= 1e-8:
        raise DegenerateModel("correlation matrix is not positive definite")
    if model.family == STUDENT_T and (model.nu is None or model.nu < 3):
        raise DegenerateModel("t copula needs nu >= 3")


def nearest_correlation(r: np.ndarray, floor: float = EIG_FLOOR) -> np.ndarray:
    """Eigenvalue-floor projection rescaled back to a unit diagonal."""
    r = (np.asarray(r, dtype=float) + np.asarray(r, dtype=float).T) / 2
    if not np.all(np.isfinite(r)):
        raise SingularCorrelation("correlation estimate has non-finite entries")
    vals, vecs = np.linalg.eigh(r)
    fixed = (vecs * np.maximum(vals, floor)) @ vecs.T
    scale = np.sqrt(np.diag(fixed))
    fixed = fixed / np.outer(scale, scale)
    np.fill_diagonal(fixed, 1.0)
    if np.linalg.eigvalsh(fixed).min() <= 1e-8:
        raise SingularCorrelation("projection did not yield a positive-definite matrix")
    return fixed


def t_quantile(nu: float, p) -> np.ndarray:
    """Student-t quantile through the incomplete-beta inverse.

    Small tails invert I_x(nu/2, 1/2) and the centre inverts I_y(1/2, nu/2)
    so neither branch loses digits to 1 - x cancellation.
    """
    p = np.asarray(p, dtype=float)
    two_tail = 2.0 * np.minimum(p, 1.0 - p)
    mag = np.empty_like(p)
    tail = two_tail < 0.5
    x = special.betaincinv(nu / 2.0, 0.5, two_tail[tail])
    mag[tail] = np.sqrt(nu * (1.0 - x) / x)
    y = special.betaincinv(0.5, nu / 2.0, 1.0 - two_tail[~tail])
    mag[~tail] = np.sqrt(nu * y / (1.0 - y))
    return np.where(p < 0.5, -mag, mag)


def _latent(u: np.ndarray, family: str, nu: int | None) -> np.ndarray:
    """Quantile transform; evaluated once per distinct score value."""
    vals, inv = np.unique(u, return_inverse=True)
    q = special.ndtri(vals) if family == GAUSSIAN else t_quantile(nu, vals)
    return q[inv].reshape(u.shape)


def gaussian_loglik(z: np.ndarray, corr: np.ndarray) -> float:
    n, d = z.shape
    _, logdet = np.linalg.slogdet(corr)
    a = np.linalg.inv(corr) - np.eye(d)
    quad = np.einsum("ij,jk,ik->i", z, a, z)
    return float(-0.5 * n * logdet - 0.5 * quad.sum())


def t_loglik(w: np.ndarray, corr: np.ndarray, nu: float) -> float:
    n, d = w.shape
    _, logdet = np.linalg.slogdet(corr)
    quad = np.einsum("ij,jk,ik->i", w, np.linalg.inv(corr), w)
    const = (
        special.gammaln((nu + d) / 2) + (d - 1) * special.gammaln(nu / 2)
        - d * special.gammaln((nu + 1) / 2) - 0.5 * logdet
    )
    joint = -(nu + d) / 2 * np.log1p(quad / nu)
    margins = (nu + 1) / 2 * np.log1p(w ** 2 / nu).sum(axis=1)
    return float(n * const + joint.sum() + margins.sum())


def _criteria(loglik: float, k: int, n: int) -> tuple[float, float]:
    return 2 * k - 2 * loglik, k * math.log(n) - 2 * loglik


def correlation_from_tau(tau: np.ndarray) -> np.ndarray:
    return nearest_correlation(np.sin(np.pi * np.asarray(tau) / 2))


def fit_copula(scores: UniformScores | np.ndarray, family: str = "auto", nu_grid=NU_GRID,
               tau: np.ndarray | None = None) -> CopulaModel:
    """Kendall-inversion correlation plus profile likelihood over integer nu.

    ``family="auto"`` fits both and keeps the lower AIC.
    """
    u = scores.u if isinstance(scores, UniformScores) else np.asarray(scores, dtype=float)
    if u.ndim != 2 or u.shape[0] < 2:
        raise ValidationError("need an (n, d) score matrix with n >= 2")
    if np.any(u <= 0) or np.any(u >= 1):
        raise ValidationError("scores must lie strictly inside (0, 1)")
    if family == "auto":
        tau = kendall_matrix(u) if tau is None else tau
        g = fit_copula(scores, GAUSSIAN, tau=tau)
        t = fit_copula(scores, STUDENT_T, nu_grid, tau=tau)
        return t if t.aic < g.aic else g
    if family not in (GAUSSIAN, STUDENT_T):
        raise ValidationError(f"unknown copula family {family!r}")

    n, d = u.shape
    tau = kendall_matrix(u) if tau is None else np.asarray(tau, dtype=float)
    corr = correlation_from_tau(tau)
    k = d * (d - 1) // 2
    if family == GAUSSIAN:
        ll = gaussian_loglik(_latent(u, GAUSSIAN, None), corr)
        nu = None
    else:
        k += 1
        profile = {nu: t_loglik(_latent(u, STUDENT_T, nu), corr, nu) for nu in nu_grid}
        nu = max(profile, key=profile.get)
        ll = profile[nu]
    aic, bic = _criteria(ll, k, n)
    jitter_seed = scores.jitter_seed if isinstance(scores, UniformScores) else None
    jitter_eps = scores.jitter_eps if isinstance(scores, UniformScores) else None
    return CopulaModel(family, corr, nu, ll, aic, bic, n, tau, jitter_seed, jitter_eps)


def t_nu_profile(scores: UniformScores, corr: np.ndarray, nu_grid=NU_GRID) -> dict[int, float]:
    return {nu: t_loglik(_latent(scores.u, STUDENT_T, nu), corr, nu) for nu in nu_grid}


# --- family prechecks -----------------------------------------------------


def precheck_families(tau: np.ndarray, scores: UniformScores | np.ndarray | None = None,
                      q: float = 0.95, spread_threshold: float = 0.3) -> dict:
    """Admissibility of the one-parameter Archimedean families for ``tau``.

    Clayton and Gumbel need positive dependence on every pair; a single
    Frank parameter cannot express pairwise tau that spread wider than
    ``spread_threshold``.
    """
    tau = np.asarray(tau, dtype=float)
    d = tau.shape[0]
    off = tau[np.triu_indices(d, 1)]
    negative = int((off < 0).sum())
    spread = float(off.max() - off.min()) if off.size else 0.0
    admissible = {GAUSSIAN: True, STUDENT_T: True, "clayton": True, "gumbel": True, "frank": True}
    reasons = {}
    if negative:
        for fam in ("clayton", "gumbel"):
            admissible[fam] = False
            reasons[fam] = f"{negative} of {off.size} pairs have negative tau"
    if spread > spread_threshold:
        admissible["frank"] = False
        reasons["frank"] = f"pairwise tau spread {spread:.3f} exceeds {spread_threshold}"
    lam = {}
    if scores is not None:
        u = scores.u if isinstance(scores, UniformScores) else np.asarray(scores)
        for i in range(d):
            for j in range(i + 1, d):
                lam[f"{i},{j}"] = upper_tail_dependence(u[:, i], u[:, j], q)
    return {"admissible": admissible, "reasons": reasons, "negative_pairs": negative,
            "tau_spread": spread, "lambda_u": lam, "q": q}


# --- orthant probabilities ------------------------------------------------


def _genz_batch(b: np.ndarray, chol: np.ndarray, w: np.ndarray, scale: np.ndarray | None) -> np.ndarray:
    """Separation-of-variables integrand for P(L y <= b).

    ``b`` is (m, d); ``w`` is (m, k, d-1) uniforms; ``scale`` optionally
    (m, k) multipliers applied to ``b`` (the t mixing variable).
    """
    m, k = w.shape[:2]
    d = chol.shape[0]
    bb = np.broadcast_to(b[:, None, :], (m, k, d))
    if scale is not None:
        bb = bb * scale[..., None]
    y = np.zeros((m, k, d))
    f = np.ones((m, k))
    tiny = np.finfo(float).tiny
    for i in range(d):
        shift = np.einsum("mkj,j->mk", y[..., :i], chol[i, :i]) if i else 0.0
        e = special.ndtr((bb[..., i] - shift) / chol[i, i])
        f *= e
        if i < d - 1:
            y[..., i] = special.ndtri(np.clip(w[..., i] * e, tiny, 1 - 1e-16))
    return f


def _crude_batch(b: np.ndarray, chol: np.ndarray, g: np.ndarray, scale: np.ndarray | None) -> np.ndarray:
    """Antithetic hit indicator average for P(L y <= b); ``g`` is (m, k, d) normals."""
    x = np.einsum("mkj,ij->mki", g, chol)
    if scale is not None:
        x = x / scale[..., None]
    b = b[:, None, :]
    return 0.5 * ((x <= b).all(axis=-1).astype(float) + (-x <= b).all(axis=-1).astype(float))


def orthant_probability(
    corr: np.ndarray,
    upper: np.ndarray,
    nu: int | None = None,
    n_pairs: int = 100_000,
    rng: np.random.Generator | None = None,
    method: str = "conditional",
) -> tuple[float, float]:
    """Monte Carlo P(X <= upper) for X ~ N(0, corr) or multivariate t_nu.

    Returns (estimate, standard error) over ``n_pairs`` antithetic pairs.
    """
    upper = np.atleast_2d(np.asarray(upper, dtype=float))
    p, se = _orthant_rows(np.asarray(corr, dtype=float), upper, nu, n_pairs, [rng or np.random.default_rng(0)], method)
    return float(p[0]), float(se[0])


def _orthant_rows(corr, upper, nu, n_pairs, rngs, method, chunk_elems=4_000_000):
    """Row-wise orthant probabilities; row ``r`` draws only from ``rngs[r]``."""
    m, d = upper.shape
    chol = np.linalg.cholesky(corr)
    p = np.empty(m)
    se = np.empty(m)
    rows_per = max(1, chunk_elems // (2 * n_pairs * d))
    for lo in range(0, m, rows_per):
        hi = min(m, lo + rows_per)
        pair_means = np.empty((hi - lo, n_pairs))
        # Each row's draws come from its own stream, in a fixed order.
        draws_u = np.empty((hi - lo, n_pairs, d))
        mix = np.empty((hi - lo, n_pairs)) if nu is not None else None
        for r in range(lo, hi):
            rng = rngs[r]
            if method == "conditional":
                draws_u[r - lo] = rng.random((n_pairs, d))
            else:
                draws_u[r - lo] = rng.standard_normal((n_pairs, d))
            if nu is not None:
                mix[r - lo] = np.sqrt(rng.standard_gamma(nu / 2.0, n_pairs) * 2.0 / nu)
        b = upper[lo:hi]
        if method == "conditional":
            w = draws_u[..., : d - 1]
            f1 = _genz_batch(b, chol, w, mix)
            f2 = _genz_batch(b, chol, 1.0 - w, mix)
            pair_means = 0.5 * (f1 + f2)
        elif method == "crude":
            pair_means = _crude_batch(b, chol, draws_u, mix)
        else:
            raise ValidationError(f"unknown orthant method {method!r}")
        p[lo:hi] = pair_means.mean(axis=1)
        se[lo:hi] = pair_means.std(axis=1, ddof=1) / math.sqrt(n_pairs) if n_pairs > 1 else np.inf
    return p, se


def latent_upper(model: CopulaModel, u: np.ndarray) -> np.ndarray:
    """Latent thresholds quantile(1 - u) for the survival orthant."""
    u = np.atleast_2d(np.asarray(u, dtype=float))
    if np.any(u <= 0) or np.any(u >= 1):
        raise ValidationError("u must lie strictly inside (0, 1)")
    return _latent(1.0 - u, model.family, model.nu)


def joint_survival(
    model: CopulaModel,
    u,
    n_pairs: int = 100_000,
    seed: int = 0,
    method: str = "conditional",
) -> tuple[float, float]:
    """(p, mc_std_err) with p = P(U > u) under the fitted copula."""
    validate_model(model)
    b = latent_upper(model, u)
    if b.shape[1] != model.dim:
        raise ValidationError(f"u has {b.shape[1]} coordinates, model has {model.dim}")
    p, se = _orthant_rows(model.corr, b, model.nu, n_pairs, [np.random.default_rng(seed)], method)
    return float(p[0]), float(se[0])


def substream(master_seed: int, incident_id: str, stage: int = 0) -> np.random.Generator:
    digest = hashlib.blake2b(str(incident_id).encode(), digest_size=8).digest()
    return np.random.default_rng(np.random.SeedSequence([int(master_seed), int.from_bytes(digest, "little"), stage]))


@dataclass(frozen=True)
class TriageScore:
    id: str
    p: float
    mc_std_err: float
    rank: int


def score_incidents(
    model: CopulaModel,
    scores: UniformScores,
    seed: int,
    n_pairs: int = 128,
    refine_top: int = 1000,
    refine_pairs: int = 4096,
    threads: int = 1,
) -> tuple[np.ndarray, np.ndarray]:
    """Per-incident (p, se): a screening pass for everyone, then more
    samples for the ``refine_top`` smallest p.  Each incident draws from
    ``substream(seed, id, stage)`` so results do not depend on batching.
    """
    validate_model(model)
    b = latent_upper(model, scores.ranking_u)
    ids = scores.ids

    def run(rows, pairs, stage):
        rngs = [substream(seed, ids[r], stage) for r in rows]
        if threads > 1 and len(rows) > 1:
            from concurrent.futures import ThreadPoolExecutor

            parts = np.array_split(np.arange(len(rows)), threads)
            with ThreadPoolExecutor(threads) as pool:
                res = list(pool.map(
                    lambda part: _orthant_rows(model.corr, b[rows][part], model.nu, pairs,
                                               [rngs[i] for i in part], "conditional"),
                    parts))
            return np.concatenate([r[0] for r in res]), np.concatenate([r[1] for r in res])
        return _orthant_rows(model.corr, b[rows], model.nu, pairs, rngs, "conditional")

    rows = np.arange(len(ids))
    p, se = run(rows, n_pairs, 0)
    if refine_top and refine_pairs > n_pairs:
        top = np.lexsort((np.array(ids, dtype=object), p))[:refine_top]
        top = np.sort(top)
        p[top], se[top] = run(top, refine_pairs, 1)
    return p, se


def rank_incidents(
    model: CopulaModel,
    scores: UniformScores,
    seed: int = 0,
    n_pairs: int = 128,
    refine_top: int = 1000,
    refine_pairs: int = 4096,
    threads: int = 1,
) -> list[TriageScore]:
    """Ascending-p ranking; ties broken by incident id."""
    p, se = score_incidents(model, scores, seed, n_pairs, refine_top, refine_pairs, threads)
    order = sorted(range(len(p)), key=lambda i: (p[i], scores.ids[i]))
    return [TriageScore(scores.ids[i], float(p[i]), float(se[i]), r + 1) for r, i in enumerate(order)]


def top_k_feature_audit(ranking: Sequence[TriageScore], scores: UniformScores, k: int, q: float = 0.90) -> float:
    """Fraction of the top-k incidents with no feature score above ``q``."""
    if not 0 < k <= len(ranking):
        raise ValidationError("k must lie in [1, n]")
    row = {i: r for r, i in enumerate(scores.ids)}
    top = [row[s.id] for s in sorted(ranking, key=lambda s: s.rank)[:k]]
    return float(np.mean(np.all(scores.ranking_u[top] <= q, axis=1)))


# --- Q-Q validation -------------------------------------------------------


@dataclass
class QQReport:
    bulk_fraction_within_10pct: float
    first_deviation_percentile: float
    reference: str
    percentiles: np.ndarray = field(repr=False, default=None)
    empirical: np.ndarray = field(repr=False, default=None)
    theoretical: np.ndarray = field(repr=False, default=None)

    def summary(self) -> dict:
        return {
            "bulk_fraction_within_10pct": self.bulk_fraction_within_10pct,
            "first_deviation_percentile": self.first_deviation_percentile,
            "reference": self.reference,
        }


def distance_scores(model: CopulaModel, u: np.ndarray) -> np.ndarray:
    """Squared Mahalanobis distances of the latent scores (divided by d for t)."""
    lat = _latent(np.asarray(u, dtype=float), model.family, model.nu)
    quad = np.einsum("ij,jk,ik->i", lat, np.linalg.inv(model.corr), lat)
    return quad if model.family == GAUSSIAN else quad / model.dim


def qq_validate(model: CopulaModel, scores: UniformScores | np.ndarray, band: float = 0.10,
                step: float = 0.1) -> QQReport:
    """Compare distance-score quantiles with chi2(d) (Gaussian) or F(d, nu) (t).

    The bulk fraction counts grid percentiles in [5, 95] whose empirical
    quantile is within ``band`` (relative) of the reference; the deviation
    percentile is the first grid point from the median upward that leaves
    the band (100 when none does).
    """
    u = scores.u if isinstance(scores, UniformScores) else np.asarray(scores, dtype=float)
    dist = distance_scores(model, u)
    d = model.dim
    ref = stats.chi2(d) if model.family == GAUSSIAN else stats.f(d, model.nu)
    pct = np.round(np.arange(step, 100.0, step), 6)
    emp = np.percentile(dist, pct)
    theo = ref.ppf(pct / 100.0)
    inside = np.abs(emp - theo) <= band * theo
    bulk = (pct >= 5.0) & (pct <= 95.0)
    upper = np.nonzero(~inside & (pct >= 50.0))[0]
    first = float(pct[upper[0]]) if upper.size else 100.0
    return QQReport(float(inside[bulk].mean()), first,
                    "ChiSquared4" if model.family == GAUSSIAN else "F4Nu" if d == 4 else model.family,
                    pct, emp, theo)
