"""Heavy-tail estimation and rank dependence."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import EmptyInput, InsufficientTail, LengthMismatch, ValidationError

MIN_TAIL = 50
MAX_XMIN_CANDIDATES = 500


@dataclass(frozen=True)
class TailFit:
    x_min: float
    alpha: float
    n_tail: int
    ks_stat: float

    def as_dict(self) -> dict:
        return {"x_min": self.x_min, "alpha": self.alpha, "n_tail": self.n_tail, "ks_stat": self.ks_stat}


def ccdf(samples) -> tuple[np.ndarray, np.ndarray]:
    """Distinct sorted values and P(X >= x) at each."""
    x = np.asarray(samples, dtype=float).ravel()
    if x.size == 0:
        raise EmptyInput("ccdf of an empty sample")
    values, counts = np.unique(x, return_counts=True)
    at_or_above = np.cumsum(counts[::-1])[::-1]
    return values, at_or_above / x.size


def _alpha_hat(tail: np.ndarray, x_min: float) -> float:
    return 1.0 + tail.size / np.log(tail / x_min).sum()


def _ks(tail_sorted: np.ndarray, x_min: float, alpha: float) -> float:
    n = tail_sorted.size
    fitted = 1.0 - (tail_sorted / x_min) ** (1.0 - alpha)
    i = np.arange(n)
    return float(max(np.max((i + 1) / n - fitted), np.max(fitted - i / n)))


def fit_power_law(samples, x_min: float | None = None, min_tail: int = MIN_TAIL) -> TailFit:
    """Continuous power-law MLE with x_min chosen by KS minimisation.

    Candidates are observed values leaving at least ``min_tail`` points in
    the tail, thinned to at most 500 log-spaced values.
    """
    x = np.sort(np.asarray(samples, dtype=float).ravel())
    if x.size and x[0] <= 0:
        raise ValidationError("power-law samples must be positive")
    if x.size < min_tail:
        raise InsufficientTail(f"{x.size} samples, need at least {min_tail}")

    def fit_at(start: int) -> TailFit:
        tail = x[start:]
        xm = x[start]
        if tail.size < min_tail or tail[-1] == xm:
            return None
        a = _alpha_hat(tail, xm)
        return TailFit(float(xm), float(a), int(tail.size), _ks(tail, xm, a))

    if x_min is not None:
        start = int(np.searchsorted(x, x_min, side="left"))
        fit = fit_at(start)
        if fit is None:
            raise InsufficientTail(f"fewer than {min_tail} samples at or above x_min={x_min}")
        return fit

    values, first = np.unique(x, return_index=True)
    usable = (x.size - first) >= min_tail
    values, first = values[usable], first[usable]
    if values.size == 0:
        raise InsufficientTail(f"no candidate x_min leaves {min_tail} tail samples")
    if values.size > MAX_XMIN_CANDIDATES:
        logs = np.log(values / values[0])
        grid = np.linspace(0.0, logs[-1], MAX_XMIN_CANDIDATES)
        picks = np.unique(np.clip(np.searchsorted(logs, grid), 0, values.size - 1))
        first = first[picks]
    best = None
    for start in first:
        fit = fit_at(int(start))
        if fit is not None and (best is None or fit.ks_stat < best.ks_stat):
            best = fit
    if best is None:
        raise InsufficientTail("sample tail is degenerate")
    return best


def loglog_slope(values: np.ndarray, probs: np.ndarray) -> float:
    """Least-squares slope of log P against log x."""
    return float(np.polyfit(np.log(values), np.log(probs), 1)[0])


def ratio_tail_transform(f2) -> np.ndarray:
    """Map ratios in [0, 1) to 1 / (1 - ratio), whose upper tail mirrors the distance-to-one lower tail."""
    r = np.asarray(f2, dtype=float)
    if np.any(r < 0) or np.any(r >= 1):
        raise ValidationError("capital-extraction ratios must lie in [0, 1)")
    return 1.0 / (1.0 - r)


def _dense_rank(a: np.ndarray) -> np.ndarray:
    return np.unique(a, return_inverse=True)[1].astype(np.int64)


def _count_inversions(y: np.ndarray) -> int:
    """Pairs i < j with y[i] > y[j], by bottom-up merge counting.

    At each level every element of a right sibling block counts the
    left-sibling elements strictly greater than it.
    """
    n = y.size
    if n < 2:
        return 0
    r = _dense_rank(y)
    pos = np.arange(n, dtype=np.int64)
    total = 0
    width = 1
    while width < n:
        parent = pos // (2 * width)
        right = (pos // width) % 2
        # Within a parent, sort by value with left-side items first on ties.
        key = (parent * (r.max() + 1) + r) * 2 + right
        order = np.argsort(key, kind="stable")
        is_right = right[order].astype(bool)
        par = parent[order]
        starts = np.searchsorted(par, par, side="left")
        before = np.arange(n) - starts  # merged index within the parent block
        left_before = before - _running_count(is_right, par)
        left_size = np.minimum(width, n - par * 2 * width)
        total += int((left_size - left_before)[is_right].sum())
        width *= 2
    return total


def _running_count(flags: np.ndarray, groups: np.ndarray) -> np.ndarray:
    """Number of earlier True flags within each contiguous group."""
    c = np.cumsum(flags) - flags
    starts = np.searchsorted(groups, groups, side="left")
    return c - c[starts]


def _tied_pairs(a: np.ndarray) -> int:
    _, counts = np.unique(a, return_counts=True)
    return int((counts * (counts - 1) // 2).sum())


def kendall_tau(x, y) -> float:
    """Kendall's tau-b in O(n log n) (Knight's algorithm)."""
    x = np.asarray(x, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    if x.size != y.size:
        raise LengthMismatch(f"lengths differ: {x.size} vs {y.size}")
    n = x.size
    if n < 2:
        raise ValidationError("kendall_tau needs at least 2 observations")
    order = np.lexsort((y, x))
    xs, ys = x[order], y[order]
    n0 = n * (n - 1) // 2
    n1 = _tied_pairs(xs)
    n2 = _tied_pairs(ys)
    joint = np.unique(np.stack([xs, ys], axis=1), axis=0, return_counts=True)[1]
    n3 = int((joint * (joint - 1) // 2).sum())
    swaps = _count_inversions(ys)
    denom = np.sqrt(float(n0 - n1) * float(n0 - n2))
    if denom == 0:
        return float("nan")
    # concordant - discordant = n0 - n1 - n2 + n3 - 2 * swaps
    return float((n0 - n1 - n2 + n3 - 2 * swaps) / denom)


def kendall_matrix(data) -> np.ndarray:
    data = np.asarray(data, dtype=float)
    d = data.shape[1]
    tau = np.eye(d)
    for i in range(d):
        for j in range(i + 1, d):
            tau[i, j] = tau[j, i] = kendall_tau(data[:, i], data[:, j])
    return tau


def upper_tail_dependence(u1, u2, q: float) -> float:
    """Empirical lambda_U(q): P(U1 > q, U2 > q) / (1 - q)."""
    if not 0 < q < 1:
        raise ValidationError("q must lie in (0, 1)")
    u1, u2 = np.asarray(u1, dtype=float), np.asarray(u2, dtype=float)
    if u1.size != u2.size:
        raise LengthMismatch("score vectors differ in length")
    return float(np.mean((u1 > q) & (u2 > q)) / (1 - q))
