"""Kernel-weighted empirical regression over pattern banks.

The estimator treats stored patterns as a proxy for the unknown prototype
vectors of the generative model: a query is scored against every bank
pattern, scores become normalized kernel weights, and the prediction is the
weight-averaged pattern label. Two kernels are supported:

* ``gaussian_l2``:      weight_i proportional to exp(-|x - x_i|^2 / 4)
* ``exp_similarity``:   weight_i proportional to exp(c * s(x, x_i))

where s is the mean- and scale-invariant correlation

    s(a, b) = sum((a_z - mean(a)) (b_z - mean(b))) / (M std(a) std(b)),

std being the square root of the mean squared deviation. On normalized
vectors s reduces to an inner product over M, which is the throughput path:
one matrix multiply scores a block of queries against a whole bank.

On top of the per-bank predictions sits a five-weight affine combiner
(intercept, three bank predictions, order-book imbalance), fit by ordinary
least squares with a small-ridge fallback for rank-deficient designs, and a
grid calibration for the kernel sharpness constant c.
"""

from __future__ import annotations

import json
import os
import time
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .market_data import PriceSeries
from .pattern_bank import PatternBank, normalize, normalize_rows

KERNEL_GAUSSIAN_L2 = "gaussian_l2"
KERNEL_EXP_SIMILARITY = "exp_similarity"
_KERNEL_VARIANTS = (KERNEL_GAUSSIAN_L2, KERNEL_EXP_SIMILARITY)

DEFAULT_C_GRID = (0.5, 1.0, 2.0, 4.0, 8.0)
RIDGE_LAMBDA = 1e-8
NUM_COMBINER_FEATURES = 4  # three bank predictions plus imbalance
MIN_FIT_SAMPLES = 5


@dataclass(frozen=True)
class KernelChoice:
    """Kernel variant plus the sharpness constant used by exp_similarity."""

    variant: str
    c: float = 1.0

    def __post_init__(self) -> None:
        if self.variant not in _KERNEL_VARIANTS:
            raise ValueError(f"unknown kernel variant: {self.variant!r}")
        if self.variant == KERNEL_EXP_SIMILARITY and not self.c > 0:
            raise ValueError("exp_similarity requires c > 0")


def similarity(a, b) -> float:
    """Mean- and scale-invariant correlation of two equal-length vectors.

    Bounded in [-1, 1]; invariant under positive affine transforms of either
    argument; defined as 0 when either vector is constant.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 1 or b.ndim != 1 or a.size != b.size:
        raise ValueError(f"similarity needs equal-length vectors, got {a.shape} vs {b.shape}")
    if a.size < 2:
        raise ValueError("similarity needs vectors of length >= 2")
    if a.max() == a.min() or b.max() == b.min():
        return 0.0  # constant vector: neutral by definition
    da = a - a.mean()
    db = b - b.mean()
    # scale-invariant: divide out the deviation magnitude so extreme inputs
    # cannot underflow or overflow when squared
    scale_a = np.abs(da).max()
    scale_b = np.abs(db).max()
    if scale_a == 0.0 or scale_b == 0.0:
        return 0.0
    if scale_a != 1.0:
        da = da / scale_a
    if scale_b != 1.0:
        db = db / scale_b
    m = a.size
    var_a = (da @ da) / m
    var_b = (db @ db) / m
    if var_a == 0.0 or var_b == 0.0:
        return 0.0
    s = (da @ db) / (m * np.sqrt(var_a * var_b))
    return float(min(1.0, max(-1.0, s)))


def similarity_many(queries: np.ndarray, vectors: np.ndarray) -> np.ndarray:
    """Pairwise similarity of query rows against pattern rows.

    Both blocks are row-normalized internally, after which scoring is a
    single matrix product over M. Returns an (n_queries, n_vectors) array.
    """
    queries = np.atleast_2d(np.asarray(queries, dtype=np.float64))
    vectors = np.atleast_2d(np.asarray(vectors, dtype=np.float64))
    if queries.shape[1] != vectors.shape[1]:
        raise ValueError(
            f"dimension mismatch: queries {queries.shape[1]} vs vectors {vectors.shape[1]}"
        )
    m = queries.shape[1]
    scores = normalize_rows(queries) @ normalize_rows(vectors).T / m
    np.clip(scores, -1.0, 1.0, out=scores)
    return scores


def _log_weights(x: np.ndarray, bank: PatternBank, kernel: KernelChoice) -> np.ndarray:
    if len(bank) == 0:
        raise ValueError("bank is empty")
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (bank.window_length,):
        raise ValueError(
            f"query has shape {x.shape}, bank expects ({bank.window_length},)"
        )
    if kernel.variant == KERNEL_GAUSSIAN_L2:
        diffs = bank.vectors - x
        return -0.25 * np.einsum("ij,ij->i", diffs, diffs)
    scores = similarity_many(x[None, :], bank.vectors)[0]
    return kernel.c * scores


def kernel_weights(x, bank: PatternBank, kernel: KernelChoice) -> np.ndarray:
    """Normalized kernel weight per bank pattern (non-negative, sums to 1)."""
    log_w = _log_weights(np.asarray(x, dtype=np.float64), bank, kernel)
    w = np.exp(log_w - log_w.max())
    return w / w.sum()


def predict_label(x, bank: PatternBank, kernel: KernelChoice) -> float:
    """Kernel-weighted average of bank labels: the estimated E[y | x]."""
    return float(kernel_weights(x, bank, kernel) @ bank.labels)


def empirical_conditional(y: float, x, bank: PatternBank, kernel: KernelChoice) -> float:
    """Estimated P(y | x): total kernel weight on patterns labeled exactly y."""
    w = kernel_weights(x, bank, kernel)
    return float(w[bank.labels == y].sum())


def classify_binary(x, bank: PatternBank, kernel: KernelChoice) -> int:
    """Declare 1 iff the class-1 kernel mass strictly exceeds the class-0 mass.

    Bank labels must all be 0 or 1. A single-class bank returns its class
    (the limit of the mass ratio).
    """
    labels = bank.labels
    if not np.isin(labels, (0.0, 1.0)).all():
        raise ValueError("classify_binary requires bank labels in {0, 1}")
    ones = labels == 1.0
    if ones.all():
        return 1
    if not ones.any():
        return 0
    log_w = _log_weights(np.asarray(x, dtype=np.float64), bank, kernel)
    w = np.exp(log_w - log_w.max())
    return int(w[ones].sum() > w[~ones].sum())


class Features(NamedTuple):
    """Combiner inputs: three bank predictions and the imbalance passthrough."""

    dp1: float
    dp2: float
    dp3: float
    r: float


def history_required(banks: Sequence[PatternBank]) -> int:
    """Buckets of history a prediction point must have behind it."""
    return max(bank.window_length for bank in banks)


def assemble_features(
    t: int,
    series: PriceSeries,
    banks: Sequence[PatternBank],
    kernel: KernelChoice,
) -> Features:
    """Features for a prediction at bucket t, from data up to and including t.

    Each bank scores the trailing window of its length ending at t
    (normalized before scoring); the imbalance at t passes through. Requires
    t >= the longest bank window.
    """
    needed = history_required(banks)
    if t < needed:
        raise ValueError(f"t={t} has insufficient history (need t >= {needed})")
    if t >= len(series):
        raise ValueError(f"t={t} outside series of length {len(series)}")
    dps = []
    for bank in banks:
        window = series.prices[t - bank.window_length + 1 : t + 1]
        dps.append(predict_label(normalize(window), bank, kernel))
    return Features(dps[0], dps[1], dps[2], float(series.imbalances[t]))


def _bank_scores(
    series: PriceSeries, bank: PatternBank, ts: np.ndarray, kernel_variant: str
) -> np.ndarray:
    """Per-bank raw scores for a block of prediction points.

    exp_similarity: similarity of each normalized window row against each
    pattern. gaussian_l2: -0.25 * squared distance between the normalized
    window and each pattern.
    """
    m = bank.window_length
    windows = sliding_window_view(series.prices, m)[ts - m + 1]
    normalized = normalize_rows(windows)
    dots = normalized @ bank.vectors.T
    if kernel_variant == KERNEL_EXP_SIMILARITY:
        scores = dots / m
        np.clip(scores, -1.0, 1.0, out=scores)
        return scores
    sq_norm_w = np.einsum("ij,ij->i", normalized, normalized)
    sq_norm_v = np.einsum("ij,ij->i", bank.vectors, bank.vectors)
    d2 = sq_norm_w[:, None] + sq_norm_v[None, :] - 2.0 * dots
    np.clip(d2, 0.0, None, out=d2)
    return -0.25 * d2


def _scores_to_dp(scores: np.ndarray, labels: np.ndarray, scale: float) -> np.ndarray:
    log_w = scale * scores
    log_w = log_w - log_w.max(axis=1, keepdims=True)
    w = np.exp(log_w)
    return (w @ labels) / w.sum(axis=1)


def feature_block(
    series: PriceSeries,
    banks: Sequence[PatternBank],
    kernel: KernelChoice,
    ts: np.ndarray,
) -> np.ndarray:
    """Vectorized assemble_features over many prediction points.

    Returns an (len(ts), 4) array of (dp1, dp2, dp3, r) rows; row i matches
    assemble_features(ts[i], ...) to floating-point noise.
    """
    ts = np.asarray(ts, dtype=np.int64)
    if ts.size == 0:
        return np.empty((0, NUM_COMBINER_FEATURES))
    needed = history_required(banks)
    if ts.min() < needed or ts.max() >= len(series):
        raise ValueError(
            f"prediction points must lie in [{needed}, {len(series) - 1}], "
            f"got [{ts.min()}, {ts.max()}]"
        )
    columns = []
    for bank in banks:
        scores = _bank_scores(series, bank, ts, kernel.variant)
        scale = kernel.c if kernel.variant == KERNEL_EXP_SIMILARITY else 1.0
        columns.append(_scores_to_dp(scores, bank.labels, scale))
    columns.append(series.imbalances[ts])
    return np.column_stack(columns)


@dataclass(frozen=True)
class CombinerWeights:
    """Affine combiner: intercept, three bank coefficients, imbalance coefficient."""

    w0: float
    w1: float
    w2: float
    w3: float
    w4: float
    used_ridge: bool = False

    def __post_init__(self) -> None:
        if not np.isfinite(self.as_array()).all():
            raise ValueError("combiner weights must be finite")

    def as_array(self) -> np.ndarray:
        return np.array([self.w0, self.w1, self.w2, self.w3, self.w4])


def predict_dp(features, weights: CombinerWeights) -> float:
    """Affine evaluation of the combiner on one feature tuple."""
    dp1, dp2, dp3, r = features
    return float(
        weights.w0
        + weights.w1 * dp1
        + weights.w2 * dp2
        + weights.w3 * dp3
        + weights.w4 * r
    )


def _fit_weights_xy(features: np.ndarray, targets: np.ndarray) -> CombinerWeights:
    n = features.shape[0]
    if n < MIN_FIT_SAMPLES:
        raise ValueError(f"need at least {MIN_FIT_SAMPLES} samples, got {n}")
    design = np.column_stack([np.ones(n), features])
    gram = design.T @ design
    rhs = design.T @ targets
    used_ridge = bool(np.linalg.matrix_rank(design) < design.shape[1])
    if used_ridge:
        gram = gram + RIDGE_LAMBDA * np.eye(design.shape[1])
    w = np.linalg.solve(gram, rhs)
    return CombinerWeights(*(float(v) for v in w), used_ridge=used_ridge)


def fit_weights(samples: Sequence[tuple]) -> CombinerWeights:
    """Ordinary least squares for the combiner over (features, target) pairs.

    Rank-deficient designs fall back to a small ridge (lambda = 1e-8) and
    are flagged via used_ridge.
    """
    if len(samples) < MIN_FIT_SAMPLES:
        raise ValueError(f"need at least {MIN_FIT_SAMPLES} samples, got {len(samples)}")
    features = np.array([list(f) for f, _ in samples], dtype=np.float64)
    targets = np.array([t for _, t in samples], dtype=np.float64)
    if features.shape[1] != NUM_COMBINER_FEATURES:
        raise ValueError(f"expected {NUM_COMBINER_FEATURES} features per sample")
    return _fit_weights_xy(features, targets)


@dataclass(frozen=True)
class CalibrationResult:
    """Chosen kernel constant, its combiner fit, and the full grid search."""

    c: float
    weights: CombinerWeights
    errors: tuple[tuple[float, float], ...]  # (c, in-sample MSE) per grid point


def fit_points(series: PriceSeries, banks: Sequence[PatternBank]) -> np.ndarray:
    """Prediction points of a series that have both full history and a target."""
    first = history_required(banks)
    last = len(series) - 2  # target is the increment into bucket t+1
    if last < first:
        raise ValueError(
            f"series has {len(series)} buckets, need more than {first + 1} "
            "for any fit/evaluation point"
        )
    return np.arange(first, last + 1)


def calibrate_c(
    grid: Sequence[float],
    fit_series: PriceSeries,
    banks: Sequence[PatternBank],
) -> CalibrationResult:
    """Grid-search the exp_similarity constant on in-sample combiner MSE.

    For each c the combiner is refit on the series and scored against the
    realized next-bucket price changes; the smallest-MSE c wins, ties going
    to the smaller c. Pattern scoring is shared across grid points, so the
    sweep costs one pass of window scoring plus one small OLS per c.
    """
    grid = sorted({float(c) for c in grid})
    if not grid:
        raise ValueError("c grid is empty")
    if grid[0] <= 0:
        raise ValueError("c grid values must be > 0")
    ts = fit_points(fit_series, banks)
    if ts.size < MIN_FIT_SAMPLES:
        raise ValueError(
            f"fit series yields {ts.size} samples, need at least {MIN_FIT_SAMPLES}"
        )
    targets = fit_series.prices[ts + 1] - fit_series.prices[ts]
    imbalances = fit_series.imbalances[ts]
    scores = [
        _bank_scores(fit_series, bank, ts, KERNEL_EXP_SIMILARITY) for bank in banks
    ]

    best: tuple[float, float, CombinerWeights] | None = None
    errors = []
    for c in grid:
        columns = [
            _scores_to_dp(s, bank.labels, c) for s, bank in zip(scores, banks)
        ]
        features = np.column_stack(columns + [imbalances])
        weights = _fit_weights_xy(features, targets)
        residual = features @ weights.as_array()[1:] + weights.w0 - targets
        mse = float((residual @ residual) / residual.size)
        errors.append((c, mse))
        if best is None or mse < best[0]:
            best = (mse, c, weights)

    _, c_star, weights_star = best
    return CalibrationResult(c=c_star, weights=weights_star, errors=tuple(errors))


@dataclass(frozen=True)
class PredictorModel:
    """The trained predictor: three banks, kernel choice, combiner weights."""

    banks: tuple[PatternBank, ...]
    kernel: KernelChoice
    weights: CombinerWeights

    def __post_init__(self) -> None:
        if len(self.banks) != 3:
            raise ValueError("predictor needs exactly three banks")
        lengths = [b.window_length for b in self.banks]
        if any(b <= a for a, b in zip(lengths, lengths[1:])):
            raise ValueError("bank window lengths must be strictly increasing")
        if self.kernel.variant == KERNEL_EXP_SIMILARITY:
            if any(b.kernel_c != self.kernel.c for b in self.banks):
                raise ValueError("kernel constant must be shared across banks")
        object.__setattr__(self, "banks", tuple(self.banks))

    def dp_stream(self, series: PriceSeries, ts: np.ndarray | None = None):
        """Predicted price change at each prediction point of a series.

        Returns (ts, dp). Defaults to every point with full history and an
        observable next bucket.
        """
        if ts is None:
            ts = fit_points(series, self.banks)
        features = feature_block(series, self.banks, self.kernel, ts)
        w = self.weights.as_array()
        return ts, features @ w[1:] + w[0]

    def to_json_dict(self, bank_paths: Sequence[str]) -> dict:
        if len(bank_paths) != len(self.banks):
            raise ValueError("need one path per bank")
        return {
            "kernel": {"variant": self.kernel.variant, "c": self.kernel.c},
            "weights": {
                "w0": self.weights.w0,
                "w1": self.weights.w1,
                "w2": self.weights.w2,
                "w3": self.weights.w3,
                "w4": self.weights.w4,
                "used_ridge": self.weights.used_ridge,
            },
            "banks": list(bank_paths),
        }

    def save_json(self, path, bank_paths: Sequence[str]) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_json_dict(bank_paths), fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load_json(cls, path) -> "PredictorModel":
        with open(path, "r", encoding="utf-8") as fh:
            data = json.load(fh)
        kernel = KernelChoice(variant=data["kernel"]["variant"], c=float(data["kernel"]["c"]))
        w = data["weights"]
        weights = CombinerWeights(
            w0=float(w["w0"]),
            w1=float(w["w1"]),
            w2=float(w["w2"]),
            w3=float(w["w3"]),
            w4=float(w["w4"]),
            used_ridge=bool(w.get("used_ridge", False)),
        )
        base = os.path.dirname(os.fspath(path))
        banks = []
        for ref in data["banks"]:
            bank_path = ref if os.path.isabs(ref) else os.path.join(base, ref)
            bank = PatternBank.load(bank_path)
            if kernel.variant == KERNEL_EXP_SIMILARITY:
                bank = bank.with_kernel_c(kernel.c)
            banks.append(bank)
        return cls(banks=tuple(banks), kernel=kernel, weights=weights)


def benchmark_similarity(
    num_queries: int = 1024,
    num_patterns: int = 2048,
    dim: int = 360,
    seed: int = 7,
    repeats: int = 3,
) -> float:
    """Similarity evaluations per second on random blocks (best of repeats).

    One evaluation is one query-pattern pair; timing covers query
    normalization plus the scoring product, mirroring the production path
    where bank patterns are stored pre-normalized.
    """
    rng = np.random.default_rng(seed)
    queries = rng.standard_normal((num_queries, dim))
    patterns = normalize_rows(rng.standard_normal((num_patterns, dim)))
    best = 0.0
    checksum = 0.0
    for _ in range(repeats):
        start = time.perf_counter()
        scores = normalize_rows(queries) @ patterns.T / dim
        elapsed = time.perf_counter() - start
        checksum += float(scores[0, 0])
        best = max(best, num_queries * num_patterns / elapsed)
    if not np.isfinite(checksum):
        raise RuntimeError("benchmark produced non-finite scores")
    return best
