"""Pattern mining: labeled window extraction, k-means, bank selection.

A pattern is a fixed-length window of the price grid paired with the price
change over the bucket that follows it. Windows are stored zero-mean /
unit-std (population convention: std is the square root of the mean squared
deviation), which turns correlation scoring downstream into plain inner
products. Constant windows normalize to the zero vector and are flagged.

Banks are built per window length: extract all windows, cluster them with
k-means (k-means++ seeding, Lloyd iterations, deterministic given seed),
rank clusters by effectiveness |mean label| / (label std + eps), and keep
the re-normalized centroids of the top clusters with their mean labels.

Bank serialization: a JSON form (window_length, kernel_c, and one
{vector, label, population} record per pattern) and a compact binary form
for large banks (little-endian, length-prefixed 64-bit floats).
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .market_data import PriceSeries

DEFAULT_WINDOW_LENGTHS = (180, 360, 720)
DEFAULT_NUM_CLUSTERS = 100
DEFAULT_NUM_SELECTED = 20
EFFECTIVENESS_EPS = 1e-9

_BANK_MAGIC = b"LSTBANK1"


def normalize(x) -> np.ndarray:
    """Zero-mean, unit-std copy of x; a constant vector maps to zeros."""
    x = np.asarray(x, dtype=np.float64)
    if x.size == 0 or x.max() == x.min():
        return np.zeros_like(x)
    deviations = x - x.mean()
    deviations -= deviations.mean()  # kill the residual of an inexact mean
    variance = (deviations @ deviations) / x.size
    if variance == 0.0:
        return np.zeros_like(deviations)
    return deviations / np.sqrt(variance)


def normalize_rows(block: np.ndarray) -> np.ndarray:
    """Row-wise normalize; constant rows become zero rows."""
    block = np.asarray(block, dtype=np.float64)
    deviations = block - block.mean(axis=1, keepdims=True)
    deviations -= deviations.mean(axis=1, keepdims=True)
    variance = np.einsum("ij,ij->i", deviations, deviations) / block.shape[1]
    constant = block.max(axis=1) == block.min(axis=1)
    scale = np.sqrt(variance, out=np.zeros_like(variance), where=variance > 0)
    usable = (scale > 0) & ~constant
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.where(usable[:, None], deviations / np.where(scale > 0, scale, 1.0)[:, None], 0.0)
    return out


@dataclass(frozen=True)
class Pattern:
    """One labeled window: raw values, next-bucket change, normalized form."""

    x: np.ndarray
    y: float
    normalized_x: np.ndarray
    constant: bool

    @classmethod
    def from_window(cls, x, y: float) -> "Pattern":
        x = np.asarray(x, dtype=np.float64)
        normalized = normalize(x)
        constant = not normalized.any()
        return cls(x=x, y=float(y), normalized_x=normalized, constant=constant)


def extract_windows(series: PriceSeries, window: int, stride: int = 1) -> list[Pattern]:
    """All labeled windows of the given length, stepping starts by stride.

    Window i is prices[i : i+window); its label is the increment
    prices[i+window] - prices[i+window-1]. Starts whose label bucket would
    fall past the series end are not produced.
    """
    if window < 1:
        raise ValueError("window must be >= 1")
    if stride < 1:
        raise ValueError("stride must be >= 1")
    if len(series) < window + 1:
        raise ValueError(
            f"series has {len(series)} buckets, need at least {window + 1} "
            f"for windows of length {window}"
        )
    prices = series.prices
    starts = np.arange(0, len(series) - window, stride)
    raw = sliding_window_view(prices, window)[starts]
    labels = prices[starts + window] - prices[starts + window - 1]
    normalized = normalize_rows(raw)
    constant = ~normalized.any(axis=1)
    raw.setflags(write=False)
    normalized.setflags(write=False)
    return [
        Pattern(x=raw[i], y=float(labels[i]), normalized_x=normalized[i], constant=bool(constant[i]))
        for i in range(len(starts))
    ]


@dataclass(frozen=True)
class ClusterSet:
    """k-means result over normalized patterns, with per-cluster label stats."""

    k: int
    centroids: np.ndarray
    assignments: np.ndarray
    member_label_mean: np.ndarray
    member_label_std: np.ndarray
    populations: np.ndarray
    objective_history: tuple[float, ...]


def _pairwise_sq_dists(points: np.ndarray, centers: np.ndarray) -> np.ndarray:
    d2 = (
        np.einsum("ij,ij->i", points, points)[:, None]
        + np.einsum("ij,ij->i", centers, centers)[None, :]
        - 2.0 * points @ centers.T
    )
    np.clip(d2, 0.0, None, out=d2)
    return d2


def _kmeanspp_init(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = points.shape[0]
    centers = np.empty((k, points.shape[1]))
    centers[0] = points[rng.integers(n)]
    closest = _pairwise_sq_dists(points, centers[:1])[:, 0]
    for j in range(1, k):
        total = closest.sum()
        if total > 0:
            idx = rng.choice(n, p=closest / total)
        else:
            idx = int(rng.integers(n))  # all points coincide with chosen centers
        centers[j] = points[idx]
        np.minimum(closest, _pairwise_sq_dists(points, centers[j : j + 1])[:, 0], out=closest)
    return centers


def kmeans(
    patterns: Sequence[Pattern], k: int, seed: int, max_iters: int = 100
) -> ClusterSet:
    """Lloyd's algorithm with k-means++ seeding on normalized windows.

    Deterministic given the seed. Stops when assignments stabilize or after
    max_iters update/assign cycles; the returned assignments are always
    nearest-centroid under the returned centroids. Empty clusters are
    reseeded to the point currently farthest from its centroid.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    n = len(patterns)
    if n < k:
        raise ValueError(f"need at least k={k} patterns, got {n}")
    if max_iters < 1:
        raise ValueError("max_iters must be >= 1")

    points = np.stack([p.normalized_x for p in patterns])
    labels = np.array([p.y for p in patterns])
    rng = np.random.default_rng(seed)

    centroids = _kmeanspp_init(points, k, rng)
    d2 = _pairwise_sq_dists(points, centroids)
    assignments = d2.argmin(axis=1)
    assigned_d2 = d2[np.arange(n), assignments]
    history = [float(assigned_d2.sum())]

    for _ in range(max_iters):
        counts = np.bincount(assignments, minlength=k)
        sums = np.zeros_like(centroids)
        np.add.at(sums, assignments, points)
        new_centroids = np.where(counts[:, None] > 0, sums / np.maximum(counts, 1)[:, None], 0.0)
        empties = np.flatnonzero(counts == 0)
        if empties.size:
            order = iter(np.argsort(-assigned_d2, kind="stable"))
            for empty in empties:
                new_centroids[empty] = points[int(next(order))]
        centroids = new_centroids

        d2 = _pairwise_sq_dists(points, centroids)
        new_assignments = d2.argmin(axis=1)
        assigned_d2 = d2[np.arange(n), new_assignments]
        history.append(float(assigned_d2.sum()))
        converged = np.array_equal(new_assignments, assignments)
        assignments = new_assignments
        if converged:
            break

    populations = np.bincount(assignments, minlength=k)
    label_mean = np.zeros(k)
    label_std = np.zeros(k)
    for cluster in range(k):
        members = labels[assignments == cluster]
        if members.size:
            label_mean[cluster] = members.mean()
            label_std[cluster] = np.sqrt(((members - members.mean()) ** 2).mean())

    return ClusterSet(
        k=k,
        centroids=centroids,
        assignments=assignments,
        member_label_mean=label_mean,
        member_label_std=label_std,
        populations=populations,
        objective_history=tuple(history),
    )


@dataclass(frozen=True)
class BankPattern:
    """A selected representative: normalized vector, label, source population."""

    vector: np.ndarray
    label: float
    population: int


def select_effective(clusters: ClusterSet, m: int) -> list[BankPattern]:
    """Top-m clusters by effectiveness |mean label| / (label std + eps).

    Ties break toward larger population, then lower cluster id. The
    representative is the centroid re-normalized to zero mean / unit std,
    labeled with the cluster's mean member label.
    """
    if m < 1:
        raise ValueError("m must be >= 1")
    if m > clusters.k:
        raise ValueError(f"cannot select m={m} from {clusters.k} clusters")
    scores = np.abs(clusters.member_label_mean) / (
        clusters.member_label_std + EFFECTIVENESS_EPS
    )
    order = sorted(
        range(clusters.k),
        key=lambda i: (-scores[i], -int(clusters.populations[i]), i),
    )
    return [
        BankPattern(
            vector=normalize(clusters.centroids[i]),
            label=float(clusters.member_label_mean[i]),
            population=int(clusters.populations[i]),
        )
        for i in order[:m]
    ]


def effectiveness_scores(clusters: ClusterSet) -> np.ndarray:
    """The ranking score used by select_effective, exposed for inspection."""
    return np.abs(clusters.member_label_mean) / (
        clusters.member_label_std + EFFECTIVENESS_EPS
    )


@dataclass(frozen=True)
class PatternBank:
    """Selected representative patterns for one window length.

    Vectors are stored normalized (or all-zero for a degenerate constant
    representative); kernel_c is the kernel sharpness constant shared
    across banks once calibrated.
    """

    window_length: int
    vectors: np.ndarray
    labels: np.ndarray
    populations: np.ndarray
    kernel_c: float = 1.0

    def __post_init__(self) -> None:
        vectors = np.ascontiguousarray(self.vectors, dtype=np.float64)
        labels = np.ascontiguousarray(self.labels, dtype=np.float64)
        populations = np.ascontiguousarray(self.populations, dtype=np.int64)
        if vectors.ndim != 2 or vectors.shape[0] == 0:
            raise ValueError("bank must hold at least one pattern")
        if vectors.shape[1] != self.window_length:
            raise ValueError(
                f"bank vectors have dimension {vectors.shape[1]}, "
                f"expected window_length {self.window_length}"
            )
        if labels.shape != (vectors.shape[0],) or populations.shape != (vectors.shape[0],):
            raise ValueError("labels/populations must align with vectors")
        if not self.kernel_c > 0:
            raise ValueError("kernel_c must be > 0")
        means = vectors.mean(axis=1)
        rms = np.sqrt((vectors**2).mean(axis=1))
        ok = (np.abs(means) <= 1e-6) & ((np.abs(rms - 1.0) <= 1e-6) | (rms == 0.0))
        if not ok.all():
            raise ValueError("bank vectors must be normalized (or zero for constants)")
        for arr in (vectors, labels, populations):
            arr.setflags(write=False)
        object.__setattr__(self, "vectors", vectors)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "populations", populations)

    def __len__(self) -> int:
        return self.vectors.shape[0]

    def with_kernel_c(self, c: float) -> "PatternBank":
        return replace(self, kernel_c=float(c))

    @classmethod
    def from_patterns(
        cls, window_length: int, selected: Sequence[BankPattern], kernel_c: float = 1.0
    ) -> "PatternBank":
        if not selected:
            raise ValueError("cannot build an empty bank")
        return cls(
            window_length=window_length,
            vectors=np.stack([p.vector for p in selected]),
            labels=np.array([p.label for p in selected]),
            populations=np.array([p.population for p in selected], dtype=np.int64),
            kernel_c=float(kernel_c),
        )

    def to_json_dict(self) -> dict:
        return {
            "window_length": self.window_length,
            "kernel_c": self.kernel_c,
            "patterns": [
                {
                    "vector": [float(v) for v in self.vectors[i]],
                    "label": float(self.labels[i]),
                    "population": int(self.populations[i]),
                }
                for i in range(len(self))
            ],
        }

    @classmethod
    def from_json_dict(cls, data: dict) -> "PatternBank":
        patterns = data["patterns"]
        return cls(
            window_length=int(data["window_length"]),
            vectors=np.array([p["vector"] for p in patterns], dtype=np.float64),
            labels=np.array([p["label"] for p in patterns], dtype=np.float64),
            populations=np.array([p["population"] for p in patterns], dtype=np.int64),
            kernel_c=float(data["kernel_c"]),
        )

    def save_json(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_json_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load_json(cls, path) -> "PatternBank":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_json_dict(json.load(fh))

    def save_binary(self, path) -> None:
        with open(path, "wb") as fh:
            fh.write(_BANK_MAGIC)
            fh.write(struct.pack("<QQd", len(self), self.window_length, self.kernel_c))
            for i in range(len(self)):
                fh.write(struct.pack("<Q", self.window_length))
                fh.write(self.vectors[i].astype("<f8").tobytes())
                fh.write(struct.pack("<dQ", float(self.labels[i]), int(self.populations[i])))

    @classmethod
    def load_binary(cls, path) -> "PatternBank":
        with open(path, "rb") as fh:
            magic = fh.read(len(_BANK_MAGIC))
            if magic != _BANK_MAGIC:
                raise ValueError(f"{path}: not a pattern bank file")
            count, window_length, kernel_c = struct.unpack("<QQd", fh.read(24))
            vectors = np.empty((count, window_length))
            labels = np.empty(count)
            populations = np.empty(count, dtype=np.int64)
            for i in range(count):
                (length,) = struct.unpack("<Q", fh.read(8))
                if length != window_length:
                    raise ValueError(f"{path}: pattern {i} length {length} != {window_length}")
                vectors[i] = np.frombuffer(fh.read(8 * length), dtype="<f8")
                labels[i], populations[i] = struct.unpack("<dQ", fh.read(16))
        return cls(
            window_length=int(window_length),
            vectors=vectors,
            labels=labels,
            populations=populations,
            kernel_c=float(kernel_c),
        )

    @classmethod
    def load(cls, path) -> "PatternBank":
        """Load a bank from either serialized form, sniffing the magic bytes."""
        with open(path, "rb") as fh:
            magic = fh.read(len(_BANK_MAGIC))
        if magic == _BANK_MAGIC:
            return cls.load_binary(path)
        return cls.load_json(path)


def build_banks(
    series: PriceSeries,
    window_lengths: Sequence[int] = DEFAULT_WINDOW_LENGTHS,
    k: int = DEFAULT_NUM_CLUSTERS,
    m: int = DEFAULT_NUM_SELECTED,
    stride: int = 1,
    seed: int = 0,
    max_iters: int = 100,
    kernel_c: float = 1.0,
) -> tuple[PatternBank, ...]:
    """Build one bank per window length from a historical series.

    For small inputs k is clamped to half the window count (at least 1) and
    m to the effective k, so short series still yield usable banks.
    """
    window_lengths = tuple(int(w) for w in window_lengths)
    if any(b <= a for a, b in zip(window_lengths, window_lengths[1:])):
        raise ValueError("window lengths must be strictly increasing")
    longest = max(window_lengths)
    if len(series) < longest + 1:
        raise ValueError(
            f"series has {len(series)} buckets, need at least {longest + 1} "
            f"to build a bank of window length {longest}"
        )
    rng = np.random.default_rng(seed)
    banks = []
    for window in window_lengths:
        cluster_seed = int(rng.integers(2**31))
        patterns = extract_windows(series, window, stride)
        k_eff = max(1, min(k, len(patterns) // 2))
        m_eff = min(m, k_eff)
        clusters = kmeans(patterns, k_eff, seed=cluster_seed, max_iters=max_iters)
        selected = select_effective(clusters, m_eff)
        banks.append(PatternBank.from_patterns(window, selected, kernel_c=kernel_c))
    return tuple(banks)
