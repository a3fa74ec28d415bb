"""Evaluation suite: Fréchet distance between motion feature distributions,
diversity, cosine text-motion score, and retrieval precision.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import MotionSequence
from .errors import DimensionMismatchError, TooFewSamplesError, ZeroVectorError


@dataclass
class FeatureStats:
    mean: np.ndarray  # (d,)
    cov: np.ndarray  # (d, d) symmetric PSD
    count: int

    @classmethod
    def from_features(cls, features: np.ndarray) -> "FeatureStats":
        features = np.asarray(features, dtype=np.float64)
        if features.ndim != 2 or features.shape[0] < 2:
            raise TooFewSamplesError("need at least 2 feature vectors for statistics")
        mean = features.mean(axis=0)
        cov = np.cov(features, rowvar=False)
        cov = np.atleast_2d(cov)
        return cls(mean=mean, cov=0.5 * (cov + cov.T), count=features.shape[0])


def _psd_sqrt(mat: np.ndarray) -> np.ndarray:
    vals, vecs = np.linalg.eigh(mat)
    vals = np.clip(vals, 0.0, None)
    return (vecs * np.sqrt(vals)) @ vecs.T


def frechet_distance(a: FeatureStats, b: FeatureStats) -> float:
    """||mu_a - mu_b||^2 + Tr(S_a + S_b - 2 (S_a S_b)^{1/2}).

    The cross term uses the symmetric form sqrt(S_a)^T S_b sqrt(S_a) so the
    eigendecomposition stays numerically stable.
    """
    if a.mean.shape != b.mean.shape:
        raise DimensionMismatchError(
            f"feature dims differ: {a.mean.shape} vs {b.mean.shape}"
        )
    diff = a.mean - b.mean
    sqrt_a = _psd_sqrt(a.cov)
    inner = sqrt_a @ b.cov @ sqrt_a
    vals = np.linalg.eigvalsh(inner)
    cross = np.sqrt(np.clip(vals, 0.0, None)).sum()
    value = float(diff @ diff + np.trace(a.cov) + np.trace(b.cov) - 2.0 * cross)
    return max(value, 0.0)


def diversity(features: np.ndarray, n_pairs: int, rng: np.random.Generator) -> float:
    """Mean Euclidean distance over disjoint random feature pairs."""
    features = np.asarray(features, dtype=np.float64)
    if features.shape[0] < 2 * n_pairs:
        raise TooFewSamplesError(
            f"need {2 * n_pairs} features for {n_pairs} disjoint pairs, got {features.shape[0]}"
        )
    perm = rng.permutation(features.shape[0])
    first = features[perm[:n_pairs]]
    second = features[perm[n_pairs : 2 * n_pairs]]
    return float(np.linalg.norm(first - second, axis=1).mean())


def clip_score(motion_features: np.ndarray, text_features: np.ndarray) -> float:
    """Mean cosine similarity between paired motion and text features."""
    m = np.asarray(motion_features, dtype=np.float64)
    t = np.asarray(text_features, dtype=np.float64)
    if m.shape != t.shape:
        raise DimensionMismatchError(f"feature shapes differ: {m.shape} vs {t.shape}")
    mn = np.linalg.norm(m, axis=1)
    tn = np.linalg.norm(t, axis=1)
    if mn.min() == 0.0 or tn.min() == 0.0:
        raise ZeroVectorError("cosine similarity undefined for zero vectors")
    return float(((m * t).sum(axis=1) / (mn * tn)).mean())


def r_precision(
    motion_features: np.ndarray,
    text_features: np.ndarray,
    rng: np.random.Generator,
    pool_size: int = 32,
    top_k: int = 3,
) -> float:
    """Fraction of motions whose true text ranks in the cosine top-k among
    pool_size-1 random distractor texts."""
    m = np.asarray(motion_features, dtype=np.float64)
    t = np.asarray(text_features, dtype=np.float64)
    n = m.shape[0]
    if n < pool_size:
        raise TooFewSamplesError(f"need >= {pool_size} paired samples, got {n}")
    top_k = min(top_k, pool_size - 1)
    m = m / np.linalg.norm(m, axis=1, keepdims=True)
    t = t / np.linalg.norm(t, axis=1, keepdims=True)
    hits = 0
    for i in range(n):
        others = np.delete(np.arange(n), i)
        distractors = rng.choice(others, size=pool_size - 1, replace=False)
        pool = np.concatenate([[i], distractors])
        sims = t[pool] @ m[i]
        rank = int((sims > sims[0]).sum())
        hits += rank < top_k
    return hits / n


# ---------------------------------------------------------------------------
# feature extractors

class StatsFeatureExtractor:
    """Per-channel mean / std / mean-absolute-velocity concatenation."""

    extractor_id = "stats"

    def extract(self, seq: MotionSequence) -> np.ndarray:
        frames = seq.frames.astype(np.float64)
        mean = frames.mean(axis=0)
        std = frames.std(axis=0)
        if frames.shape[0] >= 2:
            vel = np.abs(np.diff(frames, axis=0)).mean(axis=0)
        else:
            vel = np.zeros_like(mean)
        return np.concatenate([mean, std, vel])

    def extract_many(self, seqs: list[MotionSequence]) -> np.ndarray:
        return np.stack([self.extract(s) for s in seqs], axis=0)


def metric_report(metric: str, value: float, n: int, seed: int, extractor_id: str) -> dict:
    return {"metric": metric, "value": value, "n": n, "seed": seed,
            "extractor_id": extractor_id}
