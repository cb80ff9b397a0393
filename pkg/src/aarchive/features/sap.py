"""Standardization-based subset average pooling of voxel feature vectors.

Each condition's vector is divided by ln(N) and standardized; the subset's
standardized vectors are standardized again with the mean and standard
deviation of their concatenation and averaged. Standard deviations use the
population convention. Since every standardized vector has mean 0 and
standard deviation 1, the concatenation does too, and the pooled vector is
the mean of the standardized vectors up to rounding.
"""
from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations
from typing import Sequence

import numpy as np

from .voxel import FeatureMapStack

__all__ = ["SapResult", "standardize", "sap_pool_vectors", "sap_pool", "condition_subsets"]


@dataclass(frozen=True)
class SapResult:
    subset: tuple
    pooled: np.ndarray

    @property
    def k(self) -> int:
        return len(self.subset)


def standardize(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    sd = x.std()
    if not sd > 0:
        raise ValueError("cannot standardize a constant vector")
    return (x - x.mean()) / sd


def sap_pool_vectors(vectors: Sequence[np.ndarray]) -> np.ndarray:
    vs = [np.asarray(v, dtype=np.float64) for v in vectors]
    if not vs:
        raise ValueError("empty subset")
    n = vs[0].size
    if n < 2:
        raise ValueError("need at least two voxels")
    if any(v.shape != (n,) for v in vs):
        raise ValueError("all vectors must be 1D with the same length")
    z = np.stack([standardize(v / np.log(n)) for v in vs])
    mean, sd = z.mean(), z.std()
    return ((z - mean) / sd).mean(axis=0)


def sap_pool(stack: FeatureMapStack, feature: str, subset: Sequence[str]) -> SapResult:
    subset = tuple(subset)
    missing = [c for c in subset if c not in stack.conditions]
    if missing:
        raise KeyError(f"unknown conditions {missing}")
    return SapResult(subset, sap_pool_vectors([stack.vector(c, feature) for c in subset]))


def condition_subsets(conditions: Sequence[str], k: int) -> list[tuple]:
    if not 1 <= k <= len(conditions):
        raise ValueError(f"subset size {k} outside [1, {len(conditions)}]")
    return list(combinations(conditions, k))
