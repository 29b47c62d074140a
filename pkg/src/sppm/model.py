"""Domain types shared across the package: data container, design matrix,
hyperparameters and canonical partitions."""
from dataclasses import dataclass
from typing import Any, Optional, Sequence

import numpy as np
import pandas as pd


@dataclass
class Dataset:
    """``n`` station series of common length ``T`` with planar coordinates."""

    y: np.ndarray
    coords: np.ndarray
    station_ids: Sequence[str]
    time_index: Sequence[Any]

    def __post_init__(self):
        self.y = np.asarray(self.y, dtype=float)
        self.coords = np.asarray(self.coords, dtype=float)
        self.station_ids = [str(s) for s in self.station_ids]
        self.time_index = list(self.time_index)
        if self.y.ndim != 2:
            raise ValueError("y must be an (n, T) matrix")
        n, T = self.y.shape
        if n < 2 or T < 2:
            raise ValueError(f"need n >= 2 and T >= 2, got n={n}, T={T}")
        if not np.all(np.isfinite(self.y)):
            bad = [self.station_ids[i] for i in np.where(~np.isfinite(self.y).all(axis=1))[0]]
            raise ValueError(f"missing or non-finite values for stations: {bad}")
        if self.coords.shape != (n, 2) or not np.all(np.isfinite(self.coords)):
            raise ValueError("coords must be a finite (n, 2) array")
        if len(self.station_ids) != n or len(set(self.station_ids)) != n:
            raise ValueError("station_ids must be n unique labels")
        if len(self.time_index) != T:
            raise ValueError("time_index must have T entries")

    @property
    def n(self):
        return self.y.shape[0]

    @property
    def T(self):
        return self.y.shape[1]


# month -> season column (0 = winter baseline)
_MET_SEASON = {12: 0, 1: 0, 2: 0, 3: 1, 4: 1, 5: 1, 6: 2, 7: 2, 8: 2, 9: 3, 10: 3, 11: 3}


def build_seasonal_design(time_index, season_of_month=None):
    """Intercept plus spring/summer/autumn dummies, winter as baseline.

    Seasons follow the meteorological convention unless ``season_of_month``
    (a mapping month -> 0..3) is given. Returns a (T, 4) float array.
    """
    if len(time_index) == 0:
        raise ValueError("time_index is empty")
    try:
        dates = pd.to_datetime(pd.Series(list(time_index)), errors="raise")
    except (ValueError, TypeError) as exc:
        raise ValueError(f"unparseable date in time_index: {exc}") from None
    seasons = season_of_month or _MET_SEASON
    Z = np.zeros((len(dates), 4))
    Z[:, 0] = 1.0
    for t, month in enumerate(dates.dt.month):
        s = seasons[int(month)]
        if s:
            Z[t, s] = 1.0
    return Z


@dataclass(frozen=True)
class Partition:
    """Canonical allocation: 0-based labels in order of first appearance."""

    labels: tuple
    sizes: tuple

    @property
    def n(self):
        return len(self.labels)

    @property
    def K(self):
        return len(self.sizes)

    def as_array(self):
        return np.asarray(self.labels, dtype=np.int64)

    def blocks(self):
        out = [[] for _ in self.sizes]
        for i, k in enumerate(self.labels):
            out[k].append(i)
        return out


def canonical_labels(alloc):
    """Relabel an allocation vector by order of first appearance (0-based)."""
    alloc = np.asarray(alloc)
    if alloc.size == 0:
        raise ValueError("empty allocation")
    _, first, inverse = np.unique(alloc, return_index=True, return_inverse=True)
    rank = np.empty(first.shape[0], dtype=np.int64)
    rank[np.argsort(first, kind="stable")] = np.arange(first.shape[0])
    return rank[inverse.ravel()]


def canonicalize(alloc):
    labels = canonical_labels(alloc)
    sizes = np.bincount(labels)
    return Partition(tuple(int(x) for x in labels), tuple(int(x) for x in sizes))


@dataclass
class Hyperparams:
    """Fixed prior constants.

    ``similarity`` is one of the similarity objects from
    :mod:`sppm.partition` or ``None``; ``cohesion`` is ``"dp"`` or
    ``"finite_dirichlet"`` (the latter uses ``alpha_tilde``).
    """

    a_sigma: float = 2.0
    b_sigma: float = 1.0
    a_zeta: float = 2.0
    b_zeta: float = 1.0
    a_phi: float = 1.0
    b_phi: float = 1.0
    a_tau: float = 2.0
    b_tau: float = 1.0
    a_alpha: float = 2.0
    b_alpha: float = 0.5
    alpha: float = 1.0
    alpha_random: bool = False
    K_aux: int = 3
    cohesion: str = "dp"
    alpha_tilde: float = 1.0
    similarity: Optional[Any] = None

    def __post_init__(self):
        for name in ("a_sigma", "b_sigma", "a_zeta", "b_zeta", "a_phi", "b_phi",
                     "a_tau", "b_tau", "a_alpha", "b_alpha", "alpha", "alpha_tilde"):
            val = getattr(self, name)
            if not (val > 0 and np.isfinite(val)):
                raise ValueError(f"{name} must be positive, got {val!r}")
        if int(self.K_aux) < 1:
            raise ValueError("K_aux must be >= 1")
        if self.cohesion not in ("dp", "finite_dirichlet"):
            raise ValueError(f"unknown cohesion {self.cohesion!r}")
        if self.alpha_random and (self.similarity is not None or self.cohesion != "dp"):
            raise ValueError("a random alpha requires DP cohesion and no similarity")
