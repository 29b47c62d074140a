"""File formats, synthetic data and derived tables.

Stations file: CSV with header ``station_id,lon,lat``.
Series file: long-format CSV with header ``station_id,date,value``.
"""
import json
import math
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np
import pandas as pd

from .model import Dataset, build_seasonal_design, canonicalize


class IngestError(ValueError):
    pass


def _fmt(x):
    return format(float(x), ".17g")


def ingest(series_path, stations_path):
    """Read the two CSV files into a dense :class:`Dataset`.

    Station order follows the stations file; dates are sorted. Missing
    values, calendar gaps, unknown stations and duplicate rows are errors.
    """
    stations = pd.read_csv(stations_path, dtype={"station_id": str}, encoding="utf-8",
                           float_precision="round_trip")
    missing_cols = {"station_id", "lon", "lat"} - set(stations.columns)
    if missing_cols:
        raise IngestError(f"stations file lacks columns {sorted(missing_cols)}")
    if stations["station_id"].duplicated().any():
        dup = stations.loc[stations["station_id"].duplicated(), "station_id"].tolist()
        raise IngestError(f"duplicate station ids in stations file: {dup}")
    series = pd.read_csv(series_path, dtype={"station_id": str, "date": str}, encoding="utf-8",
                         float_precision="round_trip")
    missing_cols = {"station_id", "date", "value"} - set(series.columns)
    if missing_cols:
        raise IngestError(f"series file lacks columns {sorted(missing_cols)}")
    unknown = sorted(set(series["station_id"]) - set(stations["station_id"]))
    if unknown:
        raise IngestError(f"series references unknown stations: {unknown}")
    dup = series.duplicated(subset=["station_id", "date"], keep="first")
    if dup.any():
        row = int(np.flatnonzero(dup.to_numpy())[0])
        r = series.iloc[row]
        # +2: header line and 1-based numbering
        raise IngestError(f"duplicate row for station {r['station_id']} on {r['date']} "
                          f"at line {row + 2}")
    try:
        parsed = pd.to_datetime(series["date"], errors="raise")
    except (ValueError, TypeError) as exc:
        raise IngestError(f"unparseable date: {exc}") from None
    series = series.assign(_date=parsed)
    wide = series.pivot(index="station_id", columns="_date", values="value")
    ids = stations["station_id"].tolist()
    wide = wide.reindex(index=ids)
    dates = wide.columns.sort_values()
    wide = wide[dates]
    if len(dates) > 1:
        full = pd.date_range(dates[0], dates[-1], freq="D")
        if len(full) != len(dates):
            gaps = full.difference(dates)
            raise IngestError(f"calendar gaps in series, first missing dates: "
                              f"{[d.strftime('%Y-%m-%d') for d in gaps[:5]]}")
    values = wide.to_numpy(dtype=float)
    bad = ~np.isfinite(values).all(axis=1)
    if bad.any():
        raise IngestError(f"missing values for stations: {[ids[i] for i in np.flatnonzero(bad)]}")
    coords = stations[["lon", "lat"]].to_numpy(dtype=float)
    return Dataset(values, coords, ids, [d.strftime("%Y-%m-%d") for d in dates])


def write_dataset(data, series_path, stations_path):
    """Inverse of :func:`ingest`; values written with 17 significant digits."""
    with open(stations_path, "w", encoding="utf-8", newline="") as fh:
        fh.write("station_id,lon,lat\n")
        for sid, (lon, lat) in zip(data.station_ids, data.coords):
            fh.write(f"{sid},{_fmt(lon)},{_fmt(lat)}\n")
    with open(series_path, "w", encoding="utf-8", newline="") as fh:
        fh.write("station_id,date,value\n")
        for sid, row in zip(data.station_ids, data.y):
            for d, v in zip(data.time_index, row):
                fh.write(f"{sid},{d},{_fmt(v)}\n")


def write_wide(data, path):
    """Convenience export: one row per station, one column per date."""
    df = pd.DataFrame(data.y, index=data.station_ids, columns=list(data.time_index))
    df.index.name = "station_id"
    df.to_csv(path, float_format="%.17g")


# --- synthetic data --------------------------------------------------------

@dataclass
class SyntheticSpec:
    n: int = 30
    T: int = 200
    atoms: List[Tuple[float, float]] = field(
        default_factory=lambda: [(0.9, 1.0), (0.5, 0.5), (0.2, 0.1)])
    centers: Optional[List[Tuple[float, float]]] = None
    spread: float = 0.3
    beta: Optional[List[float]] = None
    sigma2: float = 0.05
    start_date: str = "2019-01-01"
    seed: int = 0

    def __post_init__(self):
        K = len(self.atoms)
        if K < 1 or self.n < K:
            raise ValueError("need at least one atom and n >= number of atoms")
        for phi, tau2 in self.atoms:
            if not (0.0 < phi < 1.0 and tau2 > 0.0):
                raise ValueError(f"invalid atom ({phi}, {tau2})")
        if self.centers is None:
            # well separated points on a circle of radius 3
            ang = 2.0 * np.pi * np.arange(K) / K
            self.centers = [(3.0 * math.cos(a), 3.0 * math.sin(a)) for a in ang]
        if len(self.centers) != K:
            raise ValueError("need one center per atom")
        if not (self.sigma2 > 0 and self.spread > 0):
            raise ValueError("sigma2 and spread must be positive")

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if "atoms" in d:
            d["atoms"] = [tuple(a) for a in d["atoms"]]
        if d.get("centers") is not None:
            d["centers"] = [tuple(c) for c in d["centers"]]
        return cls(**d)

    def to_dict(self):
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


def simulate_ar1(T, phi, tau2, rng):
    """Stationary AR(1) path: w_1 from N(0, tau2 / (1 - phi^2))."""
    eps = rng.standard_normal(T) * math.sqrt(tau2)
    w = np.empty(T)
    w[0] = eps[0] / math.sqrt(1.0 - phi * phi)
    for t in range(1, T):
        w[t] = phi * w[t - 1] + eps[t]
    return w


def generate_synthetic(spec):
    """Forward-simulate the data model; returns (Dataset, Partition, atoms)."""
    rng = np.random.default_rng(spec.seed)
    K = len(spec.atoms)
    truth = np.repeat(np.arange(K), int(math.ceil(spec.n / K)))[: spec.n]
    dates = pd.date_range(spec.start_date, periods=spec.T, freq="D").strftime("%Y-%m-%d").tolist()
    Z = build_seasonal_design(dates)
    beta = np.asarray(spec.beta if spec.beta is not None else [1.0, 0.5, -0.5, 0.25], float)
    if beta.shape != (Z.shape[1],):
        raise ValueError(f"beta must have {Z.shape[1]} entries")
    centers = np.asarray(spec.centers, dtype=float)
    coords = centers[truth] + spec.spread * rng.standard_normal((spec.n, 2))
    y = np.empty((spec.n, spec.T))
    for i in range(spec.n):
        phi, tau2 = spec.atoms[truth[i]]
        w = simulate_ar1(spec.T, phi, tau2, rng)
        y[i] = Z @ beta + w + math.sqrt(spec.sigma2) * rng.standard_normal(spec.T)
    ids = [f"S{i + 1:03d}" for i in range(spec.n)]
    return Dataset(y, coords, ids, dates), canonicalize(truth), list(spec.atoms)


# --- derived tables --------------------------------------------------------

def emit_bands(data, partition):
    """Per cluster and day: mean and 5/25/75/95% quantiles across members.

    Quantiles interpolate linearly between order statistics.
    """
    labels = np.asarray(partition.labels if hasattr(partition, "labels") else partition)
    rows = []
    for k in range(labels.max() + 1):
        Y = data.y[labels == k]
        q = np.quantile(Y, [0.05, 0.25, 0.75, 0.95], axis=0, method="linear")
        mean = Y.mean(axis=0)
        for t, d in enumerate(data.time_index):
            rows.append((k + 1, d, int(Y.shape[0]), mean[t], q[0, t], q[1, t], q[2, t], q[3, t]))
    return pd.DataFrame(rows, columns=["cluster", "date", "size", "mean", "q05", "q25", "q75",
                                       "q95"])


def write_cocluster(psm, station_ids, path):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("station_id," + ",".join(station_ids) + "\n")
        for sid, row in zip(station_ids, psm):
            fh.write(sid + "," + ",".join(_fmt(x) for x in row) + "\n")


def read_cocluster(path):
    df = pd.read_csv(path, index_col=0, dtype={"station_id": str}, float_precision="round_trip")
    return df.to_numpy(dtype=float), [str(s) for s in df.index]


def write_partition(path, station_ids, labels, cluster_params=None):
    """station_id, cluster (1-based), and per-cluster phi/tau2 when available."""
    labels = np.asarray(labels)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        head = "station_id,cluster"
        if cluster_params is not None:
            head += ",phi,phi_lo,phi_hi,tau2,tau2_lo,tau2_hi"
        fh.write(head + "\n")
        for sid, k in zip(station_ids, labels):
            line = f"{sid},{int(k) + 1}"
            if cluster_params is not None:
                c = cluster_params[int(k)]
                line += "," + ",".join(_fmt(v) for v in (c.phi_mean, c.phi_ci[0], c.phi_ci[1],
                                                         c.tau2_mean, c.tau2_ci[0], c.tau2_ci[1]))
            fh.write(line + "\n")


def read_partition(path):
    df = pd.read_csv(path, dtype={"station_id": str})
    return df


def geojson_clusters(data, labels, cluster_params=None):
    """FeatureCollection of station points carrying cluster label and atom."""
    labels = np.asarray(labels)
    feats = []
    for sid, (lon, lat), k in zip(data.station_ids, data.coords, labels):
        props = {"station_id": sid, "cluster": int(k) + 1}
        if cluster_params is not None:
            c = cluster_params[int(k)]
            props.update(phi=c.phi_mean, tau2=c.tau2_mean)
        feats.append({"type": "Feature",
                      "geometry": {"type": "Point", "coordinates": [float(lon), float(lat)]},
                      "properties": props})
    return {"type": "FeatureCollection", "features": feats}


def write_draws(draws, path):
    """One JSON object per retained iteration."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for rec in draws.records:
            fh.write(json.dumps(rec.to_dict(), separators=(",", ":")) + "\n")


def read_draws(path):
    from .sampler import DrawRecord, PosteriorDraws

    recs = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                recs.append(DrawRecord.from_dict(json.loads(line)))
    if not recs:
        raise ValueError(f"no draws in {path}")
    return PosteriorDraws(recs, len(recs[0].labels))
