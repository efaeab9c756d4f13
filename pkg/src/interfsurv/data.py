"""Cluster data containers, file I/O, time grids and fold assignment."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, replace
from functools import cached_property
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import (
    EmptyClusterError,
    EmptyDataset,
    LengthMismatch,
    MissingColumn,
    NegativeTime,
    NonBinaryField,
    RaggedCluster,
    SchemaError,
    TooFewClusters,
)

N_MAX = 64


def _binary(values, name: str) -> np.ndarray:
    arr = np.asarray(values, dtype=float)
    if arr.size and not np.all((arr == 0) | (arr == 1)):
        raise NonBinaryField(f"{name} must contain only 0/1 values")
    return arr.astype(np.int8)


@dataclass(frozen=True, eq=False)
class ClusterObservation:
    """Observed data of one cluster: times, event flags, treatments, covariates."""

    cluster_id: str
    y: np.ndarray
    delta: np.ndarray
    a: np.ndarray
    x: np.ndarray
    n_max: int = N_MAX

    def __post_init__(self):
        y = np.asarray(self.y, dtype=float).reshape(-1)
        n = y.shape[0]
        if n == 0:
            raise EmptyClusterError(f"cluster {self.cluster_id!r} has no units")
        if n > self.n_max:
            raise SchemaError(f"cluster {self.cluster_id!r} has {n} units > n_max={self.n_max}")
        if not np.all(np.isfinite(y)) or np.any(y < 0):
            raise NegativeTime(f"cluster {self.cluster_id!r} has negative or non-finite times")
        delta = _binary(self.delta, "event").reshape(-1)
        a = _binary(self.a, "treatment").reshape(-1)
        x = np.asarray(self.x, dtype=float)
        if x.ndim == 1:
            x = x.reshape(n, -1) if x.size else np.zeros((n, 0))
        if delta.shape[0] != n or a.shape[0] != n or x.shape[0] != n:
            raise LengthMismatch(f"cluster {self.cluster_id!r}: arrays disagree on cluster size")
        for name, arr in (("y", y), ("delta", delta), ("a", a), ("x", x)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "cluster_id", str(self.cluster_id))

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def p(self) -> int:
        return self.x.shape[1]


@dataclass(frozen=True, eq=False)
class Dataset:
    """An i.i.d. sample of clusters, optionally carrying fold labels 1..K."""

    clusters: tuple
    p: int
    folds: np.ndarray | None = None

    def __post_init__(self):
        clusters = tuple(self.clusters)
        if not clusters:
            raise EmptyDataset("dataset has no clusters")
        ids = [c.cluster_id for c in clusters]
        if len(set(ids)) != len(ids):
            raise SchemaError("cluster ids must be unique")
        for c in clusters:
            if c.p != self.p:
                raise RaggedCluster(f"cluster {c.cluster_id!r} has {c.p} covariates, expected {self.p}")
        object.__setattr__(self, "clusters", clusters)
        if self.folds is not None:
            folds = np.asarray(self.folds, dtype=int).reshape(-1)
            if folds.shape[0] != len(clusters):
                raise LengthMismatch("fold labels must have one entry per cluster")
            k = int(folds.max())
            if folds.min() < 1 or k > len(clusters):
                raise SchemaError("fold labels must lie in 1..K with K <= m")
            sizes = np.bincount(folds, minlength=k + 1)[1:]
            if sizes.max() - sizes.min() > 1:
                raise SchemaError("fold sizes must differ by at most one")
            folds.setflags(write=False)
            object.__setattr__(self, "folds", folds)

    @property
    def m(self) -> int:
        return len(self.clusters)

    @property
    def n_units(self) -> int:
        return int(sum(c.n for c in self.clusters))

    @property
    def n_folds(self) -> int:
        return 0 if self.folds is None else int(self.folds.max())

    def subset(self, index: Sequence[int]) -> "Dataset":
        idx = np.asarray(index, dtype=int)
        return Dataset(tuple(self.clusters[i] for i in idx), self.p)

    @cached_property
    def flat(self) -> "FlatUnits":
        return FlatUnits.from_clusters(self.clusters, self.p)


@dataclass(frozen=True, eq=False)
class FlatUnits:
    """Unit-level arrays stacked over clusters, with exposure summaries."""

    cluster: np.ndarray   # cluster position of each unit
    y: np.ndarray
    delta: np.ndarray
    a: np.ndarray
    x: np.ndarray
    xbar: np.ndarray      # mean covariates of the other units (own row when n = 1)
    k: np.ndarray         # number of treated others
    n: np.ndarray
    offsets: np.ndarray   # start of each cluster in the stacked arrays

    @classmethod
    def from_clusters(cls, clusters: Sequence[ClusterObservation], p: int) -> "FlatUnits":
        sizes = np.array([c.n for c in clusters], dtype=int)
        offsets = np.concatenate([[0], np.cumsum(sizes)])
        y = np.concatenate([c.y for c in clusters])
        delta = np.concatenate([c.delta for c in clusters])
        a = np.concatenate([c.a for c in clusters])
        x = np.concatenate([c.x for c in clusters]).reshape(-1, p)
        cl = np.repeat(np.arange(len(clusters)), sizes)
        n = sizes[cl]
        sums = np.add.reduceat(x, offsets[:-1], axis=0) if p else np.zeros((len(clusters), 0))
        asum = np.add.reduceat(a.astype(float), offsets[:-1])
        denom = np.maximum(n - 1, 1)[:, None]
        xbar = np.where(n[:, None] > 1, (sums[cl] - x) / denom, x)
        k = (asum[cl] - a).astype(int)
        return cls(cl, y, delta, a, x, xbar, k, n, offsets)


def others_mean(x: np.ndarray) -> np.ndarray:
    """Row-wise mean of the other rows of ``x`` (the row itself when only one)."""
    n = x.shape[0]
    if n == 1:
        return x.copy()
    return (x.sum(axis=0, keepdims=True) - x) / (n - 1)


@dataclass(frozen=True, eq=False)
class TimeGrid:
    """Strictly increasing support r_1 < ... < r_L shared by all survival curves."""

    points: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float).reshape(-1)
        if pts.size == 0:
            raise EmptyDataset("time grid needs at least one point")
        if not np.all(np.isfinite(pts)) or np.any(np.diff(pts) <= 0):
            raise SchemaError("time grid must be finite and strictly increasing")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    def __len__(self) -> int:
        return self.points.shape[0]

    def index_right(self, t) -> np.ndarray:
        """Number of grid points <= t (so the last jump at or before t is index - 1)."""
        return np.searchsorted(self.points, np.asarray(t, dtype=float), side="right")

    def index_of(self, t) -> np.ndarray:
        """Exact grid index of observed times; raises if a time is off the grid."""
        t = np.asarray(t, dtype=float)
        idx = np.searchsorted(self.points, t, side="left")
        ok = (idx < len(self)) & (self.points[np.minimum(idx, len(self) - 1)] == t)
        if not np.all(ok):
            raise SchemaError("time not on grid")
        return idx

    def contains(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        idx = np.minimum(np.searchsorted(self.points, t), len(self) - 1)
        return self.points[idx] == t


def build_time_grid(ds: Dataset) -> TimeGrid:
    """Sorted unique observed times of ``ds``."""
    if ds.m == 0:
        raise EmptyDataset("dataset has no clusters")
    return TimeGrid(np.unique(np.concatenate([c.y for c in ds.clusters])))


def assign_folds(ds: Dataset, K: int, seed: int, split: int = 0) -> Dataset:
    """Random balanced partition of clusters into folds 1..K."""
    if K < 2:
        raise TooFewClusters("need at least two folds")
    if ds.m < K:
        raise TooFewClusters(f"{ds.m} clusters cannot fill {K} folds")
    rng = np.random.default_rng([int(seed), int(split), 0xF01D])
    labels = np.empty(ds.m, dtype=int)
    labels[rng.permutation(ds.m)] = np.arange(ds.m) % K + 1
    return replace(ds, folds=labels)


# ---------------------------------------------------------------------------
# file formats

def _fmt(v: float) -> str:
    return repr(float(v)) if math.isfinite(v) else str(v)


def save_dataset(ds: Dataset, path, format: str = "csv") -> None:
    path = Path(path)
    if format == "csv":
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["cluster_id", "unit_id", "time", "event", "treatment"]
                       + [f"x{j + 1}" for j in range(ds.p)])
            for c in ds.clusters:
                for j in range(c.n):
                    w.writerow([c.cluster_id, j + 1, _fmt(c.y[j]), int(c.delta[j]), int(c.a[j])]
                               + [_fmt(v) for v in c.x[j]])
    elif format == "jsonl":
        with path.open("w") as fh:
            for c in ds.clusters:
                fh.write(json.dumps({"cluster_id": c.cluster_id, "y": c.y.tolist(),
                                     "delta": c.delta.tolist(), "a": c.a.tolist(),
                                     "x": c.x.tolist()}) + "\n")
    else:
        raise ValueError(f"unknown format {format!r}")


def _sort_key(u: str):
    try:
        return (0, float(u), u)
    except ValueError:
        return (1, 0.0, u)


def load_dataset(path, format: str | None = None, n_max: int = N_MAX) -> Dataset:
    """Read a CSV (one row per unit) or JSONL (one cluster per line) file."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(str(path))
    if format is None:
        format = "jsonl" if path.suffix in (".jsonl", ".json") else "csv"
    if format == "csv":
        return _load_csv(path, n_max)
    if format == "jsonl":
        return _load_jsonl(path, n_max)
    raise ValueError(f"unknown format {format!r}")


def _load_csv(path: Path, n_max: int) -> Dataset:
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise EmptyDataset(f"{path} is empty") from None
        required = ["cluster_id", "unit_id", "time", "event", "treatment"]
        for col in required:
            if col not in header:
                raise MissingColumn(f"missing column {col!r} in {path}")
        xcols = sorted((h for h in header if h.startswith("x") and h[1:].isdigit()),
                       key=lambda h: int(h[1:]))
        if [int(h[1:]) for h in xcols] != list(range(1, len(xcols) + 1)):
            raise MissingColumn("covariate columns must be x1..xp without gaps")
        pos = {h: i for i, h in enumerate(header)}
        groups: dict[str, list] = {}
        for row in reader:
            if not row:
                continue
            if len(row) != len(header):
                raise RaggedCluster(f"row has {len(row)} fields, header has {len(header)}")
            cid = row[pos["cluster_id"]]
            groups.setdefault(cid, []).append(row)
    if not groups:
        raise EmptyDataset(f"{path} has no data rows")
    clusters = []
    for cid, rows in groups.items():
        rows.sort(key=lambda r: _sort_key(r[pos["unit_id"]]))
        y = [float(r[pos["time"]]) for r in rows]
        d = [float(r[pos["event"]]) for r in rows]
        a = [float(r[pos["treatment"]]) for r in rows]
        x = np.array([[float(r[pos[h]]) for h in xcols] for r in rows]).reshape(len(rows), len(xcols))
        clusters.append(ClusterObservation(cid, y, d, a, x, n_max=n_max))
    return Dataset(tuple(clusters), len(xcols))


def _load_jsonl(path: Path, n_max: int) -> Dataset:
    clusters = []
    p = None
    with path.open() as fh:
        for line in fh:
            if not line.strip():
                continue
            obj = json.loads(line)
            for key in ("cluster_id", "y", "delta", "a", "x"):
                if key not in obj:
                    raise MissingColumn(f"missing field {key!r}")
            n = len(obj["y"])
            rows = obj["x"]
            widths = {len(r) for r in rows} if rows else {0}
            if len(widths) != 1:
                raise RaggedCluster(f"cluster {obj['cluster_id']!r} has ragged covariates")
            width = widths.pop()
            if p is None:
                p = width
            elif width != p:
                raise RaggedCluster("covariate count differs between clusters")
            x = np.array(rows, dtype=float).reshape(n, width) if n else np.zeros((0, width))
            clusters.append(ClusterObservation(obj["cluster_id"], obj["y"], obj["delta"],
                                               obj["a"], x, n_max=n_max))
    if not clusters:
        raise EmptyDataset(f"{path} has no clusters")
    return Dataset(tuple(clusters), p or 0)


def dataset_from_arrays(cluster: Iterable, y, delta, a, x) -> Dataset:
    """Group flat unit arrays into a Dataset (clusters kept in first-seen order)."""
    cluster = np.asarray(list(cluster))
    y, delta, a = (np.asarray(v) for v in (y, delta, a))
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    _, first, inv = np.unique(cluster, return_index=True, return_inverse=True)
    order = np.argsort(first)
    out = []
    for g in order:
        idx = np.flatnonzero(inv == g)
        out.append(ClusterObservation(str(cluster[idx[0]]), y[idx], delta[idx], a[idx], x[idx]))
    return Dataset(tuple(out), x.shape[1])
