"""Loading, cleaning, balancing and splitting labelled flow tables."""
import csv
import logging
import math
import re
import warnings
from collections import Counter
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .schema import (
    CIC_COLUMNS,
    EXCLUDED_LABELS,
    FEATURE_NAMES,
    IP_FEATURES,
    LABEL_INDEX,
    LABELS,
    N_FEATURES,
    SCHEMA_VERSION,
    encode_ip,
)

logger = logging.getLogger(__name__)

_IPV4 = re.compile(r"^\s*\d{1,3}\.\d{1,3}\.\d{1,3}\.\d{1,3}\s*$")
LABEL_COLUMNS = ("Label", "label")


class SchemaError(ValueError):
    """A required column is missing from an input table."""


class EmptyDatasetError(ValueError):
    pass


@dataclass(frozen=True)
class LabeledDataset:
    features: np.ndarray
    labels: np.ndarray
    schema_version: str = SCHEMA_VERSION
    provenance: tuple = ()
    drops: Counter = field(default_factory=Counter, compare=False)

    def __post_init__(self):
        if self.features.ndim != 2 or self.features.shape[1] != N_FEATURES:
            raise ValueError(f"features must be N x {N_FEATURES}, got {self.features.shape}")
        if len(self.features) != len(self.labels):
            raise ValueError("features and labels differ in length")
        if not np.isfinite(self.features).all():
            raise ValueError("features contain non-finite values")

    def __len__(self):
        return len(self.labels)

    def class_counts(self):
        counts = np.bincount(self.labels, minlength=len(LABELS))
        return {LABELS[i]: int(c) for i, c in enumerate(counts) if c}

    def take(self, idx):
        return LabeledDataset(
            self.features[idx], self.labels[idx], self.schema_version, self.provenance
        )


def _resolve_columns(header, path):
    """Map each canonical feature to a column position in ``header``."""
    stripped = [h.strip() for h in header]
    first = {}
    for pos, name in enumerate(stripped):
        first.setdefault(name, pos)
    positions = []
    for canon, cic in zip(FEATURE_NAMES, CIC_COLUMNS):
        if canon in first:
            positions.append(first[canon])
        elif cic in first:
            positions.append(first[cic])
        else:
            raise SchemaError(f"{path}: missing required column {cic!r} (or {canon!r})")
    label_pos = next((first[c] for c in LABEL_COLUMNS if c in first), None)
    return positions, label_pos


def _parse_cell(text, is_ip):
    if is_ip and _IPV4.match(text):
        return float(encode_ip(text))
    return float(text)


def _parse_column(series, is_ip):
    values = pd.to_numeric(series, errors="coerce").to_numpy(dtype=np.float64)
    bad = np.isnan(values)
    if is_ip or bad.any():
        for i in np.flatnonzero(bad):
            cell = series.iat[i]
            if not isinstance(cell, str):
                continue
            try:
                values[i] = _parse_cell(cell, is_ip)
            except ValueError:
                pass
    return values


def _load_one(path, default_label, drops, chunksize):
    with open(path, newline="", encoding="utf-8") as fh:
        header = next(csv.reader(fh), None)
    if header is None:
        raise SchemaError(f"{path}: file is empty, expected a header row")
    positions, label_pos = _resolve_columns(header, path)
    if label_pos is None and default_label is None:
        raise SchemaError(f"{path}: missing required column 'Label'")
    usecols = sorted(set(positions + ([label_pos] if label_pos is not None else [])))
    feats, labels = [], []
    reader = pd.read_csv(
        path,
        usecols=usecols,
        dtype=str,
        keep_default_na=False,
        chunksize=chunksize,
        encoding="utf-8",
    )
    for chunk in reader:
        cols = list(chunk.columns)
        by_pos = dict(zip(usecols, cols))
        if label_pos is not None:
            raw_labels = chunk[by_pos[label_pos]].str.strip()
        else:
            raw_labels = pd.Series([default_label] * len(chunk), index=chunk.index)
        excluded = raw_labels.isin(EXCLUDED_LABELS).to_numpy()
        unknown = ~raw_labels.isin(LABEL_INDEX.keys()).to_numpy() & ~excluded
        if unknown.any():
            row = int(np.flatnonzero(unknown)[0]) + int(chunk.index[0]) + 2
            bad = raw_labels.iloc[int(np.flatnonzero(unknown)[0])]
            raise ValueError(f"{path}: row {row}: unknown label {bad!r}")
        mat = np.empty((len(chunk), N_FEATURES), dtype=np.float64)
        for j, pos in enumerate(positions):
            mat[:, j] = _parse_column(chunk[by_pos[pos]], j in IP_FEATURES)
        nonfinite = ~np.isfinite(mat).all(axis=1) & ~excluded
        # cells that did not parse at all are NaN too; separate them from inf/nan text
        unparseable = np.zeros(len(chunk), dtype=bool)
        for j, pos in enumerate(positions):
            col = chunk[by_pos[pos]].str.strip().str.lower()
            literal = col.isin({"nan", "inf", "-inf", "infinity", "-infinity", "+infinity"})
            unparseable |= np.isnan(mat[:, j]) & ~literal.to_numpy()
        unparseable &= ~excluded
        nonfinite &= ~unparseable
        drops["excluded_label"] += int(excluded.sum())
        drops["non_finite"] += int(nonfinite.sum())
        drops["unparseable"] += int(unparseable.sum())
        keep = ~(excluded | nonfinite | unparseable)
        feats.append(mat[keep])
        labels.append(raw_labels[keep].map(LABEL_INDEX).to_numpy(dtype=np.int64))
    if not feats:
        return np.empty((0, N_FEATURES)), np.empty(0, dtype=np.int64)
    return np.concatenate(feats), np.concatenate(labels)


def load_csv(paths, default_label=None, chunksize=200_000):
    """Read CICDDoS2019-style or canonical CSVs into one dataset.

    Timestamp and Flow ID columns are never read. Rows labelled WebDDoS, or
    with non-finite or unparseable feature cells, are dropped and counted in
    ``dataset.drops``. ``default_label`` labels files without a label column.
    """
    if isinstance(paths, (str, bytes)) or hasattr(paths, "__fspath__"):
        paths = [paths]
    paths = [str(p) for p in paths]
    drops = Counter(excluded_label=0, non_finite=0, unparseable=0)
    parts = [_load_one(p, default_label, drops, chunksize) for p in paths]
    features = np.concatenate([f for f, _ in parts]) if parts else np.empty((0, N_FEATURES))
    labels = np.concatenate([y for _, y in parts]) if parts else np.empty(0, dtype=np.int64)
    if len(labels) == 0:
        raise EmptyDatasetError(f"no usable rows after cleaning {paths} (drops: {dict(drops)})")
    for reason, n in drops.items():
        if n:
            logger.info("dropped %d rows: %s", n, reason)
    return LabeledDataset(features, labels, SCHEMA_VERSION, tuple(paths), drops)


def _rng(*key):
    return np.random.default_rng(np.random.SeedSequence([int(k) for k in key]))


def balance(ds, per_class, seed):
    """Sample up to ``per_class`` rows of every present class, without replacement."""
    if per_class < 1:
        raise ValueError("per_class must be at least 1")
    chosen = []
    for c in np.unique(ds.labels):
        rows = np.flatnonzero(ds.labels == c)
        if len(rows) < per_class:
            warnings.warn(
                f"class {LABELS[c]} has {len(rows)} rows, fewer than per_class={per_class}",
                stacklevel=2,
            )
            chosen.append(rows)
        else:
            chosen.append(np.sort(_rng(seed, c).choice(rows, size=per_class, replace=False)))
    idx = np.concatenate(chosen)
    idx = idx[_rng(seed).permutation(len(idx))]
    return ds.take(idx)


def split(ds, train_fraction=0.8, seed=0):
    """Stratified train/test partition; each class gives floor(n * fraction) rows to train."""
    if not 0 < train_fraction < 1:
        raise ValueError("train_fraction must lie strictly between 0 and 1")
    train_idx, test_idx = [], []
    for c in np.unique(ds.labels):
        rows = np.flatnonzero(ds.labels == c)
        rows = rows[_rng(seed, c, 1).permutation(len(rows))]
        if len(rows) == 1:
            warnings.warn(f"class {LABELS[c]} has a single row; assigning it to train", stacklevel=2)
            n_train = 1
        else:
            n_train = math.floor(len(rows) * train_fraction)
        train_idx.append(rows[:n_train])
        test_idx.append(rows[n_train:])
    train_idx = np.sort(np.concatenate(train_idx))
    test_idx = np.sort(np.concatenate(test_idx))
    return ds.take(train_idx), ds.take(test_idx)


def _fmt(value):
    return str(int(value)) if value.is_integer() else repr(float(value))


def write_csv(ds, path):
    """Canonical layout: the 18 feature columns then ``label``, lossless reals."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(",".join(FEATURE_NAMES + ("label",)) + "\n")
        for row, y in zip(ds.features.tolist(), ds.labels.tolist()):
            fh.write(",".join(_fmt(v) for v in row) + "," + LABELS[y] + "\n")


def write_manifest(path, items):
    """Flat ``key = value`` text, keys in insertion order."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for key, value in items.items():
            if isinstance(value, dict):
                for sub, v in value.items():
                    fh.write(f"{key}.{sub} = {v}\n")
            else:
                fh.write(f"{key} = {value}\n")
