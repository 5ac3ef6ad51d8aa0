"""
Interaction logs: loading delimited files, rating/user filtering,
binarization into CSR matrices and the stepwise time split.
"""
from __future__ import annotations

import csv
import json
import logging
import re
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np
import scipy.sparse as sp

from psirec.exceptions import DataError

log = logging.getLogger(__name__)

Column = Union[int, str]

_DELIMITER_NAMES = {"comma": ",", "tab": "\t", "semicolon": ";", "pipe": "|", "space": " "}


@dataclass(frozen=True)
class Schema:
    """Where to find the four fields in a delimited text file."""

    delimiter: str = ","
    header: bool = False
    user: Column = 0
    item: Column = 1
    rating: Column = 2
    timestamp: Column = 3


PRESETS = {
    "movielens": Schema(delimiter="::", header=False),
    "amazon": Schema(delimiter=",", header=False),
    "csv": Schema(delimiter=",", header=True, user="user_id", item="item_id", rating="rating", timestamp="timestamp"),
}


def parse_schema(text: str) -> Schema:
    """
    Parse a schema description.

    Either a preset name (``movielens``, ``amazon``, ``csv``) or comma-separated
    ``key=value`` pairs, e.g. ``delimiter=tab,header=1,user=uid,item=iid,rating=r,timestamp=ts``.
    Delimiters may be given literally (``::``) or by name (comma, tab, semicolon, pipe, space).
    Column values that are all digits are positions, anything else a header name.
    """
    text = text.strip()
    if text in PRESETS:
        return PRESETS[text]
    fields = {}
    for part in text.split(","):
        if not part.strip():
            continue
        if "=" not in part:
            raise ValueError(f"bad schema entry {part!r}; expected key=value")
        key, value = (s.strip() for s in part.split("=", 1))
        fields[key] = value
    unknown = set(fields) - {"delimiter", "header", "user", "item", "rating", "timestamp"}
    if unknown:
        raise ValueError(f"unknown schema keys: {sorted(unknown)}")
    kwargs = {}
    if "delimiter" in fields:
        kwargs["delimiter"] = _DELIMITER_NAMES.get(fields["delimiter"], fields["delimiter"])
    if "header" in fields:
        kwargs["header"] = fields["header"].lower() in ("1", "true", "yes", "y")
    for key in ("user", "item", "rating", "timestamp"):
        if key in fields:
            value = fields[key]
            kwargs[key] = int(value) if value.isdigit() else value
    return Schema(**kwargs)


_UNITS = {"s": 1, "min": 60, "h": 3600, "d": 86400, "w": 7 * 86400, "mo": 30 * 86400, "y": 365 * 86400}


def parse_duration(text: str) -> int:
    """``'240d'``, ``'8mo'``, ``'3600'`` -> seconds. A month is 30 days."""
    m = re.fullmatch(r"\s*(\d+)\s*([a-z]*)\s*", str(text).lower())
    if not m or m.group(2) not in ("", *_UNITS):
        raise ValueError(f"cannot parse duration {text!r}; use e.g. 3600, 90d, 8mo")
    return int(m.group(1)) * _UNITS.get(m.group(2), 1)


@dataclass(frozen=True, eq=False)
class InteractionLog:
    """Timestamped (user, item, rating) events in file order."""

    users: np.ndarray
    items: np.ndarray
    ratings: np.ndarray
    timestamps: np.ndarray
    n_skipped: int = 0

    def __post_init__(self):
        object.__setattr__(self, "users", np.asarray(self.users, dtype=object))
        object.__setattr__(self, "items", np.asarray(self.items, dtype=object))
        object.__setattr__(self, "ratings", np.asarray(self.ratings, dtype=np.float64))
        object.__setattr__(self, "timestamps", np.asarray(self.timestamps, dtype=np.int64))
        n = len(self.users)
        if not (len(self.items) == len(self.ratings) == len(self.timestamps) == n):
            raise ValueError("log columns have different lengths")
        if n and (self.timestamps.min() < 0 or not np.all(np.isfinite(self.ratings))):
            raise ValueError("timestamps must be non-negative and ratings finite")

    def __len__(self) -> int:
        return len(self.users)

    def take(self, idx) -> "InteractionLog":
        return InteractionLog(self.users[idx], self.items[idx], self.ratings[idx], self.timestamps[idx])

    @classmethod
    def from_records(cls, records) -> "InteractionLog":
        records = list(records)
        if not records:
            return cls([], [], [], [])
        users, items, ratings, ts = zip(*records)
        return cls([str(u) for u in users], [str(i) for i in items], ratings, ts)


def _resolve(col: Column, header: Optional[Sequence[str]]) -> int:
    if isinstance(col, int):
        return col
    if header is None:
        raise DataError(f"column {col!r} given by name but the schema has no header")
    try:
        return list(header).index(col)
    except ValueError:
        raise DataError(f"column {col!r} not found in header {list(header)}") from None


def load_csv(path, schema: Schema = Schema()) -> InteractionLog:
    """
    Read a delimited interaction file.

    Rows with missing fields, unparsable numbers, negative timestamps or
    non-finite ratings are skipped; the count is kept in ``n_skipped``.
    """
    path = Path(path)
    try:
        fh = open(path, newline="", encoding="utf-8", errors="replace")
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc

    with fh:
        if len(schema.delimiter) == 1:
            rows = csv.reader(fh, delimiter=schema.delimiter)
        else:
            rows = (line.rstrip("\r\n").split(schema.delimiter) for line in fh)
        header = None
        if schema.header:
            header = [h.strip() for h in next(rows, [])]
        cols = [_resolve(c, header) for c in (schema.user, schema.item, schema.rating, schema.timestamp)]
        need = max(cols) + 1
        cu, ci, cr, ct = cols

        users, items, ratings, stamps = [], [], [], []
        skipped = 0
        for row in rows:
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            try:
                if len(row) < need:
                    raise ValueError("short row")
                u, i = row[cu].strip(), row[ci].strip()
                r = float(row[cr])
                t = int(float(row[ct]))
                if not u or not i or t < 0 or not np.isfinite(r):
                    raise ValueError("bad value")
            except (ValueError, OverflowError):
                skipped += 1
                continue
            users.append(u)
            items.append(i)
            ratings.append(r)
            stamps.append(t)

    if skipped:
        log.warning("%s: skipped %d malformed rows", path, skipped)
    if not users:
        raise DataError(f"{path}: no valid rows")
    return InteractionLog(users, items, ratings, stamps, n_skipped=skipped)


def _codes(values: np.ndarray) -> np.ndarray:
    _, inverse = np.unique(values.astype(str), return_inverse=True)
    return inverse.astype(np.int64)


def preprocess(log_: InteractionLog, min_rating: float = 4.0, min_user_items: int = 1) -> InteractionLog:
    """
    Keep ratings >= ``min_rating``, collapse repeated (user, item) pairs to the
    earliest event, then drop users left with fewer than ``min_user_items``
    distinct items. Items are never filtered. File order is preserved.
    """
    if min_rating < 0 or min_user_items < 0:
        raise ValueError("thresholds must be non-negative")
    kept = log_.take(np.flatnonzero(log_.ratings >= min_rating))
    if len(kept):
        ucode, icode = _codes(kept.users), _codes(kept.items)
        key = ucode * (int(icode.max()) + 1) + icode
        rowpos = np.arange(len(kept))
        order = np.lexsort((rowpos, kept.timestamps, key))
        _, first = np.unique(key[order], return_index=True)
        kept = kept.take(np.sort(order[first]))
    if len(kept) and min_user_items > 1:
        ucode = _codes(kept.users)
        counts = np.bincount(ucode)
        kept = kept.take(np.flatnonzero(counts[ucode] >= min_user_items))
    if not len(kept):
        raise DataError("no interactions left after preprocessing")
    return kept


def dataset_stats(log_: InteractionLog) -> tuple[int, int, float]:
    """Distinct users, distinct items and density (records / (users * items))."""
    n_users = len(set(log_.users.tolist()))
    n_items = len(set(log_.items.tolist()))
    return n_users, n_items, len(log_) / (n_users * n_items)


class Index:
    """Bijection between raw string ids and contiguous positions."""

    def __init__(self, ids: Sequence[str]):
        self.ids = tuple(ids)
        self.pos = {raw: k for k, raw in enumerate(self.ids)}
        if len(self.pos) != len(self.ids):
            raise ValueError("index ids must be unique")

    @classmethod
    def from_values(cls, values) -> "Index":
        return cls(sorted(set(str(v) for v in values)))

    def __len__(self) -> int:
        return len(self.ids)

    def __eq__(self, other) -> bool:
        return isinstance(other, Index) and self.ids == other.ids

    def lookup(self, values) -> np.ndarray:
        """Positions of ``values``; -1 where a value is not indexed."""
        get = self.pos.get
        return np.fromiter((get(v, -1) for v in values), dtype=np.int64, count=len(values))


@dataclass(frozen=True, eq=False)
class InteractionMatrix:
    """Binary users x items CSR matrix with its row and column indexes."""

    matrix: sp.csr_matrix
    user_index: Index
    item_index: Index
    n_dropped: int = 0

    @property
    def shape(self) -> tuple[int, int]:
        return self.matrix.shape

    @property
    def nnz(self) -> int:
        return self.matrix.nnz


def binary_csr(rows, cols, shape) -> sp.csr_matrix:
    rows = np.asarray(rows, dtype=np.int64)
    cols = np.asarray(cols, dtype=np.int64)
    A = sp.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=shape)
    A.sum_duplicates()
    A.data[:] = 1.0
    A.sort_indices()
    return A


def to_matrix(log_: InteractionLog, user_index: Index, item_index: Index) -> InteractionMatrix:
    """Binarize ``log_`` against fixed indexes; records outside them are dropped and counted."""
    rows = user_index.lookup(log_.users)
    cols = item_index.lookup(log_.items)
    ok = (rows >= 0) & (cols >= 0)
    dropped = int(len(ok) - ok.sum())
    if dropped:
        log.info("to_matrix: dropped %d records outside the index", dropped)
    A = binary_csr(rows[ok], cols[ok], (len(user_index), len(item_index)))
    return InteractionMatrix(A, user_index, item_index, n_dropped=dropped)


@dataclass(frozen=True, eq=False)
class Step:
    delta: InteractionMatrix
    holdout: dict  # user row -> item column
    window: tuple[int, int]
    holdout_timestamps: dict = field(default_factory=dict)
    drops: dict = field(default_factory=dict)


@dataclass(frozen=True, eq=False)
class StepSplit:
    initial_training: InteractionMatrix
    steps: list
    manifest: dict = field(default_factory=dict)

    @property
    def shape(self) -> tuple[int, int]:
        return self.initial_training.shape

    @property
    def user_index(self) -> Index:
        return self.initial_training.user_index

    @property
    def item_index(self) -> Index:
        return self.initial_training.item_index

    def history(self, k: int) -> sp.csr_matrix:
        """Training data known after step ``k``: initial matrix plus deltas 1..k."""
        A = self.initial_training.matrix
        for step in self.steps[:k]:
            A = A + step.delta.matrix
        return sp.csr_matrix(A)


def stepwise_split(log_: InteractionLog, holdback: int, n_steps: int) -> StepSplit:
    """
    Split a log in time: everything older than ``holdback`` seconds before the
    last event is initial training; the rest is cut into ``n_steps``
    equal-length windows ``[start, end)`` (the last one also holds the final
    event).

    In each window, every user with at least two usable interactions has the
    latest one (later file row on a timestamp tie) held out; the remaining
    interactions form that step's delta. Users and items unseen in the initial
    training data, and pairs already known, are dropped and counted.
    """
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    if holdback <= 0:
        raise ValueError("holdback must be positive")
    if not len(log_):
        raise DataError("empty interaction log")
    ts = log_.timestamps
    t_max, t_min = int(ts.max()), int(ts.min())
    if t_max - t_min <= holdback:
        raise DataError(f"log spans {t_max - t_min}s, not more than the holdback of {holdback}s")
    cutoff = t_max - holdback

    initial_log = log_.take(np.flatnonzero(ts < cutoff))
    user_index = Index.from_values(initial_log.users)
    item_index = Index.from_values(initial_log.items)
    initial = to_matrix(initial_log, user_index, item_index)
    shape = initial.shape

    rows_all = user_index.lookup(log_.users)
    cols_all = item_index.lookup(log_.items)
    known = set(zip(*initial.matrix.nonzero()))

    bounds = [cutoff + (k * holdback) // n_steps for k in range(n_steps + 1)]
    steps = []
    for k in range(n_steps):
        start, end = bounds[k], bounds[k + 1]
        last = k == n_steps - 1
        in_window = (ts >= start) & ((ts <= end) if last else (ts < end))
        idx = np.flatnonzero(in_window)
        drops = {"unknown_user": 0, "unknown_item": 0, "repeat": 0}
        per_user: dict[int, list[tuple[int, int, int]]] = {}
        for pos in idx:
            u, i = int(rows_all[pos]), int(cols_all[pos])
            if u < 0:
                drops["unknown_user"] += 1
                continue
            if i < 0:
                drops["unknown_item"] += 1
                continue
            if (u, i) in known:
                drops["repeat"] += 1
                continue
            known.add((u, i))
            per_user.setdefault(u, []).append((int(ts[pos]), int(pos), i))

        holdout, holdout_ts, d_rows, d_cols = {}, {}, [], []
        for u in sorted(per_user):
            events = per_user[u]
            if len(events) >= 2:
                latest = max(events)  # by timestamp, then file position
                holdout[u] = latest[2]
                holdout_ts[u] = latest[0]
                events = [e for e in events if e is not latest]
            for _, _, i in events:
                d_rows.append(u)
                d_cols.append(i)
        if not idx.size:
            log.warning("window %d [%d, %d) has no interactions", k + 1, start, end)
        if any(drops.values()):
            log.info("window %d: dropped %s", k + 1, drops)
        delta = InteractionMatrix(binary_csr(d_rows, d_cols, shape), user_index, item_index,
                                  n_dropped=sum(drops.values()))
        steps.append(Step(delta, holdout, (start, end), holdout_ts, drops))

    manifest = {
        "shape": list(shape),
        "cutoff": cutoff,
        "holdback": holdback,
        "n_steps": n_steps,
        "windows": [list(s.window) for s in steps],
        "drops": [s.drops for s in steps],
        "initial_dropped": initial.n_dropped,
    }
    return StepSplit(initial, steps, manifest)


# CSR file: 16-byte header (magic, version, n_rows, n_cols as <u4), then
# row offsets (<i8, n_rows+1), column indices (<i4, nnz), values (<f8, nnz)
_CSR_MAGIC = b"CSR\x00"
_CSR_VERSION = 1
_CSR_HEADER = struct.Struct("<4sIII")


def write_csr(A: sp.csr_matrix, path) -> None:
    A = sp.csr_matrix(A)
    A.sort_indices()
    n_rows, n_cols = A.shape
    with open(path, "wb") as fh:
        fh.write(_CSR_HEADER.pack(_CSR_MAGIC, _CSR_VERSION, n_rows, n_cols))
        fh.write(A.indptr.astype("<i8").tobytes())
        fh.write(A.indices.astype("<i4").tobytes())
        fh.write(A.data.astype("<f8").tobytes())


def read_csr(path) -> sp.csr_matrix:
    raw = Path(path).read_bytes()
    if len(raw) < _CSR_HEADER.size:
        raise DataError(f"{path}: truncated CSR file")
    magic, version, n_rows, n_cols = _CSR_HEADER.unpack_from(raw)
    if magic != _CSR_MAGIC or version != _CSR_VERSION:
        raise DataError(f"{path}: not a CSR file (magic={magic!r}, version={version})")
    off = _CSR_HEADER.size
    indptr = np.frombuffer(raw, "<i8", n_rows + 1, off)
    nnz = int(indptr[-1])
    off += 8 * (n_rows + 1)
    indices = np.frombuffer(raw, "<i4", nnz, off)
    off += 4 * nnz
    data = np.frombuffer(raw, "<f8", nnz, off)
    if off + 8 * nnz != len(raw):
        raise DataError(f"{path}: size does not match header")
    return sp.csr_matrix((data.astype(np.float64), indices.astype(np.int32), indptr.astype(np.int64)),
                         shape=(n_rows, n_cols))


def save_split(split: StepSplit, out_dir, config: Optional[dict] = None) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_csr(split.initial_training.matrix, out / "initial.csr")
    for k, step in enumerate(split.steps, start=1):
        write_csr(step.delta.matrix, out / f"step_{k}_delta.csr")
        with open(out / f"step_{k}_holdout.tsv", "w", newline="\n") as fh:
            for u in sorted(step.holdout):
                fh.write(f"{u}\t{step.holdout[u]}\t{step.holdout_timestamps.get(u, '')}\n")
    with open(out / "indexes.tsv", "w", newline="\n") as fh:
        for kind, index in (("user", split.user_index), ("item", split.item_index)):
            for pos, raw in enumerate(index.ids):
                fh.write(f"{kind}\t{pos}\t{raw}\n")
    manifest = dict(split.manifest)
    manifest["format_version"] = 1
    manifest["config"] = config or {}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return out


def load_split(split_dir) -> StepSplit:
    d = Path(split_dir)
    try:
        manifest = json.loads((d / "manifest.json").read_text())
    except (OSError, ValueError) as exc:
        raise DataError(f"{d}: cannot read manifest.json ({exc})") from exc
    users, items = [], []
    with open(d / "indexes.tsv") as fh:
        for line in fh:
            kind, _, raw = line.rstrip("\n").split("\t", 2)
            (users if kind == "user" else items).append(raw)
    user_index, item_index = Index(users), Index(items)
    initial = InteractionMatrix(read_csr(d / "initial.csr"), user_index, item_index)
    steps = []
    for k in range(1, manifest["n_steps"] + 1):
        delta = InteractionMatrix(read_csr(d / f"step_{k}_delta.csr"), user_index, item_index)
        holdout, holdout_ts = {}, {}
        with open(d / f"step_{k}_holdout.tsv") as fh:
            for line in fh:
                u, i, t = line.rstrip("\n").split("\t")
                holdout[int(u)] = int(i)
                if t:
                    holdout_ts[int(u)] = int(t)
        window = tuple(manifest["windows"][k - 1])
        steps.append(Step(delta, holdout, window, holdout_ts, manifest["drops"][k - 1]))
    if initial.shape != tuple(manifest["shape"]):
        raise DataError(f"{d}: initial.csr shape {initial.shape} disagrees with manifest")
    return StepSplit(initial, steps, manifest)
