"""Parsing of CICIDS2017 "MachineLearningCVE" CSV files.

Non-finite cells ("NaN", "Infinity", ...) are kept as-is here; removing them
is the job of :func:`flowids.preprocess.clean`, which also counts them.
"""
from __future__ import annotations

import csv
import io
import math
import re
from dataclasses import dataclass
from pathlib import Path
from typing import BinaryIO, Iterable, Sequence

import numpy as np

from .errors import (ClassTooSmall, MissingLabelColumn, NoLabels, RaggedRow,
                     UnparsableCell)

LABEL_COLUMN = "Label"
BENIGN = "BENIGN"

# Raw header of the MachineLearningCVE files, label column excluded. The
# duplicated "Fwd Header Length" is genuine.
CICIDS2017_FEATURES = (
    "Destination Port",
    "Flow Duration",
    "Total Fwd Packets",
    "Total Backward Packets",
    "Total Length of Fwd Packets",
    "Total Length of Bwd Packets",
    "Fwd Packet Length Max",
    "Fwd Packet Length Min",
    "Fwd Packet Length Mean",
    "Fwd Packet Length Std",
    "Bwd Packet Length Max",
    "Bwd Packet Length Min",
    "Bwd Packet Length Mean",
    "Bwd Packet Length Std",
    "Flow Bytes/s",
    "Flow Packets/s",
    "Flow IAT Mean",
    "Flow IAT Std",
    "Flow IAT Max",
    "Flow IAT Min",
    "Fwd IAT Total",
    "Fwd IAT Mean",
    "Fwd IAT Std",
    "Fwd IAT Max",
    "Fwd IAT Min",
    "Bwd IAT Total",
    "Bwd IAT Mean",
    "Bwd IAT Std",
    "Bwd IAT Max",
    "Bwd IAT Min",
    "Fwd PSH Flags",
    "Bwd PSH Flags",
    "Fwd URG Flags",
    "Bwd URG Flags",
    "Fwd Header Length",
    "Bwd Header Length",
    "Fwd Packets/s",
    "Bwd Packets/s",
    "Min Packet Length",
    "Max Packet Length",
    "Packet Length Mean",
    "Packet Length Std",
    "Packet Length Variance",
    "FIN Flag Count",
    "SYN Flag Count",
    "RST Flag Count",
    "PSH Flag Count",
    "ACK Flag Count",
    "URG Flag Count",
    "CWE Flag Count",
    "ECE Flag Count",
    "Down/Up Ratio",
    "Average Packet Size",
    "Avg Fwd Segment Size",
    "Avg Bwd Segment Size",
    "Fwd Header Length",
    "Fwd Avg Bytes/Bulk",
    "Fwd Avg Packets/Bulk",
    "Fwd Avg Bulk Rate",
    "Bwd Avg Bytes/Bulk",
    "Bwd Avg Packets/Bulk",
    "Bwd Avg Bulk Rate",
    "Subflow Fwd Packets",
    "Subflow Fwd Bytes",
    "Subflow Bwd Packets",
    "Subflow Bwd Bytes",
    "Init_Win_bytes_forward",
    "Init_Win_bytes_backward",
    "act_data_pkt_fwd",
    "min_seg_size_forward",
    "Active Mean",
    "Active Std",
    "Active Max",
    "Active Min",
    "Idle Mean",
    "Idle Std",
    "Idle Max",
    "Idle Min",
)
DESTINATION_PORT = "Destination Port"

CICIDS2017_LABELS = (
    "BENIGN", "Bot", "DDoS", "DoS GoldenEye", "DoS Hulk", "DoS Slowhttptest",
    "DoS slowloris", "FTP-Patator", "Heartbleed", "Infiltration", "PortScan",
    "SSH-Patator", "Web Attack \u2013 Brute Force", "Web Attack \u2013 Sql Injection",
    "Web Attack \u2013 XSS",
)

_SENTINELS = {"nan": math.nan, "infinity": math.inf, "inf": math.inf}


@dataclass(frozen=True, eq=False)
class FlowTable:
    """Immutable feature matrix plus per-row label ids.

    ``labels[i]`` indexes into ``label_names``. Freshly parsed tables carry a
    file-local vocabulary (first-seen order); :func:`encode_labels` remaps a
    table onto a shared :class:`LabelSpace`.
    """

    feature_names: tuple[str, ...]
    features: np.ndarray
    labels: np.ndarray
    label_names: tuple[str, ...] = ()

    def __post_init__(self):
        features = np.asarray(self.features, dtype=np.float64)
        if features.ndim != 2:
            features = features.reshape(len(self.labels), len(self.feature_names))
        labels = np.asarray(self.labels, dtype=np.int64)
        if features.shape[1] != len(self.feature_names):
            raise ValueError("feature_names length does not match column count")
        if len(set(self.feature_names)) != len(self.feature_names):
            raise ValueError("feature names must be unique")
        if labels.shape != (features.shape[0],):
            raise ValueError("labels length does not match row count")
        features.setflags(write=False)
        labels.setflags(write=False)
        object.__setattr__(self, "features", features)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "feature_names", tuple(self.feature_names))
        object.__setattr__(self, "label_names", tuple(self.label_names))

    @property
    def n_rows(self) -> int:
        return self.features.shape[0]

    @property
    def n_cols(self) -> int:
        return self.features.shape[1]

    def take(self, rows) -> "FlowTable":
        rows = np.asarray(rows, dtype=np.int64)
        return FlowTable(self.feature_names, self.features[rows], self.labels[rows],
                         self.label_names)

    def with_features(self, features, feature_names=None) -> "FlowTable":
        names = self.feature_names if feature_names is None else feature_names
        return FlowTable(tuple(names), features, self.labels, self.label_names)

    def label_strings(self) -> list[str]:
        return [self.label_names[i] for i in self.labels]

    def equals(self, other: "FlowTable") -> bool:
        """Bitwise equality (NaN payloads included)."""
        return (self.feature_names == other.feature_names
                and self.label_names == other.label_names
                and self.features.shape == other.features.shape
                and self.features.tobytes() == other.features.tobytes()
                and np.array_equal(self.labels, other.labels))


@dataclass(frozen=True)
class LabelSpace:
    names: tuple[str, ...]
    benign_id: int | None = None

    def __post_init__(self):
        if len(set(self.names)) != len(self.names):
            raise ValueError("label names must be unique")
        if self.benign_id is not None and not 0 <= self.benign_id < len(self.names):
            raise ValueError("benign_id out of range")

    def __len__(self):
        return len(self.names)

    def index(self, name: str) -> int:
        return self.names.index(canonical_label(name))

    @property
    def attack_names(self) -> tuple[str, ...]:
        return tuple(n for i, n in enumerate(self.names) if i != self.benign_id)


@dataclass(frozen=True)
class SplitSpec:
    test_fraction: float = 0.2
    seed: int = 0
    stratified: bool = True

    def __post_init__(self):
        if not 0.0 < self.test_fraction < 1.0:
            raise ValueError("test_fraction must be strictly between 0 and 1")


_WS = re.compile(r"\s+")


def canonical_label(raw: str) -> str:
    """Trim and collapse whitespace; any casing of 'benign' becomes BENIGN."""
    name = _WS.sub(" ", raw.strip())
    return BENIGN if name.upper() == BENIGN else name


def _parse_cell(token: str) -> float:
    t = token.strip()
    if not t:
        return math.nan
    try:
        return float(t)
    except ValueError:
        pass
    sign = 1.0
    if t[0] in "+-":
        sign = -1.0 if t[0] == "-" else 1.0
        t = t[1:]
    value = _SENTINELS.get(t.lower())
    if value is None:
        raise ValueError(token)
    return sign * value


def _dedupe(names: Sequence[str]) -> tuple[str, ...]:
    # CICIDS2017 repeats "Fwd Header Length"; later copies get ".1", ".2", ...
    seen: dict[str, int] = {}
    out = []
    for name in names:
        if name in seen:
            seen[name] += 1
            candidate = f"{name}.{seen[name]}"
            while candidate in seen:
                seen[name] += 1
                candidate = f"{name}.{seen[name]}"
            seen[candidate] = 0
            out.append(candidate)
        else:
            seen[name] = 0
            out.append(name)
    return tuple(out)


def _decode(raw: bytes) -> str:
    try:
        return raw.decode("utf-8-sig")
    except UnicodeDecodeError:
        # some CICIDS2017 files carry cp1252 dashes in web-attack labels
        return raw.decode("cp1252", errors="replace")


def parse_csv(source: BinaryIO | bytes | str | Path,
              expected_label_column: str | None = LABEL_COLUMN) -> FlowTable:
    """Parse one header-bearing CSV into a :class:`FlowTable`.

    ``source`` may be a path, raw bytes, or a binary stream. Header names are
    whitespace-trimmed; column order and row order are preserved. Empty cells
    are read as NaN (null values). With ``expected_label_column=None`` every
    column is a feature and all rows get the placeholder label ``"?"``.
    """
    if isinstance(source, (str, Path)):
        raw = Path(source).read_bytes()
    elif isinstance(source, bytes):
        raw = source
    else:
        raw = source.read()
    reader = csv.reader(io.StringIO(_decode(raw), newline=""))
    try:
        header = [h.strip() for h in next(reader)]
    except StopIteration:
        raise MissingLabelColumn("empty input: no header row") from None
    if expected_label_column is None:
        label_col = len(header)  # past the end: no label cell
    else:
        target = expected_label_column.strip()
        matches = [i for i, h in enumerate(header) if h == target]
        if not matches:
            raise MissingLabelColumn(f"no column named {target!r}")
        label_col = matches[-1]
    feature_idx = [i for i in range(len(header)) if i != label_col]
    names = _dedupe([header[i] for i in feature_idx])
    width = len(header)

    rows: list[list[float]] = []
    label_ids: list[int] = []
    vocab: dict[str, int] = {}
    for r, record in enumerate(reader):
        if len(record) != width:
            if not record:
                raise RaggedRow(r, width, 0)
            raise RaggedRow(r, width, len(record))
        cells = record[:label_col] + record[label_col + 1:]
        try:
            values = list(map(float, cells))
        except ValueError:
            values = []
            for i, token in zip(feature_idx, cells):
                try:
                    values.append(_parse_cell(token))
                except ValueError:
                    raise UnparsableCell(r, header[i], token) from None
        label = canonical_label(record[label_col]) if label_col < width else "?"
        label_ids.append(vocab.setdefault(label, len(vocab)))
        rows.append(values)
    features = np.array(rows, dtype=np.float64).reshape(len(rows), len(names))
    return FlowTable(names, features, np.array(label_ids, dtype=np.int64), tuple(vocab))


def _format_cell(v: float) -> str:
    if math.isnan(v):
        return "NaN"
    if math.isinf(v):
        return "Infinity" if v > 0 else "-Infinity"
    return repr(float(v))


def to_csv(table: FlowTable, label_column: str = LABEL_COLUMN) -> bytes:
    """Serialize in the same layout :func:`parse_csv` reads (label last)."""
    buf = io.StringIO(newline="")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(list(table.feature_names) + [label_column])
    for row, label in zip(table.features, table.labels):
        w.writerow([_format_cell(v) for v in row] + [table.label_names[label]])
    return buf.getvalue().encode("utf-8")


def build_label_space(tables: Iterable[FlowTable]) -> LabelSpace:
    """Union of observed labels: BENIGN first, attacks in lexicographic order."""
    seen: set[str] = set()
    for t in tables:
        used = np.unique(t.labels)
        seen.update(canonical_label(t.label_names[i]) for i in used)
    if not seen:
        raise NoLabels("no labels observed")
    attacks = sorted(seen - {BENIGN})
    if BENIGN in seen:
        return LabelSpace((BENIGN, *attacks), 0)
    return LabelSpace(tuple(attacks), None)


def encode_labels(table: FlowTable, space: LabelSpace) -> FlowTable:
    """Remap a table's label ids onto ``space``; unused names need not be in it."""
    used = set(np.unique(table.labels).tolist())
    lookup = np.array([space.index(n) if i in used else -1 for i, n in enumerate(table.label_names)],
                      dtype=np.int64)
    labels = lookup[table.labels] if table.n_rows else table.labels
    return FlowTable(table.feature_names, table.features, labels, space.names)


def concat_tables(tables: Sequence[FlowTable]) -> FlowTable:
    """Stack tables that share columns and a label space."""
    if not tables:
        raise NoLabels("nothing to concatenate")
    first = tables[0]
    for t in tables[1:]:
        if t.feature_names != first.feature_names or t.label_names != first.label_names:
            raise ValueError("tables disagree on columns or label space")
    return FlowTable(first.feature_names,
                     np.concatenate([t.features for t in tables], axis=0),
                     np.concatenate([t.labels for t in tables]),
                     first.label_names)


def load_directory(directory: str | Path, pattern: str = "*.csv") -> tuple[FlowTable, LabelSpace]:
    """Parse every CSV in ``directory`` (filename order) into one encoded table."""
    paths = sorted(Path(directory).glob(pattern), key=lambda p: p.name)
    if not paths:
        raise FileNotFoundError(f"no files matching {pattern!r} in {directory}")
    tables = [parse_csv(p) for p in paths]
    space = build_label_space(tables)
    return concat_tables([encode_labels(t, space) for t in tables]), space


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def stratified_split(table: FlowTable, spec: SplitSpec) -> tuple[FlowTable, FlowTable]:
    """Seeded train/test partition; rows keep their original relative order.

    Stratified: each class contributes round(count * test_fraction) rows to
    the test side, at least one.
    """
    rng = np.random.default_rng(spec.seed)
    n = table.n_rows
    if spec.stratified:
        test_rows = []
        for cls in np.unique(table.labels):
            members = np.flatnonzero(table.labels == cls)
            if members.size < 2:
                raise ClassTooSmall(table.label_names[cls] if table.label_names else int(cls))
            n_test = max(1, _round_half_up(members.size * spec.test_fraction))
            test_rows.append(rng.permutation(members)[:n_test])
        test_idx = np.sort(np.concatenate(test_rows)) if test_rows else np.array([], np.int64)
    else:
        n_test = _round_half_up(n * spec.test_fraction)
        test_idx = np.sort(rng.permutation(n)[:n_test])
    mask = np.zeros(n, dtype=bool)
    mask[test_idx] = True
    return table.take(np.flatnonzero(~mask)), table.take(test_idx)


def stratified_subsample(table: FlowTable, total: int, seed: int,
                         min_class_rows: int = 0) -> FlowTable:
    """Draw about ``total`` rows keeping class proportions.

    Classes with fewer than ``min_class_rows`` rows are dropped first. Every
    surviving class keeps at least ``min_class_rows`` rows (or all of them).
    """
    rng = np.random.default_rng(seed)
    classes, counts = np.unique(table.labels, return_counts=True)
    keep = counts >= max(min_class_rows, 1)
    classes, counts = classes[keep], counts[keep]
    n_total = counts.sum()
    chosen = []
    for cls, count in zip(classes, counts):
        members = np.flatnonzero(table.labels == cls)
        want = _round_half_up(total * count / n_total) if total < n_total else count
        want = min(count, max(want, min_class_rows))
        chosen.append(rng.permutation(members)[:want])
    rows = np.sort(np.concatenate(chosen)) if chosen else np.array([], np.int64)
    return table.take(rows)


def restrict_labels(table: FlowTable) -> tuple[FlowTable, LabelSpace]:
    """Drop label names no row uses and re-encode."""
    space = build_label_space([table])
    return encode_labels(table, space), space
