"""CSV persistence for detected frames, zone labels and generic report tables."""

from dataclasses import dataclass
import csv

import numpy as np

from .classifier import QualityLabel
from .signal_chain import N_SAMPLES, OSP_INDEX, SlotKind

DATASET_COLUMNS = ("frame_index", "kind", "modulated_value",
                   *(f"s{i}" for i in range(N_SAMPLES)), "osp_value")
LABEL_COLUMNS = ("x", "y", "mahalanobis_d", "label")


class DatasetParseError(ValueError):
    """Malformed dataset file; ``line`` is the 1-based line number."""

    def __init__(self, path, line, message):
        super().__init__(f"{path}:{line}: {message}")
        self.line = line


def fmt(value):
    """Round-trip text for a float (17 significant digits)."""
    return format(float(value), ".17g")


@dataclass
class DatasetRow:
    frame_index: int
    kind: SlotKind
    modulated_value: float
    samples: np.ndarray
    osp_value: float

    def __eq__(self, other):
        return (self.frame_index == other.frame_index and self.kind == other.kind
                and self.modulated_value == other.modulated_value
                and np.array_equal(self.samples, other.samples) and self.osp_value == other.osp_value)


def link_rows(link):
    """Dataset rows of a simulated link, pilot then signal for every frame."""
    rows = []
    for i in range(len(link.x)):
        rows.append(DatasetRow(i, SlotKind.PILOT, float(link.pilot_x), link.pilots[i],
                               float(link.pilots[i, OSP_INDEX])))
        rows.append(DatasetRow(i, SlotKind.SIGNAL, float(link.x[i]), link.signals[i],
                               float(link.signals[i, OSP_INDEX])))
    return rows


def save_dataset(path, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(DATASET_COLUMNS)
        for r in rows:
            w.writerow([int(r.frame_index), SlotKind(r.kind).value, fmt(r.modulated_value),
                        *(fmt(s) for s in r.samples), fmt(r.osp_value)])


def _read(path, columns):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DatasetParseError(path, 1, "missing header") from None
        if tuple(header) != columns:
            raise DatasetParseError(path, 1, f"unexpected header {header}")
        for fields in reader:
            if len(fields) != len(columns):
                raise DatasetParseError(path, reader.line_num,
                                        f"expected {len(columns)} fields, got {len(fields)}")
            yield reader.line_num, fields


def load_dataset(path):
    """Inverse of :func:`save_dataset`.

    Raises
    ------
    DatasetParseError
        On a bad header, a short row or an unparsable field.
    """
    rows = []
    for line, f in _read(path, DATASET_COLUMNS):
        try:
            samples = np.array([float(v) for v in f[3:3 + N_SAMPLES]])
            rows.append(DatasetRow(int(f[0]), SlotKind(f[1]), float(f[2]), samples, float(f[-1])))
        except ValueError as exc:
            raise DatasetParseError(path, line, str(exc)) from None
    return rows


def save_labels(path, x, y, d, labels):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(LABEL_COLUMNS)
        for xi, yi, di, li in zip(x, y, d, labels):
            w.writerow([fmt(xi), fmt(yi), fmt(di), QualityLabel(int(li)).title])


def load_labels(path):
    """Returns ``(x, y, d, labels)`` arrays."""
    cols = ([], [], [], [])
    for line, f in _read(path, LABEL_COLUMNS):
        try:
            vals = (float(f[0]), float(f[1]), float(f[2]), int(QualityLabel.parse(f[3])))
        except (ValueError, KeyError) as exc:
            raise DatasetParseError(path, line, f"bad field: {exc}") from None
        for c, v in zip(cols, vals):
            c.append(v)
    return (np.array(cols[0]), np.array(cols[1]), np.array(cols[2]),
            np.array(cols[3], dtype=int))


def write_table(path, columns, rows):
    """Write dict rows as CSV; floats use round-trip formatting."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([fmt(v) if isinstance(v, float) else v for v in (r[c] for c in columns)])
