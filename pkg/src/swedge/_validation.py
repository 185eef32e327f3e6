"""Input validation helpers shared by the estimators and the CLI."""
from __future__ import annotations

import numpy as np
import pandas as pd

from .datagen import CSV_COLUMNS, TrialDataset
from .design import StudyDesign
from .exceptions import DomainError


def _int_column(frame, name):
    col = pd.to_numeric(frame[name], errors="coerce")
    if col.isna().any():
        raise DomainError(f"column {name!r} has missing or non-numeric values")
    values = col.to_numpy(dtype=float)
    if not np.all(values == np.round(values)):
        raise DomainError(f"column {name!r} must hold integers")
    return values.astype(int)


def check_frame(frame: pd.DataFrame) -> TrialDataset:
    """Validate a long-format frame and infer its design.

    The design is inferred from the ``sequence`` and ``period`` columns and
    cross-checked against ``treated`` and ``exposure``: any departure from
    the staircase pattern, an unbalanced allocation or an incomplete
    cluster-period is rejected.
    """
    missing = [c for c in CSV_COLUMNS if c not in frame.columns]
    if missing:
        raise DomainError(f"missing columns: {', '.join(missing)}")
    if len(frame) == 0:
        raise DomainError("dataset is empty")
    cluster_raw = _int_column(frame, "cluster")
    sequence = _int_column(frame, "sequence")
    period = _int_column(frame, "period")
    treated = _int_column(frame, "treated")
    exposure = _int_column(frame, "exposure")
    outcome = pd.to_numeric(frame["outcome"], errors="coerce").to_numpy(dtype=float)
    if not np.all(np.isfinite(outcome)):
        raise DomainError("column 'outcome' has missing or non-numeric values")

    if sequence.min() < 1 or period.min() < 1:
        raise DomainError("sequence and period labels are 1-indexed")
    Q, J = int(sequence.max()), int(period.max())
    if Q < 2:
        raise DomainError("need at least two sequences")
    extra = J - Q - 1
    if extra < 0:
        raise DomainError(f"{J} periods cannot host {Q} sequences (need at least {Q + 1})")
    if not np.array_equal(exposure, np.maximum(0, period - sequence)):
        raise DomainError("exposure column does not match max(0, period - sequence)")
    if not np.array_equal(treated, (period > sequence).astype(int)):
        raise DomainError("treated column does not follow the stepped wedge staircase")

    ids, cluster = np.unique(cluster_raw, return_inverse=True)
    I = len(ids)
    seq_of = np.full(I, -1)
    seq_of[cluster] = sequence
    if np.any(seq_of[cluster] != sequence):
        raise DomainError("a cluster appears in more than one sequence")
    per_seq = np.bincount(seq_of, minlength=Q + 1)[1:]
    if np.any(per_seq == 0) or np.any(per_seq != per_seq[0]):
        raise DomainError(f"clusters per sequence must be equal and nonzero, got {per_seq.tolist()}")
    counts = np.bincount(cluster * J + period - 1, minlength=I * J)
    if np.any(counts == 0):
        raise DomainError("incomplete design: some cluster-periods have no observations")
    if np.any(counts != counts[0]):
        raise DomainError("unequal cluster-period sizes are not supported")

    # Renumber so clusters are contiguous and ordered by sequence.
    order = np.lexsort((np.arange(I), seq_of))
    relabel = np.empty(I, dtype=int)
    relabel[order] = np.arange(I)
    design = StudyDesign(Q, int(per_seq[0]), int(counts[0]), extra)
    return TrialDataset(relabel[cluster], sequence, period, treated, exposure, outcome, design)


def read_trial_csv(path_or_buf) -> TrialDataset:
    try:
        kw = {} if hasattr(path_or_buf, "read") else {"encoding": "utf-8"}
        frame = pd.read_csv(path_or_buf, float_precision="round_trip", **kw)
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as exc:
        raise DomainError(f"malformed CSV: {exc}") from exc
    if list(frame.columns) != list(CSV_COLUMNS):
        raise DomainError(
            f"expected header {','.join(CSV_COLUMNS)}, got {','.join(map(str, frame.columns))}"
        )
    return check_frame(frame)


def check_dataset(data) -> TrialDataset:
    """Coerce a TrialDataset or DataFrame into a validated TrialDataset."""
    if isinstance(data, TrialDataset):
        return data
    if isinstance(data, pd.DataFrame):
        return check_frame(data)
    raise TypeError(f"expected TrialDataset or DataFrame, got {type(data).__name__}")


def check_integer(value, name, low=None, high=None) -> int:
    if isinstance(value, (bool, np.bool_)) or int(value) != value:
        raise DomainError(f"{name} must be an integer, got {value!r}")
    value = int(value)
    if low is not None and value < low:
        raise DomainError(f"{name} must be >= {low}, got {value}")
    if high is not None and value > high:
        raise DomainError(f"{name} must be <= {high}, got {value}")
    return value
