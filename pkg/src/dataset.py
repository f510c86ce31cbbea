"""
Dataset module for the REDDA toolkit.
Holds labeled observation matrices and reads them from delimited text files.
"""

import logging
import math
import os
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np
import pandas as pd

from src.errors import DataIOError, ValidationError

logger = logging.getLogger(__name__)

MISSING_TOKENS = {"", "NA", "N/A", "NaN", "nan", "NULL", "null", "None", "?"}


@dataclass
class LabeledDataset:
    """N x P observation matrix with per-row class labels.

    Labels are stored 0-based; ``class_names[g]`` is the level of class ``g``
    (reports print classes 1-based in first-appearance order).
    """

    X: np.ndarray
    labels: Optional[np.ndarray]
    feature_names: List[str] = field(default_factory=list)
    class_names: List[str] = field(default_factory=list)
    row_ids: List[str] = field(default_factory=list)

    def __post_init__(self) -> None:
        self.X = np.asarray(self.X, dtype=float)
        if self.X.ndim == 1:
            self.X = self.X.reshape(-1, 1)
        if self.X.ndim != 2:
            raise ValidationError(f"Observation matrix must be 2-dimensional, got shape {self.X.shape}")
        n, p = self.X.shape
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=int)
            if self.labels.shape != (n,):
                raise ValidationError(f"Expected {n} labels, got shape {self.labels.shape}")
            if n and self.labels.min() < 0:
                raise ValidationError("Labels must be non-negative class codes")
            if not self.class_names:
                n_classes = int(self.labels.max()) + 1 if n else 0
                self.class_names = [str(g + 1) for g in range(n_classes)]
        if not self.feature_names:
            self.feature_names = [f"X{j + 1}" for j in range(p)]
        if not self.row_ids:
            self.row_ids = [str(i + 1) for i in range(n)]
        if len(self.feature_names) != p:
            raise ValidationError(f"Expected {p} feature names, got {len(self.feature_names)}")
        if len(self.row_ids) != n:
            raise ValidationError(f"Expected {n} row identifiers, got {len(self.row_ids)}")

    @property
    def n_samples(self) -> int:
        return self.X.shape[0]

    @property
    def n_features(self) -> int:
        return self.X.shape[1]

    @property
    def n_classes(self) -> int:
        return len(self.class_names)

    def require_labels(self) -> np.ndarray:
        """Return the labels, failing for unlabeled (test) data."""
        if self.labels is None:
            raise ValidationError("This operation needs a labeled dataset")
        return self.labels

    def class_counts(self, keep: Optional[np.ndarray] = None) -> np.ndarray:
        labels = self.require_labels()
        if keep is not None:
            labels = labels[np.asarray(keep, dtype=bool)]
        return np.bincount(labels, minlength=self.n_classes)

    def subset_columns(self, columns: Sequence[int]) -> "LabeledDataset":
        """Restrict the dataset to the given 0-based columns, in the given order."""
        cols = [int(c) for c in columns]
        return LabeledDataset(
            X=self.X[:, cols],
            labels=self.labels,
            feature_names=[self.feature_names[c] for c in cols],
            class_names=list(self.class_names),
            row_ids=list(self.row_ids),
        )

    def resolve_columns(self, spec: Sequence[str]) -> List[int]:
        """Map column references (header names or 1-based indices) to 0-based indices."""
        resolved = []
        for ref in spec:
            ref = str(ref).strip()
            if ref in self.feature_names:
                resolved.append(self.feature_names.index(ref))
            elif ref.isdigit() and 1 <= int(ref) <= self.n_features:
                resolved.append(int(ref) - 1)
            else:
                raise ValidationError(f"Unknown feature column: {ref!r}")
        return resolved


def load_dataset(
    path: str,
    label_column: Optional[str] = "class",
    id_column: Optional[str] = None,
    require_labels: bool = True,
    label_levels: Optional[Sequence[str]] = None,
) -> LabeledDataset:
    """Load a delimited text table with one header row.

    Args:
        path: File to read; the delimiter is sniffed (comma, tab, semicolon)
        label_column: Header of the class label column
        id_column: Optional header of a row-identifier column
        require_labels: Training files must carry the label column with >= 2 levels
        label_levels: Known class levels (from training) that keep their codes

    Returns:
        LabeledDataset: Features in file column order, labels coded by first appearance

    Raises:
        DataIOError: If the file cannot be read
        ValidationError: For missing or non-numeric feature cells and bad labels
    """
    if not os.path.exists(path):
        raise DataIOError(f"Dataset file not found: {path}")
    try:
        frame = pd.read_csv(path, sep=None, engine="python", dtype=str, keep_default_na=False)
    except (OSError, UnicodeDecodeError) as e:
        raise DataIOError(f"Could not read dataset {path}: {e}")
    except pd.errors.ParserError as e:
        raise ValidationError(f"Malformed dataset {path}: {e}")

    frame.columns = [str(c).strip() for c in frame.columns]
    if len(set(frame.columns)) != len(frame.columns):
        raise ValidationError(f"Duplicate column names in header of {path}")

    labels = None
    class_names: List[str] = list(label_levels) if label_levels else []
    if label_column and label_column in frame.columns:
        raw_labels = [str(v).strip() for v in frame[label_column]]
        for row, value in enumerate(raw_labels):
            if value in MISSING_TOKENS:
                raise ValidationError(f"Missing label at row {row + 1}, column '{label_column}'")
        for value in raw_labels:
            if value not in class_names:
                class_names.append(value)
        labels = np.array([class_names.index(v) for v in raw_labels], dtype=int)
    elif require_labels:
        raise ValidationError(f"Label column '{label_column}' not found in {path}")

    row_ids = None
    if id_column:
        if id_column not in frame.columns:
            raise ValidationError(f"Row-identifier column '{id_column}' not found in {path}")
        row_ids = [str(v).strip() for v in frame[id_column]]

    feature_names = [c for c in frame.columns if c not in (label_column, id_column)]
    if not feature_names:
        raise ValidationError(f"No feature columns in {path}")

    X = np.empty((len(frame), len(feature_names)), dtype=float)
    for j, name in enumerate(feature_names):
        for i, cell in enumerate(frame[name]):
            text = str(cell).strip()
            if text in MISSING_TOKENS:
                raise ValidationError(f"Missing value at row {i + 1}, column '{name}'")
            try:
                value = float(text)
            except ValueError:
                raise ValidationError(f"Non-numeric value {text!r} at row {i + 1}, column '{name}'")
            if not math.isfinite(value):
                raise ValidationError(f"Non-finite value {text!r} at row {i + 1}, column '{name}'")
            X[i, j] = value

    if require_labels and len(class_names) < 2:
        raise ValidationError(f"Training data needs at least 2 distinct labels, found {len(class_names)}")

    dataset = LabeledDataset(
        X=X,
        labels=labels,
        feature_names=feature_names,
        class_names=class_names,
        row_ids=row_ids or [],
    )
    logger.info(f"Loaded {path}: N={dataset.n_samples}, P={dataset.n_features}, G={dataset.n_classes}")
    return dataset
