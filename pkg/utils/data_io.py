"""
Dataset I/O
Loading, saving, standardizing and splitting classification datasets, plus the
synthetic one-dimensional Bernoulli generator
"""

import logging
import math
import os
import re
import tempfile
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from gp_models.errors import DataFormatError, InputError

logger = logging.getLogger(__name__)

SYNTH_INTERVAL = (-3.0, 3.0)


@dataclass
class Dataset:
    """Feature matrix, integer labels in 0..C-1 and the class count"""

    X: np.ndarray
    y: np.ndarray
    num_classes: int
    name: str = "dataset"
    class_labels: List[str] = field(default_factory=list)
    f_true: Optional[np.ndarray] = None

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=float)
        if self.X.ndim == 1:
            self.X = self.X[:, None]
        self.y = np.asarray(self.y).astype(int).ravel()
        if self.X.shape[0] != self.y.shape[0]:
            raise InputError(f"{self.X.shape[0]} feature rows but {self.y.shape[0]} labels")
        if self.y.size and (self.y.min() < 0 or self.y.max() >= self.num_classes):
            raise InputError(f"Labels must lie in 0..{self.num_classes - 1}")
        if np.any(np.isnan(self.X)):
            raise InputError("Features contain NaN")
        if not self.class_labels:
            self.class_labels = [str(c) for c in range(self.num_classes)]

    @property
    def num_points(self) -> int:
        return self.X.shape[0]

    @property
    def num_features(self) -> int:
        return self.X.shape[1]

    def subset(self, indices, name: Optional[str] = None) -> "Dataset":
        indices = np.asarray(indices, dtype=int)
        return replace(self, X=self.X[indices], y=self.y[indices], name=name or self.name,
                       f_true=None if self.f_true is None else self.f_true[indices])


@dataclass(frozen=True)
class SplitSpec:
    """Held-out fractions and the seed stream of one replicate"""

    test_fraction: float
    calibration_fraction: float = 0.0
    seed: int = 0
    replicate_index: int = 0

    def __post_init__(self):
        if not 0.0 < self.test_fraction < 1.0:
            raise InputError("test_fraction must lie in (0, 1)")
        if not 0.0 <= self.calibration_fraction < 1.0:
            raise InputError("calibration_fraction must lie in [0, 1)")
        # calibration is taken from the training remainder
        if self.test_fraction + self.calibration_fraction * (1.0 - self.test_fraction) >= 1.0:
            raise InputError("Held-out fractions leave no training data")


def _is_number(text: str) -> bool:
    try:
        float(text)
    except ValueError:
        return False
    return True


def load_csv(path: Union[str, Path], label_column: str = "last") -> Dataset:
    """
    Read a comma-delimited dataset

    A header is detected when the first row has a non-numeric feature field.
    Labels are integers (mapped in sorted order) or strings (mapped in order
    of first appearance); the mapping is kept in class_labels.

    Args:
        path: UTF-8 CSV file
        label_column: "last", or a header name

    Raises:
        DataFormatError: malformed row, missing or non-numeric value
    """
    path = Path(path)
    if not path.exists():
        raise InputError(f"Dataset file does not exist: {path}")
    try:
        frame = pd.read_csv(path, header=None, dtype=str, keep_default_na=False,
                            skipinitialspace=True, encoding="utf-8", comment="#")
    except pd.errors.EmptyDataError:
        raise DataFormatError(f"{path} is empty")
    except pd.errors.ParserError as e:
        match = re.search(r"line (\d+)", str(e))
        raise DataFormatError(f"malformed row in {path}: {e}", row=int(match.group(1)) if match else None)

    if frame.shape[1] < 2:
        raise DataFormatError(f"{path} needs at least one feature column and a label column")

    first = [str(v).strip() for v in frame.iloc[0].tolist()]
    if label_column == "last":
        label_index = frame.shape[1] - 1
        has_header = any(not _is_number(v) for v in first[:label_index])
    else:
        if label_column not in first:
            raise DataFormatError(f"Label column '{label_column}' not found in header", row=1)
        label_index = first.index(label_column)
        has_header = True

    body = frame.iloc[1:] if has_header else frame
    offset = 2 if has_header else 1

    values = body.to_numpy(dtype=object)
    feature_columns = [j for j in range(values.shape[1]) if j != label_index]
    X = np.empty((values.shape[0], len(feature_columns)))
    raw_labels = []
    for i, row in enumerate(values):
        cells = ["" if (isinstance(v, float) and math.isnan(v)) else str(v).strip() for v in row]
        if any(cell == "" for cell in cells):
            raise DataFormatError("missing value (expected {} fields)".format(len(cells)), row=i + offset)
        try:
            X[i] = [float(cells[j]) for j in feature_columns]
        except ValueError:
            raise DataFormatError("non-numeric feature value", row=i + offset)
        raw_labels.append(cells[label_index])

    try:
        as_int = [int(v) for v in raw_labels]
        classes = [str(v) for v in sorted(set(as_int))]
        mapping = {c: k for k, c in enumerate(classes)}
        y = np.array([mapping[str(v)] for v in as_int], dtype=int)
    except ValueError:
        classes = list(dict.fromkeys(raw_labels))
        mapping = {c: k for k, c in enumerate(classes)}
        y = np.array([mapping[v] for v in raw_labels], dtype=int)

    logger.info(f"Loaded {path.name}: {X.shape[0]} rows, {X.shape[1]} features, {len(classes)} classes")
    return Dataset(X=X, y=y, num_classes=max(len(classes), 1), name=path.stem, class_labels=classes)


def atomic_write_text(path: Union[str, Path], text: str):
    """Write to a temporary file in the target directory, then rename over the target"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as f:
            f.write(text)
        os.replace(tmp, path)
    except Exception:
        if os.path.exists(tmp):
            os.remove(tmp)
        raise


def frame_to_csv_text(frame: pd.DataFrame, comment: Optional[str] = None) -> str:
    """CSV text with 17 significant digits and an optional leading '# ' comment line"""
    text = frame.to_csv(index=False, float_format="%.17g", lineterminator="\n")
    return f"# {comment}\n{text}" if comment else text


def save_csv(dataset: Dataset, path: Union[str, Path]):
    """Write x0..x{d-1},label with 17 significant digits (readable by load_csv)"""
    frame = pd.DataFrame(dataset.X, columns=[f"x{j}" for j in range(dataset.num_features)])
    frame["label"] = [dataset.class_labels[c] for c in dataset.y]
    atomic_write_text(path, frame_to_csv_text(frame))


def standardize(train: Dataset, others: Sequence[Dataset] = ()) -> Tuple[Dataset, List[Dataset], np.ndarray, np.ndarray]:
    """
    Center and scale features by training statistics (population sd)

    Constant features are centered and scaled by 1.

    Returns:
        (standardized train, standardized others, mean, sd)
    """
    if train.num_points == 0:
        raise InputError("Cannot standardize an empty training set")
    mean = train.X.mean(axis=0)
    sd = train.X.std(axis=0)
    sd = np.where(sd > 0, sd, 1.0)

    def scaled(d: Dataset) -> Dataset:
        return replace(d, X=(d.X - mean) / sd)

    return scaled(train), [scaled(d) for d in others], mean, sd


def _allocate(counts: np.ndarray, fraction: float) -> np.ndarray:
    """Largest-remainder split of per-class counts (ties to the lower class index)"""
    raw = counts * fraction
    base = np.floor(raw).astype(int)
    total = int(math.floor(counts.sum() * fraction + 0.5))
    extra = min(max(total - int(base.sum()), 0), counts.size)
    order = np.argsort(-(raw - base), kind="stable")
    base[order[:extra]] += 1
    return np.minimum(base, counts)


def split(data: Dataset, spec: SplitSpec) -> Tuple[Dataset, Dataset, Dataset]:
    """
    Stratified (train, calibration, test) partition

    Deterministic in (seed, replicate_index). The calibration set is carved
    out of the training remainder.

    Raises:
        InputError: some class present in the data has no training point
    """
    rng = np.random.default_rng([spec.seed, spec.replicate_index])
    per_class = [rng.permutation(np.flatnonzero(data.y == c)) for c in range(data.num_classes)]
    counts = np.array([idx.size for idx in per_class])

    n_test = _allocate(counts, spec.test_fraction)
    n_calib = _allocate(counts - n_test, spec.calibration_fraction)

    train_idx, calib_idx, test_idx = [], [], []
    for c, idx in enumerate(per_class):
        test_idx.extend(idx[:n_test[c]])
        calib_idx.extend(idx[n_test[c]:n_test[c] + n_calib[c]])
        train_part = idx[n_test[c] + n_calib[c]:]
        if idx.size and train_part.size == 0:
            raise InputError(f"Class {data.class_labels[c]} has no training points after splitting")
        train_idx.extend(train_part)

    return (data.subset(np.sort(train_idx), f"{data.name}-train"),
            data.subset(np.sort(np.array(calib_idx, dtype=int)), f"{data.name}-calibration"),
            data.subset(np.sort(test_idx), f"{data.name}-test"))


# Built-in class-1 probability functions on the synthetic interval
F_P: Dict[str, Callable[[np.ndarray], np.ndarray]] = {
    # smooth, one and a half periods over [-3, 3], range [0.1, 0.9]
    "sinusoid": lambda x: 0.5 + 0.4 * np.sin(1.5 * x),
    # sharp boundary at 0
    "step": lambda x: np.where(x > 0.0, 0.85, 0.15),
    "constant": lambda x: np.full_like(x, 0.5, dtype=float),
    "ones": lambda x: np.ones_like(x, dtype=float),
    "zeros": lambda x: np.zeros_like(x, dtype=float),
}


def resolve_f_p(f_p: Union[str, Callable]) -> Callable[[np.ndarray], np.ndarray]:
    if callable(f_p):
        return f_p
    if f_p not in F_P:
        raise InputError(f"Unknown probability function '{f_p}' (choose from {sorted(F_P)})")
    return F_P[f_p]


def synth_bernoulli_1d(n: int, f_p: Union[str, Callable] = "sinusoid", seed: int = 0,
                       interval: Tuple[float, float] = SYNTH_INTERVAL) -> Dataset:
    """
    Inputs uniform on the interval, labels ~ Bernoulli(f_p(x))

    The true f_p values are kept in f_true for MSE-to-truth evaluation.
    """
    func = resolve_f_p(f_p)
    rng = np.random.default_rng(seed)
    x = rng.uniform(interval[0], interval[1], size=n)
    p = np.clip(func(x), 0.0, 1.0)
    y = (rng.uniform(size=n) < p).astype(int)
    name = f_p if isinstance(f_p, str) else getattr(f_p, "__name__", "custom")
    return Dataset(X=x[:, None], y=y, num_classes=2, name=f"synth-{name}-{n}", f_true=p)


def truth_grid(f_p: Union[str, Callable], num: int = 200,
               interval: Tuple[float, float] = SYNTH_INTERVAL) -> Tuple[np.ndarray, np.ndarray]:
    """Evaluation grid and f_p on it"""
    x = np.linspace(interval[0], interval[1], num)
    return x[:, None], np.clip(resolve_f_p(f_p)(x), 0.0, 1.0)


def load_dataset(source: str, label_column: str = "last", seed: int = 0) -> Dataset:
    """
    Resolve a dataset argument

    Either a CSV path or "synth:<f_p>:<n>" for the Bernoulli generator.
    """
    if source.startswith("synth:"):
        parts = source.split(":")
        if len(parts) != 3:
            raise InputError(f"Synthetic dataset spec must be synth:<f_p>:<n>, got '{source}'")
        try:
            n = int(parts[2])
        except ValueError:
            raise InputError(f"Invalid synthetic dataset size in '{source}'")
        return synth_bernoulli_1d(n, parts[1], seed)
    return load_csv(source, label_column)
