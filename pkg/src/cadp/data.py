"""Dataset container, file formats, preprocessing and synthetic sources.

The on-disk formats are deliberately boring: IDX pairs exactly as MNIST
ships them (big-endian headers, unsigned-byte payload) and RFC-4180-ish
CSV with a mandatory header row. Loaders reject malformed input with the
offending byte offset or row/column named; nothing is silently
truncated or coerced.
"""

import csv
import struct
from dataclasses import dataclass, field, replace

import numpy as np
from numpy.random import SeedSequence, default_rng

from .exceptions import DataError
from .validation import check_array

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801

CONTINUOUS = "continuous"
BINARY = "binary"


@dataclass
class LabeledDataset:
    """Feature matrix, integer labels, and enough schema to undo it all.

    normalization records the preprocessing applied to `features`, in
    application order; invert_normalization plays it backwards to
    recover raw values exactly.
    """

    features: np.ndarray
    labels: np.ndarray
    feature_names: list
    feature_kinds: list
    normalization: list = field(default_factory=list)

    def __post_init__(self):
        self.features = np.ascontiguousarray(self.features, dtype=np.float64)
        self.labels = np.ascontiguousarray(self.labels, dtype=np.int64)
        if self.features.ndim != 2:
            raise ValueError(f"features must be 2-d, got shape {self.features.shape}")
        if self.labels.ndim != 1 or len(self.labels) != len(self.features):
            raise ValueError(
                f"labels shape {self.labels.shape} does not match "
                f"{len(self.features)} feature rows"
            )
        if len(self.feature_names) != self.features.shape[1]:
            raise ValueError("feature_names length does not match feature count")
        if len(self.feature_kinds) != self.features.shape[1]:
            raise ValueError("feature_kinds length does not match feature count")
        for kind in self.feature_kinds:
            if kind not in (CONTINUOUS, BINARY):
                raise ValueError(f"unknown feature kind {kind!r}")

    @property
    def n_samples(self):
        return len(self.features)

    @property
    def dim(self):
        return self.features.shape[1]

    def feature_index(self, name):
        try:
            return self.feature_names.index(name)
        except ValueError:
            raise ValueError(f"feature {name!r} not in schema {self.feature_names}") from None

    def column(self, name):
        return self.features[:, self.feature_index(name)]

    def with_features(self, features):
        """Same schema and labels, new feature values."""
        features = np.asarray(features, dtype=np.float64)
        if features.shape != self.features.shape:
            raise ValueError(
                f"replacement features have shape {features.shape}, "
                f"expected {self.features.shape}"
            )
        return replace(self, features=features.copy(),
                       labels=self.labels.copy(),
                       feature_names=list(self.feature_names),
                       feature_kinds=list(self.feature_kinds),
                       normalization=[dict(s) for s in self.normalization])

    def subset(self, idx):
        return replace(self, features=self.features[idx].copy(),
                       labels=self.labels[idx].copy(),
                       feature_names=list(self.feature_names),
                       feature_kinds=list(self.feature_kinds),
                       normalization=[dict(s) for s in self.normalization])

    def invert_normalization(self, features=None):
        """Undo every recorded preprocessing step (last first)."""
        out = np.array(self.features if features is None else features,
                       dtype=np.float64)
        for step in reversed(self.normalization):
            if step["kind"] == "scale":
                out = out * step["factor"]
            elif step["kind"] == "standard":
                out = out * np.asarray(step["scale"]) + np.asarray(step["mean"])
            else:
                raise ValueError(f"unknown normalization step {step['kind']!r}")
        return out


def datasets_equal(a, b):
    """Bitwise equality of features, labels and schema."""
    return (
        a.feature_names == b.feature_names
        and a.feature_kinds == b.feature_kinds
        and a.features.shape == b.features.shape
        and np.array_equal(a.features, b.features)
        and np.array_equal(a.labels, b.labels)
    )


# ---------------------------------------------------------------------------
# conditions

@dataclass(frozen=True)
class ConditionSpec:
    """Where the flow's condition vector comes from.

    Either the label (one-hot encoded by the flow) or a named binary
    feature. In the feature case the column is removed from the flow's
    input and re-attached untouched after privatization.
    """

    source: str            # "label-one-hot" or "named-binary-feature"
    feature: str = None

    @staticmethod
    def labels():
        return ConditionSpec("label-one-hot")

    @staticmethod
    def binary_feature(name):
        return ConditionSpec("named-binary-feature", name)

    @staticmethod
    def parse(text):
        text = str(text).strip()
        if text in ("label", "labels", "label-one-hot"):
            return ConditionSpec.labels()
        if text.startswith("feature:"):
            return ConditionSpec.binary_feature(text.split(":", 1)[1])
        raise ValueError(f"cannot parse condition spec {text!r}")

    def split(self, dataset):
        """Returns (flow features, condition argument, reattach function)."""
        if self.source == "label-one-hot":
            return dataset.features, dataset.labels, lambda x: np.asarray(x)
        if self.source != "named-binary-feature":
            raise ValueError(f"unknown condition source {self.source!r}")
        j = dataset.feature_index(self.feature)
        if dataset.feature_kinds[j] != BINARY:
            raise ValueError(
                f"condition feature {self.feature!r} is "
                f"{dataset.feature_kinds[j]}, must be binary"
            )
        col = dataset.features[:, j].copy()
        keep = [k for k in range(dataset.dim) if k != j]
        X = dataset.features[:, keep]
        cond = col.reshape(-1, 1)

        def reattach(x_new):
            out = np.empty_like(dataset.features)
            out[:, keep] = x_new
            out[:, j] = col
            return out

        return X, cond, reattach


# ---------------------------------------------------------------------------
# IDX format

def _read_exact(fh, count, path, what, offset):
    data = fh.read(count)
    if len(data) != count:
        raise DataError(
            f"{path}: truncated {what}: expected {count} bytes at offset "
            f"{offset}, found {len(data)}"
        )
    return data


def load_idx(images_path, labels_path):
    """Load an MNIST-style IDX image/label pair.

    Pixels come back flattened row-major and scaled to [0, 1]; the
    scale step is recorded so export can re-quantize.
    """
    with open(images_path, "rb") as fh:
        header = _read_exact(fh, 16, images_path, "image header", 0)
        magic, count, rows, cols = struct.unpack(">iiii", header)
        if magic != IDX_IMAGES_MAGIC:
            raise DataError(
                f"{images_path}: bad image magic 0x{magic:08x} at offset 0, "
                f"expected 0x{IDX_IMAGES_MAGIC:08x}"
            )
        payload = _read_exact(fh, count * rows * cols, images_path,
                              "pixel data", 16)
        extra = fh.read(1)
        if extra:
            raise DataError(
                f"{images_path}: {len(extra)}+ unexpected trailing bytes "
                f"at offset {16 + count * rows * cols}"
            )
    images = np.frombuffer(payload, dtype=np.uint8).reshape(count, rows * cols)

    with open(labels_path, "rb") as fh:
        header = _read_exact(fh, 8, labels_path, "label header", 0)
        magic, label_count = struct.unpack(">ii", header)
        if magic != IDX_LABELS_MAGIC:
            raise DataError(
                f"{labels_path}: bad label magic 0x{magic:08x} at offset 0, "
                f"expected 0x{IDX_LABELS_MAGIC:08x}"
            )
        label_payload = _read_exact(fh, label_count, labels_path,
                                    "label data", 8)
        extra = fh.read(1)
        if extra:
            raise DataError(
                f"{labels_path}: {len(extra)}+ unexpected trailing bytes "
                f"at offset {8 + label_count}"
            )
    labels = np.frombuffer(label_payload, dtype=np.uint8)

    if count != label_count:
        raise DataError(
            f"{images_path} holds {count} images but {labels_path} holds "
            f"{label_count} labels"
        )
    dim = rows * cols
    return LabeledDataset(
        features=images.astype(np.float64) / 255.0,
        labels=labels.astype(np.int64),
        feature_names=[f"px{i}" for i in range(dim)],
        feature_kinds=[CONTINUOUS] * dim,
        normalization=[{"kind": "scale", "factor": 255.0,
                        "rows": int(rows), "cols": int(cols)}],
    )


def write_idx(dataset, images_path, labels_path):
    """Write a dataset whose raw values are bytes back to an IDX pair.

    Features are mapped through the inverse of the recorded
    preprocessing, rounded to [0, 255] bytes; values landing outside
    are clamped and counted. Returns the clamp count.
    """
    raw = dataset.invert_normalization()
    shape_step = next((s for s in dataset.normalization if s.get("kind") == "scale"), None)
    if shape_step is not None:
        rows, cols = shape_step.get("rows"), shape_step.get("cols")
    else:
        rows, cols = 1, dataset.dim
        raw = raw * 255.0  # dataset never came from bytes; map [0,1] to bytes
    if rows * cols != dataset.dim:
        raise DataError(
            f"recorded image shape {rows}x{cols} does not match dim {dataset.dim}"
        )
    quantized = np.rint(raw)
    clamped = int(np.sum((quantized < 0) | (quantized > 255)))
    quantized = np.clip(quantized, 0, 255).astype(np.uint8)

    if np.any(dataset.labels < 0) or np.any(dataset.labels > 255):
        raise DataError("labels outside [0, 255] cannot be written as IDX bytes")
    with open(images_path, "wb") as fh:
        fh.write(struct.pack(">iiii", IDX_IMAGES_MAGIC, dataset.n_samples,
                             rows, cols))
        fh.write(quantized.tobytes())
    with open(labels_path, "wb") as fh:
        fh.write(struct.pack(">ii", IDX_LABELS_MAGIC, dataset.n_samples))
        fh.write(dataset.labels.astype(np.uint8).tobytes())
    return clamped


# ---------------------------------------------------------------------------
# CSV format

def _parse_cell(text, path, row, col):
    try:
        return float(text)
    except ValueError:
        raise DataError(
            f"{path}: non-numeric value {text!r} at row {row}, column {col}"
        ) from None


def load_csv(path, label_column="label", binary_columns=(), standardize=True):
    """Load a header-first CSV into a LabeledDataset.

    Continuous features are standardized to zero mean / unit variance
    (recorded, hence invertible) unless standardize=False. Columns named
    in binary_columns must hold only 0 or 1 and are left untouched.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file, header row required") from None
        rows = list(reader)
    if label_column not in header:
        raise DataError(f"{path}: label column {label_column!r} not in header {header}")
    unknown = set(binary_columns) - set(header)
    if unknown:
        raise DataError(f"{path}: binary columns not in header: {sorted(unknown)}")

    label_j = header.index(label_column)
    feature_names = [h for j, h in enumerate(header) if j != label_j]
    feature_kinds = [BINARY if h in binary_columns else CONTINUOUS
                     for h in feature_names]

    n = len(rows)
    if n == 0:
        raise DataError(f"{path}: no data rows")
    features = np.empty((n, len(feature_names)))
    labels = np.empty(n, dtype=np.int64)
    for i, row in enumerate(rows):
        if len(row) != len(header):
            raise DataError(
                f"{path}: row {i + 2} has {len(row)} cells, header has "
                f"{len(header)}"
            )
        k = 0
        for j, cell in enumerate(row):
            value = _parse_cell(cell, path, i + 2, header[j])
            if j == label_j:
                if value != int(value):
                    raise DataError(
                        f"{path}: non-integer label {cell!r} at row {i + 2}"
                    )
                labels[i] = int(value)
            else:
                features[i, k] = value
                k += 1

    for j, (name, kind) in enumerate(zip(feature_names, feature_kinds)):
        if kind == BINARY:
            bad = ~np.isin(features[:, j], (0.0, 1.0))
            if np.any(bad):
                row = int(np.flatnonzero(bad)[0])
                raise DataError(
                    f"{path}: non-binary value {features[row, j]!r} in binary "
                    f"column {name!r} at row {row + 2}"
                )

    dataset = LabeledDataset(features, labels, feature_names, feature_kinds)
    if standardize:
        dataset = standardize_features(dataset)
    return dataset


def export_csv(dataset, path):
    """Write features + label with full float precision (17 significant
    digits), so load_csv(standardize=False) round-trips bitwise."""
    if dataset.n_samples == 0:
        raise DataError("refusing to export an empty dataset")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(dataset.feature_names + ["label"])
        for x, y in zip(dataset.features, dataset.labels):
            writer.writerow([f"{v:.17g}" for v in x] + [str(int(y))])


def export_dataset(dataset, path_stem, format="csv"):
    """Write a dataset as 'csv' or 'idx-pair'. Returns a manifest dict."""
    if dataset.n_samples == 0:
        raise DataError("refusing to export an empty dataset")
    path_stem = str(path_stem)
    if format == "csv":
        path = path_stem if path_stem.endswith(".csv") else path_stem + ".csv"
        export_csv(dataset, path)
        return {"format": "csv", "files": [path], "clamped_values": 0}
    if format == "idx-pair":
        images = path_stem + "-images.idx"
        labels = path_stem + "-labels.idx"
        clamped = write_idx(dataset, images, labels)
        return {"format": "idx-pair", "files": [images, labels],
                "clamped_values": clamped}
    raise ValueError(f"unknown export format {format!r}")


# ---------------------------------------------------------------------------
# preprocessing

def standardize_features(dataset):
    """Zero-mean unit-variance scaling of continuous features, recorded.

    Binary features keep their 0/1 coding. Zero-variance columns get
    scale 1 so the transform stays invertible.
    """
    X = dataset.features.copy()
    continuous = np.array([k == CONTINUOUS for k in dataset.feature_kinds])
    mean = np.where(continuous, X.mean(axis=0), 0.0)
    scale = np.where(continuous, X.std(axis=0), 1.0)
    scale = np.where(scale == 0.0, 1.0, scale)
    X = (X - mean) / scale
    record = {"kind": "standard", "mean": mean.tolist(), "scale": scale.tolist()}
    out = dataset.with_features(dataset.features)  # deep copy of schema
    out.features = X
    out.normalization = out.normalization + [record]
    return out


def apply_standardization(dataset, record):
    """Apply a previously computed standardization record to a dataset."""
    mean = np.asarray(record["mean"], dtype=np.float64)
    scale = np.asarray(record["scale"], dtype=np.float64)
    out = dataset.with_features((dataset.features - mean) / scale)
    out.normalization = out.normalization + [dict(record)]
    return out


def dequantize(dataset, noise_sigma, seed=0):
    """Add seeded Gaussian noise to continuous features.

    Discrete-valued inputs (pixels, counts) need this before continuous
    density modelling; binary features are left untouched.
    """
    if noise_sigma < 0:
        raise ValueError(f"noise_sigma must be >= 0, got {noise_sigma}")
    if noise_sigma == 0:
        return dataset.with_features(dataset.features)
    rng = default_rng(SeedSequence([int(seed), 333]))
    noise = rng.normal(0.0, noise_sigma, size=dataset.features.shape)
    continuous = np.array([k == CONTINUOUS for k in dataset.feature_kinds])
    noise[:, ~continuous] = 0.0
    return dataset.with_features(dataset.features + noise)


# ---------------------------------------------------------------------------
# synthetic sources

def make_synthetic(kind, n=1000, seed=0):
    """Deterministic labeled toy sets.

    two-gaussians: two unit-variance 2-d Gaussians at (+-2, 0), label =
    component. Per-class differential entropy is log(2*pi*e) = 2.8379
    nats, which is what a conditional model's held-out NLL should reach.

    two-moons-like: the interleaved half-circles, standardized.

    categorical-mixture: one balanced binary 'group' feature plus four
    unit-variance continuous features whose means sit at +-3 depending
    on the group; labels are an independent balanced coin. Group is the
    natural conditioning feature.
    """
    if n < 10:
        raise ValueError(f"need n >= 10, got {n}")
    n = int(n)
    rng = default_rng(SeedSequence([int(seed), 17]))
    if kind == "two-gaussians":
        half = n // 2
        labels = np.zeros(n, dtype=np.int64)
        labels[half:] = 1
        centers = np.array([[-2.0, 0.0], [2.0, 0.0]])
        features = rng.normal(size=(n, 2)) + centers[labels]
        order = rng.permutation(n)
        return LabeledDataset(features[order], labels[order],
                              ["x0", "x1"], [CONTINUOUS, CONTINUOUS])
    if kind == "two-moons-like":
        from sklearn.datasets import make_moons

        features, labels = make_moons(n_samples=n, noise=0.08,
                                      random_state=int(seed))
        dataset = LabeledDataset(np.asarray(features, dtype=np.float64),
                                 labels.astype(np.int64),
                                 ["x0", "x1"], [CONTINUOUS, CONTINUOUS])
        return standardize_features(dataset)
    if kind == "categorical-mixture":
        half = n // 2
        group = np.zeros(n)
        group[half:] = 1.0
        signs = np.array([1.0, -1.0, 1.0, -1.0])
        means = 3.0 * np.outer(2.0 * group - 1.0, signs)
        cont = rng.normal(size=(n, 4)) + means
        labels = np.zeros(n, dtype=np.int64)
        labels[rng.permutation(n)[: n // 2]] = 1
        features = np.column_stack([group, cont])
        order = rng.permutation(n)
        return LabeledDataset(
            features[order], labels[order],
            ["group", "f0", "f1", "f2", "f3"],
            [BINARY] + [CONTINUOUS] * 4,
        )
    raise ValueError(f"unknown synthetic kind {kind!r}")


def stratified_subset(dataset, n_per_split, seed=0):
    """Two disjoint, class-balanced subsets (train, test) of equal size."""
    rng = default_rng(SeedSequence([int(seed), 29]))
    classes = np.unique(dataset.labels)
    per_class = n_per_split // len(classes)
    train_idx, test_idx = [], []
    for c in classes:
        idx = np.flatnonzero(dataset.labels == c)
        if len(idx) < 2 * per_class:
            raise DataError(
                f"class {c} has only {len(idx)} samples, need {2 * per_class}"
            )
        picked = rng.permutation(idx)
        train_idx.extend(picked[:per_class])
        test_idx.extend(picked[per_class:2 * per_class])
    return dataset.subset(np.sort(train_idx)), dataset.subset(np.sort(test_idx))


# ---------------------------------------------------------------------------
# comparison metrics

def marginal_distance(a, b, feature):
    """Exact 1-d Wasserstein-1 distance between one feature's marginals."""
    from scipy.stats import wasserstein_distance

    if a.feature_names != b.feature_names:
        raise ValueError("datasets have different schemas")
    j = a.feature_index(feature)
    return float(wasserstein_distance(a.features[:, j], b.features[:, j]))


def mean_l2_distortion(a, b):
    """Mean per-sample euclidean distance between two aligned datasets."""
    A = check_array(a.features if isinstance(a, LabeledDataset) else a)
    B = check_array(b.features if isinstance(b, LabeledDataset) else b)
    if A.shape != B.shape:
        raise ValueError(f"shape mismatch {A.shape} vs {B.shape}")
    return float(np.mean(np.sqrt(np.sum((A - B) ** 2, axis=1))))
