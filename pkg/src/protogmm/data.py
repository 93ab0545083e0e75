"""Synthetic shifted-domain generation and dataset serialization.

Each class is a small Gaussian mixture in input space ("within-class
variation" is the point, so modes_per_class >= 1). The target domain draws
from the same modes pushed through an affine covariate shift (rotation in
the first two coordinates, uniform scale, translation) with class counts
following a separate label distribution, so the pair exhibits both covariate
and label shift with known ground truth.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractViolation, ParseError, VersionError

FORMAT_NAME = "pgmm-dataset"
FORMAT_VERSION = "v1"


@dataclass
class DomainSpec:
    n_classes: int = 3
    input_dim: int = 2
    modes_per_class: int = 2
    n_samples: int = 5000
    seed: int = 0
    rotation_deg: float = 30.0
    translation: tuple[float, ...] = (1.5, 0.0)
    scale: float = 1.0
    label_shift: tuple[float, ...] = (0.2, 0.3, 0.5)
    mode_spread: float = 2.6  # radius of the ring the class centers sit on
    within_class_spread: float = 0.35  # box radius of a class's modes around its center
    mode_scale: float = 0.45  # per-mode standard deviation
    # explicit geometry overrides; drawn from the seed when None
    mode_centers: np.ndarray | None = None  # (C, modes_per_class, input_dim)
    mode_scales: np.ndarray | None = None  # (C, modes_per_class)

    def validate(self) -> None:
        if self.n_classes < 2:
            raise ContractViolation("n_classes: need at least 2 classes")
        if self.input_dim < 1:
            raise ContractViolation("input_dim: must be >= 1")
        if self.modes_per_class < 1:
            raise ContractViolation("modes_per_class: must be >= 1")
        if self.n_samples < self.n_classes:
            raise ContractViolation("n_samples: need at least one sample per class")
        if len(self.translation) != self.input_dim:
            raise ContractViolation("translation: length must equal input_dim")
        if self.rotation_deg != 0.0 and self.input_dim < 2:
            raise ContractViolation("rotation_deg: rotation needs input_dim >= 2")
        if self.scale <= 0:
            raise ContractViolation("scale: must be positive")
        if len(self.label_shift) != self.n_classes:
            raise ContractViolation("label_shift: length must equal n_classes")
        if any(p < 0 for p in self.label_shift) or abs(sum(self.label_shift) - 1.0) > 1e-9:
            raise ContractViolation("label_shift: must be a distribution summing to 1")
        if self.mode_scale <= 0 or self.mode_spread <= 0:
            raise ContractViolation("mode_scale/mode_spread: must be positive")
        if self.within_class_spread < 0:
            raise ContractViolation("within_class_spread: must be >= 0")
        if self.mode_centers is not None and self.mode_centers.shape != (
            self.n_classes,
            self.modes_per_class,
            self.input_dim,
        ):
            raise ContractViolation("mode_centers: wrong shape")
        if self.mode_scales is not None and self.mode_scales.shape != (
            self.n_classes,
            self.modes_per_class,
        ):
            raise ContractViolation("mode_scales: wrong shape")


@dataclass
class Dataset:
    inputs: np.ndarray  # (N, input_dim) float64
    labels: np.ndarray  # (N,) int64, -1 = unlabeled
    n_classes: int

    def __post_init__(self) -> None:
        self.inputs = np.atleast_2d(np.asarray(self.inputs, dtype=np.float64))
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.inputs.shape[0] != self.labels.shape[0]:
            raise ContractViolation("inputs and labels length mismatch")
        bad = (self.labels < -1) | (self.labels >= self.n_classes)
        if bad.any():
            raise ContractViolation(f"labels outside {{-1}} u [0, {self.n_classes})")

    def __len__(self) -> int:
        return self.inputs.shape[0]

    @property
    def dim(self) -> int:
        return self.inputs.shape[1]

    def without_labels(self) -> "Dataset":
        return Dataset(self.inputs.copy(), np.full(len(self), -1, dtype=np.int64), self.n_classes)

    def labels_only(self) -> "Dataset":
        """Same rows with inputs dropped (dim=0); the held-out label file."""
        return Dataset(np.empty((len(self), 0)), self.labels.copy(), self.n_classes)


def _proportional_counts(n: int, probs: np.ndarray) -> np.ndarray:
    """Largest-remainder apportionment of n among classes; deterministic."""
    raw = n * probs
    counts = np.floor(raw).astype(np.int64)
    short = n - counts.sum()
    if short > 0:
        order = np.argsort(-(raw - counts), kind="stable")
        counts[order[:short]] += 1
    return counts


def _rotation(input_dim: int, degrees: float) -> np.ndarray:
    rot = np.eye(input_dim)
    t = np.deg2rad(degrees)
    if input_dim >= 2:
        rot[0, 0] = rot[1, 1] = np.cos(t)
        rot[0, 1] = -np.sin(t)
        rot[1, 0] = np.sin(t)
    return rot


def _draw(
    rng: np.random.Generator,
    counts: np.ndarray,
    centers: np.ndarray,
    scales: np.ndarray,
    spec: DomainSpec,
) -> tuple[np.ndarray, np.ndarray]:
    xs, ys = [], []
    for c, n_c in enumerate(counts):
        modes = rng.integers(0, spec.modes_per_class, size=n_c)
        noise = rng.standard_normal((n_c, spec.input_dim))
        xs.append(centers[c, modes] + scales[c, modes, None] * noise)
        ys.append(np.full(n_c, c, dtype=np.int64))
    x = np.concatenate(xs, axis=0)
    y = np.concatenate(ys)
    perm = rng.permutation(x.shape[0])
    return x[perm], y[perm]


RING_PHASE_DEG = 30.0  # fixed orientation of the class ring in the first two dims


def _default_centers(rng: np.random.Generator, spec: DomainSpec) -> np.ndarray:
    """Class centers spread apart (a ring in the first two dims), with each
    class's modes scattered around its own center. Classes stay separable
    while the modes carry the within-class variation; the ring orientation
    is fixed so the seed only varies mode placement and sampling noise."""
    c, m, d = spec.n_classes, spec.modes_per_class, spec.input_dim
    base = np.zeros((c, d))
    if d == 1:
        base[:, 0] = spec.mode_spread * np.linspace(-1.0, 1.0, c)
    else:
        angles = 2.0 * np.pi * np.arange(c) / c + np.deg2rad(RING_PHASE_DEG)
        base[:, 0] = spec.mode_spread * np.cos(angles)
        base[:, 1] = spec.mode_spread * np.sin(angles)
    offsets = rng.uniform(-spec.within_class_spread, spec.within_class_spread, size=(c, m, d))
    return base[:, None, :] + offsets


def generate_domain_pair(spec: DomainSpec) -> tuple[Dataset, Dataset]:
    """Draw (source, target) datasets; the target's labels are returned for
    evaluation only and must be held out from training."""
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    if spec.mode_centers is not None:
        centers = np.asarray(spec.mode_centers, dtype=np.float64)
    else:
        centers = _default_centers(rng, spec)
    if spec.mode_scales is not None:
        scales = np.asarray(spec.mode_scales, dtype=np.float64)
    else:
        scales = np.full((spec.n_classes, spec.modes_per_class), spec.mode_scale)

    src_counts = _proportional_counts(spec.n_samples, np.full(spec.n_classes, 1.0 / spec.n_classes))
    tgt_counts = _proportional_counts(spec.n_samples, np.asarray(spec.label_shift, dtype=np.float64))

    src_x, src_y = _draw(rng, src_counts, centers, scales, spec)
    tgt_x, tgt_y = _draw(rng, tgt_counts, centers, scales, spec)
    shift = spec.scale * (tgt_x @ _rotation(spec.input_dim, spec.rotation_deg).T)
    tgt_x = shift + np.asarray(spec.translation, dtype=np.float64)

    return (
        Dataset(src_x, src_y, spec.n_classes),
        Dataset(tgt_x, tgt_y, spec.n_classes),
    )


# -- serialization --------------------------------------------------------
#
# line 1:  pgmm-dataset v1 dim=<D> classes=<C> count=<N>
# then N lines:  label,v1,...,vD   (17 significant digits, LF endings)


def write_dataset(ds: Dataset, path: str) -> None:
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write(f"{FORMAT_NAME} {FORMAT_VERSION} dim={ds.dim} classes={ds.n_classes} count={len(ds)}\n")
        for i in range(len(ds)):
            row = ",".join(f"{v:.17g}" for v in ds.inputs[i])
            fh.write(f"{ds.labels[i]},{row}\n" if ds.dim else f"{ds.labels[i]}\n")


def read_dataset(path: str) -> Dataset:
    with open(path, "r", encoding="ascii", newline="\n") as fh:
        header = fh.readline()
        if not header:
            raise ParseError("empty file", line=1)
        parts = header.strip().split()
        if len(parts) != 5 or parts[0] != FORMAT_NAME:
            raise ParseError(f"not a {FORMAT_NAME} header", line=1)
        if parts[1] != FORMAT_VERSION:
            raise VersionError(f"unsupported format version {parts[1]!r} (expected {FORMAT_VERSION})")
        try:
            fields = dict(p.split("=", 1) for p in parts[2:])
            dim = int(fields["dim"])
            n_classes = int(fields["classes"])
            count = int(fields["count"])
        except (ValueError, KeyError) as exc:
            raise ParseError(f"malformed header fields: {exc}", line=1) from None

        inputs = np.empty((count, dim))
        labels = np.empty(count, dtype=np.int64)
        for i in range(count):
            lineno = i + 2
            line = fh.readline()
            if not line:
                raise ParseError(f"expected {count} rows, file ended early", line=lineno)
            cells = line.rstrip("\n").split(",")
            if len(cells) != dim + 1:
                raise ParseError(f"expected {dim + 1} columns, got {len(cells)}", line=lineno)
            try:
                labels[i] = int(cells[0])
                inputs[i] = [float(v) for v in cells[1:]]
            except ValueError as exc:
                raise ParseError(str(exc), line=lineno) from None
        if fh.readline():
            raise ParseError(f"trailing data beyond declared count {count}", line=count + 2)
    try:
        return Dataset(inputs, labels, n_classes)
    except ContractViolation as exc:
        raise ParseError(str(exc)) from None
