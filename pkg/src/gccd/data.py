"""Scenario construction: synthetic drifting category streams and file ingestion.

A scenario is a sequence of class-disjoint tasks. Each task carries labeled
samples of its known classes, an unlabeled pool mixing known and novel
classes, and a held-out test split. Ground-truth labels of unlabeled samples
ride along in a private field that only the evaluation side reads.

Feature files are plain text: ``gccd-features v1 dim=<d>`` then one
``class_id,v1,...,vd`` row per sample.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import DataFormatError
from .nn import rng_for


@dataclass(frozen=True)
class DriftSpec:
    """Invertible affine transform applied cumulatively to later tasks' data.

    kind 'rotation' rotates by angle_deg per task in seeded random planes;
    'linear' applies a random matrix rescaled under spectral_bound; and
    'translation' shifts by a vector (seeded random of norm translation_norm
    unless an explicit vector is given).
    """

    kind: str = "none"
    angle_deg: float = 15.0
    spectral_bound: float = 1.2
    translation_norm: float = 2.0
    vector: Optional[tuple] = None

    def __post_init__(self):
        if self.kind not in ("none", "rotation", "linear", "translation"):
            raise ValueError(f"unknown drift kind {self.kind!r}")


@dataclass
class SyntheticConfig:
    dim: int = 32
    classes_per_task: int = 20
    known_fraction: float = 0.8
    labeled_fraction: float = 0.5
    samples_per_class: int = 100
    cluster_std: float = 1.0
    cluster_separation: float = 10.0
    test_fraction: float = 0.2
    drift: DriftSpec = field(default_factory=DriftSpec)

    def __post_init__(self):
        if self.cluster_separation <= 0 or self.cluster_std <= 0:
            raise ValueError("separation and std must be positive")
        if int(round(self.classes_per_task * self.known_fraction)) < 1:
            raise ValueError("config yields no labeled (known) class per task")


@dataclass(frozen=True)
class ClassInfo:
    kind: str          # "known" | "novel"
    task: int


@dataclass
class TaskData:
    """One task's data. Unlabeled ground truth is evaluation-only."""

    labeled_x: np.ndarray
    labeled_y: np.ndarray
    unlabeled_x: np.ndarray
    test_x: np.ndarray
    test_y: np.ndarray
    _unlabeled_truth: np.ndarray = field(repr=False, default=None)

    @property
    def known_classes(self) -> np.ndarray:
        return np.unique(self.labeled_y)


@dataclass
class Scenario:
    tasks: list
    class_registry: dict            # class id -> ClassInfo
    dim: int
    seed: int

    @property
    def n_tasks(self) -> int:
        return len(self.tasks)

    def classes_of_task(self, t: int) -> list:
        return sorted(c for c, info in self.class_registry.items() if info.task == t)

    def novel_count(self, t: int) -> int:
        return sum(1 for c, info in self.class_registry.items()
                   if info.task == t and info.kind == "novel")

    def known_class_ids(self) -> set:
        return {c for c, info in self.class_registry.items() if info.kind == "known"}


def _drift_transform(drift: DriftSpec, dim: int, task_index: int, rng_seed: int):
    """Cumulative affine map (L, offset) for the given task index."""
    if drift.kind == "none" or task_index == 0:
        return np.eye(dim), np.zeros(dim)
    rng = rng_for(rng_seed, "drift")
    if drift.kind == "rotation":
        theta = np.deg2rad(drift.angle_deg) * task_index
        basis, _ = np.linalg.qr(rng.normal(size=(dim, dim)))
        block = np.eye(dim)
        for p in range(dim // 2):
            c, s = np.cos(theta), np.sin(theta)
            block[2 * p: 2 * p + 2, 2 * p: 2 * p + 2] = [[c, -s], [s, c]]
        return basis @ block @ basis.T, np.zeros(dim)
    if drift.kind == "linear":
        a = np.eye(dim) + rng.normal(scale=0.5 / np.sqrt(dim), size=(dim, dim))
        spectral = np.linalg.norm(a, ord=2)
        if spectral > drift.spectral_bound:
            a *= drift.spectral_bound / spectral
        return np.linalg.matrix_power(a, task_index), np.zeros(dim)
    # translation
    if drift.vector is not None:
        v = np.asarray(drift.vector, dtype=np.float64)
        if v.shape != (dim,):
            raise ValueError("translation vector dimension mismatch")
    else:
        v = rng.normal(size=dim)
        v *= drift.translation_norm / np.linalg.norm(v)
    return np.eye(dim), task_index * v


def generate_feature_table(cfg: SyntheticConfig, n_tasks: int, seed: int):
    """Raw per-class sample matrix with task-block drift; ordered by class id.

    Returns (class_ids, X) with classes 0..n_tasks*classes_per_task-1 laid
    out in task blocks, which is the layout feature files use.
    """
    if n_tasks < 1:
        raise ValueError("need at least one task")
    ids = []
    rows = []
    for t in range(n_tasks):
        lin, offset = _drift_transform(cfg.drift, cfg.dim, t, seed)
        rng = rng_for(seed, "samples", t)
        for j in range(cfg.classes_per_task):
            cid = t * cfg.classes_per_task + j
            direction = rng.normal(size=cfg.dim)
            mean = direction / np.linalg.norm(direction) * cfg.cluster_separation
            pts = mean + rng.normal(scale=cfg.cluster_std, size=(cfg.samples_per_class, cfg.dim))
            rows.append(pts @ lin.T + offset)
            ids.append(np.full(cfg.samples_per_class, cid))
    return np.concatenate(ids), np.vstack(rows)


def _split_task(class_ids, X, task_classes, known_fraction, labeled_fraction,
                test_fraction, task_index, seed):
    """Partition one task's classes into known/novel and its samples into splits."""
    rng = rng_for(seed, "split", task_index)
    n_known = int(round(len(task_classes) * known_fraction))
    n_known = max(1, min(n_known, len(task_classes)))
    known = set(rng.choice(np.asarray(task_classes), size=n_known, replace=False).tolist())

    lab_x, lab_y, unl_x, unl_y, test_x, test_y = [], [], [], [], [], []
    registry = {}
    for cid in task_classes:
        pts = X[class_ids == cid]
        order = rng.permutation(len(pts))
        n_test = int(round(len(pts) * test_fraction))
        test_idx, train_idx = order[:n_test], order[n_test:]
        test_x.append(pts[test_idx])
        test_y.append(np.full(len(test_idx), cid))
        if cid in known:
            registry[cid] = ClassInfo("known", task_index)
            n_lab = int(round(len(train_idx) * labeled_fraction))
            lab_x.append(pts[train_idx[:n_lab]])
            lab_y.append(np.full(n_lab, cid))
            unl_x.append(pts[train_idx[n_lab:]])
            unl_y.append(np.full(len(train_idx) - n_lab, cid))
        else:
            registry[cid] = ClassInfo("novel", task_index)
            unl_x.append(pts[train_idx])
            unl_y.append(np.full(len(train_idx), cid))

    dim = X.shape[1]

    def cat_x(parts):
        return np.vstack(parts) if parts else np.zeros((0, dim))

    def cat_y(parts):
        return np.concatenate(parts).astype(int) if parts else np.zeros(0, dtype=int)

    task = TaskData(
        labeled_x=cat_x(lab_x), labeled_y=cat_y(lab_y),
        unlabeled_x=cat_x(unl_x),
        test_x=cat_x(test_x), test_y=cat_y(test_y),
        _unlabeled_truth=cat_y(unl_y),
    )
    return task, registry


def make_synthetic_scenario(cfg: SyntheticConfig, n_tasks: int, seed: int) -> Scenario:
    """Sample class means on a sphere, draw Gaussian clusters, drift later tasks."""
    class_ids, X = generate_feature_table(cfg, n_tasks, seed)
    tasks, registry = [], {}
    for t in range(n_tasks):
        block = list(range(t * cfg.classes_per_task, (t + 1) * cfg.classes_per_task))
        task, reg = _split_task(class_ids, X, block, cfg.known_fraction,
                                cfg.labeled_fraction, cfg.test_fraction, t, seed)
        tasks.append(task)
        registry.update(reg)
    return Scenario(tasks=tasks, class_registry=registry, dim=cfg.dim, seed=seed)


# ---------------------------------------------------------------------------
# feature files
# ---------------------------------------------------------------------------

def save_feature_file(path, class_ids, X) -> None:
    X = np.asarray(X, dtype=np.float64)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"gccd-features v1 dim={X.shape[1]}\n")
        for cid, row in zip(class_ids, X):
            fh.write(f"{int(cid)}," + ",".join(repr(float(v)) for v in row) + "\n")


@dataclass
class SplitSpec:
    """How to carve a flat feature file into a task sequence."""

    n_tasks: int
    known_fraction: float = 0.8
    labeled_fraction: float = 0.5
    test_fraction: float = 0.2
    seed: int = 0


def load_feature_dataset(path, split: SplitSpec) -> Scenario:
    """Read a gccd-features file and partition classes into task blocks."""
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip()
        parts = header.split()
        if len(parts) != 3 or parts[0] != "gccd-features" or parts[1] != "v1" \
                or not parts[2].startswith("dim="):
            raise DataFormatError(f"bad header {header!r}", line=1)
        try:
            dim = int(parts[2][4:])
        except ValueError:
            raise DataFormatError(f"bad dim in header {header!r}", line=1) from None
        ids, rows = [], []
        for lineno, raw in enumerate(fh, start=2):
            raw = raw.strip()
            if not raw:
                continue
            cells = raw.split(",")
            if len(cells) != dim + 1:
                raise DataFormatError(
                    f"expected {dim + 1} fields, found {len(cells)}", line=lineno)
            try:
                ids.append(int(cells[0]))
                rows.append([float(c) for c in cells[1:]])
            except ValueError as exc:
                raise DataFormatError(str(exc), line=lineno) from None
    if not rows:
        raise DataFormatError("file holds no samples")
    if any(i < 0 for i in ids):
        raise DataFormatError("class ids must be non-negative")

    class_ids = np.asarray(ids)
    X = np.asarray(rows, dtype=np.float64)
    classes = sorted(set(ids))
    if len(classes) % split.n_tasks != 0:
        raise DataFormatError(
            f"{len(classes)} classes do not divide into {split.n_tasks} equal tasks")
    per_task = len(classes) // split.n_tasks

    tasks, registry = [], {}
    for t in range(split.n_tasks):
        block = classes[t * per_task: (t + 1) * per_task]
        task, reg = _split_task(class_ids, X, block, split.known_fraction,
                                split.labeled_fraction, split.test_fraction,
                                t, split.seed)
        tasks.append(task)
        registry.update(reg)
    return Scenario(tasks=tasks, class_registry=registry, dim=dim, seed=split.seed)


# ---------------------------------------------------------------------------
# view augmentation and exemplars
# ---------------------------------------------------------------------------

def augment_views(batch: np.ndarray, strength: float, rng, mask_fraction: float = 0.1):
    """Two feature-space views: additive Gaussian noise plus coordinate dropout.

    rng may be a seed or a Generator; passing the same seed reproduces the
    views exactly. strength=0 with mask_fraction=0 returns the batch itself.
    """
    if strength < 0:
        raise ValueError("strength must be non-negative")
    if isinstance(rng, (int, np.integer)):
        rng = rng_for(rng, "augment")
    batch = np.asarray(batch, dtype=np.float64)

    def one_view():
        view = batch + rng.normal(scale=strength, size=batch.shape) if strength > 0 else batch.copy()
        if mask_fraction > 0:
            view = np.where(rng.random(batch.shape) < mask_fraction, 0.0, view)
        return view

    return one_view(), one_view()


@dataclass
class ExemplarBuffer:
    """Per known class, up to m stored raw feature vectors."""

    per_class: dict = field(default_factory=dict)

    @property
    def is_empty(self) -> bool:
        return not self.per_class

    def all_samples(self):
        """Stacked (X, y) over every stored class, ordered by class id."""
        if self.is_empty:
            return np.zeros((0, 0)), np.zeros(0, dtype=int)
        xs, ys = [], []
        for cid in sorted(self.per_class):
            xs.append(self.per_class[cid])
            ys.append(np.full(len(self.per_class[cid]), cid))
        return np.vstack(xs), np.concatenate(ys)


def buffer_update(buf: ExemplarBuffer, task: TaskData, m: int, seed: int) -> ExemplarBuffer:
    """Store m seeded-random labeled exemplars per known class of this task.

    Classes already in the buffer are carried over untouched; with fewer
    than m labeled samples the whole class is kept.
    """
    if m < 0:
        raise ValueError("m must be non-negative")
    out = ExemplarBuffer(per_class=dict(buf.per_class))
    if m == 0:
        return out
    rng = rng_for(seed, "buffer")
    for cid in np.unique(task.labeled_y):
        rows = task.labeled_x[task.labeled_y == cid]
        take = min(m, len(rows))
        pick = rng.choice(len(rows), size=take, replace=False)
        out.per_class[int(cid)] = rows[np.sort(pick)].copy()
    return out
