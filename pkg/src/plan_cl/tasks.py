"""Class-incremental task streams: synthetic generators and a CSV loader.

Task ``t`` owns the contiguous class ids ``[class_start, class_stop)``; the
ranges of consecutive tasks abut.  Within a task, samples are grouped by
class and each class is split 80/20 into train/test in generation order.
"""
from __future__ import annotations

import csv
import hashlib
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .tensor import gram_schmidt, make_rng

TRAIN_FRACTION = 0.8


class CsvFormatError(ValueError):
    def __init__(self, path, line: int, msg: str):
        super().__init__(f"{path}:{line}: {msg}")
        self.line = line


@dataclass
class Task:
    train_x: np.ndarray
    train_y: np.ndarray
    test_x: np.ndarray
    test_y: np.ndarray
    class_start: int
    class_stop: int

    @property
    def n_classes(self) -> int:
        return self.class_stop - self.class_start

    def __eq__(self, other) -> bool:
        if not isinstance(other, Task):
            return NotImplemented
        return (
            self.class_start == other.class_start
            and self.class_stop == other.class_stop
            and np.array_equal(self.train_x, other.train_x)
            and np.array_equal(self.train_y, other.train_y)
            and np.array_equal(self.test_x, other.test_x)
            and np.array_equal(self.test_y, other.test_y)
        )


@dataclass(eq=False)
class TaskStream:
    tasks: list[Task]
    dim: int
    descriptor: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.tasks)

    def __eq__(self, other) -> bool:
        if not isinstance(other, TaskStream):
            return NotImplemented
        return self.dim == other.dim and self.tasks == other.tasks

    @property
    def n_classes(self) -> int:
        return self.tasks[-1].class_stop if self.tasks else 0

    def digest(self) -> str:
        h = hashlib.sha256()
        h.update(str(self.dim).encode())
        for t in self.tasks:
            h.update(f"{t.class_start}:{t.class_stop}".encode())
            for a in (t.train_x, t.train_y, t.test_x, t.test_y):
                h.update(np.ascontiguousarray(a).tobytes())
        return h.hexdigest()

    def check(self) -> None:
        expected = 0
        for i, t in enumerate(self.tasks):
            if t.class_start != expected or t.class_stop <= t.class_start:
                raise ValueError(f"task {i} class range [{t.class_start}, {t.class_stop}) breaks contiguity")
            for y in (t.train_y, t.test_y):
                if y.size and (y.min() < t.class_start or y.max() >= t.class_stop):
                    raise ValueError(f"task {i} has labels outside its class range")
            expected = t.class_stop


def n_train_of(n: int) -> int:
    return int(math.floor(TRAIN_FRACTION * n + 0.5))


def _split_by_class(xs: list[np.ndarray], labels: list[int], class_start: int, class_stop: int, dim: int) -> Task:
    tr_x, tr_y, te_x, te_y = [], [], [], []
    for x, c in zip(xs, labels):
        n_tr = n_train_of(len(x))
        tr_x.append(x[:n_tr])
        te_x.append(x[n_tr:])
        tr_y.append(np.full(n_tr, c, dtype=np.int64))
        te_y.append(np.full(len(x) - n_tr, c, dtype=np.int64))

    def cat(parts, shape):
        return np.concatenate(parts) if parts else np.zeros(shape)

    return Task(
        cat(tr_x, (0, dim)), cat(tr_y, 0).astype(np.int64), cat(te_x, (0, dim)), cat(te_y, 0).astype(np.int64),
        class_start, class_stop,
    )


def gen_gaussian_clusters(
    n_tasks: int, classes_per_task: int, dim: int, samples_per_class: int, separation: float, seed: int
) -> TaskStream:
    """Unit-variance isotropic clusters around random directions scaled by ``separation``."""
    if min(n_tasks, classes_per_task, dim, samples_per_class) < 1:
        raise ValueError("all counts must be >= 1")
    if separation < 0:
        raise ValueError(f"separation must be >= 0, got {separation}")
    rng = make_rng(seed)
    tasks = []
    for t in range(n_tasks):
        xs, labels = [], []
        for c in range(classes_per_task):
            mean = rng.standard_normal(dim)
            mean *= separation / np.linalg.norm(mean)
            xs.append(mean + rng.standard_normal((samples_per_class, dim)))
            labels.append(t * classes_per_task + c)
        tasks.append(_split_by_class(xs, labels, t * classes_per_task, (t + 1) * classes_per_task, dim))
    desc = dict(
        generator="gaussian", n_tasks=n_tasks, classes_per_task=classes_per_task, dim=dim,
        samples_per_class=samples_per_class, separation=separation, seed=seed,
    )
    return TaskStream(tasks, dim, desc)


def rotation_matrix(dim: int, angle: float, rng: np.random.Generator) -> np.ndarray:
    """Rotate every plane of a random orthonormal frame by ``angle`` radians."""
    if angle == 0.0:
        return np.eye(dim)
    frame = gram_schmidt(rng.standard_normal((dim, dim)))
    c, s = math.cos(angle), math.sin(angle)
    block = np.eye(dim)
    for i in range(0, dim - 1, 2):
        block[i, i] = block[i + 1, i + 1] = c
        block[i, i + 1] = -s
        block[i + 1, i] = s
    return frame.T @ block @ frame


def gen_rotated_features(base: TaskStream, angles: Sequence[float], seed: int) -> TaskStream:
    """One task per angle: base task ``t mod len(base)`` rotated, labels shifted to fresh ids."""
    if not base.tasks:
        raise ValueError("base stream has no tasks")
    if not all(math.isfinite(a) for a in angles):
        raise ValueError("rotation angles must be finite")
    rng = make_rng(seed)
    tasks = []
    offset = 0
    for t, angle in enumerate(angles):
        src = base.tasks[t % len(base.tasks)]
        rot = rotation_matrix(base.dim, float(angle), rng)
        shift = offset - src.class_start
        rotate = (lambda x: x.copy()) if angle == 0.0 else (lambda x, r=rot: x @ r.T)
        tasks.append(
            Task(
                rotate(src.train_x), src.train_y + shift, rotate(src.test_x), src.test_y + shift,
                offset, offset + src.n_classes,
            )
        )
        offset += src.n_classes
    desc = dict(generator="rotated", base=base.descriptor, angles=[float(a) for a in angles], seed=seed)
    return TaskStream(tasks, base.dim, desc)


@dataclass
class CsvSchema:
    """How to read a stream CSV.

    ``label_to_task`` maps every label to its task; task class ranges must be
    contiguous.  Each class's rows are split 80/20 in file order.
    """

    label_to_task: Mapping[int, int]
    header: bool = False


def load_csv_stream(path, schema: CsvSchema) -> TaskStream:
    path = Path(path)
    label_to_task = {int(k): int(v) for k, v in schema.label_to_task.items()}
    per_class: dict[int, list[list[float]]] = {}
    dim = None
    with path.open(newline="", encoding="utf-8") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if lineno == 1 and schema.header:
                continue
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) < 2:
                raise CsvFormatError(path, lineno, "need at least one feature column and a label")
            if dim is None:
                dim = len(row) - 1
            elif len(row) - 1 != dim:
                raise CsvFormatError(path, lineno, f"expected {dim} features, found {len(row) - 1}")
            try:
                feats = [float(c) for c in row[:-1]]
            except ValueError as exc:
                raise CsvFormatError(path, lineno, f"non-numeric feature ({exc})") from None
            try:
                label = int(row[-1])
            except ValueError:
                raise CsvFormatError(path, lineno, f"label {row[-1]!r} is not an integer") from None
            if not all(math.isfinite(v) for v in feats):
                raise CsvFormatError(path, lineno, "non-finite feature")
            if label not in label_to_task:
                raise CsvFormatError(path, lineno, f"unknown label {label}")
            per_class.setdefault(label, []).append(feats)
    if dim is None:
        raise CsvFormatError(path, 0, "file has no data rows")
    n_tasks = max(label_to_task.values()) + 1
    tasks = []
    start = 0
    for t in range(n_tasks):
        labels = sorted(l for l, tt in label_to_task.items() if tt == t and l in per_class)
        if not labels:
            raise ValueError(f"task {t} has no rows in {path}")
        if labels != list(range(start, start + len(labels))):
            raise ValueError(f"task {t} labels {labels} are not the contiguous range starting at {start}")
        xs = [np.array(per_class[l], dtype=np.float64) for l in labels]
        tasks.append(_split_by_class(xs, labels, start, start + len(labels), dim))
        start += len(labels)
    return TaskStream(tasks, dim, dict(generator="csv", path=str(path)))


def write_csv_stream(stream: TaskStream, path, header: bool = False) -> CsvSchema:
    """Write rows class by class (train rows then test rows) so :func:`load_csv_stream` round-trips."""
    path = Path(path)
    label_to_task = {}
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if header:
            w.writerow([f"x{i}" for i in range(stream.dim)] + ["label"])
        for t, task in enumerate(stream.tasks):
            for c in range(task.class_start, task.class_stop):
                label_to_task[c] = t
                rows = np.concatenate([task.train_x[task.train_y == c], task.test_x[task.test_y == c]])
                for x in rows:
                    w.writerow([repr(float(v)) for v in x] + [c])
    return CsvSchema(label_to_task, header)
