"""Dataset container, CSV persistence, and train/val/test splits.

Dataset CSV::

    #schema=socialbnn-dataset/1
    scene_id,f00,...,f28,y_act00,...,y_act15,n_ratings_act00,...,n_ratings_act15

One row per (scene, geometry mode). ``y_actNN`` is the mean rating of action
NN for that row and is empty when the action was not rated on the row;
``n_ratingsNN`` is the number of ratings behind the mean.

Annotations CSV::

    #schema=socialbnn-annotations/1
    scene_id,action_id,rater_index,rating
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Optional

import numpy as np

N_FEATURES = 29
N_ACTIONS = 16

DATASET_SCHEMA = "socialbnn-dataset/1"
ANNOTATIONS_SCHEMA = "socialbnn-annotations/1"

FEATURE_COLUMNS = [f"f{i:02d}" for i in range(N_FEATURES)]
LABEL_COLUMNS = [f"y_act{i:02d}" for i in range(N_ACTIONS)]
COUNT_COLUMNS = [f"n_ratings_act{i:02d}" for i in range(N_ACTIONS)]
DATASET_HEADER = ["scene_id"] + FEATURE_COLUMNS + LABEL_COLUMNS + COUNT_COLUMNS
ANNOTATION_HEADER = ["scene_id", "action_id", "rater_index", "rating"]


class DataFormatError(ValueError):
    pass


@dataclass
class Dataset:
    scene_ids: np.ndarray  # (N,) int
    features: np.ndarray  # (N, 29)
    labels: np.ndarray  # (N, 16), NaN where unlabeled
    counts: np.ndarray  # (N, 16) int
    provenance: str = "synthetic"

    def __post_init__(self):
        n = len(self.scene_ids)
        if self.features.shape != (n, N_FEATURES):
            raise DataFormatError(f"features must have shape ({n}, {N_FEATURES}), got {self.features.shape}")
        if self.labels.shape != (n, N_ACTIONS) or self.counts.shape != (n, N_ACTIONS):
            raise DataFormatError("labels and counts must have one column per action")
        lab = self.labels[~np.isnan(self.labels)]
        if lab.size and (lab.min() < 1.0 or lab.max() > 5.0):
            raise DataFormatError("labels must lie in [1, 5]")

    def __len__(self) -> int:
        return len(self.scene_ids)

    @property
    def mask(self) -> np.ndarray:
        return ~np.isnan(self.labels)

    def subset(self, rows) -> "Dataset":
        rows = np.asarray(rows)
        return Dataset(
            self.scene_ids[rows], self.features[rows], self.labels[rows], self.counts[rows], self.provenance
        )

    def select_scenes(self, scene_ids) -> "Dataset":
        return self.subset(np.flatnonzero(np.isin(self.scene_ids, np.asarray(list(scene_ids)))))

    def unique_scenes(self) -> np.ndarray:
        return np.unique(self.scene_ids)

    def equals(self, other: "Dataset") -> bool:
        return (
            np.array_equal(self.scene_ids, other.scene_ids)
            and np.array_equal(self.features, other.features)
            and np.array_equal(self.labels, other.labels, equal_nan=True)
            and np.array_equal(self.counts, other.counts)
        )

    @classmethod
    def empty(cls, provenance: str = "synthetic") -> "Dataset":
        return cls(
            np.zeros(0, dtype=np.int64),
            np.zeros((0, N_FEATURES)),
            np.zeros((0, N_ACTIONS)),
            np.zeros((0, N_ACTIONS), dtype=np.int64),
            provenance,
        )


def _fmt(v: float) -> str:
    # repr gives the shortest string that round-trips exactly
    return "" if math.isnan(v) else repr(float(v))


def write_csv(ds: Dataset, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(f"#schema={DATASET_SCHEMA}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(DATASET_HEADER)
        for i in range(len(ds)):
            w.writerow(
                [str(int(ds.scene_ids[i]))]
                + [_fmt(v) for v in ds.features[i]]
                + [_fmt(v) for v in ds.labels[i]]
                + [str(int(c)) for c in ds.counts[i]]
            )


def _read_schema(fh, path, expected: str) -> None:
    first = fh.readline().strip()
    if not first.startswith("#schema="):
        raise DataFormatError(f"{path}:1: missing '#schema=' line")
    version = first[len("#schema="):]
    if version != expected:
        raise DataFormatError(f"{path}:1: unsupported schema {version!r}, expected {expected!r}")


def read_csv(path, provenance: str = "synthetic") -> Dataset:
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as fh:
        _read_schema(fh, path, DATASET_SCHEMA)
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise DataFormatError(f"{path}:2: missing header row")
        n_feat = sum(1 for h in header if h.startswith("f") and h[1:].isdigit())
        if n_feat != N_FEATURES:
            raise DataFormatError(f"{path}:2: expected {N_FEATURES} feature columns, found {n_feat}")
        if header != DATASET_HEADER:
            raise DataFormatError(f"{path}:2: malformed header, expected {len(DATASET_HEADER)} documented columns")
        ids, feats, labels, counts = [], [], [], []
        for lineno, row in enumerate(reader, start=3):
            if len(row) != len(DATASET_HEADER):
                raise DataFormatError(f"{path}:{lineno}: expected {len(DATASET_HEADER)} columns, found {len(row)}")
            try:
                ids.append(int(row[0]))
                feats.append([float(v) for v in row[1:30]])
                y = [float(v) if v != "" else math.nan for v in row[30:46]]
                counts.append([int(v) for v in row[46:62]])
            except ValueError as exc:
                raise DataFormatError(f"{path}:{lineno}: {exc}") from None
            for j, v in enumerate(y):
                if not math.isnan(v) and not 1.0 <= v <= 5.0:
                    raise DataFormatError(f"{path}:{lineno}: label {LABEL_COLUMNS[j]}={v} outside [1, 5]")
            labels.append(y)
    n = len(ids)
    return Dataset(
        np.array(ids, dtype=np.int64),
        np.array(feats, dtype=np.float64).reshape(n, N_FEATURES),
        np.array(labels, dtype=np.float64).reshape(n, N_ACTIONS),
        np.array(counts, dtype=np.int64).reshape(n, N_ACTIONS),
        provenance,
    )


def write_annotations(ratings: np.ndarray, path, scene_ids=None) -> None:
    """``ratings`` has shape (n_scenes, 16, n_raters)."""
    ratings = np.asarray(ratings)
    scene_ids = np.arange(ratings.shape[0]) if scene_ids is None else scene_ids
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(f"#schema={ANNOTATIONS_SCHEMA}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(ANNOTATION_HEADER)
        for s, sid in enumerate(scene_ids):
            for a in range(ratings.shape[1]):
                for r in range(ratings.shape[2]):
                    w.writerow([int(sid), a, r, int(ratings[s, a, r])])


def read_annotations(path) -> tuple[np.ndarray, np.ndarray]:
    """Returns ``(scene_ids, ratings)`` with ratings shaped (n_scenes, 16, n_raters)."""
    path = Path(path)
    entries = {}
    with open(path, newline="", encoding="utf-8") as fh:
        _read_schema(fh, path, ANNOTATIONS_SCHEMA)
        reader = csv.reader(fh)
        if next(reader, None) != ANNOTATION_HEADER:
            raise DataFormatError(f"{path}:2: malformed header, expected {ANNOTATION_HEADER}")
        for lineno, row in enumerate(reader, start=3):
            if len(row) != 4:
                raise DataFormatError(f"{path}:{lineno}: expected 4 columns, found {len(row)}")
            try:
                sid, a, r, v = (int(t) for t in row)
            except ValueError as exc:
                raise DataFormatError(f"{path}:{lineno}: {exc}") from None
            if not 1 <= v <= 5:
                raise DataFormatError(f"{path}:{lineno}: rating {v} outside 1..5")
            if not 0 <= a < N_ACTIONS:
                raise DataFormatError(f"{path}:{lineno}: action {a} outside 0..15")
            entries[(sid, a, r)] = v
    if not entries:
        return np.zeros(0, dtype=np.int64), np.zeros((0, N_ACTIONS, 0), dtype=int)
    sids = np.array(sorted({k[0] for k in entries}), dtype=np.int64)
    n_raters = max(k[2] for k in entries) + 1
    out = np.zeros((len(sids), N_ACTIONS, n_raters), dtype=int)
    index = {s: i for i, s in enumerate(sids)}
    for (sid, a, r), v in entries.items():
        out[index[sid], a, r] = v
    if np.any(out == 0):
        raise DataFormatError(f"{path}: ratings matrix is incomplete")
    return sids, out


def to_long_format(ds: Dataset, scene_ids: np.ndarray, ratings: np.ndarray) -> Dataset:
    """One row per (scene row, rater) carrying that rater's individual ratings."""
    index = {int(s): i for i, s in enumerate(scene_ids)}
    rows_ids, feats, labels = [], [], []
    n_raters = ratings.shape[2]
    for i in range(len(ds)):
        s = index[int(ds.scene_ids[i])]
        acts = np.flatnonzero(ds.mask[i])
        for r in range(n_raters):
            y = np.full(N_ACTIONS, np.nan)
            y[acts] = ratings[s, acts, r]
            rows_ids.append(ds.scene_ids[i])
            feats.append(ds.features[i])
            labels.append(y)
    n = len(rows_ids)
    labels = np.array(labels).reshape(n, N_ACTIONS)
    return Dataset(
        np.array(rows_ids, dtype=np.int64),
        np.array(feats).reshape(n, N_FEATURES),
        labels,
        (~np.isnan(labels)).astype(np.int64),
        ds.provenance,
    )


# --------------------------------------------------------------------------
# splits


class Variant(str, Enum):
    BNN = "BNN"
    BNN_2CL = "BNN_2CL"
    BNN_16CL = "BNN_16CL"

    @classmethod
    def parse(cls, s: str) -> "Variant":
        aliases = {"bnn": cls.BNN, "2cl": cls.BNN_2CL, "16cl": cls.BNN_16CL}
        return aliases.get(s.lower()) or cls(s.upper().replace("-", "_"))


class SampleUnit(str, Enum):
    ANNOTATOR = "annotator"  # one rating response for one (scene, mode) row
    ROW = "row"  # one (scene, mode) feature row


@dataclass(frozen=True)
class TaskSpec:
    task_id: int
    action_indices: tuple[int, ...]
    label: str


def tasks_for(variant: Variant) -> list[TaskSpec]:
    from .scenegen import ACTIONS, ARROW_ACTIONS, CIRCLE_ACTIONS

    variant = Variant(variant)
    if variant is Variant.BNN:
        return [TaskSpec(0, tuple(range(N_ACTIONS)), "all actions")]
    if variant is Variant.BNN_2CL:
        return [TaskSpec(0, CIRCLE_ACTIONS, "within a circle"), TaskSpec(1, ARROW_ACTIONS, "along an arrow")]
    return [TaskSpec(a.index, (a.index,), f"{a.mode.value}: {a.name}") for a in ACTIONS]


_DEFAULT_VAL = {Variant.BNN: 1000, Variant.BNN_2CL: 400, Variant.BNN_16CL: 100}


@dataclass(frozen=True)
class SplitSpec:
    variant: Variant = Variant.BNN
    test_scenes: int = 100
    val_samples: Optional[int] = None  # per task; None picks the variant default
    unit: SampleUnit = SampleUnit.ANNOTATOR
    ratings_per_row: int = 15

    def __post_init__(self):
        object.__setattr__(self, "variant", Variant(self.variant))
        object.__setattr__(self, "unit", SampleUnit(self.unit))
        if self.val_samples is None:
            object.__setattr__(self, "val_samples", _DEFAULT_VAL[self.variant])

    def val_scenes_per_task(self, task: TaskSpec) -> int:
        """Whole scenes needed to hold at least ``val_samples`` samples of ``task``."""
        from .scenegen import ARROW_ACTIONS, CIRCLE_ACTIONS

        modes = int(any(a in CIRCLE_ACTIONS for a in task.action_indices)) + int(
            any(a in ARROW_ACTIONS for a in task.action_indices)
        )
        per_scene = modes * (self.ratings_per_row if self.unit is SampleUnit.ANNOTATOR else 1)
        return math.ceil(self.val_samples / per_scene)


@dataclass
class Split:
    train: Dataset
    val: list[Dataset]  # one per task
    test: Dataset
    tasks: list[TaskSpec]

    @property
    def val_all(self) -> Dataset:
        return concat(self.val)


def concat(parts: list[Dataset]) -> Dataset:
    if not parts:
        return Dataset.empty()
    return Dataset(
        np.concatenate([p.scene_ids for p in parts]),
        np.concatenate([p.features for p in parts]),
        np.concatenate([p.labels for p in parts]),
        np.concatenate([p.counts for p in parts]),
        parts[0].provenance,
    )


def count_samples(ds: Dataset, task: TaskSpec, unit: SampleUnit) -> int:
    """Samples of ``task`` in ``ds``: rows touching the task, weighted by ratings in annotator units."""
    sup = ds.mask[:, list(task.action_indices)]
    rows = sup.any(axis=1)
    if SampleUnit(unit) is SampleUnit.ROW:
        return int(rows.sum())
    return int(np.where(sup, ds.counts[:, list(task.action_indices)], 0).max(axis=1, initial=0)[rows].sum())


def split(ds: Dataset, spec: SplitSpec, seed: int) -> Split:
    """Scene-level shuffle; the first ``test_scenes`` scenes form the test set for every variant.

    Validation scenes for each task follow in the same shuffle, then the rest
    is training data. Every task's validation set is restricted to the rows
    that carry that task's labels.
    """
    scenes = ds.unique_scenes()
    order = np.random.default_rng([seed, 7]).permutation(scenes)
    tasks = tasks_for(spec.variant)
    n_val = [spec.val_scenes_per_task(t) for t in tasks]
    if len(order) < spec.test_scenes + sum(n_val) + 1:
        raise ValueError(
            f"dataset has {len(order)} scenes, need more than {spec.test_scenes + sum(n_val)} "
            f"for {spec.variant.value} (test {spec.test_scenes}, validation {sum(n_val)})"
        )
    test = ds.select_scenes(order[: spec.test_scenes])
    pos = spec.test_scenes
    vals = []
    for t, k in zip(tasks, n_val):
        part = ds.select_scenes(order[pos : pos + k])
        keep = part.mask[:, list(t.action_indices)].any(axis=1)
        vals.append(part.subset(np.flatnonzero(keep)))
        pos += k
    train = ds.select_scenes(order[pos:])
    return Split(train=train, val=vals, test=test, tasks=tasks)
