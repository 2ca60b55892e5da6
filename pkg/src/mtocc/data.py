"""Dataset bundles: CSV ingestion, synthetic related tasks, MNIST recipe."""

import csv
import gzip
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import InputError, ParseError, SchemaError

TRAIN = "train"
TEST = "test"
TARGET = "target"
NONTARGET = "nontarget"


@dataclass
class DatasetBundle:
    """Samples of ``T`` one-class tasks with a train/test partition.

    Training rows come first, grouped contiguously by task; every training
    row is a positive of its task. Test rows carry the task whose test set
    they belong to and a target/non-target label.
    """

    X: np.ndarray
    task: np.ndarray
    is_train: np.ndarray
    is_target: np.ndarray
    n_tasks: int
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float64)
        self.task = np.asarray(self.task, dtype=np.int64)
        self.is_train = np.asarray(self.is_train, dtype=bool)
        self.is_target = np.asarray(self.is_target, dtype=bool)

    @property
    def train_idx(self):
        return np.flatnonzero(self.is_train)

    @property
    def X_train(self):
        return self.X[self.is_train]

    @property
    def task_train(self):
        return self.task[self.is_train]

    def test_idx(self, t):
        return np.flatnonzero(~self.is_train & (self.task == t))

    def validate(self):
        n = self.X.shape[0]
        if self.X.ndim != 2 or not np.all(np.isfinite(self.X)):
            raise InputError("features must be a finite 2-D matrix")
        for name in ("task", "is_train", "is_target"):
            if getattr(self, name).shape != (n,):
                raise InputError(f"{name} must have one entry per sample")
        if n and (self.task.min() < 0 or self.task.max() >= self.n_tasks):
            raise InputError(f"task ids must lie in [0, {self.n_tasks})")
        tt = self.task_train
        if np.any(np.diff(tt) < 0):
            raise InputError("training samples are not grouped by task")
        if np.any(~self.is_target[self.is_train]):
            raise InputError("training rows must all be positives of their task")
        for t in range(self.n_tasks):
            if not np.any(tt == t):
                raise InputError(f"task {t} has no training positives")
            lab = self.is_target[self.test_idx(t)]
            if lab.size and (lab.all() or not lab.any()):
                raise InputError(f"test set of task {t} lacks one of the two labels")
        return self

    def subset(self, rows):
        rows = np.asarray(rows)
        return replace(
            self,
            X=self.X[rows],
            task=self.task[rows],
            is_train=self.is_train[rows],
            is_target=self.is_target[rows],
            meta=dict(self.meta),
        )

    def resplit(self, seed):
        """Redraw which target samples of each task are used for training.

        Each task keeps its number of training positives; its pool is its
        training rows plus its test targets. Non-target test rows are kept.
        """
        rng = np.random.default_rng(seed)
        is_train = self.is_train.copy()
        for t in range(self.n_tasks):
            pool = np.flatnonzero((self.task == t) & self.is_target)
            n_train = int(np.sum(self.is_train & (self.task == t)))
            chosen = rng.choice(pool, size=n_train, replace=False)
            is_train[pool] = False
            is_train[chosen] = True
        b = replace(self, is_train=is_train, meta=dict(self.meta, resplit_seed=int(seed)))
        return _reorder(b)


def _reorder(bundle):
    """Stable order: training rows sorted by task, then test rows."""
    key = np.where(bundle.is_train, bundle.task, bundle.n_tasks)
    order = np.argsort(key, kind="stable")
    b = bundle.subset(order)
    prev = bundle.meta.get("order")
    b.meta["order"] = (np.asarray(prev)[order] if prev is not None else order).tolist()
    return b


def load_csv(path):
    """Read a dataset CSV.

    The header names feature columns ``f0 .. f{d-1}`` plus ``task``,
    ``split`` (``train``/``test``) and ``label`` (``target``/``nontarget``,
    test rows only). Rows are re-ordered so training samples are grouped by
    task; ``meta["order"]`` maps bundle rows to file rows.
    """
    opener = gzip.open if str(path).endswith(".gz") else open
    with opener(path, "rt", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise SchemaError(f"{path}: empty file") from None
        missing = [c for c in ("task", "split", "label") if c not in header]
        feats = [h for h in header if h.startswith("f") and h[1:].isdigit()]
        feats.sort(key=lambda h: int(h[1:]))
        if not feats:
            missing.append("f0")
        elif [int(h[1:]) for h in feats] != list(range(len(feats))):
            raise SchemaError(f"{path}: feature columns must be f0..f{len(feats) - 1}")
        if missing:
            raise SchemaError(f"{path}: missing required column(s) {', '.join(missing)}")
        fcol = [header.index(h) for h in feats]
        ti, si, li = header.index("task"), header.index("split"), header.index("label")
        X, task, is_train, is_target = [], [], [], []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise ParseError(f"expected {len(header)} fields, got {len(row)}", lineno)
            try:
                X.append([float(row[j]) for j in fcol])
            except ValueError:
                raise ParseError("non-numeric feature value", lineno) from None
            try:
                task.append(int(row[ti]))
            except ValueError:
                raise ParseError(f"task id {row[ti]!r} is not an integer", lineno) from None
            split = row[si].strip()
            if split not in (TRAIN, TEST):
                raise ParseError(f"split must be train or test, got {split!r}", lineno)
            label = row[li].strip()
            if split == TEST and label not in (TARGET, NONTARGET):
                raise ParseError(f"test label must be target or nontarget, got {label!r}", lineno)
            if split == TRAIN and label not in ("", TARGET):
                raise ParseError("training rows must be unlabeled or target", lineno)
            is_train.append(split == TRAIN)
            is_target.append(split == TRAIN or label == TARGET)
    if not X:
        raise SchemaError(f"{path}: no data rows")
    X = np.array(X)
    task = np.array(task)
    if not np.all(np.isfinite(X)):
        raise ParseError("non-finite feature value")
    if task.min() < 0:
        raise ParseError("negative task id")
    bundle = DatasetBundle(
        X, task, is_train, is_target, int(task.max()) + 1, meta={"source": str(path)}
    )
    return _reorder(bundle).validate()


def write_csv(bundle, path):
    d = bundle.X.shape[1]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"f{j}" for j in range(d)] + ["task", "split", "label"])
        for x, t, tr, tg in zip(bundle.X, bundle.task, bundle.is_train, bundle.is_target):
            label = "" if tr else (TARGET if tg else NONTARGET)
            w.writerow([repr(float(v)) for v in x] + [int(t), TRAIN if tr else TEST, label])


def synth_tasks(
    T,
    n_per_task,
    d,
    rho,
    seed,
    n_test_pos=50,
    n_test_neg=100,
    spread=2.0,
    background_scale=3.0,
):
    """Related Gaussian one-class tasks.

    Task ``t`` draws targets from ``N(mu_t, I)`` with
    ``mu_t = rho_t * m + (1 - rho_t) * p_t``, ``m`` a shared latent mean and
    ``p_t`` a task-private mean, both ``N(0, spread^2 I)``. ``rho`` may be a
    scalar or one value per task. Half of each task's non-target test
    samples come from the other tasks' distributions, half from a broad
    background ``N(m, background_scale^2 I)``.
    """
    rho = np.broadcast_to(np.asarray(rho, dtype=np.float64), (T,))
    if np.any((rho < 0) | (rho > 1)):
        raise InputError("relatedness must lie in [0, 1]")
    rng = np.random.default_rng(seed)
    shared = rng.normal(scale=spread, size=d)
    private = rng.normal(scale=spread, size=(T, d))
    means = rho[:, None] * shared + (1.0 - rho[:, None]) * private

    X, task, is_train, is_target = [], [], [], []

    def add(rows, t, train, target):
        X.append(rows)
        task.extend([t] * len(rows))
        is_train.extend([train] * len(rows))
        is_target.extend([target] * len(rows))

    for t in range(T):
        add(means[t] + rng.normal(size=(n_per_task, d)), t, True, True)
    for t in range(T):
        add(means[t] + rng.normal(size=(n_test_pos, d)), t, False, True)
        others = [s for s in range(T) if s != t]
        n_other = n_test_neg // 2 if others else 0
        if n_other:
            src = rng.choice(others, size=n_other)
            add(means[src] + rng.normal(size=(n_other, d)), t, False, False)
        n_bg = n_test_neg - n_other
        add(shared + background_scale * rng.normal(size=(n_bg, d)), t, False, False)

    bundle = DatasetBundle(
        np.vstack(X),
        np.array(task),
        np.array(is_train),
        np.array(is_target),
        T,
        meta={
            "source": "synth",
            "seed": int(seed),
            "rho": rho.tolist(),
            "task_means": means.tolist(),
        },
    )
    return _reorder(bundle).validate()


def mnist_bundle(X, y, seed, n_train=15, n_test_pos=150, n_test_neg=1350, digits=range(10)):
    """One task per digit: 15 training positives, 150/1350 test samples.

    Non-target test samples of digit ``t`` are drawn from the other digits
    excluding every training sample, so no training image is ever tested.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y)
    digits = list(digits)
    rng = np.random.default_rng(seed)
    train_rows, pos_rows = [], []
    for t, digit in enumerate(digits):
        pool = rng.permutation(np.flatnonzero(y == digit))
        if pool.size < n_train + n_test_pos:
            raise InputError(f"digit {digit} has only {pool.size} samples")
        train_rows.append(pool[:n_train])
        pos_rows.append(pool[n_train : n_train + n_test_pos])
    used_train = np.concatenate(train_rows)
    rows, task, is_train, is_target = [], [], [], []
    for t in range(len(digits)):
        rows.extend(train_rows[t])
        task.extend([t] * n_train)
        is_train.extend([True] * n_train)
        is_target.extend([True] * n_train)
    for t, digit in enumerate(digits):
        neg_pool = np.setdiff1d(np.flatnonzero(np.isin(y, digits) & (y != digit)), used_train)
        neg = rng.choice(neg_pool, size=n_test_neg, replace=False)
        for rr, lab in ((pos_rows[t], True), (neg, False)):
            rows.extend(rr)
            task.extend([t] * len(rr))
            is_train.extend([False] * len(rr))
            is_target.extend([lab] * len(rr))
    rows = np.array(rows)
    bundle = DatasetBundle(
        X[rows], np.array(task), np.array(is_train), np.array(is_target), len(digits),
        meta={"source": "mnist", "seed": int(seed), "rows": rows.tolist()},
    )
    return bundle.validate()


def read_mnist_csv(path):
    """Load an ``image pixels..., digit`` CSV (optionally gzipped), pixels in [0, 1]."""
    data = np.loadtxt(path, delimiter=",")
    return data[:, :-1] / 255.0, data[:, -1].astype(np.int64)
