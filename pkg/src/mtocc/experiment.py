"""Experiment configuration, orchestration and result tables."""

import configparser
import csv
import hashlib
import json
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np

from . import kernels, ocksr
from .errors import InputError, MTOCError, ParameterError
from .linear import LinearHyperparams, train_linear
from .model import C_OCKSR, LINEAR, NONLINEAR, OCKSR, SPARSE, VARIANTS, TrainedModel
from .nonlinear import NonlinearHyperparams, train_nonlinear, training_responses
from .data import DatasetBundle
from .persist import persist_model
from .sparse import SparseHyperparams, train_sparse

log = logging.getLogger(__name__)

DEFAULT_GRID = (1.0, 1e-1, 1e-2, 1e-3, 1e-4, 1e-5, 1e-6)


@dataclass
class ExperimentConfig:
    """What to train and how.

    ``gamma`` is the first-layer regularisation weight shared by every
    variant (it overrides ``gamma_L1``/``gamma_N1`` of the per-variant
    settings). ``sigma = None`` selects the median heuristic on the
    training features.
    """

    variant: str = C_OCKSR
    gamma: float = 1.0
    sigma: float = None
    seed: int = 0
    repetitions: int = 1
    resplit: bool = False
    workers: int = 1
    linear: LinearHyperparams = field(default_factory=LinearHyperparams)
    nonlinear: NonlinearHyperparams = field(default_factory=NonlinearHyperparams)
    sparse: SparseHyperparams = field(default_factory=SparseHyperparams)

    def validate(self):
        if self.variant not in VARIANTS:
            raise ParameterError(f"unknown variant {self.variant!r}; choose from {VARIANTS}")
        if not self.gamma > 0:
            raise ParameterError("first-layer gamma must be positive")
        if self.sigma is not None and not self.sigma > 0:
            raise ParameterError("sigma must be positive")
        if self.repetitions < 1 or self.workers < 1:
            raise ParameterError("repetitions and workers must be at least 1")
        if self.variant == LINEAR:
            self.linear_hp().validate()
        elif self.variant == NONLINEAR:
            self.nonlinear_hp().validate()
        elif self.variant == SPARSE:
            self.sparse_hp().validate()
        return self

    def linear_hp(self):
        return replace(self.linear, gamma_L1=self.gamma)

    def nonlinear_hp(self):
        return replace(self.nonlinear, gamma_N1=self.gamma)

    def sparse_hp(self):
        return replace(self.sparse, gamma_N1=self.gamma)

    def fingerprint(self):
        blob = json.dumps(asdict(self), sort_keys=True, default=str)
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()

    @classmethod
    def from_file(cls, path, **overrides):
        """Read an INI-style key-value file.

        Keys of the ``[experiment]`` section map to the top-level fields;
        ``[linear]``, ``[nonlinear]`` and ``[sparse]`` sections map to the
        per-variant hyperparameters.
        """
        parser = configparser.ConfigParser()
        parser.optionxform = str  # keys such as gamma_N2 are case-sensitive
        try:
            with open(path) as fh:
                parser.read_file(fh)
        except OSError as exc:
            raise ParameterError(f"cannot read config {path}: {exc}") from exc
        except configparser.Error as exc:
            raise ParameterError(f"malformed config {path}: {exc}") from exc
        cfg = cls()
        for section in parser.sections():
            if section == "experiment":
                cfg = _apply(cfg, parser[section], section)
            elif section in ("linear", "nonlinear", "sparse"):
                sub = _apply(getattr(cfg, section), parser[section], section)
                cfg = replace(cfg, **{section: sub})
            else:
                raise ParameterError(f"unknown config section [{section}]")
        cfg = replace(cfg, **{k: v for k, v in overrides.items() if v is not None})
        return cfg.validate()


def _apply(obj, items, section):
    known = {f.name: f for f in fields(obj)}
    updates = {}
    for key, raw in items.items():
        if key not in known or key in ("linear", "nonlinear", "sparse"):
            raise ParameterError(f"unknown key {key!r} in [{section}]")
        default = getattr(obj, key)
        try:
            if key == "sigma":
                value = None if raw.strip().lower() in ("", "median", "none") else float(raw)
            elif key == "gamma_init":
                value = None if raw.strip().lower() in ("", "none") else float(raw)
            elif isinstance(default, bool):
                value = raw.strip().lower() in ("1", "true", "yes", "on")
            elif isinstance(default, int):
                value = int(raw)
            elif isinstance(default, float):
                value = float(raw)
            else:
                value = raw.strip()
        except ValueError:
            raise ParameterError(f"bad value {raw!r} for {key} in [{section}]") from None
        updates[key] = value
    return replace(obj, **updates)


@dataclass
class ResultRow:
    variant: str
    task: int
    repetition: int
    auc: float
    gamma: float = None
    sse: float = None
    failed: bool = False
    error: str = ""


@dataclass
class ResultTable:
    rows: list = field(default_factory=list)
    traces: dict = field(default_factory=dict)

    def extend(self, other):
        self.rows.extend(other.rows)
        self.traces.update(other.traces)

    def select(self, variant=None, gamma=None):
        return [
            r for r in self.rows
            if (variant is None or r.variant == variant)
            and (gamma is None or r.gamma == gamma)
        ]

    def mean_auc(self, variant=None, gamma=None):
        vals = [r.auc for r in self.select(variant, gamma) if not r.failed]
        return float(np.mean(vals)) if vals else float("nan")

    def means(self):
        variants = sorted({r.variant for r in self.rows})
        return {v: self.mean_auc(v) for v in variants}

    @property
    def failures(self):
        return [r for r in self.rows if r.failed]

    def to_csv(self, path):
        sweep = any(r.gamma is not None for r in self.rows)
        cols = ["variant", "task", "repetition", "auc"]
        if sweep:
            cols += ["gamma", "sse"]
        cols += ["failed", "error"]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(cols)
            for r in self.rows:
                w.writerow([_fmt(getattr(r, c)) for c in cols])

    @classmethod
    def read_csv(cls, path):
        rows = []
        with open(path, newline="") as fh:
            for rec in csv.DictReader(fh):
                rows.append(
                    ResultRow(
                        variant=rec["variant"],
                        task=int(rec["task"]),
                        repetition=int(rec["repetition"]),
                        auc=float(rec["auc"]),
                        gamma=_opt_float(rec.get("gamma")),
                        sse=_opt_float(rec.get("sse")),
                        failed=rec.get("failed") == "True",
                        error=rec.get("error", ""),
                    )
                )
        return cls(rows=rows)

    def write_traces(self, path):
        with open(path, "w") as fh:
            json.dump(self.traces, fh, sort_keys=True)

    def save(self, out_dir, stem="results"):
        os.makedirs(out_dir, exist_ok=True)
        self.to_csv(os.path.join(out_dir, f"{stem}.csv"))
        self.write_traces(os.path.join(out_dir, f"{stem}_traces.json"))
        with open(os.path.join(out_dir, f"{stem}_means.json"), "w") as fh:
            json.dump(self.means(), fh, sort_keys=True)


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return "" if v is None else v


def _opt_float(s):
    return None if s in (None, "") else float(s)


def audit_hygiene(bundle, fit_rows):
    """Fail if any row used to build a fitting kernel is a test row."""
    fit_rows = np.asarray(fit_rows)
    leaked = np.intersect1d(fit_rows, np.flatnonzero(~bundle.is_train))
    if leaked.size:
        raise InputError(f"test rows {leaked[:5].tolist()} used for fitting")


def train_model(config, bundle):
    """Build the training kernel, fit ``config.variant`` and attach scoring refs."""
    fit_rows = bundle.train_idx
    audit_hygiene(bundle, fit_rows)
    X = bundle.X[fit_rows]
    tid = bundle.task[fit_rows]
    T = bundle.n_tasks
    sigma = config.sigma if config.sigma is not None else kernels.median_heuristic_width(X)
    K = kernels.rbf_gram(X, sigma)
    model = fit_variant(config, K, tid, T)
    model.sigma = float(sigma)
    model.X_train = X
    model.fingerprint = config.fingerprint()
    model.target_means = ocksr.target_means(fitted_responses(model, K), tid, T)
    return model


def fit_variant(config, K, task_ids, T):
    v = config.variant
    if v == OCKSR:
        return TrainedModel(variant=v, A=ocksr.fit_ocksr(K, task_ids, T, config.gamma))
    if v == C_OCKSR:
        return TrainedModel(variant=v, A=ocksr.fit_c_ocksr(K, task_ids, T, config.gamma))
    R = ocksr.build_responses(task_ids, T)
    if v == LINEAR:
        return train_linear(K, R, config.linear_hp())
    if v == NONLINEAR:
        return train_nonlinear(K, task_ids, R, config.nonlinear_hp())
    if v == SPARSE:
        return train_sparse(K, task_ids, R, config.sparse_hp())
    raise ParameterError(f"unknown variant {v!r}")


def fitted_responses(model, K):
    """Final responses of the training samples."""
    if model.variant in (NONLINEAR, SPARSE):
        return training_responses(model)
    return model.responses_from_kernel(K)


def training_sse(model, bundle):
    """Per-task sum of squared errors of the training responses.

    OCKSR is judged on each task's own rows against unit targets; the joint
    variants on all training rows against one-hot targets.
    """
    X = bundle.X_train
    tid = bundle.task_train
    K = kernels.rbf_gram(X, model.sigma)
    resp = fitted_responses(model, K)
    R = ocksr.build_responses(tid, bundle.n_tasks)
    out = []
    for t in range(bundle.n_tasks):
        rows = tid == t if model.variant == OCKSR else slice(None)
        out.append(float(np.sum((resp[rows, t] - R[rows, t]) ** 2)))
    return out


def evaluate_model(model, bundle):
    """Per-task AUC on the bundle's test rows."""
    test = ~bundle.is_train
    resp = model.responses(bundle.X[test])
    test_rows = np.flatnonzero(test)
    pos = {r: i for i, r in enumerate(test_rows)}
    aucs = []
    for t in range(bundle.n_tasks):
        idx = bundle.test_idx(t)
        y = resp[[pos[r] for r in idx], t]
        aucs.append(ocksr.auc(ocksr.score_task(y, model.target_means[t]), bundle.is_target[idx]))
    return aucs


def _one_repetition(config, bundle, rep, out_dir, with_sse):
    seed = config.seed + rep
    b = bundle.resplit(seed) if config.resplit else bundle
    rows = []
    trace = None
    try:
        model = train_model(config, b)
        aucs = evaluate_model(model, b)
        sse = training_sse(model, b) if with_sse else [None] * b.n_tasks
        for t, a in enumerate(aucs):
            rows.append(ResultRow(config.variant, t, rep, a, sse=sse[t]))
        trace = model.trace.to_dict()
        if out_dir is not None:
            mdir = os.path.join(out_dir, "models")
            os.makedirs(mdir, exist_ok=True)
            persist_model(model, os.path.join(mdir, f"{config.variant}_rep{rep}.mtoc"))
    except MTOCError as exc:
        log.warning("%s repetition %d failed: %s", config.variant, rep, exc)
        for t in range(b.n_tasks):
            rows.append(
                ResultRow(config.variant, t, rep, float("nan"), failed=True, error=str(exc))
            )
        trace = getattr(getattr(exc, "trace", None), "to_dict", lambda: None)()
    return rows, trace


def run_experiment(config, bundle, out_dir=None, with_sse=False):
    """Train and evaluate ``config.variant`` for every repetition.

    Repetition ``r`` uses seed ``config.seed + r`` (for re-partitioning when
    ``config.resplit`` is set). Failures are recorded in the table and do
    not abort the experiment.
    """
    config.validate()
    bundle.validate()
    reps = range(config.repetitions)

    def job(rep):
        return _one_repetition(config, bundle, rep, out_dir, with_sse)

    if config.workers > 1:
        with ThreadPoolExecutor(max_workers=config.workers) as pool:
            results = list(pool.map(job, reps))
    else:
        results = [job(r) for r in reps]

    table = ResultTable()
    for rep, (rows, trace) in zip(reps, results):
        table.rows.extend(rows)
        if trace is not None:
            table.traces[f"{config.variant}/{rep}"] = trace
    if out_dir is not None:
        table.save(out_dir)
    return table


def sweep_regularization(config, bundle, grid=DEFAULT_GRID, variants=None, out_dir=None):
    """Train every variant at every first-layer ``gamma`` of ``grid``.

    Returns the full :class:`ResultTable` and one summary row per
    ``(gamma, variant)`` with the mean AUC and mean training SSE.
    """
    variants = list(variants or [config.variant])
    table = ResultTable()
    curves = []
    for gamma in grid:
        for variant in variants:
            cfg = replace(config, variant=variant, gamma=float(gamma))
            sub = run_experiment(cfg, bundle, with_sse=True)
            for r in sub.rows:
                r.gamma = float(gamma)
            table.rows.extend(sub.rows)
            table.traces.update({f"{k}/gamma={gamma!r}": v for k, v in sub.traces.items()})
            ok = [r for r in sub.rows if not r.failed]
            curves.append(
                {
                    "gamma": float(gamma),
                    "variant": variant,
                    "mean_auc": float(np.mean([r.auc for r in ok])) if ok else float("nan"),
                    "sse": float(np.mean([r.sse for r in ok])) if ok else float("nan"),
                }
            )
    if out_dir is not None:
        table.save(out_dir, stem="sweep")
        with open(os.path.join(out_dir, "sweep_curves.csv"), "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=["gamma", "variant", "mean_auc", "sse"])
            w.writeheader()
            w.writerows(curves)
    return table, curves


def stratified_folds(task_ids, k, seed):
    """Fold id per training row; each task's rows are spread over all folds."""
    task_ids = np.asarray(task_ids)
    rng = np.random.default_rng(seed)
    fold = np.empty(task_ids.size, dtype=np.int64)
    for t in np.unique(task_ids):
        rows = np.flatnonzero(task_ids == t)
        if rows.size < k:
            raise InputError(f"task {int(t)} has {rows.size} training rows, fewer than {k} folds")
        fold[rng.permutation(rows)] = np.arange(rows.size) % k
    return fold


def cross_validate_gamma(config, bundle, grid=DEFAULT_GRID, k=3):
    """Pick the first-layer ``gamma`` by k-fold cross-validation on training rows.

    Folds are pooled over tasks and stratified by task. The score is the
    held-out squared error of the final responses against the one-hot
    targets (own-task column only for OCKSR). Test rows are never touched.

    Returns
    -------
    best : float
    errors : dict
        ``gamma -> mean held-out squared error``.
    """
    tid = bundle.task_train
    fold = stratified_folds(tid, k, config.seed)
    X = bundle.X_train
    T = bundle.n_tasks
    errors = {}
    for gamma in grid:
        cfg = replace(config, gamma=float(gamma)).validate()
        total = 0.0
        for f in range(k):
            fit, held = fold != f, fold == f
            sub = DatasetBundle(X[fit], tid[fit], np.ones(fit.sum(), bool),
                                np.ones(fit.sum(), bool), T)
            model = train_model(cfg, sub)
            resp = model.responses(X[held])
            R = ocksr.build_responses(tid[held], T)
            if cfg.variant == OCKSR:
                cols = tid[held]
                total += float(np.sum((resp[np.arange(cols.size), cols] - 1.0) ** 2))
            else:
                total += float(np.sum((resp - R) ** 2))
        errors[float(gamma)] = total / k
    best = min(errors, key=lambda g: (errors[g], -g))
    return best, errors
