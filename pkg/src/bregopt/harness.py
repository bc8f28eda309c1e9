"""Benchmark harness: data IO, synthetic instances, clustering scores, and
multi-trial experiment drivers.

Experiments are described by a JSON-friendly configuration: a problem block
(kind, rank, data source, regularization), a solver block, a trial count and
output options.  A run executes ``trials`` independent repetitions with
per-trial start points and randomness derived from the master seed by
documented seed-splitting, then writes epoch-granular trace CSVs (pointwise
means and standard deviations across trials), a JSON summary, and optional
per-trial dumps and PGM images of the learned basis columns.

File formats: matrices are read and written as headerless CSV or as
MatrixMarket array files (column-major, ``real general``); all numeric text
output uses 17 significant digits so float64 values round-trip exactly.
"""

from __future__ import annotations

import hashlib
import json
import math
import time
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np
from scipy.optimize import linear_sum_assignment

from .estimators import check_geometric_decay, estimate_sample_lipschitz
from .kernels import FactorPair
from .numeric import as_dense
from .problems import Problem, build_knn_laplacian, build_problem
from .solver import RunResult, SolverConfig, rate_check, run

__all__ = [
    "ConfigError",
    "MatrixParseError",
    "SyntheticSpec",
    "DataConfig",
    "LaplacianConfig",
    "ClusteringConfig",
    "ProblemConfig",
    "ExperimentConfig",
    "load_matrix",
    "save_matrix",
    "write_pgm",
    "basis_images",
    "generate_synthetic",
    "init_point",
    "kmeans_accuracy",
    "run_experiment",
    "run_compare",
    "run_audit",
    "run_gen",
]

FLOAT_FMT = "%.17g"


class ConfigError(ValueError):
    """Invalid experiment configuration (maps to CLI exit code 1)."""


class MatrixParseError(ValueError):
    """A matrix file failed to parse; carries the path and 1-based line."""

    def __init__(self, path, line: int, message: str):
        super().__init__(f"{path}:{line}: {message}")
        self.path = str(path)
        self.line = line


# ---------------------------------------------------------------------------
# matrix file IO


def _detect_format(path: Path, fmt: str | None) -> str:
    if fmt is not None:
        if fmt not in ("csv", "mm"):
            raise ConfigError(f"unknown matrix format {fmt!r}")
        return fmt
    suffix = path.suffix.lower()
    if suffix == ".csv":
        return "csv"
    if suffix in (".mtx", ".mm"):
        return "mm"
    raise ConfigError(
        f"cannot infer matrix format from {path.name!r}; pass fmt='csv' or 'mm'"
    )


def load_matrix(path, fmt: str | None = None) -> np.ndarray:
    """Read a dense matrix from CSV or MatrixMarket array format."""
    path = Path(path)
    fmt = _detect_format(path, fmt)
    if fmt == "csv":
        return _load_csv(path)
    return _load_mm(path)


def save_matrix(path, a, fmt: str | None = None) -> None:
    path = Path(path)
    a = as_dense(a, "matrix")
    fmt = _detect_format(path, fmt)
    if fmt == "csv":
        _save_csv(path, a)
    else:
        _save_mm(path, a)


def _load_csv(path: Path) -> np.ndarray:
    rows: list[list[float]] = []
    width = None
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            parts = line.split(",")
            try:
                row = [float(p) for p in parts]
            except ValueError:
                raise MatrixParseError(path, lineno, f"not numeric: {line!r}") from None
            if width is None:
                width = len(row)
            elif len(row) != width:
                raise MatrixParseError(
                    path, lineno, f"expected {width} columns, found {len(row)}"
                )
            rows.append(row)
    if not rows:
        raise MatrixParseError(path, 1, "empty matrix file")
    try:
        return as_dense(rows, str(path))
    except ValueError as exc:
        raise MatrixParseError(path, 1, str(exc)) from None


def _save_csv(path: Path, a: np.ndarray) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        for row in a:
            fh.write(",".join(FLOAT_FMT % v for v in row))
            fh.write("\n")


def _load_mm(path: Path) -> np.ndarray:
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.readlines()
    if not lines:
        raise MatrixParseError(path, 1, "empty file")
    header = lines[0].split()
    if len(header) != 5 or header[0] != "%%MatrixMarket":
        raise MatrixParseError(path, 1, "missing '%%MatrixMarket' header")
    _, obj, layout, fld, symmetry = header
    if obj != "matrix" or layout != "array":
        raise MatrixParseError(
            path, 1, f"only 'matrix array' files are supported, got {obj} {layout}"
        )
    if fld not in ("real", "integer"):
        raise MatrixParseError(path, 1, f"unsupported field {fld!r}")
    if symmetry != "general":
        raise MatrixParseError(path, 1, f"unsupported symmetry {symmetry!r}")

    lineno = 1
    shape = None
    values: list[float] = []
    for lineno, raw in enumerate(lines[1:], start=2):
        line = raw.strip()
        if not line or line.startswith("%"):
            continue
        parts = line.split()
        if shape is None:
            if len(parts) != 2:
                raise MatrixParseError(
                    path, lineno, f"expected 'rows cols', got {line!r}"
                )
            try:
                m, n = int(parts[0]), int(parts[1])
            except ValueError:
                raise MatrixParseError(
                    path, lineno, f"non-integer dimensions: {line!r}"
                ) from None
            if m <= 0 or n <= 0:
                raise MatrixParseError(path, lineno, "dimensions must be positive")
            shape = (m, n)
            continue
        for p in parts:
            try:
                values.append(float(p))
            except ValueError:
                raise MatrixParseError(path, lineno, f"not numeric: {p!r}") from None
        if len(values) > shape[0] * shape[1]:
            raise MatrixParseError(
                path, lineno, f"more than {shape[0] * shape[1]} entries"
            )
    if shape is None:
        raise MatrixParseError(path, lineno, "missing dimension line")
    if len(values) != shape[0] * shape[1]:
        raise MatrixParseError(
            path,
            lineno,
            f"expected {shape[0] * shape[1]} entries, found {len(values)}",
        )
    # MatrixMarket array files store entries column by column.
    return np.asarray(values).reshape(shape, order="F")


def _save_mm(path: Path, a: np.ndarray) -> None:
    m, n = a.shape
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("%%MatrixMarket matrix array real general\n")
        fh.write(f"{m} {n}\n")
        for v in a.T.ravel():
            fh.write(FLOAT_FMT % v)
            fh.write("\n")


def write_pgm(path, image: np.ndarray) -> None:
    """Write a 2-D uint8 array as a binary (P5) PGM image."""
    image = np.asarray(image)
    if image.ndim != 2 or image.dtype != np.uint8:
        raise ValueError("write_pgm expects a 2-D uint8 array")
    h, w = image.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(image.tobytes())


def basis_images(u: np.ndarray, shape: tuple[int, int]) -> list[np.ndarray]:
    """Columns of U min-max normalized to uint8 and reshaped row-major.

    A constant column maps to all zeros.
    """
    u = as_dense(u, "u")
    h, w = int(shape[0]), int(shape[1])
    if h * w != u.shape[0]:
        raise ValueError(
            f"basis shape {h}x{w} does not match column length {u.shape[0]}"
        )
    images = []
    for j in range(u.shape[1]):
        col = u[:, j]
        lo, hi = col.min(), col.max()
        if hi > lo:
            scaled = np.round((col - lo) / (hi - lo) * 255.0)
        else:
            scaled = np.zeros_like(col)
        images.append(scaled.astype(np.uint8).reshape(h, w))
    return images


# ---------------------------------------------------------------------------
# synthetic data and start points


@dataclass(frozen=True)
class SyntheticSpec:
    """Low-rank clustered instance description.

    Rows are split into ``cluster_count`` contiguous groups; each group's
    rows share one dominant latent component, so row-clustering the true
    basis recovers the labels exactly.  Requires cluster_count <= r_true so
    distinct clusters get distinct components.
    """

    m: int
    d: int
    r_true: int
    cluster_count: int = 1
    noise_sigma: float = 0.0

    def __post_init__(self):
        if self.m < 1 or self.d < 1:
            raise ConfigError("m and d must be >= 1")
        if not 1 <= self.r_true <= min(self.m, self.d):
            raise ConfigError(f"r_true must be in [1, {min(self.m, self.d)}]")
        if not 1 <= self.cluster_count <= self.r_true:
            raise ConfigError("cluster_count must be in [1, r_true]")
        if self.noise_sigma < 0.0:
            raise ConfigError("noise_sigma must be >= 0")


def generate_synthetic(
    spec: SyntheticSpec, rng: np.random.Generator, return_factors: bool = False
):
    """(M, labels) with M = U* V* + noise and block-structured U* >= 0.

    Labels are contiguous, nearly equal-sized blocks.  U* has uniform(0, 0.1)
    background entries plus a uniform(0.9, 1.1) bump on each row's cluster
    component; V* is uniform(0, 1).  Gaussian noise is added only when
    noise_sigma > 0, so a zero-noise instance has exact rank r_true.
    """
    labels = np.repeat(
        np.arange(spec.cluster_count),
        np.diff(np.linspace(0, spec.m, spec.cluster_count + 1).astype(int)),
    )
    ustar = rng.uniform(0.0, 0.1, size=(spec.m, spec.r_true))
    ustar[np.arange(spec.m), labels] += rng.uniform(0.9, 1.1, size=spec.m)
    vstar = rng.uniform(0.0, 1.0, size=(spec.r_true, spec.d))
    m_data = ustar @ vstar
    if spec.noise_sigma > 0.0:
        m_data = m_data + spec.noise_sigma * rng.standard_normal((spec.m, spec.d))
    if return_factors:
        return m_data, labels, ustar, vstar
    return m_data, labels


def init_point(m: int, r: int, d: int, rng: np.random.Generator) -> FactorPair:
    """Entrywise uniform(0, 0.1) start factors (U drawn first, then V)."""
    return FactorPair(
        rng.uniform(0.0, 0.1, size=(m, r)), rng.uniform(0.0, 0.1, size=(r, d))
    )


# ---------------------------------------------------------------------------
# clustering score


def _kmeans_once(x: np.ndarray, k: int, rng: np.random.Generator, max_iter: int = 300):
    n = x.shape[0]
    # k-means++ seeding.
    centers = np.empty((k, x.shape[1]))
    centers[0] = x[rng.integers(n)]
    d2 = np.sum((x - centers[0]) ** 2, axis=1)
    for j in range(1, k):
        total = d2.sum()
        if total > 0.0:
            probs = d2 / total
            pick = rng.choice(n, p=probs)
        else:
            pick = rng.integers(n)
        centers[j] = x[pick]
        d2 = np.minimum(d2, np.sum((x - centers[j]) ** 2, axis=1))

    assign = np.full(n, -1)
    for _ in range(max_iter):
        dist = ((x[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        new_assign = dist.argmin(axis=1)
        if np.array_equal(new_assign, assign):
            break
        assign = new_assign
        for j in range(k):
            mask = assign == j
            if mask.any():
                centers[j] = x[mask].mean(axis=0)
            else:
                # Re-seed an empty cluster at the worst-served point.
                far = dist[np.arange(n), assign].argmax()
                centers[j] = x[far]
    inertia = float(dist[np.arange(n), assign].sum())
    return assign, inertia


def kmeans_accuracy(
    u,
    labels,
    k: int,
    restarts: int = 10,
    rng: np.random.Generator | None = None,
) -> float:
    """Best-permutation clustering accuracy of k-means on the rows of ``u``.

    Runs Lloyd's algorithm with k-means++ seeding ``restarts`` times, keeps
    the lowest-inertia assignment, then matches clusters to label classes by
    a maximum-agreement assignment; returns matched fraction in [0, 1].
    """
    u = as_dense(u, "u")
    labels = np.asarray(labels, dtype=np.int64).ravel()
    if labels.size != u.shape[0]:
        raise ValueError(
            f"got {labels.size} labels for {u.shape[0]} rows"
        )
    if labels.min() < 0:
        raise ValueError("labels must be nonnegative integers")
    if not 1 <= k <= u.shape[0]:
        raise ValueError(f"k must be in [1, {u.shape[0]}]")
    if restarts < 1:
        raise ValueError("restarts must be >= 1")
    if rng is None:
        rng = np.random.default_rng()

    best_assign, best_inertia = None, math.inf
    for _ in range(restarts):
        assign, inertia = _kmeans_once(u, k, rng)
        if inertia < best_inertia:
            best_assign, best_inertia = assign, inertia

    n_classes = int(labels.max()) + 1
    confusion = np.zeros((k, n_classes))
    np.add.at(confusion, (best_assign, labels), 1.0)
    rows, cols = linear_sum_assignment(-confusion)
    return float(confusion[rows, cols].sum() / labels.size)


# ---------------------------------------------------------------------------
# experiment configuration


def _check_keys(d: dict, allowed, where: str):
    unknown = set(d) - set(allowed)
    if unknown:
        raise ConfigError(f"unknown key(s) in {where}: {sorted(unknown)}")


@dataclass(frozen=True)
class DataConfig:
    path: str | None = None
    fmt: str | None = None
    synthetic: SyntheticSpec | None = None

    def __post_init__(self):
        if (self.path is None) == (self.synthetic is None):
            raise ConfigError("data needs exactly one of 'path' or 'synthetic'")

    @staticmethod
    def from_dict(d: dict) -> "DataConfig":
        _check_keys(d, ("path", "fmt", "synthetic"), "data")
        syn = d.get("synthetic")
        if syn is not None:
            _check_keys(
                syn,
                ("m", "d", "r_true", "cluster_count", "noise_sigma"),
                "data.synthetic",
            )
            syn = SyntheticSpec(**syn)
        return DataConfig(path=d.get("path"), fmt=d.get("fmt"), synthetic=syn)


@dataclass(frozen=True)
class LaplacianConfig:
    path: str | None = None
    fmt: str | None = None
    neighbors: int = 5
    weighting: str = "binary"
    sigma: float | None = None

    @staticmethod
    def from_dict(d: dict) -> "LaplacianConfig":
        _check_keys(
            d, ("path", "fmt", "neighbors", "weighting", "sigma"), "laplacian"
        )
        return LaplacianConfig(**d)


@dataclass(frozen=True)
class ClusteringConfig:
    k: int
    restarts: int = 10
    labels_path: str | None = None

    @staticmethod
    def from_dict(d: dict) -> "ClusteringConfig":
        _check_keys(d, ("k", "restarts", "labels_path"), "clustering")
        if "k" not in d:
            raise ConfigError("clustering needs 'k'")
        return ClusteringConfig(**d)


@dataclass(frozen=True)
class ProblemConfig:
    kind: str
    rank: int
    data: DataConfig
    mu0: float = 0.0
    laplacian: LaplacianConfig = field(default_factory=LaplacianConfig)
    lambda1: float = 0.05
    lambda2: float = 0.02
    s1: int | None = None
    s2: int | None = None

    @staticmethod
    def from_dict(d: dict) -> "ProblemConfig":
        _check_keys(
            d,
            ("kind", "rank", "data", "mu0", "laplacian", "lambda1", "lambda2", "s1", "s2"),
            "problem",
        )
        for key in ("kind", "rank", "data"):
            if key not in d:
                raise ConfigError(f"problem needs {key!r}")
        d = dict(d)
        d["data"] = DataConfig.from_dict(d["data"])
        if "laplacian" in d:
            d["laplacian"] = LaplacianConfig.from_dict(d["laplacian"])
        return ProblemConfig(**d)


_SOLVER_KEYS = tuple(f.name for f in fields(SolverConfig))


@dataclass(frozen=True)
class ExperimentConfig:
    problem: ProblemConfig
    solver: SolverConfig = field(default_factory=SolverConfig)
    trials: int = 1
    seed: int = 0
    out_dir: str = "out"
    emit: tuple[str, ...] = ("trace_csv", "summary_json")
    basis_shape: tuple[int, int] | None = None
    clustering: ClusteringConfig | None = None
    compare: tuple[dict, ...] | None = None
    name: str = "experiment"

    def __post_init__(self):
        if self.trials < 1:
            raise ConfigError("trials must be >= 1")
        bad = set(self.emit) - {"trace_csv", "summary_json", "per_trial_csv", "basis_pgm"}
        if bad:
            raise ConfigError(f"unknown emit option(s): {sorted(bad)}")

    @staticmethod
    def from_dict(d: dict) -> "ExperimentConfig":
        _check_keys(
            d,
            (
                "problem",
                "solver",
                "trials",
                "seed",
                "out_dir",
                "emit",
                "basis_shape",
                "clustering",
                "compare",
                "name",
            ),
            "config",
        )
        if "problem" not in d:
            raise ConfigError("config needs a 'problem' block")
        d = dict(d)
        d["problem"] = ProblemConfig.from_dict(d["problem"])
        solver = d.get("solver", {})
        _check_keys(solver, _SOLVER_KEYS, "solver")
        try:
            d["solver"] = SolverConfig(**solver)
        except ValueError as exc:
            raise ConfigError(f"solver: {exc}") from None
        if "emit" in d:
            d["emit"] = tuple(d["emit"])
        if d.get("basis_shape") is not None:
            d["basis_shape"] = tuple(int(v) for v in d["basis_shape"])
        if d.get("clustering") is not None:
            d["clustering"] = ClusteringConfig.from_dict(d["clustering"])
        if d.get("compare") is not None:
            d["compare"] = tuple(d["compare"])
        return ExperimentConfig(**d)

    @staticmethod
    def from_file(path) -> "ExperimentConfig":
        try:
            with open(path, "r", encoding="utf-8") as fh:
                raw = json.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from None
        return ExperimentConfig.from_dict(raw)


# ---------------------------------------------------------------------------
# data and problem assembly


def load_experiment_data(cfg: ExperimentConfig):
    """(M, labels or None) for the experiment's data block."""
    data = cfg.problem.data
    if data.synthetic is not None:
        rng = np.random.Generator(
            np.random.PCG64(np.random.SeedSequence((cfg.seed, 1)))
        )
        m_data, labels = generate_synthetic(data.synthetic, rng)
        return m_data, labels
    try:
        m_data = load_matrix(data.path, data.fmt)
    except FileNotFoundError:
        raise ConfigError(f"data file not found: {data.path}") from None
    labels = None
    if cfg.clustering is not None and cfg.clustering.labels_path is not None:
        labels = np.loadtxt(cfg.clustering.labels_path, dtype=np.int64, ndmin=1)
    return m_data, labels


def build_experiment_problem(cfg: ExperimentConfig, m_data: np.ndarray) -> Problem:
    p = cfg.problem
    if p.kind == "gnmf":
        lap = None
        if p.mu0 > 0.0:
            if p.laplacian.path is not None:
                lap = load_matrix(p.laplacian.path, p.laplacian.fmt)
            else:
                lap = build_knn_laplacian(
                    m_data,
                    p_neighbors=p.laplacian.neighbors,
                    weighting=p.laplacian.weighting,
                    sigma=p.laplacian.sigma,
                )
        return build_problem("gnmf", m_data, p.rank, mu0=p.mu0, laplacian=lap)
    if p.kind == "wcmf":
        return build_problem(
            "wcmf", m_data, p.rank, lambda1=p.lambda1, lambda2=p.lambda2
        )
    if p.kind == "ssnmf":
        if p.s1 is None or p.s2 is None:
            raise ConfigError("ssnmf needs s1 and s2")
        return build_problem("ssnmf", m_data, p.rank, s1=p.s1, s2=p.s2)
    raise ConfigError(f"unknown problem kind {p.kind!r}")


def _trial_init(cfg: ExperimentConfig, problem: Problem, t: int) -> FactorPair:
    rng = np.random.Generator(
        np.random.PCG64(np.random.SeedSequence((cfg.seed, 1000 + t)))
    )
    m, r, d = problem.shape
    return init_point(m, r, d, rng)


def _point_hash(x: FactorPair) -> str:
    h = hashlib.sha256()
    h.update(x.u.tobytes())
    h.update(x.v.tobytes())
    return h.hexdigest()[:16]


@dataclass
class TrialOutcome:
    result: RunResult
    init_hash: str
    accuracy: float | None = None


def _run_trials(
    cfg: ExperimentConfig,
    problem: Problem,
    solver_cfg: SolverConfig,
    labels,
) -> list[TrialOutcome]:
    outcomes = []
    for t in range(cfg.trials):
        x0 = _trial_init(cfg, problem, t)
        trial_cfg = replace(solver_cfg, seed=(cfg.seed, 2000 + t))
        res = run(problem, trial_cfg, x0)
        out = TrialOutcome(result=res, init_hash=_point_hash(x0))
        if cfg.clustering is not None and labels is not None and not res.failed:
            eval_rng = np.random.Generator(
                np.random.PCG64(np.random.SeedSequence((cfg.seed, 2, t)))
            )
            out.accuracy = kmeans_accuracy(
                res.x.u,
                labels,
                cfg.clustering.k,
                restarts=cfg.clustering.restarts,
                rng=eval_rng,
            )
        outcomes.append(out)
    return outcomes


# ---------------------------------------------------------------------------
# trace aggregation and output


_TRACE_FIELDS = ("objective", "bregman_step", "stationarity", "eta", "beta")


def _padded_rows(res: RunResult, n_rows: int):
    rows = list(res.trace)
    padded = 0
    while len(rows) < n_rows:
        last = rows[-1]
        rows.append(replace(last, epoch=len(rows)))
        padded += 1
    return rows, padded


def aggregate_traces(outcomes: list[TrialOutcome], max_epochs: int):
    """Pointwise mean/std rows across trials; early-stopped trials are padded
    by carrying their final row forward.  Returns (rows, padded_trials)."""
    n_rows = max_epochs + 1
    all_rows = []
    padded_trials = 0
    for out in outcomes:
        rows, padded = _padded_rows(out.result, n_rows)
        if padded:
            padded_trials += 1
        all_rows.append(rows)
    agg = []
    for e in range(n_rows):
        row = {"epoch": e}
        for name in _TRACE_FIELDS:
            vals = np.array([getattr(rows[e], name) for rows in all_rows])
            row[f"{name}_mean"] = float(np.mean(vals))
            row[f"{name}_std"] = float(np.std(vals))
        agg.append(row)
    return agg, padded_trials


def write_trace_csv(path, rows) -> None:
    header = ["epoch"]
    for name in _TRACE_FIELDS:
        header += [f"{name}_mean", f"{name}_std"]
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            cells = [str(row["epoch"])]
            for name in _TRACE_FIELDS:
                cells.append(FLOAT_FMT % row[f"{name}_mean"])
                cells.append(FLOAT_FMT % row[f"{name}_std"])
            fh.write(",".join(cells) + "\n")


def write_trial_csv(path, res: RunResult) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("epoch,objective,bregman_step,stationarity,eta,beta,feasible\n")
        for row in res.trace:
            fh.write(
                ",".join(
                    [
                        str(row.epoch),
                        FLOAT_FMT % row.objective,
                        FLOAT_FMT % row.bregman_step,
                        FLOAT_FMT % row.stationarity,
                        FLOAT_FMT % row.eta,
                        FLOAT_FMT % row.beta,
                        "1" if row.feasible else "0",
                    ]
                )
                + "\n"
            )


def _status(outcomes: list[TrialOutcome]) -> str:
    failed = sum(1 for o in outcomes if o.result.failed)
    if failed == 0:
        return "ok"
    if failed * 2 <= len(outcomes):
        return "partial"
    return "failed"


def _summarize(cfg: ExperimentConfig, solver_cfg: SolverConfig, outcomes, padded):
    finals = [o.result.trace[-1].objective for o in outcomes if not o.result.failed]
    summary = {
        "name": cfg.name,
        "kind": cfg.problem.kind,
        "algorithm": solver_cfg.algorithm,
        "estimator": solver_cfg.resolved().estimator,
        "trials": cfg.trials,
        "seed": cfg.seed,
        "max_epochs": solver_cfg.max_epochs,
        "status": _status(outcomes),
        "failed_trials": sum(1 for o in outcomes if o.result.failed),
        "failure_messages": [o.result.message for o in outcomes if o.result.failed],
        "padded_trials": padded,
        "hit_eta_floor": any(o.result.hit_eta_floor for o in outcomes),
        "init_hashes": [o.init_hash for o in outcomes],
        "final_objective_mean": float(np.mean(finals)) if finals else None,
        "final_objective_std": float(np.std(finals)) if finals else None,
    }
    accs = [o.accuracy for o in outcomes if o.accuracy is not None]
    if accs:
        summary["accuracy_mean"] = float(np.mean(accs))
        summary["accuracy_std"] = float(np.std(accs))
    return summary


def _write_json(path, payload) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _emit_outputs(cfg, out_dir: Path, tag: str, outcomes, rows, summary, problem):
    paths = []
    if "trace_csv" in cfg.emit:
        p = out_dir / f"trace_{tag}.csv"
        write_trace_csv(p, rows)
        paths.append(p)
    if "per_trial_csv" in cfg.emit:
        for t, out in enumerate(outcomes):
            p = out_dir / f"trial_{tag}_{t:03d}.csv"
            write_trial_csv(p, out.result)
            paths.append(p)
    if "basis_pgm" in cfg.emit:
        if cfg.basis_shape is None:
            raise ConfigError("emit basis_pgm requires basis_shape")
        images = basis_images(outcomes[0].result.x.u, cfg.basis_shape)
        for j, img in enumerate(images):
            p = out_dir / f"basis_{tag}_{j:02d}.pgm"
            write_pgm(p, img)
            paths.append(p)
        summary["basis_source"] = "trial 0 final U"
    if "summary_json" in cfg.emit:
        p = out_dir / f"summary_{tag}.json"
        _write_json(p, summary)
        paths.append(p)
    return paths


# ---------------------------------------------------------------------------
# drivers


def run_experiment(cfg: ExperimentConfig, out_dir=None):
    """Run one algorithm configuration over ``cfg.trials`` repetitions.

    Returns (summary dict, written paths).  The summary's ``status`` is
    'ok', 'partial' (at most half the trials failed) or 'failed'.
    """
    t0 = time.perf_counter()
    out = Path(out_dir if out_dir is not None else cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    m_data, labels = load_experiment_data(cfg)
    problem = build_experiment_problem(cfg, m_data)
    outcomes = _run_trials(cfg, problem, cfg.solver, labels)
    rows, padded = aggregate_traces(outcomes, cfg.solver.max_epochs)
    summary = _summarize(cfg, cfg.solver, outcomes, padded)
    summary["audit_exact"] = problem.lemma_audits_exact
    summary["wall_seconds"] = time.perf_counter() - t0
    paths = _emit_outputs(cfg, out, cfg.name, outcomes, rows, summary, problem)
    return summary, paths


_DEFAULT_COMPARE = (
    {"algorithm": "bpg"},
    {"algorithm": "bpge"},
    {"algorithm": "bpsg", "estimator": "sgd"},
    {"algorithm": "bpsg", "estimator": "saga"},
    {"algorithm": "bpsg", "estimator": "sarah"},
    {"algorithm": "bpsge", "estimator": "sgd"},
    {"algorithm": "bpsge", "estimator": "saga"},
    {"algorithm": "bpsge", "estimator": "sarah"},
)


def _combo_tag(solver_cfg: SolverConfig) -> str:
    eff = solver_cfg.resolved()
    if eff.estimator == "full":
        return eff.algorithm
    return f"{eff.algorithm}_{eff.estimator}"


def run_compare(cfg: ExperimentConfig, out_dir=None):
    """Run several algorithm variants on identical data and start points.

    Every variant sees the same per-trial start point and trial seeds (the
    summary records the start-point hashes, which are shared by construction).
    """
    t0 = time.perf_counter()
    out = Path(out_dir if out_dir is not None else cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    m_data, labels = load_experiment_data(cfg)
    problem = build_experiment_problem(cfg, m_data)

    combos = cfg.compare if cfg.compare is not None else _DEFAULT_COMPARE
    all_paths = []
    combo_summaries = {}
    statuses = []
    init_hashes = None
    for overrides in combos:
        _check_keys(overrides, _SOLVER_KEYS, "compare entry")
        try:
            solver_cfg = replace(cfg.solver, **overrides)
        except ValueError as exc:
            raise ConfigError(f"compare entry {overrides}: {exc}") from None
        tag = _combo_tag(solver_cfg)
        outcomes = _run_trials(cfg, problem, solver_cfg, labels)
        rows, padded = aggregate_traces(outcomes, solver_cfg.max_epochs)
        summary = _summarize(cfg, solver_cfg, outcomes, padded)
        statuses.append(summary["status"])
        if init_hashes is None:
            init_hashes = summary["init_hashes"]
        combo_summaries[tag] = summary
        all_paths += _emit_outputs(
            cfg, out, f"{cfg.name}_{tag}", outcomes, rows, summary, problem
        )

    top = {
        "name": cfg.name,
        "kind": cfg.problem.kind,
        "trials": cfg.trials,
        "seed": cfg.seed,
        "combos": combo_summaries,
        "shared_init_hashes": init_hashes,
        "status": (
            "ok"
            if all(s == "ok" for s in statuses)
            else "failed"
            if all(s == "failed" for s in statuses)
            else "partial"
        ),
        "wall_seconds": time.perf_counter() - t0,
    }
    p = out / f"compare_{cfg.name}.json"
    _write_json(p, top)
    all_paths.append(p)
    return top, all_paths


def run_audit(cfg: ExperimentConfig, out_dir=None):
    """Instrumented run checking the convergence theory on this instance.

    Executes all trials with per-iteration auditing and reports: Lyapunov
    monotonicity violations, the min-step rate bound, the stationarity
    witness trend, and (for variance-reduced estimators) the Monte-Carlo
    geometric-decay test of the tracker with the constant estimated from the
    visited iterates.
    """
    t0 = time.perf_counter()
    out = Path(out_dir if out_dir is not None else cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    m_data, labels = load_experiment_data(cfg)
    problem = build_experiment_problem(cfg, m_data)

    solver_cfg = replace(
        cfg.solver, audit_per_iteration=True, keep_iterates=True
    )
    outcomes = _run_trials(cfg, problem, solver_cfg, labels)
    ok = [o for o in outcomes if not o.result.failed]

    report = {
        "name": cfg.name,
        "kind": cfg.problem.kind,
        "algorithm": solver_cfg.algorithm,
        "estimator": solver_cfg.resolved().estimator,
        "trials": cfg.trials,
        "failed_trials": len(outcomes) - len(ok),
        "exact_hypotheses": problem.lemma_audits_exact,
        "status": _status(outcomes),
    }

    if ok:
        # Lyapunov monotonicity across consecutive audited iterations.
        tol = 1e-9
        checked = violations = 0
        for o in ok:
            psis = [a.lyapunov for a in o.result.audits]
            for prev, cur in zip(psis, psis[1:]):
                checked += 1
                if cur > prev + tol * (1.0 + abs(prev)):
                    violations += 1
        report["lyapunov"] = {
            "checked": checked,
            "violations": violations,
            "relative_tol": tol,
        }

        # Rate bound on the across-trial mean Bregman step sequence.
        min_len = min(len(o.result.audits) for o in ok)
        if min_len > 0:
            d_mean = np.mean(
                [[a.bregman_step for a in o.result.audits[:min_len]] for o in ok],
                axis=0,
            )
            psi1 = float(np.mean([o.result.psi1 for o in ok]))
            rep = rate_check(d_mean, psi1, solver_cfg.epsilon)
            report["rate"] = {
                "passed": rep.passed,
                "checked_upto": rep.checked_upto,
                "worst_ratio": rep.worst_ratio,
                "psi1_mean": psi1,
            }
            wit = np.mean(
                [[a.stationarity for a in o.result.audits[:min_len]] for o in ok],
                axis=0,
            )
            report["stationarity"] = {
                "first": float(wit[0]),
                "last": float(wit[-1]),
                "min": float(wit.min()),
            }

        est_name = solver_cfg.resolved().estimator
        if est_name in ("saga", "sarah") and min_len >= 3:
            m1 = max(
                estimate_sample_lipschitz(problem, o.result.iterates) for o in ok
            )
            n = problem.n_samples
            b = max(1, round(0.05 * n)) if not solver_cfg.batch_size else solver_cfg.batch_size
            if est_name == "saga":
                tau = b / (2.0 * n)
                v_gamma = (2.0 * b + 4.0 * n) * m1 * m1 / (b * b)
            else:
                tau = (
                    solver_cfg.restart_prob
                    if solver_cfg.restart_prob is not None
                    else 1.0 / math.ceil(n / b)
                )
                v_gamma = 2.0 * m1 * m1
            records = [
                (
                    np.array([a.gamma for a in o.result.audits]),
                    np.array([a.step_sq for a in o.result.audits]),
                )
                for o in ok
            ]
            decay = check_geometric_decay(records, tau, v_gamma)
            report["decay"] = {
                "violation_fraction": decay.violation_fraction,
                "checked": decay.checked,
                "passed": decay.passed,
                "tau": tau,
                "v_gamma": v_gamma,
                "m1_estimate": m1,
            }

    report["wall_seconds"] = time.perf_counter() - t0
    p = out / f"audit_{cfg.name}.json"
    _write_json(p, report)
    return report, [p]


def run_gen(cfg: ExperimentConfig, out_dir=None, fmt: str = "csv"):
    """Materialize the configured synthetic instance to disk.

    Writes the matrix (csv or mm), the labels as a one-column CSV, and a
    small JSON with the generating parameters.
    """
    if cfg.problem.data.synthetic is None:
        raise ConfigError("gen requires problem.data.synthetic")
    out = Path(out_dir if out_dir is not None else cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    m_data, labels = load_experiment_data(cfg)
    ext = "csv" if fmt == "csv" else "mtx"
    m_path = out / f"{cfg.name}_M.{ext}"
    save_matrix(m_path, m_data, fmt)
    labels_path = out / f"{cfg.name}_labels.csv"
    with open(labels_path, "w", encoding="utf-8", newline="") as fh:
        for v in labels:
            fh.write(f"{int(v)}\n")
    meta_path = out / f"{cfg.name}_meta.json"
    _write_json(
        meta_path,
        {
            "seed": cfg.seed,
            "synthetic": asdict(cfg.problem.data.synthetic),
            "matrix": m_path.name,
            "labels": labels_path.name,
        },
    )
    return {"matrix": str(m_path), "labels": str(labels_path)}, [
        m_path,
        labels_path,
        meta_path,
    ]
