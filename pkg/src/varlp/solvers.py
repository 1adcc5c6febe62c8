"""Gradient iterations in Hilbert, l^p and variable exponent spaces.

Every method here is a mirror-descent style update

    dual' = dual - mu * A_i^T g(A_i x - y_i),     x' = inverse(dual')

where ``dual`` is the image of ``x`` under the primal map and ``g`` is the
derivative of the data-fit term.  The families differ only in these maps:

* Hilbert (Landweber): both maps are the identity.
* Banach l^p / l^q (dual Landweber): norm-based duality maps.
* Modular (variable exponents): the modular derivative ``j_rho_bar`` and its
  componentwise inverse.

Stochastic variants apply the same step to one block of rows of ``A``.
"""
from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from . import metrics
from .errors import ConfigInvalid, DimensionMismatch, Divergence
from .operators import LinearOperator, SubsetPartition, operator_norm, partition_views
from .spaces import (ExponentMap, as_signal, duality_map_const, j_rho_bar,
                     j_rho_bar_inverse, lp_norm, modular_rho_bar)

ALGORITHMS = ("gd2", "gd_p", "gd_pnqn", "sgd2", "sgd_p", "sgd_pnqn")
RUNLOG_COLUMNS = ("epoch", "objective", "mae", "psnr", "ssim", "step", "seconds")


# -- step sizes ---------------------------------------------------------------

@dataclass(frozen=True)
class StepSchedule:
    """``mu_k = mu0 / (1 + decay_c * (k / N_s) ** gamma)``, or ``mu0`` if constant.

    ``mu0=None`` asks :func:`run` for the Hilbert default.  ``doc_fields``
    may carry the theoretical constants of the step bound (Hoelder exponent,
    K, c, delta); they are never used numerically.
    """

    mu0: float | None
    decay_c: float = 0.0
    gamma: float = 1.0
    kind: str = "decaying"
    doc_fields: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in ("constant", "decaying"):
            raise ConfigInvalid(f"unknown schedule kind {self.kind!r}")
        if self.mu0 is not None and not self.mu0 > 0:
            raise ConfigInvalid(f"mu0 must be positive, got {self.mu0}")
        if self.decay_c < 0 or not self.gamma > 0:
            raise ConfigInvalid("decay_c must be >= 0 and gamma > 0")

    def step(self, k, num_subsets=1) -> float:
        return step_size(self, k, num_subsets)


def step_size(schedule: StepSchedule, k, num_subsets=1) -> float:
    if num_subsets < 1:
        raise ConfigInvalid("num_subsets must be >= 1")
    if schedule.kind == "constant" or schedule.decay_c == 0.0:
        return schedule.mu0
    return schedule.mu0 / (1.0 + schedule.decay_c * (k / num_subsets) ** schedule.gamma)


def gamma_for_exponent(p_minus: float) -> float:
    """Decay power ``(p - 1) / p + 0.01`` used with the Banach schedules."""
    return (p_minus - 1.0) / p_minus + 0.01


# -- gradients ----------------------------------------------------------------

def gradient_residual_hilbert(A: LinearOperator, y, x) -> np.ndarray:
    """Gradient ``A^T (A x - y)`` of ``0.5 * ||A x - y||^2``."""
    return A.adjoint_apply(A.apply(x) - y)


def gradient_modular(q: ExponentMap, A: LinearOperator, y, x) -> np.ndarray:
    """Gradient ``A^T j_rho_bar(q, A x - y)`` of ``rho_bar_q(A x - y)``."""
    return A.adjoint_apply(j_rho_bar(q, A.apply(x) - y))


# -- space geometry -----------------------------------------------------------

class _Hilbert:
    name = "hilbert"

    def to_dual(self, x):
        return np.array(x, dtype=float)

    def to_primal(self, v):
        return v

    def data_grad(self, residual, i=None):
        return residual

    def objective(self, residual):
        return 0.5 * float(residual @ residual)


class _Banach:
    """X = l^p, Y = l^q; primal map J^p_{l^p}, data map J^r_{l^q}."""

    name = "banach"

    def __init__(self, p, q, r=None):
        self.p, self.q = float(p), float(q)
        self.r = self.q if r is None else float(r)
        self.p_conj = self.p / (self.p - 1.0)
        for v in (self.p, self.q, self.r):
            if not v > 1:
                raise ConfigInvalid("Banach exponents must exceed 1")

    def to_dual(self, x):
        return duality_map_const(self.p, self.p, x)

    def to_primal(self, v):
        return duality_map_const(self.p_conj, self.p_conj, v)

    def data_grad(self, residual, i=None):
        return duality_map_const(self.q, self.r, residual)

    def objective(self, residual):
        return lp_norm(self.q, residual) ** self.r / self.r


class _Modular:
    """Primal map j_rho_bar(p_map); data term rho_bar(q_map) split by subset."""

    name = "modular"

    def __init__(self, p_map: ExponentMap, q_map: ExponentMap, q_subsets=None):
        self.p_map, self.q_map = p_map, q_map
        self.q_subsets = q_subsets

    def to_dual(self, x):
        return j_rho_bar(self.p_map, x)

    def to_primal(self, v):
        return j_rho_bar_inverse(self.p_map, v)

    def data_grad(self, residual, i=None):
        q = self.q_map if i is None else self.q_subsets[i]
        return j_rho_bar(q, residual)

    def objective(self, residual):
        return modular_rho_bar(self.q_map, residual)


# -- state and single steps ---------------------------------------------------

@dataclass(frozen=True)
class SolverState:
    """Iteration counter, primal iterate and its image under the primal map."""

    k: int
    x: np.ndarray
    dual: np.ndarray

    @classmethod
    def start(cls, x0, to_dual=None) -> "SolverState":
        x0 = as_signal(x0, "x0").copy()
        dual = x0.copy() if to_dual is None else to_dual(x0)
        return cls(0, x0, dual)


def _mirror_step(state, A, y, mu, space, i=None):
    residual = A.apply(state.x) - y
    dual = state.dual - mu * A.adjoint_apply(space.data_grad(residual, i))
    return SolverState(state.k + 1, space.to_primal(dual), dual)


def landweber_step(state: SolverState, A, y, mu) -> SolverState:
    """``x' = x - mu A^T (A x - y)``."""
    x = state.x - mu * gradient_residual_hilbert(A, y, state.x)
    return SolverState(state.k + 1, x, x)


def dual_landweber_step(state: SolverState, A, y, mu, p, q, r=None) -> SolverState:
    """One dual Landweber step with X = l^p and Y = l^q.

    ``state.dual`` must hold ``J^p_{l^p}(x)``.  The data-space gauge ``r``
    defaults to ``q``.
    """
    return _mirror_step(state, A, y, mu, _Banach(p, q, r))


def modular_gd_step(state: SolverState, A, y, mu, p_map: ExponentMap,
                    q_map: ExponentMap) -> SolverState:
    """Modular gradient step; ``state.dual`` must hold ``j_rho_bar(p_map, x)``."""
    return _mirror_step(state, A, y, mu, _Modular(p_map, q_map))


def banach_sgd_step(state: SolverState, partition: SubsetPartition, subset_index,
                    mu, p, q, r=None) -> SolverState:
    i = int(subset_index)
    return _mirror_step(state, partition.operators[i], partition.data[i], mu,
                        _Banach(p, q, r))


def modular_sgd_step(state: SolverState, partition: SubsetPartition, subset_index,
                     mu, p_map: ExponentMap, q_map: ExponentMap | None = None) -> SolverState:
    """Stochastic modular step on subset ``subset_index``.

    The subset's data exponents come from the partition; ``q_map`` (full
    length) is only consulted when the partition was built without them.
    """
    i = int(subset_index)
    q_i = partition.exponents[i]
    if q_i is None:
        if q_map is None:
            raise ConfigInvalid("no data exponents for the modular step")
        q_i = q_map.subset(partition.row_indices[i])
    return _mirror_step(state, partition.operators[i], partition.data[i], mu,
                        _Modular(p_map, q_i))


# -- run orchestration --------------------------------------------------------

@dataclass
class SolverConfig:
    """Algorithm selection and iteration budget.

    ``gd*`` algorithms are deterministic and always use the full operator;
    for them ``epochs`` counts full iterations.  Banach variants read the
    constants ``p``, ``q`` (and optional gauge ``r``); ``pnqn`` variants read
    ``p_map``/``q_map``, falling back to constant maps built from ``p``/``q``.
    ``schedule.mu0`` may be ``None`` for the Hilbert variants, in which case
    ``0.95 / max_i ||A_i||^2`` is used.
    """

    algorithm: str
    schedule: StepSchedule | None = None
    p: float | None = None
    q: float | None = None
    r: float | None = None
    p_map: ExponentMap | None = None
    q_map: ExponentMap | None = None
    num_subsets: int = 1
    epochs: int = 1
    seed: int = 0
    adapt_interval: int = 0
    x0: np.ndarray | None = None
    sampling: str = "uniform"

    @property
    def stochastic(self) -> bool:
        return self.algorithm.startswith("sgd")

    @property
    def family(self) -> str:
        return self.algorithm.split("_", 1)[-1] if "_" in self.algorithm else "2"


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    objective: float
    mae: float
    psnr: float
    ssim: float
    step: float
    seconds: float


@dataclass
class RunLog:
    records: list = field(default_factory=list)

    def __len__(self):
        return len(self.records)

    def column(self, name) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records], dtype=float)

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            write_runlog(self, fh)

    @classmethod
    def from_csv(cls, path) -> "RunLog":
        with open(path, newline="") as fh:
            return read_runlog(fh)


def write_runlog(log: RunLog, fh):
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(RUNLOG_COLUMNS)
    for rec in log.records:
        writer.writerow([rec.epoch] + [repr(float(getattr(rec, c))) for c in RUNLOG_COLUMNS[1:]])


def read_runlog(fh) -> RunLog:
    reader = csv.reader(fh)
    header = next(reader, None)
    if header is None or tuple(header) != RUNLOG_COLUMNS:
        raise ValueError(f"not a runlog: header {header}")
    records = []
    for row in reader:
        if row:
            records.append(EpochRecord(int(row[0]), *(float(v) for v in row[1:])))
    return RunLog(records)


def hilbert_step0(partition: SubsetPartition, seed=0) -> float:
    """``0.95 / max_i ||A_i||^2``."""
    top = max(operator_norm(op, seed=seed) for op in partition.operators)
    return 0.95 / top ** 2


def _resolve_space(cfg: SolverConfig, A, partition):
    family = cfg.family
    if family == "2":
        return _Hilbert()
    if family == "p":
        if cfg.p is None:
            raise ConfigInvalid(f"{cfg.algorithm} needs a constant exponent p")
        q = cfg.p if cfg.q is None else cfg.q
        return _Banach(cfg.p, q, cfg.r)
    if family == "pnqn":
        p_map = cfg.p_map
        if p_map is None:
            if cfg.p is None:
                raise ConfigInvalid(f"{cfg.algorithm} needs p_map or p")
            p_map = ExponentMap.constant(cfg.p, A.cols)
        if len(p_map) != A.cols:
            raise DimensionMismatch("p_map does not match the operator columns")
        q_map = cfg.q_map
        if q_map is None:
            if cfg.q is None:
                raise ConfigInvalid(f"{cfg.algorithm} needs q_map or q")
            q_map = ExponentMap.constant(cfg.q, A.rows)
        if len(q_map) != A.rows:
            raise DimensionMismatch("q_map does not match the operator rows")
        subs = [q_map.subset(r) for r in partition.row_indices]
        return _Modular(p_map, q_map, subs)
    raise ConfigInvalid(f"unknown algorithm {cfg.algorithm!r}")


def _validate(cfg: SolverConfig):
    if cfg.algorithm not in ALGORITHMS:
        raise ConfigInvalid(f"unknown algorithm {cfg.algorithm!r}; expected one of {ALGORITHMS}")
    if int(cfg.epochs) != cfg.epochs or cfg.epochs < 0:
        raise ConfigInvalid("epochs must be a non-negative integer")
    if int(cfg.num_subsets) != cfg.num_subsets or cfg.num_subsets < 1:
        raise ConfigInvalid("num_subsets must be a positive integer")
    if cfg.adapt_interval < 0:
        raise ConfigInvalid("adapt_interval must be >= 0")
    if cfg.sampling not in ("uniform", "permutation"):
        raise ConfigInvalid(f"unknown sampling mode {cfg.sampling!r}")


def run(cfg: SolverConfig, A: LinearOperator, y, ground_truth=None,
        adapt_hook: Callable | None = None, callback: Callable | None = None):
    """Run ``cfg.epochs`` epochs of the configured method.

    Each epoch performs ``N_s`` inner iterations (one for ``gd*``), drawing
    subset indices from ``numpy.random.default_rng(cfg.seed)``.  After every
    epoch one :class:`EpochRecord` is appended; its ``seconds`` field counts
    only solver work, not the objective/metric evaluation.  Every
    ``cfg.adapt_interval`` epochs ``adapt_hook(epoch, x)`` may return a new
    primal exponent map; the dual iterate is then recomputed from ``x``.
    ``callback(epoch, state)`` is called after each epoch.

    Returns
    -------
    x : ndarray
        Final iterate.
    log : RunLog
    """
    _validate(cfg)
    y = as_signal(y, "data")
    if y.size != A.rows:
        raise DimensionMismatch(f"data has {y.size} entries, operator has {A.rows} rows")
    num_subsets = int(cfg.num_subsets) if cfg.stochastic else 1
    partition = partition_views(A, y, None, num_subsets)
    space = _resolve_space(cfg, A, partition)

    schedule = cfg.schedule or StepSchedule(None, kind="constant")
    if schedule.mu0 is None:
        if cfg.family != "2":
            raise ConfigInvalid(f"{cfg.algorithm} needs a user-supplied mu0")
        schedule = replace(schedule, mu0=hilbert_step0(partition, cfg.seed))

    x0 = np.zeros(A.cols) if cfg.x0 is None else as_signal(cfg.x0, "x0")
    if x0.size != A.cols:
        raise DimensionMismatch("x0 does not match the operator columns")
    state = SolverState.start(x0, space.to_dual)
    rng = np.random.default_rng(cfg.seed)
    log = RunLog()
    if ground_truth is not None:
        ground_truth = as_signal(ground_truth, "ground truth")
    elapsed = 0.0
    mu = schedule.mu0

    for epoch in range(1, int(cfg.epochs) + 1):
        tic = time.perf_counter()
        if cfg.sampling == "permutation":
            order = rng.permutation(num_subsets)
        else:
            order = rng.integers(num_subsets, size=num_subsets)
        # overflow surfaces as a non-finite iterate, reported below as Divergence
        with np.errstate(over="ignore", invalid="ignore"):
            for i in order:
                mu = schedule.step(state.k, num_subsets)
                state = _mirror_step(state, partition.operators[i], partition.data[i],
                                     mu, space, int(i))
        if cfg.adapt_interval and adapt_hook is not None and epoch % cfg.adapt_interval == 0:
            new_map = adapt_hook(epoch, state.x)
            if new_map is not None:
                if not isinstance(space, _Modular):
                    raise ConfigInvalid("exponent adaptation needs a pnqn algorithm")
                space.p_map = new_map
                state = replace(state, dual=space.to_dual(state.x))
        elapsed += time.perf_counter() - tic

        if not np.all(np.isfinite(state.x)):
            raise Divergence(f"iterate became non-finite in epoch {epoch}")
        with np.errstate(over="ignore"):
            objective = space.objective(A.apply(state.x) - y)
        if not math.isfinite(objective):
            raise Divergence(f"objective became non-finite in epoch {epoch}")
        if ground_truth is not None:
            m = metrics.quality(state.x, ground_truth)
            values = (m.mae, m.psnr, m.ssim)
        else:
            values = (math.nan,) * 3
        log.records.append(EpochRecord(epoch, objective, *values, mu, elapsed))
        if callback is not None:
            callback(epoch, state)
    return state.x, log


def objective(cfg: SolverConfig, A: LinearOperator, y, x) -> float:
    """The data-fit value a configured method minimises, evaluated at ``x``."""
    partition = partition_views(A, y, None, 1)
    return _resolve_space(cfg, A, partition).objective(A.apply(x) - y)
