"""Forward operators with exact adjoints.

Two kinds are supported: dense matrices and a parallel-beam Radon projector
whose ray weights are exact pixel intersection lengths (Siddon traversal).
Radon weights are stored as a sparse matrix; the adjoint applies the stored
transpose, so the projector/backprojector pair is matched by construction.
"""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .errors import DimensionMismatch, GeometryInvalid, NoConvergence, PartitionInvalid
from .spaces import ExponentMap, as_signal


@dataclass(frozen=True)
class Geometry:
    """2-D parallel-beam acquisition geometry.

    The image is a square of ``image_side`` pixels centred at the origin.
    Detector cell ``d`` sits at offset ``(d - (num_detectors-1)/2) *
    detector_spacing`` along the detector axis.
    """

    image_side: int
    pixel_size: float = 1.0
    num_angles: int = 180
    angle_start: float = 0.0
    angle_step: float = 1.0
    num_detectors: int = 0
    detector_spacing: float = 0.0

    def __post_init__(self):
        # zero detector fields default to one cell per pixel
        if self.num_detectors == 0:
            object.__setattr__(self, "num_detectors", int(self.image_side))
        if self.detector_spacing == 0.0:
            object.__setattr__(self, "detector_spacing", float(self.pixel_size))
        for name in ("image_side", "num_angles", "num_detectors"):
            value = getattr(self, name)
            if int(value) != value or value < 1:
                raise GeometryInvalid(f"{name} must be a positive integer, got {value}")
        for name in ("pixel_size", "detector_spacing"):
            value = getattr(self, name)
            if not (np.isfinite(value) and value > 0):
                raise GeometryInvalid(f"{name} must be positive, got {value}")
        if not (np.isfinite(self.angle_start) and np.isfinite(self.angle_step)):
            raise GeometryInvalid("angles must be finite")

    @property
    def angles(self) -> np.ndarray:
        """Projection angles in degrees."""
        return self.angle_start + self.angle_step * np.arange(self.num_angles)

    @property
    def detector_offsets(self) -> np.ndarray:
        return (np.arange(self.num_detectors) - (self.num_detectors - 1) / 2.0) \
            * self.detector_spacing

    @property
    def sinogram_shape(self):
        return (self.num_angles, self.num_detectors)

    @property
    def image_shape(self):
        return (self.image_side, self.image_side)


#: mean nonzeros per column below which the adjoint uses the CSC view
_SCATTER_DENSITY = 32


@dataclass(eq=False)
class LinearOperator:
    """Matrix-backed linear map with its exact transpose.

    ``matrix`` is a dense ndarray (``kind == "dense"``) or a CSR matrix
    (``kind == "radon"``).  ``geometry`` is set for Radon operators.
    """

    matrix: object
    kind: str = "dense"
    geometry: Geometry | None = None
    _adjoint: object = field(default=None, repr=False)

    def __post_init__(self):
        if self.kind not in ("dense", "radon"):
            raise ValueError(f"unknown operator kind {self.kind!r}")
        if self._adjoint is None:
            t = self.matrix.T
            if not sp.issparse(t):
                self._adjoint = np.ascontiguousarray(t)
            elif self.matrix.nnz < _SCATTER_DENSITY * self.cols:
                # few entries per pixel (e.g. a view subset): a CSR transpose would have
                # many short rows, so scatter through the CSC view of the same arrays
                self._adjoint = t
            else:
                self._adjoint = t.tocsr()

    @property
    def shape(self):
        return self.matrix.shape

    @property
    def rows(self) -> int:
        return self.matrix.shape[0]

    @property
    def cols(self) -> int:
        return self.matrix.shape[1]

    def apply(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape != (self.cols,):
            raise DimensionMismatch(f"operator expects {self.cols} inputs, got {x.shape}")
        return self.matrix @ x

    def adjoint_apply(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        if y.shape != (self.rows,):
            raise DimensionMismatch(f"adjoint expects {self.rows} inputs, got {y.shape}")
        return self._adjoint @ y

    def take_rows(self, rows) -> "LinearOperator":
        rows = np.asarray(rows, dtype=np.intp)
        return LinearOperator(self.matrix[rows], self.kind, self.geometry)

    def todense(self) -> np.ndarray:
        return self.matrix.toarray() if sp.issparse(self.matrix) else np.array(self.matrix)


def dense_operator(matrix) -> LinearOperator:
    matrix = np.array(matrix, dtype=float)
    if matrix.ndim != 2:
        raise DimensionMismatch("dense operator needs a 2-D matrix")
    return LinearOperator(matrix, "dense")


def load_dense_csv(path) -> LinearOperator:
    """Read a row-major CSV matrix, one row per line."""
    return dense_operator(np.loadtxt(path, delimiter=",", ndmin=2))


def apply(A: LinearOperator, x) -> np.ndarray:
    return A.apply(x)


def adjoint_apply(A: LinearOperator, y) -> np.ndarray:
    return A.adjoint_apply(y)


def _trace_angle(geometry: Geometry, theta_deg: float):
    """Siddon traversal of every detector ray at one angle.

    Returns (ray, pixel, length) triplets; rays are numbered by detector.
    """
    n = geometry.image_side
    h = geometry.pixel_size
    half = 0.5 * n * h
    theta = np.deg2rad(theta_deg)
    c, s = np.cos(theta), np.sin(theta)
    # snap axis-aligned directions so grid-parallel rays are detected exactly
    if abs(c) < 1e-14:
        c = 0.0
    if abs(s) < 1e-14:
        s = 0.0
    offsets = geometry.detector_offsets
    # ray: P(t) = offset * (c, s) + t * (-s, c)
    px, py = offsets * c, offsets * s
    ux, uy = -s, c
    planes = -half + h * np.arange(n + 1)

    nd = offsets.size
    t_lo = np.full(nd, -np.inf)
    t_hi = np.full(nd, np.inf)
    cross = []
    for p0, u in ((px, ux), (py, uy)):
        if u == 0.0:
            outside = (p0 < -half) | (p0 > half)
            t_lo[outside] = np.inf
            continue
        t_planes = (planes[None, :] - p0[:, None]) / u
        t_lo = np.maximum(t_lo, t_planes.min(axis=1))
        t_hi = np.minimum(t_hi, t_planes.max(axis=1))
        cross.append(t_planes)
    hit = t_hi > t_lo
    if not hit.any():
        return (np.empty(0, np.intp),) * 2 + (np.empty(0),)
    t_lo, t_hi = t_lo[hit], t_hi[hit]
    px, py = px[hit], py[hit]
    ts = np.concatenate([t_lo[:, None], t_hi[:, None]] + [t[hit] for t in cross], axis=1)
    ts = np.clip(ts, t_lo[:, None], t_hi[:, None])
    ts.sort(axis=1)
    seg = np.diff(ts, axis=1)
    mid = 0.5 * (ts[:, 1:] + ts[:, :-1])
    mx = px[:, None] + mid * ux
    my = py[:, None] + mid * uy
    col = np.clip(np.floor((mx + half) / h).astype(np.intp), 0, n - 1)
    row = np.clip(np.floor((half - my) / h).astype(np.intp), 0, n - 1)
    keep = seg > 1e-12 * h
    ray = np.broadcast_to(np.flatnonzero(hit)[:, None], seg.shape)
    return ray[keep], (row * n + col)[keep], seg[keep]


def _thread_count():
    try:
        return max(1, int(os.environ.get("VARLP_THREADS", "1")))
    except ValueError:
        return 1


def radon_build(geometry: Geometry, threads: int | None = None) -> LinearOperator:
    """Precompute the parallel-beam projector for ``geometry``.

    Rows are angle-major (``angle * num_detectors + detector``); columns are
    pixels in row-major order with row 0 at the top of the image.  Angles are
    traced independently and assembled in order, so the result does not
    depend on ``threads`` (default: ``VARLP_THREADS`` or 1).
    """
    if not isinstance(geometry, Geometry):
        raise GeometryInvalid("radon_build expects a Geometry")
    threads = _thread_count() if threads is None else max(1, int(threads))
    angles = geometry.angles
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            traced = list(pool.map(lambda a: _trace_angle(geometry, a), angles))
    else:
        traced = [_trace_angle(geometry, a) for a in angles]
    nd = geometry.num_detectors
    rows = np.concatenate([k * nd + t[0] for k, t in enumerate(traced)])
    cols = np.concatenate([t[1] for t in traced])
    vals = np.concatenate([t[2] for t in traced])
    shape = (geometry.num_angles * nd, geometry.image_side ** 2)
    matrix = sp.csr_matrix((vals, (rows, cols)), shape=shape)
    matrix.sum_duplicates()
    matrix.sort_indices()
    return LinearOperator(matrix, "radon", geometry)


@dataclass
class SubsetPartition:
    """Row blocks of an operator together with the matching data slices.

    For Radon operators ``view_indices[i]`` lists the projection angles of
    subset ``i``; for dense operators it is ``None``.
    """

    num_subsets: int
    view_indices: list
    row_indices: list
    operators: list
    data: list
    exponents: list

    def __len__(self):
        return self.num_subsets


def subset_rows(A: LinearOperator, num_subsets: int):
    """Row indices and view indices of each subset, without slicing A."""
    if int(num_subsets) != num_subsets or num_subsets < 1:
        raise PartitionInvalid(f"num_subsets must be a positive integer, got {num_subsets}")
    num_subsets = int(num_subsets)
    if A.kind == "radon":
        g = A.geometry
        if num_subsets > g.num_angles:
            raise PartitionInvalid(
                f"{num_subsets} subsets exceed {g.num_angles} projection angles")
        views = [np.arange(i, g.num_angles, num_subsets) for i in range(num_subsets)]
        det = np.arange(g.num_detectors)
        rows = [(v[:, None] * g.num_detectors + det[None, :]).ravel() for v in views]
        return views, rows
    if num_subsets > A.rows:
        raise PartitionInvalid(f"{num_subsets} subsets exceed {A.rows} rows")
    size = A.rows // num_subsets
    starts = [i * size for i in range(num_subsets)] + [A.rows]
    rows = [np.arange(starts[i], starts[i + 1]) for i in range(num_subsets)]
    return [None] * num_subsets, rows


def partition_views(A: LinearOperator, y, q: ExponentMap | None, num_subsets: int) -> SubsetPartition:
    """Split ``A``, ``y`` and the data-space exponents into subsets.

    Radon operators are split by interleaved views: subset ``i`` owns angles
    ``i, i + N_s, i + 2 N_s, ...``.  Dense operators are split into
    contiguous row blocks, the remainder going to the last block.
    """
    y = as_signal(y, "data")
    if y.size != A.rows:
        raise DimensionMismatch(f"data has {y.size} entries, operator has {A.rows} rows")
    if q is not None and len(q) != A.rows:
        raise DimensionMismatch("data exponent map does not match operator rows")
    views, rows = subset_rows(A, num_subsets)
    if len(rows) == 1:
        ops = [A]
    else:
        ops = [A.take_rows(r) for r in rows]
    return SubsetPartition(
        num_subsets=len(rows),
        view_indices=views,
        row_indices=rows,
        operators=ops,
        data=[y[r] for r in rows],
        exponents=[None if q is None else q.subset(r) for r in rows],
    )


def operator_norm(A: LinearOperator, tol=1e-8, max_iter=500, seed=0, history=None) -> float:
    """Largest singular value of ``A`` by power iteration on ``A^T A``.

    If ``history`` is a list, the Rayleigh estimate of every iteration is
    appended to it.

    Raises
    ------
    NoConvergence
        If the relative change of the estimate is still above ``tol`` after
        ``max_iter`` iterations.
    """
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(A.cols)
    v /= np.linalg.norm(v)
    prev = None
    for _ in range(max_iter):
        Av = A.apply(v)
        est = float(np.sqrt(Av @ Av))
        if history is not None:
            history.append(est)
        if est == 0.0:
            raise NoConvergence("operator annihilated the iterate; is A zero?")
        if prev is not None and abs(est - prev) <= tol * est:
            return est
        prev = est
        w = A.adjoint_apply(Av)
        v = w / np.linalg.norm(w)
    raise NoConvergence(f"power method did not reach tol={tol} in {max_iter} iterations")
