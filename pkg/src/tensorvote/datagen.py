"""Seeded synthetic data and the robustness sweep harness.

Random streams are PCG64 generators keyed by ``numpy.random.SeedSequence``
with the user seed as entropy and a spawn key naming the stream:

* ``(0, trial)``: inlier positions and the standard normals scaled into noise
* ``(1, trial, key(oi))``: outlier positions for a given OI ratio
* ``(2, trial)``: RANSAC sampling
* ``(3, trial)``: two-view scene

``key(x)`` is ``round(x * 10**6)``. Because inliers depend only on the trial,
every cell of a sweep sees the same inlier sets and differs only in the
outliers (or in the noise scale), and each stream is independent of the
order in which trials run.
"""
from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Iterable, Literal, Sequence

import numpy as np

from . import emtv, robustfit
from .errors import InvalidInputError, TensorVoteError
from .spatial import PointSet
from .tensors import Scale

SWEEP_COLUMNS = ["variable", "value", "method", "trials", "mean_err_deg", "min_err_deg",
                 "max_err_deg", "fail_count"]
FAIL_ERROR_DEG = 90.0
DEFAULT_NORMAL = (-math.sqrt(0.5), math.sqrt(0.5))


def value_key(x: float) -> int:
    return int(round(float(x) * 1_000_000))


def stream(seed: int, *key: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=tuple(key))))


def oi_to_percent(R: float) -> float:
    """Outlier fraction ``Z = R / (R + 1)`` for an outlier/inlier ratio ``R``."""
    if R < 0:
        raise InvalidInputError("OI ratio must be non-negative")
    return R / (R + 1.0)


def percent_to_oi(Z: float) -> float:
    if not 0 <= Z < 1:
        raise InvalidInputError("outlier fraction must lie in [0, 1)")
    return Z / (1.0 - Z)


@dataclass(frozen=True)
class LineInstanceSpec:
    """One contaminated hyperplane sample.

    Inliers are uniform on the hyperplane through the origin with normal
    ``normal``, inside ``[-1, 1]^d``, displaced along the normal by Gaussian
    noise of standard deviation ``noise_sd``. ``round(oi_ratio * n_inliers)``
    outliers are uniform in the ball of radius ``outlier_radius``.
    """

    n_inliers: int = 44
    noise_sd: float = 0.1
    oi_ratio: float = 0.0
    outlier_radius: float = 2.0
    normal: tuple[float, ...] = DEFAULT_NORMAL
    seed: int = 0
    trial: int = 0

    def __post_init__(self):
        if self.n_inliers < 0 or self.noise_sd < 0 or self.oi_ratio < 0 or self.outlier_radius <= 0:
            raise InvalidInputError("counts, noise and radius must be non-negative")
        nrm = np.asarray(self.normal, dtype=float)
        if nrm.ndim != 1 or nrm.shape[0] < 2 or not np.linalg.norm(nrm) > 0:
            raise InvalidInputError("normal must be a nonzero vector with d >= 2")
        object.__setattr__(self, "normal", tuple(float(v) for v in nrm / np.linalg.norm(nrm)))

    @property
    def d(self) -> int:
        return len(self.normal)

    @property
    def n_outliers(self) -> int:
        return int(round(self.oi_ratio * self.n_inliers))


@dataclass
class LineInstance:
    points: PointSet
    normal: np.ndarray
    inlier: np.ndarray


def _hyperplane_basis(n: np.ndarray) -> np.ndarray:
    # columns span the orthogonal complement of n
    _, _, Vt = np.linalg.svd(n[None, :])
    return Vt[1:].T


def _inliers(spec: LineInstanceSpec) -> np.ndarray:
    rng = stream(spec.seed, 0, spec.trial)
    n = np.asarray(spec.normal)
    d = spec.d
    B = _hyperplane_basis(n)
    reach = math.sqrt(d)
    out = np.empty((spec.n_inliers, d))
    got = 0
    while got < spec.n_inliers:
        c = rng.uniform(-reach, reach, size=(max(16, 2 * (spec.n_inliers - got)), d - 1))
        x = c @ B.T
        x = x[np.all(np.abs(x) <= 1.0, axis=1)]
        take = min(len(x), spec.n_inliers - got)
        out[got:got + take] = x[:take]
        got += take
    z = rng.standard_normal(spec.n_inliers)
    return out + spec.noise_sd * z[:, None] * n[None, :]


def uniform_ball(rng: np.random.Generator, count: int, d: int, radius: float) -> np.ndarray:
    g = rng.standard_normal((count, d))
    g /= np.linalg.norm(g, axis=1, keepdims=True)
    r = radius * rng.random(count) ** (1.0 / d)
    return g * r[:, None]


def gen_line(spec: LineInstanceSpec) -> LineInstance:
    inl = _inliers(spec)
    rng = stream(spec.seed, 1, spec.trial, value_key(spec.oi_ratio))
    outl = uniform_ball(rng, spec.n_outliers, spec.d, spec.outlier_radius)
    pts = np.vstack([inl, outl])
    labels = np.concatenate([np.ones(len(inl), dtype=bool), np.zeros(len(outl), dtype=bool)])
    return LineInstance(points=PointSet(pts), normal=np.asarray(spec.normal), inlier=labels)


def angular_error_deg(v: np.ndarray, truth: np.ndarray) -> float:
    """Angle between the lines spanned by ``v`` and ``truth``, in [0, 90]."""
    a = np.asarray(v, dtype=float) / np.linalg.norm(v)
    b = np.asarray(truth, dtype=float) / np.linalg.norm(truth)
    c = abs(float(np.dot(a, b)))
    # atan2 form stays accurate near 0 where acos loses half the digits
    s = float(np.linalg.norm(a - np.dot(a, b) * b))
    return math.degrees(math.atan2(s, c))


# ------------------------------------------------------------------- sweeps

Variable = Literal["oi_ratio", "noise_sd", "sigma_d"]
METHODS = ("emtv", "ransac", "tls")


def set_grid(which: int) -> list[float]:
    """OI grids of the two robustness sets."""
    if which == 1:
        return [round(0.1 * k, 1) for k in range(1, 11)]
    if which == 2:
        return [float(k) for k in range(1, 101)]
    raise InvalidInputError("set must be 1 or 2")


def noise_grid() -> list[float]:
    return [round(0.01 * k, 2) for k in range(1, 30, 2)]


@dataclass(frozen=True)
class SweepSpec:
    variable: Variable
    values: Sequence[float]
    methods: Sequence[str] = METHODS
    trials: int = 100
    seed: int = 0
    base: LineInstanceSpec = field(default_factory=LineInstanceSpec)
    sigma_d: float = 0.1
    ransac_scale: float | None = None

    def __post_init__(self):
        if self.variable not in ("oi_ratio", "noise_sd", "sigma_d"):
            raise InvalidInputError(f"unknown sweep variable {self.variable!r}")
        if self.trials < 1:
            raise InvalidInputError("trials must be positive")
        for m in self.methods:
            if m not in METHODS:
                raise InvalidInputError(f"unknown method {m!r}")
        if not len(self.values):
            raise InvalidInputError("empty value grid")


@dataclass(frozen=True)
class SweepRow:
    variable: str
    value: float
    method: str
    trials: int
    mean_err_deg: float
    min_err_deg: float
    max_err_deg: float
    fail_count: int


def run_trial(inst: LineInstance, method: str, sigma_d: float, ransac_scale: float,
              seed: int, trial: int) -> float:
    """Angular error of one method on one instance; raises on failure."""
    if method == "tls":
        v = robustfit.tls_fit(inst.points)
    elif method == "ransac":
        v = robustfit.ransac_fit(inst.points, ransac_scale, seed=stream(seed, 2, trial)).v
    else:
        cfg = emtv.EmtvConfig(scale=Scale(sigma_d))
        v = emtv.fit(inst.points, cfg).v
    return angular_error_deg(v, inst.normal)


def _cell_setup(spec: SweepSpec, value: float):
    base = replace(spec.base, seed=spec.seed)
    sigma_d = spec.sigma_d
    if spec.variable == "oi_ratio":
        base = replace(base, oi_ratio=float(value))
    elif spec.variable == "noise_sd":
        base = replace(base, noise_sd=float(value))
    else:
        sigma_d = float(value)
    thresh = spec.ransac_scale if spec.ransac_scale is not None else 2.0 * max(base.noise_sd, 1e-3)
    return base, sigma_d, thresh


def _run_cell_trial(spec: SweepSpec, value: float, trial: int) -> list[tuple[float, bool]]:
    base, sigma_d, thresh = _cell_setup(spec, value)
    inst = gen_line(replace(base, trial=trial))
    out = []
    for m in spec.methods:
        try:
            out.append((run_trial(inst, m, sigma_d, thresh, spec.seed, trial), False))
        except (TensorVoteError, np.linalg.LinAlgError):
            out.append((FAIL_ERROR_DEG, True))
    return out


def run_sweep(spec: SweepSpec, threads: int = 1, trial_errors: dict | None = None) -> list[SweepRow]:
    """Mean, min and max angular error per (value, method) over all trials.

    Failed fits count as ``FAIL_ERROR_DEG``. Trials run on ``threads`` worker
    threads; results are gathered by index, so the table does not depend on
    the thread count. If ``trial_errors`` is given it receives the individual
    errors keyed by ``(value, method)``.
    """
    if threads < 1:
        raise InvalidInputError("threads must be at least 1")
    tasks = [(float(v), t) for v in spec.values for t in range(spec.trials)]
    if threads == 1:
        results = [_run_cell_trial(spec, v, t) for v, t in tasks]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(lambda vt: _run_cell_trial(spec, *vt), tasks))
    rows = []
    for c, value in enumerate(spec.values):
        block = results[c * spec.trials:(c + 1) * spec.trials]
        for k, m in enumerate(spec.methods):
            a = np.array([r[k][0] for r in block])
            fails = sum(r[k][1] for r in block)
            if trial_errors is not None:
                trial_errors[(float(value), m)] = a
            rows.append(SweepRow(spec.variable, float(value), m, spec.trials, float(a.mean()),
                                 float(a.min()), float(a.max()), int(fails)))
    return rows


def sweep_csv(rows: Iterable[SweepRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SWEEP_COLUMNS)
    for r in rows:
        w.writerow([r.variable, f"{r.value:.6g}", r.method, r.trials, f"{r.mean_err_deg:.6f}",
                    f"{r.min_err_deg:.6f}", f"{r.max_err_deg:.6f}", r.fail_count])
    return buf.getvalue()


# ---------------------------------------------------------------- two views

@dataclass
class TwoViewData:
    x1: np.ndarray
    x2: np.ndarray
    F: np.ndarray
    inlier: np.ndarray
    clean1: np.ndarray
    clean2: np.ndarray


def _rotation(rng: np.random.Generator, max_angle: float) -> np.ndarray:
    axis = rng.standard_normal(3)
    axis /= np.linalg.norm(axis)
    ang = rng.uniform(-max_angle, max_angle)
    Kx = np.array([[0, -axis[2], axis[1]], [axis[2], 0, -axis[0]], [-axis[1], axis[0], 0]])
    return np.eye(3) + math.sin(ang) * Kx + (1 - math.cos(ang)) * Kx @ Kx


def two_view(n_inliers: int = 100, oi_ratio: float = 0.0, noise_px: float = 0.5,
             image_size: tuple[int, int] = (640, 480), seed: int = 0, trial: int = 0) -> TwoViewData:
    """Points in front of two pinhole cameras, projected with pixel noise.

    The first camera sits at the origin; the second is rotated by up to
    15 degrees and translated by about one unit. Scene points lie 4 to 8
    units ahead. Outlier pairs are uniform in the image rectangle.
    """
    if n_inliers < 8:
        raise InvalidInputError("need at least 8 inlier correspondences")
    rng = stream(seed, 3, trial, value_key(oi_ratio))
    w, h = image_size
    f = 0.9 * w
    K = np.array([[f, 0, w / 2], [0, f, h / 2], [0, 0, 1.0]])
    R = _rotation(rng, math.radians(15))
    t = rng.standard_normal(3)
    t /= np.linalg.norm(t)
    clean1 = np.empty((0, 2))
    clean2 = np.empty((0, 2))
    while len(clean1) < n_inliers:
        m = 4 * n_inliers
        pix = rng.uniform([0, 0], [w, h], size=(m, 2))
        depth = rng.uniform(4.0, 8.0, size=m)
        rays = np.linalg.solve(K, np.vstack([pix.T, np.ones(m)])).T
        X = rays * depth[:, None]
        Y = X @ R.T + t
        ok = Y[:, 2] > 0.1
        p2 = (Y[ok] @ K.T)
        p2 = p2[:, :2] / p2[:, 2:]
        inside = np.all((p2 >= 0) & (p2 <= [w, h]), axis=1)
        clean1 = np.vstack([clean1, pix[ok][inside]])
        clean2 = np.vstack([clean2, p2[inside]])
    clean1, clean2 = clean1[:n_inliers], clean2[:n_inliers]
    tx = np.array([[0, -t[2], t[1]], [t[2], 0, -t[0]], [-t[1], t[0], 0]])
    Kinv = np.linalg.inv(K)
    F = Kinv.T @ tx @ R @ Kinv
    F /= np.linalg.norm(F)
    x1 = clean1 + noise_px * rng.standard_normal(clean1.shape)
    x2 = clean2 + noise_px * rng.standard_normal(clean2.shape)
    n_out = int(round(oi_ratio * n_inliers))
    o1 = rng.uniform([0, 0], [w, h], size=(n_out, 2))
    o2 = rng.uniform([0, 0], [w, h], size=(n_out, 2))
    inlier = np.concatenate([np.ones(n_inliers, dtype=bool), np.zeros(n_out, dtype=bool)])
    return TwoViewData(x1=np.vstack([x1, o1]), x2=np.vstack([x2, o2]), F=F, inlier=inlier,
                       clean1=clean1, clean2=clean2)


# ---------------------------------------------------------------- L-junction

def l_junction(n_per_arm: int = 20, spacing: float = 0.05) -> tuple[PointSet, np.ndarray]:
    """Two perpendicular point rows meeting at the origin, with true normals.

    The corner point's normal is undefined and reported as NaN.
    """
    if n_per_arm < 1 or not spacing > 0:
        raise InvalidInputError("need at least one point per arm and positive spacing")
    k = np.arange(1, n_per_arm + 1) * spacing
    zeros = np.zeros(n_per_arm)
    pts = np.vstack([[0.0, 0.0], np.stack([k, zeros], 1), np.stack([zeros, k], 1)])
    normals = np.vstack([[np.nan, np.nan], np.tile([0.0, 1.0], (n_per_arm, 1)),
                         np.tile([1.0, 0.0], (n_per_arm, 1))])
    return PointSet(pts), normals
