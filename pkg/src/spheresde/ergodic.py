"""Monte-Carlo ensembles and ergodicity diagnostics.

Runs N independent paths of the implicit scheme (path i is driven by the
noise stream keyed by (seed, i), so results are reproducible and identical
for any worker count), and provides the statistics used to study
convergence to the uniform measure: latitude-longitude density histograms,
the max-norm distance to the uniform density, occupancy counts of the 48
cells partitioning the unit-speed bundle, mean trajectories, the ensemble
damping identity, and exponential-rate fits.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import backend
from .geometry import BundleState, partition_index_many, uniform_bundle_sample
from .integrator import NoiseStream, NonconvergenceError, StepConfig, \
    snapshot_indices, startup_gamma

UNIFORM_DENSITY = 1.0 / (4.0 * math.pi)


class InsufficientDataError(ValueError):
    """Too few usable points for a statistical fit."""


@dataclass(frozen=True)
class EnsembleConfig:
    """Ensemble size, dynamics parameters and output schedule."""

    N: int
    k: float
    D: float
    T: float
    seed: int
    snapshot_times: tuple = field(default_factory=tuple)
    grid_resolution: tuple = (36, 72)

    def __post_init__(self):
        if self.N < 1:
            raise ValueError("N must be a positive integer")
        object.__setattr__(
            self, "snapshot_times", tuple(float(t) for t in self.snapshot_times)
        )
        times = self.snapshot_times
        if any(t < 0.0 or t > self.T for t in times):
            raise ValueError("snapshot times must lie in [0, T]")
        if list(times) != sorted(times):
            raise ValueError("snapshot times must be sorted")
        nlat, nlon = self.grid_resolution
        if nlat < 1 or nlon < 1:
            raise ValueError("grid resolution entries must be positive")

    def step_config(self) -> StepConfig:
        return StepConfig(k=self.k, D=self.D)


@dataclass(frozen=True)
class EnsembleResult:
    """Snapshot arrays of an ensemble run: u and v have shape (S, N, 3)."""

    times: np.ndarray
    u: np.ndarray
    v: np.ndarray
    config: EnsembleConfig


def _run_chunk(args):
    """Simulate a contiguous block of paths (worker entry point)."""
    (u0, v0, k, D, T, seed, first_id, count, snap_idx,
     fp_tol, fp_max_iter) = args
    n = int(round(T / k))
    sqrtD = math.sqrt(D)
    cfg = StepConfig(k=k, D=D, fp_tol=fp_tol, fp_max_iter=fp_max_iter)
    z0 = BundleState(u0, v0)
    S = len(snap_idx)
    su = np.empty((S, count, 3))
    sv = np.empty((S, count, 3))
    snap_u = np.empty((S, 3))
    snap_v = np.empty((S, 3))
    for j in range(count):
        path_id = first_id + j
        dW = NoiseStream(seed, path_id, k).increments(n)
        try:
            gamma = startup_gamma(z0, float(dW[0]), cfg)
        except NonconvergenceError:
            return ("error", path_id, 0)
        up0 = u0 - k * (1.0 + gamma) * v0
        status, _, _, _ = backend.implicit_path(
            up0, u0, v0, k, sqrtD, dW, fp_tol, fp_max_iter, True,
            snap_idx, snap_u, snap_v,
        )
        if status >= 0:
            return ("error", path_id, int(status))
        su[:, j, :] = snap_u
        sv[:, j, :] = snap_v
    return ("ok", first_id, su, sv)


def simulate_ensemble(cfg: EnsembleConfig, z0: BundleState,
                      workers: int = 1) -> EnsembleResult:
    """Run the ensemble; deterministic for any worker count.

    Path i always consumes the noise stream keyed by (cfg.seed, i) and its
    snapshots are placed by path index, so the output is a pure function
    of (cfg, z0).
    """
    z0.validate()
    scfg = cfg.step_config()
    scfg.check_speed_guard(z0.v)
    times = cfg.snapshot_times if cfg.snapshot_times else (0.0, cfg.T)
    snap_idx = snapshot_indices(times, cfg.T, cfg.k)
    S, N = len(snap_idx), cfg.N
    u = np.empty((S, N, 3))
    v = np.empty((S, N, 3))

    chunk = N if workers <= 1 else max(1, min(256, -(-N // (4 * workers))))
    tasks = [
        (z0.u, z0.v, cfg.k, cfg.D, cfg.T, cfg.seed, first,
         min(chunk, N - first), snap_idx, scfg.fp_tol, scfg.fp_max_iter)
        for first in range(0, N, chunk)
    ]
    if workers <= 1:
        results = map(_run_chunk, tasks)
    else:
        pool = ProcessPoolExecutor(max_workers=workers)
        results = pool.map(_run_chunk, tasks)
    try:
        for res in results:
            if res[0] == "error":
                _, path_id, step = res
                err = NonconvergenceError(step, scfg.fp_max_iter, math.inf)
                err.path_id = path_id
                raise err
            _, first, su, sv = res
            u[:, first:first + su.shape[1], :] = su
            v[:, first:first + sv.shape[1], :] = sv
    finally:
        if workers > 1:
            pool.shutdown()

    return EnsembleResult(snap_idx * cfg.k, u, v, cfg)


# ---------------------------------------------------------------------------
# Density histograms on the sphere
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SphereHistogram:
    """Counts and densities on a latitude-longitude grid.

    Cells have exact solid angles dlon * (sin lat2 - sin lat1), so the
    density (count / (N * area)) integrates to exactly 1.
    """

    counts: np.ndarray
    areas: np.ndarray
    n_samples: int

    @property
    def density(self) -> np.ndarray:
        return self.counts / (self.n_samples * self.areas)


def cell_areas(grid) -> np.ndarray:
    """Exact solid angles of the latitude-longitude cells."""
    nlat, nlon = grid
    lat_edges = np.linspace(-0.5 * math.pi, 0.5 * math.pi, nlat + 1)
    band = np.diff(np.sin(lat_edges))
    return np.repeat(band[:, None], nlon, axis=1) * (2.0 * math.pi / nlon)


def sphere_histogram(positions, grid=(36, 72)) -> SphereHistogram:
    """Bin unit vectors into a latitude-longitude histogram."""
    pos = np.atleast_2d(np.asarray(positions, dtype=float))
    if pos.size == 0:
        raise ValueError("positions must be nonempty")
    nlat, nlon = grid
    lat = np.arcsin(np.clip(pos[:, 2], -1.0, 1.0))
    lon = np.mod(np.arctan2(pos[:, 1], pos[:, 0]), 2.0 * math.pi)
    i = np.clip(((lat + 0.5 * math.pi) / math.pi * nlat).astype(int), 0, nlat - 1)
    j = np.clip((lon / (2.0 * math.pi) * nlon).astype(int), 0, nlon - 1)
    counts = np.zeros((nlat, nlon), dtype=np.int64)
    np.add.at(counts, (i, j), 1)
    return SphereHistogram(counts, cell_areas(grid), len(pos))


@dataclass(frozen=True)
class ErrorSeries:
    """Per-time max deviation of the density from the uniform density.

    `values` uses the 1/(4 pi) convention; `values_normalized` is the
    dimensionless max |density / (1/(4 pi)) - 1|.
    """

    times: np.ndarray
    values: np.ndarray

    @property
    def values_normalized(self) -> np.ndarray:
        return self.values / UNIFORM_DENSITY


def emax(hist: SphereHistogram) -> float:
    return float(np.max(np.abs(hist.density - UNIFORM_DENSITY)))


def emax_series(result: EnsembleResult, grid=None) -> ErrorSeries:
    """Distance-to-uniform series over the snapshots of an ensemble run."""
    if grid is None:
        grid = result.config.grid_resolution
    vals = [emax(sphere_histogram(result.u[s], grid))
            for s in range(len(result.times))]
    return ErrorSeries(np.asarray(result.times, dtype=float), np.asarray(vals))


# ---------------------------------------------------------------------------
# Bundle occupancy
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BundleCounts:
    """Occupancy of the 48 cells of the unit-speed bundle partition."""

    counts: np.ndarray           # (6, 8) integer matrix
    degenerate: int              # states excluded from the counts

    @property
    def segment_totals(self) -> np.ndarray:
        return self.counts.sum(axis=1)


def bundle_counts(u, v) -> BundleCounts:
    """Count states per partition cell; degenerate states are excluded and
    reported separately."""
    seg, sec, degenerate = partition_index_many(u, v)
    ok = ~degenerate
    counts = np.zeros((6, 8), dtype=np.int64)
    np.add.at(counts, (seg[ok] - 1, sec[ok] - 1), 1)
    return BundleCounts(counts, int(degenerate.sum()))


def mean_trajectory(result: EnsembleResult):
    """Componentwise sample means: [(time, E[u], E[v]), ...]."""
    return [
        (float(t), result.u[s].mean(axis=0), result.v[s].mean(axis=0))
        for s, t in enumerate(result.times)
    ]


# ---------------------------------------------------------------------------
# Damping identity and rate fitting
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DampingReport:
    times: np.ndarray
    residuals: np.ndarray
    bands: np.ndarray
    passed: np.ndarray

    @property
    def all_passed(self) -> bool:
        return bool(self.passed.all())


def damping_check(result: EnsembleResult) -> DampingReport:
    """Check the ensemble damping identity on consecutive snapshot steps.

    For adjacent mesh snapshots the scheme satisfies

        E[V^{n+1}] - E[V^n]
            = -k ( E[|V^n|^2] E[U^{n+1}] + (D/2) E[V^{n+1}] ) + O(k^2),

    with the expectations taken over paths.  Each residual is compared
    against 10 k^2 plus four Monte-Carlo standard errors.
    """
    cfg = result.config
    k, D = cfg.k, cfg.D
    steps = np.rint(result.times / k).astype(np.int64)
    pairs = [s for s in range(len(steps) - 1) if steps[s + 1] == steps[s] + 1]
    if not pairs:
        raise InsufficientDataError(
            "damping_check needs snapshots at consecutive mesh steps"
        )
    times, residuals, bands = [], [], []
    N = cfg.N
    for s in pairs:
        vn, vn1, un1 = result.v[s], result.v[s + 1], result.u[s + 1]
        dv = vn1.mean(axis=0) - vn.mean(axis=0)
        speed2 = float((vn * vn).sum(axis=1).mean())
        res = dv + k * (speed2 * un1.mean(axis=0) + 0.5 * D * vn1.mean(axis=0))
        se = float(np.linalg.norm((vn1 - vn).std(axis=0) / math.sqrt(N)))
        times.append(result.times[s + 1])
        residuals.append(float(np.linalg.norm(res)))
        bands.append(10.0 * k * k + 4.0 * se)
    residuals = np.asarray(residuals)
    bands = np.asarray(bands)
    return DampingReport(np.asarray(times), residuals, bands, residuals <= bands)


def uniform_emax_floor(N: int, grid=(36, 72), seed: int = 0,
                       trials: int = 5) -> float:
    """Statistical floor of emax: mean over uniform samples of size N."""
    rng = np.random.default_rng(seed)
    vals = []
    for _ in range(trials):
        u, _ = uniform_bundle_sample(N, 1.0, rng)
        vals.append(emax(sphere_histogram(u, grid)))
    return float(np.mean(vals))


def fit_exponential_rate(series: ErrorSeries, floor: float):
    """Fit E(t) ~ floor + C exp(-alpha t) over the pre-floor window.

    The window is the contiguous prefix of points with E > 2 * floor (it
    ends at the first dip to the floor, so later noise spikes above the
    threshold are ignored; at least 10 points required).  Returns
    (alpha, quality) where quality is the fraction of variance of
    log(E - floor) explained by the linear fit.
    """
    t = np.asarray(series.times, dtype=float)
    e = np.asarray(series.values, dtype=float)
    above = e > 2.0 * floor
    n_prefix = int(np.argmin(above)) if not above.all() else len(e)
    mask = np.zeros(len(e), dtype=bool)
    mask[:n_prefix] = True
    if mask.sum() < 10:
        raise InsufficientDataError(
            f"only {int(mask.sum())} points in the pre-floor window; need 10"
        )
    tw, ew = t[mask], np.log(e[mask] - floor)
    slope, intercept = np.polyfit(tw, ew, 1)
    fit = slope * tw + intercept
    ss_res = float(((ew - fit) ** 2).sum())
    ss_tot = float(((ew - ew.mean()) ** 2).sum())
    quality = 1.0 - ss_res / ss_tot if ss_tot > 0.0 else 1.0
    return float(-slope), float(quality)


def time_averaged_histogram(result: EnsembleResult, grid=None,
                            window=None) -> SphereHistogram:
    """Mean of per-snapshot histograms over a time window (default all)."""
    if grid is None:
        grid = result.config.grid_resolution
    if window is None:
        window = (result.times[0], result.times[-1])
    lo, hi = window
    sel = [s for s, t in enumerate(result.times) if lo <= t <= hi]
    if not sel:
        raise ValueError("window selects no snapshots")
    counts = np.zeros(grid, dtype=np.int64)
    for s in sel:
        counts += sphere_histogram(result.u[s], grid).counts
    return SphereHistogram(counts, cell_areas(grid),
                           len(sel) * result.config.N)
