"""Path processes t -> S_[nt] / b_n and the two ingredients of path-space
transfer: finite-dimensional comparisons under mu and nu, and tightness.

Tightness is measured through the cadlag modulus

    w'_delta(x) = inf over partitions 0 = t_0 < ... < t_k = t_max with
                  all cells longer than delta of max_i osc(x, [t_{i-1}, t_i)),

computed exactly over grid partitions by dynamic programming.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate, optimize

from . import _kernels
from .errors import InvalidPairingError, ResolutionError
from .models import DensityTilt, TrajectoryBatch, is_map
from .spectral import empirical_cf
from .sums import SumRun, prefix_sums

FDD_RADIUS = 8.0
_ETA_PROBES = 1 << 14


@dataclass(frozen=True, eq=False)
class PathBatch:
    """paths[i, g, :] = S_[n times[g]] / b_n for trajectory i."""

    paths: np.ndarray
    times: np.ndarray
    n: int
    b_n: float
    measure_tag: str

    @property
    def count(self) -> int:
        return self.paths.shape[0]

    @property
    def dim(self) -> int:
        return self.paths.shape[2]

    def at(self, t: float) -> np.ndarray:
        return self.paths[:, time_index(self.times, t)]


def time_index(times: np.ndarray, t: float) -> int:
    hit = np.flatnonzero(np.isclose(times, t, rtol=0.0, atol=1e-12))
    if hit.size == 0:
        raise ValueError(f"time {t} is not on the path grid")
    return int(hit[0])


def step_indices(n: int, times) -> np.ndarray:
    """[n t] for each grid time; products that land within 1e-9 below an
    integer are rounded up so grid times k/n map to k."""
    nt = n * np.asarray(times, dtype=float)
    return np.floor(nt + 1e-9 * np.maximum(1.0, nt)).astype(np.int64)


def default_grid(n: int, t_max: float = 1.0) -> np.ndarray:
    return np.arange(int(math.floor(n * t_max)) + 1) / n


def _check_grid(times, b_n):
    times = np.asarray(times, dtype=float)
    if times.ndim != 1 or times.size == 0 or np.any(np.diff(times) <= 0) or times[0] < 0:
        raise ValueError("time grid must be increasing and non-negative")
    if not b_n > 0:
        raise ValueError("b_n must be positive")
    return times


def path_process(batch: TrajectoryBatch, obs, n: int, b_n: float, times=None) -> PathBatch:
    """Sample S_[nt]/b_n on ``times`` (default: every multiple of 1/n in [0, 1])."""
    times = _check_grid(default_grid(n) if times is None else times, b_n)
    idx = step_indices(n, times)
    if idx[-1] > batch.length:
        raise IndexError(f"time {times[-1]} needs {idx[-1]} steps, batch has {batch.length}")
    prefix = prefix_sums(batch, obs, int(idx[-1]))
    return PathBatch(prefix[:, idx] / b_n, times, n, float(b_n), batch.measure_tag)


def path_process_from_run(run: SumRun, n: int, b_n: float, times) -> PathBatch:
    """Same as ``path_process`` from streamed sums; every [nt] must be a checkpoint."""
    times = _check_grid(times, b_n)
    idx = step_indices(n, times)
    cols = [run.index(int(k)) for k in idx]
    return PathBatch(run.sums[:, cols] / b_n, times, n, float(b_n), run.measure_tag)


def quantile_fan_csv(paths: PathBatch, quantiles=(0.05, 0.25, 0.5, 0.75, 0.95)) -> str:
    """Per grid time and coordinate, the requested quantiles (CSV: t, coord, q, value)."""
    q = np.quantile(paths.paths, quantiles, axis=0)  # (Q, G, d)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("t", "coord", "q", "value"))
    for g, t in enumerate(paths.times):
        for a in range(paths.dim):
            for k, qq in enumerate(quantiles):
                w.writerow((repr(float(t)), a, repr(float(qq)), repr(float(q[k, g, a]))))
    return buf.getvalue()


# --------------------------------------------------------------------------
# finite-dimensional distributions


@dataclass(frozen=True)
class FddVector:
    times: tuple
    freqs: np.ndarray  # (K, d * m)

    def __post_init__(self):
        times = tuple(float(s) for s in self.times)
        if not times or any(s <= 0 for s in times) or any(b <= a for a, b in zip(times, times[1:])):
            raise ValueError("fdd times must be positive and increasing")
        object.__setattr__(self, "times", times)
        freqs = np.atleast_2d(np.asarray(self.freqs, dtype=float))
        object.__setattr__(self, "freqs", freqs)


@dataclass(frozen=True)
class FddResult:
    distance: float
    radius: float
    argmax: np.ndarray
    values: np.ndarray


def fdd_values(paths: PathBatch, times) -> np.ndarray:
    """(S(s_1), ..., S(s_m)) per trajectory, flattened to shape (N, m*d)."""
    cols = [time_index(paths.times, s) for s in times]
    return paths.paths[:, cols, :].reshape(paths.count, -1)


def fdd_distance(paths_mu: PathBatch, paths_nu: PathBatch, fdd: FddVector,
                 radius_factor: float = FDD_RADIUS) -> FddResult:
    """max over the frequency grid of |phi_mu - phi_nu| for the fdd vector.

    The radius is ``radius_factor``/sqrt(N) with N the smaller batch size.
    """
    if paths_mu.n != paths_nu.n or paths_mu.b_n != paths_nu.b_n or paths_mu.dim != paths_nu.dim:
        raise InvalidPairingError("path batches differ in n, b_n or dimension")
    width = len(fdd.times) * paths_mu.dim
    if fdd.freqs.shape[1] != width:
        raise ValueError(f"frequency vectors must have length {width}")
    va, vb = fdd_values(paths_mu, fdd.times), fdd_values(paths_nu, fdd.times)
    t = fdd.freqs[:, 0] if width == 1 else fdd.freqs
    phi_a = empirical_cf(va, radius_factor=radius_factor)
    phi_b = empirical_cf(vb, radius_factor=radius_factor)
    diff = np.abs(phi_a(t) - phi_b(t))
    k = int(np.argmax(diff))
    count = min(paths_mu.count, paths_nu.count)
    return FddResult(float(diff[k]), radius_factor / math.sqrt(count), fdd.freqs[k], diff)


# --------------------------------------------------------------------------
# tightness


@dataclass(frozen=True)
class TightnessResult:
    exceedance: float
    standard_error: float
    moduli: np.ndarray
    eps: float
    delta: float


def cadlag_modulus(values, times, delta: float) -> float:
    """w'_delta of one grid path; values has shape (G,) or (G, d)."""
    v = np.asarray(values, dtype=float)
    if v.ndim == 1:
        v = v[:, None]
    return float(_kernels.cadlag_modulus(np.ascontiguousarray(v), np.asarray(times, float), float(delta)))


def tightness_diagnostic(paths: PathBatch, eps: float, delta: float) -> TightnessResult:
    """Fraction of paths with w'_delta >= eps, with its binomial standard error."""
    t_max = float(paths.times[-1] - paths.times[0])
    if not 0 < delta < t_max or eps <= 0:
        raise ValueError("need 0 < delta < t_max and eps > 0")
    spacing = float(np.diff(paths.times).max())
    if delta / spacing < 3:
        raise ResolutionError(f"grid spacing {spacing} leaves fewer than 3 points per delta={delta}")
    moduli = np.empty(paths.count)
    _kernels.cadlag_modulus_batch(np.ascontiguousarray(paths.paths), paths.times, float(delta), moduli)
    hits = moduli >= eps
    p = float(hits.mean())
    return TightnessResult(p, math.sqrt(p * (1 - p) / paths.count), moduli, eps, delta)


@dataclass(frozen=True)
class TransferBound:
    C: float
    eta: float
    bound: float
    best_C: float
    best_eta: float
    best_bound: float


def tail_mass(tilt: DensityTilt, model, C: float) -> float:
    """eta_C = mu(|r| 1{|r| > C}).

    Chains: exact sum.  Maps: the level set {|r| > C} is located on a probe
    grid, its endpoints refined with brentq, and |r| integrated over each
    interval by quadrature.
    """
    if C <= 0:
        raise ValueError("C must be positive")
    if not is_map(model):
        vals = np.abs(tilt(np.arange(model.state_count)))
        return math.fsum(model.initial_distribution * vals * (vals > C))
    x = np.linspace(0.0, 1.0, _ETA_PROBES + 1)
    excess = np.abs(tilt(x)) - C
    above = excess > 0
    f = lambda u: float(abs(tilt(u))) - C  # noqa: E731
    edges = []
    for i in np.flatnonzero(above[1:] != above[:-1]):
        lo, hi = x[i], x[i + 1]
        edges.append(optimize.brentq(f, lo, hi, xtol=1e-15, rtol=1e-15) if f(lo) * f(hi) < 0
                     else (lo if above[i + 1] else hi))
    bounds = np.concatenate([[0.0], edges, [1.0]])
    total = []
    for a, b in zip(bounds[:-1], bounds[1:]):
        mid = (a + b) / 2
        if b > a and f(mid) > 0:
            val, _ = integrate.quad(lambda u: float(abs(tilt(u))), a, b, epsabs=1e-14, epsrel=1e-13,
                                    limit=200)
            total.append(val)
    return math.fsum(total)


def nu_tightness_transfer(exceedance_mu: float, tilt: DensityTilt, C: float, model,
                          C_grid=None) -> TransferBound:
    """nu-exceedance bound eta_C + C * exceedance_mu, plus its best C on a grid.

    The default grid is 64 geometric points from 1 to the tilt's sup bound
    (or to 64 when unbounded), with ``C`` itself included.
    """
    if C <= 0:
        raise ValueError("C must be positive")
    if C_grid is None:
        top = tilt.sup_bound if tilt.sup_bound is not None and math.isfinite(tilt.sup_bound) else 64.0
        C_grid = np.geomspace(1.0, max(top, 1.0 + 1e-9), 64)
    grid = np.unique(np.concatenate([np.asarray(C_grid, dtype=float), [C]]))
    etas = np.array([tail_mass(tilt, model, g) for g in grid])
    bounds = etas + grid * exceedance_mu
    k = int(np.argmin(bounds))
    eta = float(etas[np.flatnonzero(grid == C)[0]])
    return TransferBound(float(C), eta, eta + C * exceedance_mu, float(grid[k]), float(etas[k]),
                         float(bounds[k]))
