"""Non-stationary process families, density tilts, observables and sampling.

Two model families are supported:

* ``SequentialExpandingMap``: the maps ``T_j(x) = k_j x mod 1`` on [0, 1)
  with Lebesgue measure, composed as ``T_n^m = T_{n+m-1} o ... o T_n``;
* ``InhomogeneousMarkovChain``: finite chains with step-dependent transition
  matrices.  ``iid_model`` builds the iid baseline as a chain with identical
  rows.

Slope and matrix sequences are stored as a finite list plus a ``periodic``
flag, so long horizons never materialise per-step parameters.

Map trajectories are simulated in 64-bit fixed point (see ``_kernels``).
Individual double-precision orbits of expanding maps are not shadowable past
a few dozen steps; the sampler is exact in law instead, which is all that any
downstream statistic uses.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Callable, Union

import numpy as np
from scipy import integrate

from . import _kernels, _rng
from .errors import InvalidDensityError, InvalidModelError, ResourceError

MU = "mu"
NU = "nu"
MEASURES = (MU, NU)

PROBE_GRID = 1 << 12
PROBE_RANDOM = 1 << 10
PROBE_SEED = 20240917
INTEGRAL_TOL = 1e-10
DEFAULT_MEMORY_LIMIT = 2 << 30
_MAX_REJECTION_ROUNDS = 100_000


# --------------------------------------------------------------------------
# models


@dataclass(frozen=True, eq=False)
class SequentialExpandingMap:
    slopes: tuple
    periodic: bool = True

    def __post_init__(self):
        raw = tuple(self.slopes)
        if not raw:
            raise InvalidModelError("slope sequence is empty")
        slopes = tuple(int(k) for k in raw)
        if any(k != r for k, r in zip(slopes, raw)) or min(slopes) < 2:
            raise InvalidModelError(f"slopes must be integers >= 2, got {raw}")
        object.__setattr__(self, "slopes", slopes)

    @property
    def horizon(self) -> float:
        return math.inf if self.periodic else len(self.slopes)

    def slope(self, j: int) -> int:
        if j < 0 or j >= self.horizon:
            raise IndexError(f"step {j} outside the declared slope sequence")
        return self.slopes[j % len(self.slopes)]

    def slope_array(self) -> np.ndarray:
        return np.asarray(self.slopes, dtype=np.uint64)

    def apply(self, x, j: int):
        """T_j(x) in double precision."""
        return np.mod(self.slope(j) * np.asarray(x, dtype=float), 1.0)

    def compose(self, x, n: int, m: int):
        """T_n^m(x) = T_{n+m-1}(... T_n(x))."""
        for j in range(n, n + m):
            x = self.apply(x, j)
        return x

    def step_fixed(self, state, j: int, digit):
        """One exact-law step on 64-bit fixed-point states (wraps mod 2**64)."""
        k = np.uint64(self.slope(j))
        digit = np.asarray(digit, dtype=np.uint64)
        if np.any(digit >= k):
            raise ValueError("carry digit must lie in {0, ..., k_j - 1}")
        return np.asarray(state, dtype=np.uint64) * k + digit

    def evolve_fixed(self, state, start: int, digits):
        """Apply ``len(digits)`` fixed-point steps beginning at step ``start``.

        ``digits`` has the step axis first; trailing axes broadcast with state.
        """
        state = np.asarray(state, dtype=np.uint64)
        for offset, digit in enumerate(np.asarray(digits, dtype=np.uint64)):
            state = self.step_fixed(state, start + offset, digit)
        return state


@dataclass(frozen=True, eq=False)
class InhomogeneousMarkovChain:
    transition_matrices: np.ndarray
    initial_distribution: np.ndarray
    periodic: bool = True
    state_values: np.ndarray | None = None

    def __post_init__(self):
        mats = np.array(self.transition_matrices, dtype=float)
        if mats.ndim == 2:
            mats = mats[None]
        if mats.ndim != 3 or mats.shape[1] != mats.shape[2] or mats.shape[0] == 0:
            raise InvalidModelError(f"expected (count, S, S) matrices, got shape {mats.shape}")
        if np.any(mats < 0):
            raise InvalidModelError("transition matrices have negative entries")
        row_err = np.abs(mats.sum(axis=2) - 1.0).max()
        if row_err > 1e-12:
            raise InvalidModelError(f"rows must sum to 1 within 1e-12 (max error {row_err:.3g})")
        mu0 = np.array(self.initial_distribution, dtype=float)
        if mu0.shape != (mats.shape[1],):
            raise InvalidModelError("initial distribution does not match the state count")
        if np.any(mu0 < 0) or abs(math.fsum(mu0) - 1.0) > 1e-12:
            raise InvalidModelError("initial distribution must be a probability vector")
        labels = np.arange(mats.shape[1], dtype=float) if self.state_values is None \
            else np.array(self.state_values, dtype=float)
        if labels.shape != (mats.shape[1],):
            raise InvalidModelError("state_values must have one entry per state")
        for arr in (mats, mu0, labels):
            arr.setflags(write=False)
        object.__setattr__(self, "transition_matrices", mats)
        object.__setattr__(self, "initial_distribution", mu0)
        object.__setattr__(self, "state_values", labels)

    @property
    def state_count(self) -> int:
        return self.transition_matrices.shape[1]

    @property
    def period(self) -> int:
        return self.transition_matrices.shape[0]

    @property
    def horizon(self) -> float:
        return math.inf if self.periodic else self.period

    def matrix(self, j: int) -> np.ndarray:
        if j < 0 or j >= self.horizon:
            raise IndexError(f"step {j} outside the declared matrix sequence")
        return self.transition_matrices[j % self.period]

    def product(self, start: int, steps: int) -> np.ndarray:
        """P_start P_{start+1} ... P_{start+steps-1}."""
        out = np.eye(self.state_count)
        for j in range(start, start + steps):
            out = out @ self.matrix(j)
        return out

    def marginal(self, j: int) -> np.ndarray:
        return chain_marginal(self, j)

    def cumulative_rows(self) -> np.ndarray:
        return np.stack([_cumulative(row) for row in self.transition_matrices.reshape(-1, self.state_count)]
                        ).reshape(self.transition_matrices.shape)


ProcessModel = Union[SequentialExpandingMap, InhomogeneousMarkovChain]


def iid_model(support, probs) -> InhomogeneousMarkovChain:
    """IID sequence on ``support`` as a chain whose rows all equal ``probs``."""
    probs = np.asarray(probs, dtype=float)
    mats = np.tile(probs, (probs.size, 1))
    return InhomogeneousMarkovChain(mats, probs, periodic=True, state_values=support)


def chain_marginal(chain: InhomogeneousMarkovChain, j: int) -> np.ndarray:
    """Law of X_j: mu_0 P_0 ... P_{j-1}."""
    if j < 0:
        raise IndexError("marginal index must be >= 0")
    v = chain.initial_distribution.copy()
    for i in range(j):
        v = v @ chain.matrix(i)
    return v


def _cumulative(weights) -> np.ndarray:
    # inverse-CDF table; entries from the last positive weight on are pinned to
    # 1 so that u in [0, 1) never falls past a reachable state
    w = np.asarray(weights, dtype=float)
    cum = np.cumsum(w)
    positive = np.flatnonzero(w > 0)
    if positive.size:
        cum[positive[-1]:] = 1.0
    return cum


def is_map(model) -> bool:
    return isinstance(model, SequentialExpandingMap)


# --------------------------------------------------------------------------
# density tilts


@dataclass(frozen=True, eq=False)
class DensityTilt:
    """Density r of nu = r dmu.

    ``norm_kind`` is ``"variation"`` (maps) or ``"lp"`` (chains, exponent
    ``p``).  ``breakpoints`` lists known kinks or jumps of a map tilt and is
    only used to help quadrature.
    """

    evaluator: Callable
    norm_value: float | None = None
    sup_bound: float | None = None
    is_strictly_positive: bool = False
    norm_kind: str = "variation"
    p: float = math.inf
    breakpoints: tuple = ()
    validated: bool = False
    integral: float | None = None

    def __call__(self, x) -> np.ndarray:
        return np.asarray(self.evaluator(x), dtype=float)


def identity_tilt(model: ProcessModel) -> DensityTilt:
    if is_map(model):
        return DensityTilt(lambda x: np.ones_like(np.asarray(x, dtype=float)), norm_value=0.0,
                           sup_bound=1.0, is_strictly_positive=True)
    return vector_tilt(np.ones(model.state_count), p=math.inf)


def cosine_tilt(amplitude: float, frequency: int = 1) -> DensityTilt:
    """r(x) = 1 + a cos(2 pi f x); total variation 4|a|f on [0, 1)."""
    a, f = float(amplitude), int(frequency)
    if f < 1 or f != frequency:
        raise ValueError("frequency must be a positive integer")

    def r(x):
        return 1.0 + a * np.cos(2.0 * np.pi * f * np.asarray(x, dtype=float))

    return DensityTilt(r, norm_value=4.0 * abs(a) * f, sup_bound=1.0 + abs(a),
                       is_strictly_positive=abs(a) < 1.0)


def piecewise_linear_tilt(breakpoints, values) -> DensityTilt:
    xs = np.asarray(breakpoints, dtype=float)
    ys = np.asarray(values, dtype=float)
    if xs[0] != 0.0 or xs[-1] != 1.0 or np.any(np.diff(xs) <= 0) or xs.shape != ys.shape:
        raise ValueError("breakpoints must increase from 0 to 1 and match the values")
    return DensityTilt(lambda x: np.interp(np.asarray(x, dtype=float), xs, ys),
                       norm_value=float(np.abs(np.diff(ys)).sum()), sup_bound=float(ys.max()),
                       is_strictly_positive=bool(ys.min() > 0), breakpoints=tuple(xs[1:-1]))


def vector_tilt(values, p: float = math.inf) -> DensityTilt:
    """Chain tilt depending on X_0 only, given by one value per state."""
    vals = np.array(values, dtype=float)
    vals.setflags(write=False)
    return DensityTilt(lambda s: vals[np.asarray(s, dtype=np.int64)], sup_bound=float(vals.max()),
                       is_strictly_positive=bool(vals.min() > 0), norm_kind="lp", p=float(p))


def _probe_points() -> np.ndarray:
    grid = np.arange(PROBE_GRID) / PROBE_GRID
    extra = np.random.default_rng(PROBE_SEED).random(PROBE_RANDOM)
    return np.sort(np.concatenate([grid, extra]))


def lp_norm(values, weights, p: float) -> float:
    values = np.abs(np.asarray(values, dtype=float))
    weights = np.asarray(weights, dtype=float)
    if math.isinf(p):
        return float(values[weights > 0].max(initial=0.0))
    return math.fsum(weights * values**p) ** (1.0 / p)


def tilt_integral(tilt: DensityTilt, model: ProcessModel) -> float:
    if is_map(model):
        points = sorted(b for b in tilt.breakpoints if 0.0 < b < 1.0) or None
        val, _ = integrate.quad(lambda x: float(tilt(x)), 0.0, 1.0, points=points,
                                epsabs=1e-14, epsrel=1e-13, limit=1000)
        return val
    states = np.arange(model.state_count)
    return math.fsum(model.initial_distribution * tilt(states))


def validate_tilt(tilt: DensityTilt, model: ProcessModel) -> DensityTilt:
    """Check that ``tilt`` is a probability density w.r.t. the model's mu.

    Returns a copy stamped ``validated=True`` with the computed integral and
    with a missing ``norm_value`` filled in (chains: exact L^p norm; maps:
    variation on the probe grid).  Raises ``InvalidDensityError`` on negative
    values (with the witness point), an integral off by more than 1e-10, or a
    declared norm or sup bound that the probes contradict.
    """
    if is_map(model):
        if tilt.norm_kind != "variation":
            raise InvalidDensityError("map tilts are normed by total variation")
        pts = _probe_points()
        vals = tilt(pts)
        if vals.shape != pts.shape:
            raise InvalidDensityError("tilt evaluator must be vectorised over points")
        norm_estimate = float(np.abs(np.diff(vals)).sum())
        norm_tol = 1e-9 * max(1.0, norm_estimate)
    else:
        if tilt.norm_kind != "lp":
            raise InvalidDensityError("chain tilts are normed in L^p(mu)")
        pts = np.arange(model.state_count)
        vals = tilt(pts)
        norm_estimate = lp_norm(vals, model.initial_distribution, tilt.p)
        norm_tol = 1e-10 * max(1.0, norm_estimate)

    if not np.all(np.isfinite(vals)):
        raise InvalidDensityError("tilt is not finite on the probe set")
    if vals.min() < 0:
        i = int(np.argmin(vals))
        raise InvalidDensityError(f"tilt is negative at {pts[i]!r} (value {vals[i]:.6g})",
                                  witness=pts[i])
    total = tilt_integral(tilt, model)
    if abs(total - 1.0) > INTEGRAL_TOL:
        raise InvalidDensityError(f"tilt integrates to {total!r}, not 1", integral=total)

    norm_value = tilt.norm_value
    if norm_value is None:
        norm_value = norm_estimate
    elif is_map(model) and norm_value < norm_estimate - norm_tol:
        raise InvalidDensityError(
            f"declared variation {norm_value} is below the probe estimate {norm_estimate}")
    elif not is_map(model) and abs(norm_value - norm_estimate) > norm_tol:
        raise InvalidDensityError(
            f"declared L^{tilt.p} norm {norm_value} differs from the exact value {norm_estimate}")
    if tilt.sup_bound is not None and tilt.sup_bound < vals.max():
        raise InvalidDensityError(f"sup_bound {tilt.sup_bound} is exceeded on the probe set")
    return replace(tilt, norm_value=float(norm_value), validated=True, integral=total)


# --------------------------------------------------------------------------
# observables


@dataclass(frozen=True, eq=False)
class ObservableSequence:
    """Width-one observables g_j(X_j) with values in R^dim.

    ``func(j, x)`` is vectorised: ``j`` broadcasts against ``x`` and the
    result has shape ``x.shape`` (dim 1) or ``x.shape + (dim,)``.  ``trig``
    and ``table`` describe the same function in a form the fused compiled
    samplers understand (maps and chains respectively).
    """

    func: Callable
    dim: int = 1
    sup_norms: object = None
    moment_info: dict | None = None
    trig: tuple | None = None
    table: np.ndarray | None = None

    def __call__(self, j, x) -> np.ndarray:
        x = np.asarray(x)
        vals = np.asarray(self.func(np.asarray(j), x), dtype=float)
        if vals.shape == x.shape:
            vals = vals[..., None]
        if vals.shape != x.shape + (self.dim,):
            raise ValueError(f"observable returned shape {vals.shape} for input {x.shape}")
        if not np.all(np.isfinite(vals)):
            raise ValueError("observable produced non-finite values")
        return vals

    def sup_norm(self, j: int) -> float:
        s = self.sup_norms
        if s is None:
            return math.inf
        if callable(s):
            return float(s(j))
        s = np.asarray(s, dtype=float)
        return float(s) if s.ndim == 0 else float(s[j % s.size])

    def sup_norm_array(self, n: int) -> np.ndarray:
        return np.array([self.sup_norm(j) for j in range(n)])


def trig_observable(freqs, cos_coef, sin_coef=None) -> ObservableSequence:
    """g_j(x) = sum_h a_{j,h} cos(2 pi f_h x) + b_{j,h} sin(2 pi f_h x).

    Coefficient arrays have shape (H,), (H, d) or (period, H, d); frequencies
    are non-negative integers so the observable lives on the circle.
    """
    freqs = np.asarray(freqs)
    if freqs.ndim != 1 or np.any(freqs < 0) or np.any(freqs != np.round(freqs)):
        raise ValueError("frequencies must be a 1-d array of non-negative integers")
    a = np.asarray(cos_coef, dtype=float)
    b = np.zeros_like(a) if sin_coef is None else np.asarray(sin_coef, dtype=float)
    if a.shape != b.shape:
        raise ValueError("cosine and sine coefficient shapes differ")
    if a.ndim == 1:
        a, b = a[None, :, None], b[None, :, None]
    elif a.ndim == 2:
        a, b = a[None], b[None]
    if a.shape[1] != freqs.size:
        raise ValueError("one coefficient row per frequency is required")
    coef = np.ascontiguousarray(np.stack([a, b], axis=2))  # (period, H, 2, d)
    dim = coef.shape[3]
    ffloat = freqs.astype(float)

    def g(j, x):
        x = np.asarray(x, dtype=float)
        jj = np.broadcast_to(np.asarray(j) % coef.shape[0], x.shape)
        out = np.zeros(x.shape + (dim,))
        for h, f in enumerate(ffloat):
            ang = 2.0 * np.pi * f * x
            out += coef[jj, h, 0] * np.cos(ang)[..., None] + coef[jj, h, 1] * np.sin(ang)[..., None]
        return out

    amp = np.sqrt(coef[:, :, 0] ** 2 + coef[:, :, 1] ** 2).sum(axis=1)  # (period, d)
    sups = np.sqrt((amp**2).sum(axis=1))
    return ObservableSequence(g, dim=dim, sup_norms=sups,
                              trig=(freqs.astype(np.uint64), coef))


def cosine_observable(frequency: int = 1, amplitude: float = 1.0) -> ObservableSequence:
    return trig_observable([frequency], [amplitude])


def table_observable(values) -> ObservableSequence:
    """Chain observable read from a table of shape (S,), (period, S) or (period, S, d)."""
    t = np.array(values, dtype=float)
    if t.ndim == 1:
        t = t[None, :, None]
    elif t.ndim == 2:
        t = t[:, :, None]
    t = np.ascontiguousarray(t)
    t.setflags(write=False)

    def g(j, s):
        s = np.asarray(s, dtype=np.int64)
        jj = np.broadcast_to(np.asarray(j) % t.shape[0], s.shape)
        return t[jj, s]

    sups = np.sqrt((t**2).sum(axis=2)).max(axis=1)
    return ObservableSequence(g, dim=t.shape[2], sup_norms=sups, table=t)


def state_value_observable(chain: InhomogeneousMarkovChain) -> ObservableSequence:
    return table_observable(chain.state_values)


# --------------------------------------------------------------------------
# sampling


@dataclass(frozen=True, eq=False)
class TrajectoryBatch:
    """values[i, j] = X_j of trajectory i (map points, or chain state indices)."""

    values: np.ndarray
    measure_tag: str
    master_seed: int
    model: ProcessModel
    tilt: DensityTilt | None = None

    @property
    def count(self) -> int:
        return self.values.shape[0]

    @property
    def length(self) -> int:
        return self.values.shape[1]

    @property
    def initial(self) -> np.ndarray:
        return self.values[:, 0]

    def labels(self) -> np.ndarray:
        if is_map(self.model):
            return self.values
        return self.model.state_values[self.values]


def check_sampling_request(model, length, count, measure, tilt) -> None:
    if length < 1 or count < 1:
        raise ValueError("length and count must be >= 1")
    if length > model.horizon:
        raise IndexError(f"length {length} exceeds the model horizon {model.horizon}")
    if measure not in MEASURES:
        raise ValueError(f"measure must be one of {MEASURES}")
    if measure == NU:
        if tilt is None or not tilt.validated:
            raise InvalidDensityError("nu-sampling requires a tilt that passed validate_tilt")
        if is_map(model) and (tilt.sup_bound is None or not math.isfinite(tilt.sup_bound)):
            raise InvalidDensityError("rejection sampling needs a finite sup_bound")


def fixed_to_unit(m: np.ndarray) -> np.ndarray:
    return (np.asarray(m, dtype=np.uint64) >> np.uint64(11)).astype(float) * 2.0**-53


def initial_block(model, measure, tilt, gen, live: int) -> np.ndarray:
    """Initial states for one block of lanes, drawn from the block's init stream.

    mu and nu consume the same first draws, so with r = 1 both give the same
    initial states.
    """
    lanes = _rng.BLOCK_SIZE
    if not is_map(model):
        u = gen.random(lanes)
        weights = model.initial_distribution
        if measure == NU:
            weights = weights * tilt(np.arange(model.state_count))
        return np.minimum(np.searchsorted(_cumulative(weights), u, side="right"),
                          model.state_count - 1).astype(np.int64)

    m = gen.bit_generator.random_raw(lanes)
    u = gen.random(lanes)
    if measure == MU:
        return m
    out = m.copy()
    pending = np.zeros(lanes, dtype=bool)
    pending[:live] = True
    for _ in range(_MAX_REJECTION_ROUNDS):
        accept = pending & (u * tilt.sup_bound < tilt(fixed_to_unit(m)))
        out[accept] = m[accept]
        pending &= ~accept
        if not pending.any():
            return out
        m = gen.bit_generator.random_raw(lanes)
        u = gen.random(lanes)
    raise RuntimeError("rejection sampling did not terminate; check sup_bound")


def advance_block(model, gen, state, start: int, length: int, out: np.ndarray) -> None:
    """Write states for steps [start, start+length) into out (length, lanes)."""
    if is_map(model):
        _kernels.map_states(gen, state, model.slope_array(), start, length, out)
    else:
        _kernels.chain_states(gen, state, _chain_cum(model), start, length, out)


def _chain_cum(chain) -> np.ndarray:
    cum = getattr(chain, "_cum_cache", None)
    if cum is None:
        cum = np.ascontiguousarray(chain.cumulative_rows())
        object.__setattr__(chain, "_cum_cache", cum)
    return cum


def sample_trajectories(model: ProcessModel, length: int, count: int, seed: int,
                        measure: str = MU, tilt: DensityTilt | None = None,
                        workers: int | None = None,
                        memory_limit: int = DEFAULT_MEMORY_LIMIT) -> TrajectoryBatch:
    """Sample ``count`` trajectories X_0..X_{length-1} under mu or nu = r dmu.

    Trajectory i depends only on (seed, i); see ``_rng`` for the stream
    layout.  Under nu the initial point is drawn by rejection against
    ``tilt.sup_bound`` (maps) or exactly from the tilted vector (chains); the
    dynamics are then identical to mu.
    """
    check_sampling_request(model, length, count, measure, tilt)
    need = count * length * 8
    if need > memory_limit:
        raise ResourceError(f"materialising {count}x{length} states needs {need} bytes "
                            f"(limit {memory_limit}); use sums.simulate_sums instead")
    dtype = float if is_map(model) else np.int64
    values = np.empty((count, length), dtype=dtype)
    lanes = _rng.BLOCK_SIZE

    def task(block, start, live):
        init = _rng.block_generator(seed, block, _rng.INIT_STREAM)
        path = _rng.block_generator(seed, block, _rng.PATH_STREAM)
        state = initial_block(model, measure, tilt, init, live)
        buf = np.empty((length, lanes), dtype=dtype)
        advance_block(model, path, state, 0, length, buf)
        values[start:start + live] = buf[:, :live].T

    _rng.run_blocks(task, count, workers)
    return TrajectoryBatch(values, measure, int(seed), model, tilt if measure == NU else None)
