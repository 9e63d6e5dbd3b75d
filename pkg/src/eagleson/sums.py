"""Partial sums under mu and nu, their statistics, and the gap certificates.

``simulate_sums`` is the large-scale route: it streams trajectories through
compiled kernels and keeps only S_n at requested checkpoints, so 10**5 paths
of length 2**14 never materialise.  ``partial_sums`` works from a stored
``TrajectoryBatch``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from . import _kernels, _rng
from .errors import InvalidPairingError, PreconditionError, ResourceError
from .models import (MU, NU, ObservableSequence, TrajectoryBatch, advance_block,
                     check_sampling_request, fixed_to_unit, initial_block, is_map, _chain_cum)

DEGENERATE_VARIANCE = 1e-14
_GENERIC_CHUNK = 512


@dataclass(frozen=True, eq=False)
class PartialSumSample:
    """S_n across trajectories: ``values`` has shape (count, d).

    ``centering`` is ``"none"``, ``"mu-mean"``, ``"nu-mean"`` or
    ``"explicit"``; ``normalizer`` is the divisor applied (1.0 when raw) and
    ``self_normalized`` records whether it was estimated from a sample.
    """

    values: np.ndarray
    n: int
    measure_tag: str
    centering: str = "none"
    normalizer: float | np.ndarray = 1.0
    self_normalized: bool = False

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.ndim == 1:
            vals = vals[:, None]
        if vals.ndim != 2 or vals.shape[0] == 0:
            raise ValueError("a sample needs shape (count, d) with count >= 1")
        if not np.all(np.isfinite(vals)):
            raise ValueError("partial sums must be finite")
        object.__setattr__(self, "values", vals)

    @property
    def count(self) -> int:
        return self.values.shape[0]

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    def scalar(self) -> np.ndarray:
        if self.dim != 1:
            raise ValueError("sample is vector-valued")
        return self.values[:, 0]


@dataclass(frozen=True, eq=False)
class SumRun:
    """S_n at ``checkpoints`` for every trajectory: ``sums`` is (count, K, d).

    ``initial`` holds X_0 per trajectory (unit-interval points or state
    indices), which is what functionals of the density need.
    """

    sums: np.ndarray
    checkpoints: np.ndarray
    measure_tag: str
    master_seed: int
    initial: np.ndarray

    def index(self, n: int) -> int:
        hit = np.flatnonzero(self.checkpoints == n)
        if hit.size == 0:
            raise IndexError(f"n={n} was not a checkpoint of this run")
        return int(hit[0])

    def sample(self, n: int) -> PartialSumSample:
        return PartialSumSample(self.sums[:, self.index(n)], n, self.measure_tag)


def simulate_sums(model, obs: ObservableSequence, checkpoints, count: int, seed: int,
                  measure: str = MU, tilt=None, workers: int | None = None,
                  memory_limit: int = 2 << 30) -> SumRun:
    """Stream ``count`` trajectories and record S_n for each n in ``checkpoints``.

    Uses the same per-trajectory streams as ``sample_trajectories``, so the
    underlying paths are identical to a materialised batch with equal seed.
    Checkpoint 0 is allowed and gives the empty sum.
    """
    ckpt = np.unique(np.asarray(checkpoints, dtype=np.int64))
    if ckpt.size == 0 or ckpt[0] < 0:
        raise ValueError("checkpoints must be non-negative")
    length = int(ckpt[-1])
    check_sampling_request(model, max(length, 1), count, measure, tilt)
    need = count * ckpt.size * obs.dim * 8
    if need > memory_limit:
        raise ResourceError(f"storing sums needs {need} bytes (limit {memory_limit})")
    sums = np.zeros((count, ckpt.size, obs.dim))
    initial = np.empty(count, dtype=float if is_map(model) else np.int64)
    positive = ckpt[ckpt > 0]
    offset = ckpt.size - positive.size
    lanes = _rng.BLOCK_SIZE

    fused = None
    if is_map(model) and obs.trig is not None:
        freqs, coef = obs.trig
        slopes = model.slope_array()

        def fused(gen, state, out, running):
            _kernels.map_trig_sums(gen, state, slopes, 0, length, freqs, coef, positive, out, running)
    elif not is_map(model) and obs.table is not None:
        cum = _chain_cum(model)
        table = obs.table

        def fused(gen, state, out, running):
            _kernels.chain_table_sums(gen, state, cum, 0, length, table, positive, out, running)

    def task(block, start, live):
        init = _rng.block_generator(seed, block, _rng.INIT_STREAM)
        path = _rng.block_generator(seed, block, _rng.PATH_STREAM)
        state = initial_block(model, measure, tilt, init, live)
        initial[start:start + live] = (fixed_to_unit(state) if is_map(model) else state)[:live]
        out = np.zeros((lanes, positive.size, obs.dim))
        running = np.zeros((lanes, obs.dim))
        if fused is not None:
            fused(path, state, out, running)
        else:
            _generic_sums(model, obs, path, state, positive, out, running)
        sums[start:start + live, offset:] = out[:live]

    _rng.run_blocks(task, count, workers)
    return SumRun(sums, ckpt, measure, int(seed), initial)


def _generic_sums(model, obs, gen, state, ckpt, out, running):
    lanes = state.shape[0]
    dtype = float if is_map(model) else np.int64
    buf = np.empty((_GENERIC_CHUNK, lanes), dtype=dtype)
    length = int(ckpt[-1]) if ckpt.size else 0
    q = 0
    for t0 in range(0, length, _GENERIC_CHUNK):
        steps = min(_GENERIC_CHUNK, length - t0)
        chunk = buf[:steps]
        advance_block(model, gen, state, t0, steps, chunk)
        vals = obs(np.arange(t0, t0 + steps)[:, None], chunk)
        # prepend the running sum so the chunked cumsum repeats the exact
        # sequence of additions a single cumsum over the whole path would do
        csum = np.cumsum(np.concatenate([running[None], vals]), axis=0)
        while q < ckpt.size and ckpt[q] <= t0 + steps:
            out[:, q] = csum[ckpt[q] - t0]
            q += 1
        running[...] = csum[-1]


def partial_sums(batch: TrajectoryBatch, obs: ObservableSequence, n_list) -> dict:
    """S_n for every n in ``n_list`` from one prefix-sum pass; keyed by n."""
    n_list = [int(n) for n in n_list]
    if any(n < 0 or n > batch.length for n in n_list):
        raise IndexError(f"requested n beyond batch length {batch.length}")
    top = max(n_list) if n_list else 0
    prefix = prefix_sums(batch, obs, top)
    return {n: PartialSumSample(prefix[:, n], n, batch.measure_tag) for n in n_list}


def prefix_sums(batch: TrajectoryBatch, obs: ObservableSequence, upto: int) -> np.ndarray:
    """Array (count, upto+1, d) with S_0 = 0, S_1, ..., S_upto."""
    vals = obs(np.arange(upto)[None, :], batch.values[:, :upto])
    out = np.zeros((batch.count, upto + 1, obs.dim))
    np.cumsum(vals, axis=1, out=out[:, 1:])
    return out


def sample_mean(sample: PartialSumSample) -> np.ndarray:
    return sample.values.mean(axis=0)


def self_normalizer(sample: PartialSumSample) -> tuple[np.ndarray, bool]:
    """Unbiased per-coordinate standard deviation and a degeneracy flag."""
    if sample.count < 2:
        return np.zeros(sample.dim), True
    var = sample.values.var(axis=0, ddof=1)
    scale = np.maximum((sample.values**2).mean(axis=0), np.finfo(float).tiny)
    return np.sqrt(var), bool(np.any(var <= DEGENERATE_VARIANCE * scale))


def center_and_normalize(sample: PartialSumSample, centering, b, tag: str = "explicit",
                         self_normalized: bool = False) -> PartialSumSample:
    """(values - centering) / b with the metadata updated."""
    b = np.asarray(b, dtype=float)
    if not np.all(np.isfinite(b)) or np.any(b <= 0):
        raise ValueError(f"normalizer must be positive, got {b}")
    c = np.asarray(centering, dtype=float)
    if not np.all(np.isfinite(c)):
        raise ValueError("centering values must be finite")
    vals = (sample.values - c) / b
    return replace(sample, values=vals, centering=tag,
                   normalizer=float(b) if b.ndim == 0 else b, self_normalized=self_normalized)


def standardize(sample: PartialSumSample, reference: PartialSumSample | None = None) -> PartialSumSample:
    """Center by the sample's own mean and divide by the self-normalizer of ``reference``."""
    reference = sample if reference is None else reference
    b, degenerate = self_normalizer(reference)
    if degenerate:
        raise PreconditionError("self-normalizer is degenerate (variance ~ 0)")
    tag = f"{sample.measure_tag}-mean"
    return center_and_normalize(sample, sample_mean(sample), b, tag=tag, self_normalized=True)


# --------------------------------------------------------------------------
# empirical comparison of mu and nu


@dataclass(frozen=True)
class GapEstimate:
    mean_gap: float
    mean_gap_se: float
    std_ratio: float
    std_ratio_se: float
    paired: bool
    degenerate: bool


def _loo_std(x: np.ndarray) -> tuple[float, np.ndarray]:
    # full-sample and leave-one-out unbiased standard deviations
    n = x.size
    s1, s2 = x.sum(), (x * x).sum()
    full = max((s2 - s1 * s1 / n) / (n - 1), 0.0)
    rest1 = s1 - x
    loo = np.maximum((s2 - x * x - rest1 * rest1 / (n - 1)) / (n - 2), 0.0)
    return math.sqrt(full), np.sqrt(loo)


def _jackknife_se(replicates: np.ndarray) -> float:
    n = replicates.size
    return float(math.sqrt((n - 1) / n * ((replicates - replicates.mean()) ** 2).sum()))


def empirical_gap(sample_mu: PartialSumSample, sample_nu: PartialSumSample,
                  paired: bool | None = None) -> GapEstimate:
    """Plug-in |E S_nu - E S_mu| and std(S_nu)/std(S_mu) with jackknife errors.

    ``paired`` treats row i of both samples as one coupled draw (shared
    seeds); by default samples of equal size are paired.  For vector sums the
    mean gap is the Euclidean norm and the ratio uses the first coordinate.
    """
    if sample_mu.n != sample_nu.n:
        raise InvalidPairingError(f"samples at different n ({sample_mu.n} vs {sample_nu.n})")
    if sample_mu.dim != sample_nu.dim:
        raise InvalidPairingError("samples have different dimensions")
    if paired is None:
        paired = sample_mu.count == sample_nu.count
    if paired and sample_mu.count != sample_nu.count:
        raise InvalidPairingError("paired comparison needs equal sample sizes")
    a, b = sample_mu.values, sample_nu.values
    diff = b.mean(axis=0) - a.mean(axis=0)
    gap = float(np.sqrt((diff**2).sum()))
    if paired:
        d = b - a
        se_vec = d.std(axis=0, ddof=1) / math.sqrt(d.shape[0]) if d.shape[0] > 1 else np.zeros(d.shape[1])
    else:
        se_vec = np.sqrt(a.var(axis=0, ddof=1) / a.shape[0] + b.var(axis=0, ddof=1) / b.shape[0])
    gap_se = float(np.sqrt((se_vec**2).sum()))

    x, y = a[:, 0], b[:, 0]
    degenerate = x.size < 3 or y.size < 3
    if not degenerate:
        sx, lx = _loo_std(x)
        sy, ly = _loo_std(y)
        tiny = np.finfo(float).tiny
        degenerate = (sx**2 <= DEGENERATE_VARIANCE * max((x * x).mean(), tiny)
                      or sy**2 <= DEGENERATE_VARIANCE * max((y * y).mean(), tiny))
    if degenerate:
        return GapEstimate(gap, gap_se, math.nan, math.nan, bool(paired), True)
    ratio = sy / sx
    if paired:
        ratio_se = _jackknife_se(ly / lx)
    else:
        ratio_se = ratio * math.hypot(_jackknife_se(ly) / sy, _jackknife_se(lx) / sx)
    return GapEstimate(gap, gap_se, float(ratio), float(ratio_se), bool(paired), False)


# --------------------------------------------------------------------------
# certificates


@dataclass(frozen=True, eq=False)
class GapCertificate:
    """Evaluated centering (``"M"``) or variance (``"V"``) certificate.

    ``truncation`` and ``tail`` are per-term contributions (per j for the
    centering certificate, per k for the variance one, aggregated over j);
    ``levels`` are the truncation levels used (``inf`` marks the limiting
    level chosen when a mixing coefficient vanishes).
    """

    quantity: str
    truncation: np.ndarray
    tail: np.ndarray
    levels: np.ndarray | None
    exponents: tuple
    total: float
    limiting_levels: bool = False
    scale: float | None = None

    @property
    def ratio(self) -> float | None:
        return None if self.scale is None else self.total / self.scale


def check_exponents(exponents) -> tuple:
    exps = tuple(float(p) for p in exponents)
    if len(exps) != 3 or any(p < 1 for p in exps):
        raise ValueError(f"need three exponents >= 1, got {exponents}")
    if abs(math.fsum(0.0 if math.isinf(p) else 1.0 / p for p in exps) - 1.0) > 1e-12:
        raise ValueError(f"reciprocals of {exps} must sum to 1")
    return exps


def profile_values(delta, n: int) -> np.ndarray:
    vals = np.asarray(delta.array(n) if hasattr(delta, "array") else delta, dtype=float)
    if vals.ndim == 0:
        vals = np.full(n, float(vals))
    if vals.size < n:
        raise ValueError(f"mixing profile has {vals.size} values, need {n}")
    vals = vals[:n]
    if np.any(vals < 0) or not np.all(np.isfinite(vals)):
        raise ValueError("mixing profile values must be finite and non-negative")
    return vals


def optimal_level(delta, K, beta, w1: float = 1.0, w2: float = 1.0):
    """Minimiser of f(M) = w1 delta M + w2 K M**(-beta) and its value.

    Vectorised.  delta = 0 gives M = inf with value 0 (the limit); beta = inf
    means the tail term vanishes for M above K (pass K = sup norm), so
    M = K and the value is w1 delta K.
    """
    delta, K = np.broadcast_arrays(np.asarray(delta, dtype=float), np.asarray(K, dtype=float))
    level = np.empty(delta.shape)
    value = np.empty(delta.shape)
    if math.isinf(beta):
        level[...] = K
        value[...] = w1 * delta * K
        return level, value
    zero = (delta == 0) | (K == 0) | (w1 == 0) | (w2 == 0)
    live = ~zero
    if beta == 0:
        # the tail term does not depend on M; push M to 0
        level[...] = 0.0
        value[...] = w2 * K
        return level, value
    d, k = delta[live], K[live]
    m = (beta * w2 * k / (w1 * d)) ** (1.0 / (1.0 + beta))
    level[live] = m
    value[live] = w1 * d * m + w2 * k * m ** (-beta)
    level[zero] = np.where(K[zero] == 0, 0.0, math.inf)
    value[zero] = 0.0
    return level, value


def _terms(delta, K, beta, w1, w2, levels):
    if levels is None:
        lv, _ = optimal_level(delta, K, beta, w1, w2)
    else:
        lv = np.broadcast_to(np.asarray(levels, dtype=float), np.shape(delta)).astype(float)
        if np.any(lv <= 0):
            raise ValueError("truncation levels must be positive")
    if math.isinf(beta):
        # below the sup norm the tail bound is infinite; above it the
        # truncation at M costs no more than truncation at the sup norm
        trunc = w1 * delta * np.minimum(lv, K)
        tail = np.where(lv >= K, 0.0, math.inf)
        return lv, trunc, tail
    with np.errstate(invalid="ignore", divide="ignore"):
        trunc = np.where(np.isinf(lv) & (delta == 0), 0.0, w1 * delta * lv)
        tail = np.where(K == 0, 0.0, w2 * K * lv ** (-beta))
    return lv, trunc, tail


def centering_gap_certificate(delta, moment_norms, exponents, n: int, levels=None,
                              norm_r: float = 1.0, norm_r_plus_one: float = 1.0,
                              scale: float | None = None) -> GapCertificate:
    """Evaluate sum_j (w1 M_j delta_j + w2 |g_j|_{p2}^{1+p2/p3} M_j^{-p2/p3}).

    With the default unit weights this is the bare centering quantity; with
    w1 = |r| and w2 = |r+1|_{p1} it bounds |E S_nu - E S_mu|.  ``levels=None``
    optimises each M_j in closed form.  With p2 = inf pass sup norms as
    ``moment_norms``: the optimal level is the sup norm and the certificate
    reduces to w1 sum_j delta_j |g_j|_inf.
    """
    p1, p2, p3 = check_exponents(exponents)
    d = profile_values(delta, n)
    norms = np.broadcast_to(np.asarray(moment_norms, dtype=float), (n,))
    if np.any(norms < 0) or not np.all(np.isfinite(norms)):
        raise ValueError("moment norms must be finite and non-negative")
    beta = p2 / p3 if not math.isinf(p3) else 0.0
    K = norms if math.isinf(beta) else norms ** (1.0 + beta)
    lv, trunc, tail = _terms(d, K, beta, norm_r, norm_r_plus_one, levels)
    total = math.fsum(trunc) + math.fsum(tail)
    return GapCertificate("M", trunc, tail, lv, (p1, p2, p3), total,
                          limiting_levels=bool(np.any(np.isinf(lv))), scale=scale)


def variance_gap_certificate(delta, pair_norms, exponents, n: int, levels=None,
                             norm_r: float = 1.0, norm_r_plus_one: float = 1.0,
                             scale: float | None = None) -> GapCertificate:
    """Evaluate the variance certificate over pairs 0 <= k <= j < n.

    ``pair_norms`` is an (n, n) array (upper triangle k <= j used) or a
    callable ``(k, js) -> array`` returning |G_j G_k|_{s2} for the j's in
    ``js``; the callable form avoids n**2 storage.  ``levels`` is None
    (optimise) or a callable/array of the same shape as ``pair_norms``.
    Contributions are aggregated per k.
    """
    s1, s2, s3 = check_exponents(exponents)
    d = profile_values(delta, n)
    beta = s2 / s3 if not math.isinf(s3) else 0.0
    if callable(pair_norms):
        norm_row = pair_norms
    else:
        table = np.asarray(pair_norms, dtype=float)
        if table.shape != (n, n):
            raise ValueError(f"pair_norms must have shape ({n}, {n})")
        norm_row = lambda k, js: table[k, js]  # noqa: E731
    level_row = None
    if levels is not None:
        level_row = levels if callable(levels) else (lambda k, js, L=np.asarray(levels, float): L[k, js])
    trunc = np.empty(n)
    tail = np.empty(n)
    limiting = False
    for k in range(n):
        js = np.arange(k, n)
        norms = np.asarray(norm_row(k, js), dtype=float)
        if np.any(norms < 0) or not np.all(np.isfinite(norms)):
            raise ValueError("pair norms must be finite and non-negative")
        K = norms if math.isinf(beta) else norms ** (1.0 + beta)
        given = None if level_row is None else level_row(k, js)
        lv, tr, ta = _terms(np.full(js.size, d[k]), K, beta, norm_r, norm_r_plus_one, given)
        limiting |= bool(np.any(np.isinf(lv)))
        trunc[k] = math.fsum(tr)
        tail[k] = math.fsum(ta)
    total = math.fsum(trunc) + math.fsum(tail)
    return GapCertificate("V", trunc, tail, None, (s1, s2, s3), total,
                          limiting_levels=limiting, scale=scale)


# --------------------------------------------------------------------------
# moment inputs


def chain_moment_norms(chain, obs: ObservableSequence, p: float, n: int) -> np.ndarray:
    """Exact |g_j(X_j)|_p under mu for j < n (Euclidean norm of vector values)."""
    states = np.arange(chain.state_count)
    out = np.empty(n)
    v = chain.initial_distribution.copy()
    for j in range(n):
        mag = np.sqrt((obs(j, states) ** 2).sum(axis=-1))
        out[j] = mag[v > 0].max(initial=0.0) if math.isinf(p) else math.fsum(v * mag**p) ** (1.0 / p)
        v = v @ chain.matrix(j)
    return out


def mc_moment_norm(values: np.ndarray, p: float) -> tuple[float, float]:
    """Monte Carlo |X|_p and a delta-method standard error."""
    mag = np.abs(np.asarray(values, dtype=float))
    if math.isinf(p):
        return float(mag.max()), 0.0
    powered = mag**p
    m = powered.mean()
    se = powered.std(ddof=1) / math.sqrt(mag.size) if mag.size > 1 else 0.0
    norm = m ** (1.0 / p)
    return float(norm), float(norm / (p * m) * se) if m > 0 else 0.0


def translation_integral(sample: PartialSumSample, initial, tilt) -> tuple[float, float]:
    """MC estimate of int |S_rho| (2 + r) dmu with its standard error.

    ``sample`` must be a mu-sample and ``initial`` the matching X_0 values.
    """
    if sample.measure_tag != MU:
        raise InvalidPairingError("the translation integral is taken under mu")
    weights = 2.0 + (1.0 if tilt is None else tilt(initial))
    vals = np.sqrt((sample.values**2).sum(axis=1)) * weights
    se = vals.std(ddof=1) / math.sqrt(vals.size) if vals.size > 1 else 0.0
    return float(vals.mean()), float(se)
