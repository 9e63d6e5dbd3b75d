"""Characteristic functions: empirical ones with confidence radii, exact ones
for finite chains via complex transfer matrices, and the projected operator
norm envelope.

For a chain with width-one observables, step j contributes the factor
D_j(t) P_j with D_j(t) = diag(exp(i <t, g_j(state)>)), the phase taken at the
source state of the transition so that S_n = sum_{j<n} g_j(X_j).  Then

    mu(s exp(i t S_n)) = (mu_0 * s) . D_0 P_0 ... D_{n-1} P_{n-1} . 1.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import ResourceError
from .models import DensityTilt, InhomogeneousMarkovChain, ObservableSequence
from .sums import PartialSumSample

EMPIRICAL_RADIUS = 4.0
_GUARD_EVERY = 16


@dataclass(frozen=True, eq=False)
class CharacteristicFunction:
    """t -> E exp(i <t, X>).

    Scalar laws accept scalars or arrays of t; d-dimensional laws take
    arrays whose last axis has length d.  ``radius`` is the uniform
    confidence radius of an empirical estimate (0 for exact ones).
    """

    evaluator: Callable
    kind: str
    dim: int = 1
    count: int | None = None
    radius: float = 0.0

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        out = self.evaluator(t)
        return complex(out) if np.ndim(out) == 0 else out

    def confidence_radius(self, t=None) -> float:
        return self.radius


def _phases(values: np.ndarray, t: np.ndarray, dim: int) -> np.ndarray:
    # <t, values> for every t, shape t.shape[:-1] + (N,) (or t.shape + (N,) if d = 1)
    if dim == 1:
        return t[..., None] * values[:, 0]
    return np.tensordot(t, values, axes=([-1], [1]))


def empirical_cf(sample: PartialSumSample | np.ndarray, t_grid=None,
                 radius_factor: float = EMPIRICAL_RADIUS) -> CharacteristicFunction:
    """phi(t) = (1/N) sum_i exp(i <t, S_i>) with radius ``radius_factor``/sqrt(N).

    Negating t negates every phase exactly, so phi(-t) = conj(phi(t)) holds
    bit for bit, and phi(0) = 1 exactly.  ``t_grid`` is accepted for symmetry
    with the exact route; the returned object evaluates at any t.
    """
    values = sample.values if isinstance(sample, PartialSumSample) else np.asarray(sample, dtype=float)
    if values.ndim == 1:
        values = values[:, None]
    if values.shape[0] == 0:
        raise ValueError("empirical characteristic function of an empty sample")
    values = np.ascontiguousarray(values)
    dim = values.shape[1]
    count = values.shape[0]

    def phi(t):
        if dim > 1 and t.shape[-1:] != (dim,):
            raise ValueError(f"frequency vectors must have length {dim}")
        shape = t.shape if dim == 1 else t.shape[:-1]
        flat_t = t.reshape(-1) if dim == 1 else t.reshape(-1, dim)
        out = np.empty(flat_t.shape[0], dtype=complex)
        for i in range(flat_t.shape[0]):
            ang = _phases(values, flat_t[i], dim)
            out[i] = complex(np.cos(ang).mean(), np.sin(ang).mean())
        return out.reshape(shape)

    return CharacteristicFunction(phi, "empirical", dim, count, radius_factor / math.sqrt(count))


# --------------------------------------------------------------------------
# exact chain computations


def _tilt_mass(chain: InhomogeneousMarkovChain, tilt: DensityTilt | None) -> np.ndarray:
    if tilt is None:
        return chain.initial_distribution.copy()
    r = np.asarray(tilt(np.arange(chain.state_count)), dtype=float)
    if r.shape != (chain.state_count,):
        raise ValueError("tilt must give one value per chain state")
    return chain.initial_distribution * r


def _check(chain, obs, n):
    if not isinstance(chain, InhomogeneousMarkovChain):
        raise TypeError("exact routes need a finite chain")
    if n < 0 or n > chain.horizon:
        raise IndexError(f"n={n} outside the chain horizon")
    vals = obs(0, np.arange(chain.state_count)) if n > 0 else None
    if vals is not None and vals.shape != (chain.state_count, obs.dim):
        raise ValueError("observable does not match the chain state space")


def _canonical(t: np.ndarray, dim: int):
    # split t into a representative with non-negative leading coordinate and
    # a flag telling which entries were reflected
    lead = t if dim == 1 else t[..., 0]
    flip = lead < 0
    if dim > 1:
        for c in range(1, dim):
            zero = np.all(t[..., :c] == 0, axis=-1)
            flip |= zero & (t[..., c] < 0)
    rep = np.where(flip if dim == 1 else flip[..., None], -t, t)
    return rep, flip


def exact_cf_chain(chain: InhomogeneousMarkovChain, obs: ObservableSequence,
                   tilt: DensityTilt | None, n: int, t):
    """mu(r exp(i <t, S_n>)) for a finite chain (r = 1 when ``tilt`` is None).

    Vectorised over t.  At t = 0 the value is 1 without a tilt and the
    exactly summed int r dmu_0 with one; negative t are evaluated as the
    conjugate of -t so the symmetry is exact.
    """
    _check(chain, obs, n)
    dim = obs.dim
    t = np.asarray(t, dtype=float)
    if dim > 1 and t.shape[-1:] != (dim,):
        raise ValueError(f"frequency vectors must have length {dim}")
    rep, flip = _canonical(t, dim)
    flat = rep.reshape(-1) if dim == 1 else rep.reshape(-1, dim)
    mass = _tilt_mass(chain, tilt)
    states = np.arange(chain.state_count)
    # backward recursion v <- D_j P_j v, vectorised over frequencies
    v = np.ones((flat.shape[0], chain.state_count), dtype=complex)
    for j in range(n - 1, -1, -1):
        g = obs(j, states)
        ang = flat[:, None] * g[None, :, 0] if dim == 1 else flat @ g.T
        v = np.exp(1j * ang) * (v @ chain.matrix(j).T)
    out = v @ mass
    zero = ~np.any(flat != 0, axis=-1) if dim > 1 else flat == 0
    out[zero] = 1.0 if tilt is None else math.fsum(mass)
    out = out.reshape(flip.shape)
    out = np.where(flip, np.conj(out), out)
    return complex(out) if out.ndim == 0 else out


def exact_moments_chain(chain: InhomogeneousMarkovChain, obs: ObservableSequence,
                        tilt: DensityTilt | None, n: int, order: int = 2):
    """Exact (E S_n, Var S_n) under mu (tilt None) or nu = r dmu.

    Forward recursion carrying per state the mass, E[S 1{X_j = s}] and
    E[S S^T 1{X_j = s}].  Scalar observables give floats; vector ones give
    the mean vector and covariance matrix.  ``order=1`` skips the variance.
    """
    if order not in (1, 2):
        raise ValueError("only moments of order 1 and 2 are supported")
    _check(chain, obs, n)
    S, d = chain.state_count, obs.dim
    states = np.arange(S)
    mass = _tilt_mass(chain, tilt)
    first = np.zeros((S, d))
    second = np.zeros((S, d, d))
    for j in range(n):
        g = obs(j, states)
        P = chain.matrix(j)
        second = second + first[:, :, None] * g[:, None, :] + g[:, :, None] * first[:, None, :] \
            + mass[:, None, None] * g[:, :, None] * g[:, None, :]
        first = first + mass[:, None] * g
        mass, first = mass @ P, P.T @ first
        second = np.einsum("sab,st->tab", second, P)
    total = mass.sum()
    mean = first.sum(axis=0) / total
    if order == 1:
        return float(mean[0]) if d == 1 else mean
    cov = second.sum(axis=0) / total - np.outer(mean, mean)
    if d == 1:
        return float(mean[0]), float(cov[0, 0])
    return mean, cov


def exact_sum_distribution(chain: InhomogeneousMarkovChain, obs: ObservableSequence, n: int,
                           initial_mass=None, max_atoms: int = 1 << 20):
    """Law of (X_n, S_n) as arrays (state, value, mass), merged over equal values.

    Scalar observables only; raises ``ResourceError`` past ``max_atoms``.
    """
    if obs.dim != 1:
        raise ValueError("sum distributions are computed for scalar observables")
    S = chain.state_count
    mass = chain.initial_distribution if initial_mass is None else np.asarray(initial_mass, float)
    state = np.arange(S)
    value = np.zeros(S)
    keep = mass > 0
    state, value, mass = state[keep], value[keep], mass[keep]
    for j in range(n):
        g = obs(j, np.arange(S))[:, 0]
        P = chain.matrix(j)
        value = value + g[state]
        trans = mass[:, None] * P[state]
        nxt = np.broadcast_to(np.arange(S), trans.shape).reshape(-1)
        val = np.repeat(value, S)
        mass_all = trans.reshape(-1)
        live = mass_all > 0
        keys = np.stack([nxt[live].astype(float), val[live]], axis=1)
        uniq, inv = np.unique(keys, axis=0, return_inverse=True)
        mass = np.bincount(inv.reshape(-1), weights=mass_all[live], minlength=uniq.shape[0])
        state, value = uniq[:, 0].astype(np.int64), uniq[:, 1]
        if state.size > max_atoms:
            raise ResourceError(f"sum distribution exceeds {max_atoms} atoms at step {j}")
    return state, value, mass


def exact_translation_integral(chain: InhomogeneousMarkovChain, obs: ObservableSequence,
                               tilt: DensityTilt | None, rho: int) -> float:
    """int |S_rho| (2 + r) dmu, exactly, from the joint law of (X_rho, S_rho)."""
    r = np.ones(chain.state_count) if tilt is None else tilt(np.arange(chain.state_count))
    weight = chain.initial_distribution * (2.0 + r)
    _, value, mass = exact_sum_distribution(chain, obs, rho, initial_mass=weight)
    return math.fsum(np.abs(value) * mass)


# --------------------------------------------------------------------------
# transfer operator envelope


def fourier_factors(chain: InhomogeneousMarkovChain, obs: ObservableSequence, t, n: int):
    """Complex step matrices D_j(t) P_j for j < n (scalar t, scalar observable)."""
    states = np.arange(chain.state_count)
    for j in range(n):
        yield np.exp(1j * t * obs(j, states)[:, 0])[:, None] * chain.matrix(j)


def _product(chain, obs, t, n, cache):
    key = (float(t), n)
    if key in cache:
        return cache[key]
    prev = [m for (tt, m) in cache if tt == float(t) and m < n]
    start = max(prev) if prev else 0
    Q = cache[(float(t), start)] if prev else np.eye(chain.state_count, dtype=complex)
    states = np.arange(chain.state_count)
    for j in range(start, n):
        Q = Q @ (np.exp(1j * t * obs(j, states)[:, 0])[:, None] * chain.matrix(j))
        if (j + 1) % _GUARD_EVERY == 0 and not np.all(np.isfinite(Q)):
            # row sums of |D_j P_j| are 1, so this cannot trigger unless the
            # input matrices are corrupt
            raise FloatingPointError("transfer product lost finiteness")
    cache[key] = Q
    return Q


def projected_transfer_norm(chain: InhomogeneousMarkovChain, Q: np.ndarray, n: int,
                            norm: str = "spectral") -> float:
    """Norm of the transfer operator L s = diag(1/mu_n) Q^T diag(mu_0) s on centred inputs.

    L satisfies mu(s exp(itS_n)) = mu_n(L s) and lives on the support of
    mu_n.  ``"spectral"`` is the Euclidean operator norm of L composed with
    s -> s - mu_0(s) 1.  ``"l1"`` is the L1(mu_0) -> L1(mu_n) norm on
    mu_0-centred inputs; the extreme centred measures are point-mass
    differences, so it equals half the largest L1 distance between rows of Q
    over the support of mu_0, which the Dobrushin product bounds at t = 0.
    """
    mu0 = chain.initial_distribution
    if norm == "l1":
        rows = Q[mu0 > 0]
        return float(0.5 * np.abs(rows[:, None, :] - rows[None, :, :]).sum(axis=2).max())
    if norm != "spectral":
        raise ValueError(f"unknown norm {norm!r}")
    mun = chain.marginal(n)
    support = mun > 0
    L = (Q.T * mu0[None, :])[support] / mun[support, None]
    proj = np.eye(chain.state_count) - np.outer(np.ones(chain.state_count), mu0)
    return float(np.linalg.norm(L @ proj, 2))


@dataclass(frozen=True)
class EnvelopeTable:
    t: np.ndarray
    n: np.ndarray
    norm: np.ndarray

    COLUMNS = ("t", "n", "norm")

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.COLUMNS)
        for row in zip(self.t, self.n, self.norm):
            w.writerow((repr(float(row[0])), int(row[1]), repr(float(row[2]))))
        return buf.getvalue()


def operator_norm_envelope(chain: InhomogeneousMarkovChain, obs: ObservableSequence,
                           t_grid, n_list, norm: str = "spectral") -> EnvelopeTable:
    """Projected transfer-operator norms for every (t, n), for fitting C |t| R(nt).

    See ``projected_transfer_norm`` for the two norms offered.
    """
    if obs.dim != 1:
        raise ValueError("the envelope is tabulated for scalar observables")
    cache: dict = {}
    rows = []
    for t in np.asarray(t_grid, dtype=float).reshape(-1):
        for n in sorted(int(m) for m in n_list):
            Q = _product(chain, obs, t, n, cache)
            rows.append((t, n, projected_transfer_norm(chain, Q, n, norm)))
    arr = np.array(rows, dtype=float).reshape(-1, 3)
    return EnvelopeTable(arr[:, 0], arr[:, 1].astype(np.int64), arr[:, 2])
