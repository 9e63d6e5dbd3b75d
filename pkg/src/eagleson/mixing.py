"""Correlation-decay profiles and alpha-mixing coefficients.

A ``MixingProfile`` is the sequence delta_n bounding
|int s f(future from n) dmu - int s dmu int f dmu| <= |s| sup|f| delta_n
for densities s in the model's norm class.  For the maps x -> k_j x mod 1 the
transfer operator contracts variation by 1/k_j per step, so
delta_n = prod_{j<n} 1/k_j in total variation.  For chains, delta is
synthesised from alpha-mixing and approximation coefficients, or taken from
the Dobrushin contraction directly.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import ResourceError
from .models import InhomogeneousMarkovChain, SequentialExpandingMap

ENUMERATION_CAP = 1 << 14
MAX_SUBSET_ATOMS = 14
ALPHA_MAX = 0.25


@dataclass(frozen=True, eq=False)
class MixingProfile:
    """delta_n as an explicit array or a closed form.

    form ``"exact-array"`` reads ``data[n]``; ``"geometric"`` is
    ``c1 * rate**n``; ``"polynomial"`` is ``c1 * max(n, 1)**(-rate)``.
    ``norm_class`` names the density norm the profile is paired with.
    """

    form: str
    provenance: str
    norm_class: str
    p: float = math.inf
    data: np.ndarray | None = None
    c1: float = 1.0
    rate: float = 0.0

    def __post_init__(self):
        if self.form not in ("exact-array", "geometric", "polynomial"):
            raise ValueError(f"unknown profile form {self.form!r}")
        if self.form == "exact-array":
            data = np.array(self.data, dtype=float)
            if data.ndim != 1 or np.any(data < 0) or not np.all(np.isfinite(data)):
                raise ValueError("profile values must be finite and non-negative")
            data.setflags(write=False)
            object.__setattr__(self, "data", data)
        elif self.c1 < 0 or self.rate < 0:
            raise ValueError("closed-form constants must be non-negative")

    @property
    def length(self) -> float:
        return self.data.size if self.form == "exact-array" else math.inf

    def value(self, n: int) -> float:
        if n < 0:
            raise IndexError("profile index must be >= 0")
        if self.form == "exact-array":
            if n >= self.data.size:
                raise IndexError(f"profile only holds {self.data.size} values")
            return float(self.data[n])
        if self.form == "geometric":
            return self.c1 * self.rate**n
        return self.c1 * max(n, 1) ** (-self.rate)

    __call__ = value

    def array(self, n: int) -> np.ndarray:
        """delta_0, ..., delta_{n-1}."""
        if self.form == "exact-array":
            if n > self.data.size:
                raise IndexError(f"profile only holds {self.data.size} values")
            return self.data[:n]
        idx = np.arange(n, dtype=float)
        if self.form == "geometric":
            return self.c1 * self.rate**idx
        return self.c1 * np.maximum(idx, 1.0) ** (-self.rate)

    def decays(self, tol: float = 1e-3) -> bool:
        """Certified for closed forms; a tail spot check for arrays."""
        if self.form == "geometric":
            return self.rate < 1 or self.c1 == 0
        if self.form == "polynomial":
            return self.rate > 0 or self.c1 == 0
        tail = self.data[-max(1, self.data.size // 4):]
        return bool(np.all(np.diff(tail) <= 0) and tail[-1] <= tol * max(self.data[0], tol))


def delta_profile_expanding(slopes, up_to: int) -> MixingProfile:
    """delta_n = prod_{j<n} 1/k_j for n = 0..up_to, in total variation."""
    if isinstance(slopes, SequentialExpandingMap):
        model = slopes
    else:
        model = SequentialExpandingMap(tuple(slopes), periodic=True)
    n_max = int(min(up_to, model.horizon))
    factors = np.array([1.0 / model.slope(j) for j in range(n_max)])
    data = np.concatenate([[1.0], np.cumprod(factors)])
    return MixingProfile("exact-array", "analytic", "variation", data=data)


# --------------------------------------------------------------------------
# alpha-mixing


@dataclass(frozen=True, eq=False)
class AlphaProfile:
    """alpha_n for n = 0..len-1; ``kind`` is exact, lower-bound or upper-bound."""

    values: np.ndarray
    kind: str
    depth: int | None = None

    def __post_init__(self):
        vals = np.array(self.values, dtype=float)
        if np.any(vals < 0) or np.any(vals > ALPHA_MAX + 1e-15):
            raise ValueError("alpha coefficients lie in [0, 1/4]")
        object.__setattr__(self, "values", vals)

    def value(self, n: int) -> float:
        return float(self.values[n])


@dataclass(frozen=True, eq=False)
class ApproximationProfile:
    """gamma_n >= |r - E[r | X_0..X_n]|_1; zero for tilts of X_0 alone."""

    values: np.ndarray

    def __post_init__(self):
        vals = np.array(self.values, dtype=float)
        if np.any(vals < 0):
            raise ValueError("approximation coefficients must be non-negative")
        object.__setattr__(self, "values", vals)

    @classmethod
    def zero(cls, length: int) -> "ApproximationProfile":
        return cls(np.zeros(length))


@dataclass(frozen=True)
class AlphaResult:
    value: float
    kind: str
    past_event: tuple
    future_event: tuple
    atoms: tuple


def _word_probs(chain, law, start, length):
    # P(X_start..X_{start+length-1} = word) with X_start ~ law, words in
    # lexicographic order (last coordinate fastest)
    probs = np.asarray(law, dtype=float)
    S = chain.state_count
    for j in range(start, start + length - 1):
        last = np.arange(probs.size) % S
        probs = (probs[:, None] * chain.matrix(j)[last]).reshape(-1)
    return probs


def joint_cylinder_matrix(chain: InhomogeneousMarkovChain, k: int, n: int, depth: int) -> np.ndarray:
    """J[a, b] = P(past word a on 0..k, future word b on k+n..k+n+depth)."""
    S = chain.state_count
    past = _word_probs(chain, chain.initial_distribution, 0, k + 1)
    bridge = chain.product(k, n)  # X_k -> X_{k+n}
    # conditional future word probabilities for each starting state
    fut = np.stack([_word_probs(chain, np.eye(S)[s], k + n, depth + 1) for s in range(S)])
    last_past = np.arange(past.size) % S
    return past[:, None] * (bridge[last_past] @ fut)


def _subset_masks(m: int, lo: int, hi: int) -> np.ndarray:
    codes = np.arange(lo, hi, dtype=np.int64)
    return ((codes[:, None] >> np.arange(m)) & 1).astype(float)


def _best_subset(D: np.ndarray, chunk: int = 1 << 10):
    # sup over subsets B of the columns of sum_a D[a, B]^+, by enumeration;
    # returns the value and the first maximising mask in code order
    m = D.shape[1]
    best, best_code = -1.0, 0
    for lo in range(0, 1 << m, chunk):
        hi = min(1 << m, lo + chunk)
        masks = _subset_masks(m, lo, hi)
        vals = np.maximum(D @ masks.T, 0.0).sum(axis=0)
        i = int(np.argmax(vals))
        if vals[i] > best:
            best, best_code = float(vals[i]), lo + i
    return best, best_code


def _fixed_point(D: np.ndarray):
    # alternating optimisation of sum_{a in A, b in B} D[a, b] from every
    # singleton start on both sides; a lower bound on the supremum
    best, best_pair = 0.0, (np.zeros(D.shape[0], bool), np.zeros(D.shape[1], bool))
    starts = [("col", j) for j in range(min(D.shape[1], 64))] + \
             [("row", i) for i in range(min(D.shape[0], 64))]
    for side, idx in starts:
        B = np.zeros(D.shape[1], bool)
        A = np.zeros(D.shape[0], bool)
        if side == "col":
            B[idx] = True
        else:
            A[idx] = True
            B = D[A].sum(axis=0) > 0
        for _ in range(1000):
            A_new = D[:, B].sum(axis=1) > 0
            B_new = D[A_new].sum(axis=0) > 0
            if np.array_equal(A_new, A) and np.array_equal(B_new, B):
                break
            A, B = A_new, B_new
        val = float(D[np.ix_(A, B)].sum()) if A.any() and B.any() else 0.0
        if val > best:
            best, best_pair = val, (A.copy(), B.copy())
    return best, best_pair


def alpha_bruteforce(chain: InhomogeneousMarkovChain, k: int, n: int, depth: int,
                     allow_fallback: bool = False) -> AlphaResult:
    """alpha(F_{0,k}, F_{k+n,k+n+depth}) over all events of the two cylinder algebras.

    For a fixed future event B the best past event is {a : P(B|a) > P(B)},
    so the supremum equals max_B sum_a (P(a, B) - P(a)P(B))^+, and by
    symmetry the same holds with the roles swapped.  Subsets of the smaller
    side are enumerated when it has at most 14 atoms; otherwise, with
    ``allow_fallback``, an alternating fixed point from both sides gives a
    value flagged as a lower bound.
    """
    if k < 0 or n < 0 or depth < 0:
        raise ValueError("k, n and depth must be non-negative")
    S = chain.state_count
    atoms = (S ** (k + 1), S ** (depth + 1))
    if max(atoms) > ENUMERATION_CAP:
        raise ResourceError(f"{max(atoms)} cylinder atoms exceed the cap {ENUMERATION_CAP}")
    bridge = chain.product(k, n)[chain.marginal(k) > 0]
    if np.all(bridge == bridge[0]):
        # X_{k+n} forgets X_k entirely: the algebras are independent, and the
        # answer is 0 without the rounding noise of J - outer(margins)
        none = ()
        return AlphaResult(0.0, "exact", none, none, atoms)
    J = joint_cylinder_matrix(chain, k, n, depth)
    D = J - np.outer(J.sum(axis=1), J.sum(axis=0))
    transpose = atoms[0] < atoms[1]
    Dm = D.T if transpose else D
    if Dm.shape[1] <= MAX_SUBSET_ATOMS:
        value, code = _best_subset(Dm)
        chosen = np.array([(code >> i) & 1 for i in range(Dm.shape[1])], dtype=bool)
        other = (Dm[:, chosen].sum(axis=1) > 0) if chosen.any() else np.zeros(Dm.shape[0], bool)
        kind = "exact"
    else:
        if not allow_fallback:
            raise ResourceError(f"{Dm.shape[1]} atoms on the smaller side exceed subset "
                                f"enumeration; pass allow_fallback=True for a lower bound")
        value, (other, chosen) = _fixed_point(Dm)
        kind = "lower-bound"
    past, future = (chosen, other) if transpose else (other, chosen)
    if value > ALPHA_MAX:
        if value > ALPHA_MAX + 1e-12:
            warnings.warn(f"alpha estimate {value} above 1/4 clamped", RuntimeWarning)
        value = ALPHA_MAX
    return AlphaResult(max(value, 0.0), kind, tuple(np.flatnonzero(past)),
                       tuple(np.flatnonzero(future)), atoms)


def dobrushin_coefficient(matrix) -> float:
    """Half the largest L1 distance between two rows."""
    P = np.asarray(matrix, dtype=float)
    return float(0.5 * np.abs(P[:, None, :] - P[None, :, :]).sum(axis=2).max())


def _window_products(chain, n: int) -> np.ndarray:
    coeffs = np.array([dobrushin_coefficient(P) for P in chain.transition_matrices])
    if chain.periodic:
        starts = range(chain.period)
        return np.array([np.prod(coeffs[(s + np.arange(n)) % chain.period]) for s in starts])
    if n > chain.period:
        return np.zeros(1)
    return np.array([np.prod(coeffs[s:s + n]) for s in range(chain.period - n + 1)])


def alpha_upper_dobrushin(chain: InhomogeneousMarkovChain, n: int) -> float:
    """Upper bound on alpha_n: 1/4 times the largest product of n consecutive
    Dobrushin coefficients.  n = 0 gives the trivial 1/4.

    Given the past, P(B | F_{0,k}) = (Q h)(X_k) with Q the n-step matrix and
    h in [0, 1]; its oscillation is at most the coefficient of Q, and
    |Cov(1_A, Qh)| <= P(A)(1 - P(A)) osc(Qh) <= osc(Qh)/4.
    """
    if n < 0:
        raise ValueError("n must be >= 0")
    if n == 0:
        return ALPHA_MAX
    return float(ALPHA_MAX * _window_products(chain, n).max())


def alpha_profile_dobrushin(chain: InhomogeneousMarkovChain, n_max: int) -> AlphaProfile:
    return AlphaProfile([alpha_upper_dobrushin(chain, n) for n in range(n_max + 1)], "upper-bound")


def delta_profile_dobrushin(chain: InhomogeneousMarkovChain, n_max: int, p: float = 1.0) -> MixingProfile:
    """delta_n = 2 prod_{j<n} theta(P_j) for densities of X_0 in L^p(mu), p >= 1.

    With psi = E[f(future) | X_0], osc(psi) <= 2 sup|f| prod theta, hence
    |Cov(s, f)| = |E[(s - Es)(psi - c)]| <= E|s - Es| sup|f| prod theta and
    E|s - Es| <= 2|s|_1 <= 2|s|_p.
    """
    coeffs = np.array([dobrushin_coefficient(chain.matrix(j)) for j in range(n_max)])
    data = 2.0 * np.concatenate([[1.0], np.cumprod(coeffs)])
    return MixingProfile("exact-array", "analytic", "lp", p=float(p), data=data)


def delta_from_alpha(alpha: AlphaProfile, gamma: ApproximationProfile, p: float) -> MixingProfile:
    """delta_n = 6 alpha_{[n/2]}^{1-1/p} + 2 gamma_{[n/2]} (1/inf read as 0)."""
    if p < 1:
        raise ValueError("p must be >= 1")
    size = min(alpha.values.size, gamma.values.size)
    half = np.arange(2 * size) // 2
    expo = 1.0 if math.isinf(p) else 1.0 - 1.0 / p
    data = 6.0 * alpha.values[half] ** expo + 2.0 * gamma.values[half]
    return MixingProfile("exact-array", "synthesized", "lp", p=float(p), data=data)


# --------------------------------------------------------------------------
# correlation certificate for the maps


@dataclass(frozen=True)
class CorrelationCheck:
    n: int
    measured: float
    standard_error: float
    bound: float

    @property
    def holds(self) -> bool:
        return self.measured <= self.bound + 3.0 * self.standard_error


def _pieces(breaks, values):
    x = np.asarray(breaks, dtype=float)
    v = np.asarray(values, dtype=float)
    if x[0] != 0.0 or x[-1] != 1.0 or np.any(np.diff(x) <= 0) or x.shape != v.shape:
        raise ValueError("breakpoints must increase from 0 to 1 and match the values")
    slope = np.diff(v) / np.diff(x)
    return x, slope, v[:-1] - slope * x[:-1]


def transfer_piecewise_linear(breaks, values, K: int, y) -> np.ndarray:
    """(L^n s)(y) = (1/K) sum_{i<K} s((y + i)/K) for piecewise-linear s.

    The composite of n maps with slope product K is y -> K y mod 1, whose
    transfer operator averages over the K preimages; on each linear piece
    the sum over preimage indices is closed form.
    """
    x, slope, icpt = _pieces(breaks, values)
    y = np.asarray(y, dtype=float)
    total = np.zeros(y.shape)
    for lo, hi, b, a in zip(x[:-1], x[1:], slope, icpt):
        i_lo = np.clip(np.ceil(K * lo - y), 0, K)
        i_hi = np.clip(np.ceil(K * hi - y), 0, K) if hi < 1.0 else np.full(y.shape, float(K))
        count = np.maximum(i_hi - i_lo, 0.0)
        index_sum = (i_lo + i_hi - 1.0) * count / 2.0
        total += a * count + b * (count * y + index_sum) / K
    return total / K


def correlation_exact(model: SequentialExpandingMap, breaks, values, f, n: int,
                      order: int = 32) -> float:
    """int s * f(X_n) dmu - int s int f, by Gauss-Legendre between the kinks of L^n s."""
    K = 1
    for j in range(n):
        K *= model.slope(j)
    x = np.asarray(breaks, dtype=float)
    kinks = np.unique(np.concatenate([np.mod(K * x, 1.0), np.linspace(0.0, 1.0, 17)]))
    nodes, weights = np.polynomial.legendre.leggauss(order)
    a, b = kinks[:-1, None], kinks[1:, None]
    pts = (a + b) / 2 + (b - a) / 2 * nodes
    w = (b - a) / 2 * weights
    fy = np.asarray(f(pts), dtype=float)
    integral_sfn = float((w * transfer_piecewise_linear(breaks, values, K, pts) * fy).sum())
    integral_f = float((w * fy).sum())
    v = np.asarray(values, dtype=float)
    integral_s = float(((v[1:] + v[:-1]) / 2 * np.diff(x)).sum())
    return integral_sfn - integral_s * integral_f


def correlation_mc(model: SequentialExpandingMap, s, f, n: int, count: int, seed: int,
                   workers: int | None = None) -> tuple[float, float]:
    """Monte Carlo covariance of s(X_0) and f(X_n) with its standard error."""
    from .models import sample_trajectories
    batch = sample_trajectories(model, n + 1, count, seed, workers=workers)
    a = np.asarray(s(batch.values[:, 0]), dtype=float)
    b = np.asarray(f(batch.values[:, n]), dtype=float)
    prod = (a - a.mean()) * (b - b.mean())
    return float(prod.mean()), float(prod.std(ddof=1) / math.sqrt(count))


def correlation_certificate(model: SequentialExpandingMap, breaks, values, f, f_sup: float,
                            n: int) -> CorrelationCheck:
    """Exact covariance against the bound Var(s) sup|f| delta_n."""
    variation = float(np.abs(np.diff(np.asarray(values, dtype=float))).sum())
    delta = delta_profile_expanding(model, n).value(n)
    measured = abs(correlation_exact(model, breaks, values, f, n))
    return CorrelationCheck(n, measured, 0.0, variation * f_sup * delta)
