"""Kolmogorov distances, the smoothing constant, and the quantitative bounds.

The smoothing lemma bounds d_K(X, Y) by

    4 c d_K(Y, Z) + int_{-T}^{T} |phi_X - phi_Y| / |t| dt + 2 |f_Z|_inf c**2 / T

where c solves int_0^{c/2} sin(x)**2 / x**2 dx = pi/4 + 1/8 and Z has a
bounded density.  Applied to X = S_nu/b_n and Y = S_mu/b_n it yields the
four-term bound evaluated by ``quant_eagleson_bound``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np
from scipy import integrate, optimize, special

from .errors import InvalidPairingError, PreconditionError

TARGET = math.pi / 4 + 1 / 8


@dataclass(frozen=True, eq=False)
class ReferenceLaw:
    cdf: Callable
    density_sup: float
    name: str = "user"


def standard_normal() -> ReferenceLaw:
    def cdf(x):
        return 0.5 * special.erfc(-np.asarray(x, dtype=float) / math.sqrt(2.0))

    return ReferenceLaw(cdf, 1.0 / math.sqrt(2.0 * math.pi), "standard normal")


# --------------------------------------------------------------------------
# the constant


def _sinc2(x):
    return np.sinc(np.asarray(x) / math.pi) ** 2


def sinc2_integral(u: float) -> float:
    """int_0^u sin(x)**2/x**2 dx by adaptive quadrature."""
    val, _ = integrate.quad(_sinc2, 0.0, u, epsabs=1e-13, epsrel=1e-13, limit=200)
    return val


def sinc2_integral_series(u: float, terms: int = 80) -> float:
    """The same integral from its power series, summed with fsum."""
    out = []
    for k in range(1, terms + 1):
        out.append((-1) ** (k + 1) * 2.0 ** (2 * k - 1) * u ** (2 * k - 1)
                   / (math.factorial(2 * k) * (2 * k - 1)))
    return math.fsum(out)


@dataclass(frozen=True)
class EsseenConstant:
    c: float
    residual: float
    bracket: tuple

    @property
    def half(self) -> float:
        return self.c / 2


def esseen_constant() -> EsseenConstant:
    """Root c of int_0^{c/2} sin^2 x / x^2 dx = pi/4 + 1/8, by bisection in u = c/2."""
    lo, hi = 0.0, math.pi / 2
    f = lambda u: sinc2_integral(u) - TARGET  # noqa: E731
    if not f(lo) < 0 < f(hi):
        raise RuntimeError("bracket for the smoothing constant does not change sign")
    u = optimize.bisect(f, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=200)
    return EsseenConstant(2.0 * u, abs(f(u)), (2.0 * lo, 2.0 * hi))


# --------------------------------------------------------------------------
# Kolmogorov distances


def kolmogorov_to_cdf(sample, law: ReferenceLaw | Callable) -> float:
    """sup_t |F_N(t) - F(t)| against a continuous cdf."""
    x = np.sort(np.asarray(sample, dtype=float).reshape(-1))
    if x.size == 0:
        raise ValueError("Kolmogorov distance of an empty sample")
    cdf = law.cdf if isinstance(law, ReferenceLaw) else law
    F = np.asarray(cdf(x), dtype=float)
    n = x.size
    i = np.arange(1, n + 1)
    return float(max(np.abs(i / n - F).max(), np.abs((i - 1) / n - F).max()))


def kolmogorov_two_sample(sample_a, sample_b) -> float:
    """sup_t |F_a(t) - F_b(t)| by a merged scan over all sample points."""
    a = np.sort(np.asarray(sample_a, dtype=float).reshape(-1))
    b = np.sort(np.asarray(sample_b, dtype=float).reshape(-1))
    if a.size == 0 or b.size == 0:
        raise ValueError("Kolmogorov distance needs two non-empty samples")
    pts = np.concatenate([a, b])
    fa = np.searchsorted(a, pts, side="right") / a.size
    fb = np.searchsorted(b, pts, side="right") / b.size
    return float(np.abs(fa - fb).max())


# --------------------------------------------------------------------------
# smoothing lemma


@dataclass(frozen=True)
class LemmaBound:
    integral: float
    integral_error: float
    inflated_integral: float
    dK_XY: float
    dK_XZ: float
    smoothing: float
    flagged: bool


def esseen_lemma_bound(phi_x, phi_y, T: float, dK_yz: float, law: ReferenceLaw,
                       c: EsseenConstant | None = None, cutoff: float = 1e-3) -> LemmaBound:
    """Evaluate both forms of the smoothing lemma.

    The integrand |phi_X - phi_Y|/|t| is even, so the integral is twice the
    one over [0, T].  On [0, t0], t0 = cutoff * T, it is replaced by the
    bound |m_X - m_Y| t0 + L t0**2 / 2 with means m and the second-moment
    gap L taken from central differences at 0.  Empirical characteristic
    functions contribute their confidence radii to ``inflated_integral``.
    """
    if T <= 0:
        raise ValueError("T must be positive")
    c = esseen_constant() if c is None else c
    for phi in (phi_x, phi_y):
        if abs(complex(phi(0.0)) - 1.0) > 1e-12:
            raise PreconditionError("characteristic functions must equal 1 at t = 0")
    t0 = cutoff * T
    h = t0
    dx = complex(phi_x(h)) - complex(phi_x(-h))
    dy = complex(phi_y(h)) - complex(phi_y(-h))
    mean_gap = abs((dx - dy) / (2j * h))
    second_x = (complex(phi_x(h)) + complex(phi_x(-h)) - 2.0) / h**2
    second_y = (complex(phi_y(h)) + complex(phi_y(-h)) - 2.0) / h**2
    L = abs(second_x - second_y) / 2.0
    near = mean_gap * t0 + L * t0**2 / 2.0

    def integrand(t):
        return abs(complex(phi_x(t)) - complex(phi_y(t))) / t

    flagged = False
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        far, err = integrate.quad(integrand, t0, T, epsabs=1e-11, epsrel=1e-10, limit=400)
        flagged = any(issubclass(w.category, integrate.IntegrationWarning) for w in caught)
    integral = 2.0 * (near + far)
    radius = getattr(phi_x, "radius", 0.0) + getattr(phi_y, "radius", 0.0)
    inflated = integral + 2.0 * radius * (1.0 + math.log(T / t0))
    smoothing = 2.0 * law.density_sup * c.c**2 / T
    return LemmaBound(integral, 2.0 * err, inflated, 4.0 * c.c * dK_yz + integral + smoothing,
                      (4.0 * c.c + 1.0) * dK_yz + integral + smoothing, smoothing, flagged)


# --------------------------------------------------------------------------
# quantitative transfer bound


@dataclass(frozen=True)
class QuantBoundReport:
    main: float
    translation: float
    mixing: float
    smoothing: float
    total: float
    uncertainty: float
    inputs: dict = field(default_factory=dict)

    def terms(self) -> dict:
        return {"main": self.main, "translation": self.translation,
                "mixing": self.mixing, "smoothing": self.smoothing}

    def to_dict(self) -> dict:
        return asdict(self)


def quant_eagleson_bound(dK_mu: float, I_rho: float, delta_rho: float, norm_r: float,
                         b_n: float, T: float, law: ReferenceLaw, c: EsseenConstant | None = None,
                         dK_mu_se: float = 0.0, I_rho_se: float = 0.0) -> QuantBoundReport:
    """(4c+1) dK_mu + 2 T I_rho / b_n + 2 delta_rho |r| ln T + 2 |f_Z|_inf c**2 / T.

    ``I_rho`` is int |S_rho| (2 + r) dmu.  Standard errors of dK_mu and
    I_rho propagate linearly into ``uncertainty``.
    """
    if T < 1:
        raise PreconditionError(f"T = {T} < 1 (the log term would be negative)")
    if b_n <= 0:
        raise ValueError("b_n must be positive")
    for name, val in (("dK_mu", dK_mu), ("I_rho", I_rho), ("delta_rho", delta_rho), ("norm_r", norm_r)):
        if not val >= 0:
            raise ValueError(f"{name} must be non-negative")
    c = esseen_constant() if c is None else c
    main = (4.0 * c.c + 1.0) * dK_mu
    translation = 2.0 * T * I_rho / b_n
    mixing = 2.0 * delta_rho * norm_r * math.log(T)
    smoothing = 2.0 * law.density_sup * c.c**2 / T
    unc = math.hypot((4.0 * c.c + 1.0) * dK_mu_se, 2.0 * T * I_rho_se / b_n)
    inputs = {"dK_mu": dK_mu, "I_rho": I_rho, "delta_rho": delta_rho, "norm_r": norm_r,
              "b_n": b_n, "T": T, "c": c.c, "density_sup": law.density_sup}
    return QuantBoundReport(main, translation, mixing, smoothing,
                            math.fsum([main, translation, mixing, smoothing]), unc, inputs)


def paired_norm(tilt, profile) -> float:
    """The tilt norm to pair with ``profile``; rejects mismatched norm classes.

    Variation-norm tilts pair with variation profiles.  An L^q tilt pairs
    with an L^p profile when q >= p (the L^q norm dominates).
    """
    if tilt.norm_value is None:
        raise InvalidPairingError("tilt has no norm value; validate it first")
    if tilt.norm_kind != profile.norm_class:
        raise InvalidPairingError(f"{tilt.norm_kind} tilt norm cannot pair with a "
                                  f"{profile.norm_class} mixing profile")
    if tilt.norm_kind == "lp" and tilt.p < profile.p:
        raise InvalidPairingError(f"L^{tilt.p} tilt norm is weaker than the profile's L^{profile.p}")
    return float(tilt.norm_value)


def recentering_bound(dK_centered_by_mu: float, mean_gap: float, b_n: float,
                      law: ReferenceLaw) -> float:
    """3 dK + (1 + 4 |f_Z|_inf) |E S_nu - E S_mu| / b_n."""
    if dK_centered_by_mu < 0 or mean_gap < 0 or b_n <= 0:
        raise ValueError("inputs must be non-negative and b_n positive")
    return 3.0 * dK_centered_by_mu + (1.0 + 4.0 * law.density_sup) * mean_gap / b_n


# --------------------------------------------------------------------------
# parameter selection


@dataclass(frozen=True)
class TSelection:
    T: float
    objective: float
    flag: str | None = None


def select_T(a: float, b: float, T_max: float) -> TSelection:
    """Minimise a T + b / T over 1 <= T <= T_max."""
    if a < 0 or b < 0 or T_max < 1:
        raise ValueError("need a, b >= 0 and T_max >= 1")
    if a == 0 and b == 0:
        return TSelection(1.0, 0.0, "degenerate")
    if a == 0:
        return TSelection(float(T_max), b / T_max, "unbounded-minimiser")
    raw = math.sqrt(b / a)
    T = min(max(raw, 1.0), float(T_max))
    flag = None if T == raw else "clamped"
    return TSelection(T, a * T + b / T, flag)


@dataclass(frozen=True)
class BlockingSchedule:
    n: np.ndarray
    a: np.ndarray
    ratio: np.ndarray
    saturated: np.ndarray


def blocking_schedule(c_values, b_values, n_list) -> BlockingSchedule:
    """a_n = the largest a <= n - 1 with c_a <= sqrt(b_n).

    ``c_values`` and ``b_values`` are arrays indexed by k and n or callables.
    c is replaced by its running maximum.  When no a qualifies, a_n = 1 and
    the row is flagged as saturated.
    """
    n_arr = np.asarray(n_list, dtype=np.int64)
    top = int(n_arr.max())
    c = np.array([c_values(k) for k in range(top)] if callable(c_values)
                 else np.asarray(c_values, dtype=float)[:top], dtype=float)
    if c.size < top:
        raise ValueError(f"need c_k for k < {top}")
    c = np.maximum.accumulate(c)
    a_out, ratio, sat = [], [], []
    for n in n_arr:
        b = float(b_values(int(n)) if callable(b_values) else np.asarray(b_values, dtype=float)[n])
        if b <= 0:
            raise ValueError("b_n must be positive")
        ok = np.flatnonzero(c[:n] <= math.sqrt(b))
        if ok.size == 0:
            a, s = 1, True
        else:
            a, s = int(ok[-1]), False
        a_out.append(a)
        ratio.append(c[min(a, c.size - 1)] / b)
        sat.append(s)
    return BlockingSchedule(n_arr, np.array(a_out), np.array(ratio), np.array(sat))
