"""Independent reference computations used by the tests.

Everything here works from first principles (explicit enumeration, direct
definitions) and shares no code with the package beyond model accessors.
"""

import itertools
import math

import numpy as np


def random_chain_data(rng, states, period=1):
    mats = rng.random((period, states, states)) + 0.05
    mats /= mats.sum(axis=2, keepdims=True)
    init = rng.random(states) + 0.05
    return mats, init / init.sum()


def enumerate_paths(chain, n):
    """Yield (path, probability) over all state paths X_0..X_{n-1}."""
    S = chain.state_count
    mu0 = chain.initial_distribution
    for path in itertools.product(range(S), repeat=n):
        p = mu0[path[0]]
        for j in range(n - 1):
            p *= chain.matrix(j)[path[j], path[j + 1]]
        yield path, p


def path_array(chain, n):
    """All n-step state paths as an array, with their probabilities (vectorised enumeration)."""
    S = chain.state_count
    paths = np.array(list(itertools.product(range(S), repeat=n)), dtype=np.int64).reshape(-1, n)
    probs = chain.initial_distribution[paths[:, 0]].copy()
    for j in range(n - 1):
        probs *= chain.matrix(j)[paths[:, j], paths[:, j + 1]]
    return paths, probs


def cf_by_enumeration(chain, table, weights, n, t):
    """sum over paths of w(X_0) P(path) exp(i t S_n); ``table`` is (S,) values, shared over time."""
    total = 0j
    for path, p in enumerate_paths(chain, n):
        s = sum(table[x] for x in path)
        total += weights[path[0]] * p * complex(math.cos(t * s), math.sin(t * s))
    return total


def moments_by_enumeration(chain, table, weights, n):
    m0 = m1 = m2 = 0.0
    for path, p in enumerate_paths(chain, n):
        s = sum(table[x] for x in path)
        w = weights[path[0]] * p
        m0 += w
        m1 += w * s
        m2 += w * s * s
    mean = m1 / m0
    return mean, m2 / m0 - mean * mean


def ks_one_sample_direct(x, cdf):
    """Same definition as ``ks_one_sample`` with the O(N^2) counts done by broadcasting."""
    x = np.asarray(x, dtype=float)
    le = (x[None, :] <= x[:, None]).sum(axis=1) / x.size
    lt = (x[None, :] < x[:, None]).sum(axis=1) / x.size
    F = cdf(x)
    return float(max(np.abs(le - F).max(), np.abs(lt - F).max()))


def ks_two_sample_direct(a, b):
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    p = np.concatenate([a, b])
    fa = (a[None, :] <= p[:, None]).sum(axis=1) / a.size
    fb = (b[None, :] <= p[:, None]).sum(axis=1) / b.size
    return float(np.abs(fa - fb).max())


def ks_one_sample(x, cdf):
    """Quadratic-time sup |F_N - F| evaluated at every sample point and its left limit."""
    x = list(map(float, x))
    n = len(x)
    best = 0.0
    for xi in x:
        le = sum(1 for y in x if y <= xi)
        lt = sum(1 for y in x if y < xi)
        F = float(cdf(np.array([xi]))[0])
        best = max(best, abs(le / n - F), abs(lt / n - F))
    return best


def ks_two_sample(a, b):
    a, b = list(map(float, a)), list(map(float, b))
    best = 0.0
    for p in a + b:
        fa = sum(1 for y in a if y <= p) / len(a)
        fb = sum(1 for y in b if y <= p) / len(b)
        best = max(best, abs(fa - fb))
    return best


def alpha_two_state(chain, k, n, depth):
    """alpha between cylinders X_0..X_k and X_{k+n}..X_{k+n+depth} by explicit event search."""
    S = chain.state_count
    past_words = list(itertools.product(range(S), repeat=k + 1))
    future_words = list(itertools.product(range(S), repeat=depth + 1))
    horizon = k + n + depth + 1
    joint = np.zeros((len(past_words), len(future_words)))
    for path, p in enumerate_paths(chain, horizon):
        a = past_words.index(tuple(path[: k + 1]))
        b = future_words.index(tuple(path[k + n:k + n + depth + 1]))
        joint[a, b] += p
    pa, pb = joint.sum(axis=1), joint.sum(axis=0)
    best = 0.0
    for ma in range(1 << len(past_words)):
        A = [i for i in range(len(past_words)) if ma >> i & 1]
        for mb in range(1 << len(future_words)):
            B = [j for j in range(len(future_words)) if mb >> j & 1]
            pab = joint[np.ix_(A, B)].sum() if A and B else 0.0
            best = max(best, abs(pab - pa[A].sum() * pb[B].sum()))
    return best


def cadlag_modulus_bruteforce(v, t, delta):
    """Minimum over grid partitions with every cell longer than delta."""
    G = len(t)
    best = math.inf
    for k in range(G - 1):
        for cut in itertools.combinations(range(1, G - 1), k):
            pts = [0, *cut, G - 1]
            if any(t[b] - t[a] <= delta for a, b in zip(pts, pts[1:])):
                continue
            osc = 0.0
            for a, b in zip(pts, pts[1:]):
                seg = v[a:b + 1 if b == G - 1 else b]
                osc = max(osc, float(seg.max() - seg.min()))
            best = min(best, osc)
    return best


def grid_minimum(f, lo, hi, ratio=1.01):
    """min of f over a geometric grid with 1% steps."""
    m = np.exp(np.arange(math.log(lo), math.log(hi), math.log(ratio)))
    vals = f(m)
    return float(vals.min())
