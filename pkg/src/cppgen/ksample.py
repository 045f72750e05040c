"""Uniform k-sample genealogies: mixture representation and likelihoods.

The k-sample tree is a mixture of Bernoulli-sampled CPPs over an explicit
mixing density for the sampling probability y.  This module provides that
density and its exact sampler, the two-stage (de Finetti) tree sampler, the
joint distribution function of node depths on {N = k+m} together with its
brute-force enumeration twin, and all likelihood variants.

All likelihoods are computed in log space; each ``*_likelihood`` function is
the linear-space convenience wrapper of its ``*_loglikelihood`` twin.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np
from scipy.special import comb, logsumexp

from .cpp import RandomStream, thinned_inverse_tail
from .errors import DomainError, QuadratureError, SizeGuardError, TieError
from .kernel import InverseTail, invert_tail, node_depth_density_f, survival_a
from .model import OrientedUltrametricTree, count_cherries

__all__ = [
    "MixtureParams",
    "mixing_density",
    "mixing_cdf",
    "sample_mixing",
    "definetti_sample",
    "definetti_sample_many",
    "full_loglikelihood",
    "full_likelihood",
    "bernoulli_loglikelihood",
    "bernoulli_likelihood",
    "ksample_loglikelihood",
    "ksample_likelihood",
    "joint_df",
    "joint_df_bruteforce",
    "likelihood_with_missing",
    "power_sum_identity",
]

# Hard limits for the combinatorial enumerations.
MAX_BRUTE_M = 12
MAX_BRUTE_K = 8
# Divided differences below this separation are numerically explosive.
TIE_TOL = 1e-8


@dataclass(frozen=True)
class MixtureParams:
    """Sample size k and depth-below-horizon probability a = P(H < T)."""

    k: int
    a: float

    def __post_init__(self):
        if self.k < 1:
            raise DomainError("k must be >= 1")
        if not (0.0 <= self.a < 1.0):
            raise DomainError("a must lie in [0, 1)")

    @classmethod
    def from_tail(cls, F: InverseTail, k: int) -> "MixtureParams":
        return cls(k=k, a=survival_a(F))

    def c(self, y: float) -> float:
        """Normalizing constant of the conditional depth density: a y / (1 - a(1-y))."""
        return self.a * y / (1.0 - self.a * (1.0 - y))


def mixing_density(params: MixtureParams, y):
    """Density of the mixing distribution: k(1-a) y^{k-1} / (1 - a(1-y))^{k+1}."""
    y_arr = np.asarray(y, dtype=float)
    if np.any(y_arr <= 0.0) or np.any(y_arr >= 1.0):
        raise DomainError("y must lie in (0, 1)")
    k, a = params.k, params.a
    out = k * (1.0 - a) * y_arr ** (k - 1) / (1.0 - a * (1.0 - y_arr)) ** (k + 1)
    return out if out.ndim else float(out)


def mixing_cdf(params: MixtureParams, y):
    """Closed-form CDF (y / (1 - a(1-y)))^k of the mixing distribution."""
    y_arr = np.asarray(y, dtype=float)
    k, a = params.k, params.a
    out = (y_arr / (1.0 - a * (1.0 - y_arr))) ** k
    return out if out.ndim else float(out)


def _mixing_inverse_cdf(params: MixtureParams, u):
    """Exact inverse of :func:`mixing_cdf`: v = u^{1/k}, y = v(1-a)/(1-av)."""
    v = np.asarray(u, dtype=float) ** (1.0 / params.k)
    out = v * (1.0 - params.a) / (1.0 - params.a * v)
    return out if np.asarray(out).ndim else float(out)


def sample_mixing(params: MixtureParams, rng: RandomStream) -> float:
    return float(_mixing_inverse_cdf(params, rng.uniform()))


def definetti_sample(
    F: InverseTail, k: int, rng: RandomStream
) -> Tuple[float, OrientedUltrametricTree]:
    """Two-stage k-sample tree draw: y from the mixture, then k-1 iid depths.

    Depths are distributed as H_y conditioned on H_y < T, drawn by exact
    inverse CDF on the thinned tail.
    """
    params = MixtureParams.from_tail(F, k)
    y = sample_mixing(params, rng)
    if k == 1:
        return y, OrientedUltrametricTree(height=F.T)
    Fy = thinned_inverse_tail(F, y)
    c = 1.0 - 1.0 / float(Fy.value(Fy.T))
    u = rng.rng.random(k - 1)
    targets = 1.0 / (1.0 - c * u)
    depths = invert_tail(Fy, targets)
    return y, OrientedUltrametricTree(height=F.T, depths=tuple(depths))


def definetti_sample_many(
    F: InverseTail, k: int, reps: int, rng: RandomStream
) -> Tuple[np.ndarray, list]:
    """Vectorized replication of :func:`definetti_sample`.

    Returns (y values, trees).  The conditional depth inversions for all
    replicates run through a single vectorized bisection, with the thinning
    applied per replicate inside the bracketing loop.
    """
    params = MixtureParams.from_tail(F, k)
    ys = np.asarray(_mixing_inverse_cdf(params, rng.rng.random(reps)))
    ys = np.minimum(np.maximum(ys, np.finfo(float).tiny), 1.0)
    if k == 1:
        return ys, [OrientedUltrametricTree(height=F.T) for _ in range(reps)]
    a = params.a
    c = a * ys / (1.0 - a * (1.0 - ys))  # P(H_y < T) per replicate
    u = rng.rng.random((reps, k - 1))
    targets = 1.0 / (1.0 - c[:, None] * u)  # F_y(t) targets
    # Solve F_y(t) = target with F_y = 1 - y + y F, per-element y.
    yy = np.broadcast_to(ys[:, None], targets.shape)
    base_targets = (targets - (1.0 - yy)) / yy  # F(t) targets
    depths = invert_tail(F, base_targets.ravel()).reshape(targets.shape)
    trees = [
        OrientedUltrametricTree(height=F.T, depths=tuple(row)) for row in depths
    ]
    return ys, trees


# ---------------------------------------------------------------------------
# Likelihoods
# ---------------------------------------------------------------------------


def _log_orientation_factor(tree: OrientedUltrametricTree, oriented: bool) -> float:
    if oriented:
        return 0.0
    n = tree.n_tips
    return (n - 1 - count_cherries(tree)) * math.log(2.0)


def _check_depths(tree: OrientedUltrametricTree, F: InverseTail):
    if abs(tree.height - F.T) > 1e-9 * max(F.T, 1.0):
        raise DomainError("tree height does not match the tail horizon T")
    d = np.asarray(tree.depths)
    if d.size and (d.min() <= 0.0 or d.max() >= F.T):
        raise DomainError("node depths must lie strictly in (0, T)")
    return d


def full_loglikelihood(
    tree: OrientedUltrametricTree,
    F: InverseTail,
    oriented: bool = True,
    conditional: bool = False,
) -> float:
    """log of C(tau)/F(T) * prod f(x_i); ``conditional`` divides by a^{n-1}
    for the version conditioned on the tip count."""
    d = _check_depths(tree, F)
    out = _log_orientation_factor(tree, oriented) - math.log(float(F.value(F.T)))
    if d.size:
        out += float(np.sum(np.log(node_depth_density_f(F, d))))
    if conditional and d.size:
        out -= d.size * math.log(survival_a(F))
    return out


def full_likelihood(tree, F, oriented: bool = True, conditional: bool = False) -> float:
    return math.exp(full_loglikelihood(tree, F, oriented, conditional))


def bernoulli_loglikelihood(
    tree: OrientedUltrametricTree,
    F: InverseTail,
    y: float,
    oriented: bool = True,
    conditional: bool = False,
) -> float:
    return full_loglikelihood(tree, thinned_inverse_tail(F, y), oriented, conditional)


def bernoulli_likelihood(tree, F, y, oriented: bool = True, conditional: bool = False):
    return math.exp(bernoulli_loglikelihood(tree, F, y, oriented, conditional))


def ksample_loglikelihood(
    tree: OrientedUltrametricTree,
    F: InverseTail,
    k: int,
    oriented: bool = True,
    quad_nodes: int = 64,
    max_nodes: int = 4096,
    rtol: float = 1e-6,
) -> float:
    """Log-likelihood of a k-tip tree under the uniform k-sampling scheme.

    The mixture integral over y is mapped through y = v(1-a)/(1-av) (the
    k=1 mixing CDF transform), under which the k-sample likelihood becomes

        C(tau) * k / a^{k-1} * int_0^1 prod_i f_{y(v)}(x_i) dv,

    with an O(1) integrand at both endpoints; Gauss-Legendre nodes are
    doubled until the value is stable to ``rtol`` relative.
    """
    if tree.n_tips != k:
        raise DomainError(f"tree has {tree.n_tips} tips, expected k={k}")
    d = _check_depths(tree, F)
    a = survival_a(F)
    base = _log_orientation_factor(tree, oriented) + math.log(k) - (k - 1) * math.log(a)
    if k == 1:
        return base
    Fv = np.asarray(F.value(d))
    dFv = np.asarray(F.deriv(d))
    log_dF = np.log(dFv)

    def integral(n: int) -> float:
        nodes, weights = np.polynomial.legendre.leggauss(n)
        v = 0.5 * (nodes + 1.0)
        w = 0.5 * weights
        y = v * (1.0 - a) / (1.0 - a * v)
        FY = 1.0 - y[:, None] + y[:, None] * Fv[None, :]
        logf = np.log(y)[:, None] + log_dF[None, :] - 2.0 * np.log(FY)
        return float(logsumexp(logf.sum(axis=1) + np.log(w)))

    prev = integral(quad_nodes)
    n = quad_nodes
    while n < max_nodes:
        n *= 2
        cur = integral(n)
        if abs(cur - prev) <= rtol:
            return base + cur
        prev = cur
    raise QuadratureError(
        f"k-sample quadrature not stable to {rtol} relative at {max_nodes} nodes"
    )


def ksample_likelihood(tree, F, k, oriented: bool = True, quad_nodes: int = 64, **kw):
    return math.exp(ksample_loglikelihood(tree, F, k, oriented, quad_nodes, **kw))


# ---------------------------------------------------------------------------
# Joint distribution function on {N = k + m}
# ---------------------------------------------------------------------------


def _depth_probs(k: int, x: Sequence[float], F: InverseTail):
    x = np.asarray(x, dtype=float)
    if len(x) != k - 1:
        raise DomainError(f"expected {k - 1} depth bounds, got {len(x)}")
    if x.size and (x.min() <= 0.0 or x.max() >= F.T):
        raise DomainError("depth bounds must lie strictly in (0, T)")
    p0 = survival_a(F)
    pi = 1.0 - 1.0 / np.asarray(F.value(x)) if x.size else np.empty(0)
    return p0, pi


def joint_df(k: int, m: int, x: Sequence[float], F: InverseTail) -> float:
    """P(N = k+m, H'_1 < x_1, ..., H'_{k-1} < x_{k-1}) for the k-sample.

    Closed-form divided-difference evaluation; requires the p_i pairwise
    distinct and distinct from p_0 = P(H < T) (raises TieError otherwise).
    Accumulation is in extended precision to tame the cancellation in the
    divided-difference sum.
    """
    if m < 0:
        raise DomainError("m must be >= 0")
    p0_f, pi_f = _depth_probs(k, x, F)
    if k == 1:
        return float((1.0 - p0_f) * p0_f**m)
    p0 = np.longdouble(p0_f)
    p = np.asarray(pi_f, dtype=np.longdouble)
    diffs = p[:, None] - p[None, :]
    np.fill_diagonal(diffs, 1.0)
    if float(np.abs(diffs).min()) < TIE_TOL or float(np.abs(p - p0).min()) < TIE_TOL:
        raise TieError(
            "p_i values closer than 1e-8; perturb depths (e.g. by 1e-6*T) or "
            "use joint_df_bruteforce"
        )
    denom = diffs.prod(axis=1)
    num = p ** (m + 2) - (m + 2) * p * p0 ** (m + 1) + (m + 1) * p0 ** (m + 2)
    total = np.sum(p ** (k - 2) / denom * num / (p - p0) ** 2)
    out = (1.0 - p0) / np.longdouble(comb(m + k, k, exact=True)) * p.prod() * total
    return float(out)


def _compositions(total: int, parts: int):
    """All tuples of `parts` nonnegative integers summing to `total`."""
    if parts == 0:
        if total == 0:
            yield ()
        return
    for bars in itertools.combinations(range(total + parts - 1), parts - 1):
        prev = -1
        out = []
        for b in bars:
            out.append(b - prev - 1)
            prev = b
        out.append(total + parts - 2 - prev)
        yield tuple(out)


def _guard(k: int, m: int):
    if m > MAX_BRUTE_M or k > MAX_BRUTE_K:
        raise SizeGuardError(f"enumeration guard exceeded (k={k} > {MAX_BRUTE_K} or m={m} > {MAX_BRUTE_M})")


def joint_df_bruteforce(k: int, m: int, x: Sequence[float], F: InverseTail) -> float:
    """Same probability as :func:`joint_df`, by explicit enumeration of the
    unsampled-tip configurations; no distinctness requirement."""
    if m < 0:
        raise DomainError("m must be >= 0")
    _guard(k, m)
    p0, pi = _depth_probs(k, x, F)
    total = 0.0
    for mk in range(m + 1):
        inner = 0.0
        for cfg in _compositions(m - mk, k - 1):
            term = 1.0
            for p, mi in zip(pi, cfg):
                term *= p ** (mi + 1)
            inner += term
        total += (mk + 1) * p0**mk * inner
    return float((1.0 - p0) / comb(m + k, k, exact=True) * total)


def likelihood_with_missing(
    tree: OrientedUltrametricTree,
    F: InverseTail,
    k: int,
    m: int,
    oriented: bool = True,
) -> float:
    """Likelihood of a k-tip tree jointly with {N = k+m}, by enumeration.

    Reference implementation for small m: the configuration sum grows
    combinatorially and is guarded accordingly.
    """
    if tree.n_tips != k:
        raise DomainError(f"tree has {tree.n_tips} tips, expected k={k}")
    if m < 0:
        raise DomainError("m must be >= 0")
    _guard(k, m)
    d = _check_depths(tree, F)
    p = np.append(1.0 - 1.0 / np.asarray(F.value(d)) if d.size else [], survival_a(F))
    total = 0.0
    for cfg in _compositions(m, k):
        term = 1.0
        for pi, mi in zip(p, cfg):
            term *= (mi + 1) * pi**mi
        total += term
    log_l = full_loglikelihood(tree, F, oriented)
    return math.exp(log_l) * total / comb(m + k, k, exact=True)


def power_sum_identity(p: Sequence[float], m: int) -> Tuple[float, float]:
    """Both sides of the composition/divided-difference identity.

    lhs: sum over compositions (m_1..m_n) of m of prod p_i^{m_i}, by
    enumeration.  rhs: sum_i p_i^{m+n-1} / prod_{j != i}(p_i - p_j), in
    extended precision.  Exposed publicly as a test helper.
    """
    p_arr = np.asarray(p, dtype=np.longdouble)
    n = len(p_arr)
    _guard(n, m)
    diffs = p_arr[:, None] - p_arr[None, :]
    np.fill_diagonal(diffs, 1.0)
    if n > 1 and float(np.abs(diffs).min()) < TIE_TOL:
        raise TieError("p values closer than 1e-8")
    lhs = np.longdouble(0.0)
    for cfg in _compositions(m, n):
        term = np.longdouble(1.0)
        for pi, mi in zip(p_arr, cfg):
            term *= pi**mi
        lhs += term
    rhs = np.sum(p_arr ** (m + n - 1) / diffs.prod(axis=1))
    return float(lhs), float(rhs)
