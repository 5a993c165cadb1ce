"""Concentration diagnostics for conductance fields.

Centered variables, rectangle-sum moment ladders, the tail of the stability
radius, and hypothesis checks for the association and mixing properties a
sampler family claims.  All estimates use replicated-field Monte Carlo: a
fresh field per sample, so annealed quantities carry no spatial-averaging
bias.  Heavy powers are accumulated in log magnitude to dodge overflow.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .envelopes import stability_radius
from .environment import mu, nu, sample_environment
from .fitting import SlopeFit, fit_theta, loglog_slope
from .lattice import HyperRectangle
from .seeding import child_seed

# spawn-key streams so pilot estimates never share randomness with main runs
_MAIN, _PILOT, _THRESH = 0, 1, 2


def centered_mu_power(field, p, x, mean_mu_p):
    """mu(x)^p minus its annealed mean."""
    return mu(field, x) ** p - mean_mu_p


def centered_nu_power(field, q, x, mean_nu_q):
    """nu(x)^q minus its annealed mean."""
    return nu(field, x) ** q - mean_nu_q


def default_eta(spec, geometry, zeta=None):
    """Default moment order for rectangle-sum ladders.

    Families relying on short-range or negative dependence concentrate like
    sums of independent blocks, where order 2 * zeta suffices; purely
    association-plus-mixing families need order d * zeta.  zeta defaults
    to the dimension.
    """
    zeta = float(geometry.d if zeta is None else zeta)
    certified = spec.certified_assumptions
    if {"spectral-gap", "finite-range", "negative-association"} & set(certified):
        return 2.0 * zeta
    if "positive-association" in certified:
        return geometry.d * zeta
    raise ValueError("sampler family certifies no decorrelation property")


def annealed_power_mean(spec, geometry, quantity, p, n_fields=128, seed=0):
    """Spatial-plus-replica average of mu^p or nu^p (unbiased by stationarity)."""
    total = 0.0
    for i in range(n_fields):
        fld = sample_environment(spec, geometry, child_seed(seed, _PILOT, i))
        vec = fld.mu_vector() if quantity == "mu" else fld.nu_vector()
        total += float(np.mean(vec**p))
    return total / n_fields


@dataclass(frozen=True)
class MomentEstimate:
    value: float
    stderr: float
    n_samples: int


def _log_mean(logs):
    """Mean of exp(logs), computed stably; logs may contain -inf."""
    logs = np.asarray(logs)
    finite = logs[np.isfinite(logs)]
    if finite.size == 0:
        return 0.0
    m = finite.max()
    return math.exp(m + math.log(np.exp(finite - m).sum() / logs.size))


def rectangle_sum_moment(spec, geometry, quantity, p, eta, rect, n_samples, seed,
                         mean_value=None, mean_samples=128):
    """Monte Carlo estimate of E | sum over the rectangle of the centered
    p-th power of mu (or nu) | ^ eta, over independent fields."""
    if n_samples < 2:
        raise ValueError("need at least two samples")
    if rect.length + 1 > geometry.L or 2 * rect.half_width + 1 > geometry.L:
        raise ValueError("geometry too small to contain the rectangle")
    idx = np.asarray([geometry.index(tuple(v)) for v in rect.vertex_array()])
    if mean_value is None:
        mean_value = annealed_power_mean(spec, geometry, quantity, p,
                                         n_fields=mean_samples, seed=seed)
    size = idx.size
    logs = np.empty(n_samples)
    for i in range(n_samples):
        fld = sample_environment(spec, geometry, child_seed(seed, _MAIN, i))
        vec = fld.mu_vector() if quantity == "mu" else fld.nu_vector()
        with np.errstate(over="ignore"):
            powered = vec[idx] ** p
        if not np.all(np.isfinite(powered)):
            raise ValueError(f"overflow at sample {i}; use a smaller exponent")
        total = float(powered.sum()) - size * mean_value
        logs[i] = eta * math.log(abs(total)) if total != 0.0 else -math.inf
    value = _log_mean(logs)
    second = _log_mean(2.0 * logs)
    if not (math.isfinite(value) and math.isfinite(second)):
        raise ValueError("overflow in moment accumulation; use a smaller exponent")
    variance = max(0.0, second - value * value)
    return MomentEstimate(value, math.sqrt(variance / n_samples), n_samples)


@dataclass
class MomentBoundReport:
    quantity: str
    p: float
    eta: float
    sizes: list
    estimates: list
    stderrs: list
    theta: SlopeFit

    @property
    def implied_zeta(self):
        return self.eta - self.theta.slope


def default_rectangles(sizes_spec, d=2):
    """HyperRectangles for a ladder given (length, half_width) pairs."""
    return [HyperRectangle((0,) * d, 1, int(length), int(half_width))
            for length, half_width in sizes_spec]


def rectangle_ladder(spec, geometry, quantity, p, eta, rects, n_samples, seed,
                     mean_samples=128, n_boot=1000):
    """Moment estimates across a ladder of rectangle sizes, with a fitted
    growth exponent."""
    mean_value = annealed_power_mean(spec, geometry, quantity, p,
                                     n_fields=mean_samples, seed=seed)
    sizes, estimates, stderrs = [], [], []
    for rect in rects:
        est = rectangle_sum_moment(spec, geometry, quantity, p, eta, rect,
                                   n_samples, seed, mean_value=mean_value)
        sizes.append(rect.n_vertices)
        estimates.append(est.value)
        stderrs.append(est.stderr)
    theta = fit_theta(sizes, estimates, stderrs, n_boot=n_boot, seed=seed)
    return MomentBoundReport(quantity, p, eta, sizes, estimates, stderrs, theta)


@dataclass
class TailReport:
    grid: list
    survival: list
    stderr: list
    n_samples: int
    values: list


def n1_tail(spec, geometry, p, q, n_samples, n_grid, seed,
            mean_mu_p=None, mean_nu_q=None, max_window=None):
    """Empirical survival P(stability radius > n) over replica fields.

    Fields that never stabilize inside the window count as exceeding every
    grid point (conservative).
    """
    if max_window is None:
        max_window = geometry.L // 2
    if mean_mu_p is None:
        mean_mu_p = annealed_power_mean(spec, geometry, "mu", p, seed=seed)
    if mean_nu_q is None:
        mean_nu_q = annealed_power_mean(spec, geometry, "nu", q, seed=seed)
    origin = (0,) * geometry.d
    values = []
    for i in range(n_samples):
        fld = sample_environment(spec, geometry, child_seed(seed, _MAIN, i))
        n1 = stability_radius(fld, origin, p, q, mean_mu_p, mean_nu_q, max_window)
        values.append(math.inf if n1 is None else n1)
    grid = [int(n) for n in n_grid]
    survival, stderr = [], []
    arr = np.asarray(values)
    for n in grid:
        frac = float(np.mean(arr > n))
        survival.append(frac)
        stderr.append(math.sqrt(frac * (1 - frac) / n_samples))
    return TailReport(grid, survival, stderr, n_samples, values)


# ---------------------------------------------------------------------------
# association and mixing checks


@dataclass(frozen=True)
class EdgeFunction:
    """A coordinate-wise nondecreasing function of finitely many edges."""

    name: str
    edge_ids: tuple  # flat ids vertex_index * d + (axis - 1)
    kind: str  # sum | min | max | threshold-count

    def __call__(self, flat_values, threshold):
        vals = flat_values[list(self.edge_ids)]
        if self.kind == "sum":
            return float(vals.sum())
        if self.kind == "min":
            return float(vals.min())
        if self.kind == "max":
            return float(vals.max())
        if self.kind == "threshold-count":
            return float((vals > threshold).sum())
        raise ValueError(self.kind)


@dataclass(frozen=True)
class PairResult:
    name: str
    cov: float
    stderr: float
    expectation: str  # 'nonnegative' | 'nonpositive'
    passed: bool


def _edges_at(geometry, vertex):
    base = geometry.index(vertex) * geometry.d
    return tuple(base + a for a in range(geometry.d))


def _edge(geometry, vertex, axis):
    return geometry.index(vertex) * geometry.d + (axis - 1)


def builtin_test_pairs(geometry):
    """Nondecreasing function pairs: overlapping sets for association tests,
    disjoint sets for negative-association tests."""
    d = geometry.d
    origin = (0,) * d
    near = (1,) + (0,) * (d - 1)
    far = (geometry.L // 2,) + (0,) * (d - 1)
    fkg = [
        ("variance", EdgeFunction("w(0,e1)", (_edge(geometry, origin, 1),), "sum"),
         EdgeFunction("w(0,e1)", (_edge(geometry, origin, 1),), "sum")),
        ("adjacent-edges", EdgeFunction("w(0,e1)", (_edge(geometry, origin, 1),), "sum"),
         EdgeFunction("w(e1,2e1)", (_edge(geometry, near, 1),), "sum")),
        ("sums-nearby", EdgeFunction("sum at 0", _edges_at(geometry, origin), "sum"),
         EdgeFunction("sum at e1", _edges_at(geometry, near), "sum")),
        ("min-max-overlap", EdgeFunction("min at 0", _edges_at(geometry, origin), "min"),
         EdgeFunction("max at 0", _edges_at(geometry, origin), "max")),
        ("threshold-vs-sum", EdgeFunction("count at 0", _edges_at(geometry, origin), "threshold-count"),
         EdgeFunction("sum at e1", _edges_at(geometry, near), "sum")),
    ]
    na = [
        ("disjoint-axes", EdgeFunction("w(0,e1)", (_edge(geometry, origin, 1),), "sum"),
         EdgeFunction("w(0,e2)", (_edge(geometry, origin, 2),), "sum")),
        ("disjoint-sums-near", EdgeFunction("sum at 0", _edges_at(geometry, origin), "sum"),
         EdgeFunction("sum at e1", _edges_at(geometry, near), "sum")),
        ("disjoint-sums-far", EdgeFunction("sum at 0", _edges_at(geometry, origin), "sum"),
         EdgeFunction("sum far", _edges_at(geometry, far), "sum")),
        ("disjoint-max", EdgeFunction("max at 0", _edges_at(geometry, origin), "max"),
         EdgeFunction("max at e1", _edges_at(geometry, near), "max")),
        ("disjoint-threshold", EdgeFunction("count at 0", _edges_at(geometry, origin), "threshold-count"),
         EdgeFunction("count far", _edges_at(geometry, far), "threshold-count")),
    ]
    return {"fkg": fkg, "na": na}


def association_check(spec, geometry, test_pairs=None, n_samples=10_000, seed=0):
    """Covariance estimates for nondecreasing function pairs, with a verdict
    against the assumption the sampler family is certified for.

    Positively associated families must show cov >= -3 stderr on every
    (possibly overlapping) pair; negatively associated families must show
    cov <= +3 stderr on every disjoint pair.
    """
    pairs = test_pairs if test_pairs is not None else builtin_test_pairs(geometry)
    certified = spec.certified_assumptions
    jobs = []
    if "positive-association" in certified:
        jobs += [("fkg", name, f, g) for name, f, g in pairs["fkg"]]
    if "negative-association" in certified:
        jobs += [("na", name, f, g) for name, f, g in pairs["na"]]
    if not jobs:
        return []

    threshold = _pilot_median(spec, geometry, seed)
    f_vals = np.empty((len(jobs), n_samples))
    g_vals = np.empty((len(jobs), n_samples))
    for i in range(n_samples):
        fld = sample_environment(spec, geometry, child_seed(seed, _MAIN, i))
        flat = fld.values.reshape(-1)
        for j, (_, _, f, g) in enumerate(jobs):
            f_vals[j, i] = f(flat, threshold)
            g_vals[j, i] = g(flat, threshold)

    results = []
    for j, (side, name, _, _) in enumerate(jobs):
        fc = f_vals[j] - f_vals[j].mean()
        gc = g_vals[j] - g_vals[j].mean()
        prods = fc * gc
        cov = float(prods.mean()) * n_samples / (n_samples - 1)
        stderr = float(prods.std(ddof=1) / math.sqrt(n_samples))
        if side == "fkg":
            passed = cov >= -3 * stderr
            expectation = "nonnegative"
        else:
            passed = cov <= 3 * stderr
            expectation = "nonpositive"
        results.append(PairResult(f"{side}:{name}", cov, stderr, expectation, passed))
    return results


def _pilot_median(spec, geometry, seed, n_pilot=200):
    origin_edge = 0
    vals = np.empty(n_pilot)
    for i in range(n_pilot):
        fld = sample_environment(spec, geometry, child_seed(seed, _THRESH, i))
        vals[i] = fld.values.reshape(-1)[origin_edge]
    return float(np.median(vals))


@dataclass
class MixingReport:
    distances: list
    cov: list
    stderr: list
    slope: object  # SlopeFit on positive covariances, or None


def mixing_decay(spec, geometry, distance_grid, n_samples, seed, kind="sum"):
    """Covariance of a nondecreasing origin-edge function with its translate,
    against translation distance, plus a log-log decay slope when measurable.
    """
    d = geometry.d
    origin = (0,) * d
    base = EdgeFunction("origin", _edges_at(geometry, origin), kind)
    shifted = []
    for dist in distance_grid:
        vertex = (int(dist),) + (0,) * (d - 1)
        shifted.append(EdgeFunction(f"shift {dist}", _edges_at(geometry, vertex), kind))
    threshold = _pilot_median(spec, geometry, seed)

    base_vals = np.empty(n_samples)
    shift_vals = np.empty((len(shifted), n_samples))
    for i in range(n_samples):
        fld = sample_environment(spec, geometry, child_seed(seed, _MAIN, i))
        flat = fld.values.reshape(-1)
        base_vals[i] = base(flat, threshold)
        for j, fn in enumerate(shifted):
            shift_vals[j, i] = fn(flat, threshold)

    covs, errs = [], []
    bc = base_vals - base_vals.mean()
    for j in range(len(shifted)):
        gc = shift_vals[j] - shift_vals[j].mean()
        prods = bc * gc
        covs.append(float(prods.mean()) * n_samples / (n_samples - 1))
        errs.append(float(prods.std(ddof=1) / math.sqrt(n_samples)))

    positive = [(x, c) for x, c in zip(distance_grid, covs) if c > 0]
    slope = None
    if len(positive) >= 2:
        xs, cs = zip(*positive)
        slope = loglog_slope(xs, cs, n_boot=200, seed=seed)
    return MixingReport(list(distance_grid), covs, errs, slope)
