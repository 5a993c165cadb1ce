"""Gaussian envelopes for the heat kernel, fitted from data and re-verified.

An envelope is a pair of explicit bounds around the heat kernel p(t, x, y):

    upper, near regime  (|x-y| <= split * t):
        amp_u * t^(-d/2) * exp(-rate_g * |x-y|^2 / t)
    upper, far regime   (|x-y| >= split * t):
        amp_u * t^(-d/2) * exp(-rate_l * |x-y| * max(1, log(|x-y|/t)))
    lower (valid once t >= N(x) * max(1, |x-y|)):
        amp_l * t^(-d/2) * exp(-rate_v * |x-y|^2 / t)

On the regime boundary the upper envelope takes the larger branch.  The
validity thresholds are per-source random constants: the upper bound needs
sqrt(t) to exceed the source's stability radius, the lower bound needs
t >= N(x) * max(1, |x-y|).

The stability radius of a field at x is the smallest window size beyond
which the ball-averaged p-th power of mu (and q-th power of nu) stays below
twice its annealed mean at every larger radius.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field

import numpy as np

from .kernel import heat_kernel, jump_kernel


def stability_radius(field, x, p, q, mean_mu_p, mean_nu_q, max_window):
    """Minimal n so ball averages of mu^p and nu^q stay within twice their
    means for every radius in [n, max_window]; None when never stabilized.
    """
    if mean_mu_p is None or mean_nu_q is None:
        raise ValueError("annealed moment values are required")
    geo = field.geometry
    if max_window > geo.L / 2:
        raise ValueError("window exceeds half the torus side")
    if max_window < 1:
        raise ValueError("window must be at least 1")
    dist = geo.distance_field(x)
    order = np.argsort(dist, kind="stable")
    sorted_dist = dist[order]
    cum_mu = np.cumsum(field.mu_vector()[order] ** p)
    cum_nu = np.cumsum(field.nu_vector()[order] ** q)
    radii = np.arange(1, int(max_window) + 1)
    counts = np.searchsorted(sorted_dist, radii, side="left")
    mu_avgs = cum_mu[counts - 1] / counts
    nu_avgs = cum_nu[counts - 1] / counts
    ok = (mu_avgs <= 2 * mean_mu_p) & (nu_avgs <= 2 * mean_nu_q)
    good_from = None
    for i in range(len(radii) - 1, -1, -1):
        if not ok[i]:
            break
        good_from = int(radii[i])
    return good_from


def composite_threshold(n1, chain_scale, chain_scale_powered):
    """Validity threshold combining the stability radius at the origin with
    the two admissible chain scales; a missing (None) ingredient, meaning the
    quantity never stabilized, makes the threshold infinite."""
    parts = (n1, chain_scale, chain_scale_powered)
    return max(math.inf if p is None else float(p) for p in parts)


def data_driven_threshold(slices, rel_tol=0.2):
    """Pragmatic per-source threshold: the smallest slice time from which the
    rescaled on-diagonal value p(t, x, x) * t^(d/2) stays within ``rel_tol``
    of its value at every later sampled time."""
    by_source = {}
    for s in slices:
        d = s.geometry.d
        value = float(s.hk[s.geometry.index(s.source)]) * s.t ** (d / 2.0)
        by_source.setdefault(s.source, []).append((s.t, value))
    out = {}
    for source, pts in by_source.items():
        pts.sort()
        threshold = None
        for i in range(len(pts)):
            tail = [v for _, v in pts[i:]]
            ref = tail[-1]
            if ref > 0 and all(abs(v / ref - 1.0) <= rel_tol for v in tail):
                threshold = pts[i][0]
                break
        out[source] = threshold
    return out


def resolve_threshold(table, x):
    """Threshold lookup supporting a constant, a dict keyed by point, or a callable."""
    if table is None:
        return math.inf
    if callable(table):
        value = table(x)
    elif isinstance(table, dict):
        value = table.get(tuple(x), math.inf)
    else:
        value = table
    return math.inf if value is None else float(value)


@dataclass
class GaussianEnvelope:
    """Fitted envelope constants plus per-source validity thresholds."""

    d: int
    regime_split: float
    upper_amp: float
    upper_gauss_rate: float
    upper_linear_rate: float
    lower_amp: float
    lower_gauss_rate: float
    lower_threshold: object = None
    upper_threshold: object = None
    fit_info: dict = dc_field(default_factory=dict)

    def __post_init__(self):
        for name in ("regime_split", "upper_amp", "upper_gauss_rate",
                     "upper_linear_rate", "lower_amp", "lower_gauss_rate"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")

    def upper_profile(self, t, dist):
        """Upper formula value; regime chosen by dist vs split * t."""
        if t <= 0:
            raise ValueError("time must be positive")
        pref = self.upper_amp * t ** (-self.d / 2.0)
        near = pref * math.exp(-self.upper_gauss_rate * dist * dist / t)
        far = pref * math.exp(-self.upper_linear_rate * dist * max(1.0, _safe_log(dist / t)))
        boundary = self.regime_split * t
        if dist < boundary:
            return near
        if dist > boundary:
            return far
        return max(near, far)

    def lower_profile(self, t, dist):
        """Lower formula value, ignoring the validity threshold."""
        if t <= 0:
            raise ValueError("time must be positive")
        return self.lower_amp * t ** (-self.d / 2.0) * math.exp(
            -self.lower_gauss_rate * dist * dist / t
        )

    def lower_active(self, t, x, dist):
        return t >= resolve_threshold(self.lower_threshold, x) * max(1.0, dist)

    def upper_active(self, t, x):
        return math.sqrt(t) >= resolve_threshold(self.upper_threshold, x)

    def to_dict(self):
        return {
            "d": self.d,
            "regime_split": self.regime_split,
            "upper_amp": self.upper_amp,
            "upper_gauss_rate": self.upper_gauss_rate,
            "upper_linear_rate": self.upper_linear_rate,
            "lower_amp": self.lower_amp,
            "lower_gauss_rate": self.lower_gauss_rate,
        }


def _safe_log(v):
    return math.log(v) if v > 0 else -math.inf


def _distance(x, y, geometry=None):
    if geometry is not None:
        return geometry.torus_distance(x, y)
    return sum(abs(int(a) - int(b)) for a, b in zip(x, y))


def upper_envelope(env, t, x, y, geometry=None):
    """Evaluate the upper envelope at (t, x, y)."""
    return env.upper_profile(t, _distance(x, y, geometry))


def lower_envelope(env, t, x, y, geometry=None):
    """Evaluate the lower envelope; zero (vacuous) below the validity threshold."""
    dist = _distance(x, y, geometry)
    if not env.lower_active(t, x, dist):
        return 0.0
    return env.lower_profile(t, dist)


# ---------------------------------------------------------------------------
# fitting


_SPLIT_GRID = (0.0625, 0.125, 0.25, 0.5, 1.0, 2.0, 4.0)


def fit_envelopes(slices, lower_threshold, upper_threshold=None, window=2.0,
                  regime_split=1.0, rate_floor=1e-12):
    """Fit the tightest envelope consistent with the supplied slices.

    Only points with |x-y| <= window * sqrt(t) enter the fit, and only where
    the slice resolves them (heat kernel above ten times the truncation
    bound).  The lower amplitude takes half the smallest on-diagonal value of
    p * t^(d/2); the lower rate takes the largest rate any off-diagonal point
    demands.  The upper amplitude doubles the largest on-diagonal value and
    the upper rates take the smallest rates the data allows.  The result is
    re-verified against every point used.

    ``regime_split`` may be a number or "fit", which picks the smallest grid
    value for which the far regime still admits a positive linear rate.
    """
    if upper_threshold is None:
        upper_threshold = lower_threshold
    points = _collect_points(slices, lower_threshold, upper_threshold, window)
    if not points["diag_lower"] and not points["diag_upper"]:
        raise ValueError("no valid on-diagonal points to fit")

    d = slices[0].geometry.d

    if points["diag_lower"]:
        lower_amp = 0.5 * min(p * t ** (d / 2.0) for t, p in points["diag_lower"])
    else:
        raise ValueError("no valid on-diagonal points for the lower fit")
    lower_rate = rate_floor
    for t, dist, p in points["off_lower"]:
        if p <= 0:
            raise ValueError("lower bound violated")
        candidate = (t / (dist * dist)) * math.log(lower_amp * t ** (-d / 2.0) / p)
        lower_rate = max(lower_rate, candidate)

    upper_amp = 2.0 * max(p * t ** (d / 2.0) for t, p in points["diag_upper"])

    if regime_split == "fit":
        split = None
        for cand in _SPLIT_GRID:
            rate = _upper_far_rate(points["off_upper"], upper_amp, d, cand)
            if rate is None or rate > rate_floor:
                split = cand
                break
        if split is None:
            split = 1.0
    else:
        split = float(regime_split)
        if split <= 0:
            raise ValueError("regime split must be positive")

    gauss_rate = math.inf
    for t, dist, p in points["off_upper"]:
        if dist > split * t or p <= 0:
            continue
        candidate = (t / (dist * dist)) * math.log(upper_amp * t ** (-d / 2.0) / p)
        if candidate <= 0:
            raise ValueError("upper fit failed: off-diagonal exceeds the diagonal cap")
        gauss_rate = min(gauss_rate, candidate)
    if not math.isfinite(gauss_rate):
        gauss_rate = 1.0  # no near-regime off-diagonal data; any rate is consistent

    far_rate = _upper_far_rate(points["off_upper"], upper_amp, d, split)
    if far_rate is None:
        far_rate = max(rate_floor, gauss_rate * split)
    elif far_rate <= 0:
        raise ValueError("upper fit failed: off-diagonal exceeds the diagonal cap")

    env = GaussianEnvelope(
        d=d,
        regime_split=split,
        upper_amp=upper_amp,
        upper_gauss_rate=max(gauss_rate, rate_floor),
        upper_linear_rate=max(far_rate, rate_floor),
        lower_amp=lower_amp,
        lower_gauss_rate=max(lower_rate, rate_floor),
        lower_threshold=lower_threshold,
        upper_threshold=upper_threshold,
        fit_info={
            "n_diag_lower": len(points["diag_lower"]),
            "n_off_lower": len(points["off_lower"]),
            "n_diag_upper": len(points["diag_upper"]),
            "n_off_upper": len(points["off_upper"]),
            "window": window,
        },
    )
    _recheck_fit(env, points)
    return env


def _upper_far_rate(off_points, upper_amp, d, split):
    rate = None
    for t, dist, p in off_points:
        if dist < split * t or p <= 0:
            continue
        denom = dist * max(1.0, _safe_log(dist / t))
        candidate = math.log(upper_amp * t ** (-d / 2.0) / p) / denom
        rate = candidate if rate is None else min(rate, candidate)
    return rate


def _collect_points(slices, lower_threshold, upper_threshold, window):
    diag_lower, off_lower, diag_upper, off_upper = [], [], [], []
    for s in slices:
        geo = s.geometry
        floor = 10.0 * s.trunc_error
        n_lower = resolve_threshold(lower_threshold, s.source)
        n_upper = resolve_threshold(upper_threshold, s.source)
        dist = geo.distance_field(s.source)
        within = dist <= window * math.sqrt(s.t)
        lower_ok = math.isfinite(n_lower)
        upper_ok = math.sqrt(s.t) >= n_upper
        for idx in np.flatnonzero(within):
            u = float(dist[idx])
            p = float(s.hk[idx])
            if lower_ok and s.t >= n_lower * max(1.0, u):
                if u == 0:
                    if p > floor:
                        diag_lower.append((s.t, p))
                elif p > floor or p <= 0:
                    off_lower.append((s.t, u, p))
            if upper_ok:
                if u == 0:
                    diag_upper.append((s.t, p))
                elif p > floor:
                    off_upper.append((s.t, u, p))
    return {
        "diag_lower": diag_lower,
        "off_lower": off_lower,
        "diag_upper": diag_upper,
        "off_upper": off_upper,
    }


def _recheck_fit(env, points):
    slack = 1e-9
    for t, p in points["diag_lower"]:
        if p < env.lower_profile(t, 0.0) * (1 - slack):
            raise ValueError("fit violates its own lower data")
    for t, u, p in points["off_lower"]:
        if p < env.lower_profile(t, u) * (1 - slack):
            raise ValueError("fit violates its own lower data")
    for t, p in points["diag_upper"]:
        if p > env.upper_profile(t, 0.0) * (1 + slack):
            raise ValueError("fit violates its own upper data")
    for t, u, p in points["off_upper"]:
        if p > env.upper_profile(t, u) * (1 + slack):
            raise ValueError("fit violates its own upper data")


# ---------------------------------------------------------------------------
# verification


@dataclass(frozen=True)
class Violation:
    t: float
    x: tuple
    y: tuple
    dist: float
    value: float
    bound: float
    side: str
    margin: float  # relative margin by which the bound is missed


@dataclass
class BoundReport:
    violations: list
    n_checked: int
    n_lower_active: int
    n_upper_active: int

    @property
    def ok(self):
        return not self.violations

    def worst_margin(self, side=None):
        margins = [v.margin for v in self.violations if side is None or v.side == side]
        return max(margins) if margins else 0.0

    def count_beyond(self, margin, side=None):
        return sum(1 for v in self.violations
                   if v.margin > margin and (side is None or v.side == side))


def verify_bounds(field, env, grid, tol=1e-10, kernel=None):
    """Check computed heat kernel values against an envelope on a (t, x, y) grid.

    Returns a report listing every point falling outside the active bounds by
    more than the slice's certified error.  An empty violation list means the
    envelope is verified on this grid.
    """
    kern = kernel if kernel is not None else jump_kernel(field)
    geo = field.geometry
    groups = {}
    for t, x, y in grid:
        groups.setdefault((float(t), geo.wrap(x)), []).append(geo.wrap(y))
    mu_min = float(kern.mu.min())

    violations = []
    n_checked = 0
    n_lower = 0
    n_upper = 0
    for (t, x), ys in sorted(groups.items()):
        s = heat_kernel(field, t, x, tol=tol, kernel=kern)
        slack = s.trunc_error / mu_min + 1e-15
        for y in ys:
            n_checked += 1
            u = geo.torus_distance(x, y)
            p = float(s.hk[geo.index(y)])
            if env.upper_active(t, x):
                n_upper += 1
                upper = env.upper_profile(t, u)
                if p > upper + slack:
                    violations.append(Violation(t, x, y, u, p, upper, "upper",
                                                (p - upper) / upper if upper > 0 else math.inf))
            if env.lower_active(t, x, u):
                n_lower += 1
                lower = env.lower_profile(t, u)
                if p < lower - slack:
                    violations.append(Violation(t, x, y, u, p, lower, "lower",
                                                (lower - p) / lower))
    return BoundReport(violations, n_checked, n_lower, n_upper)
