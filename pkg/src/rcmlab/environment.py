"""Random conductance fields on the torus.

A conductance field assigns a positive weight to every nearest-neighbor edge.
Weights are stored as an (n_vertices, d) array: entry (x, a) is the weight of
the edge from x to its +e_a neighbor, so symmetry w(x, y) = w(y, x) holds by
construction.  For a field w we write

    mu(x) = sum of the 2d weights incident to x,
    nu(x) = sum of the 2d reciprocal weights incident to x.

Sampler families
----------------
constant             every edge equals a fixed level.
uniform-elliptic-iid i.i.d. Uniform[low, high] edges, bounded away from 0.
iid                  i.i.d. edges with a configurable marginal (uniform,
                     lognormal, or a heavy-tailed-at-zero power law; the
                     latter is exploratory, no bound checks are promised).
finite-range         per-vertex i.i.d. uniforms smoothed by an l1 moving
                     average, pushed through an increasing link and averaged
                     over edge endpoints.  Edges at l1 distance >= range are
                     exactly independent (disjoint input windows).
gaussian-fkg         w({x,y}) = exp(scale * (phi(x) + phi(y))) for a
                     stationary centered Gaussian field phi with spectral
                     density 1 / (lattice Laplacian + mass^2), sampled by FFT.
                     The covariance kernel is pointwise positive, so the
                     field is positively associated.
na-permutation       edges partitioned into spatial blocks; each block gets a
                     fixed multiset of values in a uniformly random order.
                     Permutation distributions are negatively associated, and
                     independent blocks preserve that.

Sampling is a deterministic function of (spec, geometry, seed), and the
one-edge marginal law is the same at every edge.
"""

from __future__ import annotations

import io
import itertools
import json
import math
import struct
from dataclasses import dataclass, field as dc_field

import numpy as np

from .lattice import TorusGeometry
from .seeding import child_seed, rng_for

MAGIC = b"RCM1"
FORMAT_VERSION = "0.1.0"

_KINDS = {
    "constant",
    "uniform-elliptic-iid",
    "iid",
    "finite-range",
    "gaussian-fkg",
    "na-permutation",
}

# decorrelation properties each sampler family is certified to satisfy
CERTIFIED_ASSUMPTIONS = {
    "constant": ("positive-association", "spectral-gap", "finite-range",
                 "negative-association"),
    "uniform-elliptic-iid": ("positive-association", "finite-range",
                             "negative-association"),
    "iid": ("positive-association", "finite-range", "negative-association"),
    "finite-range": ("finite-range",),
    "gaussian-fkg": ("positive-association", "spectral-gap"),
    "na-permutation": ("negative-association",),
}


@dataclass(frozen=True)
class EnvironmentSpec:
    """Named sampler family plus its parameters."""

    kind: str
    params: dict = dc_field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ValueError(f"unknown environment kind {self.kind!r}")
        object.__setattr__(self, "params", dict(self.params))
        _validate_params(self.kind, self.params)

    @property
    def certified_assumptions(self):
        return CERTIFIED_ASSUMPTIONS[self.kind]

    def to_dict(self):
        return {"kind": self.kind, **self.params}

    @classmethod
    def from_dict(cls, data):
        data = dict(data)
        kind = data.pop("kind", None)
        if kind is None:
            raise ValueError("environment spec needs a 'kind'")
        return cls(kind, data)

    def canonical_json(self):
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))


def _require(cond, message):
    if not cond:
        raise ValueError(message)


def _validate_params(kind, params):
    allowed = {
        "constant": {"level"},
        "uniform-elliptic-iid": {"low", "high"},
        "iid": {"marginal", "low", "high", "sigma", "delta"},
        "finite-range": {"range", "low", "high", "link", "scale"},
        "gaussian-fkg": {"mass", "scale"},
        "na-permutation": {"block", "low", "high"},
    }[kind]
    unknown = set(params) - allowed
    _require(not unknown, f"unknown parameters for {kind}: {sorted(unknown)}")
    if kind == "constant":
        _require(params.get("level", 1.0) > 0, "level must be positive")
    elif kind == "uniform-elliptic-iid":
        low, high = params.get("low", 0.5), params.get("high", 2.0)
        _require(0 < low <= high, "need 0 < low <= high")
    elif kind == "iid":
        marginal = params.get("marginal", "uniform")
        if marginal == "uniform":
            low, high = params.get("low", 0.5), params.get("high", 2.0)
            _require(0 < low <= high, "need 0 < low <= high")
        elif marginal == "lognormal":
            _require(params.get("sigma", 1.0) > 0, "sigma must be positive")
        elif marginal == "heavy-tail-zero":
            _require(params.get("delta", 0.5) > 0, "delta must be positive")
        else:
            raise ValueError(f"unknown marginal {marginal!r}")
    elif kind == "finite-range":
        rng_range = params.get("range", 3)
        _require(int(rng_range) == rng_range and rng_range >= 1, "range must be a positive integer")
        link = params.get("link", "affine")
        _require(link in ("affine", "exp"), "link must be 'affine' or 'exp'")
        if link == "affine":
            low, high = params.get("low", 0.5), params.get("high", 2.0)
            _require(0 < low <= high, "need 0 < low <= high")
        else:
            _require(params.get("scale", 1.0) > 0, "scale must be positive")
    elif kind == "gaussian-fkg":
        _require(params.get("mass", 1.0) > 0, "mass must be positive")
        _require(params.get("scale", 1.0) > 0, "scale must be positive")
    elif kind == "na-permutation":
        block = params.get("block", 2)
        _require(int(block) == block and block >= 1, "block must be a positive integer")
        low, high = params.get("low", 0.5), params.get("high", 2.0)
        _require(0 < low < high, "need 0 < low < high")


class ConductanceField:
    """Immutable positive edge weights on a torus, with sampling provenance."""

    def __init__(self, geometry, values, spec, seed):
        values = np.asarray(values, dtype=np.float64)
        if values.shape != (geometry.n_vertices, geometry.d):
            raise ValueError("values must have shape (n_vertices, d)")
        if not np.all(np.isfinite(values)) or not np.all(values > 0):
            raise ValueError("edge weights must be positive and finite")
        self.geometry = geometry
        self.values = values
        self.values.setflags(write=False)
        self.spec = spec
        self.seed = seed
        self._mu = None
        self._nu = None

    def edge_weight(self, x, axis):
        """Weight of the edge from x to x + e_axis (axis 1-based)."""
        return float(self.values[self.geometry.index(x), axis - 1])

    def weight_between(self, x, y):
        """Weight of the undirected edge {x, y}; 0 if not adjacent."""
        geo = self.geometry
        for a in range(geo.d):
            plus = list(x)
            plus[a] += 1
            if geo.wrap(plus) == geo.wrap(y):
                return float(self.values[geo.index(x), a])
            minus = list(x)
            minus[a] -= 1
            if geo.wrap(minus) == geo.wrap(y):
                return float(self.values[geo.index(y), a])
        return 0.0

    def mu_vector(self):
        """mu at every vertex (flat indexing)."""
        if self._mu is None:
            table = self.geometry.neighbor_table()
            d = self.geometry.d
            total = self.values.sum(axis=1)
            for a in range(d):
                total = total + self.values[table[:, d + a], a]
            self._mu = total
            self._mu.setflags(write=False)
        return self._mu

    def nu_vector(self):
        """nu at every vertex (flat indexing)."""
        if self._nu is None:
            table = self.geometry.neighbor_table()
            d = self.geometry.d
            inv = 1.0 / self.values
            total = inv.sum(axis=1)
            for a in range(d):
                total = total + inv[table[:, d + a], a]
            self._nu = total
            self._nu.setflags(write=False)
        return self._nu


def mu(field, x):
    """Sum of the 2d edge weights incident to x."""
    return float(field.mu_vector()[field.geometry.index(x)])


def nu(field, x):
    """Sum of the 2d reciprocal edge weights incident to x."""
    return float(field.nu_vector()[field.geometry.index(x)])


def shift(field, z):
    """The field translated by z: new edge {x, y} takes the old {x+z, y+z}."""
    geo = field.geometry
    n = geo.n_vertices
    perm = np.empty(n, dtype=np.int64)
    for i in range(n):
        c = geo.coords(i)
        perm[i] = geo.index(tuple(ci + zi for ci, zi in zip(c, z)))
    return ConductanceField(geo, field.values[perm, :], field.spec, field.seed)


def avg_norm(field, quantity, exponent, region):
    """Spatially averaged norm (|A|^-1 sum_{x in A} |phi(x)|^p)^(1/p).

    ``quantity`` selects mu or nu; ``exponent`` is a real >= 1 or math.inf
    (maximum over the region); ``region`` is an iterable of points or a flat
    index array.
    """
    if quantity == "mu":
        vec = field.mu_vector()
    elif quantity == "nu":
        vec = field.nu_vector()
    else:
        raise ValueError("quantity must be 'mu' or 'nu'")
    idx = _region_indices(field.geometry, region)
    if idx.size == 0:
        raise ValueError("region must be nonempty")
    vals = np.abs(vec[idx])
    if exponent == math.inf:
        return float(vals.max())
    if exponent < 1:
        raise ValueError("exponent must be >= 1")
    return float(np.mean(vals**exponent) ** (1.0 / exponent))


def _region_indices(geometry, region):
    if isinstance(region, np.ndarray) and region.dtype.kind in "iu" and region.ndim == 1:
        return region
    return np.asarray([geometry.index(p) for p in region], dtype=np.int64)


# ---------------------------------------------------------------------------
# samplers


def sample_environment(spec, geometry, seed):
    """Draw one conductance field; deterministic in (spec, geometry, seed)."""
    rng = rng_for(seed)
    kind = spec.kind
    if kind == "constant":
        values = np.full((geometry.n_vertices, geometry.d), float(spec.params.get("level", 1.0)))
    elif kind == "uniform-elliptic-iid":
        low, high = spec.params.get("low", 0.5), spec.params.get("high", 2.0)
        values = rng.uniform(low, high, size=(geometry.n_vertices, geometry.d))
    elif kind == "iid":
        values = _sample_iid(spec.params, geometry, rng)
    elif kind == "finite-range":
        values = _sample_finite_range(spec.params, geometry, rng)
    elif kind == "gaussian-fkg":
        values = _sample_gaussian(spec.params, geometry, rng)
    elif kind == "na-permutation":
        values = _sample_permutation(spec.params, geometry, rng)
    else:  # pragma: no cover - guarded by spec validation
        raise ValueError(kind)
    return ConductanceField(geometry, values, spec, seed)


def _sample_iid(params, geometry, rng):
    shape = (geometry.n_vertices, geometry.d)
    marginal = params.get("marginal", "uniform")
    if marginal == "uniform":
        return rng.uniform(params.get("low", 0.5), params.get("high", 2.0), size=shape)
    if marginal == "lognormal":
        return np.exp(params.get("sigma", 1.0) * rng.standard_normal(shape))
    # heavy-tail-zero: P(w <= eps) = eps**delta, fat tail at zero
    delta = params.get("delta", 0.5)
    return rng.random(shape) ** (1.0 / delta)


def _l1_offsets(d, radius):
    out = []
    for off in itertools.product(range(-radius, radius + 1), repeat=d):
        if sum(abs(o) for o in off) <= radius:
            out.append(off)
    return out


def _sample_finite_range(params, geometry, rng):
    rng_range = int(params.get("range", 3))
    if geometry.L < 2 * rng_range:
        raise ValueError("geometry too small for finite-range construction")
    d, L = geometry.d, geometry.L
    shape = (L,) * d
    # window radius (range-1)//2 keeps edges at l1 distance >= range on
    # disjoint input blocks
    w = (rng_range - 1) // 2
    z = rng.random(shape)
    if w > 0:
        acc = np.zeros(shape)
        offsets = _l1_offsets(d, w)
        for off in offsets:
            acc += np.roll(z, off, axis=tuple(range(d)))
        smooth = acc / len(offsets)
    else:
        smooth = z
    link = params.get("link", "affine")
    if link == "affine":
        low, high = params.get("low", 0.5), params.get("high", 2.0)
        per_vertex = low + (high - low) * smooth
    else:
        per_vertex = np.exp(params.get("scale", 1.0) * (smooth - 0.5))
    values = np.empty((geometry.n_vertices, d))
    for a in range(d):
        values[:, a] = ((per_vertex + np.roll(per_vertex, -1, axis=a)) / 2.0).reshape(-1)
    return values


def _sample_gaussian(params, geometry, rng):
    mass = params.get("mass", 1.0)
    scale = params.get("scale", 1.0)
    d, L = geometry.d, geometry.L
    shape = (L,) * d
    k = np.arange(L)
    eig_1d = 4.0 * np.sin(np.pi * k / L) ** 2
    lam = np.zeros(shape)
    for a in range(d):
        view = [None] * d
        view[a] = slice(None)
        lam = lam + eig_1d[tuple(view)]
    spectrum = 1.0 / (lam + mass * mass)
    noise = rng.standard_normal(shape)
    phi = np.fft.ifftn(np.sqrt(spectrum) * np.fft.fftn(noise)).real
    values = np.empty((geometry.n_vertices, d))
    for a in range(d):
        values[:, a] = np.exp(scale * (phi + np.roll(phi, -1, axis=a))).reshape(-1)
    return values


def _sample_permutation(params, geometry, rng):
    block = int(params.get("block", 2))
    d, L = geometry.d, geometry.L
    if L % block != 0:
        raise ValueError("block side must divide the torus side")
    low, high = params.get("low", 0.5), params.get("high", 2.0)
    per_block = d * block**d
    levels = low + (np.arange(per_block) + 0.5) * (high - low) / per_block

    blocks_per_axis = L // block
    n_blocks = blocks_per_axis**d
    shuffled = rng.permuted(np.tile(levels, (n_blocks, 1)), axis=1)

    # scatter each block's d*block^d edge slots
    values = np.empty((geometry.n_vertices, d))
    base_offsets = list(itertools.product(range(block), repeat=d))
    for b, origin in enumerate(itertools.product(range(blocks_per_axis), repeat=d)):
        slot = 0
        for off in base_offsets:
            vertex = tuple(o * block + q for o, q in zip(origin, off))
            vi = geometry.index(vertex)
            for a in range(d):
                values[vi, a] = shuffled[b, slot]
                slot += 1
    return values


# ---------------------------------------------------------------------------
# annealed moments


@dataclass(frozen=True)
class MomentSummary:
    """Monte Carlo estimates of the annealed moments of mu and nu at a vertex."""

    p: float
    q: float
    mean_mu_p: float
    mean_nu_q: float
    stderr_mu: float
    stderr_nu: float
    n_samples: int


def estimate_moments(spec, geometry, p, q, n_samples, seed):
    """Estimate E[mu(0)^p] and E[nu(0)^q] over independent replica fields."""
    if n_samples < 2:
        raise ValueError("need at least two samples")
    origin = geometry.index((0,) * geometry.d)
    mu_vals = np.empty(n_samples)
    nu_vals = np.empty(n_samples)
    for i in range(n_samples):
        fld = sample_environment(spec, geometry, child_seed_for_replica(seed, i))
        with np.errstate(over="ignore"):
            mu_vals[i] = fld.mu_vector()[origin] ** p
            nu_vals[i] = fld.nu_vector()[origin] ** q
        if not (np.isfinite(mu_vals[i]) and np.isfinite(nu_vals[i])):
            raise ValueError(f"non-finite moment sample at replica {i}")
    return MomentSummary(
        p=p,
        q=q,
        mean_mu_p=float(mu_vals.mean()),
        mean_nu_q=float(nu_vals.mean()),
        stderr_mu=float(mu_vals.std(ddof=1) / math.sqrt(n_samples)),
        stderr_nu=float(nu_vals.std(ddof=1) / math.sqrt(n_samples)),
        n_samples=n_samples,
    )


def child_seed_for_replica(seed, index):
    """64-bit seed for replica ``index`` of a Monte Carlo run."""
    return child_seed(seed, index)


# ---------------------------------------------------------------------------
# persistence


def write_field(field, path, extra_header=None):
    """Binary environment file: magic, JSON header, float64 edge weights."""
    header = {
        "d": field.geometry.d,
        "L": field.geometry.L,
        "seed": int(field.seed),
        "spec": field.spec.to_dict(),
        "version": FORMAT_VERSION,
    }
    if extra_header:
        header.update(extra_header)
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    payload = field.values.astype("<f8").tobytes(order="C")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(header_bytes)))
        fh.write(header_bytes)
        fh.write(payload)


def read_field(path):
    """Inverse of :func:`write_field`; validates magic and payload size."""
    with open(path, "rb") as fh:
        raw = fh.read()
    buf = io.BytesIO(raw)
    if buf.read(4) != MAGIC:
        raise ValueError("bad format")
    (hlen,) = struct.unpack("<I", buf.read(4))
    header = json.loads(buf.read(hlen).decode())
    geometry = TorusGeometry(header["d"], header["L"])
    spec = EnvironmentSpec.from_dict(header["spec"])
    payload = buf.read()
    expected = geometry.n_vertices * geometry.d * 8
    if len(payload) != expected:
        raise ValueError("bad format")
    values = np.frombuffer(payload, dtype="<f8").reshape(geometry.n_vertices, geometry.d)
    return ConductanceField(geometry, values.copy(), spec, header["seed"])


def field_to_csv(field, path):
    """Plain CSV export: one row per edge (vertex coords, axis, weight)."""
    geo = field.geometry
    with open(path, "w", newline="") as fh:
        cols = [f"x{i + 1}" for i in range(geo.d)] + ["axis", "value"]
        fh.write(",".join(cols) + "\r\n")
        for i in range(geo.n_vertices):
            coords = geo.coords(i)
            for a in range(geo.d):
                row = [str(c) for c in coords] + [str(a + 1), repr(float(field.values[i, a]))]
                fh.write(",".join(row) + "\r\n")
