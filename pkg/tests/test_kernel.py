import math

import numpy as np
import pytest
import scipy.stats

from rcmlab.environment import ConductanceField, EnvironmentSpec, sample_environment
from rcmlab.kernel import (evolve, heat_kernel, jump_kernel, simulate_walk,
                           spectral_oracle, torus_size_for, transition_profile)
from rcmlab.lattice import TorusGeometry

GEO = TorusGeometry(2, 8)
ELLIPTIC = EnvironmentSpec("uniform-elliptic-iid", {"low": 0.5, "high": 2.0})
CONSTANT = EnvironmentSpec("constant", {"level": 1.0})


def test_jump_kernel_constant_field():
    field = sample_environment(CONSTANT, GEO, 0)
    kern = jump_kernel(field)
    row = kern.matrix[0].toarray().reshape(-1)
    assert np.count_nonzero(row) == 4
    assert np.allclose(row[row > 0], 0.25)


def test_jump_kernel_rows_and_detailed_balance():
    field = sample_environment(ELLIPTIC, GEO, 3)
    kern = jump_kernel(field)
    sums = np.asarray(kern.matrix.sum(axis=1)).reshape(-1)
    assert np.max(np.abs(sums - 1.0)) <= 1e-12
    dense = kern.matrix.toarray()
    flux = dense * kern.mu[:, None]
    assert np.max(np.abs(flux - flux.T)) <= 1e-12


def test_jump_probabilities_proportional_to_weights():
    values = np.ones((GEO.n_vertices, 2))
    values[GEO.index((0, 0)), 0] = 1.0
    values[GEO.index((0, 0)), 1] = 3.0
    values[GEO.index((7, 0)), 0] = 2.0
    values[GEO.index((0, 7)), 1] = 2.0
    field = ConductanceField(GEO, values, CONSTANT, 0)
    kern = jump_kernel(field)
    row = kern.matrix[GEO.index((0, 0))].toarray().reshape(-1)
    assert row[GEO.index((1, 0))] == pytest.approx(1.0 / 8.0)
    assert row[GEO.index((0, 1))] == pytest.approx(3.0 / 8.0)
    assert row[GEO.index((7, 0))] == pytest.approx(2.0 / 8.0)


def test_heat_kernel_time_zero():
    field = sample_environment(ELLIPTIC, GEO, 1)
    s = heat_kernel(field, 0.0, (2, 3))
    expected = np.zeros(GEO.n_vertices)
    expected[GEO.index((2, 3))] = 1.0
    assert np.array_equal(s.prob, expected)
    assert s.hk[GEO.index((2, 3))] == pytest.approx(1.0 / field.mu_vector()[GEO.index((2, 3))])


@pytest.mark.parametrize("spec", [CONSTANT, ELLIPTIC])
@pytest.mark.parametrize("t", [0.5, 2.0, 8.0])
def test_uniformization_matches_spectral_oracle(spec, t):
    geo = TorusGeometry(2, 8)
    field = sample_environment(spec, geo, 5)
    a = heat_kernel(field, t, (1, 2), tol=1e-12)
    b = spectral_oracle(field, t, (1, 2))
    assert np.max(np.abs(a.prob - b.prob)) <= 1e-10
    assert np.max(np.abs(a.hk - b.hk)) <= 1e-10


def test_heat_kernel_conservation_and_reversibility():
    field = sample_environment(ELLIPTIC, TorusGeometry(2, 16), 7)
    geo = field.geometry
    kern = jump_kernel(field)
    t = 4.0
    sources = [(0, 0), (3, 9), (12, 5)]
    slices = {x: heat_kernel(field, t, x, tol=1e-12, kernel=kern) for x in sources}
    for s in slices.values():
        total = s.prob.sum()
        assert 1.0 - s.trunc_error - 1e-13 <= total <= 1.0 + 1e-12
        assert np.all(s.prob >= 0)
    mu_vec = kern.mu
    for x in sources:
        for y in sources:
            # reversibility: mu(x) P_x[X_t = y] = mu(y) P_y[X_t = x],
            # equivalently the density hk is symmetric in (x, y)
            lhs = mu_vec[geo.index(x)] * slices[x].prob[geo.index(y)]
            rhs = mu_vec[geo.index(y)] * slices[y].prob[geo.index(x)]
            assert abs(lhs - rhs) <= 1e-9
            assert abs(slices[x].hk[geo.index(y)] - slices[y].hk[geo.index(x)]) <= 1e-9


def test_semigroup_property():
    field = sample_environment(ELLIPTIC, TorusGeometry(2, 16), 9)
    kern = jump_kernel(field)
    tol = 1e-10
    half = heat_kernel(field, 4.0, (0, 0), tol=tol, kernel=kern)
    composed, _ = evolve(kern, half.prob, 4.0, tol=tol)
    direct = heat_kernel(field, 8.0, (0, 0), tol=tol, kernel=kern)
    assert np.max(np.abs(composed - direct.prob)) <= 3 * tol


def test_truncation_monotone_and_consistent():
    field = sample_environment(ELLIPTIC, GEO, 2)
    loose = heat_kernel(field, 3.0, (0, 0), tol=1e-8)
    tight = heat_kernel(field, 3.0, (0, 0), tol=1e-12)
    assert tight.trunc_error < loose.trunc_error <= 1e-8
    assert np.max(np.abs(loose.prob - tight.prob)) <= 1e-8


def test_on_diagonal_decay():
    field = sample_environment(ELLIPTIC, TorusGeometry(2, 16), 4)
    kern = jump_kernel(field)
    x = (5, 5)
    values = [heat_kernel(field, t, x, tol=1e-12, kernel=kern).hk[field.geometry.index(x)]
              for t in (1.0, 2.0, 4.0, 8.0, 16.0, 32.0)]
    assert all(a >= b - 1e-12 for a, b in zip(values, values[1:]))


def test_wrap_certificate_reported_and_enforced():
    field = sample_environment(CONSTANT, GEO, 0)
    s = heat_kernel(field, 2.0, (0, 0))
    from rcmlab.poisson import poisson_tail

    assert s.wrap_error == pytest.approx(min(1.0, poisson_tail(2.0, 4)))
    with pytest.raises(ValueError, match="torus too small"):
        heat_kernel(field, 50.0, (0, 0), wrap_tol=1e-6)


def test_spectral_oracle_guards():
    field = sample_environment(CONSTANT, TorusGeometry(2, 128), 0)
    with pytest.raises(ValueError, match="too large"):
        spectral_oracle(field, 1.0, (0, 0))


def test_walk_time_zero_and_parity():
    field = sample_environment(ELLIPTIC, GEO, 6)
    rng = np.random.default_rng(0)
    assert simulate_walk(field, (3, 3), 0.0, rng) == (3, 3)
    for _ in range(50):
        end, jumps = simulate_walk(field, (0, 0), 3.0, rng, with_jumps=True)
        disp = min(end[0], 8 - end[0]) + min(end[1], 8 - end[1])
        assert (disp - jumps) % 2 == 0


def test_walk_matches_uniformization():
    field = sample_environment(CONSTANT, GEO, 0)
    kern = jump_kernel(field)
    t = 2.0
    slice_ = heat_kernel(field, t, (0, 0), tol=1e-12, kernel=kern)
    target = slice_.prob[GEO.index((0, 0))]
    rng = np.random.default_rng(42)
    n = 20_000
    hits = sum(1 for _ in range(n)
               if simulate_walk(field, (0, 0), t, rng, kernel=kern) == (0, 0))
    phat = hits / n
    stderr = math.sqrt(target * (1 - target) / n)
    assert abs(phat - target) <= 4 * stderr


def test_torus_size_for_minimality():
    from rcmlab.poisson import poisson_tail

    assert torus_size_for(0.0, 1e-6) == 4
    for t, tol in [(4.0, 1e-12), (2.0, 1e-8), (10.0, 1e-10)]:
        side = torus_size_for(t, tol)
        assert side % 2 == 0
        assert poisson_tail(t, side // 2) <= tol
        if side > 4:
            assert poisson_tail(t, (side - 2) // 2) > tol
    # independent oracle: smallest r with scipy sf(r-1, 4) <= 1e-12
    r = 1
    while scipy.stats.poisson.sf(r - 1, 4.0) > 1e-12:
        r += 1
    assert torus_size_for(4.0, 1e-12) == 2 * r


def test_transition_profile_matches_slices():
    field = sample_environment(ELLIPTIC, GEO, 15)
    kern = jump_kernel(field)
    targets = [(0, 0), (1, 0), (3, 4)]
    profile = transition_profile(field, (0, 0), targets, 8.0, tol=1e-12, kernel=kern)
    for t in (0.5, 3.0, 8.0):
        s = heat_kernel(field, t, (0, 0), tol=1e-12, kernel=kern)
        for j, y in enumerate(targets):
            assert profile.hk(t)[j] == pytest.approx(s.hk[GEO.index(y)], abs=1e-12)
