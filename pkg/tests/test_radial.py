import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from kwise_nls.errors import InvalidArgumentError, InvalidStateError
from kwise_nls.radial import (Params, RadialField, SystemState, interpolate, lp_norm, make_grid,
                              product_integral, sphere_measure, weighted_norm_sq)


def test_sphere_measure():
    assert sphere_measure(1) == pytest.approx(2.0)
    assert sphere_measure(2) == pytest.approx(2 * math.pi)
    assert sphere_measure(3) == pytest.approx(4 * math.pi)


@pytest.mark.parametrize("d", [1, 2, 3])
def test_volume_quadrature(d):
    g = make_grid(2.0, 2000, d)
    assert g.integrate(np.ones(g.n)) == pytest.approx(g.volume(), rel=1e-6)


def test_gaussian_mass_second_order():
    # ∫_{R^2} e^{-r^2} = π
    errs = []
    for n in (500, 1000, 2000):
        g = make_grid(10.0, n, 2)
        errs.append(abs(g.integrate(np.exp(-g.nodes**2)) - math.pi))
    assert errs[-1] < 1e-4
    assert errs[0] / errs[1] > 3.5 and errs[1] / errs[2] > 3.5


def test_weighted_norm_of_gaussian():
    # d=2: ∫|∇e^{-r²}|² = π, ∫e^{-2r²} = π/2
    g = make_grid(10.0, 4000, 2)
    f = RadialField.from_function(lambda r: np.exp(-r**2), g)
    assert weighted_norm_sq(f, 3.0) == pytest.approx(math.pi + 1.5 * math.pi, rel=1e-4)


@settings(max_examples=25, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=16, max_size=16), st.integers(1, 3),
       st.floats(0.0, 1.0))
def test_dirichlet_energy_is_stiffness_form(vals, d, rmin):
    g = make_grid(3.0, 16, d, rmin=rmin)
    u = np.array(vals)
    assert g.dirichlet_energy(u) == pytest.approx(u @ g.apply_stiffness(u), rel=1e-12, abs=1e-12)


def test_laplacian_of_gaussian():
    g = make_grid(8.0, 4000, 3)
    r = g.nodes
    u = np.exp(-r**2)
    lap = g.laplacian_matrix() @ u
    exact = (4 * r**2 - 6) * u
    inner = (r > 0.5) & (r < 4)
    assert np.max(np.abs(lap - exact)[inner]) < 1e-3


def test_solve_inverts_operator():
    g = make_grid(5.0, 200, 2)
    rng = np.random.default_rng(0)
    x = rng.standard_normal(g.n)
    rhs = g.apply_stiffness(x) + 2.0 * g.weights * x
    assert np.allclose(g.solve(2.0, rhs), x, atol=1e-10)


def test_grid_errors():
    with pytest.raises(InvalidArgumentError):
        make_grid(-1.0, 100, 2)
    with pytest.raises(InvalidArgumentError):
        make_grid(1.0, 4, 2)
    with pytest.raises(InvalidArgumentError):
        make_grid(1.0, 100, 2, rmin=2.0)


def test_params_validation():
    with pytest.raises(InvalidArgumentError):
        Params.uniform(K=2)
    with pytest.raises(InvalidArgumentError):
        Params.uniform(d=3, K=3, q=2.0)
    with pytest.raises(InvalidArgumentError):
        Params(d=2, K=3, q=1.0, lam=(1, 1), mu=(1, 1, 1))
    with pytest.raises(InvalidArgumentError):
        Params.uniform(lam=-1.0)
    p = Params.uniform(d=3, K=3, q=1.5)
    assert p.p == 4.5
    assert p.with_beta(-2.0).beta == -2.0


def test_norm_errors():
    g = make_grid(5.0, 100, 2)
    f = RadialField(np.ones(g.n), g)
    with pytest.raises(InvalidArgumentError):
        lp_norm(f, 0.5)
    with pytest.raises(InvalidArgumentError):
        lp_norm(f, 2.0, mu=0.0)
    assert lp_norm(f, 2.0, mu=4.0) == pytest.approx(2.0 * math.sqrt(g.volume()), rel=1e-6)


def test_state_shapes():
    g = make_grid(5.0, 100, 2)
    h = make_grid(6.0, 100, 2)
    with pytest.raises(InvalidStateError):
        RadialField(np.ones(10), g)
    with pytest.raises(InvalidStateError):
        SystemState(np.ones((3, 10)), g)
    with pytest.raises(InvalidStateError):
        SystemState.from_fields([RadialField(np.ones(100), g), RadialField(np.ones(100), h)])
    s = SystemState.from_fields([RadialField(np.ones(100), g)] * 3)
    assert s.K == 3
    assert product_integral(s, 2.0) == pytest.approx(g.volume(), rel=1e-6)


def test_interpolate_round_trip():
    src = make_grid(10.0, 2000, 2)
    dst = make_grid(10.0, 3000, 2)
    f = np.exp(-src.nodes**2)
    out = interpolate(f, src, dst)
    assert np.max(np.abs(out - np.exp(-dst.nodes**2))) < 1e-4
    ball = make_grid(1.0, 200, 2)
    out = interpolate(np.ones(ball.n), ball, dst)
    assert np.all(out[dst.nodes > 1.0] == 0)
