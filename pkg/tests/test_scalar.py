import math
import warnings

import numpy as np
import pytest

from kwise_nls.errors import InvalidArgumentError
from kwise_nls.radial import make_grid
from kwise_nls.scalar import (Domain, ScalarProblem, compute_c, nehari_energy,
                              optimize_interface, soliton_1d, solve_dirichlet_ground_state,
                              solve_scalar_ground_state, solve_sign_changing)


@pytest.fixture(scope="module")
def line():
    return make_grid(20.0, 4000, 1)


@pytest.fixture(scope="module")
def plane():
    return make_grid(30.0, 4000, 2)


def test_sech_oracle(line):
    sol = solve_scalar_ground_state(ScalarProblem(4.0), line)
    err = np.max(np.abs(sol.profile.values - math.sqrt(2) / np.cosh(line.nodes)))
    assert err < 1e-4


@pytest.mark.parametrize("p,lam,mu", [(3.0, 1.0, 1.0), (6.0, 2.0, 0.5)])
def test_general_soliton_1d(line, p, lam, mu):
    sol = solve_scalar_ground_state(ScalarProblem(p, lam, mu), line)
    exact = soliton_1d(line.nodes, p, lam, mu)
    assert np.max(np.abs(sol.profile.values - exact)) < 1e-4 * exact[0]


def test_scaling_laws(plane):
    c = compute_c(ScalarProblem(4.0), plane)
    # c_{p,λ,μ} = λ^{1-d/2+d/p} μ^{-2/p} c_p; d=2, p=4
    assert compute_c(ScalarProblem(4.0, 4.0, 1.0), plane) / c == pytest.approx(2.0, rel=1e-3)
    assert compute_c(ScalarProblem(4.0, 1.0, 3.0), plane) / c == pytest.approx(3 ** -0.5, rel=1e-3)


def test_mu_scaling_is_exact(plane):
    c = compute_c(ScalarProblem(6.0), plane)
    assert compute_c(ScalarProblem(6.0, 1.0, 8.0), plane) == pytest.approx(0.5 * c, rel=1e-9)


@pytest.mark.parametrize("domain", [Domain.full(), Domain.ball(2.0), Domain.exterior(2.0),
                                    Domain.annulus(1.0, 4.0)])
def test_variational_identities(plane, domain):
    sol = solve_scalar_ground_state(ScalarProblem(6.0, 1.0, 1.0, domain), plane)
    assert sol.nehari_defect() < 1e-6
    assert sol.energy == pytest.approx(nehari_energy(sol.c_value, 6.0), rel=1e-4)
    assert sol.residual < 1e-6 * sol.peak


def test_domain_monotonicity(plane):
    full = compute_c(ScalarProblem(6.0), plane)
    b2 = compute_c(ScalarProblem(6.0, domain=Domain.ball(2.0)), plane)
    b1 = compute_c(ScalarProblem(6.0, domain=Domain.ball(1.0)), plane)
    assert b1 - b2 > 1e-6 and b2 - full > 1e-6


def test_dirichlet_profile_vanishes_outside(plane):
    sol = solve_dirichlet_ground_state(ScalarProblem(6.0, domain=Domain.ball(2.0)), plane)
    assert np.all(sol.profile.values[plane.nodes > 2.0] == 0)
    assert np.all(sol.native.values > 0)


def test_problem_errors():
    g = make_grid(10.0, 200, 3)
    with pytest.raises(InvalidArgumentError):
        solve_scalar_ground_state(ScalarProblem(2.0), g)
    with pytest.raises(InvalidArgumentError):
        solve_scalar_ground_state(ScalarProblem(6.0), g)
    with pytest.raises(InvalidArgumentError):
        Domain.ball(-1.0).subgrid(g)
    with pytest.raises(InvalidArgumentError):
        Domain.annulus(3.0, 2.0).subgrid(g)


def test_truncation_warning():
    g = make_grid(2.0, 400, 2)
    with pytest.warns(RuntimeWarning, match="not resolved"):
        sol = solve_scalar_ground_state(ScalarProblem(4.0), g)
    assert sol.truncated


def test_optimize_interface_on_known_function():
    R, val, nmin, edge = optimize_interface(lambda R: (R - 3.0) ** 2 + 1.0, 30.0)
    assert R == pytest.approx(3.0, abs=1e-3)
    assert val == pytest.approx(1.0, abs=1e-6)
    assert nmin == 1 and not edge


def test_sign_changing_unit(plane):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        sc = solve_sign_changing(1.0, 1.0, 1.0, 1.0, 6.0, plane)
    w = solve_scalar_ground_state(ScalarProblem(6.0), plane)
    assert sc.energy > 2 * w.energy
    pos, neg, R = sc
    overlap = np.minimum(pos.profile.values, neg.profile.values)
    assert np.max(overlap) <= 1e-12 * pos.peak + np.max(overlap[np.abs(plane.nodes - R) < plane.h])
    assert sc.energy == pytest.approx(pos.energy + neg.energy)
    assert sc.orientation_energies[0] == sc.orientation_energies[1]


def test_sign_changing_orientation_prefers_lower_energy(plane):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        sc = solve_sign_changing(1.0, 4.0, 1.0, 1.0, 6.0, plane)
    assert sc.energy == pytest.approx(min(sc.orientation_energies))
