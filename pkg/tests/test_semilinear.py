import json
import math

import numpy as np
import pytest
from scipy.integrate import solve_ivp

from kgds.errors import ConfigError, InvalidInputError, NumericalFailure
from kgds.semilinear import (PicardConfig, duffing_energy, duffing_ode, f_functional, field_integral,
                             grid_integral, l3_weight_measure, picard_weak_solution, rk4_integrate,
                             sign_change_condition, static_wall_residual)
from kgds.sim3d import Field3D
from kgds.transform import CauchyData
from kgds.wave_oracle import FieldSampler, bump, constant

zero = FieldSampler(lambda x: np.zeros(np.shape(x)), support_radius=0.0, deriv=lambda x: np.zeros(np.shape(x)))


def small_cfg(lam, **kw):
    return PicardConfig.from_mu(0.1, lam, 1.0, x_grid=tuple(np.linspace(0, 1, 6)),
                                t_grid=tuple(np.linspace(0, 1, 11)), **kw)


def test_config_validation():
    with pytest.raises(ConfigError):
        PicardConfig.from_mu(-0.1, 0.1, 1.0)
    with pytest.raises(ConfigError):
        PicardConfig(M=1.0, lam=-1.0, t_max=1.0)
    with pytest.raises(ConfigError):
        PicardConfig(M=1.0, lam=0.1, t_max=1.0, x_grid=(0.0, 1.0)).lattice()
    assert PicardConfig.from_mu(0.1, 0.1, 1.0).M == pytest.approx(math.sqrt(2.35))


def test_picard_matches_ode_for_uniform_data():
    cfg = small_cfg(0.1, n_iter=30)
    u, rep = picard_weak_solution(CauchyData(constant(1.0), zero, "radial3"), cfg)
    assert rep.converged and not rep.diverged
    M = cfg.M
    sol = solve_ivp(lambda t, y: [y[1], M * M * y[0] - 0.1 * math.exp(-3 * t) * y[0] ** 3], [0, 1], [1.0, 0.0],
                    rtol=1e-13, atol=1e-14, dense_output=True)
    ref = sol.sol(np.asarray(cfg.t_grid))[0]
    assert np.max(np.abs(u / ref[None, :] - 1.0)) < 1e-4


def test_picard_linear_returns_free_solution():
    cfg = small_cfg(0.0)
    data = CauchyData(bump(0.5), zero, "radial3")
    u, rep = picard_weak_solution(data, cfg)
    from kgds.semilinear import cauchy_lattice
    xs, ts = cfg.lattice()
    assert np.array_equal(u, cauchy_lattice(data, cfg.M, xs, ts, cfg.quad_tol))
    assert rep.iterations == 1 and rep.converged


def test_picard_small_bump_converges():
    cfg = PicardConfig.from_mu(0.1, 0.1, 1.0, x_grid=tuple(np.linspace(0, 1.5, 16)),
                               t_grid=tuple(np.linspace(0, 1, 6)), n_iter=30)
    b = bump(0.4, 1e-2)
    u, rep = picard_weak_solution(CauchyData(b, zero, "radial3"), cfg)
    assert rep.converged
    assert json.loads(rep.to_json())["iterations"] == rep.iterations


def test_picard_flags_divergence():
    cfg = PicardConfig.from_mu(0.1, 50.0, 3.0, x_grid=tuple(np.linspace(0, 1, 5)),
                               t_grid=tuple(np.linspace(0, 3, 7)), n_iter=40)
    u, rep = picard_weak_solution(CauchyData(constant(3.0), zero, "radial3"), cfg)
    assert rep.diverged and not rep.converged


@pytest.mark.parametrize("mu2,lam", [(0.1, 0.1), (0.3, 0.7), (2.0, 0.5)])
def test_duffing_equilibria_preserved(mu2, lam):
    eq = math.sqrt(mu2 / lam)
    for s in (1, -1):
        tr = duffing_ode(s * eq, 0.0, mu2, lam, 50.0)
        assert np.max(np.abs(tr.psi - s * eq)) <= 1e-10


def test_duffing_relaxes_toward_well():
    tr = duffing_ode(0.1, 0.0, 0.1, 0.1, 20.0)
    assert np.all(np.diff(tr.psi) >= 0)
    assert 0.1 < tr.psi[-1] < 1.0
    assert np.all(np.diff(tr.energy) <= 1e-12)


def test_duffing_large_step_fails():
    with pytest.raises(NumericalFailure):
        duffing_ode(5.0, 0.0, 0.1, 0.1, 10.0, dt=1.0)


def test_duffing_csv(tmp_path):
    tr = duffing_ode(0.5, 0.0, 0.1, 0.1, 0.01)
    tr.write_csv(tmp_path / "d.csv")
    lines = (tmp_path / "d.csv").read_text().splitlines()
    assert lines[0] == "t,psi,dpsi" and len(lines) == 12


def test_rk4_fourth_order():
    errs = []
    for dt in (0.1, 0.05):
        t, y = rk4_integrate(lambda t, y: -y, [1.0], 1.0, dt)
        errs.append(abs(y[-1, 0] - math.exp(-1.0)))
    assert math.log2(errs[0] / errs[1]) > 3.9
    with pytest.raises(InvalidInputError):
        rk4_integrate(lambda t, y: -y, [1.0], 1.0, 0.3)


def test_energy_function():
    assert duffing_energy(1.0, 0.0, 0.1, 0.1) == pytest.approx(-0.025)


def test_grid_integral_exact_for_linear():
    n, dx = 11, 0.1
    x = np.arange(n) * dx
    v = np.broadcast_to(x[None, None, :], (n, n, n))
    assert grid_integral(v, dx) == pytest.approx(0.5, rel=1e-14)


def exp_snapshots(M, n=33, times=np.linspace(0, 0.2, 11)):
    dx = 1.0 / (n - 1)
    ax = np.arange(n) * dx
    Z, Y, X = np.meshgrid(ax, ax, ax, indexing="ij")
    r = np.sqrt((X - 0.5) ** 2 + (Y - 0.5) ** 2 + (Z - 0.5) ** 2)
    g = bump(0.3)(r)
    return [Field3D(math.exp(M * t) * g, dx, float(t)) for t in times], dx, g


def test_f_functional_ode_residual():
    M = 1.3
    snaps, dx, g = exp_snapshots(M)
    series = f_functional(snaps, dx, M)
    assert series.sigma == 1
    F0 = grid_integral(g, dx)
    assert series.F_values == pytest.approx(F0 * np.exp(M * series.times), rel=1e-12)
    # second difference error is O(h^2) relative to M^2 F
    assert np.max(np.abs(series.residual)) < 1e-3 * M * M * F0
    assert series.nu_lower[0] is not None


def test_f_functional_rejects_boundary_support():
    snaps, dx, _ = exp_snapshots(1.0)
    bad = Field3D(np.ones_like(snaps[0].values), dx, 0.0)
    with pytest.raises(InvalidInputError):
        f_functional([bad], dx, 1.0)


def test_field_integral_radial():
    b = bump(0.2)
    ref = field_integral(b)
    assert ref > 0
    with pytest.raises(InvalidInputError):
        field_integral(constant(1.0))


def test_sign_condition_higgs_coefficient():
    res = sign_change_condition(bump(0.2), FieldSampler(lambda r: -5 * bump(0.2)(r), support_radius=0.2),
                                math.sqrt(0.1))
    assert res.coefficient == pytest.approx(math.sqrt(9.4) + 3.0, rel=1e-15)
    assert res.satisfied_sigma == -1
    assert res.lhs_minus > 0 and res.lhs_plus == -res.lhs_minus


def test_sign_condition_kg_form():
    res = sign_change_condition(bump(0.2), zero, 2.0, form="kg")
    assert res.coefficient == 2.0 and res.satisfied_sigma == 1


def test_l3_measure_undefined_for_odd_field():
    v = np.zeros((9, 9, 9))
    v[2, 4, 4], v[6, 4, 4] = 1.0, -1.0
    assert l3_weight_measure(v, 0.1) is None
    v[6, 4, 4] = 0.0
    assert l3_weight_measure(v, 0.1) == pytest.approx((0.1**3) ** 2)


def test_wall_default_rate_is_h_independent():
    r = [static_wall_residual(1.0, 1.0, h=h).max_residual for h in (1e-1, 1e-2, 1e-3)]
    assert min(r) > 0.19 and max(r) - min(r) < 1e-5


@pytest.mark.parametrize("v", [0.0, 0.5])
def test_wall_alternative_rate_converges_fourth_order(v):
    r = [static_wall_residual(1.0, 1.0, h=h, velocity=v, kappa=1 / math.sqrt(2)).max_residual
         for h in (0.2, 0.1, 0.05)]
    assert all(math.log2(r[i] / r[i + 1]) > 3.9 for i in range(2))


def test_wall_validation():
    with pytest.raises(InvalidInputError):
        static_wall_residual(1.0, 1.0, N=(1.0, 1.0, 0.0))
    with pytest.raises(InvalidInputError):
        static_wall_residual(1.0, 1.0, velocity=1.0)


def test_wall_alternative_rate_small_step():
    assert static_wall_residual(1.0, 1.0, h=1e-3, kappa=1 / math.sqrt(2)).max_residual < 1e-8


def test_functional_of_transform_solution_grows_like_cosh():
    from kgds.quadrature import gauss_legendre
    from kgds.transform import desitter_cauchy_solution
    from kgds.kernels import cone_radius
    data = CauchyData(bump(0.5), zero, "radial3")

    def F(t):
        R = 0.5 + (cone_radius(t) if t > 0 else 0.0)
        r, w = gauss_legendre(48, 0.0, R)
        if t == 0:
            u = bump(0.5)(r)
        else:
            u = np.array([desitter_cauchy_solution(data, 0.5, x, t) for x in r])
        return float(np.sum(w * 4 * math.pi * r * r * u))

    F0 = F(0.0)
    for t in (0.5, 1.0):
        assert F(t) / F0 == pytest.approx(math.cosh(t / 2), rel=1e-3)
