import json
import math

import numpy as np
import pytest

from kgds.errors import ConfigError, InvalidInputError, NumericalFailure
from kgds.sim3d import (Field3D, FieldState, InitSpec, SimConfig, _rhs_kernel, _zero_shell, cfl_check,
                        energy_monitor, grid_axis, laplacian4, make_initial_data, radial_fd_solve,
                        run_simulation, step_rk4)
from kgds.transform import CauchyData, desitter_cauchy_solution
from kgds.wave_oracle import FieldSampler, bump

zero = FieldSampler(lambda x: np.zeros(np.shape(x)), support_radius=0.0)


def mms_error(n, T=0.1, dt=1e-3):
    cfg = SimConfig(n=n, dt=dt, t_end=T, mu2=0.3, lam=0.0, snapshot_every=T, init=InitSpec(type="zero"))
    x = grid_axis(cfg)
    Z, Y, X = np.meshgrid(x, x, x, indexing="ij")
    S = np.sin(np.pi * X) * np.sin(np.pi * Y) * np.sin(np.pi * Z)
    # psi = S cos 2t solves the equation with the source below
    src = lambda t: S * (-4 * math.cos(2 * t) - 6 * math.sin(2 * t)
                         + (math.exp(-2 * t) * 3 * math.pi**2 - 0.3) * math.cos(2 * t))
    res = run_simulation(cfg, source=src, initial=FieldState(S.copy(), np.zeros_like(S), 0.0))
    return float(np.max(np.abs(res.final.psi - S * math.cos(2 * T))))


def test_defaults_and_derived():
    cfg = SimConfig()
    assert cfg.dx == pytest.approx(0.01)
    assert cfg.steps == 3000 and cfg.steps_per_snapshot == 10


def test_config_round_trip():
    cfg = SimConfig(n=33, t_end=0.5, lam=0.2)
    again = SimConfig.from_json(cfg.to_json())
    assert again == cfg
    assert json.loads(cfg.to_json())["lambda"] == 0.2


@pytest.mark.parametrize("text,needle", [
    ('{"n": 101, "speed": 1}', "speed"),
    ('{"n": 5}', "n"),
    ('{"n": "big"}', "n"),
    ('{"dt": -1}', "dt"),
    ('{"init": {"type": "bumps", "color": 1}}', "color"),
    ('{"init": {"centers": [[0.1, 0.5, 0.5]], "radii": [0.2]}}', "escapes"),
    ("{not json", "parse error"),
])
def test_config_errors_name_the_problem(text, needle):
    with pytest.raises(ConfigError, match=needle):
        SimConfig.from_json(text)


def test_initial_data():
    cfg = SimConfig(n=33)
    p0, p1 = make_initial_data(cfg)
    assert 0.9 < p0.values.max() < 1.01
    assert np.array_equal(p1.values, -5.0 * p0.values)
    assert p0.values[0].max() == 0.0 and p0.values[:, :, -1].max() == 0.0


def test_field_round_trip(tmp_path):
    v = np.random.default_rng(1).normal(size=(17, 17, 17))
    f = Field3D(v, 0.0625, 0.25, {"dt": 1e-3, "mu2": 0.1, "lambda": 0.1})
    raw = f.write(tmp_path / "psi", 3)
    assert raw.name == "psi_3.raw" and raw.stat().st_size == 8 * 17**3
    meta = json.loads((tmp_path / "psi_3.meta.json").read_text())
    assert meta["order"] == "x-fastest" and meta["n"] == 17
    g = Field3D.read(raw)
    assert np.array_equal(g.values, v) and g.time == 0.25
    # x is the fastest axis on disk
    assert np.fromfile(raw, "<f8")[1] == v[0, 0, 1]


def test_field_rejects_non_cubes():
    with pytest.raises(InvalidInputError):
        Field3D(np.zeros((4, 4, 5)), 0.1)


def test_numba_stencil_matches_reference():
    u = np.random.default_rng(0).normal(size=(21,) * 3)
    _zero_shell(u)
    out = np.zeros_like(u)
    _rhs_kernel(u, np.zeros_like(u), 1.0, 0.0, 0.0, 1.0 / 0.05**2, out)
    assert np.max(np.abs(out - laplacian4(u, 0.05))) < 1e-9 * np.max(np.abs(out))


def test_laplacian_fourth_order():
    errs = []
    for n in (17, 33):
        x = np.linspace(0, 1, n)
        Z, Y, X = np.meshgrid(x, x, x, indexing="ij")
        S = np.sin(np.pi * X) * np.sin(np.pi * Y) * np.sin(np.pi * Z)
        errs.append(np.max(np.abs(laplacian4(S, x[1]) + 3 * np.pi**2 * S)))
    assert math.log2(errs[0] / errs[1]) > 3.8


def test_mms_order_coarse():
    e17, e33 = mms_error(17), mms_error(33)
    assert math.log2(e17 / e33) > 3.8


def test_cfl_gate():
    cfg = SimConfig(n=17, dt=0.1)
    st = FieldState(np.zeros((17,) * 3), np.zeros((17,) * 3), 0.0)
    rep = cfl_check(st, cfg)
    assert not rep.courant_ok
    with pytest.raises(NumericalFailure):
        step_rk4(st, 0.1, cfg)
    assert cfl_check(st, SimConfig(n=17)).courant_ok


def test_zero_field_stays_zero():
    cfg = SimConfig(n=17, init=InitSpec(type="zero"), t_end=0.01)
    res = run_simulation(cfg)
    assert not res.final.psi.any()


def test_run_writes_snapshots(tmp_path):
    cfg = SimConfig(n=17, dt=2e-3, t_end=0.02, snapshot_every=0.01)
    res = run_simulation(cfg, out_dir=tmp_path, keep_fields=True)
    assert [r.index for r in res.snapshots] == [0, 1, 2]
    assert sorted(p.name for p in tmp_path.glob("*.raw")) == ["psi_0.raw", "psi_1.raw", "psi_2.raw"]
    manifest = json.loads((tmp_path / "psi_manifest.json").read_text())
    assert manifest["config"]["n"] == 17 and len(manifest["history"]["t"]) == 3
    assert Field3D.read(tmp_path / "psi_2.raw").time == pytest.approx(0.02)
    assert np.array_equal(res.fields[-1].values, res.final.psi)


def test_nan_aborts(tmp_path):
    cfg = SimConfig(n=17, dt=1e-3, t_end=0.002, snapshot_every=0.001, lam=1e300)
    psi = np.zeros((17,) * 3)
    psi[8, 8, 8] = 1e10
    with pytest.raises(NumericalFailure):
        run_simulation(cfg, out_dir=tmp_path, initial=FieldState(psi, np.zeros_like(psi), 0.0))


def test_energy_monitor_nonnegative():
    cfg = SimConfig(n=17)
    p0, p1 = make_initial_data(cfg)
    assert energy_monitor(FieldState(p0.values, p1.values, 0.0), cfg.dx) > 0


def test_radial_solver_matches_transform():
    data = CauchyData(zero, bump(0.5), "radial3")
    h = radial_fd_solve(data, None, 1.5, 2.0, 1.0, 512)
    probes = np.arange(1, 21) * 0.05
    ref = np.array([desitter_cauchy_solution(data, 1.5, r, 1.0) for r in probes])
    fd = np.array([h.at(r) for r in probes])
    assert np.max(np.abs(fd - ref)) / np.max(np.abs(ref)) < 1e-3


def test_radial_solver_validation():
    data = CauchyData(bump(1.5), zero, "radial3")
    with pytest.raises(InvalidInputError):
        radial_fd_solve(data, None, 1.0, 2.0, 1.0, 128)
    with pytest.raises(InvalidInputError):
        radial_fd_solve(CauchyData(bump(0.5), zero, "radial3"), None, 1.0, 2.0, 1.0, 32)
