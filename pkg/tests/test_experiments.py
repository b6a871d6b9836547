import dataclasses

import numpy as np
import pytest

from bosedyn import experiments as ex
from bosedyn.errors import ConfigError, FitError
from bosedyn.fock import FockSpace, condensate_occupation

SMALL = ex.SweepConfig(N_list=(4, 6, 8), t_final=0.2)


def test_slope_fit_recovers_power_law():
    N = np.array([4, 8, 16, 32])
    fit = ex.slope_fit(N, 3.0 * N**-1.5)
    assert fit.slope == pytest.approx(-1.5) and fit.r2 == pytest.approx(1.0)
    assert ex.slope_fit(N, np.ones(4)).slope == 0.0
    with pytest.raises(FitError):
        ex.slope_fit(N, [1.0, 0.0, 0.0, 0.0])


@pytest.mark.parametrize("kw", [dict(d=3), dict(beta=0.0), dict(d=2, beta=1.2), dict(M_rule="log"),
                                dict(N_list=(1, 4)), dict(d=2, beta=0.5, alpha_probe=0.3)])
def test_sweep_config_validation(kw):
    with pytest.raises(ConfigError):
        ex.SweepConfig(**kw)


def test_truncation_rules():
    cfg = ex.SweepConfig(beta=0.7)
    assert [cfg.M_for(N) for N in (6, 8, 10, 12, 14)] == [4, 5, 6, 7, 8]
    assert ex.SweepConfig(M_rule="fixed", M_fixed=20).M_for(6) == 6
    assert ex.SweepConfig(M_rule="pow_1_minus_delta", delta=0.5).M_for(16) == 4


def test_squeezed_initial_fluctuation_is_excitation_vector():
    cfg = dataclasses.replace(SMALL, initial=ex.InitialSpec(phi0="squeezed", squeeze=0.2))
    model, u0 = ex.build_mode_model(cfg, 6)
    space = FockSpace(model.L, 6)
    phi = ex.initial_fluctuation(cfg, space, u0)
    assert np.linalg.norm(phi) == pytest.approx(1.0)
    assert condensate_occupation(space, u0, phi) < 1e-20
    # pairing only populates even sectors
    assert np.allclose(space.sector_norms(phi)[1::2], 0)


def test_norm_error_sweep_small():
    res = ex.norm_error_vs_N(SMALL)
    errs = np.array(res.column("err_norm2"))
    assert res.passes["decreasing"] and res.passes["bounded"]
    assert np.all(errs > 0) and res.fit.slope < 0


def test_norm_error_vanishes_without_interaction():
    cfg = dataclasses.replace(SMALL, potential=ex.PotentialSpec(mass=0.0))
    res = ex.norm_error_vs_N(cfg)
    assert max(res.column("err_norm2")) < 1e-20


def test_reduced_density_sweep_small():
    res = ex.reduced_density_error(SMALL)
    assert res.passes == {"decreasing": True, "trace_one": True, "psd": True}


def test_dynamics_comparison_exact_zero_at_full_truncation():
    cfg = dataclasses.replace(SMALL, M_rule="fixed", M_fixed=100)
    res = ex.dynamics_comparison(cfg)
    assert all(r["err_N_vs_NM"] == 0.0 for r in res.N_vs_NM.rows)
    assert res.NM_vs_Bog.passes["triangle"]


def test_parallel_points_match_serial():
    par = ex.norm_error_vs_N(dataclasses.replace(SMALL, N_list=(4, 6, 8), workers=2))
    ser = ex.norm_error_vs_N(SMALL)
    assert par.rows == ser.rows


def test_kernel_sweep_1d_small():
    cfg = ex.SweepConfig(beta=2.0, N_list=(16, 64, 256), t_final=0.0, points=128, box_length=16.0,
                         potential=ex.PotentialSpec(mass=-1.0, width=1.0), initial=ex.InitialSpec(width=1.0))
    res = ex.kernel_scaling_sweep(cfg)
    assert res.passes["flat"]
    assert res.passes["raw_slope"] > 0.5


def test_kernel_sweep_2d_requires_product_setup():
    cfg = ex.SweepConfig(d=2, beta=0.5, N_list=(16, 64, 256), t_final=0.3, points=32, box_length=16.0)
    with pytest.raises(ConfigError):
        ex.kernel_scaling_sweep(cfg)


def test_result_files_are_deterministic(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    a.mkdir(), b.mkdir()
    ex.norm_error_vs_N(SMALL).write(a)
    ex.norm_error_vs_N(SMALL).write(b)
    for name in ("norm_error_vs_N.csv", "norm_error_vs_N.json"):
        assert (a / name).read_bytes() == (b / name).read_bytes()
    assert (a / "norm_error_vs_N.csv").read_text().splitlines()[0].startswith("N,")


def test_trace_distance():
    a = np.diag([1.0, 0.0])
    b = np.diag([0.0, 1.0])
    assert ex.trace_distance(a, b) == pytest.approx(2.0)


def test_slope_fit_on_noisy_synthetic_data():
    rng = np.random.default_rng(0)
    N = np.array([4, 8, 16, 32, 64, 128])
    fit = ex.slope_fit(N, N**-0.5 * (1 + 0.01 * rng.normal(size=N.size)))
    assert -0.55 <= fit.slope <= -0.45
