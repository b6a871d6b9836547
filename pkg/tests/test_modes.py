import numpy as np
import pytest

from bosedyn.errors import ConfigError, DimensionError, NormalizationError
from bosedyn.hartree import HartreeState, density_potential, gaussian_datum, hartree_evolve
from bosedyn.modes import ModeBasis, ModeModel
from bosedyn.potentials import Potential, make_form, scale_potential
from bosedyn.spectral import PeriodicGrid

G = PeriodicGrid(1, 16, 8.0)


def full_model(mass=1.5):
    w = Potential.from_form(make_form("gaussian", mass, 1.0, 1), G)
    return ModeModel(ModeBasis.lowest(G), scale_potential(w, 1, 0.0))


def test_lowest_modes_ordering():
    b = ModeBasis.lowest(PeriodicGrid(1, 32, 2 * np.pi), 5)
    assert b.m[:, 0].tolist() == [0, 1, -1, 2, -2]
    assert np.allclose(b.ksq, [0, 1, 1, 4, 4])
    assert np.allclose(b.gram(), np.eye(5), atol=1e-12)
    with pytest.raises(ConfigError):
        ModeBasis.lowest(G, 0)


def test_coefficients_field_round_trip():
    b = ModeBasis.lowest(G)
    u = gaussian_datum(G, 1.0, k0=[0.5])
    assert np.allclose(b.field(b.coefficients(u)), u, atol=1e-12)
    assert b.is_full


def test_condensate_requires_unit_vector():
    b = ModeBasis.lowest(G, 3)
    with pytest.raises(NormalizationError):
        b.condensate(np.array([1.0, 1.0, 0.0]))
    with pytest.raises(DimensionError):
        b.condensate(np.ones(4) / 2)


def test_mean_field_matrix_matches_grid_multiplication():
    model = full_model()
    b = model.basis
    u = gaussian_datum(G, 1.0, k0=[0.8])
    c = b.coefficients(u)
    V = density_potential(u, model.wN)
    vecs = b.vectors().reshape(b.size, -1)
    direct = G.cell * vecs.conj() @ (V.ravel()[:, None] * vecs.T)
    assert np.allclose(model.mean_field(c), direct, atol=1e-12)


def test_kernels_symmetry():
    model = full_model()
    rng = np.random.default_rng(3)
    c = rng.normal(size=model.L) + 1j * rng.normal(size=model.L)
    c /= np.linalg.norm(c)
    h, K2 = model.bogoliubov_kernels(c)
    assert np.allclose(h, h.conj().T)
    assert np.allclose(K2, K2.T)
    assert np.allclose(K2 @ c.conj(), 0, atol=1e-12)


def test_mode_hartree_matches_grid_solver_on_full_basis():
    model = full_model()
    b = model.basis
    u0 = gaussian_datum(G, 1.0, k0=[0.5])
    t = 0.5
    c_t = model.solve_hartree(b.coefficients(u0), t)(t)
    st, _ = hartree_evolve(HartreeState(u0, 0.0, model.wN), t, 2.5e-4, sample_every=None)
    assert np.linalg.norm(c_t - b.coefficients(st.u)) < 1e-6


def test_mode_hartree_conserves_norm_and_energy():
    model = full_model(-2.0)
    c0 = model.basis.coefficients(gaussian_datum(G, 1.0))
    traj = model.solve_hartree(c0, 1.0)
    for t in (0.3, 1.0):
        assert np.linalg.norm(traj(t)) == pytest.approx(1.0, abs=1e-12)
        assert model.energy(traj(t)) == pytest.approx(model.energy(c0), abs=1e-9)


def test_from_arrays_free_model():
    m = ModeModel.from_arrays(np.array([0.0, 1.0]), np.zeros((2, 2, 2, 2)))
    assert m.is_free() and m.L == 2
