import numpy as np
import pytest
import scipy.linalg as sla

from bosedyn import fock
from bosedyn.errors import DomainError, NormalizationError, SizeError
from bosedyn.modes import ModeBasis, ModeModel
from bosedyn.potentials import Potential, make_form, scale_potential
from bosedyn.spectral import PeriodicGrid


def small_model(L=4, N=4, mass=-1.0):
    g = PeriodicGrid(1, 32, 2 * np.pi)
    w = Potential.from_form(make_form("gaussian", mass, 0.4, 1), g)
    model = ModeModel(ModeBasis.lowest(g, L), scale_potential(w, N, 0.5))
    u = np.zeros(L, dtype=complex)
    u[:3] = [1.0, 0.4, 0.3j]
    return model, u / np.linalg.norm(u)


def random_sector_vector(rng, space, n):
    v = np.where(space.sector_mask(n), rng.normal(size=space.dim) + 1j * rng.normal(size=space.dim), 0)
    return v / np.linalg.norm(v)


def test_dimensions_and_cap():
    assert fock.sector_dimension(4, 3) == 20
    assert fock.FockSpace(4, 3).dim == fock.fock_dimension(4, 3) == 35
    assert fock.FockSpace(3, 4, 4).dim == 15
    with pytest.raises(SizeError):
        fock.FockSpace(12, 12, cap=1000)


def test_canonical_commutation_below_top_sector():
    s = fock.FockSpace(3, 5)
    a = s.annihilators
    low = np.diag(s.n < s.n_max).astype(float)
    for p in range(3):
        for q in range(3):
            comm = (a[p] @ a[q].conj().T - a[q].conj().T @ a[p]).toarray()
            assert np.allclose(comm @ low, (p == q) * low)


def test_transfer_across_different_truncations():
    small, big = fock.FockSpace(3, 2), fock.FockSpace(3, 5)
    v = np.arange(1, small.dim + 1).astype(complex)
    back = big.transfer(small.transfer(v, big), small)
    assert np.array_equal(back, v)
    occ = [1, 0, 1]
    assert small.transfer(small.basis_vector(occ), big)[big.state_index(occ)] == 1.0
    # states above the target truncation are dropped
    assert np.linalg.norm(big.transfer(big.basis_vector([0, 4, 0]), small)) == 0.0


def test_density_matrices_known_states():
    s = fock.FockSpace(2, 3)
    g, a = fock.density_matrices(s, s.basis_vector([2, 1]))
    assert np.allclose(g, np.diag([2, 1])) and np.allclose(a, 0)
    v = (s.vacuum() + s.basis_vector([1, 1])) / np.sqrt(2)
    g, a = fock.density_matrices(s, v)
    assert np.allclose(a, [[0, 0.5], [0.5, 0]])
    assert np.allclose(g, 0.5 * np.eye(2))


def test_krylov_matches_dense_exponential(rng):
    A = rng.normal(size=(40, 40)) + 1j * rng.normal(size=(40, 40))
    H = A + A.conj().T
    v = rng.normal(size=40) + 0j
    v /= np.linalg.norm(v)
    out = fock.exact_evolve(v, H, 0.3, 0.05)
    assert np.linalg.norm(out - sla.expm(-0.3j * H) @ v) < 1e-10
    with pytest.raises(NormalizationError):
        fock.exact_evolve(2 * v, H, 0.3, 0.05)


def test_free_hamiltonian_gives_pure_phases():
    model, _ = small_model()
    free = ModeModel.from_arrays(model.T, np.zeros_like(model.W))
    H, sec = fock.build_HN(free, 3)
    v = sec.basis_vector([1, 0, 2, 0])
    out = fock.exact_evolve(v, H, 0.4, 0.1)
    assert np.allclose(out, np.exp(-0.4j * (model.T[0] + 2 * model.T[2])) * v)


def test_hamiltonian_is_hermitian_and_conserves_number():
    model, _ = small_model()
    H, sec = fock.build_HN(model, 3)
    assert abs(H - H.conj().T).max() < 1e-13
    assert np.all(sec.n == 3)


def test_excitation_map_is_isometric_and_excites_orthogonally(rng):
    model, u = small_model()
    N = 4
    s = fock.FockSpace(model.L, N)
    psi = random_sector_vector(rng, s, N)
    phi = fock.excitation_map(psi, u, N, s)
    assert np.linalg.norm(phi) == pytest.approx(1.0, abs=1e-12)
    assert fock.condensate_occupation(s, u, phi) < 1e-20
    assert np.linalg.norm(fock.excitation_unmap(phi, u, N, s) - psi) < 1e-10


def test_condensate_state_maps_to_vacuum():
    _, u = small_model()
    s = fock.FockSpace(4, 3)
    psi = fock.excitation_unmap(s.vacuum(), u, 3, s)
    assert np.linalg.norm(psi) == pytest.approx(1.0)
    assert np.linalg.norm(fock.excitation_map(psi, u, 3, s) - s.vacuum()) < 1e-12


def test_unmap_rejects_condensate_occupation():
    _, u = small_model()
    s = fock.FockSpace(4, 3)
    with pytest.raises(DomainError):
        fock.excitation_unmap(fock.excitation_unmap(s.vacuum(), u, 1, s), u, 3, s)


@pytest.mark.parametrize("full", [True, False])
def test_generator_is_hermitian(full):
    model, u = small_model()
    s = fock.FockSpace(model.L, 3)
    gen = fock.FluctuationGenerator(s, model, 5, model.solve_hartree(u, 0.2), full=full)
    G = np.column_stack([gen.matvec(0.1)(e) for e in np.eye(s.dim)])
    assert np.max(np.abs(G - G.conj().T)) < 1e-12


def test_fluctuation_evolution_preserves_norm_and_excitation_space(rng):
    model, u = small_model()
    N = 4
    s = fock.FockSpace(model.L, N)
    traj = model.solve_hartree(u, 0.3)
    phi0 = fock.excitation_map(random_sector_vector(rng, s, N), u, N, s)
    phi = fock.evolve_fluctuation(phi0, fock.FluctuationGenerator(s, model, N, traj), 0.3, 0.01)
    assert np.linalg.norm(phi) == pytest.approx(1.0, abs=1e-12)
    assert fock.condensate_occupation(s, traj(0.3), phi) < 1e-12


def test_cf4_is_more_accurate_than_midpoint():
    model, u = small_model()
    s = fock.FockSpace(model.L, 4)
    traj = model.solve_hartree(u, 0.3)
    gen = fock.FluctuationGenerator(s, model, 4, traj)
    ref = fock.evolve_fluctuation(s.vacuum(), gen, 0.3, 0.0025)
    e_cf4 = np.linalg.norm(fock.evolve_fluctuation(s.vacuum(), gen, 0.3, 0.05) - ref)
    e_mid = np.linalg.norm(fock.evolve_fluctuation(s.vacuum(), gen, 0.3, 0.05, scheme="midpoint") - ref)
    assert e_cf4 < 0.1 * e_mid


def test_one_body_rdm_of_condensate():
    _, u = small_model()
    N = 3
    H_space = fock.FockSpace(4, N, N)
    full = fock.FockSpace(4, N)
    psi = full.transfer(fock.excitation_unmap(full.vacuum(), u, N, full), H_space)
    gamma = fock.one_body_rdm(H_space, psi)
    assert np.allclose(gamma, np.outer(u, u.conj()), atol=1e-12)


def test_sector_record_json():
    import json

    s = fock.FockSpace(2, 2)
    rec = json.loads(fock.sector_record(0.5, s, s.basis_vector([1, 1]), np.array([0.0, 1.0])))
    assert rec["sector_norms"] == [0.0, 0.0, 1.0]
    assert rec["number_expectation"] == 2.0 and rec["kinetic_expectation"] == 3.0
