import numpy as np
import pytest

from platehomog import assembly as asm
from platehomog.mesh import build_mesh, element_dofs


def test_mesh_sizes_and_coords(mesh_small):
    n1, n2, n3 = mesh_small.n1, mesh_small.n2, mesh_small.n3
    assert mesh_small.n_nodes == n1 * n2 * (n3 + 1)
    assert mesh_small.n_dofs == 3 * mesh_small.n_nodes
    assert mesh_small.n_elems == n1 * n2 * n3
    coords = mesh_small.node_coords()
    assert coords.shape == (mesh_small.n_nodes, 3)
    # Periodic in-plane: nodes live on [0, 1); vertical axis spans [-1/2, 1/2].
    assert coords[:, 0].max() == pytest.approx(1.0 - 1.0 / n1)
    assert coords[:, 2].min() == pytest.approx(-0.5)
    assert coords[:, 2].max() == pytest.approx(0.5)


def test_element_dofs_shape(mesh_small):
    dofs = element_dofs(mesh_small)
    assert dofs.shape == (mesh_small.n_elems, 24)
    assert dofs.min() >= 0 and dofs.max() < mesh_small.n_dofs


def test_mass_matrix_integrates_constants(mesh_small):
    M = asm.assemble_mass(mesh_small)
    ones = np.tile([1.0, 0.0, 0.0], mesh_small.n_nodes)
    # |Q| = 1, so the constant (1,0,0) has unit mass norm.
    assert ones @ (M @ ones) == pytest.approx(1.0, rel=1e-12)


def test_mass_matrix_exact_on_coordinates(mesh_small):
    # x3 is trilinear, so int x3^2 = 1/12 is reproduced exactly by Q1 mass.
    coords = mesh_small.node_coords()
    v = np.zeros(mesh_small.n_dofs)
    v[2::3] = coords[:, 2]
    M = asm.assemble_mass(mesh_small)
    assert v @ (M @ v) == pytest.approx(1.0 / 12.0, rel=1e-12)


def test_stiffness_hermitian_and_psd(mesh_small, two_phase_field):
    chi = np.array([0.4, -0.7])
    K = asm.assemble_fiber_stiffness(mesh_small, two_phase_field, chi)
    d = K - K.getH()
    assert abs(d).max() < 1e-12
    rng = np.random.default_rng(0)
    z = rng.standard_normal(mesh_small.n_dofs) + 1j * rng.standard_normal(
        mesh_small.n_dofs)
    assert np.real(np.conj(z) @ (K @ z)) > 0.0


def test_zero_fibre_kernel_is_constants(mesh_small, iso_field):
    K = asm.assemble_fiber_stiffness(mesh_small, iso_field, np.zeros(2))
    for c in range(3):
        e = np.zeros(mesh_small.n_dofs)
        e[c::3] = 1.0
        assert np.linalg.norm(K @ e) < 1e-12


def test_shifted_gradient_energy_of_constant(mesh_small, iso_field):
    # (sym grad + i X_chi)(c e_1) has Voigt strain i chi (x) c; for
    # chi = (0.1, 0) and c = e_1 the quadratic form is C_1111 * 0.01 = 0.03.
    chi = np.array([0.1, 0.0])
    K = asm.assemble_fiber_stiffness(mesh_small, iso_field, chi)
    e = np.zeros(mesh_small.n_dofs, dtype=complex)
    e[0::3] = 1.0
    val = np.real(np.conj(e) @ (K @ e))
    assert val == pytest.approx(3.0 * 0.01, rel=1e-12)


def test_vector_load_matches_mass_action(mesh_small):
    # For trilinear g both quadrature loads and M g agree exactly.
    coords = mesh_small.node_coords()
    g_nodal = np.zeros(mesh_small.n_dofs)
    g_nodal[1::3] = coords[:, 2]

    def g_fn(points):
        out = np.zeros(points.shape[:-1] + (3,))
        out[..., 1] = points[..., 2]
        return out

    b = asm.assemble_vector_load(mesh_small, g_fn)
    M = asm.assemble_mass(mesh_small)
    assert np.allclose(b, M @ g_nodal, atol=1e-13)


def test_pair_energy_matches_stiffness(mesh_small, two_phase_field):
    chi = np.array([0.3, 0.2])
    rng = np.random.default_rng(1)
    u = rng.standard_normal(mesh_small.n_dofs) + 1j * rng.standard_normal(
        mesh_small.n_dofs)
    K = asm.assemble_fiber_stiffness(mesh_small, two_phase_field, chi)
    quad_form = np.conj(u) @ (K @ u)
    S = asm.strain_voigt_of_field(mesh_small, u) + 1j * asm.x_voigt_of_field(
        mesh_small, chi, u)
    energy = asm.pair_energy(mesh_small, two_phase_field, S, S)
    assert energy == pytest.approx(quad_form, rel=1e-12)


def test_integrate_unit_cell_volume(mesh_small):
    vals = np.ones((mesh_small.n_elems, 8))
    assert asm.integrate(mesh_small, vals) == pytest.approx(1.0, rel=1e-14)


def test_signed_reflection_is_an_involution(mesh_small):
    perm, sign = mesh_small.parity_masks()
    rng = np.random.default_rng(2)
    u = rng.standard_normal(mesh_small.n_dofs)
    Ru = sign * u[perm]
    RRu = sign * Ru[perm]
    assert np.allclose(RRu, u)
    # In-plane components flip sign, vertical component keeps it.
    assert np.all(sign[0::3] == -1.0)
    assert np.all(sign[2::3] == 1.0)


def test_refinement_converges_energy(iso_field):
    # Fibre energy of the interpolated smooth field converges under
    # refinement; compare two levels for a crude sanity check.
    chi = np.array([0.5, 0.3])

    def fn(coords):
        out = np.zeros((coords.shape[0], 3))
        out[:, 2] = np.cos(2 * np.pi * coords[:, 0]) * coords[:, 2]
        return out

    vals = []
    for n in (4, 8, 16):
        mesh = build_mesh(n, n, n)
        v = asm.nodal_field(mesh, fn).astype(complex)
        K = asm.assemble_fiber_stiffness(mesh, iso_field, chi)
        vals.append(np.real(np.conj(v) @ (K @ v)))
    # Successive differences shrink by roughly the O(h^2) factor.
    assert abs(vals[2] - vals[1]) < 0.4 * abs(vals[1] - vals[0])
