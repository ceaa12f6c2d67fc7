"""
Finite element assembly on the periodic cell.

Trilinear hexahedral (Q1) elements with 2x2x2 Gauss quadrature.  The grid is
uniform, so every element shares one set of shape values and physical
gradients; only the material tensor varies from element to element.

The fibre stiffness at quasimomentum chi discretises the sesquilinear form

    a_chi(u, v) = int_Q A (sym grad u + i X_chi u) : conj(sym grad v + i X_chi v)

acting on periodic vector fields, where X_chi is the zero-order symbol that
carries the quasiperiodic phase after the substitution u -> u * exp(i chi.y).
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np
import scipy.sparse as sp

from .material import MaterialField
from .mesh import CellMesh, element_dofs

# Local corner offsets of the trilinear element, matching mesh connectivity.
_OFFSETS = np.array([(0, 0, 0), (1, 0, 0), (1, 1, 0), (0, 1, 0),
                     (0, 0, 1), (1, 0, 1), (1, 1, 1), (0, 1, 1)], dtype=float)
_CORNER_XI = 2.0 * _OFFSETS - 1.0

_G = 1.0 / np.sqrt(3.0)
_QUAD_XI = np.array([(s1 * _G, s2 * _G, s3 * _G)
                     for s1 in (-1, 1) for s2 in (-1, 1) for s3 in (-1, 1)])


def x_symbol(chi: np.ndarray) -> np.ndarray:
    """Voigt matrix of the symbol X_chi.

    Acting on a displacement vector phi, X_chi phi is the symmetric matrix
    sym((phi_1, phi_2, 0) (x) (chi_1, chi_2, 0)) + transverse shear terms
    chi_a phi_3 / 2; this returns the (6, 3) matrix sending phi to the
    engineering Voigt vector of that matrix.
    """
    c1, c2 = float(chi[0]), float(chi[1])
    return np.array([[c1, 0.0, 0.0],
                     [0.0, c2, 0.0],
                     [0.0, 0.0, 0.0],
                     [0.0, 0.0, c2],
                     [0.0, 0.0, c1],
                     [c2, c1, 0.0]])


class Quadrature:
    """Shared per-element shape data for a structured mesh.

    Attributes:
        w: scalar quadrature weight (uniform: |J| * unit weight).
        N: (8, 3, 24) displacement interpolation at each quad point.
        B: (8, 6, 24) engineering strain-displacement matrix at each point.
        points: (n_elem, 8, 3) physical quad point coordinates.
    """

    def __init__(self, mesh: CellMesh):
        h1, h2, h3 = mesh.h
        self.w = h1 * h2 * h3 / 8.0
        n_q = len(_QUAD_XI)
        shape = np.empty((n_q, 8))
        dshape = np.empty((n_q, 8, 3))
        for q, xi in enumerate(_QUAD_XI):
            for k in range(8):
                c = _CORNER_XI[k]
                f = (1 + c * xi) / 2.0
                shape[q, k] = f.prod()
                for d in range(3):
                    g = f.copy()
                    g[d] = c[d] / 2.0
                    dshape[q, k, d] = g.prod()
        # physical gradients
        dshape[:, :, 0] *= 2.0 / h1
        dshape[:, :, 1] *= 2.0 / h2
        dshape[:, :, 2] *= 2.0 / h3

        self.N = np.zeros((n_q, 3, 24))
        self.B = np.zeros((n_q, 6, 24))
        for k in range(8):
            for c in range(3):
                self.N[:, c, 3 * k + c] = shape[:, k]
            dx, dy, dz = dshape[:, k, 0], dshape[:, k, 1], dshape[:, k, 2]
            self.B[:, 0, 3 * k + 0] = dx
            self.B[:, 1, 3 * k + 1] = dy
            self.B[:, 2, 3 * k + 2] = dz
            self.B[:, 3, 3 * k + 1] = dz
            self.B[:, 3, 3 * k + 2] = dy
            self.B[:, 4, 3 * k + 0] = dz
            self.B[:, 4, 3 * k + 2] = dx
            self.B[:, 5, 3 * k + 0] = dy
            self.B[:, 5, 3 * k + 1] = dx

        corner = np.empty((mesh.n_elems, 3))
        corner[:, 0] = mesh.elem_index[:, 0] * h1
        corner[:, 1] = mesh.elem_index[:, 1] * h2
        corner[:, 2] = mesh.elem_index[:, 2] * h3 - 0.5
        local = (1 + _QUAD_XI) / 2.0 * np.array([h1, h2, h3])
        self.points = corner[:, None, :] + local[None, :, :]


@lru_cache(maxsize=8)
def _quad_cache(mesh: CellMesh) -> Quadrature:
    return Quadrature(mesh)


def quadrature(mesh: CellMesh) -> Quadrature:
    return _quad_cache(mesh)


def material_at_quads(mesh: CellMesh, field: MaterialField) -> np.ndarray:
    """(n_elem, 8, 6, 6) stiffness matrices at the quad points."""
    quad = quadrature(mesh)
    idx = field.phase_at(quad.points[..., 0], quad.points[..., 1])
    C_all = np.stack([p.C for p in field.phases])
    return C_all[idx]


def _scatter(mesh: CellMesh, Ke: np.ndarray) -> sp.csc_matrix:
    dofs = element_dofs(mesh)
    rows = np.repeat(dofs, 24, axis=1).ravel()
    cols = np.tile(dofs, (1, 24)).ravel()
    K = sp.coo_matrix((Ke.ravel(), (rows, cols)),
                      shape=(mesh.n_dofs, mesh.n_dofs))
    return K.tocsc()


def assemble_fiber_stiffness(mesh: CellMesh, field: MaterialField,
                             chi: np.ndarray) -> sp.csc_matrix:
    """Stiffness of the shifted fibre form a_chi (complex Hermitian)."""
    quad = quadrature(mesh)
    C = material_at_quads(mesh, field)
    Xv = x_symbol(chi)
    Ke = np.zeros((mesh.n_elems, 24, 24), dtype=complex)
    for q in range(8):
        G = quad.B[q] + 1j * (Xv @ quad.N[q])
        CG = np.einsum("eab,bj->eaj", C[:, q], G)
        Ke += quad.w * np.einsum("ai,eaj->eij", G.conj(), CG)
    return _scatter(mesh, Ke)


def assemble_mass(mesh: CellMesh) -> sp.csc_matrix:
    """L2 mass matrix (real symmetric, block-diagonal per component)."""
    quad = quadrature(mesh)
    Me_unit = quad.w * sum(quad.N[q].T @ quad.N[q] for q in range(8))
    Ke = np.broadcast_to(Me_unit, (mesh.n_elems, 24, 24))
    return _scatter(mesh, Ke)


def assemble_strain_load(mesh: CellMesh, field: MaterialField, strain_fn,
                         test: str = "sym",
                         chi: np.ndarray | None = None) -> np.ndarray:
    """Load vector of a prescribed stress against a strain-type test operator.

    Computes the vector with entries int_Q A E(x) : conj(T phi_j) where E is
    given by ``strain_fn(points) -> (..., 6)`` engineering Voigt strains (or
    an (n_elem, 8, 6) array of quad-point values) and the test operator T is
    sym grad (``test='sym'``) or X_chi (``test='x'``).
    """
    quad = quadrature(mesh)
    C = material_at_quads(mesh, field)
    e = np.asarray(strain_fn(quad.points) if callable(strain_fn)
                   else strain_fn)  # (n_elem, 8, 6)
    s = np.einsum("eqab,eqb->eqa", C, e)
    if test == "sym":
        T = quad.B  # (8, 6, 24)
    elif test == "x":
        if chi is None:
            raise ValueError("test='x' requires chi")
        Xv = x_symbol(chi)
        T = np.einsum("ab,qbj->qaj", Xv, quad.N)
    else:
        raise ValueError(f"unknown test operator {test!r}")
    Le = quad.w * np.einsum("qaj,eqa->ej", T, s)
    out = np.zeros(mesh.n_dofs, dtype=Le.dtype)
    np.add.at(out, element_dofs(mesh).ravel(), Le.ravel())
    return out


def assemble_vector_load(mesh: CellMesh, g_fn) -> np.ndarray:
    """Load vector int_Q g . conj(phi_j) for g given pointwise.

    ``g_fn(points) -> (..., 3)`` or an (n_elem, 8, 3) array of quad values;
    for nodal data prefer M @ g directly.
    """
    quad = quadrature(mesh)
    g = np.asarray(g_fn(quad.points) if callable(g_fn) else g_fn)
    Le = quad.w * np.einsum("qcj,eqc->ej", quad.N, g)
    out = np.zeros(mesh.n_dofs, dtype=Le.dtype)
    np.add.at(out, element_dofs(mesh).ravel(), Le.ravel())
    return out


def nodal_field(mesh: CellMesh, fn) -> np.ndarray:
    """Interpolate ``fn(coords) -> (n_nodes, 3)`` into a dof vector."""
    vals = np.asarray(fn(mesh.node_coords()))
    return vals.reshape(-1)


def strain_voigt_of_field(mesh: CellMesh, v: np.ndarray) -> np.ndarray:
    """(n_elem, 8, 6) engineering Voigt strains sym grad v at quad points."""
    quad = quadrature(mesh)
    ve = v[element_dofs(mesh)]  # (n_elem, 24)
    return np.einsum("qak,ek->eqa", quad.B, ve)


def x_voigt_of_field(mesh: CellMesh, chi: np.ndarray, v: np.ndarray) -> np.ndarray:
    """(n_elem, 8, 6) Voigt strains of X_chi applied to the nodal field v."""
    quad = quadrature(mesh)
    ve = v[element_dofs(mesh)]
    XN = np.einsum("ab,qbk->qak", x_symbol(chi), quad.N)
    return np.einsum("qak,ek->eqa", XN, ve)


def values_of_field(mesh: CellMesh, v: np.ndarray) -> np.ndarray:
    """(n_elem, 8, 3) values of the nodal field v at quad points."""
    quad = quadrature(mesh)
    ve = v[element_dofs(mesh)]
    return np.einsum("qck,ek->eqc", quad.N, ve)


def pair_energy(mesh: CellMesh, field: MaterialField,
                S: np.ndarray, T: np.ndarray) -> complex:
    """int_Q A S : conj(T) for Voigt strain data given at quad points."""
    quad = quadrature(mesh)
    C = material_at_quads(mesh, field)
    return quad.w * np.einsum("eqa,eqab,eqb->", np.conj(T), C, S)


def integrate(mesh: CellMesh, vals: np.ndarray) -> np.ndarray:
    """Integrate quad-point data of shape (n_elem, 8, ...) over Q."""
    quad = quadrature(mesh)
    return quad.w * vals.sum(axis=(0, 1))
