"""
Homogenised plate tensors, fibre symbols, force moments and amplitudes.

The fourth-order homogenised tensor is represented as a 6x6 real matrix
acting on pairs (M1, M2) of symmetric 2x2 matrices in a Voigt-3 convention
(11, 22, 12 with an engineering factor on the 12 slot): M1 drives the
membrane (x3-constant) part of the strain datum and M2 the bending
(x3-linear) part.  The per-fibre 3x3 Hermitian symbol couples in-plane and
vertical amplitudes through the same cell correctors, and the amplitude
equations are low-dimensional linear systems in that symbol.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .assembly import (
    assemble_strain_load,
    integrate,
    pair_energy,
    quadrature,
    strain_voigt_of_field,
)
from .cell_problems import (
    CellSolver,
    FiberForce,
    amplitude_mass_matrix,
    cell_solver,
    e_data_voigt,
    mass_factor,
    solve_N,
)
from .material import MaterialField
from .mesh import CellMesh

# Voigt-3 basis of symmetric 2x2 matrices: e1(x)e1, e2(x)e2, sym(e1(x)e2).
_M_BASIS = (np.array([[1.0, 0.0], [0.0, 0.0]]),
            np.array([[0.0, 0.0], [0.0, 1.0]]),
            np.array([[0.0, 0.5], [0.5, 0.0]]))


def _membrane_voigt(M: np.ndarray) -> np.ndarray:
    """Embed a symmetric 2x2 matrix as an engineering Voigt-6 strain."""
    return np.array([M[0, 0], M[1, 1], 0.0, 0.0, 0.0, 2.0 * M[0, 1]])


@dataclass(eq=False)
class HomogenisedTensors:
    """Effective plate tensors.

    Attributes:
        L: 6x6 symmetric quadratic form on pairs (M1, M2) in Voigt-3 +
            Voigt-3 block layout (membrane slots first).
        L2: membrane 3x3 block L[:3, :3].
        L1: bending 3x3 block L[3:, 3:].
        coupling: off-diagonal 3x3 block L[:3, 3:] (zero for materials with
            the planar symmetries).
    """

    L: np.ndarray
    L1: np.ndarray
    L2: np.ndarray
    coupling: np.ndarray


def compute_L(mesh: CellMesh, field: MaterialField,
              solver: Optional[CellSolver] = None,
              tol_solv: float = 1e-8) -> HomogenisedTensors:
    """Assemble the homogenised tensor from six canonical cell solves."""
    solver = solver or cell_solver(mesh, field)
    quad = quadrature(mesh)
    x3 = quad.points[..., 2]

    data = []
    for M in _M_BASIS:
        d = np.broadcast_to(_membrane_voigt(M),
                            quad.points.shape[:-1] + (6,)).copy()
        data.append(d)
    for M in _M_BASIS:
        d = -x3[..., None] * _membrane_voigt(M)
        data.append(d)

    loads = [-assemble_strain_load(mesh, field, d, test="sym") for d in data]
    floor = 1e-6 * max(np.linalg.norm(r) for r in loads)
    strains = []
    for d, rhs in zip(data, loads):
        psi = solver.solve_constrained(rhs, tol_solv, rhs_scale=floor)
        strains.append(d + strain_voigt_of_field(mesh, psi.values))

    L = np.empty((6, 6))
    for j in range(6):
        for k in range(j, 6):
            L[j, k] = L[k, j] = float(
                np.real(pair_energy(mesh, field, strains[k], strains[j])))
    return HomogenisedTensors(L=L, L1=L[3:, 3:].copy(), L2=L[:3, :3].copy(),
                              coupling=L[:3, 3:].copy())


@dataclass(eq=False)
class FiberSymbol:
    """The per-fibre 3x3 Hermitian symbol and its parity blocks.

    ``a_hom_1`` (scalar, vertical channel) and ``a_hom_2`` (2x2, in-plane
    channel) are populated when the material has the planar symmetries that
    decouple the two channels.
    """

    chi: np.ndarray
    a_hom: np.ndarray
    a_hom_1: Optional[float] = None
    a_hom_2: Optional[np.ndarray] = None


def compute_a_hom(mesh: CellMesh, field: MaterialField, chi: np.ndarray,
                  solver: Optional[CellSolver] = None,
                  tol_solv: float = 1e-8) -> FiberSymbol:
    """Fibre symbol from the three canonical corrector solves at chi."""
    chi = np.asarray(chi, dtype=float)
    if chi[0] == 0.0 and chi[1] == 0.0:
        A = np.zeros((3, 3))
        return FiberSymbol(chi=chi, a_hom=A,
                           a_hom_1=0.0 if field.planar_symmetric else None,
                           a_hom_2=(np.zeros((2, 2))
                                    if field.planar_symmetric else None))
    solver = solver or cell_solver(mesh, field)
    quad = quadrature(mesh)
    strains = []
    for d in np.eye(3):
        E = e_data_voigt(chi, d, quad.points)
        N = solve_N(mesh, field, chi, d, solver=solver, tol_solv=tol_solv)
        strains.append(E + strain_voigt_of_field(mesh, N.total.values))
    A = np.empty((3, 3), dtype=complex)
    for d in range(3):
        for mcol in range(3):
            A[d, mcol] = pair_energy(mesh, field, strains[mcol], strains[d])
    A = 0.5 * (A + A.conj().T)
    if field.planar_symmetric:
        return FiberSymbol(chi=chi, a_hom=A, a_hom_1=float(A[2, 2].real),
                           a_hom_2=A[:2, :2].copy())
    return FiberSymbol(chi=chi, a_hom=A)


def _voigt3_coords(M: np.ndarray) -> np.ndarray:
    """Coordinates of a symmetric 2x2 matrix in the canonical basis.

    The third basis matrix sym(e1(x)e2) has 1/2 off-diagonal entries, so
    the third coordinate is 2*M12.
    """
    return np.array([M[0, 0], M[1, 1], 2.0 * M[0, 1]])


def l_form_value(tensors: HomogenisedTensors, M1: np.ndarray,
                 M2: np.ndarray) -> float:
    """Evaluate the homogenised quadratic form on a real pair (M1, M2)."""
    v = np.concatenate([_voigt3_coords(M1), _voigt3_coords(M2)])
    return float(v @ tensors.L @ v)


def symbol_value_from_L(tensors: HomogenisedTensors, chi: np.ndarray,
                        m: np.ndarray) -> float:
    """The fibre symbol quadratic form computed from the plate tensor.

    The amplitude strain datum is i*(membrane matrix) + x3*(bending
    matrix), with membrane matrix sym(chi (x) m_par) and bending matrix
    m3 chi (x) chi.  The factor i on the membrane part makes the
    membrane/bending coupling block drop out of the sesquilinear pairing,
    so the value only sees the two diagonal blocks of L.
    """
    chi = np.asarray(chi, dtype=float)
    m = np.asarray(m, dtype=complex)
    M1 = 0.5 * (np.outer(chi, m[:2]) + np.outer(m[:2], chi))
    M2 = m[2] * np.outer(chi, chi)
    v = np.concatenate([_voigt3_coords(M1), 1j * _voigt3_coords(M2)])
    return float(np.real(np.conj(v) @ tensors.L @ v))


def symbol_form_value(symbol: FiberSymbol, m: np.ndarray) -> float:
    """The symbol quadratic form conj(m) . A_hom m (real for Hermitian A)."""
    m = np.asarray(m, dtype=complex)
    return float(np.real(np.conj(m) @ symbol.a_hom @ m))


@dataclass(eq=False)
class ForceMoments:
    """Fibre moments of a force density.

    Attributes:
        chi: quasimomentum of the fibre.
        zeroth: phase-weighted averages of the three components.
        first_vertical: phase-weighted first vertical moments of the two
            in-plane components, int_Q x3 conj(e_chi) f_alpha.
    """

    chi: np.ndarray
    zeroth: np.ndarray
    first_vertical: np.ndarray

    @property
    def S(self) -> np.ndarray:
        """Plain averages, all components."""
        return self.zeroth

    def S_tilde(self, alpha: int) -> complex:
        """chi_alpha-weighted first vertical moment (alpha in {0, 1})."""
        return self.chi[alpha] * self.first_vertical[alpha]

    def S_weighted(self, alpha: int) -> complex:
        """Unit-direction weighted moment chi_alpha/|chi| int x3 g_alpha."""
        k = float(np.hypot(self.chi[0], self.chi[1]))
        if k == 0.0:
            raise ValueError("the direction-weighted moment is undefined "
                             "at zero quasimomentum")
        return self.chi[alpha] / k * self.first_vertical[alpha]

    def vertical_combination(self) -> complex:
        """i (chi_1 int x3 g_1 + chi_2 int x3 g_2), the bending drive."""
        return 1j * (self.S_tilde(0) + self.S_tilde(1))


def force_moments(mesh: CellMesh, chi: np.ndarray,
                  f: FiberForce) -> ForceMoments:
    chi = np.asarray(chi, dtype=float)
    quad = quadrature(mesh)
    g = f.weighted_at_quads(mesh, chi)
    zeroth = integrate(mesh, g)
    x3 = quad.points[..., 2]
    first_vertical = integrate(mesh, x3[..., None] * g[..., :2])
    return ForceMoments(chi=chi, zeroth=zeroth,
                        first_vertical=first_vertical)


def solve_amplitude(symbol: FiberSymbol, moments: ForceMoments, mode: str,
                    simplified: bool = False,
                    prefactor: Optional[float] = None) -> np.ndarray:
    """Solve the low-dimensional amplitude equation of the given mode.

    ``prefactor`` scales the symbol term; it defaults to |chi|^{-4} for the
    bending-type modes ("first", "general_first") and |chi|^{-2} for the
    membrane-type modes, matching the unit-spectral-parameter fibre
    problems.  ``simplified`` replaces the exact profile mass matrix by the
    identity (the simplified amplitude variant, accurate to O(|chi|^2)).
    """
    chi = symbol.chi
    k = float(np.hypot(chi[0], chi[1]))
    if k == 0.0:
        raise ValueError("amplitude equations require nonzero quasimomentum")
    mass1 = 1.0 if simplified else mass_factor(chi)
    massM = np.eye(3) if simplified else amplitude_mass_matrix(chi)

    if mode == "first":
        if symbol.a_hom_1 is None:
            raise ValueError("mode 'first' needs the planar vertical block")
        pref = k ** -4 if prefactor is None else prefactor
        b3 = moments.vertical_combination() / k + moments.zeroth[2]
        m3 = b3 / (pref * symbol.a_hom_1 + mass1)
        return np.array([0.0, 0.0, m3])

    if mode == "second":
        if symbol.a_hom_2 is None:
            raise ValueError("mode 'second' needs the planar in-plane block")
        pref = k ** -2 if prefactor is None else prefactor
        A = pref * symbol.a_hom_2 + np.eye(2)
        mm = np.linalg.solve(A, moments.zeroth[:2])
        return np.array([mm[0], mm[1], 0.0])

    if mode == "general_first":
        pref = k ** -4 if prefactor is None else prefactor
        b = np.array([moments.zeroth[0] / k,
                      moments.zeroth[1] / k,
                      moments.vertical_combination() / k
                      + moments.zeroth[2]])
        return np.linalg.solve(pref * symbol.a_hom + massM, b)

    if mode == "general_second":
        pref = k ** -2 if prefactor is None else prefactor
        b = np.array([moments.zeroth[0],
                      moments.zeroth[1],
                      moments.zeroth[2] + moments.vertical_combination()])
        return np.linalg.solve(pref * symbol.a_hom + massM, b)

    raise ValueError(f"unknown amplitude mode {mode!r}")
