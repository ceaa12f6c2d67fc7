"""
Zero-mean periodic corrector problems and the corrector cascades.

The building block is a saddle-point solve: the cell stiffness at zero
quasimomentum with three Lagrange multipliers enforcing per-component zero
mean.  On top of it sit the matrix correctors N_m and the four recursive
correction cascades (bending-dominated and membrane-dominated modes of a
plate with planar material symmetries, and the two scaling regimes of a
general material), each step of which is a corrector solve whose right-hand
side is built from the previous fields and checked for solvability against
constants.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field
from functools import lru_cache
from typing import Callable, Dict, Optional

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .assembly import (
    assemble_fiber_stiffness,
    assemble_mass,
    assemble_strain_load,
    assemble_vector_load,
    integrate,
    pair_energy,
    quadrature,
    strain_voigt_of_field,
    values_of_field,
    x_symbol,
    x_voigt_of_field,
)
from .material import MaterialField
from .mesh import CellMesh

MODES = ("first", "second", "general_first", "general_second")


# ---------------------------------------------------------------------------
# Symbol-level strain data
# ---------------------------------------------------------------------------

def e_data_voigt(chi: np.ndarray, m: np.ndarray,
                 points: np.ndarray) -> np.ndarray:
    """Engineering Voigt values of the amplitude strain datum at ``points``.

    For an amplitude m the datum is the in-plane membrane strain generated
    by (m_1, m_2) plus the x3-linear bending strain generated by m_3; it is
    exactly the total strain of the tilted profile field, see
    :func:`tilted_profile`.
    """
    c1, c2 = float(chi[0]), float(chi[1])
    x3 = points[..., 2]
    out = np.zeros(points.shape[:-1] + (6,), dtype=complex)
    out[..., 0] = 1j * m[0] * c1 + x3 * m[2] * c1 * c1
    out[..., 1] = 1j * m[1] * c2 + x3 * m[2] * c2 * c2
    out[..., 5] = 1j * (m[0] * c2 + m[1] * c1) + 2.0 * x3 * m[2] * c1 * c2
    return out


def tilted_profile(chi: np.ndarray, m: np.ndarray,
                   points: np.ndarray) -> np.ndarray:
    """The field (m_1 - i chi_1 x3 m_3, m_2 - i chi_2 x3 m_3, m_3)."""
    c1, c2 = float(chi[0]), float(chi[1])
    x3 = points[..., 2]
    out = np.zeros(points.shape[:-1] + (3,), dtype=complex)
    out[..., 0] = m[0] - 1j * c1 * x3 * m[2]
    out[..., 1] = m[1] - 1j * c2 * x3 * m[2]
    out[..., 2] = m[2]
    return out


def mass_factor(chi: np.ndarray) -> float:
    """L2 norm squared of the unit-amplitude vertical tilted profile.

    Equals 1 + |chi|^2/12 (the x3-linear tilt contributes the second moment
    of the unit interval, 1/12).
    """
    k2 = float(chi[0]) ** 2 + float(chi[1]) ** 2
    return 1.0 + k2 / 12.0


def amplitude_mass_matrix(chi: np.ndarray) -> np.ndarray:
    """Gram matrix of the three canonical tilted profiles (diagonal)."""
    return np.diag([1.0, 1.0, mass_factor(chi)])


# ---------------------------------------------------------------------------
# Constrained solver
# ---------------------------------------------------------------------------

@dataclass(eq=False)
class CorrectorField:
    """A zero-mean nodal corrector with its residual diagnostics.

    Attributes:
        values: complex dof vector of length 3 * n_nodes.
        solvability_residual: max_j |<rhs, e_j>| / ||rhs|| over the three
            per-component constant fields e_j.
        solver_residual: relative residual of the saddle-point solve.
        mean_residual: max_j |int_Q v_j| / ||v||.
    """

    values: np.ndarray
    solvability_residual: float = 0.0
    solver_residual: float = 0.0
    mean_residual: float = 0.0

    def __add__(self, other: "CorrectorField") -> "CorrectorField":
        return CorrectorField(
            values=self.values + other.values,
            solvability_residual=max(self.solvability_residual,
                                     other.solvability_residual),
            solver_residual=max(self.solver_residual, other.solver_residual),
            mean_residual=max(self.mean_residual, other.mean_residual),
        )

    def __mul__(self, a: complex) -> "CorrectorField":
        return CorrectorField(np.asarray(a) * self.values,
                              self.solvability_residual,
                              self.solver_residual, self.mean_residual)

    __rmul__ = __mul__


class SolvabilityError(ValueError):
    """Right-hand side is not orthogonal to the constant fields."""


def constants_basis(mesh: CellMesh) -> np.ndarray:
    """(n_dofs, 3) matrix whose columns are the unit constant fields."""
    E = np.zeros((mesh.n_dofs, 3))
    for j in range(3):
        E[j::3, j] = 1.0
    return E


class CellSolver:
    """Factorised zero-shift cell operator with zero-mean constraints.

    Holds the stiffness at zero quasimomentum, the mass matrix and an LU
    factorisation of the bordered saddle system

        [ K0   M E ] [ v      ]   [ rhs ]
        [ EᵀM   0  ] [ lambda ] = [  0  ]

    where the columns of E are the per-component constant fields, so the
    multiplier rows enforce int_Q v_j = 0 exactly.
    """

    def __init__(self, mesh: CellMesh, field: MaterialField):
        self.mesh = mesh
        self.field = field
        K = assemble_fiber_stiffness(mesh, field, np.zeros(2))
        # The zero-shift stiffness is real; keep it so and solve complex
        # right-hand sides by splitting into real and imaginary parts.
        self.K0 = sp.csc_matrix(K.real)
        self.M = assemble_mass(mesh)
        self.E = constants_basis(mesh)
        self.B = np.asarray(self.M @ self.E)
        saddle = sp.bmat([[self.K0, sp.csc_matrix(self.B)],
                          [sp.csc_matrix(self.B.T), None]], format="csc")
        self._lu = splu(saddle)

    def _solve_real(self, rhs: np.ndarray) -> np.ndarray:
        aug = np.concatenate([rhs, np.zeros(3)])
        return self._lu.solve(aug)

    def solve_constrained(self, rhs: np.ndarray, tol_solv: float = 1e-8,
                          rhs_scale: float = 0.0) -> CorrectorField:
        """Solve K0 v = rhs subject to zero mean per component.

        Raises SolvabilityError when the right-hand side has a component on
        the constants exceeding ``tol_solv * ||rhs||``; cascade right-hand
        sides are orthogonal to constants by construction, so a violation
        signals a sign or assembly bug upstream.  ``rhs_scale`` supplies an
        external magnitude floor for the relative check, for callers whose
        right-hand side may be a pure rounding residue (e.g. one datum of a
        family that happens to be load-free).
        """
        rhs = np.asarray(rhs, dtype=complex)
        nrm = np.linalg.norm(rhs)
        if nrm == 0.0:
            return CorrectorField(np.zeros(self.mesh.n_dofs, dtype=complex))
        pair = self.E.T @ rhs
        solv = float(np.max(np.abs(pair))) / max(nrm, rhs_scale)
        if solv > tol_solv:
            raise SolvabilityError(
                f"rhs pairs with constants at relative size {solv:.3e} "
                f"(tolerance {tol_solv:.1e})")
        sol = self._solve_real(rhs.real) + 1j * self._solve_real(rhs.imag)
        v, lam = sol[:self.mesh.n_dofs], sol[self.mesh.n_dofs:]
        res = np.linalg.norm(self.K0 @ v + self.B @ lam - rhs) / nrm
        vn = max(np.linalg.norm(v), np.finfo(float).tiny)
        mean = float(np.max(np.abs(self.B.T @ v))) / vn
        return CorrectorField(values=v, solvability_residual=solv,
                              solver_residual=float(res), mean_residual=mean)


@lru_cache(maxsize=4)
def cell_solver(mesh: CellMesh, field: MaterialField) -> CellSolver:
    return CellSolver(mesh, field)


def solve_constrained(K0, rhs: np.ndarray, tol_solv: float = 1e-8,
                      *, mesh: Optional[CellMesh] = None,
                      field: Optional[MaterialField] = None) -> CorrectorField:
    """Functional front end to :meth:`CellSolver.solve_constrained`.

    ``K0`` may be a :class:`CellSolver` (preferred: its factorisation is
    reused) or a sparse stiffness, in which case ``mesh`` must be supplied
    and a one-off bordered factorisation is built.
    """
    if isinstance(K0, CellSolver):
        return K0.solve_constrained(rhs, tol_solv)
    if mesh is None:
        raise ValueError("mesh is required when passing a raw stiffness")
    M = assemble_mass(mesh)
    E = constants_basis(mesh)
    B = np.asarray(M @ E)
    saddle = sp.bmat([[sp.csc_matrix(K0), sp.csc_matrix(B)],
                      [sp.csc_matrix(B.conj().T), None]], format="csc")
    lu = splu(saddle.astype(complex))
    rhs = np.asarray(rhs, dtype=complex)
    nrm = np.linalg.norm(rhs)
    if nrm == 0.0:
        return CorrectorField(np.zeros(mesh.n_dofs, dtype=complex))
    solv = float(np.max(np.abs(E.T @ rhs))) / nrm
    if solv > tol_solv:
        raise SolvabilityError(
            f"rhs pairs with constants at relative size {solv:.3e}")
    sol = lu.solve(np.concatenate([rhs, np.zeros(3)]))
    v, lam = sol[:mesh.n_dofs], sol[mesh.n_dofs:]
    res = np.linalg.norm(K0 @ v + B @ lam - rhs) / nrm
    vn = max(np.linalg.norm(v), np.finfo(float).tiny)
    mean = float(np.max(np.abs(B.conj().T @ v))) / vn
    return CorrectorField(values=v, solvability_residual=solv,
                          solver_residual=float(res), mean_residual=mean)


# ---------------------------------------------------------------------------
# Matrix correctors N_m
# ---------------------------------------------------------------------------

@dataclass(eq=False)
class NCorrector:
    """Corrector N_m, with its bending/membrane split when available.

    ``bending`` carries the part driven by m_3 (x3-linear datum) and
    ``membrane`` the part driven by (m_1, m_2); for planar-symmetric
    materials these are the two parity-pure pieces of N_m.
    """

    total: CorrectorField
    bending: Optional[CorrectorField] = None
    membrane: Optional[CorrectorField] = None


def solve_N(mesh: CellMesh, field: MaterialField, chi: np.ndarray,
            m: np.ndarray, solver: Optional[CellSolver] = None,
            tol_solv: float = 1e-8) -> NCorrector:
    """Solve the cell problem for the corrector N_m at quasimomentum chi."""
    solver = solver or cell_solver(mesh, field)
    m = np.asarray(m, dtype=complex)
    quad = quadrature(mesh)

    def corrector(mm: np.ndarray) -> CorrectorField:
        data = e_data_voigt(chi, mm, quad.points)
        rhs = -assemble_strain_load(mesh, field, data, test="sym")
        return solver.solve_constrained(rhs, tol_solv)

    if field.planar_symmetric:
        bend = corrector(np.array([0.0, 0.0, m[2]]))
        memb = corrector(np.array([m[0], m[1], 0.0]))
        return NCorrector(total=bend + memb, bending=bend, membrane=memb)
    return NCorrector(total=corrector(m))


# ---------------------------------------------------------------------------
# Fibre forces
# ---------------------------------------------------------------------------

@dataclass(eq=False)
class FiberForce:
    """A fibre force density on the cell.

    Either ``fn(points) -> (..., 3)`` evaluates the density in closed form,
    or ``nodal_values`` holds a raw dof vector.  ``parity`` declares the x3
    symmetry class: "first" means in-plane components odd and the vertical
    component even in x3 (driving the bending-dominated subspace), "second"
    the opposite, None unconstrained.  Declared parity is verified
    numerically before a cascade uses the force.
    """

    fn: Optional[Callable[[np.ndarray], np.ndarray]] = None
    nodal_values: Optional[np.ndarray] = None
    parity: Optional[str] = None
    name: str = "custom"

    def at_quads(self, mesh: CellMesh) -> np.ndarray:
        quad = quadrature(mesh)
        if self.fn is not None:
            vals = np.asarray(self.fn(quad.points), dtype=complex)
            return np.broadcast_to(vals, quad.points.shape[:-1] + (3,))
        return values_of_field(mesh, self.nodal_values)

    def weighted_at_quads(self, mesh: CellMesh,
                          chi: np.ndarray) -> np.ndarray:
        """Force values times the conjugate quasiperiodic phase."""
        quad = quadrature(mesh)
        phase = np.exp(-1j * (chi[0] * quad.points[..., 0]
                              + chi[1] * quad.points[..., 1]))
        return self.at_quads(mesh) * phase[..., None]


def verify_parity(force: FiberForce, tol: float = 1e-12) -> None:
    """Check the declared x3 parity on a sample grid; raise on mismatch."""
    if force.parity is None or force.fn is None:
        # Nodal forces are checked against the mesh reflection at wrap time.
        return
    if force.parity not in ("first", "second"):
        raise ValueError(f"unknown parity class {force.parity!r}")
    rng = np.random.default_rng(1234)
    pts = rng.uniform([0, 0, -0.5], [1, 1, 0.5], size=(64, 3))
    flip = pts * np.array([1.0, 1.0, -1.0])
    f, g = np.asarray(force.fn(pts)), np.asarray(force.fn(flip))
    f = np.broadcast_to(f, (64, 3)).astype(complex)
    g = np.broadcast_to(g, (64, 3)).astype(complex)
    s = np.array([-1.0, -1.0, 1.0])
    if force.parity == "second":
        s = -s
    err = np.max(np.abs(g * s - f))
    scale = max(np.max(np.abs(f)), 1.0)
    if err > tol * scale:
        raise ValueError(
            f"force {force.name!r} violates declared parity "
            f"{force.parity!r} (residual {err:.3e})")


def _poly_parity(p1, p2, p3) -> Optional[str]:
    def powers(p):
        return {k for k, c in enumerate(p) if c != 0}

    odd_ip = all(k % 2 == 1 for k in powers(p1) | powers(p2))
    even_v = all(k % 2 == 0 for k in powers(p3))
    if odd_ip and even_v:
        return "first"
    even_ip = all(k % 2 == 0 for k in powers(p1) | powers(p2))
    odd_v = all(k % 2 == 1 for k in powers(p3))
    if even_ip and odd_v:
        return "second"
    return None


def profile_force(p1=(), p2=(), p3=(), planar: str = "const",
                  name: str = "profile") -> FiberForce:
    """Force with polynomial-in-x3 components and an optional y1 factor.

    Each of p1, p2, p3 lists coefficients (c0, c1, ...) of the x3
    polynomial for that component; ``planar`` is "const" or "cos1"
    (multiplies all components by cos(2 pi y1)).  Parity in x3 is inferred
    from the powers present.
    """
    if planar not in ("const", "cos1"):
        raise ValueError(f"unknown planar factor {planar!r}")

    def fn(points):
        x3 = points[..., 2]
        out = np.zeros(points.shape[:-1] + (3,), dtype=complex)
        for j, p in enumerate((p1, p2, p3)):
            for k, c in enumerate(p):
                out[..., j] += c * x3 ** k
        if planar == "cos1":
            out *= np.cos(2 * np.pi * points[..., 0])[..., None]
        return out

    return FiberForce(fn=fn, parity=_poly_parity(p1, p2, p3), name=name)


def _mixed_trig_first(points: np.ndarray) -> np.ndarray:
    """A generic bending-driving force: odd in-plane / even vertical parts
    with distinct trigonometric structure per component, so that every
    amplitude-correction channel of the bending cascade is excited."""
    x3 = points[..., 2]
    c1 = np.cos(2 * np.pi * points[..., 0])
    s2 = np.sin(2 * np.pi * points[..., 1])
    out = np.zeros(points.shape[:-1] + (3,), dtype=complex)
    out[..., 0] = x3 * (1.0 + 2.0 * c1) + 3.0 * x3 ** 3 * s2
    out[..., 1] = 0.5 * x3 * s2 + x3 ** 3 * c1
    out[..., 2] = 1.0 + c1 + 0.7 * x3 ** 2 * s2
    return out


def preset_force(kind: str) -> FiberForce:
    """Named force presets used by the sweeps and tests."""
    if kind == "mixed_trig_first":
        return FiberForce(fn=_mixed_trig_first, parity="first",
                          name="mixed_trig_first")
    presets = {
        "vertical_const": dict(p3=(1.0,), name="vertical_const"),
        "inplane_const": dict(p1=(1.0,), name="inplane_const"),
        "bending_x3": dict(p1=(0.0, 1.0), name="bending_x3"),
        "shear_x3": dict(p3=(0.0, 1.0), name="shear_x3"),
        "vertical_x3sq": dict(p3=(0.0, 0.0, 1.0), name="vertical_x3sq"),
        "cos_bending": dict(p1=(0.0, 1.0), p3=(1.0,), planar="cos1",
                            name="cos_bending"),
        "cos_membrane": dict(p1=(1.0,), p3=(0.0, 1.0), planar="cos1",
                             name="cos_membrane"),
        "mixed_const": dict(p1=(1.0,), p2=(0.5,), p3=(1.0,),
                            name="mixed_const"),
        "mixed_trig_general": dict(p1=(1.0, 0.5), p2=(0.3,), p3=(1.0, 0.7),
                                   planar="cos1",
                                   name="mixed_trig_general"),
    }
    if kind not in presets:
        raise ValueError(f"unknown force preset {kind!r}; "
                         f"choose from "
                         f"{sorted(presets) + ['mixed_trig_first']}")
    return profile_force(**presets[kind])


def nodal_force(mesh: CellMesh, values: np.ndarray,
                parity: Optional[str] = None,
                name: str = "nodal") -> FiberForce:
    """Wrap a raw nodal array as a force (verified against declared parity)."""
    values = np.asarray(values, dtype=complex).reshape(mesh.n_dofs)
    if parity is not None:
        perm, sign = mesh.parity_masks()
        refl = sign * values[perm]
        want = values if parity == "first" else -values
        err = np.max(np.abs(refl - want))
        if err > 1e-12 * max(np.max(np.abs(values)), 1.0):
            raise ValueError(
                f"nodal force violates declared parity {parity!r} "
                f"(residual {err:.3e})")
    return FiberForce(nodal_values=values, parity=parity, name=name)


# ---------------------------------------------------------------------------
# Cascades
# ---------------------------------------------------------------------------

@dataclass(eq=False)
class AnsatzBundle:
    """Amplitudes and corrector fields produced by one cascade run.

    Attributes:
        mode: one of MODES.
        depth: 0 (leading amplitude), 1 (first correction), 2 (full cascade).
        chi: quasimomentum.
        m: leading amplitude in C^3 (in-plane entries zero in "first" mode).
        m1, m2: first and second amplitude corrections (zero-filled when
            not computed at the requested depth).
        fields: corrector fields keyed by their cascade names
            ("u2", "u3_1", ... / "u1", "u2_1", ...).
        moments: force moments used by the amplitude equations.
    """

    mode: str
    depth: int
    chi: np.ndarray
    m: np.ndarray
    m1: np.ndarray
    m2: np.ndarray
    fields: Dict[str, CorrectorField] = dc_field(default_factory=dict)
    moments: object = None

    def max_solvability_residual(self) -> float:
        if not self.fields:
            return 0.0
        return max(f.solvability_residual for f in self.fields.values())


def run_cascade(mesh: CellMesh, field: MaterialField, chi: np.ndarray,
                f: FiberForce, mode: str, depth: int,
                tol_solv: float = 1e-8) -> AnsatzBundle:
    """Execute the corrector cascade for one fibre.

    ``mode`` selects the subspace/scaling: "first" (bending-dominated,
    planar-symmetric materials), "second" (membrane-dominated), or the two
    general-material scalings "general_first" / "general_second".  ``depth``
    0 returns amplitudes only, 1 adds the first corrector family and the
    amplitude correction m1, 2 runs every written step of the recursion.
    """
    from . import homogenised  # deferred: homogenised builds on this module

    chi = np.asarray(chi, dtype=float)
    k = float(np.hypot(chi[0], chi[1]))
    if k == 0.0:
        raise ValueError("cascades are defined for nonzero quasimomentum")
    if depth not in (0, 1, 2):
        raise ValueError("depth must be 0, 1 or 2")
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}")
    if mode in ("first", "second"):
        if not field.planar_symmetric:
            raise ValueError(f"mode {mode!r} requires a planar-symmetric "
                             "material")
        if f.parity != mode:
            raise ValueError(f"mode {mode!r} needs a force of parity "
                             f"{mode!r}, got {f.parity!r}")
        verify_parity(f)

    solver = cell_solver(mesh, field)
    quad = quadrature(mesh)
    pts = quad.points
    x3 = pts[..., 2]
    g = f.weighted_at_quads(mesh, chi)
    moments = homogenised.force_moments(mesh, chi, f)
    symbol = homogenised.compute_a_hom(mesh, field, chi, solver=solver)
    mass = amplitude_mass_matrix(chi)

    def Lsym(S):
        return assemble_strain_load(mesh, field, S, test="sym")

    def LX(S):
        return assemble_strain_load(mesh, field, S, test="x", chi=chi)

    def V(vals):
        return assemble_vector_load(mesh, vals)

    def Sg(u: CorrectorField):
        return strain_voigt_of_field(mesh, u.values)

    def Xf(u: CorrectorField):
        return x_voigt_of_field(mesh, chi, u.values)

    def solve(rhs):
        return solver.solve_constrained(rhs, tol_solv)

    def Ncorr(m):
        return solve_N(mesh, field, chi, m, solver=solver,
                       tol_solv=tol_solv).total

    def Edata(m):
        return e_data_voigt(chi, m, pts)

    def amp_correction_rhs(S_total):
        """-int A S_total : conj(E_d) for the three canonical amplitudes."""
        return np.array([-pair_energy(mesh, field, S_total, Edata(ed))
                         for ed in np.eye(3)])

    fields: Dict[str, CorrectorField] = {}
    m = homogenised.solve_amplitude(symbol, moments, mode)
    m1 = np.zeros(3, dtype=complex)
    m2 = np.zeros(3, dtype=complex)

    if depth >= 1:
        if mode == "first":
            m3 = m[2]
            corr_op = symbol.a_hom[2, 2] + k ** 4 * mass_factor(chi)
            em = Edata([0.0, 0.0, m3])
            u2 = Ncorr([0.0, 0.0, m3])
            fields["u2"] = u2
            tilt = np.zeros(pts.shape[:-1] + (3,), dtype=complex)
            tilt[..., 0] = 1j * chi[0] * x3 * m3
            tilt[..., 1] = 1j * chi[1] * x3 * m3
            gip = g.copy()
            gip[..., 2] = 0.0
            rhs = (1j * (LX(Sg(u2)) - Lsym(Xf(u2)) + LX(em))
                   + k ** 4 * V(tilt) + k ** 3 * V(gip))
            u3_1 = solve(rhs)
            fields["u3_1"] = u3_1
            vert = np.zeros(pts.shape[:-1] + (3,), dtype=complex)
            vert[..., 2] = m3 - g[..., 2]
            rhs = (1j * (LX(Sg(u3_1)) - Lsym(Xf(u3_1)))
                   - LX(Xf(u2)) - k ** 4 * V(vert))
            u4_1 = solve(rhs)
            fields["u4_1"] = u4_1
            T = np.broadcast_to(1j * x_symbol(chi) @ [0.0, 0.0, 1.0],
                                pts.shape[:-1] + (6,))
            s = -pair_energy(mesh, field, Sg(u4_1) + 1j * Xf(u3_1), T)
            m1 = np.array([0.0, 0.0, s / corr_op])
            if depth == 2:
                m3_1 = m1[2]
                u3_2 = Ncorr([0.0, 0.0, m3_1])
                fields["u3_2"] = u3_2
                em1 = Edata([0.0, 0.0, m3_1])
                tilt1 = np.zeros_like(tilt)
                tilt1[..., 0] = 1j * chi[0] * x3 * m3_1
                tilt1[..., 1] = 1j * chi[1] * x3 * m3_1
                rhs = (1j * (LX(Sg(u3_2)) - Lsym(Xf(u3_2)) + LX(em1))
                       + k ** 4 * V(tilt1))
                u4_2 = solve(rhs)
                fields["u4_2"] = u4_2
                u4 = u4_1 + u4_2
                u3 = u3_1 + u3_2
                vert1 = np.zeros_like(vert)
                vert1[..., 2] = m3_1
                rhs = (1j * (LX(Sg(u4)) - Lsym(Xf(u4)))
                       - LX(Xf(u3)) - k ** 4 * V(vert1))
                u5_1 = solve(rhs)
                fields["u5_1"] = u5_1
                s = -pair_energy(mesh, field, Sg(u5_1) + 1j * Xf(u4), T)
                m2 = np.array([0.0, 0.0, s / corr_op])
                m3_2 = m2[2]
                u4_3 = Ncorr([0.0, 0.0, m3_2])
                fields["u4_3"] = u4_3
                em2 = Edata([0.0, 0.0, m3_2])
                tilt2 = np.zeros_like(tilt)
                tilt2[..., 0] = 1j * chi[0] * x3 * m3_2
                tilt2[..., 1] = 1j * chi[1] * x3 * m3_2
                rhs = (1j * (LX(Sg(u4_3)) - Lsym(Xf(u4_3)) + LX(em2))
                       + k ** 4 * V(tilt2))
                u5_2 = solve(rhs)
                fields["u5_2"] = u5_2
                u5 = u5_1 + u5_2
                vert2 = np.zeros_like(vert)
                vert2[..., 2] = m3_2
                rhs = (1j * (LX(Sg(u5)) - Lsym(Xf(u5)))
                       - LX(Xf(u4 + u4_3)) - k ** 4 * V(vert2)
                       - k ** 4 * (solver.M @ u2.values))
                fields["u6"] = solve(rhs)

        elif mode == "second":
            A2 = symbol.a_hom[:2, :2]
            corr_op = A2 + k ** 2 * np.eye(2)
            em = Edata([m[0], m[1], 0.0])
            u1 = Ncorr([m[0], m[1], 0.0])
            fields["u1"] = u1
            const = np.zeros(pts.shape[:-1] + (3,), dtype=complex)
            const[..., 0] = m[0]
            const[..., 1] = m[1]
            rhs = (1j * (LX(Sg(u1)) - Lsym(Xf(u1)) + LX(em))
                   - k ** 2 * V(const) + k ** 2 * V(g))
            u2_1 = solve(rhs)
            fields["u2_1"] = u2_1
            S_tot = Sg(u2_1) + 1j * Xf(u1)
            b = np.empty(2, dtype=complex)
            for beta in range(2):
                T = np.broadcast_to(
                    1j * x_symbol(chi) @ np.eye(3)[beta],
                    pts.shape[:-1] + (6,))
                b[beta] = -pair_energy(mesh, field, S_tot, T)
            sol = np.linalg.solve(corr_op, b)
            m1 = np.array([sol[0], sol[1], 0.0])
            if depth == 2:
                u2_2 = Ncorr([m1[0], m1[1], 0.0])
                fields["u2_2"] = u2_2
                em1 = Edata([m1[0], m1[1], 0.0])
                u2 = u2_1 + u2_2
                const1 = np.zeros_like(const)
                const1[..., 0] = m1[0]
                const1[..., 1] = m1[1]
                rhs = (1j * (LX(Sg(u2)) - Lsym(Xf(u2)) + LX(em1))
                       - LX(Xf(u1)) - k ** 2 * V(const1)
                       - k ** 2 * (solver.M @ u1.values))
                fields["u3"] = solve(rhs)

        elif mode == "general_first":
            corr_op = symbol.a_hom + k ** 4 * mass
            em = Edata(m)
            u2 = Ncorr(m)
            fields["u2"] = u2
            gip = g.copy()
            gip[..., 2] = 0.0
            tiltm = tilted_profile(chi, m, pts)
            tiltm[..., 2] = 0.0
            rhs = (1j * (LX(Sg(u2)) - Lsym(Xf(u2)) + LX(em))
                   + k ** 3 * V(gip) - k ** 4 * V(tiltm))
            u3_1 = solve(rhs)
            fields["u3_1"] = u3_1
            m1 = np.linalg.solve(corr_op,
                                 amp_correction_rhs(Sg(u3_1) + 1j * Xf(u2)))
            if depth == 2:
                u3_2 = Ncorr(m1)
                fields["u3_2"] = u3_2
                em1 = Edata(m1)
                u3 = u3_1 + u3_2
                gv = np.zeros(pts.shape[:-1] + (3,), dtype=complex)
                gv[..., 2] = g[..., 2]
                vec = tilted_profile(chi, m1, pts)
                vec[..., 2] = m[2]
                ip2 = u2.values.reshape(-1, 3).copy()
                ip2[:, 2] = 0.0
                rhs = (1j * (LX(Sg(u3)) - Lsym(Xf(u3)) + LX(em1))
                       - LX(Xf(u2)) + k ** 4 * V(gv)
                       - k ** 4 * (V(vec) + solver.M @ ip2.reshape(-1)))
                u4_1 = solve(rhs)
                fields["u4_1"] = u4_1
                m2 = np.linalg.solve(
                    corr_op, amp_correction_rhs(Sg(u4_1) + 1j * Xf(u3)))
                u4_2 = Ncorr(m2)
                fields["u4_2"] = u4_2
                em2 = Edata(m2)
                u4 = u4_1 + u4_2
                vec2 = tilted_profile(chi, m2, pts)
                vec2[..., 2] = m1[2]
                ip3 = u3.values.reshape(-1, 3).copy()
                ip3[:, 2] = 0.0
                rhs = (1j * (LX(Sg(u4)) - Lsym(Xf(u4)) + LX(em2))
                       - LX(Xf(u3))
                       - k ** 4 * (V(vec2) + solver.M @ ip3.reshape(-1)))
                fields["u5_1"] = solve(rhs)

        else:  # general_second
            corr_op = symbol.a_hom + k ** 2 * mass
            em = Edata(m)
            u1 = Ncorr(m)
            fields["u1"] = u1
            tiltm = tilted_profile(chi, m, pts)
            tiltm[..., 2] = 0.0
            gmean = np.zeros(pts.shape[:-1] + (3,), dtype=complex)
            gmean[..., 2] = moments.zeroth[2]
            rhs = (1j * (LX(Sg(u1)) - Lsym(Xf(u1)) + LX(em))
                   - k ** 2 * V(tiltm) + k ** 2 * V(g) - k ** 2 * V(gmean))
            u2_1 = solve(rhs)
            fields["u2_1"] = u2_1
            m1 = np.linalg.solve(corr_op,
                                 amp_correction_rhs(Sg(u2_1) + 1j * Xf(u1)))
            if depth == 2:
                u2_2 = Ncorr(m1)
                fields["u2_2"] = u2_2
                em1 = Edata(m1)
                u2 = u2_1 + u2_2
                vec = tilted_profile(chi, m1, pts)
                vec[..., 2] = m[2] - moments.zeroth[2]
                rhs = (1j * (LX(Sg(u2)) - Lsym(Xf(u2)) + LX(em1))
                       - LX(Xf(u1))
                       - k ** 2 * (V(vec) + solver.M @ u1.values))
                fields["u3"] = solve(rhs)

    return AnsatzBundle(mode=mode, depth=depth, chi=chi, m=m, m1=m1, m2=m2,
                        fields=fields, moments=moments)
