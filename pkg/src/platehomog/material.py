"""
Elasticity tensors and periodic material fields.

All tensors are stored as 6x6 matrices in engineering Voigt notation with
component order (11, 22, 33, 23, 13, 12).  Strain vectors carry engineering
shear factors, i.e. e = (e11, e22, e33, 2*e23, 2*e13, 2*e12), so that the
quadratic form s^T C e equals the full tensor contraction A S : E.

A material field on the periodic cell is a raster of phase indices in the
in-plane coordinates together with one elasticity tensor per phase.  Phase
boundaries are thus aligned with pixel edges and the field is constant in
the transverse variable.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

# Map from Voigt index (0..5) to the tensor index pair, order (11,22,33,23,13,12).
VOIGT_PAIRS = [(0, 0), (1, 1), (2, 2), (1, 2), (0, 2), (0, 1)]

# Engineering-strain scaling: doubled shear entries.
_SHEAR = np.array([1.0, 1.0, 1.0, 2.0, 2.0, 2.0])


def _form_eigenvalues(C: np.ndarray) -> np.ndarray:
    """Eigenvalues of the quadratic form E -> A E:E on unit-Frobenius strains.

    The Voigt matrix acts on engineering strains, so the form relative to
    the Frobenius norm of the strain tensor is the diagonal rescaling of C
    by the shear factors.
    """
    D = np.diag(np.sqrt(_SHEAR))
    Q = D @ C @ D
    return np.linalg.eigvalsh(0.5 * (Q + Q.T))


@dataclass(frozen=True, eq=False)
class ElasticityTensor:
    """A symmetric elasticity tensor in engineering Voigt form.

    Attributes:
        C: (6, 6) stiffness matrix.
        nu_low, nu_high: extreme eigenvalues of the quadratic form
            E -> A E:E over unit symmetric strains, so that
            nu_low |E|^2 <= A E:E <= nu_high |E|^2.
    """

    C: np.ndarray
    nu_low: float
    nu_high: float

    @property
    def nu_bounds(self) -> tuple[float, float]:
        return self.nu_low, self.nu_high

    @property
    def nu(self) -> float:
        """Symmetric ellipticity constant: nu E:E <= A E:E <= nu^-1 E:E."""
        return min(self.nu_low, 1.0 / self.nu_high)

    def contract(self, S: np.ndarray, E: np.ndarray) -> complex:
        """Full contraction A S : conj(E) for symmetric 3x3 matrices."""
        s = tensor_to_voigt_strain(S)
        e = tensor_to_voigt_strain(E)
        return s @ self.C @ np.conj(e)

    def apply(self, E: np.ndarray) -> np.ndarray:
        """Return the stress tensor A E as a symmetric 3x3 matrix."""
        t = self.C @ tensor_to_voigt_strain(E)
        out = np.empty((3, 3), dtype=t.dtype)
        for k, (i, j) in enumerate(VOIGT_PAIRS):
            out[i, j] = t[k]
            out[j, i] = t[k]
        return out


def tensor_to_voigt_strain(E: np.ndarray) -> np.ndarray:
    """Symmetric 3x3 matrix -> engineering strain vector (doubled shears)."""
    return np.array([E[0, 0], E[1, 1], E[2, 2],
                     E[1, 2] + E[2, 1], E[0, 2] + E[2, 0], E[0, 1] + E[1, 0]])


def voigt_strain_to_tensor(e: np.ndarray) -> np.ndarray:
    """Inverse of :func:`tensor_to_voigt_strain`."""
    return np.array([[e[0], e[5] / 2, e[4] / 2],
                     [e[5] / 2, e[1], e[3] / 2],
                     [e[4] / 2, e[3] / 2, e[2]]])


def _finish(C: np.ndarray) -> ElasticityTensor:
    w = _form_eigenvalues(C)
    return ElasticityTensor(C=C, nu_low=float(w[0]), nu_high=float(w[-1]))


def make_isotropic(lam: float, mu: float) -> ElasticityTensor:
    """Isotropic tensor A_ijkl = lam d_ij d_kl + mu (d_ik d_jl + d_il d_jk)."""
    if mu <= 0 or 3 * lam + 2 * mu <= 0:
        raise ValueError(
            f"isotropic moduli lambda={lam}, mu={mu} are not positive definite")
    C = np.zeros((6, 6))
    C[:3, :3] = lam
    C[:3, :3] += 2 * mu * np.eye(3)
    C[3:, 3:] = mu * np.eye(3)
    return _finish(C)


def from_voigt_upper(entries: np.ndarray | list[float]) -> ElasticityTensor:
    """Build a tensor from the 21 upper-triangular Voigt entries.

    Entries are read row-major: C11, C12, ..., C16, C22, ..., C66.
    """
    entries = np.asarray(entries, dtype=float)
    if entries.shape != (21,):
        raise ValueError(f"expected 21 entries, got shape {entries.shape}")
    C = np.zeros((6, 6))
    C[np.triu_indices(6)] = entries
    C = C + C.T - np.diag(np.diag(C))
    return _finish(C)


@dataclass(frozen=True)
class SymmetryReport:
    major_symmetry_residual: float
    nu_low: float
    nu_high: float
    planar_symmetric: bool


def validate_tensor(t: ElasticityTensor, tol_factor: float = 1e-12) -> SymmetryReport:
    """Report symmetry, positivity bounds, and planar material symmetry.

    Planar symmetry means invariance under the reflection x3 -> -x3: every
    Voigt entry coupling a {11, 22, 33, 12} slot with a {23, 13} slot must
    vanish (relative to ``tol_factor * ||A||``).
    """
    C = t.C
    tol = tol_factor * np.linalg.norm(C)
    sym_res = float(np.linalg.norm(C - C.T))
    # Couplings that change sign under x3 -> -x3: rows/cols {0,1,2,5} vs {3,4}.
    block = C[np.ix_([0, 1, 2, 5], [3, 4])]
    planar = bool(np.abs(block).max() <= tol) and sym_res <= tol
    return SymmetryReport(major_symmetry_residual=sym_res,
                          nu_low=t.nu_low, nu_high=t.nu_high,
                          planar_symmetric=planar)


@dataclass(frozen=True, eq=False)
class MaterialField:
    """Piecewise constant periodic material: phase raster + per-phase tensors.

    Attributes:
        raster: (p1, p2) integer array of phase indices over [0,1)^2,
            pixel (i, j) covering [i/p1, (i+1)/p1) x [j/p2, (j+1)/p2).
        phases: tuple of ElasticityTensor, indexed by raster values.
        planar_symmetric: True iff every phase is planar-symmetric.
    """

    raster: np.ndarray
    phases: tuple[ElasticityTensor, ...]
    planar_symmetric: bool

    @property
    def nu(self) -> float:
        return min(p.nu for p in self.phases)

    def phase_at(self, y1: np.ndarray, y2: np.ndarray) -> np.ndarray:
        """Phase index at in-plane points (periodically wrapped)."""
        p1, p2 = self.raster.shape
        i = np.floor(np.mod(y1, 1.0) * p1).astype(int) % p1
        j = np.floor(np.mod(y2, 1.0) * p2).astype(int) % p2
        return self.raster[i, j]


def build_field(raster: np.ndarray | list[list[int]],
                phases: list[ElasticityTensor]) -> MaterialField:
    """Validate phases and assemble a material field."""
    raster = np.asarray(raster, dtype=int)
    if raster.ndim != 2 or raster.size == 0:
        raise ValueError("raster must be a non-empty 2-d integer array")
    if raster.min() < 0 or raster.max() >= len(phases):
        raise ValueError("raster refers to undefined phase indices")
    planar = True
    for k, p in enumerate(phases):
        report = validate_tensor(p)
        if report.nu_low <= 0:
            raise ValueError(f"phase {k} is not positive definite")
        if report.major_symmetry_residual > 1e-12 * np.linalg.norm(p.C):
            raise ValueError(f"phase {k} stiffness matrix is not symmetric")
        planar = planar and report.planar_symmetric
    return MaterialField(raster=raster, phases=tuple(phases),
                         planar_symmetric=planar)


def sample_field(field: MaterialField, y1: float, y2: float) -> ElasticityTensor:
    """Elasticity tensor at an in-plane point (periodic wrap)."""
    idx = field.phase_at(np.asarray(y1, dtype=float), np.asarray(y2, dtype=float))
    return field.phases[int(idx)]


def homogeneous_field(tensor: ElasticityTensor) -> MaterialField:
    """Single-phase field covering the whole cell."""
    return build_field(np.zeros((1, 1), dtype=int), [tensor])


def load_config(path: str) -> dict:
    """Parse a TOML config file into a plain dict."""
    with open(path, "rb") as fh:
        return tomllib.load(fh)


def field_from_config(doc: dict) -> MaterialField:
    """Build a material field from a parsed config.

    Schema::

        [material]
        raster = [[0, 1], [1, 0]]

        [[material.phases]]
        lambda = 1.0
        mu = 1.0

        [[material.phases]]
        voigt_upper = [ ... 21 entries ... ]
    """
    mat = doc.get("material", doc)
    if "phases" not in mat or "raster" not in mat:
        raise ValueError("config must define material.raster and material.phases")
    phases = []
    for spec in mat["phases"]:
        if "voigt_upper" in spec:
            phases.append(from_voigt_upper(spec["voigt_upper"]))
        elif "lambda" in spec and "mu" in spec:
            phases.append(make_isotropic(float(spec["lambda"]), float(spec["mu"])))
        else:
            raise ValueError("each phase needs either lambda/mu or voigt_upper")
    return build_field(mat["raster"], phases)
