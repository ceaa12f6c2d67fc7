"""
Structured hexahedral mesh on the unit periodicity cell.

The cell is [0,1) x [0,1) x (-1/2, 1/2).  The grid is uniform, with n1 x n2
elements in-plane and n3 through the thickness; n3 must be even so that the
midplane x3 = 0 is a mesh plane and the signed reflection acts exactly on
nodes.  In-plane degrees of freedom are identified periodically, so there
are n1 * n2 * (n3 + 1) nodes and three displacement components per node.

Node ordering is lexicographic with the transverse index fastest:
node(i1, i2, i3) = (i1 * n2 + i2) * (n3 + 1) + i3.  Degrees of freedom are
interleaved per node: dof(node, c) = 3 * node + c.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True, eq=False)
class CellMesh:
    n1: int
    n2: int
    n3: int
    # (n_elem, 8) periodic node connectivity, trilinear local ordering
    conn: np.ndarray = field(repr=False)
    # (n_elem, 3) element grid indices (i1, i2, i3)
    elem_index: np.ndarray = field(repr=False)

    @property
    def n_nodes(self) -> int:
        return self.n1 * self.n2 * (self.n3 + 1)

    @property
    def n_dofs(self) -> int:
        return 3 * self.n_nodes

    @property
    def n_elems(self) -> int:
        return self.n1 * self.n2 * self.n3

    @property
    def h(self) -> tuple[float, float, float]:
        return 1.0 / self.n1, 1.0 / self.n2, 1.0 / self.n3

    def node_id(self, i1, i2, i3):
        """Periodic node index; i1, i2 wrap, i3 must be in [0, n3]."""
        i1 = np.mod(i1, self.n1)
        i2 = np.mod(i2, self.n2)
        return (i1 * self.n2 + i2) * (self.n3 + 1) + i3

    def node_coords(self) -> np.ndarray:
        """(n_nodes, 3) array of node coordinates."""
        i1, i2, i3 = np.unravel_index(
            np.arange(self.n_nodes), (self.n1, self.n2, self.n3 + 1))
        x = np.empty((self.n_nodes, 3))
        x[:, 0] = i1 / self.n1
        x[:, 1] = i2 / self.n2
        x[:, 2] = i3 / self.n3 - 0.5
        return x

    def reflection_permutation(self) -> np.ndarray:
        """Node permutation of the reflection x3 -> -x3."""
        i1, i2, i3 = np.unravel_index(
            np.arange(self.n_nodes), (self.n1, self.n2, self.n3 + 1))
        return np.asarray(self.node_id(i1, i2, self.n3 - i3))

    def parity_masks(self) -> tuple[np.ndarray, np.ndarray]:
        """Signs of the signed transverse reflection R per dof component.

        R acts as (Ru)_a(y, x3) = -u_a(y, -x3) for the in-plane components
        a = 1, 2 and (Ru)_3(y, x3) = u_3(y, -x3).  Returns the node
        permutation expanded to dofs and the per-dof sign vector, so that
        (R u)[dof] = sign[dof] * u[perm[dof]].
        """
        node_perm = self.reflection_permutation()
        perm = np.empty(self.n_dofs, dtype=int)
        sign = np.empty(self.n_dofs)
        for c in range(3):
            perm[c::3] = 3 * node_perm + c
            sign[c::3] = -1.0 if c < 2 else 1.0
        return perm, sign


def build_mesh(n1: int, n2: int, n3: int) -> CellMesh:
    """Construct the periodic structured mesh.  n3 must be even."""
    if min(n1, n2, n3) < 1:
        raise ValueError("all mesh counts must be positive")
    if n3 % 2 != 0:
        raise ValueError("n3 must be even so the midplane is a mesh plane")
    e1, e2, e3 = np.meshgrid(np.arange(n1), np.arange(n2), np.arange(n3),
                             indexing="ij")
    e1 = e1.ravel()
    e2 = e2.ravel()
    e3 = e3.ravel()
    n_elem = n1 * n2 * n3
    conn = np.empty((n_elem, 8), dtype=int)
    # Local trilinear node ordering: corner offsets in (d1, d2, d3)
    offsets = [(0, 0, 0), (1, 0, 0), (1, 1, 0), (0, 1, 0),
               (0, 0, 1), (1, 0, 1), (1, 1, 1), (0, 1, 1)]
    dummy = CellMesh(n1=n1, n2=n2, n3=n3,
                     conn=np.empty((0, 8), dtype=int),
                     elem_index=np.empty((0, 3), dtype=int))
    for k, (d1, d2, d3) in enumerate(offsets):
        conn[:, k] = dummy.node_id(e1 + d1, e2 + d2, e3 + d3)
    elem_index = np.stack([e1, e2, e3], axis=1)
    return CellMesh(n1=n1, n2=n2, n3=n3, conn=conn, elem_index=elem_index)


def element_dofs(mesh: CellMesh) -> np.ndarray:
    """(n_elem, 24) dof indices per element, node-major, component-minor."""
    dofs = np.empty((mesh.n_elems, 24), dtype=int)
    for k in range(8):
        for c in range(3):
            dofs[:, 3 * k + c] = 3 * mesh.conn[:, k] + c
    return dofs
