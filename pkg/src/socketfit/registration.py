"""Template fitting by iterative non-rigid closest-point registration.

Each iteration pulls every template vertex toward its closest point on the
target surface and, symmetrically, pushes it toward the target vertices
that pick it as their nearest template vertex. The raw displacement field
is smoothed by solving ``(I + k L) u = f`` with the uniform graph
Laplacian ``L``; the stiffness ``k`` decays geometrically so the fit goes
from coarse to fine.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu
from scipy.spatial import cKDTree

from .errors import EmptyMesh, RegistrationDiverged
from .geometry import MeshIndex, surface_to_surface
from .mesh import TriMesh
from .template import CorrespondedMesh


@dataclass(frozen=True)
class RegistrationConfig:
    iterations: int = 30
    stiffness_start: float = 10.0
    stiffness_end: float = 0.1
    tolerance: float = 0.5
    symmetric: bool = True

    def stiffness_schedule(self) -> np.ndarray:
        if self.iterations == 1:
            return np.array([self.stiffness_end])
        return np.geomspace(self.stiffness_start, self.stiffness_end, self.iterations)


def graph_laplacian(mesh: TriMesh) -> sp.csc_matrix:
    e = mesh.edges()
    n = mesh.n_vertices
    ones = np.ones(len(e))
    adj = sp.coo_matrix((np.r_[ones, ones], (np.r_[e[:, 0], e[:, 1]], np.r_[e[:, 1], e[:, 0]])),
                        shape=(n, n)).tocsr()
    deg = np.asarray(adj.sum(axis=1)).ravel()
    return (sp.diags(deg) - adj).tocsc()


def median_residual(fitted: TriMesh, target: TriMesh, index: MeshIndex | None = None) -> float:
    return float(np.median(surface_to_surface(fitted, target, index=index).values))


def fit_template(template: CorrespondedMesh, target: TriMesh,
                 cfg: RegistrationConfig | None = None) -> CorrespondedMesh:
    """Deform ``template`` onto ``target`` keeping the template topology.

    Both meshes are expected in the same (reoriented) frame, which serves
    as the rigid initialization. Raises ``RegistrationDiverged`` when the
    median surface distance to the target stays above ``cfg.tolerance``.
    """
    cfg = cfg if cfg is not None else RegistrationConfig()
    if target.n_faces == 0:
        raise EmptyMesh("target mesh has no faces")
    index = MeshIndex(target)
    target_pts = target.vertices[np.unique(target.faces)]
    lap = graph_laplacian(template)
    eye = sp.identity(template.n_vertices, format="csc")

    x = template.vertices.copy()
    n = len(x)
    for stiffness in cfg.stiffness_schedule():
        closest, _, _ = index.query(x)
        force = closest - x
        if cfg.symmetric:
            _, nearest = cKDTree(x).query(target_pts)
            push = np.zeros_like(x)
            np.add.at(push, nearest, target_pts - x[nearest])
            count = np.bincount(nearest, minlength=n).astype(float)
            has = count > 0
            force[has] = 0.5 * force[has] + 0.5 * push[has] / count[has, None]
        if not force.any():
            break
        solve = splu(eye + stiffness * lap)
        x = x + solve.solve(force)

    fitted = CorrespondedMesh(x)
    residual = median_residual(fitted, target, index)
    if not np.isfinite(residual) or residual > cfg.tolerance:
        raise RegistrationDiverged(
            f"median residual {residual:.3f} mm exceeds tolerance {cfg.tolerance} mm",
            residual=residual, mesh=fitted,
        )
    return fitted
