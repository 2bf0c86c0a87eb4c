"""Edgewise Gauss quadrature on labelled boundary parts.

A three-point Gauss-Legendre rule per edge (exact through degree five)
is used both for the boundary mass matrices and for the Nystrom
discretization of the covariance eigenproblem, so the two stay
consistent: a pointwise inequality between boundary fields at the
quadrature nodes translates exactly into the corresponding matrix
inequality.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# Gauss-Legendre nodes/weights on [0, 1]
_GAUSS3_XI = np.array([0.5 * (1.0 - np.sqrt(3.0 / 5.0)),
                       0.5,
                       0.5 * (1.0 + np.sqrt(3.0 / 5.0))])
_GAUSS3_W = np.array([5.0 / 18.0, 8.0 / 18.0, 5.0 / 18.0])


@dataclass(frozen=True)
class BoundaryQuadrature:
    """Quadrature points along one labelled boundary part.

    Points are ordered edge by edge, in the mesh's boundary-edge order.
    ``shape`` holds the two P1 edge-trace values (phi_a, phi_b) at each
    point, with (a, b) the edge's node pair.
    """

    label: str
    edge_nodes: np.ndarray     # (E, 2) node indices
    points: np.ndarray         # (nq, 2) coordinates
    weights: np.ndarray        # (nq,) includes edge length factor
    edge_of_point: np.ndarray  # (nq,) edge index per point
    shape: np.ndarray          # (nq, 2) P1 trace values

    @property
    def n_points(self):
        return self.points.shape[0]

    def total_measure(self):
        return float(np.sum(self.weights))


def boundary_quadrature(mesh, label, points_per_edge=3):
    """Build the Gauss rule along all mesh edges carrying ``label``."""
    if points_per_edge != 3:
        raise ValueError("only the 3-point Gauss rule is supported")
    edges = mesh.edges_with_label(label)
    if len(edges) == 0:
        raise ValueError(f"mesh has no boundary edges labelled {label!r}")
    a = mesh.nodes[edges[:, 0]]
    b = mesh.nodes[edges[:, 1]]
    lengths = np.linalg.norm(b - a, axis=1)

    xi = _GAUSS3_XI
    pts = a[:, None, :] * (1.0 - xi)[None, :, None] + b[:, None, :] * xi[None, :, None]
    w = lengths[:, None] * _GAUSS3_W[None, :]
    shape = np.stack([np.tile(1.0 - xi, (len(edges), 1)),
                      np.tile(xi, (len(edges), 1))], axis=-1)
    edge_idx = np.repeat(np.arange(len(edges)), len(xi))
    return BoundaryQuadrature(
        label=label,
        edge_nodes=edges,
        points=pts.reshape(-1, 2),
        weights=w.reshape(-1),
        edge_of_point=edge_idx,
        shape=shape.reshape(-1, 2),
    )
