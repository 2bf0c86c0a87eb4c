"""Structured 2D triangular meshes for the model geometries.

Two geometries are supported:

* ``UNIT_SQUARE_DIRICHLET`` -- the unit square with a homogeneous
  Dirichlet boundary, used by the two-term diffusion benchmark.
* ``T_SINK`` -- a T-shaped heat sink: a 2 x 1 spreader ``(-1,1) x (0,1)``
  with a 0.5 x 4 fin ``(-0.25,0.25) x (1,5)`` on top.  The base edge is
  the heated boundary (label ``GAMMA_R``), the fin walls and fin top are
  the convective boundary (``GAMMA_B``), the rest is insulated
  (``GAMMA_N``).

The generator is deterministic: identical inputs produce bit-identical
meshes, which keeps every downstream artifact reproducible.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError

UNIT_SQUARE_DIRICHLET = "unit_square_dirichlet"
T_SINK = "t_sink"

DIRICHLET = "dirichlet"
GAMMA_N = "gamma_n"
GAMMA_R = "gamma_r"
GAMMA_B = "gamma_b"

_GEOM_TAGS = (UNIT_SQUARE_DIRICHLET, T_SINK)

# T-sink geometry (spreader + fin rectangles)
SPREADER = (-1.0, 1.0, 0.0, 1.0)
FIN = (-0.25, 0.25, 1.0, 5.0)


@dataclass(frozen=True)
class Mesh:
    """Conforming triangulation with labelled boundary edges.

    ``nodes`` is ``(n, 2)`` float64, ``triangles`` ``(t, 3)`` int with
    positive (counter-clockwise) orientation, ``boundary_edges`` ``(e, 2)``
    int with ``a < b`` node ordering, and ``boundary_labels`` one label
    string per boundary edge.
    """

    geometry: str
    h: float
    nodes: np.ndarray
    triangles: np.ndarray
    boundary_edges: np.ndarray
    boundary_labels: tuple

    @property
    def n_nodes(self):
        return self.nodes.shape[0]

    def triangle_areas(self):
        p = self.nodes
        a, b, c = (p[self.triangles[:, k]] for k in range(3))
        return 0.5 * ((b[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1])
                      - (b[:, 1] - a[:, 1]) * (c[:, 0] - a[:, 0]))

    def edges_with_label(self, label):
        idx = [i for i, lab in enumerate(self.boundary_labels) if lab == label]
        return self.boundary_edges[idx]

    def dirichlet_nodes(self):
        return np.unique(self.edges_with_label(DIRICHLET))

    def free_nodes(self):
        mask = np.ones(self.n_nodes, dtype=bool)
        mask[self.dirichlet_nodes()] = False
        return np.nonzero(mask)[0]


def _lines(a, b, h):
    """Uniform subdivision of [a, b] with spacing at most h."""
    n = max(1, math.ceil((b - a) / h - 1e-12))
    return np.linspace(a, b, n + 1)


def _quad_split(node_id, nx, ny):
    """Triangles for a structured nx x ny cell grid given a node-id lookup."""
    tris = []
    for j in range(ny):
        for i in range(nx):
            n00 = node_id(i, j)
            n10 = node_id(i + 1, j)
            n01 = node_id(i, j + 1)
            n11 = node_id(i + 1, j + 1)
            tris.append((n00, n10, n11))
            tris.append((n00, n11, n01))
    return tris


def _boundary_edges(triangles):
    """Edges appearing in exactly one triangle, as sorted (a, b) pairs."""
    count = {}
    for tri in triangles:
        for k in range(3):
            a, b = tri[k], tri[(k + 1) % 3]
            key = (a, b) if a < b else (b, a)
            count[key] = count.get(key, 0) + 1
    edges = sorted(k for k, c in count.items() if c == 1)
    return np.array(edges, dtype=np.int64)


def _label_t_sink(mid):
    x, y = mid
    tol = 1e-9
    if abs(y - SPREADER[2]) < tol:
        return GAMMA_R
    on_fin_wall = abs(abs(x) - FIN[1]) < tol and y > FIN[2] - tol
    on_fin_top = abs(y - FIN[3]) < tol
    if on_fin_wall or on_fin_top:
        return GAMMA_B
    return GAMMA_N


def _build_unit_square(h):
    xs = _lines(0.0, 1.0, h)
    ys = _lines(0.0, 1.0, h)
    nx, ny = len(xs) - 1, len(ys) - 1
    X, Y = np.meshgrid(xs, ys, indexing="xy")
    nodes = np.column_stack([X.ravel(), Y.ravel()])
    tris = _quad_split(lambda i, j: i + j * (nx + 1), nx, ny)
    triangles = np.array(tris, dtype=np.int64)
    edges = _boundary_edges(triangles)
    labels = tuple(DIRICHLET for _ in range(len(edges)))
    return nodes, triangles, edges, labels


def _build_t_sink(h):
    # Spreader x-lines keep x = +-0.25 as grid lines so the fin conforms.
    xl = _lines(SPREADER[0], FIN[0], h)
    xm = _lines(FIN[0], FIN[1], h)
    xr = _lines(FIN[1], SPREADER[1], h)
    xs = np.concatenate([xl, xm[1:], xr[1:]])
    ys = _lines(SPREADER[2], SPREADER[3], h)
    yf = _lines(FIN[2], FIN[3], h)

    nxs, nys = len(xs) - 1, len(ys) - 1
    n_spreader = (nxs + 1) * (nys + 1)

    # Fin reuses the interface nodes of the spreader top row.
    i_off = len(xl) - 1                     # spreader x-index of x = -0.25
    nxf, nyf = len(xm) - 1, len(yf) - 1

    def sid(i, j):
        return i + j * (nxs + 1)

    def fid(i, j):
        if j == 0:
            return sid(i_off + i, nys)
        return n_spreader + i + (j - 1) * (nxf + 1)

    fin_nodes = [(xm[i], yf[j])
                 for j in range(1, nyf + 1) for i in range(nxf + 1)]
    spreader_nodes = np.column_stack([
        np.tile(xs, nys + 1),
        np.repeat(ys, nxs + 1),
    ])
    nodes = np.vstack([spreader_nodes, np.array(fin_nodes)])

    tris = _quad_split(sid, nxs, nys) + _quad_split(fid, nxf, nyf)
    triangles = np.array(tris, dtype=np.int64)
    edges = _boundary_edges(triangles)
    mids = 0.5 * (nodes[edges[:, 0]] + nodes[edges[:, 1]])
    labels = tuple(_label_t_sink(m) for m in mids)
    return nodes, triangles, edges, labels


def build_mesh(geometry, h):
    """Build the structured triangulation of one of the model geometries.

    ``h`` is the target edge length; every rectangle side is subdivided
    uniformly with spacing at most ``h``.
    """
    if not h > 0:
        raise ConfigError(f"target edge length must be positive, got {h}")
    if geometry == UNIT_SQUARE_DIRICHLET:
        nodes, tris, edges, labels = _build_unit_square(h)
    elif geometry == T_SINK:
        nodes, tris, edges, labels = _build_t_sink(h)
    else:
        raise ConfigError(
            f"unknown geometry {geometry!r}; expected one of {_GEOM_TAGS}")
    return Mesh(geometry=geometry, h=float(h), nodes=nodes, triangles=tris,
                boundary_edges=edges, boundary_labels=labels)
