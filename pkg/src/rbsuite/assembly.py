"""Affine-parametrized P1 finite-element assembly and truth solves.

Two models are provided:

* ``THERMAL_BLOCK`` -- unit-square Dirichlet diffusion with a unit
  background conductivity and a parametrized inclusion on the upper
  half: the operator splits as B(mu) = B_0 + mu * B_1 with B_0
  positive-definite and B_1 positive-semidefinite.  mu = (mu_0,).
* ``T_SINK_ROBIN`` -- the heat-sink problem: diffusion with piecewise
  conductivity (1 on the fin, sigma0 on the spreader, folded into one
  matrix) plus a Robin boundary term on the fin walls whose coefficient
  field is a truncated spectral expansion b(x) = bbar * (G(x) +
  sum_k Phi_k(x) y_k).  The affine decomposition has Q = 2 + K terms
  with theta = (1, bbar, bbar*y_1, ..., bbar*y_K) and parameter vector
  mu = (bbar, y_1, ..., y_K).

The inner product matrix ``x_gram`` is the operator assembled at the
reference parameter ``mu_bar``, which makes the ratio-based coercivity
and continuity constants below exact and cheap.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import ConfigError, NonAdmissibleParameterError, NumericalError
from .meshing import GAMMA_B, GAMMA_R, Mesh, T_SINK, UNIT_SQUARE_DIRICHLET
from .quadrature import BoundaryQuadrature, boundary_quadrature

THERMAL_BLOCK = "thermal_block"
T_SINK_ROBIN = "t_sink_robin"

SOLVER_TOL = 1e-10


@dataclass(frozen=True)
class TruthSolution:
    """Full-order solution at one parameter value."""

    mu: np.ndarray
    coefficients: np.ndarray   # free-DOF vector
    output: float


def theta_batch(kind, mus):
    """Affine coefficients theta_q(mu) for a (T, mu_dim) parameter batch."""
    mus = np.atleast_2d(np.asarray(mus, dtype=float))
    T = mus.shape[0]
    if kind == THERMAL_BLOCK:
        out = np.empty((T, 2))
        out[:, 0] = 1.0
        out[:, 1] = mus[:, 0]
        return out
    if kind == T_SINK_ROBIN:
        out = np.empty((T, 1 + mus.shape[1]))
        out[:, 0] = 1.0
        out[:, 1] = mus[:, 0]
        out[:, 2:] = mus[:, 0, None] * mus[:, 1:]
        return out
    raise ConfigError(f"unknown model kind {kind!r}")


def field_values(mus, boundary_g, boundary_modes):
    """Robin coefficient b(x; mu) at the shared boundary quadrature nodes."""
    mus = np.atleast_2d(np.asarray(mus, dtype=float))
    fluct = mus[:, 1:] @ boundary_modes
    return mus[:, 0, None] * (boundary_g[None, :] + fluct)


def admissible_batch(kind, mus, boundary_g=None, boundary_modes=None):
    mus = np.atleast_2d(np.asarray(mus, dtype=float))
    if kind == THERMAL_BLOCK:
        return mus[:, 0] > 0.0
    ok = mus[:, 0] > 0.0
    ok &= field_values(mus, boundary_g, boundary_modes).min(axis=1) > 0.0
    return ok


def stability_ratios(kind, mus, mu_bar, theta_ref,
                     boundary_g=None, boundary_modes=None):
    """Lower/upper spectral ratios of B(mu) against B(mu_bar).

    For the thermal block these are min/max over theta_q(mu)/theta_q(mu_bar)
    (valid since every term is positive-semidefinite with positive
    coefficients).  For the Robin model the sign-indefinite boundary
    group is controlled by the pointwise ratio of the coefficient
    fields at the shared quadrature nodes, the diffusion block having
    ratio one; admissible draws keep the lower ratio at or above 1/2.
    """
    mus = np.atleast_2d(np.asarray(mus, dtype=float))
    if not np.all(admissible_batch(kind, mus, boundary_g, boundary_modes)):
        raise NonAdmissibleParameterError("parameter outside the admissible set")
    if kind == THERMAL_BLOCK:
        ratios = theta_batch(kind, mus) / np.asarray(theta_ref)[None, :]
        return ratios.min(axis=1), ratios.max(axis=1)
    ref = mu_bar[0] * boundary_g
    ratios = field_values(mus, boundary_g, boundary_modes) / ref[None, :]
    alpha = np.minimum(1.0, ratios.min(axis=1))
    gamma = np.maximum(1.0, ratios.max(axis=1))
    return alpha, gamma


@dataclass(frozen=True)
class AffineForm:
    """Q-term affine decomposition of the parametrized operator.

    All matrices are restricted to the free (non-Dirichlet) DOFs.  For
    the Robin model the boundary-field data (``boundary_g``,
    ``boundary_modes``, ``boundary_weights``) shares the quadrature
    nodes used to assemble the boundary mass terms, so pointwise field
    ratios at those nodes give exact spectral bounds on the assembled
    matrices.
    """

    kind: str
    stiffness_terms: list
    load: np.ndarray
    x_gram: sp.csr_matrix
    mu_bar: np.ndarray
    model: dict
    free_nodes: np.ndarray
    mesh_info: dict
    boundary_g: np.ndarray | None = None
    boundary_modes: np.ndarray | None = None
    boundary_weights: np.ndarray | None = None
    boundary_points: np.ndarray | None = None

    @property
    def q_count(self):
        return len(self.stiffness_terms)

    @property
    def n_dofs(self):
        return self.load.shape[0]

    @property
    def mu_dim(self):
        return self.mu_bar.shape[0]

    # -- parameter handling -------------------------------------------------

    def theta(self, mu):
        return theta_batch(self.kind, np.asarray(mu, dtype=float)[None, :])[0]

    def theta_batch(self, mus):
        return theta_batch(self.kind, mus)

    @property
    def theta_ref(self):
        return self.theta(self.mu_bar)

    def field_values(self, mus):
        if self.kind != T_SINK_ROBIN:
            raise ValueError("field_values only defined for the Robin model")
        return field_values(mus, self.boundary_g, self.boundary_modes)

    def admissible(self, mu):
        return bool(self.admissible_batch(np.asarray(mu, dtype=float)[None, :])[0])

    def admissible_batch(self, mus):
        return admissible_batch(self.kind, mus, self.boundary_g,
                                self.boundary_modes)

    def stability_ratios(self, mus):
        """Lower/upper spectral ratios of B(mu) against ``x_gram``."""
        return stability_ratios(self.kind, mus, self.mu_bar, self.theta_ref,
                                self.boundary_g, self.boundary_modes)

    def assemble(self, mu):
        """B(mu) = sum_q theta_q(mu) B_q as a CSR matrix."""
        th = self.theta(mu)
        out = th[0] * self.stiffness_terms[0]
        for t, B in zip(th[1:], self.stiffness_terms[1:]):
            if t != 0.0:
                out = out + t * B
        return out.tocsr()

    def fingerprint(self):
        """Stable content hash used as artifact provenance reference."""
        h = hashlib.sha256()
        h.update(repr(sorted(self.model.items())).encode())
        h.update(self.mu_bar.tobytes())
        for B in self.stiffness_terms:
            Bc = B.tocoo()
            h.update(Bc.row.astype(np.int64).tobytes())
            h.update(Bc.col.astype(np.int64).tobytes())
            h.update(Bc.data.tobytes())
        h.update(self.load.tobytes())
        return h.hexdigest()


# -- element assembly --------------------------------------------------------


def _stiffness(mesh: Mesh, tri_mask):
    """P1 stiffness matrix over the selected triangles (unit coefficient)."""
    tris = mesh.triangles[tri_mask]
    p = mesh.nodes
    x = p[tris, 0]
    y = p[tris, 1]
    # b_i = y_j - y_k, c_i = x_k - x_j for (i, j, k) cyclic
    b = np.stack([y[:, 1] - y[:, 2], y[:, 2] - y[:, 0], y[:, 0] - y[:, 1]], axis=1)
    c = np.stack([x[:, 2] - x[:, 1], x[:, 0] - x[:, 2], x[:, 1] - x[:, 0]], axis=1)
    area2 = x[:, 0] * b[:, 0] + x[:, 1] * b[:, 1] + x[:, 2] * b[:, 2]
    coef = 1.0 / (2.0 * area2)
    blocks = (b[:, :, None] * b[:, None, :] + c[:, :, None] * c[:, None, :])
    blocks = blocks * coef[:, None, None]
    rows = np.repeat(tris, 3, axis=1).reshape(-1)
    cols = np.tile(tris, (1, 3)).reshape(-1)
    n = mesh.n_nodes
    return sp.coo_matrix((blocks.reshape(-1), (rows, cols)), shape=(n, n)).tocsr()


def _boundary_mass(mesh: Mesh, bq: BoundaryQuadrature, point_values):
    """Boundary mass matrix with a pointwise coefficient on the rule nodes."""
    edges = bq.edge_nodes[bq.edge_of_point]
    w = bq.weights * point_values
    phi = bq.shape
    data, rows, cols = [], [], []
    for i in range(2):
        for j in range(2):
            data.append(w * phi[:, i] * phi[:, j])
            rows.append(edges[:, i])
            cols.append(edges[:, j])
    n = mesh.n_nodes
    return sp.coo_matrix(
        (np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))),
        shape=(n, n)).tocsr()


def _volume_load(mesh: Mesh):
    """Load vector for a unit volume source, exact for P1."""
    areas = mesh.triangle_areas()
    load = np.zeros(mesh.n_nodes)
    np.add.at(load, mesh.triangles.reshape(-1), np.repeat(areas / 3.0, 3))
    return load


def _edge_load(mesh: Mesh, label):
    """Load vector for a unit flux on the labelled boundary part."""
    edges = mesh.edges_with_label(label)
    a, b = mesh.nodes[edges[:, 0]], mesh.nodes[edges[:, 1]]
    lengths = np.linalg.norm(b - a, axis=1)
    load = np.zeros(mesh.n_nodes)
    np.add.at(load, edges.reshape(-1), np.repeat(lengths / 2.0, 2))
    return load


def _restrict(mat, free):
    return mat[np.ix_(free, free)] if isinstance(mat, np.ndarray) else mat[free][:, free]


def assemble_affine(mesh: Mesh, model) -> AffineForm:
    """Assemble the affine decomposition of a model on the given mesh.

    ``model`` is a dict with a ``"kind"`` key.  For ``THERMAL_BLOCK``
    the optional keys are ``mu_range`` (default (0.1, 10)) and
    ``mu_bar``.  For ``T_SINK_ROBIN`` the required key is ``kl`` (a
    KLBasis built on this mesh's GAMMA_B quadrature); optional keys are
    ``sigma0`` (default 2.0), ``b_bar_range`` (default (0.5, 0.5)) and
    ``mu_bar``.
    """
    kind = model["kind"]
    if kind == THERMAL_BLOCK:
        return _assemble_thermal_block(mesh, model)
    if kind == T_SINK_ROBIN:
        return _assemble_t_sink_robin(mesh, model)
    raise ConfigError(f"unknown model kind {kind!r}")


def _assemble_thermal_block(mesh, model):
    if mesh.geometry != UNIT_SQUARE_DIRICHLET:
        raise ConfigError("THERMAL_BLOCK expects the unit-square geometry")
    mu_range = tuple(model.get("mu_range", (0.1, 10.0)))
    mu_bar = model.get("mu_bar")
    if mu_bar is None:
        mu_bar = [0.5 * (mu_range[0] + mu_range[1])]
    mu_bar = np.asarray(mu_bar, dtype=float)

    centroids = mesh.nodes[mesh.triangles].mean(axis=1)
    inclusion = centroids[:, 1] > 0.5
    B0 = _stiffness(mesh, np.ones(len(mesh.triangles), dtype=bool))
    B1 = _stiffness(mesh, inclusion)
    load = _volume_load(mesh)

    free = mesh.free_nodes()
    if free.size == 0:
        raise ConfigError("mesh has no interior degrees of freedom")
    terms = [_restrict(B0, free), _restrict(B1, free)]
    load = load[free]
    mdl = {"kind": THERMAL_BLOCK, "mu_range": list(mu_range)}
    x_gram = (terms[0] + mu_bar[0] * terms[1]).tocsr()
    return AffineForm(
        kind=THERMAL_BLOCK, stiffness_terms=terms, load=load, x_gram=x_gram,
        mu_bar=mu_bar, model=mdl, free_nodes=free,
        mesh_info={"geometry": mesh.geometry, "h": mesh.h,
                   "n_nodes": mesh.n_nodes})


def _assemble_t_sink_robin(mesh, model):
    if mesh.geometry != T_SINK:
        raise ConfigError("T_SINK_ROBIN expects the T-sink geometry")
    kl = model["kl"]
    sigma0 = float(model.get("sigma0", 2.0))
    b_bar_range = tuple(model.get("b_bar_range", (0.5, 0.5)))
    bq = kl.quadrature
    if bq.label != GAMMA_B or bq.n_points == 0:
        raise ConfigError("KL basis must be built on the GAMMA_B quadrature")
    if not np.array_equal(bq.edge_nodes, mesh.edges_with_label(GAMMA_B)):
        raise ConfigError("KL basis quadrature does not match this mesh")

    n_modes = kl.modes.shape[0]
    mu_bar = model.get("mu_bar")
    if mu_bar is None:
        mu_bar = np.concatenate([[0.5 * (b_bar_range[0] + b_bar_range[1])],
                                 np.zeros(n_modes)])
    mu_bar = np.asarray(mu_bar, dtype=float)

    centroids = mesh.nodes[mesh.triangles].mean(axis=1)
    fin = centroids[:, 1] > 1.0
    diffusion = (_stiffness(mesh, fin) + sigma0 * _stiffness(mesh, ~fin)).tocsr()
    mass_mean = _boundary_mass(mesh, bq, kl.g_values)
    mass_modes = [_boundary_mass(mesh, bq, kl.modes[k]) for k in range(n_modes)]
    load = _edge_load(mesh, GAMMA_R)

    free = mesh.free_nodes()
    terms = [_restrict(diffusion, free), _restrict(mass_mean, free)]
    terms += [_restrict(M, free) for M in mass_modes]
    load = load[free]
    x_gram = (terms[0] + mu_bar[0] * terms[1]).tocsr()
    mdl = {"kind": T_SINK_ROBIN, "sigma0": sigma0,
           "b_bar_range": list(b_bar_range), "n_modes": n_modes}
    return AffineForm(
        kind=T_SINK_ROBIN, stiffness_terms=terms, load=load, x_gram=x_gram,
        mu_bar=mu_bar, model=mdl, free_nodes=free,
        mesh_info={"geometry": mesh.geometry, "h": mesh.h,
                   "n_nodes": mesh.n_nodes},
        boundary_g=kl.g_values, boundary_modes=kl.modes,
        boundary_weights=bq.weights, boundary_points=bq.points)


def solve_truth(form: AffineForm, mu) -> TruthSolution:
    """Direct sparse solve of the full-order problem at one parameter."""
    mu = np.asarray(mu, dtype=float)
    if not form.admissible(mu):
        raise NonAdmissibleParameterError(f"mu={mu!r} is not admissible")
    B = form.assemble(mu).tocsc()
    lu = spla.splu(B)
    u = lu.solve(form.load)
    resid = B @ u - form.load
    scale = max(np.linalg.norm(form.load), 1e-300)
    if not np.isfinite(u).all() or np.linalg.norm(resid) > SOLVER_TOL * scale:
        raise NumericalError(
            f"truth solve did not converge at mu={mu!r} "
            f"(relative residual {np.linalg.norm(resid) / scale:.3e})")
    return TruthSolution(mu=mu, coefficients=u, output=float(form.load @ u))
