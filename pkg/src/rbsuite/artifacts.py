"""Versioned JSON/binary persistence for every pipeline artifact.

All floating-point data goes through Python's shortest round-trip
``repr`` (the json module's default), so a serialize/deserialize cycle
is bit-exact and online results computed from a reloaded artifact are
identical to the in-memory ones.  Sparse matrices are stored as
coordinate triplets.  Brownian increment stores use a small binary
header followed by little-endian float64 path data.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .assembly import AffineForm
from .cv import CVBasis
from .errors import ArtifactError
from .klfield import KLBasis
from .kolmogorov import ControlGrid
from .meshing import Mesh
from .quadrature import BoundaryQuadrature
from .rb import ReducedBasis

MESH_SCHEMA = "rbsuite.mesh/1"
KL_SCHEMA = "rbsuite.kl/1"
FORM_SCHEMA = "rbsuite.form/1"
RB_SCHEMA = "rbsuite.rb/1"
CV_SCHEMA = "rbsuite.cv/1"

_INC_MAGIC = b"RBSI"
_INC_VERSION = 1


def _dump(path, payload):
    Path(path).write_text(json.dumps(payload, separators=(",", ":")))


def _load(path, schema):
    path = Path(path)
    if not path.exists():
        raise ArtifactError(f"artifact not found: {path}")
    try:
        payload = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ArtifactError(f"artifact {path} is not valid JSON: {exc}") from exc
    found = payload.get("schema")
    if found != schema:
        raise ArtifactError(
            f"artifact {path} has schema {found!r}, this build reads {schema!r}")
    return payload


def _coo(mat):
    c = mat.tocoo()
    return {"shape": list(c.shape), "row": c.row.tolist(),
            "col": c.col.tolist(), "data": c.data.tolist()}


def _from_coo(d):
    return sp.coo_matrix(
        (np.asarray(d["data"], dtype=float),
         (np.asarray(d["row"]), np.asarray(d["col"]))),
        shape=tuple(d["shape"])).tocsr()


def _arr(x):
    return None if x is None else np.asarray(x, dtype=float)


def _opt_list(x):
    return None if x is None else np.asarray(x).tolist()


# -- mesh ----------------------------------------------------------------------


def save_mesh(mesh: Mesh, path):
    _dump(path, {
        "schema": MESH_SCHEMA, "geometry": mesh.geometry, "h": mesh.h,
        "nodes": mesh.nodes.tolist(), "triangles": mesh.triangles.tolist(),
        "boundary_edges": mesh.boundary_edges.tolist(),
        "boundary_labels": list(mesh.boundary_labels)})


def load_mesh(path) -> Mesh:
    d = _load(path, MESH_SCHEMA)
    return Mesh(geometry=d["geometry"], h=d["h"],
                nodes=np.asarray(d["nodes"], dtype=float),
                triangles=np.asarray(d["triangles"], dtype=np.int64),
                boundary_edges=np.asarray(d["boundary_edges"], dtype=np.int64),
                boundary_labels=tuple(d["boundary_labels"]))


# -- KL basis -------------------------------------------------------------------


def _quad_payload(bq: BoundaryQuadrature):
    return {"label": bq.label, "edge_nodes": bq.edge_nodes.tolist(),
            "points": bq.points.tolist(), "weights": bq.weights.tolist(),
            "edge_of_point": bq.edge_of_point.tolist(),
            "shape": bq.shape.tolist()}


def _quad_from(d):
    return BoundaryQuadrature(
        label=d["label"], edge_nodes=np.asarray(d["edge_nodes"], dtype=np.int64),
        points=np.asarray(d["points"], dtype=float),
        weights=np.asarray(d["weights"], dtype=float),
        edge_of_point=np.asarray(d["edge_of_point"], dtype=np.int64),
        shape=np.asarray(d["shape"], dtype=float))


def save_kl(kl: KLBasis, path):
    _dump(path, {
        "schema": KL_SCHEMA, "b_bar": kl.b_bar, "upsilon": kl.upsilon,
        "correlation_length": kl.correlation_length,
        "g_convention": kl.g_convention,
        "g_values": kl.g_values.tolist(), "modes": kl.modes.tolist(),
        "eigenvalues": kl.eigenvalues.tolist(),
        "all_eigenvalues": kl.all_eigenvalues.tolist(),
        "quadrature": _quad_payload(kl.quadrature)})


def load_kl(path) -> KLBasis:
    d = _load(path, KL_SCHEMA)
    return KLBasis(
        quadrature=_quad_from(d["quadrature"]),
        g_values=np.asarray(d["g_values"], dtype=float),
        modes=np.asarray(d["modes"], dtype=float),
        eigenvalues=np.asarray(d["eigenvalues"], dtype=float),
        all_eigenvalues=np.asarray(d["all_eigenvalues"], dtype=float),
        b_bar=d["b_bar"], upsilon=d["upsilon"],
        correlation_length=d["correlation_length"],
        g_convention=d["g_convention"])


# -- affine form ----------------------------------------------------------------


def save_form(form: AffineForm, path):
    _dump(path, {
        "schema": FORM_SCHEMA, "kind": form.kind, "model": form.model,
        "mu_bar": form.mu_bar.tolist(), "mesh_info": form.mesh_info,
        "free_nodes": form.free_nodes.tolist(),
        "load": form.load.tolist(), "x_gram": _coo(form.x_gram),
        "terms": [_coo(B) for B in form.stiffness_terms],
        "boundary_g": _opt_list(form.boundary_g),
        "boundary_modes": _opt_list(form.boundary_modes),
        "boundary_weights": _opt_list(form.boundary_weights),
        "boundary_points": _opt_list(form.boundary_points),
        "fingerprint": form.fingerprint()})


def load_form(path) -> AffineForm:
    d = _load(path, FORM_SCHEMA)
    form = AffineForm(
        kind=d["kind"], stiffness_terms=[_from_coo(t) for t in d["terms"]],
        load=np.asarray(d["load"], dtype=float), x_gram=_from_coo(d["x_gram"]),
        mu_bar=np.asarray(d["mu_bar"], dtype=float), model=d["model"],
        free_nodes=np.asarray(d["free_nodes"], dtype=np.int64),
        mesh_info=d["mesh_info"],
        boundary_g=_arr(d["boundary_g"]),
        boundary_modes=_arr(d["boundary_modes"]),
        boundary_weights=_arr(d["boundary_weights"]),
        boundary_points=_arr(d["boundary_points"]))
    if form.fingerprint() != d["fingerprint"]:
        raise ArtifactError(f"affine form at {path} fails its provenance check")
    return form


# -- reduced basis ----------------------------------------------------------------


def save_rb(rb: ReducedBasis, path):
    _dump(path, {
        "schema": RB_SCHEMA, "kind": rb.kind, "form_ref": rb.form_ref,
        "selected_mu": rb.selected_mu.tolist(), "basis": rb.basis.tolist(),
        "reduced_stiffness": rb.reduced_stiffness.tolist(),
        "reduced_load": rb.reduced_load.tolist(),
        "rg_ll": rb.rg_ll, "rg_lq": rb.rg_lq.tolist(),
        "rg_qq": rb.rg_qq.tolist(),
        "mu_bar": rb.mu_bar.tolist(), "theta_ref": rb.theta_ref.tolist(),
        "boundary_g": _opt_list(rb.boundary_g),
        "boundary_modes": _opt_list(rb.boundary_modes),
        "greedy_history": list(rb.greedy_history)})


def load_rb(path, form: AffineForm | None = None) -> ReducedBasis:
    d = _load(path, RB_SCHEMA)
    rb = ReducedBasis(
        kind=d["kind"], form_ref=d["form_ref"],
        selected_mu=np.asarray(d["selected_mu"], dtype=float),
        basis=np.asarray(d["basis"], dtype=float),
        reduced_stiffness=np.asarray(d["reduced_stiffness"], dtype=float),
        reduced_load=np.asarray(d["reduced_load"], dtype=float),
        rg_ll=d["rg_ll"], rg_lq=np.asarray(d["rg_lq"], dtype=float),
        rg_qq=np.asarray(d["rg_qq"], dtype=float),
        mu_bar=np.asarray(d["mu_bar"], dtype=float),
        theta_ref=np.asarray(d["theta_ref"], dtype=float),
        boundary_g=_arr(d["boundary_g"]),
        boundary_modes=_arr(d["boundary_modes"]),
        greedy_history=tuple(d["greedy_history"]))
    if form is not None and rb.form_ref != form.fingerprint():
        raise ArtifactError(
            "reduced basis was built for a different affine form "
            f"({rb.form_ref[:12]}... vs {form.fingerprint()[:12]}...)")
    return rb


# -- control-variate basis --------------------------------------------------------


def _grid_payload(g: ControlGrid):
    return {"lam": g.lam.tolist(), "t_grid": g.t_grid.tolist(),
            "x_grid": g.x_grid.tolist(), "u_values": g.u_values.tolist(),
            "du_dx": g.du_dx.tolist()}


def _grid_from(d):
    return ControlGrid(
        lam=np.asarray(d["lam"], dtype=float),
        t_grid=np.asarray(d["t_grid"], dtype=float),
        x_grid=np.asarray(d["x_grid"], dtype=float),
        u_values=np.asarray(d["u_values"], dtype=float),
        du_dx=np.asarray(d["du_dx"], dtype=float))


def save_cv(basis: CVBasis, path):
    _dump(path, {
        "schema": CV_SCHEMA, "kind": basis.kind,
        "selected_lambdas": basis.selected_lambdas.tolist(),
        "m_small": basis.m_small, "m_large": basis.m_large,
        "steps": basis.steps, "trial_history": list(basis.trial_history),
        "alg1_refs": _opt_list(basis.alg1_refs),
        "alg2_grids": None if basis.alg2_grids is None
        else [_grid_payload(g) for g in basis.alg2_grids],
        "c_eigenvalues": _opt_list(basis.c_eigenvalues),
        "c_eigenvectors": _opt_list(basis.c_eigenvectors),
        "model_params": basis.model_params})


def load_cv(path) -> CVBasis:
    d = _load(path, CV_SCHEMA)
    return CVBasis(
        kind=d["kind"],
        selected_lambdas=np.asarray(d["selected_lambdas"], dtype=float),
        m_small=d["m_small"], m_large=d["m_large"], steps=d["steps"],
        trial_history=tuple(d["trial_history"]),
        alg1_refs=_arr(d["alg1_refs"]),
        alg2_grids=None if d["alg2_grids"] is None
        else tuple(_grid_from(g) for g in d["alg2_grids"]),
        c_eigenvalues=_arr(d["c_eigenvalues"]),
        c_eigenvectors=_arr(d["c_eigenvectors"]),
        model_params=d["model_params"])


# -- increment stores --------------------------------------------------------------


def save_increments(path, increments, seed=None):
    """Binary layout: magic, version, m/steps/d, seed, little-endian float64."""
    arr = np.ascontiguousarray(np.asarray(increments, dtype="<f8"))
    if arr.ndim != 3:
        raise ArtifactError("increments must have shape (m, steps, d)")
    m, steps, d = arr.shape
    header = _INC_MAGIC + struct.pack("<IQQQq", _INC_VERSION, m, steps, d,
                                      -1 if seed is None else int(seed))
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(arr.tobytes())


def load_increments(path):
    """Returns ``(increments, seed_or_None)``."""
    path = Path(path)
    if not path.exists():
        raise ArtifactError(f"increment store not found: {path}")
    raw = path.read_bytes()
    head = struct.calcsize("<IQQQq")
    if raw[:4] != _INC_MAGIC:
        raise ArtifactError(f"{path} is not an increment store")
    version, m, steps, d, seed = struct.unpack("<IQQQq", raw[4:4 + head])
    if version != _INC_VERSION:
        raise ArtifactError(
            f"increment store version {version}, this build reads {_INC_VERSION}")
    data = np.frombuffer(raw[4 + head:], dtype="<f8")
    if data.size != m * steps * d:
        raise ArtifactError(f"{path} is truncated")
    return data.reshape(m, steps, d).copy(), (None if seed == -1 else seed)
