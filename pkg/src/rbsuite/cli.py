"""Command-line front end: offline/online pipelines, artifacts, CSV, figures.

Subcommands::

    rb offline | rb online | rb effectivity     certified reduced basis
    kl build                                    covariance spectrum
    uq run                                      Monte-Carlo with bounds
    cv offline | cv online | cv sweep           control variates
    report                                      figures + summary tables
    replay                                      re-run a manifest, verify hashes

Every run writes a manifest embedding the full configuration, the
seeds in force and the SHA-256 of each output file, so ``replay``
reproduces and verifies any past run.  Exit codes: 0 success, 2
configuration error, 3 numerical failure, 4 artifact mismatch.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import artifacts, report
from .assembly import T_SINK_ROBIN, THERMAL_BLOCK, assemble_affine
from .cv import (ALG1, ALG2, cv_sweep, draw_increments, greedy_offline_cv,
                 online_estimate)
from .errors import ArtifactError, ConfigError, NumericalError, RBSuiteError
from .klfield import kl_expand, sample_y_batch
from .kolmogorov import hookean_exact_grid, kolmogorov_solve_1d
from .meshing import GAMMA_B, T_SINK, UNIT_SQUARE_DIRICHLET, build_mesh
from .quadrature import boundary_quadrature
from .rb import effectivity_report, greedy_offline, online_solve_batch, truncate_basis
from .sde import fene_dumbbell, hookean_1d
from .uq import mc_outputs

log = logging.getLogger(__name__)

MANIFEST_SCHEMA = "rbsuite.manifest/1"


# -- config handling ----------------------------------------------------------


def load_config(path):
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        return json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(
            f"config {path} line {exc.lineno}: {exc.msg}") from exc


def cfg_get(cfg, dotted, default=None, required=False):
    node = cfg
    for part in dotted.split("."):
        if not isinstance(node, dict) or part not in node:
            if required:
                raise ConfigError(f"config field {dotted!r} is missing")
            return default
        node = node[part]
    return node


def _positive(cfg, dotted, default=None):
    val = cfg_get(cfg, dotted, default, required=default is None)
    if not (isinstance(val, (int, float)) and val > 0):
        raise ConfigError(f"config field {dotted!r} must be positive, got {val!r}")
    return val


def _size(cfg, dotted, default=None):
    val = cfg_get(cfg, dotted, default, required=default is None)
    if not (isinstance(val, int) and val >= 1):
        raise ConfigError(f"config field {dotted!r} must be an integer >= 1")
    return val


def _sha256(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _write_manifest(outdir, command, cfg, outputs):
    payload = {
        "schema": MANIFEST_SCHEMA,
        "command": command,
        "config": cfg,
        "config_sha256": hashlib.sha256(
            json.dumps(cfg, sort_keys=True).encode()).hexdigest(),
        "outputs": {Path(p).name: _sha256(p) for p in outputs},
        "artifact_schemas": {
            "mesh": artifacts.MESH_SCHEMA, "kl": artifacts.KL_SCHEMA,
            "form": artifacts.FORM_SCHEMA, "rb": artifacts.RB_SCHEMA,
            "cv": artifacts.CV_SCHEMA},
    }
    path = Path(outdir) / f"manifest_{command.replace(' ', '_')}.json"
    path.write_text(json.dumps(payload, indent=1, sort_keys=True))
    return path


# -- problem builders ----------------------------------------------------------


def _build_problem(cfg):
    """Mesh + (optional KL) + affine form for the configured problem."""
    problem = cfg_get(cfg, "problem", required=True)
    h = _positive(cfg, "mesh.h")
    if problem == "thermal_block":
        mesh = build_mesh(UNIT_SQUARE_DIRICHLET, h)
        mu_range = cfg_get(cfg, "model.mu_range", [0.1, 10.0])
        form = assemble_affine(mesh, {"kind": THERMAL_BLOCK,
                                      "mu_range": mu_range})
        return mesh, None, form
    if problem == "heat_sink":
        mesh = build_mesh(T_SINK, h)
        bq = boundary_quadrature(mesh, GAMMA_B)
        kl = kl_expand(
            bq,
            delta=_positive(cfg, "kl.delta", 0.5),
            upsilon=cfg_get(cfg, "kl.upsilon", 0.058),
            b_bar=_positive(cfg, "model.b_bar", 0.5),
            k_max=_size(cfg, "kl.k_max", 25),
            g_convention=cfg_get(cfg, "kl.g_convention", "unit"))
        form = assemble_affine(mesh, {
            "kind": T_SINK_ROBIN, "kl": kl,
            "sigma0": _positive(cfg, "model.sigma0", 2.0),
            "b_bar_range": cfg_get(cfg, "model.b_bar_range",
                                   [kl.b_bar, kl.b_bar])})
        return mesh, kl, form
    raise ConfigError(f"unknown problem {problem!r} "
                      "(expected thermal_block or heat_sink)")


def _rb_trial(cfg, kl, form, size, seed):
    """Trial/test parameter sample for the configured problem."""
    rng = np.random.default_rng(seed)
    if form.kind == THERMAL_BLOCK:
        lo, hi = form.model["mu_range"]
        return 10.0 ** rng.uniform(np.log10(lo), np.log10(hi), size=(size, 1))
    ys, _ = sample_y_batch(kl, kl.n_modes, size, rng)
    return np.column_stack([np.full(size, form.mu_bar[0]), ys])


def _sde_model(cfg):
    kind = cfg_get(cfg, "sde.kind", required=True)
    horizon = _positive(cfg, "sde.horizon", 1.0)
    if kind == "fene":
        return fene_dumbbell(
            b=_positive(cfg, "sde.b", 16.0), horizon=horizon,
            x0=cfg_get(cfg, "sde.x0", [1.0, 1.0]),
            component=tuple(cfg_get(cfg, "sde.component", [0, 1])))
    if kind == "hookean1d":
        return hookean_1d(horizon=horizon,
                          x0=cfg_get(cfg, "sde.x0", 1.0))
    raise ConfigError(f"unknown sde.kind {kind!r}")


def _cv_trial(cfg, size, seed, wide=False):
    lo, hi = cfg_get(cfg, "cv.lambda_range", [-1.0, 1.0])
    if wide:
        lo, hi = 2.0 * lo, 2.0 * hi
    dim = _size(cfg, "cv.lambda_dim", 3)
    rng = np.random.default_rng(seed)
    return rng.uniform(lo, hi, size=(size, dim))


def _grid_solver(cfg, model):
    grid_cfg = cfg_get(cfg, "cv.grid", {})
    lo = grid_cfg.get("x_min", -10.0)
    hi = grid_cfg.get("x_max", 10.0)
    nx = grid_cfg.get("points", 201)
    t_steps = grid_cfg.get("t_steps", 200)
    exact = grid_cfg.get("exact_hookean", True)
    if exact:
        return lambda lam: hookean_exact_grid(
            lam, t_steps, np.linspace(lo, hi, nx), horizon=model.horizon)
    return lambda lam: kolmogorov_solve_1d(
        model, lam, t_steps, np.linspace(lo, hi, nx))


# -- subcommand runners ----------------------------------------------------------


def run_rb_offline(cfg, outdir, threads):
    mesh, kl, form = _build_problem(cfg)
    trial_seed, greedy_seed = np.random.SeedSequence(
        cfg_get(cfg, "rb.seed", 0)).spawn(2)
    trial = _rb_trial(cfg, kl, form, _size(cfg, "rb.trial_size", 256),
                      trial_seed)
    rb = greedy_offline(
        form, trial, eps=_positive(cfg, "rb.eps", 1e-10),
        n_max=_size(cfg, "rb.n_max", 20),
        seed=np.random.default_rng(greedy_seed),
        init=cfg_get(cfg, "rb.init", "random"), threads=threads)
    outputs = []
    artifacts.save_mesh(mesh, Path(outdir) / "mesh.json")
    outputs.append(Path(outdir) / "mesh.json")
    if kl is not None:
        artifacts.save_kl(kl, Path(outdir) / "kl.json")
        outputs.append(Path(outdir) / "kl.json")
    artifacts.save_form(form, Path(outdir) / "form.json")
    artifacts.save_rb(rb, Path(outdir) / "rb.json")
    outputs += [Path(outdir) / "form.json", Path(outdir) / "rb.json"]
    outputs.append(report.write_csv(
        Path(outdir) / "rb_convergence.csv", ["N", "max_bound"],
        [(n + 1, b) for n, b in enumerate(rb.greedy_history)]))
    return outputs


def _load_rb_stack(cfg, outdir):
    form = artifacts.load_form(Path(outdir) / "form.json")
    rb = artifacts.load_rb(Path(outdir) / "rb.json", form=form)
    kl = None
    if form.kind == T_SINK_ROBIN:
        kl = artifacts.load_kl(Path(outdir) / "kl.json")
    return form, kl, rb


def run_rb_online(cfg, outdir, threads):
    form, kl, rb = _load_rb_stack(cfg, outdir)
    sample = _rb_trial(cfg, kl, form, _size(cfg, "online.sample_size", 64),
                       cfg_get(cfg, "online.seed", 1))
    enrich = cfg_get(cfg, "online.enrich_eps")
    sols, rb_out = online_solve_batch(rb, sample, form=form,
                                      enrich_eps=enrich)
    rows = [(*s.mu.tolist(), s.output, s.output_bound, s.energy_bound,
             s.alpha_lb) for s in sols]
    mu_cols = [f"mu{i}" for i in range(sample.shape[1])]
    out = [report.write_csv(
        Path(outdir) / "rb_online.csv",
        mu_cols + ["output", "output_bound", "energy_bound", "alpha_lb"],
        rows)]
    if rb_out.n != rb.n:
        artifacts.save_rb(rb_out, Path(outdir) / "rb.json")
        out.append(Path(outdir) / "rb.json")
    return out


def run_rb_effectivity(cfg, outdir, threads):
    form, kl, rb = _load_rb_stack(cfg, outdir)
    n_use = cfg_get(cfg, "online.basis_size")
    if n_use:
        rb = truncate_basis(rb, min(n_use, rb.n))
    sample = _rb_trial(cfg, kl, form, _size(cfg, "online.sample_size", 64),
                       cfg_get(cfg, "online.seed", 1))
    rows = effectivity_report(form, rb, sample, threads=threads)
    csv_rows = [(*r["mu"].tolist(), r["truth_output"], r["rb_output"],
                 r["error"], r["bound"],
                 float("nan") if r["effectivity"] is None else r["effectivity"],
                 r["ceiling"]) for r in rows]
    mu_cols = [f"mu{i}" for i in range(sample.shape[1])]
    return [report.write_csv(
        Path(outdir) / "rb_effectivity.csv",
        mu_cols + ["truth_output", "rb_output", "error", "bound",
                   "effectivity", "ceiling"],
        csv_rows)]


def run_kl_build(cfg, outdir, threads):
    mesh, kl, _ = _build_problem(cfg)
    if kl is None:
        raise ConfigError("kl build requires the heat_sink problem")
    artifacts.save_mesh(mesh, Path(outdir) / "mesh.json")
    artifacts.save_kl(kl, Path(outdir) / "kl.json")
    csv = report.write_csv(
        Path(outdir) / "kl_spectrum.csv", ["k", "eigenvalue"],
        [(k + 1, lam) for k, lam in enumerate(kl.all_eigenvalues)])
    return [Path(outdir) / "mesh.json", Path(outdir) / "kl.json", csv]


def run_uq(cfg, outdir, threads):
    form, kl, rb = _load_rb_stack(cfg, outdir)
    if kl is None:
        raise ConfigError("uq run requires a heat_sink reduced basis")
    m = _size(cfg, "uq.m", 2000)
    k_values = cfg_get(cfg, "uq.k_values", [5, 10, 15, 20])
    n_values = cfg_get(cfg, "uq.n_values",
                       list(range(2, rb.n + 1)))
    n_values = [n for n in n_values if 1 <= n <= rb.n]
    if not n_values:
        raise ConfigError("uq.n_values has no entries within the basis size")
    seeds = np.random.SeedSequence(cfg_get(cfg, "uq.seed", 0)).spawn(
        len(k_values))
    rows = []
    for k, seed_k in zip(k_values, seeds):
        if not 1 <= k <= kl.n_modes:
            raise ConfigError(f"uq.k_values entry {k} outside [1, {kl.n_modes}]")
        for n in n_values:
            res = mc_outputs(truncate_basis(rb, n), kl, k, m,
                             np.random.default_rng(seed_k))
            rows.append((n, k, res.mean, res.variance, res.delta_e,
                         res.delta_v, res.clt_halfwidth, res.delta_s,
                         res.delta_t_proxy))
    return [report.write_csv(
        Path(outdir) / "uq_run.csv",
        ["N", "K", "E_M", "V_M", "delta_E", "delta_V", "clt_halfwidth",
         "delta_S", "delta_T_proxy"],
        rows)]


def run_cv_offline(cfg, outdir, threads):
    model = _sde_model(cfg)
    algorithm = cfg_get(cfg, "cv.algorithm", "alg1")
    if algorithm not in (ALG1, ALG2):
        raise ConfigError(f"cv.algorithm must be alg1 or alg2, got {algorithm!r}")
    if algorithm == ALG2 and model.dimension != 1:
        raise ConfigError("alg2 control grids are one-dimensional; "
                          "use sde.kind = hookean1d")
    trial_seed, greedy_seed = np.random.SeedSequence(
        cfg_get(cfg, "cv.seed", 0)).spawn(2)
    trial = _cv_trial(cfg, _size(cfg, "cv.trial_size", 100), trial_seed)
    basis = greedy_offline_cv(
        algorithm, model, trial,
        n_max=_size(cfg, "cv.n_max", 20),
        m_small=_size(cfg, "cv.m_small", 1000),
        m_large=_size(cfg, "cv.m_large", 100_000) if algorithm == ALG1 else None,
        eps=cfg_get(cfg, "cv.eps", 0.0),
        seed=greedy_seed, steps=_size(cfg, "sde.steps", 100),
        grid_solver=_grid_solver(cfg, model) if algorithm == ALG2 else None,
        threads=threads)
    artifacts.save_cv(basis, Path(outdir) / "cv.json")
    csv = report.write_csv(
        Path(outdir) / "cv_offline.csv", ["iteration", "max_epsilon"],
        [(i + 1, e) for i, e in enumerate(basis.trial_history)])
    # persist the sweep's Brownian store so a later `cv sweep` (possibly
    # in another process) prices against these exact paths
    sweep_seed = cfg_get(cfg, "cv.sweep_seed", 3)
    store = draw_increments(np.random.SeedSequence(sweep_seed),
                             basis.m_small, basis.steps, model.dimension,
                             model.horizon / basis.steps)
    artifacts.save_increments(Path(outdir) / "increments.bin", store,
                              seed=sweep_seed)
    return [Path(outdir) / "cv.json", csv, Path(outdir) / "increments.bin"]


def run_cv_online(cfg, outdir, threads):
    model = _sde_model(cfg)
    basis = artifacts.load_cv(Path(outdir) / "cv.json")
    lams = cfg_get(cfg, "cv.online_lambdas")
    if lams is None:
        lams = _cv_trial(cfg, _size(cfg, "cv.online_size", 8),
                         cfg_get(cfg, "cv.test_seed", 1)).tolist()
    rows = []
    for lam in lams:
        est = online_estimate(basis, model, lam,
                              seed=cfg_get(cfg, "cv.online_seed", 2))
        rows.append((*est.lam.tolist(), est.mean, est.variance,
                     est.raw_variance, est.ratio, est.clt_halfwidth))
    dim = len(rows[0]) - 5
    return [report.write_csv(
        Path(outdir) / "cv_online.csv",
        [f"lambda{i}" for i in range(dim)]
        + ["mean", "variance", "raw_variance", "ratio", "clt_halfwidth"],
        rows)]


def run_cv_sweep(cfg, outdir, threads):
    model = _sde_model(cfg)
    basis = artifacts.load_cv(Path(outdir) / "cv.json")
    test = _cv_trial(cfg, _size(cfg, "cv.test_size", 200),
                     cfg_get(cfg, "cv.test_seed", 1),
                     wide=bool(cfg_get(cfg, "cv.test_wide", False)))
    n_values = cfg_get(cfg, "cv.n_values", list(range(1, basis.n + 1)))
    store_file = Path(outdir) / "increments.bin"
    store = None
    if store_file.exists():
        store, _ = artifacts.load_increments(store_file)
    rows = cv_sweep(basis, model, test, n_values,
                    seed=cfg_get(cfg, "cv.sweep_seed", 3), threads=threads,
                    store=store)
    header = ["n", "min_ratio", "geomean_ratio", "max_ratio", "min_norm_var",
              "mean_norm_var", "max_norm_var", "mean_raw_norm_var"]
    return [report.write_csv(Path(outdir) / "cv_sweep.csv", header,
                             [[r[k] for k in header] for r in rows])]


def run_report(cfg, outdir, threads):
    return report.render_report(outdir)


_RUNNERS = {
    "rb offline": run_rb_offline,
    "rb online": run_rb_online,
    "rb effectivity": run_rb_effectivity,
    "kl build": run_kl_build,
    "uq run": run_uq,
    "cv offline": run_cv_offline,
    "cv online": run_cv_online,
    "cv sweep": run_cv_sweep,
    "report": run_report,
}


def _dispatch(command, cfg, outdir, threads):
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    outputs = _RUNNERS[command](cfg, outdir, threads)
    manifest = _write_manifest(outdir, command, cfg, outputs)
    return outputs, manifest


def run_replay(manifest_path, outdir, threads):
    path = Path(manifest_path)
    if not path.exists():
        raise ArtifactError(f"manifest not found: {path}")
    payload = json.loads(path.read_text())
    if payload.get("schema") != MANIFEST_SCHEMA:
        raise ArtifactError(f"{path} is not a run manifest")
    outdir = Path(outdir) if outdir else path.parent
    outputs, _ = _dispatch(payload["command"], payload["config"], outdir,
                           threads)
    mismatches = []
    for name, digest in payload["outputs"].items():
        now = _sha256(outdir / name)
        status = "ok" if now == digest else "DIFFERS"
        if now != digest:
            mismatches.append(name)
        print(f"{name}: {status}")
    if mismatches:
        raise ArtifactError(
            f"replay outputs differ from the manifest: {mismatches}")
    return outputs


def build_parser():
    parser = argparse.ArgumentParser(
        prog="rbsuite",
        description="Certified reduced-basis pipelines: RB, UQ, control variates")
    parser.add_argument("--threads", type=int,
                        default=os.cpu_count() or 1,
                        help="worker-thread cap (results are identical at any count)")
    sub = parser.add_subparsers(dest="group", required=True)

    def add(group_parser, name):
        p = group_parser.add_parser(name)
        p.add_argument("-c", "--config", required=name != "report")
        p.add_argument("-o", "--outdir", required=True)
        return p

    for group, names in (("rb", ["offline", "online", "effectivity"]),
                         ("kl", ["build"]),
                         ("uq", ["run"]),
                         ("cv", ["offline", "online", "sweep"])):
        gp = sub.add_parser(group)
        gsub = gp.add_subparsers(dest="action", required=True)
        for name in names:
            add(gsub, name)

    rep = sub.add_parser("report")
    rep.add_argument("-o", "--outdir", required=True)

    rp = sub.add_parser("replay")
    rp.add_argument("-m", "--manifest", required=True)
    rp.add_argument("-o", "--outdir", default=None)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.group == "replay":
            run_replay(args.manifest, args.outdir, args.threads)
            return 0
        if args.group == "report":
            _dispatch("report", {}, args.outdir, args.threads)
            return 0
        command = f"{args.group} {args.action}"
        cfg = load_config(args.config)
        _, manifest = _dispatch(command, cfg, args.outdir, args.threads)
        print(f"wrote {manifest}")
        return 0
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    except ArtifactError as exc:
        print(f"artifact error: {exc}", file=sys.stderr)
        return 4
    except RBSuiteError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    raise SystemExit(main())
