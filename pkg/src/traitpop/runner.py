"""Declarative experiment runner: config in, traces/report/plots out.

One TOML config describes the model, grid, eps ladder, initial data,
integrator and the diagnostic suites to run.  Outputs per run directory:

  trace_eps*.csv    snapshot-rate trace, header
                    t,rho,rho_dot,rho_dot_neg,bv_cum,conc,mean,var,max_u,
                    17 significant digits, LF line endings
  field_eps*.bin    final density; little-endian float64 payload behind a
                    16-byte header (8-byte magic, uint64 n_points)
  u_field_eps*.bin  final log-density field (hj suite)
  lyapunov.csv      t,J,dJdt,flatness_residual,mean,variance (lyapunov suite)
  report.json       certificate, per-eps summaries, verdict list, timing
  plot_run.py       standalone matplotlib script over the CSVs

Exit codes: 0 ok, 2 usage (bad config), 3 runtime failure, 4 verdict
failures only.  Identical config and seed give byte-identical outputs; the
per-eps sweep runs on a bounded worker pool (TRAITPOP_WORKERS).
"""

from __future__ import annotations

import concurrent.futures
import hashlib
import json
import math
import os
import struct
import sys
import time

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # python 3.10
    import tomli as tomllib

from . import diagnostics as D
from . import dirac as dirac_mod
from . import hopfcole as HC
from . import kernels as K
from . import models as M
from . import replicator as R
from .errors import TraitpopError
from .grid import DensityState, Grid, normalize
from .integrator import IntegratorConfig, integrate

FIELD_MAGIC = b"TPFLD01\x00"

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_RUNTIME = 3
EXIT_VERDICT = 4


class UsageError(TraitpopError):
    pass


# --------------------------------------------------------------------------
# Config schema

_NUM = (int, float)
_SCHEMA = {
    "model": {
        "family": str,
        "k0": {"family": str, "amplitude": _NUM, "width": _NUM, "value": _NUM,
               "radius": _NUM, "path": str},
        "mutation": {"family": str},
        "fecundity": {"kind": str, "value": _NUM, "b0": _NUM, "center": _NUM,
                      "width": _NUM, "floor": _NUM},
        "offspring": {"centering": str, "base": str},
        "k_s": {"family": str, "amplitude": _NUM, "width": _NUM, "value": _NUM,
                "radius": _NUM},
        "saturation": {"kind": str, "nu": _NUM, "gamma": _NUM},
    },
    "grid": {"x_min": _NUM, "x_max": _NUM, "n_points": int},
    "run": {"eps": list, "t_end": _NUM},
    "initial": {"kind": str, "center": _NUM, "sigma": _NUM, "mass": _NUM,
                "centers": list, "slope": _NUM},
    "integrator": {"scheme": str, "dt_init": _NUM, "dt_max": _NUM,
                   "rel_tol": _NUM, "abs_tol": _NUM, "snapshot_budget": int},
    "diagnostics": {"bv": bool, "concentration": bool, "lyapunov": bool,
                    "dirac": bool, "hj": bool},
    "replicator": {"r0_coefficient": _NUM, "x_m": _NUM, "t_end": _NUM,
                   "q0_sigma": _NUM, "k_s_width": _NUM, "k_s_amplitude": _NUM},
    "dirac": {"points": list},
    "hj": {"A": _NUM, "lam": _NUM},
    "output": {"directory": str, "seed": int},
}


def _check_keys(data, schema, path=""):
    for key, value in data.items():
        where = f"{path}.{key}" if path else key
        if key not in schema:
            raise UsageError(f"unknown config key {where!r}")
        expected = schema[key]
        if isinstance(expected, dict):
            if not isinstance(value, dict):
                raise UsageError(f"config key {where!r} must be a table")
            _check_keys(value, expected, where)
        elif expected is list:
            if not isinstance(value, list):
                raise UsageError(f"config key {where!r} must be a list")
        elif expected is bool:
            if not isinstance(value, bool):
                raise UsageError(f"config key {where!r} must be a boolean")
        elif not isinstance(value, expected) or isinstance(value, bool):
            raise UsageError(f"config key {where!r} has the wrong type")


def load_config(path) -> dict:
    try:
        with open(path, "rb") as fh:
            cfg = tomllib.load(fh)
    except FileNotFoundError:
        raise UsageError(f"config file not found: {path}")
    except tomllib.TOMLDecodeError as exc:
        raise UsageError(f"config parse error in {path}: {exc}")
    _check_keys(cfg, _SCHEMA)
    for section in ("model", "grid", "run", "initial"):
        if section not in cfg:
            raise UsageError(f"config is missing the [{section}] section")
    eps = cfg["run"].get("eps")
    if not eps or not all(isinstance(e, _NUM) for e in eps):
        raise UsageError("run.eps must be a non-empty list of numbers")
    if any(b >= a for a, b in zip(eps, eps[1:])):
        raise UsageError("run.eps must be strictly decreasing")
    return cfg


# --------------------------------------------------------------------------
# Model assembly from config

def _build_radial(block, what) -> K.SymmetricKernel:
    family = block.get("family", "gaussian")
    if family == "gaussian":
        return K.SymmetricKernel.gaussian(block.get("amplitude", 1.0),
                                          block.get("width", 1.0))
    if family == "cauchy":
        return K.SymmetricKernel.cauchy(block.get("amplitude", 1.0),
                                        block.get("width", 1.0))
    if family == "compact-bump":
        return K.SymmetricKernel.compact_bump(block.get("amplitude", 1.0),
                                              block.get("radius", 1.0))
    if family == "constant":
        return K.SymmetricKernel.constant(block.get("value", 1.0))
    if family == "table":
        if "path" not in block:
            raise UsageError(f"{what}.path is required for the table family")
        return K.SymmetricKernel.from_table(block["path"])
    raise UsageError(f"unknown kernel family {family!r} for {what}")


def _build_saturation(block) -> K.SaturationTerm:
    kind = block.get("kind", "linear")
    nu = block.get("nu", 1.0)
    if kind == "linear":
        return K.SaturationTerm.linear(nu)
    if kind == "power":
        return K.SaturationTerm.power_law(nu, block.get("gamma", 1.0))
    raise UsageError(f"unknown saturation kind {kind!r} in config")


def _build_fecundity(block) -> K.Fecundity:
    kind = block.get("kind", "constant")
    if kind == "constant":
        return K.Fecundity.constant(block.get("value", 1.0))
    if kind == "gaussian-peak":
        return K.Fecundity.gaussian_peak(block.get("b0", 1.0), block.get("center", 0.0),
                                         block.get("width", 1.0), block.get("floor", 0.0))
    raise UsageError(f"unknown fecundity kind {kind!r} in config")


def build_spec(cfg, eps) -> M.ModelSpec:
    model = cfg["model"]
    family = model.get("family")
    gblock = cfg["grid"]
    grid = Grid(gblock["x_min"], gblock["x_max"], gblock["n_points"])
    sat = _build_saturation(model.get("saturation", {}))
    kwargs = dict(family=family, grid=grid, eps=eps, saturation=sat)
    if family in ("nM", "ATH"):
        kwargs["k0"] = _build_radial(model.get("k0", {}), "model.k0")
    if family == "ATH":
        mut = model.get("mutation", {"family": "gaussian"})
        kwargs["mutation"] = K.MutationKernel(eps, family=mut.get("family", "gaussian"))
    if family == "AF":
        kwargs["fecundity"] = _build_fecundity(model.get("fecundity", {}))
        off = model.get("offspring", {})
        kwargs["offspring"] = K.OffspringDistribution(
            eps, centering=off.get("centering", "female"),
            base=off.get("base", "gaussian"))
    if family == "gnM":
        kwargs["k_s"] = K.TwoArgKernel(radial=_build_radial(model.get("k_s", {}),
                                                            "model.k_s"))
    try:
        return M.ModelSpec(**kwargs)
    except TraitpopError as exc:
        raise UsageError(str(exc))


def build_initial(cfg, grid) -> DensityState:
    block = cfg["initial"]
    kind = block.get("kind", "gaussian")
    if kind == "gaussian":
        return M.gaussian_bump(grid, block.get("center", 0.0),
                               block.get("sigma", 0.2), block.get("mass", 1.0))
    if kind == "double":
        return M.double_bump(grid, tuple(block.get("centers", (-0.5, 0.5))),
                             block.get("sigma", 0.15), block.get("mass", 1.0))
    if kind == "uniform":
        return M.uniform_density(grid, block.get("mass", 1.0))
    if kind == "hopf-cole":
        raise UsageError("hopf-cole initial data is eps-dependent; use kind via hj suite")
    raise UsageError(f"unknown initial kind {kind!r}")


def build_initial_for_eps(cfg, grid, eps) -> DensityState:
    block = cfg["initial"]
    if block.get("kind") == "hopf-cole":
        return M.hopf_cole_initial(grid, eps, slope=block.get("slope", 1.0),
                                   center=block.get("center", 0.0),
                                   mass=block.get("mass", 1.0))
    return build_initial(cfg, grid)


def build_integrator_config(cfg, t_end) -> IntegratorConfig:
    block = cfg.get("integrator", {})
    return IntegratorConfig(
        scheme=block.get("scheme", "exponential-split"),
        dt_init=block.get("dt_init", 1e-3),
        dt_max=block.get("dt_max", 0.05),
        rel_tol=block.get("rel_tol", 1e-8),
        abs_tol=block.get("abs_tol", 1e-12),
        t_end=t_end,
        snapshot_budget=block.get("snapshot_budget", 400),
    )


# --------------------------------------------------------------------------
# Output writers

def _fmt(x) -> str:
    return f"{x:.17g}"


def write_trace_csv(path, trace: D.RunTrace):
    """Snapshot-rate CSV with the documented bit-exact schema."""
    idx = np.searchsorted(trace.t, trace.t_snap)
    idx = np.clip(idx, 0, trace.t.size - 1)
    with open(path, "w", newline="\n") as fh:
        fh.write("t,rho,rho_dot,rho_dot_neg,bv_cum,conc,mean,var,max_u\n")
        for row, i in enumerate(idx):
            fh.write(",".join(_fmt(v) for v in (
                trace.t_snap[row], trace.rho[i], trace.rho_dot[i],
                trace.rho_dot_neg[i], trace.bv_cum[i], trace.conc[row],
                trace.mean[row], trace.var[row], trace.max_u[row])) + "\n")


def write_field(path, values: np.ndarray):
    values = np.asarray(values, dtype="<f8")
    with open(path, "wb") as fh:
        fh.write(FIELD_MAGIC)
        fh.write(struct.pack("<Q", values.size))
        fh.write(values.tobytes())


def read_field(path) -> np.ndarray:
    with open(path, "rb") as fh:
        magic = fh.read(8)
        if magic != FIELD_MAGIC:
            raise TraitpopError(f"bad field magic in {path}")
        (n,) = struct.unpack("<Q", fh.read(8))
        return np.frombuffer(fh.read(), dtype="<f8", count=n)


def write_lyapunov_csv(path, trace: R.LyapunovTrace):
    with open(path, "w", newline="\n") as fh:
        fh.write("t,J,dJdt,flatness_residual,mean,variance\n")
        for row in zip(trace.times, trace.J, trace.dJdt,
                       trace.flatness_residual, trace.mean, trace.var):
            fh.write(",".join(_fmt(v) for v in row) + "\n")


_PLOT_SCRIPT = """\
#!/usr/bin/env python3
\"\"\"Render the standard figures for one run directory (written by traitpop).\"\"\"
import csv
import glob
import os
import sys

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt

here = os.path.dirname(os.path.abspath(__file__))


def load(path):
    with open(path) as fh:
        rows = list(csv.DictReader(fh))
    return {k: [float(r[k]) for r in rows] for k in rows[0]}


traces = sorted(glob.glob(os.path.join(here, "trace_eps*.csv")))
if traces:
    fig, axes = plt.subplots(1, 3, figsize=(14, 4))
    tails = []
    for path in traces:
        tr = load(path)
        label = os.path.basename(path)[len("trace_eps"):-len(".csv")]
        axes[0].plot(tr["t"], tr["rho"], label="eps=" + label)
        axes[1].semilogy(tr["t"], [max(v, 1e-18) for v in tr["rho_dot_neg"]],
                         label="eps=" + label)
        axes[2].plot(tr["t"], tr["max_u"], label="eps=" + label)
        tails.append((float(label), tr))
    axes[0].set(xlabel="t", ylabel="rho", title="total mass")
    axes[1].set(xlabel="t", ylabel="(rho_dot)_-", title="mass decay part")
    axes[2].set(xlabel="t", ylabel="max u", title="log-density peak")
    for ax in axes:
        ax.legend()
    fig.tight_layout()
    fig.savefig(os.path.join(here, "traces.png"), dpi=120)

    import math
    pairs = [(eps, sum(0.5 * (c0 + c1) * (t1 - t0)
                       for t0, t1, c0, c1 in zip(tr["t"], tr["t"][1:],
                                                 tr["conc"], tr["conc"][1:])))
             for eps, tr in tails
             if all(c == c for c in tr["conc"])]
    if len(pairs) >= 2 and all(v > 0 for _, v in pairs):
        fig2, ax2 = plt.subplots(figsize=(4.5, 4))
        ax2.loglog([e for e, _ in pairs], [v for _, v in pairs], "o-")
        ax2.set(xlabel="eps", ylabel="time-integrated concentration",
                title="concentration order")
        fig2.tight_layout()
        fig2.savefig(os.path.join(here, "concentration_order.png"), dpi=120)

lyap = os.path.join(here, "lyapunov.csv")
if os.path.exists(lyap):
    tr = load(lyap)
    fig3, ax3 = plt.subplots(1, 2, figsize=(9, 4))
    ax3[0].plot(tr["t"], tr["J"])
    ax3[0].set(xlabel="t", ylabel="J", title="Lyapunov value")
    ax3[1].semilogy(tr["t"], [max(v, 1e-18) for v in tr["variance"]])
    ax3[1].set(xlabel="t", ylabel="trait variance", title="concentration")
    fig3.tight_layout()
    fig3.savefig(os.path.join(here, "lyapunov.png"), dpi=120)

print("figures written next to", here)
"""


# --------------------------------------------------------------------------
# Suites

def _verdict(claim_id, bound, observed, passed):
    return {"claim_id": claim_id,
            "bound_value": None if bound is None else float(bound),
            "observed_value": None if observed is None else float(observed),
            "pass": bool(passed)}


def _run_one_eps(cfg, eps, outdir, do_bv, do_conc, do_hj):
    spec = build_spec(cfg, eps)
    n0 = build_initial_for_eps(cfg, spec.grid, eps)
    hj_cfg = None
    if do_hj:
        hj_cfg = {"A": cfg.get("hj", {}).get("A", cfg["initial"].get("slope", 1.0)),
                  "lam": cfg.get("hj", {}).get("lam", 1.0)}
    report = M.validate(spec, n0=n0, hj_config=hj_cfg)
    cert = report.certificate
    icfg = build_integrator_config(cfg, cfg["run"].get("t_end", 1.0))
    try:
        traj = integrate(spec, n0, icfg, certificate=cert)
    except TraitpopError as exc:
        partial = getattr(exc, "partial", None)
        if partial is not None and partial.t_steps is not None:
            trace = D.build_run_trace(partial)
            write_trace_csv(os.path.join(outdir, f"trace_eps{eps:g}.csv"), trace)
        raise
    trace = D.build_run_trace(traj)
    write_trace_csv(os.path.join(outdir, f"trace_eps{eps:g}.csv"), trace)
    write_field(os.path.join(outdir, f"field_eps{eps:g}.bin"),
                traj.final_state().values)

    verdicts = []
    rho_max = float(np.max(trace.rho))
    verdicts.append(_verdict("mass-upper-bound", cert.rho_M + 1e-6, rho_max,
                             rho_max <= cert.rho_M + 1e-6))
    verdicts.append(_verdict("mass-upper-bound-sign", 0,
                             traj.monitor.upper_bound_violations,
                             traj.monitor.upper_bound_violations == 0))
    if cert.rho_m is not None:
        rho_min = float(np.min(trace.rho))
        verdicts.append(_verdict("mass-lower-bound", cert.rho_m - 1e-6, rho_min,
                                 rho_min >= cert.rho_m - 1e-6))
        verdicts.append(_verdict("mass-lower-bound-sign", 0,
                                 traj.monitor.lower_bound_violations,
                                 traj.monitor.lower_bound_violations == 0))
    if do_bv and spec.family in ("nM", "AF", "ATH") and spec.linear_saturation:
        try:
            bv = D.bv_budget(trace, cert)
            verdicts.append(_verdict("bv-budget", bv.bound, bv.observed, bv.passed))
            verdicts.append(_verdict("negative-part-envelope", None, None,
                                     bv.envelope_ok))
        except TraitpopError:
            pass
    conc_integral = None
    if do_conc and np.all(np.isfinite(trace.conc_steps)):
        conc_integral = D.time_integrated_concentration(trace)

    hj_info = None
    if do_hj:
        suite = HC.appendix_bound_suite(traj, cert)
        for chk in suite.checks:
            verdicts.append(_verdict(chk.name, 0.0, float(np.min(chk.margins)),
                                     chk.passed))
        u_final = HC.hopf_cole(traj.final_state(), eps)
        write_field(os.path.join(outdir, f"u_field_eps{eps:g}.bin"), u_final.u)
        hj_info = {"max_u_final": float(suite.max_u[-1]),
                   "envelope_final": float(suite.global_envelope[-1])}

    summary = {
        "eps": eps,
        "rho_final": float(trace.rho[-1]),
        "rho_max": rho_max,
        "bv_total": float(trace.bv_cum[-1]),
        "initial_decay_scale": float(eps * trace.rho_dot_neg[0]),
        "clamped_mass": traj.monitor.clamped_mass,
        "boundary_leak_steps": traj.monitor.boundary_leak_steps,
        "steps": int(trace.t.size - 1),
        "conc_integral": conc_integral,
        "warnings": report.warnings,
        "certificate": {
            "K_M": cert.K_M, "rho_M": cert.rho_M, "rho_m": cert.rho_m,
            "kappa2_m": cert.kappa2_m, "nonext_route": cert.nonext_route,
            "eta0": cert.eta0,
        },
        "hj": hj_info,
    }
    return summary, verdicts


def run(config_path, only=None, out=None, quiet=False):
    """Execute a config; returns (exit_code, report dict)."""
    t0 = time.time()
    try:
        cfg = load_config(config_path)
    except UsageError as exc:
        if not quiet:
            print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE, {"status": "usage-error", "error": str(exc)}

    if only not in (None, "core", "replicator", "dirac", "hj"):
        if not quiet:
            print(f"usage error: unknown suite {only!r}", file=sys.stderr)
        return EXIT_USAGE, {"status": "usage-error", "error": f"unknown suite {only!r}"}

    outdir = out or cfg.get("output", {}).get("directory", "traitpop_run")
    os.makedirs(outdir, exist_ok=True)
    with open(config_path, "rb") as fh:
        config_hash = hashlib.sha256(fh.read()).hexdigest()

    diag = cfg.get("diagnostics", {})
    do_bv = diag.get("bv", True)
    do_conc = diag.get("concentration", True)
    do_lyap = diag.get("lyapunov", False)
    do_dirac = diag.get("dirac", False)
    do_hj = diag.get("hj", False)
    if only is not None:
        do_lyap = only == "replicator"
        do_dirac = only == "dirac"
        do_hj = only == "hj" or (do_hj and only == "core")
    run_core = only in (None, "core", "hj")

    report = {"status": "incomplete", "config_hash": config_hash,
              "per_eps": [], "verdicts": [], "timing_s": None}
    verdicts = report["verdicts"]
    try:
        if run_core:
            eps_list = [float(e) for e in cfg["run"]["eps"]]
            workers = int(os.environ.get("TRAITPOP_WORKERS", "0")) or \
                min(len(eps_list), max(os.cpu_count() or 1, 1))
            with concurrent.futures.ThreadPoolExecutor(max_workers=workers) as pool:
                results = list(pool.map(
                    lambda e: _run_one_eps(cfg, e, outdir, do_bv, do_conc, do_hj),
                    eps_list))
            for summary, vds in results:
                report["per_eps"].append(summary)
                for v in vds:
                    v["eps"] = summary["eps"]
                    verdicts.append(v)

            decay0 = [s["initial_decay_scale"] for s in report["per_eps"]]
            verdicts.append(_verdict("initial-decay-uniform",
                                     10.0 * (min(decay0) + 1.0),
                                     max(decay0),
                                     max(decay0) <= 10.0 * (min(decay0) + 1.0)))
            conc = [(s["eps"], s["conc_integral"]) for s in report["per_eps"]
                    if s["conc_integral"] is not None]
            if do_conc and len(conc) >= 3 and all(v > 0.0 for _, v in conc):
                slope = D.fit_loglog_slope([e for e, _ in conc], [v for _, v in conc])
                verdicts.append(_verdict("concentration-order-eps", 1.0, slope,
                                         abs(slope - 1.0) <= 0.3))
            if do_hj and len(report["per_eps"]) >= 2:
                peaks = [s["hj"]["max_u_final"] for s in report["per_eps"] if s["hj"]]
                verdicts.append(_verdict("max-u-ladder-decreasing", peaks[0],
                                         peaks[-1], peaks[-1] < peaks[0]))

        if do_lyap:
            report["replicator"] = _run_replicator_suite(cfg, outdir, verdicts)
        if do_dirac:
            report["dirac"] = _run_dirac_suite(cfg, verdicts)

        report["status"] = "complete"
    except TraitpopError as exc:
        report["status"] = "incomplete"
        report["error"] = str(exc)
        _write_report(outdir, report, t0)
        if not quiet:
            print(f"runtime failure: {exc}", file=sys.stderr)
        return EXIT_RUNTIME, report

    _write_report(outdir, report, t0)
    with open(os.path.join(outdir, "plot_run.py"), "w", newline="\n") as fh:
        fh.write(_PLOT_SCRIPT)

    failures = [v for v in verdicts if not v["pass"]]
    if not quiet:
        for v in verdicts:
            tag = "pass" if v["pass"] else "FAIL"
            print(f"[{tag}] {v['claim_id']}"
                  + (f" (eps={v['eps']:g})" if "eps" in v else "")
                  + f": observed={v['observed_value']}")
        print(f"report: {os.path.join(outdir, 'report.json')}")
    return (EXIT_VERDICT if failures else EXIT_OK), report


def _write_report(outdir, report, t0):
    report["timing_s"] = round(time.time() - t0, 3)
    with open(os.path.join(outdir, "report.json"), "w", newline="\n") as fh:
        json.dump(report, fh, indent=2, sort_keys=True, allow_nan=True)
        fh.write("\n")


def _run_replicator_suite(cfg, outdir, verdicts):
    block = cfg.get("replicator", {})
    gblock = cfg["grid"]
    grid = Grid(gblock["x_min"], gblock["x_max"], gblock["n_points"])
    k_s = K.TwoArgKernel(radial=K.SymmetricKernel.gaussian(
        block.get("k_s_amplitude", 1.0), block.get("k_s_width", 1.0 / math.sqrt(2.0))))
    coeff = block.get("r0_coefficient", 0.1)
    spec = R.ReplicatorSpec(k_s=k_s, r0=lambda y: coeff * np.asarray(y) ** 2,
                            grid=grid, x_m=block.get("x_m", 0.0))
    q0 = normalize(M.gaussian_bump(grid, spec.x_m, block.get("q0_sigma", 0.15), 1.0))
    out = R.run_to_stability(spec, q0, R.ReplicatorRunConfig(
        t_end=block.get("t_end", 400.0)))
    write_lyapunov_csv(os.path.join(outdir, "lyapunov.csv"), out.trace)
    dual_gap = abs(R.lyapunov_chain_rule(spec, q0) - R.lyapunov_derivative(spec, q0))
    verdicts.append(_verdict("lyapunov-monotone", None, out.max_J_drop, out.J_monotone))
    verdicts.append(_verdict("replicator-converged", None, out.final_var,
                             out.verdict == "converged"))
    verdicts.append(_verdict("lyapunov-dual-evaluation", 1e-9, dual_gap,
                             dual_gap <= 1e-9))
    return {"verdict": out.verdict, "final_mean": out.final_mean,
            "final_var": out.final_var, "x_m_certified": spec.x_m_certified}


def _run_dirac_suite(cfg, verdicts):
    block = cfg.get("dirac", {})
    model = cfg["model"]
    k0 = _build_radial(model.get("k0", {}), "model.k0")
    nu = model.get("saturation", {}).get("nu", 1.0)
    points = block.get("points", [0.0])
    gblock = cfg["grid"]
    audit = np.linspace(gblock["x_min"], gblock["x_max"], 4001)
    system = dirac_mod.solve_dirac_system(k0, points, nu)
    info = {"verdict": system.verdict, "points": list(map(float, system.points))}
    if system.feasible:
        resid = dirac_mod.verify_kdd(system)
        scale = float(np.max(np.abs(system.matrix)))
        verdicts.append(_verdict("kdd-residual", 1e-10 * scale, resid,
                                 resid <= 1e-10 * scale))
        esd = dirac_mod.esd_check(k0, system, nu, audit)
        expected = len(points) == 1
        verdicts.append(_verdict("esd", None, esd.worst_excess,
                                 esd.is_esd == expected))
        info["esd"] = esd.is_esd
        info["rho"] = system.rho
        if len(points) >= 2:
            witness = dirac_mod.monomorphism_witness(k0, system)
            verdicts.append(_verdict("monomorphism-witness", 0.0, witness,
                                     witness > 0.0))
    return info


def main(argv=None) -> int:
    import argparse

    parser = argparse.ArgumentParser(
        prog="traitpop",
        description="Run a trait-structured population experiment from a TOML config.")
    parser.add_argument("config", help="path to the experiment config")
    parser.add_argument("--only", default=None,
                        help="run a single suite: core, replicator, dirac or hj")
    parser.add_argument("--out", default=None, help="output directory override")
    parser.add_argument("--quiet", action="store_true", help="suppress console output")
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else 0
    code, _ = run(args.config, only=args.only, out=args.out, quiet=args.quiet)
    return code


if __name__ == "__main__":
    sys.exit(main())
