"""Command-line front end.

Usage::

    cutiga <experiment> [--config FILE] [--set key=value ...] [--jobs N] [--out DIR]
    cutiga <experiment> --print-defaults

Exit status is 0 when every verdict passes, 2 when some verdict fails and 1
on errors. Outputs are written atomically into the output directory together
with a config snapshot that re-runs to identical rows.
"""

from __future__ import annotations

import argparse
import csv
import io
import logging
import os
import sys
import tempfile
from dataclasses import dataclass, field

import numpy as np

from . import experiments as ex
from .cutquad import build_cut_quadrature, compute_cut_metrics, min_cut_chi, quadrature_rows
from .forms import BOUNDARY_METHODS, FormulationSpec, assemble_terms, combine, coo_rows
from .geometry import (BOUNDARY_TAGS, BackgroundMesh, extract_ghost_faces,
                       make_reference_cutout_domain, reference_cutout_area)
from .splines import build_open_uniform_basis

log = logging.getLogger("cutiga")

SCHEMA = "# schema=1"

COMMON = {"out": "results", "seed": 20240601, "rho_max": 3, "dump_quadrature": False,
          "dump_matrices": False, "energy_log": False}

FORMULATION_KEYS = {"rho": 1.0, "kappa": 1.0, "beta": 10.0, "beta_phi": 100.0, "beta_g": 100.0,
                    "gamma_k": 0.1, "gamma_m": 0.1, "beta_cap": 10.0}

EXPERIMENT_DEFAULTS = {
    "rod-spectrum": {"p": 2, "n_elements": 4, "chi": [1.0, 1e-1, 1e-2, 1e-3, 1e-4, 1e-5],
                     "mass": ["consistent", "lumped"]},
    "rayleigh-tables": {"suite": False, "s": 2, "p": 1, "d": 1, "probe": ["all"],
                        "formulation": ["all"], "mass": ["all"],
                        "chi": [10.0 ** (-k / 2) for k in range(2, 13)], "fit_chi_max": 1e-2,
                        "tolerance": 0.15, **FORMULATION_KEYS},
    "timestep-scaling": {"parts": ["a", "b", "c", "d"], "n_perturbations": 100,
                         "n_elements": 20, "beta_sweep": [1.0, 10.0, 100.0],
                         "max_method": "power", "min_method": "lapack"},
    "convergence": {"parts": ["a", "b"], "p": 1, "meshes": [8, 16, 32, 64], "safety": 0.85},
    "quad-check": {"p": 2, "n_elements": 20, "shift_x": 0.0, "shift_y": 0.0, "tag": "dirichlet",
                   "s": 2, "boundary": "nitsche_ghost", "mass_treatment": "lumped",
                   "ghost_mass": True, "area_tolerance": 1e-3, **FORMULATION_KEYS},
}

POSITIVE_KEYS = {"rho", "kappa", "beta", "beta_phi", "beta_g", "gamma_k", "gamma_m", "beta_cap",
                 "rho_max", "n_elements", "n_perturbations", "fit_chi_max", "tolerance",
                 "safety", "area_tolerance", "chi", "meshes", "beta_sweep"}


class ConfigError(ValueError):
    """Malformed configuration or unknown key."""


@dataclass
class RunConfig:
    """Experiment id plus validated key-value settings."""

    experiment: str
    values: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.experiment not in EXPERIMENT_DEFAULTS:
            raise ConfigError(f"unknown experiment {self.experiment!r}")
        schema = defaults_for(self.experiment)
        merged = dict(schema)
        for key, value in self.values.items():
            if key not in schema:
                raise ConfigError(f"unknown key {key!r} for {self.experiment}")
            merged[key] = coerce(key, value, schema[key])
        for key in POSITIVE_KEYS & merged.keys():
            vals = merged[key] if isinstance(merged[key], list) else [merged[key]]
            if not all(v > 0 for v in vals):
                raise ConfigError(f"{key} must be positive")
        self.values = merged

    def __getitem__(self, key):
        return self.values[key]

    def snapshot(self) -> str:
        lines = [f"# cutiga {self.experiment} snapshot", f"[{self.experiment}]"]
        lines += [f"{k} = {format_value(v)}" for k, v in self.values.items()]
        return "\n".join(lines) + "\n"


def defaults_for(experiment: str) -> dict:
    return {**COMMON, **EXPERIMENT_DEFAULTS[experiment]}


def format_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, list):
        return ", ".join(format_value(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _scalar(text: str, like):
    text = text.strip()
    if isinstance(like, bool):
        low = text.lower()
        if low in ("true", "1", "yes", "on"):
            return True
        if low in ("false", "0", "no", "off"):
            return False
        raise ConfigError(f"not a boolean: {text!r}")
    if isinstance(like, int):
        try:
            return int(text)
        except ValueError:
            raise ConfigError(f"not an integer: {text!r}") from None
    if isinstance(like, float):
        try:
            return float(text)
        except ValueError:
            raise ConfigError(f"not a number: {text!r}") from None
    return text.strip("'\"")


def coerce(key: str, value, default):
    """Parse ``value`` (text or already typed) to the type of ``default``."""
    if isinstance(default, list):
        like = default[0] if default else ""
        if isinstance(value, str):
            items = [s for s in value.strip().strip("[]").split(",") if s.strip()]
        else:
            items = list(value) if isinstance(value, (list, tuple)) else [value]
        if not items:
            raise ConfigError(f"{key} must not be empty")
        return [_scalar(str(s), like) if isinstance(s, str) else _scalar(repr(s), like)
                for s in items]
    if isinstance(value, str):
        return _scalar(value, default)
    return _scalar(repr(value) if not isinstance(value, bool) else str(value), default)


def parse_config_text(text: str, experiment: str) -> dict:
    """Flat ``key = value`` lines; ``[section]`` headers scope keys to one experiment."""
    out, section = {}, None
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip()
            if section not in EXPERIMENT_DEFAULTS:
                raise ConfigError(f"line {n}: unknown section [{section}]")
            continue
        if "=" not in line:
            raise ConfigError(f"line {n}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ConfigError(f"line {n}: empty key")
        if section is None or section == experiment:
            out[key] = value
        elif key not in defaults_for(section):
            raise ConfigError(f"line {n}: unknown key {key!r} for {section}")
    return out


def parse_overrides(items) -> dict:
    out = {}
    for item in items or ():
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        out[key.strip()] = value
    return out


# --------------------------------------------------------------------------
# Outputs


def rows_to_csv(rows, columns=None) -> str:
    buf = io.StringIO()
    buf.write(SCHEMA + "\n")
    if columns is None:
        columns = []
        for r in rows:
            columns += [k for k in r if k not in columns]
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_cell(r.get(c, "")) for c in columns])
    return buf.getvalue()


def _cell(v):
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, (list, tuple)):
        return " ".join(str(x) for x in v)
    return v


def write_outputs(out_dir: str, files: dict) -> None:
    """Write every file to a temporary name, then rename it into place."""
    os.makedirs(out_dir, exist_ok=True)
    staged = []
    try:
        for name, text in files.items():
            fd, tmp = tempfile.mkstemp(prefix=f".{name}.", dir=out_dir)
            with os.fdopen(fd, "w") as fh:
                fh.write(text)
            staged.append((tmp, os.path.join(out_dir, name)))
    except BaseException:
        for tmp, _ in staged:
            os.unlink(tmp)
        raise
    for tmp, dest in staged:
        os.replace(tmp, dest)


def report_files(report: ex.ExperimentReport, cfg: RunConfig) -> dict:
    stem = cfg.experiment
    files = {f"{stem}.csv": rows_to_csv(report.rows),
             f"{stem}_verdicts.csv": rows_to_csv(
                 [{"name": v.name, "passed": v.passed, "value": float(v.value),
                   "threshold": v.threshold, "detail": v.detail} for v in report.verdicts],
                 ["name", "passed", "value", "threshold", "detail"]),
             f"{stem}_config.txt": cfg.snapshot()}
    if report.rejected:
        files[f"{stem}_rejected.csv"] = rows_to_csv(report.rejected)
    for name, (columns, rows) in report.series.items():
        files[name] = rows_to_csv(rows, list(columns))
    return files


# --------------------------------------------------------------------------
# Dispatch


def _spec_constants(cfg: RunConfig) -> dict:
    return {k: cfg[k] for k in FORMULATION_KEYS}


def run_experiment(cfg: RunConfig, jobs: int = 1) -> ex.ExperimentReport:
    name = cfg.experiment
    if name == "rod-spectrum":
        return ex.run_rod_spectrum(cfg["p"], cfg["n_elements"], cfg["chi"], cfg["mass"])
    if name == "rayleigh-tables":
        spec = FormulationSpec(order=cfg["s"], **_spec_constants(cfg))
        kw = dict(formulation=_all(cfg["formulation"]), mass=_all(cfg["mass"]),
                  probe=_all(cfg["probe"]), chis=cfg["chi"], fit_chi_max=cfg["fit_chi_max"],
                  rho_max=cfg["rho_max"], tolerance=cfg["tolerance"])
        if cfg["suite"]:
            if kw["formulation"] is not None:
                raise ConfigError("suite runs every formulation row; drop 'formulation'")
            kw.pop("formulation")
            return ex.run_rayleigh_suite(spec=spec, **kw)
        return ex.run_rayleigh_table(order=cfg["s"], p=cfg["p"], d=cfg["d"], spec=spec, **kw)
    if name == "timestep-scaling":
        return ex.run_timestep_study(cfg["parts"], cfg["n_perturbations"], cfg["seed"],
                                     cfg["n_elements"], cfg["rho_max"], cfg["beta_sweep"], jobs,
                                     cfg["max_method"], cfg["min_method"])
    if name == "convergence":
        return ex.run_convergence_study(cfg["parts"], cfg["p"], cfg["meshes"], cfg["safety"],
                                        cfg["rho_max"], jobs, energy_log=cfg["energy_log"])
    if name == "quad-check":
        return run_quad_check(cfg)
    raise ConfigError(f"unknown experiment {name!r}")


def _all(values):
    return None if values == ["all"] else values


def run_quad_check(cfg: RunConfig) -> ex.ExperimentReport:
    """Quadrature on the translated reference cut-out with area and closure checks.

    Optional dumps: quadrature points and the assembled ``K``/``M`` in COO form.
    """
    p, n = cfg["p"], cfg["n_elements"]
    if cfg["tag"] not in BOUNDARY_TAGS:
        raise ConfigError(f"tag must be one of {BOUNDARY_TAGS}")
    basis = build_open_uniform_basis([n, n], p, [[0.0, 1.0], [0.0, 1.0]])
    domain = make_reference_cutout_domain((cfg["shift_x"], cfg["shift_y"]), tag=cfg["tag"],
                                          h=basis.h)
    quad = build_cut_quadrature(domain, BackgroundMesh.from_basis(basis), p,
                                rho_max=cfg["rho_max"])
    area = sum(float(w.sum()) for _, w in quad.volume.values())
    exact = 1.0 - reference_cutout_area()
    closure = np.zeros(2)
    perimeter = 0.0
    for r in quad.surface.values():
        closure += r.weights @ r.normals
        perimeter += float(r.weights.sum())
    chi_min = min_cut_chi(compute_cut_metrics(quad, dirichlet_tags=BOUNDARY_TAGS), quad)
    rep = ex.ExperimentReport("quad-check", dict(cfg.values))
    rep.rows.append({"n_elements": n, "p": p, "rho_max": cfg["rho_max"],
                     "shift_x": cfg["shift_x"], "shift_y": cfg["shift_y"],
                     "cut_elements": int(len(quad.cut_elements)), "area": area,
                     "exact_area": exact, "perimeter": perimeter,
                     "closure": float(np.linalg.norm(closure)), "chi_min": chi_min})
    tol = cfg["area_tolerance"]
    rep.verdicts.append(ex.Verdict("area", abs(area - exact) <= tol, abs(area - exact),
                                   f"<= {tol}"))
    rep.verdicts.append(ex.Verdict("closure", float(np.linalg.norm(closure)) <= 1e-10,
                                   float(np.linalg.norm(closure)), "<= 1e-10"))
    if cfg["dump_quadrature"]:
        cols = ("x", "y", "weight", "kind", "tag")
        rep.series["quadrature.csv"] = (cols, [dict(zip(cols, r)) for r in quadrature_rows(quad)])
    if cfg["dump_matrices"]:
        if cfg["boundary"] not in BOUNDARY_METHODS:
            raise ConfigError(f"boundary must be one of {BOUNDARY_METHODS}")
        spec = FormulationSpec(order=cfg["s"], boundary=cfg["boundary"],
                               mass=cfg["mass_treatment"], ghost_mass=cfg["ghost_mass"],
                               **_spec_constants(cfg))
        sys_ = combine(assemble_terms(basis, quad, extract_ghost_faces(quad.mesh), cfg["s"]),
                       spec, with_load=False)
        for label, mat in (("stiffness", sys_.stiffness), ("mass", sys_.mass)):
            cols = ("row", "col", "value")
            rep.series[f"{label}_coo.csv"] = (cols, [dict(zip(cols, r)) for r in coo_rows(mat)])
    return rep


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="cutiga",
                                 description="Critical time steps of immersed spline discretizations.")
    sub = ap.add_subparsers(dest="experiment", metavar="experiment")
    for name in EXPERIMENT_DEFAULTS:
        sp_ = sub.add_parser(name, help=f"run the {name} experiment")
        sp_.add_argument("--config", help="flat key = value file")
        sp_.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                         help="override one setting (repeatable)")
        sp_.add_argument("--print-defaults", action="store_true",
                         help="print every setting with its default and exit")
        sp_.add_argument("--jobs", type=int, default=os.cpu_count() or 1,
                         help="worker processes (default: logical cores)")
        sp_.add_argument("--out", help="output directory (overrides CUTIGA_OUT and config)")
        sp_.add_argument("-v", "--verbose", action="store_true")
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code == 0 else 1
    if args.experiment is None:
        ap.print_usage(sys.stderr)
        print("cutiga: error: an experiment is required", file=sys.stderr)
        return 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.print_defaults:
            sys.stdout.write(RunConfig(args.experiment).snapshot())
            return 0
        values = {}
        if args.config:
            try:
                with open(args.config) as fh:
                    values.update(parse_config_text(fh.read(), args.experiment))
            except OSError as exc:
                raise ConfigError(f"cannot read config {args.config!r}: {exc.strerror}") from None
        values.update(parse_overrides(args.set))
        if os.environ.get("CUTIGA_OUT"):
            values["out"] = os.environ["CUTIGA_OUT"]
        if args.out:
            values["out"] = args.out
        cfg = RunConfig(args.experiment, values)
        if args.jobs < 1:
            raise ConfigError("--jobs must be at least 1")
        report = run_experiment(cfg, args.jobs)
        write_outputs(cfg["out"], report_files(report, cfg))
    except Exception as exc:  # noqa: BLE001 - every failure maps to exit 1
        print(f"cutiga: error: {exc}", file=sys.stderr)
        return 1
    for v in report.verdicts:
        print(f"{'PASS' if v.passed else 'FAIL'} {v.name}: {v.value:.6g} ({v.threshold})")
    print(f"{len(report.rows)} rows, {len(report.rejected)} rejected, "
          f"{report.seconds:.1f} s -> {cfg['out']}")
    return 0 if report.passed else 2


if __name__ == "__main__":
    sys.exit(main())
