"""Command line interface and the experiment pipeline.

Every command writes plain files: JSON for structured results, CSV with a
fixed column order and 17 significant digits for tables, SVG for plots.
``run`` executes a configured pipeline and records a manifest with the
versions, seeds, tolerances and a SHA-256 hash of every file it wrote.
Orbit ensembles honour the ANOSOVLAB_WORKERS environment variable; the
numbers do not depend on it.
"""

import argparse
import copy
import csv
import hashlib
import json
import math
import platform
import sys
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np
import scipy

from . import __version__
from .errors import AnosovLabError, ConfigError, StageError
from .hyperbolic_core import BOLZA_SYSTOLE, bolza_group, classes_to_json, enumerate_primitive_classes
from .mesh_calculus import (KSection, build_bolza_mesh, dbar_operator, eta_plus_operator,
                            harmonic_one_form_basis, kernel_basis, mu_operators)
from .orbits_suspension import (CatMapSuspension, cat_fixed_count, suspension_invariants,
                                weighted_orbit_average, zeta_partial)
from .plots import Plot, Series, write_svg
from .resonance_helicity import (ClassificationInput, classify, helicity, resonant_recurrence,
                                 resonant_seeds, ruelle_order)
from .thermostat_dynamics import (A_TOL, SRB_DT, T_BURN, VectorFieldSpec, GaussianThermostat,
                                  Geodesic, HoloThermostat, SMPoint, XsFamily, a_function, birkhoff,
                                  entropy_production, integrate, random_phase_points,
                                  riccati_limits, winding_cycles)
from .vortex_solver import VortexSolution, holomorphic_differentials, solve_vortex

FLOAT_FORMAT = ".17g"
RICCATI_C = 0.1
STAGE_ORDER = ("srb", "winding", "riccati", "resonant", "helicity", "helicity-scan", "classify")

DEFAULTS = {
    "spec": {"kind": "geodesic", "level": 2},
    "stages": ["winding", "helicity", "classify"],
    "budgets": {"T": 400.0, "n_orbits": 128, "seed": 0, "dt": SRB_DT, "T_burn": T_BURN},
    "tolerances": {"k_sigma": 3.0, "riccati_c": RICCATI_C, "a_tol": A_TOL,
                   "residual_threshold": 1e-2},
    "riccati": {"n_points": 50, "T_relax": 20.0},
    "resonant": {"N": 16},
    "helicity": {"n_a": 256, "a_T": 40.0, "scan_s": [1.0, 2.0, 4.0, 8.0]},
    "out_dir": "anosovlab-out",
}

PRESETS = {
    "geodesic-baseline": {
        "spec": {"kind": "geodesic", "level": 2},
        "stages": ["srb", "winding", "helicity", "classify"],
    },
    "quasi-fuchsian": {
        "spec": {"kind": "quasi-fuchsian", "level": 3, "m": 2, "kernel_index": 0, "scale": 0.6},
        "stages": ["riccati", "winding", "helicity", "classify", "resonant"],
    },
}


# -- configuration -----------------------------------------------------------------

def load_schema():
    return json.loads(resources.files("anosovlab").joinpath("config_schema.json").read_text())


def _schema_error(err):
    where = "/".join(str(p) for p in err.absolute_path) or "<root>"
    if err.validator == "additionalProperties":
        extra = sorted(set(err.instance) - set(err.schema.get("properties", {})))
        name = ".".join([str(p) for p in err.absolute_path] + [extra[0]])
        return ConfigError(f"unknown config key {name!r}")
    return ConfigError(f"invalid config value at {where}: {err.message}")


def validate_config(data, schema=None):
    """Check a raw config mapping against the schema; raise ConfigError naming the first problem."""
    schema = load_schema() if schema is None else schema
    errors = sorted(jsonschema.Draft202012Validator(schema).iter_errors(data),
                    key=lambda e: (list(map(str, e.absolute_path)), e.validator))
    if errors:
        raise _schema_error(errors[0])


def validate_spec(data):
    schema = load_schema()
    sub = dict(schema["$defs"]["spec"], **{"$defs": schema["$defs"]})
    validate_config(data, sub)


@dataclass
class ExperimentConfig:
    spec: dict
    stages: list
    budgets: dict
    tolerances: dict
    riccati: dict
    resonant: dict
    helicity: dict
    out_dir: str
    preset: str = None
    base_dir: str = "."

    @classmethod
    def from_dict(cls, data, base_dir="."):
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        validate_config(data)
        merged = copy.deepcopy(DEFAULTS)
        preset = data.get("preset")
        for layer in (PRESETS.get(preset, {}), data):
            for key, val in layer.items():
                if key == "spec" and layer is data:
                    merged["spec"] = dict(val) if "kind" in val else dict(merged["spec"], **val)
                elif isinstance(val, dict):
                    merged[key] = dict(merged.get(key, {}), **val)
                elif key != "preset":
                    merged[key] = copy.deepcopy(val)
        return cls(merged["spec"], list(merged["stages"]), merged["budgets"],
                   merged["tolerances"], merged["riccati"], merged["resonant"],
                   merged["helicity"], merged["out_dir"], preset, str(base_dir))

    @classmethod
    def load(cls, path):
        path = Path(path)
        try:
            data = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: not valid JSON ({exc})") from exc
        return cls.from_dict(data, path.parent)

    def to_json(self):
        return {"preset": self.preset, "spec": self.spec, "stages": self.stages,
                "budgets": self.budgets, "tolerances": self.tolerances, "riccati": self.riccati,
                "resonant": self.resonant, "helicity": self.helicity}


# -- building meshes, solutions and specs ---------------------------------------------

class Workspace:
    """Lazily built mesh, vortex solution and vector field for one spec section."""

    def __init__(self, spec_cfg, base_dir="."):
        self.cfg = dict(spec_cfg)
        self.base_dir = Path(base_dir)
        self._mesh = self._solution = self._spec = None

    @property
    def kind(self):
        return self.cfg.get("kind", "geodesic")

    @property
    def mesh(self):
        if self._mesh is None:
            if "sol" in self.cfg:
                self._mesh = self.solution.mesh
            else:
                self._mesh = build_bolza_mesh(int(self.cfg.get("level", 2)))
        return self._mesh

    def solve(self, factor=1.0):
        """Vortex solution for the configured differential scaled by ``factor``."""
        mesh = self.mesh
        m = int(self.cfg.get("m", 2))
        if self.kind != "quasi-fuchsian":
            return solve_vortex(mesh, KSection(m, np.zeros(mesh.n_vertices, dtype=complex)))
        basis = holomorphic_differentials(mesh, m)
        idx = int(self.cfg.get("kernel_index", 0))
        if idx >= len(basis):
            raise ValueError(f"kernel_index {idx} out of range: {len(basis)} differentials")
        scale = float(self.cfg.get("scale", 0.6)) * factor
        return solve_vortex(mesh, KSection(m, scale * basis[idx].values))

    @property
    def solution(self):
        if self._solution is None:
            if "sol" in self.cfg:
                self._solution = load_solution(self.base_dir / self.cfg["sol"])
            else:
                self._solution = self.solve()
        return self._solution

    def coefficients(self):
        c = np.asarray(self.cfg.get("coefficients", [1.0, 0.0, 0.0, 0.0]), dtype=float)
        return harmonic_one_form_basis(self.mesh) @ c

    @property
    def spec(self):
        if self._spec is None:
            self._spec = self.build_spec()
        return self._spec

    def build_spec(self, solution=None):
        kind = self.kind
        if kind == "geodesic":
            return VectorFieldSpec(self.mesh, Geodesic())
        if kind == "gaussian":
            return VectorFieldSpec(self.mesh, GaussianThermostat(self.coefficients()))
        if kind == "xs":
            return VectorFieldSpec(self.mesh, XsFamily(self.coefficients(),
                                                       float(self.cfg.get("s", 0.1))))
        sol = self.solution if solution is None else solution
        return VectorFieldSpec(sol.mesh, HoloThermostat(sol))


def load_solution(path):
    data = json.loads(Path(path).read_text())
    return VortexSolution.from_json(data, build_bolza_mesh(int(data["level"])))


def load_spec_file(path):
    data = json.loads(Path(path).read_text())
    validate_spec(data)
    return Workspace(data, Path(path).parent)


# -- files -----------------------------------------------------------------------------

def format_value(v):
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format(float(v), FLOAT_FORMAT)
    return "" if v is None else str(v)


def write_csv(path, columns, rows):
    """CSV with the given column order; floats carry 17 significant digits."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([format_value(row[c]) for c in columns])
    return Path(path)


def read_csv(path):
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if math.isfinite(x) else None
    if isinstance(obj, complex):
        return [obj.real, obj.imag]
    return obj


def write_json(path, obj):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(_plain(obj), fh, indent=1, sort_keys=True)
        fh.write("\n")
    return Path(path)


def sha256(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def versions():
    return {"anosovlab": __version__, "python": platform.python_version(),
            "numpy": np.__version__, "scipy": scipy.__version__}


def write_manifest(out_dir, files, config=None, seeds=None, tolerances=None):
    """manifest.json listing every output with its SHA-256 and size."""
    out_dir = Path(out_dir)
    entries = [{"name": Path(f).name, "sha256": sha256(f), "bytes": Path(f).stat().st_size}
               for f in sorted(set(map(str, files)))]
    manifest = {"versions": versions(), "config": config, "seeds": seeds or {},
                "tolerances": tolerances or {}, "files": entries}
    return write_json(out_dir / "manifest.json", manifest)


# -- plots -------------------------------------------------------------------------------

def emit_plots(out_dir):
    """SVG plots for whichever result tables exist in ``out_dir``."""
    out_dir = Path(out_dir)
    written = []
    if (out_dir / "winding.csv").exists():
        rows = read_csv(out_dir / "winding.csv")
        plot = Plot("winding cycles on the harmonic basis", "basis form", "estimate")
        for direction in ("forward", "backward"):
            sel = [r for r in rows if r["direction"] == direction]
            plot.series.append(Series(direction, [float(r["index"]) for r in sel],
                                      [float(r["mean"]) for r in sel],
                                      [3 * float(r["stderr"]) for r in sel], "scatter"))
        written.append(write_svg(plot, out_dir / "winding.svg"))
    if (out_dir / "resonant.csv").exists():
        rows = read_csv(out_dir / "resonant.csv")
        plot = Plot("lowering-relation residual per mode", "mode k", "relative residual",
                    logy=True)
        for s in sorted({int(r["seed"]) for r in rows}):
            sel = [r for r in rows if int(r["seed"]) == s]
            plot.series.append(Series(f"seed {s}", [float(r["k"]) for r in sel],
                                      [float(r["residual"]) for r in sel], style="both"))
        written.append(write_svg(plot, out_dir / "resonant_residuals.svg"))
    if (out_dir / "helicity_scan.csv").exists():
        rows = read_csv(out_dir / "helicity_scan.csv")
        plot = Plot("scaled helicity along A(s) = s A", "s", "s * helicity")
        plot.series.append(Series("s H", [float(r["s"]) for r in rows],
                                  [float(r["s_helicity"]) for r in rows],
                                  [3 * float(r["s"]) * float(r["stderr"]) for r in rows], "both"))
        written.append(write_svg(plot, out_dir / "helicity_scan.svg"))
    return written


# -- pipeline stages --------------------------------------------------------------------

def _estimate_row(est, **extra):
    return dict(extra, mean=est.mean, stderr=est.stderr, n_orbits=est.n_orbits, T=est.T,
                seed=est.seed)


def _flow_kw(cfg):
    b = cfg.budgets
    return {"T": float(b["T"]), "n_orbits": int(b["n_orbits"]), "seed": int(b["seed"]),
            "T_burn": float(b["T_burn"]), "dt": float(b["dt"])}


EST_COLUMNS = ["mean", "stderr", "n_orbits", "T", "seed"]


def stage_srb(ws, cfg, state):
    e_plus, e_minus = entropy_production(ws.spec, **_flow_kw(cfg))
    rows = [_estimate_row(e_plus, quantity="e_plus"), _estimate_row(e_minus, quantity="e_minus")]
    k = cfg.tolerances["k_sigma"]
    state["srb"] = {"e_plus": e_plus.mean, "e_plus_stderr": e_plus.stderr,
                    "e_plus_positive": e_plus.mean > k * e_plus.stderr,
                    "e_plus_negative": e_plus.mean < -k * e_plus.stderr}
    return [write_csv(state["out"] / "srb.csv", ["quantity"] + EST_COLUMNS, rows)]


def stage_winding(ws, cfg, state):
    wp, wm, _, _ = winding_cycles(ws.spec, **_flow_kw(cfg))
    k = cfg.tolerances["k_sigma"]
    rows = []
    for direction, ests in (("forward", wp), ("backward", wm)):
        for i, est in enumerate(ests):
            rows.append(_estimate_row(est, direction=direction, index=i, zero=est.is_zero(k)))
    state["winding"] = {"w_plus_zero": all(e.is_zero(k) for e in wp),
                        "w_minus_zero": all(e.is_zero(k) for e in wm),
                        "w_plus": [e.mean for e in wp], "w_minus": [e.mean for e in wm]}
    return [write_csv(state["out"] / "winding.csv",
                      ["direction", "index"] + EST_COLUMNS + ["zero"], rows)]


def exact_riccati(spec, z, theta):
    """Closed-form (r^u, r^s) where one is known, else None."""
    if isinstance(spec.kind, Geodesic) and spec.time_change is None:
        return np.ones(len(z)), -np.ones(len(z))
    if isinstance(spec.kind, HoloThermostat) and spec.kind.solution.m == 2:
        v = spec.field().evaluate(np.asarray(z), np.asarray(theta))
        return 1.0 + 0.5 * v.vlam, -1.0 + 0.5 * v.vlam
    return None


def stage_riccati(ws, cfg, state):
    spec = ws.spec
    pts = random_phase_points(spec, int(cfg.riccati["n_points"]), int(cfg.budgets["seed"]))
    r_u, r_s = riccati_limits(spec, pts, float(cfg.riccati["T_relax"]))
    z = np.array([p.z for p in pts])
    th = np.array([p.theta for p in pts])
    exact = exact_riccati(spec, z, th)
    nan = np.full(len(pts), np.nan)
    eu, es = exact if exact is not None else (nan, nan)
    rows = [{"point": i, "z_re": z[i].real, "z_im": z[i].imag, "theta": th[i], "r_u": r_u[i],
             "r_u_exact": eu[i], "r_s": r_s[i], "r_s_exact": es[i]} for i in range(len(pts))]
    tol = max(1e-5, cfg.tolerances["riccati_c"] * spec.mesh.mesh_size)
    summary = {"n_points": len(pts), "tolerance": tol, "exact_form_known": exact is not None}
    if exact is not None:
        summary["max_error_u"] = float(np.max(np.abs(r_u - eu)))
        summary["max_error_s"] = float(np.max(np.abs(r_s - es)))
        summary["exact_form_ok"] = max(summary["max_error_u"], summary["max_error_s"]) < tol
    state["riccati"] = summary
    return [write_csv(state["out"] / "riccati.csv",
                      ["point", "z_re", "z_im", "theta", "r_u", "r_u_exact", "r_s", "r_s_exact"],
                      rows)]


def stage_resonant(ws, cfg, state):
    if ws.kind not in ("geodesic", "quasi-fuchsian") or int(ws.cfg.get("m", 2)) != 2:
        raise ValueError("resonant recurrences need the geodesic flow or a degree-2 thermostat")
    sol = ws.solution
    N = int(cfg.resonant["N"])
    threshold = float(cfg.tolerances["residual_threshold"])
    kernel = resonant_seeds(sol)
    rows, reports = [], []
    for j, seed in enumerate(kernel.basis):
        _, rep = resonant_recurrence(seed, sol, N, threshold=threshold, strict=False)
        reports.append(rep)
        for k in range(1, N + 1):
            rows.append({"seed": j, "k": k, "norm": rep.norms[k - 1],
                         "residual": rep.residuals[k - 1],
                         "growth_ok": bool(rep.growth_ok[k - 3]) if k >= 3 else True})
    state["resonant"] = {
        "complex_dimension": kernel.dimension, "real_dimension": 2 * kernel.dimension,
        "singular_values": kernel.singular_values[:6], "gap": kernel.gap, "N": N,
        "Z": reports[0].Z if reports else None,
        "slope_bound": reports[0].slope_bound if reports else None,
        "slopes": [r.slope for r in reports],
        "max_residual": max((float(np.max(r.residuals)) for r in reports), default=0.0),
        "effective_N": min((r.effective_N for r in reports), default=N),
        "growth_ok": all(bool(np.all(r.growth_ok)) for r in reports),
        "threshold": threshold,
    }
    return [write_csv(state["out"] / "resonant.csv",
                      ["seed", "k", "norm", "residual", "growth_ok"], rows)]


HELICITY_COLUMNS = ["mean", "stderr", "numerator", "denominator", "entropy_production", "volume",
                    "a2_mean", "n_orbits", "T", "seed"]


def _helicity_row(est, **extra):
    return dict(extra, mean=est.mean, stderr=est.stderr, numerator=est.numerator,
                denominator=est.denominator, entropy_production=est.entropy_production,
                volume=est.volume, a2_mean=est.a2_mean, n_orbits=est.n_orbits, T=est.T,
                seed=est.seed)


def _helicity(spec, cfg):
    kw = _flow_kw(cfg)
    return helicity(spec, kw.pop("T"), kw.pop("n_orbits"), kw.pop("seed"),
                    n_a=int(cfg.helicity["n_a"]), a_T=float(cfg.helicity["a_T"]),
                    a_tol=float(cfg.tolerances["a_tol"]), k=float(cfg.tolerances["k_sigma"]), **kw)


def stage_helicity(ws, cfg, state):
    est = _helicity(ws.spec, cfg)
    k = cfg.tolerances["k_sigma"]
    state["helicity"] = {"value": est.mean, "stderr": est.stderr, "zero": est.is_zero(k),
                         "geodesic_reference": 1.0 / (8 * math.pi ** 2)}
    return [write_csv(state["out"] / "helicity.csv", HELICITY_COLUMNS, [_helicity_row(est)])]


def stage_helicity_scan(ws, cfg, state):
    if ws.kind != "quasi-fuchsian" or "sol" in ws.cfg:
        raise ValueError("the helicity scan re-solves the vortex equations for a quasi-Fuchsian spec")
    rows = []
    for s in cfg.helicity["scan_s"]:
        est = _helicity(ws.build_spec(ws.solve(float(s))), cfg)
        rows.append(_helicity_row(est, s=float(s), s_helicity=float(s) * est.mean))
    vals = [r["s_helicity"] for r in rows]
    state["helicity_scan"] = {"s": [r["s"] for r in rows], "s_helicity": vals,
                              "non_increasing": all(b <= a for a, b in zip(vals, vals[1:]))}
    return [write_csv(state["out"] / "helicity_scan.csv",
                      ["s", "s_helicity"] + HELICITY_COLUMNS, rows)]


def stage_classify(ws, cfg, state):
    w = state["winding"]
    hel = state.get("helicity")
    both_zero = w["w_plus_zero"] and w["w_minus_zero"]
    b1 = int(harmonic_one_form_basis(ws.mesh).shape[1])
    case = ClassificationInput(w["w_plus_zero"], w["w_minus_zero"],
                               hel["zero"] if both_zero else None, b1)
    row = classify(case)
    row = dict(row, w_plus_zero=case.w_plus_zero, w_minus_zero=case.w_minus_zero,
               helicity_zero=case.helicity_zero, b1=b1, ruelle_order=ruelle_order(row["m10"]),
               euler_characteristic=2 - 2 * (b1 // 2))
    state["classify"] = row
    return [write_csv(state["out"] / "classify.csv",
                      ["w_plus_zero", "w_minus_zero", "helicity_zero", "b1", "res01_d_nontrivial",
                       "m10", "res1_d_nontrivial", "m1", "ruelle_order", "euler_characteristic"],
                      [row])]


STAGES = {"srb": stage_srb, "winding": stage_winding, "riccati": stage_riccati,
          "resonant": stage_resonant, "helicity": stage_helicity,
          "helicity-scan": stage_helicity_scan, "classify": stage_classify}


def plan_stages(requested):
    """Requested stages in execution order, with winding added ahead of classify."""
    want = set(requested)
    if "classify" in want:
        want.add("winding")
    return [s for s in STAGE_ORDER if s in want]


@dataclass
class ArtifactBundle:
    out_dir: Path
    files: list
    summary: dict = field(default_factory=dict)
    manifest: Path = None


def _run_stage(name, fn, *args):
    try:
        return fn(*args)
    except AnosovLabError as exc:
        if isinstance(exc, StageError):
            raise
        raise StageError(name, exc) from exc
    except (ValueError, ArithmeticError, np.linalg.LinAlgError) as exc:
        raise StageError(name, exc) from exc


def run_pipeline(config, out_dir=None):
    """mesh -> (vortex) -> spec -> requested stages; CSV tables, plots, summary and manifest."""
    if not isinstance(config, ExperimentConfig):
        config = ExperimentConfig.from_dict(config)
    out = Path(out_dir if out_dir is not None else config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ws = Workspace(config.spec, config.base_dir)
    state = {"out": out}
    files = []
    _run_stage("mesh", lambda: ws.mesh)
    if ws.kind == "quasi-fuchsian" or "resonant" in config.stages:
        _run_stage("vortex", lambda: ws.solution)
    _run_stage("spec", lambda: ws.spec)
    for name in plan_stages(config.stages):
        if name == "classify":
            w = state["winding"]
            if w["w_plus_zero"] and w["w_minus_zero"] and "helicity" not in state:
                files += _run_stage("helicity", stage_helicity, ws, config, state)
        files += _run_stage(name, STAGES[name], ws, config, state)
    files += _run_stage("plots", emit_plots, out)
    summary = {k: v for k, v in state.items() if k != "out"}
    summary["mesh"] = {"level": ws.mesh.level, "n_vertices": ws.mesh.n_vertices,
                       "mesh_size": ws.mesh.mesh_size}
    files.append(write_json(out / "summary.json", summary))
    seeds = {"orbits": int(config.budgets["seed"]), "riccati_points": int(config.budgets["seed"]),
             "a_function_points": int(config.budgets["seed"])}
    manifest = write_manifest(out, files, config.to_json(), seeds, config.tolerances)
    return ArtifactBundle(out, files, summary, manifest)


# -- subcommands ----------------------------------------------------------------------------

def _out(args, name):
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out / name


def _config(args):
    return ExperimentConfig.load(args.config) if args.config else ExperimentConfig.from_dict({})


def _workspace(args, cfg):
    if getattr(args, "spec", None):
        return load_spec_file(args.spec)
    return Workspace(cfg.spec, cfg.base_dir)


def _budgets(args, cfg):
    b = dict(cfg.budgets)
    for key, attr in (("T", "T"), ("n_orbits", "n"), ("seed", "seed")):
        val = getattr(args, attr, None)
        if val is not None:
            b[key] = val
    return b


def _report(obj):
    print(json.dumps(_plain(obj), indent=1, sort_keys=True))


def cmd_mesh(args):
    mesh = build_bolza_mesh(args.level)
    path = Path(args.out) if args.out else _out(args, f"mesh_level{args.level}.json")
    write_json(path, mesh.to_json())
    _report({"level": mesh.level, "vertices": mesh.n_vertices, "edges": mesh.n_edges,
             "faces": mesh.n_faces, "euler_characteristic": mesh.euler_characteristic,
             "area": mesh.area(), "out": str(path)})


def cmd_orbits(args):
    classes = enumerate_primitive_classes(bolza_group(), args.max_length)
    path = Path(args.out) if args.out else _out(args, "classes.json")
    path.write_text(classes_to_json(classes) + "\n")
    _report({"n_classes": len(classes), "max_length": args.max_length, "out": str(path)})


def cmd_kernels(args):
    if args.sol:
        sol = load_solution(args.sol)
        mesh, u, lam2 = sol.mesh, sol.u.values, sol.lam2
    else:
        mesh, u, lam2 = build_bolza_mesh(args.level), None, None
    if args.op == "harmonic":
        harmonic_one_form_basis(mesh)
        sig = mesh._cache["harmonic_sv"]
        result = {"op": "harmonic", "dimension": 4, "singular_values": sig,
                  "gap": float(sig[3] / max(sig[4], 1e-300)) if len(sig) > 4 else None}
    else:
        ops = mu_operators(mesh, u, lam2)
        op = {"mu-minus": lambda: ops.minus(args.m), "mu-plus": lambda: ops.plus(args.m),
              "eta-minus": lambda: dbar_operator(ops.mesh, args.m),
              "eta-plus": lambda: eta_plus_operator(ops.mesh, args.m)}[args.op]()
        ker = kernel_basis(op)
        result = {"op": args.op, "m": args.m, "dimension": ker.dimension, "gap": ker.gap,
                  "singular_values": ker.singular_values[:8]}
    write_json(_out(args, "kernels.json"), result)
    _report(result)


def cmd_vortex(args):
    ws = Workspace({"kind": "quasi-fuchsian", "level": args.level, "m": args.m,
                    "kernel_index": args.kernel_index, "scale": args.scale})
    sol = ws.solution
    path = Path(args.out) if args.out else _out(args, "sol.json")
    write_json(path, sol.to_json())
    _report({"level": args.level, "m": sol.m, "max_curvature": sol.max_curvature,
             "min_curvature": float(np.min(sol.K.values)), "newton_steps": len(sol.history),
             "out": str(path)})


def cmd_flow(args):
    cfg = _config(args)
    ws = _workspace(args, cfg)
    b = _budgets(args, cfg)
    T = b["T"] if args.direction == "forward" else -b["T"]
    pts = random_phase_points(ws.spec, int(b["n_orbits"]), int(b["seed"]))
    rows, dumps = [], []
    for i, p in enumerate(pts):
        orb = integrate(ws.spec, p, T)
        end = orb.end
        rows.append({"orbit": i, "z0_re": p.z.real, "z0_im": p.z.imag, "theta0": p.theta,
                     "T": T, "z_re": end.z.real, "z_im": end.z.imag, "theta": end.theta})
        if args.dump:
            dumps.append({"times": orb.times, "z": [[c.real, c.imag] for c in orb.z],
                          "theta": orb.theta, "deck": [orb.deck[0], orb.deck[1]]})
    path = write_csv(_out(args, "flow.csv"),
                     ["orbit", "z0_re", "z0_im", "theta0", "T", "z_re", "z_im", "theta"], rows)
    if args.dump:
        write_json(args.dump, dumps)
    _report({"orbits": len(rows), "out": str(path)})


def cmd_srb(args):
    cfg = _config(args)
    ws = _workspace(args, cfg)
    b = _budgets(args, cfg)
    kw = {"T": float(b["T"]), "n_orbits": int(b["n_orbits"]), "seed": int(b["seed"]),
          "T_burn": float(b["T_burn"]), "dt": float(b["dt"])}
    if args.observable == "entropy":
        e_plus, e_minus = entropy_production(ws.spec, **kw)
        rows = [_estimate_row(e_plus, observable="e_plus", direction="forward"),
                _estimate_row(e_minus, observable="e_minus", direction="backward")]
    elif args.observable == "winding":
        wp, wm, _, _ = winding_cycles(ws.spec, **kw)
        rows = [_estimate_row(e, observable=f"winding:{i}", direction=d)
                for d, ests in (("forward", wp), ("backward", wm)) for i, e in enumerate(ests)]
    else:
        est = birkhoff(ws.spec, args.observable, direction=args.direction, **kw)
        rows = [_estimate_row(est, observable=args.observable, direction=args.direction)]
    path = write_csv(_out(args, "srb.csv"), ["observable", "direction"] + EST_COLUMNS, rows)
    _report({"rows": rows, "out": str(path)})


def cmd_riccati(args):
    cfg = _config(args)
    ws = _workspace(args, cfg)
    if args.n is not None:
        cfg.riccati["n_points"] = args.n
    if args.seed is not None:
        cfg.budgets["seed"] = args.seed
    state = {"out": Path(args.out_dir)}
    state["out"].mkdir(parents=True, exist_ok=True)
    stage_riccati(ws, cfg, state)
    _report(state["riccati"])


def cmd_afun(args):
    cfg = _config(args)
    ws = _workspace(args, cfg)
    b = _budgets(args, cfg)
    pts = random_phase_points(ws.spec, int(args.n or 16), int(b["seed"]))
    res = a_function(ws.spec, pts, args.T_afun, float(cfg.tolerances["a_tol"]))
    rows = [{"point": i, "z_re": p.z.real, "z_im": p.z.imag, "theta": p.theta, "a": a}
            for i, (p, a) in enumerate(zip(pts, res.values))]
    path = write_csv(_out(args, "afun.csv"), ["point", "z_re", "z_im", "theta", "a"], rows)
    _report({"tail_bound": res.tail_bound, "nu": res.nu, "T": res.T_cut, "out": str(path)})


def cmd_resonant(args):
    cfg = _config(args)
    cfg.resonant["N"] = args.N
    ws = Workspace({"kind": "quasi-fuchsian", "sol": str(Path(args.sol).resolve())})
    state = {"out": Path(args.out_dir)}
    state["out"].mkdir(parents=True, exist_ok=True)
    stage_resonant(ws, cfg, state)
    rows = read_csv(state["out"] / "resonant.csv")
    table = [{"seed": int(r["seed"]), "k": int(r["k"]), "norm": float(r["norm"]),
              "residual": float(r["residual"])} for r in rows]
    write_json(state["out"] / "resonant.json", dict(state["resonant"], table=table))
    _report(state["resonant"])


def cmd_helicity(args):
    cfg = _config(args)
    ws = _workspace(args, cfg)
    b = _budgets(args, cfg)
    cfg.budgets.update(b)
    state = {"out": Path(args.out_dir)}
    state["out"].mkdir(parents=True, exist_ok=True)
    stage_helicity(ws, cfg, state)
    write_json(state["out"] / "helicity.json", state["helicity"])
    _report(state["helicity"])


def _flag(text):
    t = str(text).strip().lower()
    if t in ("0", "zero", "false", "no"):
        return True
    if t in ("1", "nonzero", "non-zero", "true", "yes"):
        return False
    raise argparse.ArgumentTypeError(f"expected zero or nonzero, got {text!r}")


def cmd_classify(args):
    case = ClassificationInput(args.wplus, args.wminus, args.helicity, args.b1)
    row = classify(case)
    row["ruelle_order"] = ruelle_order(row["m10"])
    write_json(_out(args, "classify.json"), row)
    _report(row)


def cmd_suspension(args):
    susp = CatMapSuspension.parse(args.matrix)
    rows = [{"n": n, "fixed_points": cat_fixed_count(susp, n)} for n in range(1, args.n_max + 1)]
    path = write_csv(_out(args, "suspension.csv"), ["n", "fixed_points"], rows)
    inv = suspension_invariants(susp)
    write_json(_out(args, "suspension.json"), dict(inv, matrix=susp.A))
    _report(dict(inv, out=str(path)))


def cmd_zeta(args):
    classes = enumerate_primitive_classes(bolza_group(), args.L)
    Ls = [L for L in np.arange(math.ceil(BOLZA_SYSTOLE), math.floor(args.L) + 1, 1.0)]
    if not Ls or Ls[-1] != args.L:
        Ls.append(float(args.L))
    rows, prev = [], None
    for L in Ls:
        z = zeta_partial(classes, args.s, L, complete_to=args.L)
        rows.append({"L": float(L), "re": z.real, "im": z.imag,
                     "n_orbits": sum(c.length <= L for c in classes),
                     "tail_difference": abs(z - prev) if prev is not None else None})
        prev = z
    path = write_csv(_out(args, "zeta.csv"), ["L", "re", "im", "n_orbits", "tail_difference"], rows)
    _report({"s": args.s, "L": args.L, "value": rows[-1]["re"], "out": str(path)})


def cmd_orbit_average(args):
    mesh = build_bolza_mesh(args.level)
    classes = enumerate_primitive_classes(bolza_group(), args.T)
    res = weighted_orbit_average(classes, args.observable, args.psi, args.T, mesh=mesh,
                                 null_homologous=args.null_homologous)
    row = dict(res.to_json(), observable=args.observable, T=args.T)
    path = write_csv(_out(args, "orbit_average.csv"),
                     ["observable", "T", "mean", "spread", "n_classes", "weight"], [row])
    _report(dict(row, out=str(path)))


def cmd_run(args):
    if args.config:
        cfg = ExperimentConfig.load(args.config)
    else:
        cfg = ExperimentConfig.from_dict({"preset": args.preset or "geodesic-baseline"})
    if args.seed is not None:
        cfg.budgets["seed"] = args.seed
    out = args.out_dir if args.out_dir_given else cfg.out_dir
    bundle = run_pipeline(cfg, out)
    _report(dict(bundle.summary, manifest=str(bundle.manifest)))


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON experiment config")
    common.add_argument("--seed", type=int, default=None)
    common.add_argument("--out-dir", default=None)

    flow_opts = argparse.ArgumentParser(add_help=False)
    flow_opts.add_argument("--spec", help="JSON vector field spec")
    flow_opts.add_argument("--T", type=float, default=None)
    flow_opts.add_argument("--n", type=int, default=None)
    flow_opts.add_argument("--direction", choices=("forward", "backward"), default="forward")

    p = argparse.ArgumentParser(prog="anosovlab", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("mesh", parents=[common], help="build a Bolza mesh")
    s.add_argument("--level", type=int, default=3)
    s.add_argument("--out")
    s.set_defaults(func=cmd_mesh)

    s = sub.add_parser("orbits", parents=[common], help="primitive closed geodesics")
    s.add_argument("--max-length", type=float, default=6.0)
    s.add_argument("--out")
    s.set_defaults(func=cmd_orbits)

    s = sub.add_parser("kernels", parents=[common], help="numerical kernels of ladder operators")
    s.add_argument("--level", type=int, default=3)
    s.add_argument("--m", type=int, default=1)
    s.add_argument("--op", choices=("mu-minus", "mu-plus", "eta-minus", "eta-plus", "harmonic"),
                   default="mu-minus")
    s.add_argument("--sol", help="vortex solution JSON supplying metric and twist")
    s.set_defaults(func=cmd_kernels)

    s = sub.add_parser("vortex", parents=[common], help="solve the vortex equations")
    s.add_argument("--level", type=int, default=3)
    s.add_argument("--m", type=int, default=2)
    s.add_argument("--kernel-index", type=int, default=0)
    s.add_argument("--scale", type=float, default=0.6)
    s.add_argument("--out")
    s.set_defaults(func=cmd_vortex)

    s = sub.add_parser("flow", parents=[common, flow_opts], help="integrate orbits")
    s.add_argument("--dump", help="write full orbit samples to this JSON file")
    s.set_defaults(func=cmd_flow)

    s = sub.add_parser("srb", parents=[common, flow_opts], help="SRB averages")
    s.add_argument("--observable", default="entropy",
                   help="entropy, winding, or an observable name such as lambda or form:0")
    s.set_defaults(func=cmd_srb)

    s = sub.add_parser("riccati", parents=[common, flow_opts], help="Riccati solutions")
    s.set_defaults(func=cmd_riccati)

    s = sub.add_parser("afun", parents=[common, flow_opts], help="a-function by quadrature")
    s.add_argument("--T-afun", type=float, default=40.0)
    s.set_defaults(func=cmd_afun)

    s = sub.add_parser("resonant", parents=[common], help="resonant recurrences")
    s.add_argument("--sol", required=True)
    s.add_argument("--N", type=int, default=32)
    s.set_defaults(func=cmd_resonant)

    s = sub.add_parser("helicity", parents=[common, flow_opts], help="helicity estimate")
    s.set_defaults(func=cmd_helicity)

    s = sub.add_parser("classify", parents=[common], help="resonance multiplicities")
    s.add_argument("--wplus", type=_flag, required=True, help="zero or nonzero")
    s.add_argument("--wminus", type=_flag, required=True, help="zero or nonzero")
    s.add_argument("--helicity", type=_flag, default=None, help="zero or nonzero")
    s.add_argument("--b1", type=int, default=4)
    s.set_defaults(func=cmd_classify)

    s = sub.add_parser("suspension", parents=[common], help="cat-map suspension arithmetic")
    s.add_argument("--matrix", default="2,1,1,1")
    s.add_argument("--n-max", type=int, default=10)
    s.set_defaults(func=cmd_suspension)

    s = sub.add_parser("zeta", parents=[common], help="partial Ruelle zeta products")
    s.add_argument("--s", type=float, default=2.0)
    s.add_argument("--L", type=float, default=8.0)
    s.set_defaults(func=cmd_zeta)

    s = sub.add_parser("orbit-average", parents=[common], help="weighted closed-orbit averages")
    s.add_argument("--T", type=float, default=8.0)
    s.add_argument("--observable", default="harmonic:0")
    s.add_argument("--psi", type=float, default=-1.0, help="weight exponent per unit length")
    s.add_argument("--level", type=int, default=3)
    s.add_argument("--null-homologous", action="store_true")
    s.set_defaults(func=cmd_orbit_average)

    s = sub.add_parser("run", parents=[common], help="run an experiment pipeline")
    s.add_argument("--preset", choices=sorted(PRESETS))
    s.set_defaults(func=cmd_run)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    args.out_dir_given = args.out_dir is not None
    if args.out_dir is None:
        args.out_dir = "."
    try:
        args.func(args)
    except ConfigError as exc:
        print(f"anosovlab: config error: {exc}", file=sys.stderr)
        return 2
    except (AnosovLabError, ValueError, OSError) as exc:
        print(f"anosovlab: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
