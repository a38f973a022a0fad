"""Config-driven scenarios: strict YAML schema, engine dispatch, reports.

A scenario file is the unit of reproducibility: it names a geometry, the
engines to run, and the quadrature budget. Validation is strict (unknown
keys are rejected, errors name the offending field) and loading is
idempotent: serializing a loaded config and reloading it gives an
identical config.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field as dc_field
from pathlib import Path

import numpy as np
import yaml

from . import engines
from .constants import NATURAL, SI, PhysicalConstants
from .engines import (
    CrossEnergyResult,
    ElectricScenario,
    MagneticScenario,
    coulomb_cross_energy,
    reference_flux,
)
from .quadrature import QuadratureSpec
from .results import PhaseResult
from .sources import (
    CurrentLoop,
    FiniteSolenoid,
    IdealInfiniteSolenoid,
    PolylineCurrent,
    ToroidalCoil,
)
from .trajectories import (
    CircularOrbit,
    PiecewiseLinearLoop,
    PointCharge,
    StaticChargeConfig,
)

FIXTURE_ENV_VAR = "ABPHASE_FIXTURE_DIR"

MAGNETIC_METHODS = ("wilson", "flux", "overlap", "axis-reduction",
                    "ampere", "shell-linking")
ELECTRIC_METHODS = ("electric-potential", "electric-overlap")
ENERGY_METHODS = ("cross-energy",)


class ValidationError(ValueError):
    """Config rejected; the message names the offending field."""

    def __init__(self, path: str, message: str):
        self.path = path
        super().__init__(f"{path}: {message}")


# --------------------------------------------------------------------------
# schema walking helpers
# --------------------------------------------------------------------------


def _require_keys(d: dict, path: str, required: dict, optional: dict | None = None):
    optional = optional or {}
    if not isinstance(d, dict):
        raise ValidationError(path, f"expected a mapping, got {type(d).__name__}")
    known = set(required) | set(optional)
    for key in d:
        if key not in known:
            raise ValidationError(f"{path}.{key}", "unknown key (strict mode)")
    out = {}
    for key, check in required.items():
        if key not in d:
            raise ValidationError(f"{path}.{key}", "missing required key")
        out[key] = check(d[key], f"{path}.{key}")
    for key, check in optional.items():
        if key in d:
            out[key] = check(d[key], f"{path}.{key}")
    return out


def _number(v, path):
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ValidationError(path, f"expected a number, got {v!r}")
    return float(v)


def _positive(v, path):
    x = _number(v, path)
    if x <= 0:
        raise ValidationError(path, f"must be positive, got {x}")
    return x


def _integer(v, path):
    if isinstance(v, bool) or not isinstance(v, int):
        raise ValidationError(path, f"expected an integer, got {v!r}")
    return v


def _pos_int(v, path):
    x = _integer(v, path)
    if x <= 0:
        raise ValidationError(path, f"must be a positive integer, got {x}")
    return x


def _vec3(v, path):
    if (not isinstance(v, (list, tuple)) or len(v) != 3
            or any(isinstance(c, bool) or not isinstance(c, (int, float)) for c in v)):
        raise ValidationError(path, f"expected [x, y, z], got {v!r}")
    return [float(c) for c in v]


def _unit3(v, path):
    x = _vec3(v, path)
    n = math.sqrt(sum(c * c for c in x))
    if abs(n - 1.0) > 1e-9:
        raise ValidationError(path, f"must be a unit vector (|v| = {n:.6g})")
    return [c / n for c in x]


def _string(v, path):
    if not isinstance(v, str):
        raise ValidationError(path, f"expected a string, got {v!r}")
    return v


def _enum(options):
    def check(v, path):
        if v not in options:
            raise ValidationError(path, f"must be one of {sorted(options)}, got {v!r}")
        return v
    return check


# --------------------------------------------------------------------------
# section validators
# --------------------------------------------------------------------------

_SOURCE_SCHEMAS = {
    "ideal_infinite_solenoid": dict(
        axis_point=_vec3, axis_dir=_unit3, radius=_positive, total_flux=_number,
    ),
    "finite_solenoid": dict(
        center=_vec3, axis_dir=_unit3, radius=_positive, length=_positive,
        n_loops=_pos_int, loop_current=_number,
    ),
    "toroidal_coil": dict(
        center=_vec3, plane_normal=_unit3, major_radius=_positive,
        minor_radius=_positive, n_turns=_pos_int, current=_number,
    ),
    "current_loop": dict(
        center=_vec3, normal=_unit3, radius=_positive, current=_number,
    ),
    "polyline_current": dict(
        vertices=lambda v, p: [_vec3(x, f"{p}[{i}]") for i, x in enumerate(v)],
        current=_number,
    ),
}


def _validate_source(d, path):
    if not isinstance(d, dict) or "type" not in d:
        raise ValidationError(f"{path}.type", "missing source type")
    stype = d["type"]
    if stype not in _SOURCE_SCHEMAS:
        raise ValidationError(f"{path}.type",
                              f"unknown source type {stype!r}; "
                              f"one of {sorted(_SOURCE_SCHEMAS)}")
    schema = dict(_SOURCE_SCHEMAS[stype])
    optional = {}
    if stype == "polyline_current":
        optional["closed"] = lambda v, p: v if isinstance(v, bool) else (
            _ for _ in ()).throw(ValidationError(p, "expected a boolean"))
    body = {k: v for k, v in d.items() if k != "type"}
    out = _require_keys(body, path, schema, optional)
    out["type"] = stype
    return out


_TRAJECTORY_SCHEMAS = {
    "circular_orbit": (
        dict(charge=_number, center=_vec3, normal=_unit3,
             radius=_positive, period=_positive),
        dict(windings=lambda v, p: _integer(v, p)),
    ),
    "piecewise_linear_loop": (
        dict(charge=_number,
             vertices=lambda v, p: [_vec3(x, f"{p}[{i}]") for i, x in enumerate(v)]),
        dict(durations=lambda v, p: [_positive(x, f"{p}[{i}]") for i, x in enumerate(v)]),
    ),
}


def _validate_trajectory(d, path):
    if not isinstance(d, dict) or "type" not in d:
        raise ValidationError(f"{path}.type", "missing trajectory type")
    ttype = d["type"]
    if ttype not in _TRAJECTORY_SCHEMAS:
        raise ValidationError(f"{path}.type",
                              f"unknown trajectory type {ttype!r}")
    required, optional = _TRAJECTORY_SCHEMAS[ttype]
    body = {k: v for k, v in d.items() if k != "type"}
    out = _require_keys(body, path, required, optional)
    out["type"] = ttype
    if ttype == "circular_orbit" and out.get("windings", 1) == 0:
        raise ValidationError(f"{path}.windings", "must be nonzero")
    return out


def _validate_charges(d, path):
    def charge_item(v, p):
        return _require_keys(v, p, dict(charge=_number, position=_vec3))

    out = _require_keys(
        d, path,
        dict(
            external=lambda v, p: [charge_item(x, f"{p}[{i}]") for i, x in enumerate(v)],
            test=charge_item,
            dwell_time=_positive,
        ),
    )
    if not out["external"]:
        raise ValidationError(f"{path}.external", "need at least one external charge")
    return out


def _validate_pair(d, path):
    return _require_keys(
        d, path,
        dict(q1=_number, x1=_vec3, q2=_number, x2=_vec3),
    )


def _validate_quadrature(d, path):
    return _require_keys(
        d, path, {},
        dict(rel_tol=_positive, abs_tol=_positive, max_subdivisions=_pos_int,
             truncation_radius=_positive, exclusion_radius=_positive),
    )


def _validate_engine_options(d, path):
    return _require_keys(
        d, path, {},
        dict(
            shell_grid=_pos_int,
            n_loop_points=_pos_int,
            n_bands=_pos_int,
            trace_rel_tol=_positive,
            closure_tol=_positive,
            max_arclength=_positive,
        ),
    )


def _validate_sweep(d, path):
    out = _require_keys(
        d, path,
        dict(
            parameter=_string,
            values=lambda v, p: (
                [_number(x, f"{p}[{i}]") for i, x in enumerate(v)]
                if isinstance(v, list) else
                (_ for _ in ()).throw(ValidationError(p, "expected a list"))
            ),
        ),
    )
    if not out["values"]:
        raise ValidationError(f"{path}.values", "sweep values must be non-empty")
    return out


# --------------------------------------------------------------------------
# ScenarioConfig
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class ScenarioConfig:
    """A validated scenario; ``data`` is the canonical dict (defaults
    applied), which serializes back to an identical config."""

    data: dict

    @property
    def name(self) -> str:
        return self.data["name"]

    @property
    def kind(self) -> str:
        return self.data["kind"]

    @property
    def methods(self) -> list[str]:
        return list(self.data["methods"])

    @property
    def constants(self) -> PhysicalConstants:
        return SI if self.data["units"] == "si" else NATURAL

    def quadrature_spec(self, rel_tol=None, threads=None) -> QuadratureSpec:
        q = dict(self.data.get("quadrature", {}))
        if rel_tol is not None:
            q["rel_tol"] = rel_tol
        if threads is not None:
            q["threads"] = threads
        return QuadratureSpec(**q)

    def build_source(self):
        d = self.data.get("source")
        if d is None:
            raise ValidationError("source", "magnetic scenario needs a source")
        kw = {k: v for k, v in d.items() if k != "type"}
        for key in ("axis_point", "axis_dir", "center", "plane_normal", "normal"):
            if key in kw:
                kw[key] = np.array(kw[key])
        if "vertices" in kw:
            kw["vertices"] = np.array(kw["vertices"])
        cls = {
            "ideal_infinite_solenoid": IdealInfiniteSolenoid,
            "finite_solenoid": FiniteSolenoid,
            "toroidal_coil": ToroidalCoil,
            "current_loop": CurrentLoop,
            "polyline_current": PolylineCurrent,
        }[d["type"]]
        return cls(**kw)

    def build_trajectory(self):
        d = self.data.get("trajectory")
        if d is None:
            raise ValidationError("trajectory", "magnetic scenario needs a trajectory")
        kw = {k: v for k, v in d.items() if k != "type"}
        for key in ("center", "normal"):
            if key in kw:
                kw[key] = np.array(kw[key])
        if "vertices" in kw:
            kw["vertices"] = np.array(kw["vertices"])
        if "durations" in kw:
            kw["durations"] = np.array(kw["durations"])
        cls = {
            "circular_orbit": CircularOrbit,
            "piecewise_linear_loop": PiecewiseLinearLoop,
        }[d["type"]]
        return cls(**kw)

    def build_charges(self) -> StaticChargeConfig:
        d = self.data.get("charges")
        if d is None:
            raise ValidationError("charges", "electric scenario needs charges")
        return StaticChargeConfig(
            external_charges=tuple(
                PointCharge(c["charge"], np.array(c["position"]))
                for c in d["external"]
            ),
            test_charge=PointCharge(d["test"]["charge"], np.array(d["test"]["position"])),
            dwell_time=d["dwell_time"],
        )

    def serialize(self) -> str:
        return yaml.safe_dump(self.data, sort_keys=True)


def validate_config(raw: dict) -> ScenarioConfig:
    """Validate a raw mapping into a canonical ScenarioConfig."""
    top = _require_keys(
        raw, "scenario",
        dict(
            name=_string,
            kind=_enum({"magnetic", "electric", "energy-identity"}),
            methods=lambda v, p: (
                [_string(x, f"{p}[{i}]") for i, x in enumerate(v)]
                if isinstance(v, list) and v else
                (_ for _ in ()).throw(ValidationError(p, "expected a non-empty list"))
            ),
        ),
        dict(
            description=_string,
            units=_enum({"si", "natural"}),
            source=_validate_source,
            trajectory=_validate_trajectory,
            charges=_validate_charges,
            pair=_validate_pair,
            quadrature=_validate_quadrature,
            engine=_validate_engine_options,
            sweep=_validate_sweep,
        ),
    )
    top.setdefault("units", "natural")

    kind = top["kind"]
    allowed = {
        "magnetic": MAGNETIC_METHODS,
        "electric": ELECTRIC_METHODS,
        "energy-identity": ENERGY_METHODS,
    }[kind]
    for m in top["methods"]:
        if m not in allowed:
            raise ValidationError(
                "methods", f"{m!r} is not valid for a {kind} scenario "
                f"(allowed: {list(allowed)})")
    if kind == "magnetic":
        for section in ("source", "trajectory"):
            if section not in top:
                raise ValidationError(section, f"required for kind={kind}")
    elif kind == "electric":
        if "charges" not in top:
            raise ValidationError("charges", "required for kind=electric")
    else:
        if "pair" not in top:
            raise ValidationError("pair", "required for kind=energy-identity")

    if "sweep" in top:
        _resolve_sweep_path(top, top["sweep"]["parameter"])  # raises if invalid

    return ScenarioConfig(data=top)


def load_scenario(path) -> ScenarioConfig:
    """Load and validate a scenario file."""
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ValidationError(str(path), f"cannot read file: {exc}") from exc
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f" at line {mark.line + 1}, column {mark.column + 1}" if mark else ""
        raise ValidationError(str(path), f"parse error{where}: {exc}") from exc
    if not isinstance(raw, dict):
        raise ValidationError(str(path), "top level must be a mapping")
    return validate_config(raw)


def _resolve_sweep_path(data: dict, dotted: str):
    """Check a sweep parameter path points at a numeric field."""
    parts = dotted.split(".")
    node = data
    for part in parts[:-1]:
        if not isinstance(node, dict) or part not in node:
            raise ValidationError(f"sweep.parameter", f"path {dotted!r} not found")
        node = node[part]
    leaf = parts[-1]
    if not isinstance(node, dict) or leaf not in node:
        raise ValidationError("sweep.parameter", f"path {dotted!r} not found")
    if isinstance(node[leaf], bool) or not isinstance(node[leaf], (int, float)):
        raise ValidationError("sweep.parameter",
                              f"path {dotted!r} is not a numeric field")
    return parts


# --------------------------------------------------------------------------
# running
# --------------------------------------------------------------------------


@dataclass
class MethodRecord:
    method: str
    phase_rad: float
    phase_normalized: float
    err_estimate: float
    n_evals: int
    wall_ms: float
    converged: bool
    error: str | None = None
    diagnostics: dict = dc_field(default_factory=dict)


@dataclass
class RunReport:
    scenario: str
    kind: str
    reference: float
    records: list[MethodRecord]
    sweep_value: float | None = None

    @property
    def pairwise_deviations(self) -> dict[str, float]:
        """|normalized_i - normalized_j| for every successful pair;
        recomputable from the records alone."""
        ok = [r for r in self.records if r.error is None]
        out = {}
        for i, a in enumerate(ok):
            for b in ok[i + 1:]:
                out[f"{a.method}|{b.method}"] = abs(
                    a.phase_normalized - b.phase_normalized)
        return out

    @property
    def all_converged(self) -> bool:
        return all(r.converged and r.error is None for r in self.records)


def _run_magnetic(cfg: ScenarioConfig, spec, diagnostics=False):
    source = cfg.build_source()
    trajectory = cfg.build_trajectory()
    scen = MagneticScenario(source, trajectory, cfg.constants)
    opts = cfg.data.get("engine", {})
    ref_flux = reference_flux(source, cfg.constants)
    reference = trajectory.q * ref_flux / cfg.constants.hbar

    def shell(s, sp):
        kw = {}
        if "shell_grid" in opts:
            kw["n_grid"] = opts["shell_grid"]
        if "trace_rel_tol" in opts:
            kw["trace_rel_tol"] = opts["trace_rel_tol"]
        if "closure_tol" in opts:
            kw["closure_tol"] = opts["closure_tol"]
        if "max_arclength" in opts:
            kw["max_arclength"] = opts["max_arclength"]
        return engines.shell_linking_phase(s, sp, diagnostics=diagnostics, **kw)

    dispatch = {
        "wilson": engines.wilson_loop_phase,
        "flux": lambda s, sp: engines.flux_phase(
            s, sp, n_loop_points=opts.get("n_loop_points", 256),
            n_bands=opts.get("n_bands", 8)),
        "overlap": lambda s, sp: engines.field_overlap_phase(
            s, sp, diagnostics=diagnostics),
        "axis-reduction": engines.solenoid_axis_reduction_phase,
        "ampere": engines.ampere_reduction_phase,
        "shell-linking": shell,
    }
    return scen, dispatch, reference


def run_scenario(cfg: ScenarioConfig, *, rel_tol=None, threads=None,
                 diagnostics=False) -> RunReport:
    """Run every requested method; engine failures are recorded per
    method and do not abort the others."""
    spec = cfg.quadrature_spec(rel_tol=rel_tol, threads=threads)
    records: list[MethodRecord] = []

    if cfg.kind == "magnetic":
        scen, dispatch, reference = _run_magnetic(cfg, spec, diagnostics)
        for m in cfg.methods:
            records.append(_run_method(m, dispatch[m], scen, spec, reference))
    elif cfg.kind == "electric":
        scen = ElectricScenario(cfg.build_charges(), cfg.constants)
        reference = engines.electric_potential_phase(scen).phase
        dispatch = {
            "electric-potential": lambda s, sp: engines.electric_potential_phase(s),
            "electric-overlap": engines.electric_field_overlap_phase,
        }
        for m in cfg.methods:
            records.append(_run_method(m, dispatch[m], scen, spec, reference))
    else:  # energy-identity
        pair = cfg.data["pair"]
        t0 = time.perf_counter()
        try:
            res: CrossEnergyResult = coulomb_cross_energy(
                pair["q1"], np.array(pair["x1"]),
                pair["q2"], np.array(pair["x2"]), spec)
            wall = 1e3 * (time.perf_counter() - t0)
            reference = res.analytic
            for label, value in (("cross_energy_direct", res.direct),
                                 ("cross_energy_subtracted", res.subtracted)):
                records.append(MethodRecord(
                    method=label, phase_rad=value,
                    phase_normalized=value / reference if reference else float("nan"),
                    err_estimate=res.error, n_evals=res.n_evaluations,
                    wall_ms=wall / 2.0, converged=res.converged,
                ))
        except Exception as exc:  # recorded, not raised
            wall = 1e3 * (time.perf_counter() - t0)
            reference = float("nan")
            records.append(MethodRecord(
                method="cross-energy", phase_rad=float("nan"),
                phase_normalized=float("nan"), err_estimate=float("nan"),
                n_evals=0, wall_ms=wall, converged=False, error=str(exc),
            ))

    return RunReport(scenario=cfg.name, kind=cfg.kind,
                     reference=reference, records=records)


def _run_method(name, fn, scen, spec, reference) -> MethodRecord:
    t0 = time.perf_counter()
    try:
        r: PhaseResult = fn(scen, spec)
        wall = 1e3 * (time.perf_counter() - t0)
        norm = r.phase / reference if reference not in (0.0,) and math.isfinite(reference) \
            else float("nan")
        return MethodRecord(
            method=name, phase_rad=r.phase, phase_normalized=norm,
            err_estimate=r.abs_error_estimate, n_evals=r.n_evaluations,
            wall_ms=wall, converged=r.converged, diagnostics=dict(r.diagnostics),
        )
    except Exception as exc:
        wall = 1e3 * (time.perf_counter() - t0)
        return MethodRecord(
            method=name, phase_rad=float("nan"), phase_normalized=float("nan"),
            err_estimate=float("nan"), n_evals=0, wall_ms=wall,
            converged=False, error=f"{type(exc).__name__}: {exc}",
        )


def run_sweep(cfg: ScenarioConfig, *, rel_tol=None, threads=None,
              diagnostics=False) -> list[RunReport]:
    """Run the scenario once per sweep value; per-row failures are
    recorded in that row's report and the sweep continues."""
    if "sweep" not in cfg.data:
        raise ValidationError("sweep", "scenario has no sweep section")
    parts = _resolve_sweep_path(cfg.data, cfg.data["sweep"]["parameter"])
    reports = []
    for value in cfg.data["sweep"]["values"]:
        import copy

        data = copy.deepcopy(cfg.data)
        node = data
        for part in parts[:-1]:
            node = node[part]
        leaf = parts[-1]
        node[leaf] = int(value) if isinstance(node[leaf], int) and float(value).is_integer() \
            else float(value)
        data.pop("sweep")
        row_cfg = validate_config(data)
        report = run_scenario(row_cfg, rel_tol=rel_tol, threads=threads,
                              diagnostics=diagnostics)
        report.sweep_value = float(value)
        reports.append(report)
    return reports


def sweep_convergence_diagnostics(reports: list[RunReport]) -> dict[str, dict]:
    """Per-method monotonicity of |normalized - 1| along the sweep."""
    by_method: dict[str, list[tuple[float, float]]] = {}
    for rep in reports:
        for rec in rep.records:
            if rec.error is None and math.isfinite(rec.phase_normalized):
                by_method.setdefault(rec.method, []).append(
                    (rep.sweep_value, rec.phase_normalized))
    out = {}
    for method, series in by_method.items():
        devs = [abs(v - 1.0) for _, v in sorted(series)]
        out[method] = {
            "final_deviation": devs[-1] if devs else float("nan"),
            "monotone_decreasing": all(
                b <= a * (1 + 1e-12) for a, b in zip(devs, devs[1:])),
        }
    return out
