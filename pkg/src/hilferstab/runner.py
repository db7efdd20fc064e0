"""Scenario files, per-scenario runs and the summary tables.

A scenario file is YAML::

    schema_version: 1
    defaults: {mesh: {N: 128}, tol: 1.0e-8, seed: 0}
    scenarios:
      - name: ml-solve
        action: solve
        problem: {...}          # inline mapping or a path to a problem file
      - name: ml-uhr
        action: check_uhr
        problem: problems/ml.yaml
        perturbation: {count: 10}

Every scenario writes ``solution.csv``, ``report.jsonl`` and (for checks)
``plot.csv`` into ``<out>/<name>/``. Timestamps and wall times go to the
``<out>/_meta`` sidecar so that everything else is reproducible byte for byte.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from enum import Enum
from pathlib import Path
from typing import Any, Iterable, Optional, Union

import numpy as np

from .config import SCHEMA_VERSION, ConfigError, _Context, load_yaml, problem_from_mapping
from .expr import Expression
from .frac_ops import verify_composition, verify_left_inverse
from .grid import GridFunction, Mesh, default_grading
from .model import FractionalOrder, ProblemSpec, PsiMap, family, validate_problem
from .solver import DEFAULT_MAX_ITER, DEFAULT_TOL, contraction_certificate, picard_solve
from .stability import (
    PerturbationKind,
    PerturbationSpec,
    StabilityReport,
    check_semi_uhr,
    check_uh,
    check_uhr,
    extend_to_halfline,
    make_perturbed_solution,
)

log = logging.getLogger(__name__)

REPORT_SCHEMA = "hilferstab.report/1"
META_DIR = "_meta"
DEFAULT_OUT = "hilferstab-out"
OUT_ENV = "HILFERSTAB_OUT"

STATUS_OK = 0
STATUS_FAILED = 1
STATUS_ERROR = 2


class Action(str, Enum):
    SOLVE = "solve"
    CHECK_UHR = "check_uhr"
    CHECK_SEMI_UHR = "check_semi_uhr"
    CHECK_UH = "check_uh"
    EXTEND_HALFLINE = "extend_halfline"
    VERIFY_OPERATORS = "verify_operators"


@dataclass(frozen=True)
class VerifyCase:
    """One smooth test function for the operator identity checks."""

    g: str
    alpha: float
    beta: float
    psi: str = "identity"
    b: float = 1.0


DEFAULT_VERIFY_CASES = (
    VerifyCase("x^2", 0.5, 0.5),
    VerifyCase("sin(x)", 0.5, 0.5, "exponential"),
    VerifyCase("1 + x", 0.7, 0.3),
    VerifyCase("cos(x)", 0.3, 0.0, "log1p"),
)
DEFAULT_VERIFY_SIZES = (64, 128, 256, 512)


@dataclass(frozen=True)
class Scenario:
    name: str
    action: Action
    problem: Optional[ProblemSpec] = None
    problem_source: Any = None
    mesh_n: int = 128
    grading: Optional[float] = None
    perturbation: Optional[PerturbationSpec] = None
    count: int = 1
    theta: Optional[float] = None
    tol: float = DEFAULT_TOL
    max_iter: int = DEFAULT_MAX_ITER
    seed: int = 0
    n_max: int = 3
    per_unit: int = 64
    verify_cases: tuple = DEFAULT_VERIFY_CASES
    verify_sizes: tuple = DEFAULT_VERIFY_SIZES

    def mesh(self) -> Mesh:
        r = self.grading if self.grading is not None else default_grading(self.problem.order.gamma)
        return Mesh.graded(self.problem.a, self.problem.b, self.mesh_n, r)


@dataclass
class RunRecord:
    scenario: str
    action: str
    status: int
    passed: bool
    started: str = ""
    finished: str = ""
    wall_time: float = 0.0
    certificate: Optional[dict] = None
    summary: dict = field(default_factory=dict)
    error: str = ""
    outputs: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "RunRecord":
        return cls(**data)


# ---------------------------------------------------------------- loading


def _positive_int(ctx: _Context, data, key, default):
    value = data.get(key, default)
    if isinstance(value, bool) or not isinstance(value, int) or value < 1:
        raise ctx.error(f"{key} must be a positive integer", data, key)
    return value


def _merge(defaults: dict, entry: dict) -> dict:
    out = dict(defaults)
    for k, v in entry.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            merged = type(v)(out[k])
            merged.update(v)
            if hasattr(v, "marks"):
                merged.marks, merged.start = v.marks, v.start
            out[k] = merged
        else:
            out[k] = v
    if hasattr(entry, "marks"):
        out = type(entry)(out)
        out.marks, out.start = entry.marks, entry.start
    return out


SCENARIO_KEYS = {
    "name",
    "action",
    "problem",
    "mesh",
    "perturbation",
    "theta",
    "tol",
    "max_iter",
    "seed",
    "halfline",
    "verify",
}


def _perturbation(ctx: _Context, data, kind: PerturbationKind, theta, seed) -> tuple[PerturbationSpec, int]:
    raw = data.get("perturbation", {}) or {}
    raw = ctx.mapping(raw, "perturbation", data, "perturbation")
    count = _positive_int(ctx, raw, "count", 1)
    shape = None
    if raw.get("shape") is not None:
        shape = ctx.expression(raw, "shape", ["x"], {})
    amplitude = raw.get("amplitude")
    try:
        pert = PerturbationSpec(kind, theta, shape, int(raw.get("seed", seed)), amplitude)
    except ValueError as exc:
        raise ctx.error(str(exc), data, "perturbation") from None
    return pert, count


def scenario_from_mapping(entry: Any, base_dir: Path, ctx: _Context) -> Scenario:
    entry = ctx.mapping(entry, "scenario")
    unknown = set(entry) - SCENARIO_KEYS
    if unknown:
        key = sorted(unknown, key=str)[0]
        raise ctx.error(f"unknown scenario field {key!r}", entry, key)
    if "name" not in entry:
        raise ctx.error("scenario needs a 'name'", entry)
    name = str(entry["name"])
    if not name or any(ch in name for ch in "/\\") or name.startswith((".", "_")):
        raise ctx.error(f"scenario name {name!r} is not a valid directory name", entry, "name")
    try:
        action = Action(str(entry.get("action", "")).lower().replace("-", "_"))
    except ValueError:
        choices = ", ".join(a.value for a in Action)
        raise ctx.error(f"unknown action {entry.get('action')!r} (one of {choices})", entry, "action") from None

    seed = entry.get("seed", 0)
    if isinstance(seed, bool) or not isinstance(seed, int):
        raise ctx.error("seed must be an integer", entry, "seed")
    tol = ctx.number(entry, "tol", DEFAULT_TOL)
    if not tol > 0:
        raise ctx.error("tol must be positive", entry, "tol")
    kwargs: dict = {"name": name, "action": action, "seed": seed, "tol": tol}
    kwargs["max_iter"] = _positive_int(ctx, entry, "max_iter", DEFAULT_MAX_ITER)
    mesh = ctx.mapping(entry.get("mesh", {}) or {}, "mesh", entry, "mesh")
    kwargs["mesh_n"] = _positive_int(ctx, mesh, "N", 128)
    if "grading" in mesh:
        kwargs["grading"] = ctx.number(mesh, "grading")
        if kwargs["grading"] < 1:
            raise ctx.error("grading must be >= 1", mesh, "grading")

    if action is Action.VERIFY_OPERATORS:
        verify = ctx.mapping(entry.get("verify", {}) or {}, "verify", entry, "verify")
        sizes = verify.get("sizes", list(DEFAULT_VERIFY_SIZES))
        if not (isinstance(sizes, list) and sizes and all(isinstance(n, int) and n >= 8 for n in sizes)):
            raise ctx.error("verify.sizes must be a list of integers >= 8", verify, "sizes")
        cases = DEFAULT_VERIFY_CASES
        if "cases" in verify:
            cases = []
            for item in verify["cases"] or []:
                item = ctx.mapping(item, "verify case")
                g = ctx.expression(item, "g", ["x"], {}).source
                try:
                    FractionalOrder(ctx.number(item, "alpha"), ctx.number(item, "beta"))
                except ValueError as exc:
                    if isinstance(exc, ConfigError):
                        raise
                    raise ctx.error(str(exc), item) from None
                case = VerifyCase(g, float(item["alpha"]), float(item["beta"]), str(item.get("psi", "identity")))
                try:
                    family(case.psi)
                except KeyError as exc:
                    raise ctx.error(str(exc).strip("'\""), item, "psi") from None
                cases.append(case)
            cases = tuple(cases)
        return Scenario(**kwargs, verify_cases=cases, verify_sizes=tuple(sizes))

    if "problem" not in entry:
        raise ctx.error(f"action {action.value!r} needs a 'problem'", entry)
    raw = entry["problem"]
    source = ctx.source
    if isinstance(raw, str):
        path = (base_dir / raw).resolve()
        try:
            text = path.read_text(encoding="utf-8")
        except OSError as exc:
            raise ctx.error(f"cannot read problem file {raw!r}: {exc.strerror}", entry, "problem") from None
        source = str(path)
        raw = load_yaml(text, source)
        if isinstance(raw, dict) and "problem" in raw and "order" not in raw:
            raw = raw["problem"]
    problem = problem_from_mapping(raw, source, name=name)
    kwargs["problem"] = problem
    kwargs["problem_source"] = _plain(raw)

    if action in (Action.CHECK_SEMI_UHR, Action.CHECK_UH):
        if "theta" not in entry:
            raise ctx.error(f"action {action.value!r} needs 'theta'", entry)
        theta = ctx.number(entry, "theta")
        if not theta > 0:
            raise ctx.error("theta must be positive", entry, "theta")
        kwargs["theta"] = theta
        kwargs["perturbation"], kwargs["count"] = _perturbation(
            ctx, entry, PerturbationKind.THETA_BOUNDED, theta, seed
        )
    elif action in (Action.CHECK_UHR, Action.EXTEND_HALFLINE):
        kwargs["perturbation"], kwargs["count"] = _perturbation(
            ctx, entry, PerturbationKind.SIGMA_BOUNDED, None, seed
        )
    if action is Action.EXTEND_HALFLINE:
        if not problem.half_line:
            raise ctx.error("extend_halfline needs interval b: inf", entry, "problem")
        hl = ctx.mapping(entry.get("halfline", {}) or {}, "halfline", entry, "halfline")
        kwargs["n_max"] = _positive_int(ctx, hl, "n_max", 3)
        kwargs["per_unit"] = _positive_int(ctx, hl, "per_unit", 64)
    elif problem.half_line:
        raise ctx.error(f"action {action.value!r} needs a finite interval", entry, "problem")
    return Scenario(**kwargs)


def _plain(value: Any) -> Any:
    if isinstance(value, dict):
        return {str(k): _plain(v) for k, v in value.items()}
    if isinstance(value, list):
        return [_plain(v) for v in value]
    return value


def load_scenarios(path: Union[str, Path], overrides: Optional[dict] = None) -> list[Scenario]:
    """Parse and validate every scenario of a file.

    ``overrides`` (keys ``mesh_n``, ``grading``, ``tol``, ``seed``) replace the
    file's values, e.g. from command-line flags. All problems are checked with
    ``validate_problem``; every diagnostic of every scenario is reported at once.
    """
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read scenario file: {exc.strerror}", str(path)) from None
    ctx = _Context(str(path))
    data = load_yaml(text, str(path))
    if data is None:
        warnings.warn(f"{path}: scenario file is empty", stacklevel=2)
        return []
    data = ctx.mapping(data, "scenario file")
    version = data.get("schema_version")
    if version is None:
        raise ctx.error("missing 'schema_version'", data)
    major = str(version).split(".")[0]
    if isinstance(version, bool) or not isinstance(version, (int, float, str)) or major != str(SCHEMA_VERSION):
        raise ctx.error(
            f"unsupported schema_version {version!r} (this reader understands {SCHEMA_VERSION}.x)",
            data,
            "schema_version",
        )
    defaults = ctx.mapping(data.get("defaults", {}) or {}, "defaults", data, "defaults")
    entries = data.get("scenarios") or []
    if not isinstance(entries, list):
        raise ctx.error("'scenarios' must be a list", data, "scenarios")
    if not entries:
        warnings.warn(f"{path}: no scenarios defined", stacklevel=2)
        return []
    scenarios = []
    problems: list[str] = []
    names = set()
    for entry in entries:
        entry = ctx.mapping(entry, "scenario")
        merged = _merge(defaults, entry)
        sc = scenario_from_mapping(merged, path.parent, ctx)
        if sc.name in names:
            raise ctx.error(f"duplicate scenario name {sc.name!r}", entry, "name")
        names.add(sc.name)
        sc = _apply_overrides(sc, overrides or {})
        if sc.problem is not None:
            nodes = _validation_nodes(sc)
            for diag in validate_problem(sc.problem, nodes):
                problems.append(f"scenario {sc.name!r}: {diag.message}")
        scenarios.append(sc)
    if problems:
        raise ConfigError("invalid problem(s):\n  " + "\n  ".join(problems), str(path))
    return scenarios


def _validation_nodes(sc: Scenario) -> np.ndarray:
    if sc.problem.half_line:
        r = sc.grading if sc.grading is not None else default_grading(sc.problem.order.gamma)
        return Mesh.halfline(sc.problem.a, sc.n_max, sc.per_unit, r).nodes
    return sc.mesh().nodes


def _apply_overrides(sc: Scenario, overrides: dict) -> Scenario:
    from dataclasses import replace

    changes = {k: v for k, v in overrides.items() if v is not None}
    if "seed" in changes and sc.perturbation is not None:
        changes["perturbation"] = replace(sc.perturbation, seed=changes["seed"])
    return replace(sc, **changes) if changes else sc


# ---------------------------------------------------------------- writing


def fmt(value: Any) -> str:
    """CSV number format: shortest round-trip repr, scientific below 1e-4."""
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    v = float(value)
    return repr(v) if math.isfinite(v) else ("nan" if math.isnan(v) else ("inf" if v > 0 else "-inf"))


def _clean(value: Any) -> Any:
    """JSON-safe copy: non-finite floats become null, numpy scalars become Python ones."""
    if isinstance(value, dict):
        return {str(k): _clean(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_clean(v) for v in value]
    if isinstance(value, np.ndarray):
        return [_clean(v) for v in value.tolist()]
    if isinstance(value, (np.bool_, bool)):
        return bool(value)
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        v = float(value)
        return v if math.isfinite(v) else None
    return value


def _json_line(obj: dict) -> str:
    return json.dumps(_clean(obj), sort_keys=True, ensure_ascii=False, allow_nan=False)


def write_csv(path: Path, header: list[str], rows: Iterable[Iterable[Any]]):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([v if isinstance(v, str) else fmt(v) for v in row])


def write_solution(path: Path, y: GridFunction, psi: PsiMap):
    x = y.mesh.nodes
    plain = y.plain(psi)
    write_csv(path, ["x", "psi", "y_weighted", "y_plain"], zip(x, psi(x), y.values, plain))


def write_plot(path: Path, report: StabilityReport):
    cols = [report.nodes, report.observed_deviation, report.bound_values]
    header = ["x", "deviation", "bound"]
    if report.bound_printed is not None:
        cols.append(report.bound_printed)
        header.append("bound_printed")
    write_csv(path, header, zip(*cols))


def _write_jsonl(path: Path, lines: list[dict]):
    with open(path, "w", encoding="utf-8") as fh:
        for line in lines:
            fh.write(_json_line({"schema": REPORT_SCHEMA, **line}) + "\n")


# ---------------------------------------------------------------- running


def _run_solve(sc: Scenario, out: Path) -> tuple[bool, dict, dict, list]:
    mesh = sc.mesh()
    y, trace, cert = picard_solve(sc.problem, mesh, tol=sc.tol, max_iter=sc.max_iter, certificate=None, seed=sc.seed)
    write_solution(out / "solution.csv", y, sc.problem.psi)
    record = {
        "record": "solve",
        "certificate": cert.to_dict(),
        "iterations": trace.iterations,
        "converged": trace.converged,
        "residual": trace.residual,
        "distances": [r.distance for r in trace.records],
    }
    _write_jsonl(out / "report.jsonl", [record])
    summary = {"q": cert.q, "xi": cert.xi, "iterations": trace.iterations, "margin": None}
    return trace.converged, cert.to_dict(), summary, ["solution.csv", "report.jsonl"]


def _run_check(sc: Scenario, out: Path) -> tuple[bool, dict, dict, list]:
    from dataclasses import replace

    spec, mesh = sc.problem, sc.mesh()
    cert = contraction_certificate(spec, mesh, seed=sc.seed)
    y0, trace, cert = picard_solve(spec, mesh, tol=sc.tol, max_iter=sc.max_iter, certificate=cert)
    write_solution(out / "solution.csv", y0, spec.psi)
    reports = []
    for k in range(sc.count):
        pert = replace(sc.perturbation, seed=sc.perturbation.seed + k)
        y = make_perturbed_solution(y0, pert, spec, certificate=cert)
        if sc.action is Action.CHECK_UHR:
            rep = check_uhr(y, spec, mesh, tol=sc.tol, certificate=cert, y0=y0)
        elif sc.action is Action.CHECK_SEMI_UHR:
            rep = check_semi_uhr(y, spec, sc.theta, mesh, tol=sc.tol, certificate=cert, y0=y0)
        else:
            rep = check_uh(y, spec, sc.theta, mesh, tol=sc.tol, certificate=cert, y0=y0)
        reports.append((pert.seed, rep))
    lines = []
    for seed, rep in reports:
        d = rep.to_dict()
        d.update(record="check", perturbation_seed=seed)
        lines.append(d)
    _write_jsonl(out / "report.jsonl", lines)
    worst = min(reports, key=lambda item: item[1].margin)[1]
    write_plot(out / "plot.csv", worst)
    passed = all(r.pass_ for _, r in reports)
    summary = {
        "q": cert.q,
        "xi": cert.xi,
        "margin": min(r.margin for _, r in reports),
        "checks": len(reports),
        "failures": sum(not r.pass_ for _, r in reports),
    }
    if worst.margin_printed is not None:
        summary["margin_printed"] = min(r.margin_printed for _, r in reports)
        summary["failures_printed"] = sum(not r.pass_printed for _, r in reports)
    return passed, cert.to_dict(), summary, ["solution.csv", "report.jsonl", "plot.csv"]


def _run_halfline(sc: Scenario, out: Path) -> tuple[bool, dict, dict, list]:
    y, report = extend_to_halfline(
        sc.problem,
        sc.n_max,
        sc.per_unit,
        tol=sc.tol,
        grading=sc.grading,
        perturbation=sc.perturbation,
        seed=sc.seed,
        max_iter=sc.max_iter,
    )
    psi = PsiMap(sc.problem.psi.psi, sc.problem.psi.psi_prime, sc.problem.a, y.mesh.b)
    write_solution(out / "solution.csv", y, psi)
    lines = [{"record": "interval", **r.to_dict()} for r in report.intervals]
    lines.append(
        {
            "record": "consistency",
            "mismatches": report.mismatches,
            "max_mismatch": report.max_mismatch,
            "tolerance": report.tolerance,
            "consistent": report.consistent,
        }
    )
    outputs = ["solution.csv", "report.jsonl"]
    if report.uhr is not None:
        lines.append({"record": "check", **report.uhr.to_dict()})
        write_plot(out / "plot.csv", report.uhr)
        outputs.append("plot.csv")
    _write_jsonl(out / "report.jsonl", lines)
    cert = report.intervals[-1].certificate
    summary = {
        "q": cert.q,
        "xi": cert.xi,
        "margin": None if report.uhr is None else report.uhr.margin,
        "max_mismatch": report.max_mismatch,
    }
    return report.passed, cert.to_dict(), summary, outputs


# residuals below this are rounding noise and need not decrease further
RESIDUAL_FLOOR = 1e-10


def _decreasing(values: list[float], noise: float = 0.10) -> bool:
    return all(b <= a * (1.0 + noise) or b <= RESIDUAL_FLOOR for a, b in zip(values, values[1:]))


def verify_case(case: VerifyCase, sizes) -> dict:
    """Residuals of both composition identities for one test function over a refinement sweep."""
    order = FractionalOrder(case.alpha, case.beta)
    psi = PsiMap(*family(case.psi), 0.0, case.b)
    g_expr = Expression.parse(case.g, ["x"])
    left, comp = [], []
    for n in sizes:
        mesh = Mesh.graded(0.0, case.b, n, default_grading(order.gamma))
        g = GridFunction.from_callable(mesh, g_expr)
        left.append(verify_left_inverse(g, order, psi))
        comp.append(verify_composition(g, order, psi))
    ok = _decreasing(left) and _decreasing(comp) and left[-1] <= 1e-2 and comp[-1] <= 1e-2
    return {
        "g": case.g,
        "alpha": case.alpha,
        "beta": case.beta,
        "psi": case.psi,
        "sizes": list(sizes),
        "left_inverse": left,
        "composition": comp,
        "pass": ok,
    }


def _run_verify(sc: Scenario, out: Path) -> tuple[bool, dict, dict, list]:
    lines = [{"record": "verify", **verify_case(c, sc.verify_sizes)} for c in sc.verify_cases]
    _write_jsonl(out / "report.jsonl", lines)
    worst = max(max(line["left_inverse"][-1], line["composition"][-1]) for line in lines)
    summary = {"q": None, "xi": None, "margin": None, "max_final_residual": worst}
    return all(line["pass"] for line in lines), None, summary, ["report.jsonl"]


_DISPATCH = {
    Action.SOLVE: _run_solve,
    Action.CHECK_UHR: _run_check,
    Action.CHECK_SEMI_UHR: _run_check,
    Action.CHECK_UH: _run_check,
    Action.EXTEND_HALFLINE: _run_halfline,
    Action.VERIFY_OPERATORS: _run_verify,
}


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="milliseconds")


def run_scenario(sc: Scenario, out_dir: Union[str, Path]) -> RunRecord:
    """Run one scenario into ``out_dir/<name>``; errors are captured, never raised."""
    out = Path(out_dir) / sc.name
    started, t0 = _now(), time.perf_counter()
    record = RunRecord(sc.name, sc.action.value, STATUS_ERROR, False, started=started)
    try:
        out.mkdir(parents=True, exist_ok=True)
        passed, cert, summary, outputs = _DISPATCH[sc.action](sc, out)
        record.passed = bool(passed)
        record.status = STATUS_OK if passed else STATUS_FAILED
        record.certificate = _clean(cert)
        record.summary = _clean(summary)
        record.outputs = [f"{sc.name}/{name}" for name in outputs]
    except Exception as exc:  # recorded in the run record, reported in the summary
        log.debug("scenario %s failed", sc.name, exc_info=True)
        record.error = f"{type(exc).__name__}: {exc}"
        record.passed = False
        record.status = STATUS_ERROR
    record.finished = _now()
    record.wall_time = time.perf_counter() - t0
    return record


def run_all(scenarios: list[Scenario], out_dir: Union[str, Path], workers: int = 1) -> list[RunRecord]:
    """Run scenarios (in parallel when ``workers > 1``), keeping the input order."""
    if workers <= 1 or len(scenarios) <= 1:
        return [run_scenario(sc, out_dir) for sc in scenarios]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(run_scenario, scenarios, [out_dir] * len(scenarios)))


SUMMARY_COLUMNS = ["scenario", "action", "status", "pass", "q", "xi", "margin", "margin_printed", "error"]


def emit_summary(records: list[RunRecord], path: Union[str, Path]) -> int:
    """Write ``summary.csv``, ``summary.txt`` and the timing sidecar; return the exit status."""
    if not records:
        raise ValueError("no run records to summarise")
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for r in records:
        s = r.summary
        rows.append(
            [
                r.scenario,
                r.action,
                str(r.status),
                fmt(r.passed),
                "" if s.get("q") is None else fmt(s["q"]),
                "" if s.get("xi") is None else fmt(s["xi"]),
                "" if s.get("margin") is None else fmt(s["margin"]),
                "" if s.get("margin_printed") is None else fmt(s["margin_printed"]),
                r.error,
            ]
        )
    write_csv(out / "summary.csv", SUMMARY_COLUMNS, rows)

    failed = [r for r in records if not r.passed]
    lines = [f"{len(records)} scenario(s), {len(records) - len(failed)} passed, {len(failed)} failed", ""]
    for r in records:
        verdict = "PASS" if r.passed else ("ERROR" if r.status == STATUS_ERROR else "FAIL")
        detail = []
        for key in ("q", "xi", "margin", "margin_printed", "max_mismatch", "max_final_residual"):
            if r.summary.get(key) is not None:
                detail.append(f"{key}={r.summary[key]:.6g}")
        if r.summary.get("failures_printed"):
            detail.append(f"printed-bound failures={r.summary['failures_printed']}")
        if r.error:
            detail.append(r.error)
        lines.append(f"{verdict:5s} {r.scenario} [{r.action}] " + " ".join(detail))
    (out / "summary.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")

    meta = out / META_DIR
    meta.mkdir(exist_ok=True)
    write_csv(
        meta / "timings.csv",
        ["scenario", "started", "finished", "wall_time"],
        [[r.scenario, r.started, r.finished, r.wall_time] for r in records],
    )
    with open(meta / "records.jsonl", "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(_json_line(r.to_dict()) + "\n")
    return 0 if not failed else 1


def read_records(path: Union[str, Path]) -> list[RunRecord]:
    """Re-load the run records written by ``emit_summary``."""
    out = []
    with open(Path(path) / META_DIR / "records.jsonl", encoding="utf-8") as fh:
        for line in fh:
            out.append(RunRecord.from_dict(json.loads(line)))
    return out
