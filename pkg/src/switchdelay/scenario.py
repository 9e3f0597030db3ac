"""JSON scenarios and the experiments built on them.

A scenario fixes the plant, delay, grid, initial data, switching signal and
controller of one closed-loop run. Loading resolves every derived quantity
(pole-placed gains, generated switching events) so that the resolved form,
echoed into the run manifest, reproduces the run on its own.
"""

from __future__ import annotations

import copy
import csv
import hashlib
import io
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Optional, Sequence

import jsonschema
import numpy as np

from . import __version__
from .analysis import StabilityCertificate, certificate, q_sensitivity
from .control import make_controller, mean_system
from .linalg import InfeasibleError, NormKind, pole_place_si
from .plant import Plant, Trajectory, simulate
from .switching import DwellTimeError, SwitchingSignal, from_events, random_signal

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_DIVERGED = 3
EXIT_NO_CERTIFICATE = 4

_MATRIX = {"type": "array", "minItems": 1,
           "items": {"type": "array", "minItems": 1, "items": {"type": "number"}}}
_VECTOR = {"type": "array", "minItems": 1, "items": {"type": "number"}}
_POLES = {"type": "array", "minItems": 1,
          "items": {"oneOf": [{"type": "number"},
                              {"type": "array", "items": {"type": "number"},
                               "minItems": 2, "maxItems": 2}]}}

SCHEMA: dict = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "switched delay scenario",
    "type": "object",
    "required": ["plant", "tau_d", "h", "T", "x0", "switching", "controller"],
    "additionalProperties": False,
    "properties": {
        "name": {"type": "string"},
        "description": {"type": "string"},
        "seed": {"type": "integer", "minimum": 0},
        "plant": {
            "type": "object",
            "required": ["modes", "D"],
            "additionalProperties": False,
            "properties": {
                "D": {"type": "number", "exclusiveMinimum": 0},
                "modes": {
                    "type": "array", "minItems": 1,
                    "items": {
                        "type": "object",
                        "required": ["A", "B"],
                        "additionalProperties": False,
                        "properties": {"A": _MATRIX,
                                       "B": {"oneOf": [_MATRIX, _VECTOR]},
                                       "K": {"oneOf": [_MATRIX, _VECTOR]},
                                       "poles": _POLES},
                        "oneOf": [{"required": ["K"]}, {"required": ["poles"]}],
                    },
                },
            },
        },
        "tau_d": {"type": "number", "exclusiveMinimum": 0},
        "h": {"type": "number", "exclusiveMinimum": 0},
        "T": {"type": "number", "exclusiveMinimum": 0},
        "x0": _VECTOR,
        "u0": {"oneOf": [
            {"type": "number"},
            {"type": "object", "required": ["kind", "value"], "additionalProperties": False,
             "properties": {"kind": {"const": "constant"}, "value": {"type": "number"}}},
            {"type": "object", "required": ["kind", "values"], "additionalProperties": False,
             "properties": {"kind": {"const": "samples"}, "values": _VECTOR}},
        ]},
        "switching": {"oneOf": [
            {"type": "object", "required": ["kind", "events"], "additionalProperties": False,
             "properties": {"kind": {"const": "events"},
                            "events": {"type": "array", "minItems": 1,
                                       "items": {"type": "array", "minItems": 2, "maxItems": 2,
                                                 "prefixItems": [{"type": "number"},
                                                                 {"type": "integer",
                                                                  "minimum": 0}]}},
                            "horizon": {"type": "number", "exclusiveMinimum": 0}}},
            {"type": "object", "required": ["kind"], "additionalProperties": False,
             "properties": {"kind": {"const": "random"},
                            "seed": {"type": "integer", "minimum": 0},
                            "horizon": {"type": "number", "exclusiveMinimum": 0},
                            "min_hold": {"type": "number", "exclusiveMinimum": 0}}},
        ]},
        "controller": {
            "type": "object", "required": ["kind"], "additionalProperties": False,
            "properties": {
                "kind": {"type": "string",
                         "pattern": "^(averaged|single:[0-9]+|avg_system|exact|zero)$"},
                "gains": {"oneOf": [_MATRIX, _VECTOR]},
                "poles": _POLES,
            },
        },
        "output": {
            "type": "object", "additionalProperties": False,
            "properties": {"stride": {"type": "integer", "minimum": 1},
                           "diagnostics": {"type": "array", "uniqueItems": True,
                                           "items": {"enum": ["w", "pred", "normx"]}}},
        },
        "certificate": {
            "type": "object", "additionalProperties": False,
            "properties": {"norm": {"enum": [k.value for k in NormKind]},
                           "Q": _MATRIX, "P": _MATRIX},
        },
    },
}


class ScenarioError(ValueError):
    """Invalid scenario; ``path`` names the offending field."""

    def __init__(self, path: str, message: str):
        self.path = path or "<root>"
        super().__init__(f"{self.path}: {message}")


def _path(parts) -> str:
    out = ""
    for p in parts:
        out += f"[{p}]" if isinstance(p, int) else (f".{p}" if out else str(p))
    return out


def _poles(raw) -> list[complex]:
    return [complex(p[0], p[1]) if isinstance(p, list) else float(p) for p in raw]


def _divides(span: float, h: float) -> bool:
    q = span / h
    return abs(q - round(q)) <= 1e-9 * max(1.0, q) and round(q) >= 1


@dataclass
class Scenario:
    """A validated scenario with every derived quantity resolved."""

    name: str
    plant: Plant
    tau_d: float
    h: float
    T: float
    x0: np.ndarray
    u0: Any
    signal: SwitchingSignal
    controller: str
    K_bar: Optional[np.ndarray]
    stride: int
    diagnostics: tuple[str, ...]
    norm: NormKind
    Q: Optional[np.ndarray]
    P: Optional[np.ndarray]
    seed: int
    resolved: dict = field(repr=False)

    def make_controller(self, kind: Optional[str] = None):
        kind = kind or self.controller
        K_bar = self.K_bar
        if kind == "avg_system" and K_bar is None:
            A_bar, B_bar = mean_system(self.plant)
            K_bar = pole_place_si(A_bar, B_bar, [-1.0 * (i + 1) for i in range(self.plant.n)])
        return make_controller(kind, self.plant, self.signal, self.h, K_bar=K_bar)

    def simulate(self, kind: Optional[str] = None, diagnostics: Optional[Sequence[str]] = None
                 ) -> Trajectory:
        diagnostics = self.diagnostics if diagnostics is None else tuple(diagnostics)
        return simulate(self.plant, self.signal, self.make_controller(kind), self.x0, self.u0,
                        T=self.T, h=self.h, diagnostics=diagnostics)

    def certificate(self) -> StabilityCertificate:
        return certificate(self.plant, self.tau_d, self.norm, Q=self.Q, P=self.P)


def validate_document(doc: dict) -> None:
    validator = jsonschema.Draft202012Validator(SCHEMA)
    errors = sorted(validator.iter_errors(doc), key=lambda e: list(e.absolute_path))
    if errors:
        err = jsonschema.exceptions.best_match(errors)
        raise ScenarioError(_path(err.absolute_path), err.message)


def resolve(doc: dict) -> Scenario:
    """Validate ``doc`` and build the scenario objects it describes."""
    validate_document(doc)
    doc = copy.deepcopy(doc)
    seed = int(doc.get("seed", 0))
    pdoc = doc["plant"]
    D = float(pdoc["D"])
    h, T, tau_d = float(doc["h"]), float(doc["T"]), float(doc["tau_d"])
    if not _divides(D, h):
        raise ScenarioError("h", f"h = {h} must divide D = {D}")
    if not _divides(T, h):
        raise ScenarioError("h", f"h = {h} must divide T = {T}")

    As, Bs, Ks = [], [], []
    n = None
    for i, m in enumerate(pdoc["modes"]):
        where = f"plant.modes[{i}]"
        try:
            A = np.array(m["A"], dtype=float)
        except ValueError:
            raise ScenarioError(f"{where}.A", "rows of unequal length") from None
        if A.ndim != 2 or A.shape[0] != A.shape[1]:
            raise ScenarioError(f"{where}.A", f"must be square, got shape {A.shape}")
        n = A.shape[0] if n is None else n
        if A.shape[0] != n:
            raise ScenarioError(f"{where}.A", f"dimension {A.shape[0]} differs from mode 0 ({n})")
        try:
            B = np.array(m["B"], dtype=float)
        except ValueError:
            raise ScenarioError(f"{where}.B", "rows of unequal length") from None
        if B.ndim == 1:
            B = B.reshape(-1, 1)
        if B.shape != (n, 1):
            raise ScenarioError(f"{where}.B", f"must be an {n}x1 column, got shape {B.shape}")
        if "K" in m:
            K = np.array(m["K"], dtype=float).reshape(1, -1)
            if K.shape != (1, n):
                raise ScenarioError(f"{where}.K", f"must be a 1x{n} row, got shape {K.shape}")
        else:
            poles = _poles(m["poles"])
            if len(poles) != n:
                raise ScenarioError(f"{where}.poles", f"needs {n} poles, got {len(poles)}")
            try:
                K = pole_place_si(A, B, poles)
            except (InfeasibleError, ValueError) as exc:
                raise ScenarioError(f"{where}.poles", str(exc)) from None
        As.append(A)
        Bs.append(B)
        Ks.append(K)
    try:
        plant = Plant.from_matrices(As, Bs, Ks, D)
    except ValueError as exc:
        raise ScenarioError("plant.modes", str(exc)) from None

    x0 = np.array(doc["x0"], dtype=float)
    if x0.shape != (n,):
        raise ScenarioError("x0", f"needs {n} entries, got {len(x0)}")

    u0_doc = doc.get("u0", 0.0)
    if isinstance(u0_doc, dict) and u0_doc["kind"] == "samples":
        u0 = np.array(u0_doc["values"], dtype=float)
        N = round(D / h)
        if len(u0) != N + 1:
            raise ScenarioError("u0.values", f"needs D/h + 1 = {N + 1} samples, got {len(u0)}")
    else:
        u0 = float(u0_doc["value"] if isinstance(u0_doc, dict) else u0_doc)

    ctl = doc["controller"]
    kind = ctl["kind"]
    out = doc.get("output", {})
    diagnostics = tuple(out.get("diagnostics", ()))
    needs_future = kind == "exact" or any(d in ("w", "pred") for d in diagnostics)
    sw = doc["switching"]
    horizon = float(sw.get("horizon", T + D))
    min_horizon = T + D if needs_future else T
    if horizon < min_horizon - 1e-12:
        raise ScenarioError("switching.horizon",
                            f"{horizon} is shorter than the {min_horizon} s this run needs")
    modes = len(As)
    if sw["kind"] == "events":
        events = [(float(t), int(m)) for t, m in sw["events"]]
        for k, (_, m) in enumerate(events):
            if m >= modes:
                raise ScenarioError(f"switching.events[{k}]",
                                    f"mode {m} does not exist (plant has {modes} modes)")
        try:
            signal = from_events(events, tau_d, horizon, modes)
        except DwellTimeError as exc:
            raise ScenarioError("switching.events", f"dwell-time violation: {exc}") from None
        except ValueError as exc:
            raise ScenarioError("switching.events", str(exc)) from None
    else:
        sw_seed = int(sw.get("seed", seed))
        signal = random_signal(sw_seed, tau_d, horizon, modes, sw.get("min_hold"))

    K_bar = None
    if kind.startswith("single:") and int(kind.split(":")[1]) >= modes:
        raise ScenarioError("controller.kind",
                            f"mode {kind.split(':')[1]} does not exist (plant has {modes} modes)")
    if kind == "avg_system":
        A_bar, B_bar = mean_system(plant)
        if "gains" in ctl:
            K_bar = np.array(ctl["gains"], dtype=float).reshape(1, -1)
            if K_bar.shape != (1, n):
                raise ScenarioError("controller.gains", f"must be a 1x{n} row")
        else:
            poles = _poles(ctl.get("poles", [-(i + 1.0) for i in range(n)]))
            try:
                K_bar = pole_place_si(A_bar, B_bar, poles)
            except (InfeasibleError, ValueError) as exc:
                raise ScenarioError("controller.poles", str(exc)) from None
        try:
            make_controller("avg_system", plant, K_bar=K_bar)
        except ValueError as exc:
            raise ScenarioError("controller", str(exc)) from None

    cdoc = doc.get("certificate", {})
    Q = np.array(cdoc["Q"], dtype=float) if "Q" in cdoc else None
    P = np.array(cdoc["P"], dtype=float) if "P" in cdoc else None
    for key, M in (("Q", Q), ("P", P)):
        if M is not None and M.shape != (n, n):
            raise ScenarioError(f"certificate.{key}", f"must be {n}x{n}")

    # resolved document: explicit gains and events, reproducible on its own
    res = copy.deepcopy(doc)
    res["seed"] = seed
    res["plant"]["modes"] = [{"A": A.tolist(), "B": B.tolist(), "K": K.tolist()}
                             for A, B, K in zip(As, Bs, Ks)]
    res["switching"] = {"kind": "events", "horizon": horizon,
                        "events": [[t, m] for t, m in signal.events]}
    res["u0"] = ({"kind": "samples", "values": u0.tolist()} if isinstance(u0, np.ndarray)
                 else {"kind": "constant", "value": u0})
    if K_bar is not None:
        res["controller"] = {"kind": kind, "gains": K_bar.tolist()}
    return Scenario(
        name=str(doc.get("name", "scenario")), plant=plant, tau_d=tau_d, h=h, T=T, x0=x0,
        u0=u0, signal=signal, controller=kind, K_bar=K_bar,
        stride=int(out.get("stride", 1)), diagnostics=diagnostics,
        norm=NormKind.parse(cdoc.get("norm", "spectral")), Q=Q, P=P, seed=seed, resolved=res)


def shipped_scenarios() -> list[str]:
    root = resources.files("switchdelay") / "scenarios"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".json"))


def read_document(ref: str | os.PathLike) -> dict:
    """Parse a scenario file, or a shipped scenario given by name."""
    path = Path(ref)
    if path.is_file():
        text = path.read_text()
    else:
        res = resources.files("switchdelay") / "scenarios" / f"{path.name}.json"
        if not str(ref).endswith(".json") and res.is_file():
            text = res.read_text()
        else:
            raise ScenarioError("<file>", f"no scenario file or shipped scenario named {ref!r}")
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioError("<file>", f"invalid JSON at line {exc.lineno}: {exc.msg}") from None


def load_scenario(ref: str | os.PathLike) -> Scenario:
    return resolve(read_document(ref))


# -- experiments -------------------------------------------------------------


def settled(traj: Trajectory, T: float, tol: float = 1e-2) -> bool:
    """|X| < tol over the last 10% of the horizon (and no divergence)."""
    if traj.diverged or len(traj) == 0 or traj.times[-1] < T - 1e-9:
        return False
    tail = traj.times >= 0.9 * T - 1e-12
    return bool(np.all(traj.state_norms()[tail] < tol))


@dataclass(frozen=True)
class RunSummary:
    controller: str
    causal: bool
    ise: float
    terminal_norm: float
    max_abs_u: float
    settled: bool
    diverged: bool

    COLUMNS = ("controller", "causal", "ise", "terminal_norm", "max_abs_u", "settled",
               "diverged")

    def row(self) -> list[str]:
        return [self.controller, str(self.causal).lower(), _fmt(self.ise),
                _fmt(self.terminal_norm), _fmt(self.max_abs_u), str(self.settled).lower(),
                str(self.diverged).lower()]


def summarize(traj: Trajectory, T: float) -> RunSummary:
    norms = traj.state_norms()
    return RunSummary(
        controller=traj.controller, causal=traj.causal,
        ise=math.inf if traj.diverged else traj.ise(),
        terminal_norm=math.inf if traj.diverged else float(norms[-1]),
        max_abs_u=float(np.abs(traj.inputs).max()) if len(traj.inputs) else 0.0,
        settled=settled(traj, T), diverged=traj.diverged)


def _fmt(v) -> str:
    return format(float(v), ".9g")


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def certificate_csv(cert: StabilityCertificate) -> str:
    row = cert.row()
    return _csv_text(cert.CSV_COLUMNS, [[row[c] for c in cert.CSV_COLUMNS]])


def certificate_report(sc: Scenario, cert: StabilityCertificate,
                       sensitivity: bool = True) -> str:
    text = cert.report()
    if sensitivity and cert.available:
        for r in q_sensitivity(sc.plant, sc.tau_d, sc.norm, Q=sc.Q):
            text += (f"q_scale {_fmt(r['c'])}: eps_star {_fmt(r['eps_star'])}, "
                     f"lambda_min(Q)/|P| {_fmt(r['ratio'])}\n")
    return text


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


@dataclass
class RunResult:
    exit_code: int
    trajectory: Trajectory
    certificate: StabilityCertificate
    files: dict[str, Path]


def run(sc: Scenario, out_dir: str | os.PathLike, stride: Optional[int] = None,
        diagnostics: Optional[Sequence[str]] = None) -> RunResult:
    """Simulate, certify and write trajectory, certificate and manifest.

    Exit code 3 on divergence (the partial trajectory is still written),
    4 when no common Lyapunov matrix was found (the report is still
    written), else 0.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    stride = sc.stride if stride is None else int(stride)
    diagnostics = sc.diagnostics if diagnostics is None else tuple(diagnostics)
    if any(d in ("w", "pred") for d in diagnostics) and sc.signal.horizon < sc.T + sc.plant.D - 1e-12:
        raise ScenarioError("switching.horizon", "W and predictor channels need the signal on "
                            f"[0, T + D] = [0, {sc.T + sc.plant.D}]")
    traj = sc.simulate(diagnostics=diagnostics)
    extra = []
    if "normx" in diagnostics:
        extra.append("normX")
    if "w" in diagnostics:
        extra.append("w")
    if "pred" in diagnostics:
        extra += [f"p{i + 1}" for i in range(sc.plant.n)]
    files = {"trajectory": out / "trajectory.csv", "certificate_report": out / "certificate.txt",
             "certificate_row": out / "certificate.csv", "manifest": out / "manifest.json"}
    traj.write_csv(files["trajectory"], stride=stride, extra=extra)
    cert = sc.certificate()
    files["certificate_report"].write_text(certificate_report(sc, cert, sensitivity=False))
    files["certificate_row"].write_text(certificate_csv(cert))

    if traj.diverged:
        code = EXIT_DIVERGED
    elif not cert.available:
        code = EXIT_NO_CERTIFICATE
    else:
        code = EXIT_OK
    summary = summarize(traj, sc.T)
    manifest = {
        "tool": "switchdelay",
        "version": __version__,
        "scenario": sc.name,
        "seed": sc.seed,
        "controller": {"kind": traj.controller, "causal": traj.causal},
        "resolved": {
            "K": [m.K.tolist() for m in sc.plant.modes],
            "K_bar": None if sc.K_bar is None else sc.K_bar.tolist(),
            "switch_times_on_grid": list(sc.signal.snapped(sc.h).switch_times),
        },
        "inputs": sc.resolved,
        "run": {"stride": stride, "diagnostics": list(diagnostics), "steps": len(traj) - 1,
                "diverged": traj.diverged, "exit_code": code},
        "summary": dict(zip(RunSummary.COLUMNS, summary.row())),
        "outputs": {k: {"file": p.name, "sha256": _sha256(p)}
                    for k, p in files.items() if k != "manifest"},
    }
    files["manifest"].write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return RunResult(code, traj, cert, files)


def compare(sc: Scenario, controllers: Sequence[str]) -> list[RunSummary]:
    """One summary row per controller on the scenario's plant and signal."""
    rows = []
    for kind in controllers:
        traj = sc.simulate(kind.strip(), diagnostics=())
        rows.append(summarize(traj, sc.T))
    return rows


def comparison_csv(rows: Sequence[RunSummary]) -> str:
    return _csv_text(RunSummary.COLUMNS, [r.row() for r in rows])


# -- sweeps ------------------------------------------------------------------

SWEEP_AXES = ("D", "tau_d", "eps")
SWEEP_COLUMNS = ("axis", "value", "eps", "eps_star", "admissible", "settled", "ise", "status")


def variant(doc: dict, axis: str, value: float) -> dict:
    """Copy of a scenario document with one sweep axis set to ``value``.

    ``eps`` moves every mode's matrices toward mode 0 by the factor
    ``value`` in [0, 1] (0 gives identical modes). Gains given as poles are
    re-placed for the moved matrices. A ``tau_d`` value that an explicit
    event list violates replaces it with a signal drawn from the scenario
    seed; the row status says so.
    """
    doc = copy.deepcopy(doc)
    if value < 0 or (axis == "eps" and value > 1):
        raise ScenarioError("sweep.values", f"{axis} value {value} out of range")
    if axis == "D":
        if value <= 0:
            raise ScenarioError("sweep.values", "D must be positive")
        doc["plant"]["D"] = value
        if doc["switching"]["kind"] == "random":
            doc["switching"].pop("horizon", None)  # default T + D follows the new delay
    elif axis == "tau_d":
        if value <= 0:
            raise ScenarioError("sweep.values", "tau_d must be positive")
        doc["tau_d"] = value
        sw = doc["switching"]
        if sw["kind"] == "events":
            times = [t for t, _ in sw["events"]]
            if any(b - a < value - 1e-12 for a, b in zip(times, times[1:])):
                # the fixed events break the new dwell time: draw a seeded signal instead
                doc["switching"] = {"kind": "random", "seed": int(doc.get("seed", 0))}
                if "horizon" in sw:
                    doc["switching"]["horizon"] = sw["horizon"]
                doc["_regenerated"] = True
    elif axis == "eps":
        modes = doc["plant"]["modes"]
        base = modes[0]
        for m in modes[1:]:
            for key in ("A", "B", "K"):
                if key in m and key in base:
                    a0 = np.array(base[key], dtype=float)
                    a1 = np.array(m[key], dtype=float).reshape(a0.shape)
                    m[key] = (a0 + value * (a1 - a0)).tolist()
    else:
        raise ScenarioError("sweep.axis", f"unknown axis {axis!r}; use one of {SWEEP_AXES}")
    return doc


def _sweep_one(args) -> list[str]:
    doc, axis, value = args
    try:
        var = variant(doc, axis, value)
        regenerated = var.pop("_regenerated", False)
        sc = resolve(var)
        cert = sc.certificate()
        traj = sc.simulate(diagnostics=())
        summary = summarize(traj, sc.T)
        status = "diverged" if traj.diverged else ("ok" if cert.available else "no_certificate")
        if regenerated:
            status += ";signal_regenerated"
        return [axis, _fmt(value), _fmt(cert.eps), _fmt(cert.eps_star),
                str(cert.admissible).lower(), str(summary.settled).lower(), _fmt(summary.ise),
                status]
    except (ValueError, OverflowError) as exc:
        msg = str(exc).replace(",", ";").replace("\n", " ")
        return [axis, _fmt(value), "nan", "nan", "false", "false", "nan", f"error: {msg}"]


def sweep(doc: dict, axis: str, values: Sequence[float], jobs: int = 1) -> list[list[str]]:
    """Certificate and simulation outcome per axis value, in input order.

    With ``jobs > 1`` the runs go to a process pool; the rows are collected
    afterwards so the output does not depend on completion order.
    """
    if axis not in SWEEP_AXES:
        raise ScenarioError("sweep.axis", f"unknown axis {axis!r}; use one of {SWEEP_AXES}")
    validate_document(doc)
    tasks = [(doc, axis, float(v)) for v in values]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(_sweep_one, tasks))
    return [_sweep_one(t) for t in tasks]


def sweep_csv(rows) -> str:
    return _csv_text(SWEEP_COLUMNS, rows)
