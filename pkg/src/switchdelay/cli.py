"""Command-line entry point: ``switchdelay <subcommand> ...``.

Exit codes: 0 success, 2 invalid input, 3 divergence, 4 no common
Lyapunov matrix (certificate unavailable; the report is still written).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .linalg import InfeasibleError, pole_place_si
from .scenario import (
    EXIT_DIVERGED,
    EXIT_NO_CERTIFICATE,
    EXIT_OK,
    EXIT_VALIDATION,
    SCHEMA,
    SWEEP_AXES,
    ScenarioError,
    certificate_csv,
    certificate_report,
    compare,
    comparison_csv,
    load_scenario,
    read_document,
    run,
    shipped_scenarios,
    sweep,
    sweep_csv,
)


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _poles(text: str) -> list[complex]:
    # accept 1+2j style entries as well as plain reals
    try:
        vals = [complex(v.replace(" ", "")) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated poles, got {text!r}")
    return [v.real if v.imag == 0 else v for v in vals]


def _out_dir(args, sc) -> Path:
    return Path(args.out) if args.out else Path("runs") / sc.name


def cmd_simulate(args) -> int:
    sc = load_scenario(args.scenario)
    diag = None if args.diag is None else [d for d in args.diag.split(",") if d]
    res = run(sc, _out_dir(args, sc), stride=args.stride, diagnostics=diag)
    tr = res.trajectory
    print(f"{sc.name}: controller {tr.controller}, {len(tr) - 1} steps, "
          f"|X(T)| = {tr.state_norms()[-1]:.6g}, diverged = {str(tr.diverged).lower()}")
    print(f"wrote {', '.join(str(p) for p in res.files.values())}")
    if res.exit_code == EXIT_NO_CERTIFICATE:
        print("certificate unavailable: no common Lyapunov matrix found", file=sys.stderr)
    if res.exit_code == EXIT_DIVERGED:
        print("simulation diverged; partial trajectory written", file=sys.stderr)
    return res.exit_code


def cmd_certify(args) -> int:
    sc = load_scenario(args.scenario)
    cert = sc.certificate()
    report = certificate_report(sc, cert)
    row = certificate_csv(cert)
    sys.stdout.write(report)
    sys.stdout.write(row)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "certificate.txt").write_text(report)
        (out / "certificate.csv").write_text(row)
    return EXIT_OK if cert.available else EXIT_NO_CERTIFICATE


def cmd_compare(args) -> int:
    sc = load_scenario(args.scenario)
    kinds = [k.strip() for k in args.controllers.split(",") if k.strip()]
    rows = compare(sc, kinds)
    text = comparison_csv(rows)
    sys.stdout.write(text)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "compare.csv").write_text(text)
    return EXIT_OK


def cmd_sweep(args) -> int:
    doc = read_document(args.scenario)
    rows = sweep(doc, args.axis, args.values, jobs=args.jobs)
    text = sweep_csv(rows)
    sys.stdout.write(text)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "sweep.csv").write_text(text)
    return EXIT_OK


def cmd_gains(args) -> int:
    try:
        doc = json.loads(Path(args.mode_file).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ScenarioError("<mode-file>", str(exc)) from None
    modes = doc.get("modes", [doc]) if isinstance(doc, dict) else doc
    result = {"poles": [str(p) for p in args.poles], "modes": []}
    As, Bs = [], []
    for i, m in enumerate(modes):
        try:
            A = np.array(m["A"], dtype=float)
            B = np.array(m["B"], dtype=float).reshape(-1, 1)
        except (KeyError, TypeError, ValueError):
            raise ScenarioError(f"modes[{i}]", "needs numeric matrices A and B") from None
        try:
            K = pole_place_si(A, B, args.poles)
        except (InfeasibleError, ValueError) as exc:
            raise ScenarioError(f"modes[{i}]", str(exc)) from None
        As.append(A)
        Bs.append(B)
        result["modes"].append({"K": K.tolist(),
                                "closed_loop_eigenvalues": _eig_list(A + B @ K)})
    if len(As) > 1:
        A_bar = np.mean(As, axis=0)
        B_bar = np.mean(Bs, axis=0)
        try:
            K_bar = pole_place_si(A_bar, B_bar, args.poles)
            result["average_system"] = {"A_bar": A_bar.tolist(), "B_bar": B_bar.tolist(),
                                        "K_bar": K_bar.tolist(),
                                        "closed_loop_eigenvalues": _eig_list(A_bar + B_bar @ K_bar)}
        except (InfeasibleError, ValueError) as exc:
            result["average_system"] = {"error": str(exc)}
    print(json.dumps(result, indent=2))
    return EXIT_OK


def cmd_schema(args) -> int:
    print(json.dumps(SCHEMA, indent=2))
    return EXIT_OK


def _eig_list(M) -> list:
    ev = np.sort_complex(np.linalg.eigvals(M))
    return [float(v.real) if abs(v.imag) < 1e-12 else [float(v.real), float(v.imag)]
            for v in ev]


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="switchdelay",
        description="Predictor feedback for switched linear systems with input delay.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)
    shipped = ", ".join(shipped_scenarios())
    scen_help = f"scenario JSON file or shipped scenario name ({shipped})"

    s = sub.add_parser("simulate", aliases=["run"], help="simulate one scenario and write CSV, "
                       "certificate and manifest")
    s.add_argument("scenario", help=scen_help)
    s.add_argument("--out", help="output directory (default runs/<name>)")
    s.add_argument("--stride", type=int, help="write every Nth grid point")
    s.add_argument("--diag", help="extra channels: comma list of w, pred, normx")
    s.set_defaults(func=cmd_simulate)

    c = sub.add_parser("certify", help="stability constants and the epsilon threshold")
    c.add_argument("scenario", help=scen_help)
    c.add_argument("--out", help="also write certificate.txt and certificate.csv here")
    c.set_defaults(func=cmd_certify)

    m = sub.add_parser("compare", help="ISE and settling per controller on one scenario")
    m.add_argument("scenario", help=scen_help)
    m.add_argument("--controllers", default="averaged,single:0,single:1,avg_system",
                   help="comma list of averaged, single:i, avg_system, exact, zero "
                        "(mode indices start at 0)")
    m.add_argument("--out", help="also write compare.csv here")
    m.set_defaults(func=cmd_compare)

    w = sub.add_parser("sweep", help="certificate and outcome over one parameter")
    w.add_argument("scenario", help=scen_help)
    w.add_argument("--axis", choices=SWEEP_AXES, required=True,
                   help="D (delay), tau_d (dwell time) or eps (mode interpolation factor)")
    w.add_argument("--values", type=_floats, required=True, help="comma-separated values")
    w.add_argument("--jobs", type=int, default=1, help="parallel worker processes")
    w.add_argument("--out", help="also write sweep.csv here")
    w.set_defaults(func=cmd_sweep)

    g = sub.add_parser("gains", help="pole-placement gains per mode and for the mean system")
    g.add_argument("--mode-file", required=True,
                   help='JSON with {"A": .., "B": ..} or {"modes": [{"A": .., "B": ..}, ...]}')
    g.add_argument("--poles", type=_poles, required=True, help="e.g. -1,-2 or -1+2j,-1-2j")
    g.set_defaults(func=cmd_gains)

    sch = sub.add_parser("schema", help="print the scenario JSON schema")
    sch.set_defaults(func=cmd_schema)
    return p


_LIST_OPTIONS = ("--poles", "--values")


def _join_list_options(argv: Sequence[str]) -> list[str]:
    """Turn ``--poles -1,-2`` into ``--poles=-1,-2``.

    argparse would otherwise read a leading minus as the start of an option.
    """
    out, i = [], 0
    while i < len(argv):
        a = argv[i]
        if a in _LIST_OPTIONS and i + 1 < len(argv):
            out.append(f"{a}={argv[i + 1]}")
            i += 2
        else:
            out.append(a)
            i += 1
    return out


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    argv = _join_list_options(sys.argv[1:] if argv is None else list(argv))
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_VALIDATION if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ScenarioError as exc:
        print(f"invalid scenario: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
