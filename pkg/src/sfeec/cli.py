"""Command-line entry point: ``sfeec {spai,evolve,yee-check,converge}``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .basis import AnalyticForm, Cochain, build_space, canonical_projection
from .convergence import acceptance_checks, emit_results, parse_config, run_convergence, summarize
from .dynamics import FieldState, SplitScheme, evolve
from .mesh import generate_cubical_lattice, generate_periodic_triangulation
from .operators import derivative_matrix, factorized_inverse, mass_matrix, read_coo, write_coo
from .spai import make_pattern, spai_approximate_inverse
from .yee import EQUIVALENCE_TOL, equivalence_check, lumped_mass

log = logging.getLogger("sfeec")


def _floats(text: str, n: int) -> tuple[float, ...]:
    vals = tuple(float(t) for t in text.split(","))
    if len(vals) != n:
        raise argparse.ArgumentTypeError(f"expected {n} comma-separated numbers, got {text!r}")
    return vals


def _ints(text: str, n: int) -> tuple[int, ...]:
    vals = tuple(int(t) for t in text.split(","))
    if len(vals) != n:
        raise argparse.ArgumentTypeError(f"expected {n} comma-separated integers, got {text!r}")
    return vals


def cmd_spai(args) -> int:
    M = read_coo(args.matrix)
    Q, report = spai_approximate_inverse(M, make_pattern(M, args.pattern), args.method, args.jobs)
    write_coo(Q, args.out)
    text = json.dumps(report.to_dict(), indent=2, sort_keys=True)
    if args.report:
        Path(args.report).write_text(text + "\n")
    else:
        print(text)
    return 0


def _evolve_setup(args):
    if args.mesh == "cube":
        nx, ny, nz = args.grid
        mesh = generate_cubical_lattice(nx, ny, nz, *args.spacing)
        family, dim = "Q1-", 3
    else:
        mesh = generate_periodic_triangulation(args.vertices, seed=args.seed)
        family, dim = args.basis, 2
    V1, V2 = build_space(mesh, family, 1), build_space(mesh, family, 2)
    C = derivative_matrix(V1, V2)
    if args.pattern == "lumped":
        if family != "Q1-":
            raise SystemExit("the lumped pattern needs the cubical mesh")
        vol = float(np.prod(args.spacing))
        Q, M2 = sp.identity(V1.n_dofs, format="csr") / vol, lumped_mass(V2)
    else:
        M1, M2 = mass_matrix(V1), mass_matrix(V2)
        if args.pattern == "dense":
            Q = factorized_inverse(M1)
        else:
            Q = spai_approximate_inverse(M1, make_pattern(M1, args.pattern))[0]
    scheme = SplitScheme(args.scheme, args.dt, Q, M2, C)

    # standing wave: A = sin(2 pi y / Ly) dx, zero electric field
    k = 2.0 * math.pi / mesh.periods[1]
    comps = [lambda x: np.sin(k * x[..., 1])] + [lambda x: np.zeros(x.shape[:-1])] * (dim - 1)
    a = canonical_projection(V1, AnalyticForm(1, dim, tuple(comps)))
    e = Cochain(V1, np.zeros(V1.n_dofs), "mass-weighted")
    if args.formulation == "ae":
        state = FieldState("ae", a, e)
        D = None
    else:
        state = FieldState("be", Cochain(V2, C @ a.values), e)
        D = derivative_matrix(V2, build_space(mesh, family, 3)) if dim == 3 else None
    return state, scheme, D


def cmd_evolve(args) -> int:
    state, scheme, D = _evolve_setup(args)
    out = open(args.out, "w", newline="") if args.out else sys.stdout
    try:
        w = csv.writer(out, lineterminator="\n")
        w.writerow(["step", "time", "energy", "gauss_residual"])
        for k, s, en, g in evolve(state, scheme, args.steps, args.diag_every, D):
            w.writerow([k, repr(s.time), repr(en), repr(g)])
    finally:
        if out is not sys.stdout:
            out.close()
    return 0


def cmd_yee_check(args) -> int:
    dev = equivalence_check(*args.grid, spacing=args.spacing, dt=args.dt, steps=args.steps,
                            seed=args.seed)
    ok = dev <= EQUIVALENCE_TOL
    print(f"max deviation {dev:.3e} ({'PASS' if ok else 'FAIL'} at {EQUIVALENCE_TOL:g})")
    return 0 if ok else 1


def cmd_converge(args) -> int:
    text = Path(args.config).read_text() if args.config else ""
    overrides = {}
    for item in args.set or []:
        if "=" not in item:
            raise SystemExit(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        overrides[k.strip()] = v.strip()
    config = parse_config(text, overrides)
    records = run_convergence(config)
    summary = summarize(records, config)
    emit_results(records, summary, args.out)
    for s in summary:
        print(f"{s['basis']:4s} {s['pattern']:9s} exponent {s['exponent']!s:>22s} "
              f"saturation {s['saturation']}")
    if not args.check:
        return 0
    failed = 0
    for name, ok, detail in acceptance_checks(records, summary):
        print(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")
        failed += not ok
    return 1 if failed else 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sfeec", description="Structure-preserving FEEC Maxwell toolkit")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("spai", help="sparse approximate inverse of a COO matrix")
    s.add_argument("matrix", help="input matrix, 'row col value' lines")
    s.add_argument("--pattern", choices=["diagonal", "m1", "m1sq", "dense"], default="m1")
    s.add_argument("--method", choices=["normal", "cg"], default="normal")
    s.add_argument("--jobs", type=int, default=1)
    s.add_argument("--out", required=True, help="output COO file for Q")
    s.add_argument("--report", help="JSON report path (default: stdout)")
    s.set_defaults(func=cmd_spai)

    e = sub.add_parser("evolve", help="time-step a standing wave and log diagnostics")
    e.add_argument("--mesh", choices=["cube", "triangulation"], default="cube")
    e.add_argument("--grid", type=lambda t: _ints(t, 3), default=(4, 4, 4))
    e.add_argument("--spacing", type=lambda t: _floats(t, 3), default=(0.25, 0.25, 0.25))
    e.add_argument("--vertices", type=int, default=64)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--basis", choices=["P1-", "P2-"], default="P1-")
    e.add_argument("--scheme", choices=["strang", "lie-trotter"], default="strang")
    e.add_argument("--dt", type=float, default=0.01)
    e.add_argument("--steps", type=int, default=100)
    e.add_argument("--pattern", choices=["lumped", "diagonal", "m1", "m1sq", "dense"], default="m1")
    e.add_argument("--formulation", choices=["ae", "be"], default="be")
    e.add_argument("--diag-every", type=int, default=1)
    e.add_argument("--out", help="CSV path (default: stdout)")
    e.set_defaults(func=cmd_evolve)

    y = sub.add_parser("yee-check", help="compare lumped SFEEC against the Yee oracle")
    y.add_argument("--grid", type=lambda t: _ints(t, 3), default=(4, 4, 4))
    y.add_argument("--spacing", type=lambda t: _floats(t, 3), default=(1.0, 0.5, 2.0))
    y.add_argument("--dt", type=float, default=0.1)
    y.add_argument("--steps", type=int, default=100)
    y.add_argument("--seed", type=int, default=0)
    y.set_defaults(func=cmd_yee_check)

    c = sub.add_parser("converge", help="curl-of-curl resolution sweep")
    c.add_argument("--config", help="key = value config file")
    c.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key")
    c.add_argument("--out", default="converge_out", help="output directory")
    c.add_argument("--check", action="store_true", help="exit nonzero if an acceptance check fails")
    c.set_defaults(func=cmd_converge)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
