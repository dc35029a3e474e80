"""Command-line driver for the pipeline.

Subcommands::

    tess       classify a marked tetrahedron or enumerate families
    seed       build and polish the initial potential
    monodromy  local monodromies + intrinsic-closing report
    unitarize  diagonal unitarizer from a monodromy artifact
    flow       constrained continuation toward geometric targets
    build      mesh the immersion (refuses if closing is violated)
    factor     Iwasawa / scalar Birkhoff factorization of a loop file

Every stage reads and writes file artifacts (JSON) plus a JSON
verification report, so each step of a run is independently
inspectable.  Config files may be JSON or TOML; command-line flags
override config values.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

import numpy as np

from .errors import CmcError, DegenerateBeyondTolerance
from .loops import Loop, ScalarLoop, birkhoff_scalar_positive, iwasawa
from .monodromy import (MonodromySet, local_monodromies,
                        unitarizer_diagonal, DiagonalUnitarizer)
from .potential import SymmetricFuchsian
from .seed import SeedConfig, ThetaContext, build_seed
from .flow import ConstraintSet, FlowState, geometric_targets, run_flow
from .surface import (R3Target, S3Target, build_disk_mesh,
                      discrete_mean_curvature, fit_plane, fit_rotation_axis,
                      write_obj)

__all__ = ["main"]

_SPACEFORM_NAMES = {"S3": "Spherical", "R3": "Euclidean", "H3": "Hyperbolic",
                    "indefinite": "Indefinite"}
_TESSELLATES = {"S3": "tessellates S^3", "R3": "tessellates R^3",
                "H3": "tessellates H^3"}


# ---------------------------------------------------------------------------
# helpers


def _load_config(path: str | None) -> dict:
    if path is None:
        return {}
    if not os.path.exists(path):
        raise FileNotFoundError("config file %r does not exist" % path)
    if path.endswith(".toml"):
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    with open(path) as fh:
        return json.load(fh)


def _read(path: str) -> str:
    if not os.path.exists(path):
        raise FileNotFoundError("input artifact %r does not exist" % path)
    with open(path) as fh:
        return fh.read()


def _write(path: str, text: str) -> None:
    with open(path, "w") as fh:
        fh.write(text)


def _write_report(path: str | None, report: dict) -> None:
    text = json.dumps(report, indent=2, sort_keys=True) + "\n"
    if path:
        _write(path, text)
    else:
        sys.stdout.write(text)


def _complex_pairs(a: np.ndarray) -> list:
    return [[float(v.real), float(v.imag)] for v in np.ravel(a)]


def _from_pairs(pairs: list) -> np.ndarray:
    return np.array([complex(re, im) for re, im in pairs])


def _parse_edges(text: str) -> tuple:
    marks = []
    for tok in text.split(","):
        tok = tok.strip()
        marks.append(float("inf") if tok in ("inf", "oo") else int(tok))
    if len(marks) != 6:
        raise ValueError("need 6 edge marks, got %d" % len(marks))
    return tuple(marks)


def unitarizer_to_json(u: DiagonalUnitarizer) -> str:
    return json.dumps({
        "x": json.loads(u.x.to_json()),
        "lam": _complex_pairs(u.lam),
        "sqrt_x_samples": _complex_pairs(u.sqrt_x_samples),
        "unitarity_defect": u.unitarity_defect,
        "bulges": u.bulges,
    })


def unitarizer_from_json(text: str) -> DiagonalUnitarizer:
    d = json.loads(text)
    return DiagonalUnitarizer(
        x=ScalarLoop.from_json(json.dumps(d["x"])),
        lam=_from_pairs(d["lam"]),
        sqrt_x_samples=_from_pairs(d["sqrt_x_samples"]),
        unitarity_defect=float(d["unitarity_defect"]),
        bulges=int(d["bulges"]))


# ---------------------------------------------------------------------------
# tess


def cmd_tess(args) -> int:
    from . import tess
    if args.action == "classify":
        t = tess.classify(_parse_edges(args.edges))
        if args.format == "json":
            print(json.dumps(t.to_dict(), sort_keys=True))
        else:
            parts = ["%s, family %s" % (
                _SPACEFORM_NAMES.get(t.spaceform, t.spaceform),
                t.family or "none")]
            if t.spaceform in _TESSELLATES and t.vertex_class == "compact":
                parts.append(_TESSELLATES[t.spaceform])
            if t.surface_tag:
                parts.append(t.surface_tag)
            print(", ".join(parts))
        return 0
    # enumerate
    out = tess.enumerate_tetrahedra(max_n=args.max_n, klass=args.klass,
                                    spaceform=args.spaceform)
    if args.format == "json":
        print(json.dumps([t.to_dict() for t in out], sort_keys=True))
    else:
        for t in out:
            print("%s  %s  %s" % (t.family or "-",
                                  ",".join(str(e) for e in t.edges),
                                  t.surface_tag or ""))
    return 0


# ---------------------------------------------------------------------------
# seed


def cmd_seed(args) -> int:
    cfg = _load_config(args.config)
    tau = complex(cfg.get("tau_re", 0.0), cfg.get("tau_im", 1.2))
    kw = {k: cfg[k] for k in ("configuration", "truncation",
                              "lambda_samples", "polish_samples", "ode_tol")
          if k in cfg}
    kw["tau"] = tau
    result = build_seed(ThetaContext(tau), SeedConfig(**kw))
    _write(args.out, result.potential.to_json())
    pot = result.potential
    mono = local_monodromies(pot, n_lam=8,
                             ode_tol=float(cfg.get("ode_tol", 1e-10)))
    _write_report(args.report, {
        "artifact": args.out,
        "configuration": result.configuration,
        "conformal_type": [result.conformal_type.real,
                           result.conformal_type.imag],
        "nu0": float(pot.nu0.eval(np.array([1.0 + 0j]))[0].real),
        "nu1": float(pot.nu1.eval(np.array([1.0 + 0j]))[0].real),
        "reality_defect": pot.reality_defect(),
        "plus_defect": pot.plus_defect(),
        "max_im_halftrace": mono.max_im_halftrace,
        "polish": {k: v for k, v in result.polish_report.items()
                   if isinstance(v, (int, float, str, bool))},
    })
    return 0


# ---------------------------------------------------------------------------
# monodromy


def cmd_monodromy(args) -> int:
    pot = SymmetricFuchsian.from_json(_read(args.potential))
    mono = local_monodromies(pot, n_lam=args.n_lam, ode_tol=args.ode_tol)
    if args.out:
        _write(args.out, mono.to_json())
    _write_report(args.report, {
        "artifact": args.out,
        "n_lambda": int(args.n_lam),
        "max_im_halftrace": mono.max_im_halftrace,
        "product_defect": mono.product_defect,
        "angular_order": list(mono.angular_order),
        "intrinsically_closed": bool(mono.max_im_halftrace
                                     <= args.closing_tol),
        "closing_tol": args.closing_tol,
    })
    return 0


# ---------------------------------------------------------------------------
# unitarize


def cmd_unitarize(args) -> int:
    mono = MonodromySet.from_json(_read(args.monodromy))
    uni = unitarizer_diagonal(mono.mats[0], mono.lam, mats=mono.mats)
    _write(args.out, unitarizer_to_json(uni))
    _write_report(args.report, {
        "artifact": args.out,
        "unitarity_defect": uni.unitarity_defect,
        "bulges": uni.bulges,
    })
    return 0


# ---------------------------------------------------------------------------
# flow


def cmd_flow(args) -> int:
    cfg = _load_config(args.config)
    pot = SymmetricFuchsian.from_json(_read(args.potential))
    roles = cfg.get("roles", {"ang": "free", "nu0": "free", "nu1": "free",
                              "x1": "free", "y0": "free"})
    state = FlowState.from_potential(pot, roles,
                                     linear_schedules=cfg.get(
                                         "linear_schedules"))
    n_lambda = int(cfg.get("n_lambda", 8))
    ode_tol = float(cfg.get("ode_tol", 1e-9))
    if "targets" in cfg:
        targets = {k: float(v) for k, v in cfg["targets"].items()}
    else:
        targets = geometric_targets(int(cfg["n0"]), int(cfg["r"]),
                                    int(cfg["s"]),
                                    n1=cfg.get("n1"),
                                    variant=cfg.get("variant", "standard"))
    drop = set(cfg.get("drop_targets", []))
    targets = {k: v for k, v in targets.items() if k not in drop}
    mono = local_monodromies(pot, n_lam=n_lambda, ode_tol=ode_tol)
    anchors = ConstraintSet.quantities(state, mono)
    cs = ConstraintSet(anchors=anchors, targets=targets,
                       nu_sum=cfg.get("nu_sum"), n_lambda=n_lambda,
                       ode_tol=ode_tol)
    run_kw = {k: cfg[k] for k in ("dt0", "dt_min", "dt_max", "corrector_tol",
                                  "intrinsic_tol", "max_steps",
                                  "max_accepted", "rank_ratio") if k in cfg}
    result = run_flow(state, cs, **run_kw)
    _write(args.out, result.potential.to_json())
    if args.trace:
        _write(args.trace, result.trace_csv())
    rows = result.trace_log
    _write_report(args.report, {
        "artifact": args.out,
        "accepted_steps": result.accepted_steps,
        "rejected_steps": result.rejected_steps,
        "final_t": result.state.t,
        "max_im_halftrace": max(r["max_im"] for r in rows),
        "final_geo_residual": rows[-1]["geo_residual"],
        "targets": {k: float(v) for k, v in targets.items()},
    })
    return 0


# ---------------------------------------------------------------------------
# build


def cmd_build(args) -> int:
    pot = SymmetricFuchsian.from_json(_read(args.potential))
    if args.monodromy_report:
        rep = json.loads(_read(args.monodromy_report))
        closing = float(rep["max_im_halftrace"])
    else:
        mono = local_monodromies(pot, n_lam=args.n_lam, ode_tol=args.ode_tol)
        closing = mono.max_im_halftrace
    if closing > args.closing_tol:
        sys.stderr.write(
            "refusing to build: intrinsic closing violated "
            "(max |Im halftrace| = %.3e > %.3e)\n"
            % (closing, args.closing_tol))
        return 1
    if args.monodromy_report:
        mono = local_monodromies(pot, n_lam=args.n_lam, ode_tol=args.ode_tol)
    uni = unitarizer_diagonal(mono.mats[0], mono.lam, mats=mono.mats)
    target = R3Target() if args.target == "r3" else S3Target()
    mesh = build_disk_mesh(pot, uni, target, n_rho=args.n_rho,
                           n_phi=args.n_phi, ode_tol=args.ode_tol)
    write_obj(mesh, args.out, stereographic=(args.target == "s3"))
    report = {
        "artifact": args.out,
        "target": args.target,
        "closing_residual": closing,
        "vertices": int(len(mesh.vertices)),
        "faces": int(len(mesh.faces)),
        "boundary_arcs": len(mesh.boundary_arcs),
        "arc_plane_rms": [fit_plane(mesh.vertices[a])[1]
                          for a in mesh.boundary_arcs],
        "provenance": mesh.provenance,
    }
    if args.target == "r3":
        h, interior = discrete_mean_curvature(mesh)
        hi = h[interior]
        _, _, axis_rms = fit_rotation_axis(mesh.vertices, mesh.normals,
                                           seed=args.seed_rng)
        report.update({
            "mean_curvature_mean": float(hi.mean()),
            "mean_curvature_spread": float(np.max(np.abs(hi - hi.mean()))),
            "rotation_axis_residual": axis_rms,
        })
    _write_report(args.report, report)
    return 0


# ---------------------------------------------------------------------------
# factor


def cmd_factor(args) -> int:
    text = _read(args.loop)
    if args.kind == "matrix":
        res = iwasawa(Loop.from_json(text))
        out = {"f": json.loads(res.f.to_json()),
               "b": json.loads(res.b.to_json()),
               "residual": res.residual,
               "unitarity_defect": res.unitarity_defect}
        report = {"kind": "iwasawa", "residual": res.residual,
                  "unitarity_defect": res.unitarity_defect}
    else:
        res = birkhoff_scalar_positive(ScalarLoop.from_json(text))
        out = {"y": json.loads(res.y.to_json()), "residual": res.residual}
        report = {"kind": "birkhoff", "residual": res.residual,
                  "n_samples": res.n_samples}
    _write(args.out, json.dumps(out))
    _write_report(args.report, report)
    return 0


# ---------------------------------------------------------------------------
# parser


def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="cmcquad",
        description="CMC surfaces from Fuchsian loop-group potentials")
    p.add_argument("--threads", type=int, default=None,
                   help="advisory BLAS/OpenMP thread cap")
    p.add_argument("--seed-rng", type=int, default=0,
                   help="seed for randomized fitting restarts")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("tess", help="tessellation tables")
    tsub = t.add_subparsers(dest="action", required=True)
    tc = tsub.add_parser("classify")
    tc.add_argument("--edges", required=True,
                    help="six edge marks n01,n02,n03,n12,n13,n23")
    tc.add_argument("--format", choices=("text", "json"), default="text")
    te = tsub.add_parser("enumerate")
    te.add_argument("--max-n", type=int, default=8)
    te.add_argument("--class", dest="klass", default="compact",
                    choices=("compact", "paracompact", "degenerate"))
    te.add_argument("--spaceform", default=None)
    te.add_argument("--format", choices=("text", "json"), default="text")
    t.set_defaults(func=cmd_tess)

    s = sub.add_parser("seed", help="build the initial potential")
    s.add_argument("--config", default=None)
    s.add_argument("--out", required=True)
    s.add_argument("--report", default=None)
    s.set_defaults(func=cmd_seed)

    m = sub.add_parser("monodromy", help="local monodromies + closing check")
    m.add_argument("--potential", required=True)
    m.add_argument("--out", default=None)
    m.add_argument("--report", default=None)
    m.add_argument("--n-lam", type=int, default=16)
    m.add_argument("--ode-tol", type=float, default=1e-10)
    m.add_argument("--closing-tol", type=float, default=1e-6)
    m.set_defaults(func=cmd_monodromy)

    u = sub.add_parser("unitarize", help="diagonal unitarizer")
    u.add_argument("--monodromy", required=True)
    u.add_argument("--out", required=True)
    u.add_argument("--report", default=None)
    u.set_defaults(func=cmd_unitarize)

    f = sub.add_parser("flow", help="constrained continuation")
    f.add_argument("--potential", required=True)
    f.add_argument("--config", default=None)
    f.add_argument("--out", required=True)
    f.add_argument("--trace", default=None)
    f.add_argument("--report", default=None)
    f.set_defaults(func=cmd_flow)

    b = sub.add_parser("build", help="mesh the immersion")
    b.add_argument("--potential", required=True)
    b.add_argument("--out", required=True)
    b.add_argument("--report", default=None)
    b.add_argument("--monodromy-report", default=None,
                   help="existing closing report; build refuses if it "
                        "shows the closing violated")
    b.add_argument("--target", choices=("r3", "s3"), default="r3")
    b.add_argument("--n-rho", type=int, default=16)
    b.add_argument("--n-phi", type=int, default=48)
    b.add_argument("--n-lam", type=int, default=16)
    b.add_argument("--ode-tol", type=float, default=1e-11)
    b.add_argument("--closing-tol", type=float, default=1e-6)
    b.set_defaults(func=cmd_build)

    fa = sub.add_parser("factor", help="factor a loop file")
    fa.add_argument("--loop", required=True)
    fa.add_argument("--kind", choices=("matrix", "scalar"), default="matrix")
    fa.add_argument("--out", required=True)
    fa.add_argument("--report", default=None)
    fa.set_defaults(func=cmd_factor)
    return p


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    if args.threads:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS",
                    "MKL_NUM_THREADS"):
            os.environ[var] = str(args.threads)
    try:
        return args.func(args)
    except (ValueError, FileNotFoundError, KeyError,
            DegenerateBeyondTolerance) as exc:
        sys.stderr.write("error: %s\n" % exc)
        return 2
    except CmcError as exc:
        sys.stderr.write("error: %s: %s\n" % (type(exc).__name__, exc))
        return 1


if __name__ == "__main__":
    sys.exit(main())
