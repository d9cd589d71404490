"""Command-line front end.

One command is one process; every run emits a single JSON report on stdout
containing a schema version, timings, seeds, tolerances and every metric
produced.  Exit codes: 0 all certifications passed, 1 certification failure,
2 schema or parse error, 3 solver infeasibility.

KMSFLOW_THREADS, when set, is exported to the BLAS thread-count variables
before the numerical stack loads.
"""

from __future__ import annotations

import argparse
import os
import sys
import time

SCHEMA_VERSION = 1

EXIT_PASS = 0
EXIT_FAIL = 1
EXIT_SCHEMA = 2
EXIT_INFEASIBLE = 3

if os.environ.get("KMSFLOW_THREADS"):
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(var, os.environ["KMSFLOW_THREADS"])


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="kmsflow",
        description="Certify, transform and differentiate KMS-symmetric "
        "Markov generators on matrix algebras.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p, rho=False, seeded=False):
        p.add_argument("--tol", type=float, default=None, help="tolerance override")
        p.add_argument("--out", default=None, help="write the report JSON to this file")
        if rho:
            p.add_argument("--rho", default=None, help="density context JSON file")
        if seeded:
            p.add_argument("--seed", type=int, default=0, help="instance seed")
            p.add_argument("--n", type=int, default=2, help="matrix dimension")
            p.add_argument("--kraus-rank", type=int, default=None)
            p.add_argument(
                "--cond-bound",
                type=float,
                default=100.0,
                help="condition bound of the seeded density ensemble",
            )

    p = sub.add_parser("check", help="certify a superoperator (CP, KMS symmetry, CND)")
    p.add_argument("--superop", required=True, help="superoperator JSON file")
    p.add_argument("--generator", action="store_true", help="also run the CND check")
    add_common(p, rho=True)

    p = sub.add_parser("vtransform", help="apply the V-transform to a superoperator")
    p.add_argument("--superop", required=True)
    p.add_argument("--quadrature", type=int, default=0,
                   help="also run the quadrature oracle with this many steps")
    add_common(p, rho=True)

    p = sub.add_parser("gen-from-cp", help="build a certified generator from a CP map")
    p.add_argument("--psi", required=True, help="superoperator JSON file")
    add_common(p, rho=True)

    p = sub.add_parser("recover-cp", help="recover an admissible CP map from a generator")
    p.add_argument("--gen", default=None, help="generator superoperator JSON file")
    p.add_argument("--max-iter", type=int, default=5000)
    add_common(p, rho=True, seeded=True)

    p = sub.add_parser("derive", help="construct the first-order calculus and commutator family")
    p.add_argument("--method", choices=("gns", "kraus", "both"), default="both")
    p.add_argument("--gen", default=None, help="generator superoperator JSON file")
    p.add_argument("--psi", default=None, help="CP map JSON file for the Kraus route")
    p.add_argument("--dump", default=None, help="write calculus/family JSON here")
    add_common(p, rho=True, seeded=True)

    p = sub.add_parser("uniqueness", help="Gram-matching witness between the two routes")
    p.add_argument("--gen", default=None)
    p.add_argument("--psi", default=None)
    add_common(p, rho=True, seeded=True)

    p = sub.add_parser("simulate", help="semigroup evolution and Chernoff residuals")
    p.add_argument("--gen", default=None)
    p.add_argument("--t", type=float, default=1.0)
    p.add_argument("--steps", type=int, nargs="+", default=[8, 64])
    add_common(p, rho=True, seeded=True)

    p = sub.add_parser("dirichlet-check", help="Dirichlet form contraction and product checks")
    p.add_argument("--gen", default=None)
    p.add_argument("--trials", type=int, default=50)
    add_common(p, rho=True, seeded=True)

    p = sub.add_parser("random", help="emit a seeded random instance (rho and Psi)")
    p.add_argument("--rho-out", default=None)
    p.add_argument("--psi-out", default=None)
    p.add_argument("--config", default=None,
                   help='instance config JSON: {"n", "seed", "rho": "random"|matrix,'
                        ' "kraus_rank"}')
    add_common(p, seeded=True)

    p = sub.add_parser("verify", help="re-evaluate the verdicts of a report JSON")
    p.add_argument("--report", required=True)
    add_common(p)
    return parser


def _load_context(args, serialize):
    """Density context from --rho when given, else None (seeded draw)."""
    if getattr(args, "rho", None):
        return serialize.density_from_json(serialize.load_json(args.rho), args.rho)
    return None


def _seeded_generator(args, serialize):
    from . import generator as generator_mod
    from . import instances

    ctx = _load_context(args, serialize)
    psi = None
    if getattr(args, "gen", None):
        if ctx is None:
            raise serialize.SchemaError("--gen requires --rho")
        lgen = serialize.superop_from_json(serialize.load_json(args.gen), args.gen)
        gen = generator_mod.certify_generator(lgen, ctx, tol=args.tol)
    else:
        n = ctx.dim if ctx is not None else args.n
        gen, psi = instances.random_generator(
            n, args.seed, kraus_rank=args.kraus_rank,
            cond_bound=args.cond_bound, ctx=ctx,
        )
    if getattr(args, "psi", None):
        psi = serialize.superop_from_json(serialize.load_json(args.psi), args.psi)
    return gen, psi


def _emit(report: dict, out_path, serialize) -> None:
    text = serialize.dump_json(report, out_path)
    print(text)


def _report_skeleton(args) -> dict:
    rep = {
        "schema_version": SCHEMA_VERSION,
        "command": args.command,
        "results": {},
        "timings_s": {},
    }
    for key in ("seed", "n", "tol"):
        if getattr(args, key, None) is not None:
            rep[key] = getattr(args, key)
    return rep


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    from . import serialize
    from .errors import (
        CertificationFailed,
        GramMismatch,
        Infeasible,
        KmsflowError,
        PreconditionFailed,
        SchemaError,
    )

    report = _report_skeleton(args)
    t0 = time.perf_counter()
    try:
        code = _dispatch(args, report, serialize)
    except SchemaError as exc:
        report["error"] = {"type": "schema", "message": str(exc)}
        _emit(report, args.out, serialize)
        return EXIT_SCHEMA
    except ValueError as exc:
        report["error"] = {"type": "usage", "message": str(exc)}
        _emit(report, args.out, serialize)
        return EXIT_SCHEMA
    except Infeasible as exc:
        report["error"] = {"type": "infeasible", "message": str(exc)}
        if exc.report is not None:
            report["results"]["recover_cp"] = exc.report.to_json_dict()
        _emit(report, args.out, serialize)
        return EXIT_INFEASIBLE
    except (PreconditionFailed, CertificationFailed) as exc:
        report["error"] = {"type": "certification", "message": str(exc)}
        if exc.report is not None:
            report["results"][exc.report.name] = exc.report.to_json_dict()
        report["pass"] = False
        _emit(report, args.out, serialize)
        return EXIT_FAIL
    except GramMismatch as exc:
        report["error"] = {
            "type": "gram_mismatch",
            "message": str(exc),
            "max_deviation": exc.max_deviation,
            "index": list(exc.index) if exc.index else None,
        }
        report["pass"] = False
        _emit(report, args.out, serialize)
        return EXIT_FAIL
    except KmsflowError as exc:
        report["error"] = {"type": type(exc).__name__, "message": str(exc)}
        report["pass"] = False
        _emit(report, args.out, serialize)
        return EXIT_FAIL
    report["timings_s"]["total"] = time.perf_counter() - t0
    passed = all(
        r.get("pass", True) for r in report["results"].values() if isinstance(r, dict)
    )
    report["pass"] = passed
    _emit(report, args.out, serialize)
    return EXIT_PASS if passed else EXIT_FAIL


def _dispatch(args, report: dict, serialize) -> int:
    import numpy as np

    from . import derivation, generator as generator_mod, instances, superop, vtransform

    results = report["results"]
    timings = report["timings_s"]

    def timed(name, fn):
        t = time.perf_counter()
        out = fn()
        timings[name] = time.perf_counter() - t
        return out

    tol = args.tol

    if args.command == "check":
        s = serialize.superop_from_json(serialize.load_json(args.superop), args.superop)
        results["cp"] = superop.is_cp(s, tol=tol or 1e-9).to_json_dict()
        if getattr(args, "rho", None):
            ctx = serialize.density_from_json(serialize.load_json(args.rho), args.rho)
            results["kms_symmetric"] = superop.is_kms_symmetric(
                s, ctx, tol=tol or ctx.tol
            ).to_json_dict()
        if args.generator:
            results["ccn"] = superop.is_ccn(s, tol=tol or 1e-9).to_json_dict()
        return EXIT_PASS

    if args.command == "vtransform":
        if not getattr(args, "rho", None):
            raise serialize.SchemaError("vtransform requires --rho")
        ctx = serialize.density_from_json(serialize.load_json(args.rho), args.rho)
        s = serialize.superop_from_json(serialize.load_json(args.superop), args.superop)
        transformed = timed("v_transform", lambda: vtransform.v_transform(s, ctx))
        results["transformed"] = serialize.superop_to_json(transformed)
        inverse = vtransform.w_transform(transformed, ctx)
        results["inverse_residual"] = float(np.linalg.norm(inverse.mat - s.mat, 2))
        if args.quadrature:
            quad, info = vtransform.v_transform_quadrature(s, ctx, steps=args.quadrature)
            info["closed_form_distance"] = float(
                np.linalg.norm(quad.mat - transformed.mat, 2)
            )
            results["quadrature"] = info
        return EXIT_PASS

    if args.command == "gen-from-cp":
        if not getattr(args, "rho", None):
            raise serialize.SchemaError("gen-from-cp requires --rho")
        ctx = serialize.density_from_json(serialize.load_json(args.rho), args.rho)
        psi = serialize.superop_from_json(serialize.load_json(args.psi), args.psi)
        gen = timed("generator", lambda: generator_mod.generator_from_cp(psi, ctx, tol=tol))
        for name, rep in gen.certificates.items():
            results[name] = rep.to_json_dict()
        results["generator"] = serialize.superop_to_json(gen.L)
        results["generator_l2"] = serialize.superop_to_json(gen.L2)
        return EXIT_PASS

    if args.command == "recover-cp":
        gen, _ = _seeded_generator(args, serialize)
        psi, rep = timed(
            "recover",
            lambda: generator_mod.recover_cp_from_generator(gen, max_iter=args.max_iter,
                                                            tol=tol or 1e-8),
        )
        results["recover_cp"] = rep.to_json_dict()
        results["psi"] = serialize.superop_to_json(psi)
        results["cp"] = superop.is_cp(psi, tol=gen.ctx.tol).to_json_dict()
        results["kms_symmetric"] = superop.is_kms_symmetric(psi, gen.ctx).to_json_dict()
        return EXIT_PASS

    if args.command == "derive":
        gen, psi = _seeded_generator(args, serialize)
        dump = {}
        if args.method in ("gns", "both"):
            calc = timed("gns_calculus", lambda: derivation.gns_calculus(gen))
            results["calculus_invariants"] = derivation.calculus_invariants_report(
                calc, gen
            ).to_json_dict()
            fam = derivation.extract_commutators_gns(calc, gen)
            results["gns_form"] = _form_report(derivation, fam, gen)
            xi0, residual = derivation.inner_vector(calc)
            results["inner_vector_residual"] = float(residual)
            dump["gns_calculus"] = serialize.calculus_to_json(calc)
            dump["gns_family"] = serialize.family_to_json(fam)
        if args.method in ("kraus", "both"):
            fam_k = timed(
                "kraus_route", lambda: derivation.extract_commutators_kraus(gen, psi)
            )
            results["kraus_form"] = _form_report(derivation, fam_k, gen)
            dump["kraus_family"] = serialize.family_to_json(fam_k)
        if args.method == "both":
            calc_k = derivation.commutator_calculus(fam_k, gen)
            theta, wit = derivation.uniqueness_witness(calc, calc_k, gen)
            results["uniqueness"] = wit.to_json_dict()
            results["gram_mismatch_max"] = wit.check("gram_mismatch_max").value
        if args.dump:
            serialize.dump_json(dump, args.dump)
        return EXIT_PASS

    if args.command == "uniqueness":
        gen, psi = _seeded_generator(args, serialize)
        calc = derivation.gns_calculus(gen)
        fam_k = derivation.extract_commutators_kraus(gen, psi)
        calc_k = derivation.commutator_calculus(fam_k, gen)
        theta, wit = timed(
            "witness", lambda: derivation.uniqueness_witness(calc, calc_k, gen)
        )
        results["uniqueness"] = wit.to_json_dict()
        return EXIT_PASS

    if args.command == "simulate":
        gen, _ = _seeded_generator(args, serialize)
        for t in (0.1, 1.0, 10.0):
            rep = superop.is_markov_l2(generator_mod.evolve(gen, t), gen.ctx,
                                       tol=tol or 1e-8)
            results[f"markov_t={t:g}"] = rep.to_json_dict()
        residuals = {}
        for steps in args.steps:
            residuals[str(steps)] = generator_mod.chernoff_residual(gen, args.t, steps)
        results["chernoff_residuals"] = residuals
        return EXIT_PASS

    if args.command == "dirichlet-check":
        gen, _ = _seeded_generator(args, serialize)
        results["contraction"] = generator_mod.dirichlet_contraction_check(
            gen, trials=args.trials, tol=tol or 1e-8, seed=args.seed
        ).to_json_dict()
        rng = np.random.default_rng(args.seed + 13)
        n = gen.dim
        worst = None
        for _ in range(args.trials):
            a = instances.ginibre(rng, n)
            b = instances.ginibre(rng, n)
            rep = generator_mod.energy_product_inequality(gen, a, b, tol=tol or 1e-8)
            if worst is None or rep.check("excess").value > worst.check("excess").value:
                worst = rep
        results["energy_product_worst"] = worst.to_json_dict()
        results["cyclic_energy"] = float(
            generator_mod.dirichlet_energy(gen, gen.ctx.sqrt_rho)
        )
        return EXIT_PASS

    if args.command == "random":
        n, seed, kraus_rank, ctx0 = args.n, args.seed, args.kraus_rank, None
        if args.config:
            cfg = serialize.load_json(args.config)
            if not isinstance(cfg, dict):
                raise serialize.SchemaError(f"{args.config}: expected an object")
            n = cfg.get("n", n)
            seed = cfg.get("seed", seed)
            kraus_rank = cfg.get("kraus_rank", kraus_rank)
            rho_spec = cfg.get("rho", "random")
            if rho_spec != "random":
                ctx0 = serialize.density_from_json(rho_spec, f"{args.config}:rho")
        ctx, psi = instances.random_instance(
            n, seed, kraus_rank=kraus_rank, cond_bound=args.cond_bound, ctx=ctx0
        )
        rho_doc = serialize.density_to_json(ctx)
        psi_doc = serialize.superop_to_json(psi)
        if args.rho_out:
            serialize.dump_json(rho_doc, args.rho_out)
        if args.psi_out:
            serialize.dump_json(psi_doc, args.psi_out)
        results["rho"] = rho_doc
        results["psi"] = psi_doc
        return EXIT_PASS

    if args.command == "verify":
        from .reports import Report

        doc = serialize.load_json(args.report)
        mismatches = []

        def walk(node, path):
            if isinstance(node, dict):
                if "checks" in node and "pass" in node:
                    rep = Report.from_json_dict(node)
                    if bool(rep.passed) != bool(node["pass"]):
                        mismatches.append(path)
                    results[path or rep.name] = {
                        "stored_pass": bool(node["pass"]),
                        "recomputed_pass": bool(rep.passed),
                        "pass": bool(rep.passed) == bool(node["pass"]),
                    }
                else:
                    for k, v in node.items():
                        walk(v, f"{path}/{k}" if path else str(k))

        walk(doc, "")
        results["idempotent"] = {"pass": not mismatches, "mismatches": mismatches}
        return EXIT_PASS

    raise serialize.SchemaError(f"unknown command {args.command!r}")


def _form_report(derivation, fam, gen) -> dict:
    rep = derivation.verify_commutator_form(fam, gen)
    doc = rep.to_json_dict()
    # the full deviation matrix is bulky; report its maximum only
    doc["metrics"] = {
        "family_size": rep.metrics["family_size"],
        "max_form_deviation": rep.check("max_form_deviation").value,
    }
    return doc


if __name__ == "__main__":
    sys.exit(main())
