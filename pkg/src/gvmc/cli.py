"""Command-line front end.

Subcommands: optimize (SR run), estimate (observables on a checkpoint), ed
(exact baselines), verify (exact-identity battery), bench (sweep-kernel
backend comparison).  Exit codes: 0 success, 1 configuration/hash error, 2
runtime failure, 3 failed verification identity.
"""

from __future__ import annotations

import argparse
import os
import signal
import sys
from pathlib import Path

__all__ = ["main"]


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gvmc",
        description="Variational Monte Carlo over linear subspaces of spin systems",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config_required=True):
        p.add_argument("--config", required=config_required, help="YAML run configuration")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--out", default=None, help="override the output directory")
        p.add_argument("--threads", type=int, default=None,
                       help="BLAS/OpenMP thread cap (set before numpy loads)")

    p_opt = sub.add_parser("optimize", help="optimize an excited-state subspace")
    common(p_opt)

    p_est = sub.add_parser("estimate", help="evaluate observables on a checkpoint")
    common(p_est)
    p_est.add_argument("--checkpoint", required=True)
    p_est.add_argument("--observable", choices=["sk", "identity"], default="sk")
    p_est.add_argument("--samples", type=int, default=None,
                       help="override sampler.samples_per_step for the estimate")

    p_ed = sub.add_parser("ed", help="exact-diagonalization baseline")
    common(p_ed)
    p_ed.add_argument("--levels", type=int, default=None)

    p_ver = sub.add_parser("verify", help="run the exact-identity battery")
    p_ver.add_argument("--tier", choices=["fast", "full"], default="fast")
    p_ver.add_argument("--seed", type=int, default=0)
    p_ver.add_argument("--threads", type=int, default=None)

    p_bench = sub.add_parser("bench", help="compare sweep-kernel backends")
    p_bench.add_argument("--config", default=None)
    p_bench.add_argument("--seed", type=int, default=0)
    p_bench.add_argument("--sweeps", type=int, default=64)
    p_bench.add_argument("--chains", type=int, default=16)
    p_bench.add_argument("--threads", type=int, default=None)
    return parser


def _apply_threads(threads: int | None):
    if threads is None:
        return
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ[var] = str(threads)


def main(argv: list[str] | None = None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    args = _build_parser().parse_args(argv)
    _apply_threads(getattr(args, "threads", None))
    handler = {
        "optimize": cmd_optimize,
        "estimate": cmd_estimate,
        "ed": cmd_ed,
        "verify": cmd_verify,
        "bench": cmd_bench,
    }[args.command]
    return handler(args)


def _load_config(args):
    from .config import load_config

    return load_config(args.config, seed_override=args.seed, out_override=args.out)


def cmd_optimize(args) -> int:
    from .ansatz import build_layout, initialize_parameters, save_checkpoint
    from .config import ExperimentConfig
    from .errors import ConfigError, GvmcError
    from .metrics import MetricsWriter, write_result_rows
    from . import sr

    try:
        cfg = _load_config(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    out = cfg.output_dir
    out.mkdir(parents=True, exist_ok=True)
    signal.signal(signal.SIGTERM, lambda *_: (_ for _ in ()).throw(KeyboardInterrupt()))
    try:
        theta0 = initialize_parameters(cfg.ansatz_config(), cfg.seed)
        problem = cfg.problem(theta0)
        settings = cfg.sr_settings()
        layout = build_layout(cfg.ansatz_config())

        def on_checkpoint(step, theta):
            save_checkpoint(
                out / "last.ckpt", theta, layout, cfg.ansatz_config(), cfg.to_dict(),
                step=step, rng_state={"seed": cfg.seed, "step": step},
            )

        with MetricsWriter(out / "metrics.jsonl") as writer:
            result = sr.optimize(
                problem, settings,
                on_step=lambda rec: writer.write(rec.to_json_dict()),
                on_checkpoint=on_checkpoint,
            )
        values, errs, scalars, _ = sr.final_evaluation(
            result.parameters, problem, seed=cfg.seed + 1,
            n_samples=cfg.raw["optimizer"]["final_samples"],
        )
        geom = cfg.lattice_geometry()
        momentum = cfg.raw["sector"]["momentum"]
        rows = [
            {
                "qx": momentum[0] if momentum else None,
                "qy": momentum[1] if momentum else None,
                "q_sf": cfg.raw["sector"]["spin_flip"],
                "state_index": i,
                "energy_per_site": values[i] / geom.n_sites,
                "energy_err": errs[i] / geom.n_sites,
                "v_score": scalars.v_score,
            }
            for i in range(len(values))
        ]
        write_result_rows(out / "results.csv", rows)
        for row in rows:
            print(
                f"state {row['state_index']}: E/Ns = {row['energy_per_site']:.6f} "
                f"+- {row['energy_err']:.6f}  V-score = {row['v_score']:.3e}"
            )
        return 0
    except KeyboardInterrupt:
        print("interrupted; checkpoint written", file=sys.stderr)
        return 2
    except GvmcError as exc:
        print(f"runtime failure: {exc}", file=sys.stderr)
        return 2


def cmd_estimate(args) -> int:
    import numpy as np

    from .ansatz import NeuralBasisEvaluator, load_checkpoint
    from .config import ExperimentConfig
    from .errors import ConfigError, GvmcError, HashMismatch
    from .metrics import write_result_rows, write_sk_rows
    from . import estimators, grassmann, lattice, sampler

    try:
        cfg = _load_config(args)
        ck = load_checkpoint(args.checkpoint)
        ck.verify_hash(cfg.to_dict())
    except (ConfigError, HashMismatch, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    try:
        out = cfg.output_dir
        out.mkdir(parents=True, exist_ok=True)
        geom = cfg.lattice_geometry()
        evaluator = NeuralBasisEvaluator(ck.params, ck.ansatz_config)
        smp = cfg.raw["sampler"]
        n_samples = args.samples or smp["samples_per_step"]
        settings = sampler.ChainSettings.for_samples(
            n_samples, n_chains=smp["n_chains"], warmup_sweeps=smp["warmup_sweeps"],
            thinning=smp["thinning"], seed=cfg.seed, total_sz=cfg.raw["sector"]["total_sz"],
            backend=smp["backend"],
        )
        batch = sampler.sample_batch(settings, evaluator)
        ham = lattice.HeisenbergOperator(geom)
        local = estimators.local_operator_matrices(batch, evaluator, ham)

        def principal_stat(mask):
            return np.sort(np.linalg.eigvals(local[mask].mean(axis=0)).real)

        energies, errs = estimators._jackknife(batch.chain_ids, principal_stat)
        scalars = estimators.scalar_values(batch, evaluator, ham, geom)
        momentum = cfg.raw["sector"]["momentum"]
        rows = [
            {
                "qx": momentum[0] if momentum else None,
                "qy": momentum[1] if momentum else None,
                "q_sf": cfg.raw["sector"]["spin_flip"],
                "state_index": i,
                "energy_per_site": energies[i] / geom.n_sites,
                "energy_err": errs[i] / geom.n_sites,
                "v_score": scalars.v_score,
            }
            for i in range(len(energies))
        ]
        write_result_rows(out / "energies.csv", rows)

        if args.observable == "identity":
            ident = estimators.estimate_oem(batch, evaluator, lattice.IdentityOperator())
            sk_rows = [
                {
                    "kx": 0, "ky": 0, "state_index": i,
                    "value": float(np.diagonal(ident.value).real[i]),
                    "err": float(np.diagonal(ident.stderr)[i]),
                }
                for i in range(batch.n_states)
            ]
            write_sk_rows(out / "identity.csv", sk_rows)
            print(f"wrote {out / 'identity.csv'}")
            return 0

        dec = grassmann.principal(
            grassmann.SubspaceMatrix(local.mean(axis=0), grassmann.MatrixRole.OEM)
        )
        sk_rows = []
        for k in lattice.momentum_grid(geom):
            est = estimators.structure_factor(
                batch, evaluator, geom, k,
                transform=dec.transform, degenerate=dec.degeneracy_flag,
            )
            for i in range(batch.n_states):
                sk_rows.append(
                    {
                        "kx": k[0], "ky": k[1], "state_index": i,
                        "value": float(est.rotated.value[i]),
                        "err": float(est.rotated.stderr[i]),
                    }
                )
        write_sk_rows(out / "structure_factor.csv", sk_rows)
        print(f"wrote {out / 'energies.csv'} and {out / 'structure_factor.csv'}")
        return 0
    except GvmcError as exc:
        print(f"runtime failure: {exc}", file=sys.stderr)
        return 2


def cmd_ed(args) -> int:
    from .config import ExperimentConfig
    from .errors import ConfigError, GvmcError
    from .metrics import write_spectrum_rows
    from . import ed

    try:
        cfg = _load_config(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    try:
        geom = cfg.lattice_geometry()
        k = args.levels or cfg.raw["subspace"]["n_states"] + 2
        result = ed.lowest_k(geom, cfg.raw["sector"]["total_sz"], k, seed=cfg.seed)
        rows = ed.spectrum_rows(result)
        out = cfg.output_dir
        out.mkdir(parents=True, exist_ok=True)
        write_spectrum_rows(out / "spectrum.csv", rows)
        for row in rows:
            print(
                f"level {row['level']}: E = {row['energy']:+.8f} "
                f"(E/Ns = {row['energy'] / geom.n_sites:+.8f}, "
                f"degeneracy {row['degeneracy']})"
            )
        return 0
    except GvmcError as exc:
        print(f"runtime failure: {exc}", file=sys.stderr)
        return 2


def cmd_verify(args) -> int:
    from .oracle import verification_suite

    reports = verification_suite(tier=args.tier, seed=args.seed)
    width = max(len(r.name) for r in reports)
    failed = 0
    for r in reports:
        status = "pass" if r.passed else "FAIL"
        print(f"{r.name:<{width}}  max|err| = {r.max_abs_error:.3e}  "
              f"tol = {r.tolerance:.0e}  [{status}]")
        failed += not r.passed
    print(f"{len(reports) - failed}/{len(reports)} identities pass")
    return 0 if failed == 0 else 3


def cmd_bench(args) -> int:
    import time

    import numpy as np

    from . import kernels, sampler
    from .ansatz import NeuralBasisEvaluator, initialize_parameters
    from .config import load_config

    if args.config:
        cfg = load_config(args.config, seed_override=args.seed)
        acfg = cfg.ansatz_config()
        total_sz = cfg.raw["sector"]["total_sz"]
    else:
        from .ansatz import AnsatzConfig

        acfg = AnsatzConfig(lx=4, ly=4, n_states=3, channels=4, filter_size=3,
                            blocks=1, expansion=2, hidden=6, marshall=True)
        total_sz = 0
    theta = initialize_parameters(acfg, args.seed)
    evaluator = NeuralBasisEvaluator(theta, acfg)
    results = {}
    for backend in kernels.BACKENDS:
        settings = sampler.ChainSettings(
            n_chains=args.chains, sweeps=args.sweeps, warmup_sweeps=4,
            seed=args.seed, total_sz=total_sz, backend=backend,
        )
        t0 = time.perf_counter()
        batch = sampler.sample_batch(settings, evaluator)
        dt = time.perf_counter() - t0
        rate = args.chains * (args.sweeps + 4) / dt
        results[backend] = (dt, rate, batch.acceptance)
        print(f"{backend:>9}: {dt:7.3f} s  {rate:9.1f} chain-sweeps/s  "
              f"acceptance {batch.acceptance:.3f}")
    if "compiled" in results and "numpy" in results:
        print(f"speedup: {results['numpy'][0] / results['compiled'][0]:.2f}x")
    elif "compiled" not in results:
        print("compiled kernel not built; showing numpy only")
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
