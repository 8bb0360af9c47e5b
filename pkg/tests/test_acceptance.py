"""Acceptance suite: one test per release criterion, each printing a
pass/fail line at its pinned tolerance.

Criterion 5c (the 4x4 production run, hours of compute) runs only with
GVMC_ACCEPTANCE_FULL=1; everything else completes in a few minutes.
"""

import os
import time

import numpy as np
import pytest
from scipy import stats

from gvmc import ed, estimators, grassmann, kernels, lattice, oracle, sampler, sr
from gvmc.ansatz import (
    AnsatzConfig,
    DenseBasisEvaluator,
    NeuralBasisEvaluator,
    basis_matrices,
    basis_matrix,
    initialize_parameters,
    jacobian_traces,
)
from gvmc.references import EXTENDED_RUN_REFERENCES

CHAIN4 = lattice.LatticeGeometry(4, 1)
SECTOR4 = lattice.sector_enumerate(CHAIN4, 0)


def report(name, passed, detail=""):
    print(f"\n[acceptance] {name}: {'PASS' if passed else 'FAIL'} {detail}")
    assert passed, f"{name} failed: {detail}"


def random_cols(rng, m, n):
    return rng.standard_normal((m, n)) + 1j * rng.standard_normal((m, n))


class TestCriterion1AppendixOracle:
    def test_determinant_sampling_averages_exact(self):
        t0 = time.time()
        rng = np.random.default_rng(101)
        worst = 0.0
        for _ in range(10):
            phi = random_cols(rng, 6, 2)
            op_a = random_cols(rng, 6, 6)
            op_a = 0.5 * (op_a + op_a.conj().T)
            op_b = random_cols(rng, 6, 6)
            op_b = 0.5 * (op_b + op_b.conj().T)
            a, b = op_a @ phi, op_b @ phi
            dist = oracle.tuple_distribution(phi)
            one = oracle.one_local_average(dist, phi, a)
            worst = max(worst, np.abs(one - oracle.one_local_exact(phi, a)[:, None, :]).max())
            two = oracle.two_local_average(dist, phi, a, b)
            eq_ref, ne_ref = oracle.two_local_exact_split(phi, a, b)
            idx = np.arange(2)
            worst = max(worst, np.abs(two[:, idx, :, :, idx, :] - eq_ref[None]).max())
            worst = max(worst, np.abs(two[:, 0, :, :, 1, :] - ne_ref).max())
            worst = max(worst, np.abs(two[:, 1, :, :, 0, :] - ne_ref).max())
            full = np.einsum("ikjlmn->ijln", two)
            cov = full - np.einsum(
                "ij,lm->ijlm",
                oracle.mean_local(dist, phi, a).conj(),
                oracle.mean_local(dist, phi, b),
            )
            worst = max(worst, np.abs(cov - oracle.covariance_exact(phi, a, b)).max())
        elapsed = time.time() - t0
        report(
            "criterion 1 (enumerated determinant-sampling averages)",
            worst < 1e-10 and elapsed < 30,
            f"max|err| = {worst:.2e} (tol 1e-10), {elapsed:.1f}s (< 30s)",
        )


class TestCriterion2MinorIdentities:
    def test_minor_identities_random_instances(self):
        t0 = time.time()
        rng = np.random.default_rng(202)
        worst = 0.0
        for _ in range(100):
            dim = int(rng.integers(3, 7))
            w = random_cols(rng, dim, dim)
            for m in (1, 2):
                if dim <= m:
                    continue
                rows = sorted(rng.choice(dim, m, replace=False).tolist())
                cols = sorted(rng.choice(dim, m, replace=False).tolist())
                keep_r = [i for i in range(dim) if i not in rows]
                keep_c = [j for j in range(dim) if j not in cols]
                direct = np.linalg.det(w[np.ix_(keep_r, keep_c)])
                scale = max(1.0, abs(direct))
                worst = max(
                    worst,
                    abs(grassmann.minor_complement_chained(w, rows, cols) - direct) / scale,
                    abs(grassmann.minor_complement(w, rows, cols) - direct) / scale,
                )
            n = int(rng.integers(1, min(dim, 3) + 1))
            kets = random_cols(rng, dim, n)
            for m in range(0, min(2, n - 1) + 1):
                p = n - m
                keep = sorted(rng.choice(n, p, replace=False).tolist())
                keep2 = sorted(rng.choice(n, p, replace=False).tolist())
                total = grassmann.minor_sum_enumerated(kets, keep, keep2)
                g = kets.conj().T @ kets
                import math

                expect = math.factorial(p) * np.linalg.det(g[np.ix_(keep, keep2)])
                worst = max(worst, abs(total - expect) / max(1.0, abs(expect)))
        elapsed = time.time() - t0
        report(
            "criterion 2 (complementary-minor and minor-sum identities)",
            worst < 1e-9 and elapsed < 10,
            f"max rel err = {worst:.2e} (tol 1e-9), {elapsed:.1f}s (< 10s)",
        )


class TestCriterion3SamplerStationarity:
    def test_million_step_chi_square(self):
        t0 = time.time()
        cfg = AnsatzConfig(lx=4, ly=1, n_states=2, channels=2, filter_size=3,
                           blocks=1, expansion=2, hidden=4)
        theta = initialize_parameters(cfg, seed=303)
        ev = NeuralBasisEvaluator(theta, cfg)
        cols = np.exp(ev.log_amps_reference(SECTOR4))
        dist = oracle.tuple_distribution(cols)
        # 64 chains x 1954 sweeps x 8 moves = 1,000,448 proposed moves
        settings = sampler.ChainSettings(
            n_chains=64, sweeps=1954, warmup_sweeps=60, thinning=2, seed=17,
        )
        batch = sampler.sample_batch(settings, ev)
        keys = lattice.pack_configs(SECTOR4)
        idx = np.searchsorted(keys, lattice.pack_configs(batch.configs.reshape(-1, 4)))
        flat = idx.reshape(len(batch), 2) @ np.array([6, 1])
        counts = np.bincount(flat, minlength=36).astype(float)
        expected = dist.probabilities * len(batch)
        keep = expected > 10
        obs = np.append(counts[keep], counts[~keep].sum())
        exp = np.append(expected[keep], expected[~keep].sum())
        if exp[-1] < 1e-9:
            assert obs[-1] == 0
            obs, exp = obs[:-1], exp[:-1]
        chi2, p = stats.chisquare(obs, exp * obs.sum() / exp.sum())
        elapsed = time.time() - t0
        report(
            "criterion 3 (10^6-step tuple-frequency stationarity)",
            p > 0.01 and elapsed < 120,
            f"chi2 = {chi2:.1f}, p = {p:.3f} (> 0.01), {len(batch)} retained tuples, "
            f"{elapsed:.1f}s (< 120s)",
        )


def _draw_dense_batch(ev, seed, n_samples):
    settings = sampler.ChainSettings.for_samples(
        n_samples, n_chains=64, warmup_sweeps=40, seed=seed,
    )
    return sampler.sample_batch(settings, ev)


class TestCriterion4EstimatorConsistency:
    N_CASES = 20
    N_SAMPLES = 100_000

    def check(self, value, reference, stderr, tag, floor=1e-9):
        dev = np.abs(np.asarray(value) - np.asarray(reference))
        bound = 5 * np.asarray(stderr) + floor
        assert np.all(dev <= bound), (
            f"{tag}: max deviation {(dev / np.maximum(bound, 1e-300)).max():.2f}x "
            f"the 5-sigma bound"
        )

    def test_dense_reference_agreement(self):
        t0 = time.time()
        rng = np.random.default_rng(404)
        for case in range(self.N_CASES):
            cols = random_cols(rng, 6, 2)
            ev = DenseBasisEvaluator(SECTOR4, cols)
            basis = grassmann.DenseSubspaceBasis(ev.columns)
            cols_b = random_cols(rng, 6, 2)
            ev_b = DenseBasisEvaluator(SECTOR4, cols_b)
            basis_b = grassmann.DenseSubspaceBasis(ev_b.columns)
            mat_a = random_cols(rng, 6, 6)
            mat_a = 0.5 * (mat_a + mat_a.conj().T)
            mat_b = random_cols(rng, 6, 6)
            mat_b = 0.5 * (mat_b + mat_b.conj().T)
            op_a = lattice.DenseSectorOperator(mat_a, SECTOR4)
            op_b = lattice.DenseSectorOperator(mat_b, SECTOR4)
            batch = _draw_dense_batch(ev, seed=1000 + case, n_samples=self.N_SAMPLES)

            est = estimators.estimate_oem(batch, ev, op_a)
            self.check(est.value, grassmann.oem(basis, mat_a).entries, est.stderr,
                       f"OEM case {case}")
            est = estimators.estimate_cov_matrix(batch, ev, op_a, op_b)
            self.check(est.value, grassmann.ovm_ocm(basis, mat_a, mat_b).entries,
                       est.stderr, f"OVM/OCM case {case}")
            overlaps = estimators.estimate_overlap(batch, ev_b)
            dual_a = grassmann.dual_basis(basis)
            dual_b = grassmann.dual_basis(basis_b)
            self.check(overlaps.forward.value, dual_a.kets.conj().T @ basis_b.kets,
                       overlaps.forward.stderr, f"overlap fwd case {case}")
            self.check(overlaps.backward.value, dual_b.kets.conj().T @ basis.kets,
                       overlaps.backward.stderr, f"overlap bwd case {case}")
            dense_fid = grassmann.fidelity_matrices(basis, basis_b)[0].entries
            for mode in ("product", "variance"):
                est = estimators.estimate_fidelity_matrix(batch, ev_b, mode=mode)
                self.check(est.matrix.value, dense_fid, est.matrix.stderr,
                           f"fidelity[{mode}] case {case}")
        elapsed = time.time() - t0
        report(
            "criterion 4a (OEM/OVM/overlap/fidelity vs dense references)",
            True,
            f"{self.N_CASES} cases x {self.N_SAMPLES} samples within 5 sigma, "
            f"{elapsed:.0f}s",
        )

    def test_qgt_agreement(self):
        t0 = time.time()
        rng = np.random.default_rng(505)
        for case in range(self.N_CASES):
            cfg = AnsatzConfig(lx=4, ly=1, n_states=2, channels=2, filter_size=3,
                               blocks=1, expansion=2, hidden=2,
                               marshall=bool(case % 2))
            theta = initialize_parameters(cfg, seed=600 + case)
            theta = theta + 0.05 * rng.standard_normal(theta.shape)
            ev = NeuralBasisEvaluator(theta, cfg)

            def columns(vec):
                return np.exp(NeuralBasisEvaluator(vec, cfg).log_amps_reference(SECTOR4))

            step = 1e-6
            base = columns(theta)
            deriv = np.empty((len(theta), 6, 2), dtype=complex)
            for mu in range(len(theta)):
                plus, minus = theta.copy(), theta.copy()
                plus[mu] += step
                minus[mu] -= step
                deriv[mu] = (columns(plus) - columns(minus)) / (2 * step)
            g = base.conj().T @ base
            g_inv = np.linalg.inv(g)
            p_perp = np.eye(6) - base @ g_inv @ base.conj().T
            pd = np.einsum("xy,myj->mxj", p_perp, deriv)
            inner = np.einsum("mxi,nxj->mnij", deriv.conj(), pd)
            dense = (np.einsum("ij,mnji->mn", g_inv, inner) / 2).real

            settings = sampler.ChainSettings.for_samples(
                self.N_SAMPLES, n_chains=64, warmup_sweeps=40, seed=700 + case,
            )
            batch = sampler.sample_batch(settings, ev)
            traces = jacobian_traces(ev, batch.configs, batch.phimat, batch.row_offsets)

            def stat(mask):
                return estimators.qgt_from_traces(traces[mask], 2).dense()

            value, err = estimators._jackknife(batch.chain_ids, stat)
            self.check(value, dense, err, f"QGT case {case}", floor=1e-7)
        elapsed = time.time() - t0
        report(
            "criterion 4b (QGT vs dense finite-difference kets)",
            True,
            f"{self.N_CASES} cases x {self.N_SAMPLES} samples within 5 sigma, "
            f"{elapsed:.0f}s",
        )


def run_two_site(max_steps=60):
    geom = lattice.LatticeGeometry(2, 1)
    cfg = AnsatzConfig(lx=2, ly=1, n_states=2, feature_map=False, hidden=4,
                       marshall=True)
    theta = initialize_parameters(cfg, seed=3)
    problem = sr.OptimizationProblem(
        ansatz=cfg, hamiltonian=lattice.HeisenbergOperator(geom), geometry=geom,
        initial_parameters=theta, n_chains=8, samples_per_step=128,
    )
    settings = sr.SrSettings(learning_rate=0.05, max_steps=max_steps, seed=7)
    return sr.optimize(problem, settings), problem


def run_four_site_chain():
    geom = CHAIN4
    cfg = AnsatzConfig(lx=4, ly=1, n_states=2, channels=4, filter_size=3, blocks=1,
                       expansion=2, hidden=8, marshall=True)
    theta = initialize_parameters(cfg, seed=11)
    problem = sr.OptimizationProblem(
        ansatz=cfg, hamiltonian=lattice.HeisenbergOperator(geom), geometry=geom,
        initial_parameters=theta, n_chains=32, samples_per_step=256,
    )
    settings = sr.SrSettings(learning_rate=0.08, diag_shift=1e-3, max_steps=400,
                             seed=13, variance_target=1e-12)
    return sr.optimize(problem, settings), problem


class TestCriterion5Spectra:
    def test_5a_two_site(self):
        result, _ = run_two_site()
        energy = result.records[-1].energy
        report(
            "criterion 5a (two-site subspace energy)",
            abs(energy - (-0.25)) < 1e-3,
            f"scalar energy = {energy:.6f} (target -0.25 within 1e-3, "
            f"{len(result.records)} steps)",
        )
        TestCriterion9Properties.descent_records.extend(result.records)

    def test_5b_four_site_chain(self):
        ref = ed.lowest_k(CHAIN4, 0, 2).energies
        result, problem = run_four_site_chain()
        values, errs, scalars, _ = sr.final_evaluation(
            result.parameters, problem, seed=99, n_samples=2048
        )
        rel = np.abs(values - ref) / np.abs(ref)
        report(
            "criterion 5b (four-site chain two lowest levels)",
            bool(np.all(rel < 1e-3)),
            f"levels {values} vs exact {ref}; rel err {rel} (tol 1e-3, "
            f"{len(result.records)} steps)",
        )
        TestCriterion9Properties.descent_records.extend(result.records)

    @pytest.mark.skipif(
        not os.environ.get("GVMC_ACCEPTANCE_FULL"),
        reason="multi-hour 4x4 run; set GVMC_ACCEPTANCE_FULL=1",
    )
    def test_5c_four_by_four(self):
        geom = lattice.LatticeGeometry(4, 4)
        ref = ed.lowest_k(geom, 0, 3, seed=0).energies
        cfg = AnsatzConfig(lx=4, ly=4, n_states=3, channels=4, filter_size=3,
                           blocks=1, expansion=2, hidden=6, marshall=True)
        theta = initialize_parameters(cfg, seed=7)
        problem = sr.OptimizationProblem(
            ansatz=cfg, hamiltonian=lattice.HeisenbergOperator(geom), geometry=geom,
            initial_parameters=theta, total_sz=0, n_chains=64,
            samples_per_step=2048,  # 2^11 samples
        )
        settings = sr.SrSettings(
            learning_rate=0.15 / 16, diag_shift=1e-3, solver="auto",
            max_steps=5000, seed=7, variance_target=2.5e-3,
        )
        result = sr.optimize(problem, settings)
        values, errs, scalars, _ = sr.final_evaluation(
            result.parameters, problem, seed=77, n_samples=8192
        )
        rel = np.abs(values - ref) / np.abs(ref)
        report(
            "criterion 5c (4x4 lattice three lowest levels, production settings)",
            bool(np.all(rel < 5e-3)) and len(result.records) <= 5000,
            f"levels {values} +- {errs} vs exact {ref}; rel err {rel} "
            f"(tol 5e-3 within 5000 steps; used {len(result.records)})",
        )


class TestCriterion6ZeroVariance:
    def test_eigen_span_injection(self):
        result = ed.lowest_k(CHAIN4, 0, 2)
        ev = DenseBasisEvaluator(SECTOR4, result.states.kets)
        settings = sampler.ChainSettings(n_chains=16, sweeps=200, warmup_sweeps=20,
                                         seed=606)
        batch = sampler.sample_batch(settings, ev)
        vals = estimators.scalar_values(
            batch, ev, lattice.HeisenbergOperator(CHAIN4), CHAIN4
        )
        tr_var = vals.variance * batch.n_states
        report(
            "criterion 6 (zero-variance principle on an exact eigen-span)",
            tr_var < 1e-9 and vals.v_score < 1e-9,
            f"Var[Tr H_loc] = {tr_var:.2e} (< 1e-9), V-score = {vals.v_score:.2e} (< 1e-9)",
        )


class TestCriterion7StructureFactor:
    def test_singlet_pi_via_variance_diagonal(self):
        geom = lattice.LatticeGeometry(2, 1)
        # momentum-pi symmetrization makes the single head the exact singlet
        cfg = AnsatzConfig(lx=2, ly=1, n_states=1, feature_map=False, hidden=3,
                           momentum=(1, 0), marshall=True)
        theta = initialize_parameters(cfg, seed=707)
        ev = NeuralBasisEvaluator(theta, cfg)
        settings = sampler.ChainSettings(n_chains=16, sweeps=500, warmup_sweeps=20,
                                         seed=707)
        batch = sampler.sample_batch(settings, ev)
        est = estimators.structure_factor(batch, ev, geom, (1, 0))
        dev = abs(est.rotated.value[0] - 0.5)
        bound = 5 * est.rotated.stderr[0] + 1e-10
        report(
            "criterion 7 (two-site singlet S(pi) from the variance-matrix diagonal)",
            dev <= bound,
            f"S(pi) = {est.rotated.value[0]:.6f} +- {est.rotated.stderr[0]:.2e} "
            f"(target 0.5 within 5 sigma)",
        )


class TestCriterion8ExtendedRunTargets:
    def test_reference_values_recorded(self):
        ref6 = EXTENDED_RUN_REFERENCES["6x6"]
        ref10 = EXTENDED_RUN_REFERENCES["10x10"]
        ok = (
            ref6["ed_energy"] == -0.67887215
            and ref6["variational_energy"] == -0.678871
            and ref10["variational_energy"] == -0.671544
            and ref10["qmc_energy"] == -0.671549
            and ref10["structure_factor_peak"] == 5.35
        )
        report(
            "criterion 8 (cluster-scale targets recorded, not desk-reproduced)",
            ok,
            "6x6 and 10x10 reference energies and S(pi,pi) stored for extended runs",
        )


class TestCriterion9Properties:
    descent_records: list = []

    def test_p_fidelity_monotone(self):
        rng = np.random.default_rng(909)
        worst = 0.0
        for _ in range(100):
            dim = int(rng.integers(3, 7))
            n = int(rng.integers(1, dim))
            a = grassmann.DenseSubspaceBasis(random_cols(rng, dim, n))
            b = grassmann.DenseSubspaceBasis(random_cols(rng, dim, n))
            values = [grassmann.p_fidelity(a, b, p) for p in (0.0, 0.5, 1.0, 2.0, 4.0)]
            worst = min(worst, float(np.diff(values).min()))
        report(
            "criterion 9a (p-fidelity monotone in p, 100 random pairs)",
            worst >= -1e-10,
            f"min increment {worst:.2e} (>= -1e-10)",
        )

    def test_projector_properties(self):
        rng = np.random.default_rng(910)
        worst_idem, worst_gauge = 0.0, 0.0
        for _ in range(100):
            dim = int(rng.integers(3, 8))
            n = int(rng.integers(1, dim + 1))
            basis = grassmann.DenseSubspaceBasis(random_cols(rng, dim, n))
            p = grassmann.projector(basis)
            worst_idem = max(worst_idem, float(np.abs(p @ p - p).max()))
            x = random_cols(rng, n, n)
            p2 = grassmann.projector(grassmann.DenseSubspaceBasis(basis.kets @ x))
            worst_gauge = max(worst_gauge, float(np.abs(p - p2).max()))
        report(
            "criterion 9b (projector idempotence and gauge invariance, 100 bases)",
            worst_idem < 1e-10 and worst_gauge < 1e-8,
            f"max|P^2-P| = {worst_idem:.2e}, max gauge deviation = {worst_gauge:.2e}",
        )

    def test_descent_property_all_steps(self):
        records = self.descent_records
        if not records:
            result_a, _ = run_two_site(max_steps=20)
            records = result_a.records
        worst = max(r.descent for r in records)
        report(
            "criterion 9c (g . dtheta <= 0 on every optimization step)",
            worst <= 1e-12,
            f"max g.dtheta = {worst:.2e} over {len(records)} steps",
        )

    def test_jacobian_finite_difference(self):
        rng = np.random.default_rng(911)
        worst = 0.0
        checked = 0
        for pair in range(20):
            cfg = AnsatzConfig(lx=4, ly=1, n_states=2, channels=2, filter_size=3,
                               blocks=1, expansion=2, hidden=2,
                               marshall=bool(pair % 2))
            theta = initialize_parameters(cfg, seed=920 + pair)
            theta = theta + 0.05 * rng.standard_normal(theta.shape)
            ev = NeuralBasisEvaluator(theta, cfg)
            base = np.array([1, 1, -1, -1], dtype=np.int8)
            while True:
                tup = np.stack([rng.permutation(base) for _ in range(2)])
                _, _, logabs, _ = basis_matrix(ev, tup)
                if np.isfinite(logabs) and logabs > -10:
                    break
            phimat, offsets, _, _ = basis_matrices(ev, tup[None])
            traces = jacobian_traces(ev, tup[None], phimat, offsets)[0]
            sel = rng.choice(len(theta), size=25, replace=False)
            for mu in sel:
                step = 1e-5
                vals = []
                for sgn in (1, -1):
                    shifted = theta.copy()
                    shifted[mu] += sgn * step
                    ev2 = NeuralBasisEvaluator(shifted, cfg)
                    _, offs, logabs, phase = basis_matrix(ev2, tup)
                    vals.append((logabs + offs.sum(), np.angle(phase)))
                dmag = (vals[0][0] - vals[1][0]) / (2 * step)
                dph = (vals[0][1] - vals[1][1] + np.pi) % (2 * np.pi) - np.pi
                fd = dmag + 1j * dph / (2 * step)
                scale = max(1.0, abs(fd))
                worst = max(worst, abs(traces[mu] - fd) / scale)
                checked += 1
        report(
            "criterion 9d (Jacobian traces vs finite differences)",
            worst < 1e-5,
            f"max rel deviation {worst:.2e} over {checked} parameter checks (tol 1e-5)",
        )
