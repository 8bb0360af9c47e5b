import numpy as np
import pytest

from gvmc import lattice
from gvmc.ansatz import (
    AnsatzConfig,
    DenseBasisEvaluator,
    NeuralBasisEvaluator,
    basis_matrices,
    basis_matrix,
    build_layout,
    initialize_parameters,
    jacobian_traces,
    load_checkpoint,
    save_checkpoint,
)
from gvmc.ansatz.config import ParameterLayout


def small_cfg(**kw):
    defaults = dict(
        lx=4, ly=1, n_states=2, feature_map=True, channels=2, filter_size=3,
        blocks=1, expansion=2, hidden=3,
    )
    defaults.update(kw)
    return AnsatzConfig(**defaults)


def random_tuple(rng, cfg, evaluator=None):
    """Random zero-magnetization tuple with a nonsingular overlap matrix."""
    geom = cfg.geometry
    base = np.array([1] * (geom.n_sites // 2) + [-1] * (geom.n_sites // 2), dtype=np.int8)
    for _ in range(200):
        tup = np.stack([rng.permutation(base) for _ in range(cfg.n_states)])
        if evaluator is None:
            if len(set(map(tuple, tup.tolist()))) == cfg.n_states:
                return tup
            continue
        _, _, logabs, _ = basis_matrix(evaluator, tup)
        if np.isfinite(logabs) and logabs > -20:
            return tup
    raise RuntimeError("no valid tuple found")


def fd_logdet_grad(theta, cfg, tup, mu, step=1e-5):
    """Central difference of log det Phi(S) along one parameter."""
    values = []
    for sgn in (+1, -1):
        shifted = theta.copy()
        shifted[mu] += sgn * step
        ev = NeuralBasisEvaluator(shifted, cfg)
        _, offsets, logabs, phase = basis_matrix(ev, tup)
        values.append((logabs + offsets.sum(), np.angle(phase)))
    dmag = (values[0][0] - values[1][0]) / (2 * step)
    dphase = values[0][1] - values[1][1]
    dphase = (dphase + np.pi) % (2 * np.pi) - np.pi
    return dmag + 1j * dphase / (2 * step)


class TestLayout:
    def test_bijection(self):
        cfg = small_cfg()
        layout = build_layout(cfg)
        sizes = sum(s.size for s in layout.segments)
        assert sizes == layout.size
        theta = np.arange(layout.size, dtype=float)
        for seg in layout.segments:
            val = layout.get(theta, seg.name)
            copy = np.zeros(layout.size)
            layout.set(copy, seg.name, val)
            assert np.allclose(copy[layout.slice(seg.name)], theta[layout.slice(seg.name)])

    def test_table_roundtrip(self):
        layout = build_layout(small_cfg())
        again = ParameterLayout.from_table(layout.table())
        assert again == layout


class TestLogAmps:
    def test_zero_heads_unit_amplitude(self):
        cfg = small_cfg(feature_map=False)
        theta = np.zeros(build_layout(cfg).size)
        ev = NeuralBasisEvaluator(theta, cfg)
        la = ev.log_amps(np.array([[1, -1, 1, -1]], dtype=np.int8))
        assert np.allclose(la, 0.0, atol=1e-14)

    def test_momentum_projection_invariance(self):
        # n_states must not exceed the dimension of the momentum sector
        for geom_args, q, n in (((4, 1), (2, 0), 2), ((4, 1), (1, 0), 1), ((2, 2), (1, 1), 1)):
            cfg = small_cfg(lx=geom_args[0], ly=geom_args[1], momentum=q, hidden=2, n_states=n)
            theta = initialize_parameters(cfg, seed=11)
            ev = NeuralBasisEvaluator(theta, cfg)
            geom = cfg.geometry
            sector = lattice.sector_enumerate(geom, 0)
            la = ev.log_amps(sector)
            amps = np.exp(la)
            for t, (tx, ty) in enumerate(geom.translations):
                translated = sector[:, geom.translation_tables[t]]
                la_t = ev.log_amps(translated)
                phase = np.exp(
                    2j * np.pi * (q[0] * tx / geom.lx + q[1] * ty / geom.ly)
                )
                assert np.allclose(np.exp(la_t), phase * amps, atol=1e-10)

    def test_spin_flip_sectors(self):
        for q_sf, sign in ((0, 1.0), (1, -1.0)):
            cfg = small_cfg(spin_flip=q_sf)
            theta = initialize_parameters(cfg, seed=3)
            ev = NeuralBasisEvaluator(theta, cfg)
            config = np.array([[1, -1, -1, 1]], dtype=np.int8)
            a = np.exp(ev.log_amps(config))
            b = np.exp(ev.log_amps(-config))
            assert np.allclose(b, sign * a, atol=1e-12)

    def test_marshall_toggle_multiplies_sign(self):
        cfg = small_cfg(marshall=False)
        theta = initialize_parameters(cfg, seed=5)
        ev0 = NeuralBasisEvaluator(theta, cfg)
        ev1 = NeuralBasisEvaluator(theta, small_cfg(marshall=True))
        geom = cfg.geometry
        sector = lattice.sector_enumerate(geom, 0)
        signs = lattice.marshall_signs(geom, sector)
        a0 = np.exp(ev0.log_amps(sector))
        a1 = np.exp(ev1.log_amps(sector))
        assert np.allclose(a1, signs[:, None] * a0, atol=1e-12)

    def test_heads_distinguishable_at_init(self, rng):
        cfg = small_cfg()
        theta = initialize_parameters(cfg, seed=1)
        ev = NeuralBasisEvaluator(theta, cfg)
        tup = random_tuple(rng, cfg)
        phimat, _, logabs, _ = basis_matrices(ev, tup[None])
        assert np.isfinite(logabs[0])
        assert np.linalg.svd(phimat[0], compute_uv=False)[-1] > 0


class TestBasisMatrix:
    def test_repeated_row_zero_det(self):
        cfg = small_cfg()
        theta = initialize_parameters(cfg, seed=2)
        ev = NeuralBasisEvaluator(theta, cfg)
        row = np.array([1, -1, 1, -1], dtype=np.int8)
        tup = np.stack([row, row])
        _, _, logabs, _ = basis_matrix(ev, tup)
        assert logabs < -25  # numerically singular

    def test_row_offsets_consistent(self, rng):
        cfg = small_cfg()
        theta = initialize_parameters(cfg, seed=7)
        ev = NeuralBasisEvaluator(theta, cfg)
        tup = random_tuple(rng, cfg)
        phimat, offsets, logabs, sign = basis_matrix(ev, tup)
        la = ev.log_amps(tup)
        direct = np.exp(la)
        rebuilt = phimat * np.exp(offsets)[:, None]
        assert np.allclose(rebuilt, direct, atol=1e-12)
        full = np.linalg.slogdet(direct)
        assert logabs + offsets.sum() == pytest.approx(full[1], abs=1e-10)

    def test_matches_columnwise_amplitudes(self, rng):
        cfg = small_cfg(momentum=(2, 0), marshall=True)
        theta = initialize_parameters(cfg, seed=9)
        ev = NeuralBasisEvaluator(theta, cfg)
        tup = random_tuple(rng, cfg, ev)
        phimat, offsets, _, _ = basis_matrix(ev, tup)
        for i in range(cfg.n_states):
            la_row = ev.log_amps(tup[i][None])[0]
            assert np.allclose(phimat[i] * np.exp(offsets[i]), np.exp(la_row), atol=1e-12)


class TestJacobian:
    @pytest.mark.parametrize(
        "kw",
        [
            dict(),
            dict(momentum=(2, 0), marshall=True),
            dict(feature_map=False, hidden=4),
            dict(spin_flip=0, blocks=2),
        ],
    )
    def test_finite_difference(self, kw, rng):
        cfg = small_cfg(**kw)
        theta = initialize_parameters(cfg, seed=13)
        ev = NeuralBasisEvaluator(theta, cfg)
        tup = random_tuple(rng, cfg, ev)
        phimat, offsets, _, _ = basis_matrices(ev, tup[None])
        traces = jacobian_traces(ev, tup[None], phimat, offsets)[0]
        layout = ev.layout
        check = rng.choice(layout.size, size=min(40, layout.size), replace=False)
        for mu in check:
            fd = fd_logdet_grad(theta, cfg, tup, mu)
            scale = max(1.0, abs(fd))
            assert traces[mu] == pytest.approx(fd, abs=2e-5 * scale), f"mu={mu}"

    def test_gauge_parameter_trace_one(self, rng):
        # the constant head bias shifts the column's log-amplitude uniformly
        cfg = small_cfg()
        theta = initialize_parameters(cfg, seed=17)
        ev = NeuralBasisEvaluator(theta, cfg)
        tups = np.stack([random_tuple(rng, cfg, ev) for _ in range(5)])
        phimat, offsets, _, _ = basis_matrices(ev, tups)
        traces = jacobian_traces(ev, tups, phimat, offsets)
        layout = ev.layout
        for j in range(cfg.n_states):
            seg = layout.by_name[f"head{j}.c"]
            assert np.allclose(traces[:, seg.offset], 1.0, atol=1e-10)
            assert np.allclose(traces[:, seg.offset + 1], 1j, atol=1e-10)

    def test_head_parameter_locality(self, rng):
        # head-j parameters touch only column j: with other columns scaled,
        # the j-trace is unchanged
        cfg = small_cfg()
        theta = initialize_parameters(cfg, seed=19)
        ev = NeuralBasisEvaluator(theta, cfg)
        tup = random_tuple(rng, cfg, ev)
        phimat, offsets, _, _ = basis_matrices(ev, tup[None])
        traces = jacobian_traces(ev, tup[None], phimat, offsets)[0]
        layout = ev.layout
        theta2 = theta.copy()
        seg_c = layout.by_name["head1.c"]
        theta2[seg_c.offset] += 0.3  # rescale column 1 only
        ev2 = NeuralBasisEvaluator(theta2, cfg)
        phimat2, offsets2, _, _ = basis_matrices(ev2, tup[None])
        traces2 = jacobian_traces(ev2, tup[None], phimat2, offsets2)[0]
        sl = layout.head_slice(1)
        assert np.allclose(traces[sl], traces2[sl], atol=1e-9)


class TestDenseEvaluator:
    def test_lookup_matches_columns(self, rng):
        geom = lattice.LatticeGeometry(4, 1)
        sector = lattice.sector_enumerate(geom, 0)
        cols = rng.standard_normal((6, 2)) + 1j * rng.standard_normal((6, 2))
        ev = DenseBasisEvaluator(sector, cols)
        la = ev.log_amps(sector)
        assert np.allclose(np.exp(la), cols, atol=1e-12)


class TestCheckpoint:
    def test_roundtrip(self, tmp_path, rng):
        cfg = small_cfg()
        theta = initialize_parameters(cfg, seed=23)
        layout = build_layout(cfg)
        run_cfg = {"any": "thing", "seed": 1}
        path = tmp_path / "state.ckpt"
        rng_state = np.random.default_rng(4).bit_generator.state
        save_checkpoint(path, theta, layout, cfg, run_cfg, step=42, rng_state=rng_state)
        ck = load_checkpoint(path)
        assert np.array_equal(ck.params, theta)
        assert ck.step == 42
        assert ck.ansatz_config == cfg
        assert ck.layout == layout
        assert ck.rng_state == rng_state
        ck.verify_hash(run_cfg)

    def test_hash_mismatch(self, tmp_path):
        from gvmc.errors import HashMismatch

        cfg = small_cfg()
        theta = initialize_parameters(cfg, seed=29)
        path = tmp_path / "state.ckpt"
        save_checkpoint(path, theta, build_layout(cfg), cfg, {"seed": 1})
        ck = load_checkpoint(path)
        with pytest.raises(HashMismatch):
            ck.verify_hash({"seed": 2})


class TestOverflowGuard:
    def test_numpy_path_raises(self):
        from gvmc.errors import AmplitudeOverflow

        cfg = small_cfg(feature_map=False, hidden=4)
        theta = initialize_parameters(cfg, seed=3) * 3000.0
        ev = NeuralBasisEvaluator(theta, cfg)
        with pytest.raises(AmplitudeOverflow):
            ev.log_amps_reference(np.array([[1, -1, 1, -1]], dtype=np.int8))
