import numpy as np
import pytest

from glaudio.errors import (
    InsufficientSamples,
    NonIntegralSpectrum,
    RepeatedEigenvalues,
    TooLargeForOracle,
    VertexOutOfRange,
)
from glaudio.graph import build_graph, build_operator
from glaudio.spectral import (
    compare_encodings,
    eigendecompose,
    exact_signal,
    exact_velocity,
    moment_sequence,
    receptive_field,
    recover_projections,
    vertex_signal,
)
from glaudio.wave import WaveConfig, node_sequence, propagate

SQ2 = np.sqrt(2.0)
SQ3 = np.sqrt(3.0)
SQ6 = np.sqrt(6.0)


def make_op(n, edges, variant="combinatorial"):
    return build_operator(build_graph(n, edges), variant)


def p2_op():
    return make_op(2, [(0, 1)])


def p3_op():
    return make_op(3, [(0, 1), (1, 2)])


def k3_op():
    return make_op(3, [(0, 1), (0, 2), (1, 2)])


def random_op(n, rng, p=0.5, variant="combinatorial"):
    edges = [(u, v) for u in range(n) for v in range(u + 1, n) if rng.random() < p]
    if not edges:
        edges = [(0, 1 % max(n, 2))] if n > 1 else []
    return make_op(n, edges, variant)


class TestEigendecompose:
    def test_p2_spectrum_and_vectors(self):
        dec = eigendecompose(p2_op())
        np.testing.assert_allclose(dec.eigenvalues, [0.0, 2.0], atol=1e-12)
        np.testing.assert_allclose(dec.eigenvectors[:, 0], [1 / SQ2, 1 / SQ2], atol=1e-12)
        np.testing.assert_allclose(dec.eigenvectors[:, 1], [1 / SQ2, -1 / SQ2], atol=1e-12)

    def test_p3_spectrum(self):
        dec = eigendecompose(p3_op())
        np.testing.assert_allclose(dec.eigenvalues, [0.0, 1.0, 3.0], atol=1e-12)

    def test_k3_spectrum_repeated(self):
        dec = eigendecompose(k3_op())
        np.testing.assert_allclose(dec.eigenvalues, [0.0, 3.0, 3.0], atol=1e-12)

    def test_reconstruction_and_orthonormality(self):
        rng = np.random.default_rng(0)
        for variant in ("combinatorial", "normalized", "combinatorial-selfloop",
                        "normalized-selfloop"):
            op = random_op(9, rng, variant=variant)
            dec = eigendecompose(op)
            rebuilt = dec.eigenvectors @ np.diag(dec.eigenvalues) @ dec.eigenvectors.T
            assert np.abs(rebuilt - op.matrix.toarray()).max() <= 1e-8
            gram = dec.eigenvectors.T @ dec.eigenvectors
            assert np.abs(gram - np.eye(op.n)).max() <= 1e-10

    def test_sign_convention_deterministic(self):
        dec = eigendecompose(p3_op())
        for j in range(3):
            col = dec.eigenvectors[:, j]
            assert col[np.argmax(np.abs(col))] > 0

    def test_oracle_limit(self):
        with pytest.raises(TooLargeForOracle):
            eigendecompose(k3_op(), oracle_limit=2)

    def test_eigenvalues_clamped_nonnegative(self):
        rng = np.random.default_rng(1)
        dec = eigendecompose(random_op(8, rng))
        assert (dec.eigenvalues >= 0).all()


class TestExactSignal:
    def test_p2_full_transfer(self):
        dec = eigendecompose(p2_op())
        t = np.pi / SQ2
        out = exact_signal(dec, np.array([1.0, 0.0]), [t])
        np.testing.assert_allclose(out[0], [0.0, 1.0], atol=1e-12)

    def test_time_zero_returns_features(self):
        rng = np.random.default_rng(2)
        op = random_op(6, rng)
        dec = eigendecompose(op)
        x0 = rng.standard_normal((6, 3))
        out = exact_signal(dec, x0, [0.0])
        np.testing.assert_allclose(out[0], x0, atol=1e-12)

    def test_kernel_mode_constant(self):
        dec = eigendecompose(k3_op())
        x0 = np.full(3, 2.5)
        out = exact_signal(dec, x0, [0.3, 1.7, 4.0])
        np.testing.assert_allclose(out, np.tile(x0, (3, 1)), atol=1e-12)

    def test_exact_energy_conservation(self):
        rng = np.random.default_rng(3)
        op = random_op(7, rng)
        dec = eigendecompose(op)
        x0 = rng.standard_normal((7, 2))
        times = np.linspace(0.0, 5.0, 21)
        xs = exact_signal(dec, x0, times)
        vs = exact_velocity(dec, x0, times)
        energies = [0.5 * np.sum(vs[i] ** 2) + 0.5 * np.sum(xs[i] * op.apply(xs[i]))
                    for i in range(len(times))]
        e0 = energies[0]
        assert max(abs(e - e0) for e in energies) <= 1e-8 * max(e0, 1.0)


class TestMoments:
    def test_k3_first_moment(self):
        op = k3_op()
        moments = moment_sequence(op, np.array([1.0, 0.0, 0.0]), 1)
        np.testing.assert_array_equal(moments[1], [2.0, -1.0, -1.0])

    def test_zero_features(self):
        moments = moment_sequence(p2_op(), np.zeros(2), 4)
        assert all(not m.any() for m in moments)

    def test_kernel_vector_higher_moments_vanish(self):
        moments = moment_sequence(p2_op(), np.array([1.0, 1.0]), 5)
        np.testing.assert_array_equal(moments[0], [1.0, 1.0])
        for m in moments[1:]:
            assert np.array_equal(m, np.zeros(2))


class TestCompareEncodings:
    TIMES = np.linspace(0.0625, 4.0, 64)

    def test_identity_case(self):
        op = p2_op()
        x0 = np.array([1.0, 0.0])
        verdict = compare_encodings(op, x0, op, x0, 16, self.TIMES)
        assert verdict.moments_agree and verdict.signals_agree and verdict.consistent

    def test_p2_vs_edgeless_differ(self):
        x0 = np.array([1.0, 0.0])
        edgeless = make_op(2, [])
        verdict = compare_encodings(p2_op(), x0, edgeless, x0, 16, self.TIMES)
        assert not verdict.moments_agree
        assert not verdict.signals_agree
        assert verdict.consistent
        # first moments: (1,-1) vs (0,0)
        assert verdict.max_moment_deviation >= 0.5

    def test_distinct_graphs_can_share_encoding(self):
        x0 = np.array([1.0, 1.0])
        verdict = compare_encodings(p2_op(), x0, make_op(2, []), x0, 16, self.TIMES)
        assert verdict.moments_agree and verdict.signals_agree and verdict.consistent

    def test_randomized_equivalence_property(self):
        rng = np.random.default_rng(4)
        for trial in range(40):
            n = int(rng.integers(2, 9))
            op_g = random_op(n, rng, p=0.5)
            x_g = rng.standard_normal(n)
            if trial % 4 == 0:
                op_h, x_h = op_g, x_g
            elif trial % 4 == 1:
                op_h, x_h = random_op(n, rng, p=0.5), x_g.copy()
            elif trial % 4 == 2:
                op_h, x_h = op_g, rng.standard_normal(n)
            else:
                op_h, x_h = random_op(n, rng, p=0.5), np.full(n, x_g[0])
                x_g = np.full(n, x_g[0])
            verdict = compare_encodings(op_g, x_g, op_h, x_h, 16, self.TIMES)
            assert verdict.consistent, (trial, verdict)


class TestReceptiveField:
    def test_p3_middle_vertex_blind_to_odd_mode(self):
        dec = eigendecompose(p3_op())
        field = receptive_field(dec, 1)
        assert field.member_indices.tolist() == [0, 2]
        assert field.unique_spectrum

    def test_p3_end_vertex_sees_everything(self):
        dec = eigendecompose(p3_op())
        field = receptive_field(dec, 0)
        assert field.member_indices.tolist() == [0, 1, 2]

    def test_k3_repeated_spectrum_flagged(self):
        dec = eigendecompose(k3_op())
        field = receptive_field(dec, 0)
        assert not field.unique_spectrum

    def test_membership_recomputable(self):
        rng = np.random.default_rng(5)
        op = random_op(8, rng)
        dec = eigendecompose(op)
        field = receptive_field(dec, 3, tol=1e-8)
        thresholds = 1e-8 * np.max(np.abs(dec.eigenvectors), axis=0)
        recomputed = np.flatnonzero(np.abs(dec.eigenvectors[3, :]) > thresholds)
        assert field.member_indices.tolist() == recomputed.tolist()

    def test_vertex_out_of_range(self):
        with pytest.raises(VertexOutOfRange):
            receptive_field(eigendecompose(p2_op()), 2)


def mirrored_graph(rng, half_size):
    """Center vertex 0 joined symmetrically to two copies of a random graph;
    antisymmetric eigenvectors vanish at the center exactly."""
    inner = [(u, v) for u in range(half_size)
             for v in range(u + 1, half_size) if rng.random() < 0.6]
    edges = []
    for u, v in inner:
        edges.append((1 + u, 1 + v))
        edges.append((1 + half_size + u, 1 + half_size + v))
    anchors = [0] + sorted(set(rng.integers(0, half_size, size=2).tolist()))
    for a in anchors:
        edges.append((0, 1 + a))
        edges.append((0, 1 + half_size + a))
    n = 1 + 2 * half_size
    return build_graph(n, sorted(set(edges)))


class TestSupportInvariance:
    def test_p3_center_invariant_to_excluded_mode(self):
        op = p3_op()
        dec = eigendecompose(op)
        x = np.array([0.4, -1.2, 2.0])
        odd = dec.eigenvectors[:, 1]  # zero at the middle vertex
        times = np.linspace(0.0, 4.0, 33)
        base = exact_signal(dec, x, times)[:, 1]
        bumped = exact_signal(dec, x + 3.7 * odd, times)[:, 1]
        assert np.abs(base - bumped).max() <= 1e-9

        cfg = WaveConfig.from_time(400, 4.0)
        sig_base = propagate(op, x, cfg)
        sig_bump = propagate(op, x + 3.7 * odd, cfg)
        grid = np.arange(cfg.num_steps + 1) * cfg.step_size
        bound = np.abs(sig_base.positions[:, :, 0]
                       - exact_signal(dec, x, grid)).max()
        seq_diff = np.abs(node_sequence(sig_base, 1) - node_sequence(sig_bump, 1)).max()
        assert seq_diff <= 10 * max(bound, 1e-12)

    def test_mirrored_random_graphs(self):
        rng = np.random.default_rng(6)
        found = 0
        for _ in range(12):
            g = mirrored_graph(rng, int(rng.integers(2, 5)))
            op = build_operator(g, "combinatorial")
            dec = eigendecompose(op)
            field = receptive_field(dec, 0)
            excluded = [i for i in range(g.n) if i not in field.member_indices]
            if not field.unique_spectrum or not excluded:
                continue
            found += 1
            x = rng.standard_normal(g.n)
            u = dec.eigenvectors[:, excluded] @ rng.standard_normal(len(excluded))
            times = np.linspace(0.0, 4.0, 17)
            base = exact_signal(dec, x, times)[:, 0]
            bumped = exact_signal(dec, x + u, times)[:, 0]
            assert np.abs(base - bumped).max() <= 1e-9
        assert found >= 3


class TestVertexSignal:
    def test_sqrt_flavor_matches_exact_signal(self):
        rng = np.random.default_rng(7)
        op = random_op(6, rng)
        dec = eigendecompose(op)
        x = rng.standard_normal(6)
        times = np.linspace(0.0, 3.0, 11)
        full = exact_signal(dec, x, times)
        for v in (0, 3):
            np.testing.assert_allclose(vertex_signal(dec, x, v, times), full[:, v],
                                       atol=1e-12)

    def test_eigenvalue_flavor_frequency(self):
        # P2 signal at vertex 0 is (1 + cos(lambda*t))/2 with lambda = 2.
        dec = eigendecompose(p2_op())
        x = np.array([1.0, 0.0])
        value = vertex_signal(dec, x, 0, [np.pi / 4.0], frequencies="eigenvalue")[0]
        np.testing.assert_allclose(value, 0.5, atol=1e-12)
        value = vertex_signal(dec, x, 0, [np.pi / 2.0], frequencies="eigenvalue")[0]
        np.testing.assert_allclose(value, 0.0, atol=1e-12)


class TestRecoverProjections:
    def p3_setup(self, x, steps=100_000, k=1):
        op = p3_op()
        dec = eigendecompose(op)
        grid = np.linspace(0.0, 2 * np.pi * k, steps + 1)
        signal = vertex_signal(dec, x, 0, grid, frequencies="eigenvalue")
        return dec, signal

    def test_p3_known_projections(self):
        x = np.array([1.0, 0.0, 0.0])
        dec, signal = self.p3_setup(x)
        estimates = recover_projections(signal, dec, 0, 1, 100_000)
        truth = dec.eigenvectors.T @ x
        assert set(estimates) == {0, 1, 2}
        for i, value in estimates.items():
            assert abs(value - truth[i]) <= 1e-4
        np.testing.assert_allclose(sorted(abs(v) for v in estimates.values()),
                                   sorted([1 / SQ3, 1 / SQ2, 1 / SQ6]), atol=1e-4)

    def test_zero_features(self):
        x = np.zeros(3)
        dec, signal = self.p3_setup(x)
        estimates = recover_projections(signal, dec, 0, 1, 100_000)
        assert all(abs(v) <= 1e-9 for v in estimates.values())

    def test_single_eigenvector_input(self):
        dec = eigendecompose(p3_op())
        x = dec.eigenvectors[:, 2].copy()
        _, signal = self.p3_setup(x)
        estimates = recover_projections(signal, dec, 0, 1, 100_000)
        np.testing.assert_allclose([estimates[0], estimates[1], estimates[2]],
                                   [0.0, 0.0, 1.0], atol=1e-4)

    def test_reconstruction_onto_receptive_span(self):
        rng = np.random.default_rng(8)
        dec = eigendecompose(p3_op())
        for v in (0, 1):
            x = rng.standard_normal(3)
            grid = np.linspace(0.0, 2 * np.pi, 100_001)
            signal = vertex_signal(dec, x, v, grid, frequencies="eigenvalue")
            estimates = recover_projections(signal, dec, v, 1, 100_000)
            members = sorted(estimates)
            recon = sum(estimates[i] * dec.eigenvectors[:, i] for i in members)
            truth = sum((dec.eigenvectors[:, i] @ x) * dec.eigenvectors[:, i]
                        for i in members)
            assert np.abs(recon - truth).max() <= 1e-4

    def test_non_integral_spectrum_rejected(self):
        op = make_op(4, [(0, 1), (1, 2), (2, 3)])  # P4: eigenvalues 2 +- sqrt(2)
        dec = eigendecompose(op)
        with pytest.raises(NonIntegralSpectrum):
            recover_projections(np.zeros(101), dec, 0, 1, 100)

    def test_repeated_eigenvalues_rejected(self):
        dec = eigendecompose(k3_op())
        with pytest.raises(RepeatedEigenvalues):
            recover_projections(np.zeros(101), dec, 0, 1, 100)

    def test_insufficient_samples(self):
        dec = eigendecompose(p3_op())
        with pytest.raises(InsufficientSamples):
            recover_projections(np.zeros(50), dec, 0, 1, 100)
