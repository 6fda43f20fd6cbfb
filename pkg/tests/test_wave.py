import warnings

import numpy as np
import pytest

from glaudio.errors import DimensionMismatch, StabilityWarning, TimeOutOfRange, VertexOutOfRange
from glaudio.graph import build_graph, build_operator, permute_graph
from glaudio.spectral import eigendecompose, exact_signal
from glaudio.wave import (
    WaveConfig,
    node_sequence,
    propagate,
    propagate_adjoint,
    sample_step_function,
)


def p2_setup():
    g = build_graph(2, [(0, 1)], [[1.0], [0.0]])
    return g, build_operator(g, "combinatorial")


def random_connected(n, rng):
    # Random spanning tree plus extra edges keeps the graph connected.
    edges = {(min(i, rng.integers(0, i)), max(i, rng.integers(0, i)))
             for i in range(1, n)}
    edges = {(int(u), int(v)) for u, v in edges}
    for _ in range(n):
        u, v = rng.integers(0, n, size=2)
        if u != v:
            edges.add((min(u, v), max(u, v)))
    g = build_graph(n, sorted(edges), rng.standard_normal((n, 2)))
    return g


class TestWaveConfig:
    def test_product_consistency(self):
        cfg = WaveConfig(num_steps=4, step_size=0.25)
        assert cfg.stopping_time == 1.0
        cfg = WaveConfig(num_steps=4, step_size=0.25, stopping_time=1.0)
        assert cfg.stopping_time == 1.0

    def test_inconsistent_product_rejected(self):
        with pytest.raises(ValueError):
            WaveConfig(num_steps=4, step_size=0.25, stopping_time=1.1)

    def test_from_time(self):
        cfg = WaveConfig.from_time(10, 4.0)
        assert cfg.step_size == 0.4

    def test_bad_values(self):
        with pytest.raises(ValueError):
            WaveConfig(num_steps=0, step_size=0.1)
        with pytest.raises(ValueError):
            WaveConfig(num_steps=1, step_size=0.0)


class TestPropagate:
    def test_p2_single_step_hand_values(self):
        g, op = p2_setup()
        sig = propagate(op, g.features, WaveConfig(num_steps=1, step_size=0.1))
        np.testing.assert_allclose(sig.velocities[1].ravel(), [-0.1, 0.1], atol=0)
        np.testing.assert_allclose(sig.positions[1].ravel(), [0.99, 0.01], atol=0)
        np.testing.assert_array_equal(sig.positions[0], g.features)
        np.testing.assert_array_equal(sig.velocities[0], 0.0)

    def test_zero_initial_state_stays_zero(self):
        g, op = p2_setup()
        sig = propagate(op, np.zeros((2, 3)), WaveConfig(num_steps=5, step_size=0.1))
        assert not sig.positions.any()
        assert not sig.velocities.any()

    def test_kernel_vector_is_fixed_point(self):
        g = build_graph(3, [(0, 1), (0, 2), (1, 2)])
        op = build_operator(g, "combinatorial")
        x0 = np.full((3, 1), 0.7)
        sig = propagate(op, x0, WaveConfig(num_steps=7, step_size=0.2))
        for i in range(8):
            assert np.array_equal(sig.positions[i], x0)
            assert np.array_equal(sig.velocities[i], np.zeros((3, 1)))

    def test_stability_warning_when_violated(self):
        g, op = p2_setup()
        with pytest.warns(StabilityWarning):
            propagate(op, g.features, WaveConfig(num_steps=2, step_size=1.5))

    def test_no_warning_inside_stable_region(self):
        g, op = p2_setup()
        with warnings.catch_warnings():
            warnings.simplefilter("error")
            propagate(op, g.features, WaveConfig(num_steps=2, step_size=0.5))

    def test_dimension_mismatch(self):
        _, op = p2_setup()
        with pytest.raises(DimensionMismatch):
            propagate(op, np.zeros((3, 1)), WaveConfig(num_steps=1, step_size=0.1))

    def test_streaming_mode_drops_velocities(self):
        g, op = p2_setup()
        cfg = WaveConfig(num_steps=3, step_size=0.1)
        full = propagate(op, g.features, cfg)
        slim = propagate(op, g.features, cfg, record_velocities=False)
        assert slim.velocities is None
        assert np.array_equal(slim.positions, full.positions)

    def test_recurrence_recheckable(self):
        rng = np.random.default_rng(0)
        g = random_connected(6, rng)
        op = build_operator(g, "normalized")
        cfg = WaveConfig(num_steps=9, step_size=0.2)
        sig = propagate(op, g.features, cfg)
        h = cfg.step_size
        for i in range(cfg.num_steps):
            v_next = sig.velocities[i] - h * op.apply(sig.positions[i])
            assert np.array_equal(sig.velocities[i + 1], v_next)
            assert np.array_equal(sig.positions[i + 1], sig.positions[i] + h * v_next)

    def test_linearity(self):
        rng = np.random.default_rng(1)
        g = random_connected(7, rng)
        op = build_operator(g, "combinatorial")
        cfg = WaveConfig(num_steps=12, step_size=0.05)
        x = rng.standard_normal((7, 2))
        y = rng.standard_normal((7, 2))
        a, b = 1.7, -0.3
        combined = propagate(op, a * x + b * y, cfg).positions
        separate = a * propagate(op, x, cfg).positions + b * propagate(op, y, cfg).positions
        scale = max(1.0, np.abs(separate).max())
        assert np.abs(combined - separate).max() <= 1e-10 * scale

    def test_permutation_equivariance(self):
        # Relabeling reorders the row accumulation, so agreement is to one
        # ulp rather than bitwise; the operator itself matches entrywise
        # (see test_graph.test_permutation_consistency).
        rng = np.random.default_rng(2)
        g = random_connected(6, rng)
        perm = rng.permutation(g.n)
        permuted = permute_graph(g, perm)
        cfg = WaveConfig(num_steps=8, step_size=0.1)
        base = propagate(build_operator(g, "combinatorial"), g.features, cfg)
        moved = propagate(build_operator(permuted, "combinatorial"),
                          permuted.features, cfg)
        assert np.abs(moved.positions[:, perm, :] - base.positions).max() <= 1e-14

    def test_component_locality_bitwise(self):
        # Two disjoint components; perturbing one leaves the other bit-identical.
        edges = [(0, 1), (1, 2), (3, 4)]
        feats = np.arange(10, dtype=float).reshape(5, 2)
        g = build_graph(5, edges, feats)
        op = build_operator(g, "combinatorial")
        cfg = WaveConfig(num_steps=10, step_size=0.1)
        base = propagate(op, g.features, cfg)
        bumped_feats = feats.copy()
        bumped_feats[4] += 123.456
        bumped = propagate(op, bumped_feats, cfg)
        for v in (0, 1, 2):
            assert np.array_equal(node_sequence(base, v), node_sequence(bumped, v))
        assert not np.array_equal(node_sequence(base, 4), node_sequence(bumped, 4))

    def test_first_order_convergence_halving_ratio(self):
        rng = np.random.default_rng(3)
        for trial in range(3):
            n = int(rng.integers(4, 11))
            g = random_connected(n, rng)
            op = build_operator(g, "combinatorial")
            dec = eigendecompose(op)
            stopping = 2.0
            errors = []
            for steps in (200, 400):
                cfg = WaveConfig.from_time(steps, stopping)
                sig = propagate(op, g.features, cfg)
                times = np.arange(steps + 1) * cfg.step_size
                exact = exact_signal(dec, g.features, times)
                errors.append(np.abs(sig.positions - exact).max())
            ratio = errors[0] / errors[1]
            assert 1.7 <= ratio <= 2.3

    def test_near_conservation_of_energy(self):
        # The raw-energy oscillation amplitude is ~0.5*h*sqrt(lambda)*E, so
        # the 5% band is exercised at h*sqrt(bound) = 0.1 (inside the stated
        # h*sqrt(bound) <= 1 region).
        rng = np.random.default_rng(4)
        g = random_connected(8, rng)
        op = build_operator(g, "combinatorial")
        h = 0.1 / np.sqrt(op.max_eigenvalue_bound)
        cfg = WaveConfig(num_steps=2000, step_size=h)
        sig = propagate(op, g.features, cfg)
        energies = [
            0.5 * np.sum(sig.velocities[i] ** 2)
            + 0.5 * np.sum(sig.positions[i] * op.apply(sig.positions[i]))
            for i in range(0, cfg.num_steps + 1, 50)
        ]
        e0 = energies[0]
        assert max(abs(e - e0) for e in energies) <= 0.05 * e0


class TestStepFunction:
    def test_first_cell(self):
        g, op = p2_setup()
        sig = propagate(op, g.features, WaveConfig(num_steps=4, step_size=0.5))
        np.testing.assert_array_equal(sample_step_function(sig, 0, 0.25),
                                      sig.positions[1, 0])

    def test_second_cell(self):
        g, op = p2_setup()
        sig = propagate(op, g.features, WaveConfig(num_steps=4, step_size=0.5))
        np.testing.assert_array_equal(sample_step_function(sig, 0, 0.75),
                                      sig.positions[2, 0])

    def test_last_cell_boundary(self):
        g, op = p2_setup()
        sig = propagate(op, g.features, WaveConfig(num_steps=4, step_size=0.5))
        np.testing.assert_array_equal(sample_step_function(sig, 1, 2.0),
                                      sig.positions[4, 1])

    def test_cell_boundaries_belong_to_lower_cell(self):
        g, op = p2_setup()
        sig = propagate(op, g.features, WaveConfig(num_steps=4, step_size=0.5))
        np.testing.assert_array_equal(sample_step_function(sig, 0, 0.5),
                                      sig.positions[1, 0])

    def test_time_out_of_range(self):
        g, op = p2_setup()
        sig = propagate(op, g.features, WaveConfig(num_steps=2, step_size=0.5))
        with pytest.raises(TimeOutOfRange):
            sample_step_function(sig, 0, 0.0)
        with pytest.raises(TimeOutOfRange):
            sample_step_function(sig, 0, 1.5)

    def test_vertex_out_of_range(self):
        g, op = p2_setup()
        sig = propagate(op, g.features, WaveConfig(num_steps=2, step_size=0.5))
        with pytest.raises(VertexOutOfRange):
            sample_step_function(sig, 5, 0.5)


class TestNodeSequence:
    def test_p2_from_hand_example(self):
        g, op = p2_setup()
        sig = propagate(op, g.features, WaveConfig(num_steps=1, step_size=0.1))
        np.testing.assert_allclose(node_sequence(sig, 0), [[0.99]], atol=0)

    def test_zero_features_zero_sequence(self):
        g, op = p2_setup()
        sig = propagate(op, np.zeros((2, 1)), WaveConfig(num_steps=3, step_size=0.1))
        assert not node_sequence(sig, 1).any()

    def test_velocity_concatenation(self):
        g, op = p2_setup()
        sig = propagate(op, g.features, WaveConfig(num_steps=1, step_size=0.1))
        np.testing.assert_allclose(node_sequence(sig, 0, include_velocity=True),
                                   [[0.99, -0.1]], atol=0)

    def test_include_initial_prepends_features(self):
        g, op = p2_setup()
        sig = propagate(op, g.features, WaveConfig(num_steps=1, step_size=0.1))
        seq = node_sequence(sig, 0, include_initial=True)
        assert seq.shape == (2, 1)
        assert seq[0, 0] == 1.0

    def test_vertex_out_of_range(self):
        g, op = p2_setup()
        sig = propagate(op, g.features, WaveConfig(num_steps=1, step_size=0.1))
        with pytest.raises(VertexOutOfRange):
            node_sequence(sig, 2)


class TestAdjoint:
    def test_adjoint_matches_finite_differences(self):
        rng = np.random.default_rng(5)
        g = random_connected(5, rng)
        op = build_operator(g, "combinatorial")
        cfg = WaveConfig(num_steps=6, step_size=0.15)
        grads = rng.standard_normal((cfg.num_steps + 1, g.n, 2))
        analytic = propagate_adjoint(op, grads, cfg)

        def objective(x0):
            sig = propagate(op, x0, cfg)
            return float(np.sum(grads * sig.positions))

        delta = 1e-6
        for i in range(g.n):
            for j in range(2):
                plus = g.features.copy()
                minus = g.features.copy()
                plus[i, j] += delta
                minus[i, j] -= delta
                fd = (objective(plus) - objective(minus)) / (2 * delta)
                assert abs(analytic[i, j] - fd) <= 1e-6 * max(1.0, abs(fd))

    def test_adjoint_with_velocity_gradients(self):
        rng = np.random.default_rng(6)
        g = random_connected(4, rng)
        op = build_operator(g, "combinatorial")
        cfg = WaveConfig(num_steps=5, step_size=0.2)
        gp = rng.standard_normal((cfg.num_steps + 1, g.n, 1))
        gv = rng.standard_normal((cfg.num_steps + 1, g.n, 1))
        x0 = rng.standard_normal((g.n, 1))
        analytic = propagate_adjoint(op, gp, cfg, grad_velocities=gv)

        def objective(x):
            sig = propagate(op, x, cfg)
            return float(np.sum(gp * sig.positions) + np.sum(gv * sig.velocities))

        delta = 1e-6
        for i in range(g.n):
            plus, minus = x0.copy(), x0.copy()
            plus[i, 0] += delta
            minus[i, 0] -= delta
            fd = (objective(plus) - objective(minus)) / (2 * delta)
            assert abs(analytic[i, 0] - fd) <= 1e-6 * max(1.0, abs(fd))
