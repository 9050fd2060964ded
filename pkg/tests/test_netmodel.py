import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from freqctl.errors import DimensionError, KronReductionError
from freqctl.netmodel import (
    BusSets,
    ReducedNetwork,
    ac_injections,
    ac_jacobian,
    ac_power_ibrs,
    ac_power_machines,
    dc_partition,
    dc_power_ibrs,
    dc_power_machines,
    kron_reduce,
    kron_reduce_matrix,
)

from conftest import random_network


def branch_sum(net, theta, i, nodes):
    """Per-branch enumeration oracle for the injection of node i toward ``nodes``."""
    total = 0.0
    for j in nodes:
        d = theta[i] - theta[j]
        total += net.emf[i] * net.emf[j] * (net.g[i, j] * math.cos(d) + net.b[i, j] * math.sin(d))
    return total


def two_node(b=1.0, sets=None):
    return ReducedNetwork(g=np.zeros((2, 2)), b=np.array([[-b, b], [b, -b]]), emf=np.ones(2),
                          bus_sets=sets or BusSets((0, 1), ()))


class TestKronReduction:
    def test_nothing_to_eliminate(self):
        Y = np.array([[-2j, 2j], [2j, -2j]])
        assert np.array_equal(kron_reduce_matrix(Y, [0, 1]), Y)

    def test_series_chain(self):
        # a - c - b with y = -j2 on each line; eliminating c leaves b_ab = 1
        y = -2j
        Y = np.array([[y, 0, -y], [0, y, -y], [-y, -y, 2 * y]])
        net = kron_reduce(Y, [0, 1])
        assert net.b[0, 1] == pytest.approx(1.0, abs=1e-14)
        assert net.g[0, 1] == pytest.approx(0.0, abs=1e-14)

    def test_star_matches_full_network_solve(self, rng):
        # centre bus 0 connected to leaves 1..4, shunts on the leaves
        n = 5
        Y = np.zeros((n, n), complex)
        for leaf in range(1, n):
            y = 1 / complex(rng.uniform(0.01, 0.05), rng.uniform(0.1, 0.5))
            Y[0, 0] += y
            Y[leaf, leaf] += y + complex(0.1, -0.05)
            Y[0, leaf] -= y
            Y[leaf, 0] -= y
        keep = [1, 2, 3, 4]
        Y_red = kron_reduce_matrix(Y, keep)
        # oracle: inject currents at the leaves, zero at the centre, solve the full network
        inj = np.zeros(n, complex)
        inj[keep] = rng.standard_normal(4) + 1j * rng.standard_normal(4)
        V = np.linalg.solve(Y, inj)
        assert np.allclose(Y_red @ V[keep], inj[keep], atol=1e-12)

    def test_floating_bus_is_named(self):
        Y = np.zeros((4, 4), complex)
        Y[0, 0] = Y[1, 1] = -1j
        Y[0, 1] = Y[1, 0] = 1j
        # bus 3 connects to nothing
        Y[2, 2] = -1j
        Y[2, 0] = Y[0, 2] = 1j
        Y[0, 0] += -1j
        with pytest.raises(KronReductionError) as err:
            kron_reduce_matrix(Y, [0, 1])
        assert err.value.buses == (3,)

    def test_rejects_asymmetric(self):
        with pytest.raises(ValueError):
            kron_reduce_matrix(np.array([[1, 2], [3, 4]], complex), [0])

    def test_idempotent_on_reduced(self, rng):
        net = random_network(rng, 3, 1)
        Y = net.g + 1j * net.b
        again = kron_reduce(Y, range(4), emf=net.emf, bus_sets=net.bus_sets)
        assert np.array_equal(again.b, net.b) and np.array_equal(again.g, net.g)


class TestBusSets:
    def test_overlap_rejected(self):
        with pytest.raises(ValueError):
            BusSets((0, 1), (1,))

    def test_slack_must_be_a_machine(self):
        with pytest.raises(ValueError):
            BusSets((0, 1), (2,), slack=2)

    def test_needs_a_machine(self):
        with pytest.raises(ValueError):
            BusSets((), (0,))


class TestAcFlow:
    def test_equal_angles_lossless_zero(self, rng):
        net = random_network(rng, 3, 1)
        pe = ac_power_machines(net, np.full(3, 0.3), np.full(1, 0.3))
        assert np.allclose(pe.total, 0.0, atol=1e-14)

    def test_single_line_sine(self):
        pe = ac_power_machines(two_node(), [math.pi / 2, 0.0], [])
        assert pe.total == pytest.approx([1.0, -1.0], abs=1e-15)

    def test_machine_split_matches_branch_oracle(self, rng):
        net = random_network(rng, 3, 1, lossless=False)
        delta, u = rng.uniform(-0.2, 0.2, 3), rng.uniform(-0.2, 0.2, 1)
        theta = net.angles(delta, u)
        pe = ac_power_machines(net, delta, u)
        for i in range(3):
            assert pe.to_machines[i] == pytest.approx(branch_sum(net, theta, i, range(3)), abs=1e-12)
            assert pe.to_ibrs[i] == pytest.approx(branch_sum(net, theta, i, [3]), abs=1e-12)
        assert np.allclose(pe.total, pe.to_machines + pe.to_ibrs, atol=1e-15)

    def test_ibr_split_matches_branch_oracle(self, rng):
        net = random_network(rng, 2, 2, lossless=False)
        delta, u = rng.uniform(-0.3, 0.3, 2), rng.uniform(-0.3, 0.3, 2)
        theta = net.angles(delta, u)
        p = ac_power_ibrs(net, delta, u)
        for k, node in enumerate((2, 3)):
            assert p.to_machines[k] == pytest.approx(branch_sum(net, theta, node, [0, 1]), abs=1e-12)
            assert p.to_ibrs[k] == pytest.approx(branch_sum(net, theta, node, [2, 3]), abs=1e-12)

    def test_one_branch_ibr(self):
        net = two_node(sets=BusSets((0,), (1,)))
        assert ac_power_ibrs(net, [0.2], [0.3]).total[0] == pytest.approx(math.sin(0.1), abs=1e-15)

    def test_dimension_mismatch(self, rng):
        net = random_network(rng, 3, 1)
        with pytest.raises(DimensionError):
            ac_power_machines(net, np.zeros(2), np.zeros(1))

    @settings(max_examples=40, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1), n_gen=st.integers(1, 4), n_ibr=st.integers(0, 3))
    def test_lossless_balance(self, seed, n_gen, n_ibr):
        rng = np.random.default_rng(seed)
        net = random_network(rng, n_gen, n_ibr)
        delta, u = rng.uniform(-1.5, 1.5, n_gen), rng.uniform(-1.5, 1.5, n_ibr)
        total = ac_power_machines(net, delta, u).total.sum() + ac_power_ibrs(net, delta, u).total.sum()
        assert abs(total) < 1e-10


class TestDcPartition:
    def test_two_machines_one_ibr_unit_lines(self):
        b = np.ones((3, 3)) - np.eye(3)
        np.fill_diagonal(b, -2.0)
        net = ReducedNetwork(np.zeros((3, 3)), b, np.ones(3), BusSets((0, 1), (2,)))
        part = dc_partition(net)
        assert np.allclose(part.B_GG, [[2, -1], [-1, 2]])
        assert np.allclose(part.B_GI, [[-1], [-1]])
        assert np.allclose(part.B_IG, part.B_GI.T)

    @settings(max_examples=30, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1), n_gen=st.integers(1, 4), n_ibr=st.integers(0, 3))
    def test_laplacian_properties(self, seed, n_gen, n_ibr):
        net = random_network(np.random.default_rng(seed), n_gen, n_ibr)
        L = dc_partition(net).full
        assert np.abs(L.sum(axis=1)).max() < 1e-12
        assert np.allclose(L, L.T, atol=1e-14)
        eig = np.linalg.eigvalsh(L)
        assert eig[0] > -1e-12
        if L.shape[0] > 1:
            assert abs(eig[0]) < 1e-12 and eig[1] > 1e-9  # connected: one zero mode

    def test_emf_folded_into_blocks(self, rng):
        net = random_network(rng, 2, 1)
        L = dc_partition(net).full
        assert L[0, 1] == pytest.approx(-net.emf[0] * net.emf[1] * net.b[0, 1], rel=1e-14)

    def test_jacobian_finite_difference(self, rng):
        net = random_network(rng, 3, 2, lossless=False)
        theta = rng.uniform(-0.3, 0.3, 5)
        J = ac_jacobian(net, theta)
        eps = 1e-6
        for j in range(5):
            e = np.zeros(5)
            e[j] = eps
            fd = (ac_injections(net, theta + e) - ac_injections(net, theta - e)) / (2 * eps)
            assert np.allclose(fd, J[:, j], rtol=1e-6, atol=1e-8)

    def test_dc_is_ac_jacobian_at_flat(self, rng):
        net = random_network(rng, 3, 1)
        part = dc_partition(net)
        eps = 1e-6
        for j in range(4):
            e = np.zeros(4)
            e[j] = eps
            fd = (ac_injections(net, e) - ac_injections(net, -e)) / (2 * eps)
            assert np.allclose(fd, part.full[:, j], rtol=1e-6, atol=1e-9)

    def test_dc_first_order_taylor(self, rng):
        net = random_network(rng, 3, 1)
        part = dc_partition(net)
        errs = []
        for scale in (1e-2, 5e-3):
            x = scale * rng.standard_normal(4)
            p_ac = ac_injections(net, x)
            errs.append(np.abs(p_ac - part.full @ x).max() / scale**2)
        # second-order remainder: error/scale^2 stays bounded
        assert max(errs) < 10.0


class TestDcPower:
    def test_zero(self, toy_part):
        assert np.all(dc_power_ibrs(toy_part, np.zeros(3), np.zeros(1)) == 0)

    def test_single_branch(self):
        part = dc_partition(two_node(sets=BusSets((0,), (1,))))
        assert dc_power_ibrs(part, [0.0], [0.1])[0] == pytest.approx(0.1, abs=1e-15)
        assert dc_power_machines(part, [0.0], [0.1])[0] == pytest.approx(-0.1, abs=1e-15)

    def test_ac_dc_consistency_unit_lines(self, rng):
        # unit susceptances, unit emf: error of the linearization under 1e-3 for angles < 0.03 rad
        n = 4
        b = np.ones((n, n)) - np.eye(n)
        np.fill_diagonal(b, -(n - 1.0))
        net = ReducedNetwork(np.zeros((n, n)), b, np.ones(n), BusSets((0, 1, 2), (3,)))
        part = dc_partition(net)
        for _ in range(50):
            d, u = rng.uniform(-0.03, 0.03, 3), rng.uniform(-0.03, 0.03, 1)
            err = np.abs(ac_power_ibrs(net, d, u).total - dc_power_ibrs(part, d, u)).max()
            assert err < 1e-3

    def test_operating_point_linearization(self, toy, toy_eq):
        part = dc_partition(toy.net, (toy_eq.delta, toy_eq.u))
        dd, du = 1e-4 * np.array([1.0, -2.0, 0.5]), np.array([3e-4])
        p0 = ac_power_ibrs(toy.net, toy_eq.delta, toy_eq.u).total
        p1 = ac_power_ibrs(toy.net, toy_eq.delta + dd, toy_eq.u + du).total
        assert np.abs((p1 - p0) - dc_power_ibrs(part, dd, du)).max() < 1e-6

    def test_dimension_mismatch(self, toy_part):
        with pytest.raises(DimensionError):
            dc_power_ibrs(toy_part, np.zeros(2), np.zeros(1))
