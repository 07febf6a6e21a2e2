import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from meshwss.gauge import RepType, irrep_matrix
from meshwss.kernels import (assemble_layer_basis, constraint_residual, fourier_features, solve_neighbor_kernel,
                             solve_self_kernel)

ORDERS = range(4)


def test_scalar_self_kernel():
    b = solve_self_kernel(0, 0)
    assert len(b) == 1 and np.allclose(np.abs(b.matrices[0]), [[1.0]])


def test_rho1_to_rho2_has_no_intertwiner():
    assert len(solve_self_kernel(1, 2)) == 0


def test_rho1_to_rho1_spans_identity_and_quarter_turn():
    b = solve_self_kernel(1, 1)
    assert len(b) == 2
    span = b.matrices.reshape(2, 4).T
    for target in (np.eye(2), irrep_matrix(1, math.pi / 2)):
        coef, res, *_ = np.linalg.lstsq(span, target.ravel(), rcond=None)
        assert np.allclose(span @ coef, target.ravel(), atol=1e-12)


@pytest.mark.parametrize("n_in", ORDERS)
@pytest.mark.parametrize("n_out", ORDERS)
def test_self_kernels_are_intertwiners(n_in, n_out):
    b = solve_self_kernel(n_in, n_out)
    for g in np.random.default_rng(0).uniform(0, 2 * np.pi, 16):
        for m in b.matrices:
            assert np.abs(irrep_matrix(n_out, g) @ m - m @ irrep_matrix(n_in, g)).max() < 1e-10
    # an intertwiner exists exactly when the orders agree
    assert len(b) == (0 if n_in != n_out else (1 if n_in == 0 else 2))


def test_scalar_neighbor_kernel_is_constant():
    b = solve_neighbor_kernel(0, 0)
    assert len(b) == 1
    vals = b.evaluate(np.linspace(0, 2 * np.pi, 7))
    assert np.allclose(vals, vals[0])


def test_scalar_to_rho1_neighbor_kernel():
    b = solve_neighbor_kernel(0, 1)
    assert len(b) == 2
    theta = np.random.default_rng(2).uniform(0, 2 * np.pi, 5)
    vals = b.evaluate(theta)  # (T, 2, 2, 1)
    # every element is rho1(theta) c for a fixed column c
    for k in range(2):
        c = np.linalg.solve(irrep_matrix(1, theta[0]), vals[0, k, :, 0])
        for t, v in zip(theta, vals[:, k, :, 0]):
            assert np.allclose(irrep_matrix(1, t) @ c, v, atol=1e-12)


@pytest.mark.parametrize("n_in", ORDERS)
@pytest.mark.parametrize("n_out", ORDERS)
def test_neighbor_kernels_satisfy_the_constraint_at_random_probes(n_in, n_out):
    b = solve_neighbor_kernel(n_in, n_out)
    rng = np.random.default_rng(10 * n_in + n_out)
    for g, t in rng.uniform(0, 2 * np.pi, (64, 2)):
        assert constraint_residual(b, g, t).max(initial=0.0) < 1e-10
    assert len(b) > 0 and not b.capped


@pytest.mark.parametrize("n_in,n_out", [(0, 0), (0, 1), (1, 1), (1, 2), (2, 2), (0, 3)])
def test_basis_dimension_stable_across_sampling_density(n_in, n_out):
    solve_neighbor_kernel.cache_clear()
    dims = {len(solve_neighbor_kernel(n_in, n_out, None, s)) for s in (8, 16, 32)}
    assert len(dims) == 1


def test_self_basis_dimension_stable_across_sampling_density():
    for n_in in ORDERS:
        for n_out in ORDERS:
            assert len({len(solve_self_kernel(n_in, n_out, s)) for s in (8, 16, 32)}) == 1


def test_basis_is_orthonormal_and_deterministic():
    a = solve_neighbor_kernel(1, 2, None, 16)
    flat = a.coefficients.reshape(len(a), -1)
    assert np.allclose(flat @ flat.T, np.eye(len(a)), atol=1e-12)
    solve_neighbor_kernel.cache_clear()
    assert np.array_equal(solve_neighbor_kernel(1, 2, None, 16).coefficients, a.coefficients)


def test_small_cap_is_flagged():
    b = solve_neighbor_kernel(1, 2, 1)
    assert b.capped


def test_fourier_features_layout():
    f = fourier_features(np.array([0.3]), 2)
    assert np.allclose(f, [[1, math.cos(0.3), math.sin(0.3), math.cos(0.6), math.sin(0.6)]])


def test_layer_basis_scalar_blocks():
    basis = assemble_layer_basis(RepType([(0, 4)]), RepType([(0, 4)]))
    assert basis.n_self_coefficients == 16
    assert all(len(b) == 1 for b in basis.self_blocks.values())


def test_layer_basis_coefficient_count_sums_block_bases():
    in_rep, out_rep = RepType([(0, 1), (1, 1)]), RepType([(1, 1)])
    basis = assemble_layer_basis(in_rep, out_rep)
    cap = basis.frequency_cap
    expected_nbr = len(solve_neighbor_kernel(0, 1, cap)) + len(solve_neighbor_kernel(1, 1, cap))
    expected_self = len(solve_self_kernel(0, 1)) + len(solve_self_kernel(1, 1))
    assert basis.n_neighbor_coefficients == expected_nbr
    assert basis.n_self_coefficients == expected_self


def test_empty_rep_has_no_coefficients():
    assert assemble_layer_basis(RepType(), RepType([(0, 3)])).n_coefficients == 0


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2), st.integers(0, 2), st.integers(0, 1000))
def test_expanded_kernels_obey_the_constraint(n_in, n_out, seed):
    b = solve_neighbor_kernel(n_in, n_out)
    rng = np.random.default_rng(seed)
    c = rng.normal(size=len(b))
    g, t = rng.uniform(0, 2 * np.pi, 2)
    k = np.einsum("b,bxy->xy", c, b.evaluate(t))
    k_shift = np.einsum("b,bxy->xy", c, b.evaluate(t - g))
    assert np.allclose(k_shift, irrep_matrix(n_out, -g) @ k @ irrep_matrix(n_in, g), atol=1e-10)
