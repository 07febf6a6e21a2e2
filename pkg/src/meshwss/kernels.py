"""Numerical solutions of the SO(2) gauge constraint for self and neighbour kernels.

Both solvers stack the constraint over sampled group elements (and angles),
take the numerical nullspace and return a canonical orthonormal basis. The
group samples are the grid ``2 pi k / S`` shifted by an irrational offset so
that no finite cyclic subgroup is sampled exactly; this removes aliased
spurious solutions at small ``S``.
"""

from __future__ import annotations

import dataclasses
import functools
import math

import numpy as np
import scipy.linalg

from meshwss.gauge import RepType, irrep_dim, irrep_matrix

NULLSPACE_RTOL = 1e-8
_G_OFFSET = 1.0 / math.sqrt(2.0)
_THETA_OFFSET = 1.0 / math.sqrt(3.0)


def fourier_features(theta, cap: int) -> np.ndarray:
    """``[1, cos t, sin t, ..., cos(cap t), sin(cap t)]`` along the last axis."""
    theta = np.asarray(theta, dtype=np.float64)
    cols = [np.ones_like(theta)]
    for k in range(1, cap + 1):
        cols.append(np.cos(k * theta))
        cols.append(np.sin(k * theta))
    return np.stack(cols, axis=-1)


def _canonical_nullspace(system: np.ndarray) -> np.ndarray:
    """Orthonormal nullspace basis (columns), canonicalised so it is independent of row sampling."""
    n_unknowns = system.shape[1]
    _, s, vt = np.linalg.svd(system, full_matrices=True)
    smax = s[0] if len(s) else 0.0
    rank = int(np.sum(s > NULLSPACE_RTOL * max(smax, 1e-300))) if smax > 0 else 0
    null = vt[rank:].T
    if null.shape[1] == 0:
        return np.zeros((n_unknowns, 0))
    projector = null @ null.T
    q, _, _ = scipy.linalg.qr(projector, pivoting=True)
    basis = q[:, :null.shape[1]]
    basis[np.abs(basis) < 1e-14] = 0.0
    for j in range(basis.shape[1]):
        col = basis[:, j]
        if col[np.argmax(np.abs(col) > 1e-9)] < 0:
            basis[:, j] = -col
    return basis


def _group_samples(samples: int) -> np.ndarray:
    return 2 * np.pi * np.arange(samples) / samples + _G_OFFSET


@dataclasses.dataclass(frozen=True, eq=False)
class SelfKernelBasis:
    in_order: int
    out_order: int
    matrices: np.ndarray  # (n_basis, dim_out, dim_in)

    def __len__(self):
        return len(self.matrices)


@dataclasses.dataclass(frozen=True, eq=False)
class AngularKernelBasis:
    in_order: int
    out_order: int
    frequency_cap: int
    coefficients: np.ndarray  # (n_basis, dim_out, dim_in, 2 * cap + 1)
    capped: bool = False

    def __len__(self):
        return len(self.coefficients)

    def evaluate(self, theta) -> np.ndarray:
        """Basis kernels at ``theta``: shape ``theta.shape + (n_basis, dim_out, dim_in)``."""
        phi = fourier_features(theta, self.frequency_cap)
        return np.einsum("...f,bxyf->...bxy", phi, self.coefficients)


@functools.lru_cache(maxsize=None)
def solve_self_kernel(in_order: int, out_order: int, samples: int = 16) -> SelfKernelBasis:
    """Intertwiners B with ``rho_out(g) B = B rho_in(g)`` for all g."""
    if samples < 8:
        raise ValueError("need at least 8 group samples")
    di, do = irrep_dim(in_order), irrep_dim(out_order)
    rows = []
    for g in _group_samples(samples):
        ro, ri = irrep_matrix(out_order, g), irrep_matrix(in_order, g)
        # vec(Ro B - B Ri) = (I kron Ro - Ri^T kron I) vec(B), row-major vec
        rows.append(np.kron(ro, np.eye(di)) - np.kron(np.eye(do), ri.T))
    null = _canonical_nullspace(np.concatenate(rows))
    mats = null.T.reshape(-1, do, di)
    mats.flags.writeable = False
    return SelfKernelBasis(in_order, out_order, mats)


@functools.lru_cache(maxsize=None)
def solve_neighbor_kernel(in_order: int, out_order: int, frequency_cap: int | None = None,
                          samples: int = 16) -> AngularKernelBasis:
    """Angular kernels with ``K(t - g) = rho_out(-g) K(t) rho_in(g)`` for all g, t."""
    if samples < 8:
        raise ValueError("need at least 8 group samples")
    needed = in_order + out_order
    cap = needed if frequency_cap is None else int(frequency_cap)
    di, do = irrep_dim(in_order), irrep_dim(out_order)
    nf = 2 * cap + 1
    n_theta = 2 * cap + 2
    thetas = 2 * np.pi * np.arange(n_theta) / n_theta + _THETA_OFFSET
    n_unknowns = do * di * nf

    blocks = []
    for g in _group_samples(samples):
        ro, ri = irrep_matrix(out_order, -g), irrep_matrix(in_order, g)
        phi_shift = fourier_features(thetas - g, cap)  # (T, F)
        phi = fourier_features(thetas, cap)
        cols = np.empty((n_theta, do, di, n_unknowns))
        for u in range(n_unknowns):
            c = np.zeros(n_unknowns)
            c[u] = 1.0
            c = c.reshape(do, di, nf)
            lhs = np.einsum("tf,xyf->txy", phi_shift, c)
            k = np.einsum("tf,xyf->txy", phi, c)
            cols[..., u] = lhs - ro @ k @ ri
        blocks.append(cols.reshape(-1, n_unknowns))
    null = _canonical_nullspace(np.concatenate(blocks))
    coeffs = null.T.reshape(-1, do, di, nf)
    coeffs.flags.writeable = False
    return AngularKernelBasis(in_order, out_order, cap, coeffs, capped=cap < needed)


def constraint_residual(basis: AngularKernelBasis, g: float, theta: float) -> np.ndarray:
    """Per-element max abs residual of the gauge constraint at one probe."""
    lhs = basis.evaluate(theta - g)
    rhs = irrep_matrix(basis.out_order, -g) @ basis.evaluate(theta) @ irrep_matrix(basis.in_order, g)
    return np.abs(lhs - rhs).reshape(len(basis), -1).max(axis=1, initial=0.0)


def pad_frequencies(coefficients: np.ndarray, cap: int) -> np.ndarray:
    """Zero-pad Fourier coefficients of a basis up to ``2 * cap + 1`` columns."""
    nf = coefficients.shape[-1]
    target = 2 * cap + 1
    if nf > target:
        raise ValueError("cannot truncate a basis")
    pad = [(0, 0)] * (coefficients.ndim - 1) + [(0, target - nf)]
    return np.pad(coefficients, pad)


@dataclasses.dataclass(frozen=True, eq=False)
class LayerBasis:
    """Block-structured kernel bases between two RepTypes.

    ``self_blocks`` / ``neighbor_blocks`` map ``(out_block, in_block)`` index
    pairs (positions in the RepType lists) to basis arrays; each block's
    coefficients form an ``(m_out, m_in, n_basis)`` tensor.
    """

    in_rep: RepType
    out_rep: RepType
    frequency_cap: int
    self_blocks: dict
    neighbor_blocks: dict

    def _count(self, blocks) -> int:
        total = 0
        for (j, i), basis in blocks.items():
            total += self.out_rep.irreps[j][1] * self.in_rep.irreps[i][1] * len(basis)
        return total

    @property
    def n_self_coefficients(self) -> int:
        return self._count(self.self_blocks)

    @property
    def n_neighbor_coefficients(self) -> int:
        return self._count(self.neighbor_blocks)

    @property
    def n_coefficients(self) -> int:
        return self.n_self_coefficients + self.n_neighbor_coefficients

    @property
    def n_fourier(self) -> int:
        return 2 * self.frequency_cap + 1


def assemble_layer_basis(in_rep: RepType, out_rep: RepType, frequency_cap: int | None = None,
                         samples: int = 16, neighbor: bool = True) -> LayerBasis:
    """Bases for every (output irrep, input irrep) block of a layer."""
    if frequency_cap is None:
        frequency_cap = in_rep.max_order + out_rep.max_order
    self_blocks, nbr_blocks = {}, {}
    for j, (no, _) in enumerate(out_rep.irreps):
        for i, (ni, _) in enumerate(in_rep.irreps):
            sb = solve_self_kernel(ni, no, samples)
            if len(sb):
                self_blocks[(j, i)] = sb.matrices
            if neighbor:
                nb = solve_neighbor_kernel(ni, no, frequency_cap, samples)
                if len(nb):
                    nbr_blocks[(j, i)] = nb.coefficients
    return LayerBasis(in_rep, out_rep, frequency_cap, self_blocks, nbr_blocks)
