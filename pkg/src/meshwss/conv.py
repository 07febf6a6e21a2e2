"""Mesh convolutions: isotropic (SAGE), attention (FeaSt) and gauge-equivariant (GEM).

Every layer computes ``out_p = K1 f_p + sum_q rho(p, q) K2(p, q) f_q`` and
differs only in the neighbour kernel and the transporter. Features are
``(n_vertices, channels)`` tensors; irrep-typed features follow the column
layout of :class:`meshwss.gauge.RepType`.
"""

from __future__ import annotations

import dataclasses
import math

import numpy as np
import torch
from torch import nn

from meshwss.exceptions import ConfigurationError
from meshwss.gauge import RepType
from meshwss.kernels import LayerBasis, assemble_layer_basis, fourier_features


@dataclasses.dataclass(eq=False)
class MessageGraph:
    """Directed message edges ``nbr -> centre`` on one vertex set, as torch tensors.

    ``theta``/``gamma`` (neighbour angle in the centre gauge and transport
    angle into the centre gauge) are only needed by the GEM layer.
    """

    n_vertices: int
    centre: torch.Tensor
    nbr: torch.Tensor
    inv_degree: torch.Tensor
    theta: np.ndarray | None = None
    gamma: np.ndarray | None = None
    isolated: int = 0
    _cache: dict = dataclasses.field(default_factory=dict, repr=False)

    @classmethod
    def from_edges(cls, n_vertices, centre, nbr, theta=None, gamma=None, dtype=torch.float32):
        centre = torch.as_tensor(np.asarray(centre, dtype=np.int64))
        nbr = torch.as_tensor(np.asarray(nbr, dtype=np.int64))
        deg = torch.bincount(centre, minlength=n_vertices).to(dtype)
        isolated = int((deg == 0).sum())
        inv = torch.where(deg > 0, 1.0 / deg.clamp(min=1), torch.zeros_like(deg))
        return cls(n_vertices, centre, nbr, inv, theta, gamma, isolated)

    def to(self, dtype) -> MessageGraph:
        if self.inv_degree.dtype == dtype:
            return self
        key = ("graph", dtype)
        if key not in self._cache:
            self._cache[key] = dataclasses.replace(self, inv_degree=self.inv_degree.to(dtype), _cache={})
        return self._cache[key]

    @property
    def dtype(self):
        return self.inv_degree.dtype

    def mean_operator(self) -> torch.Tensor:
        key = ("mean",)
        if key not in self._cache:
            vals = self.inv_degree[self.centre]
            idx = torch.stack([self.centre, self.nbr])
            self._cache[key] = torch.sparse_coo_tensor(
                idx, vals, (self.n_vertices, self.n_vertices), check_invariants=False).coalesce()
        return self._cache[key]

    def angular_operator(self, cap: int) -> torch.Tensor:
        """Sparse ``(n * F, E)`` map summing Fourier-weighted messages per centre."""
        key = ("angular", cap)
        if key not in self._cache:
            phi = torch.as_tensor(fourier_features(self.theta, cap), dtype=self.dtype)  # (E, F)
            n_f = phi.shape[1]
            e = torch.arange(len(self.centre))
            rows = (self.centre[:, None] * n_f + torch.arange(n_f)[None, :]).reshape(-1)
            cols = e[:, None].expand(-1, n_f).reshape(-1)
            self._cache[key] = torch.sparse_coo_tensor(
                torch.stack([rows, cols]), phi.reshape(-1), (self.n_vertices * n_f, len(e)), check_invariants=False).coalesce()
        return self._cache[key]

    def transport_trig(self, max_order: int) -> tuple[torch.Tensor, torch.Tensor]:
        key = ("trig", max_order)
        if key not in self._cache:
            n = np.arange(max_order + 1)
            ang = np.asarray(self.gamma)[:, None] * n[None, :]
            self._cache[key] = (torch.as_tensor(np.cos(ang), dtype=self.dtype),
                                torch.as_tensor(np.sin(ang), dtype=self.dtype))
        return self._cache[key]


def rotate_irreps(values: torch.Tensor, rep: RepType, cos: torch.Tensor, sin: torch.Tensor) -> torch.Tensor:
    """Row-wise irrep rotation; ``cos``/``sin`` are ``(rows, max_order + 1)`` of ``n * angle``."""
    parts = []
    for n, m, start, stop in rep.blocks():
        block = values[:, start:stop]
        if n == 0:
            parts.append(block)
            continue
        pair = block.reshape(-1, m, 2)
        c, s = cos[:, n:n + 1], sin[:, n:n + 1]
        x, y = pair[..., 0], pair[..., 1]
        parts.append(torch.stack([c * x - s * y, s * x + c * y], dim=-1).reshape(-1, stop - start))
    return torch.cat(parts, dim=1) if parts else values


# ---------------------------------------------------------------------------
# functional forms


def conv_isotropic(f: torch.Tensor, graph: MessageGraph, k_self: torch.Tensor, k_nbr: torch.Tensor) -> torch.Tensor:
    """``f_p K1 + mean_{q in N(p)} f_q K2``; isolated vertices get the self term only."""
    return f @ k_self + torch.sparse.mm(graph.mean_operator(), f @ k_nbr)


def attention_weights(f: torch.Tensor, graph: MessageGraph, w: torch.Tensor) -> torch.Tensor:
    """Softmax over each neighbourhood of ``w . (f_q - f_p)``; shape ``(E, heads)``."""
    score = f @ w.reshape(f.shape[1], -1)  # (N, H)
    logits = score[graph.nbr] - score[graph.centre]
    idx = graph.centre[:, None].expand_as(logits)
    peak = torch.full((graph.n_vertices, logits.shape[1]), -torch.inf, dtype=logits.dtype)
    peak = peak.scatter_reduce(0, idx, logits.detach(), reduce="amax", include_self=True)
    ex = torch.exp(logits - peak[graph.centre])
    denom = torch.zeros_like(peak).index_add(0, graph.centre, ex)
    return ex / denom[graph.centre]


def conv_attention(f, graph: MessageGraph, k_self, k_nbr, w, weights=None) -> torch.Tensor:
    """``f_p K1 + (1/|N(p)|) sum_q a(p, q) f_q K2`` with softmax attention ``a``.

    ``k_nbr`` has shape ``(heads, c_in, c_out)``; ``weights`` freezes the
    attention (used by linearity checks).
    """
    a = attention_weights(f, graph, w) if weights is None else weights
    y = torch.einsum("nc,hcd->nhd", f, k_nbr)
    msg = (a[:, :, None] * y[graph.nbr]).sum(dim=1)
    agg = torch.zeros(graph.n_vertices, msg.shape[1], dtype=msg.dtype).index_add(0, graph.centre, msg)
    return f @ k_self + graph.inv_degree[:, None] * agg


def conv_gem(f: torch.Tensor, graph: MessageGraph, in_rep: RepType, w_self: torch.Tensor,
             w_nbr: torch.Tensor, cap: int) -> torch.Tensor:
    """Gauge-equivariant convolution with expanded kernels.

    ``w_self`` is ``(c_in, c_out)``; ``w_nbr`` is ``(F * c_in, c_out)`` with
    row ``f * c_in + c`` multiplying the ``f``-th Fourier feature of the
    neighbour angle.
    """
    if graph.theta is None or graph.gamma is None:
        raise ConfigurationError("GEM convolution needs neighbour and transport angles")
    cos, sin = graph.transport_trig(max(in_rep.max_order, 1))
    moved = rotate_irreps(f[graph.nbr], in_rep, cos, sin)
    gathered = torch.sparse.mm(graph.angular_operator(cap), moved)
    gathered = gathered.reshape(graph.n_vertices, -1)
    return f @ w_self + gathered @ w_nbr


def relu(f: torch.Tensor) -> torch.Tensor:
    return torch.relu(f)


def default_relu_samples(max_order: int) -> int:
    n = 2 * max_order + 2
    return n + (n % 2)


class _FieldLayout:
    """Index maps between RepType columns and per-field Fourier coefficients."""

    def __init__(self, rep: RepType):
        self.max_order = rep.max_order
        width = 2 * self.max_order + 1
        n_fields = max((m for _, m in rep.irreps), default=0)
        gather = np.full((n_fields, width), rep.dim, dtype=np.int64)  # rep.dim -> zero pad column
        for n, m, start, _ in rep.blocks():
            for i in range(m):
                if n == 0:
                    gather[i, 0] = start + i
                else:
                    gather[i, 2 * n - 1] = start + 2 * i
                    gather[i, 2 * n] = start + 2 * i + 1
        inverse = np.empty(rep.dim, dtype=np.int64)
        for i in range(n_fields):
            for k in range(width):
                if gather[i, k] < rep.dim:
                    inverse[gather[i, k]] = i * width + k
        self.n_fields = n_fields
        self.gather = torch.as_tensor(gather)
        self.inverse = torch.as_tensor(inverse)


def _relu_operators(max_order: int, samples: int, dtype):
    t = 2 * np.pi * np.arange(samples) / samples
    synth = fourier_features(t, max_order).T  # (F, N)
    analysis = synth.T * (2.0 / samples)
    analysis[:, 0] = 1.0 / samples
    return torch.as_tensor(synth, dtype=dtype), torch.as_tensor(analysis, dtype=dtype)


def regular_relu(f: torch.Tensor, rep: RepType, samples: int | None = None) -> torch.Tensor:
    """ReLU applied to each field as a band-limited function sampled at ``samples`` angles."""
    if rep.max_order == 0:
        return torch.relu(f)
    if samples is None:
        samples = default_relu_samples(rep.max_order)
    if samples < 2 * rep.max_order + 1:
        raise ConfigurationError(f"regular ReLU needs at least {2 * rep.max_order + 1} samples, got {samples}")
    layout = _FieldLayout(rep)
    synth, analysis = _relu_operators(rep.max_order, samples, f.dtype)
    padded = torch.cat([f, torch.zeros(f.shape[0], 1, dtype=f.dtype)], dim=1)
    coeffs = padded[:, layout.gather]  # (N, fields, F)
    values = torch.relu(coeffs @ synth)
    back = (values @ analysis).reshape(f.shape[0], -1)
    return back[:, layout.inverse]


# ---------------------------------------------------------------------------
# layers


class IsotropicConv(nn.Module):
    def __init__(self, c_in: int, c_out: int, generator=None):
        super().__init__()
        self.c_in, self.c_out = c_in, c_out
        std = math.sqrt(1.0 / (2 * c_in))
        self.k_self = nn.Parameter(torch.randn(c_in, c_out, generator=generator) * std)
        self.k_nbr = nn.Parameter(torch.randn(c_in, c_out, generator=generator) * std)

    def forward(self, f, graph: MessageGraph):
        return conv_isotropic(f, graph, self.k_self, self.k_nbr)


class AttentionConv(nn.Module):
    def __init__(self, c_in: int, c_out: int, heads: int = 1, generator=None):
        super().__init__()
        self.c_in, self.c_out, self.heads = c_in, c_out, heads
        std = math.sqrt(1.0 / (2 * c_in))
        self.k_self = nn.Parameter(torch.randn(c_in, c_out, generator=generator) * std)
        self.k_nbr = nn.Parameter(torch.randn(heads, c_in, c_out, generator=generator) * std)
        self.w = nn.Parameter(torch.randn(c_in, heads, generator=generator) * math.sqrt(1.0 / c_in))

    def forward(self, f, graph: MessageGraph):
        return conv_attention(f, graph, self.k_self, self.k_nbr, self.w)


def _expand(blocks: dict, coeffs: nn.ParameterDict, in_rep: RepType, out_rep: RepType,
            n_fourier: int | None, dtype) -> torch.Tensor:
    """Assemble ``(F, c_in, c_out)`` (or ``(c_in, c_out)``) from block coefficients."""
    f_dim = 1 if n_fourier is None else n_fourier
    out_cols = []
    for j, (no, mo) in enumerate(out_rep.irreps):
        do = 1 if no == 0 else 2
        rows = []
        for i, (ni, mi) in enumerate(in_rep.irreps):
            di = 1 if ni == 0 else 2
            key = f"{j}_{i}"
            if key in coeffs:
                basis = blocks[(j, i)]
                if n_fourier is None:
                    basis = basis[..., None]
                b = torch.tensor(basis, dtype=dtype)
                block = torch.einsum("oib,bxyf->fiyox", coeffs[key], b)
                rows.append(block.reshape(f_dim, mi * di, mo * do))
            else:
                rows.append(torch.zeros(f_dim, mi * di, mo * do, dtype=dtype))
        out_cols.append(torch.cat(rows, dim=1))
    full = torch.cat(out_cols, dim=2)
    return full[0] if n_fourier is None else full


class GemConv(nn.Module):
    """Gauge-equivariant layer; ``neighbor=False`` gives the pointwise (self-kernel) map."""

    def __init__(self, in_rep: RepType, out_rep: RepType, frequency_cap: int | None = None,
                 neighbor: bool = True, generator=None):
        super().__init__()
        self.in_rep, self.out_rep = in_rep, out_rep
        self.basis: LayerBasis = assemble_layer_basis(in_rep, out_rep, frequency_cap, neighbor=neighbor)
        self.neighbor = neighbor
        self.cap = self.basis.frequency_cap
        self.self_coeffs = nn.ParameterDict()
        self.nbr_coeffs = nn.ParameterDict()
        fan_self = sum(in_rep.irreps[i][1] * len(b) for (j, i), b in self.basis.self_blocks.items()) or 1
        fan_nbr = sum(in_rep.irreps[i][1] * len(b) for (j, i), b in self.basis.neighbor_blocks.items()) or 1
        n_out = max(len(out_rep.irreps), 1)
        # fans are summed over output blocks, so rescale to a per-output fan
        std_self = math.sqrt(n_out / (2.0 * fan_self))
        std_nbr = math.sqrt(n_out / (12.0 * fan_nbr))
        for (j, i), b in self.basis.self_blocks.items():
            shape = (out_rep.irreps[j][1], in_rep.irreps[i][1], len(b))
            self.self_coeffs[f"{j}_{i}"] = nn.Parameter(torch.randn(*shape, generator=generator) * std_self)
        for (j, i), b in self.basis.neighbor_blocks.items():
            shape = (out_rep.irreps[j][1], in_rep.irreps[i][1], len(b))
            self.nbr_coeffs[f"{j}_{i}"] = nn.Parameter(torch.randn(*shape, generator=generator) * std_nbr)

    def kernels(self, dtype=None) -> tuple[torch.Tensor, torch.Tensor | None]:
        dtype = dtype or torch.get_default_dtype()
        w_self = _expand(self.basis.self_blocks, self.self_coeffs, self.in_rep, self.out_rep, None, dtype)
        if not self.neighbor:
            return w_self, None
        w_nbr = _expand(self.basis.neighbor_blocks, self.nbr_coeffs, self.in_rep, self.out_rep,
                        self.basis.n_fourier, dtype)
        return w_self, w_nbr.reshape(-1, self.out_rep.dim)

    def forward(self, f, graph: MessageGraph | None = None):
        w_self, w_nbr = self.kernels(f.dtype)
        if not self.neighbor:
            return f @ w_self
        return conv_gem(f, graph, self.in_rep, w_self, w_nbr, self.cap)
