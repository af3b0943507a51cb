"""The L-conv layer: forward map, analytic gradients, and structure checks.

A layer holds a channel mixer W0 (m_in x m_out), per-generator channel
couplings eps^i (m_in x m_in matrices, or plain scalars in scalar mode)
and n_L generators L_i (d x d, dense or low-rank U V).  The forward map is

    Q[f] = f W0 + sum_i (L_i f) (eps^i)^T W0

i.e. the residual channel path plus each generator's transported copy,
with eps^i mixing input channels before W0.  Everything is linear in f,
so gradients are exact matrix products; `backward` implements them by
hand and is validated against central differences in the tests.

An optional channel-wise affine + tanh head can follow the map; acting on
channels only, it does not disturb equivariance.
"""

import json
import os
from dataclasses import dataclass

import numpy as np

from .groups import Generator, GridSpec, GroupElement
from .numerics import DimensionError, as_matrix, read_matrix, write_matrix


@dataclass(frozen=True)
class FeatureMap:
    grid: GridSpec
    values: np.ndarray  # d x m

    def __post_init__(self):
        if self.values.shape[0] != self.grid.d:
            raise DimensionError(
                f"feature rows {self.values.shape[0]} != grid size {self.grid.d}")

    @property
    def m(self):
        return self.values.shape[1]


def materialize(gen):
    """Dense d x d form of a generator (U @ V for the low-rank encoding)."""
    if isinstance(gen, Generator):
        if gen.dense is not None:
            return gen.dense
        u, v = gen.low_rank
        return u @ v
    return as_matrix(gen)


def _left_apply(m, f):
    """m @ f along the grid axis, fused into one GEMM for batched input."""
    if f.ndim == 2:
        return m @ f
    return np.tensordot(m, f, axes=([1], [1])).transpose(1, 0, 2)


@dataclass
class LayerGradients:
    dW0: np.ndarray
    d_eps: list
    d_generators: list   # dense arrays, or (dU, dV) pairs for low-rank
    d_input: np.ndarray
    d_bias: np.ndarray | None = None


class LConvLayer:
    """Parameter container + forward/backward for one L-conv layer."""

    def __init__(self, w0, eps, generators, scalar_eps=False,
                 include_residual=True, bias=None, train_w0=True,
                 train_eps=True, train_generators=True):
        self.w0 = as_matrix(w0)
        self.scalar_eps = scalar_eps
        self.eps = [float(e) for e in eps] if scalar_eps else [as_matrix(e) for e in eps]
        self.generators = list(generators)
        self.include_residual = include_residual
        self.bias = None if bias is None else np.asarray(bias, dtype=np.float64).ravel()
        self.train_w0 = train_w0
        self.train_eps = train_eps
        self.train_generators = train_generators
        self._check_shapes()

    def _check_shapes(self):
        m_in = self.w0.shape[0]
        if not self.scalar_eps:
            for i, e in enumerate(self.eps):
                if e.shape != (m_in, m_in):
                    raise DimensionError(
                        f"eps[{i}] has shape {e.shape}, expected ({m_in}, {m_in})")
        if len(self.eps) != len(self.generators):
            raise DimensionError(
                f"{len(self.eps)} eps blocks vs {len(self.generators)} generators")
        ds = {g.d if isinstance(g, Generator) else g.shape[0] for g in self.generators}
        if len(ds) > 1:
            raise DimensionError(f"generators disagree on grid size: {sorted(ds)}")
        if self.bias is not None and self.bias.size != self.w0.shape[1]:
            raise DimensionError("bias length must equal m_out")

    @property
    def n_generators(self):
        return len(self.generators)

    @property
    def m_in(self):
        return self.w0.shape[0]

    @property
    def m_out(self):
        return self.w0.shape[1]

    @property
    def d(self):
        if not self.generators:
            return None
        g = self.generators[0]
        return g.d if isinstance(g, Generator) else g.shape[0]

    @classmethod
    def init(cls, rng, d, m_in, m_out, n_generators=1, scalar_eps=False, **kw):
        """Random init: W0 ~ U(+-1/sqrt(m_in)), eps ~ U(+-0.1/n_L),
        generators ~ U(+-1/sqrt(d)); keeps the generator term a
        perturbation of the residual path."""
        w0 = rng.uniform_signed(1.0 / np.sqrt(m_in), (m_in, m_out))
        if scalar_eps:
            eps = [float(rng.uniform_signed(0.1 / n_generators, ())) for _ in range(n_generators)]
        else:
            eps = [rng.uniform_signed(0.1 / n_generators, (m_in, m_in))
                   for _ in range(n_generators)]
        gens = [Generator(dense=rng.uniform_signed(1.0 / np.sqrt(d), (d, d)),
                          label=f"learned[{i}]")
                for i in range(n_generators)]
        return cls(w0, eps, gens, scalar_eps=scalar_eps, **kw)

    # -- forward ---------------------------------------------------------

    def _gen_apply(self, i, f):
        g = self.generators[i]
        if isinstance(g, Generator) and g.low_rank is not None:
            u, v = g.low_rank
            return _left_apply(u, _left_apply(v, f))
        return _left_apply(materialize(g), f)

    def _mix(self, i):
        if self.scalar_eps:
            return self.eps[i] * self.w0
        return self.eps[i].T @ self.w0

    def forward(self, f):
        """Apply the layer to f of shape (d, m_in) or batched (B, d, m_in)."""
        f = np.asarray(f, dtype=np.float64)
        if f.shape[-1] != self.m_in:
            raise DimensionError(
                f"input has {f.shape[-1]} channels, layer expects m_in={self.m_in}")
        if self.d is not None and f.shape[-2] != self.d:
            raise DimensionError(
                f"input has {f.shape[-2]} grid points, generators have d={self.d}")
        out = f @ self.w0 if self.include_residual else np.zeros(
            f.shape[:-1] + (self.m_out,))
        for i in range(self.n_generators):
            out = out + self._gen_apply(i, f) @ self._mix(i)
        if self.bias is not None:
            out = np.tanh(out + self.bias)
        return out

    # -- backward --------------------------------------------------------

    def backward(self, f, upstream, out=None):
        """Gradients of sum(upstream * forward(f)) w.r.t. all parameters and f.

        `upstream` is dLoss/dOutput with the same shape as forward(f);
        pass `out` to reuse a stored forward value when the tanh head is on.
        """
        f = np.asarray(f, dtype=np.float64)
        g = np.asarray(upstream, dtype=np.float64)
        batched = f.ndim == 3
        fb = f if batched else f[None]
        gb = g if batched else g[None]

        d_bias = None
        if self.bias is not None:
            ob = out if out is not None else self.forward(f)
            if not batched:
                ob = ob[None]
            gb = gb * (1.0 - ob * ob)
            d_bias = gb.sum(axis=(0, 1))

        # out = A @ W0 with A = [f +] sum_i (L_i f) E_i
        lf = [self._gen_apply(i, fb) for i in range(self.n_generators)]
        a = fb.copy() if self.include_residual else np.zeros_like(fb)
        for i in range(self.n_generators):
            if self.scalar_eps:
                a = a + self.eps[i] * lf[i]
            else:
                a = a + lf[i] @ self.eps[i].T

        dw0 = np.tensordot(a, gb, axes=([0, 1], [0, 1]))
        da = gb @ self.w0.T
        d_input = da.copy() if self.include_residual else np.zeros_like(fb)
        d_eps = []
        d_gens = []
        for i in range(self.n_generators):
            if self.scalar_eps:
                d_eps.append(float(np.sum(lf[i] * da)))
                dpre = self.eps[i] * da          # gradient flowing into L_i f
            else:
                # forward used E = eps^T, so d_eps is the transpose of dE
                d_eps.append(np.tensordot(da, lf[i], axes=([0, 1], [0, 1])))
                dpre = da @ self.eps[i]
            dl = np.tensordot(dpre, fb, axes=([0, 2], [0, 2]))
            gen = self.generators[i]
            if isinstance(gen, Generator) and gen.low_rank is not None:
                u, v = gen.low_rank
                d_gens.append((dl @ v.T, u.T @ dl))
            else:
                d_gens.append(dl)
            d_input = d_input + _left_apply(materialize(gen).T, dpre)
        if not batched:
            d_input = d_input[0]
        return LayerGradients(dW0=dw0, d_eps=d_eps, d_generators=d_gens,
                              d_input=d_input, d_bias=d_bias)


def lconv_forward(fmap, layer):
    """FeatureMap-level forward wrapper."""
    return FeatureMap(grid=fmap.grid, values=layer.forward(fmap.values))


def lconv_backward(fmap, layer, upstream):
    return layer.backward(fmap.values, upstream)


def recursive_apply(f, layer, t):
    """Apply the same shape-preserving layer t times; t = 0 returns f."""
    if layer.m_in != layer.m_out:
        raise DimensionError(
            f"recursive application needs m_in == m_out, got {layer.m_in} != {layer.m_out}")
    if t < 0:
        raise DimensionError("repeat count must be >= 0")
    values = f.values if isinstance(f, FeatureMap) else f
    for _ in range(t):
        values = layer.forward(values)
    if isinstance(f, FeatureMap):
        return FeatureMap(grid=f.grid, values=values)
    return values


def group_action(w, f):
    """Transformed features w . f = w^{-T} f.

    Uses the element's group-parametric inverse when it carries one (exact
    and well conditioned for shift/rotation families), otherwise a solve.
    """
    if isinstance(w, GroupElement):
        if w.inverse is not None:
            return w.inverse.T @ f
        return np.linalg.solve(w.matrix.T, f)
    return np.linalg.solve(np.asarray(w).T, f)


def equivariance_residual(f, w, layer):
    """|| Q[w.f] - w.Q[f] || / ||Q[f]||, zero when w commutes with the L_i."""
    values = f.values if isinstance(f, FeatureMap) else as_matrix(f)
    qf = layer.forward(values)
    lhs = layer.forward(group_action(w, values))
    rhs = group_action(w, qf)
    denom = max(float(np.linalg.norm(qf)), 1e-300)
    return float(np.linalg.norm(lhs - rhs)) / denom


def gcn_propagation_matrix(adjacency):
    """Symmetric-normalized propagation D^{-1/2} A D^{-1/2} (0 for isolated nodes)."""
    a = as_matrix(adjacency)
    deg = a.sum(axis=1)
    inv_sqrt = np.where(deg > 0, 1.0 / np.sqrt(np.where(deg > 0, deg, 1.0)), 0.0)
    return inv_sqrt[:, None] * a * inv_sqrt[None, :]


def gcn_reduction_check(f, propagation, w):
    """Max-abs gap between a residual-free single-generator L-conv and the
    graph-convolution update L f W^T; algebraically zero."""
    values = f.values if isinstance(f, FeatureMap) else as_matrix(f)
    l = materialize(propagation)
    w = as_matrix(w)                      # m_out x m_in
    layer = LConvLayer(w0=w.T, eps=[np.eye(w.shape[1])],
                       generators=[Generator(dense=l, label="gcn")],
                       include_residual=False)
    direct = l @ values @ w.T
    return float(np.abs(layer.forward(values) - direct).max())


# -- checkpoints ----------------------------------------------------------

def save_checkpoint(layer, directory, extra=None):
    """Write layer parameters as .mat files plus a manifest.json."""
    os.makedirs(directory, exist_ok=True)
    write_matrix(os.path.join(directory, "W0.mat"), layer.w0)
    gens = []
    for i, g in enumerate(layer.generators):
        e = layer.eps[i]
        write_matrix(os.path.join(directory, f"eps_{i}.mat"),
                     np.array([[e]]) if layer.scalar_eps else e)
        if isinstance(g, Generator) and g.low_rank is not None:
            write_matrix(os.path.join(directory, f"gen_{i}_U.mat"), g.low_rank[0])
            write_matrix(os.path.join(directory, f"gen_{i}_V.mat"), g.low_rank[1])
            gens.append({"form": "low_rank", "label": g.label})
        else:
            write_matrix(os.path.join(directory, f"gen_{i}.mat"), materialize(g))
            gens.append({"form": "dense",
                         "label": g.label if isinstance(g, Generator) else ""})
    if layer.bias is not None:
        write_matrix(os.path.join(directory, "bias.mat"), layer.bias[None, :])
    manifest = {
        "m_in": layer.m_in,
        "m_out": layer.m_out,
        "d": layer.d,
        "n_generators": layer.n_generators,
        "scalar_eps": layer.scalar_eps,
        "include_residual": layer.include_residual,
        "has_bias": layer.bias is not None,
        "train_w0": layer.train_w0,
        "train_eps": layer.train_eps,
        "train_generators": layer.train_generators,
        "generators": gens,
        "extra": extra or {},
    }
    with open(os.path.join(directory, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)


def load_checkpoint(directory):
    """Inverse of save_checkpoint; returns (layer, manifest dict)."""
    with open(os.path.join(directory, "manifest.json")) as fh:
        manifest = json.load(fh)
    w0 = read_matrix(os.path.join(directory, "W0.mat"))
    eps = []
    gens = []
    for i, desc in enumerate(manifest["generators"]):
        e = read_matrix(os.path.join(directory, f"eps_{i}.mat"))
        eps.append(float(e[0, 0]) if manifest["scalar_eps"] else e)
        if desc["form"] == "low_rank":
            u = read_matrix(os.path.join(directory, f"gen_{i}_U.mat"))
            v = read_matrix(os.path.join(directory, f"gen_{i}_V.mat"))
            gens.append(Generator(low_rank=(u, v), label=desc["label"]))
        else:
            gens.append(Generator(
                dense=read_matrix(os.path.join(directory, f"gen_{i}.mat")),
                label=desc["label"]))
    bias = None
    if manifest["has_bias"]:
        bias = read_matrix(os.path.join(directory, "bias.mat")).ravel()
    layer = LConvLayer(
        w0, eps, gens,
        scalar_eps=manifest["scalar_eps"],
        include_residual=manifest["include_residual"],
        bias=bias,
        train_w0=manifest["train_w0"],
        train_eps=manifest["train_eps"],
        train_generators=manifest["train_generators"],
    )
    return layer, manifest
