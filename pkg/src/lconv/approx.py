"""Building finite group convolutions out of near-identity steps.

A group convolution with a kernel sampled as point masses c_k at group
elements u_k is evaluated exactly by `gconv_reference`.  Each anchor u_k
of a one-parameter family can in turn be approximated by a product of
near-identity factors (I + (z/n) L)^n, which is what a stack of L-conv
layers with W0 = I realizes.  The measurable content is the error
scaling: O(eta^2) for a single step of size eta, O(eta) for the composed
product at fixed total parameter, both estimated by log-log slopes.

On the Shannon-Whittaker shift family the construction is exact in the
n -> infinity limit for even total shifts: the unpaired Nyquist mode of an
even-length grid carries cos(pi z) in the exact element but is
annihilated by every circulant generator, so exp(z L) matches g(z) only
when cos(pi z) = 1.
"""

from dataclasses import dataclass

import numpy as np

from .groups import GroupElement, Generator, sw_shift_matrix, sw_shift_generator
from .layer import LConvLayer, materialize
from .numerics import DimensionError, as_matrix, cosine_correlation


@dataclass(frozen=True)
class ApproxConfig:
    """Near-identity step plan: bound eta, step count, per-step coefficients.

    `path` holds each step's coefficient vector over the generator basis;
    for a one-parameter target it is simply n_steps copies of [z / n].
    """
    eta: float
    n_steps: int
    path: tuple

    def __post_init__(self):
        if self.eta <= 0:
            raise DimensionError("eta must be positive")
        if self.n_steps != len(self.path):
            raise DimensionError(
                f"{self.n_steps} steps but {len(self.path)} path entries")
        for step in self.path:
            if np.linalg.norm(np.atleast_1d(step)) > self.eta + 1e-12:
                raise DimensionError("a path step exceeds the eta bound")

    @staticmethod
    def one_parameter(z, n):
        return ApproxConfig(eta=abs(z) / n + 1e-15, n_steps=n,
                            path=tuple([z / n] for _ in range(n)))


@dataclass(frozen=True)
class SampledKernel:
    """Point-mass kernel: weights c_k (m x m') attached to anchors u_k."""
    anchors: tuple      # of GroupElement
    weights: tuple      # of m x m' arrays (scalars are promoted to 1 x 1)

    def __post_init__(self):
        if not self.anchors:
            raise DimensionError("a sampled kernel needs at least one anchor")
        if len(self.anchors) != len(self.weights):
            raise DimensionError("anchor/weight counts differ")
        ds = {a.d for a in self.anchors}
        if len(ds) != 1:
            raise DimensionError(f"anchors disagree on dimension: {sorted(ds)}")


def _as_weight(c):
    w = np.asarray(c, dtype=np.float64)
    if w.ndim == 0:
        w = w[None, None]
    return as_matrix(w)


def sampled_kernel(anchors, weights):
    return SampledKernel(anchors=tuple(anchors),
                         weights=tuple(_as_weight(c) for c in weights))


def gconv_reference(f, kernel):
    """Exact group convolution of f (d x m) with a point-mass kernel.

    Output row mu is the kernel-weighted read-out of f at the lift points
    g_mu u_k; for shift anchors this reduces to sum_k u_k^T f c_k^T, the
    weighted combination of shifted copies of f.
    """
    f = as_matrix(f)
    d = kernel.anchors[0].d
    if f.shape[0] != d:
        raise DimensionError(f"f has {f.shape[0]} rows, anchors act on {d}")
    m = f.shape[1]
    out = None
    for u, c in zip(kernel.anchors, kernel.weights):
        if c.shape == (1, 1):
            term = (u.matrix.T @ f) * c[0, 0]   # scalar weight acts on all channels
        elif c.shape[0] != m:
            raise DimensionError(
                f"kernel weight expects {c.shape[0]} channels, f has {m}")
        else:
            term = (u.matrix.T @ f) @ c
        out = term if out is None else out + term
    return out


def approx_group_element(gen, z, n):
    """(I + (z/n) L)^n: n near-identity steps along the generator."""
    if n < 1:
        raise DimensionError("need at least one step")
    l = materialize(gen)
    step = np.eye(l.shape[0]) + (float(z) / n) * l
    m = np.linalg.matrix_power(step, n)
    label = gen.label if isinstance(gen, Generator) else "generator"
    return GroupElement(matrix=m, label=f"approx z={float(z):g} n={n} [{label}]")


def lconv_stack_for_anchor(gen, coefficients):
    """L-conv layers (W0 = I, scalar eps) whose transports compose to the anchor.

    `coefficients` is an ApproxConfig or a plain per-step list of eps
    values along the (single) generator; for a one-parameter target g(z)
    it is simply [z/n] * n, and the composed transport equals
    approx_group_element(gen, z, n) exactly.
    """
    if isinstance(coefficients, ApproxConfig):
        coefficients = [step[0] for step in coefficients.path]
    return [LConvLayer(w0=np.array([[1.0]]), eps=[float(e)], generators=[gen],
                       scalar_eps=True)
            for e in coefficients]


def stack_transport(layers):
    """The matrix a stack of single-generator W0 = I layers applies to f."""
    if not layers:
        raise DimensionError("empty layer stack")
    d = layers[0].d
    m = np.eye(d)
    for layer in layers:
        step = np.eye(d) + layer.eps[0] * materialize(layer.generators[0])
        m = step @ m
    return m


def shift_kernel(d, offsets, weights):
    """SampledKernel of integer SW shifts g_mu with scalar weights."""
    anchors = [sw_shift_matrix(d, mu) for mu in offsets]
    return sampled_kernel(anchors, list(weights))


def circular_convolve(f, taps):
    """Direct circular 1-D convolution: out[nu] = sum_mu taps[mu] f[nu - mu]."""
    f = as_matrix(f)
    d = f.shape[0]
    out = np.zeros_like(f)
    for mu, w in enumerate(taps):
        out += w * np.roll(f, mu, axis=0)
    return out


def cnn_equivalence_check(kernel_weights, d, f=None, seed_values=None):
    """Max-abs gap between a circular 1-D CNN and its G-conv realization.

    The CNN with taps w_mu applied as out[nu] = sum_mu w_mu f[nu - mu] is
    exactly the group convolution whose kernel places mass w_mu on the
    integer shift g_mu; the gap is floating-point only.
    """
    taps = np.asarray(kernel_weights, dtype=np.float64).ravel()
    if taps.size > d:
        raise DimensionError(f"kernel size {taps.size} exceeds grid size {d}")
    if f is None:
        f = seed_values if seed_values is not None else np.arange(d, dtype=np.float64)[:, None]
    f = as_matrix(f)
    kernel = shift_kernel(d, range(taps.size), taps)
    return float(np.abs(gconv_reference(f, kernel) - circular_convolve(f, taps)).max())


def shift_approx_sweep(d, z, n_values):
    """Rows (n, eta, frobenius_error, correlation) for the finite-shift table."""
    gen = sw_shift_generator(d)
    exact = sw_shift_matrix(d, z).matrix
    rows = []
    for n in n_values:
        approx = approx_group_element(gen, z, n).matrix
        rows.append((int(n), float(z) / n,
                     float(np.linalg.norm(approx - exact)),
                     cosine_correlation(approx, exact)))
    return rows


def fit_loglog_slope(xs, ys):
    """Least-squares slope of log(y) against log(x)."""
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    if xs.size < 2:
        raise DimensionError("need at least two points for a slope")
    return float(np.polyfit(np.log(xs), np.log(ys), 1)[0])
