"""Explicit matrix representations of the continuous groups used here.

The workhorse is the Shannon-Whittaker (SW) shift family on a periodic
1-D grid of even size d:

    g(z)[rho, nu] = D(z + rho - nu),
    D(v) = (1/d) [ 1 + 2 sum_{p=1}^{d/2-1} cos(2 pi p v / d) + cos(pi v) ]

i.e. the symmetric cosine sum with the two p = +-d/2 endpoint terms at
half weight.  With that weighting D(k) = delta_{k mod d, 0} for integer k,
so g(0) = I and g(mu) is exactly the mu-pixel circulant shift.  On the
Fourier modes |q| < d/2 the family acts as exp(2 pi i q z / d) and is an
exact one-parameter group; the unpaired Nyquist mode q = d/2 carries
cos(pi z), which is the unavoidable obstruction to fractional shifts of
even-length real signals.  Products g(w)g(z) = g(w+z) are therefore exact
whenever w or z is an integer, and exact on the Nyquist-complement
subspace for all real pairs.

The shift generator is the z-derivative of g at z = 0.  Acting on a
discretized smooth f it approximates +df/dx (g reads the signal at
x + z, so the derivative advances it).

2-D rotations come in two flavors: the analytic generator assembled from
per-axis SW derivatives as X d/dy - Y d/dx, and finite rotations realized
as bilinear-resampling matrices with zero padding, which is how the
rotated-image datasets are produced.
"""

import json
import os
from dataclasses import dataclass, field

import numpy as np

from .numerics import (DimensionError, LconvError, as_matrix, read_matrix,
                       write_matrix)


class UnsupportedSizeError(LconvError):
    pass


@dataclass(frozen=True)
class GridSpec:
    """Discrete base space: a periodic/open line or a width x height image."""
    kind: str                  # "line" | "image"
    width: int
    height: int = 1
    periodic: bool = True

    def __post_init__(self):
        if self.kind not in ("line", "image"):
            raise DimensionError(f"unknown grid kind {self.kind!r}")

    @property
    def d(self):
        return self.width * (self.height if self.kind == "image" else 1)


@dataclass(frozen=True)
class GroupElement:
    """A lifted group element: an invertible d x d matrix plus its label.

    `inverse` is the group-parametric inverse (e.g. the shift by -z), not
    a numerical matrix inverse; for resampling operators the two differ.
    """
    matrix: np.ndarray
    label: str = ""
    inverse: np.ndarray | None = field(default=None, repr=False)

    @property
    def d(self):
        return self.matrix.shape[0]


@dataclass(frozen=True)
class Generator:
    """A Lie-algebra basis element, dense or low-rank (dense form = U V)."""
    dense: np.ndarray | None = None
    low_rank: tuple[np.ndarray, np.ndarray] | None = None
    label: str = ""

    def __post_init__(self):
        if (self.dense is None) == (self.low_rank is None):
            raise DimensionError("exactly one of dense/low_rank must be given")
        if self.low_rank is not None:
            u, v = self.low_rank
            if u.shape[1] != v.shape[0]:
                raise DimensionError(
                    f"low-rank inner dimensions differ: {u.shape} vs {v.shape}")

    @property
    def d(self):
        if self.dense is not None:
            return self.dense.shape[0]
        return self.low_rank[0].shape[0]


def _check_even(d, who):
    if d < 4 or d % 2 != 0:
        raise UnsupportedSizeError(
            f"{who} needs an even grid size >= 4 (the cosine sum runs to d/2), got {d}")


def _sw_band(d, z):
    """Band D(z + k) for k = 0..d-1.

    Even d: endpoint terms p = +-d/2 at half weight (the unique real
    convention with D(integer) = delta).  Odd d: the plain Dirichlet sum,
    which is exact and fully closed.
    """
    v = z + np.arange(d, dtype=np.float64)
    p = np.arange(1, (d + 1) // 2, dtype=np.float64)
    band = 1.0 + 2.0 * np.cos(2.0 * np.pi * np.outer(p, v) / d).sum(axis=0)
    if d % 2 == 0:
        band += np.cos(np.pi * v)
    return band / d


def _circulant(band):
    d = band.shape[0]
    idx = (np.arange(d)[:, None] - np.arange(d)[None, :]) % d
    return band[idx]


def sw_shift_matrix(d, z):
    """SW fractional shift by z on a periodic grid of even size d."""
    _check_even(d, "sw_shift_matrix")
    return GroupElement(
        matrix=_circulant(_sw_band(d, float(z))),
        label=f"sw-shift z={float(z):g}",
        inverse=_circulant(_sw_band(d, -float(z))),
    )


def _sw_generator_band(d):
    k = np.arange(d, dtype=np.float64)
    p = np.arange(1, (d + 1) // 2, dtype=np.float64)
    band = -(2.0 / d) * ((2.0 * np.pi * p[:, None] / d)
                         * np.sin(2.0 * np.pi * np.outer(p, k) / d)).sum(axis=0)
    if d % 2 == 0:
        band -= (np.pi / d) * np.sin(np.pi * k)
    return band


def sw_shift_generator(d):
    """d/dz of the SW shift at z = 0: a skew-symmetric circulant.

    Acts as +d/dx on discretized smooth periodic signals, and
    (I + (z/n) L)^n -> g(z) on the Nyquist complement as n grows.
    """
    _check_even(d, "sw_shift_generator")
    return Generator(dense=_circulant(_sw_generator_band(d)),
                     label=f"sw-shift-generator d={d}")


def image_coords(width, height):
    """Centered (x, y) coordinates per flattened pixel, row-major (y major)."""
    cx = (width - 1) / 2.0
    cy = (height - 1) / 2.0
    ys, xs = np.mgrid[0:height, 0:width]
    return (xs - cx).ravel().astype(np.float64), (ys - cy).ravel().astype(np.float64)


def sw_rotation_generator(width, height):
    """Analytic rotation generator on a width x height grid: X d/dy - Y d/dx.

    The per-axis derivatives are SW circulant derivatives (the odd-length
    Dirichlet form when a side is odd, e.g. 7x7), so the operator is the
    band-limited angular-momentum operator about the grid center.  It
    annihilates constants exactly and rotationally-invariant smooth fields
    to O(1/min(width, height)) at interior pixels; coordinate fields wrap
    at the periodic boundary, so rows near the edge are noisy.
    """
    if width < 3 or height < 3:
        raise UnsupportedSizeError("sw_rotation_generator needs width, height >= 3")
    lx = _circulant(_sw_generator_band(width))
    ly = _circulant(_sw_generator_band(height))
    ddx = np.kron(np.eye(height), lx)
    ddy = np.kron(ly, np.eye(width))
    x, y = image_coords(width, height)
    dense = x[:, None] * ddy - y[:, None] * ddx
    return Generator(dense=dense, label=f"sw-rotation-generator {width}x{height}")


def _bilinear_rows(width, height, theta):
    """Resampling matrix: output pixel v reads the input at R(theta) v."""
    d = width * height
    x, y = image_coords(width, height)
    c, s = np.cos(theta), np.sin(theta)
    xs = c * x - s * y
    ys = s * x + c * y
    col = xs + (width - 1) / 2.0
    row = ys + (height - 1) / 2.0
    m = np.zeros((d, d))
    c0 = np.floor(col)
    r0 = np.floor(row)
    fc = col - c0
    fr = row - r0
    for dr, dc, w in (
        (0, 0, (1 - fr) * (1 - fc)),
        (0, 1, (1 - fr) * fc),
        (1, 0, fr * (1 - fc)),
        (1, 1, fr * fc),
    ):
        rr = r0 + dr
        cc = c0 + dc
        ok = (rr >= 0) & (rr < height) & (cc >= 0) & (cc < width) & (w > 0)
        src = (rr[ok] * width + cc[ok]).astype(int)
        m[np.nonzero(ok)[0], src] += w[ok]
    return m


def rotation_matrix_bilinear(width, height, theta):
    """Finite image rotation by theta via bilinear resampling, zero padding.

    Each row has at most 4 nonzeros summing to <= 1 (strictly less when the
    source point falls outside the grid).  theta = 0 gives the identity
    exactly; R(theta) ~ I + theta * sw_rotation_generator for small theta.
    """
    if width < 2 or height < 2:
        raise UnsupportedSizeError("rotation needs width, height >= 2")
    return GroupElement(
        matrix=_bilinear_rows(width, height, float(theta)),
        label=f"rot theta={float(theta):g}",
        inverse=_bilinear_rows(width, height, -float(theta)),
    )


def analytic_generator(kind, n=2, index=0):
    """Closed-form small generators with their vector-field evaluators.

    kind = "so2":     L = [[0,-1],[1,0]], field(x, y) = (-y, x)
    kind = "scaling": L = I_2,            field(x, y) = (x, y)
    kind = "t_n":     affine translation generator number `index` on the
                      (n+1)-dim rep (1, x^1..x^n); field = e_index, constant.

    Returns (Generator, field) where field maps a base point to the
    generator's vector-field components there.
    """
    if kind == "so2":
        l = np.array([[0.0, -1.0], [1.0, 0.0]])
        return (Generator(dense=l, label="so2"),
                lambda x: np.array([-x[1], x[0]], dtype=np.float64))
    if kind == "scaling":
        return (Generator(dense=np.eye(2), label="scaling"),
                lambda x: np.asarray(x, dtype=np.float64).copy())
    if kind == "t_n":
        if not (0 <= index < n):
            raise DimensionError(f"translation index {index} out of range for T_{n}")
        l = np.zeros((n + 1, n + 1))
        l[index + 1, 0] = 1.0
        e = np.zeros(n)
        e[index] = 1.0
        return (Generator(dense=l, label=f"t_{n}[{index}]"),
                lambda x, e=e: e.copy())
    raise DimensionError(f"unknown analytic generator kind {kind!r}")


@dataclass(frozen=True)
class EdgeTopology:
    """Directed edge set over d nodes with its node x edge incidence matrix."""
    n_nodes: int
    edges: tuple  # of (start, end) pairs

    @property
    def incidence(self):
        b = np.zeros((self.n_nodes, len(self.edges)))
        for a, (start, end) in enumerate(self.edges):
            b[start, a] = 1.0
            b[end, a] = -1.0
        return b

    @staticmethod
    def path(n):
        return EdgeTopology(n, tuple((i, i + 1) for i in range(n - 1)))

    @staticmethod
    def ring(n, both_directions=True):
        edges = [(i, (i + 1) % n) for i in range(n)]
        if both_directions:
            edges += [(i, (i - 1) % n) for i in range(n)]
        return EdgeTopology(n, tuple(edges))


def assemble_generator_from_edges(topo, edge_weights):
    """Build a dense generator from per-edge weights: a first-difference stencil.

    Edge (start, end) with weight w contributes w * (f_end - f_start) to the
    output at `start`, so every row sums to zero and constants are
    annihilated exactly.
    """
    w = np.asarray(edge_weights, dtype=np.float64).ravel()
    if w.size != len(topo.edges):
        raise DimensionError(
            f"{len(topo.edges)} edges but {w.size} weights")
    l = np.zeros((topo.n_nodes, topo.n_nodes))
    for a, (start, end) in enumerate(topo.edges):
        l[start, end] += w[a]
        l[start, start] -= w[a]
    return Generator(dense=l, label="edge-assembled")


def lie_bracket(a, b):
    """Matrix commutator [A, B] = AB - BA of two generators' dense forms."""
    from .layer import materialize
    ma = materialize(a) if isinstance(a, Generator) else as_matrix(a)
    mb = materialize(b) if isinstance(b, Generator) else as_matrix(b)
    if ma.shape != mb.shape or ma.shape[0] != ma.shape[1]:
        raise DimensionError(f"bracket needs equal square shapes, got {ma.shape}, {mb.shape}")
    return ma @ mb - mb @ ma


# -- serialization: matrix files plus a JSON sidecar ----------------------

def _sidecar(path):
    return os.path.splitext(path)[0] + ".json"


def _grid_dict(grid):
    if grid is None:
        return None
    return {"kind": grid.kind, "width": grid.width, "height": grid.height,
            "periodic": grid.periodic}


def _grid_from(d):
    return None if d is None else GridSpec(**d)


def save_generator(path, gen, grid=None):
    """Generator to a .mat file (U/V pair for low rank) + JSON sidecar."""
    meta = {"type": "generator", "label": gen.label, "grid": _grid_dict(grid)}
    if gen.dense is not None:
        write_matrix(path, gen.dense)
        meta["form"] = "dense"
    else:
        u, v = gen.low_rank
        base, ext = os.path.splitext(path)
        write_matrix(base + "_U" + ext, u)
        write_matrix(base + "_V" + ext, v)
        meta["form"] = "low_rank"
    with open(_sidecar(path), "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)


def load_generator(path):
    """Returns (Generator, GridSpec or None)."""
    with open(_sidecar(path)) as fh:
        meta = json.load(fh)
    if meta["form"] == "dense":
        gen = Generator(dense=read_matrix(path), label=meta["label"])
    else:
        base, ext = os.path.splitext(path)
        gen = Generator(low_rank=(read_matrix(base + "_U" + ext),
                                  read_matrix(base + "_V" + ext)),
                        label=meta["label"])
    return gen, _grid_from(meta["grid"])


def save_group_element(path, elem, grid=None):
    """GroupElement matrix (+ inverse when present) + JSON sidecar."""
    write_matrix(path, elem.matrix)
    meta = {"type": "group-element", "label": elem.label,
            "grid": _grid_dict(grid), "has_inverse": elem.inverse is not None}
    if elem.inverse is not None:
        base, ext = os.path.splitext(path)
        write_matrix(base + "_inv" + ext, elem.inverse)
    with open(_sidecar(path), "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)


def load_group_element(path):
    """Returns (GroupElement, GridSpec or None)."""
    with open(_sidecar(path)) as fh:
        meta = json.load(fh)
    inverse = None
    if meta["has_inverse"]:
        base, ext = os.path.splitext(path)
        inverse = read_matrix(base + "_inv" + ext)
    elem = GroupElement(matrix=read_matrix(path), label=meta["label"],
                        inverse=inverse)
    return elem, _grid_from(meta["grid"])
